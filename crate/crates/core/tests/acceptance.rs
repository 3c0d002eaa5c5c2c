//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::*;
use poselift::benchmark::BenchmarkSpec;
use poselift::bvh::{parse_bvh, BvhDocument};
use poselift::camera::ViewpointEncoding;
use poselift::cluster::{agglomerative, upright_filter, Linkage};
use poselift::eval::{mpjpe, per_joint_error, RegressorKind, Report};
use poselift::mocap::{generate_sequence, Activity, SequenceSpec, CM_TO_MM};
use poselift::skeleton::{Frame, Pose3D, NUM_JOINTS};
use poselift::synth::load_bvh_dir;
use poselift::tgp::{fit, gram, HyperparamSpec, Hyperparams};
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Published distance between adjacent viewpoint classes.
const PUBLISHED_ADJACENT: f64 = 0.76;
const ADJACENT_TOL: f64 = 0.01;
const FD_REL_TOL: f64 = 1e-5;
const GRID_STEP: f64 = 1e-3;
const GRAM_TOL: f64 = 1e-12;
const FK_REL_TOL: f64 = 1e-9;
const ALLJOINT_SLACK: f64 = 0.02;
const MIN_UPRIGHT_FRAMES: usize = 500;
const MIN_NOISE_SAMPLES: usize = 200;

fn viewpoint_distances() -> Outcome {
    let m = 100.0;
    let e = |deg: f64| ViewpointEncoding::from_angle(deg, m).unwrap();
    let d12 = e(0.0).distance(&e(315.0)) / m;
    let d13 = e(0.0).distance(&e(180.0)) / m;
    ensure((d12 - 0.7654).abs() < 5e-5, || format!("adjacent distance {d12:.6}"))?;
    ensure((d12 - PUBLISHED_ADJACENT).abs() <= ADJACENT_TOL, || {
        format!("adjacent distance {d12:.4} vs published {PUBLISHED_ADJACENT}")
    })?;
    ensure(d13 == 2.0, || format!("opposite distance {d13}"))?;
    ensure(d12 < d13, || "ordering".into())?;
    Ok(format!("d12 = {d12:.4}, d13 = {d13}"))
}

fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

fn gradient_check() -> Outcome {
    let mut r = rng(2001);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = r.gen_range(2..=20);
        let dr = r.gen_range(1..=8);
        let dx = r.gen_range(1..=6);
        let rs = random_vectors(&mut r, n, dr, 1.0);
        let xs = random_vectors(&mut r, n, dx, 1.0);
        let h = Hyperparams {
            lambda_r: r.gen_range(1e-3..1e-1),
            lambda_x: r.gen_range(1e-3..1e-1),
            ..Hyperparams::new(r.gen_range(0.2..2.0), r.gen_range(0.2..2.0))
        };
        let model = fit(&rs, &xs, &h).unwrap();
        let q = random_vectors(&mut r, 1, dr, 1.0).remove(0);
        let x = random_vectors(&mut r, 1, dx, 1.0).remove(0);
        let g = model.kl_gradient(&q, &x).unwrap();
        let fd = central_difference(
            |p| naive_objective(&rs, &xs, h.gamma_r, h.lambda_r, h.gamma_x, h.lambda_x, &q, p),
            &x,
            1e-5,
        );
        let scale = fd.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-3);
        let err = g.iter().zip(&fd).fold(0.0f64, |a, (u, v)| a.max((u - v).abs()));
        worst = worst.max(err / scale);
    }
    ensure(worst <= FD_REL_TOL, || format!("max relative error {worst:.2e}"))?;
    Ok(format!("max relative error {worst:.2e} over 20 models"))
}

fn grid_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let mut r = rng(3000 + seed);
        let rs: Vec<Vec<f64>> = (0..10).map(|_| vec![r.gen_range(0.0..1.0)]).collect();
        let slope = r.gen_range(0.5..2.0);
        let xs: Vec<Vec<f64>> = rs
            .iter()
            .map(|v| vec![slope * v[0] + 0.1 * r.gen_range(-1.0..1.0)])
            .collect();
        let h = HyperparamSpec::default().resolve(&rs, &xs).unwrap();
        let model = fit(&rs, &xs, &h).unwrap();
        let q = r.gen_range(0.0..1.0);
        let got = model.predict(&[q]).unwrap().x[0];
        let want = grid_argmin(
            |t| naive_objective(&rs, &xs, h.gamma_r, h.lambda_r, h.gamma_x, h.lambda_x, &[q], &[t]),
            -2.0,
            4.0,
            GRID_STEP,
        );
        worst = worst.max((got - want).abs());
        ensure((got - want).abs() <= GRID_STEP, || {
            format!("seed {seed}: predict {got} vs grid {want}")
        })?;
    }
    Ok(format!("max |predict - grid| = {worst:.2e} over 10 seeds"))
}

fn gram_hygiene() -> Outcome {
    let mut r = rng(4001);
    let v = random_vectors(&mut r, 50, 36, 1.0);
    let g = gram(&v, 0.3, 1e-4).unwrap();
    let oracle = naive_gram(&v, 0.3, 1e-4);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        for j in 0..50 {
            worst = worst.max((g[(i, j)] - oracle[i][j]).abs());
        }
    }
    ensure(worst <= GRAM_TOL, || format!("gram deviates by {worst:.2e}"))?;
    let spread: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, (i * i % 7) as f64]).collect();
    for (points, gamma) in [(&v, 0.05), (&v, 1.0), (&spread, 0.5)] {
        for lambda in [1e-10, 1e-8, 1e-6, 1e-4, 1e-2] {
            let k = gram(points, gamma, lambda).unwrap();
            for i in 0..points.len() {
                ensure(k[(i, i)] == 1.0 + lambda, || {
                    format!("diagonal {} for lambda {lambda}", k[(i, i)])
                })?;
            }
            ensure(k.clone().cholesky().is_some(), || {
                format!("not PD at lambda {lambda}, gamma {gamma}")
            })?;
        }
    }
    Ok(format!("gram error {worst:.1e}; PD for lambda in [1e-10, 1e-2]"))
}

fn row(report: &Report, vp: bool, sigma: f64, kind: RegressorKind) -> Result<f64, String> {
    let r = report
        .row(vp, sigma, kind)
        .ok_or_else(|| format!("missing row {kind:?} vp={vp} sigma={sigma}"))?;
    r.mpjpe_mm
        .ok_or_else(|| format!("{} failed: {}", r.condition, r.error.clone().unwrap_or_default()))
}

fn hand_torso(report: &Report, vp: bool) -> Result<(f64, f64), String> {
    let r = report.row(vp, 0.0, RegressorKind::JointSet).ok_or("missing row")?;
    Ok((
        r.hand_mpjpe_mm.ok_or("no hand error")?,
        r.torso_legs_mpjpe_mm.ok_or("no torso error")?,
    ))
}

struct Benchmark {
    report: Report,
    selected_frames: usize,
    viewpoints: usize,
    train: usize,
    test: usize,
    seconds: f64,
}

/// Writes the generated corpus as BVH files, reads it back and runs the
/// full ablation grid.
fn run_benchmark() -> Result<Benchmark, String> {
    let start = Instant::now();
    let spec = BenchmarkSpec::default();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for seq in spec.corpus() {
        fs::write(
            dir.path().join(format!("{}.bvh", seq.name)),
            seq.document.to_bvh_string(),
        )
        .map_err(|e| e.to_string())?;
    }
    let corpus = load_bvh_dir(dir.path()).map_err(|e| e.to_string())?;
    let data = spec.prepare_from(&corpus).map_err(|e| e.to_string())?;
    let report = spec.run(&data).map_err(|e| e.to_string())?;
    Ok(Benchmark {
        report,
        selected_frames: data.synth.selected_frames.len(),
        viewpoints: spec.synth.viewpoints.len(),
        train: data.train.len(),
        test: data.test.len(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn benchmark_vs_baseline(b: &Benchmark) -> Outcome {
    ensure(b.selected_frames >= MIN_UPRIGHT_FRAMES, || {
        format!("{} upright frames", b.selected_frames)
    })?;
    ensure(b.viewpoints == 8, || format!("{} viewpoints", b.viewpoints))?;
    let frac = b.test as f64 / (b.train + b.test) as f64;
    ensure((frac - 0.2).abs() < 0.05, || format!("test fraction {frac:.3}"))?;
    let tgp = row(&b.report, true, 0.0, RegressorKind::JointSet)?;
    let nn = row(&b.report, true, 0.0, RegressorKind::Nn1)?;
    let tgp_off = row(&b.report, false, 0.0, RegressorKind::JointSet)?;
    ensure(tgp < nn, || format!("joint-set {tgp:.2} mm vs 1-NN {nn:.2} mm"))?;
    ensure(tgp <= tgp_off, || {
        format!("viewpoint on {tgp:.2} mm vs off {tgp_off:.2} mm")
    })?;
    Ok(format!(
        "{} frames, {} train / {} test records; joint-set {tgp:.2} mm, 1-NN {nn:.2} mm, no viewpoint {tgp_off:.2} mm ({:.0} s)",
        b.selected_frames, b.train, b.test, b.seconds
    ))
}

fn jointset_vs_alljoints(b: &Benchmark) -> Outcome {
    let js = row(&b.report, true, 0.0, RegressorKind::JointSet)?;
    let all = row(&b.report, true, 0.0, RegressorKind::AllJoints)?;
    ensure(js <= all * (1.0 + ALLJOINT_SLACK), || {
        format!("joint-set {js:.2} mm vs all-joint {all:.2} mm")
    })?;
    Ok(format!("joint-set {js:.2} mm, all-joint {all:.2} mm"))
}

fn noise_monotone(b: &Benchmark) -> Outcome {
    ensure(b.test >= MIN_NOISE_SAMPLES, || format!("only {} test samples", b.test))?;
    let mut lines = Vec::new();
    for vp in [true, false] {
        let errs = [0.0, 2.0, 5.0, 10.0]
            .iter()
            .map(|&s| row(&b.report, vp, s, RegressorKind::JointSet))
            .collect::<Result<Vec<_>, _>>()?;
        ensure(errs.windows(2).all(|w| w[1] >= w[0]), || format!("vp={vp}: {errs:.2?}"))?;
        lines.push(format!("vp {}: {errs:.1?}", if vp { "on" } else { "off" }));
    }
    Ok(format!("{} samples; {}", b.test, lines.join("; ")))
}

fn hand_sensitivity(b: &Benchmark) -> Outcome {
    let (hand_on, torso_on) = hand_torso(&b.report, true)?;
    let (hand_off, torso_off) = hand_torso(&b.report, false)?;
    let dh = hand_off - hand_on;
    let dt = torso_off - torso_on;
    ensure(dh >= dt, || {
        format!("hand increase {dh:.2} mm < torso/leg increase {dt:.2} mm")
    })?;
    Ok(format!("hand +{dh:.2} mm, torso/legs +{dt:.2} mm"))
}

fn fixture(name: &str) -> String {
    fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)).unwrap()
}

fn bvh_parser() -> Outcome {
    let mut r = rng(9001);
    let mut worst: f64 = 0.0;
    for name in ["minimal.bvh", "cmu_walk.bvh"] {
        let doc = parse_bvh(&fixture(name)).map_err(|e| e.to_string())?;
        let again = parse_bvh(&doc.to_bvh_string()).map_err(|e| e.to_string())?;
        ensure(again == doc, || format!("{name} does not round-trip"))?;
        let frames: Vec<Vec<f64>> = (0..10)
            .map(|_| {
                doc.joints()
                    .iter()
                    .flat_map(|j| j.channels.clone())
                    .map(|c| {
                        if c.is_rotation() {
                            r.gen_range(-180.0..180.0)
                        } else {
                            r.gen_range(-50.0..50.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let random = BvhDocument::new(doc.joints().to_vec(), doc.frame_time(), frames).unwrap();
        for f in 0..10 {
            let pos = random.forward_kinematics(f).unwrap();
            for (i, j) in doc.joints().iter().enumerate() {
                if let Some(p) = j.parent {
                    let want = j.offset.norm();
                    let got = (pos[i] - pos[p]).norm();
                    let rel = if want > 0.0 { (got - want).abs() / want } else { got };
                    worst = worst.max(rel);
                }
            }
        }
        ensure(worst <= FK_REL_TOL, || format!("{name}: bone length error {worst:.2e}"))?;
        let zero = BvhDocument::new(
            doc.joints().to_vec(),
            doc.frame_time(),
            vec![vec![0.0; doc.num_channels()]],
        )
        .unwrap();
        let pos = zero.forward_kinematics(0).unwrap();
        for (i, _) in doc.joints().iter().enumerate() {
            let mut chain = vec![i];
            while let Some(p) = doc.joints()[*chain.last().unwrap()].parent {
                chain.push(p);
            }
            let mut want = [0.0; 3];
            for &c in chain.iter().rev() {
                let o = doc.joints()[c].offset;
                want = [want[0] + o.x, want[1] + o.y, want[2] + o.z];
            }
            ensure([pos[i].x, pos[i].y, pos[i].z] == want, || {
                format!("{name}: zero-rotation FK differs")
            })?;
        }
    }
    Ok(format!(
        "2 fixtures round-trip; bone length error {worst:.1e}; zero-rotation chains exact"
    ))
}

fn clustering() -> Outcome {
    let mut r = rng(10001);
    let mut compared = 0;
    for _ in 0..50 {
        let n = r.gen_range(1..=8);
        let d = r.gen_range(1..=4);
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| r.gen_range(-5.0..5.0)).collect())
            .collect();
        for (linkage, kind) in [(Linkage::Single, 0), (Linkage::Complete, 1), (Linkage::Average, 2)] {
            for k in 1..=n {
                let got = agglomerative(&points, k, linkage).map_err(|e| e.to_string())?;
                let (labels, merges) = greedy_merge(&points, k, kind);
                ensure(got.labels == labels, || {
                    format!("{linkage:?} labels differ on {points:?}")
                })?;
                let same = got.merges.len() == merges.len()
                    && got
                        .merges
                        .iter()
                        .zip(&merges)
                        .all(|(m, o)| (m.a, m.b) == (o.0, o.1) && (m.distance - o.2).abs() <= 1e-12 * o.2.max(1.0));
                ensure(same, || format!("{linkage:?} merges differ on {points:?}"))?;
                compared += 1;
            }
        }
    }
    // standing frames plus lying frames in two orientations
    let doc = generate_sequence(&SequenceSpec {
        activity: Activity::Walk,
        frames: 30,
        frame_time: 0.1,
        body_scale: 1.0,
        seed: 3,
    });
    let map = poselift::bvh::JointMap::cmu();
    let mut poses = Vec::new();
    let mut lying = Vec::new();
    for f in 0..30 {
        let pos = doc.forward_kinematics(f).unwrap();
        let p = poselift::bvh::map_to_skeleton17(&doc, &pos, &map, CM_TO_MM).unwrap();
        let tip = f % 5;
        let c = p.to_arrays().map(|j| match tip {
            1 => [j[0], -j[2], j[1]],
            2 => [-j[1], j[0], j[2]],
            _ => j,
        });
        if tip == 1 || tip == 2 {
            lying.push(f);
        }
        poses.push(Pose3D::from_arrays(&c, Frame::World).unwrap());
    }
    let keep = upright_filter(&poses).map_err(|e| e.to_string())?;
    let upright: Vec<usize> = (0..30).filter(|f| !lying.contains(f)).collect();
    ensure(keep == upright, || format!("kept {keep:?}"))?;
    Ok(format!(
        "{compared} clusterings match the oracle; {} lying poses isolated",
        lying.len()
    ))
}

fn mpjpe_identities() -> Outcome {
    let mut r = rng(11001);
    let pose = |r: &mut rand_chacha::ChaCha8Rng| {
        let c: [[f64; 3]; NUM_JOINTS] = std::array::from_fn(|_| {
            [
                r.gen_range(-900.0..900.0),
                r.gen_range(-900.0..900.0),
                r.gen_range(-900.0..900.0),
            ]
        });
        Pose3D::from_arrays(&c, Frame::Camera).unwrap()
    };
    let shift = |p: &Pose3D, c: f64| {
        Pose3D::from_arrays(
            &p.to_arrays().map(|j| [j[0] + 3.0 * c, j[1] + 4.0 * c, j[2]]),
            p.frame(),
        )
        .unwrap()
    };
    let p = pose(&mut r);
    let zero = mpjpe(&p, &p).map_err(|e| e.to_string())?;
    ensure(zero == 0.0, || format!("identical poses give {zero}"))?;
    let five = mpjpe(&shift(&p, 1.0), &p).map_err(|e| e.to_string())?;
    ensure((five - 5.0).abs() < 1e-12, || format!("(3,4,0) offset gives {five}"))?;
    let gt: Vec<Pose3D> = (0..4).map(|_| pose(&mut r)).collect();
    let est: Vec<Pose3D> = gt.iter().zip([1.0, 2.0, 3.0, 6.0]).map(|(g, c)| shift(g, c)).collect();
    let by_sample = est.iter().zip(&gt).map(|(e, g)| mpjpe(e, g).unwrap()).sum::<f64>() / 4.0;
    let by_joint = per_joint_error(&est, &gt).unwrap().iter().sum::<f64>() / NUM_JOINTS as f64;
    ensure(by_sample == by_joint, || format!("{by_sample} vs {by_joint}"))?;
    Ok(format!("zero, 5.0 mm and exchange identity ({by_sample} mm) hold"))
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_poselift");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(bin).args(args).output().map_err(|e| e.to_string())?;
        ensure(out.status.success(), || {
            format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr))
        })
    };
    run(&[
        "corpus",
        "--out",
        &d("bvh"),
        "--upright",
        "1",
        "--non-upright",
        "1",
        "--frames",
        "8",
    ])?;
    for out in ["a.jsonl", "b.jsonl"] {
        run(&[
            "synth",
            "--bvh-dir",
            &d("bvh"),
            "--out",
            &d(out),
            "--seed",
            "42",
            "--noise",
            "3",
        ])?;
    }
    let a = fs::read(d("a.jsonl")).map_err(|e| e.to_string())?;
    ensure(!a.is_empty() && a == fs::read(d("b.jsonl")).unwrap(), || {
        "synth outputs differ".into()
    })?;
    let mut files = 0;
    for mode in ["jointset", "alljoints"] {
        let m1 = d(&format!("{mode}_1"));
        let m2 = d(&format!("{mode}_2"));
        for m in [&m1, &m2] {
            run(&[
                "train",
                "--records",
                &d("a.jsonl"),
                "--mode",
                mode,
                "--neighborhood",
                "0",
                "--out",
                m,
            ])?;
        }
        for entry in fs::read_dir(&m1).map_err(|e| e.to_string())? {
            let name = entry.unwrap().file_name();
            let x = fs::read(Path::new(&m1).join(&name)).unwrap();
            let y = fs::read(Path::new(&m2).join(&name)).map_err(|e| e.to_string())?;
            ensure(x == y, || format!("{mode}: {name:?} differs"))?;
            files += 1;
        }
    }
    Ok(format!(
        "synth output ({} bytes) and {files} model files byte-identical",
        a.len()
    ))
}

fn main() {
    let mut failures = 0;
    let mut report = |id: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let ms = start.elapsed().as_millis();
        match outcome {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail} [{ms} ms]"),
            Err(why) => {
                failures += 1;
                println!("FAIL {id:>2} {name}: {why} [{ms} ms]");
            }
        }
    };
    report(1, "viewpoint encoding distances", &mut viewpoint_distances);
    report(2, "KL gradient vs central differences", &mut gradient_check);
    report(3, "1-D prediction vs dense-grid minimizer", &mut grid_oracle);
    report(4, "gram and Cholesky hygiene", &mut gram_hygiene);
    let bench = run_benchmark();
    let with = |f: fn(&Benchmark) -> Outcome| {
        let b = bench.as_ref().map_err(|e| format!("benchmark failed: {e}"))?;
        f(b)
    };
    report(5, "synthetic benchmark: TGP vs 1-NN, viewpoint on vs off", &mut || {
        with(benchmark_vs_baseline)
    });
    report(6, "joint-set vs all-joint", &mut || with(jointset_vs_alljoints));
    report(7, "noise sweep monotonicity", &mut || with(noise_monotone));
    report(8, "hand vs torso/leg viewpoint sensitivity", &mut || {
        with(hand_sensitivity)
    });
    report(9, "BVH round-trip and forward kinematics", &mut bvh_parser);
    report(10, "clustering oracle and upright filter", &mut clustering);
    report(11, "MPJPE identities", &mut mpjpe_identities);
    report(12, "synth and train determinism", &mut determinism);
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
    println!("all 12 criteria passed");
}
