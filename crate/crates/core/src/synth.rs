//! Synthetic training data from motion capture: pick upright frames, turn
//! the character through the viewpoint classes, place it in front of the
//! camera and project.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bvh::{map_to_skeleton17, parse_bvh, BvhDocument, BvhError, JointMap};
use crate::camera::{compute_yaw, rotate_character, Camera, CameraError, ViewpointClass};
use crate::cluster::{agglomerative, largest_cluster, upright_filter, ClusterError, Linkage};
use crate::mocap::{NamedSequence, CM_TO_MM};
use crate::records::PoseRecord;
use crate::skeleton::{Frame, Pose3D};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("empty motion corpus")]
    EmptyCorpus,
    #[error("sequence {sequence}: {source}")]
    Bvh {
        sequence: String,
        #[source]
        source: BvhError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("sequence {sequence} has {found} rotation channels, expected {expected}")]
    ChannelMismatch {
        sequence: String,
        expected: usize,
        found: usize,
    },
    #[error("upright selection: {0}")]
    Cluster(#[from] ClusterError),
    #[error("sequence {sequence} frame {frame}: {source}")]
    Camera {
        sequence: String,
        frame: usize,
        #[source]
        source: CameraError,
    },
    #[error("invalid setting: {0}")]
    Config(String),
    #[error("split leaves the {0} side empty")]
    DegenerateSplit(&'static str),
}

/// One motion sequence of the input corpus.
#[derive(Clone, Debug)]
pub struct MotionSequence {
    /// Sequence name; becomes the record `subject`.
    pub name: String,
    pub activity: String,
    pub document: BvhDocument,
}

impl From<NamedSequence> for MotionSequence {
    fn from(s: NamedSequence) -> Self {
        MotionSequence {
            name: s.name,
            activity: s.activity.name().to_string(),
            document: s.document,
        }
    }
}

/// Loads every `.bvh` file in `dir`, sorted by file name. The file stem is
/// the sequence name and its prefix up to the first `_` the activity.
pub fn load_bvh_dir(dir: impl AsRef<Path>) -> Result<Vec<MotionSequence>, SynthError> {
    let dir = dir.as_ref();
    let io_err = |source| SynthError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(io_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("bvh")))
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for path in paths {
        let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let text = std::fs::read_to_string(&path).map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let document = parse_bvh(&text).map_err(|source| SynthError::Bvh {
            sequence: name.clone(),
            source,
        })?;
        let activity = name.split('_').next().unwrap_or("unknown").to_string();
        out.push(MotionSequence {
            name,
            activity,
            document,
        });
    }
    Ok(out)
}

/// How frames are chosen before synthesis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UprightSelection {
    /// Cluster all frames' rotation vectors into this many groups and keep
    /// the largest; `None` keeps every frame.
    pub rotation_clusters: Option<usize>,
    pub linkage: Linkage,
    /// Additionally keep only the largest feet/torso cluster.
    pub feet_torso_filter: bool,
}

impl Default for UprightSelection {
    fn default() -> Self {
        UprightSelection {
            rotation_clusters: Some(4),
            linkage: Linkage::Average,
            feet_torso_filter: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub camera: Camera,
    pub viewpoints: Vec<ViewpointClass>,
    /// Standard deviation of the Gaussian noise added to each 2D coordinate,
    /// in pixels.
    pub noise_px: f64,
    pub seed: u64,
    /// Pelvis depth range in millimeters.
    pub depth_mm: (f64, f64),
    /// Millimeters per BVH file unit.
    pub unit_scale: f64,
    /// Use every n-th frame.
    pub frame_step: usize,
    pub selection: UprightSelection,
    pub joint_map: JointMap,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            camera: Camera::default(),
            viewpoints: ViewpointClass::all().collect(),
            noise_px: 0.0,
            seed: 0,
            depth_mm: (2000.0, 6000.0),
            unit_scale: CM_TO_MM,
            frame_step: 1,
            selection: UprightSelection::default(),
            joint_map: JointMap::cmu(),
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.viewpoints.is_empty() {
            return bad("no viewpoints selected");
        }
        if !(self.noise_px.is_finite() && self.noise_px >= 0.0) {
            return bad("noise must be finite and non-negative");
        }
        let (lo, hi) = self.depth_mm;
        if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi) {
            return bad("depth range must satisfy 0 < min <= max");
        }
        if !(self.unit_scale.is_finite() && self.unit_scale > 0.0) {
            return bad("unit scale must be positive");
        }
        if self.frame_step == 0 {
            return bad("frame step must be >= 1");
        }
        if self.selection.rotation_clusters == Some(0) {
            return bad("rotation cluster count must be >= 1");
        }
        self.camera.validate().map_err(|e| SynthError::Config(e.to_string()))
    }
}

/// A frame that survived upright selection.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectedFrame {
    pub sequence: usize,
    pub frame: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOutput {
    pub records: Vec<PoseRecord>,
    /// Samples dropped because a joint ended up behind the camera.
    pub skipped: usize,
    /// Frames considered (after the frame step).
    pub candidate_frames: usize,
    pub selected_frames: Vec<SelectedFrame>,
}

/// BVH world (y up, character facing +z) to camera axes (x right, y down,
/// z forward): a character at yaw 0 faces the camera.
pub fn world_to_camera(pose: &Pose3D) -> Pose3D {
    pose.map_joints(Frame::Camera, |p| Vector3::new(p.x, -p.y, -p.z))
}

/// Picks frames according to `selection`; returns (sequence, frame) pairs
/// in corpus order.
pub fn select_frames(
    corpus: &[MotionSequence],
    selection: &UprightSelection,
    frame_step: usize,
    joint_map: &JointMap,
    unit_scale: f64,
) -> Result<(usize, Vec<SelectedFrame>), SynthError> {
    let expected = corpus
        .first()
        .ok_or(SynthError::EmptyCorpus)?
        .document
        .num_rotation_channels();
    let mut frames = Vec::new();
    let mut vectors = Vec::new();
    for (s, seq) in corpus.iter().enumerate() {
        let found = seq.document.num_rotation_channels();
        if found != expected {
            return Err(SynthError::ChannelMismatch {
                sequence: seq.name.clone(),
                expected,
                found,
            });
        }
        let rv = seq.document.rotation_vectors();
        for (f, v) in rv.into_iter().enumerate().step_by(frame_step) {
            frames.push(SelectedFrame { sequence: s, frame: f });
            vectors.push(v);
        }
    }
    let total = frames.len();
    if total == 0 {
        return Err(SynthError::EmptyCorpus);
    }
    let mut keep: Vec<usize> = (0..total).collect();
    if let Some(k) = selection.rotation_clusters {
        if k < total {
            keep = largest_cluster(&agglomerative(&vectors, k, selection.linkage)?);
        }
    }
    if selection.feet_torso_filter && keep.len() >= 3 {
        let poses = keep
            .iter()
            .map(|&i| world_pose(corpus, &frames[i], joint_map, unit_scale))
            .collect::<Result<Vec<_>, _>>()?;
        keep = upright_filter(&poses)?.into_iter().map(|j| keep[j]).collect();
    }
    Ok((total, keep.into_iter().map(|i| frames[i].clone()).collect()))
}

fn world_pose(
    corpus: &[MotionSequence],
    sel: &SelectedFrame,
    joint_map: &JointMap,
    unit_scale: f64,
) -> Result<Pose3D, SynthError> {
    let seq = &corpus[sel.sequence];
    let bvh_err = |source| SynthError::Bvh {
        sequence: seq.name.clone(),
        source,
    };
    let positions = seq.document.forward_kinematics(sel.frame).map_err(bvh_err)?;
    map_to_skeleton17(&seq.document, &positions, joint_map, unit_scale).map_err(bvh_err)
}

/// Random stream for one (frame, viewpoint) sample. Placement draws come
/// first and noise draws after, so changing the noise level leaves the
/// placement untouched and scales the same noise pattern.
fn sample_rng(seed: u64, sample: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample);
    rng
}

/// Puts a camera-frame pose (pelvis at the origin) at a random depth with a
/// lateral offset that keeps every joint inside the image.
fn place(pose: &Pose3D, cam: &Camera, depth: (f64, f64), rng: &mut ChaCha8Rng) -> Pose3D {
    let z = if depth.0 < depth.1 {
        rng.gen_range(depth.0..=depth.1)
    } else {
        depth.0
    };
    let u: f64 = rng.gen();
    let v: f64 = rng.gen();
    let mut reach = Vector3::zeros();
    for p in pose.joints() {
        reach = reach.zip_map(&p.abs(), f64::max);
    }
    // |f (X + dx) / (Z + dz)| <= c for all joints when |X| <= c (Z - rz) / f - rx
    let near = (z - reach.z).max(1.0);
    let half_x = (cam.cx * near / cam.focal - reach.x).max(0.0);
    let half_y = (cam.cy * near / cam.focal - reach.y).max(0.0);
    let offset = Vector3::new((2.0 * u - 1.0) * half_x, (2.0 * v - 1.0) * half_y, z);
    pose.map_joints(Frame::Camera, |p| p + offset)
}

/// Generates one record per selected frame and viewpoint.
pub fn generate_dataset(corpus: &[MotionSequence], config: &SynthConfig) -> Result<SynthOutput, SynthError> {
    if corpus.is_empty() {
        return Err(SynthError::EmptyCorpus);
    }
    config.validate()?;
    let (candidate_frames, selected) = select_frames(
        corpus,
        &config.selection,
        config.frame_step,
        &config.joint_map,
        config.unit_scale,
    )?;
    let nv = config.viewpoints.len();
    let per_frame: Vec<Result<Vec<Option<PoseRecord>>, SynthError>> = selected
        .par_iter()
        .enumerate()
        .map(|(fi, sel)| {
            let seq = &corpus[sel.sequence];
            let camera_pose = world_to_camera(&world_pose(corpus, sel, &config.joint_map, config.unit_scale)?);
            let cam_err = |source| SynthError::Camera {
                sequence: seq.name.clone(),
                frame: sel.frame,
                source,
            };
            let yaw = compute_yaw(&camera_pose).map_err(cam_err)?;
            let front = rotate_character(&camera_pose.centered().map_err(|e| cam_err(e.into()))?, -yaw);
            let mut out = Vec::with_capacity(nv);
            for (vi, &vp) in config.viewpoints.iter().enumerate() {
                let mut rng = sample_rng(config.seed, (fi * nv + vi) as u64);
                let turned = rotate_character(&front, vp.center_deg());
                let placed = place(&turned, &config.camera, config.depth_mm, &mut rng);
                let Ok(projected) = config.camera.project(&placed) else {
                    out.push(None);
                    continue;
                };
                let sigma = config.noise_px;
                let noisy = if sigma > 0.0 {
                    projected.perturbed(|_| {
                        let dx: f64 = StandardNormal.sample(&mut rng);
                        let dy: f64 = StandardNormal.sample(&mut rng);
                        nalgebra::Vector2::new(sigma * dx, sigma * dy)
                    })
                } else {
                    projected
                };
                out.push(Some(PoseRecord {
                    id: format!("{}_f{:05}_v{}", seq.name, sel.frame, vp.k()),
                    subject: seq.name.clone(),
                    activity: seq.activity.clone(),
                    joints3d: placed.to_arrays(),
                    joints2d: Some(noisy.to_arrays()),
                    yaw_deg: Some(vp.center_deg()),
                    viewpoint: Some(vp),
                }));
            }
            Ok(out)
        })
        .collect();
    let mut records = Vec::with_capacity(selected.len() * nv);
    let mut skipped = 0;
    for frame in per_frame {
        for r in frame? {
            match r {
                Some(r) => records.push(r),
                None => skipped += 1,
            }
        }
    }
    Ok(SynthOutput {
        records,
        skipped,
        candidate_frames,
        selected_frames: selected,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    #[default]
    Random,
    /// Keep every record of a sequence (record `subject`) on one side.
    BySequence,
}

impl std::str::FromStr for SplitMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "random" => Ok(SplitMode::Random),
            "by_sequence" | "by-sequence" => Ok(SplitMode::BySequence),
            other => Err(format!("unknown split mode `{other}` (random, by_sequence)")),
        }
    }
}

/// Splits records into (train, test); `ratio` is the train fraction. Both
/// sides keep the input order.
pub fn split_dataset(
    records: &[PoseRecord],
    ratio: f64,
    mode: SplitMode,
    seed: u64,
) -> Result<(Vec<PoseRecord>, Vec<PoseRecord>), SynthError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(SynthError::Config(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = (ratio * records.len() as f64).round() as usize;
    let mut in_train = vec![false; records.len()];
    match mode {
        SplitMode::Random => {
            let mut idx: Vec<usize> = (0..records.len()).collect();
            idx.shuffle(&mut rng);
            for &i in &idx[..target] {
                in_train[i] = true;
            }
        }
        SplitMode::BySequence => {
            let mut order: Vec<&str> = Vec::new();
            let mut members: HashMap<&str, Vec<usize>> = HashMap::new();
            for (i, r) in records.iter().enumerate() {
                let e = members.entry(r.subject.as_str()).or_default();
                if e.is_empty() {
                    order.push(r.subject.as_str());
                }
                e.push(i);
            }
            order.shuffle(&mut rng);
            let mut count = 0;
            for s in order {
                if count >= target {
                    break;
                }
                for &i in &members[s] {
                    in_train[i] = true;
                }
                count += members[s].len();
            }
        }
    }
    let (train, test): (Vec<_>, Vec<_>) = records.iter().zip(&in_train).partition(|(_, &t)| t);
    if train.is_empty() {
        return Err(SynthError::DegenerateSplit("train"));
    }
    if test.is_empty() {
        return Err(SynthError::DegenerateSplit("test"));
    }
    Ok((
        train.into_iter().map(|(r, _)| r.clone()).collect(),
        test.into_iter().map(|(r, _)| r.clone()).collect(),
    ))
}

/// Pelvis-relative copy of a record's 3D joints.
pub fn pelvis_relative(record: &PoseRecord) -> Result<Pose3D, crate::records::RecordError> {
    let p = record.pose3d()?;
    p.to_pelvis_relative()
        .map_err(|source| crate::records::RecordError::Invalid {
            id: record.id.clone(),
            source,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mocap::{generate_corpus, CorpusSpec};
    use crate::skeleton::JointId;

    fn small_corpus() -> Vec<MotionSequence> {
        let spec = CorpusSpec {
            upright_per_activity: 1,
            non_upright_per_activity: 1,
            frames_per_sequence: 6,
            ..CorpusSpec::default()
        };
        generate_corpus(&spec).into_iter().map(Into::into).collect()
    }

    fn no_selection() -> SynthConfig {
        SynthConfig {
            selection: UprightSelection {
                rotation_clusters: None,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn one_frame_eight_viewpoints() {
        let mut corpus = small_corpus();
        corpus.truncate(1);
        let cfg = SynthConfig {
            frame_step: 6,
            ..no_selection()
        };
        let out = generate_dataset(&corpus, &cfg).unwrap();
        assert_eq!(out.records.len(), 8);
        assert_eq!(out.skipped, 0);
        for (k, r) in out.records.iter().enumerate() {
            assert_eq!(r.yaw_deg, Some(45.0 * k as f64));
            let yaw = compute_yaw(&r.pose3d().unwrap()).unwrap();
            let d = crate::angle::wrap_deg(yaw - r.yaw_deg.unwrap());
            assert!(d.abs() < 1e-6, "{yaw} vs {:?}", r.yaw_deg);
        }
    }

    #[test]
    fn noiseless_2d_is_exact_projection_inside_image() {
        let out = generate_dataset(&small_corpus(), &no_selection()).unwrap();
        let cam = Camera::default();
        let (w, h) = cam.image_size();
        for r in &out.records {
            let p = cam.project(&r.pose3d().unwrap()).unwrap();
            assert_eq!(p.to_arrays(), r.joints2d.unwrap());
            for [u, v] in r.joints2d.unwrap() {
                assert!((0.0..=w).contains(&u) && (0.0..=h).contains(&v));
            }
            let z = r.pose3d().unwrap().joint(JointId::Pelvis).z;
            assert!((2000.0..=6000.0).contains(&z));
        }
    }

    #[test]
    fn noise_keeps_placement_and_is_deterministic() {
        let corpus = small_corpus();
        let clean = generate_dataset(&corpus, &no_selection()).unwrap();
        let cfg = SynthConfig {
            noise_px: 3.0,
            ..no_selection()
        };
        let noisy = generate_dataset(&corpus, &cfg).unwrap();
        assert_eq!(noisy, generate_dataset(&corpus, &cfg).unwrap());
        let mut sq = 0.0;
        let mut n = 0.0;
        for (a, b) in clean.records.iter().zip(&noisy.records) {
            assert_eq!(a.joints3d, b.joints3d);
            for (p, q) in a.joints2d.unwrap().iter().zip(&b.joints2d.unwrap()) {
                sq += (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
                n += 2.0;
            }
        }
        let sd = (sq / n).sqrt();
        assert!((sd - 3.0).abs() < 0.3, "{sd}");
    }

    #[test]
    fn viewpoint_subset() {
        let cfg = SynthConfig {
            viewpoints: vec![ViewpointClass::new(1).unwrap(), ViewpointClass::new(5).unwrap()],
            ..no_selection()
        };
        let out = generate_dataset(&small_corpus(), &cfg).unwrap();
        assert!(out
            .records
            .iter()
            .all(|r| r.yaw_deg == Some(0.0) || r.yaw_deg == Some(180.0)));
        assert_eq!(out.records.len() + out.skipped, out.selected_frames.len() * 2);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(
            generate_dataset(&[], &SynthConfig::default()),
            Err(SynthError::EmptyCorpus)
        ));
    }

    fn rec(id: usize, subject: &str) -> PoseRecord {
        PoseRecord {
            id: id.to_string(),
            subject: subject.into(),
            activity: "walk".into(),
            joints3d: [[0.0; 3]; 17],
            joints2d: None,
            yaw_deg: None,
            viewpoint: None,
        }
    }

    #[test]
    fn random_split_sizes() {
        let recs: Vec<_> = (0..100).map(|i| rec(i, "s")).collect();
        let (a, b) = split_dataset(&recs, 0.8, SplitMode::Random, 3).unwrap();
        assert_eq!((a.len(), b.len()), (80, 20));
        let mut ids: Vec<usize> = a.iter().chain(&b).map(|r| r.id.parse().unwrap()).collect();
        ids.sort();
        assert_eq!(ids, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn by_sequence_split() {
        let recs: Vec<_> = (0..40).map(|i| rec(i, if i % 2 == 0 { "a" } else { "b" })).collect();
        let (a, b) = split_dataset(&recs, 0.5, SplitMode::BySequence, 1).unwrap();
        assert_eq!(a.len(), 20);
        assert!(a.iter().all(|r| r.subject == a[0].subject));
        assert!(b.iter().all(|r| r.subject != a[0].subject));
        let one: Vec<_> = (0..5).map(|i| rec(i, "only")).collect();
        assert!(matches!(
            split_dataset(&one, 0.5, SplitMode::BySequence, 1),
            Err(SynthError::DegenerateSplit(_))
        ));
        assert!(split_dataset(&one, 1.0, SplitMode::Random, 1).is_err());
    }
}
