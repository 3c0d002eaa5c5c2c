mod common;

use poselift::camera::FeatureLayout;
use poselift::eval::{evaluate, ground_truth};
use poselift::jointset::{
    load_model_dir, save_model_dir, train_alljoints, train_jointset, train_nearest, training_samples, TrainedModel,
    ViewpointSource,
};
use poselift::mocap::{generate_corpus, CorpusSpec};
use poselift::records::PoseRecord;
use poselift::skeleton::{select_joint_set, JointSetId};
use poselift::synth::{generate_dataset, MotionSequence, SynthConfig};
use poselift::tgp::{fit, HyperparamSpec};

fn records(seed: u64, frames: usize) -> Vec<PoseRecord> {
    let corpus: Vec<MotionSequence> = generate_corpus(&CorpusSpec {
        upright_per_activity: 1,
        non_upright_per_activity: 0,
        frames_per_sequence: frames,
        seed,
        ..CorpusSpec::default()
    })
    .into_iter()
    .map(Into::into)
    .collect();
    generate_dataset(
        &corpus,
        &SynthConfig {
            seed,
            ..SynthConfig::default()
        },
    )
    .unwrap()
    .records
}

#[test]
fn set_predictions_equal_standalone_models() {
    let recs = records(3, 6);
    let samples = training_samples(&recs, &ViewpointSource::GroundTruth, 100.0).unwrap();
    let layout = FeatureLayout::new(true, 100.0);
    let spec = HyperparamSpec::default();
    let model = train_jointset(&samples, layout, &spec).unwrap();
    let inputs: Vec<&[f64]> = samples.iter().map(|(f, _)| f.as_slice()).collect();
    let queries = training_samples(&records(4, 3), &ViewpointSource::GroundTruth, 100.0).unwrap();
    for set in JointSetId::ALL {
        let outputs: Vec<_> = samples.iter().map(|(_, p)| select_joint_set(p, set).unwrap()).collect();
        let standalone = fit(&inputs, &outputs, &spec.resolve(&inputs, &outputs).unwrap()).unwrap();
        for (q, _) in queries.iter().take(12) {
            let (_, parts) = model.predict_detailed(q).unwrap();
            let want = standalone.predict(q.as_slice()).unwrap();
            for (a, b) in parts[set.index()].x.iter().zip(&want.x) {
                assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()), "{set}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn merged_pose_carries_each_set() {
    let recs = records(5, 4);
    let samples = training_samples(&recs, &ViewpointSource::GroundTruth, 100.0).unwrap();
    let model = train_jointset(&samples, FeatureLayout::new(true, 100.0), &HyperparamSpec::default()).unwrap();
    let (pose, parts) = model.predict_detailed(&samples[7].0).unwrap();
    for set in JointSetId::ALL {
        assert_eq!(
            select_joint_set(&pose, set).unwrap().as_slice(),
            parts[set.index()].x.as_slice()
        );
    }
}

#[test]
fn reloaded_model_predicts_identically() {
    let recs = records(6, 4);
    let samples = training_samples(&recs, &ViewpointSource::GroundTruth, 100.0).unwrap();
    let layout = FeatureLayout::new(true, 100.0);
    let dir = tempfile::tempdir().unwrap();
    for model in [
        TrainedModel::JointSet(train_jointset(&samples, layout, &HyperparamSpec::default()).unwrap()),
        TrainedModel::AllJoints(train_alljoints(&samples, layout, &HyperparamSpec::default()).unwrap()),
    ] {
        save_model_dir(dir.path(), &model).unwrap();
        let back = load_model_dir(dir.path()).unwrap();
        for (f, _) in samples.iter().step_by(9) {
            assert_eq!(
                back.regressor().predict(f).unwrap(),
                model.regressor().predict(f).unwrap()
            );
        }
        let recovered = back.training_samples().unwrap();
        assert_eq!(recovered.len(), samples.len());
        for ((a, p), (b, q)) in recovered.iter().zip(&samples) {
            assert_eq!(a, b);
            for (x, y) in p.joints().iter().zip(q.joints()) {
                assert!((x - y).norm() < 1e-9);
            }
        }
    }
}

#[test]
fn tgp_beats_nearest_neighbor_on_unseen_sequences() {
    let train = records(7, 12);
    let test = records(8, 4);
    let source = ViewpointSource::GroundTruth;
    let samples = training_samples(&train, &source, 100.0).unwrap();
    let layout = FeatureLayout::new(true, 100.0);
    let features: Vec<_> = training_samples(&test, &source, 100.0)
        .unwrap()
        .into_iter()
        .map(|(f, _)| f)
        .collect();
    let gt = ground_truth(&test).unwrap();
    let tgp = train_jointset(&samples, layout, &HyperparamSpec::default()).unwrap();
    let nn = train_nearest(&samples, layout).unwrap();
    let e_tgp = evaluate(&tgp, &features, &gt).unwrap().mpjpe_mm;
    let e_nn = evaluate(&nn, &features, &gt).unwrap().mpjpe_mm;
    assert!(e_tgp < e_nn, "tgp {e_tgp} nn {e_nn}");
}
