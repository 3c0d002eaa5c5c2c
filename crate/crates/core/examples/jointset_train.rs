//! Trains the joint-set regressor on synthesized records, saves it, reloads
//! it and scores both it and the nearest-neighbor baseline on sequences held
//! out of training.

use poselift::benchmark::BENCHMARK_NEIGHBORHOOD;
use poselift::camera::{FeatureLayout, DEFAULT_VIEWPOINT_SCALE};
use poselift::eval::{evaluate, ground_truth};
use poselift::jointset::{
    load_model_dir, save_model_dir, train_jointset, train_nearest, training_samples, TrainedModel, ViewpointSource,
};
use poselift::mocap::{generate_corpus, CorpusSpec};
use poselift::synth::{generate_dataset, split_dataset, MotionSequence, SplitMode, SynthConfig};
use poselift::tgp::HyperparamSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus: Vec<MotionSequence> = generate_corpus(&CorpusSpec {
        frames_per_sequence: 15,
        ..CorpusSpec::default()
    })
    .into_iter()
    .map(Into::into)
    .collect();
    let data = generate_dataset(&corpus, &SynthConfig::default())?;
    let (train, test) = split_dataset(&data.records, 0.8, SplitMode::BySequence, 1)?;
    println!("{} training records, {} test records", train.len(), test.len());

    let scale = DEFAULT_VIEWPOINT_SCALE;
    let source = ViewpointSource::GroundTruth;
    let samples = training_samples(&train, &source, scale)?;
    let layout = FeatureLayout::new(true, scale);
    let hyper = HyperparamSpec {
        neighborhood: Some(BENCHMARK_NEIGHBORHOOD),
        ..HyperparamSpec::default()
    };
    let model = TrainedModel::JointSet(train_jointset(&samples, layout, &hyper)?);

    let dir = std::env::temp_dir().join("poselift-jointset-example");
    save_model_dir(&dir, &model)?;
    let model = load_model_dir(&dir)?;
    println!("model saved to and reloaded from {}", dir.display());

    let features: Vec<_> = training_samples(&test, &source, scale)?
        .into_iter()
        .map(|(f, _)| f)
        .collect();
    let gt = ground_truth(&test)?;
    let tgp = evaluate(model.regressor(), &features, &gt)?;
    let nn = evaluate(&train_nearest(&samples, layout)?, &features, &gt)?;
    println!(
        "joint-set TGP  MPJPE {:.2} mm (hands {:.2}, torso/legs {:.2})",
        tgp.mpjpe_mm, tgp.hand_mpjpe_mm, tgp.torso_legs_mpjpe_mm
    );
    println!("nearest neighbor MPJPE {:.2} mm", nn.mpjpe_mm);
    Ok(())
}
