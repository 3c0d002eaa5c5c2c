//! End-to-end synthetic benchmark: generated motion corpus, synthesized
//! records, sequence-level hold-out and the ablation grid.

use crate::eval::{run_ablation, AblationConfig, EvalError, Report};
use crate::mocap::{generate_corpus, CorpusSpec};
use crate::records::PoseRecord;
use crate::synth::{generate_dataset, split_dataset, MotionSequence, SplitMode, SynthConfig, SynthError, SynthOutput};
use crate::tgp::HyperparamSpec;

/// Neighborhood size used by the benchmark's TGP models.
pub const BENCHMARK_NEIGHBORHOOD: usize = 150;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkSpec {
    pub corpus: CorpusSpec,
    pub synth: SynthConfig,
    /// Fraction of records used for training.
    pub train_ratio: f64,
    pub split_mode: SplitMode,
    pub split_seed: u64,
    pub ablation: AblationConfig,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            corpus: CorpusSpec::default(),
            synth: SynthConfig {
                seed: 11,
                ..SynthConfig::default()
            },
            train_ratio: 0.8,
            split_mode: SplitMode::BySequence,
            split_seed: 5,
            ablation: AblationConfig {
                hyper: HyperparamSpec {
                    neighborhood: Some(BENCHMARK_NEIGHBORHOOD),
                    ..HyperparamSpec::default()
                },
                noise_seed: 17,
                ..AblationConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchmarkData {
    pub synth: SynthOutput,
    pub train: Vec<PoseRecord>,
    pub test: Vec<PoseRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchmarkError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl BenchmarkSpec {
    pub fn corpus(&self) -> Vec<MotionSequence> {
        generate_corpus(&self.corpus).into_iter().map(Into::into).collect()
    }

    /// Synthesizes the records and splits them.
    pub fn prepare(&self) -> Result<BenchmarkData, BenchmarkError> {
        self.prepare_from(&self.corpus())
    }

    /// Like `prepare`, with a caller-supplied corpus (e.g. one read back
    /// from BVH files).
    pub fn prepare_from(&self, corpus: &[MotionSequence]) -> Result<BenchmarkData, BenchmarkError> {
        let synth = generate_dataset(corpus, &self.synth)?;
        let (train, test) = split_dataset(&synth.records, self.train_ratio, self.split_mode, self.split_seed)?;
        Ok(BenchmarkData { synth, train, test })
    }

    pub fn run(&self, data: &BenchmarkData) -> Result<Report, BenchmarkError> {
        Ok(run_ablation(&data.train, &data.test, &self.ablation)?)
    }
}
