//! Command-line front end. `run` parses arguments, executes one subcommand
//! and returns an error carrying the process exit code.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bvh::{map_to_skeleton17, parse_bvh, JointMap};
use crate::camera::{Camera, FeatureLayout, FeatureVector, ViewpointClass};
use crate::config::{load_hyper, ExperimentConfig};
use crate::eval::{
    evaluate, ground_truth, noisy_features, run_ablation, Condition, Metrics, RegressorKind, Report, ReportRow,
};
use crate::jointset::{
    load_model_dir, record_feature, save_model_dir, train_alljoints, train_jointset, train_nearest, training_samples,
    RegressionError, TrainedModel, ViewpointSource,
};
use crate::mocap::{generate_corpus, CorpusSpec};
use crate::records::{read_records, write_records, PoseRecord};
use crate::skeleton::JointId;
use crate::synth::{generate_dataset, load_bvh_dir, split_dataset, MotionSequence, SplitMode, SynthError};

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;
pub const EXIT_MISMATCH: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn input(message: impl std::fmt::Display) -> Self {
        CliError {
            code: EXIT_INPUT,
            message: message.to_string(),
        }
    }

    fn training(message: impl std::fmt::Display) -> Self {
        CliError {
            code: EXIT_TRAINING,
            message: message.to_string(),
        }
    }

    fn mismatch(message: impl std::fmt::Display) -> Self {
        CliError {
            code: EXIT_MISMATCH,
            message: message.to_string(),
        }
    }
}

/// Maps regression errors onto exit codes: numerical failures are training
/// errors, layout disagreements are mismatches and the rest are bad input.
impl From<RegressionError> for CliError {
    fn from(e: RegressionError) -> Self {
        match e {
            RegressionError::Fit { .. } | RegressionError::Tgp(_) => CliError::training(e),
            RegressionError::Layout { .. } => CliError::mismatch(e),
            _ => CliError::input(e),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "poselift",
    version,
    about = "Lift 2D joints and camera viewpoint to 3D poses"
)]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Experiment configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Inspect a BVH file.
    ParseBvh(ParseBvhArgs),
    /// Write a procedurally generated motion corpus as BVH files.
    Corpus(CorpusArgs),
    /// Synthesize 2D/3D pose records from a BVH corpus.
    Synth(SynthArgs),
    /// Train a regressor on pose records.
    Train(TrainArgs),
    /// Predict 3D poses for pose records.
    Predict(PredictArgs),
    /// Score a trained model against records with ground truth.
    Eval(EvalArgs),
    /// Split records, train every regressor and run the full ablation grid.
    Ablation(AblationArgs),
}

#[derive(Args, Debug)]
pub struct ParseBvhArgs {
    pub input: PathBuf,
    /// Print the hierarchy and motion summary (the default).
    #[arg(long, conflicts_with = "fk")]
    pub summary: bool,
    /// Print forward-kinematics joint positions of this frame as JSON.
    #[arg(long, value_name = "FRAME")]
    pub fk: Option<usize>,
    /// Joint map JSON file, or `cmu`; restricts FK output to the 17 skeleton joints.
    #[arg(long, requires = "fk")]
    pub map: Option<String>,
    /// Multiplier applied to FK positions.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
}

#[derive(Args, Debug)]
pub struct CorpusArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sequences per upright activity.
    #[arg(long)]
    pub upright: Option<usize>,
    /// Sequences per non-upright activity.
    #[arg(long)]
    pub non_upright: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Directory of `.bvh` files.
    #[arg(long, required_unless_present = "generate")]
    pub bvh_dir: Option<PathBuf>,
    /// Use the built-in procedural corpus instead of a BVH directory.
    #[arg(long, conflicts_with = "bvh_dir")]
    pub generate: bool,
    /// Output JSON-lines file.
    #[arg(long)]
    pub out: PathBuf,
    /// Intrinsics as `focal,cx,cy` in pixels.
    #[arg(long, value_parser = parse_camera)]
    pub camera: Option<Camera>,
    /// Gaussian 2D noise in pixels.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Comma-separated viewpoint classes 1 to 8.
    #[arg(long, value_delimiter = ',')]
    pub viewpoints: Option<Vec<u8>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub frame_step: Option<usize>,
    /// Rotation-vector cluster count, or `none` to keep every frame.
    #[arg(long)]
    pub clusters: Option<String>,
    /// Also keep only the largest feet/torso cluster.
    #[arg(long)]
    pub feet_torso_filter: bool,
    /// Joint map JSON file.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Millimeters per BVH unit.
    #[arg(long)]
    pub unit_scale: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Jointset,
    Alljoints,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ViewpointArg {
    /// Record labels, or yaw binned to the nearest class.
    Gt,
    None,
    /// Labels from the `--labels` file.
    File,
}

#[derive(Args, Debug)]
pub struct ViewpointOpts {
    #[arg(long, value_enum)]
    pub viewpoint: Option<ViewpointArg>,
    /// JSON-lines file of `{"id": ..., "viewpoint": k}`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long, value_enum, default_value = "jointset")]
    pub mode: ModeArg,
    #[command(flatten)]
    pub viewpoint: ViewpointOpts,
    /// Hyperparameter JSON file; replaces the configured hyperparameters.
    #[arg(long)]
    pub hyper: Option<PathBuf>,
    /// Local TGP neighborhood size; 0 fits one global model.
    #[arg(long)]
    pub neighborhood: Option<usize>,
    #[arg(long)]
    pub viewpoint_scale: Option<f64>,
    /// Output model directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub records: PathBuf,
    #[command(flatten)]
    pub viewpoint: ViewpointOpts,
    /// Output JSON-lines file of predicted records.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub records: PathBuf,
    #[command(flatten)]
    pub viewpoint: ViewpointOpts,
    /// JSON report output.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Comma-separated 2D noise levels in pixels.
    #[arg(long, value_delimiter = ',')]
    pub sweep_noise: Option<Vec<f64>>,
    #[arg(long)]
    pub noise_seed: Option<u64>,
    /// Skip the nearest-neighbor baseline.
    #[arg(long)]
    pub no_baseline: bool,
}

#[derive(Args, Debug)]
pub struct AblationArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub train_ratio: Option<f64>,
    /// `random` or `by_sequence`.
    #[arg(long)]
    pub split_mode: Option<SplitMode>,
    #[arg(long)]
    pub split_seed: Option<u64>,
}

fn parse_camera(s: &str) -> Result<Camera, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [f, cx, cy] => Camera::new(f, cx, cy).map_err(|e| e.to_string()),
        _ => Err("expected focal,cx,cy".to_string()),
    }
}

/// Parses `args` (including the program name) and runs the command,
/// writing human-readable output to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> CliResult
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => CliError {
            code: 0,
            message: e.to_string(),
        },
        _ => CliError::input(e),
    })?;
    execute(cli, out)
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> CliResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::input("--threads must be at least 1"));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let config = match &cli.config {
        Some(p) => ExperimentConfig::load(p).map_err(CliError::input)?,
        None => ExperimentConfig::default(),
    };
    match cli.command {
        Command::ParseBvh(a) => parse_bvh_cmd(a, out),
        Command::Corpus(a) => corpus_cmd(a, out),
        Command::Synth(a) => synth_cmd(a, config, out),
        Command::Train(a) => train_cmd(a, config, out),
        Command::Predict(a) => predict_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, config, out),
        Command::Ablation(a) => ablation_cmd(a, config, out),
    }
}

fn io(e: std::io::Error) -> CliError {
    // a closed pipe (e.g. `| head`) ends output quietly
    if e.kind() == std::io::ErrorKind::BrokenPipe {
        return CliError {
            code: 0,
            message: String::new(),
        };
    }
    CliError::input(e)
}

fn read_json_file<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write_json_file<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(CliError::input)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn parse_bvh_cmd(a: ParseBvhArgs, out: &mut dyn Write) -> CliResult {
    let text = fs::read_to_string(&a.input).map_err(|e| CliError::input(format!("{}: {e}", a.input.display())))?;
    let doc = parse_bvh(&text).map_err(|e| CliError::input(format!("{}: {e}", a.input.display())))?;
    let Some(frame) = a.fk else {
        writeln!(
            out,
            "joints: {}\nchannels: {} ({} rotation)\nframes: {}\nframe time: {}",
            doc.joints().len(),
            doc.num_channels(),
            doc.num_rotation_channels(),
            doc.num_frames(),
            doc.frame_time()
        )
        .map_err(io)?;
        for j in doc.joints() {
            let parent = j.parent.map_or("-", |p| doc.joints()[p].name.as_str());
            let channels: Vec<&str> = j.channels.iter().map(|c| c.name()).collect();
            writeln!(out, "  {:<16} parent={:<16} [{}]", j.name, parent, channels.join(" ")).map_err(io)?;
        }
        return Ok(());
    };
    let positions = doc.forward_kinematics(frame).map_err(CliError::input)?;
    #[derive(Serialize)]
    struct Entry<'a> {
        joint: &'a str,
        position: [f64; 3],
    }
    let json = match &a.map {
        Some(m) => {
            let map = if m == "cmu" {
                JointMap::cmu()
            } else {
                read_json_file(Path::new(m))?
            };
            let pose = map_to_skeleton17(&doc, &positions, &map, a.scale).map_err(CliError::input)?;
            let entries: Vec<Entry> = JointId::ALL
                .iter()
                .map(|j| Entry {
                    joint: j.name(),
                    position: pose.joint(*j).into(),
                })
                .collect();
            serde_json::to_string_pretty(&entries)
        }
        None => {
            let entries: Vec<Entry> = doc
                .joints()
                .iter()
                .zip(&positions)
                .map(|(j, p)| Entry {
                    joint: &j.name,
                    position: (p * a.scale).into(),
                })
                .collect();
            serde_json::to_string_pretty(&entries)
        }
    }
    .map_err(CliError::input)?;
    writeln!(out, "{json}").map_err(io)
}

fn corpus_cmd(a: CorpusArgs, out: &mut dyn Write) -> CliResult {
    let d = CorpusSpec::default();
    let spec = CorpusSpec {
        seed: a.seed.unwrap_or(d.seed),
        upright_per_activity: a.upright.unwrap_or(d.upright_per_activity),
        non_upright_per_activity: a.non_upright.unwrap_or(d.non_upright_per_activity),
        frames_per_sequence: a.frames.unwrap_or(d.frames_per_sequence),
        ..d
    };
    if spec.frames_per_sequence == 0 {
        return Err(CliError::input("--frames must be at least 1"));
    }
    fs::create_dir_all(&a.out).map_err(|e| CliError::input(format!("{}: {e}", a.out.display())))?;
    let corpus = generate_corpus(&spec);
    for seq in &corpus {
        let path = a.out.join(format!("{}.bvh", seq.name));
        fs::write(&path, seq.document.to_bvh_string())
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    }
    writeln!(out, "wrote {} sequences to {}", corpus.len(), a.out.display()).map_err(io)
}

fn synth_cmd(a: SynthArgs, config: ExperimentConfig, out: &mut dyn Write) -> CliResult {
    let mut cfg = config.synth;
    if let Some(c) = a.camera {
        cfg.camera = c;
    }
    if let Some(n) = a.noise {
        cfg.noise_px = n;
    }
    if let Some(v) = a.viewpoints {
        cfg.viewpoints = v
            .into_iter()
            .map(ViewpointClass::new)
            .collect::<Result<_, _>>()
            .map_err(CliError::input)?;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.frame_step {
        cfg.frame_step = s;
    }
    if let Some(c) = a.clusters {
        cfg.selection.rotation_clusters = if c == "none" {
            None
        } else {
            Some(
                c.parse()
                    .map_err(|_| CliError::input(format!("--clusters: `{c}` is not a count or `none`")))?,
            )
        };
    }
    if a.feet_torso_filter {
        cfg.selection.feet_torso_filter = true;
    }
    if let Some(m) = a.map {
        cfg.joint_map = read_json_file(&m)?;
    }
    if let Some(s) = a.unit_scale {
        cfg.unit_scale = s;
    }
    let corpus: Vec<MotionSequence> = match &a.bvh_dir {
        Some(dir) => load_bvh_dir(dir).map_err(CliError::input)?,
        None => generate_corpus(&CorpusSpec::default())
            .into_iter()
            .map(Into::into)
            .collect(),
    };
    let result = match generate_dataset(&corpus, &cfg) {
        Err(SynthError::EmptyCorpus) => {
            return Err(CliError::input(match &a.bvh_dir {
                Some(d) => format!("no motion frames found in {}", d.display()),
                None => "empty motion corpus".to_string(),
            }))
        }
        r => r.map_err(CliError::input)?,
    };
    write_records(&a.out, &result.records).map_err(CliError::input)?;
    writeln!(
        out,
        "wrote {} records to {} (selected {} of {} frames, skipped {} samples)",
        result.records.len(),
        a.out.display(),
        result.selected_frames.len(),
        result.candidate_frames,
        result.skipped
    )
    .map_err(io)
}

fn viewpoint_source(opts: &ViewpointOpts, default: ViewpointArg) -> CliResult<ViewpointSource> {
    let arg = match (opts.viewpoint, &opts.labels) {
        (Some(v), _) => v,
        (None, Some(_)) => ViewpointArg::File,
        (None, None) => default,
    };
    match arg {
        ViewpointArg::Gt => Ok(ViewpointSource::GroundTruth),
        ViewpointArg::None => Ok(ViewpointSource::None),
        ViewpointArg::File => {
            let path = opts
                .labels
                .as_ref()
                .ok_or_else(|| CliError::input("--viewpoint file needs --labels"))?;
            Ok(ViewpointSource::from_label_file(path)?)
        }
    }
}

fn load_records(path: &Path) -> CliResult<Vec<PoseRecord>> {
    let records = read_records(path).map_err(CliError::input)?;
    if records.is_empty() {
        return Err(CliError::input(format!("{}: no records", path.display())));
    }
    Ok(records)
}

fn train_cmd(a: TrainArgs, config: ExperimentConfig, out: &mut dyn Write) -> CliResult {
    let mut hyper = match &a.hyper {
        Some(p) => load_hyper(p).map_err(CliError::input)?,
        None => config.train.hyper,
    };
    if let Some(m) = a.neighborhood {
        hyper.neighborhood = (m > 0).then_some(m);
    }
    let scale = a.viewpoint_scale.unwrap_or(config.train.viewpoint_scale);
    let source = viewpoint_source(&a.viewpoint, ViewpointArg::Gt)?;
    let records = load_records(&a.records)?;
    let samples = training_samples(&records, &source, scale)?;
    let layout = FeatureLayout::new(source.uses_viewpoint(), scale);
    let model = match a.mode {
        ModeArg::Jointset => TrainedModel::JointSet(train_jointset(&samples, layout, &hyper)?),
        ModeArg::Alljoints => {
            TrainedModel::AllJoints(train_alljoints(&samples, layout, &hyper).map_err(|e| match e {
                RegressionError::Tgp(source) => RegressionError::Fit {
                    set: "all_joints".into(),
                    source,
                },
                e => e,
            })?)
        }
    };
    save_model_dir(&a.out, &model)?;
    writeln!(
        out,
        "trained {} on {} samples ({}-dim features) -> {}",
        match a.mode {
            ModeArg::Jointset => "jointset",
            ModeArg::Alljoints => "alljoints",
        },
        samples.len(),
        layout.dim(),
        a.out.display()
    )
    .map_err(io)
}

/// Features for `records` under the model's layout; a dimension that
/// disagrees with the model is a mismatch.
fn model_features(
    model: &TrainedModel,
    records: &[PoseRecord],
    opts: &ViewpointOpts,
    sigma: f64,
    seed: u64,
) -> CliResult<Vec<FeatureVector>> {
    let layout = *model.layout();
    let default = if layout.viewpoint {
        ViewpointArg::Gt
    } else {
        ViewpointArg::None
    };
    let source = viewpoint_source(opts, default)?;
    if source.uses_viewpoint() != layout.viewpoint {
        return Err(CliError::mismatch(format!(
            "model expects {}-dim features {} the viewpoint block; records would give {}",
            layout.dim(),
            if layout.viewpoint { "with" } else { "without" },
            FeatureLayout::new(source.uses_viewpoint(), layout.viewpoint_scale).dim()
        )));
    }
    let features = if sigma == 0.0 {
        records
            .iter()
            .map(|r| record_feature(r, &source, layout.viewpoint_scale))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        noisy_features(records, &source, layout.viewpoint_scale, sigma, seed).map_err(CliError::input)?
    };
    if let Some(f) = features.iter().find(|f| f.len() != layout.dim()) {
        return Err(CliError::mismatch(RegressionError::Layout {
            expected: layout.dim(),
            found: f.len(),
        }));
    }
    Ok(features)
}

fn predict_cmd(a: PredictArgs, out: &mut dyn Write) -> CliResult {
    let model = load_model_dir(&a.model).map_err(CliError::input)?;
    let records = load_records(&a.records)?;
    let features = model_features(&model, &records, &a.viewpoint, 0.0, 0)?;
    let poses = model.regressor().predict_batch(&features)?;
    let predicted: Vec<PoseRecord> = records
        .iter()
        .zip(&poses)
        .map(|(r, p)| PoseRecord {
            joints3d: p.to_arrays(),
            ..r.clone()
        })
        .collect();
    write_records(&a.out, &predicted).map_err(CliError::input)?;
    writeln!(out, "wrote {} predictions to {}", predicted.len(), a.out.display()).map_err(io)
}

fn eval_cmd(a: EvalArgs, config: ExperimentConfig, out: &mut dyn Write) -> CliResult {
    let model = load_model_dir(&a.model).map_err(CliError::input)?;
    let records = load_records(&a.records)?;
    let gt = ground_truth(&records).map_err(CliError::input)?;
    let noise = a.sweep_noise.unwrap_or(config.eval.noise_px);
    if let Some(s) = noise.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(CliError::input(format!("invalid noise level {s}")));
    }
    let seed = a.noise_seed.unwrap_or(config.eval.noise_seed);
    let layout = *model.layout();
    let kind = match model {
        TrainedModel::JointSet(_) => RegressorKind::JointSet,
        TrainedModel::AllJoints(_) => RegressorKind::AllJoints,
    };
    let baseline = if a.no_baseline {
        None
    } else {
        Some(train_nearest(&model.training_samples()?, layout)?)
    };
    let mut report = Report::default();
    for &sigma in &noise {
        let features = model_features(&model, &records, &a.viewpoint, sigma, seed)?;
        let mut score = |regressor: RegressorKind, r: &dyn crate::jointset::PoseRegressor| -> CliResult {
            let metrics: Metrics = match evaluate(r, &features, &gt) {
                Ok(m) => m,
                Err(crate::eval::EvalError::Regression(e)) => return Err(e.into()),
                Err(e) => return Err(CliError::input(e)),
            };
            report.push(ReportRow::from_result(
                Condition {
                    viewpoint: layout.viewpoint,
                    noise_px: sigma,
                    regressor,
                },
                Ok(metrics),
            ));
            Ok(())
        };
        score(kind, model.regressor())?;
        if let Some(b) = &baseline {
            score(RegressorKind::Nn1, b)?;
        }
    }
    write!(out, "{}", report.to_text()).map_err(io)?;
    if let Some(p) = &a.report {
        write_json_file(p, &report)?;
    }
    Ok(())
}

fn ablation_cmd(a: AblationArgs, config: ExperimentConfig, out: &mut dyn Write) -> CliResult {
    let records = load_records(&a.records)?;
    let ratio = a.train_ratio.unwrap_or(config.split.train_ratio);
    let mode = a.split_mode.unwrap_or(config.split.mode);
    let seed = a.split_seed.unwrap_or(config.split.seed);
    let (train, test) = split_dataset(&records, ratio, mode, seed).map_err(CliError::input)?;
    writeln!(out, "train {} records, test {} records", train.len(), test.len()).map_err(io)?;
    let report = run_ablation(&train, &test, &config.ablation).map_err(CliError::input)?;
    write!(out, "{}", report.to_text()).map_err(io)?;
    if let Some(p) = &a.report {
        write_json_file(p, &report)?;
    }
    if let Some(r) = report.rows.iter().find(|r| r.error.is_some()) {
        return Err(CliError::training(format!(
            "{}: {}",
            r.condition,
            r.error.as_deref().unwrap_or_default()
        )));
    }
    Ok(())
}
