//! Pose regressors: one TGP per joint set, a single all-joints TGP, and a
//! nearest-neighbor baseline, plus conversion from records to features and
//! on-disk model directories.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{
    bin_yaw, build_feature, compute_yaw, encode_viewpoint, BinMode, CameraError, FeatureLayout, FeatureVector,
    ViewpointClass,
};
use crate::records::{PoseRecord, RecordError};
use crate::skeleton::{JointSetId, Partition, Pose3D, PoseVector, SkeletonError};
use crate::tgp::{HyperparamSpec, ModelDocument, Prediction, TgpError, TgpModel};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum RegressionError {
    #[error("joint set {set}: {source}")]
    Fit {
        set: String,
        #[source]
        source: TgpError,
    },
    #[error(transparent)]
    Tgp(#[from] TgpError),
    #[error("feature layout mismatch: model expects {expected} values, got {found}")]
    Layout { expected: usize, found: usize },
    #[error("need at least 2 training samples, got {0}")]
    TooFewSamples(usize),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("record {0} has no 2D joints")]
    Missing2d(String),
    #[error("record {0} has no viewpoint label")]
    MissingViewpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid model directory: {0}")]
    Manifest(String),
}

pub type Result<T> = std::result::Result<T, RegressionError>;

/// Where the viewpoint block of a feature comes from.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum ViewpointSource {
    /// The record's class label, or its yaw binned to the nearest class,
    /// or the yaw computed from its 3D joints.
    #[default]
    GroundTruth,
    /// No viewpoint block.
    None,
    /// Per-record labels keyed by record id.
    Labels(HashMap<String, ViewpointClass>),
}

impl ViewpointSource {
    /// Parses a label file: JSON lines `{"id": ..., "viewpoint": k}`.
    pub fn from_label_file(path: impl AsRef<Path>) -> Result<ViewpointSource> {
        #[derive(Deserialize)]
        struct Label {
            id: String,
            viewpoint: ViewpointClass,
        }
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| io_error(path, source))?;
        let mut map = HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let l: Label = serde_json::from_str(line).map_err(|source| json_error(path, source))?;
            map.insert(l.id, l.viewpoint);
        }
        Ok(ViewpointSource::Labels(map))
    }

    pub fn uses_viewpoint(&self) -> bool {
        !matches!(self, ViewpointSource::None)
    }

    fn class_for(&self, rec: &PoseRecord) -> Result<Option<ViewpointClass>> {
        match self {
            ViewpointSource::None => Ok(None),
            ViewpointSource::Labels(map) => map
                .get(&rec.id)
                .copied()
                .map(Some)
                .ok_or_else(|| RegressionError::MissingViewpoint(rec.id.clone())),
            ViewpointSource::GroundTruth => {
                if let Some(v) = rec.viewpoint {
                    return Ok(Some(v));
                }
                let yaw = match rec.yaw_deg {
                    Some(y) => y,
                    None => compute_yaw(&rec.pose3d()?)?,
                };
                Ok(bin_yaw(yaw, BinMode::Nearest))
            }
        }
    }
}

/// Builds the regression input for a record.
pub fn record_feature(rec: &PoseRecord, source: &ViewpointSource, viewpoint_scale: f64) -> Result<FeatureVector> {
    let pose2d = rec
        .pose2d()
        .ok_or_else(|| RegressionError::Missing2d(rec.id.clone()))??;
    let encoding = match source.class_for(rec)? {
        Some(c) => Some(encode_viewpoint(c, viewpoint_scale)?),
        None => None,
    };
    Ok(build_feature(&pose2d, encoding.as_ref())?)
}

/// Feature/target pairs for training: features and pelvis-relative poses.
pub fn training_samples(
    records: &[PoseRecord],
    source: &ViewpointSource,
    viewpoint_scale: f64,
) -> Result<Vec<(FeatureVector, Pose3D)>> {
    records
        .iter()
        .map(|r| {
            Ok((
                record_feature(r, source, viewpoint_scale)?,
                r.pose3d()?.to_pelvis_relative()?,
            ))
        })
        .collect()
}

fn check_samples(samples: &[(FeatureVector, Pose3D)], layout: &FeatureLayout) -> Result<()> {
    if samples.len() < 2 {
        return Err(RegressionError::TooFewSamples(samples.len()));
    }
    for (f, _) in samples {
        check_layout(layout, f)?;
    }
    Ok(())
}

fn check_layout(layout: &FeatureLayout, f: &FeatureVector) -> Result<()> {
    if f.len() != layout.dim() {
        return Err(RegressionError::Layout {
            expected: layout.dim(),
            found: f.len(),
        });
    }
    Ok(())
}

/// Common interface of the pose regressors.
pub trait PoseRegressor: Sync {
    fn name(&self) -> &'static str;
    fn layout(&self) -> &FeatureLayout;
    /// Pelvis-relative pose for one feature vector.
    fn predict(&self, feature: &FeatureVector) -> Result<Pose3D>;

    fn predict_batch(&self, features: &[FeatureVector]) -> Result<Vec<Pose3D>> {
        features.par_iter().map(|f| self.predict(f)).collect()
    }
}

/// Three independent TGPs, one per joint set, sharing the input features.
#[derive(Clone, Debug)]
pub struct JointSetRegressor {
    partition: Partition,
    layout: FeatureLayout,
    models: [TgpModel; 3],
}

/// Trains the three joint-set models with the same hyperparameter spec;
/// output kernel widths left unset are chosen per set.
pub fn train_jointset(
    samples: &[(FeatureVector, Pose3D)],
    layout: FeatureLayout,
    hyper: &HyperparamSpec,
) -> Result<JointSetRegressor> {
    train_jointset_with(samples, layout, &Partition::default(), [hyper, hyper, hyper])
}

/// Like [`train_jointset`] with an explicit partition and one spec per set
/// (indexed by [`JointSetId::index`]).
pub fn train_jointset_with(
    samples: &[(FeatureVector, Pose3D)],
    layout: FeatureLayout,
    partition: &Partition,
    hyper: [&HyperparamSpec; 3],
) -> Result<JointSetRegressor> {
    check_samples(samples, &layout)?;
    let inputs: Vec<&[f64]> = samples.iter().map(|(f, _)| f.as_slice()).collect();
    let fitted: Vec<Result<TgpModel>> = JointSetId::ALL
        .par_iter()
        .map(|&set| {
            let outputs: Vec<PoseVector> = samples
                .iter()
                .map(|(_, p)| partition.select(p, set))
                .collect::<std::result::Result<_, _>>()?;
            let labeled = |source| RegressionError::Fit {
                set: set.name().to_string(),
                source,
            };
            let h = hyper[set.index()].resolve(&inputs, &outputs).map_err(labeled)?;
            TgpModel::fit(&inputs, &outputs, &h).map_err(labeled)
        })
        .collect();
    let mut it = fitted.into_iter();
    let mut next = || it.next().expect("three joint sets");
    Ok(JointSetRegressor {
        partition: partition.clone(),
        layout,
        models: [next()?, next()?, next()?],
    })
}

impl JointSetRegressor {
    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn model(&self, set: JointSetId) -> &TgpModel {
        &self.models[set.index()]
    }

    /// Merged pose together with the three raw predictions.
    pub fn predict_detailed(&self, feature: &FeatureVector) -> Result<(Pose3D, [Prediction; 3])> {
        check_layout(&self.layout, feature)?;
        let p = |s: JointSetId| self.models[s.index()].predict(feature.as_slice());
        let preds = [
            p(JointSetId::RightHand)?,
            p(JointSetId::LeftHand)?,
            p(JointSetId::TorsoLegs)?,
        ];
        let parts = preds.clone().map(|p| PoseVector(p.x));
        let pose = self.partition.merge(&parts[0], &parts[1], &parts[2])?;
        Ok((pose, preds))
    }
}

impl PoseRegressor for JointSetRegressor {
    fn name(&self) -> &'static str {
        "jointset"
    }

    fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    fn predict(&self, feature: &FeatureVector) -> Result<Pose3D> {
        Ok(self.predict_detailed(feature)?.0)
    }
}

/// One TGP over all 16 non-pelvis joints.
#[derive(Clone, Debug)]
pub struct AllJointsRegressor {
    layout: FeatureLayout,
    model: TgpModel,
}

pub fn train_alljoints(
    samples: &[(FeatureVector, Pose3D)],
    layout: FeatureLayout,
    hyper: &HyperparamSpec,
) -> Result<AllJointsRegressor> {
    check_samples(samples, &layout)?;
    let inputs: Vec<&[f64]> = samples.iter().map(|(f, _)| f.as_slice()).collect();
    let outputs: Vec<PoseVector> = samples.iter().map(|(_, p)| p.flatten_non_pelvis()).collect();
    let labeled = |source| RegressionError::Fit {
        set: ALL_JOINTS.to_string(),
        source,
    };
    let h = hyper.resolve(&inputs, &outputs).map_err(labeled)?;
    let model = TgpModel::fit(&inputs, &outputs, &h).map_err(labeled)?;
    Ok(AllJointsRegressor { layout, model })
}

const ALL_JOINTS: &str = "all_joints";

impl AllJointsRegressor {
    pub fn model(&self) -> &TgpModel {
        &self.model
    }
}

impl PoseRegressor for AllJointsRegressor {
    fn name(&self) -> &'static str {
        "alljoints"
    }

    fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    fn predict(&self, feature: &FeatureVector) -> Result<Pose3D> {
        check_layout(&self.layout, feature)?;
        let p = self.model.predict(feature.as_slice())?;
        Ok(Pose3D::unflatten_non_pelvis(&PoseVector(p.x))?)
    }
}

/// Returns the training pose whose features are closest (Euclidean, ties to
/// the earliest sample).
#[derive(Clone, Debug)]
pub struct NearestNeighbor {
    layout: FeatureLayout,
    features: Vec<FeatureVector>,
    poses: Vec<Pose3D>,
}

pub fn train_nearest(samples: &[(FeatureVector, Pose3D)], layout: FeatureLayout) -> Result<NearestNeighbor> {
    if samples.is_empty() {
        return Err(RegressionError::TooFewSamples(0));
    }
    for (f, _) in samples {
        check_layout(&layout, f)?;
    }
    Ok(NearestNeighbor {
        layout,
        features: samples.iter().map(|(f, _)| f.clone()).collect(),
        poses: samples.iter().map(|(_, p)| p.clone()).collect(),
    })
}

impl NearestNeighbor {
    pub fn nearest_index(&self, feature: &FeatureVector) -> Result<usize> {
        check_layout(&self.layout, feature)?;
        let mut best = (f64::INFINITY, 0);
        for (i, f) in self.features.iter().enumerate() {
            let d: f64 = f.0.iter().zip(&feature.0).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, i);
            }
        }
        Ok(best.1)
    }
}

impl PoseRegressor for NearestNeighbor {
    fn name(&self) -> &'static str {
        "nn1"
    }

    fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    fn predict(&self, feature: &FeatureVector) -> Result<Pose3D> {
        Ok(self.poses[self.nearest_index(feature)?].clone())
    }
}

/// A trained TGP regressor of either kind.
#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum TrainedModel {
    JointSet(JointSetRegressor),
    AllJoints(AllJointsRegressor),
}

impl TrainedModel {
    pub fn regressor(&self) -> &dyn PoseRegressor {
        match self {
            TrainedModel::JointSet(m) => m,
            TrainedModel::AllJoints(m) => m,
        }
    }

    pub fn layout(&self) -> &FeatureLayout {
        self.regressor().layout()
    }

    /// Training inputs and pelvis-relative training poses, recovered from
    /// the stored model data.
    pub fn training_samples(&self) -> Result<Vec<(FeatureVector, Pose3D)>> {
        match self {
            TrainedModel::JointSet(m) => {
                let [rh, lh, tl] = &m.models;
                let inputs = rh.inputs();
                (0..rh.len())
                    .map(|i| {
                        let pose = m.partition.merge(
                            &PoseVector(rh.output(i).to_vec()),
                            &PoseVector(lh.output(i).to_vec()),
                            &PoseVector(tl.output(i).to_vec()),
                        )?;
                        Ok((FeatureVector(inputs[i].clone()), pose))
                    })
                    .collect()
            }
            TrainedModel::AllJoints(m) => m
                .model
                .inputs()
                .into_iter()
                .enumerate()
                .map(|(i, r)| {
                    Ok((
                        FeatureVector(r),
                        Pose3D::unflatten_non_pelvis(&PoseVector(m.model.output(i).to_vec()))?,
                    ))
                })
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    JointSet,
    AllJoints,
}

/// Directory index written next to the model files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: ModelKind,
    pub feature_layout: FeatureLayout,
    pub feature_dim: usize,
    pub partition: Option<Partition>,
    /// Model name to file name, in a fixed order.
    pub models: Vec<(String, String)>,
}

fn io_error(path: &Path, source: std::io::Error) -> RegressionError {
    RegressionError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn json_error(path: &Path, source: serde_json::Error) -> RegressionError {
    RegressionError::Json {
        path: path.display().to_string(),
        source,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T, pretty: bool) -> Result<()> {
    let mut bytes = if pretty {
        serde_json::to_vec_pretty(value)
    } else {
        serde_json::to_vec(value)
    }
    .map_err(|e| json_error(path, e))?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| json_error(path, e))
}

/// Writes `manifest.json` plus one JSON document per model.
pub fn save_model_dir(dir: impl AsRef<Path>, model: &TrainedModel) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let layout = *model.layout();
    let mut entries = Vec::new();
    let mut docs: Vec<ModelDocument> = Vec::new();
    let (kind, partition) = match model {
        TrainedModel::JointSet(m) => {
            for set in JointSetId::ALL {
                entries.push((set.name().to_string(), format!("{}.json", set.name())));
                docs.push(m.model(set).to_document(Some(set.name().to_string()), Some(layout)));
            }
            (ModelKind::JointSet, Some(m.partition.clone()))
        }
        TrainedModel::AllJoints(m) => {
            entries.push((ALL_JOINTS.to_string(), format!("{ALL_JOINTS}.json")));
            docs.push(m.model.to_document(Some(ALL_JOINTS.to_string()), Some(layout)));
            (ModelKind::AllJoints, None)
        }
    };
    for ((_, file), doc) in entries.iter().zip(&docs) {
        write_json(&dir.join(file), doc, false)?;
    }
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        kind,
        feature_layout: layout,
        feature_dim: layout.dim(),
        partition,
        models: entries,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest, true)
}

pub fn load_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let manifest: Manifest = read_json(&dir.as_ref().join(MANIFEST_FILE))?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(RegressionError::Manifest(format!(
            "unsupported manifest version {}",
            manifest.format_version
        )));
    }
    Ok(manifest)
}

pub fn load_model_dir(dir: impl AsRef<Path>) -> Result<TrainedModel> {
    let dir = dir.as_ref();
    let manifest = load_manifest(dir)?;
    let load = |name: &str| -> Result<TgpModel> {
        let file = manifest
            .models
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, f)| f)
            .ok_or_else(|| RegressionError::Manifest(format!("no entry for {name}")))?;
        let path = dir.join(file);
        let doc: ModelDocument = read_json(&path)?;
        if doc.feature_layout != Some(manifest.feature_layout) {
            return Err(RegressionError::Manifest(format!(
                "{file}: feature layout differs from manifest"
            )));
        }
        if doc.inputs.first().map(Vec::len) != Some(manifest.feature_layout.dim()) {
            return Err(RegressionError::Manifest(format!(
                "{file}: input dimension differs from manifest"
            )));
        }
        TgpModel::from_document(&doc).map_err(|source| RegressionError::Fit {
            set: name.to_string(),
            source,
        })
    };
    let layout = manifest.feature_layout;
    match manifest.kind {
        ModelKind::JointSet => {
            let partition = manifest
                .partition
                .clone()
                .ok_or_else(|| RegressionError::Manifest("joint-set model without partition".into()))?;
            let models = [
                load(JointSetId::RightHand.name())?,
                load(JointSetId::LeftHand.name())?,
                load(JointSetId::TorsoLegs.name())?,
            ];
            for set in JointSetId::ALL {
                if models[set.index()].output_dim() != partition.dim(set) {
                    return Err(RegressionError::Manifest(format!(
                        "{} output dimension mismatch",
                        set.name()
                    )));
                }
            }
            if models.iter().any(|m| m.len() != models[0].len()) {
                return Err(RegressionError::Manifest(
                    "joint-set models differ in sample count".into(),
                ));
            }
            Ok(TrainedModel::JointSet(JointSetRegressor {
                partition,
                layout,
                models,
            }))
        }
        ModelKind::AllJoints => Ok(TrainedModel::AllJoints(AllJointsRegressor {
            layout,
            model: load(ALL_JOINTS)?,
        })),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::DEFAULT_VIEWPOINT_SCALE;
    use crate::skeleton::{Frame, JointId, NUM_JOINTS};
    use nalgebra::Vector3;

    fn pose(t: f64) -> Pose3D {
        let joints: [Vector3<f64>; NUM_JOINTS] = std::array::from_fn(|i| {
            if i == 0 {
                Vector3::zeros()
            } else {
                Vector3::new(i as f64 * 20.0 + t * (i % 3) as f64, -(i as f64) * 30.0 + t, t * 0.5)
            }
        });
        Pose3D::new(joints, Frame::PelvisRelative).unwrap()
    }

    fn samples(n: usize) -> Vec<(FeatureVector, Pose3D)> {
        (0..n)
            .map(|i| {
                let t = i as f64 * 5.0;
                let mut f: Vec<f64> = (0..34).map(|k| (k as f64 + t).sin() * 50.0).collect();
                f.extend([t, 0.0]);
                (FeatureVector(f), pose(t))
            })
            .collect()
    }

    fn layout() -> FeatureLayout {
        FeatureLayout::new(true, DEFAULT_VIEWPOINT_SCALE)
    }

    #[test]
    fn jointset_models_and_dimensions() {
        let s = samples(2);
        let m = train_jointset(&s, layout(), &HyperparamSpec::default()).unwrap();
        for (set, d) in [
            (JointSetId::RightHand, 9),
            (JointSetId::LeftHand, 9),
            (JointSetId::TorsoLegs, 30),
        ] {
            assert_eq!(m.model(set).len(), 2);
            assert_eq!(m.model(set).output_dim(), d);
            assert_eq!(
                m.model(set).outputs()[1],
                Partition::default().select(&s[1].1, set).unwrap().0
            );
        }
        let p = m.predict(&s[0].0).unwrap();
        assert_eq!(p.joint(JointId::Pelvis), Vector3::zeros());
        assert_eq!(p.frame(), Frame::PelvisRelative);
    }

    #[test]
    fn constant_corpus_predicts_constant_pose() {
        let s: Vec<_> = samples(6).into_iter().map(|(f, _)| (f, pose(1.0))).collect();
        let js = train_jointset(&s, layout(), &HyperparamSpec::default()).unwrap();
        let aj = train_alljoints(&s, layout(), &HyperparamSpec::default()).unwrap();
        assert_eq!(aj.model().output_dim(), 48);
        let q = samples(9)[8].0.clone();
        assert_eq!(js.predict(&q).unwrap(), pose(1.0));
        assert_eq!(aj.predict(&q).unwrap(), pose(1.0));
    }

    #[test]
    fn layout_mismatch_rejected() {
        let s = samples(4);
        let m = train_jointset(&s, layout(), &HyperparamSpec::default()).unwrap();
        assert!(matches!(
            m.predict(&s[0].0.without_viewpoint()),
            Err(RegressionError::Layout {
                expected: 36,
                found: 34
            })
        ));
        assert!(matches!(
            train_jointset(&s[..1], layout(), &HyperparamSpec::default()),
            Err(RegressionError::TooFewSamples(1))
        ));
    }

    #[test]
    fn fit_error_names_set() {
        let s = samples(4);
        let bad = HyperparamSpec {
            lambda_x: Some(0.0),
            ..Default::default()
        };
        let ok = HyperparamSpec::default();
        match train_jointset_with(&s, layout(), &Partition::default(), [&ok, &bad, &ok]) {
            Err(RegressionError::Fit { set, .. }) => assert_eq!(set, "left_hand"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nearest_neighbor_returns_training_pose() {
        let s = samples(5);
        let nn = train_nearest(&s, layout()).unwrap();
        for (f, p) in &s {
            assert_eq!(&nn.predict(f).unwrap(), p);
        }
    }

    #[test]
    fn model_dir_round_trip() {
        let s = samples(8);
        let dir = tempfile::tempdir().unwrap();
        let js = TrainedModel::JointSet(train_jointset(&s, layout(), &HyperparamSpec::default()).unwrap());
        save_model_dir(dir.path(), &js).unwrap();
        let names: Vec<String> = {
            let mut v: Vec<String> = fs::read_dir(dir.path())
                .unwrap()
                .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
                .collect();
            v.sort();
            v
        };
        assert_eq!(
            names,
            ["left_hand.json", "manifest.json", "right_hand.json", "torso_legs.json"]
        );
        let back = load_model_dir(dir.path()).unwrap();
        let q = &s[3].0;
        assert_eq!(back.regressor().predict(q).unwrap(), js.regressor().predict(q).unwrap());
        let recovered = back.training_samples().unwrap();
        assert_eq!(recovered.len(), 8);
        assert_eq!(recovered[5].1, s[5].1);

        let aj = TrainedModel::AllJoints(train_alljoints(&s, layout(), &HyperparamSpec::default()).unwrap());
        let dir2 = tempfile::tempdir().unwrap();
        save_model_dir(dir2.path(), &aj).unwrap();
        let back = load_model_dir(dir2.path()).unwrap();
        assert_eq!(back.regressor().predict(q).unwrap(), aj.regressor().predict(q).unwrap());
        assert_eq!(load_manifest(dir2.path()).unwrap().feature_dim, 36);
    }
}
