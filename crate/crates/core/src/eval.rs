//! Error metrics and the ablation harness.

use std::fmt::Write as _;

use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{FeatureLayout, FeatureVector};
use crate::jointset::{
    record_feature, train_alljoints, train_jointset, train_nearest, PoseRegressor, RegressionError, ViewpointSource,
};
use crate::records::PoseRecord;
use crate::skeleton::{Frame, JointId, Pose2D, Pose3D, NUM_JOINTS};
use crate::tgp::HyperparamSpec;

/// Joints summarized as the hand subset.
pub const HAND_JOINTS: [JointId; 6] = [
    JointId::RShoulder,
    JointId::RElbow,
    JointId::RWrist,
    JointId::LShoulder,
    JointId::LElbow,
    JointId::LWrist,
];

/// Every non-pelvis joint outside [`HAND_JOINTS`].
pub const TORSO_LEG_JOINTS: [JointId; 10] = [
    JointId::RHip,
    JointId::RKnee,
    JointId::RAnkle,
    JointId::LHip,
    JointId::LKnee,
    JointId::LAnkle,
    JointId::Spine,
    JointId::Thorax,
    JointId::Neck,
    JointId::Head,
];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("frame mismatch: estimate in {est:?}, ground truth in {gt:?}")]
    Frame { est: Frame, gt: Frame },
    #[error("empty pose set")]
    Empty,
    #[error("{est} estimates for {gt} ground-truth poses")]
    Count { est: usize, gt: usize },
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error("invalid setting: {0}")]
    Config(String),
}

/// Mean per-joint position error in millimeters over all 17 joints. Both
/// poses must be in the same frame; pelvis-relative in practice.
pub fn mpjpe(est: &Pose3D, gt: &Pose3D) -> Result<f64, EvalError> {
    check_frames(est, gt)?;
    Ok(joint_errors(est, gt).iter().sum::<f64>() / NUM_JOINTS as f64)
}

fn check_frames(est: &Pose3D, gt: &Pose3D) -> Result<(), EvalError> {
    if est.frame() != gt.frame() {
        return Err(EvalError::Frame {
            est: est.frame(),
            gt: gt.frame(),
        });
    }
    Ok(())
}

fn joint_errors(est: &Pose3D, gt: &Pose3D) -> [f64; NUM_JOINTS] {
    std::array::from_fn(|i| (est.joints()[i] - gt.joints()[i]).norm())
}

/// Mean error of each joint across a set of pose pairs.
pub fn per_joint_error(est: &[Pose3D], gt: &[Pose3D]) -> Result<[f64; NUM_JOINTS], EvalError> {
    if est.len() != gt.len() {
        return Err(EvalError::Count {
            est: est.len(),
            gt: gt.len(),
        });
    }
    if est.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut sum = [0.0; NUM_JOINTS];
    for (e, g) in est.iter().zip(gt) {
        check_frames(e, g)?;
        for (s, v) in sum.iter_mut().zip(joint_errors(e, g)) {
            *s += v;
        }
    }
    Ok(sum.map(|s| s / est.len() as f64))
}

/// Mean of `per_joint` over `joints`.
pub fn subset_mean(per_joint: &[f64; NUM_JOINTS], joints: &[JointId]) -> f64 {
    joints.iter().map(|j| per_joint[j.index()]).sum::<f64>() / joints.len() as f64
}

/// Summary of one regressor on one test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mpjpe_mm: f64,
    pub per_joint_mm: [f64; NUM_JOINTS],
    pub hand_mpjpe_mm: f64,
    pub torso_legs_mpjpe_mm: f64,
    pub samples: usize,
}

impl Metrics {
    pub fn from_poses(est: &[Pose3D], gt: &[Pose3D]) -> Result<Metrics, EvalError> {
        let per_joint = per_joint_error(est, gt)?;
        Ok(Metrics {
            mpjpe_mm: per_joint.iter().sum::<f64>() / NUM_JOINTS as f64,
            per_joint_mm: per_joint,
            hand_mpjpe_mm: subset_mean(&per_joint, &HAND_JOINTS),
            torso_legs_mpjpe_mm: subset_mean(&per_joint, &TORSO_LEG_JOINTS),
            samples: est.len(),
        })
    }
}

/// Predicts every feature and scores against `gt` (pelvis-relative).
pub fn evaluate(
    regressor: &dyn PoseRegressor,
    features: &[FeatureVector],
    gt: &[Pose3D],
) -> Result<Metrics, EvalError> {
    let est = regressor.predict_batch(features)?;
    Metrics::from_poses(&est, gt)
}

/// Adds isotropic Gaussian noise of `sigma_px` to every 2D joint. The
/// underlying normal draws depend only on `(seed, index)`, so different
/// `sigma_px` values scale one fixed noise pattern.
pub fn add_pixel_noise(pose: &Pose2D, sigma_px: f64, seed: u64, index: u64) -> Pose2D {
    if sigma_px == 0.0 {
        return pose.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    pose.perturbed(|_| {
        let dx: f64 = StandardNormal.sample(&mut rng);
        let dy: f64 = StandardNormal.sample(&mut rng);
        Vector2::new(sigma_px * dx, sigma_px * dy)
    })
}

/// Builds features for `records` after adding pixel noise to their 2D
/// joints.
pub fn noisy_features(
    records: &[PoseRecord],
    source: &ViewpointSource,
    viewpoint_scale: f64,
    sigma_px: f64,
    seed: u64,
) -> Result<Vec<FeatureVector>, EvalError> {
    records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let mut r = r.clone();
            if let Some(p) = r.pose2d() {
                let p = p.map_err(RegressionError::from)?;
                r.joints2d = Some(add_pixel_noise(&p, sigma_px, seed, i as u64).to_arrays());
            }
            Ok(record_feature(&r, source, viewpoint_scale)?)
        })
        .collect()
}

pub fn ground_truth(records: &[PoseRecord]) -> Result<Vec<Pose3D>, EvalError> {
    records
        .iter()
        .map(|r| {
            let p = r.pose3d().map_err(RegressionError::from)?;
            Ok(p.to_pelvis_relative().map_err(RegressionError::from)?)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressorKind {
    JointSet,
    AllJoints,
    /// Nearest-neighbor baseline.
    Nn1,
}

impl RegressorKind {
    pub fn name(self) -> &'static str {
        match self {
            RegressorKind::JointSet => "jointset",
            RegressorKind::AllJoints => "alljoints",
            RegressorKind::Nn1 => "nn1",
        }
    }
}

impl std::str::FromStr for RegressorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "jointset" => Ok(RegressorKind::JointSet),
            "alljoints" => Ok(RegressorKind::AllJoints),
            "nn1" => Ok(RegressorKind::Nn1),
            other => Err(format!("unknown regressor `{other}` (jointset, alljoints, nn1)")),
        }
    }
}

/// Ablation grid. Rows are produced for every combination, in the order
/// viewpoint × noise × regressor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub viewpoint: Vec<bool>,
    pub noise_px: Vec<f64>,
    pub regressors: Vec<RegressorKind>,
    pub hyper: HyperparamSpec,
    pub viewpoint_scale: f64,
    pub noise_seed: u64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            viewpoint: vec![true, false],
            noise_px: vec![0.0, 2.0, 5.0, 10.0],
            regressors: vec![RegressorKind::JointSet, RegressorKind::AllJoints, RegressorKind::Nn1],
            hyper: HyperparamSpec::default(),
            viewpoint_scale: crate::camera::DEFAULT_VIEWPOINT_SCALE,
            noise_seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub viewpoint: bool,
    pub noise_px: f64,
    pub regressor: RegressorKind,
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} vp={} noise={}px",
            self.regressor.name(),
            if self.viewpoint { "on" } else { "off" },
            self.noise_px
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub condition: Condition,
    pub mpjpe_mm: Option<f64>,
    pub per_joint_mm: Option<[f64; NUM_JOINTS]>,
    pub hand_mpjpe_mm: Option<f64>,
    pub torso_legs_mpjpe_mm: Option<f64>,
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ReportRow {
    pub fn from_result(condition: Condition, result: Result<Metrics, EvalError>) -> ReportRow {
        match result {
            Ok(m) => ReportRow {
                condition,
                mpjpe_mm: Some(m.mpjpe_mm),
                per_joint_mm: Some(m.per_joint_mm),
                hand_mpjpe_mm: Some(m.hand_mpjpe_mm),
                torso_legs_mpjpe_mm: Some(m.torso_legs_mpjpe_mm),
                samples: m.samples,
                error: None,
            },
            Err(e) => ReportRow {
                condition,
                mpjpe_mm: None,
                per_joint_mm: None,
                hand_mpjpe_mm: None,
                torso_legs_mpjpe_mm: None,
                samples: 0,
                error: Some(e.to_string()),
            },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub conditions: Vec<Condition>,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn push(&mut self, row: ReportRow) {
        self.conditions.push(row.condition);
        self.rows.push(row);
    }

    pub fn row(&self, viewpoint: bool, noise_px: f64, regressor: RegressorKind) -> Option<&ReportRow> {
        self.rows.iter().find(|r| {
            r.condition.viewpoint == viewpoint && r.condition.noise_px == noise_px && r.condition.regressor == regressor
        })
    }

    /// Aligned text table, one line per row plus per-joint errors.
    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:>4} {:>8} {:>8} {:>10} {:>8} {:>10} {:>7}",
            "regressor", "vp", "noise_px", "samples", "mpjpe_mm", "hand_mm", "torso_legs", "status"
        );
        for r in &self.rows {
            let c = &r.condition;
            let _ = writeln!(
                s,
                "{:<10} {:>4} {:>8} {:>8} {:>10} {:>8} {:>10} {:>7}",
                c.regressor.name(),
                if c.viewpoint { "on" } else { "off" },
                c.noise_px,
                r.samples,
                fmt(r.mpjpe_mm),
                fmt(r.hand_mpjpe_mm),
                fmt(r.torso_legs_mpjpe_mm),
                if r.error.is_some() { "failed" } else { "ok" }
            );
        }
        let _ = writeln!(s);
        let _ = write!(s, "{:<30}", "per-joint error (mm)");
        for j in JointId::ALL {
            let _ = write!(s, " {:>9}", j.name());
        }
        let _ = writeln!(s);
        for r in &self.rows {
            let _ = write!(s, "{:<30}", r.condition.to_string());
            match &r.per_joint_mm {
                Some(pj) => {
                    for v in pj {
                        let _ = write!(s, " {v:>9.2}");
                    }
                }
                None => {
                    let _ = write!(s, " {}", r.error.as_deref().unwrap_or("-"));
                }
            }
            let _ = writeln!(s);
        }
        s
    }
}

/// Trains every requested regressor on clean training features for each
/// viewpoint setting and scores each on noisy test features. Failures of
/// one condition are recorded in its row.
pub fn run_ablation(train: &[PoseRecord], test: &[PoseRecord], config: &AblationConfig) -> Result<Report, EvalError> {
    if config.viewpoint.is_empty() || config.noise_px.is_empty() || config.regressors.is_empty() {
        return Err(EvalError::Config(
            "every condition list needs at least one entry".into(),
        ));
    }
    if let Some(s) = config.noise_px.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(EvalError::Config(format!("invalid noise level {s}")));
    }
    let gt = ground_truth(test)?;
    let mut report = Report::default();
    for &vp in &config.viewpoint {
        let source = if vp {
            ViewpointSource::GroundTruth
        } else {
            ViewpointSource::None
        };
        let layout = FeatureLayout::new(vp, config.viewpoint_scale);
        let samples = crate::jointset::training_samples(train, &ViewpointSource::GroundTruth, config.viewpoint_scale)?;
        // the viewpoint-free variant drops the encoding block of the same features
        let samples: Vec<(FeatureVector, Pose3D)> = if vp {
            samples
        } else {
            samples.into_iter().map(|(f, p)| (f.without_viewpoint(), p)).collect()
        };
        let trained: Vec<Result<Box<dyn PoseRegressor>, EvalError>> = config
            .regressors
            .iter()
            .map(|kind| -> Result<Box<dyn PoseRegressor>, EvalError> {
                Ok(match kind {
                    RegressorKind::JointSet => Box::new(train_jointset(&samples, layout, &config.hyper)?),
                    RegressorKind::AllJoints => Box::new(train_alljoints(&samples, layout, &config.hyper)?),
                    RegressorKind::Nn1 => Box::new(train_nearest(&samples, layout)?),
                })
            })
            .collect();
        for &sigma in &config.noise_px {
            let features = noisy_features(test, &source, config.viewpoint_scale, sigma, config.noise_seed);
            for (kind, model) in config.regressors.iter().zip(&trained) {
                let condition = Condition {
                    viewpoint: vp,
                    noise_px: sigma,
                    regressor: *kind,
                };
                let result = match (&features, model) {
                    (Ok(f), Ok(m)) => evaluate(m.as_ref(), f, &gt),
                    (Err(e), _) | (_, Err(e)) => Err(EvalError::Config(e.to_string())),
                };
                report.push(ReportRow::from_result(condition, result));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn pose_with(f: impl Fn(usize) -> Vector3<f64>) -> Pose3D {
        Pose3D::new(std::array::from_fn(f), Frame::Camera).unwrap()
    }

    fn base() -> Pose3D {
        pose_with(|i| {
            if i == 0 {
                Vector3::zeros()
            } else {
                Vector3::new(i as f64 * 11.0, -(i as f64) * 7.0, (i * i) as f64)
            }
        })
    }

    #[test]
    fn mpjpe_identities() {
        let gt = base();
        assert_eq!(mpjpe(&gt, &gt).unwrap(), 0.0);
        let shifted = pose_with(|i| gt.joints()[i] + Vector3::new(3.0, 4.0, 0.0));
        assert_eq!(mpjpe(&shifted, &gt).unwrap(), 5.0);
        let one = pose_with(|i| {
            gt.joints()[i]
                + if i == 5 {
                    Vector3::new(3.0, 4.0, 0.0)
                } else {
                    Vector3::zeros()
                }
        });
        assert!((mpjpe(&one, &gt).unwrap() - 5.0 / 17.0).abs() < 1e-15);
        assert!((mpjpe(&one, &gt).unwrap() - 0.2941).abs() < 1e-4);
        let world = Pose3D::new(*gt.joints(), Frame::World).unwrap();
        assert!(matches!(mpjpe(&world, &gt), Err(EvalError::Frame { .. })));
        let rel = gt.to_pelvis_relative().unwrap();
        assert_eq!(mpjpe(&rel, &rel).unwrap(), 0.0);
    }

    #[test]
    fn per_joint_two_samples_by_hand() {
        let gt = base();
        let a = pose_with(|i| {
            gt.joints()[i]
                + if i == 1 {
                    Vector3::new(0.0, 6.0, 8.0)
                } else {
                    Vector3::zeros()
                }
        });
        let b = pose_with(|i| {
            gt.joints()[i]
                + if i == 1 || i == 2 {
                    Vector3::new(2.0, 0.0, 0.0)
                } else {
                    Vector3::zeros()
                }
        });
        let pj = per_joint_error(&[a, b], &[gt.clone(), gt.clone()]).unwrap();
        assert_eq!(pj[1], 6.0); // (10 + 2) / 2
        assert_eq!(pj[2], 1.0); // (0 + 2) / 2
        assert!(pj.iter().enumerate().all(|(i, v)| i == 1 || i == 2 || *v == 0.0));
        assert!(matches!(per_joint_error(&[], &[]), Err(EvalError::Empty)));
    }

    #[test]
    fn subsets_cover_non_pelvis_joints() {
        let mut all: Vec<JointId> = HAND_JOINTS.iter().chain(&TORSO_LEG_JOINTS).copied().collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 16);
        assert!(!all.contains(&JointId::Pelvis));
    }

    #[test]
    fn noise_scales_common_pattern() {
        let p = Pose2D::from_arrays(&std::array::from_fn(|i| [i as f64, 2.0 * i as f64])).unwrap();
        let a = add_pixel_noise(&p, 1.0, 9, 4);
        let b = add_pixel_noise(&p, 3.0, 9, 4);
        for j in 0..NUM_JOINTS {
            let da = a.joints()[j] - p.joints()[j];
            let db = b.joints()[j] - p.joints()[j];
            assert!((db - 3.0 * da).norm() < 1e-12);
        }
        assert_eq!(add_pixel_noise(&p, 0.0, 9, 4), p);
        assert_ne!(add_pixel_noise(&p, 1.0, 9, 5), a);
    }

    #[test]
    fn report_json_shape() {
        let mut r = Report::default();
        let c = Condition {
            viewpoint: true,
            noise_px: 0.0,
            regressor: RegressorKind::JointSet,
        };
        let m = Metrics::from_poses(&[base()], &[base()]).unwrap();
        r.push(ReportRow::from_result(c, Ok(m)));
        r.push(ReportRow::from_result(
            Condition {
                regressor: RegressorKind::Nn1,
                ..c
            },
            Err(EvalError::Empty),
        ));
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["conditions"].as_array().unwrap().len(), 2);
        assert_eq!(v["rows"][0]["per_joint_mm"].as_array().unwrap().len(), 17);
        assert_eq!(v["rows"][0]["condition"]["regressor"], "jointset");
        assert!(v["rows"][1]["error"].is_string());
        let text = r.to_text();
        assert!(text.contains("failed") && text.contains("jointset"));
        let back: Report = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }
}
