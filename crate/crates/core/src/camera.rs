//! Pinhole projection, character rotation, yaw labels and the viewpoint
//! features appended to the 2D joints.
//!
//! Camera frame: x right, y down, z forward, millimeters. Yaw is the angle
//! of the shoulder line `LShoulder - RShoulder` in the x-z plane,
//! `atan2(dz, dx)`, so a person squarely facing the camera has yaw 0 and
//! yaw grows as the character turns about the vertical axis.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angle::{normalize_deg, wrap_deg};
use crate::skeleton::{Frame, JointId, Pose2D, Pose3D, SkeletonError, NUM_JOINTS};

/// Number of viewpoint bins.
pub const NUM_VIEWPOINTS: usize = 8;

/// Default half-width of the strict binning window, degrees.
pub const STRICT_HALF_WIDTH_DEG: f64 = 5.0;

/// Default scale applied to the `(sin, cos)` viewpoint encoding.
pub const DEFAULT_VIEWPOINT_SCALE: f64 = 100.0;

/// Minimum horizontal shoulder separation for a defined yaw, mm.
pub const MIN_SHOULDER_SPAN_MM: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("focal length must be positive, got {0}")]
    InvalidFocal(f64),
    #[error("joint {joint} has non-positive depth {depth} mm")]
    BehindCamera { joint: JointId, depth: f64 },
    #[error("projection needs a camera-frame pose, got {0}")]
    WrongFrame(Frame),
    #[error("shoulders are {0} mm apart horizontally; yaw is undefined")]
    DegenerateShoulders(f64),
    #[error("viewpoint class must be in 1..=8, got {0}")]
    InvalidViewpoint(u8),
    #[error("viewpoint scale must be positive, got {0}")]
    InvalidScale(f64),
    #[error("joint {0} is not visible")]
    MissingJoint(JointId),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
}

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Camera {
            focal: 1000.0,
            cx: 500.0,
            cy: 500.0,
        }
    }
}

impl Camera {
    pub fn new(focal: f64, cx: f64, cy: f64) -> Result<Self, CameraError> {
        let cam = Camera { focal, cx, cy };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.focal > 0.0) || !self.focal.is_finite() {
            return Err(CameraError::InvalidFocal(self.focal));
        }
        Ok(())
    }

    /// Image extent implied by a centered principal point.
    pub fn image_size(&self) -> (f64, f64) {
        (2.0 * self.cx, 2.0 * self.cy)
    }

    pub fn project_point(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.focal * p.x / p.z + self.cx, self.focal * p.y / p.z + self.cy)
    }

    /// `u = f x / z + cx`, `v = f y / z + cy` for every joint.
    pub fn project(&self, pose: &Pose3D) -> Result<Pose2D, CameraError> {
        self.validate()?;
        if pose.frame() != Frame::Camera {
            return Err(CameraError::WrongFrame(pose.frame()));
        }
        for j in JointId::ALL {
            let z = pose.joint(j).z;
            if !(z > 0.0) {
                return Err(CameraError::BehindCamera { joint: j, depth: z });
            }
        }
        let joints: [Vector2<f64>; NUM_JOINTS] = std::array::from_fn(|i| self.project_point(&pose.joints()[i]));
        Ok(Pose2D::new(joints)?)
    }
}

/// Rotates the character about the vertical axis through its pelvis by
/// `angle_deg`, increasing its yaw by the same amount.
pub fn rotate_character(pose: &Pose3D, angle_deg: f64) -> Pose3D {
    let (s, c) = angle_deg.to_radians().sin_cos();
    let pivot = pose.joint(JointId::Pelvis);
    pose.map_joints(pose.frame(), |p| {
        let d = p - pivot;
        pivot + Vector3::new(d.x * c - d.z * s, d.y, d.x * s + d.z * c)
    })
}

/// Yaw of the shoulder line in `[0, 360)` degrees.
pub fn compute_yaw(pose: &Pose3D) -> Result<f64, CameraError> {
    let d = pose.joint(JointId::LShoulder) - pose.joint(JointId::RShoulder);
    let span = d.x.hypot(d.z);
    if span < MIN_SHOULDER_SPAN_MM {
        return Err(CameraError::DegenerateShoulders(span));
    }
    Ok(normalize_deg(d.z.atan2(d.x).to_degrees()))
}

/// One of eight orientation bins; class `k` is centered on `45 (k - 1)`
/// degrees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ViewpointClass(u8);

impl ViewpointClass {
    pub fn new(k: u8) -> Result<Self, CameraError> {
        if (1..=NUM_VIEWPOINTS as u8).contains(&k) {
            Ok(ViewpointClass(k))
        } else {
            Err(CameraError::InvalidViewpoint(k))
        }
    }

    pub fn all() -> impl Iterator<Item = ViewpointClass> {
        (1..=NUM_VIEWPOINTS as u8).map(ViewpointClass)
    }

    #[inline]
    pub fn k(self) -> u8 {
        self.0
    }

    pub fn center_deg(self) -> f64 {
        45.0 * f64::from(self.0 - 1)
    }
}

impl TryFrom<u8> for ViewpointClass {
    type Error = CameraError;

    fn try_from(k: u8) -> Result<Self, Self::Error> {
        ViewpointClass::new(k)
    }
}

impl From<ViewpointClass> for u8 {
    fn from(c: ViewpointClass) -> u8 {
        c.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum BinMode {
    /// Label only yaws within `half_width_deg` of a bin center.
    Strict { half_width_deg: f64 },
    /// Always label with the closest center; ties go to the smaller class.
    Nearest,
}

impl Default for BinMode {
    fn default() -> Self {
        BinMode::Strict {
            half_width_deg: STRICT_HALF_WIDTH_DEG,
        }
    }
}

/// Assigns a yaw (degrees) to a viewpoint class.
pub fn bin_yaw(yaw_deg: f64, mode: BinMode) -> Option<ViewpointClass> {
    if !yaw_deg.is_finite() {
        return None;
    }
    let mut best: Option<(ViewpointClass, f64)> = None;
    for c in ViewpointClass::all() {
        let d = wrap_deg(yaw_deg - c.center_deg()).abs();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((c, d));
        }
    }
    let (class, dist) = best?;
    match mode {
        BinMode::Nearest => Some(class),
        BinMode::Strict { half_width_deg } => (dist <= half_width_deg).then_some(class),
    }
}

/// `M (sin theta, cos theta)` for a viewpoint angle theta.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewpointEncoding(pub [f64; 2]);

impl ViewpointEncoding {
    pub fn from_angle(theta_deg: f64, scale: f64) -> Result<Self, CameraError> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(CameraError::InvalidScale(scale));
        }
        let (s, c) = theta_deg.to_radians().sin_cos();
        Ok(ViewpointEncoding([scale * s, scale * c]))
    }

    pub fn distance(&self, other: &ViewpointEncoding) -> f64 {
        (self.0[0] - other.0[0]).hypot(self.0[1] - other.0[1])
    }
}

pub fn encode_viewpoint(class: ViewpointClass, scale: f64) -> Result<ViewpointEncoding, CameraError> {
    ViewpointEncoding::from_angle(class.center_deg(), scale)
}

/// Describes how a [`FeatureVector`] is laid out; persisted with models so
/// inference can reject incompatible inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub joints: usize,
    /// Whether the two viewpoint values are appended.
    pub viewpoint: bool,
    pub viewpoint_scale: f64,
}

impl FeatureLayout {
    pub fn new(viewpoint: bool, viewpoint_scale: f64) -> Self {
        FeatureLayout {
            joints: NUM_JOINTS,
            viewpoint,
            viewpoint_scale,
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.joints + if self.viewpoint { 2 } else { 0 }
    }
}

/// Regression input: pelvis-centered 2D joints (px), then the optional
/// viewpoint encoding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Drops the viewpoint block, keeping the 2D joints.
    pub fn without_viewpoint(&self) -> FeatureVector {
        FeatureVector(self.0[..(2 * NUM_JOINTS).min(self.0.len())].to_vec())
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Centers the 2D joints on the pelvis, flattens them in joint order and
/// appends `viewpoint` when given.
pub fn build_feature(pose: &Pose2D, viewpoint: Option<&ViewpointEncoding>) -> Result<FeatureVector, CameraError> {
    if let Some(vis) = pose.visibility() {
        if let Some(j) = JointId::ALL.iter().find(|j| !vis[j.index()]) {
            return Err(CameraError::MissingJoint(*j));
        }
    }
    let pelvis = pose.joint(JointId::Pelvis);
    let mut out = Vec::with_capacity(2 * NUM_JOINTS + 2);
    for j in pose.joints() {
        let d = j - pelvis;
        out.push(d.x);
        out.push(d.y);
    }
    if let Some(v) = viewpoint {
        out.extend_from_slice(&v.0);
    }
    Ok(FeatureVector(out))
}
