//! The 17-joint skeleton: joint identifiers, 2D/3D poses, pelvis-relative
//! normalization and the three-way joint-set partition used by the
//! per-set regressors.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of joints in the canonical skeleton.
pub const NUM_JOINTS: usize = 17;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkeletonError {
    #[error("non-finite coordinate at joint {0}")]
    NonFinite(JointId),
    #[error("pose is not pelvis-relative (frame is {0})")]
    NotPelvisRelative(Frame),
    #[error("pose is already pelvis-relative")]
    AlreadyRelative,
    #[error("pelvis-relative pose has non-zero pelvis")]
    PelvisNotAtOrigin,
    #[error("expected a vector of dimension {expected}, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("unknown joint name `{0}`")]
    UnknownJoint(String),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
}

/// Joints in Human3.6M order. The discriminant is the stable joint index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum JointId {
    Pelvis = 0,
    RHip,
    RKnee,
    RAnkle,
    LHip,
    LKnee,
    LAnkle,
    Spine,
    Thorax,
    Neck,
    Head,
    LShoulder,
    LElbow,
    LWrist,
    RShoulder,
    RElbow,
    RWrist,
}

impl JointId {
    pub const ALL: [JointId; NUM_JOINTS] = [
        JointId::Pelvis,
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
        JointId::LShoulder,
        JointId::LElbow,
        JointId::LWrist,
        JointId::RShoulder,
        JointId::RElbow,
        JointId::RWrist,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<JointId> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            JointId::Pelvis => "Pelvis",
            JointId::RHip => "RHip",
            JointId::RKnee => "RKnee",
            JointId::RAnkle => "RAnkle",
            JointId::LHip => "LHip",
            JointId::LKnee => "LKnee",
            JointId::LAnkle => "LAnkle",
            JointId::Spine => "Spine",
            JointId::Thorax => "Thorax",
            JointId::Neck => "Neck",
            JointId::Head => "Head",
            JointId::LShoulder => "LShoulder",
            JointId::LElbow => "LElbow",
            JointId::LWrist => "LWrist",
            JointId::RShoulder => "RShoulder",
            JointId::RElbow => "RElbow",
            JointId::RWrist => "RWrist",
        }
    }

    /// Parent in the kinematic tree; `None` for the pelvis.
    pub fn parent(self) -> Option<JointId> {
        use JointId::*;
        Some(match self {
            Pelvis => return None,
            RHip | LHip | Spine => Pelvis,
            RKnee => RHip,
            RAnkle => RKnee,
            LKnee => LHip,
            LAnkle => LKnee,
            Thorax => Spine,
            Neck | LShoulder | RShoulder => Thorax,
            Head => Neck,
            LElbow => LShoulder,
            LWrist => LElbow,
            RElbow => RShoulder,
            RWrist => RElbow,
        })
    }

    /// All (parent, child) bones of the skeleton.
    pub fn bones() -> impl Iterator<Item = (JointId, JointId)> {
        Self::ALL.iter().filter_map(|&j| j.parent().map(|p| (p, j)))
    }
}

impl fmt::Display for JointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for JointId {
    type Err = SkeletonError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        JointId::ALL
            .iter()
            .copied()
            .find(|j| j.name() == s)
            .ok_or_else(|| SkeletonError::UnknownJoint(s.to_string()))
    }
}

/// Coordinate frame a [`Pose3D`] is expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Frame {
    World,
    Camera,
    PelvisRelative,
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Frame::World => "world",
            Frame::Camera => "camera",
            Frame::PelvisRelative => "pelvis-relative",
        })
    }
}

/// 17 joint positions in millimeters.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose3D {
    joints: [Vector3<f64>; NUM_JOINTS],
    frame: Frame,
}

impl Pose3D {
    pub fn new(joints: [Vector3<f64>; NUM_JOINTS], frame: Frame) -> Result<Self, SkeletonError> {
        for j in JointId::ALL {
            if !joints[j.index()].iter().all(|c| c.is_finite()) {
                return Err(SkeletonError::NonFinite(j));
            }
        }
        if frame == Frame::PelvisRelative && joints[0] != Vector3::zeros() {
            return Err(SkeletonError::PelvisNotAtOrigin);
        }
        Ok(Pose3D { joints, frame })
    }

    pub fn from_arrays(coords: &[[f64; 3]; NUM_JOINTS], frame: Frame) -> Result<Self, SkeletonError> {
        let joints = std::array::from_fn(|i| Vector3::from(coords[i]));
        Self::new(joints, frame)
    }

    pub fn to_arrays(&self) -> [[f64; 3]; NUM_JOINTS] {
        std::array::from_fn(|i| self.joints[i].into())
    }

    #[inline]
    pub fn frame(&self) -> Frame {
        self.frame
    }

    #[inline]
    pub fn joint(&self, j: JointId) -> Vector3<f64> {
        self.joints[j.index()]
    }

    #[inline]
    pub fn joints(&self) -> &[Vector3<f64>; NUM_JOINTS] {
        &self.joints
    }

    /// Applies `f` to every joint, keeping the frame tag. Used for rigid
    /// motions that the caller knows keep the frame valid.
    pub(crate) fn map_joints(&self, frame: Frame, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> Pose3D {
        Pose3D {
            joints: std::array::from_fn(|i| f(&self.joints[i])),
            frame,
        }
    }

    /// Subtracts the pelvis position from every joint.
    pub fn to_pelvis_relative(&self) -> Result<Pose3D, SkeletonError> {
        if self.frame == Frame::PelvisRelative {
            return Err(SkeletonError::AlreadyRelative);
        }
        let pelvis = self.joints[0];
        let mut joints = self.joints;
        for j in joints.iter_mut() {
            *j -= pelvis;
        }
        // Exact zero even when pelvis coordinates are huge.
        joints[0] = Vector3::zeros();
        Pose3D::new(joints, Frame::PelvisRelative)
    }

    /// Like [`to_pelvis_relative`](Self::to_pelvis_relative) but a no-op on poses that
    /// are already pelvis-relative.
    pub fn centered(&self) -> Result<Pose3D, SkeletonError> {
        match self.frame {
            Frame::PelvisRelative => Ok(self.clone()),
            _ => self.to_pelvis_relative(),
        }
    }

    /// Joint-major `(x, y, z)` flattening; 51 values.
    pub fn flatten(&self) -> PoseVector {
        PoseVector(self.joints.iter().flat_map(|v| v.iter().copied()).collect())
    }

    pub fn unflatten(v: &PoseVector, frame: Frame) -> Result<Pose3D, SkeletonError> {
        if v.len() != 3 * NUM_JOINTS {
            return Err(SkeletonError::Dimension {
                expected: 3 * NUM_JOINTS,
                found: v.len(),
            });
        }
        let s = v.as_slice();
        let joints = std::array::from_fn(|i| Vector3::new(s[3 * i], s[3 * i + 1], s[3 * i + 2]));
        Pose3D::new(joints, frame)
    }

    /// Flat coordinates of every joint except the pelvis (48 values).
    pub fn flatten_non_pelvis(&self) -> PoseVector {
        PoseVector(self.joints[1..].iter().flat_map(|v| v.iter().copied()).collect())
    }

    /// Inverse of [`flatten_non_pelvis`](Self::flatten_non_pelvis); yields a
    /// pelvis-relative pose.
    pub fn unflatten_non_pelvis(v: &PoseVector) -> Result<Pose3D, SkeletonError> {
        let expected = 3 * (NUM_JOINTS - 1);
        if v.len() != expected {
            return Err(SkeletonError::Dimension {
                expected,
                found: v.len(),
            });
        }
        let s = v.as_slice();
        let joints = std::array::from_fn(|i| {
            if i == 0 {
                Vector3::zeros()
            } else {
                let k = 3 * (i - 1);
                Vector3::new(s[k], s[k + 1], s[k + 2])
            }
        });
        Pose3D::new(joints, Frame::PelvisRelative)
    }

    /// Euclidean lengths of every bone, in [`JointId::bones`] order.
    pub fn bone_lengths(&self) -> Vec<f64> {
        JointId::bones()
            .map(|(p, c)| (self.joint(c) - self.joint(p)).norm())
            .collect()
    }
}

/// 17 joint positions in pixels, with optional per-joint visibility.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose2D {
    joints: [Vector2<f64>; NUM_JOINTS],
    visible: Option<[bool; NUM_JOINTS]>,
}

impl Pose2D {
    pub fn new(joints: [Vector2<f64>; NUM_JOINTS]) -> Result<Self, SkeletonError> {
        for j in JointId::ALL {
            if !joints[j.index()].iter().all(|c| c.is_finite()) {
                return Err(SkeletonError::NonFinite(j));
            }
        }
        Ok(Pose2D { joints, visible: None })
    }

    pub fn from_arrays(coords: &[[f64; 2]; NUM_JOINTS]) -> Result<Self, SkeletonError> {
        Self::new(std::array::from_fn(|i| Vector2::from(coords[i])))
    }

    pub fn to_arrays(&self) -> [[f64; 2]; NUM_JOINTS] {
        std::array::from_fn(|i| self.joints[i].into())
    }

    pub fn with_visibility(mut self, visible: [bool; NUM_JOINTS]) -> Self {
        self.visible = Some(visible);
        self
    }

    pub fn visibility(&self) -> Option<&[bool; NUM_JOINTS]> {
        self.visible.as_ref()
    }

    #[inline]
    pub fn joint(&self, j: JointId) -> Vector2<f64> {
        self.joints[j.index()]
    }

    #[inline]
    pub fn joints(&self) -> &[Vector2<f64>; NUM_JOINTS] {
        &self.joints
    }

    /// Returns a copy with every joint displaced by `offset(j)`.
    pub fn perturbed(&self, mut offset: impl FnMut(JointId) -> Vector2<f64>) -> Pose2D {
        Pose2D {
            joints: std::array::from_fn(|i| self.joints[i] + offset(JointId::ALL[i])),
            visible: self.visible,
        }
    }
}

/// Flat coordinate vector fed to / produced by the regressors.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PoseVector(pub Vec<f64>);

impl PoseVector {
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

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for PoseVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for PoseVector {
    fn from(v: Vec<f64>) -> Self {
        PoseVector(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointSetId {
    RightHand,
    LeftHand,
    TorsoLegs,
}

impl JointSetId {
    pub const ALL: [JointSetId; 3] = [JointSetId::RightHand, JointSetId::LeftHand, JointSetId::TorsoLegs];

    pub fn name(self) -> &'static str {
        match self {
            JointSetId::RightHand => "right_hand",
            JointSetId::LeftHand => "left_hand",
            JointSetId::TorsoLegs => "torso_legs",
        }
    }

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for JointSetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Assignment of the 16 non-pelvis joints to the three joint sets.
///
/// Members are always kept in canonical [`JointId`] order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PartitionRepr", into = "PartitionRepr")]
pub struct Partition {
    sets: [Vec<JointId>; 3],
}

#[derive(Serialize, Deserialize)]
struct PartitionRepr {
    right_hand: Vec<JointId>,
    left_hand: Vec<JointId>,
    torso_legs: Vec<JointId>,
}

impl TryFrom<PartitionRepr> for Partition {
    type Error = SkeletonError;

    fn try_from(r: PartitionRepr) -> Result<Self, Self::Error> {
        Partition::new(r.right_hand, r.left_hand, r.torso_legs)
    }
}

impl From<Partition> for PartitionRepr {
    fn from(p: Partition) -> Self {
        let [right_hand, left_hand, torso_legs] = p.sets;
        PartitionRepr {
            right_hand,
            left_hand,
            torso_legs,
        }
    }
}

impl Default for Partition {
    fn default() -> Self {
        use JointId::*;
        Partition::new(
            vec![RShoulder, RElbow, RWrist],
            vec![LShoulder, LElbow, LWrist],
            vec![RHip, RKnee, RAnkle, LHip, LKnee, LAnkle, Spine, Thorax, Neck, Head],
        )
        .expect("default partition is valid")
    }
}

impl Partition {
    /// Validates that the sets are non-empty, pairwise disjoint and cover every
    /// non-pelvis joint exactly once.
    pub fn new(
        right_hand: Vec<JointId>,
        left_hand: Vec<JointId>,
        torso_legs: Vec<JointId>,
    ) -> Result<Self, SkeletonError> {
        let mut sets = [right_hand, left_hand, torso_legs];
        let mut seen = [false; NUM_JOINTS];
        for (set, id) in sets.iter_mut().zip(JointSetId::ALL) {
            if set.is_empty() {
                return Err(SkeletonError::InvalidPartition(format!("joint set {id} is empty")));
            }
            set.sort();
            for &j in set.iter() {
                if j == JointId::Pelvis {
                    return Err(SkeletonError::InvalidPartition(
                        "the pelvis is not a regression target".into(),
                    ));
                }
                if std::mem::replace(&mut seen[j.index()], true) {
                    return Err(SkeletonError::InvalidPartition(format!("joint {j} assigned twice")));
                }
            }
        }
        if let Some(missing) = JointId::ALL[1..].iter().find(|j| !seen[j.index()]) {
            return Err(SkeletonError::InvalidPartition(format!(
                "joint {missing} is unassigned"
            )));
        }
        Ok(Partition { sets })
    }

    pub fn joints(&self, set: JointSetId) -> &[JointId] {
        &self.sets[set.index()]
    }

    /// Output dimension of a joint set's regressor.
    pub fn dim(&self, set: JointSetId) -> usize {
        3 * self.sets[set.index()].len()
    }

    /// Coordinates of the joints in `set`, in canonical order.
    pub fn select(&self, pose: &Pose3D, set: JointSetId) -> Result<PoseVector, SkeletonError> {
        if pose.frame() != Frame::PelvisRelative {
            return Err(SkeletonError::NotPelvisRelative(pose.frame()));
        }
        Ok(PoseVector(
            self.joints(set)
                .iter()
                .flat_map(|&j| pose.joint(j).iter().copied().collect::<Vec<_>>())
                .collect(),
        ))
    }

    /// Reassembles a pelvis-relative pose from the three per-set vectors.
    pub fn merge(
        &self,
        right_hand: &PoseVector,
        left_hand: &PoseVector,
        torso_legs: &PoseVector,
    ) -> Result<Pose3D, SkeletonError> {
        let mut joints = [Vector3::zeros(); NUM_JOINTS];
        for (v, id) in [right_hand, left_hand, torso_legs].into_iter().zip(JointSetId::ALL) {
            if v.len() != self.dim(id) {
                return Err(SkeletonError::Dimension {
                    expected: self.dim(id),
                    found: v.len(),
                });
            }
            for (k, &j) in self.joints(id).iter().enumerate() {
                let s = &v.as_slice()[3 * k..3 * k + 3];
                joints[j.index()] = Vector3::new(s[0], s[1], s[2]);
            }
        }
        Pose3D::new(joints, Frame::PelvisRelative)
    }
}

/// Free-function form of [`Pose3D::to_pelvis_relative`].
pub fn to_pelvis_relative(p: &Pose3D) -> Result<Pose3D, SkeletonError> {
    p.to_pelvis_relative()
}

/// [`Partition::select`] against the default partition.
pub fn select_joint_set(p: &Pose3D, s: JointSetId) -> Result<PoseVector, SkeletonError> {
    Partition::default().select(p, s)
}

/// [`Partition::merge`] against the default partition.
pub fn merge_joint_sets(rh: &PoseVector, lh: &PoseVector, tl: &PoseVector) -> Result<Pose3D, SkeletonError> {
    Partition::default().merge(rh, lh, tl)
}
