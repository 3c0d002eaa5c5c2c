//! Procedural motion capture in the CMU BVH layout.
//!
//! Generates smooth, seeded joint-angle trajectories for a handful of
//! everyday activities on a 38-joint CMU-style hierarchy. Offsets are in
//! centimeters, so the matching unit scale is [`CM_TO_MM`]. The generator
//! exists so the synthesis pipeline, the examples and the benchmark can run
//! without a redistributable mocap corpus; any real BVH corpus that maps
//! onto [`JointMap::cmu`](crate::bvh::JointMap::cmu) can be used instead.

use std::collections::HashMap;
use std::f64::consts::TAU;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bvh::{BvhDocument, BvhJoint, Channel};

/// Millimeters per file unit of generated documents.
pub const CM_TO_MM: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activity {
    Walk,
    Wave,
    Reach,
    Gesture,
    Point,
    ArmsUp,
    Box,
    Sit,
    Lie,
}

impl Activity {
    pub const UPRIGHT: [Activity; 7] = [
        Activity::Walk,
        Activity::Wave,
        Activity::Reach,
        Activity::Gesture,
        Activity::Point,
        Activity::ArmsUp,
        Activity::Box,
    ];

    pub fn is_upright(self) -> bool {
        !matches!(self, Activity::Sit | Activity::Lie)
    }

    pub fn name(self) -> &'static str {
        match self {
            Activity::Walk => "walk",
            Activity::Wave => "wave",
            Activity::Reach => "reach",
            Activity::Gesture => "gesture",
            Activity::Point => "point",
            Activity::ArmsUp => "armsup",
            Activity::Box => "box",
            Activity::Sit => "sit",
            Activity::Lie => "lie",
        }
    }
}

/// One side's limb description: (name, parent, offset) with the offset of a
/// left-side joint; the right side mirrors x.
const LEFT_LEG: [(&str, &str, [f64; 3]); 5] = [
    ("LHipJoint", "Hips", [0.0, 0.0, 0.0]),
    ("LeftUpLeg", "LHipJoint", [10.0, -6.0, 1.0]),
    ("LeftLeg", "LeftUpLeg", [0.0, -43.0, 0.0]),
    ("LeftFoot", "LeftLeg", [0.0, -42.0, 0.0]),
    ("LeftToeBase", "LeftFoot", [0.0, -5.0, 12.0]),
];

const LEFT_ARM: [(&str, &str, [f64; 3]); 10] = [
    ("LeftShoulder", "Spine1", [3.0, 6.0, 0.0]),
    ("LeftArm", "LeftShoulder", [14.0, 0.0, 0.0]),
    ("LeftForeArm", "LeftArm", [28.0, 0.0, 0.0]),
    ("LeftHand", "LeftForeArm", [25.0, 0.0, 0.0]),
    ("LeftFingerBase", "LeftHand", [4.0, 0.0, 0.0]),
    ("LeftHandIndex1", "LeftFingerBase", [3.0, 0.0, 1.0]),
    ("LeftHandMiddle1", "LeftFingerBase", [3.5, 0.0, 0.0]),
    ("LeftHandRing1", "LeftFingerBase", [3.0, 0.0, -1.0]),
    ("LeftHandPinky1", "LeftFingerBase", [2.5, 0.0, -2.0]),
    ("LThumb", "LeftHand", [2.0, 0.0, 2.5]),
];

const AXIAL: [(&str, &str, [f64; 3]); 7] = [
    ("LowerBack", "Hips", [0.0, 3.0, -1.0]),
    ("Spine", "LowerBack", [0.0, 10.0, 0.0]),
    ("Spine1", "Spine", [0.0, 24.0, 0.0]),
    ("Neck", "Spine1", [0.0, 10.0, 0.0]),
    ("Neck1", "Neck", [0.0, 5.0, 0.0]),
    ("Head", "Neck1", [0.0, 6.0, 1.0]),
    ("Jaw", "Head", [0.0, 2.0, 5.0]),
];

fn mirror_name(name: &str) -> String {
    if let Some(rest) = name.strip_prefix("Left") {
        format!("Right{rest}")
    } else if let Some(rest) = name.strip_prefix('L') {
        format!("R{rest}")
    } else {
        name.to_string()
    }
}

/// Builds the 38-joint CMU-style hierarchy with every length multiplied by
/// `scale`. The root carries six channels, every other joint three rotation
/// channels in `Z Y X` order.
pub fn cmu_style_hierarchy(scale: f64) -> Vec<BvhJoint> {
    let rot = vec![Channel::Zrotation, Channel::Yrotation, Channel::Xrotation];
    let mut defs: Vec<(String, String, [f64; 3])> = Vec::new();
    let push_side = |defs: &mut Vec<(String, String, [f64; 3])>, limb: &[(&str, &str, [f64; 3])]| {
        for &(n, p, o) in limb {
            defs.push((n.to_string(), p.to_string(), o));
        }
        for &(n, p, o) in limb {
            defs.push((mirror_name(n), mirror_name(p), [-o[0], o[1], o[2]]));
        }
    };
    push_side(&mut defs, &LEFT_LEG);
    for &(n, p, o) in &AXIAL {
        defs.push((n.to_string(), p.to_string(), o));
    }
    push_side(&mut defs, &LEFT_ARM);

    // Depth-first ordering from the root.
    let mut children: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, (_, p, _)) in defs.iter().enumerate() {
        children.entry(p.as_str()).or_default().push(i);
    }
    let mut joints = vec![BvhJoint::new(
        "Hips",
        None,
        Vector3::zeros(),
        vec![
            Channel::Xposition,
            Channel::Yposition,
            Channel::Zposition,
            Channel::Zrotation,
            Channel::Yrotation,
            Channel::Xrotation,
        ],
        None,
    )];
    let mut stack: Vec<(usize, usize)> = children["Hips"].iter().rev().map(|&c| (c, 0)).collect();
    while let Some((def, parent)) = stack.pop() {
        let (name, _, o) = &defs[def];
        let index = joints.len();
        let kids = children.get(name.as_str()).cloned().unwrap_or_default();
        let end_site = kids.is_empty().then(|| end_site_for(name) * scale);
        joints.push(BvhJoint::new(
            name.clone(),
            Some(parent),
            Vector3::from(*o) * scale,
            rot.clone(),
            end_site,
        ));
        stack.extend(kids.iter().rev().map(|&c| (c, index)));
    }
    joints
}

fn end_site_for(name: &str) -> Vector3<f64> {
    let side = if name.starts_with('R') { -1.0 } else { 1.0 };
    match name {
        "Head" | "Jaw" => Vector3::new(0.0, 3.0, 2.0),
        n if n.contains("Toe") => Vector3::new(0.0, 0.0, 4.0),
        n if n.contains("Thumb") => Vector3::new(side * 1.5, 0.0, 2.0),
        _ => Vector3::new(side * 2.5, 0.0, 0.0),
    }
}

/// Smooth scalar signal in `[-1, 1]`: a normalized sum of three sinusoids
/// with random frequency and phase.
#[derive(Clone, Debug)]
struct Smooth {
    parts: [(f64, f64, f64); 3],
}

impl Smooth {
    fn new(rng: &mut impl Rng, max_hz: f64) -> Self {
        let mut parts = [(0.0, 0.0, 0.0); 3];
        let mut total = 0.0;
        for p in parts.iter_mut() {
            let amp = rng.gen_range(0.2..1.0);
            total += amp;
            *p = (amp, rng.gen_range(0.05..max_hz), rng.gen_range(0.0..TAU));
        }
        for p in parts.iter_mut() {
            p.0 /= total;
        }
        Smooth { parts }
    }

    fn at(&self, t: f64) -> f64 {
        self.parts.iter().map(|&(a, f, ph)| a * (TAU * f * t + ph).sin()).sum()
    }

    /// Maps the signal onto `[lo, hi]`.
    fn range(&self, t: f64, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * 0.5 * (self.at(t) + 1.0)
    }
}

/// Per-frame channel values by joint name, `(z, y, x)` rotation order.
#[derive(Default)]
struct Angles {
    root_pos: [f64; 3],
    rot: HashMap<&'static str, [f64; 3]>,
}

impl Angles {
    fn set(&mut self, joint: &'static str, z: f64, y: f64, x: f64) {
        self.rot.insert(joint, [z, y, x]);
    }

    /// Arm pose from anatomical angles: abduction and forward flexion of the
    /// upper arm, twist about the upper arm, and elbow flexion.
    fn arm(&mut self, left: bool, abduction: f64, flexion: f64, twist: f64, elbow: f64) {
        let (arm, fore, s) = if left {
            ("LeftArm", "LeftForeArm", 1.0)
        } else {
            ("RightArm", "RightForeArm", -1.0)
        };
        self.set(arm, s * (abduction - 90.0), -s * flexion, twist);
        self.set(fore, 0.0, -s * elbow, 0.0);
    }

    fn leg(&mut self, left: bool, flexion: f64, abduction: f64, knee: f64) {
        let (up, low, foot, s) = if left {
            ("LeftUpLeg", "LeftLeg", "LeftFoot", 1.0)
        } else {
            ("RightUpLeg", "RightLeg", "RightFoot", -1.0)
        };
        self.set(up, s * abduction, 0.0, -flexion);
        self.set(low, 0.0, 0.0, knee);
        self.set(foot, 0.0, 0.0, -0.3 * knee + 0.5 * flexion);
    }

    fn row(&self, joints: &[BvhJoint]) -> Vec<f64> {
        let mut row = Vec::with_capacity(3 + 3 * joints.len());
        row.extend_from_slice(&self.root_pos);
        for j in joints {
            let v = self.rot.get(j.name.as_str()).copied().unwrap_or([0.0; 3]);
            row.extend_from_slice(&v);
        }
        row
    }
}

/// Random smooth channels shared by every activity.
struct Signals {
    s: Vec<Smooth>,
}

impl Signals {
    fn new(rng: &mut impl Rng, n: usize, max_hz: f64) -> Self {
        Signals {
            s: (0..n).map(|_| Smooth::new(rng, max_hz)).collect(),
        }
    }

    fn r(&self, i: usize, t: f64, lo: f64, hi: f64) -> f64 {
        self.s[i].range(t, lo, hi)
    }
}

/// Settings for one generated sequence.
#[derive(Clone, Debug)]
pub struct SequenceSpec {
    pub activity: Activity,
    pub frames: usize,
    /// Seconds between emitted frames.
    pub frame_time: f64,
    /// Uniform bone-length scale of the performer.
    pub body_scale: f64,
    pub seed: u64,
}

/// Generates one sequence as a BVH document.
pub fn generate_sequence(spec: &SequenceSpec) -> BvhDocument {
    let joints = cmu_style_hierarchy(spec.body_scale);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sig = Signals::new(&mut rng, 24, 0.6);
    let heading = rng.gen_range(-15.0..15.0);
    let speed = rng.gen_range(0.8..1.3);
    let stride = rng.gen_range(18.0..32.0);
    let dominant_left = rng.gen_bool(0.5);
    let pelvis_h = 91.0 * spec.body_scale;
    let frames: Vec<Vec<f64>> = (0..spec.frames)
        .map(|f| {
            let t = f as f64 * spec.frame_time;
            let a = activity_angles(spec.activity, t, &sig, heading, speed, stride, dominant_left, pelvis_h);
            a.row(&joints)
        })
        .collect();
    BvhDocument::new(joints, spec.frame_time, frames).expect("generated document is consistent")
}

#[allow(clippy::too_many_arguments)]
fn activity_angles(
    activity: Activity,
    t: f64,
    sig: &Signals,
    heading: f64,
    speed: f64,
    stride: f64,
    dominant_left: bool,
    pelvis_h: f64,
) -> Angles {
    let mut a = Angles::default();
    let h = heading + sig.r(0, t, -10.0, 10.0);
    a.root_pos = [sig.r(1, t, -5.0, 5.0), pelvis_h, sig.r(2, t, -5.0, 5.0)];
    a.set("Hips", sig.r(3, t, -3.0, 3.0), h, sig.r(4, t, -3.0, 5.0));
    a.set(
        "Spine",
        sig.r(5, t, -5.0, 5.0),
        sig.r(6, t, -10.0, 10.0),
        sig.r(7, t, -3.0, 10.0),
    );
    a.set("Neck", 0.0, sig.r(8, t, -25.0, 25.0), sig.r(9, t, -10.0, 15.0));
    // relaxed standing legs by default
    let sway = sig.r(10, t, -1.0, 1.0);
    a.leg(
        true,
        3.0 + 3.0 * sway,
        sig.r(11, t, 0.0, 6.0),
        4.0 + 4.0 * sway.max(0.0),
    );
    a.leg(
        false,
        3.0 - 3.0 * sway,
        sig.r(12, t, 0.0, 6.0),
        4.0 + 4.0 * (-sway).max(0.0),
    );
    let relaxed = |a: &mut Angles, left: bool, k: usize| {
        a.arm(
            left,
            sig.r(k, t, 5.0, 20.0),
            sig.r(k + 1, t, -15.0, 25.0),
            sig.r(k + 2, t, -20.0, 20.0),
            sig.r(k + 3, t, 5.0, 40.0),
        );
    };
    match activity {
        Activity::Walk => {
            let phase = TAU * speed * t;
            let (s, c) = phase.sin_cos();
            a.root_pos[1] = pelvis_h - 2.0 + 2.0 * (2.0 * phase).cos();
            a.leg(true, stride * s, 3.0, 10.0 + 30.0 * (c.max(0.0)) + 10.0 * s.max(0.0));
            a.leg(
                false,
                -stride * s,
                3.0,
                10.0 + 30.0 * ((-c).max(0.0)) + 10.0 * (-s).max(0.0),
            );
            let swing = stride * sig.r(13, t, 0.6, 1.2);
            a.arm(true, 10.0, -swing * s, 0.0, 20.0 + 15.0 * (-s).max(0.0));
            a.arm(false, 10.0, swing * s, 0.0, 20.0 + 15.0 * s.max(0.0));
        }
        Activity::Wave => {
            let w = (TAU * sig.r(14, t, 1.0, 2.0) * t).sin();
            let left = dominant_left;
            a.arm(
                left,
                sig.r(15, t, 40.0, 110.0),
                sig.r(16, t, -10.0, 40.0),
                -60.0 + 20.0 * w,
                sig.r(17, t, 50.0, 100.0) + 25.0 * w,
            );
            relaxed(&mut a, !left, 18);
        }
        Activity::Reach => {
            for (left, k) in [(true, 13), (false, 17)] {
                a.arm(
                    left,
                    sig.r(k, t, 0.0, 80.0),
                    sig.r(k + 1, t, 0.0, 110.0),
                    sig.r(k + 2, t, -40.0, 40.0),
                    sig.r(k + 3, t, 0.0, 60.0),
                );
            }
            a.set("Spine", 0.0, sig.r(6, t, -20.0, 20.0), sig.r(7, t, 0.0, 25.0));
        }
        Activity::Gesture => {
            for (left, k) in [(true, 13), (false, 17)] {
                a.arm(
                    left,
                    sig.r(k, t, 5.0, 45.0),
                    sig.r(k + 1, t, 0.0, 60.0),
                    sig.r(k + 2, t, -50.0, 20.0),
                    sig.r(k + 3, t, 50.0, 120.0),
                );
            }
        }
        Activity::Point => {
            let left = dominant_left;
            a.arm(
                left,
                sig.r(13, t, 10.0, 90.0),
                sig.r(14, t, 30.0, 100.0),
                sig.r(15, t, -20.0, 20.0),
                sig.r(16, t, 0.0, 20.0),
            );
            relaxed(&mut a, !left, 18);
            a.set("Neck", 0.0, sig.r(8, t, -40.0, 40.0), sig.r(9, t, -5.0, 10.0));
        }
        Activity::ArmsUp => {
            let lift = sig.r(13, t, 10.0, 170.0);
            a.arm(
                true,
                lift,
                sig.r(14, t, -10.0, 30.0),
                sig.r(15, t, -30.0, 30.0),
                sig.r(16, t, 0.0, 50.0),
            );
            a.arm(
                false,
                lift + sig.r(17, t, -25.0, 25.0),
                sig.r(18, t, -10.0, 30.0),
                sig.r(19, t, -30.0, 30.0),
                sig.r(20, t, 0.0, 50.0),
            );
        }
        Activity::Box => {
            let p = (TAU * speed * 1.5 * t).sin();
            a.arm(true, 25.0, 45.0 + 45.0 * p.max(0.0), -70.0, 120.0 - 110.0 * p.max(0.0));
            a.arm(
                false,
                25.0,
                45.0 + 45.0 * (-p).max(0.0),
                -70.0,
                120.0 - 110.0 * (-p).max(0.0),
            );
            a.leg(true, 15.0, 8.0, 25.0);
            a.leg(false, -5.0, 8.0, 20.0);
            a.root_pos[1] = pelvis_h - 4.0;
            a.set("Spine", 0.0, 20.0 * p, 10.0);
        }
        Activity::Sit => {
            a.root_pos[1] = 0.5 * pelvis_h;
            a.set("Hips", 0.0, h, sig.r(4, t, -5.0, 0.0));
            let hip = sig.r(13, t, 80.0, 95.0);
            let knee = sig.r(14, t, 80.0, 100.0);
            a.leg(true, hip, sig.r(11, t, 5.0, 15.0), knee);
            a.leg(false, hip, sig.r(12, t, 5.0, 15.0), knee);
            a.set("Spine", 0.0, sig.r(6, t, -10.0, 10.0), sig.r(7, t, 5.0, 20.0));
            a.arm(true, 10.0, sig.r(15, t, 30.0, 55.0), 0.0, sig.r(16, t, 40.0, 80.0));
            a.arm(false, 10.0, sig.r(17, t, 30.0, 55.0), 0.0, sig.r(18, t, 40.0, 80.0));
        }
        Activity::Lie => {
            a.root_pos[1] = 12.0 * pelvis_h / 91.0;
            a.set("Hips", sig.r(3, t, -10.0, 10.0), h, -90.0);
            let knee = sig.r(13, t, 0.0, 40.0);
            a.leg(true, 0.5 * knee, sig.r(11, t, 5.0, 20.0), knee);
            a.leg(
                false,
                sig.r(14, t, 0.0, 20.0),
                sig.r(12, t, 5.0, 20.0),
                sig.r(15, t, 0.0, 30.0),
            );
            a.arm(
                true,
                sig.r(16, t, 10.0, 60.0),
                sig.r(17, t, -10.0, 20.0),
                0.0,
                sig.r(18, t, 0.0, 40.0),
            );
            a.arm(
                false,
                sig.r(19, t, 10.0, 60.0),
                sig.r(20, t, -10.0, 20.0),
                0.0,
                sig.r(21, t, 0.0, 40.0),
            );
        }
    }
    a
}

/// Composition of a generated corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    /// Sequences generated for every upright activity.
    pub upright_per_activity: usize,
    /// Sequences generated for each of the non-upright activities.
    pub non_upright_per_activity: usize,
    pub frames_per_sequence: usize,
    pub frame_time: f64,
    /// Range of performer bone-length scales.
    pub body_scale: (f64, f64),
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            upright_per_activity: 3,
            non_upright_per_activity: 2,
            frames_per_sequence: 30,
            frame_time: 0.1,
            body_scale: (0.92, 1.08),
            seed: 7,
        }
    }
}

/// A generated sequence and its file stem.
#[derive(Clone, Debug)]
pub struct NamedSequence {
    pub name: String,
    pub activity: Activity,
    pub document: BvhDocument,
}

/// Generates every sequence described by `spec`, named `<activity>_<nn>`.
pub fn generate_corpus(spec: &CorpusSpec) -> Vec<NamedSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::new();
    let plan = Activity::UPRIGHT
        .iter()
        .map(|&a| (a, spec.upright_per_activity))
        .chain([Activity::Sit, Activity::Lie].map(|a| (a, spec.non_upright_per_activity)));
    for (activity, count) in plan {
        for i in 0..count {
            let seq = SequenceSpec {
                activity,
                frames: spec.frames_per_sequence,
                frame_time: spec.frame_time,
                body_scale: rng.gen_range(spec.body_scale.0..=spec.body_scale.1),
                seed: rng.gen(),
            };
            out.push(NamedSequence {
                name: format!("{}_{:02}", activity.name(), i),
                activity,
                document: generate_sequence(&seq),
            });
        }
    }
    out
}
