//! Biovision Hierarchy (BVH) motion files: parsing, serialization, forward
//! kinematics and mapping onto the 17-joint skeleton.
//!
//! Rotations are intrinsic and composed in the order the channels appear in
//! the file, with right-handed axes and column vectors, so a joint with
//! channels `Zrotation Xrotation Yrotation` has the local rotation
//! `Rz * Rx * Ry`. Angles are in degrees.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angle::wrap_deg;
use crate::skeleton::{Frame, JointId, Pose3D, SkeletonError, NUM_JOINTS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BvhError {
    #[error("line {line}: malformed hierarchy: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: unknown channel `{name}`")]
    UnknownChannel { line: usize, name: String },
    #[error("line {line}: missing MOTION section")]
    MissingMotion { line: usize },
    #[error("line {line}: invalid number `{token}`")]
    InvalidNumber { line: usize, token: String },
    #[error("line {line}: frame {frame} has {found} values, expected {expected}")]
    FrameValues {
        line: usize,
        frame: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: header declares {expected} frames but {found} were found")]
    FrameCount { line: usize, expected: usize, found: usize },
    #[error("line {line}: frame time must be positive, got {value}")]
    FrameTime { line: usize, value: f64 },
    #[error("frame {frame} out of range, document has {count} frames")]
    FrameOutOfRange { frame: usize, count: usize },
    #[error("joint map refers to `{name}` ({joint}), which is not in the hierarchy")]
    MissingJoint { joint: JointId, name: String },
    #[error("joint map has no entry for {0}")]
    UnmappedJoint(JointId),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Channel {
    Xposition,
    Yposition,
    Zposition,
    Xrotation,
    Yrotation,
    Zrotation,
}

impl Channel {
    pub fn is_rotation(self) -> bool {
        matches!(self, Channel::Xrotation | Channel::Yrotation | Channel::Zrotation)
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Xposition => "Xposition",
            Channel::Yposition => "Yposition",
            Channel::Zposition => "Zposition",
            Channel::Xrotation => "Xrotation",
            Channel::Yrotation => "Yrotation",
            Channel::Zrotation => "Zrotation",
        }
    }

    fn axis(self) -> usize {
        match self {
            Channel::Xposition | Channel::Xrotation => 0,
            Channel::Yposition | Channel::Yrotation => 1,
            Channel::Zposition | Channel::Zrotation => 2,
        }
    }
}

impl FromStr for Channel {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Ok(match s {
            "Xposition" => Channel::Xposition,
            "Yposition" => Channel::Yposition,
            "Zposition" => Channel::Zposition,
            "Xrotation" => Channel::Xrotation,
            "Yrotation" => Channel::Yrotation,
            "Zrotation" => Channel::Zrotation,
            _ => return Err(()),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BvhJoint {
    pub name: String,
    /// Index of the parent joint; parents always precede their children.
    pub parent: Option<usize>,
    pub offset: Vector3<f64>,
    pub channels: Vec<Channel>,
    pub end_site: Option<Vector3<f64>>,
    /// Index of this joint's first channel within a frame.
    first_channel: usize,
}

impl BvhJoint {
    pub fn new(
        name: impl Into<String>,
        parent: Option<usize>,
        offset: Vector3<f64>,
        channels: Vec<Channel>,
        end_site: Option<Vector3<f64>>,
    ) -> Self {
        BvhJoint {
            name: name.into(),
            parent,
            offset,
            channels,
            end_site,
            first_channel: 0,
        }
    }

    pub fn channel_range(&self) -> std::ops::Range<usize> {
        self.first_channel..self.first_channel + self.channels.len()
    }
}

/// A parsed BVH file. Joints are stored in file (depth-first) order.
#[derive(Clone, Debug, PartialEq)]
pub struct BvhDocument {
    joints: Vec<BvhJoint>,
    frame_time: f64,
    num_channels: usize,
    /// Row-major `frames x num_channels`.
    values: Vec<f64>,
}

impl BvhDocument {
    /// Assembles a document from joints in depth-first order plus frame
    /// data. Channel offsets are recomputed from the joint order.
    pub fn new(mut joints: Vec<BvhJoint>, frame_time: f64, frames: Vec<Vec<f64>>) -> Result<Self, BvhError> {
        let mut next = 0;
        for (i, j) in joints.iter_mut().enumerate() {
            match j.parent {
                None if i != 0 => {
                    return Err(malformed(0, format!("joint `{}` is a second root", j.name)));
                }
                Some(p) if p >= i => {
                    return Err(malformed(0, format!("joint `{}` precedes its parent", j.name)));
                }
                _ => {}
            }
            j.first_channel = next;
            next += j.channels.len();
        }
        if joints.is_empty() {
            return Err(malformed(0, "no joints".into()));
        }
        if !(frame_time > 0.0) {
            return Err(BvhError::FrameTime {
                line: 0,
                value: frame_time,
            });
        }
        let mut values = Vec::with_capacity(frames.len() * next);
        for (f, row) in frames.into_iter().enumerate() {
            if row.len() != next {
                return Err(BvhError::FrameValues {
                    line: 0,
                    frame: f,
                    expected: next,
                    found: row.len(),
                });
            }
            values.extend(row);
        }
        Ok(BvhDocument {
            joints,
            frame_time,
            num_channels: next,
            values,
        })
    }

    pub fn joints(&self) -> &[BvhJoint] {
        &self.joints
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn frame_time(&self) -> f64 {
        self.frame_time
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn num_rotation_channels(&self) -> usize {
        self.joints
            .iter()
            .flat_map(|j| j.channels.iter())
            .filter(|c| c.is_rotation())
            .count()
    }

    pub fn num_frames(&self) -> usize {
        self.values.len().checked_div(self.num_channels).unwrap_or(0)
    }

    pub fn frame(&self, frame: usize) -> Result<&[f64], BvhError> {
        let count = self.num_frames();
        if frame >= count {
            return Err(BvhError::FrameOutOfRange { frame, count });
        }
        Ok(&self.values[frame * self.num_channels..(frame + 1) * self.num_channels])
    }

    /// World positions of every joint at `frame`, in file units, indexed
    /// like [`joints`](Self::joints).
    pub fn forward_kinematics(&self, frame: usize) -> Result<Vec<Vector3<f64>>, BvhError> {
        let values = self.frame(frame)?;
        let mut positions: Vec<Vector3<f64>> = Vec::with_capacity(self.joints.len());
        let mut rotations: Vec<Matrix3<f64>> = Vec::with_capacity(self.joints.len());
        for joint in &self.joints {
            let mut local_rot = Matrix3::identity();
            let mut translation = Vector3::zeros();
            for (c, &v) in joint.channels.iter().zip(&values[joint.channel_range()]) {
                if c.is_rotation() {
                    local_rot *= axis_rotation(c.axis(), v);
                } else {
                    translation[c.axis()] += v;
                }
            }
            let local = joint.offset + translation;
            let (pos, rot) = match joint.parent {
                None => (local, local_rot),
                Some(p) => (positions[p] + rotations[p] * local, rotations[p] * local_rot),
            };
            positions.push(pos);
            rotations.push(rot);
        }
        Ok(positions)
    }

    /// Per-frame vectors of all rotation channels in file order, wrapped to
    /// `(-180, 180]` degrees.
    pub fn rotation_vectors(&self) -> Vec<Vec<f64>> {
        let rot_idx: Vec<usize> = self
            .joints
            .iter()
            .flat_map(|j| j.channel_range().zip(j.channels.iter()))
            .filter(|(_, c)| c.is_rotation())
            .map(|(i, _)| i)
            .collect();
        (0..self.num_frames())
            .map(|f| {
                let row = &self.values[f * self.num_channels..(f + 1) * self.num_channels];
                rot_idx.iter().map(|&i| wrap_deg(row[i])).collect()
            })
            .collect()
    }

    /// Serializes back to BVH text. Numbers are written in their shortest
    /// round-trip form, so reparsing yields an equal document.
    pub fn to_bvh_string(&self) -> String {
        let mut out = String::from("HIERARCHY\n");
        let mut open: Vec<usize> = Vec::new();
        for (i, joint) in self.joints.iter().enumerate() {
            while let Some(&top) = open.last() {
                if Some(top) == joint.parent {
                    break;
                }
                self.close_joint(&mut out, top, open.len() - 1);
                open.pop();
            }
            let depth = open.len();
            let indent = "\t".repeat(depth);
            let kw = if joint.parent.is_none() { "ROOT" } else { "JOINT" };
            let _ = writeln!(out, "{indent}{kw} {}", joint.name);
            let _ = writeln!(out, "{indent}{{");
            let o = joint.offset;
            let _ = writeln!(out, "{indent}\tOFFSET {} {} {}", o.x, o.y, o.z);
            let _ = write!(out, "{indent}\tCHANNELS {}", joint.channels.len());
            for c in &joint.channels {
                let _ = write!(out, " {}", c.name());
            }
            out.push('\n');
            open.push(i);
        }
        while let Some(top) = open.pop() {
            self.close_joint(&mut out, top, open.len());
        }
        let _ = writeln!(out, "MOTION");
        let _ = writeln!(out, "Frames: {}", self.num_frames());
        let _ = writeln!(out, "Frame Time: {}", self.frame_time);
        for f in 0..self.num_frames() {
            let row = &self.values[f * self.num_channels..(f + 1) * self.num_channels];
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    fn close_joint(&self, out: &mut String, joint: usize, depth: usize) {
        let indent = "\t".repeat(depth);
        if let Some(e) = self.joints[joint].end_site {
            let _ = writeln!(out, "{indent}\tEnd Site");
            let _ = writeln!(out, "{indent}\t{{");
            let _ = writeln!(out, "{indent}\t\tOFFSET {} {} {}", e.x, e.y, e.z);
            let _ = writeln!(out, "{indent}\t}}");
        }
        let _ = writeln!(out, "{indent}}}");
    }
}

impl fmt::Display for BvhDocument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_bvh_string())
    }
}

impl FromStr for BvhDocument {
    type Err = BvhError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_bvh(s)
    }
}

fn axis_rotation(axis: usize, degrees: f64) -> Matrix3<f64> {
    let a = degrees.to_radians();
    let r = match axis {
        0 => Rotation3::from_axis_angle(&Vector3::x_axis(), a),
        1 => Rotation3::from_axis_angle(&Vector3::y_axis(), a),
        _ => Rotation3::from_axis_angle(&Vector3::z_axis(), a),
    };
    r.into_inner()
}

fn malformed(line: usize, message: String) -> BvhError {
    BvhError::Malformed { line, message }
}

/// Whitespace tokenizer that remembers 1-based line numbers.
struct Tokens<'a> {
    lines: Vec<&'a str>,
    line: usize,
    pending: std::collections::VecDeque<&'a str>,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        Tokens {
            lines: text.lines().collect(),
            line: 0,
            pending: Default::default(),
        }
    }

    /// Line number of the most recently returned token.
    fn line_no(&self) -> usize {
        self.line.max(1)
    }

    fn next(&mut self) -> Option<&'a str> {
        while self.pending.is_empty() {
            let l = self.lines.get(self.line)?;
            self.line += 1;
            self.pending.extend(l.split_whitespace());
        }
        self.pending.pop_front()
    }

    fn expect(&mut self, what: &str) -> Result<&'a str, BvhError> {
        self.next().ok_or_else(|| {
            malformed(
                self.lines.len().max(1),
                format!("unexpected end of file, expected {what}"),
            )
        })
    }

    fn keyword(&mut self, kw: &str) -> Result<(), BvhError> {
        let t = self.expect(kw)?;
        if t != kw {
            return Err(malformed(self.line_no(), format!("expected `{kw}`, found `{t}`")));
        }
        Ok(())
    }

    fn number(&mut self) -> Result<f64, BvhError> {
        let t = self.expect("a number")?;
        parse_number(t, self.line_no())
    }

    /// Remaining lines after the current one, with their 1-based numbers.
    fn rest_lines(&self) -> impl Iterator<Item = (usize, &'a str)> + '_ {
        self.lines[self.line..]
            .iter()
            .enumerate()
            .map(move |(i, l)| (self.line + i + 1, *l))
    }
}

fn parse_number(t: &str, line: usize) -> Result<f64, BvhError> {
    t.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| BvhError::InvalidNumber {
            line,
            token: t.to_string(),
        })
}

/// Parses BVH text (LF or CRLF line endings).
pub fn parse_bvh(text: &str) -> Result<BvhDocument, BvhError> {
    let mut tok = Tokens::new(text);
    tok.keyword("HIERARCHY")?;
    tok.keyword("ROOT")?;
    let mut joints = Vec::new();
    parse_joint(&mut tok, None, &mut joints)?;

    match tok.next() {
        Some("MOTION") => {}
        Some("ROOT") => return Err(malformed(tok.line_no(), "more than one ROOT".into())),
        Some(t) => return Err(malformed(tok.line_no(), format!("expected `MOTION`, found `{t}`"))),
        None => {
            return Err(BvhError::MissingMotion {
                line: tok.lines.len().max(1),
            })
        }
    }
    tok.keyword("Frames:")?;
    let frames_line = tok.line_no();
    let n_tok = tok.expect("frame count")?;
    let expected_frames: usize = n_tok.parse().map_err(|_| BvhError::InvalidNumber {
        line: frames_line,
        token: n_tok.to_string(),
    })?;
    tok.keyword("Frame")?;
    tok.keyword("Time:")?;
    let frame_time = tok.number()?;
    let time_line = tok.line_no();
    if !(frame_time > 0.0) {
        return Err(BvhError::FrameTime {
            line: time_line,
            value: frame_time,
        });
    }
    if let Some(extra) = tok.pending.front() {
        return Err(malformed(time_line, format!("unexpected `{extra}` after frame time")));
    }

    let num_channels: usize = joints.iter().map(|j: &BvhJoint| j.channels.len()).sum();
    let mut values = Vec::with_capacity(expected_frames * num_channels);
    let mut found = 0usize;
    let mut last_line = time_line;
    for (line, l) in tok.rest_lines() {
        if l.trim().is_empty() {
            continue;
        }
        last_line = line;
        let before = values.len();
        for t in l.split_whitespace() {
            values.push(parse_number(t, line)?);
        }
        let n = values.len() - before;
        if n != num_channels {
            return Err(BvhError::FrameValues {
                line,
                frame: found,
                expected: num_channels,
                found: n,
            });
        }
        found += 1;
    }
    if found != expected_frames {
        return Err(BvhError::FrameCount {
            line: last_line,
            expected: expected_frames,
            found,
        });
    }
    Ok(BvhDocument {
        joints,
        frame_time,
        num_channels,
        values,
    })
}

fn parse_joint(tok: &mut Tokens<'_>, parent: Option<usize>, joints: &mut Vec<BvhJoint>) -> Result<(), BvhError> {
    let name = tok.expect("joint name")?;
    if name == "{" {
        return Err(malformed(tok.line_no(), "joint without a name".into()));
    }
    let name = name.to_string();
    tok.keyword("{")?;
    tok.keyword("OFFSET")?;
    let offset = Vector3::new(tok.number()?, tok.number()?, tok.number()?);
    tok.keyword("CHANNELS")?;
    let count_line = tok.line_no();
    let n_tok = tok.expect("channel count")?;
    let n: usize = n_tok.parse().map_err(|_| BvhError::InvalidNumber {
        line: count_line,
        token: n_tok.to_string(),
    })?;
    let mut channels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = tok.expect("channel name")?;
        channels.push(c.parse::<Channel>().map_err(|_| BvhError::UnknownChannel {
            line: tok.line_no(),
            name: c.to_string(),
        })?);
    }
    let first_channel = joints.iter().map(|j: &BvhJoint| j.channels.len()).sum();
    let index = joints.len();
    joints.push(BvhJoint {
        name,
        parent,
        offset,
        channels,
        end_site: None,
        first_channel,
    });
    loop {
        let t = tok.expect("`JOINT`, `End Site` or `}`")?;
        match t {
            "JOINT" => parse_joint(tok, Some(index), joints)?,
            "End" => {
                tok.keyword("Site")?;
                if joints[index].end_site.is_some() {
                    return Err(malformed(tok.line_no(), "second End Site".into()));
                }
                tok.keyword("{")?;
                tok.keyword("OFFSET")?;
                let e = Vector3::new(tok.number()?, tok.number()?, tok.number()?);
                tok.keyword("}")?;
                joints[index].end_site = Some(e);
            }
            "}" => return Ok(()),
            "MOTION" => {
                return Err(malformed(
                    tok.line_no(),
                    format!("unclosed joint `{}`", joints[index].name),
                ))
            }
            other => {
                return Err(malformed(
                    tok.line_no(),
                    format!("unexpected `{other}` inside joint `{}`", joints[index].name),
                ))
            }
        }
    }
}

/// Assignment of each skeleton joint to a BVH joint name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointMap(pub BTreeMap<JointId, String>);

impl JointMap {
    /// Mapping for CMU-style hierarchies (`Hips`, `LeftUpLeg`, `RightArm`, ...).
    pub fn cmu() -> Self {
        use JointId::*;
        let pairs = [
            (Pelvis, "Hips"),
            (RHip, "RightUpLeg"),
            (RKnee, "RightLeg"),
            (RAnkle, "RightFoot"),
            (LHip, "LeftUpLeg"),
            (LKnee, "LeftLeg"),
            (LAnkle, "LeftFoot"),
            (Spine, "Spine"),
            (Thorax, "Spine1"),
            (Neck, "Neck"),
            (Head, "Head"),
            (LShoulder, "LeftArm"),
            (LElbow, "LeftForeArm"),
            (LWrist, "LeftHand"),
            (RShoulder, "RightArm"),
            (RElbow, "RightForeArm"),
            (RWrist, "RightHand"),
        ];
        JointMap(pairs.into_iter().map(|(j, n)| (j, n.to_string())).collect())
    }

    /// BVH joint index for each skeleton joint.
    pub fn resolve(&self, doc: &BvhDocument) -> Result<[usize; NUM_JOINTS], BvhError> {
        let mut out = [0usize; NUM_JOINTS];
        for j in JointId::ALL {
            let name = self.0.get(&j).ok_or(BvhError::UnmappedJoint(j))?;
            out[j.index()] = doc.joint_index(name).ok_or_else(|| BvhError::MissingJoint {
                joint: j,
                name: name.clone(),
            })?;
        }
        Ok(out)
    }
}

impl Default for JointMap {
    fn default() -> Self {
        Self::cmu()
    }
}

/// Picks the mapped joints out of FK `positions` and converts file units to
/// millimeters (`unit_scale` = mm per file unit).
pub fn map_to_skeleton17(
    doc: &BvhDocument,
    positions: &[Vector3<f64>],
    map: &JointMap,
    unit_scale: f64,
) -> Result<Pose3D, BvhError> {
    let idx = map.resolve(doc)?;
    let joints = std::array::from_fn(|i| positions[idx[i]] * unit_scale);
    Ok(Pose3D::new(joints, Frame::World)?)
}
