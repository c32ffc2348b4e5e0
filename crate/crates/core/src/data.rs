//! Sequence data model, dataset file format, validation, 2D normalization
//! with the invisibility sentinel, and in/out-of-view partitioning.
//!
//! Dataset files are UTF-8 newline-delimited JSON records (schema "v1").
//! All 3D content in files is stored pre-canonicalized; loading applies the
//! gravity-preserving canonicalization from [`crate::geometry`].

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraPose, CanonicalTransform, Intrinsics, Vec3};

/// Total joint count: 15 body joints (wrists excluded) plus 21 per hand.
pub const JOINT_COUNT: usize = 57;
pub const BODY_RANGE: Range<usize> = 0..15;
pub const LEFT_HAND_RANGE: Range<usize> = 15..36;
pub const RIGHT_HAND_RANGE: Range<usize> = 36..57;
pub const LEFT_WRIST: usize = 15;
pub const RIGHT_WRIST: usize = 36;
pub const HAND_JOINT_COUNT: usize = 21;
/// 2D coordinates reported for a hand that is out of view.
pub const SENTINEL_2D: [f64; 2] = [-1.0, -1.0];

/// Body joint indices (the 0..15 block).
pub mod body {
    pub const PELVIS: usize = 0;
    pub const SPINE: usize = 1;
    pub const CHEST: usize = 2;
    pub const NECK: usize = 3;
    pub const HEAD: usize = 4;
    pub const LEFT_SHOULDER: usize = 5;
    pub const RIGHT_SHOULDER: usize = 6;
    pub const LEFT_ELBOW: usize = 7;
    pub const RIGHT_ELBOW: usize = 8;
    pub const LEFT_HIP: usize = 9;
    pub const RIGHT_HIP: usize = 10;
    pub const LEFT_KNEE: usize = 11;
    pub const RIGHT_KNEE: usize = 12;
    pub const LEFT_ANKLE: usize = 13;
    pub const RIGHT_ANKLE: usize = 14;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];

    pub fn wrist(self) -> usize {
        match self {
            Side::Left => LEFT_WRIST,
            Side::Right => RIGHT_WRIST,
        }
    }

    pub fn hand_range(self) -> Range<usize> {
        match self {
            Side::Left => LEFT_HAND_RANGE,
            Side::Right => RIGHT_HAND_RANGE,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::Left => write!(f, "left"),
            Side::Right => write!(f, "right"),
        }
    }
}

/// One frame of 3D joints with per-joint annotation mask. Masked-out joints
/// carry the fill value (0,0,0) and are never read by losses or metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointFrame {
    pub joints: Vec<[f64; 3]>,
    pub mask: Vec<bool>,
}

impl JointFrame {
    pub fn zeros() -> Self {
        JointFrame { joints: vec![[0.0; 3]; JOINT_COUNT], mask: vec![false; JOINT_COUNT] }
    }

    pub fn set(&mut self, j: usize, p: Vec3) {
        self.joints[j] = [p.x, p.y, p.z];
        self.mask[j] = true;
    }

    /// Position of an annotated joint; `None` when masked out.
    pub fn position(&self, j: usize) -> Option<Vec3> {
        if self.mask[j] {
            Some(Vec3::new(self.joints[j][0], self.joints[j][1], self.joints[j][2]))
        } else {
            None
        }
    }

    pub fn annotated(&self) -> impl Iterator<Item = (usize, Vec3)> + '_ {
        self.mask.iter().enumerate().filter_map(move |(j, &m)| {
            m.then(|| (j, Vec3::new(self.joints[j][0], self.joints[j][1], self.joints[j][2])))
        })
    }

    fn validate(&self) -> Result<()> {
        if self.joints.len() != JOINT_COUNT {
            return Err(Error::data(format!(
                "expected {JOINT_COUNT} joints, found {}",
                self.joints.len()
            )));
        }
        if self.mask.len() != JOINT_COUNT {
            return Err(Error::data(format!(
                "expected {JOINT_COUNT} mask entries, found {}",
                self.mask.len()
            )));
        }
        for (j, p) in self.joints.iter().enumerate() {
            if self.mask[j] && p.iter().any(|v| !v.is_finite()) {
                return Err(Error::data(format!("joint {j} has non-finite coordinates")));
            }
        }
        Ok(())
    }

    /// Reset masked-out joints to the canonical fill value.
    fn enforce_fill(&mut self) {
        for (j, m) in self.mask.iter().enumerate() {
            if !m {
                self.joints[j] = [0.0; 3];
            }
        }
    }
}

/// Normalized 2D wrist observations for one frame; invisible sides carry the
/// sentinel (-1,-1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandObservation2D {
    pub left: [f64; 2],
    pub right: [f64; 2],
    pub left_visible: bool,
    pub right_visible: bool,
}

impl HandObservation2D {
    pub fn get(&self, side: Side) -> ([f64; 2], bool) {
        match side {
            Side::Left => (self.left, self.left_visible),
            Side::Right => (self.right, self.right_visible),
        }
    }

    fn validate(&self) -> Result<()> {
        for side in Side::BOTH {
            let (p, visible) = self.get(side);
            if visible {
                if !(0.0..=1.0).contains(&p[0]) || !(0.0..=1.0).contains(&p[1]) {
                    return Err(Error::data(format!(
                        "{side} hand marked visible but coordinates ({}, {}) lie outside [0,1]",
                        p[0], p[1]
                    )));
                }
            } else if p != SENTINEL_2D {
                return Err(Error::data(format!(
                    "{side} hand marked invisible but coordinates ({}, {}) are not the sentinel (-1,-1)",
                    p[0], p[1]
                )));
            }
        }
        Ok(())
    }
}

/// Normalize a visible pixel position to [0,1] by the image size; invisible
/// positions map to the sentinel regardless of input.
pub fn normalize_2d(pixel: [f64; 2], image_size: [u32; 2], visible: bool) -> Result<[f64; 2]> {
    if !visible {
        return Ok(SENTINEL_2D);
    }
    let w = image_size[0] as f64;
    let h = image_size[1] as f64;
    if !(0.0..=w).contains(&pixel[0]) || !(0.0..=h).contains(&pixel[1]) {
        return Err(Error::data(format!(
            "inconsistent visibility: visible pixel ({}, {}) outside {w}x{h} image",
            pixel[0], pixel[1]
        )));
    }
    Ok([pixel[0] / w, pixel[1] / h])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub id: String,
    pub activity: String,
}

/// One capture: T observation frames (camera, 2D hands, image features,
/// joint targets) and F future frames of joint targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub meta: SequenceMeta,
    pub obs_poses: Vec<CameraPose>,
    pub obs_hands2d: Vec<HandObservation2D>,
    pub obs_features: Vec<Vec<f64>>,
    pub obs_joints: Vec<JointFrame>,
    pub fut_joints: Vec<JointFrame>,
}

impl Sequence {
    pub fn t_obs(&self) -> usize {
        self.obs_poses.len()
    }

    pub fn f_fut(&self) -> usize {
        self.fut_joints.len()
    }

    pub fn d_img(&self) -> usize {
        self.obs_features.first().map_or(0, Vec::len)
    }

    /// True when the side's wrist is visible in every observation frame.
    pub fn visible_all_obs(&self, side: Side) -> bool {
        self.obs_hands2d.iter().all(|h| h.get(side).1)
    }

    /// Number of observation frames where the side's wrist is out of view.
    pub fn hidden_obs_count(&self, side: Side) -> usize {
        self.obs_hands2d.iter().filter(|h| !h.get(side).1).count()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.t_obs();
        if t == 0 {
            return Err(Error::data("sequence has no observation frames"));
        }
        if self.f_fut() == 0 {
            return Err(Error::data("sequence has no future frames"));
        }
        if self.obs_hands2d.len() != t || self.obs_features.len() != t || self.obs_joints.len() != t
        {
            return Err(Error::data(format!(
                "observation arrays disagree on length: poses {t}, hands2d {}, features {}, joints {}",
                self.obs_hands2d.len(),
                self.obs_features.len(),
                self.obs_joints.len()
            )));
        }
        let d = self.d_img();
        if self.obs_features.iter().any(|f| f.len() != d) {
            return Err(Error::data("feature vectors disagree on length"));
        }
        let first = &self.obs_poses[0];
        for pose in &self.obs_poses {
            pose.validate().map_err(|e| Error::data(e.to_string()))?;
            if pose.intrinsics != first.intrinsics || pose.image_size != first.image_size {
                return Err(Error::data("camera intrinsics vary within a sequence"));
            }
        }
        for h in &self.obs_hands2d {
            h.validate()?;
        }
        for f in self.obs_joints.iter().chain(&self.fut_joints) {
            f.validate()?;
        }
        Ok(())
    }

    /// Canonicalize all poses and joints in place relative to the first
    /// observation camera. Returns the applied transform.
    pub fn canonicalize(&mut self) -> Result<CanonicalTransform> {
        let first = self
            .obs_poses
            .first()
            .ok_or_else(|| Error::data("cannot canonicalize an empty sequence"))?;
        let t = CanonicalTransform::from_reference(first)?;
        if t.is_identity() {
            return Ok(t);
        }
        for pose in &mut self.obs_poses {
            *pose = t.apply_pose(pose)?;
        }
        for frame in self.obs_joints.iter_mut().chain(&mut self.fut_joints) {
            for j in 0..JOINT_COUNT {
                if frame.mask[j] {
                    let p = t.apply_point(Vec3::new(
                        frame.joints[j][0],
                        frame.joints[j][1],
                        frame.joints[j][2],
                    ));
                    frame.joints[j] = [p.x, p.y, p.z];
                }
            }
        }
        Ok(t)
    }
}

/// Canonicalize a pose/joint sequence relative to its first camera, returning
/// the transformed copies and the transform. Masked-out joints keep the fill
/// value.
pub fn canonicalize_sequence(
    poses: &[CameraPose],
    joints: &[JointFrame],
) -> Result<(Vec<CameraPose>, Vec<JointFrame>, CanonicalTransform)> {
    let first = poses.first().ok_or_else(|| Error::data("cannot canonicalize an empty sequence"))?;
    let t = CanonicalTransform::from_reference(first)?;
    let poses2 = poses.iter().map(|p| t.apply_pose(p)).collect::<Result<Vec<_>>>()?;
    let mut joints2 = joints.to_vec();
    if !t.is_identity() {
        for frame in &mut joints2 {
            for j in 0..frame.joints.len() {
                if frame.mask[j] {
                    let p = t.apply_point(Vec3::new(
                        frame.joints[j][0],
                        frame.joints[j][1],
                        frame.joints[j][2],
                    ));
                    frame.joints[j] = [p.x, p.y, p.z];
                }
            }
        }
    }
    Ok((poses2, joints2, t))
}

/// Per-side view partition over `(sequence index, side)` pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ViewPartition {
    pub in_view: Vec<(usize, Side)>,
    pub out_of_view: Vec<(usize, Side)>,
}

/// A pair is in view iff that side is visible in all observation frames.
pub fn partition_by_view(seqs: &[Sequence]) -> ViewPartition {
    let mut part = ViewPartition::default();
    for (i, seq) in seqs.iter().enumerate() {
        for side in Side::BOTH {
            if seq.visible_all_obs(side) {
                part.in_view.push((i, side));
            } else {
                part.out_of_view.push((i, side));
            }
        }
    }
    part
}

/// Per-joint mean pose over annotated frames, in the canonical frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub mean_pose: Vec<[f64; 3]>,
    /// Number of frames (observation and future) that contributed.
    pub count: usize,
}

impl DatasetStats {
    pub fn mean_position(&self, j: usize) -> Vec3 {
        Vec3::new(self.mean_pose[j][0], self.mean_pose[j][1], self.mean_pose[j][2])
    }
}

/// Mean pose over all annotated joints in observation and future frames.
/// Errors if any joint index has no annotation anywhere in the set.
pub fn compute_stats(train: &[Sequence]) -> Result<DatasetStats> {
    let mut sums = vec![[0.0f64; 3]; JOINT_COUNT];
    let mut counts = vec![0usize; JOINT_COUNT];
    let mut frames = 0usize;
    for seq in train {
        for frame in seq.obs_joints.iter().chain(&seq.fut_joints) {
            frames += 1;
            for (j, p) in frame.annotated() {
                sums[j][0] += p.x;
                sums[j][1] += p.y;
                sums[j][2] += p.z;
                counts[j] += 1;
            }
        }
    }
    let missing: Vec<usize> =
        (0..JOINT_COUNT).filter(|&j| counts[j] == 0).collect();
    if !missing.is_empty() {
        return Err(Error::data(format!(
            "joints with no annotations anywhere in the training set: {missing:?}"
        )));
    }
    let mean_pose = (0..JOINT_COUNT)
        .map(|j| {
            let n = counts[j] as f64;
            [sums[j][0] / n, sums[j][1] / n, sums[j][2] / n]
        })
        .collect();
    Ok(DatasetStats { mean_pose, count: frames })
}

#[derive(Debug, Serialize, Deserialize)]
struct ObsFrameV1 {
    pose_r6: [f64; 6],
    pose_t: [f64; 3],
    hand2d_l: [f64; 2],
    hand2d_r: [f64; 2],
    vis_l: bool,
    vis_r: bool,
    feat: Vec<f64>,
    joints: Vec<[f64; 3]>,
    joint_mask: Vec<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FutFrameV1 {
    joints: Vec<[f64; 3]>,
    joint_mask: Vec<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordV1 {
    schema: String,
    id: String,
    activity: String,
    intrinsics: Intrinsics,
    image_size: [u32; 2],
    obs: Vec<ObsFrameV1>,
    fut: Vec<FutFrameV1>,
}

impl RecordV1 {
    fn from_sequence(seq: &Sequence) -> RecordV1 {
        let cam = &seq.obs_poses[0];
        RecordV1 {
            schema: "v1".into(),
            id: seq.meta.id.clone(),
            activity: seq.meta.activity.clone(),
            intrinsics: cam.intrinsics,
            image_size: cam.image_size,
            obs: seq
                .obs_poses
                .iter()
                .zip(&seq.obs_hands2d)
                .zip(&seq.obs_features)
                .zip(&seq.obs_joints)
                .map(|(((pose, h2d), feat), jf)| ObsFrameV1 {
                    pose_r6: pose.rotation.0,
                    pose_t: pose.translation,
                    hand2d_l: h2d.left,
                    hand2d_r: h2d.right,
                    vis_l: h2d.left_visible,
                    vis_r: h2d.right_visible,
                    feat: feat.clone(),
                    joints: jf.joints.clone(),
                    joint_mask: jf.mask.clone(),
                })
                .collect(),
            fut: seq
                .fut_joints
                .iter()
                .map(|jf| FutFrameV1 { joints: jf.joints.clone(), joint_mask: jf.mask.clone() })
                .collect(),
        }
    }

    fn into_sequence(self) -> Result<Sequence> {
        if self.schema != "v1" {
            return Err(Error::data(format!("unsupported schema {:?}", self.schema)));
        }
        let mut obs_poses = Vec::with_capacity(self.obs.len());
        let mut obs_hands2d = Vec::with_capacity(self.obs.len());
        let mut obs_features = Vec::with_capacity(self.obs.len());
        let mut obs_joints = Vec::with_capacity(self.obs.len());
        for frame in self.obs {
            obs_poses.push(CameraPose {
                rotation: crate::geometry::Rotation6d(frame.pose_r6),
                translation: frame.pose_t,
                intrinsics: self.intrinsics,
                image_size: self.image_size,
            });
            obs_hands2d.push(HandObservation2D {
                left: frame.hand2d_l,
                right: frame.hand2d_r,
                left_visible: frame.vis_l,
                right_visible: frame.vis_r,
            });
            obs_features.push(frame.feat);
            let mut jf = JointFrame { joints: frame.joints, mask: frame.joint_mask };
            jf.validate()?;
            jf.enforce_fill();
            obs_joints.push(jf);
        }
        let fut_joints = self
            .fut
            .into_iter()
            .map(|frame| {
                let mut jf = JointFrame { joints: frame.joints, mask: frame.joint_mask };
                jf.validate()?;
                jf.enforce_fill();
                Ok(jf)
            })
            .collect::<Result<Vec<_>>>()?;
        let seq = Sequence {
            meta: SequenceMeta { id: self.id, activity: self.activity },
            obs_poses,
            obs_hands2d,
            obs_features,
            obs_joints,
            fut_joints,
        };
        seq.validate()?;
        Ok(seq)
    }
}

/// Load, validate, and canonicalize a newline-delimited dataset file.
/// Errors carry the 1-based line number and the record id where known.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Sequence>> {
    let path = path.as_ref();
    let file = fs::File::open(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    let mut seqs: Vec<Sequence> = Vec::new();
    let mut shape: Option<(usize, usize, usize)> = None;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::data(format!("read failure: {e}")).at(lineno, None))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RecordV1 = serde_json::from_str(&line)
            .map_err(|e| Error::data(format!("malformed record: {e}")).at(lineno, None))?;
        let id = record.id.clone();
        let mut seq = record.into_sequence().map_err(|e| e.at(lineno, Some(&id)))?;
        let dims = (seq.t_obs(), seq.f_fut(), seq.d_img());
        match shape {
            None => shape = Some(dims),
            Some(expect) if expect != dims => {
                return Err(Error::data(format!(
                    "frame counts (T, F, d_img) = {dims:?} disagree with the first record's {expect:?}"
                ))
                .at(lineno, Some(&id)));
            }
            _ => {}
        }
        seq.canonicalize().map_err(|e| {
            Error::data(format!("canonicalization failed: {e}")).at(lineno, Some(&id))
        })?;
        seqs.push(seq);
    }
    Ok(seqs)
}

/// Write sequences as newline-delimited records, one JSON object per line.
pub fn save_dataset(path: impl AsRef<Path>, seqs: &[Sequence]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path.as_ref())?);
    for seq in seqs {
        let record = RecordV1::from_sequence(seq);
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
