//! Deterministic synthetic egocentric captures: an articulated skeleton
//! driven by scripted motion archetypes, a head-mounted virtual camera, and
//! 2D hand observations derived purely from the camera frustum.
//!
//! Archetypes are parametric curves with seeded targets: `idle-sway` keeps
//! both hands in front of the chest, `reach` extends one arm to a seeded
//! point with a minimum-jerk profile, `carry` translates the body while the
//! hands hold a fixed carrying pose, and `turn-and-reach` swings the head
//! toward a new heading before the hands follow, which pushes both wrists
//! outside the field of view for part of the observation window.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    body, normalize_2d, save_dataset, HandObservation2D, JointFrame, Sequence, SequenceMeta, Side,
    HAND_JOINT_COUNT,
};
use crate::error::{Error, Result};
use crate::geometry::{camera_orientation, CameraPose, Intrinsics, Rotation6d, Vec3};

/// Tolerance for the motion-mix proportions summing to one.
const MIX_TOL: f64 = 1e-9;
/// Slack kept between an arm's wrist target and its kinematic limits.
const REACH_MARGIN: f64 = 1e-4;
/// Camera offset from the head joint, in camera axes (right, down, forward).
const HEAD_TO_CAMERA: [f64; 3] = [0.0, 0.05, 0.1];
/// Downward head pitch shared by all archetypes; keeps resting hands framed.
const BASE_PITCH: f64 = 0.5;

/// What the image-feature channel carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureMode {
    /// All-zero features: the channel is present but uninformative.
    Zeros,
    /// First three slots hold the scene object's camera-frame position.
    SceneEncoding,
}

/// Proportions of the four motion archetypes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionMix {
    pub reach: f64,
    pub carry: f64,
    pub turn_reach: f64,
    pub idle_sway: f64,
}

impl Default for MotionMix {
    fn default() -> Self {
        MotionMix { reach: 0.25, carry: 0.25, turn_reach: 0.25, idle_sway: 0.25 }
    }
}

impl MotionMix {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.reach, self.carry, self.turn_reach, self.idle_sway];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidConfig("motion mix proportions must be >= 0".into()));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > MIX_TOL {
            return Err(Error::InvalidConfig(format!(
                "motion mix proportions sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    /// Map a uniform draw in [0,1) to an archetype by cumulative proportion.
    fn pick(&self, u: f64) -> Archetype {
        let mut acc = self.reach;
        if u < acc {
            return Archetype::Reach;
        }
        acc += self.carry;
        if u < acc {
            return Archetype::Carry;
        }
        acc += self.turn_reach;
        if u < acc {
            return Archetype::TurnReach;
        }
        Archetype::IdleSway
    }
}

/// Skeleton segment lengths in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimbLengths {
    pub torso_lower: f64,
    pub torso_upper: f64,
    pub neck: f64,
    pub head: f64,
    pub clavicle: f64,
    pub upper_arm: f64,
    pub forearm: f64,
    pub hip_half: f64,
    pub thigh: f64,
    pub shin: f64,
    /// Scale applied to the unit finger layout; roughly the hand length.
    pub hand_scale: f64,
}

impl Default for LimbLengths {
    fn default() -> Self {
        LimbLengths {
            torso_lower: 0.15,
            torso_upper: 0.15,
            neck: 0.12,
            head: 0.12,
            clavicle: 0.18,
            upper_arm: 0.28,
            forearm: 0.26,
            hip_half: 0.10,
            thigh: 0.42,
            shin: 0.41,
            hand_scale: 0.09,
        }
    }
}

impl LimbLengths {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.torso_lower,
            self.torso_upper,
            self.neck,
            self.head,
            self.clavicle,
            self.upper_arm,
            self.forearm,
            self.hip_half,
            self.thigh,
            self.shin,
            self.hand_scale,
        ];
        if all.iter().any(|l| !l.is_finite() || *l <= 0.0) {
            return Err(Error::InvalidConfig("limb lengths must be positive".into()));
        }
        Ok(())
    }

    fn arm_reach(&self) -> f64 {
        self.upper_arm + self.forearm
    }

    fn hip_height(&self) -> f64 {
        0.04 + self.thigh + self.shin
    }
}

/// Generator configuration; `(seed, index)` fully determines a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub n_sequences: usize,
    pub fps: f64,
    pub t_obs: usize,
    pub f_fut: usize,
    pub motion_mix: MotionMix,
    pub limbs: LimbLengths,
    pub image_size: [u32; 2],
    pub intrinsics: Intrinsics,
    pub feature_mode: FeatureMode,
    pub d_img: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            n_sequences: 8,
            fps: 10.0,
            t_obs: 20,
            f_fut: 10,
            motion_mix: MotionMix::default(),
            limbs: LimbLengths::default(),
            image_size: [224, 224],
            intrinsics: Intrinsics { fx: 170.0, fy: 170.0, cx: 112.0, cy: 112.0 },
            feature_mode: FeatureMode::Zeros,
            d_img: 384,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_obs == 0 || self.f_fut == 0 {
            return Err(Error::InvalidConfig("T and F must be positive".into()));
        }
        if !self.fps.is_finite() || self.fps <= 0.0 {
            return Err(Error::InvalidConfig("fps must be positive".into()));
        }
        if self.image_size[0] == 0 || self.image_size[1] == 0 {
            return Err(Error::InvalidConfig("image size must be nonzero".into()));
        }
        if self.feature_mode == FeatureMode::SceneEncoding && self.d_img < 3 {
            return Err(Error::InvalidConfig(
                "scene-encoding features need at least 3 slots".into(),
            ));
        }
        self.motion_mix.validate()?;
        self.limbs.validate()?;
        self.intrinsics.validate()?;
        Ok(())
    }
}

/// Counts returned by [`generate_dataset`]; a pair is `(sequence, side)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenSummary {
    pub n_sequences: usize,
    pub n_in_view_pairs: usize,
    pub n_out_of_view_pairs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Archetype {
    IdleSway,
    Reach,
    Carry,
    TurnReach,
}

impl Archetype {
    fn name(self) -> &'static str {
        match self {
            Archetype::IdleSway => "idle-sway",
            Archetype::Reach => "reach",
            Archetype::Carry => "carry",
            Archetype::TurnReach => "turn-and-reach",
        }
    }
}

/// Minimum-jerk easing: 10t^3 - 15t^4 + 6t^5, clamped to [0, 1].
fn smoothstep5(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
}

/// Seeded sinusoid used for idle micro-motion.
#[derive(Debug, Clone, Copy)]
struct Osc {
    amp: f64,
    freq: f64,
    phase: f64,
}

impl Osc {
    fn draw(rng: &mut ChaCha8Rng, amp_lo: f64, amp_hi: f64) -> Osc {
        Osc {
            amp: rng.random_range(amp_lo..amp_hi),
            freq: rng.random_range(0.15..0.45),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        }
    }

    fn at(&self, k: f64) -> f64 {
        self.amp * (self.freq * k + self.phase).sin()
    }
}

/// Per-frame control state driving the skeleton builder.
struct FrameCtl {
    pelvis: Vec3,
    yaw: f64,
    lean: f64,
    head_yaw: f64,
    head_pitch: f64,
    /// Desired world wrist positions, left then right; clamped by arm reach.
    wrist: [Vec3; 2],
    /// Scene object position (drives scene-encoding features).
    object: Vec3,
}

/// Torso anchor points shared by the wrist scripts and the body builder.
struct Torso {
    pelvis: Vec3,
    spine: Vec3,
    chest: Vec3,
    neck: Vec3,
    head: Vec3,
    shoulder: [Vec3; 2],
    fwd: Vec3,
    left: Vec3,
}

fn torso(limbs: &LimbLengths, pelvis: Vec3, yaw: f64, lean: f64) -> Torso {
    let fwd = Vec3::new(yaw.cos(), yaw.sin(), 0.0);
    let left = Vec3::new(-yaw.sin(), yaw.cos(), 0.0);
    let up = lean.cos() * Vec3::z() + lean.sin() * fwd;
    let spine = pelvis + limbs.torso_lower * up;
    let chest = spine + limbs.torso_upper * up;
    let neck = chest + limbs.neck * up;
    let head = neck + limbs.head * up;
    let shoulder = [chest + limbs.clavicle * left, chest - limbs.clavicle * left];
    Torso { pelvis, spine, chest, neck, head, shoulder, fwd, left }
}

/// Resting wrist offset from the chest: forward, lateral (toward that side),
/// vertical. Chosen so both hands sit inside the frustum under `BASE_PITCH`.
fn rest_wrist(t: &Torso, side: Side, offsets: [f64; 3]) -> Vec3 {
    let sign = match side {
        Side::Left => 1.0,
        Side::Right => -1.0,
    };
    t.chest + offsets[0] * t.fwd + sign * offsets[1] * t.left + offsets[2] * Vec3::z()
}

/// Two-bone arm solve: place the wrist exactly on the (reach-clamped) target
/// and the elbow on the circle that keeps both bone lengths exact.
fn solve_arm(
    limbs: &LimbLengths,
    shoulder: Vec3,
    target: Vec3,
    bend_ref: Vec3,
) -> (Vec3, Vec3) {
    let (a, b) = (limbs.upper_arm, limbs.forearm);
    let to_target = target - shoulder;
    let d_raw = to_target.norm();
    let dir = if d_raw < 1e-9 { bend_ref.normalize() } else { to_target / d_raw };
    let d = d_raw.clamp((a - b).abs() + REACH_MARGIN, a + b - REACH_MARGIN);
    let wrist = shoulder + d * dir;
    let x = (a * a - b * b + d * d) / (2.0 * d);
    let h = (a * a - x * x).max(0.0).sqrt();
    let mut n = bend_ref - bend_ref.dot(&dir) * dir;
    if n.norm() < 1e-9 {
        n = Vec3::z() - Vec3::z().dot(&dir) * dir;
    }
    if n.norm() < 1e-9 {
        n = Vec3::x() - Vec3::x().dot(&dir) * dir;
    }
    let elbow = shoulder + x * dir + h * n.normalize();
    (elbow, wrist)
}

/// Unit finger-joint layout in hand axes (along fingers, toward thumb, palm
/// normal): five fingers, four joints each, ordered thumb to pinky.
const FINGER_LAYOUT: [[f64; 3]; HAND_JOINT_COUNT - 1] = [
    [0.25, 0.45, 0.00],
    [0.45, 0.62, -0.02],
    [0.60, 0.74, -0.04],
    [0.72, 0.84, -0.06],
    [0.50, 0.30, 0.00],
    [0.78, 0.32, -0.03],
    [0.96, 0.33, -0.06],
    [1.10, 0.34, -0.09],
    [0.50, 0.10, 0.00],
    [0.80, 0.10, -0.03],
    [1.00, 0.10, -0.06],
    [1.15, 0.10, -0.09],
    [0.50, -0.10, 0.00],
    [0.77, -0.11, -0.03],
    [0.95, -0.12, -0.06],
    [1.08, -0.13, -0.09],
    [0.48, -0.28, 0.00],
    [0.70, -0.30, -0.03],
    [0.84, -0.31, -0.06],
    [0.95, -0.32, -0.09],
];

/// Rigidly place the twenty finger joints from the forearm direction.
fn place_fingers(
    limbs: &LimbLengths,
    elbow: Vec3,
    wrist: Vec3,
    side: Side,
    frame: &mut JointFrame,
    base: usize,
) {
    let along = (wrist - elbow).normalize();
    let mut across = Vec3::z().cross(&along);
    if across.norm() < 1e-6 {
        across = Vec3::x().cross(&along);
    }
    let across = across.normalize();
    let palm = along.cross(&across);
    let mirror = match side {
        Side::Left => 1.0,
        Side::Right => -1.0,
    };
    for (i, o) in FINGER_LAYOUT.iter().enumerate() {
        let p = wrist
            + limbs.hand_scale * (o[0] * along + mirror * o[1] * across + o[2] * palm);
        frame.set(base + 1 + i, p);
    }
}

/// Build the full 57-joint frame from a control state.
fn build_frame(limbs: &LimbLengths, ctl: &FrameCtl, knee_bend: f64) -> JointFrame {
    let t = torso(limbs, ctl.pelvis, ctl.yaw, ctl.lean);
    let mut jf = JointFrame::zeros();
    jf.set(body::PELVIS, t.pelvis);
    jf.set(body::SPINE, t.spine);
    jf.set(body::CHEST, t.chest);
    jf.set(body::NECK, t.neck);
    jf.set(body::HEAD, t.head);
    jf.set(body::LEFT_SHOULDER, t.shoulder[0]);
    jf.set(body::RIGHT_SHOULDER, t.shoulder[1]);

    let knee_dir = -knee_bend.cos() * Vec3::z() + knee_bend.sin() * t.fwd;
    let ankle_dir = -(knee_bend * 0.5).cos() * Vec3::z() - (knee_bend * 0.5).sin() * t.fwd;
    for (side_idx, (hip_j, knee_j, ankle_j)) in [
        (body::LEFT_HIP, body::LEFT_KNEE, body::LEFT_ANKLE),
        (body::RIGHT_HIP, body::RIGHT_KNEE, body::RIGHT_ANKLE),
    ]
    .into_iter()
    .enumerate()
    {
        let sign = if side_idx == 0 { 1.0 } else { -1.0 };
        let hip = t.pelvis + sign * limbs.hip_half * t.left;
        let knee = hip + limbs.thigh * knee_dir;
        let ankle = knee + limbs.shin * ankle_dir;
        jf.set(hip_j, hip);
        jf.set(knee_j, knee);
        jf.set(ankle_j, ankle);
    }

    for (i, side) in Side::BOTH.into_iter().enumerate() {
        let sign = if side == Side::Left { 1.0 } else { -1.0 };
        let bend_ref = -Vec3::z() - 0.25 * t.fwd + sign * 0.35 * t.left;
        let (elbow, wrist) = solve_arm(limbs, t.shoulder[i], ctl.wrist[i], bend_ref);
        let elbow_j = if side == Side::Left { body::LEFT_ELBOW } else { body::RIGHT_ELBOW };
        jf.set(elbow_j, elbow);
        let base = side.wrist();
        jf.set(base, wrist);
        place_fingers(limbs, elbow, wrist, side, &mut jf, base);
    }
    jf
}

/// Head-mounted camera pose for a control state.
fn head_camera(cfg: &GenConfig, limbs: &LimbLengths, ctl: &FrameCtl) -> Result<CameraPose> {
    let t = torso(limbs, ctl.pelvis, ctl.yaw, ctl.lean);
    let r = camera_orientation(ctl.head_yaw, ctl.head_pitch);
    let off = r * Vec3::new(HEAD_TO_CAMERA[0], HEAD_TO_CAMERA[1], HEAD_TO_CAMERA[2]);
    let pos = t.head + off;
    CameraPose::new(
        Rotation6d::from_matrix(&r)?,
        [pos.x, pos.y, pos.z],
        cfg.intrinsics,
        cfg.image_size,
    )
}

/// Script one sequence's control states; draws all randomness from `rng`.
fn script_motion(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> (Archetype, Vec<FrameCtl>, f64) {
    let limbs = &cfg.limbs;
    let total = cfg.t_obs + cfg.f_fut;
    let archetype = cfg.motion_mix.pick(rng.random_range(0.0..1.0));

    let base = Vec3::new(
        rng.random_range(-0.3..0.3),
        rng.random_range(-0.3..0.3),
        limbs.hip_height(),
    );
    let yaw0 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let knee_bend = rng.random_range(0.05..0.15);
    let sway: Vec<Osc> = (0..3).map(|_| Osc::draw(rng, 0.008, 0.02)).collect();
    let yaw_osc = Osc::draw(rng, 0.02, 0.05);
    let pitch_osc = Osc::draw(rng, 0.02, 0.04);
    let wiggle: Vec<Osc> = (0..6).map(|_| Osc::draw(rng, 0.008, 0.015)).collect();
    let rest = [0.30, 0.16, -0.15];

    let mut ctls = Vec::with_capacity(total);
    match archetype {
        Archetype::IdleSway => {
            for k in 0..total {
                let kf = k as f64;
                let pelvis = base + Vec3::new(sway[0].at(kf), sway[1].at(kf), sway[2].at(kf));
                let yaw = yaw0 + yaw_osc.at(kf);
                let lean = 0.04 + 0.75 * pitch_osc.at(kf);
                let t = torso(limbs, pelvis, yaw, lean);
                let wrist = [
                    rest_wrist(&t, Side::Left, rest)
                        + Vec3::new(wiggle[0].at(kf), wiggle[1].at(kf), wiggle[2].at(kf)),
                    rest_wrist(&t, Side::Right, rest)
                        + Vec3::new(wiggle[3].at(kf), wiggle[4].at(kf), wiggle[5].at(kf)),
                ];
                let object = t.chest + 0.4 * t.fwd - 0.1 * Vec3::z();
                ctls.push(FrameCtl {
                    pelvis,
                    yaw,
                    lean,
                    head_yaw: yaw + 0.5 * yaw_osc.at(kf + 3.0),
                    head_pitch: BASE_PITCH + pitch_osc.at(kf),
                    wrist,
                    object,
                });
            }
        }
        Archetype::Reach => {
            let side = if rng.random_range(0.0..1.0) < 0.5 { Side::Left } else { Side::Right };
            let t0 = rng.random_range(0.4 * cfg.t_obs as f64..0.9 * cfg.t_obs as f64);
            let dur = rng.random_range(6.0..10.0);
            let yaw_off: f64 = rng.random_range(-0.6..0.6);
            let pitch_off: f64 = rng.random_range(-0.3..0.2);
            let radius = rng.random_range(0.95..1.15) * limbs.arm_reach();
            for k in 0..total {
                let kf = k as f64;
                let s = smoothstep5((kf - t0) / dur);
                let pelvis = base
                    + Vec3::new(0.5 * sway[0].at(kf), 0.5 * sway[1].at(kf), 0.5 * sway[2].at(kf));
                let yaw = yaw0 + 0.5 * yaw_osc.at(kf);
                let lean = 0.04 + 0.25 * s;
                let t = torso(limbs, pelvis, yaw, lean);
                let reach_dir = Vec3::new(
                    (yaw + yaw_off).cos() * pitch_off.cos(),
                    (yaw + yaw_off).sin() * pitch_off.cos(),
                    pitch_off.sin(),
                );
                let sh = if side == Side::Left { t.shoulder[0] } else { t.shoulder[1] };
                let object = sh + radius * reach_dir;
                let mut wrist = [
                    rest_wrist(&t, Side::Left, rest)
                        + Vec3::new(wiggle[0].at(kf), wiggle[1].at(kf), wiggle[2].at(kf)),
                    rest_wrist(&t, Side::Right, rest)
                        + Vec3::new(wiggle[3].at(kf), wiggle[4].at(kf), wiggle[5].at(kf)),
                ];
                let i = if side == Side::Left { 0 } else { 1 };
                wrist[i] = (1.0 - s) * wrist[i] + s * object;
                ctls.push(FrameCtl {
                    pelvis: pelvis + 0.06 * s * Vec3::new(yaw.cos(), yaw.sin(), 0.0),
                    yaw,
                    lean,
                    head_yaw: yaw + 0.5 * yaw_off * s,
                    head_pitch: BASE_PITCH + pitch_osc.at(kf) - 0.3 * pitch_off * s,
                    wrist,
                    object,
                });
            }
        }
        Archetype::Carry => {
            let speed = rng.random_range(0.2..0.45) / cfg.fps;
            let bob = Osc::draw(rng, 0.01, 0.018);
            let carry = [0.28, 0.09, -0.12];
            for k in 0..total {
                let kf = k as f64;
                let fwd0 = Vec3::new(yaw0.cos(), yaw0.sin(), 0.0);
                let pelvis = base + speed * kf * fwd0 + Vec3::new(0.0, 0.0, bob.at(kf));
                let yaw = yaw0 + 0.5 * yaw_osc.at(kf);
                let lean = 0.06;
                let t = torso(limbs, pelvis, yaw, lean);
                let wrist = [
                    rest_wrist(&t, Side::Left, carry)
                        + Vec3::new(
                            0.5 * wiggle[0].at(kf),
                            0.5 * wiggle[1].at(kf),
                            0.5 * wiggle[2].at(kf),
                        ),
                    rest_wrist(&t, Side::Right, carry)
                        + Vec3::new(
                            0.5 * wiggle[3].at(kf),
                            0.5 * wiggle[4].at(kf),
                            0.5 * wiggle[5].at(kf),
                        ),
                ];
                let object = 0.5 * (wrist[0] + wrist[1]) + 0.05 * t.fwd;
                ctls.push(FrameCtl {
                    pelvis,
                    yaw,
                    lean,
                    head_yaw: yaw + 0.3 * yaw_osc.at(kf + 2.0),
                    head_pitch: BASE_PITCH + 0.5 * pitch_osc.at(kf),
                    wrist,
                    object,
                });
            }
        }
        Archetype::TurnReach => {
            let t_turn = rng.random_range(cfg.t_obs as f64 / 3.0..2.0 * cfg.t_obs as f64 / 3.0);
            let dphi = rng.random_range(1.5..2.1)
                * if rng.random_range(0.0..1.0) < 0.5 { 1.0 } else { -1.0 };
            let radius = rng.random_range(0.9..1.0) * limbs.arm_reach();
            let side = if rng.random_range(0.0..1.0) < 0.5 { Side::Left } else { Side::Right };
            for k in 0..total {
                let kf = k as f64;
                let s_head = smoothstep5((kf - t_turn) / 4.0);
                let s_hands = smoothstep5((kf - t_turn - 5.0) / 7.0);
                let s_reach = smoothstep5((kf - t_turn - 12.0) / 6.0);
                let yaw = yaw0 + dphi * s_hands;
                let head_yaw = yaw0 + dphi * s_head;
                let pelvis = base
                    + Vec3::new(0.5 * sway[0].at(kf), 0.5 * sway[1].at(kf), 0.5 * sway[2].at(kf));
                let lean = 0.04 + 0.2 * s_reach;
                let t = torso(limbs, pelvis, yaw, lean);
                let mut wrist = [
                    rest_wrist(&t, Side::Left, rest)
                        + Vec3::new(wiggle[0].at(kf), wiggle[1].at(kf), wiggle[2].at(kf)),
                    rest_wrist(&t, Side::Right, rest)
                        + Vec3::new(wiggle[3].at(kf), wiggle[4].at(kf), wiggle[5].at(kf)),
                ];
                let sh = if side == Side::Left { t.shoulder[0] } else { t.shoulder[1] };
                let object = sh + radius * t.fwd - 0.05 * Vec3::z();
                let i = if side == Side::Left { 0 } else { 1 };
                wrist[i] = (1.0 - s_reach) * wrist[i] + s_reach * object;
                ctls.push(FrameCtl {
                    pelvis,
                    yaw,
                    lean,
                    head_yaw,
                    head_pitch: BASE_PITCH + 0.5 * pitch_osc.at(kf),
                    wrist,
                    object,
                });
            }
        }
    }
    (archetype, ctls, knee_bend)
}

/// Generate one sequence, fully determined by `(cfg.seed, index)`.
pub fn generate_sequence(cfg: &GenConfig, index: usize) -> Result<Sequence> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let (archetype, ctls, knee_bend) = script_motion(cfg, &mut rng);

    let mut obs_poses = Vec::with_capacity(cfg.t_obs);
    let mut obs_hands2d = Vec::with_capacity(cfg.t_obs);
    let mut obs_features = Vec::with_capacity(cfg.t_obs);
    let mut obs_joints = Vec::with_capacity(cfg.t_obs);
    let mut fut_joints = Vec::with_capacity(cfg.f_fut);

    for (k, ctl) in ctls.iter().enumerate() {
        let jf = build_frame(&cfg.limbs, ctl, knee_bend);
        if k >= cfg.t_obs {
            fut_joints.push(jf);
            continue;
        }
        let pose = head_camera(cfg, &cfg.limbs, ctl)?;
        let mut uv = [[0.0f64; 2]; 2];
        let mut vis = [false; 2];
        for (i, side) in Side::BOTH.into_iter().enumerate() {
            let wrist = jf.position(side.wrist()).expect("generated wrists are annotated");
            vis[i] = pose.in_view(wrist);
            uv[i] = if vis[i] {
                let (px, _) = pose.project(wrist)?;
                normalize_2d(px, cfg.image_size, true)?
            } else {
                normalize_2d([0.0, 0.0], cfg.image_size, false)?
            };
        }
        let mut feat = vec![0.0; cfg.d_img];
        if cfg.feature_mode == FeatureMode::SceneEncoding {
            let obj_cam = pose.world_to_camera(ctl.object)?;
            feat[0] = obj_cam.x;
            feat[1] = obj_cam.y;
            feat[2] = obj_cam.z;
        }
        obs_poses.push(pose);
        obs_hands2d.push(HandObservation2D {
            left: uv[0],
            right: uv[1],
            left_visible: vis[0],
            right_visible: vis[1],
        });
        obs_features.push(feat);
        obs_joints.push(jf);
    }

    let seq = Sequence {
        meta: SequenceMeta {
            id: format!("seq-{index:04}"),
            activity: archetype.name().to_string(),
        },
        obs_poses,
        obs_hands2d,
        obs_features,
        obs_joints,
        fut_joints,
    };
    seq.validate()?;
    Ok(seq)
}

/// Generate `cfg.n_sequences` sequences, write them as a dataset file, and
/// report the `(sequence, side)` view-partition counts.
pub fn generate_dataset(cfg: &GenConfig, out_path: impl AsRef<Path>) -> Result<GenSummary> {
    cfg.validate()?;
    let mut seqs = Vec::with_capacity(cfg.n_sequences);
    let mut n_in = 0;
    let mut n_out = 0;
    for index in 0..cfg.n_sequences {
        let seq = generate_sequence(cfg, index)?;
        for side in Side::BOTH {
            if seq.visible_all_obs(side) {
                n_in += 1;
            } else {
                n_out += 1;
            }
        }
        seqs.push(seq);
    }
    save_dataset(out_path, &seqs)?;
    Ok(GenSummary {
        n_sequences: cfg.n_sequences,
        n_in_view_pairs: n_in,
        n_out_of_view_pairs: n_out,
    })
}
