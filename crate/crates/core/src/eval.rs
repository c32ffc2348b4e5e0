//! Forecasting, baselines, metrics, and report assembly.
//!
//! Displacement metrics (ADE, FDE) act on wrist trajectories; the MPJPE
//! family acts on hand-joint blocks with annotation masks; MPJVE compares
//! frame-to-frame velocities. Every (sequence, side) pair lands in the
//! in-view or out-of-view partition and, when partly hidden, in one of five
//! out-of-view-ratio intervals. A report aggregates per-pair values into
//! partition cells, the ratio table, and a per-future-step curve.

use std::io::{BufWriter, Write as _};
use std::path::Path;

use candle_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{body, DatasetStats, JointFrame, Sequence, Side, JOINT_COUNT};
use crate::diffusion::sample;
use crate::error::{Error, Result};
use crate::geometry::{rot_z, CanonicalTransform, Vec3};
use crate::training::{make_batch, Trainer};

/// Upper bounds of the five out-of-view-ratio intervals.
pub const GAMMA_BOUNDS: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

const REPORT_SCHEMA: &str = "report.v1";

fn norm3(a: Vec3, b: Vec3) -> f64 {
    (a - b).norm()
}

/// Mean Euclidean displacement over a trajectory.
pub fn ade(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Contract(format!(
            "displacement lengths disagree: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    let sum: f64 = pred.iter().zip(gt).map(|(p, g)| norm3(*p, *g)).sum();
    Ok(sum / pred.len() as f64)
}

/// Euclidean displacement at the final frame.
pub fn fde(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Contract(format!(
            "displacement lengths disagree: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    Ok(norm3(pred[pred.len() - 1], gt[gt.len() - 1]))
}

fn check_block(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>], mask: &[Vec<bool>]) -> Result<()> {
    if pred.len() != gt.len() || pred.len() != mask.len() {
        return Err(Error::Contract("joint-block frame counts disagree".into()));
    }
    for ((p, g), m) in pred.iter().zip(gt).zip(mask) {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::Contract("joint-block widths disagree".into()));
        }
    }
    Ok(())
}

/// Mean joint error over mask-true entries of all frames; `None` when the
/// mask selects nothing.
pub fn mpjpe(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>], mask: &[Vec<bool>]) -> Result<Option<f64>> {
    check_block(pred, gt, mask)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((p, g), m) in pred.iter().zip(gt).zip(mask) {
        for j in 0..p.len() {
            if m[j] {
                sum += norm3(p[j], g[j]);
                count += 1;
            }
        }
    }
    Ok((count > 0).then(|| sum / count as f64))
}

/// [`mpjpe`] restricted to the final frame.
pub fn mpjpe_f(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>], mask: &[Vec<bool>]) -> Result<Option<f64>> {
    check_block(pred, gt, mask)?;
    if pred.is_empty() {
        return Err(Error::Contract("final-frame metric on an empty block".into()));
    }
    let last = pred.len() - 1;
    mpjpe(&pred[last..], &gt[last..], &mask[last..])
}

/// Mean norm of the frame-to-frame velocity error, in meters per second.
pub fn mpjve(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>], fps: f64) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Contract("velocity-block frame counts disagree".into()));
    }
    if pred.len() < 2 {
        return Err(Error::Contract(format!(
            "velocity needs at least 2 frames, got {}",
            pred.len()
        )));
    }
    let joints = pred[0].len();
    if pred.iter().chain(gt).any(|f| f.len() != joints) {
        return Err(Error::Contract("velocity-block widths disagree".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for k in 1..pred.len() {
        for j in 0..joints {
            let vp = (pred[k][j] - pred[k - 1][j]) * fps;
            let vg = (gt[k][j] - gt[k - 1][j]) * fps;
            sum += (vp - vg).norm();
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Hand-pose error after subtracting each side's wrist (joint 0 of the hand
/// block) from prediction and ground truth; `None` when the wrist or every
/// non-wrist joint is unannotated.
pub fn wrist_relative_mpjpe(
    pred_hand: &[Vec3],
    gt_hand: &[Vec3],
    mask: &[bool],
) -> Result<Option<f64>> {
    if pred_hand.len() != gt_hand.len() || pred_hand.len() != mask.len() || pred_hand.is_empty() {
        return Err(Error::Contract("hand-block widths disagree".into()));
    }
    if !mask[0] {
        return Ok(None);
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for j in 1..pred_hand.len() {
        if mask[j] {
            sum += norm3(pred_hand[j] - pred_hand[0], gt_hand[j] - gt_hand[0]);
            count += 1;
        }
    }
    Ok((count > 0).then(|| sum / count as f64))
}

/// Fraction of observation frames with the hand out of view.
pub fn oov_ratio(seq: &Sequence, side: Side) -> f64 {
    seq.hidden_obs_count(side) as f64 / seq.t_obs() as f64
}

/// Interval index for a ratio: the five half-open intervals (0, 0.2],
/// (0.2, 0.4], ..., (0.8, 1.0]. A fully in-view pair (ratio 0) belongs to
/// no interval.
pub fn bin_gamma(gamma: f64) -> Option<usize> {
    if gamma <= 0.0 {
        return None;
    }
    GAMMA_BOUNDS.iter().position(|&hi| gamma <= hi)
}

/// Constant prediction: the training mean pose re-anchored to the last
/// observation camera (head moved to the camera position, facing turned to
/// the camera heading), held for all observation and future frames.
pub fn baseline_static(seq: &Sequence, stats: &DatasetStats) -> Result<Vec<JointFrame>> {
    if stats.mean_pose.len() != JOINT_COUNT {
        return Err(Error::Contract(format!(
            "mean pose has {} joints, expected {JOINT_COUNT}",
            stats.mean_pose.len()
        )));
    }
    let last = seq
        .obs_poses
        .last()
        .ok_or_else(|| Error::Contract("sequence has no observation frames".into()))?;
    let ct = CanonicalTransform::from_reference(last)?;
    let cam = last.position();
    let head = stats.mean_position(body::HEAD);
    let turn = rot_z(-ct.yaw);
    let mut frame = JointFrame::zeros();
    for j in 0..JOINT_COUNT {
        let p = cam + turn * (stats.mean_position(j) - head);
        frame.set(j, p);
    }
    Ok(vec![frame; seq.t_obs() + seq.f_fut()])
}

/// Constant-velocity extrapolation: the step from the last two positions is
/// repeated for every future frame.
pub fn baseline_cvm(past: &[Vec3], f_fut: usize) -> Result<Vec<Vec3>> {
    if past.len() < 2 {
        return Err(Error::Contract(format!(
            "constant-velocity needs at least 2 past positions, got {}",
            past.len()
        )));
    }
    let last = past[past.len() - 1];
    let v = last - past[past.len() - 2];
    Ok((1..=f_fut).map(|k| last + v * k as f64).collect())
}

/// Evaluation settings: the sampling seed and the capture rate used by the
/// velocity metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub seed: u64,
    pub fps: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { seed: 0, fps: 10.0 }
    }
}

/// The forecaster under evaluation.
pub enum Method<'a> {
    /// One diffusion sample per sequence.
    Model(&'a Trainer),
    /// Re-anchored training mean pose.
    Static(&'a DatasetStats),
    /// Constant velocity from the last two ground-truth wrist positions
    /// (privileged: real inputs carry no past 3D hands).
    ConstantVelocity,
    /// Ground truth echoed back; a zero-error sanity mode.
    GroundTruth,
}

impl Method<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Model(_) => "model",
            Method::Static(_) => "static",
            Method::ConstantVelocity => "cvm",
            Method::GroundTruth => "ground-truth",
        }
    }

    fn oracle_past(&self) -> bool {
        matches!(self, Method::ConstantVelocity | Method::GroundTruth)
    }
}

/// One aggregated metric: mean over defined samples, their count, and how
/// many samples were undefined (excluded).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub mean: Option<f64>,
    pub count: usize,
    pub undefined: usize,
}

/// Metrics for one (side, view) slice of the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionRow {
    /// "left", "right", or "pooled".
    pub side: String,
    /// "in_view", "out_of_view", or "all".
    pub view: String,
    pub ade: MetricCell,
    pub fde: MetricCell,
    pub mpjpe: MetricCell,
    pub mpjpe_f: MetricCell,
    pub mpjve: MetricCell,
    /// Wrist-relative hand-pose error over observation frames.
    pub wr_mpjpe_obs: MetricCell,
}

/// Displacement metrics for one out-of-view-ratio interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaRow {
    pub lo: f64,
    pub hi: f64,
    pub ade: MetricCell,
    pub fde: MetricCell,
}

/// Full evaluation output for one method on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema: String,
    pub method: String,
    /// True when the method consumed ground-truth observation data that a
    /// deployed forecaster would not have.
    pub oracle_past: bool,
    pub fps: f64,
    pub seed: u64,
    pub n_sequences: usize,
    /// 3 sides x 3 views.
    pub partitions: Vec<PartitionRow>,
    /// Five out-of-view-ratio intervals.
    pub gamma: Vec<GammaRow>,
    /// Mean wrist displacement at each future step, pooled over all pairs.
    pub per_timestep_ade: Vec<Option<f64>>,
    /// Fraction of (observation frame, side) visibility flags predicted
    /// correctly at threshold 0.5; only the diffusion model emits one.
    pub visibility_accuracy: Option<f64>,
    pub visibility_count: usize,
}

/// Per-(sequence, side) metric values before aggregation.
struct PairOutcome {
    side: Side,
    in_view: bool,
    gamma: f64,
    ade: Option<f64>,
    fde: Option<f64>,
    mpjpe: Option<f64>,
    mpjpe_f: Option<f64>,
    mpjve: Option<f64>,
    wr_mpjpe_obs: Option<f64>,
    /// Wrist displacement per future step, when the wrist is annotated.
    per_step: Option<Vec<f64>>,
}

/// Draw one diffusion sample for a sequence and return the full predicted
/// trajectory plus per-observation-frame visibility probabilities. The noise
/// stream is derived from `(seed, stream)` so per-sequence sampling is
/// reproducible regardless of evaluation order.
pub fn forecast(
    trainer: &Trainer,
    seq: &Sequence,
    seed: u64,
    stream: u64,
) -> Result<(Vec<Vec<Vec3>>, Vec<[f64; 2]>)> {
    let device = trainer.model.device();
    let batch = make_batch(&[seq], device)?;
    let (_, tf, w3j) = batch.x0.dims3()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut draw = |n: usize| -> Result<Tensor> {
        let host: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        Ok(Tensor::from_vec(host, (1, tf, w3j), device)?)
    };
    let init = draw(tf * w3j)?;
    let (x, vis) = sample(
        &trainer.schedule,
        |x_n, n| trainer.model.forward(x_n, &batch.cond, &[n]),
        &init,
        || draw(tf * w3j),
    )?;
    let flat = x.flatten_all()?.to_vec1::<f64>()?;
    let j = w3j / 3;
    let frames = (0..tf)
        .map(|k| {
            (0..j)
                .map(|jj| {
                    let base = k * w3j + 3 * jj;
                    Vec3::new(flat[base], flat[base + 1], flat[base + 2])
                })
                .collect()
        })
        .collect();
    let vis_host = vis.to_vec3::<f64>()?;
    let vis_frames = vis_host[0].iter().map(|row| [row[0], row[1]]).collect();
    Ok((frames, vis_frames))
}

/// Predicted full trajectory for one sequence under a method.
fn predict(
    method: &Method,
    seq: &Sequence,
    index: usize,
    cfg: &EvalConfig,
) -> Result<(Vec<Vec<Vec3>>, Option<Vec<[f64; 2]>>)> {
    let tf = seq.t_obs() + seq.f_fut();
    let gt_frame = |k: usize| -> Vec<Vec3> {
        let frame =
            if k < seq.t_obs() { &seq.obs_joints[k] } else { &seq.fut_joints[k - seq.t_obs()] };
        (0..JOINT_COUNT).map(|j| frame.position(j).unwrap_or_else(Vec3::zeros)).collect()
    };
    match method {
        Method::Model(trainer) => {
            let (frames, vis) = forecast(trainer, seq, cfg.seed, index as u64)?;
            Ok((frames, Some(vis)))
        }
        Method::GroundTruth => Ok(((0..tf).map(gt_frame).collect(), None)),
        Method::Static(stats) => {
            let frames = baseline_static(seq, stats)?;
            let frames = (0..tf)
                .map(|k| (0..JOINT_COUNT).map(|j| frames[k].position(j).unwrap()).collect())
                .collect();
            Ok((frames, None))
        }
        Method::ConstantVelocity => {
            // Observation frames echo ground truth (the privileged past);
            // each future hand follows its wrist's constant-velocity path
            // rigidly, and the body stays at the last observed frame.
            let mut frames: Vec<Vec<Vec3>> = (0..seq.t_obs()).map(gt_frame).collect();
            let last = frames[seq.t_obs() - 1].clone();
            let mut paths = Vec::new();
            for side in Side::BOTH {
                let past: Vec<Vec3> = (0..seq.t_obs())
                    .filter_map(|k| seq.obs_joints[k].position(side.wrist()))
                    .collect();
                paths.push(baseline_cvm(&past, seq.f_fut())?);
            }
            for k in 0..seq.f_fut() {
                let mut frame = last.clone();
                for (i, side) in Side::BOTH.into_iter().enumerate() {
                    let delta = paths[i][k] - last[side.wrist()];
                    for j in side.hand_range() {
                        frame[j] += delta;
                    }
                }
                frames.push(frame);
            }
            Ok((frames, None))
        }
    }
}

fn eval_pair(
    seq: &Sequence,
    pred: &[Vec<Vec3>],
    side: Side,
    fps: f64,
) -> Result<PairOutcome> {
    let t_obs = seq.t_obs();
    let wrist = side.wrist();
    let range = side.hand_range();

    let gt_wrists: Vec<Option<Vec3>> =
        seq.fut_joints.iter().map(|f| f.position(wrist)).collect();
    let all_wrists = gt_wrists.iter().all(Option::is_some);
    let pred_wrists: Vec<Vec3> = (0..seq.f_fut()).map(|k| pred[t_obs + k][wrist]).collect();
    let (ade_v, fde_v, per_step) = if all_wrists {
        let gt: Vec<Vec3> = gt_wrists.into_iter().map(Option::unwrap).collect();
        let steps = pred_wrists.iter().zip(&gt).map(|(p, g)| norm3(*p, *g)).collect();
        (Some(ade(&pred_wrists, &gt)?), Some(fde(&pred_wrists, &gt)?), Some(steps))
    } else {
        (None, None, None)
    };

    let pred_hand: Vec<Vec<Vec3>> =
        (0..seq.f_fut()).map(|k| pred[t_obs + k][range.clone()].to_vec()).collect();
    let gt_hand: Vec<Vec<Vec3>> = seq
        .fut_joints
        .iter()
        .map(|f| range.clone().map(|j| f.position(j).unwrap_or_else(Vec3::zeros)).collect())
        .collect();
    let hand_mask: Vec<Vec<bool>> =
        seq.fut_joints.iter().map(|f| f.mask[range.clone()].to_vec()).collect();
    let mpjpe_v = mpjpe(&pred_hand, &gt_hand, &hand_mask)?;
    let mpjpe_f_v = mpjpe_f(&pred_hand, &gt_hand, &hand_mask)?;
    let full_mask = hand_mask.iter().all(|m| m.iter().all(|&b| b));
    let mpjve_v = if full_mask && pred_hand.len() >= 2 {
        Some(mpjve(&pred_hand, &gt_hand, fps)?)
    } else {
        None
    };

    let mut wr_sum = 0.0;
    let mut wr_count = 0usize;
    for k in 0..t_obs {
        let p: Vec<Vec3> = pred[k][range.clone()].to_vec();
        let g: Vec<Vec3> = range
            .clone()
            .map(|j| seq.obs_joints[k].position(j).unwrap_or_else(Vec3::zeros))
            .collect();
        let m = seq.obs_joints[k].mask[range.clone()].to_vec();
        if let Some(v) = wrist_relative_mpjpe(&p, &g, &m)? {
            wr_sum += v;
            wr_count += 1;
        }
    }
    let wr = (wr_count > 0).then(|| wr_sum / wr_count as f64);

    Ok(PairOutcome {
        side,
        in_view: seq.visible_all_obs(side),
        gamma: oov_ratio(seq, side),
        ade: ade_v,
        fde: fde_v,
        mpjpe: mpjpe_v,
        mpjpe_f: mpjpe_f_v,
        mpjve: mpjve_v,
        wr_mpjpe_obs: wr,
        per_step,
    })
}

fn cell<'a>(values: impl Iterator<Item = &'a Option<f64>>) -> MetricCell {
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut undefined = 0usize;
    for v in values {
        match v {
            Some(x) => {
                sum += x;
                count += 1;
            }
            None => undefined += 1,
        }
    }
    MetricCell { mean: (count > 0).then(|| sum / count as f64), count, undefined }
}

/// Compute every metric on every (sequence, side) pair and aggregate.
pub fn evaluate(method: &Method, dataset: &[Sequence], cfg: &EvalConfig) -> Result<MetricsReport> {
    if dataset.is_empty() {
        return Err(Error::Contract("evaluation dataset is empty".into()));
    }
    if !(cfg.fps.is_finite() && cfg.fps > 0.0) {
        return Err(Error::InvalidConfig("fps must be positive".into()));
    }
    let mut pairs = Vec::with_capacity(dataset.len() * 2);
    let mut vis_correct = 0usize;
    let mut vis_total = 0usize;
    for (i, seq) in dataset.iter().enumerate() {
        let (pred, vis) = predict(method, seq, i, cfg)?;
        if pred.len() != seq.t_obs() + seq.f_fut() {
            return Err(Error::Contract("prediction frame count mismatch".into()));
        }
        for side in Side::BOTH {
            pairs.push(eval_pair(seq, &pred, side, cfg.fps)?);
        }
        if let Some(vis) = vis {
            for (t, probs) in vis.iter().enumerate() {
                let truth =
                    [seq.obs_hands2d[t].left_visible, seq.obs_hands2d[t].right_visible];
                for i in 0..2 {
                    if (probs[i] > 0.5) == truth[i] {
                        vis_correct += 1;
                    }
                    vis_total += 1;
                }
            }
        }
    }

    let side_sel = |name: &str, p: &PairOutcome| match name {
        "left" => p.side == Side::Left,
        "right" => p.side == Side::Right,
        _ => true,
    };
    let view_sel = |name: &str, p: &PairOutcome| match name {
        "in_view" => p.in_view,
        "out_of_view" => !p.in_view,
        _ => true,
    };
    let mut partitions = Vec::new();
    for side in ["left", "right", "pooled"] {
        for view in ["in_view", "out_of_view", "all"] {
            let sel: Vec<&PairOutcome> =
                pairs.iter().filter(|p| side_sel(side, p) && view_sel(view, p)).collect();
            partitions.push(PartitionRow {
                side: side.to_string(),
                view: view.to_string(),
                ade: cell(sel.iter().map(|p| &p.ade)),
                fde: cell(sel.iter().map(|p| &p.fde)),
                mpjpe: cell(sel.iter().map(|p| &p.mpjpe)),
                mpjpe_f: cell(sel.iter().map(|p| &p.mpjpe_f)),
                mpjve: cell(sel.iter().map(|p| &p.mpjve)),
                wr_mpjpe_obs: cell(sel.iter().map(|p| &p.wr_mpjpe_obs)),
            });
        }
    }

    let mut gamma = Vec::new();
    for (idx, &hi) in GAMMA_BOUNDS.iter().enumerate() {
        let lo = if idx == 0 { 0.0 } else { GAMMA_BOUNDS[idx - 1] };
        let sel: Vec<&PairOutcome> =
            pairs.iter().filter(|p| bin_gamma(p.gamma) == Some(idx)).collect();
        gamma.push(GammaRow {
            lo,
            hi,
            ade: cell(sel.iter().map(|p| &p.ade)),
            fde: cell(sel.iter().map(|p| &p.fde)),
        });
    }

    let f_fut = dataset[0].f_fut();
    let per_timestep_ade = (0..f_fut)
        .map(|k| {
            let vals: Vec<Option<f64>> =
                pairs.iter().map(|p| p.per_step.as_ref().map(|s| s[k])).collect();
            cell(vals.iter()).mean
        })
        .collect();

    Ok(MetricsReport {
        schema: REPORT_SCHEMA.to_string(),
        method: method.name().to_string(),
        oracle_past: method.oracle_past(),
        fps: cfg.fps,
        seed: cfg.seed,
        n_sequences: dataset.len(),
        partitions,
        gamma,
        per_timestep_ade,
        visibility_accuracy: (vis_total > 0).then(|| vis_correct as f64 / vis_total as f64),
        visibility_count: vis_total,
    })
}

/// Write a report as a single JSON record.
pub fn save_report(path: impl AsRef<Path>, report: &MetricsReport) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, report)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Read a report written by [`save_report`].
pub fn load_report(path: impl AsRef<Path>) -> Result<MetricsReport> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let report: MetricsReport = serde_json::from_str(text.trim_end())?;
    if report.schema != REPORT_SCHEMA {
        return Err(Error::data(format!("unsupported report schema {:?}", report.schema)));
    }
    Ok(report)
}

fn fmt_cell(c: &MetricCell) -> String {
    match c.mean {
        Some(v) => format!("{v:>9.4}"),
        None => format!("{:>9}", "-"),
    }
}

/// Human-readable table of the partition and interval cells.
pub fn render_table(report: &MetricsReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "method: {}{}   sequences: {}   fps: {}\n",
        report.method,
        if report.oracle_past { " (oracle past)" } else { "" },
        report.n_sequences,
        report.fps
    ));
    out.push_str(&format!(
        "{:<8}{:<13}{:>9}{:>9}{:>9}{:>9}{:>9}{:>9}{:>7}\n",
        "side", "view", "ADE", "FDE", "MPJPE", "MPJPE-F", "MPJVE", "WR-OBS", "n"
    ));
    for row in &report.partitions {
        out.push_str(&format!(
            "{:<8}{:<13}{}{}{}{}{}{}{:>7}\n",
            row.side,
            row.view,
            fmt_cell(&row.ade),
            fmt_cell(&row.fde),
            fmt_cell(&row.mpjpe),
            fmt_cell(&row.mpjpe_f),
            fmt_cell(&row.mpjve),
            fmt_cell(&row.wr_mpjpe_obs),
            row.ade.count + row.ade.undefined
        ));
    }
    out.push_str("\nout-of-view ratio intervals (pairs with some hidden frames)\n");
    out.push_str(&format!(
        "{:<13}{:>9}{:>9}{:>7}\n",
        "interval", "ADE", "FDE", "n"
    ));
    for row in &report.gamma {
        out.push_str(&format!(
            "({:.1}, {:.1}] {}{}{:>7}\n",
            row.lo,
            row.hi,
            fmt_cell(&row.ade),
            fmt_cell(&row.fde),
            row.ade.count + row.ade.undefined
        ));
    }
    if let Some(acc) = report.visibility_accuracy {
        out.push_str(&format!(
            "\nvisibility accuracy: {:.4} over {} flags\n",
            acc, report.visibility_count
        ));
    }
    out
}

/// Counts consistency against the view partition helper.
pub fn partition_counts(report: &MetricsReport) -> (usize, usize) {
    let find = |view: &str| {
        report
            .partitions
            .iter()
            .find(|r| r.side == "pooled" && r.view == view)
            .map(|r| r.ade.count + r.ade.undefined)
            .unwrap_or(0)
    };
    (find("in_view"), find("out_of_view"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{compute_stats, partition_by_view, HAND_JOINT_COUNT, LEFT_WRIST};
    use crate::denoiser::DenoiserConfig;
    use crate::synthgen::{generate_sequence, FeatureMode, GenConfig, MotionMix};
    use crate::training::TrainConfig;
    use candle_core::Device;
    use rand::{Rng, SeedableRng};

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    fn rand_traj(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n).map(|_| v(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))).collect()
    }

    #[test]
    fn displacement_examples() {
        let a = vec![v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0)];
        let b = vec![v(0.0, 0.0, 0.0), v(0.0, 0.0, 0.0)];
        assert_eq!(ade(&a, &a).unwrap(), 0.0);
        assert_eq!(fde(&a, &a).unwrap(), 0.0);
        assert_eq!(ade(&a, &b).unwrap(), 0.5);
        assert_eq!(fde(&a, &b).unwrap(), 1.0);
        assert!(ade(&a, &b[..1]).is_err());
        assert!(fde(&a[..0], &b[..0]).is_err());
    }

    /// Brute-force loop oracles on randomized inputs.
    #[test]
    fn metrics_match_brute_force_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let f = rng.random_range(1..6);
            let j = rng.random_range(1..8);
            let pred = rand_traj(&mut rng, f);
            let gt = rand_traj(&mut rng, f);

            let mut sum = 0.0;
            for k in 0..f {
                let dx = pred[k].x - gt[k].x;
                let dy = pred[k].y - gt[k].y;
                let dz = pred[k].z - gt[k].z;
                sum += (dx * dx + dy * dy + dz * dz).sqrt();
            }
            assert!((ade(&pred, &gt).unwrap() - sum / f as f64).abs() < 1e-12);
            let dx = pred[f - 1].x - gt[f - 1].x;
            let dy = pred[f - 1].y - gt[f - 1].y;
            let dz = pred[f - 1].z - gt[f - 1].z;
            assert!((fde(&pred, &gt).unwrap() - (dx * dx + dy * dy + dz * dz).sqrt()).abs() < 1e-12);

            let pf: Vec<Vec<Vec3>> = (0..f).map(|_| rand_traj(&mut rng, j)).collect();
            let gf: Vec<Vec<Vec3>> = (0..f).map(|_| rand_traj(&mut rng, j)).collect();
            let mask: Vec<Vec<bool>> =
                (0..f).map(|_| (0..j).map(|_| rng.random_range(0..3) > 0).collect()).collect();
            let mut sum = 0.0;
            let mut count = 0usize;
            for k in 0..f {
                for jj in 0..j {
                    if mask[k][jj] {
                        let dx = pf[k][jj].x - gf[k][jj].x;
                        let dy = pf[k][jj].y - gf[k][jj].y;
                        let dz = pf[k][jj].z - gf[k][jj].z;
                        sum += (dx * dx + dy * dy + dz * dz).sqrt();
                        count += 1;
                    }
                }
            }
            match mpjpe(&pf, &gf, &mask).unwrap() {
                Some(got) => assert!((got - sum / count as f64).abs() < 1e-12),
                None => assert_eq!(count, 0),
            }

            let ph = &pf[0];
            let gh = &gf[0];
            let hm = &mask[0];
            match wrist_relative_mpjpe(ph, gh, hm).unwrap() {
                Some(got) => {
                    let mut sum = 0.0;
                    let mut count = 0usize;
                    for jj in 1..j {
                        if hm[jj] {
                            let dx = (ph[jj].x - ph[0].x) - (gh[jj].x - gh[0].x);
                            let dy = (ph[jj].y - ph[0].y) - (gh[jj].y - gh[0].y);
                            let dz = (ph[jj].z - ph[0].z) - (gh[jj].z - gh[0].z);
                            sum += (dx * dx + dy * dy + dz * dz).sqrt();
                            count += 1;
                        }
                    }
                    assert!((got - sum / count as f64).abs() < 1e-12);
                }
                None => assert!(!hm[0] || hm[1..].iter().all(|&b| !b)),
            }
        }
    }

    /// fde == F*ade - (F-1)*ade_prefix when only the last frame differs in
    /// the suffix sense: checked by direct arithmetic on random cases.
    #[test]
    fn fde_ade_arithmetic_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let f = rng.random_range(2..6);
            let pred = rand_traj(&mut rng, f);
            let gt = rand_traj(&mut rng, f);
            let full = ade(&pred, &gt).unwrap();
            let prefix = ade(&pred[..f - 1], &gt[..f - 1]).unwrap();
            let last = fde(&pred, &gt).unwrap();
            assert!((last - (f as f64 * full - (f - 1) as f64 * prefix)).abs() < 1e-9);
            assert!(last >= 0.0);
        }
    }

    #[test]
    fn mpjpe_examples() {
        let pred = vec![vec![v(0.02, 0.0, 0.0); 4]; 3];
        let gt = vec![vec![v(0.0, 0.0, 0.0); 4]; 3];
        let mask = vec![vec![true; 4]; 3];
        assert!((mpjpe(&pred, &gt, &mask).unwrap().unwrap() - 0.02).abs() < 1e-15);
        assert!((mpjpe_f(&pred, &gt, &mask).unwrap().unwrap() - 0.02).abs() < 1e-15);
        assert_eq!(mpjpe(&gt, &gt, &mask).unwrap().unwrap(), 0.0);
        let empty = vec![vec![false; 4]; 3];
        assert_eq!(mpjpe(&pred, &gt, &empty).unwrap(), None);
        assert!(mpjpe(&pred[..2], &gt, &mask).is_err());
    }

    #[test]
    fn mpjve_examples() {
        let still = vec![vec![v(5.0, 1.0, 0.0)]; 4];
        assert_eq!(mpjve(&still, &still, 10.0).unwrap(), 0.0);

        // A constant positional offset has no velocity signature.
        let shifted: Vec<Vec<Vec3>> =
            still.iter().map(|f| vec![f[0] + v(0.3, -0.2, 0.9)]).collect();
        assert_eq!(mpjve(&shifted, &still, 10.0).unwrap(), 0.0);

        let moving: Vec<Vec<Vec3>> =
            (0..4).map(|k| vec![v(0.1 * k as f64, 0.0, 0.0)]).collect();
        let frozen = vec![vec![v(0.0, 0.0, 0.0)]; 4];
        assert!((mpjve(&frozen, &moving, 10.0).unwrap() - 1.0).abs() < 1e-12);

        assert!(mpjve(&still[..1], &still[..1], 10.0).is_err());
    }

    #[test]
    fn wrist_relative_translation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let gt = rand_traj(&mut rng, 21);
        let shift = v(0.7, -1.1, 0.4);
        let pred: Vec<Vec3> = gt.iter().map(|p| p + shift).collect();
        let mask = vec![true; 21];
        assert!(wrist_relative_mpjpe(&pred, &gt, &mask).unwrap().unwrap() < 1e-12);
        assert_eq!(wrist_relative_mpjpe(&gt, &gt, &mask).unwrap().unwrap(), 0.0);

        let mut no_wrist = mask.clone();
        no_wrist[0] = false;
        assert_eq!(wrist_relative_mpjpe(&pred, &gt, &no_wrist).unwrap(), None);
    }

    #[test]
    fn gamma_binning_boundaries() {
        assert_eq!(bin_gamma(0.0), None);
        assert_eq!(bin_gamma(4.0 / 20.0), Some(0));
        assert_eq!(bin_gamma(0.21), Some(1));
        assert_eq!(bin_gamma(0.4), Some(1));
        assert_eq!(bin_gamma(0.6), Some(2));
        assert_eq!(bin_gamma(0.8), Some(3));
        assert_eq!(bin_gamma(1.0), Some(4));
        assert_eq!(bin_gamma(20.0 / 20.0), Some(4));
    }

    fn toy_dataset(n: usize, mix: MotionMix) -> Vec<Sequence> {
        let cfg = GenConfig {
            n_sequences: n,
            d_img: 4,
            motion_mix: mix,
            feature_mode: FeatureMode::Zeros,
            ..GenConfig::default()
        };
        (0..n)
            .map(|i| {
                let mut s = generate_sequence(&cfg, i).unwrap();
                s.canonicalize().unwrap();
                s
            })
            .collect()
    }

    fn idle_mix() -> MotionMix {
        MotionMix { reach: 0.0, carry: 0.0, turn_reach: 0.0, idle_sway: 1.0 }
    }

    fn turn_mix() -> MotionMix {
        MotionMix { reach: 0.0, carry: 0.0, turn_reach: 1.0, idle_sway: 0.0 }
    }

    #[test]
    fn static_baseline_anchors_to_the_last_camera() {
        let data = toy_dataset(3, idle_mix());
        let stats = compute_stats(&data).unwrap();
        let pred = baseline_static(&data[0], &stats).unwrap();
        assert_eq!(pred.len(), data[0].t_obs() + data[0].f_fut());
        // Time-constant prediction.
        assert_eq!(pred[data[0].t_obs()], pred[pred.len() - 1]);
        assert_eq!(pred[0], pred[pred.len() - 1]);
        // The head lands exactly on the camera.
        let cam = data[0].obs_poses.last().unwrap().position();
        let head = pred[0].position(body::HEAD).unwrap();
        assert!((head - cam).norm() < 1e-12);

        // Two sequences sharing a final camera get identical predictions.
        let mut other = data[1].clone();
        *other.obs_poses.last_mut().unwrap() = data[0].obs_poses.last().unwrap().clone();
        let again = baseline_static(&other, &stats).unwrap();
        assert_eq!(again[0], pred[0]);

        // A single constant-pose training set comes back re-anchored: the
        // mean equals the pose, so inter-joint offsets are preserved.
        let frozen = {
            let mut s = data[2].clone();
            let f = s.obs_joints[0].clone();
            for fr in s.obs_joints.iter_mut().chain(&mut s.fut_joints) {
                *fr = f.clone();
            }
            s
        };
        let fstats = compute_stats(&[frozen.clone()]).unwrap();
        let fpred = baseline_static(&frozen, &fstats).unwrap();
        let head0 = frozen.obs_joints[0].position(body::HEAD).unwrap();
        let wrist0 = frozen.obs_joints[0].position(LEFT_WRIST).unwrap();
        let dist_gt = (wrist0 - head0).norm();
        let dist_pred = (fpred[0].position(LEFT_WRIST).unwrap()
            - fpred[0].position(body::HEAD).unwrap())
        .norm();
        assert!((dist_gt - dist_pred).abs() < 1e-9);
    }

    #[test]
    fn cvm_examples() {
        let past = vec![v(0.0, 0.0, 0.0), v(0.1, 0.0, 0.0)];
        let pred = baseline_cvm(&past, 3).unwrap();
        let want = [v(0.2, 0.0, 0.0), v(0.3, 0.0, 0.0), v(0.4, 0.0, 0.0)];
        for (p, w) in pred.iter().zip(want) {
            assert!((p - w).norm() < 1e-15);
        }
        let frozen = vec![v(1.0, 2.0, 3.0); 5];
        for p in baseline_cvm(&frozen, 4).unwrap() {
            assert_eq!(p, frozen[0]);
        }
        // Doubling the step doubles every displacement.
        let fast = vec![v(0.0, 0.0, 0.0), v(0.2, 0.0, 0.0)];
        let slow_d = baseline_cvm(&past, 3).unwrap();
        let fast_d = baseline_cvm(&fast, 3).unwrap();
        for (s, f) in slow_d.iter().zip(&fast_d) {
            assert!((f.x - 2.0 * s.x).abs() < 1e-12);
        }
        assert!(baseline_cvm(&past[..1], 3).is_err());
    }

    #[test]
    fn ground_truth_as_prediction_scores_zero() {
        let data = toy_dataset(3, MotionMix::default());
        let report = evaluate(&Method::GroundTruth, &data, &EvalConfig::default()).unwrap();
        for row in &report.partitions {
            for cell in [&row.ade, &row.fde, &row.mpjpe, &row.mpjpe_f, &row.mpjve, &row.wr_mpjpe_obs]
            {
                if let Some(m) = cell.mean {
                    assert!(m.abs() < 1e-12, "{}/{} nonzero: {m}", row.side, row.view);
                }
                assert_eq!(cell.undefined, 0);
            }
        }
        for step in &report.per_timestep_ade {
            assert!(step.unwrap().abs() < 1e-12);
        }
        assert_eq!(report.visibility_accuracy, None);
        assert!(report.oracle_past);
    }

    #[test]
    fn report_counts_and_pooling_are_consistent() {
        let data = toy_dataset(6, MotionMix::default());
        let part = partition_by_view(&data);
        let stats = compute_stats(&data).unwrap();
        let report = evaluate(&Method::Static(&stats), &data, &EvalConfig::default()).unwrap();

        let (in_n, out_n) = partition_counts(&report);
        assert_eq!(in_n, part.in_view.len());
        assert_eq!(out_n, part.out_of_view.len());

        // Pooled "all" equals the sample-weighted mean of the view cells.
        for side in ["left", "right", "pooled"] {
            let get = |view: &str| {
                report
                    .partitions
                    .iter()
                    .find(|r| r.side == side && r.view == view)
                    .unwrap()
                    .clone()
            };
            let (iv, ov, all) = (get("in_view"), get("out_of_view"), get("all"));
            for pick in [
                |r: &PartitionRow| r.ade,
                |r: &PartitionRow| r.fde,
                |r: &PartitionRow| r.mpjpe,
                |r: &PartitionRow| r.mpjve,
            ] {
                let (a, b, c) = (pick(&iv), pick(&ov), pick(&all));
                assert_eq!(a.count + b.count, c.count);
                if c.count > 0 {
                    let weighted = (a.mean.unwrap_or(0.0) * a.count as f64
                        + b.mean.unwrap_or(0.0) * b.count as f64)
                        / c.count as f64;
                    assert!((weighted - c.mean.unwrap()).abs() < 1e-9);
                }
            }
        }

        // Interval counts cover exactly the partly-hidden pairs.
        let hidden: usize = report.gamma.iter().map(|g| g.ade.count + g.ade.undefined).sum();
        assert_eq!(hidden, part.out_of_view.len());
    }

    /// Both baselines produce finite, well-formed reports on a set that
    /// always leaves the view; one cell is recomputed by explicit loops.
    #[test]
    fn baselines_are_finite_on_a_turning_set() {
        let data = toy_dataset(4, turn_mix());
        let stats = compute_stats(&data).unwrap();
        let cfg = EvalConfig::default();
        let s_report = evaluate(&Method::Static(&stats), &data, &cfg).unwrap();
        let c_report = evaluate(&Method::ConstantVelocity, &data, &cfg).unwrap();
        for report in [&s_report, &c_report] {
            let all = report
                .partitions
                .iter()
                .find(|r| r.side == "pooled" && r.view == "all")
                .unwrap();
            assert!(all.ade.mean.unwrap().is_finite());
            assert!(all.fde.mean.unwrap().is_finite());
            assert!(all.mpjpe.mean.unwrap().is_finite());
            assert_eq!(all.ade.count, 8);
        }
        assert!(!s_report.oracle_past);
        assert!(c_report.oracle_past);

        // Hand-rolled recomputation of the static pooled-all ADE cell.
        let mut sum = 0.0;
        let mut n = 0usize;
        for seq in &data {
            let pred = baseline_static(seq, &stats).unwrap();
            for side in Side::BOTH {
                let mut acc = 0.0;
                for (k, fr) in seq.fut_joints.iter().enumerate() {
                    let p = pred[seq.t_obs() + k].position(side.wrist()).unwrap();
                    let g = fr.position(side.wrist()).unwrap();
                    acc += (p - g).norm();
                }
                sum += acc / seq.f_fut() as f64;
                n += 1;
            }
        }
        let all = s_report
            .partitions
            .iter()
            .find(|r| r.side == "pooled" && r.view == "all")
            .unwrap();
        assert!((all.ade.mean.unwrap() - sum / n as f64).abs() < 1e-12);
    }

    #[test]
    fn report_round_trips_and_renders() {
        let data = toy_dataset(2, MotionMix::default());
        let stats = compute_stats(&data).unwrap();
        let report = evaluate(&Method::Static(&stats), &data, &EvalConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        save_report(&path, &report).unwrap();
        let loaded = load_report(&path).unwrap();
        assert_eq!(loaded, report);

        let table = render_table(&report);
        assert!(table.contains("static"));
        assert!(table.contains("pooled"));
        assert!(table.contains("(0.8, 1.0]"));
        assert_eq!(report.partitions.len(), 9);
        assert_eq!(report.gamma.len(), 5);

        let mut bad = report.clone();
        bad.schema = "report.v9".into();
        save_report(&path, &bad).unwrap();
        assert!(load_report(&path).is_err());
    }

    /// An untrained model evaluates deterministically and reports
    /// visibility accuracy.
    #[test]
    fn model_evaluation_is_deterministic() {
        let data = toy_dataset(2, idle_mix());
        let dcfg = DenoiserConfig {
            d_z: 16,
            n_layers: 1,
            n_heads: 1,
            d_img: 4,
            t_obs: 20,
            f_fut: 10,
            joints: JOINT_COUNT,
            n_steps: 5,
        };
        let tcfg = TrainConfig { iterations: 0, n_steps: 5, ..TrainConfig::default() };
        let trainer = Trainer::new(dcfg, tcfg, &data, &Device::Cpu).unwrap();
        let cfg = EvalConfig { seed: 9, fps: 10.0 };
        let a = evaluate(&Method::Model(&trainer), &data, &cfg).unwrap();
        let b = evaluate(&Method::Model(&trainer), &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.method, "model");
        assert!(!a.oracle_past);
        let total = a.visibility_count;
        assert_eq!(total, 2 * 20 * 2);
        assert!(a.visibility_accuracy.is_some());
        let all = a.partitions.iter().find(|r| r.side == "pooled" && r.view == "all").unwrap();
        assert!(all.ade.mean.unwrap().is_finite());

        // A different seed draws different noise.
        let c = evaluate(&Method::Model(&trainer), &data, &EvalConfig { seed: 10, fps: 10.0 })
            .unwrap();
        assert_ne!(
            a.partitions[0].ade.mean,
            c.partitions[0].ade.mean,
            "seed change left the sample unchanged"
        );
    }

    #[test]
    fn hand_block_width_matches_layout() {
        assert_eq!(Side::Left.hand_range().len(), HAND_JOINT_COUNT);
        assert_eq!(Side::Right.hand_range().len(), HAND_JOINT_COUNT);
    }
}
