//! Losses, masked heterogeneous supervision, the training loop, and
//! checkpointing.
//!
//! The joint loss is a masked L1 over every (frame, joint, coordinate) entry
//! of the full trajectory; the visibility loss is mean binary cross-entropy
//! over per-frame hand flags; the reprojection loss pushes predicted wrists
//! onto their observed 2D positions through each observation frame's camera,
//! gated so invisible frames contribute exactly zero. Per-frame losses are
//! averaged over the batch; within a sequence the reprojection term sums
//! over frames and sides.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{compute_stats, DatasetStats, Sequence, LEFT_WRIST, RIGHT_WRIST};
use crate::denoiser::{Conditioning, Denoiser, DenoiserConfig};
use crate::diffusion::{make_schedule, q_sample, DiffusionSchedule, ScheduleKind};
use crate::error::{Error, Result};

/// Depth below which a reprojection term is skipped as degenerate.
const REPROJ_MIN_DEPTH: f64 = 1e-6;

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub lambda_vis: f64,
    pub lambda_reproj: f64,
    pub seed: u64,
    pub schedule: ScheduleKind,
    pub n_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 40_000,
            learning_rate: 1e-4,
            batch_size: 32,
            lambda_vis: 0.1,
            lambda_reproj: 0.05,
            seed: 0,
            schedule: ScheduleKind::Linear,
            n_steps: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if self.n_steps == 0 {
            return Err(Error::InvalidConfig("noise steps must be positive".into()));
        }
        for (name, l) in [("lambda_vis", self.lambda_vis), ("lambda_reproj", self.lambda_reproj)] {
            if !l.is_finite() || l < 0.0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Loss terms still attached to the autograd graph.
pub struct LossParts {
    pub joint: Tensor,
    pub vis: Tensor,
    pub reproj: Tensor,
    /// True when the joint mask selected no entries at all.
    pub zero_mask: bool,
    /// Visible reprojection terms skipped for degenerate depth.
    pub skipped_projections: usize,
}

/// Scalar loss values reported per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub joint: f64,
    pub vis: f64,
    pub reproj: f64,
    pub total: f64,
    pub zero_mask: bool,
    pub skipped_projections: usize,
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub joint: f64,
    pub vis: f64,
    pub reproj: f64,
    pub total: f64,
}

fn scalar_of(t: &Tensor) -> Result<f64> {
    Ok(t.to_scalar::<f64>()?)
}

/// Mean absolute error over mask-selected entries. The mask is 0/1 per
/// (frame, joint, coordinate); an all-zero mask yields a graph-connected
/// zero and sets the warning flag.
pub fn joint_loss(x0_hat: &Tensor, x0: &Tensor, mask: &Tensor) -> Result<(Tensor, bool)> {
    if x0_hat.dims() != x0.dims() || x0_hat.dims() != mask.dims() {
        return Err(Error::Contract(format!(
            "joint loss shapes disagree: {:?} vs {:?} vs {:?}",
            x0_hat.dims(),
            x0.dims(),
            mask.dims()
        )));
    }
    let masked = ((x0_hat - x0)?.abs()? * mask)?;
    let count = scalar_of(&mask.sum_all()?)?;
    if count == 0.0 {
        return Ok((masked.sum_all()?, true));
    }
    Ok((masked.sum_all()?.affine(1.0 / count, 0.0)?, false))
}

/// Mean binary cross-entropy between predicted probabilities and 0/1 flags.
pub fn visibility_loss(v_hat: &Tensor, v: &Tensor) -> Result<Tensor> {
    if v_hat.dims() != v.dims() {
        return Err(Error::Contract(format!(
            "visibility shapes disagree: {:?} vs {:?}",
            v_hat.dims(),
            v.dims()
        )));
    }
    let lo = scalar_of(&v_hat.flatten_all()?.min(0)?)?;
    let hi = scalar_of(&v_hat.flatten_all()?.max(0)?)?;
    if lo <= 0.0 || hi >= 1.0 {
        return Err(Error::Contract(format!(
            "visibility probabilities must lie in (0,1); saw [{lo}, {hi}]"
        )));
    }
    let one = Tensor::ones_like(v)?;
    let pos = (v * v_hat.log()?)?;
    let neg = ((&one - v)? * (&one - v_hat)?.log()?)?;
    Ok((pos + neg)?.mean_all()?.affine(-1.0, 0.0)?)
}

/// L1 distance between observed normalized 2D hands and the reprojection of
/// the predicted wrists, summed over observation frames and sides, averaged
/// over the batch. Invisible frames contribute exactly zero; visible frames
/// whose predicted wrist falls at or behind the camera plane are skipped and
/// tallied. `wrists` gives the per-side wrist joint indices.
pub fn reprojection_loss(
    x0_hat: &Tensor,
    hands2d: &Tensor,
    poses: &[Vec<crate::geometry::CameraPose>],
    vis: &Tensor,
    wrists: [usize; 2],
) -> Result<(Tensor, usize)> {
    let (bsz, _, w3j) = x0_hat.dims3()?;
    let j = w3j / 3;
    if bsz != poses.len() || poses.is_empty() {
        return Err(Error::Contract("reprojection batch sizes disagree".into()));
    }
    let t_obs = poses[0].len();
    if hands2d.dims() != [bsz, t_obs, 4] || vis.dims() != [bsz, t_obs, 2] {
        return Err(Error::Contract(format!(
            "reprojection conditioning shapes disagree: hands {:?}, vis {:?}",
            hands2d.dims(),
            vis.dims()
        )));
    }
    if wrists.iter().any(|w| *w >= j) {
        return Err(Error::Contract(format!("wrist indices {wrists:?} out of range for {j} joints")));
    }
    let dev = x0_hat.device();
    let obs = x0_hat.narrow(1, 0, t_obs)?.reshape((bsz, t_obs, j, 3))?;

    // Constant per-frame camera data. The rotation is stored transposed so a
    // single batched matmul maps world to camera coordinates.
    let mut rt = Vec::with_capacity(bsz * t_obs * 9);
    let mut tv = Vec::with_capacity(bsz * t_obs * 3);
    let mut au = Vec::with_capacity(bsz * t_obs);
    let mut bu = Vec::with_capacity(bsz * t_obs);
    let mut av = Vec::with_capacity(bsz * t_obs);
    let mut bv = Vec::with_capacity(bsz * t_obs);
    for seq_poses in poses {
        if seq_poses.len() != t_obs {
            return Err(Error::Contract("pose counts disagree across the batch".into()));
        }
        for pose in seq_poses {
            let m = pose.rotation_matrix()?;
            for r in 0..3 {
                for c in 0..3 {
                    rt.push(m[(c, r)]);
                }
            }
            tv.extend_from_slice(&pose.translation);
            let [w_px, h_px] = pose.image_size;
            au.push(pose.intrinsics.fx / w_px as f64);
            bu.push(pose.intrinsics.cx / w_px as f64);
            av.push(pose.intrinsics.fy / h_px as f64);
            bv.push(pose.intrinsics.cy / h_px as f64);
        }
    }
    let rt = Tensor::from_vec(rt, (bsz, t_obs, 3, 3), dev)?;
    let tv = Tensor::from_vec(tv, (bsz, t_obs, 3), dev)?;
    let au = Tensor::from_vec(au, (bsz, t_obs), dev)?;
    let bu = Tensor::from_vec(bu, (bsz, t_obs), dev)?;
    let av = Tensor::from_vec(av, (bsz, t_obs), dev)?;
    let bv = Tensor::from_vec(bv, (bsz, t_obs), dev)?;

    let vis_host = vis.to_vec3::<f64>()?;
    let mut total: Option<Tensor> = None;
    let mut skipped = 0usize;
    for (i, &wj) in wrists.iter().enumerate() {
        let wrist = obs.narrow(2, wj, 1)?.squeeze(2)?;
        let cam = rt.matmul(&(&wrist - &tv)?.unsqueeze(3)?)?.squeeze(3)?;
        let x = cam.narrow(2, 0, 1)?.squeeze(2)?;
        let y = cam.narrow(2, 1, 1)?.squeeze(2)?;
        let z = cam.narrow(2, 2, 1)?.squeeze(2)?;

        let z_host = z.to_vec2::<f64>()?;
        let mut gate = Vec::with_capacity(bsz * t_obs);
        for b in 0..bsz {
            for t in 0..t_obs {
                let visible = vis_host[b][t][i] > 0.5;
                let deep = z_host[b][t] > REPROJ_MIN_DEPTH;
                if visible && !deep {
                    skipped += 1;
                }
                gate.push(if visible && deep { 1.0 } else { 0.0 });
            }
        }
        let gate = Tensor::from_vec(gate, (bsz, t_obs), dev)?;
        // Gated-out entries divide by one instead of their (possibly zero)
        // depth; they are multiplied away again below.
        let z_div = ((&z * &gate)? + (gate.affine(-1.0, 1.0)?))?;
        let u = ((x.div(&z_div)? * &au)? + &bu)?;
        let v = ((y.div(&z_div)? * &av)? + &bv)?;
        let cu = hands2d.narrow(2, 2 * i, 1)?.squeeze(2)?;
        let cv = hands2d.narrow(2, 2 * i + 1, 1)?.squeeze(2)?;
        let resid = ((u - cu)?.abs()? + (v - cv)?.abs()?)?;
        let side_sum = (resid * gate)?.sum_all()?;
        total = Some(match total {
            None => side_sum,
            Some(acc) => (acc + side_sum)?,
        });
    }
    let total = total.expect("two sides accumulated");
    Ok((total.affine(1.0 / bsz as f64, 0.0)?, skipped))
}

/// Weighted sum of the loss parts; errors if any part is non-finite.
pub fn total_loss(parts: &LossParts, cfg: &TrainConfig) -> Result<Tensor> {
    for (name, part) in
        [("L_joint", &parts.joint), ("L_vis", &parts.vis), ("L_reproj", &parts.reproj)]
    {
        if !scalar_of(part)?.is_finite() {
            return Err(Error::Contract(format!("training aborted: {name} is not finite")));
        }
    }
    let weighted = (parts.vis.affine(cfg.lambda_vis, 0.0)?
        + parts.reproj.affine(cfg.lambda_reproj, 0.0)?)?;
    Ok((&parts.joint + weighted)?)
}

/// A training batch assembled from sequences.
pub struct Batch {
    /// Ground-truth trajectories, (B, T+F, 3J).
    pub x0: Tensor,
    /// 0/1 annotation mask matching `x0`.
    pub joint_mask: Tensor,
    pub cond: Conditioning,
    /// Ground-truth visibility flags, (B, T, 2), left then right.
    pub vis: Tensor,
    /// Cameras per observation frame.
    pub poses: Vec<Vec<crate::geometry::CameraPose>>,
    /// Wrist joint indices used by the reprojection loss.
    pub wrists: [usize; 2],
}

/// Build a batch; all sequences must share (T, F, d_img).
pub fn make_batch(seqs: &[&Sequence], device: &Device) -> Result<Batch> {
    let first = seqs.first().ok_or_else(|| Error::Contract("empty batch".into()))?;
    let (t_obs, f_fut) = (first.t_obs(), first.f_fut());
    let j = crate::data::JOINT_COUNT;
    let mut x0 = Vec::with_capacity(seqs.len() * (t_obs + f_fut) * 3 * j);
    let mut mask = Vec::with_capacity(x0.capacity());
    let mut vis = Vec::with_capacity(seqs.len() * t_obs * 2);
    let mut poses = Vec::with_capacity(seqs.len());
    for seq in seqs {
        if seq.t_obs() != t_obs || seq.f_fut() != f_fut {
            return Err(Error::Contract("frame counts disagree across the batch".into()));
        }
        for frame in seq.obs_joints.iter().chain(&seq.fut_joints) {
            for jj in 0..j {
                let m = if frame.mask[jj] { 1.0 } else { 0.0 };
                for c in 0..3 {
                    x0.push(frame.joints[jj][c]);
                    mask.push(m);
                }
            }
        }
        for h in &seq.obs_hands2d {
            vis.push(if h.left_visible { 1.0 } else { 0.0 });
            vis.push(if h.right_visible { 1.0 } else { 0.0 });
        }
        poses.push(seq.obs_poses.clone());
    }
    let shape = (seqs.len(), t_obs + f_fut, 3 * j);
    Ok(Batch {
        x0: Tensor::from_vec(x0, shape, device)?,
        joint_mask: Tensor::from_vec(mask, shape, device)?,
        cond: Conditioning::from_sequences(seqs, device)?,
        vis: Tensor::from_vec(vis, (seqs.len(), t_obs, 2), device)?,
        poses,
        wrists: [LEFT_WRIST, RIGHT_WRIST],
    })
}

/// Noise the ground truth per sequence at its own level.
pub fn noisy_batch(
    x0: &Tensor,
    n_levels: &[usize],
    eps: &Tensor,
    schedule: &DiffusionSchedule,
) -> Result<Tensor> {
    let rows = n_levels
        .iter()
        .enumerate()
        .map(|(b, &n)| q_sample(&x0.narrow(0, b, 1)?, n, &eps.narrow(0, b, 1)?, schedule))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::cat(&rows, 0)?)
}

/// Run the denoiser on a noised batch and compute all loss parts.
pub fn compute_losses(
    model: &Denoiser,
    batch: &Batch,
    schedule: &DiffusionSchedule,
    n_levels: &[usize],
    eps: &Tensor,
    cfg: &TrainConfig,
) -> Result<(LossParts, Tensor)> {
    let x_n = noisy_batch(&batch.x0, n_levels, eps, schedule)?;
    let (x0_hat, v_hat) = model.forward(&x_n, &batch.cond, n_levels)?;
    let (joint, zero_mask) = joint_loss(&x0_hat, &batch.x0, &batch.joint_mask)?;
    let vis = visibility_loss(&v_hat, &batch.vis)?;
    let (reproj, skipped_projections) =
        reprojection_loss(&x0_hat, &batch.cond.hands, &batch.poses, &batch.vis, batch.wrists)?;
    let parts = LossParts { joint, vis, reproj, zero_mask, skipped_projections };
    let total = total_loss(&parts, cfg)?;
    Ok((parts, total))
}

/// Plain Adam with bias correction; moments are tensors updated in place.
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far (bias-correction step counter).
    pub t: usize,
    moments: Vec<(Tensor, Tensor)>,
}

impl Adam {
    pub fn new(params: &[(String, Var)], learning_rate: f64) -> Result<Adam> {
        let moments = params
            .iter()
            .map(|(_, v)| {
                let z1 = Tensor::zeros(v.dims(), DType::F64, v.device())?;
                let z2 = Tensor::zeros(v.dims(), DType::F64, v.device())?;
                Ok((z1, z2))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Adam { learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, moments })
    }

    /// Restore saved moment tensors (ordered like `params`).
    pub fn with_moments(
        params: &[(String, Var)],
        learning_rate: f64,
        t: usize,
        moments: Vec<(Tensor, Tensor)>,
    ) -> Result<Adam> {
        if moments.len() != params.len() {
            return Err(Error::Checkpoint("optimizer moment count mismatch".into()));
        }
        for ((name, v), (m1, m2)) in params.iter().zip(&moments) {
            if m1.dims() != v.dims() || m2.dims() != v.dims() {
                return Err(Error::Checkpoint(format!("optimizer moments for {name} misshapen")));
            }
        }
        Ok(Adam { learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8, t, moments })
    }

    pub fn moments(&self) -> &[(Tensor, Tensor)] {
        &self.moments
    }

    /// Apply one update; errors on missing or non-finite gradients.
    pub fn step(&mut self, params: &[(String, Var)], grads: &GradStore) -> Result<()> {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (name, var)) in params.iter().enumerate() {
            let g = grads
                .get(var.as_tensor())
                .ok_or_else(|| Error::Contract(format!("no gradient for parameter {name}")))?;
            let g_max = scalar_of(&g.abs()?.max_all()?)?;
            if !g_max.is_finite() {
                return Err(Error::Contract(format!(
                    "training aborted: gradient for {name} is not finite"
                )));
            }
            let (m, v) = &mut self.moments[i];
            let m_new = (m.affine(self.beta1, 0.0)? + g.affine(1.0 - self.beta1, 0.0)?)?;
            let v_new = (v.affine(self.beta2, 0.0)? + g.sqr()?.affine(1.0 - self.beta2, 0.0)?)?;
            let m_hat = m_new.affine(1.0 / c1, 0.0)?;
            let v_hat = v_new.affine(1.0 / c2, 0.0)?;
            let update = (m_hat * self.learning_rate)?.div(&(v_hat.sqrt()? + self.eps)?)?;
            var.set(&(var.as_tensor() - update)?)?;
            *m = m_new;
            *v = v_new;
        }
        Ok(())
    }
}

/// Everything the checkpoint metadata records besides tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub denoiser: DenoiserConfig,
    pub train: TrainConfig,
    /// Completed training iterations.
    pub step: usize,
    /// Adam bias-correction counter.
    pub adam_t: usize,
    /// Training-set statistics, kept for the static baseline.
    pub stats: DatasetStats,
}

/// Trainer state: model, optimizer, schedule, and progress.
pub struct Trainer {
    pub model: Denoiser,
    pub opt: Adam,
    pub schedule: DiffusionSchedule,
    pub tcfg: TrainConfig,
    pub stats: DatasetStats,
    /// Completed iterations.
    pub step: usize,
}

impl Trainer {
    /// Fresh trainer with seeded random weights and training-set stats.
    pub fn new(
        dcfg: DenoiserConfig,
        tcfg: TrainConfig,
        dataset: &[Sequence],
        device: &Device,
    ) -> Result<Trainer> {
        tcfg.validate()?;
        if dataset.is_empty() {
            return Err(Error::InvalidConfig("training dataset is empty".into()));
        }
        let stats = compute_stats(dataset)?;
        let model = Denoiser::new(dcfg, tcfg.seed, device)?;
        let opt = Adam::new(model.params(), tcfg.learning_rate)?;
        let schedule = make_schedule(tcfg.schedule, tcfg.n_steps)?;
        Ok(Trainer { model, opt, schedule, tcfg, stats, step: 0 })
    }

    /// One deterministic iteration: the sampling stream depends only on
    /// `(seed, step)`, so resumed runs reproduce straight runs exactly.
    pub fn run_iteration(&mut self, dataset: &[Sequence]) -> Result<LossValues> {
        if dataset.is_empty() {
            return Err(Error::InvalidConfig("training dataset is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.tcfg.seed);
        rng.set_stream(self.step as u64 + 1);
        let picks: Vec<usize> =
            (0..self.tcfg.batch_size).map(|_| rng.random_range(0..dataset.len())).collect();
        let refs: Vec<&Sequence> = picks.iter().map(|&i| &dataset[i]).collect();
        let batch = make_batch(&refs, self.model.device())?;

        let n_levels: Vec<usize> =
            (0..refs.len()).map(|_| rng.random_range(1..=self.tcfg.n_steps)).collect();
        let (bsz, tf, w3j) = batch.x0.dims3()?;
        let eps_host: Vec<f64> =
            (0..bsz * tf * w3j).map(|_| StandardNormal.sample(&mut rng)).collect();
        let eps = Tensor::from_vec(eps_host, (bsz, tf, w3j), self.model.device())?;

        let (parts, total) = compute_losses(
            &self.model,
            &batch,
            &self.schedule,
            &n_levels,
            &eps,
            &self.tcfg,
        )?;
        let values = LossValues {
            joint: scalar_of(&parts.joint)?,
            vis: scalar_of(&parts.vis)?,
            reproj: scalar_of(&parts.reproj)?,
            total: scalar_of(&total)?,
            zero_mask: parts.zero_mask,
            skipped_projections: parts.skipped_projections,
        };
        let grads = total.backward()?;
        self.opt.step(self.model.params(), &grads)?;
        self.step += 1;
        Ok(values)
    }

    /// Write the checkpoint: model weights, optimizer moments, and metadata.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = CheckpointMeta {
            denoiser: *self.model.config(),
            train: self.tcfg,
            step: self.step,
            adam_t: self.opt.t,
            stats: self.stats.clone(),
        };
        let mut entries: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
        for (i, (name, var)) in self.model.params().iter().enumerate() {
            entries.push((format!("model.{name}"), var.dims().to_vec(), to_bytes(var.as_tensor())?));
            let (m, v) = &self.opt.moments()[i];
            entries.push((format!("opt.m.{name}"), m.dims().to_vec(), to_bytes(m)?));
            entries.push((format!("opt.v.{name}"), v.dims().to_vec(), to_bytes(v)?));
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let views = entries
            .iter()
            .map(|(name, shape, bytes)| {
                Ok((
                    name.as_str(),
                    safetensors::tensor::TensorView::new(
                        safetensors::Dtype::F64,
                        shape.clone(),
                        bytes,
                    )
                    .map_err(|e| Error::Checkpoint(format!("cannot view {name}: {e}")))?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut info = std::collections::HashMap::new();
        info.insert("ckpt".to_string(), serde_json::to_string(&meta)?);
        safetensors::serialize_to_file(views, Some(info), path.as_ref())
            .map_err(|e| Error::Checkpoint(format!("cannot write checkpoint: {e}")))?;
        Ok(())
    }

    /// Load a checkpoint saved by [`Trainer::save`].
    pub fn load(path: impl AsRef<Path>, device: &Device) -> Result<Trainer> {
        let bytes = std::fs::read(path.as_ref())
            .map_err(|e| Error::Checkpoint(format!("cannot read checkpoint: {e}")))?;
        let st = safetensors::SafeTensors::deserialize(&bytes)
            .map_err(|e| Error::Checkpoint(format!("malformed checkpoint: {e}")))?;
        let (_, header) = safetensors::SafeTensors::read_metadata(&bytes)
            .map_err(|e| Error::Checkpoint(format!("malformed checkpoint header: {e}")))?;
        let meta_json = header
            .metadata()
            .as_ref()
            .and_then(|m| m.get("ckpt"))
            .ok_or_else(|| Error::Checkpoint("checkpoint metadata missing".into()))?;
        let meta: CheckpointMeta = serde_json::from_str(meta_json)
            .map_err(|e| Error::Checkpoint(format!("bad checkpoint metadata: {e}")))?;
        meta.train.validate()?;

        let read = |name: &str| -> Result<Tensor> {
            let view = st
                .tensor(name)
                .map_err(|_| Error::Checkpoint(format!("missing tensor {name}")))?;
            if view.dtype() != safetensors::Dtype::F64 {
                return Err(Error::Checkpoint(format!("tensor {name} is not f64")));
            }
            from_bytes(view.data(), view.shape(), device)
        };
        let mut model_tensors = BTreeMap::new();
        let mut moments = Vec::new();
        for name in Denoiser::parameter_names(&meta.denoiser) {
            model_tensors.insert(name.clone(), read(&format!("model.{name}"))?);
            moments.push((read(&format!("opt.m.{name}"))?, read(&format!("opt.v.{name}"))?));
        }
        let model = Denoiser::from_named_tensors(meta.denoiser, &model_tensors, device)?;
        let opt =
            Adam::with_moments(model.params(), meta.train.learning_rate, meta.adam_t, moments)?;
        let schedule = make_schedule(meta.train.schedule, meta.train.n_steps)?;
        Ok(Trainer {
            model,
            opt,
            schedule,
            tcfg: meta.train,
            stats: meta.stats,
            step: meta.step,
        })
    }
}

fn to_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let host = t.flatten_all()?.to_vec1::<f64>()?;
    let mut out = Vec::with_capacity(host.len() * 8);
    for v in host {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn from_bytes(bytes: &[u8], shape: &[usize], device: &Device) -> Result<Tensor> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint("tensor byte length not a multiple of 8".into()));
    }
    let host: Vec<f64> =
        bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Tensor::from_vec(host, shape, device)?)
}

/// Run the full training loop, reporting one log row per iteration.
pub fn train(
    dataset: &[Sequence],
    dcfg: DenoiserConfig,
    tcfg: TrainConfig,
    device: &Device,
    mut sink: impl FnMut(&LogRow),
) -> Result<Trainer> {
    let mut trainer = Trainer::new(dcfg, tcfg, dataset, device)?;
    run_to_completion(&mut trainer, dataset, &mut sink)?;
    Ok(trainer)
}

/// Drive a trainer (fresh or resumed) to its configured iteration count.
pub fn run_to_completion(
    trainer: &mut Trainer,
    dataset: &[Sequence],
    sink: &mut impl FnMut(&LogRow),
) -> Result<()> {
    while trainer.step < trainer.tcfg.iterations {
        let iteration = trainer.step;
        let v = trainer.run_iteration(dataset)?;
        sink(&LogRow {
            iteration,
            joint: v.joint,
            vis: v.vis,
            reproj: v.reproj,
            total: v.total,
        });
    }
    Ok(())
}
