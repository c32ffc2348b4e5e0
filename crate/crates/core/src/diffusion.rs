//! DDPM machinery: noise schedule, forward corruption, x0-parameterized
//! posterior mean, reverse step, and the full sampling loop.
//!
//! The diffusion state is the full trajectory tensor; the network predicts
//! x0 directly and the reverse step mixes that prediction with the current
//! state through the closed-form posterior coefficients.

use candle_core::Tensor;

use crate::error::{Error, Result};

/// Fixed noise schedule over steps 1..=N, with the index-0 edge values
/// alpha[0] = alpha_bar[0] = 1 and sigma[1] = 0 (deterministic final step).
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    /// alpha_n = 1 - beta_n; alpha[0] = 1.
    pub alpha: Vec<f64>,
    /// Running products of alpha; alpha_bar[0] = 1.
    pub alpha_bar: Vec<f64>,
    /// Reverse-step noise scale; sigma[n]^2 = beta_n except sigma[1] = 0.
    pub sigma: Vec<f64>,
}

/// Available schedule shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ScheduleKind {
    Linear,
}

/// Linear ramp endpoints for the beta sequence.
const BETA_START: f64 = 1e-4;
const BETA_END: f64 = 0.02;
/// Posterior coefficients are singular once 1 - alpha_bar falls below this.
const SINGULAR_GAP: f64 = 1e-12;

impl DiffusionSchedule {
    /// Number of diffusion steps N.
    pub fn n_steps(&self) -> usize {
        self.alpha.len() - 1
    }

    pub fn alpha(&self, n: usize) -> f64 {
        self.alpha[n]
    }

    pub fn alpha_bar(&self, n: usize) -> f64 {
        self.alpha_bar[n]
    }

    pub fn beta(&self, n: usize) -> f64 {
        1.0 - self.alpha[n]
    }

    pub fn sigma(&self, n: usize) -> f64 {
        self.sigma[n]
    }

    fn check_step(&self, n: usize, lo: usize) -> Result<()> {
        let hi = self.n_steps();
        if n < lo || n > hi {
            return Err(Error::NoiseLevel { n, lo, hi });
        }
        Ok(())
    }

    /// Verify the schedule invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_steps();
        if n < 1 {
            return Err(Error::InvalidConfig("schedule needs at least one step".into()));
        }
        if self.alpha_bar.len() != n + 1 || self.sigma.len() != n + 1 {
            return Err(Error::InvalidConfig("schedule arrays disagree on length".into()));
        }
        if self.alpha[0] != 1.0 || self.alpha_bar[0] != 1.0 {
            return Err(Error::InvalidConfig("alpha[0] and alpha_bar[0] must be 1".into()));
        }
        if self.sigma[1] != 0.0 {
            return Err(Error::InvalidConfig("sigma[1] must be 0".into()));
        }
        let mut prod = 1.0f64;
        for s in 1..=n {
            if !(self.alpha[s] > 0.0 && self.alpha[s] <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "alpha[{s}] = {} outside (0, 1]",
                    self.alpha[s]
                )));
            }
            if self.alpha_bar[s] >= self.alpha_bar[s - 1] {
                return Err(Error::InvalidConfig(format!(
                    "alpha_bar not strictly decreasing at step {s}"
                )));
            }
            prod *= self.alpha[s];
            if (self.alpha_bar[s] - prod).abs() > 1e-12 {
                return Err(Error::InvalidConfig(format!(
                    "alpha_bar[{s}] deviates from the running product by more than 1e-12"
                )));
            }
        }
        Ok(())
    }
}

/// Build a schedule of `n_steps` steps. The linear kind ramps beta from
/// 1e-4 to 0.02 regardless of N.
pub fn make_schedule(kind: ScheduleKind, n_steps: usize) -> Result<DiffusionSchedule> {
    if n_steps < 1 {
        return Err(Error::InvalidConfig("diffusion step count must be at least 1".into()));
    }
    let ScheduleKind::Linear = kind;
    let mut alpha = Vec::with_capacity(n_steps + 1);
    let mut alpha_bar = Vec::with_capacity(n_steps + 1);
    let mut sigma = Vec::with_capacity(n_steps + 1);
    alpha.push(1.0);
    alpha_bar.push(1.0);
    sigma.push(0.0);
    let mut prod = 1.0f64;
    for n in 1..=n_steps {
        let frac = if n_steps == 1 { 0.0 } else { (n - 1) as f64 / (n_steps - 1) as f64 };
        let beta = BETA_START + (BETA_END - BETA_START) * frac;
        let a = 1.0 - beta;
        prod *= a;
        alpha.push(a);
        alpha_bar.push(prod);
        // Derive sigma from the stored alpha so sigma(n) == beta(n).sqrt()
        // holds bitwise (1 - (1 - beta) need not round back to beta).
        sigma.push(if n == 1 { 0.0 } else { (1.0 - a).sqrt() });
    }
    let schedule = DiffusionSchedule { alpha, alpha_bar, sigma };
    schedule.validate()?;
    Ok(schedule)
}

/// Forward corruption: x_n = sqrt(alpha_bar_n) x0 + sqrt(1 - alpha_bar_n) eps.
/// The n = 0 edge returns x0 unchanged.
pub fn q_sample(x0: &Tensor, n: usize, eps: &Tensor, s: &DiffusionSchedule) -> Result<Tensor> {
    s.check_step(n, 0)?;
    if eps.dims() != x0.dims() {
        return Err(Error::Contract(format!(
            "noise shape {:?} does not match state shape {:?}",
            eps.dims(),
            x0.dims()
        )));
    }
    if n == 0 {
        return Ok(x0.clone());
    }
    let ab = s.alpha_bar(n);
    Ok((x0.affine(ab.sqrt(), 0.0)? + eps.affine((1.0 - ab).sqrt(), 0.0)?)?)
}

/// Posterior coefficients (on x_n and on x0_hat) for a reverse step.
fn posterior_coeffs(s: &DiffusionSchedule, n: usize) -> Result<(f64, f64)> {
    s.check_step(n, 1)?;
    let gap = 1.0 - s.alpha_bar(n);
    if gap < SINGULAR_GAP {
        return Err(Error::SingularPosterior { n, gap });
    }
    let c_state = s.alpha(n).sqrt() * (1.0 - s.alpha_bar(n - 1)) / gap;
    let c_pred = s.alpha_bar(n - 1).sqrt() * (1.0 - s.alpha(n)) / gap;
    Ok((c_state, c_pred))
}

/// Closed-form posterior mean given the current state and the x0 prediction.
pub fn posterior_mean(
    x_n: &Tensor,
    x0_hat: &Tensor,
    n: usize,
    s: &DiffusionSchedule,
) -> Result<Tensor> {
    let (c_state, c_pred) = posterior_coeffs(s, n)?;
    Ok((x_n.affine(c_state, 0.0)? + x0_hat.affine(c_pred, 0.0)?)?)
}

/// One reverse step: posterior mean plus sigma_n-scaled noise. At n = 1 the
/// noise scale is zero and the mean is returned exactly.
pub fn reverse_step(
    x_n: &Tensor,
    x0_hat: &Tensor,
    n: usize,
    s: &DiffusionSchedule,
    noise: &Tensor,
) -> Result<Tensor> {
    let mu = posterior_mean(x_n, x0_hat, n, s)?;
    let sigma = s.sigma(n);
    if sigma == 0.0 {
        return Ok(mu);
    }
    if noise.dims() != x_n.dims() {
        return Err(Error::Contract(format!(
            "noise shape {:?} does not match state shape {:?}",
            noise.dims(),
            x_n.dims()
        )));
    }
    Ok((mu + noise.affine(sigma, 0.0)?)?)
}

/// Run the full reverse chain from `init_noise`, calling `denoise` at each
/// step n = N..1 and drawing fresh noise from `noise` for every step except
/// the last. Returns the final state (the n = 1 posterior mean) and the
/// visibility output of the final denoise call. Each state is detached, so
/// the chain carries no gradient history; long schedules would otherwise
/// build a graph deep enough to overflow the stack when released.
pub fn sample(
    s: &DiffusionSchedule,
    mut denoise: impl FnMut(&Tensor, usize) -> Result<(Tensor, Tensor)>,
    init_noise: &Tensor,
    mut noise: impl FnMut() -> Result<Tensor>,
) -> Result<(Tensor, Tensor)> {
    let mut x = init_noise.clone();
    let mut vis_final = None;
    for n in (1..=s.n_steps()).rev() {
        let (x0_hat, vis) = denoise(&x, n)?;
        if x0_hat.dims() != x.dims() {
            return Err(Error::Contract(format!(
                "denoiser returned shape {:?} for state shape {:?}",
                x0_hat.dims(),
                x.dims()
            )));
        }
        x = if n > 1 {
            let eps = noise()?;
            reverse_step(&x, &x0_hat, n, s, &eps)?.detach()
        } else {
            posterior_mean(&x, &x0_hat, 1, s)?.detach()
        };
        vis_final = Some(vis.detach());
    }
    let vis = vis_final.expect("schedule has at least one step");
    Ok((x, vis))
}
