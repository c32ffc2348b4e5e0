//! Acceptance gate: one test per acceptance criterion, each printing a
//! single `[PASS]`/`[FAIL]` line (run with `--nocapture` to see the lines
//! for passing criteria; a failing criterion fails its test).
//!
//! The two training criteria share one trained model via a process-wide
//! `OnceLock`, so the suite performs exactly two training runs: a small
//! overfit run and a 256-sequence held-out run.

use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use candle_core::{Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use handcast::data::{compute_stats, Sequence, Side, JOINT_COUNT};
use handcast::denoiser::{Conditioning, Denoiser, DenoiserConfig};
use handcast::diffusion::{make_schedule, posterior_mean, sample, ScheduleKind};
use handcast::eval::{
    ade, bin_gamma, evaluate, fde, mpjpe, mpjve, wrist_relative_mpjpe, EvalConfig, Method,
    MetricsReport,
};
use handcast::geometry::{
    camera_orientation, CameraPose, CanonicalTransform, Intrinsics, Rotation6d, Vec3,
};
use handcast::synthgen::{generate_sequence, GenConfig};
use handcast::training::{
    compute_losses, joint_loss, noisy_batch, reprojection_loss, total_loss, train,
    visibility_loss, Batch, LossParts, TrainConfig,
};

fn pass(n: usize, what: &str, started: Instant) {
    println!("[PASS] criterion {n}: {what} ({:.1}s)", started.elapsed().as_secs_f64());
}

fn dev() -> Device {
    Device::Cpu
}

fn scalar(t: &Tensor) -> f64 {
    t.to_scalar::<f64>().unwrap()
}

// ---------------------------------------------------------------- criterion 1

/// Sampling with an oracle denoiser collapses to the oracle's answer, the
/// last-step noise scale is zero, and the posterior mean maps the scaled
/// constant state exactly along the signal-decay curve.
#[test]
fn criterion_1_oracle_sampling_recovers_the_oracle_answer() {
    let t0 = Instant::now();
    let device = dev();
    let s = make_schedule(ScheduleKind::Linear, 50).unwrap();
    assert_eq!(s.sigma(1), 0.0, "last reverse step must be deterministic");

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut draw = |shape: (usize, usize, usize)| {
        let n = shape.0 * shape.1 * shape.2;
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        Tensor::from_vec(v, shape, &device).unwrap()
    };
    let shape = (1, 5, 9);
    let x0_star = draw(shape);
    let vis = Tensor::zeros((1, 3, 2), candle_core::DType::F64, &device).unwrap();
    let init = draw(shape);
    let (x_final, _) = sample(
        &s,
        |_, _| Ok((x0_star.clone(), vis.clone())),
        &init,
        &mut || Ok(draw(shape)),
    )
    .unwrap();
    let got = x_final.flatten_all().unwrap().to_vec1::<f64>().unwrap();
    let want = x0_star.flatten_all().unwrap().to_vec1::<f64>().unwrap();
    assert_eq!(got, want, "oracle sampling must return the oracle answer exactly");

    // posterior_mean(sqrt(alpha_bar_n) c, c) = sqrt(alpha_bar_{n-1}) c.
    for n_steps in [1usize, 2, 7, 50, 1000] {
        let s = make_schedule(ScheduleKind::Linear, n_steps).unwrap();
        let c = 0.7;
        let x0 = Tensor::full(c, (1, 2, 3), &device).unwrap();
        for n in 1..=n_steps {
            let x_n = x0.affine(s.alpha_bar(n).sqrt(), 0.0).unwrap();
            let mu = posterior_mean(&x_n, &x0, n, &s).unwrap();
            let want = s.alpha_bar(n - 1).sqrt() * c;
            for got in mu.flatten_all().unwrap().to_vec1::<f64>().unwrap() {
                assert!(
                    (got - want).abs() <= 1e-9,
                    "fixed-point identity off at N={n_steps}, n={n}: {got} vs {want}"
                );
            }
        }
    }
    pass(1, "oracle sampling exact, sigma_1 = 0, posterior identity within 1e-9", t0);
}

// ---------------------------------------------------------------- criterion 2

fn tiny_dcfg() -> DenoiserConfig {
    DenoiserConfig {
        d_z: 16,
        n_layers: 1,
        n_heads: 1,
        d_img: 4,
        t_obs: 3,
        f_fut: 2,
        joints: 6,
        n_steps: 10,
    }
}

fn grad_pose(yaw: f64, t: [f64; 3]) -> CameraPose {
    CameraPose::new(
        Rotation6d::from_matrix(&camera_orientation(yaw, 0.3)).unwrap(),
        t,
        Intrinsics { fx: 100.0, fy: 100.0, cx: 56.0, cy: 56.0 },
        [112, 112],
    )
    .unwrap()
}

/// Hand-built batch matching [`tiny_dcfg`]: mixed visibility, one joint
/// masked on alternating frames, wrists at indices 1 and 4.
fn tiny_batch(poison_masked: bool) -> Batch {
    let dev = dev();
    let (bsz, t_obs, f_fut, j) = (2, 3, 2, 6);
    let tf = t_obs + f_fut;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut x0 = Vec::new();
    let mut mask = Vec::new();
    for b in 0..bsz {
        for k in 0..tf {
            for jj in 0..j {
                let masked = jj == 3 && (k + b) % 2 == 0;
                for c in 0..3 {
                    let base = [1.5 + 0.1 * k as f64, 0.2 * jj as f64 - 0.5, 1.2][c]
                        + 0.1 * rng.random_range(-1.0..1.0);
                    let v = if masked && poison_masked { 1e6 } else { base };
                    x0.push(v);
                    mask.push(if masked { 0.0 } else { 1.0 });
                }
            }
        }
    }
    let poses: Vec<Vec<CameraPose>> = (0..bsz)
        .map(|b| {
            (0..t_obs)
                .map(|t| grad_pose(0.1 * (b + t) as f64, [0.0, 0.05 * t as f64, 1.6]))
                .collect()
        })
        .collect();
    let mut hands = Vec::new();
    let mut vis = Vec::new();
    for b in 0..bsz {
        for t in 0..t_obs {
            let left_vis = (b + t) % 3 != 0;
            let right_vis = t % 2 == 0;
            let lv = if left_vis { [0.4 + 0.05 * t as f64, 0.5] } else { [-1.0, -1.0] };
            let rv = if right_vis { [0.6, 0.45 + 0.05 * b as f64] } else { [-1.0, -1.0] };
            hands.extend_from_slice(&lv);
            hands.extend_from_slice(&rv);
            vis.push(if left_vis { 1.0 } else { 0.0 });
            vis.push(if right_vis { 1.0 } else { 0.0 });
        }
    }
    let cam: Vec<f64> =
        poses.iter().flat_map(|ps| ps.iter().flat_map(|p| p.conditioning())).collect();
    let img: Vec<f64> = (0..bsz * t_obs * 4).map(|i| (i % 7) as f64 * 0.1).collect();
    Batch {
        x0: Tensor::from_vec(x0, (bsz, tf, 3 * j), &dev).unwrap(),
        joint_mask: Tensor::from_vec(mask, (bsz, tf, 3 * j), &dev).unwrap(),
        cond: Conditioning {
            cam: Tensor::from_vec(cam, (bsz, t_obs, 9), &dev).unwrap(),
            hands: Tensor::from_vec(hands, (bsz, t_obs, 4), &dev).unwrap(),
            img: Tensor::from_vec(img, (bsz, t_obs, 4), &dev).unwrap(),
        },
        vis: Tensor::from_vec(vis, (bsz, t_obs, 2), &dev).unwrap(),
        poses,
        wrists: [1, 4],
    }
}

fn fixed_noise(batch: &Batch, seed: u64) -> (Vec<usize>, Tensor) {
    let (bsz, tf, w) = batch.x0.dims3().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_levels: Vec<usize> = (0..bsz).map(|_| rng.random_range(1..=10)).collect();
    let eps: Vec<f64> = (0..bsz * tf * w).map(|_| StandardNormal.sample(&mut rng)).collect();
    (n_levels, Tensor::from_vec(eps, (bsz, tf, w), batch.x0.device()).unwrap())
}

/// Analytic gradients of the full training loss against central finite
/// differences on every parameter entry. The L1 terms put kinks in the
/// loss, and a secant across a kink carries a bias that does not shrink
/// with the step, so agreement is asserted as
/// |fd - g| <= atol + rtol * max(|fd|, |g|) with atol 1e-8, rtol 1e-4;
/// entries where the relative bound dominates must carry the test.
#[test]
fn criterion_2_gradients_match_finite_differences() {
    let t0 = Instant::now();
    let device = dev();
    let model = Denoiser::new(tiny_dcfg(), 7, &device).unwrap();
    let batch = tiny_batch(false);
    let schedule = make_schedule(ScheduleKind::Linear, 10).unwrap();
    let (n_levels, eps) = fixed_noise(&batch, 5);
    let cfg = TrainConfig { n_steps: 10, ..TrainConfig::default() };

    let eval_total = || {
        let (_, total) = compute_losses(&model, &batch, &schedule, &n_levels, &eps, &cfg).unwrap();
        scalar(&total)
    };
    let (parts, total) = compute_losses(&model, &batch, &schedule, &n_levels, &eps, &cfg).unwrap();
    assert!(scalar(&parts.reproj) > 0.0, "reprojection term inactive");
    assert!(scalar(&parts.vis) > 0.0, "visibility term inactive");
    let grads = total.backward().unwrap();

    let (atol, rtol) = (1e-8, 1e-4);
    let mut strict = 0usize;
    let mut checked = 0usize;
    for (name, var) in model.params() {
        let g = grads.get(var.as_tensor()).unwrap_or_else(|| panic!("no grad for {name}"));
        let g_host = g.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let theta = var.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let dims = var.dims().to_vec();
        for idx in 0..theta.len() {
            let h = 1e-5 * (1.0 + theta[idx].abs());
            let mut plus = theta.clone();
            plus[idx] += h;
            var.set(&Tensor::from_vec(plus, dims.as_slice(), &device).unwrap()).unwrap();
            let f_plus = eval_total();
            let mut minus = theta.clone();
            minus[idx] -= h;
            var.set(&Tensor::from_vec(minus, dims.as_slice(), &device).unwrap()).unwrap();
            let f_minus = eval_total();
            var.set(&Tensor::from_vec(theta.clone(), dims.as_slice(), &device).unwrap()).unwrap();
            let fd = (f_plus - f_minus) / (2.0 * h);
            let scale = fd.abs().max(g_host[idx].abs());
            if scale * rtol > atol {
                strict += 1;
            }
            checked += 1;
            assert!(
                (fd - g_host[idx]).abs() <= atol + rtol * scale,
                "{name}[{idx}]: analytic {} vs fd {fd}",
                g_host[idx]
            );
        }
    }
    assert!(strict > 1000, "only {strict} of {checked} entries above the absolute floor");
    pass(2, "finite differences confirm every parameter gradient", t0);
}

// ---------------------------------------------------------------- criterion 3

/// Loss-term contracts: masked joints influence neither value nor gradient,
/// hidden hands contribute exactly zero reprojection error, chance-level
/// visibility costs ln 2, and the weighted sum matches by hand.
#[test]
fn criterion_3_loss_contracts_hold() {
    let t0 = Instant::now();
    let device = dev();
    let model = Denoiser::new(tiny_dcfg(), 7, &device).unwrap();
    let schedule = make_schedule(ScheduleKind::Linear, 10).unwrap();
    let cfg = TrainConfig { n_steps: 10, ..TrainConfig::default() };
    let clean = tiny_batch(false);
    let poisoned = tiny_batch(true);
    let (n_levels, eps) = fixed_noise(&clean, 5);

    // Poison lives only in supervision targets; the model input stays clean.
    let x_n = noisy_batch(&clean.x0, &n_levels, &eps, &schedule).unwrap();
    let run = |batch: &Batch| {
        let (x0_hat, v_hat) = model.forward(&x_n, &batch.cond, &n_levels).unwrap();
        let (joint, _) = joint_loss(&x0_hat, &batch.x0, &batch.joint_mask).unwrap();
        let vis = visibility_loss(&v_hat, &batch.vis).unwrap();
        let (reproj, _) =
            reprojection_loss(&x0_hat, &batch.cond.hands, &batch.poses, &batch.vis, batch.wrists)
                .unwrap();
        let parts = LossParts { joint, vis, reproj, zero_mask: false, skipped_projections: 0 };
        total_loss(&parts, &cfg).unwrap()
    };
    let t_clean = run(&clean);
    let t_poisoned = run(&poisoned);
    assert_eq!(scalar(&t_clean), scalar(&t_poisoned), "masked joints leaked into the loss");
    let g_clean = t_clean.backward().unwrap();
    let g_poisoned = t_poisoned.backward().unwrap();
    for (name, var) in model.params() {
        let a = g_clean.get(var.as_tensor()).unwrap().flatten_all().unwrap();
        let b = g_poisoned.get(var.as_tensor()).unwrap().flatten_all().unwrap();
        let same = a
            .to_vec1::<f64>()
            .unwrap()
            .into_iter()
            .zip(b.to_vec1::<f64>().unwrap())
            .all(|(x, y)| x == y);
        assert!(same, "masked joints leaked into the gradient of {name}");
    }

    // A frame whose hands are both hidden contributes exactly zero.
    let pose = grad_pose(0.0, [0.0, 0.0, 1.6]);
    let wrist = pose.position() + pose.rotation_matrix().unwrap() * Vec3::new(0.0, 0.0, 2.0);
    let mut x = vec![0.0; 18];
    for (j, w) in [(1usize, wrist), (4usize, wrist)] {
        x[3 * j] = w.x;
        x[3 * j + 1] = w.y;
        x[3 * j + 2] = w.z;
    }
    let x0_hat = Tensor::from_vec(x, (1, 1, 18), &device).unwrap();
    let hands = Tensor::from_vec(vec![-1.0; 4], (1, 1, 4), &device).unwrap();
    let vis = Tensor::zeros((1, 1, 2), candle_core::DType::F64, &device).unwrap();
    let (loss, skipped) =
        reprojection_loss(&x0_hat, &hands, &[vec![pose.clone()]], &vis, [1, 4]).unwrap();
    assert_eq!(scalar(&loss), 0.0, "hidden hands must contribute exactly zero");
    assert_eq!(skipped, 0);

    // Chance-level visibility probabilities cost exactly ln 2.
    let half = Tensor::full(0.5, (1, 2, 2), &device).unwrap();
    let labels =
        Tensor::from_vec(vec![1.0, 0.0, 0.0, 1.0], (1, 2, 2), &device).unwrap();
    let bce = visibility_loss(&half, &labels).unwrap();
    assert!((scalar(&bce) - std::f64::consts::LN_2).abs() < 1e-15);

    // Hand-weighted total: 1 + 0.1 * 1 + 0.05 * 1 = 1.15.
    let one = || Tensor::full(1.0, (), &device).unwrap();
    let parts = LossParts {
        joint: one(),
        vis: one(),
        reproj: one(),
        zero_mask: false,
        skipped_projections: 0,
    };
    let total = total_loss(&parts, &TrainConfig::default()).unwrap();
    assert!((scalar(&total) - 1.15).abs() < 1e-15);
    pass(3, "mask invariance, zero-gated reprojection, BCE and weighting checks", t0);
}

// ---------------------------------------------------------------- criterion 4

/// Displacement, pose, and velocity metrics against brute-force loop
/// oracles on randomized inputs, plus the out-of-view ratio bin edges.
#[test]
fn criterion_4_metrics_match_brute_force_oracles() {
    fn traj(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                )
            })
            .collect()
    }
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..100 {
        let f = rng.random_range(2..7);
        let pred = traj(&mut rng, f);
        let gt = traj(&mut rng, f);
        let mut sum = 0.0;
        for k in 0..f {
            sum += (pred[k] - gt[k]).norm();
        }
        assert!((ade(&pred, &gt).unwrap() - sum / f as f64).abs() < 1e-12);
        assert!((fde(&pred, &gt).unwrap() - (pred[f - 1] - gt[f - 1]).norm()).abs() < 1e-12);

        let j = 4;
        let pf: Vec<Vec<Vec3>> = (0..f).map(|_| traj(&mut rng, j)).collect();
        let gf: Vec<Vec<Vec3>> = (0..f).map(|_| traj(&mut rng, j)).collect();
        let mask: Vec<Vec<bool>> = (0..f)
            .map(|k| (0..j).map(|jj| (k + jj) % 3 != 0).collect())
            .collect();
        let mut sum = 0.0;
        let mut count = 0;
        for k in 0..f {
            for jj in 0..j {
                if mask[k][jj] {
                    sum += (pf[k][jj] - gf[k][jj]).norm();
                    count += 1;
                }
            }
        }
        let got = mpjpe(&pf, &gf, &mask).unwrap().unwrap();
        assert!((got - sum / count as f64).abs() < 1e-12);

        let fps = 10.0;
        let mut vsum = 0.0;
        for k in 1..f {
            for jj in 0..j {
                let vp = (pf[k][jj] - pf[k - 1][jj]) * fps;
                let vg = (gf[k][jj] - gf[k - 1][jj]) * fps;
                vsum += (vp - vg).norm();
            }
        }
        let got = mpjve(&pf, &gf, fps).unwrap();
        assert!((got - vsum / ((f - 1) * j) as f64).abs() < 1e-12);

        let hm: Vec<bool> = (0..j).map(|jj| jj != 2).collect();
        let got = wrist_relative_mpjpe(&pf[0], &gf[0], &hm).unwrap().unwrap();
        let mut sum = 0.0;
        let mut count = 0;
        for jj in 1..j {
            if hm[jj] {
                sum += ((pf[0][jj] - pf[0][0]) - (gf[0][jj] - gf[0][0])).norm();
                count += 1;
            }
        }
        assert!((got - sum / count as f64).abs() < 1e-12);
    }

    assert_eq!(bin_gamma(0.0), None);
    assert_eq!(bin_gamma(4.0 / 20.0), Some(0));
    assert_eq!(bin_gamma(0.2 + 1e-12), Some(1));
    assert_eq!(bin_gamma(1.0), Some(4));
    pass(4, "metric values match loop oracles within 1e-12, bin edges exact", t0);
}

// ------------------------------------------------------- criteria 5, 6, 7

fn synth_dataset(seed: u64, n: usize, f_fut: usize) -> Vec<Sequence> {
    let cfg = GenConfig {
        seed,
        n_sequences: n,
        t_obs: 10,
        f_fut,
        d_img: 8,
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

fn small_model(
    seed: u64,
    batch_size: usize,
    iterations: usize,
    f_fut: usize,
) -> (DenoiserConfig, TrainConfig) {
    let dcfg = DenoiserConfig {
        d_z: 64,
        n_layers: 2,
        n_heads: 4,
        d_img: 8,
        t_obs: 10,
        f_fut,
        joints: JOINT_COUNT,
        n_steps: 1000,
    };
    let tcfg = TrainConfig {
        iterations,
        learning_rate: 1e-3,
        batch_size,
        seed,
        ..TrainConfig::default()
    };
    (dcfg, tcfg)
}

fn pooled(report: &MetricsReport, view: &str) -> f64 {
    report
        .partitions
        .iter()
        .find(|r| r.side == "pooled" && r.view == view)
        .and_then(|r| r.ade.mean)
        .unwrap_or_else(|| panic!("pooled/{view} ADE undefined"))
}

/// The model memorizes a tiny training set: the joint loss settles below
/// 0.02 and a single sample per sequence lands within 5 cm ADE of the
/// training trajectories.
#[test]
fn criterion_5_overfit_recovers_training_sequences() {
    let t0 = Instant::now();
    let data = synth_dataset(5, 8, 5);
    let (dcfg, tcfg) = small_model(5, 8, 12000, 5);
    let mut tail = Vec::new();
    let trainer = train(&data, dcfg, tcfg, &dev(), |row| {
        tail.push(row.joint);
        if tail.len() > 100 {
            tail.remove(0);
        }
    })
    .unwrap();
    let joint = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!(joint < 0.02, "joint loss over the last 100 iterations is {joint:.4}, want < 0.02");

    let report =
        evaluate(&Method::Model(&trainer), &data, &EvalConfig { seed: 0, fps: 10.0 }).unwrap();
    let got = pooled(&report, "all");
    assert!(got < 0.05, "training-set ADE is {got:.4}, want < 0.05");
    pass(5, "overfit run memorizes its training set", t0);
}

struct DirectionRun {
    model: MetricsReport,
    static_: MetricsReport,
    cvm: MetricsReport,
}

static DIRECTION: OnceLock<DirectionRun> = OnceLock::new();

/// Train once on 256 sequences at a one-second forecast horizon and
/// evaluate on 50 held-out sequences; shared by criteria 6 and 7. The long
/// horizon is where constant-velocity extrapolation degrades (reaches
/// decelerate, turns curve, sway reverses), so the ordering the criterion
/// asserts is about the learned motion prior, not sampling luck.
fn direction_run() -> &'static DirectionRun {
    DIRECTION.get_or_init(|| {
        let train_set = synth_dataset(0, 256, 10);
        let held_out = synth_dataset(1, 50, 10);
        let (dcfg, tcfg) = small_model(0, 32, 5000, 10);
        let trainer = train(&train_set, dcfg, tcfg, &dev(), |_| {}).unwrap();
        let cfg = EvalConfig { seed: 0, fps: 10.0 };
        let stats = compute_stats(&train_set).unwrap();
        DirectionRun {
            model: evaluate(&Method::Model(&trainer), &held_out, &cfg).unwrap(),
            static_: evaluate(&Method::Static(&stats), &held_out, &cfg).unwrap(),
            cvm: evaluate(&Method::ConstantVelocity, &held_out, &cfg).unwrap(),
        }
    })
}

/// On held-out sequences the trained model beats both baselines on pooled
/// ADE, and its in-view error is below its out-of-view error.
#[test]
fn criterion_6_model_beats_baselines_on_held_out_data() {
    let t0 = Instant::now();
    let run = direction_run();
    let model = pooled(&run.model, "all");
    let static_ = pooled(&run.static_, "all");
    let cvm = pooled(&run.cvm, "all");
    assert!(model < static_, "model ADE {model:.4} not below static {static_:.4}");
    assert!(model < cvm, "model ADE {model:.4} not below constant-velocity {cvm:.4}");
    let in_view = pooled(&run.model, "in_view");
    let out_of_view = pooled(&run.model, "out_of_view");
    assert!(
        in_view < out_of_view,
        "in-view ADE {in_view:.4} not below out-of-view {out_of_view:.4}"
    );
    pass(
        6,
        &format!(
            "held-out ADE: model {model:.4} < cvm {cvm:.4}, static {static_:.4}; \
             in-view {in_view:.4} < out-of-view {out_of_view:.4}"
        ),
        t0,
    );
}

/// The visibility head classifies hidden observation frames: accuracy
/// above 0.9 at a 0.5 threshold on held-out sequences.
#[test]
fn criterion_7_visibility_head_classifies_hidden_frames() {
    let t0 = Instant::now();
    let run = direction_run();
    let acc = run.model.visibility_accuracy.expect("model run must report accuracy");
    assert!(run.model.visibility_count > 0);
    assert!(acc > 0.9, "visibility accuracy {acc:.4}, want > 0.9");
    pass(7, &format!("visibility accuracy {acc:.4} over {} flags", run.model.visibility_count), t0);
}

// ---------------------------------------------------------------- criterion 8

/// Geometry round trips at 1e-9: rotation encoding, project/lift, the
/// canonicalizing transform, and its effect on the reference pose.
#[test]
fn criterion_8_geometry_round_trips() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let yaw = rng.random_range(-3.1..3.1);
        let pitch = rng.random_range(-1.2..1.2);
        let m = camera_orientation(yaw, pitch);
        let r6 = Rotation6d::from_matrix(&m).unwrap();
        let back = r6.to_matrix().unwrap();
        assert!((back - m).norm() < 1e-9, "rotation encoding round trip");

        let pose = CameraPose::new(
            r6,
            [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.5..2.0)],
            Intrinsics { fx: 170.0, fy: 170.0, cx: 112.0, cy: 112.0 },
            [224, 224],
        )
        .unwrap();
        let p = pose.position()
            + pose.rotation_matrix().unwrap()
                * Vec3::new(
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(0.3..3.0),
                );
        let (uv, depth) = pose.project(p).unwrap();
        let lifted = pose.lift(uv, depth).unwrap();
        assert!((lifted - p).norm() < 1e-9, "project/lift round trip");

        let ct = CanonicalTransform::from_reference(&pose).unwrap();
        let q = Vec3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        );
        assert!((ct.invert_point(ct.apply_point(q)) - q).norm() < 1e-9, "transform inverse");

        // The canonicalized reference pose needs no further transform.
        let moved = ct.apply_pose(&pose).unwrap();
        let again = CanonicalTransform::from_reference(&moved).unwrap();
        let off = again.horizontal_offset;
        assert!(
            again.yaw.abs() < 1e-9 && off[0].hypot(off[1]) < 1e-9,
            "reference pose must canonicalize to the identity"
        );
    }

    // Canonicalizing a sequence preserves all camera-relative geometry.
    let data = synth_dataset(2, 1, 5);
    let seq = &data[0];
    for t in 0..seq.t_obs() {
        let pose = &seq.obs_poses[t];
        for side in Side::BOTH {
            let w = seq.obs_joints[t].position(side.wrist()).unwrap();
            let flags = match side {
                Side::Left => seq.obs_hands2d[t].left_visible,
                Side::Right => seq.obs_hands2d[t].right_visible,
            };
            assert_eq!(pose.in_view(w), flags, "visibility flag mismatch at frame {t}");
        }
    }
    pass(8, "rotation, projection, and canonicalization round trips within 1e-9", t0);
}

// ---------------------------------------------------------------- criterion 9

fn cli() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_handcast"));
    for (name, _) in std::env::vars() {
        if name.starts_with("HANDCAST_") {
            cmd.env_remove(name);
        }
    }
    cmd
}

fn run_ok(args: &[&str]) {
    let out = cli().args(args).output().expect("spawn handcast");
    assert!(
        out.status.success(),
        "handcast {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn file_bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Re-running every pipeline stage with the same seeds reproduces each
/// artifact byte for byte.
#[test]
fn criterion_9_identical_seeds_reproduce_identical_artifacts() {
    let t0 = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let small = [
        "--set",
        "gen.t_obs=6",
        "--set",
        "gen.f_fut=3",
        "--set",
        "gen.d_img=8",
    ];
    let model = [
        "--set",
        "model.d_z=32",
        "--set",
        "model.n_layers=1",
        "--set",
        "model.n_heads=2",
        "--set",
        "train.n_steps=8",
        "--set",
        "train.batch_size=2",
    ];

    let mut artifacts: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
    for pass_dir in ["x", "y"] {
        let base = root.join(pass_dir);
        let data = base.join("data");
        let mut args = vec![
            "gen".to_string(),
            "--out".into(),
            data.to_str().unwrap().into(),
            "--seed".into(),
            "11".into(),
            "--n".into(),
            "3".into(),
        ];
        args.extend(small.iter().map(|s| s.to_string()));
        run_ok(&args.iter().map(String::as_str).collect::<Vec<_>>());

        let train_out = base.join("train");
        let mut args = vec![
            "train".to_string(),
            "--data".into(),
            data.join("train.jsonl").to_str().unwrap().into(),
            "--out".into(),
            train_out.to_str().unwrap().into(),
            "--iterations".into(),
            "30".into(),
        ];
        args.extend(model.iter().map(|s| s.to_string()));
        run_ok(&args.iter().map(String::as_str).collect::<Vec<_>>());

        let eval_out = base.join("eval");
        run_ok(&[
            "eval",
            "--ckpt",
            train_out.join("checkpoint.safetensors").to_str().unwrap(),
            "--data",
            data.join("val.jsonl").to_str().unwrap(),
            "--out",
            eval_out.to_str().unwrap(),
            "--baselines",
            "static,cvm",
        ]);

        let fc_out = base.join("fc");
        run_ok(&[
            "forecast",
            "--ckpt",
            train_out.join("checkpoint.safetensors").to_str().unwrap(),
            "--data",
            data.join("val.jsonl").to_str().unwrap(),
            "--out",
            fc_out.to_str().unwrap(),
        ]);

        let mut bundle = Vec::new();
        for dir in [&data, &train_out, &eval_out, &fc_out] {
            let mut names: Vec<_> = std::fs::read_dir(dir)
                .unwrap()
                .map(|e| e.unwrap().path())
                .filter(|p| p.is_file())
                .collect();
            names.sort();
            for p in names {
                let rel = p.strip_prefix(&base).unwrap().to_str().unwrap().to_string();
                bundle.push((rel, file_bytes(&p)));
            }
        }
        artifacts.push(bundle);
    }
    let [a, b] = <[_; 2]>::try_from(artifacts).ok().unwrap();
    assert_eq!(a.len(), b.len());
    let mut n = 0;
    for ((name_a, bytes_a), (name_b, bytes_b)) in a.iter().zip(&b) {
        assert_eq!(name_a, name_b);
        assert_eq!(bytes_a, bytes_b, "{name_a} differs between identical runs");
        n += 1;
    }
    assert!(n >= 10, "expected at least 10 artifacts, saw {n}");
    pass(9, &format!("{n} artifacts byte-identical across reruns"), t0);
}
