//! The conditional denoising network: observation/future encoders, a
//! bidirectional transformer trunk with noise-level and positional
//! embeddings, a joint decoder over every token, and a visibility decoder
//! over observation tokens.
//!
//! All parameters are f64 and initialized from an explicit seeded stream so
//! that construction is reproducible bit-for-bit.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use candle_nn::ops::softmax;
use candle_nn::{Linear, Module};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sequence;
use crate::error::{Error, Result};

/// Visibility probabilities are clamped this far inside (0,1) so the open
/// interval survives sigmoid saturation in f64.
pub const VIS_EPS: f64 = 1e-7;
/// Hidden widening factor of the transformer feed-forward blocks.
const FF_RATIO: usize = 4;
const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    /// Token width.
    pub d_z: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Image-feature width consumed by the observation encoder.
    pub d_img: usize,
    /// Observation frames per sequence.
    pub t_obs: usize,
    /// Future frames per sequence.
    pub f_fut: usize,
    /// Joint count.
    pub joints: usize,
    /// Diffusion step count the model is trained against.
    pub n_steps: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            d_z: 512,
            n_layers: 4,
            n_heads: 8,
            d_img: 384,
            t_obs: 20,
            f_fut: 10,
            joints: 57,
            n_steps: 1000,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("d_z", self.d_z),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("t_obs", self.t_obs),
            ("f_fut", self.f_fut),
            ("joints", self.joints),
            ("n_steps", self.n_steps),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.d_z % self.n_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d_z = {} not divisible by n_heads = {}",
                self.d_z, self.n_heads
            )));
        }
        if self.d_z % 2 != 0 {
            return Err(Error::InvalidConfig("d_z must be even for the sinusoidal embedding".into()));
        }
        Ok(())
    }

    /// Flat input width of an observation token:
    /// joints (3J) + camera (9) + left 2D (2) + right 2D (2) + image features.
    pub fn obs_input_width(&self) -> usize {
        3 * self.joints + 9 + 2 + 2 + self.d_img
    }

    pub fn fut_input_width(&self) -> usize {
        3 * self.joints
    }

    pub fn n_tokens(&self) -> usize {
        self.t_obs + self.f_fut
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Uniform { bound: f64 },
    Zeros,
    Ones,
}

/// Ordered parameter layout; the same list drives seeded initialization and
/// checkpoint validation.
fn param_specs(cfg: &DenoiserConfig) -> Vec<(String, Vec<usize>, Init)> {
    let mut specs = Vec::new();
    let linear = |name: &str, out: usize, inp: usize, specs: &mut Vec<_>| {
        let bound = 1.0 / (inp as f64).sqrt();
        specs.push((format!("{name}.weight"), vec![out, inp], Init::Uniform { bound }));
        specs.push((format!("{name}.bias"), vec![out], Init::Uniform { bound }));
    };
    let layer_norm = |name: &str, d: usize, specs: &mut Vec<_>| {
        specs.push((format!("{name}.weight"), vec![d], Init::Ones));
        specs.push((format!("{name}.bias"), vec![d], Init::Zeros));
    };
    let d = cfg.d_z;
    linear("obs_enc.fc1", d, cfg.obs_input_width(), &mut specs);
    linear("obs_enc.fc2", d, d, &mut specs);
    linear("fut_enc", d, cfg.fut_input_width(), &mut specs);
    linear("noise_proj", d, d, &mut specs);
    specs.push(("pos_emb".into(), vec![cfg.n_tokens(), d], Init::Uniform { bound: 0.02 }));
    for i in 0..cfg.n_layers {
        layer_norm(&format!("block{i}.ln1"), d, &mut specs);
        linear(&format!("block{i}.attn.q"), d, d, &mut specs);
        linear(&format!("block{i}.attn.k"), d, d, &mut specs);
        linear(&format!("block{i}.attn.v"), d, d, &mut specs);
        linear(&format!("block{i}.attn.o"), d, d, &mut specs);
        layer_norm(&format!("block{i}.ln2"), d, &mut specs);
        linear(&format!("block{i}.ff.fc1"), FF_RATIO * d, d, &mut specs);
        linear(&format!("block{i}.ff.fc2"), d, FF_RATIO * d, &mut specs);
    }
    layer_norm("final_ln", d, &mut specs);
    linear("joint_dec", cfg.fut_input_width(), d, &mut specs);
    linear("vis_dec", 2, d, &mut specs);
    specs
}

struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    n_heads: usize,
    d_head: usize,
}

impl Attention {
    /// Full bidirectional attention over all tokens; no mask.
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, l, d) = x.dims3()?;
        let split = |t: Tensor| -> Result<Tensor> {
            Ok(t.reshape((b, l, self.n_heads, self.d_head))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(self.q.forward(x)?)?;
        let k = split(self.k.forward(x)?)?;
        let v = split(self.v.forward(x)?)?;
        let scale = 1.0 / (self.d_head as f64).sqrt();
        let scores = q.matmul(&k.transpose(2, 3)?.contiguous()?)?.affine(scale, 0.0)?;
        let probs = softmax(&scores, D::Minus1)?;
        let ctx = probs.matmul(&v)?;
        let merged = ctx.transpose(1, 2)?.contiguous()?.reshape((b, l, d))?;
        Ok(self.o.forward(&merged)?)
    }
}

/// Layer norm from primitive tensor ops: candle's fused kernel is
/// f32-only and lacks a backward pass.
struct Norm {
    w: Tensor,
    b: Tensor,
}

impl Norm {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + LN_EPS)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.w)?.broadcast_add(&self.b)?)
    }
}

struct Block {
    ln1: Norm,
    attn: Attention,
    ln2: Norm,
    ff_fc1: Linear,
    ff_fc2: Linear,
}

impl Block {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = (x + self.attn.forward(&self.ln1.forward(x)?)?)?;
        let ff = self.ff_fc2.forward(&self.ff_fc1.forward(&self.ln2.forward(&h)?)?.gelu()?)?;
        Ok((h + ff)?)
    }
}

/// Per-frame observation conditions for a batch, as (B, T, width) tensors.
#[derive(Debug, Clone)]
pub struct Conditioning {
    /// Camera conditioning vectors, width 9.
    pub cam: Tensor,
    /// Normalized 2D wrist observations, width 4: left uv then right uv.
    pub hands: Tensor,
    /// Image features, width d_img.
    pub img: Tensor,
}

impl Conditioning {
    /// Assemble condition tensors from sequences (one batch row each).
    pub fn from_sequences(seqs: &[&Sequence], device: &Device) -> Result<Conditioning> {
        let b = seqs.len();
        if b == 0 {
            return Err(Error::Contract("empty batch".into()));
        }
        let t = seqs[0].t_obs();
        let d_img = seqs[0].d_img();
        let mut cam = Vec::with_capacity(b * t * 9);
        let mut hands = Vec::with_capacity(b * t * 4);
        let mut img = Vec::with_capacity(b * t * d_img);
        for seq in seqs {
            if seq.t_obs() != t || seq.d_img() != d_img {
                return Err(Error::Contract("sequences in a batch disagree on shape".into()));
            }
            for k in 0..t {
                cam.extend_from_slice(&seq.obs_poses[k].conditioning());
                let h = &seq.obs_hands2d[k];
                hands.extend_from_slice(&[h.left[0], h.left[1], h.right[0], h.right[1]]);
                img.extend_from_slice(&seq.obs_features[k]);
            }
        }
        Ok(Conditioning {
            cam: Tensor::from_vec(cam, (b, t, 9), device)?,
            hands: Tensor::from_vec(hands, (b, t, 4), device)?,
            img: Tensor::from_vec(img, (b, t, d_img), device)?,
        })
    }
}

/// The denoising transformer.
pub struct Denoiser {
    cfg: DenoiserConfig,
    device: Device,
    params: Vec<(String, Var)>,
    obs_fc1: Linear,
    obs_fc2: Linear,
    fut_enc: Linear,
    noise_proj: Linear,
    pos_emb: Tensor,
    blocks: Vec<Block>,
    final_ln: Norm,
    joint_dec: Linear,
    vis_dec: Linear,
}

impl Denoiser {
    /// Fresh model with parameters drawn from a seeded stream: uniform
    /// +-1/sqrt(fan_in) for linear maps, +-0.02 for positional embeddings,
    /// ones/zeros for layer norms.
    pub fn new(cfg: DenoiserConfig, seed: u64, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for (name, shape, init) in param_specs(&cfg) {
            let len: usize = shape.iter().product();
            let data: Vec<f64> = match init {
                Init::Uniform { bound } => {
                    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
                }
                Init::Zeros => vec![0.0; len],
                Init::Ones => vec![1.0; len],
            };
            let var = Var::from_vec(data, shape.as_slice(), device)?;
            params.push((name, var));
        }
        Self::wire(cfg, device.clone(), params)
    }

    /// Rebuild a model from named tensors (checkpoint restore). The name set
    /// and shapes must match the config's layout exactly.
    pub fn from_named_tensors(
        cfg: DenoiserConfig,
        tensors: &BTreeMap<String, Tensor>,
        device: &Device,
    ) -> Result<Self> {
        cfg.validate()?;
        let specs = param_specs(&cfg);
        if tensors.len() != specs.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} model tensors, found {}",
                specs.len(),
                tensors.len()
            )));
        }
        let mut params = Vec::new();
        for (name, shape, _) in specs {
            let t = tensors
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing model tensor {name}")))?;
            if t.dims() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.dims()
                )));
            }
            let t = t.to_dtype(DType::F64)?.to_device(device)?;
            params.push((name, Var::from_tensor(&t)?));
        }
        Self::wire(cfg, device.clone(), params)
    }

    fn wire(cfg: DenoiserConfig, device: Device, params: Vec<(String, Var)>) -> Result<Self> {
        let get = |name: &str| -> Result<Tensor> {
            params
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| v.as_tensor().clone())
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
        };
        let linear = |name: &str| -> Result<Linear> {
            Ok(Linear::new(get(&format!("{name}.weight"))?, Some(get(&format!("{name}.bias"))?)))
        };
        let layer_norm = |name: &str| -> Result<Norm> {
            Ok(Norm { w: get(&format!("{name}.weight"))?, b: get(&format!("{name}.bias"))? })
        };
        let blocks = (0..cfg.n_layers)
            .map(|i| {
                Ok(Block {
                    ln1: layer_norm(&format!("block{i}.ln1"))?,
                    attn: Attention {
                        q: linear(&format!("block{i}.attn.q"))?,
                        k: linear(&format!("block{i}.attn.k"))?,
                        v: linear(&format!("block{i}.attn.v"))?,
                        o: linear(&format!("block{i}.attn.o"))?,
                        n_heads: cfg.n_heads,
                        d_head: cfg.d_z / cfg.n_heads,
                    },
                    ln2: layer_norm(&format!("block{i}.ln2"))?,
                    ff_fc1: linear(&format!("block{i}.ff.fc1"))?,
                    ff_fc2: linear(&format!("block{i}.ff.fc2"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Denoiser {
            obs_fc1: linear("obs_enc.fc1")?,
            obs_fc2: linear("obs_enc.fc2")?,
            fut_enc: linear("fut_enc")?,
            noise_proj: linear("noise_proj")?,
            pos_emb: get("pos_emb")?,
            blocks,
            final_ln: layer_norm("final_ln")?,
            joint_dec: linear("joint_dec")?,
            vis_dec: linear("vis_dec")?,
            cfg,
            device,
            params,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Trainable parameters in construction order.
    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, v)| v.as_tensor().elem_count()).sum()
    }

    /// Parameter names in construction order for a given config.
    pub fn parameter_names(cfg: &DenoiserConfig) -> Vec<String> {
        param_specs(cfg).into_iter().map(|(name, _, _)| name).collect()
    }

    /// Sinusoidal noise-level features: half sines, half cosines over a
    /// geometric frequency ladder.
    fn sinusoid(&self, n_levels: &[usize]) -> Result<Tensor> {
        let d = self.cfg.d_z;
        let half = d / 2;
        let mut data = Vec::with_capacity(n_levels.len() * d);
        for &n in n_levels {
            let x = n as f64;
            for i in 0..half {
                let freq = 10000f64.powf(-2.0 * i as f64 / d as f64);
                data.push((x * freq).sin());
            }
            for i in 0..half {
                let freq = 10000f64.powf(-2.0 * i as f64 / d as f64);
                data.push((x * freq).cos());
            }
        }
        Ok(Tensor::from_vec(data, (n_levels.len(), d), &self.device)?)
    }

    fn check_forward_shapes(&self, x_n: &Tensor, cond: &Conditioning, n_levels: &[usize]) -> Result<usize> {
        let cfg = &self.cfg;
        let (b, l, w) = x_n.dims3().map_err(|e| Error::Contract(format!("state tensor: {e}")))?;
        if l != cfg.n_tokens() || w != cfg.fut_input_width() {
            return Err(Error::Contract(format!(
                "state shape ({b}, {l}, {w}) does not match (B, {}, {})",
                cfg.n_tokens(),
                cfg.fut_input_width()
            )));
        }
        if n_levels.len() != b {
            return Err(Error::Contract(format!(
                "{} noise levels for batch of {b}",
                n_levels.len()
            )));
        }
        for &n in n_levels {
            if n < 1 || n > cfg.n_steps {
                return Err(Error::NoiseLevel { n, lo: 1, hi: cfg.n_steps });
            }
        }
        for (name, t, width) in [
            ("cam", &cond.cam, 9),
            ("hands", &cond.hands, 4),
            ("img", &cond.img, cfg.d_img),
        ] {
            let dims = t.dims3().map_err(|e| Error::Contract(format!("{name} tensor: {e}")))?;
            if dims != (b, cfg.t_obs, width) {
                return Err(Error::Contract(format!(
                    "{name} shape {dims:?} does not match ({b}, {}, {width})",
                    cfg.t_obs
                )));
            }
        }
        Ok(b)
    }

    /// Denoise a batch. `x_n` is the noisy full trajectory (B, T+F, 3J);
    /// conditions cover the T observation frames; `n_levels` gives one noise
    /// level per batch row. Returns the x0 prediction (B, T+F, 3J) and
    /// visibility probabilities (B, T, 2) in the open interval (0,1).
    pub fn forward(
        &self,
        x_n: &Tensor,
        cond: &Conditioning,
        n_levels: &[usize],
    ) -> Result<(Tensor, Tensor)> {
        let cfg = &self.cfg;
        self.check_forward_shapes(x_n, cond, n_levels)?;
        let x_obs = x_n.narrow(1, 0, cfg.t_obs)?;
        let x_fut = x_n.narrow(1, cfg.t_obs, cfg.f_fut)?;
        let obs_in = Tensor::cat(&[&x_obs, &cond.cam, &cond.hands, &cond.img], 2)?;
        let obs_tok = self.obs_fc2.forward(&self.obs_fc1.forward(&obs_in)?.gelu()?)?;
        let fut_tok = self.fut_enc.forward(&x_fut)?;
        let tokens = Tensor::cat(&[&obs_tok, &fut_tok], 1)?;
        let noise = self.noise_proj.forward(&self.sinusoid(n_levels)?)?.unsqueeze(1)?;
        let mut h = tokens.broadcast_add(&noise)?.broadcast_add(&self.pos_emb.unsqueeze(0)?)?;
        for block in &self.blocks {
            h = block.forward(&h)?;
        }
        let h = self.final_ln.forward(&h)?;
        let x0_hat = self.joint_dec.forward(&h)?;
        let vis_logits = self.vis_dec.forward(&h.narrow(1, 0, cfg.t_obs)?)?;
        let vis = candle_nn::ops::sigmoid(&vis_logits)?.clamp(VIS_EPS, 1.0 - VIS_EPS)?;
        Ok((x0_hat, vis))
    }

    /// Encode a single observation frame to its d_z token.
    pub fn encode_obs(
        &self,
        x_t: &[f64],
        cam: &[f64; 9],
        left: [f64; 2],
        right: [f64; 2],
        img: &[f64],
    ) -> Result<Vec<f64>> {
        let cfg = &self.cfg;
        if x_t.len() != cfg.fut_input_width() {
            return Err(Error::Contract(format!(
                "joint input length {} does not match 3J = {}",
                x_t.len(),
                cfg.fut_input_width()
            )));
        }
        if img.len() != cfg.d_img {
            return Err(Error::Contract(format!(
                "image feature length {} does not match d_img = {}",
                img.len(),
                cfg.d_img
            )));
        }
        let mut flat = Vec::with_capacity(cfg.obs_input_width());
        flat.extend_from_slice(x_t);
        flat.extend_from_slice(cam);
        flat.extend_from_slice(&left);
        flat.extend_from_slice(&right);
        flat.extend_from_slice(img);
        let t = Tensor::from_vec(flat, (1, cfg.obs_input_width()), &self.device)?;
        let tok = self.obs_fc2.forward(&self.obs_fc1.forward(&t)?.gelu()?)?;
        Ok(tok.flatten_all()?.to_vec1()?)
    }

    /// Encode a single future frame (linear map) to its d_z token.
    pub fn encode_fut(&self, x_t: &[f64]) -> Result<Vec<f64>> {
        let cfg = &self.cfg;
        if x_t.len() != cfg.fut_input_width() {
            return Err(Error::Contract(format!(
                "joint input length {} does not match 3J = {}",
                x_t.len(),
                cfg.fut_input_width()
            )));
        }
        let t = Tensor::from_vec(x_t.to_vec(), (1, cfg.fut_input_width()), &self.device)?;
        Ok(self.fut_enc.forward(&t)?.flatten_all()?.to_vec1()?)
    }
}
