//! Command-line entry points: dataset generation, training, evaluation,
//! forecasting, and plot emission.
//!
//! Configuration is layered: built-in defaults, then a key-value config
//! file, then `HANDCAST_*` environment variables, then `--set key=value`
//! pairs, then dedicated flags. The fully resolved configuration is written
//! into every output directory before any long-running work starts. Exit
//! codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use candle_core::Device;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{load_dataset, partition_by_view, Sequence, Side, JOINT_COUNT};
use crate::denoiser::DenoiserConfig;
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, forecast, load_report, render_table, save_report, EvalConfig, Method,
};
use crate::plot::{plot_error_curve, plot_overlay, plot_top_down};
use crate::synthgen::{generate_dataset, FeatureMode, GenConfig};
use crate::training::{run_to_completion, LogRow, TrainConfig, Trainer};

/// Environment variables with this prefix override config-file values:
/// uppercase the key and replace separators with underscores, e.g.
/// `gen.mix.reach` becomes `HANDCAST_GEN_MIX_REACH`.
pub const ENV_PREFIX: &str = "HANDCAST_";

const FORECAST_SCHEMA: &str = "forecast.v1";

/// Every recognized configuration key.
pub const CONFIG_KEYS: &[&str] = &[
    "gen.seed",
    "gen.n_sequences",
    "gen.fps",
    "gen.t_obs",
    "gen.f_fut",
    "gen.image_w",
    "gen.image_h",
    "gen.fx",
    "gen.fy",
    "gen.cx",
    "gen.cy",
    "gen.feature_mode",
    "gen.d_img",
    "gen.mix.reach",
    "gen.mix.carry",
    "gen.mix.turn_reach",
    "gen.mix.idle_sway",
    "train.iterations",
    "train.learning_rate",
    "train.batch_size",
    "train.lambda_vis",
    "train.lambda_reproj",
    "train.seed",
    "train.n_steps",
    "model.d_z",
    "model.n_layers",
    "model.n_heads",
    "model.joints",
    "eval.seed",
    "eval.fps",
];

/// The full resolved configuration for one invocation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunConfig {
    pub gen: GenConfig,
    pub train: TrainConfig,
    pub model: DenoiserConfig,
    pub eval: EvalConfig,
}

fn parse_as<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.parse().map_err(|e| Error::InvalidConfig(format!("cannot parse {key}={value}: {e}")))
}

impl RunConfig {
    /// Set one key. Unknown keys and unparsable values are config errors.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "gen.seed" => self.gen.seed = parse_as(key, value)?,
            "gen.n_sequences" => self.gen.n_sequences = parse_as(key, value)?,
            "gen.fps" => self.gen.fps = parse_as(key, value)?,
            "gen.t_obs" => self.gen.t_obs = parse_as(key, value)?,
            "gen.f_fut" => self.gen.f_fut = parse_as(key, value)?,
            "gen.image_w" => self.gen.image_size[0] = parse_as(key, value)?,
            "gen.image_h" => self.gen.image_size[1] = parse_as(key, value)?,
            "gen.fx" => self.gen.intrinsics.fx = parse_as(key, value)?,
            "gen.fy" => self.gen.intrinsics.fy = parse_as(key, value)?,
            "gen.cx" => self.gen.intrinsics.cx = parse_as(key, value)?,
            "gen.cy" => self.gen.intrinsics.cy = parse_as(key, value)?,
            "gen.feature_mode" => {
                self.gen.feature_mode = match value {
                    "zeros" => FeatureMode::Zeros,
                    "scene" => FeatureMode::SceneEncoding,
                    other => {
                        return Err(Error::InvalidConfig(format!(
                            "gen.feature_mode must be zeros or scene, got {other}"
                        )))
                    }
                }
            }
            "gen.d_img" => self.gen.d_img = parse_as(key, value)?,
            "gen.mix.reach" => self.gen.motion_mix.reach = parse_as(key, value)?,
            "gen.mix.carry" => self.gen.motion_mix.carry = parse_as(key, value)?,
            "gen.mix.turn_reach" => self.gen.motion_mix.turn_reach = parse_as(key, value)?,
            "gen.mix.idle_sway" => self.gen.motion_mix.idle_sway = parse_as(key, value)?,
            "train.iterations" => self.train.iterations = parse_as(key, value)?,
            "train.learning_rate" => self.train.learning_rate = parse_as(key, value)?,
            "train.batch_size" => self.train.batch_size = parse_as(key, value)?,
            "train.lambda_vis" => self.train.lambda_vis = parse_as(key, value)?,
            "train.lambda_reproj" => self.train.lambda_reproj = parse_as(key, value)?,
            "train.seed" => self.train.seed = parse_as(key, value)?,
            "train.n_steps" => self.train.n_steps = parse_as(key, value)?,
            "model.d_z" => self.model.d_z = parse_as(key, value)?,
            "model.n_layers" => self.model.n_layers = parse_as(key, value)?,
            "model.n_heads" => self.model.n_heads = parse_as(key, value)?,
            "model.joints" => self.model.joints = parse_as(key, value)?,
            "eval.seed" => self.eval.seed = parse_as(key, value)?,
            "eval.fps" => self.eval.fps = parse_as(key, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown config key {key}"))),
        }
        Ok(())
    }

    /// Layer a `key = value` file: one pair per line, `#` comments, blank
    /// lines ignored.
    pub fn layer_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("{}:{}: expected key = value", path.display(), i + 1))
            })?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Layer environment variables carrying the [`ENV_PREFIX`].
    pub fn layer_env(&mut self, vars: impl Iterator<Item = (String, String)>) -> Result<()> {
        for (name, value) in vars {
            let Some(suffix) = name.strip_prefix(ENV_PREFIX) else { continue };
            let normalized = suffix.to_ascii_lowercase();
            let key = CONFIG_KEYS
                .iter()
                .find(|k| k.replace(['.'], "_") == normalized)
                .ok_or_else(|| {
                    Error::InvalidConfig(format!("unknown environment override {name}"))
                })?;
            self.apply(key, &value)?;
        }
        Ok(())
    }

    /// Defaults, then the optional file, then the process environment, then
    /// `--set` pairs.
    pub fn resolve(config: Option<&Path>, sets: &[String]) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = config {
            if !path.exists() {
                return Err(Error::InvalidConfig(format!(
                    "config file not found: {}",
                    path.display()
                )));
            }
            cfg.layer_file(path)?;
        }
        cfg.layer_env(std::env::vars())?;
        for pair in sets {
            let (key, value) = pair.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("--set wants key=value, got {pair:?}"))
            })?;
            cfg.apply(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Key-value config file layered over defaults.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set train.iterations=500.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        RunConfig::resolve(self.config.as_deref(), &self.set)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "handcast",
    about = "Egocentric 3D hand-trajectory forecasting: synthetic data, training, evaluation, plots",
    after_help = "Config precedence: defaults < --config file < HANDCAST_* environment \
                  variables < --set pairs < dedicated flags. Environment names uppercase \
                  the key and turn separators into underscores (gen.mix.reach -> \
                  HANDCAST_GEN_MIX_REACH). Run with --help on a subcommand for its flags."
)]
pub struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Generate synthetic train/val datasets.
    Gen(GenArgs),
    /// Train the denoiser on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint (and optionally baselines) on a dataset.
    Eval(EvalArgs),
    /// Write full-trajectory forecasts for dataset sequences.
    Forecast(ForecastArgs),
    /// Render forecast and report plots.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Output directory for train.jsonl, val.jsonl, and config.json.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Generator seed (the validation split uses seed + 1).
    #[arg(long)]
    seed: Option<u64>,
    /// Sequences per split.
    #[arg(long)]
    n: Option<usize>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training dataset file.
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    /// Output directory for checkpoint.safetensors, loss.csv, config.json.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Total iteration target (resumed runs continue up to this count).
    #[arg(long)]
    iterations: Option<usize>,
    /// Training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from an existing checkpoint.
    #[arg(long, value_name = "FILE")]
    resume: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long, value_name = "FILE")]
    ckpt: PathBuf,
    /// Evaluation dataset file.
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    /// Output directory for per-method reports and config.json.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Comma-separated baselines to add: static, cvm.
    #[arg(long, value_name = "LIST")]
    baselines: Option<String>,
    /// Echo ground truth as the prediction (all-zero sanity mode).
    #[arg(long)]
    gt_as_pred: bool,
    /// Sampling seed.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct ForecastArgs {
    /// Checkpoint to forecast with.
    #[arg(long, value_name = "FILE")]
    ckpt: PathBuf,
    /// Dataset file supplying conditioning.
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    /// Output directory for forecast files and config.json.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Forecast only this sequence id (default: every sequence).
    #[arg(long, value_name = "ID")]
    seq: Option<String>,
    /// Sampling seed.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Forecast file to render (top-down plus overlay).
    #[arg(long, value_name = "FILE")]
    forecast: Option<PathBuf>,
    /// Dataset file holding the forecast sequence's ground truth.
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    /// Evaluation report for --per-timestep.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
    /// Render the per-future-step ADE curve from --report.
    #[arg(long)]
    per_timestep: bool,
    /// Observation frame for the overlay (default: the last).
    #[arg(long)]
    frame: Option<usize>,
    /// Overlay canvas expansion factor.
    #[arg(long, default_value_t = 2.0)]
    expand: f64,
    /// Output directory for images.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

/// A serialized forecast: the full predicted trajectory, visibility
/// probabilities, and a geometric in-view re-check of the predicted wrists
/// through each observation camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub schema: String,
    pub id: String,
    pub t_obs: usize,
    pub f_fut: usize,
    /// (T+F) frames x J joints x 3.
    pub joints: Vec<Vec<[f64; 3]>>,
    /// Per observation frame: left, right visibility probability.
    pub visibility: Vec<[f64; 2]>,
    /// Per observation frame: does the predicted wrist reproject into view.
    pub in_view: Vec<[bool; 2]>,
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(Error::InvalidConfig(format!("{what} not found: {}", path.display())));
    }
    Ok(())
}

fn write_resolved_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut text = serde_json::to_string_pretty(cfg)?;
    text.push('\n');
    fs::write(dir.join("config.json"), text)?;
    Ok(())
}

/// Check a checkpoint's architecture against a dataset, naming the first
/// mismatched field.
fn check_compat(model: &DenoiserConfig, dataset: &[Sequence]) -> Result<()> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::InvalidConfig("dataset is empty".into()))?;
    for (field, ckpt, data) in [
        ("joints", model.joints, JOINT_COUNT),
        ("t_obs", model.t_obs, first.t_obs()),
        ("f_fut", model.f_fut, first.f_fut()),
        ("d_img", model.d_img, first.d_img()),
    ] {
        if ckpt != data {
            return Err(Error::InvalidConfig(format!(
                "checkpoint/dataset mismatch on {field}: checkpoint has {ckpt}, dataset has {data}"
            )));
        }
    }
    Ok(())
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let mut cfg = args.config.resolve()?;
    if let Some(seed) = args.seed {
        cfg.gen.seed = seed;
    }
    if let Some(n) = args.n {
        cfg.gen.n_sequences = n;
    }
    if cfg.gen.n_sequences == 0 {
        return Err(Error::InvalidConfig("gen.n_sequences must be positive".into()));
    }
    cfg.gen.validate()?;
    write_resolved_config(&args.out, &cfg)?;

    let mut val_cfg = cfg.gen.clone();
    val_cfg.seed = cfg.gen.seed.wrapping_add(1);
    for (name, gcfg) in [("train", &cfg.gen), ("val", &val_cfg)] {
        let path = args.out.join(format!("{name}.jsonl"));
        let summary = generate_dataset(gcfg, &path)?;
        println!(
            "{name}: {} sequences, {} in-view pairs, {} out-of-view pairs -> {}",
            summary.n_sequences,
            summary.n_in_view_pairs,
            summary.n_out_of_view_pairs,
            path.display()
        );
    }
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = args.config.resolve()?;
    if let Some(n) = args.iterations {
        cfg.train.iterations = n;
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    require_file(&args.data, "dataset")?;
    let dataset = load_dataset(&args.data)?;
    let first = dataset
        .first()
        .ok_or_else(|| Error::InvalidConfig("dataset is empty".into()))?;
    // Data-shaped architecture fields are derived, not free.
    cfg.model.t_obs = first.t_obs();
    cfg.model.f_fut = first.f_fut();
    cfg.model.d_img = first.d_img();
    cfg.model.n_steps = cfg.train.n_steps;
    cfg.train.validate()?;
    write_resolved_config(&args.out, &cfg)?;

    let device = Device::Cpu;
    let mut trainer = match &args.resume {
        Some(path) => {
            require_file(path, "checkpoint")?;
            let mut t = Trainer::load(path, &device)?;
            t.tcfg.iterations = cfg.train.iterations;
            println!("resumed at iteration {} from {}", t.step, path.display());
            t
        }
        None => Trainer::new(cfg.model, cfg.train, &dataset, &device)?,
    };

    let csv = fs::File::create(args.out.join("loss.csv"))?;
    let mut csv = std::io::BufWriter::new(csv);
    writeln!(csv, "iteration,joint,vis,reproj,total")?;
    let mut last: Option<LogRow> = None;
    run_to_completion(&mut trainer, &dataset, &mut |row: &LogRow| {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            row.iteration, row.joint, row.vis, row.reproj, row.total
        );
        last = Some(*row);
    })?;
    csv.flush()?;

    let ckpt = args.out.join("checkpoint.safetensors");
    trainer.save(&ckpt)?;
    match last {
        Some(row) => println!(
            "trained to iteration {}: total {:.6} (joint {:.6}, vis {:.6}, reproj {:.6}) -> {}",
            trainer.step,
            row.total,
            row.joint,
            row.vis,
            row.reproj,
            ckpt.display()
        ),
        None => println!("no iterations run; checkpoint written -> {}", ckpt.display()),
    }
    Ok(())
}

fn parse_baselines(list: &Option<String>) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    if let Some(list) = list {
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "static" | "cvm" => {
                    out.insert(item.to_string());
                }
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown baseline {other}; expected static or cvm"
                    )))
                }
            }
        }
    }
    Ok(out)
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let mut cfg = args.config.resolve()?;
    if let Some(seed) = args.seed {
        cfg.eval.seed = seed;
    }
    let baselines = parse_baselines(&args.baselines)?;
    require_file(&args.ckpt, "checkpoint")?;
    require_file(&args.data, "dataset")?;
    let trainer = Trainer::load(&args.ckpt, &Device::Cpu)?;
    let dataset = load_dataset(&args.data)?;
    check_compat(trainer.model.config(), &dataset)?;
    cfg.model = *trainer.model.config();
    cfg.train = trainer.tcfg;
    write_resolved_config(&args.out, &cfg)?;

    let mut methods: Vec<Method> = Vec::new();
    if args.gt_as_pred {
        methods.push(Method::GroundTruth);
    } else {
        methods.push(Method::Model(&trainer));
    }
    if baselines.contains("static") {
        methods.push(Method::Static(&trainer.stats));
    }
    if baselines.contains("cvm") {
        methods.push(Method::ConstantVelocity);
    }

    let mut combined = String::new();
    for method in &methods {
        let report = evaluate(method, &dataset, &cfg.eval)?;
        let path = args.out.join(format!("report_{}.json", report.method));
        save_report(&path, &report)?;
        let table = render_table(&report);
        println!("{table}");
        combined.push_str(&table);
        combined.push('\n');
    }
    fs::write(args.out.join("report.txt"), combined)?;
    Ok(())
}

fn cmd_forecast(args: &ForecastArgs) -> Result<()> {
    let mut cfg = args.config.resolve()?;
    if let Some(seed) = args.seed {
        cfg.eval.seed = seed;
    }
    require_file(&args.ckpt, "checkpoint")?;
    require_file(&args.data, "dataset")?;
    let trainer = Trainer::load(&args.ckpt, &Device::Cpu)?;
    let dataset = load_dataset(&args.data)?;
    check_compat(trainer.model.config(), &dataset)?;
    cfg.model = *trainer.model.config();
    cfg.train = trainer.tcfg;
    write_resolved_config(&args.out, &cfg)?;

    let picks: Vec<usize> = match &args.seq {
        Some(id) => {
            let idx = dataset.iter().position(|s| &s.meta.id == id).ok_or_else(|| {
                Error::data(format!("sequence {id:?} not in {}", args.data.display()))
            })?;
            vec![idx]
        }
        None => (0..dataset.len()).collect(),
    };

    for idx in picks {
        let seq = &dataset[idx];
        // The noise stream is the dataset index, so a single-sequence run
        // reproduces the corresponding file of a full run.
        let (frames, vis) = forecast(&trainer, seq, cfg.eval.seed, idx as u64)?;
        let in_view = (0..seq.t_obs())
            .map(|t| {
                let pose = &seq.obs_poses[t];
                [
                    pose.in_view(frames[t][Side::Left.wrist()]),
                    pose.in_view(frames[t][Side::Right.wrist()]),
                ]
            })
            .collect();
        let record = ForecastRecord {
            schema: FORECAST_SCHEMA.to_string(),
            id: seq.meta.id.clone(),
            t_obs: seq.t_obs(),
            f_fut: seq.f_fut(),
            joints: frames
                .iter()
                .map(|f| f.iter().map(|p| [p.x, p.y, p.z]).collect())
                .collect(),
            visibility: vis,
            in_view,
        };
        let path = args.out.join(format!("forecast_{}.json", seq.meta.id));
        let file = fs::File::create(&path)?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n")?;
        w.flush()?;
        println!("{} -> {}", seq.meta.id, path.display());
    }
    Ok(())
}

/// Read a forecast file written by [`cmd_forecast`].
pub fn load_forecast(path: &Path) -> Result<ForecastRecord> {
    let text = fs::read_to_string(path)?;
    let record: ForecastRecord = serde_json::from_str(text.trim_end())?;
    if record.schema != FORECAST_SCHEMA {
        return Err(Error::data(format!("unsupported forecast schema {:?}", record.schema)));
    }
    Ok(record)
}

fn cmd_plot(args: &PlotArgs) -> Result<()> {
    let mut emitted = 0usize;
    fs::create_dir_all(&args.out)?;

    if let Some(fpath) = &args.forecast {
        require_file(fpath, "forecast file")?;
        let data = args.data.as_ref().ok_or_else(|| {
            Error::InvalidConfig("--forecast needs --data for ground truth".into())
        })?;
        require_file(data, "dataset")?;
        let record = load_forecast(fpath)?;
        let dataset = load_dataset(data)?;
        let seq = dataset
            .iter()
            .find(|s| s.meta.id == record.id)
            .ok_or_else(|| Error::data(format!("sequence {:?} not in dataset", record.id)))?;
        let frames: Vec<Vec<crate::geometry::Vec3>> = record
            .joints
            .iter()
            .map(|f| f.iter().map(|p| crate::geometry::Vec3::new(p[0], p[1], p[2])).collect())
            .collect();
        let top = args.out.join(format!("top_down_{}.png", record.id));
        plot_top_down(seq, &frames, &top)?;
        let frame = args.frame.unwrap_or(seq.t_obs() - 1);
        let overlay = args.out.join(format!("overlay_{}.png", record.id));
        plot_overlay(seq, &frames, frame, args.expand, &overlay)?;
        println!("{} -> {}, {}", record.id, top.display(), overlay.display());
        emitted += 2;
    }

    if args.per_timestep {
        let rpath = args
            .report
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("--per-timestep needs --report".into()))?;
        require_file(rpath, "report")?;
        let report = load_report(rpath)?;
        if report.per_timestep_ade.iter().all(Option::is_none) {
            return Err(Error::InvalidConfig(
                "report has no per-timestep values to plot".into(),
            ));
        }
        let curve = args.out.join("ade_curve.png");
        plot_error_curve(&report.per_timestep_ade, &curve)?;
        println!("{} -> {}", rpath.display(), curve.display());
        emitted += 1;
    }

    if emitted == 0 {
        return Err(Error::InvalidConfig(
            "nothing to plot: pass --forecast and/or --report with --per-timestep".into(),
        ));
    }
    Ok(())
}

/// Exit code for an error: configuration and missing-input problems are
/// usage errors (2), everything else is a runtime failure (1).
fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_) => 2,
        Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

/// Parse arguments and run; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Gen(args) => cmd_gen(args),
        Cmd::Train(args) => cmd_train(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Forecast(args) => cmd_forecast(args),
        Cmd::Plot(args) => cmd_plot(args),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

/// Expose the partition summary used by `gen` for tests.
pub fn partition_summary(seqs: &[Sequence]) -> (usize, usize) {
    let part = partition_by_view(seqs);
    (part.in_view.len(), part.out_of_view.len())
}
