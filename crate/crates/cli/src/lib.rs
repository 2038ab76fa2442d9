//! The `hvg` command-line tool.
//!
//! Every command resolves one experiment config (`--config` file or
//! `--preset`), writes its outputs under `--out` and records a `run.json`
//! with the resolved config, the seed and checkpoint hashes. Errors go to
//! stderr as one human-readable line followed by one JSON object.


use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hvg::config::ExperimentConfig;
use hvg::data::{video_to_u8, write_dataset, write_frames, write_gif, write_hvgt, write_json, Dataset};
use hvg::evaluation::{activation_accounting, dry_run_shapes, scaling_csv};
use hvg::inference::{balanced_labels, Hierarchy, RunRecord};
use hvg::training::{level_dir, train_level, TrainOptions};
use hvg::{HvgError, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use hvg::experiments::*;

#[derive(Debug, Parser)]
#[command(name = "hvg", version, about = "Hierarchical video GAN: data, training, sampling and evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (JSON); overrides --preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in config name.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Seed; defaults to the config's `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dataset directory; defaults to the config's `data.root`, then $HVG_DATA_DIR.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Require an explicit --seed so that run.json pins the run completely.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Check shapes without building or running any model.
    #[arg(long, global = true)]
    pub shapes_only: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic dataset of the config.
    MakeData {
        #[arg(long)]
        overwrite: bool,
    },
    /// Train one level; lower levels must be trained already.
    Train {
        /// 1-based level.
        #[arg(long)]
        level: usize,
        #[arg(long)]
        iterations: Option<u64>,
        /// Continue from an existing checkpoint of this level.
        #[arg(long)]
        resume: bool,
    },
    /// Sample videos from trained levels.
    Sample {
        /// Finest-level frames per video.
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        /// Videos to write.
        #[arg(long, default_value_t = 4)]
        n: usize,
        /// Use only the first N levels.
        #[arg(long)]
        level: Option<usize>,
        /// Directory holding level1/, level2/, ...; defaults to runs/<config name>.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        /// Minibatches for recomputing normalization statistics.
        #[arg(long)]
        stats_passes: Option<usize>,
    },
    /// Score trained levels; writes metrics.json.
    Eval {
        /// Finest-level clip lengths; defaults to the config's unroll factors.
        #[arg(long, num_args = 1..)]
        frames: Vec<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        n_samples: Option<usize>,
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long)]
        stats_passes: Option<usize>,
        /// Also score untrained levels.
        #[arg(long)]
        baseline: bool,
    },
    /// Radially averaged power spectra of samples and data.
    Psd {
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long)]
        stats_passes: Option<usize>,
    },
    /// Activation counts per level against total output length.
    Scaling {
        #[arg(long = "t", num_args = 1.., default_values_t = [24usize, 48, 96])]
        t: Vec<usize>,
    },
    /// Train and compare a pair of configurations.
    Ablate {
        which: AblationArg,
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        n_samples: Option<usize>,
        #[arg(long)]
        stats_passes: Option<usize>,
    },
    /// Print the JSON Schema of config files.
    Schema,
    /// Print the resolved config (preset or file, plus --seed).
    Config,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AblationArg {
    MatchingD,
    Window,
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Self {
        match a {
            AblationArg::MatchingD => Ablation::MatchingD,
            AblationArg::Window => Ablation::Window,
        }
    }
}

/// Process exit status for an error.
pub fn exit_code(e: &HvgError) -> u8 {
    match e {
        HvgError::Config { .. } | HvgError::InvalidArgument(_) => 2,
        HvgError::MissingPrerequisite { .. } | HvgError::MissingStats { .. } => 3,
        HvgError::Checkpoint(_) => 4,
        _ => 1,
    }
}

/// The JSON object printed for an error.
pub fn error_json(e: &HvgError) -> serde_json::Value {
    let mut v = json!({ "kind": e.kind(), "message": e.to_string() });
    match e {
        HvgError::Config { path, .. } => v["field"] = json!(path),
        HvgError::MissingPrerequisite { level, missing, dir } => {
            v["level"] = json!(level);
            v["missing_level"] = json!(missing);
            v["dir"] = json!(dir);
        }
        HvgError::NonFiniteLoss { iteration, .. } => v["iteration"] = json!(iteration),
        HvgError::Io { path, .. } | HvgError::Json { path, .. } | HvgError::Image { path, .. } => v["path"] = json!(path),
        _ => {}
    }
    json!({ "error": v })
}

pub fn main_with(args: impl IntoIterator<Item = OsString>) -> ExitCode {
    let args: Vec<OsString> = args.into_iter().collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let argv: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match run(&cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hvg: error: {e}");
            eprintln!("{}", error_json(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

struct Ctx {
    exp: ExperimentConfig,
    seed: u64,
    deterministic: bool,
    args: Vec<String>,
}

impl Ctx {
    fn record(&self, command: &str, sigma: Option<f64>, checkpoint_hashes: Vec<String>, details: serde_json::Value) -> RunRecord {
        RunRecord {
            command: command.to_string(),
            args: self.args.clone(),
            config: self.exp.clone(),
            config_hash: self.exp.hash(),
            seed: self.seed,
            deterministic: self.deterministic,
            sigma,
            checkpoint_hashes,
            details,
        }
    }

    fn default_root(&self) -> PathBuf {
        PathBuf::from("runs").join(&self.exp.name)
    }
}

fn log_step(level: usize, every: u64, m: &hvg::training::StepMetrics) {
    if every > 0 && m.iteration % every == 0 {
        eprintln!(
            "level {} iter {:>6}  d_loss {:.4}  g_loss {:.4}  real {:+.3}  fake {:+.3}",
            level + 1,
            m.iteration,
            m.d_loss,
            m.g_loss,
            m.real_score,
            m.fake_score
        );
    }
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|source| HvgError::Io { path: p.to_path_buf(), source })
}

pub fn run(cli: &Cli, args: Vec<String>) -> Result<()> {
    let c = &cli.common;
    if let Command::Schema = cli.command {
        println!("{}", ExperimentConfig::json_schema());
        return Ok(());
    }
    let mut exp = resolve_config(c.config.as_deref(), c.preset.as_deref())?;
    if c.deterministic && c.seed.is_none() {
        return Err(HvgError::InvalidArgument("--deterministic needs an explicit --seed".into()));
    }
    if let Some(s) = c.seed {
        exp.seed = s;
    }
    if let Command::Config = cli.command {
        println!("{}", exp.to_json());
        return Ok(());
    }
    let ctx = Ctx { seed: exp.seed, exp, deterministic: c.deterministic, args };
    if c.shapes_only {
        return shapes_only(&ctx, cli);
    }
    if ctx.exp.shapes_only && !matches!(cli.command, Command::Scaling { .. }) {
        return Err(HvgError::InvalidArgument(format!(
            "config `{}` is for shape checks only; pass --shapes-only",
            ctx.exp.name
        )));
    }
    match &cli.command {
        Command::MakeData { overwrite } => make_data(&ctx, c, *overwrite),
        Command::Train { level, iterations, resume } => train(&ctx, c, *level, *iterations, *resume),
        Command::Sample { frames, sigma, n, level, checkpoints, stats_passes } => {
            sample(&ctx, c, *frames, *sigma, *n, *level, checkpoints.as_deref(), *stats_passes)
        }
        Command::Eval { frames, sigma, n_samples, checkpoints, stats_passes, baseline } => {
            eval(&ctx, c, frames, *sigma, *n_samples, checkpoints.as_deref(), *stats_passes, *baseline)
        }
        Command::Psd { frames, sigma, n, checkpoints, stats_passes } => {
            psd(&ctx, c, *frames, *sigma, *n, checkpoints.as_deref(), *stats_passes)
        }
        Command::Scaling { t } => scaling(&ctx, c, t),
        Command::Ablate { which, iterations, n_samples, stats_passes } => {
            ablate(&ctx, c, (*which).into(), *iterations, *n_samples, *stats_passes)
        }
        Command::Schema | Command::Config => unreachable!("handled above"),
    }
}

fn shapes_only(ctx: &Ctx, cli: &Cli) -> Result<()> {
    let exp = &ctx.exp;
    let t1 = match &cli.command {
        Command::Sample { frames: Some(f), .. } | Command::Psd { frames: Some(f), .. } => first_frames_for(exp, *f)?,
        _ => exp.levels[0].frames,
    };
    let shapes = dry_run_shapes(exp, t1)?;
    let t_total = shapes.last().expect("at least one level")[0];
    let acc = activation_accounting(exp, t_total)?;
    for (i, s) in shapes.iter().enumerate() {
        println!(
            "level {}: {} frames, {} channels, {}x{}  (training example: {} activations)",
            i + 1,
            s[0],
            s[1],
            s[2],
            s[3],
            acc.levels[i].total
        );
    }
    let out = cli.common.out.clone().unwrap_or_else(|| ctx.default_root().join("shapes"));
    mkdir(&out)?;
    let details = json!({ "first_frames": t1, "shapes": shapes, "accounting": acc });
    write_json(&out.join("shapes.json"), &details)?;
    write_json(&out.join("run.json"), &ctx.record("shapes-only", None, vec![], details))
}

fn make_data(ctx: &Ctx, c: &Common, overwrite: bool) -> Result<()> {
    let root = c
        .out
        .clone()
        .or_else(|| data_root(c.data.as_deref(), &ctx.exp))
        .unwrap_or_else(|| PathBuf::from("data").join(&ctx.exp.name));
    let mut spec = ctx.exp.data.synthetic.clone();
    if c.seed.is_some() {
        spec.seed = ctx.seed;
    }
    let ds = Dataset::synthetic(&spec)?;
    let manifest = write_dataset(&ds, &root, overwrite)?;
    let details = json!({ "root": root, "videos": manifest.videos.len(), "synthetic": spec });
    write_json(&root.join("run.json"), &ctx.record("make-data", None, vec![], details))?;
    println!("wrote {} videos to {}", ds.len(), root.display());
    Ok(())
}

fn train(ctx: &Ctx, c: &Common, level: usize, iterations: Option<u64>, resume: bool) -> Result<()> {
    let mut exp = ctx.exp.clone();
    if let Some(it) = iterations {
        exp.train.iterations = it;
    }
    if level == 0 || level > exp.levels.len() {
        return Err(HvgError::InvalidArgument(format!("--level must lie in 1..={}", exp.levels.len())));
    }
    let root = c.out.clone().unwrap_or_else(|| ctx.default_root());
    let ds = load_dataset(&exp, data_root(c.data.as_deref(), &exp).as_deref())?;
    let opts = TrainOptions { iterations: exp.train.iterations, checkpoint_every: exp.train.checkpoint_every, resume };
    let every = exp.train.log_every;
    let state = train_level(level - 1, &exp, &ds, &root, &opts, &mut |m| log_step(level - 1, every, m))?;
    let hashes = checkpoint_hashes(&root, level)?;
    let details = json!({
        "level": level,
        "iterations": state.iteration,
        "d_updates": state.d_updates,
        "g_updates": state.g_updates,
        "checkpoint": level_dir(&root, level - 1),
    });
    let rec = Ctx { exp, ..clone_ctx(ctx) }.record("train", None, hashes, details);
    write_json(&level_dir(&root, level - 1).join("run.json"), &rec)?;
    println!("level {level} trained for {} iterations into {}", state.iteration, level_dir(&root, level - 1).display());
    Ok(())
}

fn clone_ctx(ctx: &Ctx) -> Ctx {
    Ctx { exp: ctx.exp.clone(), seed: ctx.seed, deterministic: ctx.deterministic, args: ctx.args.clone() }
}

#[allow(clippy::too_many_arguments)]
fn sample(
    ctx: &Ctx,
    c: &Common,
    frames: Option<usize>,
    sigma: Option<f64>,
    n: usize,
    level: Option<usize>,
    checkpoints: Option<&Path>,
    stats_passes: Option<usize>,
) -> Result<()> {
    let total = ctx.exp.levels.len();
    let levels = level.unwrap_or(total);
    if levels == 0 || levels > total {
        return Err(HvgError::InvalidArgument(format!("--level must lie in 1..={total}")));
    }
    if n == 0 {
        return Err(HvgError::InvalidArgument("--n must be at least 1".into()));
    }
    let mut exp = ctx.exp.clone();
    exp.levels.truncate(levels);
    let root = checkpoints.map(Path::to_path_buf).unwrap_or_else(|| ctx.default_root());
    let out = c.out.clone().unwrap_or_else(|| root.join("samples"));
    let sigma = sigma.unwrap_or(exp.eval.sample_sigma);
    let t1 = exp.levels[0].frames;
    let frames = frames.unwrap_or_else(|| exp.unrolled_frames(t1)[levels - 1]);
    let first = first_frames_for(&exp, frames)?;
    let mut h = Hierarchy::load(&root, levels)?;
    let passes = stats_passes.unwrap_or(exp.eval.stats_passes);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed ^ 0x5A3_F1E);
    h.recompute_bn_stats(&stats_for(&exp, passes, sigma, first), &mut rng)?;
    let labels = balanced_labels(n, h.classes());
    let run = if first < t1 {
        h.sample_windowed(&labels, sigma, t1, 0, first, &mut rng)?
    } else {
        h.sample(&labels, sigma, first, &mut rng)?
    };
    mkdir(&out)?;
    let v = run.finest();
    let d = v.dims();
    let mut files = Vec::new();
    for b in 0..n {
        let px = video_to_u8(v, b);
        let name = format!("sample_{b:03}");
        write_frames(&out.join(&name), &px, d.frames, d.height, d.width)?;
        write_gif(&out.join(format!("{name}.gif")), &px, d.frames, d.height, d.width, 125, (64 / d.height).max(1))?;
        write_hvgt(&out.join(format!("{name}.hvgt")), [d.frames, d.channels, d.height, d.width], &px)?;
        files.push(name);
    }
    let hashes = checkpoint_hashes(&root, levels)?;
    let details = json!({
        "levels": levels,
        "frames": frames,
        "first_frames": first,
        "windowed": first < t1,
        "stats_passes": passes,
        "labels": labels,
        "samples": files,
        "checkpoints": root,
    });
    write_json(&out.join("run.json"), &Ctx { exp, ..clone_ctx(ctx) }.record("sample", Some(sigma), hashes, details))?;
    println!("wrote {n} samples of {frames} frames to {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval(
    ctx: &Ctx,
    c: &Common,
    frames: &[usize],
    sigma: Option<f64>,
    n_samples: Option<usize>,
    checkpoints: Option<&Path>,
    stats_passes: Option<usize>,
    baseline: bool,
) -> Result<()> {
    let exp = &ctx.exp;
    let root = checkpoints.map(Path::to_path_buf).unwrap_or_else(|| ctx.default_root());
    let out = c.out.clone().unwrap_or_else(|| root.join("eval"));
    let mut opts = EvalOptions::from_config(exp);
    if !frames.is_empty() {
        opts.request.lengths = frames.to_vec();
    }
    if let Some(s) = sigma {
        opts.request.sigma = s;
    }
    if let Some(n) = n_samples {
        opts.request.n_samples = n;
        opts.reference_videos = n;
    }
    if let Some(p) = stats_passes {
        opts.request.stats_passes = p;
    }
    opts.baseline = baseline;
    let ds = load_dataset(exp, data_root(c.data.as_deref(), exp).as_deref())?;
    let report = evaluate_run(exp, &root, &ds, ctx.seed, &opts, None)?;
    mkdir(&out)?;
    write_json(&out.join("metrics.json"), &report)?;
    let details = json!({ "lengths": opts.request.lengths, "n_samples": opts.request.n_samples, "checkpoints": root });
    write_json(&out.join("run.json"), &ctx.record("eval", Some(opts.request.sigma), report.checkpoint_hashes.clone(), details))?;
    if report.extractor_accuracy < EXTRACTOR_MIN_ACCURACY {
        eprintln!(
            "hvg: warning: feature network reached only {:.1}% held-out accuracy; metrics are unreliable",
            100.0 * report.extractor_accuracy
        );
    }
    for l in &report.lengths {
        println!(
            "{} frames{}: fid_like {:.4}  fvd_like {:.4}  is {:.3} (real {:.3})",
            l.frames,
            if l.windowed { " (window)" } else { "" },
            l.fid_like,
            l.fvd_like,
            l.is_score,
            l.real_is_score
        );
    }
    println!("wrote {}", out.join("metrics.json").display());
    Ok(())
}

fn psd(
    ctx: &Ctx,
    c: &Common,
    frames: Option<usize>,
    sigma: Option<f64>,
    n: usize,
    checkpoints: Option<&Path>,
    stats_passes: Option<usize>,
) -> Result<()> {
    let exp = &ctx.exp;
    let root = checkpoints.map(Path::to_path_buf).unwrap_or_else(|| ctx.default_root());
    let out = c.out.clone().unwrap_or_else(|| root.join("psd"));
    let t1 = exp.levels[0].frames;
    let frames = frames.unwrap_or_else(|| 2 * exp.unrolled_frames(t1).last().copied().unwrap_or(1));
    let sigma = sigma.unwrap_or(exp.eval.sigma);
    let passes = stats_passes.unwrap_or(exp.eval.stats_passes);
    let report = psd_run(exp, &root, ctx.seed, frames, n, sigma, passes, &out)?;
    for cmp in &report.curves {
        println!("frame {:>4}: {:.0}% of bins within the data's 3-std band", cmp.frame, 100.0 * cmp.within_3_std);
    }
    let details = json!({ "frames": frames, "n": n, "stats_passes": passes, "checkpoints": root });
    write_json(&out.join("run.json"), &ctx.record("psd", Some(sigma), report.checkpoint_hashes.clone(), details))
}

fn scaling(ctx: &Ctx, c: &Common, t: &[usize]) -> Result<()> {
    let rows = t.iter().map(|&t| activation_accounting(&ctx.exp, t)).collect::<Result<Vec<_>>>()?;
    let csv = scaling_csv(&rows);
    let out = c.out.clone().unwrap_or_else(|| ctx.default_root().join("scaling"));
    mkdir(&out)?;
    let path = out.join("scaling.csv");
    std::fs::write(&path, &csv).map_err(|source| HvgError::Io { path: path.clone(), source })?;
    write_json(&out.join("scaling.json"), &rows)?;
    write_json(&out.join("run.json"), &ctx.record("scaling", None, vec![], json!({ "t_total": t })))?;
    print!("{csv}");
    Ok(())
}

fn ablate(
    ctx: &Ctx,
    c: &Common,
    which: Ablation,
    iterations: Option<u64>,
    n_samples: Option<usize>,
    stats_passes: Option<usize>,
) -> Result<()> {
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(format!("ablate-{}", which.name())));
    let settings = AblationSettings { seed: ctx.seed, iterations, adjust: |_| {} };
    let eval_opts = |exp: &ExperimentConfig| {
        let mut o = EvalOptions::from_config(exp);
        if let Some(n) = n_samples {
            o.request.n_samples = n;
            o.reference_videos = n;
        }
        if let Some(p) = stats_passes {
            o.request.stats_passes = p;
        }
        o
    };
    let root = data_root(c.data.as_deref(), &ctx.exp);
    let report = run_ablation(which, &out, root.as_deref(), &settings, &eval_opts, &mut |v, i, m| {
        if m.iteration % 25 == 0 {
            eprint!("{v}: ");
            log_step(i, 25, m);
        }
    })?;
    let hashes: Vec<String> = report.arms.iter().flat_map(|a| a.metrics.checkpoint_hashes.clone()).collect();
    let details = json!({ "ablation": which.name(), "arms": report.arms.iter().map(|a| &a.variant).collect::<Vec<_>>() });
    write_json(&out.join("run.json"), &ctx.record("ablate", None, hashes, details))?;
    for (arm, fvd) in report.arms.iter().zip(&report.fvd_like) {
        println!("{}: fvd_like {:?}  grounding {:?}", arm.variant, fvd, arm.metrics.grounding_error);
    }
    println!("grounding ratio ({} / {}): {:.3}", report.arms[1].variant, report.arms[0].variant, report.grounding_ratio);
    Ok(())
}
