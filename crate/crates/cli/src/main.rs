//! Command-line front end: synthesize data, train, evaluate, restore
//! images, analyze complexity, and benchmark.
//!
//! Exit codes: 0 success, 1 invalid input (bad config, bad shapes), 2
//! runtime failure (missing files, broken checkpoints). Diagnostics go to
//! stderr; tables and metric lines go to stdout or the requested files.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use desnow_core::bench::{
    analyze, apply_thread_env, bench_inference, emit_comparison_table, BenchReport,
};
use desnow_core::data::load_pairs;
use desnow_core::net::{Model, ModelConfig};
use desnow_core::snow::{gen_clean_scene, make_pair_dataset, SynthConfig};
use desnow_core::train::{desnow_file, evaluate_all, read_kv_file, train, TrainConfig};
use desnow_core::{Error, Result};

fn model_keys_help() -> String {
    let mut s = String::from("Model config keys (override with key=value):\n");
    for (k, v) in ModelConfig::default().to_kv() {
        s.push_str(&format!("  {k} (default {v})\n"));
    }
    s
}

fn train_keys_help() -> String {
    let mut s = String::from("Training config keys (override with key=value):\n");
    for (k, v) in TrainConfig::default().to_kv() {
        s.push_str(&format!("  {k} (default {v})\n"));
    }
    s.push('\n');
    s.push_str(&model_keys_help());
    s.push_str("\nAmbiguous keys may be prefixed: train.seed=1 model.seed=2\n");
    s
}

#[derive(Parser)]
#[command(
    name = "desnow",
    version,
    about = "Single-image snow removal: synthesis, training, inference, analysis"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate paired clean/degraded images with stored degradation maps
    Synth(SynthArgs),
    /// Train a model on a directory of pairs
    Train(TrainArgs),
    /// Report PSNR/SSIM of a checkpoint over a pair directory
    Eval(EvalArgs),
    /// Restore a single image with a checkpoint
    Desnow(DesnowArgs),
    /// Closed-form parameter and MAC accounting for a configuration
    Analyze(AnalyzeArgs),
    /// Wall-clock inference benchmark across resolutions
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for the pair files
    #[arg(long)]
    out: PathBuf,
    /// Number of pairs to generate
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
    /// Master seed; every pair derives its own stream
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Snow streak count range, inclusive
    #[arg(long, value_parser = parse_u32_range, default_value = "4..12")]
    streaks: (u32, u32),
    /// Particle/streak diameter range in pixels
    #[arg(long, value_parser = parse_f64_range, default_value = "2..7")]
    particle_size: (f64, f64),
    /// Haze strength range
    #[arg(long, value_parser = parse_f64_range, default_value = "0.15..0.55")]
    haze: (f64, f64),
    /// Atmospheric light range
    #[arg(long, value_parser = parse_f64_range, default_value = "0.7..0.95")]
    airlight: (f64, f64),
}

#[derive(Args)]
#[command(after_help = train_keys_help())]
struct TrainArgs {
    /// Directory of `<id>_snow.png` / `<id>_gt.png` pairs
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints and the log
    #[arg(long)]
    out: PathBuf,
    /// Key-value file with training options
    #[arg(long)]
    config: Option<PathBuf>,
    /// Key-value file with model options
    #[arg(long)]
    model_config: Option<PathBuf>,
    /// Continue from `latest.ckpt`/`latest.state` in the output directory
    #[arg(long)]
    resume: bool,
    /// Overrides, e.g. `total_steps=5000 base_channels=8`
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate
    #[arg(long)]
    ckpt: PathBuf,
    /// Directory of pairs
    #[arg(long)]
    data: PathBuf,
    /// Tile side for large images (multiple of the scale factor)
    #[arg(long)]
    tile: Option<usize>,
}

#[derive(Args)]
struct DesnowArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Degraded input PNG
    #[arg(long = "in", value_name = "PNG")]
    input: PathBuf,
    /// Restored output PNG
    #[arg(long)]
    out: PathBuf,
    /// Tile side for large images (multiple of the scale factor)
    #[arg(long)]
    tile: Option<usize>,
}

#[derive(Args)]
#[command(after_help = model_keys_help())]
struct AnalyzeArgs {
    /// Key-value file with model options (defaults apply when omitted)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
    /// Overrides, e.g. `hor_depth=6`
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
#[command(after_help = model_keys_help())]
struct BenchArgs {
    /// Benchmark an existing checkpoint instead of a fresh model
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Key-value file with model options
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated resolutions, e.g. `256x256,1280x720`
    #[arg(long, default_value = "256x256")]
    resolutions: String,
    /// Timed repetitions after three warm-up runs (at least 10)
    #[arg(long, default_value_t = 10)]
    reps: usize,
    /// Tile side for large images
    #[arg(long)]
    tile: Option<usize>,
    /// Where to write the CSV report
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides, e.g. `hor_depth=0`
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn parse_u32_range(s: &str) -> std::result::Result<(u32, u32), String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("expected LO..HI, got '{s}'"))?;
    Ok((
        a.trim().parse().map_err(|_| format!("bad number '{a}'"))?,
        b.trim().parse().map_err(|_| format!("bad number '{b}'"))?,
    ))
}

fn parse_f64_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("expected LO..HI, got '{s}'"))?;
    Ok((
        a.trim().parse().map_err(|_| format!("bad number '{a}'"))?,
        b.trim().parse().map_err(|_| format!("bad number '{b}'"))?,
    ))
}

fn split_override(pair: &str) -> Result<(&str, &str)> {
    pair.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| Error::Config(format!("override '{pair}' is not key=value")))
}

/// Applies `key=value` pairs to the model config; keys may carry a `model.`
/// prefix.
fn apply_model_overrides(cfg: &mut ModelConfig, pairs: &[String]) -> Result<()> {
    for pair in pairs {
        let (k, v) = split_override(pair)?;
        let k = k.strip_prefix("model.").unwrap_or(k);
        cfg.apply_kv(k, v)?;
    }
    Ok(())
}

/// Routes overrides between the training and model configs. Unprefixed keys
/// try the training config first, then the model config; `train.`/`model.`
/// prefixes force the target.
fn apply_train_overrides(
    tc: &mut TrainConfig,
    mc: &mut ModelConfig,
    pairs: &[String],
) -> Result<()> {
    for pair in pairs {
        let (k, v) = split_override(pair)?;
        if let Some(k) = k.strip_prefix("train.") {
            tc.apply_kv(k, v)?;
        } else if let Some(k) = k.strip_prefix("model.") {
            mc.apply_kv(k, v)?;
        } else if TrainConfig::keys().contains(&k) {
            tc.apply_kv(k, v)?;
        } else {
            mc.apply_kv(k, v).map_err(|_| {
                Error::Config(format!(
                    "unknown option '{k}' (training keys: {}; model keys: {})",
                    TrainConfig::keys().join(", "),
                    ModelConfig::keys().join(", ")
                ))
            })?;
        }
    }
    Ok(())
}

fn load_model_config(path: Option<&PathBuf>) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::default();
    if let Some(path) = path {
        for (k, v) in read_kv_file(path)? {
            cfg.apply_kv(&k, &v)?;
        }
    }
    Ok(cfg)
}

fn run_synth(args: &SynthArgs) -> Result<()> {
    if args.count == 0 || args.height == 0 || args.width == 0 {
        return Err(Error::Config(
            "count, height and width must be positive".into(),
        ));
    }
    let cfg = SynthConfig {
        streak_count_range: args.streaks,
        particle_size_range: args.particle_size,
        haze_strength_range: args.haze,
        atmospheric_light_range: args.airlight,
        rng_seed: args.seed,
    };
    cfg.validate()?;
    let cleans: Vec<_> = (0..args.count)
        .map(|i| gen_clean_scene(args.seed.wrapping_add(i as u64), args.height, args.width))
        .collect();
    let n = make_pair_dataset(&cfg, &cleans, &args.out)?;
    eprintln!("wrote {n} pairs to {}", args.out.display());
    Ok(())
}

fn run_train(args: &TrainArgs) -> Result<()> {
    let mut tc = TrainConfig::default();
    if let Some(path) = &args.config {
        for (k, v) in read_kv_file(path)? {
            tc.apply_kv(&k, &v)?;
        }
    }
    let mut mc = load_model_config(args.model_config.as_ref())?;
    apply_train_overrides(&mut tc, &mut mc, &args.overrides)?;

    let outcome = train(&mc, &tc, &args.data, &args.out, args.resume)?;
    for note in &outcome.data_report.skipped {
        eprintln!("skipped pair {note}");
    }
    for step in &outcome.skipped_steps {
        eprintln!("step {step}: non-finite gradients, update skipped");
    }
    if outcome.stopped_early {
        eprintln!(
            "early stop at step {}: psnr reached {:.2}",
            outcome.completed_steps,
            outcome.final_psnr.unwrap_or(f64::NAN)
        );
    }
    println!("checkpoint={}", outcome.checkpoint.display());
    println!("log={}", outcome.log_file.display());
    if let (Some(p), Some(s)) = (outcome.final_psnr, outcome.final_ssim) {
        println!("psnr={p} ssim={s}");
    }
    Ok(())
}

fn run_eval(args: &EvalArgs) -> Result<()> {
    let model = Model::<f32>::load(&args.ckpt)?;
    let (pairs, report) = load_pairs::<f32>(&args.data)?;
    for note in &report.skipped {
        eprintln!("skipped pair {note}");
    }
    if pairs.is_empty() {
        return Err(Error::Config(format!(
            "no pairs found in {}",
            args.data.display()
        )));
    }
    let rows = evaluate_all(&model, &pairs, args.tile)?;
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    for (id, p, s) in &rows {
        println!("{id} psnr={p} ssim={s}");
        psnr_sum += p;
        ssim_sum += s;
    }
    let n = rows.len() as f64;
    println!("mean psnr={} ssim={}", psnr_sum / n, ssim_sum / n);
    Ok(())
}

fn run_desnow(args: &DesnowArgs) -> Result<()> {
    let model = Model::<f32>::load(&args.ckpt)?;
    desnow_file(&model, &args.input, &args.out, args.tile)?;
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn run_analyze(args: &AnalyzeArgs) -> Result<()> {
    let mut cfg = load_model_config(args.config.as_ref())?;
    apply_model_overrides(&mut cfg, &args.overrides)?;
    let sf = cfg.scale_factor();
    let pad = |v: usize| v.div_ceil(sf) * sf;
    let report = analyze(&cfg, pad(args.height), pad(args.width))?;
    print!("{}", report.render());
    Ok(())
}

fn parse_resolutions(spec: &str) -> Result<Vec<(usize, usize)>> {
    spec.split(',')
        .map(|r| {
            let (h, w) = r
                .trim()
                .split_once('x')
                .ok_or_else(|| Error::Config(format!("resolution '{r}' is not HxW")))?;
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad resolution number '{s}'")))
            };
            Ok((parse(h)?, parse(w)?))
        })
        .collect()
}

fn run_bench(args: &BenchArgs) -> Result<()> {
    let model = match &args.ckpt {
        Some(path) => Model::<f32>::load(path)?,
        None => {
            let mut cfg = load_model_config(args.config.as_ref())?;
            apply_model_overrides(&mut cfg, &args.overrides)?;
            Model::<f32>::build(&cfg)?
        }
    };
    let mut reports: Vec<BenchReport> = Vec::new();
    for (h, w) in parse_resolutions(&args.resolutions)? {
        eprintln!("benchmarking {h}x{w}...");
        reports.push(bench_inference(&model, h, w, args.reps, args.tile, None)?);
    }
    let csv_path = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("bench.csv"));
    let table = emit_comparison_table(&reports, &csv_path)?;
    print!("{table}");
    eprintln!("wrote {}", csv_path.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Synth(a) => run_synth(a),
        Cmd::Train(a) => run_train(a),
        Cmd::Eval(a) => run_eval(a),
        Cmd::Desnow(a) => run_desnow(a),
        Cmd::Analyze(a) => run_analyze(a),
        Cmd::Bench(a) => run_bench(a),
    }
}

fn main() -> ExitCode {
    apply_thread_env();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
