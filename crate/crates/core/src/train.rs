//! Optimizer, learning-rate schedule, and the training loop.
//!
//! Determinism contract: every stochastic choice in step `s` comes from a
//! ChaCha stream keyed by `(seed, s)`, never from a long-lived generator, so
//! a run resumed from a checkpoint at any boundary replays the exact batch
//! sequence of an uninterrupted run. Optimizer moments live in the state file
//! next to the weights checkpoint.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::data::{load_pairs, sample_batch, LoadReport, PairSample};
use crate::error::{Error, Result};
use crate::loss::{charbonnier_with_grad, psnr, ssim, LossConfig};
use crate::net::{Model, ModelConfig};
use crate::tensor::Real;

pub const ADAM_EPS: f64 = 1e-8;

const STATE_MAGIC: &[u8; 4] = b"DSTS";
const STATE_VERSION: u32 = 1;

/// How many evaluation images a mid-training metric pass may touch.
const EVAL_CAP: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CyclicMode {
    Triangular,
}

/// Optimization hyperparameters. The learning rate swings between `base_lr`
/// and `max_lr` on a triangular wave of `cycle_period_steps` (rise plus
/// fall); `cyclic_gamma` scales the amplitude each cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub max_lr: f64,
    pub cyclic_mode: CyclicMode,
    pub cyclic_gamma: f64,
    pub cycle_period_steps: usize,
    /// First-moment coefficient of AdamW.
    pub base_momentum: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
    pub batch_size: usize,
    pub patch_size: usize,
    pub total_steps: usize,
    pub checkpoint_every: usize,
    pub seed: u64,
    /// Stop once the checkpoint evaluation reaches this PSNR; infinity
    /// disables the early exit.
    pub early_stop_psnr: f64,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 4e-4,
            max_lr: 6e-4,
            cyclic_mode: CyclicMode::Triangular,
            cyclic_gamma: 1.0,
            cycle_period_steps: 4000,
            base_momentum: 0.9,
            beta2: 0.999,
            weight_decay: 1e-4,
            grad_clip: 0.0,
            batch_size: 60,
            patch_size: 256,
            total_steps: 20_000,
            checkpoint_every: 1000,
            seed: 0,
            early_stop_psnr: f64::INFINITY,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.base_lr > 0.0 && self.max_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.base_lr > self.max_lr {
            return bad(format!(
                "base_lr {} exceeds max_lr {}",
                self.base_lr, self.max_lr
            ));
        }
        if self.cycle_period_steps == 0 {
            return bad("cycle_period_steps must be positive".into());
        }
        if !(0.0..1.0).contains(&self.base_momentum) || !(0.0..1.0).contains(&self.beta2) {
            return bad("momentum coefficients must lie in [0, 1)".into());
        }
        if !(self.cyclic_gamma > 0.0 && self.cyclic_gamma <= 1.0) {
            return bad("cyclic_gamma must lie in (0, 1]".into());
        }
        if self.weight_decay < 0.0 || self.grad_clip < 0.0 {
            return bad("weight_decay and grad_clip cannot be negative".into());
        }
        if self.batch_size == 0 || self.patch_size == 0 {
            return bad("batch_size and patch_size must be positive".into());
        }
        if self.total_steps == 0 || self.checkpoint_every == 0 {
            return bad("total_steps and checkpoint_every must be positive".into());
        }
        if self.early_stop_psnr <= 0.0 {
            return bad("early_stop_psnr must be positive (or infinite to disable)".into());
        }
        Ok(())
    }

    pub fn keys() -> &'static [&'static str] {
        &[
            "base_lr",
            "max_lr",
            "cyclic_mode",
            "cyclic_gamma",
            "cycle_period_steps",
            "base_momentum",
            "beta2",
            "weight_decay",
            "grad_clip",
            "batch_size",
            "patch_size",
            "total_steps",
            "checkpoint_every",
            "seed",
            "early_stop_psnr",
            "augment",
        ]
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mode = match self.cyclic_mode {
            CyclicMode::Triangular => "triangular",
        };
        vec![
            ("base_lr".into(), self.base_lr.to_string()),
            ("max_lr".into(), self.max_lr.to_string()),
            ("cyclic_mode".into(), mode.into()),
            ("cyclic_gamma".into(), self.cyclic_gamma.to_string()),
            (
                "cycle_period_steps".into(),
                self.cycle_period_steps.to_string(),
            ),
            ("base_momentum".into(), self.base_momentum.to_string()),
            ("beta2".into(), self.beta2.to_string()),
            ("weight_decay".into(), self.weight_decay.to_string()),
            ("grad_clip".into(), self.grad_clip.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("patch_size".into(), self.patch_size.to_string()),
            ("total_steps".into(), self.total_steps.to_string()),
            ("checkpoint_every".into(), self.checkpoint_every.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("early_stop_psnr".into(), self.early_stop_psnr.to_string()),
            ("augment".into(), self.augment.to_string()),
        ]
    }

    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("bad value '{value}' for {what}"));
        match key {
            "base_lr" => self.base_lr = value.parse().map_err(|_| bad(key))?,
            "max_lr" => self.max_lr = value.parse().map_err(|_| bad(key))?,
            "cyclic_mode" => {
                self.cyclic_mode = match value {
                    "triangular" => CyclicMode::Triangular,
                    _ => return Err(bad(key)),
                }
            }
            "cyclic_gamma" => self.cyclic_gamma = value.parse().map_err(|_| bad(key))?,
            "cycle_period_steps" => {
                self.cycle_period_steps = value.parse().map_err(|_| bad(key))?
            }
            "base_momentum" => self.base_momentum = value.parse().map_err(|_| bad(key))?,
            "beta2" => self.beta2 = value.parse().map_err(|_| bad(key))?,
            "weight_decay" => self.weight_decay = value.parse().map_err(|_| bad(key))?,
            "grad_clip" => self.grad_clip = value.parse().map_err(|_| bad(key))?,
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad(key))?,
            "patch_size" => self.patch_size = value.parse().map_err(|_| bad(key))?,
            "total_steps" => self.total_steps = value.parse().map_err(|_| bad(key))?,
            "checkpoint_every" => self.checkpoint_every = value.parse().map_err(|_| bad(key))?,
            "seed" => self.seed = value.parse().map_err(|_| bad(key))?,
            "early_stop_psnr" => self.early_stop_psnr = value.parse().map_err(|_| bad(key))?,
            "augment" => self.augment = value.parse().map_err(|_| bad(key))?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown training option '{key}' (valid: {})",
                    Self::keys().join(", ")
                )))
            }
        }
        Ok(())
    }
}

/// Reads a plain-text key-value file: one `key = value` per line, `#` starts
/// a comment, blank lines ignored.
pub fn read_kv_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => out.push((k.trim().to_string(), v.trim().to_string())),
            None => {
                return Err(Error::Config(format!(
                    "{}:{}: expected 'key = value', got '{raw}'",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

/// Triangular cyclic learning rate. The wave starts at `base_lr`, peaks at
/// `max_lr` halfway through the period, and returns; the amplitude shrinks
/// by `cyclic_gamma` each completed cycle.
pub fn cyclic_lr(step: u64, cfg: &TrainConfig) -> f64 {
    let period = cfg.cycle_period_steps as f64;
    let cycle = (step as f64 / period).floor();
    let phase = step as f64 - cycle * period;
    let half = period / 2.0;
    let frac = if phase <= half {
        phase / half
    } else {
        (period - phase) / half
    };
    let amplitude = (cfg.max_lr - cfg.base_lr) * cfg.cyclic_gamma.powf(cycle);
    cfg.base_lr + amplitude * frac
}

/// First and second moment accumulators, flat and aligned with the
/// parameter bundle.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }
}

/// One AdamW update in place. Weight decay is decoupled and applied to the
/// parameters before the moment-driven step. Returns false (touching
/// nothing) when any gradient is non-finite.
pub fn adamw_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
    t: u64,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<bool> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Dimension(format!(
            "optimizer buffers disagree: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if t == 0 {
        return Err(Error::Config("adamw step count is 1-based".into()));
    }
    if grads.iter().any(|g| !g.as_f64().is_finite()) {
        return Ok(false);
    }
    let b1 = cfg.base_momentum;
    let b2 = cfg.beta2;
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    let decay = 1.0 - lr * cfg.weight_decay;
    for i in 0..params.len() {
        let g = grads[i].as_f64();
        let p = params[i].as_f64() * decay;
        let m = b1 * state.m[i].as_f64() + (1.0 - b1) * g;
        let v = b2 * state.v[i].as_f64() + (1.0 - b2) * g * g;
        state.m[i] = T::f(m);
        state.v[i] = T::f(v);
        let update = lr * (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS);
        params[i] = T::f(p - update);
    }
    Ok(true)
}

/// Scales gradients so their global L2 norm does not exceed `limit`.
pub fn clip_grad_norm<T: Real>(grads: &mut [T], limit: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| {
            let v = g.as_f64();
            v * v
        })
        .sum::<f64>()
        .sqrt();
    if limit > 0.0 && norm > limit {
        let scale = T::f(limit / norm);
        for g in grads.iter_mut() {
            *g = *g * scale;
        }
    }
    norm
}

/// The generator for step `s`: one ChaCha stream per step so batch sampling
/// is a pure function of `(seed, s)`.
pub fn step_rng(seed: u64, step: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(step.wrapping_add(1));
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub wall_ms: f64,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
}

pub const LOG_HEADER: &str = "step,lr,loss,wall_ms,psnr,ssim";

impl TrainLogRow {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.step,
            self.lr,
            self.loss,
            self.wall_ms,
            opt(self.psnr),
            opt(self.ssim)
        )
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub rows: Vec<TrainLogRow>,
    /// Pair-directory scan summary.
    pub data_report: LoadReport,
    pub checkpoint: PathBuf,
    pub state_file: PathBuf,
    pub log_file: PathBuf,
    /// Steps whose gradients were non-finite and therefore skipped.
    pub skipped_steps: Vec<u64>,
    pub stopped_early: bool,
    pub completed_steps: u64,
    pub final_psnr: Option<f64>,
    pub final_ssim: Option<f64>,
}

/// Mean PSNR/SSIM of the model's restorations over at most `cap` pairs.
pub fn evaluate_pairs<T: Real>(
    model: &Model<T>,
    pairs: &[PairSample<T>],
    cap: usize,
    tile: Option<usize>,
) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::Config("nothing to evaluate".into()));
    }
    let n = pairs.len().min(cap.max(1));
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    for pair in &pairs[..n] {
        let restored = model.desnow_image(&pair.snow, tile)?;
        psnr_sum += psnr(&restored, &pair.gt, 1.0)?;
        ssim_sum += ssim(&restored, &pair.gt, 1.0)?;
    }
    Ok((psnr_sum / n as f64, ssim_sum / n as f64))
}

fn save_state<T: Real>(
    path: &Path,
    step: u64,
    state: &AdamState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    let mut manifest = String::new();
    let _ = writeln!(manifest, "format_version = {STATE_VERSION}");
    manifest.push_str("dtype = f32\n");
    let _ = writeln!(manifest, "step = {step}");
    let _ = writeln!(manifest, "param_count = {}", state.m.len());
    for (k, v) in cfg.to_kv() {
        let _ = writeln!(manifest, "{k} = {v}");
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<fs::File>, bytes: &[u8]| -> Result<()> {
        out.write_all(bytes).map_err(|e| Error::io(path, e))
    };
    write(&mut out, STATE_MAGIC)?;
    write(&mut out, &STATE_VERSION.to_le_bytes())?;
    write(&mut out, &(manifest.len() as u64).to_le_bytes())?;
    write(&mut out, manifest.as_bytes())?;
    let mut buf = Vec::with_capacity(state.m.len() * 8);
    for v in state.m.iter().chain(state.v.iter()) {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    write(&mut out, &buf)?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads the optimizer state and the step count it was written at, checking
/// that the stored hyperparameters match `cfg` (total_steps may differ so a
/// finished run can be extended).
fn load_state<T: Real>(path: &Path, cfg: &TrainConfig) -> Result<(u64, AdamState<T>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let fail = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 || &bytes[0..4] != STATE_MAGIC {
        return Err(fail("not an optimizer state file".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != STATE_VERSION {
        return Err(fail(format!("unsupported state version {version}")));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + mlen {
        return Err(fail("manifest extends past the end of the file".into()));
    }
    let manifest =
        std::str::from_utf8(&bytes[16..16 + mlen]).map_err(|_| fail("manifest not utf-8".into()))?;
    let payload = &bytes[16 + mlen..];

    let mut step = None;
    let mut count = None;
    let mut stored = TrainConfig::default();
    for line in manifest.lines() {
        let Some((k, v)) = line.split_once('=') else {
            continue;
        };
        let (k, v) = (k.trim(), v.trim());
        match k {
            "format_version" | "dtype" => {}
            "step" => step = Some(v.parse::<u64>().map_err(|_| fail("bad step".into()))?),
            "param_count" => {
                count = Some(v.parse::<usize>().map_err(|_| fail("bad param_count".into()))?)
            }
            _ => stored
                .apply_kv(k, v)
                .map_err(|e| fail(format!("config entry rejected: {e}")))?,
        }
    }
    let step = step.ok_or_else(|| fail("missing step".into()))?;
    let count = count.ok_or_else(|| fail("missing param_count".into()))?;
    let mut relaxed = cfg.clone();
    relaxed.total_steps = stored.total_steps;
    relaxed.early_stop_psnr = stored.early_stop_psnr;
    if relaxed != stored {
        return Err(Error::Config(format!(
            "resume config disagrees with {} (only total_steps and early_stop_psnr may change)",
            path.display()
        )));
    }
    if payload.len() != count * 2 * 4 {
        return Err(fail(format!(
            "payload holds {} bytes, expected {} for two f32 buffers of {count}",
            payload.len(),
            count * 8
        )));
    }
    let mut state = AdamState::new(count);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        if i < count {
            state.m[i] = T::f(v);
        } else {
            state.v[i - count] = T::f(v);
        }
    }
    Ok((step, state))
}

pub fn checkpoint_path(out_dir: &Path) -> PathBuf {
    out_dir.join("latest.ckpt")
}

pub fn state_path(out_dir: &Path) -> PathBuf {
    out_dir.join("latest.state")
}

pub fn log_path(out_dir: &Path) -> PathBuf {
    out_dir.join("train_log.csv")
}

/// Runs (or resumes) training: loads pairs from `data_dir`, writes
/// `latest.ckpt`, `latest.state`, and `train_log.csv` into `out_dir`.
/// Metrics are evaluated and recorded at every checkpoint boundary.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    data_dir: &Path,
    out_dir: &Path,
    resume: bool,
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    cfg.validate()?;
    let sf = model_cfg.scale_factor();
    if cfg.patch_size % sf != 0 {
        return Err(Error::Config(format!(
            "patch_size {} must be a multiple of the scale factor {sf}",
            cfg.patch_size
        )));
    }

    let (pairs, data_report) = load_pairs::<f32>(data_dir)?;
    if pairs.is_empty() {
        return Err(Error::Config(format!(
            "no training pairs found in {}",
            data_dir.display()
        )));
    }
    for p in &pairs {
        let (h, w, _) = p.snow.dim();
        if h < cfg.patch_size || w < cfg.patch_size {
            return Err(Error::Config(format!(
                "pair {} is {h}x{w}, smaller than the {0}x{0} patch",
                cfg.patch_size,
            )));
        }
    }

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ckpt_path = checkpoint_path(out_dir);
    let st_path = state_path(out_dir);
    let csv_path = log_path(out_dir);

    let (mut model, mut state, start_step) = if resume {
        let model = Model::<f32>::load(&ckpt_path)?;
        if model.cfg != *model_cfg {
            return Err(Error::Config(
                "resume model config disagrees with the checkpoint".into(),
            ));
        }
        let (step, state) = load_state::<f32>(&st_path, cfg)?;
        if state.m.len() != model.param_count() {
            return Err(Error::Checkpoint(format!(
                "optimizer state holds {} values, model has {} parameters",
                state.m.len(),
                model.param_count()
            )));
        }
        (model, state, step)
    } else {
        let model = Model::<f32>::build(model_cfg)?;
        let n = model.param_count();
        (model, AdamState::new(n), 0)
    };

    let mut log = {
        let file = if resume && csv_path.exists() {
            fs::OpenOptions::new()
                .append(true)
                .open(&csv_path)
                .map_err(|e| Error::io(&csv_path, e))?
        } else {
            let mut f = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
            writeln!(f, "{LOG_HEADER}").map_err(|e| Error::io(&csv_path, e))?;
            f
        };
        BufWriter::new(file)
    };

    let loss_cfg = LossConfig::default();
    let mut rows = Vec::new();
    let mut skipped_steps = Vec::new();
    let mut stopped_early = false;
    let mut last_metrics = (None, None);
    let mut step = start_step;

    while step < cfg.total_steps as u64 {
        let started = Instant::now();
        let mut rng = step_rng(cfg.seed, step);
        let (input, target) =
            sample_batch(&pairs, cfg.batch_size, cfg.patch_size, cfg.augment, &mut rng)?;

        let (out, cache) = model.forward(&input, true)?;
        let cache = cache.expect("training forward keeps its cache");
        let (loss, dloss) = charbonnier_with_grad(&out, &target, &loss_cfg)?;
        let mut grads = model.zero_grads();
        model.backward(&cache, &dloss, &mut grads);
        drop(cache);
        if cfg.grad_clip > 0.0 {
            clip_grad_norm(&mut grads.data, cfg.grad_clip);
        }
        let lr = cyclic_lr(step, cfg);
        let applied = adamw_step(&mut model.params.data, &grads.data, &mut state, step + 1, lr, cfg)?;
        if !applied {
            skipped_steps.push(step);
        }

        step += 1;
        let boundary = step % cfg.checkpoint_every as u64 == 0 || step == cfg.total_steps as u64;
        let mut row = TrainLogRow {
            step,
            lr,
            loss,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            psnr: None,
            ssim: None,
        };
        if boundary {
            model.save(&ckpt_path)?;
            save_state(&st_path, step, &state, cfg)?;
            let (p, s) = evaluate_pairs(&model, &pairs, EVAL_CAP, None)?;
            row.psnr = Some(p);
            row.ssim = Some(s);
            last_metrics = (Some(p), Some(s));
            if p >= cfg.early_stop_psnr {
                stopped_early = true;
            }
        }
        writeln!(log, "{}", row.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
        rows.push(row);
        if stopped_early {
            break;
        }
    }
    log.flush().map_err(|e| Error::io(&csv_path, e))?;

    // A run whose length is not a multiple of the checkpoint interval still
    // ends with files that match the last step.
    if step % cfg.checkpoint_every as u64 != 0 && step != start_step {
        model.save(&ckpt_path)?;
        save_state(&st_path, step, &state, cfg)?;
    }
    if !ckpt_path.exists() {
        model.save(&ckpt_path)?;
        save_state(&st_path, step, &state, cfg)?;
    }

    Ok(TrainOutcome {
        rows,
        data_report,
        checkpoint: ckpt_path,
        state_file: st_path,
        log_file: csv_path,
        skipped_steps,
        stopped_early,
        completed_steps: step,
        final_psnr: last_metrics.0,
        final_ssim: last_metrics.1,
    })
}

/// Restores every pair in `pairs` and reports per-image and mean metrics.
pub fn evaluate_all<T: Real>(
    model: &Model<T>,
    pairs: &[PairSample<T>],
    tile: Option<usize>,
) -> Result<Vec<(String, f64, f64)>> {
    let mut out = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let restored = model.desnow_image(&pair.snow, tile)?;
        let p = psnr(&restored, &pair.gt, 1.0)?;
        let s = ssim(&restored, &pair.gt, 1.0)?;
        out.push((pair.id.clone(), p, s));
    }
    Ok(out)
}

/// Single-image restoration entry point shared by the executable layers.
pub fn desnow_file<T: Real>(
    model: &Model<T>,
    input: &Path,
    output: &Path,
    tile: Option<usize>,
) -> Result<()> {
    let img: ndarray::Array3<T> = crate::image_io::load_png(input)?;
    let restored = model.desnow_image(&img, tile)?;
    crate::image_io::save_png(output, &restored)
}
