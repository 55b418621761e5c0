//! Model complexity accounting and wall-clock benchmarking.
//!
//! Parameter counts are closed forms over the declared tensor shapes and are
//! cross-checked against instantiated models (double-entry bookkeeping).
//! MAC counts follow the dominant-term convention: one multiply-accumulate
//! per conv tap, grouped convs divided by their group count; biases,
//! activations, normalization, pooling, and the gate layers that act on
//! pooled vectors are excluded, which keeps the count exactly linear in
//! pixel count.

use std::env;
use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::net::{Model, ModelConfig};
use crate::nn::ops::STRIP_ELEMS;

/// Parameter totals split by network region; the parts sum to the total.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComplexityReport {
    pub total_params: usize,
    /// Encoder core blocks plus downsamplers.
    pub encoder_params: usize,
    /// Attention blocks across all levels.
    pub eam_params: usize,
    /// The stacked bottleneck sub-net.
    pub hor_params: usize,
    /// Upsamplers plus decoder blocks.
    pub decoder_params: usize,
    /// Input stem and output projection.
    pub head_params: usize,
    pub height: usize,
    pub width: usize,
    pub macs: u64,
}

impl ComplexityReport {
    pub fn gmacs(&self) -> f64 {
        self.macs as f64 / 1e9
    }

    pub fn params_m(&self) -> f64 {
        self.total_params as f64 / 1e6
    }

    /// Aligned text rendering with the headline columns.
    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "total params      {:>12}  ({:.2} M)\n",
            self.total_params,
            self.params_m()
        ));
        s.push_str(&format!("  encoder         {:>12}\n", self.encoder_params));
        s.push_str(&format!("  attention       {:>12}\n", self.eam_params));
        s.push_str(&format!("  rebuilding      {:>12}\n", self.hor_params));
        s.push_str(&format!("  decoder         {:>12}\n", self.decoder_params));
        s.push_str(&format!("  heads           {:>12}\n", self.head_params));
        s.push_str(&format!(
            "macs @ {}x{}  {:>12}  ({:.2} G)\n",
            self.height,
            self.width,
            self.macs,
            self.gmacs()
        ));
        s
    }
}

fn se_gate_params(channels: usize, reduction: usize) -> usize {
    let h = channels / reduction;
    channels * h + h + h * channels + channels
}

fn cimb_params(cfg: &ModelConfig, c: usize) -> usize {
    let e = c * cfg.alpha;
    let ln = if cfg.wo_ln { 0 } else { 2 * c };
    let expand = c * e + e;
    let dw = 9 * e + e;
    let se = se_gate_params(e, cfg.se_reduction);
    let project = e * c + c;
    // two stages: expand/dw/se/project, then expand/project
    ln + expand + dw + se + project + ln + expand + project
}

fn se_res_params(cfg: &ModelConfig, c: usize) -> usize {
    (9 * c * c + c) + se_gate_params(c, cfg.se_reduction) + (9 * c * c + c)
}

fn core_block_params(cfg: &ModelConfig, c: usize) -> usize {
    if cfg.cimb_to_se_resblock {
        se_res_params(cfg, c)
    } else {
        cimb_params(cfg, c)
    }
}

fn eam_params_one(cfg: &ModelConfig, c: usize) -> usize {
    let cin_a = if cfg.eam_from_fin { c } else { 3 };
    (cin_a * c + c) + (c * c + c) + (9 * (c + 3) * c + c)
}

/// Closed-form parameter count, split by region. Equals the instantiated
/// model's bundle length exactly.
pub fn count_params(cfg: &ModelConfig) -> Result<ComplexityReport> {
    cfg.validate()?;
    let c0 = cfg.base_channels;
    let stages = cfg.num_stages;
    let channels = cfg.channels();

    let mut encoder = 0usize;
    let mut eam = 0usize;
    for (k, &c) in channels.iter().enumerate() {
        encoder += core_block_params(cfg, c);
        if !cfg.wo_eam {
            eam += eam_params_one(cfg, c);
        }
        if k + 1 < stages {
            encoder += 9 * c * 2 * c + 2 * c;
        }
    }

    let c_bottom = channels[stages - 1];
    let hor = cfg.hor_depth * core_block_params(cfg, c_bottom);

    let mut decoder = 0usize;
    for j in 0..stages - 1 {
        let cin = c0 << (stages - 1 - j);
        decoder += 9 * cin * (cin / 2) + cin / 2;
        decoder += se_res_params(cfg, cin / 2);
    }

    let heads = (27 * c0 + c0) + (9 * c0 * 3 + 3);
    let total = encoder + eam + hor + decoder + heads;
    Ok(ComplexityReport {
        total_params: total,
        encoder_params: encoder,
        eam_params: eam,
        hor_params: hor,
        decoder_params: decoder,
        head_params: heads,
        height: 0,
        width: 0,
        macs: 0,
    })
}

fn cimb_macs_per_px(cfg: &ModelConfig, c: u64) -> u64 {
    let e = c * cfg.alpha as u64;
    // two expansions, two projections, one depthwise pass
    4 * c * e + 9 * e
}

fn se_res_macs_per_px(c: u64) -> u64 {
    18 * c * c
}

fn core_block_macs_per_px(cfg: &ModelConfig, c: u64) -> u64 {
    if cfg.cimb_to_se_resblock {
        se_res_macs_per_px(c)
    } else {
        cimb_macs_per_px(cfg, c)
    }
}

/// Multiply-accumulate count of one forward pass at `h`x`w` (which must be
/// divisible by the pyramid scale factor).
pub fn count_macs(cfg: &ModelConfig, h: usize, w: usize) -> Result<u64> {
    cfg.validate()?;
    let sf = cfg.scale_factor();
    if h == 0 || w == 0 || h % sf != 0 || w % sf != 0 {
        return Err(Error::Dimension(format!(
            "macs need sides divisible by {sf}, got {h}x{w}"
        )));
    }
    let stages = cfg.num_stages;
    let c0 = cfg.base_channels as u64;
    let px = |level: usize| ((h >> level) as u64) * ((w >> level) as u64);

    let mut macs = 27 * c0 * px(0); // stem
    for (k, &c) in cfg.channels().iter().enumerate() {
        let c = c as u64;
        macs += core_block_macs_per_px(cfg, c) * px(k);
        if !cfg.wo_eam {
            let cin_a = if cfg.eam_from_fin { c } else { 3 };
            macs += (cin_a * c + c * c + 9 * (c + 3) * c) * px(k);
        }
        if k + 1 < stages {
            macs += 9 * c * 2 * c * px(k + 1);
        }
    }
    let c_bottom = (cfg.base_channels << (stages - 1)) as u64;
    macs += cfg.hor_depth as u64 * core_block_macs_per_px(cfg, c_bottom) * px(stages - 1);
    for j in 0..stages - 1 {
        let cin = c0 << (stages - 1 - j);
        let out_level = stages - 2 - j;
        macs += 9 * cin * (cin / 2) * px(out_level);
        macs += se_res_macs_per_px(cin / 2) * px(out_level);
    }
    macs += 27 * c0 * px(0); // head
    Ok(macs)
}

/// Parameter and MAC accounting for one configuration and resolution.
pub fn analyze(cfg: &ModelConfig, h: usize, w: usize) -> Result<ComplexityReport> {
    let mut report = count_params(cfg)?;
    report.height = h;
    report.width = w;
    report.macs = count_macs(cfg, h, w)?;
    Ok(report)
}

/// Rough peak-memory estimate in bytes for one restoration pass, used to
/// refuse runs that would not fit instead of crashing inside an allocation.
pub fn estimate_peak_bytes(cfg: &ModelConfig, h: usize, w: usize, tile: Option<usize>) -> u64 {
    let elem = 4u64; // f32
    let params = count_params(cfg)
        .map(|r| r.total_params as u64)
        .unwrap_or(0);
    let sf = cfg.scale_factor();
    let pad = |v: usize| v.div_ceil(sf) * sf;
    let (ph, pw) = (pad(h) as u64, pad(w) as u64);
    let full_px = ph * pw;

    // The finest level dominates: the widest activations alive at once are
    // the expanded bottleneck tensors plus the stage input, output, skip,
    // and the image-sized residual chain.
    let c0 = cfg.base_channels as u64;
    let per_px_floats = c0 * (2 * cfg.alpha as u64 + 4) + 16;

    let work_px = match tile {
        Some(t) if (t as u64) < full_px.max(1) => {
            let t = t as u64;
            // feathered accumulation buffers live at full resolution
            return params * elem
                + 2 * STRIP_ELEMS as u64 * elem
                + t * t * per_px_floats * elem
                + full_px * 4 * elem;
        }
        _ => full_px,
    };
    params * elem + 2 * STRIP_ELEMS as u64 * elem + work_px * per_px_floats * elem
}

/// Memory ceiling for benchmark runs: `DESNOW_MEM_BUDGET_MB` when set,
/// otherwise 80% of `/proc/meminfo` MemAvailable, otherwise 2 GiB.
pub fn memory_budget_bytes() -> u64 {
    if let Ok(s) = env::var("DESNOW_MEM_BUDGET_MB") {
        if let Ok(mb) = s.trim().parse::<u64>() {
            return mb * 1024 * 1024;
        }
    }
    if let Ok(text) = fs::read_to_string("/proc/meminfo") {
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("MemAvailable:") {
                if let Some(kb) = rest.split_whitespace().next().and_then(|v| v.parse::<u64>().ok())
                {
                    return kb * 1024 / 5 * 4;
                }
            }
        }
    }
    2 * 1024 * 1024 * 1024
}

/// Thread count advertised to the GEMM backend. Setting `DESNOW_THREADS`
/// forwards the value to `MATMUL_NUM_THREADS`; call before the first matrix
/// product of the process.
pub fn apply_thread_env() -> String {
    match env::var("DESNOW_THREADS") {
        Ok(v) if !v.trim().is_empty() => {
            env::set_var("MATMUL_NUM_THREADS", v.trim());
            v.trim().to_string()
        }
        _ => env::var("MATMUL_NUM_THREADS").unwrap_or_else(|_| "default".into()),
    }
}

fn thread_label() -> String {
    env::var("DESNOW_THREADS")
        .or_else(|_| env::var("MATMUL_NUM_THREADS"))
        .map(|v| v.trim().to_string())
        .unwrap_or_else(|_| "default".into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub height: usize,
    pub width: usize,
    pub reps: usize,
    pub mean_s: f64,
    pub median_s: f64,
    pub p95_s: f64,
    pub fps: f64,
    pub params_m: f64,
    pub gmacs: f64,
    pub device: String,
    pub oom: bool,
    /// Per-rep seconds, harness baseline already subtracted. Not serialized.
    pub samples_s: Vec<f64>,
}

pub const BENCH_HEADER: &str = "resolution,reps,mean_s,median_s,p95_s,fps,params_m,gmacs,device";

impl BenchReport {
    pub fn to_csv(&self) -> String {
        if self.oom {
            return format!(
                "{}x{},0,OOM,OOM,OOM,OOM,{},{},{}",
                self.height, self.width, self.params_m, self.gmacs, self.device
            );
        }
        format!(
            "{}x{},{},{},{},{},{},{},{},{}",
            self.height,
            self.width,
            self.reps,
            self.mean_s,
            self.median_s,
            self.p95_s,
            self.fps,
            self.params_m,
            self.gmacs,
            self.device
        )
    }

    pub fn from_csv(line: &str) -> Result<BenchReport> {
        let bad = |msg: &str| Error::Config(format!("bench row '{line}': {msg}"));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 9 {
            return Err(bad("expected 9 columns"));
        }
        let (h, w) = cols[0]
            .split_once('x')
            .ok_or_else(|| bad("resolution must be HxW"))?;
        let h = h.parse().map_err(|_| bad("bad height"))?;
        let w = w.parse().map_err(|_| bad("bad width"))?;
        let oom = cols[2] == "OOM";
        let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| bad("bad number")) };
        Ok(BenchReport {
            height: h,
            width: w,
            reps: cols[1].parse().map_err(|_| bad("bad reps"))?,
            mean_s: if oom { 0.0 } else { num(cols[2])? },
            median_s: if oom { 0.0 } else { num(cols[3])? },
            p95_s: if oom { 0.0 } else { num(cols[4])? },
            fps: if oom { 0.0 } else { num(cols[5])? },
            params_m: num(cols[6])?,
            gmacs: num(cols[7])?,
            device: cols[8].to_string(),
            oom,
            samples_s: Vec::new(),
        })
    }
}

const WARMUP_RUNS: usize = 3;

/// Times repeated restorations of a synthetic image. Warm-up runs are
/// discarded, a copy-only harness baseline is subtracted from every sample,
/// and a predicted out-of-memory condition produces an OOM row instead of an
/// attempt. `budget_bytes` overrides the environment-derived memory ceiling.
pub fn bench_inference(
    model: &Model<f32>,
    h: usize,
    w: usize,
    reps: usize,
    tile: Option<usize>,
    budget_bytes: Option<u64>,
) -> Result<BenchReport> {
    if reps < 10 {
        return Err(Error::Config(format!("need at least 10 reps, got {reps}")));
    }
    if h == 0 || w == 0 {
        return Err(Error::Dimension("benchmark resolution is empty".into()));
    }
    let cfg = &model.cfg;
    let sf = cfg.scale_factor();
    let pad = |v: usize| v.div_ceil(sf) * sf;
    let gmacs = count_macs(cfg, pad(h), pad(w))? as f64 / 1e9;
    let params_m = model.param_count() as f64 / 1e6;
    let device = format!("cpu(threads={})", thread_label());

    let budget = budget_bytes.unwrap_or_else(memory_budget_bytes);
    let needed = estimate_peak_bytes(cfg, h, w, tile);
    if needed > budget {
        return Ok(BenchReport {
            height: h,
            width: w,
            reps: 0,
            mean_s: 0.0,
            median_s: 0.0,
            p95_s: 0.0,
            fps: 0.0,
            params_m,
            gmacs,
            device,
            oom: true,
            samples_s: Vec::new(),
        });
    }

    let mut rng = ChaCha12Rng::seed_from_u64(0);
    let input: Array3<f32> = Array3::from_shape_fn((h, w, 3), |_| rng.random::<f32>());

    for _ in 0..WARMUP_RUNS {
        model.desnow_image(&input, tile)?;
    }
    // Harness overhead: the cost of touching the image without the network.
    let baseline = {
        let mut times: Vec<f64> = (0..reps)
            .map(|_| {
                let start = Instant::now();
                let copy = input.clone();
                std::hint::black_box(&copy);
                start.elapsed().as_secs_f64()
            })
            .collect();
        times.sort_by(f64::total_cmp);
        times[times.len() / 2]
    };

    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        let out = model.desnow_image(&input, tile)?;
        std::hint::black_box(&out);
        samples.push((start.elapsed().as_secs_f64() - baseline).max(0.0));
    }
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / reps as f64;
    let median = if reps % 2 == 0 {
        (sorted[reps / 2 - 1] + sorted[reps / 2]) / 2.0
    } else {
        sorted[reps / 2]
    };
    let p95 = sorted[((reps as f64 * 0.95).ceil() as usize).clamp(1, reps) - 1];
    Ok(BenchReport {
        height: h,
        width: w,
        reps,
        mean_s: mean,
        median_s: median,
        p95_s: p95,
        fps: if mean > 0.0 { 1.0 / mean } else { f64::INFINITY },
        params_m,
        gmacs,
        device,
        oom: false,
        samples_s: samples,
    })
}

/// Writes the CSV file and returns an aligned text table with the headline
/// columns (inference time, GMACs, params).
pub fn emit_comparison_table(reports: &[BenchReport], csv_path: &Path) -> Result<String> {
    let mut csv = String::from(BENCH_HEADER);
    csv.push('\n');
    for r in reports {
        csv.push_str(&r.to_csv());
        csv.push('\n');
    }
    fs::write(csv_path, &csv).map_err(|e| Error::io(csv_path, e))?;

    let mut text = format!(
        "{:<12} {:>15} {:>10} {:>10} {:>8}  {}\n",
        "Resolution", "Inf. Time(in s)", "GMACs(G)", "Params(M)", "FPS", "Device"
    );
    for r in reports {
        let res = format!("{}x{}", r.height, r.width);
        if r.oom {
            text.push_str(&format!(
                "{:<12} {:>15} {:>10.2} {:>10.2} {:>8}  {}\n",
                res, "OOM", r.gmacs, r.params_m, "-", r.device
            ));
        } else {
            text.push_str(&format!(
                "{:<12} {:>15.4} {:>10.2} {:>10.2} {:>8.2}  {}\n",
                res, r.mean_s, r.gmacs, r.params_m, r.fps, r.device
            ));
        }
    }
    Ok(text)
}

/// Reads back a CSV written by [`emit_comparison_table`].
pub fn parse_comparison_csv(path: &Path) -> Result<Vec<BenchReport>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == BENCH_HEADER => {}
        _ => return Err(Error::Config(format!("{}: missing header", path.display()))),
    }
    lines.map(BenchReport::from_csv).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::default();
        cfg.base_channels = 8;
        cfg.num_stages = 2;
        cfg.hor_depth = 1;
        cfg
    }

    #[test]
    fn closed_form_count_matches_live_models() {
        let mut cases = vec![ModelConfig::default(), tiny_cfg()];
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        while cases.len() < 22 {
            let mut cfg = ModelConfig::default();
            cfg.base_channels = [8, 16][rng.random_range(0..2)];
            cfg.num_stages = rng.random_range(2..=4);
            cfg.hor_depth = rng.random_range(0..=3);
            cfg.alpha = [2, 3][rng.random_range(0..2)];
            cfg.shuffle_groups = [4, 8][rng.random_range(0..2)];
            cfg.se_reduction = [2, 4][rng.random_range(0..2)];
            cfg.cimb_to_se_resblock = rng.random();
            cfg.wo_eam = rng.random();
            cfg.wo_ln = rng.random();
            cfg.wo_shuffle = rng.random();
            cfg.eam_from_fin = rng.random();
            if cfg.validate().is_err() {
                continue;
            }
            cases.push(cfg);
        }
        for cfg in &cases {
            let report = count_params(cfg).unwrap();
            let live = Model::<f32>::build(cfg).unwrap().param_count();
            assert_eq!(report.total_params, live, "{cfg:?}");
            let parts = report.encoder_params
                + report.eam_params
                + report.hor_params
                + report.decoder_params
                + report.head_params;
            assert_eq!(parts, report.total_params, "components sum to total");
        }
    }

    #[test]
    fn rebuilding_depth_sweep_is_an_exact_progression() {
        let base = {
            let mut cfg = ModelConfig::default();
            cfg.hor_depth = 0;
            count_params(&cfg).unwrap().total_params
        };
        for depth in [0usize, 6, 12, 20] {
            let mut cfg = ModelConfig::default();
            cfg.hor_depth = depth;
            let total = count_params(&cfg).unwrap().total_params;
            assert_eq!(total, base + depth * 2_638_080, "depth {depth}");
        }
    }

    #[test]
    fn default_count_is_near_the_published_total() {
        let report = count_params(&ModelConfig::default()).unwrap();
        assert_eq!(report.total_params, 64_578_039);
        let rel = (report.total_params as f64 - 65.56e6).abs() / 65.56e6;
        assert!(rel < 0.02, "within 2%: {rel}");
    }

    #[test]
    fn macs_scale_exactly_with_pixels() {
        for cfg in [ModelConfig::default(), tiny_cfg()] {
            let sf = cfg.scale_factor();
            let base = count_macs(&cfg, 8 * sf, 8 * sf).unwrap();
            assert!(base > 0);
            assert_eq!(count_macs(&cfg, 16 * sf, 8 * sf).unwrap(), base * 2);
            assert_eq!(count_macs(&cfg, 8 * sf, 24 * sf).unwrap(), base * 3);
            assert_eq!(count_macs(&cfg, 16 * sf, 16 * sf).unwrap(), base * 4);
        }
    }

    #[test]
    fn resolution_ratios_sit_in_the_published_bands() {
        let cfg = ModelConfig::default();
        let at = |h, w| count_macs(&cfg, h, w).unwrap() as f64;
        let base = at(256, 256);
        let hd = at(1280, 736) / base;
        let uhd = at(4096, 2176) / base;
        assert!((13.9..=14.4).contains(&hd), "hd ratio {hd}");
        assert!((134.0..=137.0).contains(&uhd), "uhd ratio {uhd}");
    }

    #[test]
    fn macs_reject_unaligned_sizes() {
        let cfg = ModelConfig::default();
        assert!(count_macs(&cfg, 250, 256).is_err());
        assert!(count_macs(&cfg, 0, 256).is_err());
        let report = analyze(&cfg, 256, 256).unwrap();
        assert!(report.macs > 0);
        assert!(report.render().contains("256x256"));
    }

    #[test]
    fn memory_estimates_grow_and_tiling_shrinks_them() {
        let cfg = ModelConfig::default();
        let small = estimate_peak_bytes(&cfg, 256, 256, None);
        let big = estimate_peak_bytes(&cfg, 4096, 2176, None);
        let tiled = estimate_peak_bytes(&cfg, 4096, 2176, Some(512));
        assert!(big > small);
        assert!(tiled < big);
    }

    #[test]
    fn bench_produces_sane_statistics() {
        let model = Model::<f32>::build(&tiny_cfg()).unwrap();
        let report = bench_inference(&model, 32, 24, 10, None, None).unwrap();
        assert!(!report.oom);
        assert_eq!(report.reps, 10);
        assert_eq!(report.samples_s.len(), 10);
        let min = report.samples_s.iter().cloned().fold(f64::MAX, f64::min);
        assert!(report.p95_s >= report.median_s);
        assert!(report.median_s >= min);
        assert!(report.fps > 0.0);
        assert!(report.gmacs > 0.0);
        assert!(report.device.starts_with("cpu"));
        assert!(bench_inference(&model, 32, 24, 9, None, None).is_err());
    }

    #[test]
    fn exhausted_budget_yields_an_oom_row_not_a_crash() {
        let model = Model::<f32>::build(&tiny_cfg()).unwrap();
        let report = bench_inference(&model, 512, 512, 10, None, Some(1024)).unwrap();
        assert!(report.oom);
        assert_eq!(report.reps, 0);
        let row = report.to_csv();
        assert!(row.contains("OOM"));
    }

    #[test]
    fn comparison_table_round_trips_and_formats() {
        let model = Model::<f32>::build(&tiny_cfg()).unwrap();
        let fast = bench_inference(&model, 32, 24, 10, None, None).unwrap();
        let oom = bench_inference(&model, 512, 512, 10, None, Some(1024)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("bench.csv");
        let text = emit_comparison_table(&[fast.clone(), oom.clone()], &csv).unwrap();
        assert!(text.contains("Inf. Time(in s)"));
        assert!(text.contains("GMACs(G)"));
        assert!(text.contains("Params(M)"));
        assert!(text.contains("OOM"));

        let parsed = parse_comparison_csv(&csv).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].to_csv(), fast.to_csv());
        assert_eq!(parsed[1].to_csv(), oom.to_csv());
        assert!(parsed[1].oom);
    }

    #[test]
    fn unaligned_resolutions_bench_at_their_padded_size() {
        let cfg = tiny_cfg();
        let model = Model::<f32>::build(&cfg).unwrap();
        // 31x30 pads to 32x30 for a scale factor of 2
        let report = bench_inference(&model, 31, 30, 10, None, None).unwrap();
        let expect = count_macs(&cfg, 32, 30).unwrap() as f64 / 1e9;
        assert_eq!(report.gmacs, expect);
        assert_eq!((report.height, report.width), (31, 30));
    }
}
