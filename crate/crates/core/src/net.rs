//! The restoration network.
//!
//! An asymmetric encoder-decoder over a six-level pyramid. The stem lifts
//! the RGB input to the base width; each encoder stage runs one inverted
//! bottleneck block ([`Cimb`]) plus an input-driven attention block
//! ([`Eam`]) fed by the input image average-pooled to the stage resolution,
//! then halves the grid with a strided convolution. A stack of bottleneck
//! blocks refines the coarsest level. The decoder mirrors the pyramid with
//! nearest-neighbor upsampling, additive skips from the encoder stage
//! outputs and one gated residual block per level. The head predicts an RGB
//! residual added to the input; with the default zero-initialized head the
//! network is an exact identity at initialization.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::{s, Array3, Array4, Ix1, Ix2};

use crate::error::{Error, Result};
use crate::nn::blocks::{
    Cimb, CimbCache, CimbCfg, DownSample, Eam, EamCache, EamCfg, SeResBlock, SeResCache, UpSample,
};
use crate::nn::ops::{conv2d, conv2d_backward, Act, Conv2dCfg};
use crate::nn::param::{Init, ParamBuilder, ParamBundle, ParamRef};
use crate::tensor::{
    avg_pool, batch_to_image, clamp01, crop, image_to_batch, pad_to_multiple, Real,
};

/// Overlap between neighboring tiles in tiled inference, in pixels.
pub const TILE_OVERLAP: usize = 64;

const MAGIC: &[u8; 4] = b"DSNW";
const FORMAT_VERSION: u32 = 1;

/// Architecture hyperparameters and ablation switches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Channel width of the finest level; level `k` has `base_channels << k`.
    pub base_channels: usize,
    /// Number of encoder levels (and one fewer down/up samplers).
    pub num_stages: usize,
    /// Bottleneck blocks stacked at the coarsest level.
    pub hor_depth: usize,
    /// Channel expansion inside the bottleneck blocks.
    pub alpha: usize,
    /// Shuffle group count on the expanded channels.
    pub shuffle_groups: usize,
    /// Channel gate bottleneck divisor.
    pub se_reduction: usize,
    /// Initialization seed.
    pub seed: u64,
    /// Zero the head so the untrained network is the identity.
    pub zero_init_head: bool,
    /// Swap every bottleneck block for a gated residual block.
    pub cimb_to_se_resblock: bool,
    /// Drop the attention blocks from the encoder.
    pub wo_eam: bool,
    /// Drop layer normalization inside the bottleneck blocks.
    pub wo_ln: bool,
    /// Use relu instead of gelu inside the bottleneck blocks.
    pub gelu_to_relu: bool,
    /// Disable the channel shuffle.
    pub wo_shuffle: bool,
    /// Drive the attention branch from the block features instead of the
    /// pooled input image.
    pub eam_from_fin: bool,
    /// Use relu instead of elu inside the attention branch.
    pub eam_elu_to_relu: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base_channels: 16,
            num_stages: 6,
            hor_depth: 20,
            alpha: 2,
            shuffle_groups: 8,
            se_reduction: 4,
            seed: 0,
            zero_init_head: true,
            cimb_to_se_resblock: false,
            wo_eam: false,
            wo_ln: false,
            gelu_to_relu: false,
            wo_shuffle: false,
            eam_from_fin: false,
            eam_elu_to_relu: false,
        }
    }
}

impl ModelConfig {
    /// Channel width at every encoder level.
    pub fn channels(&self) -> Vec<usize> {
        (0..self.num_stages)
            .map(|k| self.base_channels << k)
            .collect()
    }

    /// Total spatial reduction at the coarsest level.
    pub fn scale_factor(&self) -> usize {
        1 << (self.num_stages - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.num_stages == 0 || self.alpha == 0 {
            return Err(Error::Config(
                "base_channels, num_stages and alpha must be positive".into(),
            ));
        }
        if self.num_stages > 10 {
            return Err(Error::Config("num_stages larger than 10".into()));
        }
        for c in self.channels() {
            let e = c * self.alpha;
            if !self.wo_shuffle && !self.cimb_to_se_resblock && e % self.shuffle_groups != 0 {
                return Err(Error::Config(format!(
                    "shuffle_groups {} does not divide expanded width {e}",
                    self.shuffle_groups
                )));
            }
            let gated = if self.cimb_to_se_resblock { c } else { e };
            if gated % self.se_reduction != 0 {
                return Err(Error::Config(format!(
                    "se_reduction {} does not divide gated width {gated}",
                    self.se_reduction
                )));
            }
            if c % self.se_reduction != 0 {
                return Err(Error::Config(format!(
                    "se_reduction {} does not divide decoder width {c}",
                    self.se_reduction
                )));
            }
        }
        Ok(())
    }

    fn cimb_cfg(&self, channels: usize) -> CimbCfg {
        CimbCfg {
            channels,
            alpha: self.alpha,
            groups: self.shuffle_groups,
            se_reduction: self.se_reduction,
            use_ln: !self.wo_ln,
            use_shuffle: !self.wo_shuffle,
            act: if self.gelu_to_relu { Act::Relu } else { Act::Gelu },
        }
    }

    fn eam_cfg(&self, channels: usize) -> EamCfg {
        EamCfg {
            channels,
            from_fin: self.eam_from_fin,
            act: if self.eam_elu_to_relu {
                Act::Relu
            } else {
                Act::Elu
            },
        }
    }

    /// Key-value view of every field, used for checkpoints and overrides.
    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        vec![
            ("base_channels", self.base_channels.to_string()),
            ("num_stages", self.num_stages.to_string()),
            ("hor_depth", self.hor_depth.to_string()),
            ("alpha", self.alpha.to_string()),
            ("shuffle_groups", self.shuffle_groups.to_string()),
            ("se_reduction", self.se_reduction.to_string()),
            ("seed", self.seed.to_string()),
            ("zero_init_head", self.zero_init_head.to_string()),
            ("cimb_to_se_resblock", self.cimb_to_se_resblock.to_string()),
            ("wo_eam", self.wo_eam.to_string()),
            ("wo_ln", self.wo_ln.to_string()),
            ("gelu_to_relu", self.gelu_to_relu.to_string()),
            ("wo_shuffle", self.wo_shuffle.to_string()),
            ("eam_from_fin", self.eam_from_fin.to_string()),
            ("eam_elu_to_relu", self.eam_elu_to_relu.to_string()),
        ]
    }

    /// All recognized keys, in the order [`Self::to_kv`] emits them.
    pub fn keys() -> Vec<&'static str> {
        ModelConfig::default()
            .to_kv()
            .into_iter()
            .map(|(k, _)| k)
            .collect()
    }

    /// Sets one field from its textual form. Unknown keys and bad values are
    /// configuration errors that name the valid alternatives.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn as_usize(key: &str, v: &str) -> Result<usize> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key} expects an unsigned integer, got '{v}'")))
        }
        fn as_u64(key: &str, v: &str) -> Result<u64> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key} expects an unsigned integer, got '{v}'")))
        }
        fn as_bool(key: &str, v: &str) -> Result<bool> {
            match v.trim() {
                "true" | "1" => Ok(true),
                "false" | "0" => Ok(false),
                other => Err(Error::Config(format!(
                    "{key} expects true/false, got '{other}'"
                ))),
            }
        }
        match key {
            "base_channels" => self.base_channels = as_usize(key, value)?,
            "num_stages" => self.num_stages = as_usize(key, value)?,
            "hor_depth" => self.hor_depth = as_usize(key, value)?,
            "alpha" => self.alpha = as_usize(key, value)?,
            "shuffle_groups" => self.shuffle_groups = as_usize(key, value)?,
            "se_reduction" => self.se_reduction = as_usize(key, value)?,
            "seed" => self.seed = as_u64(key, value)?,
            "zero_init_head" => self.zero_init_head = as_bool(key, value)?,
            "cimb_to_se_resblock" => self.cimb_to_se_resblock = as_bool(key, value)?,
            "wo_eam" => self.wo_eam = as_bool(key, value)?,
            "wo_ln" => self.wo_ln = as_bool(key, value)?,
            "gelu_to_relu" => self.gelu_to_relu = as_bool(key, value)?,
            "wo_shuffle" => self.wo_shuffle = as_bool(key, value)?,
            "eam_from_fin" => self.eam_from_fin = as_bool(key, value)?,
            "eam_elu_to_relu" => self.eam_elu_to_relu = as_bool(key, value)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown model key '{other}'; valid keys: {}",
                    ModelConfig::keys().join(", ")
                )))
            }
        }
        Ok(())
    }
}

/// Either the standard bottleneck block or its residual-block replacement.
#[derive(Debug, Clone)]
enum CoreBlock {
    Cimb(Cimb),
    SeRes(SeResBlock),
}

#[derive(Debug)]
enum CoreCache<T> {
    Cimb(CimbCache<T>),
    SeRes(SeResCache<T>),
}

impl CoreBlock {
    fn declare(pb: &mut ParamBuilder, prefix: &str, cfg: &ModelConfig, channels: usize) -> Self {
        if cfg.cimb_to_se_resblock {
            CoreBlock::SeRes(SeResBlock::declare(
                pb,
                &format!("{prefix}res."),
                channels,
                cfg.se_reduction,
            ))
        } else {
            CoreBlock::Cimb(Cimb::declare(
                pb,
                &format!("{prefix}cimb."),
                cfg.cimb_cfg(channels),
            ))
        }
    }

    fn forward<T: Real>(
        &self,
        p: &ParamBundle<T>,
        x: &Array4<T>,
        want_cache: bool,
    ) -> (Array4<T>, Option<CoreCache<T>>) {
        match self {
            CoreBlock::Cimb(b) => {
                let (y, c) = b.forward(p, x, want_cache);
                (y, c.map(CoreCache::Cimb))
            }
            CoreBlock::SeRes(b) => {
                let (y, c) = b.forward(p, x, want_cache);
                (y, c.map(CoreCache::SeRes))
            }
        }
    }

    fn backward<T: Real>(
        &self,
        p: &ParamBundle<T>,
        cache: &CoreCache<T>,
        dy: &Array4<T>,
        grads: &mut ParamBundle<T>,
    ) -> Array4<T> {
        match (self, cache) {
            (CoreBlock::Cimb(b), CoreCache::Cimb(c)) => b.backward(p, c, dy, grads),
            (CoreBlock::SeRes(b), CoreCache::SeRes(c)) => b.backward(p, c, dy, grads),
            _ => unreachable!("cache kind always matches the block kind"),
        }
    }
}

#[derive(Debug, Clone)]
struct EncStage {
    block: CoreBlock,
    eam: Option<Eam>,
}

/// Every intermediate needed by [`Model::backward`].
pub struct ModelCache<T> {
    input: Array4<T>,
    enc_block: Vec<CoreCache<T>>,
    enc_eam: Vec<Option<EamCache<T>>>,
    down: Vec<Array4<T>>,
    hor: Vec<CoreCache<T>>,
    up: Vec<Array4<T>>,
    dec: Vec<SeResCache<T>>,
    head_in: Array4<T>,
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub cfg: ModelConfig,
    pub params: ParamBundle<T>,
    stem_w: ParamRef,
    stem_b: ParamRef,
    enc: Vec<EncStage>,
    down: Vec<DownSample>,
    hor: Vec<CoreBlock>,
    up: Vec<UpSample>,
    dec: Vec<SeResBlock>,
    head_w: ParamRef,
    head_b: ParamRef,
}

impl<T: Real> Model<T> {
    pub fn build(cfg: &ModelConfig) -> Result<Model<T>> {
        cfg.validate()?;
        let mut pb = ParamBuilder::new();
        let c0 = cfg.base_channels;
        let stages = cfg.num_stages;

        let stem_w = pb.tensor("stem.w", &[27, c0], Init::FanIn(27));
        let stem_b = pb.tensor("stem.b", &[c0], Init::Zeros);

        let mut enc = Vec::with_capacity(stages);
        let mut down = Vec::with_capacity(stages.saturating_sub(1));
        for (k, c) in cfg.channels().into_iter().enumerate() {
            let block = CoreBlock::declare(&mut pb, &format!("enc{k}."), cfg, c);
            let eam = (!cfg.wo_eam)
                .then(|| Eam::declare(&mut pb, &format!("enc{k}.eam."), cfg.eam_cfg(c)));
            enc.push(EncStage { block, eam });
            if k + 1 < stages {
                down.push(DownSample::declare(&mut pb, &format!("down{k}."), c));
            }
        }

        let c_bottom = c0 << (stages - 1);
        let hor = (0..cfg.hor_depth)
            .map(|j| CoreBlock::declare(&mut pb, &format!("hor{j}."), cfg, c_bottom))
            .collect();

        let mut up = Vec::with_capacity(stages.saturating_sub(1));
        let mut dec = Vec::with_capacity(stages.saturating_sub(1));
        for j in 0..stages - 1 {
            let cin = c0 << (stages - 1 - j);
            up.push(UpSample::declare(&mut pb, &format!("up{j}."), cin));
            dec.push(SeResBlock::declare(
                &mut pb,
                &format!("dec{j}."),
                cin / 2,
                cfg.se_reduction,
            ));
        }

        let head_init = if cfg.zero_init_head {
            Init::Zeros
        } else {
            Init::FanIn(9 * c0)
        };
        let head_w = pb.tensor("head.w", &[9 * c0, 3], head_init);
        let head_b = pb.tensor("head.b", &[3], Init::Zeros);

        Ok(Model {
            cfg: cfg.clone(),
            params: pb.build(cfg.seed),
            stem_w,
            stem_b,
            enc,
            down,
            hor,
            up,
            dec,
            head_w,
            head_b,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Same architecture and weights at a different element type.
    pub fn cast<U: Real>(&self) -> Model<U> {
        let mut m = Model::<U>::build(&self.cfg).expect("config was already validated");
        m.params = self.params.cast();
        m
    }

    pub fn zero_grads(&self) -> ParamBundle<T> {
        self.params.zeros_like()
    }

    fn validate_input(&self, input: &Array4<T>) -> Result<()> {
        let (n, h, w, c) = input.dim();
        if n == 0 || h == 0 || w == 0 {
            return Err(Error::Dimension("empty input batch".into()));
        }
        if c != 3 {
            return Err(Error::Dimension(format!("input must have 3 channels, got {c}")));
        }
        let sf = self.cfg.scale_factor();
        if h % sf != 0 || w % sf != 0 {
            return Err(Error::Dimension(format!(
                "input {h}x{w} must be a multiple of {sf}; pad first"
            )));
        }
        Ok(())
    }

    /// Runs the network on an NHWC batch whose sides are multiples of the
    /// pyramid scale factor. The output is `input + residual`, unclamped.
    pub fn forward(
        &self,
        input: &Array4<T>,
        want_cache: bool,
    ) -> Result<(Array4<T>, Option<ModelCache<T>>)> {
        self.validate_input(input)?;
        let p = &self.params;
        let stages = self.cfg.num_stages;
        let use_eam = self.enc.iter().any(|e| e.eam.is_some());

        let mut enc_block_c = Vec::new();
        let mut enc_eam_c = Vec::new();
        let mut down_c = Vec::new();
        let mut hor_c = Vec::new();
        let mut up_c = Vec::new();
        let mut dec_c = Vec::new();

        let mut f = conv2d(
            input,
            p.view_as::<Ix2>(self.stem_w),
            Some(p.view_as::<Ix1>(self.stem_b)),
            Conv2dCfg::k3(),
        );

        let mut skips: Vec<Array4<T>> = Vec::with_capacity(stages);
        for (k, stage) in self.enc.iter().enumerate() {
            let (b_out, b_cache) = stage.block.forward(p, &f, want_cache);
            if want_cache {
                enc_block_c.push(b_cache.expect("cache requested"));
            }
            f = match &stage.eam {
                Some(eam) => {
                    let i_down = avg_pool(input, 1usize << k);
                    let (e_out, e_cache) = eam.forward(p, &b_out, &i_down, want_cache);
                    if want_cache {
                        enc_eam_c.push(Some(e_cache.expect("cache requested")));
                    }
                    e_out
                }
                None => {
                    if want_cache {
                        enc_eam_c.push(None);
                    }
                    b_out
                }
            };
            if k + 1 < stages {
                skips.push(f.clone());
                let (d_out, d_cache) = self.down[k].forward(p, &f, want_cache);
                if want_cache {
                    down_c.push(d_cache.expect("cache requested"));
                }
                f = d_out;
            }
        }
        let _ = use_eam;

        for block in &self.hor {
            let (h_out, h_cache) = block.forward(p, &f, want_cache);
            if want_cache {
                hor_c.push(h_cache.expect("cache requested"));
            }
            f = h_out;
        }

        for (j, (ups, decb)) in self.up.iter().zip(&self.dec).enumerate() {
            let (u_out, u_cache) = ups.forward(p, &f, want_cache);
            if want_cache {
                up_c.push(u_cache.expect("cache requested"));
            }
            let skip = &skips[stages - 2 - j];
            let summed = &u_out + skip;
            let (d_out, d_cache) = decb.forward(p, &summed, want_cache);
            if want_cache {
                dec_c.push(d_cache.expect("cache requested"));
            }
            f = d_out;
        }

        let residual = conv2d(
            &f,
            p.view_as::<Ix2>(self.head_w),
            Some(p.view_as::<Ix1>(self.head_b)),
            Conv2dCfg::k3(),
        );
        let out = input + &residual;

        let cache = want_cache.then(|| ModelCache {
            input: input.clone(),
            enc_block: enc_block_c,
            enc_eam: enc_eam_c,
            down: down_c,
            hor: hor_c,
            up: up_c,
            dec: dec_c,
            head_in: f,
        });
        Ok((out, cache))
    }

    /// Accumulates parameter gradients for the upstream gradient `dout`.
    pub fn backward(&self, cache: &ModelCache<T>, dout: &Array4<T>, grads: &mut ParamBundle<T>) {
        let p = &self.params;
        let stages = self.cfg.num_stages;

        let (dhead_in, dwh, dbh) = conv2d_backward(
            &cache.head_in,
            p.view_as::<Ix2>(self.head_w),
            dout,
            Conv2dCfg::k3(),
            true,
        );
        accum(grads, self.head_w, dwh.as_slice().unwrap());
        accum(grads, self.head_b, dbh.as_slice().unwrap());
        let mut df = dhead_in.unwrap();

        let mut dskips: Vec<Option<Array4<T>>> = (0..stages).map(|_| None).collect();
        for j in (0..self.up.len()).rev() {
            let d_sum = self.dec[j].backward(p, &cache.dec[j], &df, grads);
            dskips[stages - 2 - j] = Some(d_sum.clone());
            df = self.up[j].backward(p, &cache.up[j], &d_sum, grads);
        }

        for j in (0..self.hor.len()).rev() {
            df = self.hor[j].backward(p, &cache.hor[j], &df, grads);
        }

        for k in (0..stages).rev() {
            let d_stage_out = if k + 1 < stages {
                let mut d = self.down[k].backward(p, &cache.down[k], &df, grads);
                if let Some(ds) = &dskips[k] {
                    d += ds;
                }
                d
            } else {
                df
            };
            let d_block_out = match (&self.enc[k].eam, &cache.enc_eam[k]) {
                (Some(eam), Some(ec)) => eam.backward(p, ec, &d_stage_out, grads),
                _ => d_stage_out,
            };
            df = self.enc[k]
                .block
                .backward(p, &cache.enc_block[k], &d_block_out, grads);
        }

        let (_, dws, dbs) = conv2d_backward(
            &cache.input,
            p.view_as::<Ix2>(self.stem_w),
            &df,
            Conv2dCfg::k3(),
            false,
        );
        accum(grads, self.stem_w, dws.as_slice().unwrap());
        accum(grads, self.stem_b, dbs.as_slice().unwrap());
    }

    /// Restores a single HWC image. Sides are mirrored up to the pyramid
    /// multiple and cropped back; `tile` bounds peak memory by running
    /// overlapping tiles and feathering the seams. Output is clamped to
    /// `[0, 1]`.
    pub fn desnow_image(&self, img: &Array3<T>, tile: Option<usize>) -> Result<Array3<T>> {
        let (h, w, c) = img.dim();
        if c != 3 {
            return Err(Error::Dimension(format!("expected an RGB image, got {c} channels")));
        }
        if h == 0 || w == 0 {
            return Err(Error::Dimension("empty image".into()));
        }
        let sf = self.cfg.scale_factor();
        let batch = image_to_batch(img);
        let out = match tile {
            Some(t) if t.max(sf) < h.max(w) => {
                if t % sf != 0 || t <= TILE_OVERLAP {
                    return Err(Error::Config(format!(
                        "tile size must be a multiple of {sf} and larger than the {TILE_OVERLAP} pixel overlap"
                    )));
                }
                self.forward_tiled(&batch, t)?
            }
            _ => {
                let (padded, (oh, ow)) = pad_to_multiple(&batch, sf);
                let (y, _) = self.forward(&padded, false)?;
                crop(&y, oh, ow)
            }
        };
        let mut img_out = batch_to_image(&out);
        clamp01(&mut img_out);
        Ok(img_out)
    }

    fn forward_tiled(&self, batch: &Array4<T>, tile: usize) -> Result<Array4<T>> {
        let sf = self.cfg.scale_factor();
        let (padded, (oh, ow)) = pad_to_multiple(batch, sf);
        let (_, hp, wp, _) = padded.dim();
        let th = tile.min(hp);
        let tw = tile.min(wp);

        let mut num: Array4<T> = Array4::zeros(padded.dim());
        let mut den: Array4<T> = Array4::zeros(padded.dim());
        for &y in &tile_positions(hp, th) {
            let wy = feather(hp, y, th);
            for &x in &tile_positions(wp, tw) {
                let wx = feather(wp, x, tw);
                let tile_in = padded.slice(s![.., y..y + th, x..x + tw, ..]).to_owned();
                let (tile_out, _) = self.forward(&tile_in, false)?;
                for ty in 0..th {
                    for tx in 0..tw {
                        let weight = T::f(wy[ty] * wx[tx]);
                        let mut npx = num.slice_mut(s![0, y + ty, x + tx, ..]);
                        npx.scaled_add(weight, &tile_out.slice(s![0, ty, tx, ..]));
                        let mut dpx = den.slice_mut(s![0, y + ty, x + tx, ..]);
                        dpx += &ndarray::Array1::from_elem(3, weight);
                    }
                }
            }
        }
        ndarray::Zip::from(&mut num).and(&den).for_each(|n, &d| {
            *n = *n / d;
        });
        Ok(crop(&num, oh, ow))
    }

    const KEY_TENSOR: &'static str = "tensor";

    /// Serializes the config and weights: a fixed magic and version, a
    /// length-prefixed text manifest (config keys plus one line per tensor),
    /// then the raw little-endian f32 payload in declaration order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut manifest = String::new();
        manifest.push_str(&format!("format_version = {FORMAT_VERSION}\n"));
        manifest.push_str("dtype = f32\n");
        for (k, v) in self.cfg.to_kv() {
            manifest.push_str(&format!("{k} = {v}\n"));
        }
        for m in &self.params.metas {
            let dims = m
                .shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("x");
            manifest.push_str(&format!(
                "{} {} {} {} {}\n",
                Self::KEY_TENSOR,
                m.name,
                dims,
                m.offset,
                m.len
            ));
        }

        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let write = |out: &mut BufWriter<fs::File>, bytes: &[u8]| -> Result<()> {
            out.write_all(bytes).map_err(|e| Error::io(path, e))
        };
        write(&mut out, MAGIC)?;
        write(&mut out, &FORMAT_VERSION.to_le_bytes())?;
        write(&mut out, &(manifest.len() as u64).to_le_bytes())?;
        write(&mut out, manifest.as_bytes())?;
        let mut buf = Vec::with_capacity(self.params.data.len() * 4);
        for v in &self.params.data {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        write(&mut out, &buf)?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint written by [`Model::save`], validating the magic,
    /// version, manifest consistency and payload size.
    pub fn load(path: &Path) -> Result<Model<T>> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let fail = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
        if bytes.len() < 16 {
            return Err(fail("file too short for the header"));
        }
        if &bytes[0..4] != MAGIC {
            return Err(fail("bad magic; not a checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(fail(&format!("unsupported format version {version}")));
        }
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        if bytes.len() < 16 + mlen {
            return Err(fail("manifest extends past the end of the file"));
        }
        let manifest = std::str::from_utf8(&bytes[16..16 + mlen])
            .map_err(|_| fail("manifest is not valid utf-8"))?;
        let payload = &bytes[16 + mlen..];

        let mut cfg = ModelConfig::default();
        let mut tensors: Vec<(String, Vec<usize>, usize, usize)> = Vec::new();
        for line in manifest.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix(Self::KEY_TENSOR) {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 4 {
                    return Err(fail(&format!("malformed tensor line '{line}'")));
                }
                let shape: Vec<usize> = parts[1]
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| fail(&format!("bad tensor shape in '{line}'")))?;
                let offset = parts[2]
                    .parse::<usize>()
                    .map_err(|_| fail(&format!("bad tensor offset in '{line}'")))?;
                let len = parts[3]
                    .parse::<usize>()
                    .map_err(|_| fail(&format!("bad tensor length in '{line}'")))?;
                tensors.push((parts[0].to_string(), shape, offset, len));
            } else if let Some((k, v)) = line.split_once('=') {
                let (k, v) = (k.trim(), v.trim());
                match k {
                    "format_version" => {}
                    "dtype" => {
                        if v != "f32" {
                            return Err(fail(&format!("unsupported dtype {v}")));
                        }
                    }
                    _ => cfg
                        .apply_kv(k, v)
                        .map_err(|e| fail(&format!("config entry rejected: {e}")))?,
                }
            } else {
                return Err(fail(&format!("unparseable manifest line '{line}'")));
            }
        }

        let mut model =
            Model::<T>::build(&cfg).map_err(|e| fail(&format!("config rejected: {e}")))?;
        if tensors.len() != model.params.metas.len() {
            return Err(fail(&format!(
                "manifest lists {} tensors, architecture has {}",
                tensors.len(),
                model.params.metas.len()
            )));
        }
        for (got, want) in tensors.iter().zip(&model.params.metas) {
            if got.0 != want.name || got.1 != want.shape || got.2 != want.offset || got.3 != want.len
            {
                return Err(fail(&format!(
                    "tensor '{}' does not match the architecture (expected '{}' {:?} at {})",
                    got.0, want.name, want.shape, want.offset
                )));
            }
        }
        let total = model.params.len();
        if payload.len() != total * 4 {
            return Err(fail(&format!(
                "payload holds {} bytes, expected {}",
                payload.len(),
                total * 4
            )));
        }
        for (dst, chunk) in model.params.data.iter_mut().zip(payload.chunks_exact(4)) {
            *dst = T::f(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64);
        }
        Ok(model)
    }
}

fn accum<T: Real>(grads: &mut ParamBundle<T>, r: ParamRef, delta: &[T]) {
    let slot = grads.slice_mut(r);
    assert_eq!(slot.len(), delta.len());
    for (a, b) in slot.iter_mut().zip(delta) {
        *a = *a + *b;
    }
}

/// Tile origins along one axis: stride `t - overlap`, with the final tile
/// aligned to the end.
fn tile_positions(len: usize, t: usize) -> Vec<usize> {
    if t >= len {
        return vec![0];
    }
    let step = t - TILE_OVERLAP.min(t - 1);
    let mut v = Vec::new();
    let mut p = 0usize;
    loop {
        let pos = p.min(len - t);
        v.push(pos);
        if pos + t >= len {
            break;
        }
        p += step;
    }
    v
}

/// Linear blend weights for one axis of a tile: ramps over the overlap on
/// interior edges, constant one at the image border.
fn feather(len_total: usize, pos: usize, t: usize) -> Vec<f64> {
    let ramp = (TILE_OVERLAP + 1) as f64;
    (0..t)
        .map(|i| {
            let mut w: f64 = 1.0;
            if pos > 0 {
                w = w.min((i + 1) as f64 / ramp);
            }
            if pos + t < len_total {
                w = w.min((t - i) as f64 / ramp);
            }
            w
        })
        .collect()
}
