//! Low-level tensor operations, forward and backward.
//!
//! Activations are NHWC throughout: for one pixel the channels are
//! contiguous, so 1x1 convolutions reduce to one GEMM over a `[N*H*W, C]`
//! reshape with no copies, and per-pixel channel work (layer norm, shuffle,
//! gating) runs on contiguous slices.
//!
//! General convolutions go through a strip-mined im2col: a bounded number of
//! output rows is lowered to a `[rows * W_out, k*k*C_in]` buffer (tap-major,
//! channel-minor) and multiplied against the `[k*k*C_in, C_out]` weight
//! matrix. Backward recomputes the same strips, so no im2col buffer is ever
//! cached across the pass. Shape mismatches in this module are programmer
//! errors and panic; user-facing validation lives at the model boundary.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array, Array1, Array2, Array4, ArrayView1, ArrayView2, Axis, Dimension, Zip};

use crate::tensor::Real;

/// Strip buffer budget in elements (~32 MB at f64); keeps im2col memory flat
/// regardless of resolution.
pub const STRIP_ELEMS: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dCfg {
    pub kernel: usize,
    pub stride: usize,
    /// Zero padding on every side.
    pub pad: usize,
}

impl Conv2dCfg {
    pub fn k1() -> Self {
        Conv2dCfg {
            kernel: 1,
            stride: 1,
            pad: 0,
        }
    }

    pub fn k3() -> Self {
        Conv2dCfg {
            kernel: 3,
            stride: 1,
            pad: 1,
        }
    }

    pub fn k3s2() -> Self {
        Conv2dCfg {
            kernel: 3,
            stride: 2,
            pad: 1,
        }
    }

    pub fn out_dim(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }
}

fn as_rows<T: Real>(x: &Array4<T>) -> ArrayView2<'_, T> {
    let (n, h, w, c) = x.dim();
    x.view()
        .into_shape_with_order((n * h * w, c))
        .expect("NHWC tensors are kept in standard layout")
}

fn as_rows_mut<T: Real>(x: &mut Array4<T>) -> ndarray::ArrayViewMut2<'_, T> {
    let (n, h, w, c) = x.dim();
    x.view_mut()
        .into_shape_with_order((n * h * w, c))
        .expect("NHWC tensors are kept in standard layout")
}

fn add_bias_rows<T: Real>(rows: &mut ndarray::ArrayViewMut2<'_, T>, b: ArrayView1<T>) {
    for mut row in rows.rows_mut() {
        row += &b;
    }
}

/// Lowers output rows `[r0, r1)` of batch item `n` into `cols`; out-of-range
/// taps contribute zeros (the buffer is pre-zeroed by the caller).
#[allow(clippy::too_many_arguments)]
fn im2col_strip<T: Real>(
    xs: &[T],
    cols: &mut [T],
    n: usize,
    (h, w, cin): (usize, usize, usize),
    wout: usize,
    cfg: Conv2dCfg,
    r0: usize,
    r1: usize,
) {
    let k = cfg.kernel;
    let taps = k * k;
    for r in r0..r1 {
        for col in 0..wout {
            let out_base = ((r - r0) * wout + col) * taps * cin;
            for ky in 0..k {
                let iy = (r * cfg.stride + ky) as isize - cfg.pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (col * cfg.stride + kx) as isize - cfg.pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let src = ((n * h + iy as usize) * w + ix as usize) * cin;
                    let dst = out_base + (ky * k + kx) * cin;
                    cols[dst..dst + cin].copy_from_slice(&xs[src..src + cin]);
                }
            }
        }
    }
}

/// Transpose of [`im2col_strip`]: scatter-adds column gradients back into
/// the input gradient.
#[allow(clippy::too_many_arguments)]
fn col2im_strip<T: Real>(
    dxs: &mut [T],
    dcols: &[T],
    n: usize,
    (h, w, cin): (usize, usize, usize),
    wout: usize,
    cfg: Conv2dCfg,
    r0: usize,
    r1: usize,
) {
    let k = cfg.kernel;
    let taps = k * k;
    for r in r0..r1 {
        for col in 0..wout {
            let out_base = ((r - r0) * wout + col) * taps * cin;
            for ky in 0..k {
                let iy = (r * cfg.stride + ky) as isize - cfg.pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (col * cfg.stride + kx) as isize - cfg.pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let dst = ((n * h + iy as usize) * w + ix as usize) * cin;
                    let src = out_base + (ky * k + kx) * cin;
                    for c in 0..cin {
                        dxs[dst + c] = dxs[dst + c] + dcols[src + c];
                    }
                }
            }
        }
    }
}

fn strip_rows(hout: usize, wout: usize, k: usize, cin: usize) -> usize {
    (STRIP_ELEMS / (wout * k * k * cin).max(1)).clamp(1, hout.max(1))
}

/// 2D convolution. `w` is `[k*k*C_in, C_out]` with row index
/// `(ky*k + kx)*C_in + ci`; `x` is NHWC.
pub fn conv2d<T: Real>(
    x: &Array4<T>,
    w: ArrayView2<T>,
    b: Option<ArrayView1<T>>,
    cfg: Conv2dCfg,
) -> Array4<T> {
    let (n, h, wd, cin) = x.dim();
    let k = cfg.kernel;
    let cout = w.ncols();
    assert_eq!(w.nrows(), k * k * cin, "weight rows must be k*k*C_in");
    let (hout, wout) = cfg.out_dim(h, wd);
    let mut out = Array4::zeros((n, hout, wout, cout));

    if k == 1 && cfg.stride == 1 && cfg.pad == 0 {
        let xr = as_rows(x);
        let mut or = as_rows_mut(&mut out);
        general_mat_mul(T::one(), &xr, &w, T::zero(), &mut or);
        if let Some(b) = b {
            add_bias_rows(&mut or, b);
        }
        return out;
    }

    let xs = x.as_slice().expect("standard layout");
    let max_rows = strip_rows(hout, wout, k, cin);
    let mut cols: Array2<T> = Array2::zeros((max_rows * wout, k * k * cin));
    for ni in 0..n {
        let mut r0 = 0;
        while r0 < hout {
            let r1 = (r0 + max_rows).min(hout);
            let rows = (r1 - r0) * wout;
            cols.fill(T::zero());
            im2col_strip(
                xs,
                cols.as_slice_mut().expect("owned buffer"),
                ni,
                (h, wd, cin),
                wout,
                cfg,
                r0,
                r1,
            );
            let cview = cols.slice(s![0..rows, ..]);
            let mut oview = out
                .slice_mut(s![ni, r0..r1, .., ..])
                .into_shape_with_order((rows, cout))
                .expect("contiguous output strip");
            general_mat_mul(T::one(), &cview, &w, T::zero(), &mut oview);
            if let Some(b) = b {
                add_bias_rows(&mut oview, b);
            }
            r0 = r1;
        }
    }
    out
}

/// Backward pass of [`conv2d`]. Returns `(dx, dw, db)`; `dx` is skipped when
/// `want_dx` is false (first layer of a network).
pub fn conv2d_backward<T: Real>(
    x: &Array4<T>,
    w: ArrayView2<T>,
    dy: &Array4<T>,
    cfg: Conv2dCfg,
    want_dx: bool,
) -> (Option<Array4<T>>, Array2<T>, Array1<T>) {
    let (n, h, wd, cin) = x.dim();
    let k = cfg.kernel;
    let cout = w.ncols();
    let (hout, wout) = cfg.out_dim(h, wd);
    assert_eq!(dy.dim(), (n, hout, wout, cout), "dy shape mismatch");

    let db = as_rows(dy).sum_axis(Axis(0));
    let mut dw: Array2<T> = Array2::zeros((k * k * cin, cout));

    if k == 1 && cfg.stride == 1 && cfg.pad == 0 {
        let xr = as_rows(x);
        let dyr = as_rows(dy);
        general_mat_mul(T::one(), &xr.t(), &dyr, T::zero(), &mut dw);
        let dx = want_dx.then(|| {
            let mut dx = Array4::zeros((n, h, wd, cin));
            let mut dxr = as_rows_mut(&mut dx);
            general_mat_mul(T::one(), &dyr, &w.t(), T::zero(), &mut dxr);
            dx
        });
        return (dx, dw, db);
    }

    let xs = x.as_slice().expect("standard layout");
    let max_rows = strip_rows(hout, wout, k, cin);
    let mut cols: Array2<T> = Array2::zeros((max_rows * wout, k * k * cin));
    let mut dcols: Array2<T> = Array2::zeros((max_rows * wout, k * k * cin));
    let mut dx = want_dx.then(|| Array4::zeros((n, h, wd, cin)));

    for ni in 0..n {
        let mut r0 = 0;
        while r0 < hout {
            let r1 = (r0 + max_rows).min(hout);
            let rows = (r1 - r0) * wout;
            cols.fill(T::zero());
            im2col_strip(
                xs,
                cols.as_slice_mut().expect("owned buffer"),
                ni,
                (h, wd, cin),
                wout,
                cfg,
                r0,
                r1,
            );
            let cview = cols.slice(s![0..rows, ..]);
            let dyview = dy
                .slice(s![ni, r0..r1, .., ..])
                .into_shape_with_order((rows, cout))
                .expect("contiguous dy strip");
            general_mat_mul(T::one(), &cview.t(), &dyview, T::one(), &mut dw);
            if let Some(dx) = dx.as_mut() {
                let mut dcview = dcols.slice_mut(s![0..rows, ..]);
                general_mat_mul(T::one(), &dyview, &w.t(), T::zero(), &mut dcview);
                col2im_strip(
                    dx.as_slice_mut().expect("owned buffer"),
                    dcols.as_slice().expect("owned buffer"),
                    ni,
                    (h, wd, cin),
                    wout,
                    cfg,
                    r0,
                    r1,
                );
            }
            r0 = r1;
        }
    }
    (dx, dw, db)
}

/// Depthwise 3x3 convolution, stride 1, zero pad 1. `w` is `[9, C]`
/// (tap-major), `b` is `[C]`.
pub fn dwconv3x3<T: Real>(x: &Array4<T>, w: ArrayView2<T>, b: ArrayView1<T>) -> Array4<T> {
    let (n, h, wd, c) = x.dim();
    assert_eq!(w.dim(), (9, c), "depthwise weight must be [9, C]");
    let xs = x.as_slice().expect("standard layout");
    let ws = w.as_standard_layout();
    let ws = ws.as_slice().expect("standard layout");
    let mut out = Array4::zeros((n, h, wd, c));
    let os = out.as_slice_mut().expect("owned buffer");
    for ni in 0..n {
        for y in 0..h {
            for xx in 0..wd {
                let dst = ((ni * h + y) * wd + xx) * c;
                os[dst..dst + c].copy_from_slice(&b.as_standard_layout().as_slice().unwrap()[..c]);
                for ky in 0..3usize {
                    let iy = y as isize + ky as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..3usize {
                        let ix = xx as isize + kx as isize - 1;
                        if ix < 0 || ix >= wd as isize {
                            continue;
                        }
                        let src = ((ni * h + iy as usize) * wd + ix as usize) * c;
                        let wbase = (ky * 3 + kx) * c;
                        for ci in 0..c {
                            os[dst + ci] = os[dst + ci] + ws[wbase + ci] * xs[src + ci];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Backward pass of [`dwconv3x3`]: `(dx, dw, db)`.
pub fn dwconv3x3_backward<T: Real>(
    x: &Array4<T>,
    w: ArrayView2<T>,
    dy: &Array4<T>,
) -> (Array4<T>, Array2<T>, Array1<T>) {
    let (n, h, wd, c) = x.dim();
    assert_eq!(dy.dim(), (n, h, wd, c), "dy shape mismatch");
    let xs = x.as_slice().expect("standard layout");
    let dys = dy.as_slice().expect("standard layout");
    let ws = w.as_standard_layout();
    let ws = ws.as_slice().expect("standard layout");

    let mut dx = Array4::zeros((n, h, wd, c));
    let mut dw: Array2<T> = Array2::zeros((9, c));
    let db = as_rows(dy).sum_axis(Axis(0));
    let dxs = dx.as_slice_mut().expect("owned buffer");
    let dws = dw.as_slice_mut().expect("owned buffer");

    for ni in 0..n {
        for y in 0..h {
            for xx in 0..wd {
                let out_idx = ((ni * h + y) * wd + xx) * c;
                for ky in 0..3usize {
                    let iy = y as isize + ky as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..3usize {
                        let ix = xx as isize + kx as isize - 1;
                        if ix < 0 || ix >= wd as isize {
                            continue;
                        }
                        let in_idx = ((ni * h + iy as usize) * wd + ix as usize) * c;
                        let wbase = (ky * 3 + kx) * c;
                        for ci in 0..c {
                            let g = dys[out_idx + ci];
                            dxs[in_idx + ci] = dxs[in_idx + ci] + ws[wbase + ci] * g;
                            dws[wbase + ci] = dws[wbase + ci] + xs[in_idx + ci] * g;
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// Per-pixel layer normalization over the channel axis with biased variance.
pub fn layernorm<T: Real>(
    x: &Array4<T>,
    gamma: ArrayView1<T>,
    beta: ArrayView1<T>,
    eps: f64,
) -> Array4<T> {
    let (n, h, w, c) = x.dim();
    assert_eq!(gamma.len(), c);
    let xs = x.as_slice().expect("standard layout");
    let mut out = Array4::zeros((n, h, w, c));
    let os = out.as_slice_mut().expect("owned buffer");
    let gs = gamma.as_standard_layout();
    let gs = gs.as_slice().unwrap();
    let bs = beta.as_standard_layout();
    let bs = bs.as_slice().unwrap();
    for px in 0..n * h * w {
        let base = px * c;
        let (mean, istd) = pixel_stats(&xs[base..base + c], eps);
        for ci in 0..c {
            let xhat = (xs[base + ci].as_f64() - mean) * istd;
            os[base + ci] = T::f(xhat * gs[ci].as_f64() + bs[ci].as_f64());
        }
    }
    out
}

fn pixel_stats<T: Real>(chan: &[T], eps: f64) -> (f64, f64) {
    let c = chan.len() as f64;
    let mut sum = 0.0;
    let mut sq = 0.0;
    for v in chan {
        let f = v.as_f64();
        sum += f;
        sq += f * f;
    }
    let mean = sum / c;
    let var = (sq / c - mean * mean).max(0.0);
    (mean, 1.0 / (var + eps).sqrt())
}

/// Backward pass of [`layernorm`]: `(dx, dgamma, dbeta)`. Stats are
/// recomputed from `x` rather than cached.
pub fn layernorm_backward<T: Real>(
    x: &Array4<T>,
    gamma: ArrayView1<T>,
    dy: &Array4<T>,
    eps: f64,
) -> (Array4<T>, Array1<T>, Array1<T>) {
    let (n, h, w, c) = x.dim();
    assert_eq!(dy.dim(), (n, h, w, c));
    let xs = x.as_slice().expect("standard layout");
    let dys = dy.as_slice().expect("standard layout");
    let gs = gamma.as_standard_layout();
    let gs = gs.as_slice().unwrap();

    let mut dx = Array4::zeros((n, h, w, c));
    let dxs = dx.as_slice_mut().expect("owned buffer");
    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    let mut xhat = vec![0.0f64; c];
    let mut dyh = vec![0.0f64; c];

    for px in 0..n * h * w {
        let base = px * c;
        let (mean, istd) = pixel_stats(&xs[base..base + c], eps);
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for ci in 0..c {
            let xh = (xs[base + ci].as_f64() - mean) * istd;
            let dyv = dys[base + ci].as_f64();
            let dh = dyv * gs[ci].as_f64();
            xhat[ci] = xh;
            dyh[ci] = dh;
            m1 += dh;
            m2 += dh * xh;
            dgamma[ci] += dyv * xh;
            dbeta[ci] += dyv;
        }
        m1 /= c as f64;
        m2 /= c as f64;
        for ci in 0..c {
            dxs[base + ci] = T::f(istd * (dyh[ci] - m1 - xhat[ci] * m2));
        }
    }
    (
        dx,
        Array1::from_iter(dgamma.into_iter().map(T::f)),
        Array1::from_iter(dbeta.into_iter().map(T::f)),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Act {
    /// tanh-form approximation `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    Gelu,
    Relu,
    /// alpha = 1.
    Elu,
    Sigmoid,
}

pub fn act_scalar<T: Real>(a: Act, x: T) -> T {
    match a {
        Act::Relu => {
            if x > T::zero() {
                x
            } else {
                T::zero()
            }
        }
        Act::Elu => {
            if x > T::zero() {
                x
            } else {
                x.exp() - T::one()
            }
        }
        Act::Sigmoid => T::one() / (T::one() + (-x).exp()),
        Act::Gelu => {
            let half = T::f(0.5);
            let c = T::f(0.797_884_560_802_865_4); // sqrt(2/pi)
            let beta = T::f(0.044715);
            let u = c * (x + beta * x * x * x);
            half * x * (T::one() + u.tanh())
        }
    }
}

/// Derivative of [`act_scalar`] at the pre-activation value `x`. For the
/// tanh-form gelu this is the exact derivative of the approximation itself.
pub fn act_deriv_scalar<T: Real>(a: Act, x: T) -> T {
    match a {
        Act::Relu => {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        Act::Elu => {
            if x > T::zero() {
                T::one()
            } else {
                x.exp()
            }
        }
        Act::Sigmoid => {
            let s = act_scalar(Act::Sigmoid, x);
            s * (T::one() - s)
        }
        Act::Gelu => {
            let half = T::f(0.5);
            let c = T::f(0.797_884_560_802_865_4);
            let beta = T::f(0.044715);
            let three = T::f(3.0);
            let u = c * (x + beta * x * x * x);
            let t = u.tanh();
            let sech2 = T::one() - t * t;
            half * (T::one() + t) + half * x * sech2 * c * (T::one() + three * beta * x * x)
        }
    }
}

pub fn act_forward<T: Real, D: Dimension>(a: Act, x: &Array<T, D>) -> Array<T, D> {
    x.mapv(|v| act_scalar(a, v))
}

/// `dx` from upstream `dy` and the cached pre-activation input `x`.
pub fn act_backward<T: Real, D: Dimension>(
    a: Act,
    x: &Array<T, D>,
    dy: &Array<T, D>,
) -> Array<T, D> {
    let mut dx = dy.clone();
    Zip::from(&mut dx)
        .and(x)
        .for_each(|d, &xv| *d = *d * act_deriv_scalar(a, xv));
    dx
}

/// Channel shuffle permutation for `groups` groups: destination channel
/// `b*g + a` reads source channel `a*(c/g) + b`.
pub fn shuffle_perm(c: usize, groups: usize) -> Vec<usize> {
    assert!(groups > 0 && c % groups == 0, "channels must split into groups");
    let cpg = c / groups;
    let mut perm = vec![0usize; c];
    for a in 0..groups {
        for b in 0..cpg {
            perm[b * groups + a] = a * cpg + b;
        }
    }
    perm
}

/// Applies the channel shuffle; its inverse is a shuffle with `c/groups`
/// groups, which is also the backward pass.
pub fn channel_shuffle<T: Real>(x: &Array4<T>, groups: usize) -> Array4<T> {
    let (n, h, w, c) = x.dim();
    let perm = shuffle_perm(c, groups);
    let xs = x.as_slice().expect("standard layout");
    let mut out = Array4::zeros((n, h, w, c));
    let os = out.as_slice_mut().expect("owned buffer");
    for px in 0..n * h * w {
        let base = px * c;
        for (j, &src) in perm.iter().enumerate() {
            os[base + j] = xs[base + src];
        }
    }
    out
}

pub fn channel_shuffle_inverse<T: Real>(y: &Array4<T>, groups: usize) -> Array4<T> {
    let c = y.dim().3;
    channel_shuffle(y, c / groups)
}

/// Mean over the spatial axes: `[N, H, W, C]` to `[N, C]`.
pub fn global_avg_pool<T: Real>(x: &Array4<T>) -> Array2<T> {
    let (n, h, w, c) = x.dim();
    let scale = T::f(1.0 / (h * w) as f64);
    let mut out = Array2::zeros((n, c));
    for ni in 0..n {
        let mut acc = out.row_mut(ni);
        for y in 0..h {
            for xx in 0..w {
                acc += &x.slice(s![ni, y, xx, ..]);
            }
        }
        acc *= scale;
    }
    out
}

/// Broadcast of the pooled gradient back over the spatial grid.
pub fn global_avg_pool_backward<T: Real>(
    dpool: &Array2<T>,
    h: usize,
    w: usize,
) -> Array4<T> {
    let (n, c) = dpool.dim();
    let scale = T::f(1.0 / (h * w) as f64);
    let mut dx = Array4::zeros((n, h, w, c));
    for ni in 0..n {
        let row = dpool.row(ni);
        for y in 0..h {
            for xx in 0..w {
                let mut px = dx.slice_mut(s![ni, y, xx, ..]);
                Zip::from(&mut px)
                    .and(&row)
                    .for_each(|d, &g| *d = g * scale);
            }
        }
    }
    dx
}

/// Fully connected layer on `[N, C_in]` rows; weight is `[C_in, C_out]`.
pub fn dense<T: Real>(
    x: &Array2<T>,
    w: ArrayView2<T>,
    b: Option<ArrayView1<T>>,
) -> Array2<T> {
    let mut out = Array2::zeros((x.nrows(), w.ncols()));
    general_mat_mul(T::one(), &x.view(), &w, T::zero(), &mut out.view_mut());
    if let Some(b) = b {
        for mut row in out.rows_mut() {
            row += &b;
        }
    }
    out
}

pub fn dense_backward<T: Real>(
    x: &Array2<T>,
    w: ArrayView2<T>,
    dy: &Array2<T>,
) -> (Array2<T>, Array2<T>, Array1<T>) {
    let mut dx = Array2::zeros(x.dim());
    let mut dw = Array2::zeros((w.nrows(), w.ncols()));
    general_mat_mul(T::one(), &dy.view(), &w.t(), T::zero(), &mut dx.view_mut());
    general_mat_mul(T::one(), &x.t(), &dy.view(), T::zero(), &mut dw.view_mut());
    let db = dy.sum_axis(Axis(0));
    (dx, dw, db)
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2x<T: Real>(x: &Array4<T>) -> Array4<T> {
    let (n, h, w, c) = x.dim();
    let mut out = Array4::zeros((n, 2 * h, 2 * w, c));
    let xs = x.as_slice().expect("standard layout");
    let os = out.as_slice_mut().expect("owned buffer");
    for ni in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let src = ((ni * h + y) * w + xx) * c;
                for dy in 0..2usize {
                    for dx in 0..2usize {
                        let dst = ((ni * 2 * h + 2 * y + dy) * 2 * w + 2 * xx + dx) * c;
                        os[dst..dst + c].copy_from_slice(&xs[src..src + c]);
                    }
                }
            }
        }
    }
    out
}

/// Backward of [`upsample2x`]: each source pixel sums its four copies.
pub fn upsample2x_backward<T: Real>(dy: &Array4<T>) -> Array4<T> {
    let (n, h2, w2, c) = dy.dim();
    assert!(h2 % 2 == 0 && w2 % 2 == 0, "upsampled dims must be even");
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Array4::zeros((n, h, w, c));
    let dys = dy.as_slice().expect("standard layout");
    let dxs = dx.as_slice_mut().expect("owned buffer");
    for ni in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let dst = ((ni * h + y) * w + xx) * c;
                for sy in 0..2usize {
                    for sx in 0..2usize {
                        let src = ((ni * h2 + 2 * y + sy) * w2 + 2 * xx + sx) * c;
                        for ci in 0..c {
                            dxs[dst + ci] = dxs[dst + ci] + dys[src + ci];
                        }
                    }
                }
            }
        }
    }
    dx
}
