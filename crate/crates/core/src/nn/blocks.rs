//! Composite network blocks.
//!
//! Each block declares its tensors on a [`ParamBuilder`] (fixed order, named
//! by prefix), computes forward with an optional cache, and backpropagates
//! from that cache, accumulating parameter gradients into a mirror bundle.
//! Caches hold the smallest set of activations from which the rest can be
//! recomputed cheaply (permutations, activations and gating are replayed in
//! backward instead of being stored).

use ndarray::{s, Array, Array2, Array4, Dimension, Ix1, Ix2, Zip};

use super::ops::{
    act_backward, act_forward, channel_shuffle, channel_shuffle_inverse, conv2d, conv2d_backward,
    dense, dense_backward, dwconv3x3, dwconv3x3_backward, global_avg_pool,
    global_avg_pool_backward, layernorm, layernorm_backward, upsample2x, upsample2x_backward, Act,
    Conv2dCfg,
};
use super::param::{Init, ParamBuilder, ParamBundle, ParamRef};
use crate::tensor::Real;

/// Epsilon inside every layer norm.
pub const LN_EPS: f64 = 1e-6;

fn accum<T: Real, D: Dimension>(grads: &mut ParamBundle<T>, r: ParamRef, g: &Array<T, D>) {
    let slot = grads.slice_mut(r);
    let gs = g.as_slice().expect("gradients are standard layout");
    assert_eq!(slot.len(), gs.len(), "gradient size mismatch");
    for (a, b) in slot.iter_mut().zip(gs) {
        *a = *a + *b;
    }
}

/// `y[n,h,w,c] = x[n,h,w,c] * s[n,c]`.
fn scale_channels<T: Real>(x: &Array4<T>, sc: &Array2<T>) -> Array4<T> {
    let (n, h, w, c) = x.dim();
    let mut y = x.clone();
    let ys = y.as_slice_mut().expect("owned buffer");
    let ss = sc.as_slice().expect("standard layout");
    for ni in 0..n {
        for px in 0..h * w {
            let base = (ni * h * w + px) * c;
            for ci in 0..c {
                ys[base + ci] = ys[base + ci] * ss[ni * c + ci];
            }
        }
    }
    y
}

/// Backward of [`scale_channels`]: `(dx, ds)`.
fn scale_channels_backward<T: Real>(
    x: &Array4<T>,
    sc: &Array2<T>,
    dy: &Array4<T>,
) -> (Array4<T>, Array2<T>) {
    let (n, h, w, c) = x.dim();
    let mut dx = dy.clone();
    let mut ds = Array2::zeros((n, c));
    let dxs = dx.as_slice_mut().expect("owned buffer");
    let xs = x.as_slice().expect("standard layout");
    let dys = dy.as_slice().expect("standard layout");
    let ss = sc.as_slice().expect("standard layout");
    let dss = ds.as_slice_mut().expect("owned buffer");
    for ni in 0..n {
        for px in 0..h * w {
            let base = (ni * h * w + px) * c;
            for ci in 0..c {
                dss[ni * c + ci] = dss[ni * c + ci] + dys[base + ci] * xs[base + ci];
                dxs[base + ci] = dxs[base + ci] * ss[ni * c + ci];
            }
        }
    }
    (dx, ds)
}

fn concat_channels<T: Real>(a: &Array4<T>, b: &Array4<T>) -> Array4<T> {
    let (n, h, w, ca) = a.dim();
    let cb = b.dim().3;
    assert_eq!(b.dim().0, n);
    assert_eq!((b.dim().1, b.dim().2), (h, w));
    let mut out = Array4::zeros((n, h, w, ca + cb));
    out.slice_mut(s![.., .., .., 0..ca]).assign(a);
    out.slice_mut(s![.., .., .., ca..]).assign(b);
    out
}

fn split_channels<T: Real>(x: &Array4<T>, ca: usize) -> (Array4<T>, Array4<T>) {
    (
        x.slice(s![.., .., .., 0..ca]).to_owned(),
        x.slice(s![.., .., .., ca..]).to_owned(),
    )
}

/// Squeeze-and-excitation gate: global average pool, a two-layer bottleneck
/// and a sigmoid, multiplied back onto the input channels.
#[derive(Debug, Clone)]
pub struct SeGate {
    pub channels: usize,
    pub hidden: usize,
    w1: ParamRef,
    b1: ParamRef,
    w2: ParamRef,
    b2: ParamRef,
}

#[derive(Debug, Clone)]
pub struct SeCache<T> {
    pooled: Array2<T>,
    q_pre: Array2<T>,
    pub scale: Array2<T>,
}

impl SeGate {
    pub fn declare(pb: &mut ParamBuilder, prefix: &str, channels: usize, reduction: usize) -> Self {
        assert!(
            reduction > 0 && channels % reduction == 0,
            "gate reduction must divide the channel count"
        );
        let hidden = channels / reduction;
        SeGate {
            channels,
            hidden,
            w1: pb.tensor(
                format!("{prefix}se.w1"),
                &[channels, hidden],
                Init::FanIn(channels),
            ),
            b1: pb.tensor(format!("{prefix}se.b1"), &[hidden], Init::Zeros),
            w2: pb.tensor(
                format!("{prefix}se.w2"),
                &[hidden, channels],
                Init::FanIn(hidden),
            ),
            b2: pb.tensor(format!("{prefix}se.b2"), &[channels], Init::Zeros),
        }
    }

    pub fn forward<T: Real>(&self, p: &ParamBundle<T>, x: &Array4<T>) -> (Array4<T>, SeCache<T>) {
        let pooled = global_avg_pool(x);
        let q_pre = dense(
            &pooled,
            p.view_as::<Ix2>(self.w1),
            Some(p.view_as::<Ix1>(self.b1)),
        );
        let q = act_forward(Act::Relu, &q_pre);
        let z = dense(
            &q,
            p.view_as::<Ix2>(self.w2),
            Some(p.view_as::<Ix1>(self.b2)),
        );
        let scale = act_forward(Act::Sigmoid, &z);
        let y = scale_channels(x, &scale);
        (
            y,
            SeCache {
                pooled,
                q_pre,
                scale,
            },
        )
    }

    /// `x` must be the same tensor the forward pass gated.
    pub fn backward<T: Real>(
        &self,
        p: &ParamBundle<T>,
        x: &Array4<T>,
        cache: &SeCache<T>,
        dy: &Array4<T>,
        grads: &mut ParamBundle<T>,
    ) -> Array4<T> {
        let (h, w) = (x.dim().1, x.dim().2);
        let (dx_direct, ds) = scale_channels_backward(x, &cache.scale, dy);
        // sigmoid' from the cached output: s * (1 - s)
        let mut dz = ds;
        Zip::from(&mut dz)
            .and(&cache.scale)
            .for_each(|d, &sv| *d = *d * sv * (T::one() - sv));
        let q = act_forward(Act::Relu, &cache.q_pre);
        let (dq, dw2, db2) = dense_backward(&q, p.view_as::<Ix2>(self.w2), &dz);
        accum(grads, self.w2, &dw2);
        accum(grads, self.b2, &db2);
        let dq_pre = act_backward(Act::Relu, &cache.q_pre, &dq);
        let (dpooled, dw1, db1) = dense_backward(&cache.pooled, p.view_as::<Ix2>(self.w1), &dq_pre);
        accum(grads, self.w1, &dw1);
        accum(grads, self.b1, &db1);
        let dx_pool = global_avg_pool_backward(&dpooled, h, w);
        dx_direct + dx_pool
    }
}

/// Options for [`Cimb`]. `alpha` is the channel expansion factor of both
/// stages; `groups` the shuffle group count on the expanded channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CimbCfg {
    pub channels: usize,
    pub alpha: usize,
    pub groups: usize,
    pub se_reduction: usize,
    pub use_ln: bool,
    pub use_shuffle: bool,
    pub act: Act,
}

impl CimbCfg {
    pub fn new(channels: usize) -> Self {
        CimbCfg {
            channels,
            alpha: 2,
            groups: 8,
            se_reduction: 4,
            use_ln: true,
            use_shuffle: true,
            act: Act::Gelu,
        }
    }

    fn expanded(&self) -> usize {
        self.channels * self.alpha
    }
}

/// Two-stage inverted-bottleneck block. Stage one: norm, 1x1 expand,
/// depthwise 3x3, activation, channel shuffle, channel gate, 1x1 project,
/// residual add. Stage two: norm, 1x1 expand, activation, shuffle, 1x1
/// project, residual add.
#[derive(Debug, Clone)]
pub struct Cimb {
    pub cfg: CimbCfg,
    ln1: Option<(ParamRef, ParamRef)>,
    w1: ParamRef,
    b1: ParamRef,
    wd: ParamRef,
    bd: ParamRef,
    se: SeGate,
    w2: ParamRef,
    b2: ParamRef,
    ln2: Option<(ParamRef, ParamRef)>,
    w3: ParamRef,
    b3: ParamRef,
    w4: ParamRef,
    b4: ParamRef,
}

#[derive(Debug, Clone)]
pub struct CimbCache<T> {
    x: Array4<T>,
    t0: Array4<T>,
    t1: Array4<T>,
    t2: Array4<T>,
    se: SeCache<T>,
    y: Array4<T>,
    u0: Array4<T>,
    u1: Array4<T>,
}

impl Cimb {
    pub fn declare(pb: &mut ParamBuilder, prefix: &str, cfg: CimbCfg) -> Self {
        let (c, e) = (cfg.channels, cfg.expanded());
        assert!(
            !cfg.use_shuffle || e % cfg.groups == 0,
            "shuffle groups must divide the expanded channels"
        );
        let ln = |pb: &mut ParamBuilder, tag: &str| {
            (
                pb.tensor(format!("{prefix}{tag}.gamma"), &[c], Init::Ones),
                pb.tensor(format!("{prefix}{tag}.beta"), &[c], Init::Zeros),
            )
        };
        let ln1 = cfg.use_ln.then(|| ln(pb, "ln1"));
        let w1 = pb.tensor(format!("{prefix}expand1.w"), &[c, e], Init::FanIn(c));
        let b1 = pb.tensor(format!("{prefix}expand1.b"), &[e], Init::Zeros);
        let wd = pb.tensor(format!("{prefix}dw.w"), &[9, e], Init::FanIn(9));
        let bd = pb.tensor(format!("{prefix}dw.b"), &[e], Init::Zeros);
        let se = SeGate::declare(pb, prefix, e, cfg.se_reduction);
        let w2 = pb.tensor(format!("{prefix}project1.w"), &[e, c], Init::FanIn(e));
        let b2 = pb.tensor(format!("{prefix}project1.b"), &[c], Init::Zeros);
        let ln2 = cfg.use_ln.then(|| ln(pb, "ln2"));
        let w3 = pb.tensor(format!("{prefix}expand2.w"), &[c, e], Init::FanIn(c));
        let b3 = pb.tensor(format!("{prefix}expand2.b"), &[e], Init::Zeros);
        let w4 = pb.tensor(format!("{prefix}project2.w"), &[e, c], Init::FanIn(e));
        let b4 = pb.tensor(format!("{prefix}project2.b"), &[c], Init::Zeros);
        Cimb {
            cfg,
            ln1,
            w1,
            b1,
            wd,
            bd,
            se,
            w2,
            b2,
            ln2,
            w3,
            b3,
            w4,
            b4,
        }
    }

    fn maybe_norm<T: Real>(
        &self,
        p: &ParamBundle<T>,
        ln: Option<(ParamRef, ParamRef)>,
        x: &Array4<T>,
    ) -> Array4<T> {
        match ln {
            Some((g, b)) => layernorm(x, p.view_as::<Ix1>(g), p.view_as::<Ix1>(b), LN_EPS),
            None => x.clone(),
        }
    }

    fn maybe_shuffle<T: Real>(&self, x: Array4<T>) -> Array4<T> {
        if self.cfg.use_shuffle {
            channel_shuffle(&x, self.cfg.groups)
        } else {
            x
        }
    }

    fn maybe_shuffle_grad<T: Real>(&self, dy: Array4<T>) -> Array4<T> {
        if self.cfg.use_shuffle {
            channel_shuffle_inverse(&dy, self.cfg.groups)
        } else {
            dy
        }
    }

    pub fn forward<T: Real>(
        &self,
        p: &ParamBundle<T>,
        x: &Array4<T>,
        want_cache: bool,
    ) -> (Array4<T>, Option<CimbCache<T>>) {
        let act = self.cfg.act;
        let t0 = self.maybe_norm(p, self.ln1, x);
        let t1 = conv2d(
            &t0,
            p.view_as::<Ix2>(self.w1),
            Some(p.view_as::<Ix1>(self.b1)),
            Conv2dCfg::k1(),
        );
        let t2 = dwconv3x3(&t1, p.view_as::<Ix2>(self.wd), p.view_as::<Ix1>(self.bd));
        let t4 = self.maybe_shuffle(act_forward(act, &t2));
        let (t5, se_cache) = self.se.forward(p, &t4);
        let t6 = conv2d(
            &t5,
            p.view_as::<Ix2>(self.w2),
            Some(p.view_as::<Ix1>(self.b2)),
            Conv2dCfg::k1(),
        );
        let y = x + &t6;

        let u0 = self.maybe_norm(p, self.ln2, &y);
        let u1 = conv2d(
            &u0,
            p.view_as::<Ix2>(self.w3),
            Some(p.view_as::<Ix1>(self.b3)),
            Conv2dCfg::k1(),
        );
        let u3 = self.maybe_shuffle(act_forward(act, &u1));
        let u4 = conv2d(
            &u3,
            p.view_as::<Ix2>(self.w4),
            Some(p.view_as::<Ix1>(self.b4)),
            Conv2dCfg::k1(),
        );
        let out = &y + &u4;

        let cache = want_cache.then(|| CimbCache {
            x: x.clone(),
            t0,
            t1,
            t2,
            se: se_cache,
            y,
            u0,
            u1,
        });
        (out, cache)
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParamBundle<T>,
        cache: &CimbCache<T>,
        dy: &Array4<T>,
        grads: &mut ParamBundle<T>,
    ) -> Array4<T> {
        let act = self.cfg.act;
        // stage two, replaying the post-activation path from u1
        let u3 = self.maybe_shuffle(act_forward(act, &cache.u1));
        let (du3, dw4, db4) = conv2d_backward(
            &u3,
            p.view_as::<Ix2>(self.w4),
            dy,
            Conv2dCfg::k1(),
            true,
        );
        accum(grads, self.w4, &dw4);
        accum(grads, self.b4, &db4);
        let du1 = act_backward(act, &cache.u1, &self.maybe_shuffle_grad(du3.unwrap()));
        let (du0, dw3, db3) = conv2d_backward(
            &cache.u0,
            p.view_as::<Ix2>(self.w3),
            &du1,
            Conv2dCfg::k1(),
            true,
        );
        accum(grads, self.w3, &dw3);
        accum(grads, self.b3, &db3);
        let through_norm2 = match self.ln2 {
            Some((g, _)) => {
                let (dxn, dgamma, dbeta) =
                    layernorm_backward(&cache.y, p.view_as::<Ix1>(g), &du0.unwrap(), LN_EPS);
                accum(grads, g, &dgamma);
                accum(grads, self.ln2.unwrap().1, &dbeta);
                dxn
            }
            None => du0.unwrap(),
        };
        let dy_y = dy + &through_norm2;

        // stage one, replaying activation, shuffle and gate from t2
        let t4 = self.maybe_shuffle(act_forward(act, &cache.t2));
        let t5 = scale_channels(&t4, &cache.se.scale);
        let (dt5, dw2, db2) = conv2d_backward(
            &t5,
            p.view_as::<Ix2>(self.w2),
            &dy_y,
            Conv2dCfg::k1(),
            true,
        );
        accum(grads, self.w2, &dw2);
        accum(grads, self.b2, &db2);
        let dt4 = self.se.backward(p, &t4, &cache.se, &dt5.unwrap(), grads);
        let dt2 = act_backward(act, &cache.t2, &self.maybe_shuffle_grad(dt4));
        let (dt1, dwd, dbd) = dwconv3x3_backward(&cache.t1, p.view_as::<Ix2>(self.wd), &dt2);
        accum(grads, self.wd, &dwd);
        accum(grads, self.bd, &dbd);
        let (dt0, dw1, db1) = conv2d_backward(
            &cache.t0,
            p.view_as::<Ix2>(self.w1),
            &dt1,
            Conv2dCfg::k1(),
            true,
        );
        accum(grads, self.w1, &dw1);
        accum(grads, self.b1, &db1);
        let through_norm1 = match self.ln1 {
            Some((g, _)) => {
                let (dxn, dgamma, dbeta) =
                    layernorm_backward(&cache.x, p.view_as::<Ix1>(g), &dt0.unwrap(), LN_EPS);
                accum(grads, g, &dgamma);
                accum(grads, self.ln1.unwrap().1, &dbeta);
                dxn
            }
            None => dt0.unwrap(),
        };
        dy_y + &through_norm1
    }
}

/// Options for [`Eam`]. `from_fin` reroutes the attention branch to read the
/// block features instead of the pooled input image; `act` swaps the branch
/// activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EamCfg {
    pub channels: usize,
    pub from_fin: bool,
    pub act: Act,
}

impl EamCfg {
    pub fn new(channels: usize) -> Self {
        EamCfg {
            channels,
            from_fin: false,
            act: Act::Elu,
        }
    }
}

/// Attention over block features driven by the (pooled) input image: a 1x1
/// branch produces a mask that multiplies the features, the masked features
/// are fused with the image by concat and a 3x3 convolution.
#[derive(Debug, Clone)]
pub struct Eam {
    pub cfg: EamCfg,
    wa: ParamRef,
    ba: ParamRef,
    wm: ParamRef,
    bm: ParamRef,
    wf: ParamRef,
    bf: ParamRef,
}

#[derive(Debug, Clone)]
pub struct EamCache<T> {
    f_in: Array4<T>,
    i_down: Array4<T>,
    a1: Array4<T>,
    a2: Array4<T>,
    mask: Array4<T>,
}

impl Eam {
    pub fn declare(pb: &mut ParamBuilder, prefix: &str, cfg: EamCfg) -> Self {
        let c = cfg.channels;
        let cin_a = if cfg.from_fin { c } else { 3 };
        Eam {
            cfg,
            wa: pb.tensor(format!("{prefix}attn1.w"), &[cin_a, c], Init::FanIn(cin_a)),
            ba: pb.tensor(format!("{prefix}attn1.b"), &[c], Init::Zeros),
            wm: pb.tensor(format!("{prefix}attn2.w"), &[c, c], Init::FanIn(c)),
            bm: pb.tensor(format!("{prefix}attn2.b"), &[c], Init::Zeros),
            wf: pb.tensor(
                format!("{prefix}fuse.w"),
                &[9 * (c + 3), c],
                Init::FanIn(9 * (c + 3)),
            ),
            bf: pb.tensor(format!("{prefix}fuse.b"), &[c], Init::Zeros),
        }
    }

    pub fn forward<T: Real>(
        &self,
        p: &ParamBundle<T>,
        f_in: &Array4<T>,
        i_down: &Array4<T>,
        want_cache: bool,
    ) -> (Array4<T>, Option<EamCache<T>>) {
        let attn_src = if self.cfg.from_fin { f_in } else { i_down };
        let a1 = conv2d(
            attn_src,
            p.view_as::<Ix2>(self.wa),
            Some(p.view_as::<Ix1>(self.ba)),
            Conv2dCfg::k1(),
        );
        let a2 = act_forward(self.cfg.act, &a1);
        let mask = conv2d(
            &a2,
            p.view_as::<Ix2>(self.wm),
            Some(p.view_as::<Ix1>(self.bm)),
            Conv2dCfg::k1(),
        );
        let f_att = f_in * &mask;
        let fusion = concat_channels(i_down, &f_att);
        let out = conv2d(
            &fusion,
            p.view_as::<Ix2>(self.wf),
            Some(p.view_as::<Ix1>(self.bf)),
            Conv2dCfg::k3(),
        );
        let cache = want_cache.then(|| EamCache {
            f_in: f_in.clone(),
            i_down: i_down.clone(),
            a1,
            a2,
            mask,
        });
        (out, cache)
    }

    /// Returns the gradient with respect to `f_in`; the pooled input image is
    /// a constant, so its gradient is dropped (unless the attention branch
    /// reads `f_in`, in which case that path contributes too).
    pub fn backward<T: Real>(
        &self,
        p: &ParamBundle<T>,
        cache: &EamCache<T>,
        dy: &Array4<T>,
        grads: &mut ParamBundle<T>,
    ) -> Array4<T> {
        let f_att = &cache.f_in * &cache.mask;
        let fusion = concat_channels(&cache.i_down, &f_att);
        let (dfusion, dwf, dbf) = conv2d_backward(
            &fusion,
            p.view_as::<Ix2>(self.wf),
            dy,
            Conv2dCfg::k3(),
            true,
        );
        accum(grads, self.wf, &dwf);
        accum(grads, self.bf, &dbf);
        let (_d_idown, df_att) = split_channels(&dfusion.unwrap(), 3);
        let dmask = &df_att * &cache.f_in;
        let mut df_in = &df_att * &cache.mask;
        let (da2, dwm, dbm) = conv2d_backward(
            &cache.a2,
            p.view_as::<Ix2>(self.wm),
            &dmask,
            Conv2dCfg::k1(),
            true,
        );
        accum(grads, self.wm, &dwm);
        accum(grads, self.bm, &dbm);
        let da1 = act_backward(self.cfg.act, &cache.a1, &da2.unwrap());
        let attn_src = if self.cfg.from_fin {
            &cache.f_in
        } else {
            &cache.i_down
        };
        let (dsrc, dwa, dba) = conv2d_backward(
            attn_src,
            p.view_as::<Ix2>(self.wa),
            &da1,
            Conv2dCfg::k1(),
            self.cfg.from_fin,
        );
        accum(grads, self.wa, &dwa);
        accum(grads, self.ba, &dba);
        if let Some(dsrc) = dsrc {
            df_in += &dsrc;
        }
        df_in
    }
}

/// Residual block used in the decoder: two 3x3 convolutions with a ReLU
/// between them and a channel gate before the residual add.
#[derive(Debug, Clone)]
pub struct SeResBlock {
    pub channels: usize,
    w1: ParamRef,
    b1: ParamRef,
    w2: ParamRef,
    b2: ParamRef,
    se: SeGate,
}

#[derive(Debug, Clone)]
pub struct SeResCache<T> {
    x: Array4<T>,
    v1: Array4<T>,
    v3: Array4<T>,
    se: SeCache<T>,
}

impl SeResBlock {
    pub fn declare(
        pb: &mut ParamBuilder,
        prefix: &str,
        channels: usize,
        se_reduction: usize,
    ) -> Self {
        let c = channels;
        SeResBlock {
            channels,
            w1: pb.tensor(format!("{prefix}conv1.w"), &[9 * c, c], Init::FanIn(9 * c)),
            b1: pb.tensor(format!("{prefix}conv1.b"), &[c], Init::Zeros),
            w2: pb.tensor(format!("{prefix}conv2.w"), &[9 * c, c], Init::FanIn(9 * c)),
            b2: pb.tensor(format!("{prefix}conv2.b"), &[c], Init::Zeros),
            se: SeGate::declare(pb, prefix, c, se_reduction),
        }
    }

    pub fn forward<T: Real>(
        &self,
        p: &ParamBundle<T>,
        x: &Array4<T>,
        want_cache: bool,
    ) -> (Array4<T>, Option<SeResCache<T>>) {
        let v1 = conv2d(
            x,
            p.view_as::<Ix2>(self.w1),
            Some(p.view_as::<Ix1>(self.b1)),
            Conv2dCfg::k3(),
        );
        let v2 = act_forward(Act::Relu, &v1);
        let v3 = conv2d(
            &v2,
            p.view_as::<Ix2>(self.w2),
            Some(p.view_as::<Ix1>(self.b2)),
            Conv2dCfg::k3(),
        );
        let (v4, se_cache) = self.se.forward(p, &v3);
        let out = x + &v4;
        let cache = want_cache.then(|| SeResCache {
            x: x.clone(),
            v1,
            v3,
            se: se_cache,
        });
        (out, cache)
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParamBundle<T>,
        cache: &SeResCache<T>,
        dy: &Array4<T>,
        grads: &mut ParamBundle<T>,
    ) -> Array4<T> {
        let dv3 = self.se.backward(p, &cache.v3, &cache.se, dy, grads);
        let v2 = act_forward(Act::Relu, &cache.v1);
        let (dv2, dw2, db2) = conv2d_backward(
            &v2,
            p.view_as::<Ix2>(self.w2),
            &dv3,
            Conv2dCfg::k3(),
            true,
        );
        accum(grads, self.w2, &dw2);
        accum(grads, self.b2, &db2);
        let dv1 = act_backward(Act::Relu, &cache.v1, &dv2.unwrap());
        let (dx1, dw1, db1) = conv2d_backward(
            &cache.x,
            p.view_as::<Ix2>(self.w1),
            &dv1,
            Conv2dCfg::k3(),
            true,
        );
        accum(grads, self.w1, &dw1);
        accum(grads, self.b1, &db1);
        dy + &dx1.unwrap()
    }
}

/// Strided 3x3 convolution halving the grid and doubling the channels.
#[derive(Debug, Clone)]
pub struct DownSample {
    pub channels_in: usize,
    w: ParamRef,
    b: ParamRef,
}

impl DownSample {
    pub fn declare(pb: &mut ParamBuilder, prefix: &str, channels_in: usize) -> Self {
        let c = channels_in;
        DownSample {
            channels_in,
            w: pb.tensor(format!("{prefix}w"), &[9 * c, 2 * c], Init::FanIn(9 * c)),
            b: pb.tensor(format!("{prefix}b"), &[2 * c], Init::Zeros),
        }
    }

    pub fn forward<T: Real>(
        &self,
        p: &ParamBundle<T>,
        x: &Array4<T>,
        want_cache: bool,
    ) -> (Array4<T>, Option<Array4<T>>) {
        let y = conv2d(
            x,
            p.view_as::<Ix2>(self.w),
            Some(p.view_as::<Ix1>(self.b)),
            Conv2dCfg::k3s2(),
        );
        (y, want_cache.then(|| x.clone()))
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParamBundle<T>,
        cache: &Array4<T>,
        dy: &Array4<T>,
        grads: &mut ParamBundle<T>,
    ) -> Array4<T> {
        let (dx, dw, db) = conv2d_backward(
            cache,
            p.view_as::<Ix2>(self.w),
            dy,
            Conv2dCfg::k3s2(),
            true,
        );
        accum(grads, self.w, &dw);
        accum(grads, self.b, &db);
        dx.unwrap()
    }
}

/// Nearest-neighbor 2x upsampling followed by a 3x3 convolution halving the
/// channels.
#[derive(Debug, Clone)]
pub struct UpSample {
    pub channels_in: usize,
    w: ParamRef,
    b: ParamRef,
}

impl UpSample {
    pub fn declare(pb: &mut ParamBuilder, prefix: &str, channels_in: usize) -> Self {
        let c = channels_in;
        assert!(c % 2 == 0, "upsampler halves the channel count");
        UpSample {
            channels_in,
            w: pb.tensor(format!("{prefix}w"), &[9 * c, c / 2], Init::FanIn(9 * c)),
            b: pb.tensor(format!("{prefix}b"), &[c / 2], Init::Zeros),
        }
    }

    pub fn forward<T: Real>(
        &self,
        p: &ParamBundle<T>,
        x: &Array4<T>,
        want_cache: bool,
    ) -> (Array4<T>, Option<Array4<T>>) {
        let up = upsample2x(x);
        let y = conv2d(
            &up,
            p.view_as::<Ix2>(self.w),
            Some(p.view_as::<Ix1>(self.b)),
            Conv2dCfg::k3(),
        );
        (y, want_cache.then(|| x.clone()))
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParamBundle<T>,
        cache: &Array4<T>,
        dy: &Array4<T>,
        grads: &mut ParamBundle<T>,
    ) -> Array4<T> {
        let up = upsample2x(cache);
        let (dup, dw, db) = conv2d_backward(
            &up,
            p.view_as::<Ix2>(self.w),
            dy,
            Conv2dCfg::k3(),
            true,
        );
        accum(grads, self.w, &dw);
        accum(grads, self.b, &db);
        upsample2x_backward(&dup.unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{fd_grad, max_rel_err};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn randn4(rng: &mut ChaCha12Rng, dim: (usize, usize, usize, usize)) -> Array4<f64> {
        Array4::from_shape_fn(dim, |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    /// Swaps the flat data of a bundle, keeping the layout.
    fn with_data(template: &ParamBundle<f64>, flat: &[f64]) -> ParamBundle<f64> {
        ParamBundle {
            data: flat.to_vec(),
            metas: template.metas.clone(),
        }
    }

    #[test]
    fn cimb_param_count_matches_closed_form() {
        for c in [8usize, 16, 64, 512] {
            let mut pb = ParamBuilder::new();
            Cimb::declare(&mut pb, "b.", CimbCfg::new(c));
            let p: ParamBundle<f32> = pb.build(0);
            // 10c^2 + 32.5c, exactly integral for even c
            let want = 10 * c * c + (65 * c) / 2;
            assert_eq!(p.len(), want, "channels {c}");
        }
        let mut pb = ParamBuilder::new();
        Cimb::declare(&mut pb, "b.", CimbCfg::new(512));
        let p: ParamBundle<f32> = pb.build(0);
        assert_eq!(p.len(), 2_638_080);
    }

    #[test]
    fn eam_and_seres_param_counts_match_closed_form() {
        for c in [8usize, 16, 64] {
            let mut pb = ParamBuilder::new();
            Eam::declare(&mut pb, "e.", EamCfg::new(c));
            let p: ParamBundle<f32> = pb.build(0);
            assert_eq!(p.len(), 10 * c * c + 33 * c, "eam channels {c}");
        }
        for c in [8usize, 16, 64] {
            let mut pb = ParamBuilder::new();
            SeResBlock::declare(&mut pb, "d.", c, 4);
            let p: ParamBundle<f32> = pb.build(0);
            // 18.5c^2 + 3.25c
            let want = (74 * c * c + 13 * c) / 4;
            assert_eq!(p.len(), want, "se-res channels {c}");
        }
        let mut pb = ParamBuilder::new();
        SeResBlock::declare(&mut pb, "d.", 64, 4);
        let p: ParamBundle<f32> = pb.build(0);
        assert_eq!(p.len(), 75_984);

        for c in [16usize, 64] {
            let mut pb = ParamBuilder::new();
            DownSample::declare(&mut pb, "down.", c);
            let p: ParamBundle<f32> = pb.build(0);
            assert_eq!(p.len(), 18 * c * c + 2 * c, "down channels {c}");

            let mut pb = ParamBuilder::new();
            UpSample::declare(&mut pb, "up.", c);
            let p: ParamBundle<f32> = pb.build(0);
            // 4.5c^2 + 0.5c
            assert_eq!(p.len(), (9 * c * c + c) / 2, "up channels {c}");
        }
    }

    #[test]
    fn cimb_with_zero_projections_is_identity() {
        let mut pb = ParamBuilder::new();
        let block = Cimb::declare(&mut pb, "b.", CimbCfg::new(8));
        let mut p: ParamBundle<f64> = pb.build(3);
        for name in ["b.project1.w", "b.project1.b", "b.project2.w", "b.project2.b"] {
            let r = p.find(name).unwrap();
            p.slice_mut(r).fill(0.0);
        }
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let x = randn4(&mut rng, (2, 4, 4, 8));
        let (y, _) = block.forward(&p, &x, false);
        assert_eq!(x, y, "both residual branches vanish");
    }

    #[test]
    fn cimb_gradients_match_finite_differences() {
        let mut pb = ParamBuilder::new();
        let block = Cimb::declare(&mut pb, "b.", CimbCfg::new(8));
        let p: ParamBundle<f64> = pb.build(5);
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let x = randn4(&mut rng, (1, 4, 4, 8));
        let proj = randn4(&mut rng, x.dim());

        let loss = |flat: &[f64]| {
            let pv = with_data(&p, flat);
            let (y, _) = block.forward(&pv, &x, false);
            (&y * &proj).sum()
        };

        let mut grads = p.zeros_like();
        let (_, cache) = block.forward(&p, &x, true);
        let dx = block.backward(&p, &cache.unwrap(), &proj, &mut grads);

        let fd = fd_grad(loss, &p.data, 1e-6);
        assert!(
            max_rel_err(&grads.data, &fd) < 1e-6,
            "parameter gradients: {}",
            max_rel_err(&grads.data, &fd)
        );

        let loss_x = |flat: &[f64]| {
            let xv = Array4::from_shape_vec(x.dim(), flat.to_vec()).unwrap();
            let (y, _) = block.forward(&p, &xv, false);
            (&y * &proj).sum()
        };
        let fd_x = fd_grad(loss_x, x.as_slice().unwrap(), 1e-6);
        assert!(
            max_rel_err(dx.as_slice().unwrap(), &fd_x) < 1e-6,
            "input gradients"
        );
    }

    #[test]
    fn cimb_ablations_change_structure() {
        // without norm: fewer parameters, no norm tensors declared
        let mut pb = ParamBuilder::new();
        Cimb::declare(
            &mut pb,
            "b.",
            CimbCfg {
                use_ln: false,
                ..CimbCfg::new(8)
            },
        );
        let p: ParamBundle<f64> = pb.build(0);
        assert!(p.metas.iter().all(|m| !m.name.contains("ln")));
        assert_eq!(p.len(), 10 * 8 * 8 + 65 * 8 / 2 - 4 * 8);

        // gradcheck still passes with the ablation flags flipped
        let mut pb = ParamBuilder::new();
        let block = Cimb::declare(
            &mut pb,
            "b.",
            CimbCfg {
                use_ln: false,
                use_shuffle: false,
                act: Act::Relu,
                ..CimbCfg::new(8)
            },
        );
        let p: ParamBundle<f64> = pb.build(1);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let x = randn4(&mut rng, (1, 3, 3, 8));
        let proj = randn4(&mut rng, x.dim());
        let mut grads = p.zeros_like();
        let (_, cache) = block.forward(&p, &x, true);
        block.backward(&p, &cache.unwrap(), &proj, &mut grads);
        let fd = fd_grad(
            |flat| {
                let pv = with_data(&p, flat);
                (&block.forward(&pv, &x, false).0 * &proj).sum()
            },
            &p.data,
            1e-6,
        );
        assert!(max_rel_err(&grads.data, &fd) < 1e-6);
    }

    #[test]
    fn shuffle_flag_changes_the_output() {
        let mk = |use_shuffle: bool| {
            let mut pb = ParamBuilder::new();
            let block = Cimb::declare(
                &mut pb,
                "b.",
                CimbCfg {
                    use_shuffle,
                    ..CimbCfg::new(8)
                },
            );
            (block, pb.build::<f64>(11))
        };
        let (with, p_with) = mk(true);
        let (without, p_without) = mk(false);
        assert_eq!(p_with.len(), p_without.len(), "shuffle is parameter free");
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let x = randn4(&mut rng, (1, 4, 4, 8));
        let (ya, _) = with.forward(&p_with, &x, false);
        let (yb, _) = without.forward(&p_without, &x, false);
        assert!(ya.iter().zip(yb.iter()).any(|(a, b)| (a - b).abs() > 1e-9));
    }

    #[test]
    fn eam_gradients_match_finite_differences() {
        for (from_fin, act) in [(false, Act::Elu), (true, Act::Elu), (false, Act::Relu)] {
            let mut pb = ParamBuilder::new();
            let block = Eam::declare(
                &mut pb,
                "e.",
                EamCfg {
                    channels: 8,
                    from_fin,
                    act,
                },
            );
            let p: ParamBundle<f64> = pb.build(9);
            let mut rng = ChaCha12Rng::seed_from_u64(10);
            let f_in = randn4(&mut rng, (1, 4, 4, 8));
            let i_down = randn4(&mut rng, (1, 4, 4, 3));
            let proj = randn4(&mut rng, (1, 4, 4, 8));

            let mut grads = p.zeros_like();
            let (_, cache) = block.forward(&p, &f_in, &i_down, true);
            let df_in = block.backward(&p, &cache.unwrap(), &proj, &mut grads);

            let fd = fd_grad(
                |flat| {
                    let pv = with_data(&p, flat);
                    (&block.forward(&pv, &f_in, &i_down, false).0 * &proj).sum()
                },
                &p.data,
                1e-6,
            );
            assert!(
                max_rel_err(&grads.data, &fd) < 1e-6,
                "from_fin={from_fin} params"
            );

            let fd_f = fd_grad(
                |flat| {
                    let fv = Array4::from_shape_vec(f_in.dim(), flat.to_vec()).unwrap();
                    (&block.forward(&p, &fv, &i_down, false).0 * &proj).sum()
                },
                f_in.as_slice().unwrap(),
                1e-6,
            );
            assert!(
                max_rel_err(df_in.as_slice().unwrap(), &fd_f) < 1e-6,
                "from_fin={from_fin} features"
            );
        }
    }

    #[test]
    fn seres_and_samplers_gradients_match_finite_differences() {
        let mut pb = ParamBuilder::new();
        let seres = SeResBlock::declare(&mut pb, "d.", 8, 4);
        let p: ParamBundle<f64> = pb.build(12);
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let x = randn4(&mut rng, (1, 4, 4, 8));
        let proj = randn4(&mut rng, x.dim());
        let mut grads = p.zeros_like();
        let (_, cache) = seres.forward(&p, &x, true);
        let dx = seres.backward(&p, &cache.unwrap(), &proj, &mut grads);
        let fd = fd_grad(
            |flat| (&seres.forward(&with_data(&p, flat), &x, false).0 * &proj).sum(),
            &p.data,
            1e-6,
        );
        assert!(max_rel_err(&grads.data, &fd) < 1e-6);
        let fd_x = fd_grad(
            |flat| {
                let xv = Array4::from_shape_vec(x.dim(), flat.to_vec()).unwrap();
                (&seres.forward(&p, &xv, false).0 * &proj).sum()
            },
            x.as_slice().unwrap(),
            1e-6,
        );
        assert!(max_rel_err(dx.as_slice().unwrap(), &fd_x) < 1e-6);

        let mut pb = ParamBuilder::new();
        let down = DownSample::declare(&mut pb, "down.", 4);
        let p: ParamBundle<f64> = pb.build(14);
        let x = randn4(&mut rng, (1, 6, 6, 4));
        let proj = randn4(&mut rng, (1, 3, 3, 8));
        let mut grads = p.zeros_like();
        let (y, cache) = down.forward(&p, &x, true);
        assert_eq!(y.dim(), (1, 3, 3, 8));
        down.backward(&p, &cache.unwrap(), &proj, &mut grads);
        let fd = fd_grad(
            |flat| (&down.forward(&with_data(&p, flat), &x, false).0 * &proj).sum(),
            &p.data,
            1e-6,
        );
        assert!(max_rel_err(&grads.data, &fd) < 1e-6);

        let mut pb = ParamBuilder::new();
        let up = UpSample::declare(&mut pb, "up.", 8);
        let p: ParamBundle<f64> = pb.build(15);
        let x = randn4(&mut rng, (1, 3, 3, 8));
        let proj = randn4(&mut rng, (1, 6, 6, 4));
        let mut grads = p.zeros_like();
        let (y, cache) = up.forward(&p, &x, true);
        assert_eq!(y.dim(), (1, 6, 6, 4));
        let dx = up.backward(&p, &cache.unwrap(), &proj, &mut grads);
        let fd = fd_grad(
            |flat| (&up.forward(&with_data(&p, flat), &x, false).0 * &proj).sum(),
            &p.data,
            1e-6,
        );
        assert!(max_rel_err(&grads.data, &fd) < 1e-6);
        let fd_x = fd_grad(
            |flat| {
                let xv = Array4::from_shape_vec(x.dim(), flat.to_vec()).unwrap();
                (&up.forward(&p, &xv, false).0 * &proj).sum()
            },
            x.as_slice().unwrap(),
            1e-6,
        );
        assert!(max_rel_err(dx.as_slice().unwrap(), &fd_x) < 1e-6);
    }

    #[test]
    fn eam_from_fin_changes_first_conv_shape() {
        let mut pb = ParamBuilder::new();
        Eam::declare(
            &mut pb,
            "e.",
            EamCfg {
                channels: 8,
                from_fin: true,
                act: Act::Elu,
            },
        );
        let p: ParamBundle<f64> = pb.build(0);
        let r = p.find("e.attn1.w").unwrap();
        assert_eq!(p.meta(r).shape, vec![8, 8]);
        // count grows by (c - 3) * c over the standard wiring
        assert_eq!(p.len(), 10 * 8 * 8 + 33 * 8 + (8 - 3) * 8);
    }
}
