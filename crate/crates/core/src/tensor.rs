//! Tensor conventions and shared spatial helpers.
//!
//! Feature maps are `Array4<T>` in NHWC layout; single images are `Array3<T>`
//! in HWC layout with values nominally in `[0, 1]`. Channel-contiguous storage
//! keeps the per-pixel channel math (normalization, shuffle, 1x1 convolutions)
//! on contiguous slices.

use ndarray::{Array3, Array4};

/// Floating-point element type of every tensor in the crate (`f32` or `f64`).
pub trait Real: ndarray::NdFloat + num_traits::FromPrimitive {
    fn f(v: f64) -> Self {
        Self::from_f64(v).expect("constant must be representable")
    }
    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// One of the eight axis-aligned symmetries of a square: `rot` quarter-turns
/// counter-clockwise applied after an optional horizontal flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dihedral {
    pub rot: u8,
    pub flip: bool,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral {
        rot: 0,
        flip: false,
    };

    pub const ALL: [Dihedral; 8] = [
        Dihedral { rot: 0, flip: false },
        Dihedral { rot: 1, flip: false },
        Dihedral { rot: 2, flip: false },
        Dihedral { rot: 3, flip: false },
        Dihedral { rot: 0, flip: true },
        Dihedral { rot: 1, flip: true },
        Dihedral { rot: 2, flip: true },
        Dihedral { rot: 3, flip: true },
    ];
}

/// Horizontal flip of an HWC image (mirror about the vertical axis).
pub fn flip_h<T: Real>(img: &Array3<T>) -> Array3<T> {
    let (h, w, c) = img.dim();
    Array3::from_shape_fn((h, w, c), |(y, x, ch)| img[(y, w - 1 - x, ch)])
}

/// Quarter-turn counter-clockwise of an HWC image: `out[y, x] = in[x, W-1-y]`
/// with output shape W x H.
pub fn rot90<T: Real>(img: &Array3<T>) -> Array3<T> {
    let (h, w, c) = img.dim();
    Array3::from_shape_fn((w, h, c), |(y, x, ch)| img[(x, w - 1 - y, ch)])
}

/// Applies `d` to an HWC image: flip first, then `d.rot` quarter-turns.
pub fn apply_dihedral<T: Real>(img: &Array3<T>, d: Dihedral) -> Array3<T> {
    let mut out = if d.flip { flip_h(img) } else { img.clone() };
    for _ in 0..(d.rot % 4) {
        out = rot90(&out);
    }
    out
}

/// Folds an arbitrary index into `[0, n)` by repeated mirroring without
/// repeating the border sample (period `2n - 2`). Well-defined for any pad
/// width, including pads larger than the image.
pub fn reflect_index(i: isize, n: usize) -> usize {
    debug_assert!(n > 0);
    if n == 1 {
        return 0;
    }
    let period = (2 * n - 2) as isize;
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

/// Pads an NHWC batch on the bottom/right with mirrored content so that both
/// spatial dims become multiples of `m`. Returns the padded batch and the
/// original (H, W) for cropping back.
pub fn pad_to_multiple<T: Real>(x: &Array4<T>, m: usize) -> (Array4<T>, (usize, usize)) {
    let (n, h, w, c) = x.dim();
    let hp = h.div_ceil(m) * m;
    let wp = w.div_ceil(m) * m;
    if hp == h && wp == w {
        return (x.clone(), (h, w));
    }
    let mut out = Array4::zeros((n, hp, wp, c));
    for b in 0..n {
        for y in 0..hp {
            let sy = reflect_index(y as isize, h);
            for xx in 0..wp {
                let sx = reflect_index(xx as isize, w);
                for ch in 0..c {
                    out[(b, y, xx, ch)] = x[(b, sy, sx, ch)];
                }
            }
        }
    }
    (out, (h, w))
}

/// Crops an NHWC batch back to `(h, w)` from the top-left corner.
pub fn crop<T: Real>(x: &Array4<T>, h: usize, w: usize) -> Array4<T> {
    let (n, _, _, c) = x.dim();
    let mut out = Array4::zeros((n, h, w, c));
    for b in 0..n {
        for y in 0..h {
            for xx in 0..w {
                for ch in 0..c {
                    out[(b, y, xx, ch)] = x[(b, y, xx, ch)];
                }
            }
        }
    }
    out
}

/// Non-overlapping box average pooling by integer factor `f` (NHWC). Spatial
/// dims must be divisible by `f`; `f == 1` is a copy.
pub fn avg_pool<T: Real>(x: &Array4<T>, f: usize) -> Array4<T> {
    assert!(f >= 1);
    let (n, h, w, c) = x.dim();
    if f == 1 {
        return x.clone();
    }
    assert!(h % f == 0 && w % f == 0, "avg_pool dims must divide by factor");
    let (ho, wo) = (h / f, w / f);
    let inv = T::f(1.0 / (f * f) as f64);
    let mut out = Array4::zeros((n, ho, wo, c));
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                for dy in 0..f {
                    for dx in 0..f {
                        let src = x.slice(ndarray::s![b, oy * f + dy, ox * f + dx, ..]);
                        let mut dst = out.slice_mut(ndarray::s![b, oy, ox, ..]);
                        dst += &src;
                    }
                }
                let mut dst = out.slice_mut(ndarray::s![b, oy, ox, ..]);
                dst *= inv;
            }
        }
    }
    out
}

/// Wraps a single HWC image as an NHWC batch of one.
pub fn image_to_batch<T: Real>(img: &Array3<T>) -> Array4<T> {
    let (h, w, c) = img.dim();
    img.clone()
        .into_shape_with_order((1, h, w, c))
        .expect("insert batch axis")
}

/// Extracts the single image from an NHWC batch of one.
pub fn batch_to_image<T: Real>(x: &Array4<T>) -> Array3<T> {
    let (n, h, w, c) = x.dim();
    assert_eq!(n, 1, "batch_to_image expects a batch of one");
    x.clone()
        .into_shape_with_order((h, w, c))
        .expect("drop batch axis")
}

/// Clamps every element into `[0, 1]`.
pub fn clamp01<T: Real>(x: &mut Array3<T>) {
    x.mapv_inplace(|v| v.max(T::zero()).min(T::one()));
}
