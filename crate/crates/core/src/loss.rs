//! Training loss and image quality metrics.
//!
//! The loss is a Charbonnier penalty, a smooth absolute error
//! `sqrt(d^2 + eps^2)`. Two reductions are supported: the mean of the
//! per-element penalty (default), and the mean over the batch of the
//! penalty applied to each image's whole-difference norm. Metric math runs
//! in f64 regardless of the tensor element type.

use ndarray::{Array2, Array3, Array4, Zip};

use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    /// Mean over every element of `sqrt(d^2 + eps^2)`.
    PerPixelMean,
    /// Mean over the batch of `sqrt(|d_i|^2 + eps^2)` per image.
    PerImageNorm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub epsilon: f64,
    pub mode: LossMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            epsilon: 1e-3,
            mode: LossMode::PerPixelMean,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config("loss epsilon must be positive".into()));
        }
        Ok(())
    }
}

fn check_same_shape<T: Real>(pred: &Array4<T>, target: &Array4<T>) -> Result<()> {
    if pred.dim() != target.dim() {
        return Err(Error::Dimension(format!(
            "prediction {:?} and target {:?} differ",
            pred.dim(),
            target.dim()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Dimension("empty tensors have no loss".into()));
    }
    Ok(())
}

/// Charbonnier loss of a batch, in f64.
pub fn charbonnier<T: Real>(pred: &Array4<T>, target: &Array4<T>, cfg: &LossConfig) -> Result<f64> {
    Ok(charbonnier_with_grad(pred, target, cfg)?.0)
}

/// Loss and its gradient with respect to `pred`.
pub fn charbonnier_with_grad<T: Real>(
    pred: &Array4<T>,
    target: &Array4<T>,
    cfg: &LossConfig,
) -> Result<(f64, Array4<T>)> {
    cfg.validate()?;
    check_same_shape(pred, target)?;
    let eps2 = cfg.epsilon * cfg.epsilon;
    let count = pred.len() as f64;

    match cfg.mode {
        LossMode::PerPixelMean => {
            let rho = Zip::from(pred).and(target).map_collect(|&p, &t| {
                let d = p.as_f64() - t.as_f64();
                (d * d + eps2).sqrt()
            });
            let loss = rho.sum() / count;
            let grad = Zip::from(pred)
                .and(target)
                .and(&rho)
                .map_collect(|&p, &t, &r| T::f((p.as_f64() - t.as_f64()) / (count * r)));
            Ok((loss, grad))
        }
        LossMode::PerImageNorm => {
            let batch = pred.dim().0 as f64;
            let mut loss = 0.0;
            let mut grad = Array4::zeros(pred.dim());
            for n in 0..pred.dim().0 {
                let pn = pred.index_axis(ndarray::Axis(0), n);
                let tn = target.index_axis(ndarray::Axis(0), n);
                let sq = Zip::from(&pn).and(&tn).map_collect(|&p, &t| {
                    let d = p.as_f64() - t.as_f64();
                    d * d
                });
                let r = (sq.sum() + eps2).sqrt();
                loss += r;
                let mut gn = grad.index_axis_mut(ndarray::Axis(0), n);
                Zip::from(&mut gn).and(&pn).and(&tn).for_each(|g, &p, &t| {
                    *g = T::f((p.as_f64() - t.as_f64()) / (batch * r));
                });
            }
            Ok((loss / batch, grad))
        }
    }
}

/// Peak signal-to-noise ratio in decibels; identical inputs give infinity.
pub fn psnr<T: Real>(a: &Array3<T>, b: &Array3<T>, peak: f64) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!(
            "psnr inputs {:?} and {:?} differ",
            a.dim(),
            b.dim()
        )));
    }
    if a.is_empty() {
        return Err(Error::Dimension("psnr of an empty image".into()));
    }
    let sq = Zip::from(a).and(b).map_collect(|&x, &y| {
        let d = x.as_f64() - y.as_f64();
        d * d
    });
    let mse = sq.sum() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * ((peak * peak) / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Separable valid-mode Gaussian filter.
fn gauss_valid(plane: &Array2<f64>, k: &[f64; SSIM_WINDOW]) -> Array2<f64> {
    let (h, w) = plane.dim();
    let oh = h - SSIM_WINDOW + 1;
    let ow = w - SSIM_WINDOW + 1;
    let mut vert = Array2::zeros((oh, w));
    for y in 0..oh {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * plane[(y + i, x)];
            }
            vert[(y, x)] = acc;
        }
    }
    let mut out = Array2::zeros((oh, ow));
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * vert[(y, x + i)];
            }
            out[(y, x)] = acc;
        }
    }
    out
}

/// Structural similarity: Gaussian-weighted local statistics on each channel
/// (valid mode, 11x11 window, sigma 1.5), averaged over the map and the
/// channels.
pub fn ssim<T: Real>(a: &Array3<T>, b: &Array3<T>, peak: f64) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!(
            "ssim inputs {:?} and {:?} differ",
            a.dim(),
            b.dim()
        )));
    }
    let (h, w, channels) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let k = gaussian_kernel();

    let mut total = 0.0;
    for ch in 0..channels {
        let pa = Array2::from_shape_fn((h, w), |(y, x)| a[(y, x, ch)].as_f64());
        let pb = Array2::from_shape_fn((h, w), |(y, x)| b[(y, x, ch)].as_f64());
        let mu_a = gauss_valid(&pa, &k);
        let mu_b = gauss_valid(&pb, &k);
        let aa = gauss_valid(&(&pa * &pa), &k);
        let bb = gauss_valid(&(&pb * &pb), &k);
        let ab = gauss_valid(&(&pa * &pb), &k);

        let mut acc = 0.0;
        Zip::from(&mu_a)
            .and(&mu_b)
            .and(&aa)
            .and(&bb)
            .and(&ab)
            .for_each(|&ma, &mb, &saa, &sbb, &sab| {
                let var_a = saa - ma * ma;
                let var_b = sbb - mb * mb;
                let cov = sab - ma * mb;
                let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
                let den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
                acc += num / den;
            });
        total += acc / mu_a.len() as f64;
    }
    Ok(total / channels as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{fd_grad, max_rel_err};
    use ndarray::{Array3, Array4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn randn4(rng: &mut ChaCha12Rng, dim: (usize, usize, usize, usize)) -> Array4<f64> {
        Array4::from_shape_fn(dim, |_| rng.random::<f64>())
    }

    /// Plain sequential-loop reference, no shared code with the
    /// implementation.
    fn charbonnier_naive(pred: &Array4<f64>, target: &Array4<f64>, cfg: &LossConfig) -> f64 {
        let eps2 = cfg.epsilon * cfg.epsilon;
        match cfg.mode {
            LossMode::PerPixelMean => {
                let mut sum = 0.0;
                for (p, t) in pred.iter().zip(target.iter()) {
                    let d = p - t;
                    sum += (d * d + eps2).sqrt();
                }
                sum / pred.len() as f64
            }
            LossMode::PerImageNorm => {
                let n = pred.dim().0;
                let mut total = 0.0;
                for i in 0..n {
                    let mut sq = 0.0;
                    let pi = pred.index_axis(ndarray::Axis(0), i);
                    let ti = target.index_axis(ndarray::Axis(0), i);
                    for (p, t) in pi.iter().zip(ti.iter()) {
                        let d = p - t;
                        sq += d * d;
                    }
                    total += (sq + eps2).sqrt();
                }
                total / n as f64
            }
        }
    }

    #[test]
    fn matches_naive_reference_in_both_modes() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for mode in [LossMode::PerPixelMean, LossMode::PerImageNorm] {
            let cfg = LossConfig {
                mode,
                ..LossConfig::default()
            };
            for _ in 0..10 {
                let pred = randn4(&mut rng, (3, 5, 4, 3));
                let target = randn4(&mut rng, (3, 5, 4, 3));
                let got = charbonnier(&pred, &target, &cfg).unwrap();
                let want = charbonnier_naive(&pred, &target, &cfg);
                assert!(
                    (got - want).abs() <= 1e-12 * want.abs().max(1.0),
                    "{mode:?}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn loss_of_identical_tensors_is_epsilon() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for shape in [(1, 4, 4, 3), (2, 7, 5, 3), (3, 11, 13, 3)] {
            let x = randn4(&mut rng, shape);
            let v = charbonnier(&x, &x, &LossConfig::default()).unwrap();
            assert!(
                (v - 1e-3).abs() < 1e-15,
                "per-pixel mean at zero difference: {v}"
            );
            let cfg = LossConfig {
                mode: LossMode::PerImageNorm,
                ..LossConfig::default()
            };
            let v = charbonnier(&x, &x, &cfg).unwrap();
            assert!((v - 1e-3).abs() < 1e-15, "per-image norm: {v}");
        }
    }

    #[test]
    fn loss_approaches_l1_for_large_differences() {
        let pred = Array4::from_elem((1, 2, 2, 3), 10.0f64);
        let target = Array4::zeros((1, 2, 2, 3));
        let v = charbonnier(&pred, &target, &LossConfig::default()).unwrap();
        assert!((v - 10.0).abs() < 1e-7, "behaves like mean |d|: {v}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for mode in [LossMode::PerPixelMean, LossMode::PerImageNorm] {
            let cfg = LossConfig {
                mode,
                ..LossConfig::default()
            };
            let pred = randn4(&mut rng, (2, 3, 3, 3));
            let target = randn4(&mut rng, (2, 3, 3, 3));
            let (_, grad) = charbonnier_with_grad(&pred, &target, &cfg).unwrap();
            let fd = fd_grad(
                |flat| {
                    let pv = Array4::from_shape_vec(pred.dim(), flat.to_vec()).unwrap();
                    charbonnier(&pv, &target, &cfg).unwrap()
                },
                pred.as_slice().unwrap(),
                1e-6,
            );
            assert!(
                max_rel_err(grad.as_slice().unwrap(), &fd) < 1e-7,
                "{mode:?}"
            );
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = Array4::<f64>::zeros((1, 4, 4, 3));
        let b = Array4::<f64>::zeros((1, 4, 5, 3));
        assert!(matches!(
            charbonnier(&a, &b, &LossConfig::default()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn psnr_of_known_mse() {
        let a = Array3::from_elem((8, 8, 3), 0.5f64);
        let b = Array3::from_elem((8, 8, 3), 0.6f64);
        // mse = 0.01 at peak 1: 10 log10(1/0.01) = 20 dB
        let v = psnr(&a, &b, 1.0).unwrap();
        assert!((v - 20.0).abs() < 1e-9, "{v}");
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_drops_six_db_when_error_doubles() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let a = Array3::from_shape_fn((12, 9, 3), |_| rng.random::<f64>());
        let noise = Array3::from_shape_fn((12, 9, 3), |_| rng.random::<f64>() * 0.05);
        let b1 = &a + &noise;
        let b2 = &a + &(&noise * 2.0);
        let p1 = psnr(&a, &b1, 1.0).unwrap();
        let p2 = psnr(&a, &b2, 1.0).unwrap();
        assert!(
            ((p1 - p2) - 20.0 * 2.0f64.log10()).abs() < 1e-9,
            "difference {}",
            p1 - p2
        );
    }

    /// Direct 2-D windowed reference: no separable trick, no shared code.
    fn ssim_naive(a: &Array3<f64>, b: &Array3<f64>, peak: f64) -> f64 {
        let (h, w, channels) = a.dim();
        let half = SSIM_WINDOW / 2;
        let c1 = (SSIM_K1 * peak).powi(2);
        let c2 = (SSIM_K2 * peak).powi(2);
        let mut k2d = vec![vec![0.0; SSIM_WINDOW]; SSIM_WINDOW];
        let mut ksum = 0.0;
        for (dy, row) in k2d.iter_mut().enumerate() {
            for (dx, v) in row.iter_mut().enumerate() {
                let r2 = (dy as f64 - half as f64).powi(2) + (dx as f64 - half as f64).powi(2);
                *v = (-r2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
                ksum += *v;
            }
        }
        for row in k2d.iter_mut() {
            for v in row.iter_mut() {
                *v /= ksum;
            }
        }
        let mut total = 0.0;
        for ch in 0..channels {
            let mut acc = 0.0;
            let mut count = 0usize;
            for y in 0..h - SSIM_WINDOW + 1 {
                for x in 0..w - SSIM_WINDOW + 1 {
                    let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for dy in 0..SSIM_WINDOW {
                        for dx in 0..SSIM_WINDOW {
                            let kv = k2d[dy][dx];
                            let av = a[(y + dy, x + dx, ch)];
                            let bv = b[(y + dy, x + dx, ch)];
                            ma += kv * av;
                            mb += kv * bv;
                            saa += kv * av * av;
                            sbb += kv * bv * bv;
                            sab += kv * av * bv;
                        }
                    }
                    let var_a = saa - ma * ma;
                    let var_b = sbb - mb * mb;
                    let cov = sab - ma * mb;
                    acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                        / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
                    count += 1;
                }
            }
            total += acc / count as f64;
        }
        total / channels as f64
    }

    #[test]
    fn ssim_matches_direct_window_reference() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let a = Array3::from_shape_fn((16, 14, 3), |_| rng.random::<f64>());
        let b = Array3::from_shape_fn((16, 14, 3), |_| rng.random::<f64>());
        let got = ssim(&a, &b, 1.0).unwrap();
        let want = ssim_naive(&a, &b, 1.0);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let a = Array3::from_shape_fn((20, 20, 3), |_| rng.random::<f64>());
        let v = ssim(&a, &a, 1.0).unwrap();
        assert!((v - 1.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn ssim_degrades_with_noise_and_stays_bounded() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let a = Array3::from_shape_fn((24, 24, 3), |(y, x, _)| {
            0.5 + 0.3 * ((y as f64 / 5.0).sin() + (x as f64 / 7.0).cos())
        });
        let light = &a + &Array3::from_shape_fn(a.dim(), |_| (rng.random::<f64>() - 0.5) * 0.05);
        let heavy = &a + &Array3::from_shape_fn(a.dim(), |_| (rng.random::<f64>() - 0.5) * 0.6);
        let s_light = ssim(&a, &light, 1.0).unwrap();
        let s_heavy = ssim(&a, &heavy, 1.0).unwrap();
        assert!(s_light > s_heavy, "{s_light} vs {s_heavy}");
        for v in [s_light, s_heavy] {
            assert!((-1.0..=1.0).contains(&v));
        }
        // symmetry
        let s_rev = ssim(&light, &a, 1.0).unwrap();
        assert!((s_light - s_rev).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_tiny_images() {
        let a = Array3::<f64>::zeros((8, 8, 3));
        assert!(matches!(ssim(&a, &a, 1.0), Err(Error::Dimension(_))));
    }
}
