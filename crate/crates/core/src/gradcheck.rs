//! Finite-difference gradient checking.
//!
//! Central differences in f64 against any scalar-valued function of a flat
//! parameter vector. Analytic backward passes are validated against this
//! harness instead of against themselves.

/// Central-difference gradient of `f` at `x`, one entry per coordinate.
pub fn fd_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let idxs: Vec<usize> = (0..x.len()).collect();
    fd_grad_at(&mut f, x, &idxs, eps)
}

/// Central-difference gradient restricted to the coordinates in `idxs`.
/// Returned in the same order as `idxs`.
pub fn fd_grad_at(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    idxs: &[usize],
    eps: f64,
) -> Vec<f64> {
    let mut work = x.to_vec();
    let mut out = Vec::with_capacity(idxs.len());
    for &i in idxs {
        let orig = work[i];
        work[i] = orig + eps;
        let hi = f(&work);
        work[i] = orig - eps;
        let lo = f(&work);
        work[i] = orig;
        out.push((hi - lo) / (2.0 * eps));
    }
    out
}

/// Relative error with an absolute floor so near-zero pairs compare sanely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Largest relative error between analytic and finite-difference gradients.
pub fn max_rel_err(analytic: &[f64], fd: &[f64]) -> f64 {
    assert_eq!(analytic.len(), fd.len());
    analytic
        .iter()
        .zip(fd)
        .map(|(&a, &b)| rel_err(a, b))
        .fold(0.0, f64::max)
}
