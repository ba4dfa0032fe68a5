//! Symmetric eigenvalue utilities: Sturm-sequence bisection for tridiagonal
//! matrices and Lanczos tridiagonalization (full reorthogonalization) for
//! implicit operators. Together they extract the lowest eigenvalues of the
//! weighted grid generators and of tilted Hessian operators too large for
//! the dense path.

use crate::error::{FlowError, Result};

/// Number of eigenvalues of the symmetric tridiagonal matrix
/// `(diag, offdiag)` strictly below `x` (Sturm count).
fn sturm_count(diag: &[f64], offdiag: &[f64], x: f64) -> usize {
    let n = diag.len();
    let mut count = 0;
    let mut d = 1.0f64;
    for i in 0..n {
        let b2 = if i == 0 {
            0.0
        } else {
            offdiag[i - 1] * offdiag[i - 1]
        };
        d = diag[i] - x - b2 / d;
        if d == 0.0 {
            d = 1e-300;
        }
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

/// The `k` smallest eigenvalues of a symmetric tridiagonal matrix by
/// bisection.
pub fn tridiag_smallest(diag: &[f64], offdiag: &[f64], k: usize) -> Vec<f64> {
    let n = diag.len();
    assert_eq!(offdiag.len() + 1, n.max(1));
    let k = k.min(n);
    // Gershgorin bounds.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = (if i > 0 { offdiag[i - 1].abs() } else { 0.0 })
            + (if i + 1 < n { offdiag[i].abs() } else { 0.0 });
        lo = lo.min(diag[i] - r);
        hi = hi.max(diag[i] + r);
    }
    let mut out = Vec::with_capacity(k);
    for j in 0..k {
        let (mut a, mut b) = (lo, hi);
        for _ in 0..80 {
            let mid = 0.5 * (a + b);
            if sturm_count(diag, offdiag, mid) <= j {
                a = mid;
            } else {
                b = mid;
            }
        }
        out.push(0.5 * (a + b));
    }
    out
}

/// Lanczos tridiagonalization of a symmetric operator given by `matvec`,
/// with full reorthogonalization. Returns `(diag, offdiag)` of the
/// projected tridiagonal matrix.
pub fn lanczos_tridiagonalize<F: Fn(&[f64], &mut [f64])>(
    matvec: F,
    dim: usize,
    iters: usize,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    use rand::Rng;
    let m = iters.min(dim);
    let mut rng = crate::rng::stream(seed, crate::rng::purpose_tag("lanczos"), 0);
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut v: Vec<f64> = (0..dim)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
    let mut alpha = Vec::with_capacity(m);
    let mut beta: Vec<f64> = Vec::with_capacity(m.saturating_sub(1));
    let mut w = vec![0.0; dim];
    for j in 0..m {
        q.push(v.clone());
        matvec(&v, &mut w);
        let a: f64 = v.iter().zip(&w).map(|(x, y)| x * y).sum();
        alpha.push(a);
        // w ← w - a q_j - β_{j-1} q_{j-1}, then full reorthogonalization.
        for (wi, qi) in w.iter_mut().zip(&q[j]) {
            *wi -= a * qi;
        }
        if j > 0 {
            let b = beta[j - 1];
            for (wi, qi) in w.iter_mut().zip(&q[j - 1]) {
                *wi -= b * qi;
            }
        }
        for qv in &q {
            let dot: f64 = qv.iter().zip(&w).map(|(x, y)| x * y).sum();
            for (wi, qi) in w.iter_mut().zip(qv) {
                *wi -= dot * qi;
            }
        }
        let b = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if j + 1 == m || b < 1e-14 {
            break;
        }
        beta.push(b);
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / b;
        }
    }
    (alpha, beta)
}

/// Smallest eigenvalue of a symmetric operator via Lanczos + Sturm
/// bisection, iterating until two successive expansions agree within
/// `tol` (relative to the spectral scale).
pub fn lanczos_smallest<F: Fn(&[f64], &mut [f64])>(
    matvec: F,
    dim: usize,
    tol: f64,
    seed: u64,
) -> Result<f64> {
    let mut prev: Option<f64> = None;
    for iters in [40usize, 80, 160, 320] {
        let (alpha, beta) = lanczos_tridiagonalize(&matvec, dim, iters, seed);
        if alpha.is_empty() {
            return Err(FlowError::EigensolveFailure("empty Krylov space".into()));
        }
        let lam = tridiag_smallest(&alpha, &beta, 1)[0];
        let scale = alpha
            .iter()
            .fold(0.0f64, |m, a| m.max(a.abs()))
            .max(1e-30);
        if let Some(p) = prev {
            if (lam - p).abs() <= tol * scale {
                return Ok(lam);
            }
        }
        prev = Some(lam);
        if iters >= dim {
            break;
        }
    }
    // Krylov space saturated the dimension: the value is exact.
    prev.ok_or_else(|| FlowError::EigensolveFailure("no Lanczos iterations ran".into()))
}
