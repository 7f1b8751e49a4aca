//! Dense Cholesky plumbing with a jitter ladder.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative jitter of the first nonzero rung, times `trace / N`.
pub const JITTER_BASE: f64 = 1e-10;
/// Number of tenfold escalations after the first nonzero rung.
pub const JITTER_STEPS: i32 = 6;

/// Lower-triangular factor of `K + diag(noise^2) + jitter I`.
#[derive(Debug, Clone)]
pub struct CholFactor {
    lower: DMatrix<f64>,
    log_det: f64,
    jitter_used: f64,
    /// `jitter_used / (trace / N)`; zero when no jitter was needed.
    jitter_rel: f64,
}

impl CholFactor {
    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    pub(crate) fn jitter_rel(&self) -> f64 {
        self.jitter_rel
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// `(L L')^{-1} b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let z = self
            .lower
            .solve_lower_triangular(b)
            .expect("Cholesky factor has a positive diagonal");
        self.lower
            .tr_solve_lower_triangular(&z)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// `L^{-1} B`.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.lower
            .solve_lower_triangular(b)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// `(L L')^{-1}`, via a blocked triangular inverse.
    pub fn inverse(&self) -> DMatrix<f64> {
        let linv = lower_inverse(&self.lower);
        linv.transpose() * linv
    }
}

/// Cholesky of `gram + diag(noise_std^2)`.
///
/// Tries without jitter first, then adds `1e-10 * trace / N * 10^k` for
/// `k = 0..=6`.
pub fn factorize(gram: &DMatrix<f64>, noise_std: &[f64]) -> Result<CholFactor> {
    let n = gram.nrows();
    if n == 0 || gram.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "expected a nonempty square matrix, got {}x{}",
            gram.nrows(),
            gram.ncols()
        )));
    }
    if noise_std.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "noise has {} entries for a {n}x{n} matrix",
            noise_std.len()
        )));
    }
    let mut base = gram.clone();
    for (a, s) in noise_std.iter().enumerate() {
        base[(a, a)] += s * s;
    }
    if base.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("matrix contains non-finite entries".into()));
    }
    let scale = base.trace() / n as f64;

    let mut rel = 0.0;
    for step in -1..=JITTER_STEPS {
        if step >= 0 {
            rel = JITTER_BASE * 10f64.powi(step);
        }
        let jitter = rel * scale.abs();
        let mut m = base.clone();
        for a in 0..n {
            m[(a, a)] += jitter;
        }
        if let Some(ch) = nalgebra::Cholesky::new(m) {
            let lower = ch.unpack();
            let log_det = 2.0 * lower.diagonal().iter().map(|d| d.ln()).sum::<f64>();
            if step >= 0 {
                log::debug!("Cholesky needed jitter {jitter:.3e}");
            }
            return Ok(CholFactor {
                lower,
                log_det,
                jitter_used: jitter,
                jitter_rel: rel,
            });
        }
    }
    Err(Error::NotPositiveDefinite {
        jitter: rel * scale.abs(),
        min_eigenvalue: min_eigenvalue_estimate(&base),
    })
}

/// Inverse of a lower-triangular matrix by recursive 2x2 blocking, so the
/// bulk of the work is matrix products.
pub fn lower_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    if n <= 64 {
        let mut inv = DMatrix::<f64>::zeros(n, n);
        for c in 0..n {
            inv[(c, c)] = 1.0 / l[(c, c)];
            for r in c + 1..n {
                let mut s = 0.0;
                for k in c..r {
                    s += l[(r, k)] * inv[(k, c)];
                }
                inv[(r, c)] = -s / l[(r, r)];
            }
        }
        return inv;
    }
    let h = n / 2;
    let a_inv = lower_inverse(&l.view((0, 0), (h, h)).into_owned());
    let c_inv = lower_inverse(&l.view((h, h), (n - h, n - h)).into_owned());
    let b = l.view((h, 0), (n - h, h));
    let off = -(&c_inv * (b * &a_inv));
    let mut inv = DMatrix::<f64>::zeros(n, n);
    inv.view_mut((0, 0), (h, h)).copy_from(&a_inv);
    inv.view_mut((h, h), (n - h, n - h)).copy_from(&c_inv);
    inv.view_mut((h, 0), (n - h, h)).copy_from(&off);
    inv
}

/// Smallest eigenvalue of a symmetric matrix, estimated by power iteration
/// on `c I - A` with `c` a Gershgorin bound.
pub fn min_eigenvalue_estimate(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return f64::NAN;
    }
    let c = (0..n)
        .map(|r| a.row(r).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let shifted = DMatrix::<f64>::identity(n, n) * c - a;
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * ((i * 7919) % 13) as f64);
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..500 {
        let w = &shifted * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return c;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - lambda).abs() <= 1e-12 * next.abs().max(1e-300) {
            lambda = next;
            break;
        }
        lambda = next;
    }
    c - lambda
}

/// All eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = a.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}
