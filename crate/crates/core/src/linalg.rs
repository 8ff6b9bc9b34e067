//! Shared dense linear-algebra helpers: complex SVD wrappers, Tikhonov
//! regularization with the Morozov discrepancy principle, Hermitian matrix
//! functions, and Gauss–Legendre quadrature.

use faer::c64;
use faer::linalg::solvers::SolveLstsq;
use faer::{Col, Mat, Side};

use crate::{Error, Result};

/// Thin singular value decomposition of a complex matrix, `A = U diag(s) V*`,
/// with singular values sorted in nonincreasing order.
pub struct ComplexSvd {
    pub u: Mat<c64>,
    pub s: Vec<f64>,
    pub v: Mat<c64>,
}

impl ComplexSvd {
    pub fn new(a: &Mat<c64>) -> Result<Self> {
        let svd = a.thin_svd().map_err(|e| Error::Solver {
            reason: format!("SVD failed to converge: {e:?}"),
            cond: f64::NAN,
        })?;
        let k = a.nrows().min(a.ncols());
        let s = (0..k).map(|i| svd.S()[i].re).collect();
        Ok(Self {
            u: svd.U().to_owned(),
            s,
            v: svd.V().to_owned(),
        })
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `U* b`, the data coefficients in the left singular basis.
    pub fn left_coeffs(&self, b: &Col<c64>) -> Col<c64> {
        self.u.adjoint() * b
    }

    /// Tikhonov-filtered solution `x = V diag(s/(s^2+beta)) U* b`.
    ///
    /// `beta = 0` gives the least-norm least-squares solution (singular values
    /// below `s_max * 1e-14` are treated as zero in that case).
    pub fn tikhonov_apply(&self, b: &Col<c64>, beta: f64) -> Col<c64> {
        let c = self.left_coeffs(b);
        let smax = self.s.first().copied().unwrap_or(0.0);
        let mut f = Col::<c64>::zeros(self.rank());
        for i in 0..self.rank() {
            let s = self.s[i];
            let w = if beta == 0.0 {
                if s > smax * 1e-14 {
                    1.0 / s
                } else {
                    0.0
                }
            } else {
                s / (s * s + beta)
            };
            f[i] = c[i] * c64::new(w, 0.0);
        }
        &self.v * f
    }

    /// Residual norm `|| A x(beta) - b ||` of the Tikhonov solution, computed
    /// in the singular basis without forming `x`.
    pub fn tikhonov_residual(&self, b: &Col<c64>, beta: f64) -> f64 {
        let c = self.left_coeffs(b);
        let b2: f64 = (0..b.nrows()).map(|i| b[i].norm_sqr()).sum();
        let c2: f64 = (0..c.nrows()).map(|i| c[i].norm_sqr()).sum();
        // component of b outside the range of U
        let perp2 = (b2 - c2).max(0.0);
        let mut r2 = perp2;
        for i in 0..self.rank() {
            let s2 = self.s[i] * self.s[i];
            let filt = if beta == 0.0 {
                let smax = self.s.first().copied().unwrap_or(0.0);
                if self.s[i] > smax * 1e-14 {
                    0.0
                } else {
                    1.0
                }
            } else {
                beta / (s2 + beta)
            };
            r2 += (filt * filt) * c[i].norm_sqr();
        }
        r2.sqrt()
    }
}

/// Outcome of a Morozov-regularized Tikhonov solve.
pub struct MorozovSolution {
    pub x: Col<c64>,
    /// Penalty weight selected by the discrepancy principle (0 on fallback).
    pub beta: f64,
    /// Achieved relative discrepancy `||Ax - b|| / ||b||`.
    pub achieved: f64,
    /// True when the discrepancy target was unattainable and the least-norm
    /// least-squares solution was returned instead.
    pub fallback: bool,
}

/// Tikhonov solve of `A x = b` with the penalty chosen so that the relative
/// residual matches `delta_rel` (Morozov discrepancy principle).
///
/// The discrepancy is monotone increasing in the penalty, so a bisection on
/// `log beta` brackets the root; the target is met within 0.1% relative.
pub fn tikhonov_morozov(svd: &ComplexSvd, b: &Col<c64>, delta_rel: f64) -> Result<MorozovSolution> {
    if delta_rel <= 0.0 {
        return Err(Error::Config(format!(
            "noise level must be positive, got {delta_rel}"
        )));
    }
    let bnorm: f64 = (0..b.nrows()).map(|i| b[i].norm_sqr()).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        return Ok(MorozovSolution {
            x: Col::zeros(svd.v.nrows()),
            beta: 0.0,
            achieved: 0.0,
            fallback: false,
        });
    }
    let target = delta_rel * bnorm;
    let smax = svd.s.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return Err(Error::Degenerate("zero operator in Morozov solve".into()));
    }
    let floor = svd.tikhonov_residual(b, 0.0);
    if floor >= target {
        // Even the unregularized least-squares residual exceeds the noise
        // level: report the least-norm solution as a fallback.
        let x = svd.tikhonov_apply(b, 0.0);
        return Ok(MorozovSolution {
            x,
            beta: 0.0,
            achieved: floor / bnorm,
            fallback: true,
        });
    }
    let mut lo = smax * smax * 1e-16;
    let mut hi = smax * smax * 1e16;
    // Expand until the bracket truly straddles the target.
    while svd.tikhonov_residual(b, lo) > target {
        lo *= 1e-2;
    }
    while svd.tikhonov_residual(b, hi) < target {
        hi *= 1e2;
    }
    for _ in 0..200 {
        let mid = (lo.ln() * 0.5 + hi.ln() * 0.5).exp();
        if svd.tikhonov_residual(b, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo < 1.0 + 1e-6 {
            break;
        }
    }
    let beta = (lo * hi).sqrt();
    let x = svd.tikhonov_apply(b, beta);
    let achieved = svd.tikhonov_residual(b, beta) / bnorm;
    Ok(MorozovSolution {
        x,
        beta,
        achieved,
        fallback: false,
    })
}

/// `|A|` for Hermitian `A`, via the eigendecomposition `V diag(|lambda|) V*`.
pub fn hermitian_abs(a: &Mat<c64>) -> Result<Mat<c64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::Shape("hermitian_abs needs a square matrix".into()));
    }
    let eig = a.self_adjoint_eigen(Side::Lower).map_err(|e| Error::Solver {
        reason: format!("Hermitian eigendecomposition failed: {e:?}"),
        cond: f64::NAN,
    })?;
    let n = a.nrows();
    let v = eig.U();
    let mut scaled = Mat::<c64>::zeros(n, n);
    for j in 0..n {
        let lam = eig.S()[j].re.abs();
        for i in 0..n {
            scaled[(i, j)] = v[(i, j)] * c64::new(lam, 0.0);
        }
    }
    Ok(&scaled * v.adjoint())
}

/// Unit-norm right singular vector of `A` for the smallest singular value.
///
/// Uses the full decomposition so that for wide matrices the nullspace
/// directions (absent from the thin factors) are candidates too.
pub fn smallest_right_singular_vector(a: &Mat<c64>) -> Result<Col<c64>> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::Shape("empty matrix".into()));
    }
    let svd = a.svd().map_err(|e| Error::Solver {
        reason: format!("SVD failed to converge: {e:?}"),
        cond: f64::NAN,
    })?;
    Ok(svd.V().col(a.ncols() - 1).to_owned())
}

/// Least-squares solution of `A x = b` via QR.
pub fn solve_lstsq(a: &Mat<c64>, b: &Mat<c64>) -> Mat<c64> {
    a.qr().solve_lstsq(b)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
///
/// Newton iteration on the Legendre recurrence; accurate to machine
/// precision for the small orders used here.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev-based initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre P_n(x) and derivative by recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Euclidean norm of a complex column vector.
pub fn col_norm(c: &Col<c64>) -> f64 {
    (0..c.nrows()).map(|i| c[i].norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in 1..=12 {
            let (x, w) = gauss_legendre(n);
            // exact for degree <= 2n-1
            for deg in 0..(2 * n) {
                let num: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(deg as i32)).sum();
                let exact = if deg % 2 == 0 {
                    2.0 / (deg as f64 + 1.0)
                } else {
                    0.0
                };
                assert_relative_eq!(num, exact, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn svd_reconstructs() {
        let a = Mat::from_fn(5, 3, |i, j| c64::new((i + 2 * j) as f64, i as f64 - j as f64));
        let svd = ComplexSvd::new(&a).unwrap();
        let mut rec = Mat::<c64>::zeros(5, 3);
        for k in 0..3 {
            for i in 0..5 {
                for j in 0..3 {
                    rec[(i, j)] += svd.u[(i, k)] * c64::new(svd.s[k], 0.0) * svd.v[(j, k)].conj();
                }
            }
        }
        for i in 0..5 {
            for j in 0..3 {
                assert!((rec[(i, j)] - a[(i, j)]).norm() < 1e-12);
            }
        }
        assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn morozov_hits_target_discrepancy() {
        let a = Mat::from_fn(20, 8, |i, j| {
            c64::new(((i * j) as f64 * 0.37).sin(), ((i + j) as f64 * 0.11).cos())
        });
        let svd = ComplexSvd::new(&a).unwrap();
        // exact data in the range of A, so a 5% discrepancy is attainable
        let x_true = Col::from_fn(8, |i| c64::new((i as f64 * 0.2).cos(), (i as f64 * 0.3).sin()));
        let b = &a * &x_true;
        let sol = tikhonov_morozov(&svd, &b, 0.05).unwrap();
        assert!(!sol.fallback);
        assert!((sol.achieved - 0.05).abs() / 0.05 < 0.01, "achieved {}", sol.achieved);
    }

    #[test]
    fn morozov_monotone_in_alpha() {
        let a = Mat::from_fn(10, 6, |i, j| c64::new((i as f64 - j as f64).tanh(), 0.1 * j as f64));
        let svd = ComplexSvd::new(&a).unwrap();
        let b = Col::from_fn(10, |i| c64::new(1.0 / (1.0 + i as f64), 0.5));
        let mut last = f64::INFINITY;
        let mut beta = 1e-8;
        for _ in 0..10 {
            let x = svd.tikhonov_apply(&b, beta);
            let n = col_norm(&x);
            assert!(n <= last * (1.0 + 1e-12));
            last = n;
            beta *= 10.0;
        }
    }

    #[test]
    fn hermitian_abs_of_psd_is_identity_map() {
        let g = Mat::from_fn(6, 4, |i, j| c64::new((i * 7 + j) as f64 * 0.1, (j * 3) as f64 * 0.2));
        let a = &g * g.adjoint(); // PSD Hermitian
        let abs = hermitian_abs(&a).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert!((abs[(i, j)] - a[(i, j)]).norm() < 1e-10 * (1.0 + a[(i, j)].norm()));
            }
        }
    }
}
