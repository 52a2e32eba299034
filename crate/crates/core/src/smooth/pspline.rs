//! Cubic B-spline bases, difference penalties and a penalized least-squares
//! solver that scans the smoothing parameter.
//!
//! For a fixed design the normal matrix `M = X^T X` and penalty `S` are
//! reduced once to the simultaneous diagonal form `L^{-1} S L^{-T} = Q D Q^T`
//! with `M = L L^T`. Every quantity needed to score a candidate lambda (fit,
//! residual sum of squares, effective degrees of freedom, log-determinants)
//! is then a sum over the diagonal, so the lambda scan costs `O(K)` per point.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{MfpcaError, Result};

use super::LambdaRule;

pub(crate) const DEGREE: usize = 3;

/// Cubic B-splines on equally spaced knots over `[lo, hi]`.
#[derive(Debug, Clone)]
pub(crate) struct BSplineBasis {
    lo: f64,
    hi: f64,
    n_basis: usize,
    h: f64,
}

impl BSplineBasis {
    pub fn new(lo: f64, hi: f64, n_basis: usize) -> Result<Self> {
        if n_basis < DEGREE + 1 {
            return Err(MfpcaError::InvalidArgument(format!(
                "a cubic B-spline basis needs at least {} functions",
                DEGREE + 1
            )));
        }
        if !(hi > lo) {
            return Err(MfpcaError::InsufficientData("degenerate abscissa range".into()));
        }
        let intervals = n_basis - DEGREE;
        Ok(BSplineBasis {
            lo,
            hi,
            n_basis,
            h: (hi - lo) / intervals as f64,
        })
    }

    fn knot(&self, i: isize) -> f64 {
        self.lo + (i - DEGREE as isize) as f64 * self.h
    }

    /// Index of the first nonzero function at `x` and the `DEGREE + 1` values.
    pub fn eval(&self, x: f64) -> (usize, [f64; DEGREE + 1]) {
        let intervals = self.n_basis - DEGREE;
        let raw = ((x - self.lo) / self.h).floor();
        let m = if raw < 0.0 {
            0
        } else {
            (raw as usize).min(intervals - 1)
        };
        let span = (m + DEGREE) as isize;
        let mut n = [0.0; DEGREE + 1];
        let mut left = [0.0; DEGREE + 1];
        let mut right = [0.0; DEGREE + 1];
        n[0] = 1.0;
        for j in 1..=DEGREE {
            left[j] = x - self.knot(span + 1 - j as isize);
            right[j] = self.knot(span + j as isize) - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        (m, n)
    }

    pub fn design(&self, xs: &[f64]) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(xs.len(), self.n_basis);
        for (row, &x) in xs.iter().enumerate() {
            let (first, vals) = self.eval(x);
            for (k, v) in vals.iter().enumerate() {
                b[(row, first + k)] = *v;
            }
        }
        b
    }

    #[allow(dead_code)]
    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }
}

/// `D^T D` for the order-`order` difference operator on `k` coefficients.
pub(crate) fn difference_penalty(k: usize, order: usize) -> DMatrix<f64> {
    let mut d = DMatrix::<f64>::identity(k, k);
    for _ in 0..order {
        let rows = d.nrows();
        if rows < 2 {
            break;
        }
        d = DMatrix::from_fn(rows - 1, k, |r, c| d[(r + 1, c)] - d[(r, c)]);
    }
    d.tr_mul(&d)
}

/// Penalized least squares `min ||y - X b||^2 + lambda b^T S b` in reduced form.
pub(crate) struct PenalizedProblem {
    n_obs: usize,
    yy: f64,
    /// Lower Cholesky factor of `X^T X`.
    chol_l: DMatrix<f64>,
    log_det_m: f64,
    q: DMatrix<f64>,
    d: DVector<f64>,
    /// `Q^T L^{-1} X^T y`
    c: DVector<f64>,
    penalty_rank: usize,
}

/// Outcome of a fit at one lambda.
#[derive(Debug, Clone)]
pub(crate) struct PenalizedSolution {
    pub coef: DVector<f64>,
    pub edf: f64,
}

const LAMBDA_GRID: usize = 81;

impl PenalizedProblem {
    pub fn new(
        xtx: DMatrix<f64>,
        xty: DVector<f64>,
        yy: f64,
        n_obs: usize,
        penalty: &DMatrix<f64>,
    ) -> Result<Self> {
        let k = xtx.nrows();
        if n_obs < k {
            return Err(MfpcaError::InsufficientData(format!(
                "{n_obs} observations for {k} basis coefficients"
            )));
        }
        let chol = nalgebra::Cholesky::new(xtx.clone()).ok_or_else(|| {
            MfpcaError::InsufficientData("basis is not identifiable from the data".into())
        })?;
        let l = chol.l();
        let scale = xtx.diagonal().max();
        if l.diagonal().iter().any(|&v| v * v < 1e-12 * scale) {
            return Err(MfpcaError::InsufficientData(
                "basis is numerically under-determined".into(),
            ));
        }
        let log_det_m = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        // A = L^{-1} S L^{-T}
        let linv_s = l
            .solve_lower_triangular(penalty)
            .expect("nonsingular triangular factor");
        let a = l
            .solve_lower_triangular(&linv_s.transpose())
            .expect("nonsingular triangular factor");
        let a = (&a + a.transpose()) * 0.5;
        let eig = SymmetricEigen::new(a);
        let dmax = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
        let d = eig.eigenvalues.map(|v| if v < 1e-12 * dmax { 0.0 } else { v });
        let penalty_rank = d.iter().filter(|&&v| v > 0.0).count();
        let linv_r = l.solve_lower_triangular(&xty).expect("nonsingular triangular factor");
        let c = eig.eigenvectors.tr_mul(&linv_r);
        Ok(PenalizedProblem {
            n_obs,
            yy,
            chol_l: l,
            log_det_m,
            q: eig.eigenvectors,
            d,
            c,
            penalty_rank,
        })
    }

    fn shrink(&self, lambda: f64) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.d
            .iter()
            .zip(self.c.iter())
            .map(move |(&d, &c)| (d, c, 1.0 / (1.0 + lambda * d)))
    }

    fn rss_and_penalty(&self, lambda: f64) -> (f64, f64) {
        let mut cross = 0.0;
        let mut fit = 0.0;
        let mut pen = 0.0;
        for (d, c, f) in self.shrink(lambda) {
            cross += c * c * f;
            fit += c * c * f * f;
            pen += d * c * c * f * f;
        }
        ((self.yy - 2.0 * cross + fit).max(0.0), pen)
    }

    pub fn edf(&self, lambda: f64) -> f64 {
        self.shrink(lambda).map(|(_, _, f)| f).sum()
    }

    pub fn gcv(&self, lambda: f64) -> f64 {
        let (rss, _) = self.rss_and_penalty(lambda);
        let n = self.n_obs as f64;
        let denom = n - self.edf(lambda);
        if denom <= 0.0 {
            return f64::INFINITY;
        }
        n * rss / (denom * denom)
    }

    /// Profiled restricted likelihood criterion (up to constants); smaller is better.
    pub fn reml(&self, lambda: f64) -> f64 {
        let (rss, pen) = self.rss_and_penalty(lambda);
        let null_dim = self.d.len() - self.penalty_rank;
        let dof = self.n_obs.saturating_sub(null_dim).max(1) as f64;
        let scale = (rss + lambda * pen).max(f64::MIN_POSITIVE * (1.0 + self.yy));
        let log_det: f64 = self.d.iter().map(|&d| (lambda * d).ln_1p()).sum();
        dof * scale.ln() + log_det + self.log_det_m - self.penalty_rank as f64 * lambda.ln()
    }

    fn lambda_bounds(&self) -> (f64, f64) {
        let positive: Vec<f64> = self.d.iter().copied().filter(|&v| v > 0.0).collect();
        if positive.is_empty() {
            return (1.0, 1.0);
        }
        let dmax = positive.iter().cloned().fold(0.0, f64::max);
        let dmin = positive.iter().cloned().fold(f64::INFINITY, f64::min);
        (1e-6 / dmax, 1e4 / dmin)
    }

    /// Picks lambda by grid scan plus golden-section refinement in log space.
    /// Ties resolve to the smaller lambda.
    pub fn select_lambda(&self, rule: &LambdaRule) -> f64 {
        let use_reml = match rule {
            LambdaRule::Fixed(v) => return *v,
            LambdaRule::Gcv => false,
            LambdaRule::Reml => true,
        };
        let criterion = |lam: f64| if use_reml { self.reml(lam) } else { self.gcv(lam) };
        if self.penalty_rank == 0 {
            return 0.0;
        }
        let (lo, hi) = self.lambda_bounds();
        let (llo, lhi) = (lo.ln(), hi.ln());
        let step = (lhi - llo) / (LAMBDA_GRID - 1) as f64;
        let grid: Vec<f64> = (0..LAMBDA_GRID).map(|g| llo + step * g as f64).collect();
        let scores: Vec<f64> = grid.iter().map(|&l| criterion(l.exp())).collect();
        let mut best = 0;
        for (g, &s) in scores.iter().enumerate() {
            if s < scores[best] {
                best = g;
            }
        }
        let a = grid[best.saturating_sub(1)];
        let b = grid[(best + 1).min(LAMBDA_GRID - 1)];
        let refined = golden_section(|l| criterion(l.exp()), a, b, 60);
        if criterion(refined.exp()) < scores[best] {
            refined.exp()
        } else {
            grid[best].exp()
        }
    }

    pub fn solve(&self, lambda: f64) -> PenalizedSolution {
        let g = DVector::from_iterator(
            self.c.len(),
            self.shrink(lambda).map(|(_, c, f)| c * f),
        );
        let lt_theta = &self.q * g;
        let coef = self
            .chol_l
            .transpose()
            .solve_upper_triangular(&lt_theta)
            .expect("nonsingular triangular factor");
        PenalizedSolution {
            coef,
            edf: self.edf(lambda),
        }
    }
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iters {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        x1
    } else {
        x2
    }
}
