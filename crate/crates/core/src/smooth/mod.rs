//! Penalized-spline smoothing of mean curves and covariance surfaces.
//!
//! Curves are fitted with cubic B-splines and a difference penalty; surfaces
//! with the tensor product of the same basis and the isotropic penalty
//! `S = P (x) I + I (x) P`. The total covariance is fitted with its diagonal
//! left out, so the nugget `sigma^2 I(s = t)` does not leak into the fit; the
//! fitted diagonal then serves as the prediction of `K_T(t, t)`.

mod pspline;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MfpcaError, Result};
use crate::grid::{Curve, SampledGrid};
use crate::moments::symmetrize;

pub(crate) use pspline::{difference_penalty, BSplineBasis, PenalizedProblem};

/// How the smoothing parameter is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaRule {
    Fixed(f64),
    Gcv,
    Reml,
}

impl std::str::FromStr for LambdaRule {
    type Err = MfpcaError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcv" => Ok(LambdaRule::Gcv),
            "reml" => Ok(LambdaRule::Reml),
            other => {
                let v = other
                    .strip_prefix("fixed:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|v| *v >= 0.0 && v.is_finite())
                    .ok_or_else(|| {
                        MfpcaError::InvalidArgument(format!(
                            "lambda rule must be gcv, reml or fixed:<value>, got {s}"
                        ))
                    })?;
                Ok(LambdaRule::Fixed(v))
            }
        }
    }
}

/// Basis sizes and penalty settings. `None` sizes resolve from the grid length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmootherConfig {
    pub n_basis: Option<usize>,
    pub penalty_order: usize,
    pub lambda_rule: LambdaRule,
    pub surface_n_basis: Option<usize>,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        SmootherConfig {
            n_basis: None,
            penalty_order: 2,
            lambda_rule: LambdaRule::Gcv,
            surface_n_basis: None,
        }
    }
}

impl SmootherConfig {
    /// `min(35, T/4)`, but never below a cubic basis.
    pub fn curve_basis_size(&self, t: usize) -> usize {
        self.n_basis
            .unwrap_or_else(|| (t / 4).min(35))
            .max(pspline::DEGREE + 1)
            .max(self.penalty_order + 1)
    }

    /// `min(15, T/3)` per axis, but never below 4.
    pub fn surface_basis_size(&self, t: usize) -> usize {
        self.surface_n_basis
            .unwrap_or_else(|| (t / 3).min(15))
            .max(4)
            .max(self.penalty_order + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(k) = self.n_basis {
            if k < self.penalty_order + 1 || k < pspline::DEGREE + 1 {
                return Err(MfpcaError::InvalidArgument(format!(
                    "n-basis {k} is too small for penalty order {}",
                    self.penalty_order
                )));
            }
        }
        if let Some(k) = self.surface_n_basis {
            if k < 4 || k < self.penalty_order + 1 {
                return Err(MfpcaError::InvalidArgument(format!(
                    "surface n-basis {k} must be at least 4"
                )));
            }
        }
        if let LambdaRule::Fixed(v) = self.lambda_rule {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(MfpcaError::InvalidArgument("fixed lambda must be >= 0".into()));
            }
        }
        Ok(())
    }
}

/// A fitted surface and the smoothing parameter that produced it.
#[derive(Debug, Clone)]
pub struct SurfaceFit {
    pub surface: DMatrix<f64>,
    pub lambda: f64,
    pub edf: f64,
}

/// Smoothed covariance surfaces and the measurement-error variance.
#[derive(Debug, Clone)]
pub struct SmoothedCov {
    pub kt: DMatrix<f64>,
    pub kb: DMatrix<f64>,
    pub sigma2: f64,
}

/// Penalized spline fit of a curve, evaluated on its own grid.
pub fn smooth_mean(y: &Curve, cfg: &SmootherConfig) -> Result<Curve> {
    smooth_points(y.grid().points(), y.values(), y.grid(), cfg)
}

/// Penalized spline fit of a pooled point cloud `(x_n, y_n)`, evaluated on `grid`.
pub fn smooth_points(x: &[f64], y: &[f64], grid: &std::sync::Arc<SampledGrid>, cfg: &SmootherConfig) -> Result<Curve> {
    cfg.validate()?;
    if x.len() != y.len() {
        return Err(MfpcaError::ShapeError("abscissae and responses differ in length".into()));
    }
    let k = cfg.curve_basis_size(grid.len());
    let mut distinct: Vec<f64> = x.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < k {
        return Err(MfpcaError::InsufficientData(format!(
            "{} distinct abscissae for {k} basis functions",
            distinct.len()
        )));
    }
    let pts = grid.points();
    let lo = distinct[0].min(pts[0]);
    let hi = distinct[distinct.len() - 1].max(pts[pts.len() - 1]);
    let basis = BSplineBasis::new(lo, hi, k)?;
    let design = basis.design(x);
    let yv = DVector::from_column_slice(y);
    let problem = PenalizedProblem::new(
        design.tr_mul(&design),
        design.tr_mul(&yv),
        yv.norm_squared(),
        x.len(),
        &difference_penalty(k, cfg.penalty_order),
    )?;
    let lambda = problem.select_lambda(&cfg.lambda_rule);
    let sol = problem.solve(lambda);
    let fitted = basis.design(pts) * sol.coef;
    Curve::new(grid.clone(), fitted.iter().copied().collect())
}

/// Tensor-product penalized fit of a symmetric surface on `grid x grid`.
///
/// With `drop_diagonal` the diagonal entries are excluded from the fit and
/// the returned diagonal holds the fitted predictions there.
pub fn smooth_surface(
    g: &DMatrix<f64>,
    grid: &SampledGrid,
    drop_diagonal: bool,
    cfg: &SmootherConfig,
) -> Result<SurfaceFit> {
    cfg.validate()?;
    if g.nrows() != g.ncols() {
        return Err(MfpcaError::ShapeError(format!(
            "surface is {}x{}, expected square",
            g.nrows(),
            g.ncols()
        )));
    }
    let t = g.nrows();
    if t != grid.len() {
        return Err(MfpcaError::ShapeError("surface does not match grid".into()));
    }
    let k = cfg.surface_basis_size(t).min(t);
    if k < 4 {
        return Err(MfpcaError::InsufficientData(format!(
            "grid of {t} points cannot carry a surface basis"
        )));
    }
    let pts = grid.points();
    let basis = BSplineBasis::new(pts[0], pts[t - 1], k)?;
    let b = basis.design(pts);
    let gram = b.tr_mul(&b);
    let kk = k * k;
    // Coefficient index a + k*b pairs with B[s, a] * B[q, b].
    let mut xtx = DMatrix::<f64>::zeros(kk, kk);
    for b2 in 0..k {
        for a2 in 0..k {
            let col = a2 + k * b2;
            for b1 in 0..k {
                let rb = gram[(b1, b2)];
                if rb == 0.0 {
                    continue;
                }
                for a1 in 0..k {
                    xtx[(a1 + k * b1, col)] = gram[(a1, a2)] * rb;
                }
            }
        }
    }
    let btgb = b.tr_mul(&(g * &b));
    let mut xty = DVector::from_iterator(kk, (0..kk).map(|idx| btgb[(idx % k, idx / k)]));
    let mut yy = g.norm_squared();
    let mut n_obs = t * t;
    if drop_diagonal {
        for s in 0..t {
            let (first, vals) = basis.eval(pts[s]);
            let idx: Vec<(usize, f64)> = (0..vals.len())
                .flat_map(|u| (0..vals.len()).map(move |v| (u, v)))
                .map(|(u, v)| ((first + u) + k * (first + v), vals[u] * vals[v]))
                .collect();
            for &(i1, v1) in &idx {
                for &(i2, v2) in &idx {
                    xtx[(i1, i2)] -= v1 * v2;
                }
                xty[i1] -= g[(s, s)] * v1;
            }
            yy -= g[(s, s)] * g[(s, s)];
        }
        n_obs -= t;
    }
    let p1 = difference_penalty(k, cfg.penalty_order);
    let eye = DMatrix::<f64>::identity(k, k);
    let penalty = p1.kronecker(&eye) + eye.kronecker(&p1);
    let xtx = symmetrize(&xtx);
    let problem = PenalizedProblem::new(xtx, xty, yy.max(0.0), n_obs, &penalty)?;
    let lambda = problem.select_lambda(&cfg.lambda_rule);
    let sol = problem.solve(lambda);
    let theta = DMatrix::from_column_slice(k, k, sol.coef.as_slice());
    let fitted = &b * theta * b.transpose();
    Ok(SurfaceFit {
        surface: symmetrize(&fitted),
        lambda,
        edf: sol.edf,
    })
}

/// Outcome of the nugget-variance estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sigma2Estimate {
    pub value: f64,
    /// The quadrature integral before clamping at zero.
    pub raw: f64,
    pub clamped: bool,
}

/// `integral {G_T(t, t) - K_T(t, t)} dt`, clamped at zero.
pub fn estimate_sigma2(gt_raw: &DMatrix<f64>, kt_smoothed: &DMatrix<f64>, grid: &SampledGrid) -> Result<Sigma2Estimate> {
    let t = grid.len();
    if gt_raw.shape() != (t, t) || kt_smoothed.shape() != (t, t) {
        return Err(MfpcaError::ShapeError("covariance surfaces must be T x T".into()));
    }
    let gap: Vec<f64> = (0..t).map(|s| gt_raw[(s, s)] - kt_smoothed[(s, s)]).collect();
    let raw = grid.integrate(&gap);
    let clamped = raw < 0.0;
    Ok(Sigma2Estimate {
        value: raw.max(0.0),
        raw,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn grid(n: usize) -> Arc<SampledGrid> {
        Arc::new(SampledGrid::uniform(n).unwrap())
    }

    fn outer(f: &[f64], c: f64) -> DMatrix<f64> {
        DMatrix::from_fn(f.len(), f.len(), |a, b| c * f[a] * f[b])
    }

    #[test]
    fn linear_mean_is_reproduced() {
        let g = grid(101);
        let y = Curve::from_fn(g.clone(), |t| 2.0 * t + 1.0);
        for rule in [LambdaRule::Gcv, LambdaRule::Reml, LambdaRule::Fixed(1e6)] {
            let cfg = SmootherConfig { lambda_rule: rule, ..Default::default() };
            let fit = smooth_mean(&y, &cfg).unwrap();
            for (a, b) in fit.values().iter().zip(y.values()) {
                assert!((a - b).abs() < 1e-6, "{rule:?}");
            }
        }
    }

    #[test]
    fn zero_mean_stays_zero() {
        let g = grid(60);
        let fit = smooth_mean(&Curve::zeros(g), &SmootherConfig::default()).unwrap();
        assert!(fit.values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn noisy_sine_recovered_by_gcv() {
        let g = grid(101);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let truth = |t: f64| 2f64.sqrt() * (2.0 * PI * t).sin();
        let y = Curve::from_fn(g.clone(), |t| truth(t));
        let noisy: Vec<f64> = y.values().iter().map(|v| v + noise.sample(&mut rng)).collect();
        let fit = smooth_mean(&Curve::new(g.clone(), noisy).unwrap(), &SmootherConfig::default()).unwrap();
        let sup = fit
            .values()
            .iter()
            .zip(g.points())
            .map(|(v, &t)| (v - truth(t)).abs())
            .fold(0.0, f64::max);
        assert!(sup < 0.15, "sup error {sup}");
    }

    #[test]
    fn mean_smoother_is_linear_for_fixed_lambda() {
        let g = grid(41);
        let cfg = SmootherConfig { lambda_rule: LambdaRule::Fixed(0.7), ..Default::default() };
        let a = Curve::from_fn(g.clone(), |t| (7.0 * t).cos());
        let b = Curve::from_fn(g.clone(), |t| t * t * (1.0 - t));
        let comb = Curve::from_fn(g.clone(), |t| 3.0 * (7.0 * t).cos() - 2.0 * t * t * (1.0 - t));
        let fa = smooth_mean(&a, &cfg).unwrap();
        let fb = smooth_mean(&b, &cfg).unwrap();
        let fc = smooth_mean(&comb, &cfg).unwrap();
        for s in 0..41 {
            let lin = 3.0 * fa.values()[s] - 2.0 * fb.values()[s];
            assert!((fc.values()[s] - lin).abs() < 1e-10);
        }
    }

    #[test]
    fn pooled_points_and_insufficient_data() {
        let g = grid(21);
        let x: Vec<f64> = (0..60).map(|k| (k % 30) as f64 / 29.0).collect();
        let y: Vec<f64> = x.iter().map(|t| 1.0 - t).collect();
        let fit = smooth_points(&x, &y, &g, &SmootherConfig::default()).unwrap();
        for (v, t) in fit.values().iter().zip(g.points()) {
            assert!((v - (1.0 - t)).abs() < 1e-6);
        }
        let cfg = SmootherConfig { n_basis: Some(10), ..Default::default() };
        let few = [0.0, 0.5, 1.0, 0.5];
        let err = smooth_points(&few, &[1.0; 4], &g, &cfg).unwrap_err();
        assert!(matches!(err, MfpcaError::InsufficientData(_)));
    }

    #[test]
    fn rank_one_surface_is_preserved() {
        let g = grid(101);
        let phi: Vec<f64> = g.points().iter().map(|&t| 2f64.sqrt() * (2.0 * PI * t).sin()).collect();
        let surf = outer(&phi, 1.0);
        let fit = smooth_surface(&surf, &g, false, &SmootherConfig::default()).unwrap();
        let err = (&fit.surface - &surf).amax();
        assert!(err < 0.02 * surf.amax(), "sup error {err}");
    }

    #[test]
    fn nugget_is_removed_when_diagonal_dropped() {
        let g = grid(101);
        let phi1: Vec<f64> = g.points().iter().map(|&t| 2f64.sqrt() * (2.0 * PI * t).sin()).collect();
        let phi2: Vec<f64> = g.points().iter().map(|&t| 2f64.sqrt() * (2.0 * PI * t).cos()).collect();
        let smooth = outer(&phi1, 1.0) + outer(&phi2, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let jitter = Normal::new(0.0, 0.01).unwrap();
        let mut noisy = &smooth + DMatrix::<f64>::identity(101, 101) * 0.8;
        for a in 0..101 {
            for b in 0..=a {
                let e = jitter.sample(&mut rng);
                noisy[(a, b)] += e;
                if a != b {
                    noisy[(b, a)] += e;
                }
            }
        }
        let fit = smooth_surface(&noisy, &g, true, &SmootherConfig::default()).unwrap();
        for s in 0..101 {
            let want = smooth[(s, s)];
            let got = fit.surface[(s, s)];
            // 5% of the surface's diagonal scale (entries pass through zero).
            assert!((got - want).abs() < 0.05 * 1.5, "s={s}: {got} vs {want}");
        }
        let mean_rel = (0..101).map(|s| (fit.surface[(s, s)] - smooth[(s, s)]).abs()).sum::<f64>()
            / (0..101).map(|s| smooth[(s, s)].abs()).sum::<f64>();
        assert!(mean_rel < 0.05, "mean relative diagonal error {mean_rel}");
        let s2 = estimate_sigma2(&noisy, &fit.surface, &g).unwrap();
        assert!((s2.value - 0.8).abs() < 0.05, "{s2:?}");
    }

    #[test]
    fn zero_surface() {
        let g = grid(30);
        let z = DMatrix::<f64>::zeros(30, 30);
        for drop in [false, true] {
            let fit = smooth_surface(&z, &g, drop, &SmootherConfig::default()).unwrap();
            assert!(fit.surface.amax() < 1e-14);
        }
    }

    #[test]
    fn non_square_surface_rejected() {
        let g = grid(5);
        let m = DMatrix::<f64>::zeros(5, 4);
        assert!(matches!(
            smooth_surface(&m, &g, false, &SmootherConfig::default()),
            Err(MfpcaError::ShapeError(_))
        ));
    }

    #[test]
    fn interpolable_surface_reproduced_as_lambda_vanishes() {
        let g = grid(24);
        let k = 8;
        let basis = BSplineBasis::new(0.0, 1.0, k).unwrap();
        let b = basis.design(g.points());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n01 = Normal::new(0.0, 1.0).unwrap();
        let theta = DMatrix::from_fn(k, k, |_, _| n01.sample(&mut rng));
        let theta = &theta + theta.transpose();
        let surf = &b * theta * b.transpose();
        let cfg = SmootherConfig {
            surface_n_basis: Some(k),
            lambda_rule: LambdaRule::Fixed(1e-12),
            ..Default::default()
        };
        let fit = smooth_surface(&surf, &g, false, &cfg).unwrap();
        assert!((&fit.surface - &surf).amax() < 1e-6);
        // Saturated basis: as many functions as grid points.
        let sat = SmootherConfig { surface_n_basis: Some(24), ..Default::default() };
        let rough = DMatrix::from_fn(24, 24, |a, c| ((a * c) as f64 * 0.37).sin() + ((a + c) as f64 * 0.21).cos());
        let rough = symmetrize(&rough);
        let errs: Vec<f64> = [1e-9, 1e-12, 1e-15, 0.0]
            .iter()
            .map(|&lam| {
                let cfg = SmootherConfig { lambda_rule: LambdaRule::Fixed(lam), ..sat.clone() };
                (&smooth_surface(&rough, &g, false, &cfg).unwrap().surface - &rough).amax()
            })
            .collect();
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
        assert!(errs[3] < 1e-6, "{errs:?}");
    }

    #[test]
    fn surface_fit_symmetric_and_transpose_invariant() {
        let g = grid(40);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n01 = Normal::new(0.0, 1.0).unwrap();
        let m = DMatrix::from_fn(40, 40, |_, _| n01.sample(&mut rng));
        let m = symmetrize(&m);
        let a = smooth_surface(&m, &g, true, &SmootherConfig::default()).unwrap();
        let b = smooth_surface(&m.transpose(), &g, true, &SmootherConfig::default()).unwrap();
        assert_eq!(a.surface, a.surface.transpose());
        assert!((&a.surface - &b.surface).amax() < 1e-12);
    }

    #[test]
    fn sigma2_examples() {
        let g = grid(51);
        let phi: Vec<f64> = g.points().iter().map(|&t| t * (1.0 - t)).collect();
        let kt = outer(&phi, 3.0);
        let gt = &kt + DMatrix::<f64>::identity(51, 51) * 0.25;
        let est = estimate_sigma2(&gt, &kt, &g).unwrap();
        assert!((est.value - 0.25).abs() < 1e-12 && !est.clamped);
        assert_eq!(estimate_sigma2(&kt, &kt, &g).unwrap().value, 0.0);
        let below = &kt - DMatrix::<f64>::identity(51, 51) * 1e-4;
        let est = estimate_sigma2(&below, &kt, &g).unwrap();
        assert_eq!(est.value, 0.0);
        assert!(est.clamped && est.raw < 0.0);
        // Adding c * 1 1^T to both surfaces leaves the estimate alone.
        let shift = DMatrix::from_element(51, 51, 2.5);
        let a = estimate_sigma2(&(&gt + &shift), &(&kt + &shift), &g).unwrap();
        assert!((a.value - 0.25).abs() < 1e-12);
    }

    #[test]
    fn lambda_rule_parsing() {
        assert_eq!("gcv".parse::<LambdaRule>().unwrap(), LambdaRule::Gcv);
        assert_eq!("REML".parse::<LambdaRule>().unwrap(), LambdaRule::Reml);
        assert_eq!("fixed:0.5".parse::<LambdaRule>().unwrap(), LambdaRule::Fixed(0.5));
        assert!("fixed:-1".parse::<LambdaRule>().is_err());
        assert!("magic".parse::<LambdaRule>().is_err());
    }
}
