//! The end-to-end decomposition: means, covariance surfaces, eigenanalysis
//! at both levels and the subject-level variance share.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::eigen::{apply_selection, eigendecompose, rho_w, EigenSystem, Selection};
use crate::error::{MfpcaError, Result};
use crate::grid::{Curve, MultilevelSample};
use crate::moments::{estimate_means, estimate_raw_cov, MeanEstimate, RawCov};
use crate::smooth::{estimate_sigma2, smooth_mean, smooth_surface, Sigma2Estimate, SmootherConfig};

/// Pipeline settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Smooth means and covariance surfaces before the eigenanalysis.
    pub smoothed: bool,
    pub smoother: SmootherConfig,
    pub level1: Selection,
    pub level2: Selection,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            smoothed: true,
            smoother: SmootherConfig::default(),
            level1: Selection::default(),
            level2: Selection::default(),
        }
    }
}

impl FitConfig {
    pub fn unsmoothed() -> Self {
        FitConfig { smoothed: false, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.smoother.validate()?;
        self.level1.validate()?;
        self.level2.validate()
    }
}

/// Output of [`fit_mfpca`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfpcaFit {
    pub means: MeanEstimate,
    pub level1: EigenSystem,
    pub level2: EigenSystem,
    pub sigma2: f64,
    pub sigma2_clamped: bool,
    /// Subject-level share of the total positive spectrum.
    pub rho_w: f64,
    pub n_subjects: usize,
    pub n_visits: usize,
}

/// Covariance surfaces produced on the way to a fit.
#[derive(Debug, Clone)]
pub struct FitSurfaces {
    pub raw: RawCov,
    pub kt: DMatrix<f64>,
    pub kb: DMatrix<f64>,
    pub kw: DMatrix<f64>,
}

/// Smoothed mean structure: each visit mean and the overall mean are fitted
/// separately, and the shifts are their differences.
pub fn smooth_means(raw: &MeanEstimate, cfg: &SmootherConfig) -> Result<MeanEstimate> {
    let mu = smooth_mean(&raw.mu, cfg)?;
    let grid = raw.mu.grid().clone();
    let eta = (0..raw.eta.len())
        .map(|j| {
            let visit = Curve::new(grid.clone(), raw.visit_mean(j))?;
            let fitted = smooth_mean(&visit, cfg)?;
            let shift = fitted.values().iter().zip(mu.values()).map(|(v, m)| v - m).collect();
            Curve::new(grid.clone(), shift)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MeanEstimate { mu, eta })
}

pub fn fit_mfpca(sample: &MultilevelSample, cfg: &FitConfig) -> Result<MfpcaFit> {
    fit_mfpca_with_surfaces(sample, cfg).map(|(fit, _)| fit)
}

pub fn fit_mfpca_with_surfaces(sample: &MultilevelSample, cfg: &FitConfig) -> Result<(MfpcaFit, FitSurfaces)> {
    cfg.validate()?;
    let raw_means = estimate_means(sample)?;
    let means = if cfg.smoothed { smooth_means(&raw_means, &cfg.smoother)? } else { raw_means };
    let raw = estimate_raw_cov(sample, &means)?;
    let grid = sample.grid();
    let (kt, kb, sigma) = if cfg.smoothed {
        let kt = smooth_surface(&raw.gt, grid, true, &cfg.smoother)?.surface;
        let kb = smooth_surface(&raw.gb, grid, false, &cfg.smoother)?.surface;
        let sigma = estimate_sigma2(&raw.gt, &kt, grid)?;
        (kt, kb, sigma)
    } else {
        let none = Sigma2Estimate { value: 0.0, raw: 0.0, clamped: false };
        (raw.gt.clone(), raw.gb.clone(), none)
    };
    let kw = &kt - &kb;
    let t = grid.len();
    // Eigenvalues this small relative to the data are rounding residue.
    let diag: Vec<f64> = (0..t).map(|s| raw.gt[(s, s)]).collect();
    let mu2: Vec<f64> = means.mu.values().iter().map(|v| v * v).collect();
    let floor = 1e-12 * (grid.integrate(&diag) + grid.integrate(&mu2));
    let level1 = apply_selection(eigendecompose(&kb, grid, 1)?.trimmed_below(floor), &cfg.level1, t)?;
    let level2 = apply_selection(eigendecompose(&kw, grid, 2)?.trimmed_below(floor), &cfg.level2, t)?;
    if level1.eigenvalues.is_empty() && level2.eigenvalues.is_empty() {
        return Err(MfpcaError::NoVariance);
    }
    let rho = rho_w(&level1.eigenvalues, &level2.eigenvalues)?;
    let fit = MfpcaFit {
        means,
        level1,
        level2,
        sigma2: sigma.value,
        sigma2_clamped: sigma.clamped,
        rho_w: rho,
        n_subjects: sample.n_subjects(),
        n_visits: sample.n_visits(),
    };
    Ok((fit, FitSurfaces { raw, kt, kb, kw }))
}
