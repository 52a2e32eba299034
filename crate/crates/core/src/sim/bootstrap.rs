use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate_from_model, ModelSpec};
use crate::error::{MfpcaError, Result};
use crate::fit::{fit_mfpca, FitConfig, MfpcaFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hypothesis {
    /// No subject-level variation.
    H0,
    /// The fitted model as estimated.
    H1,
}

impl std::str::FromStr for Hypothesis {
    type Err = MfpcaError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "h0" => Ok(Hypothesis::H0),
            "h1" => Ok(Hypothesis::H1),
            other => Err(MfpcaError::InvalidArgument(format!("unknown hypothesis '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub hypothesis: Hypothesis,
    /// `rho_w` of the fit being resampled.
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    /// One refitted `rho_w` per bootstrap data set, in draw order.
    pub replicates: Vec<f64>,
}

impl BootstrapResult {
    pub fn covers(&self, value: f64) -> bool {
        self.lo <= value && value <= self.hi
    }
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn model_from_fit(fit: &MfpcaFit, hypothesis: Hypothesis) -> Result<ModelSpec> {
    let grid = fit.means.mu.grid().clone();
    let (lambda1, phi1) = match hypothesis {
        Hypothesis::H0 => (Vec::new(), Vec::new()),
        Hypothesis::H1 => {
            if fit.level1.n_selected == 0 {
                return Err(MfpcaError::InvalidArgument("H1 bootstrap needs a level-1 system".into()));
            }
            (fit.level1.selected_values().to_vec(), fit.level1.selected_functions().to_vec())
        }
    };
    if fit.level2.n_selected == 0 {
        return Err(MfpcaError::InvalidArgument("bootstrap needs a level-2 system".into()));
    }
    Ok(ModelSpec {
        mu: fit.means.mu.values().to_vec(),
        eta: fit.means.eta.iter().map(|e| e.values().to_vec()).collect(),
        lambda1,
        phi1,
        lambda2: fit.level2.selected_values().to_vec(),
        phi2: fit.level2.selected_functions().to_vec(),
        sigma: fit.sigma2.max(0.0).sqrt(),
        n_subjects: fit.n_subjects,
        grid,
    })
}

/// Parametric bootstrap of `rho_w`: draws `n_boot` balanced data sets from
/// the retained components of `fit` (level 1 dropped under H0), refits each
/// with `cfg`, and reports the 2.5% and 97.5% quantiles.
pub fn bootstrap_rho(fit: &MfpcaFit, hypothesis: Hypothesis, n_boot: usize, seed: u64, cfg: &FitConfig) -> Result<BootstrapResult> {
    if n_boot == 0 {
        return Err(MfpcaError::InvalidArgument("n_boot must be at least 1".into()));
    }
    let model = model_from_fit(fit, hypothesis)?;
    let replicates = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let (sample, _) = generate_from_model(&model, seed, &[b as u64])?;
            match fit_mfpca(&sample, cfg) {
                Ok(refit) => Ok(refit.rho_w),
                Err(MfpcaError::NoVariance) => Ok(0.0),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut sorted = replicates.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(BootstrapResult {
        hypothesis,
        point: fit.rho_w,
        lo: quantile(&sorted, 0.025),
        hi: quantile(&sorted, 0.975),
        replicates,
    })
}
