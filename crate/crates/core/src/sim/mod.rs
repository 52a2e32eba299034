//! Simulated multilevel curves with known principal components, score
//! errors against the truth, and the parametric bootstrap for the
//! subject-level variance share.
//!
//! Curves follow
//! `Y_ij(t) = mu(t) + eta_j(t) + sum_k xi_ik phi_k(t) + sum_l zeta_ijl psi_l(t) + e_ij(t)`
//! with independent Gaussian scores and pointwise Gaussian noise.

mod bootstrap;

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MfpcaError, Result};
use crate::grid::{Curve, MultilevelSample, SampledGrid};
use crate::rng::stream;
use crate::eigen::Selection;
use crate::fit::{fit_mfpca, FitConfig, MfpcaFit};
use crate::scores::{estimate_scores, ScoreMethod, ScoreOptions, ScoreSet};

pub use bootstrap::{bootstrap_rho, BootstrapResult, Hypothesis};

/// Settings for one simulated data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// 1: Fourier bases at both levels; 2: shifted Legendre polynomials at level 2.
    pub case: u8,
    pub n_subjects: usize,
    pub n_visits: usize,
    pub grid_len: usize,
    pub sigma: f64,
    pub seed: u64,
    pub n_components: (usize, usize),
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { case: 1, n_subjects: 200, n_visits: 2, grid_len: 101, sigma: 0.0, seed: 0, n_components: (4, 4) }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.case == 1 || self.case == 2) {
            return Err(MfpcaError::InvalidArgument(format!("case must be 1 or 2, got {}", self.case)));
        }
        if self.n_subjects < 2 || self.n_visits < 1 || self.grid_len < 9 {
            return Err(MfpcaError::InvalidArgument("need I >= 2, J >= 1 and T >= 9".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(MfpcaError::InvalidArgument("sigma must be >= 0".into()));
        }
        let (n1, n2) = self.n_components;
        if !(1..=4).contains(&n1) || n2 > 4 {
            return Err(MfpcaError::IndexError("component counts must lie in 1..=4 (level 2 may be 0)".into()));
        }
        Ok(())
    }

    pub fn eigenvalues(n: usize) -> Vec<f64> {
        (0..n).map(|k| 0.5f64.powi(k as i32)).collect()
    }
}

/// The `k`-th (1-based) eigenfunction of a simulation case and level.
pub fn basis(case: u8, level: u8, k: usize, grid: &Arc<SampledGrid>) -> Result<Curve> {
    if !(1..=4).contains(&k) {
        return Err(MfpcaError::IndexError(format!("basis index {k} outside 1..=4")));
    }
    if !(case == 1 || case == 2) || !(level == 1 || level == 2) {
        return Err(MfpcaError::IndexError(format!("no basis for case {case}, level {level}")));
    }
    let r2 = 2f64.sqrt();
    let fourier = move |base: f64, t: f64| {
        let freq = (base + 2.0 * ((k - 1) / 2) as f64) * PI;
        if k % 2 == 1 {
            r2 * (freq * t).sin()
        } else {
            r2 * (freq * t).cos()
        }
    };
    let f: Box<dyn Fn(f64) -> f64> = match (case, level) {
        (_, 1) => Box::new(move |t| fourier(2.0, t)),
        (1, _) => Box::new(move |t| fourier(6.0, t)),
        _ => Box::new(move |t| match k {
            1 => 1.0,
            2 => 3f64.sqrt() * (2.0 * t - 1.0),
            3 => 5f64.sqrt() * (6.0 * t * t - 6.0 * t + 1.0),
            _ => 7f64.sqrt() * (20.0 * t.powi(3) - 30.0 * t * t + 12.0 * t - 1.0),
        }),
    };
    Ok(Curve::from_fn(grid.clone(), f))
}

/// A fully specified generating model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub grid: Arc<SampledGrid>,
    pub mu: Vec<f64>,
    /// One shift per visit.
    pub eta: Vec<Vec<f64>>,
    pub lambda1: Vec<f64>,
    pub phi1: Vec<Curve>,
    pub lambda2: Vec<f64>,
    pub phi2: Vec<Curve>,
    pub sigma: f64,
    pub n_subjects: usize,
}

impl ModelSpec {
    pub fn for_case(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = Arc::new(SampledGrid::uniform(cfg.grid_len)?);
        let (n1, n2) = cfg.n_components;
        let phi1 = (1..=n1).map(|k| basis(cfg.case, 1, k, &grid)).collect::<Result<_>>()?;
        let phi2 = (1..=n2).map(|k| basis(cfg.case, 2, k, &grid)).collect::<Result<_>>()?;
        Ok(ModelSpec {
            mu: vec![0.0; grid.len()],
            eta: vec![vec![0.0; grid.len()]; cfg.n_visits],
            lambda1: SimConfig::eigenvalues(n1),
            phi1,
            lambda2: SimConfig::eigenvalues(n2),
            phi2,
            sigma: cfg.sigma,
            n_subjects: cfg.n_subjects,
            grid,
        })
    }

    pub fn n_visits(&self) -> usize {
        self.eta.len()
    }

    fn validate(&self) -> Result<()> {
        let t = self.grid.len();
        if self.mu.len() != t || self.eta.iter().any(|e| e.len() != t) {
            return Err(MfpcaError::ShapeError("mean curves do not match the grid".into()));
        }
        if self.lambda1.len() != self.phi1.len() || self.lambda2.len() != self.phi2.len() {
            return Err(MfpcaError::ShapeError("eigenvalue and eigenfunction counts differ".into()));
        }
        if self.lambda1.iter().chain(&self.lambda2).any(|v| !(*v >= 0.0)) || !(self.sigma >= 0.0) {
            return Err(MfpcaError::InvalidVariance("variances must be nonnegative".into()));
        }
        Ok(())
    }
}

/// The scores behind a simulated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    /// `xi[i][k]`
    pub xi: Vec<Vec<f64>>,
    /// `zeta[i * J + j][l]`
    pub zeta: Vec<Vec<f64>>,
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub case: Option<u8>,
}

/// Draws a balanced sample from `model`. Subject `i` uses the stream keyed by
/// `keys ++ [i]`, so output does not depend on how work is scheduled.
pub fn generate_from_model(model: &ModelSpec, seed: u64, keys: &[u64]) -> Result<(MultilevelSample, SimTruth)> {
    model.validate()?;
    let t = model.grid.len();
    let j_n = model.n_visits();
    let sd1: Vec<f64> = model.lambda1.iter().map(|v| v.sqrt()).collect();
    let sd2: Vec<f64> = model.lambda2.iter().map(|v| v.sqrt()).collect();
    let subjects: Vec<(Vec<f64>, Vec<Vec<f64>>, Vec<f64>)> = (0..model.n_subjects)
        .into_par_iter()
        .map(|i| {
            let mut path = keys.to_vec();
            path.push(i as u64);
            let mut rng = stream(seed, &path);
            let xi: Vec<f64> = sd1.iter().map(|s| s * rng.sample::<f64, _>(StandardNormal)).collect();
            let mut subject_part = vec![0.0; t];
            for (x, phi) in xi.iter().zip(&model.phi1) {
                for (acc, p) in subject_part.iter_mut().zip(phi.values()) {
                    *acc += x * p;
                }
            }
            let mut zetas = Vec::with_capacity(j_n);
            let mut vals = Vec::with_capacity(j_n * t);
            for j in 0..j_n {
                let zeta: Vec<f64> = sd2.iter().map(|s| s * rng.sample::<f64, _>(StandardNormal)).collect();
                for s in 0..t {
                    let mut v = model.mu[s] + model.eta[j][s] + subject_part[s];
                    for (z, psi) in zeta.iter().zip(&model.phi2) {
                        v += z * psi.values()[s];
                    }
                    if model.sigma > 0.0 {
                        v += model.sigma * rng.sample::<f64, _>(StandardNormal);
                    }
                    vals.push(v);
                }
                zetas.push(zeta);
            }
            (xi, zetas, vals)
        })
        .collect();
    let mut values = Vec::with_capacity(model.n_subjects * j_n * t);
    let mut xi = Vec::with_capacity(model.n_subjects);
    let mut zeta = Vec::with_capacity(model.n_subjects * j_n);
    for (x, z, v) in subjects {
        xi.push(x);
        zeta.extend(z);
        values.extend(v);
    }
    let sample = MultilevelSample::new(model.grid.clone(), model.n_subjects, j_n, values, vec![true; model.n_subjects * j_n])?;
    let truth = SimTruth { xi, zeta, lambda1: model.lambda1.clone(), lambda2: model.lambda2.clone(), case: None };
    Ok((sample, truth))
}

/// Simulated data set for one of the two cases.
pub fn generate(cfg: &SimConfig) -> Result<(MultilevelSample, SimTruth)> {
    let model = ModelSpec::for_case(cfg)?;
    let (sample, mut truth) = generate_from_model(&model, cfg.seed, &[])?;
    truth.case = Some(cfg.case);
    Ok((sample, truth))
}

/// Accumulated squared score errors; merge several data sets, then take
/// [`ScoreErrors::rmse`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreErrors {
    pub sse1: Vec<f64>,
    pub n1: Vec<usize>,
    pub sse2: Vec<f64>,
    pub n2: Vec<usize>,
}

/// Per-component RMSE at both levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseTable {
    pub level1: Vec<f64>,
    pub level2: Vec<f64>,
}

impl ScoreErrors {
    pub fn merge(&mut self, other: &ScoreErrors) {
        fn add<T: Copy + std::ops::AddAssign + Default>(a: &mut Vec<T>, b: &[T]) {
            if a.len() < b.len() {
                a.resize(b.len(), T::default());
            }
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
        add(&mut self.sse1, &other.sse1);
        add(&mut self.n1, &other.n1);
        add(&mut self.sse2, &other.sse2);
        add(&mut self.n2, &other.n2);
    }

    pub fn rmse(&self) -> RmseTable {
        let r = |s: &[f64], n: &[usize]| s.iter().zip(n).map(|(s, &n)| if n == 0 { f64::NAN } else { (s / n as f64).sqrt() }).collect();
        RmseTable { level1: r(&self.sse1, &self.n1), level2: r(&self.sse2, &self.n2) }
    }
}

fn aligned_sse(pairs: &[(f64, f64)]) -> f64 {
    let cross: f64 = pairs.iter().map(|(e, t)| e * t).sum();
    let sign = if cross < 0.0 { -1.0 } else { 1.0 };
    pairs.iter().map(|(e, t)| (sign * e - t).powi(2)).sum()
}

/// Squared errors of `estimated` against `truth`, component by component,
/// after flipping each estimated component to agree in sign with the truth.
pub fn score_errors(estimated: &ScoreSet, truth: &SimTruth) -> Result<ScoreErrors> {
    if estimated.xi.len() != truth.xi.len() || estimated.zeta.len() != truth.zeta.len() {
        return Err(MfpcaError::ShapeError("score arrays cover different units".into()));
    }
    let n1 = estimated.n1();
    let n2 = estimated.n2();
    if truth.xi.iter().any(|x| x.len() < n1) || truth.zeta.iter().any(|z| z.len() < n2) {
        return Err(MfpcaError::ShapeError("more estimated components than true ones".into()));
    }
    let mut out = ScoreErrors { sse1: vec![0.0; n1], n1: vec![0; n1], sse2: vec![0.0; n2], n2: vec![0; n2] };
    for k in 0..n1 {
        let pairs: Vec<(f64, f64)> = estimated.xi.iter().zip(&truth.xi).map(|(e, t)| (e[k], t[k])).collect();
        out.sse1[k] = aligned_sse(&pairs);
        out.n1[k] = pairs.len();
    }
    for l in 0..n2 {
        let pairs: Vec<(f64, f64)> = estimated
            .zeta
            .iter()
            .zip(&truth.zeta)
            .filter(|(e, _)| !e.is_empty())
            .map(|(e, t)| (e[l], t[l]))
            .collect();
        out.sse2[l] = aligned_sse(&pairs);
        out.n2[l] = pairs.len();
    }
    Ok(out)
}

pub fn rmse(estimated: &ScoreSet, truth: &SimTruth) -> Result<RmseTable> {
    Ok(score_errors(estimated, truth)?.rmse())
}

/// One simulated data set taken through the fit and the score estimation.
#[derive(Debug, Clone)]
pub struct ReplicateResult {
    pub fit: MfpcaFit,
    pub scores: ScoreSet,
    pub truth: SimTruth,
    pub errors: ScoreErrors,
}

/// Runs replicate `replicate` of `cfg`. The component counts of `cfg`
/// override the selection rules of `fit_cfg`.
pub fn run_replicate(
    cfg: &SimConfig,
    replicate: u64,
    method: ScoreMethod,
    fit_cfg: &FitConfig,
    opts: &ScoreOptions,
) -> Result<ReplicateResult> {
    let model = ModelSpec::for_case(cfg)?;
    let (sample, mut truth) = generate_from_model(&model, cfg.seed, &[replicate])?;
    truth.case = Some(cfg.case);
    let mut fit_cfg = fit_cfg.clone();
    fit_cfg.level1 = Selection { fixed: Some(cfg.n_components.0), ..fit_cfg.level1 };
    fit_cfg.level2 = Selection { fixed: Some(cfg.n_components.1), ..fit_cfg.level2 };
    let fit = fit_mfpca(&sample, &fit_cfg)?;
    let scores = estimate_scores(&sample, &fit, method, opts)?;
    let errors = score_errors(&scores, &truth)?;
    Ok(ReplicateResult { fit, scores, truth, errors })
}
