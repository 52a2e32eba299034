//! Logistic regression of a binary outcome on subject-level scores and
//! adjustment covariates, fitted by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::eigen::EigenSystem;
use crate::error::{MfpcaError, Result};
use crate::grid::Curve;

const MAX_ITER: usize = 100;
const TOL: f64 = 1e-10;
const SEPARATION_CHECK_AFTER: usize = 25;
const MAX_ETA: f64 = 30.0;
const MAX_STEP: f64 = 10.0;

/// An adjustment variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Covariate {
    Numeric { name: String, values: Vec<f64> },
    /// Encoded with indicators; the first level seen is the reference.
    Categorical { name: String, values: Vec<String> },
}

impl Covariate {
    fn len(&self) -> usize {
        match self {
            Covariate::Numeric { values, .. } => values.len(),
            Covariate::Categorical { values, .. } => values.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSpec {
    /// 0/1 responses.
    pub outcome: Vec<f64>,
    pub score_names: Vec<String>,
    /// One column per score component.
    pub scores: Vec<Vec<f64>>,
    pub covariates: Vec<Covariate>,
    /// Report coefficients per standard deviation of each score column.
    pub standardize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
    pub odds_ratio: f64,
    pub or_lo: f64,
    pub or_hi: f64,
    /// Estimate times the column standard deviation, for score terms.
    pub standardized: Option<f64>,
}

impl Term {
    /// Two-sided significance at level 0.05.
    pub fn significant(&self) -> bool {
        self.p_value < 0.05
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    /// Intercept first, then scores, then covariate terms.
    pub terms: Vec<Term>,
    pub log_likelihood: f64,
    /// Log-likelihood after each iteration, starting from the zero fit.
    pub log_likelihood_path: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub fitted: Vec<f64>,
    pub n_scores: usize,
}

impl RegressionFit {
    pub fn coefficients(&self) -> Vec<f64> {
        self.terms.iter().map(|t| t.estimate).collect()
    }

    pub fn score_coefficients(&self) -> Vec<f64> {
        self.terms[1..=self.n_scores].iter().map(|t| t.estimate).collect()
    }
}

pub fn odds_ratio(beta: f64) -> f64 {
    beta.exp()
}

/// Coefficient per standard deviation of its covariate.
pub fn standardize_coef(beta: f64, score_sd: f64) -> Result<f64> {
    if !(score_sd > 0.0 && score_sd.is_finite()) {
        return Err(MfpcaError::InvalidArgument(format!("score sd must be positive, got {score_sd}")));
    }
    Ok(beta * score_sd)
}

/// `beta(t) = sum_k beta_k phi_k(t)` over the retained level-1 eigenfunctions.
pub fn reconstruct_beta_curve(betas: &[f64], level1: &EigenSystem) -> Result<Curve> {
    let phi = level1.selected_functions();
    if betas.len() != phi.len() || phi.is_empty() {
        return Err(MfpcaError::ShapeError(format!("{} coefficients for {} eigenfunctions", betas.len(), phi.len())));
    }
    let grid = phi[0].grid().clone();
    let mut values = vec![0.0; grid.len()];
    for (b, f) in betas.iter().zip(phi) {
        for (v, p) in values.iter_mut().zip(f.values()) {
            *v += b * p;
        }
    }
    Curve::new(grid, values)
}

fn sd(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn design(spec: &RegressionSpec) -> Result<(DMatrix<f64>, Vec<String>)> {
    let n = spec.outcome.len();
    if spec.score_names.len() != spec.scores.len() {
        return Err(MfpcaError::ShapeError("score names and columns differ in number".into()));
    }
    if spec.scores.iter().any(|c| c.len() != n) || spec.covariates.iter().any(|c| c.len() != n) {
        return Err(MfpcaError::ShapeError("all columns must have one row per outcome".into()));
    }
    if spec.outcome.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(MfpcaError::InvalidArgument("outcome must be 0 or 1".into()));
    }
    let mut names = vec!["(intercept)".to_string()];
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
    for (name, col) in spec.score_names.iter().zip(&spec.scores) {
        if col.iter().any(|v| !v.is_finite()) {
            return Err(MfpcaError::InvalidArgument(format!("score column '{name}' has non-finite values")));
        }
        if col.iter().all(|&v| v == col[0]) {
            return Err(MfpcaError::InvalidArgument(format!("score column '{name}' is constant")));
        }
        names.push(name.clone());
        cols.push(col.clone());
    }
    for cov in &spec.covariates {
        match cov {
            Covariate::Numeric { name, values } => {
                names.push(name.clone());
                cols.push(values.clone());
            }
            Covariate::Categorical { name, values } => {
                let mut levels: Vec<&String> = Vec::new();
                for v in values {
                    if !levels.contains(&v) {
                        levels.push(v);
                    }
                }
                for level in levels.iter().skip(1) {
                    names.push(format!("{name}={level}"));
                    cols.push(values.iter().map(|v| if v == *level { 1.0 } else { 0.0 }).collect());
                }
            }
        }
    }
    let p = cols.len();
    if n < p + 1 {
        return Err(MfpcaError::InsufficientData(format!("{n} rows for {p} coefficients")));
    }
    Ok((DMatrix::from_fn(n, p, |r, c| cols[c][r]), names))
}

fn check_rank(x: &DMatrix<f64>) -> Result<()> {
    let mut scaled = x.clone();
    for mut col in scaled.column_iter_mut() {
        let norm = col.norm();
        if norm == 0.0 {
            return Err(MfpcaError::RankDeficient);
        }
        col /= norm;
    }
    let sv = scaled.singular_values();
    let max = sv.max();
    if sv.min() <= 1e-10 * max {
        return Err(MfpcaError::RankDeficient);
    }
    Ok(())
}

fn log_likelihood(y: &[f64], eta: &DVector<f64>) -> f64 {
    // log(1 + e^eta) evaluated without overflow.
    y.iter().zip(eta.iter()).map(|(&y, &e)| y * e - (e.max(0.0) + (-e.abs()).exp().ln_1p())).sum()
}

fn sigmoid(e: f64) -> f64 {
    1.0 / (1.0 + (-e).exp())
}

pub fn fit_logistic(spec: &RegressionSpec) -> Result<RegressionFit> {
    let (x, names) = design(spec)?;
    check_rank(&x)?;
    let y = &spec.outcome;
    let (n, p) = x.shape();
    let mut beta = DVector::zeros(p);
    let mut eta = &x * &beta;
    let mut ll = log_likelihood(y, &eta);
    let mut path = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        let prob: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let w: Vec<f64> = prob.iter().map(|q| q * (1.0 - q)).collect();
        let resid = DVector::from_iterator(n, y.iter().zip(&prob).map(|(y, q)| y - q));
        let mut xw = x.clone();
        for (r, mut row) in xw.row_iter_mut().enumerate() {
            row *= w[r];
        }
        let info = x.tr_mul(&xw);
        let chol = info.cholesky().ok_or(MfpcaError::SeparationDetected)?;
        let step = chol.solve(&x.tr_mul(&resid));
        let mut scale = 1.0;
        let (new_beta, new_eta, new_ll) = loop {
            let b = &beta + &step * scale;
            let e = &x * &b;
            let l = log_likelihood(y, &e);
            if l >= ll || scale < 1e-9 {
                break (b, e, l);
            }
            scale *= 0.5;
        };
        let step_size = (&new_beta - &beta).amax();
        let change = (new_ll - ll).abs() / (ll.abs() + TOL);
        beta = new_beta;
        eta = new_eta;
        ll = new_ll;
        path.push(ll);
        if iterations >= SEPARATION_CHECK_AFTER && (eta.amax() > MAX_ETA || step_size > MAX_STEP) {
            return Err(MfpcaError::SeparationDetected);
        }
        if change < TOL && step_size <= 1e-8 * beta.amax().max(1e-8) {
            converged = true;
            break;
        }
    }
    if eta.amax() > MAX_ETA {
        return Err(MfpcaError::SeparationDetected);
    }
    let fitted: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
    let mut xw = x.clone();
    for (r, mut row) in xw.row_iter_mut().enumerate() {
        row *= fitted[r] * (1.0 - fitted[r]);
    }
    let cov = x.tr_mul(&xw).try_inverse().ok_or(MfpcaError::SeparationDetected)?;
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let zq = normal.inverse_cdf(0.975);
    let n_scores = spec.scores.len();
    let terms = names
        .into_iter()
        .enumerate()
        .map(|(c, name)| {
            let estimate = beta[c];
            let se = cov[(c, c)].sqrt();
            let z = estimate / se;
            let standardized = if spec.standardize && (1..=n_scores).contains(&c) {
                Some(estimate * sd(&spec.scores[c - 1]))
            } else {
                None
            };
            Term {
                name,
                estimate,
                se,
                z,
                p_value: 2.0 * normal.cdf(-z.abs()),
                odds_ratio: odds_ratio(estimate),
                or_lo: odds_ratio(estimate - zq * se),
                or_hi: odds_ratio(estimate + zq * se),
                standardized,
            }
        })
        .collect();
    Ok(RegressionFit { terms, log_likelihood: ll, log_likelihood_path: path, iterations, converged, fitted, n_scores })
}
