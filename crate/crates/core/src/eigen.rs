//! Eigenanalysis of discretized covariance operators and component selection.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{MfpcaError, Result};
use crate::grid::{Curve, SampledGrid};

/// How the two selection thresholds combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SelectionRule {
    /// Stop at the first component that reaches the cumulative threshold or
    /// whose own share falls below the individual threshold.
    #[default]
    Or,
    /// Stop only when both conditions hold at once.
    And,
}

impl std::str::FromStr for SelectionRule {
    type Err = MfpcaError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "or" => Ok(SelectionRule::Or),
            "and" => Ok(SelectionRule::And),
            _ => Err(MfpcaError::InvalidArgument(format!("selection rule must be or/and, got {s}"))),
        }
    }
}

/// Thresholds for choosing how many components to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Cumulative explained-variance target.
    pub p1: f64,
    /// Individual explained-variance floor; `None` means `1 / T`.
    pub p2: Option<f64>,
    pub rule: SelectionRule,
    /// Overrides the rule with a fixed count (capped at the positive spectrum).
    pub fixed: Option<usize>,
}

impl Default for Selection {
    fn default() -> Self {
        Selection { p1: 0.9, p2: None, rule: SelectionRule::Or, fixed: None }
    }
}

impl Selection {
    pub fn validate(&self) -> Result<()> {
        if !(self.p1 > 0.0 && self.p1 <= 1.0) {
            return Err(MfpcaError::InvalidArgument(format!("p1 must lie in (0, 1], got {}", self.p1)));
        }
        if let Some(p2) = self.p2 {
            if !(0.0..=1.0).contains(&p2) {
                return Err(MfpcaError::InvalidArgument(format!("p2 must lie in [0, 1], got {p2}")));
            }
        }
        if self.fixed == Some(0) {
            return Err(MfpcaError::InvalidArgument("a fixed component count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Ordered eigenpairs of one level together with the selection outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSystem {
    pub level: u8,
    /// All positive eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub eigenfunctions: Vec<Curve>,
    pub n_selected: usize,
    /// `lambda_k / sum(lambda)`.
    pub proportions: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl EigenSystem {
    pub fn empty(level: u8) -> Self {
        EigenSystem {
            level,
            eigenvalues: Vec::new(),
            eigenfunctions: Vec::new(),
            n_selected: 0,
            proportions: Vec::new(),
            cumulative: Vec::new(),
        }
    }

    /// Builds a system from known eigenpairs, all of them retained.
    pub fn from_parts(level: u8, eigenvalues: Vec<f64>, eigenfunctions: Vec<Curve>) -> Result<Self> {
        if eigenvalues.len() != eigenfunctions.len() {
            return Err(MfpcaError::ShapeError("eigenvalue and eigenfunction counts differ".into()));
        }
        if eigenvalues.iter().any(|v| !(*v >= 0.0)) {
            return Err(MfpcaError::InvalidVariance("eigenvalues must be nonnegative".into()));
        }
        let (proportions, cumulative) = shares(&eigenvalues);
        Ok(EigenSystem {
            level,
            n_selected: eigenvalues.len(),
            eigenvalues,
            eigenfunctions,
            proportions,
            cumulative,
        })
    }

    pub fn selected_values(&self) -> &[f64] {
        &self.eigenvalues[..self.n_selected]
    }

    pub fn selected_functions(&self) -> &[Curve] {
        &self.eigenfunctions[..self.n_selected]
    }

    /// Copy with only the first `n` components kept.
    pub fn truncated(&self, n: usize) -> EigenSystem {
        let n = n.min(self.eigenvalues.len());
        let mut out = self.clone();
        out.n_selected = n;
        out
    }

    /// Drops eigenpairs whose eigenvalue does not exceed `floor`.
    pub fn trimmed_below(mut self, floor: f64) -> EigenSystem {
        let keep = self.eigenvalues.iter().take_while(|&&v| v > floor).count();
        self.eigenvalues.truncate(keep);
        self.eigenfunctions.truncate(keep);
        let (p, c) = shares(&self.eigenvalues);
        self.proportions = p;
        self.cumulative = c;
        self.n_selected = self.n_selected.min(keep);
        self
    }

    /// `sum_k lambda_k phi_k phi_k^T` over the selected components.
    pub fn reconstruct(&self, t: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(t, t);
        for (lam, phi) in self.selected_values().iter().zip(self.selected_functions()) {
            let v = phi.values();
            for b in 0..t {
                for a in 0..t {
                    out[(a, b)] += lam * v[a] * v[b];
                }
            }
        }
        out
    }
}

fn shares(values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return (vec![0.0; values.len()], vec![0.0; values.len()]);
    }
    let props: Vec<f64> = values.iter().map(|v| v / total).collect();
    let mut acc = 0.0;
    let cum = props
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    (props, cum)
}

/// Operator eigenpairs of a covariance surface sampled on `grid`.
///
/// The symmetric problem `W^{1/2} K W^{1/2} v = lambda v` is solved with the
/// trapezoid weights `W`; eigenfunctions are `W^{-1/2} v`, so they have unit
/// quadrature norm. Nonpositive eigenvalues are discarded and every function
/// is signed so that its integral is nonnegative (ties: first nonzero value
/// positive). All positive pairs are returned with `n_selected` set to all of
/// them; call [`select_ncomp`] to choose a count.
pub fn eigendecompose(k: &DMatrix<f64>, grid: &Arc<SampledGrid>, level: u8) -> Result<EigenSystem> {
    let t = grid.len();
    if k.shape() != (t, t) {
        return Err(MfpcaError::ShapeError(format!(
            "covariance is {}x{}, grid has {t} points",
            k.nrows(),
            k.ncols()
        )));
    }
    let scale = k.amax();
    let asym = (k - k.transpose()).amax();
    if asym > 1e-8 * scale.max(1.0) {
        return Err(MfpcaError::AsymmetricInput(asym));
    }
    let sw: Vec<f64> = grid.weights().iter().map(|w| w.sqrt()).collect();
    let mut m = DMatrix::from_fn(t, t, |a, b| sw[a] * 0.5 * (k[(a, b)] + k[(b, a)]) * sw[b]);
    m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = order.first().map(|&i| eig.eigenvalues[i].abs()).unwrap_or(0.0);
    let tol = top * t as f64 * f64::EPSILON;
    let mut values = Vec::new();
    let mut functions = Vec::new();
    for &idx in &order {
        let lam = eig.eigenvalues[idx];
        if !(lam > tol) {
            break;
        }
        let mut phi: Vec<f64> = (0..t).map(|s| eig.eigenvectors[(s, idx)] / sw[s]).collect();
        let norm = grid.dot(&phi, &phi).sqrt();
        phi.iter_mut().for_each(|v| *v /= norm);
        orient(&mut phi, grid);
        values.push(lam);
        functions.push(Curve::new(grid.clone(), phi)?);
    }
    let (proportions, cumulative) = shares(&values);
    Ok(EigenSystem {
        level,
        n_selected: values.len(),
        eigenvalues: values,
        eigenfunctions: functions,
        proportions,
        cumulative,
    })
}

fn orient(phi: &mut [f64], grid: &SampledGrid) {
    let integral = grid.integrate(phi);
    let amax = phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let flip = if integral.abs() > 1e-10 * amax.max(1.0) {
        integral < 0.0
    } else {
        phi.iter()
            .find(|v| v.abs() > 1e-12 * amax)
            .is_some_and(|v| *v < 0.0)
    };
    if flip {
        phi.iter_mut().for_each(|v| *v = -*v);
    }
}

/// Number of components to keep from a descending nonnegative spectrum.
///
/// With `ρ_k` the cumulative share and `π_k` the individual share, the OR
/// rule returns the first `k` with `ρ_k >= p1` or `π_k < p2`; the AND rule
/// requires both, falling back to all positive components.
pub fn select_ncomp(eigenvalues: &[f64], p1: f64, p2: f64, rule: SelectionRule) -> Result<usize> {
    let positive = eigenvalues.iter().take_while(|&&v| v > 0.0).count();
    if positive == 0 {
        return Err(MfpcaError::NoVariance);
    }
    let (props, cum) = shares(&eigenvalues[..positive]);
    for k in 0..positive {
        let reached = cum[k] >= p1 - 1e-12;
        let negligible = props[k] < p2;
        let stop = match rule {
            SelectionRule::Or => reached || negligible,
            SelectionRule::And => reached && negligible,
        };
        if stop {
            return Ok(k + 1);
        }
    }
    Ok(positive)
}

/// Applies a [`Selection`] to a decomposed system on a grid of `t` points.
pub fn apply_selection(mut sys: EigenSystem, sel: &Selection, t: usize) -> Result<EigenSystem> {
    sel.validate()?;
    if sys.eigenvalues.is_empty() {
        sys.n_selected = 0;
        return Ok(sys);
    }
    sys.n_selected = match sel.fixed {
        Some(n) => n.min(sys.eigenvalues.len()),
        None => select_ncomp(&sys.eigenvalues, sel.p1, sel.p2.unwrap_or(1.0 / t as f64), sel.rule)?,
    };
    Ok(sys)
}

/// Share of total functional variance at the subject level.
pub fn rho_w(level1: &[f64], level2: &[f64]) -> Result<f64> {
    if level1.iter().chain(level2).any(|v| !(*v >= 0.0)) {
        return Err(MfpcaError::InvalidVariance("eigenvalues must be nonnegative".into()));
    }
    let a: f64 = level1.iter().sum();
    let b: f64 = level2.iter().sum();
    if a + b <= 0.0 {
        return Err(MfpcaError::NoVariance);
    }
    Ok(a / (a + b))
}
