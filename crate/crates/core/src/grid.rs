//! Evaluation grids, curves and multilevel samples.
//!
//! Every curve in a sample lives on one shared [`SampledGrid`]. Integrals are
//! trapezoid sums over the grid, accumulated in ascending index order so that
//! results are bit-stable for identical inputs.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{MfpcaError, Result};

/// Ordered grid points on [0, 1] with trapezoid quadrature weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct SampledGrid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    points: Vec<f64>,
}

impl TryFrom<GridRepr> for SampledGrid {
    type Error = MfpcaError;
    fn try_from(r: GridRepr) -> Result<Self> {
        SampledGrid::new(r.points)
    }
}

impl From<SampledGrid> for GridRepr {
    fn from(g: SampledGrid) -> Self {
        GridRepr { points: g.points }
    }
}

impl SampledGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(MfpcaError::InvalidGrid("need at least two points".into()));
        }
        if points.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(MfpcaError::InvalidGrid("points must lie in [0, 1]".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(MfpcaError::InvalidGrid(
                "points must be strictly increasing".into(),
            ));
        }
        let n = points.len();
        let mut weights = vec![0.0; n];
        for s in 0..n - 1 {
            let h = points[s + 1] - points[s];
            weights[s] += 0.5 * h;
            weights[s + 1] += 0.5 * h;
        }
        Ok(SampledGrid { points, weights })
    }

    /// `n` equally spaced points `0, 1/(n-1), ..., 1`.
    pub fn uniform(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(MfpcaError::InvalidGrid("need at least two points".into()));
        }
        let step = (n - 1) as f64;
        Self::new((0..n).map(|m| m as f64 / step).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Quadrature of `f` over the grid.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.len());
        let mut acc = 0.0;
        for (w, v) in self.weights.iter().zip(f) {
            acc += w * v;
        }
        acc
    }

    /// Weighted inner product of two value slices on this grid.
    pub fn dot(&self, f: &[f64], g: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.len());
        debug_assert_eq!(g.len(), self.len());
        let mut acc = 0.0;
        for s in 0..self.weights.len() {
            acc += self.weights[s] * (f[s] * g[s]);
        }
        acc
    }
}

/// Two grid handles refer to the same grid when they are the same allocation
/// or carry identical points.
pub fn same_grid(a: &Arc<SampledGrid>, b: &Arc<SampledGrid>) -> bool {
    Arc::ptr_eq(a, b) || a.points == b.points
}

/// A function sampled on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    grid: Arc<SampledGrid>,
    values: Vec<f64>,
}

impl Curve {
    pub fn new(grid: Arc<SampledGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(MfpcaError::ShapeError(format!(
                "curve has {} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MfpcaError::InvalidArgument(
                "curve values must be finite".into(),
            ));
        }
        Ok(Curve { grid, values })
    }

    pub fn zeros(grid: Arc<SampledGrid>) -> Self {
        let values = vec![0.0; grid.len()];
        Curve { grid, values }
    }

    pub fn constant(grid: Arc<SampledGrid>, c: f64) -> Self {
        let values = vec![c; grid.len()];
        Curve { grid, values }
    }

    pub fn from_fn(grid: Arc<SampledGrid>, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.points().iter().map(|&t| f(t)).collect();
        Curve { grid, values }
    }

    pub fn grid(&self) -> &Arc<SampledGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.grid.dot(&self.values, &self.values).sqrt()
    }

    pub fn scaled(&self, c: f64) -> Curve {
        Curve {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }
}

/// L2 inner product `sum_s w_s f(t_s) g(t_s)`.
pub fn inner_product(f: &Curve, g: &Curve) -> Result<f64> {
    if !same_grid(&f.grid, &g.grid) {
        return Err(MfpcaError::GridMismatch);
    }
    Ok(f.grid.dot(&f.values, &g.values))
}

/// Curves indexed by (subject, visit) on a common grid, with a presence mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MultilevelSample {
    grid: Arc<SampledGrid>,
    n_subjects: usize,
    n_visits: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
    subject_labels: Vec<String>,
    visit_labels: Vec<String>,
}

impl MultilevelSample {
    /// Builds a sample from `I * J * T` row-major values (subject, visit, grid)
    /// and an `I * J` presence mask. Values at absent slots are ignored.
    pub fn new(
        grid: Arc<SampledGrid>,
        n_subjects: usize,
        n_visits: usize,
        mut values: Vec<f64>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        let t = grid.len();
        if n_subjects < 2 {
            return Err(MfpcaError::InvalidSample("need at least two subjects".into()));
        }
        if n_visits < 1 {
            return Err(MfpcaError::InvalidSample("need at least one visit".into()));
        }
        if mask.len() != n_subjects * n_visits || values.len() != n_subjects * n_visits * t {
            return Err(MfpcaError::ShapeError(
                "values or mask do not match the declared dimensions".into(),
            ));
        }
        let mut any_pair = false;
        for i in 0..n_subjects {
            let present = mask[i * n_visits..(i + 1) * n_visits]
                .iter()
                .filter(|&&m| m)
                .count();
            if present == 0 {
                return Err(MfpcaError::InvalidSample(format!(
                    "subject {i} has no observed visits"
                )));
            }
            any_pair |= present >= 2;
        }
        if !any_pair {
            return Err(MfpcaError::NoWithinPairs);
        }
        for (slot, &m) in mask.iter().enumerate() {
            let span = &mut values[slot * t..(slot + 1) * t];
            if m {
                if span.iter().any(|v| !v.is_finite()) {
                    return Err(MfpcaError::InvalidSample(format!(
                        "non-finite value for subject {} visit {}",
                        slot / n_visits,
                        slot % n_visits
                    )));
                }
            } else {
                span.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        Ok(MultilevelSample {
            grid,
            n_subjects,
            n_visits,
            values,
            mask,
            subject_labels: (1..=n_subjects).map(|i| i.to_string()).collect(),
            visit_labels: (1..=n_visits).map(|j| j.to_string()).collect(),
        })
    }

    pub fn with_labels(mut self, subjects: Vec<String>, visits: Vec<String>) -> Result<Self> {
        if subjects.len() != self.n_subjects || visits.len() != self.n_visits {
            return Err(MfpcaError::ShapeError("label count mismatch".into()));
        }
        self.subject_labels = subjects;
        self.visit_labels = visits;
        Ok(self)
    }

    pub fn grid(&self) -> &Arc<SampledGrid> {
        &self.grid
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    pub fn n_visits(&self) -> usize {
        self.n_visits
    }

    pub fn grid_len(&self) -> usize {
        self.grid.len()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn subject_labels(&self) -> &[String] {
        &self.subject_labels
    }

    pub fn visit_labels(&self) -> &[String] {
        &self.visit_labels
    }

    pub fn is_present(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.n_visits + j]
    }

    pub fn curve(&self, i: usize, j: usize) -> Option<&[f64]> {
        if !self.is_present(i, j) {
            return None;
        }
        let t = self.grid.len();
        let slot = i * self.n_visits + j;
        Some(&self.values[slot * t..(slot + 1) * t])
    }

    pub fn curve_owned(&self, i: usize, j: usize) -> Option<Curve> {
        self.curve(i, j).map(|v| Curve {
            grid: self.grid.clone(),
            values: v.to_vec(),
        })
    }

    /// Visits observed for subject `i`, in increasing order.
    pub fn present_visits(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_visits).filter(move |&j| self.is_present(i, j))
    }

    pub fn n_present(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Applies `f` to every present curve, keeping the mask.
    pub fn map_curves(&self, mut f: impl FnMut(usize, usize, &mut [f64])) -> MultilevelSample {
        let mut out = self.clone();
        let t = self.grid.len();
        for i in 0..self.n_subjects {
            for j in 0..self.n_visits {
                if self.is_present(i, j) {
                    let slot = i * self.n_visits + j;
                    f(i, j, &mut out.values[slot * t..(slot + 1) * t]);
                }
            }
        }
        out
    }
}

/// Subtracts `mu + eta[j]` from every present curve.
pub fn center(sample: &MultilevelSample, mu: &Curve, eta: &[Curve]) -> Result<MultilevelSample> {
    if !same_grid(sample.grid(), mu.grid()) || eta.iter().any(|e| !same_grid(sample.grid(), e.grid())) {
        return Err(MfpcaError::GridMismatch);
    }
    if eta.len() != sample.n_visits() {
        return Err(MfpcaError::ShapeError(format!(
            "{} visit shifts for {} visits",
            eta.len(),
            sample.n_visits()
        )));
    }
    Ok(sample.map_curves(|_, j, y| {
        for s in 0..y.len() {
            y[s] = y[s] - mu.values[s] - eta[j].values[s];
        }
    }))
}
