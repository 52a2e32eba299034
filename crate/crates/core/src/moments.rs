//! Method-of-moments estimates of the mean structure and of the total and
//! between-visit covariance surfaces.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{MfpcaError, Result};
use crate::grid::{Curve, MultilevelSample};

/// Overall mean curve and per-visit shifts from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mu: Curve,
    pub eta: Vec<Curve>,
}

impl MeanEstimate {
    /// `mu + eta[j]` evaluated on the grid.
    pub fn visit_mean(&self, j: usize) -> Vec<f64> {
        self.mu
            .values()
            .iter()
            .zip(self.eta[j].values())
            .map(|(m, e)| m + e)
            .collect()
    }
}

/// Raw covariance surfaces of the observed curves.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCov {
    /// Total covariance, `cov{Y_ij(s), Y_ij(t)}`.
    pub gt: DMatrix<f64>,
    /// Between-visit covariance, `cov{Y_ij(s), Y_ik(t)}` for `j != k`.
    pub gb: DMatrix<f64>,
}

/// Pointwise averages over present curves. Each visit mean averages only the
/// subjects observed at that visit.
pub fn estimate_means(sample: &MultilevelSample) -> Result<MeanEstimate> {
    let t = sample.grid_len();
    let mut total = vec![0.0; t];
    let mut n_total = 0usize;
    let mut visit_sums = vec![vec![0.0; t]; sample.n_visits()];
    let mut visit_counts = vec![0usize; sample.n_visits()];
    for i in 0..sample.n_subjects() {
        for j in 0..sample.n_visits() {
            if let Some(y) = sample.curve(i, j) {
                for s in 0..t {
                    total[s] += y[s];
                    visit_sums[j][s] += y[s];
                }
                n_total += 1;
                visit_counts[j] += 1;
            }
        }
    }
    if let Some(visit) = visit_counts.iter().position(|&c| c == 0) {
        return Err(MfpcaError::EmptyVisit { visit });
    }
    let mu: Vec<f64> = total.iter().map(|v| v / n_total as f64).collect();
    let grid = sample.grid().clone();
    let eta = visit_sums
        .iter()
        .zip(&visit_counts)
        .map(|(sum, &n)| {
            let shift = sum
                .iter()
                .zip(&mu)
                .map(|(v, m)| v / n as f64 - m)
                .collect();
            Curve::new(grid.clone(), shift)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MeanEstimate {
        mu: Curve::new(grid, mu)?,
        eta,
    })
}

/// Moment estimates of the total and between-visit covariance.
///
/// The total surface averages `r_ij r_ij^T` over present curves, where
/// `r_ij = Y_ij - mu - eta_j`. The between surface averages the symmetrized
/// cross products `r_ij1 r_ij2^T` over all present visit pairs `j1 < j2` of
/// the same subject. With balanced data these are the `1/(IJ)` and
/// `2/{IJ(J-1)}` formulas.
pub fn estimate_raw_cov(sample: &MultilevelSample, means: &MeanEstimate) -> Result<RawCov> {
    let t = sample.grid_len();
    if means.mu.values().len() != t || means.eta.len() != sample.n_visits() {
        return Err(MfpcaError::ShapeError(
            "mean estimate does not match the sample".into(),
        ));
    }
    let centers: Vec<Vec<f64>> = (0..sample.n_visits()).map(|j| means.visit_mean(j)).collect();

    let n_present = sample.n_present();
    let mut resid = DMatrix::<f64>::zeros(n_present, t);
    // Residuals of subjects with at least two visits, and their per-subject sums.
    let mut paired_rows = Vec::new();
    let mut sums = Vec::new();
    let mut n_pairs = 0usize;
    let mut row = 0;
    for i in 0..sample.n_subjects() {
        let first_row = row;
        let mut count = 0usize;
        for j in sample.present_visits(i) {
            let y = sample.curve(i, j).expect("present visit");
            for s in 0..t {
                resid[(row, s)] = y[s] - centers[j][s];
            }
            row += 1;
            count += 1;
        }
        if count >= 2 {
            let mut sum = vec![0.0; t];
            for r in first_row..row {
                paired_rows.push(r);
                for (s, acc) in sum.iter_mut().enumerate() {
                    *acc += resid[(r, s)];
                }
            }
            sums.push(sum);
            n_pairs += count * (count - 1) / 2;
        }
    }
    if n_pairs == 0 {
        return Err(MfpcaError::NoWithinPairs);
    }

    let mut gt = resid.tr_mul(&resid);
    gt /= n_present as f64;

    let sum_mat = DMatrix::from_fn(sums.len(), t, |r, s| sums[r][s]);
    let paired = resid.select_rows(&paired_rows);
    // sum_{j1 != j2} r_j1 r_j2^T = s s^T - sum_j r_j r_j^T
    let mut gb = sum_mat.tr_mul(&sum_mat) - paired.tr_mul(&paired);
    gb /= 2.0 * n_pairs as f64;

    Ok(RawCov {
        gt: symmetrize(&gt),
        gb: symmetrize(&gb),
    })
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}
