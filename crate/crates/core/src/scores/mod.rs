//! Principal component scores.
//!
//! Two mixed models are offered. The full model (PC-F) treats every grid
//! value of a centered curve as an observation,
//! `Y_ij(t_s) = sum_k xi_ik phi_k(t_s) + sum_l zeta_ijl psi_l(t_s) + e_ijs`.
//! The projection model (PC-P) works with the integrals of the centered curve
//! against each eigenfunction,
//!
//! ```text
//! A_ij = xi_i + C zeta_ij + e1_ij,    e1_ij ~ N(0, s1 I)
//! B_ij = C^T xi_i + zeta_ij + e2_ij,  e2_ij ~ N(0, s2 I)
//! ```
//!
//! where `C[k][l] = <phi_k, psi_l>`. Both are solved subject by subject, either
//! in closed form (the Gaussian conditional mean) or with a Gibbs sampler.

mod engine;

use std::ops::AddAssign;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use engine::GibbsConfig;
use engine::{blup, em_variances, gibbs, Block, GroupStats};

use crate::eigen::EigenSystem;
use crate::error::{MfpcaError, Result};
use crate::fit::MfpcaFit;
use crate::grid::{center, same_grid, MultilevelSample};
use crate::moments::MeanEstimate;

/// Lower bound applied to every residual variance.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Inner products between level-1 and level-2 eigenfunctions (`N1 x N2`).
#[derive(Debug, Clone, PartialEq)]
pub struct CrossProductMatrix {
    pub c: DMatrix<f64>,
}

/// Per-curve projections onto the retained eigenfunctions, indexed by slot
/// `i * J + j`; absent slots hold empty vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Projections {
    pub n_subjects: usize,
    pub n_visits: usize,
    pub mask: Vec<bool>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl Projections {
    pub fn new(n_subjects: usize, n_visits: usize, mask: Vec<bool>, a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> Result<Self> {
        let slots = n_subjects * n_visits;
        if mask.len() != slots || a.len() != slots || b.len() != slots {
            return Err(MfpcaError::ShapeError("projection arrays do not match I x J".into()));
        }
        let n1 = a.iter().zip(&mask).find(|(_, m)| **m).map(|(v, _)| v.len()).unwrap_or(0);
        let n2 = b.iter().zip(&mask).find(|(_, m)| **m).map(|(v, _)| v.len()).unwrap_or(0);
        for s in 0..slots {
            let (la, lb) = if mask[s] { (n1, n2) } else { (0, 0) };
            if a[s].len() != la || b[s].len() != lb {
                return Err(MfpcaError::ShapeError(format!("projection slot {s} has the wrong length")));
            }
            if a[s].iter().chain(&b[s]).any(|v| !v.is_finite()) {
                return Err(MfpcaError::InvalidArgument(format!("projection slot {s} is not finite")));
            }
        }
        Ok(Projections { n_subjects, n_visits, mask, a, b })
    }

    pub fn n1(&self) -> usize {
        self.a.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn n2(&self) -> usize {
        self.b.iter().map(Vec::len).max().unwrap_or(0)
    }

    fn present_visits(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_visits).filter(move |&j| self.mask[i * self.n_visits + j])
    }
}

/// Which score model produced a [`ScoreSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMethod {
    Pcp,
    Pcf,
}

impl std::str::FromStr for ScoreMethod {
    type Err = MfpcaError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pcp" => Ok(ScoreMethod::Pcp),
            "pcf" => Ok(ScoreMethod::Pcf),
            _ => Err(MfpcaError::InvalidArgument(format!("method must be pcp or pcf, got {s}"))),
        }
    }
}

/// How the residual variances are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceMode {
    /// Moment estimate only (PC-F: the fit's nugget variance).
    Moments,
    /// Moment estimate refined by EM iterations.
    Em,
    /// Given values (PC-F uses only the first).
    Fixed { sigma1_sq: f64, sigma2_sq: f64 },
}

/// Closed form or sampled posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Blup,
    Gibbs(GibbsConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreOptions {
    pub variance: VarianceMode,
    pub engine: Engine,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions { variance: VarianceMode::Em, engine: Engine::Blup }
    }
}

/// Convergence report of a sampled fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsDiagnostics {
    /// Largest split-chain potential scale reduction over all scalars.
    pub max_rhat: f64,
    pub converged: bool,
    /// Monte Carlo standard errors of the posterior means, laid out like `xi`/`zeta`.
    pub xi_mcse: Vec<Vec<f64>>,
    pub zeta_mcse: Vec<Vec<f64>>,
}

/// Estimated scores with their uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub method: ScoreMethod,
    pub n_subjects: usize,
    pub n_visits: usize,
    /// `xi[i][k]`
    pub xi: Vec<Vec<f64>>,
    /// `zeta[i * J + j][l]`, empty for absent visits.
    pub zeta: Vec<Vec<f64>>,
    pub xi_sd: Vec<Vec<f64>>,
    pub zeta_sd: Vec<Vec<f64>>,
    /// `(s1, s2)` for PC-P, `(s)` for PC-F.
    pub residual_variances: Vec<f64>,
    pub diagnostics: Option<GibbsDiagnostics>,
}

impl ScoreSet {
    pub fn n1(&self) -> usize {
        self.xi.first().map(Vec::len).unwrap_or(0)
    }

    pub fn n2(&self) -> usize {
        self.zeta.iter().map(Vec::len).max().unwrap_or(0)
    }
}

pub fn compute_c(level1: &EigenSystem, level2: &EigenSystem) -> Result<CrossProductMatrix> {
    let f1 = level1.selected_functions();
    let f2 = level2.selected_functions();
    if let (Some(a), Some(b)) = (f1.first(), f2.first()) {
        if !same_grid(a.grid(), b.grid()) {
            return Err(MfpcaError::GridMismatch);
        }
    }
    let mut c = DMatrix::zeros(f1.len(), f2.len());
    for (k, phi) in f1.iter().enumerate() {
        for (l, psi) in f2.iter().enumerate() {
            c[(k, l)] = crate::grid::inner_product(phi, psi)?;
        }
    }
    Ok(CrossProductMatrix { c })
}

/// Quadrature projections of the centered curves on the retained eigenfunctions.
pub fn project(sample: &MultilevelSample, means: &MeanEstimate, level1: &EigenSystem, level2: &EigenSystem) -> Result<Projections> {
    let grid = sample.grid();
    for f in level1.selected_functions().iter().chain(level2.selected_functions()) {
        if !same_grid(grid, f.grid()) {
            return Err(MfpcaError::GridMismatch);
        }
    }
    let centered = center(sample, &means.mu, &means.eta)?;
    let (i_n, j_n) = (sample.n_subjects(), sample.n_visits());
    let mut a = vec![Vec::new(); i_n * j_n];
    let mut b = vec![Vec::new(); i_n * j_n];
    for i in 0..i_n {
        for j in 0..j_n {
            if let Some(y) = centered.curve(i, j) {
                a[i * j_n + j] = level1.selected_functions().iter().map(|f| grid.dot(y, f.values())).collect();
                b[i * j_n + j] = level2.selected_functions().iter().map(|f| grid.dot(y, f.values())).collect();
            }
        }
    }
    Projections::new(i_n, j_n, sample.mask().to_vec(), a, b)
}

fn check_prior(lambda1: &[f64], lambda2: &[f64]) -> Result<()> {
    if lambda1.iter().chain(lambda2).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(MfpcaError::InvalidVariance("score variances must be positive".into()));
    }
    Ok(())
}

/// Moment estimates of `(s1, s2)`: the average excess of `A^2` and `B^2`
/// over their model-implied score variance, floored.
pub fn pcp_moment_variances(proj: &Projections, c: &CrossProductMatrix, lambda1: &[f64], lambda2: &[f64]) -> (f64, f64) {
    let (n1, n2) = (lambda1.len(), lambda2.len());
    let implied_a: Vec<f64> = (0..n1)
        .map(|k| lambda1[k] + (0..n2).map(|l| c.c[(k, l)].powi(2) * lambda2[l]).sum::<f64>())
        .collect();
    let implied_b: Vec<f64> = (0..n2)
        .map(|l| lambda2[l] + (0..n1).map(|k| c.c[(k, l)].powi(2) * lambda1[k]).sum::<f64>())
        .collect();
    let (mut sa, mut na, mut sb, mut nb) = (0.0, 0usize, 0.0, 0usize);
    for s in 0..proj.mask.len() {
        if !proj.mask[s] {
            continue;
        }
        for (k, v) in proj.a[s].iter().enumerate() {
            sa += v * v - implied_a[k];
            na += 1;
        }
        for (l, v) in proj.b[s].iter().enumerate() {
            sb += v * v - implied_b[l];
            nb += 1;
        }
    }
    let avg = |s: f64, n: usize| if n == 0 { VARIANCE_FLOOR } else { (s / n as f64).max(VARIANCE_FLOOR) };
    (avg(sa, na), avg(sb, nb))
}

fn pcp_blocks(proj: &Projections, c: &CrossProductMatrix, lambda1: &[f64], lambda2: &[f64]) -> Vec<Block> {
    let (n1, n2) = (lambda1.len(), lambda2.len());
    let j_n = proj.n_visits;
    (0..proj.n_subjects)
        .map(|i| {
            let visits: Vec<usize> = proj.present_visits(i).collect();
            let d = n1 + visits.len() * n2;
            let mut prior = lambda1.to_vec();
            for _ in &visits {
                prior.extend_from_slice(lambda2);
            }
            let mut ga = GroupStats { gram: DMatrix::zeros(d, d), cross: DVector::zeros(d), yy: 0.0, n: 0 };
            let mut gb = GroupStats { gram: DMatrix::zeros(d, d), cross: DVector::zeros(d), yy: 0.0, n: 0 };
            for (pos, &j) in visits.iter().enumerate() {
                let off = n1 + pos * n2;
                // Rows of A: [I_N1 | C at the visit's zeta block].
                let mut za = DMatrix::zeros(n1, d);
                for k in 0..n1 {
                    za[(k, k)] = 1.0;
                    for l in 0..n2 {
                        za[(k, off + l)] = c.c[(k, l)];
                    }
                }
                // Rows of B: [C^T | I_N2 at the visit's zeta block].
                let mut zb = DMatrix::zeros(n2, d);
                for l in 0..n2 {
                    zb[(l, off + l)] = 1.0;
                    for k in 0..n1 {
                        zb[(l, k)] = c.c[(k, l)];
                    }
                }
                let ya = DVector::from_column_slice(&proj.a[i * j_n + j]);
                let yb = DVector::from_column_slice(&proj.b[i * j_n + j]);
                ga.gram += za.tr_mul(&za);
                ga.cross += za.tr_mul(&ya);
                ga.yy += ya.norm_squared();
                ga.n += n1;
                gb.gram += zb.tr_mul(&zb);
                gb.cross += zb.tr_mul(&yb);
                gb.yy += yb.norm_squared();
                gb.n += n2;
            }
            Block { subject: i, prior, groups: vec![ga, gb] }
        })
        .collect()
}

/// Splits per-block vectors back into `xi` and `zeta` arrays.
fn unpack(
    values: &[Vec<f64>],
    n1: usize,
    n2: usize,
    n_visits: usize,
    mask: &[bool],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut xi = Vec::with_capacity(values.len());
    let mut zeta = vec![Vec::new(); values.len() * n_visits];
    for (i, v) in values.iter().enumerate() {
        xi.push(v[..n1].to_vec());
        let mut pos = 0;
        for j in 0..n_visits {
            if mask[i * n_visits + j] {
                zeta[i * n_visits + j] = v[n1 + pos * n2..n1 + (pos + 1) * n2].to_vec();
                pos += 1;
            }
        }
    }
    (xi, zeta)
}

struct Solved {
    means: Vec<Vec<f64>>,
    sds: Vec<Vec<f64>>,
    mcse: Option<Vec<Vec<f64>>>,
    variances: Vec<f64>,
    max_rhat: Option<f64>,
}

fn solve_blocks(blocks: &[Block], start: Vec<f64>, opts: &ScoreOptions) -> Result<Solved> {
    let variances = match opts.variance {
        VarianceMode::Em => em_variances(blocks, &start, VARIANCE_FLOOR, 500, 1e-9)?,
        _ => start,
    };
    match &opts.engine {
        Engine::Blup => {
            let out = blup(blocks, &variances)?;
            Ok(Solved {
                means: out.iter().map(|(m, _)| m.as_slice().to_vec()).collect(),
                sds: out.iter().map(|(_, s)| s.as_slice().to_vec()).collect(),
                mcse: None,
                variances,
                max_rhat: None,
            })
        }
        Engine::Gibbs(cfg) => {
            let s = gibbs(blocks, &variances, VARIANCE_FLOOR, cfg)?;
            let mut means = Vec::with_capacity(blocks.len());
            let mut sds = Vec::with_capacity(blocks.len());
            let mut mcse = Vec::with_capacity(blocks.len());
            let mut off = 0;
            for b in blocks {
                means.push(s.mean[off..off + b.dim()].to_vec());
                sds.push(s.sd[off..off + b.dim()].to_vec());
                mcse.push(s.mcse[off..off + b.dim()].to_vec());
                off += b.dim();
            }
            let post_var = if cfg.sample_variances { s.mean[off..].to_vec() } else { variances };
            let max_rhat = s.rhat.iter().cloned().fold(1.0, f64::max);
            Ok(Solved { means, sds, mcse: Some(mcse), variances: post_var, max_rhat: Some(max_rhat) })
        }
    }
}

fn assemble(method: ScoreMethod, solved: Solved, n1: usize, n2: usize, n_subjects: usize, n_visits: usize, mask: &[bool]) -> ScoreSet {
    let (xi, zeta) = unpack(&solved.means, n1, n2, n_visits, mask);
    let (xi_sd, zeta_sd) = unpack(&solved.sds, n1, n2, n_visits, mask);
    let diagnostics = solved.mcse.map(|m| {
        let (xi_mcse, zeta_mcse) = unpack(&m, n1, n2, n_visits, mask);
        let max_rhat = solved.max_rhat.unwrap_or(1.0);
        GibbsDiagnostics { max_rhat, converged: max_rhat <= 1.1, xi_mcse, zeta_mcse }
    });
    ScoreSet {
        method,
        n_subjects,
        n_visits,
        xi,
        zeta,
        xi_sd,
        zeta_sd,
        residual_variances: solved.variances,
        diagnostics,
    }
}

/// Scores under the projection model.
pub fn estimate_scores_pcp(
    proj: &Projections,
    c: &CrossProductMatrix,
    lambda1: &[f64],
    lambda2: &[f64],
    opts: &ScoreOptions,
) -> Result<ScoreSet> {
    check_prior(lambda1, lambda2)?;
    let (n1, n2) = (lambda1.len(), lambda2.len());
    if c.c.shape() != (n1, n2) {
        return Err(MfpcaError::ShapeError(format!(
            "C is {}x{}, expected {n1}x{n2}",
            c.c.nrows(),
            c.c.ncols()
        )));
    }
    let mismatch = (0..proj.mask.len()).any(|s| proj.mask[s] && (proj.a[s].len() != n1 || proj.b[s].len() != n2));
    if mismatch {
        return Err(MfpcaError::ShapeError("projections do not match the component counts".into()));
    }
    let start = match opts.variance {
        VarianceMode::Fixed { sigma1_sq, sigma2_sq } => {
            if !(sigma1_sq >= 0.0 && sigma2_sq >= 0.0) {
                return Err(MfpcaError::InvalidVariance("residual variances must be nonnegative".into()));
            }
            vec![sigma1_sq.max(VARIANCE_FLOOR), sigma2_sq.max(VARIANCE_FLOOR)]
        }
        _ => {
            let (s1, s2) = pcp_moment_variances(proj, c, lambda1, lambda2);
            vec![s1, s2]
        }
    };
    let blocks = pcp_blocks(proj, c, lambda1, lambda2);
    let solved = solve_blocks(&blocks, start, opts)?;
    Ok(assemble(ScoreMethod::Pcp, solved, n1, n2, proj.n_subjects, proj.n_visits, &proj.mask))
}

/// Scores under the full pointwise model.
pub fn estimate_scores_pcf(
    sample: &MultilevelSample,
    means: &MeanEstimate,
    level1: &EigenSystem,
    level2: &EigenSystem,
    sigma2: f64,
    opts: &ScoreOptions,
) -> Result<ScoreSet> {
    let lambda1 = level1.selected_values();
    let lambda2 = level2.selected_values();
    check_prior(lambda1, lambda2)?;
    if !(sigma2 >= 0.0) {
        return Err(MfpcaError::InvalidVariance("sigma2 must be nonnegative".into()));
    }
    let grid = sample.grid();
    for f in level1.selected_functions().iter().chain(level2.selected_functions()) {
        if !same_grid(grid, f.grid()) {
            return Err(MfpcaError::GridMismatch);
        }
    }
    let (n1, n2) = (lambda1.len(), lambda2.len());
    let t = grid.len();
    let phi = DMatrix::from_fn(t, n1, |s, k| level1.selected_functions()[k].values()[s]);
    let psi = DMatrix::from_fn(t, n2, |s, l| level2.selected_functions()[l].values()[s]);
    let g11 = phi.tr_mul(&phi);
    let g12 = phi.tr_mul(&psi);
    let g22 = psi.tr_mul(&psi);
    let centered = center(sample, &means.mu, &means.eta)?;
    let j_n = sample.n_visits();
    let blocks: Vec<Block> = (0..sample.n_subjects())
        .map(|i| {
            let visits: Vec<usize> = sample.present_visits(i).collect();
            let d = n1 + visits.len() * n2;
            let mut prior = lambda1.to_vec();
            let mut gram = DMatrix::zeros(d, d);
            let mut cross = DVector::zeros(d);
            let mut yy = 0.0;
            for (pos, &j) in visits.iter().enumerate() {
                prior.extend_from_slice(lambda2);
                let y = DVector::from_column_slice(centered.curve(i, j).expect("present visit"));
                let off = n1 + pos * n2;
                gram.view_mut((0, 0), (n1, n1)).add_assign(&g11);
                gram.view_mut((0, off), (n1, n2)).copy_from(&g12);
                gram.view_mut((off, 0), (n2, n1)).copy_from(&g12.transpose());
                gram.view_mut((off, off), (n2, n2)).copy_from(&g22);
                let py = phi.tr_mul(&y);
                let qy = psi.tr_mul(&y);
                for k in 0..n1 {
                    cross[k] += py[k];
                }
                for l in 0..n2 {
                    cross[off + l] = qy[l];
                }
                yy += y.norm_squared();
            }
            Block {
                subject: i,
                prior,
                groups: vec![GroupStats { gram, cross, yy, n: visits.len() * t }],
            }
        })
        .collect();
    let start = match opts.variance {
        VarianceMode::Fixed { sigma1_sq, .. } => {
            if !(sigma1_sq >= 0.0) {
                return Err(MfpcaError::InvalidVariance("residual variance must be nonnegative".into()));
            }
            vec![sigma1_sq.max(VARIANCE_FLOOR)]
        }
        _ => vec![sigma2.max(VARIANCE_FLOOR)],
    };
    let solved = solve_blocks(&blocks, start, opts)?;
    Ok(assemble(ScoreMethod::Pcf, solved, n1, n2, sample.n_subjects(), j_n, sample.mask()))
}

/// Scores for the components retained by `fit`.
pub fn estimate_scores(sample: &MultilevelSample, fit: &MfpcaFit, method: ScoreMethod, opts: &ScoreOptions) -> Result<ScoreSet> {
    match method {
        ScoreMethod::Pcf => estimate_scores_pcf(sample, &fit.means, &fit.level1, &fit.level2, fit.sigma2, opts),
        ScoreMethod::Pcp => {
            let proj = project(sample, &fit.means, &fit.level1, &fit.level2)?;
            let c = compute_c(&fit.level1, &fit.level2)?;
            estimate_scores_pcp(&proj, &c, fit.level1.selected_values(), fit.level2.selected_values(), opts)
        }
    }
}
