//! Per-subject Gaussian random-effects blocks shared by both score models.
//!
//! Each subject contributes `y_g = Z_g u + e_g` for one or more residual
//! groups `g`, with `u ~ N(0, diag(prior))` and `e_g ~ N(0, v_g I)`. Only the
//! sufficient statistics `Z_g^T Z_g`, `Z_g^T y_g`, `y_g^T y_g` are kept, so the
//! cost of every pass is independent of the number of grid points.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MfpcaError, Result};
use crate::rng::stream;

#[derive(Debug, Clone)]
pub(crate) struct GroupStats {
    pub gram: DMatrix<f64>,
    pub cross: DVector<f64>,
    pub yy: f64,
    pub n: usize,
}

impl GroupStats {
    fn ssr(&self, u: &DVector<f64>) -> f64 {
        let quad = u.dot(&(&self.gram * u));
        (self.yy - 2.0 * u.dot(&self.cross) + quad).max(0.0)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Block {
    pub subject: usize,
    pub prior: Vec<f64>,
    pub groups: Vec<GroupStats>,
}

pub(crate) struct Posterior {
    pub mean: DVector<f64>,
    pub chol: Cholesky<f64, Dyn>,
}

impl Posterior {
    pub fn sd(&self) -> DVector<f64> {
        self.chol.inverse().diagonal().map(|v| v.max(0.0).sqrt())
    }
}

impl Block {
    pub fn dim(&self) -> usize {
        self.prior.len()
    }

    pub fn posterior(&self, variances: &[f64]) -> Result<Posterior> {
        let d = self.dim();
        let mut p = DMatrix::from_diagonal(&DVector::from_iterator(d, self.prior.iter().map(|v| 1.0 / v)));
        let mut b = DVector::zeros(d);
        for (g, &v) in self.groups.iter().zip(variances) {
            p += &g.gram / v;
            b += &g.cross / v;
        }
        let chol = Cholesky::new(p).ok_or(MfpcaError::SingularSystem { subject: self.subject })?;
        let mean = chol.solve(&b);
        Ok(Posterior { mean, chol })
    }
}

/// Posterior means and standard deviations for every block.
pub(crate) fn blup(blocks: &[Block], variances: &[f64]) -> Result<Vec<(DVector<f64>, DVector<f64>)>> {
    blocks
        .par_iter()
        .map(|b| {
            let post = b.posterior(variances)?;
            let sd = post.sd();
            Ok((post.mean, sd))
        })
        .collect()
}

/// Fixed-point (EM) updates of the residual variances.
pub(crate) fn em_variances(blocks: &[Block], init: &[f64], floor: f64, max_iter: usize, tol: f64) -> Result<Vec<f64>> {
    let n_groups = init.len();
    let totals: Vec<usize> = (0..n_groups).map(|g| blocks.iter().map(|b| b.groups[g].n).sum()).collect();
    let mut v: Vec<f64> = init.iter().map(|x| x.max(floor)).collect();
    for _ in 0..max_iter {
        let parts: Vec<Vec<f64>> = blocks
            .par_iter()
            .map(|b| {
                let post = b.posterior(&v)?;
                let cov = post.chol.inverse();
                Ok(b.groups
                    .iter()
                    .map(|g| g.ssr(&post.mean) + (&g.gram * &cov).trace())
                    .collect())
            })
            .collect::<Result<_>>()?;
        let mut next = vec![0.0; n_groups];
        for p in &parts {
            for g in 0..n_groups {
                next[g] += p[g];
            }
        }
        let next: Vec<f64> = next
            .iter()
            .zip(&totals)
            .map(|(s, &n)| if n == 0 { floor } else { (s / n as f64).max(floor) })
            .collect();
        let change = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs() / b.max(floor))
            .fold(0.0, f64::max);
        v = next;
        if change < tol {
            break;
        }
    }
    Ok(v)
}

/// Sampler settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub chains: usize,
    pub seed: u64,
    /// Gamma prior on each residual precision (shape, rate).
    pub prior_shape: f64,
    pub prior_rate: f64,
    /// Draw the residual variances; when false they stay at their start values.
    pub sample_variances: bool,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            iterations: 2000,
            burn_in: 500,
            chains: 3,
            seed: 0,
            prior_shape: 0.01,
            prior_rate: 0.01,
            sample_variances: true,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.iterations <= self.burn_in + 1 {
            return Err(MfpcaError::InvalidArgument(
                "sampler needs at least one chain and two kept iterations".into(),
            ));
        }
        if !(self.prior_shape > 0.0 && self.prior_rate > 0.0) {
            return Err(MfpcaError::InvalidArgument("gamma prior parameters must be positive".into()));
        }
        Ok(())
    }
}

/// Summaries over the kept draws of all chains.
#[derive(Debug, Clone)]
pub(crate) struct GibbsSummary {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub mcse: Vec<f64>,
    pub rhat: Vec<f64>,
}

#[derive(Clone)]
struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(s: usize) -> Self {
        Welford { n: 0.0, mean: vec![0.0; s], m2: vec![0.0; s] }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1.0;
        for k in 0..x.len() {
            let d = x[k] - self.mean[k];
            self.mean[k] += d / self.n;
            self.m2[k] += d * (x[k] - self.mean[k]);
        }
    }

    fn var(&self, k: usize) -> f64 {
        if self.n > 1.0 {
            self.m2[k] / (self.n - 1.0)
        } else {
            0.0
        }
    }
}

struct ChainStats {
    halves: [Welford; 2],
    batches: Vec<Vec<f64>>,
}

fn draw_block(post: &Posterior, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let d = post.mean.len();
    let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let noise = post
        .chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .expect("positive definite factor");
    &post.mean + noise
}

fn run_chain(blocks: &[Block], init: &[f64], floor: f64, cfg: &GibbsConfig, chain: usize) -> Result<ChainStats> {
    let offsets: Vec<usize> = blocks
        .iter()
        .scan(0, |acc, b| {
            let o = *acc;
            *acc += b.dim();
            Some(o)
        })
        .collect();
    let n_scores: usize = blocks.iter().map(Block::dim).sum();
    let n_groups = init.len();
    let total = n_scores + n_groups;
    let kept = cfg.iterations - cfg.burn_in;
    let n_batches = kept.min(20);
    let batch_len = kept / n_batches;
    let spread = if cfg.sample_variances { [1.0, 0.5, 2.0][chain % 3] } else { 1.0 };
    let mut v: Vec<f64> = init.iter().map(|x| (x * spread).max(floor)).collect();
    let mut rngs: Vec<ChaCha8Rng> = blocks.iter().map(|b| stream(cfg.seed, &[chain as u64, b.subject as u64])).collect();
    let mut var_rng = stream(cfg.seed, &[chain as u64, u64::MAX]);
    let counts: Vec<f64> = (0..n_groups).map(|g| blocks.iter().map(|b| b.groups[g].n as f64).sum()).collect();
    let mut state = vec![0.0; total];
    let mut stats = ChainStats {
        halves: [Welford::new(total), Welford::new(total)],
        batches: vec![vec![0.0; total]; n_batches],
    };
    let mut ssr = vec![0.0; n_groups];
    for it in 0..cfg.iterations {
        ssr.iter_mut().for_each(|x| *x = 0.0);
        for (bi, b) in blocks.iter().enumerate() {
            let post = b.posterior(&v)?;
            let u = draw_block(&post, &mut rngs[bi]);
            for (g, gs) in b.groups.iter().enumerate() {
                ssr[g] += gs.ssr(&u);
            }
            state[offsets[bi]..offsets[bi] + b.dim()].copy_from_slice(u.as_slice());
        }
        if cfg.sample_variances {
            for g in 0..n_groups {
                let shape = cfg.prior_shape + 0.5 * counts[g];
                let rate = cfg.prior_rate + 0.5 * ssr[g];
                let tau: f64 = Gamma::new(shape, 1.0 / rate)
                    .map_err(|e| MfpcaError::InvalidVariance(e.to_string()))?
                    .sample(&mut var_rng);
                v[g] = (1.0 / tau).max(floor);
            }
        }
        state[n_scores..].copy_from_slice(&v);
        if it >= cfg.burn_in {
            let k = it - cfg.burn_in;
            stats.halves[if 2 * k < kept { 0 } else { 1 }].push(&state);
            let batch = (k / batch_len).min(n_batches - 1);
            for (acc, x) in stats.batches[batch].iter_mut().zip(&state) {
                *acc += x;
            }
        }
    }
    let last = kept - batch_len * (n_batches - 1);
    for (b, batch) in stats.batches.iter_mut().enumerate() {
        let len = if b == n_batches - 1 { last } else { batch_len } as f64;
        batch.iter_mut().for_each(|x| *x /= len);
    }
    Ok(stats)
}

/// Runs all chains; the output covers every score scalar in block order
/// followed by the residual variances.
pub(crate) fn gibbs(blocks: &[Block], init: &[f64], floor: f64, cfg: &GibbsConfig) -> Result<GibbsSummary> {
    cfg.validate()?;
    let chains: Vec<ChainStats> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(blocks, init, floor, cfg, c))
        .collect::<Result<_>>()?;
    let total = chains[0].halves[0].mean.len();
    let seqs: Vec<&Welford> = chains.iter().flat_map(|c| c.halves.iter()).collect();
    let m = seqs.len() as f64;
    let mut out = GibbsSummary {
        mean: vec![0.0; total],
        sd: vec![0.0; total],
        mcse: vec![0.0; total],
        rhat: vec![0.0; total],
    };
    let n_batches = (chains.len() * chains[0].batches.len()) as f64;
    for k in 0..total {
        let n_all: f64 = seqs.iter().map(|s| s.n).sum();
        let grand = seqs.iter().map(|s| s.n * s.mean[k]).sum::<f64>() / n_all;
        let within_ss: f64 = seqs.iter().map(|s| s.m2[k]).sum();
        let between_ss: f64 = seqs.iter().map(|s| s.n * (s.mean[k] - grand).powi(2)).sum();
        out.mean[k] = grand;
        out.sd[k] = ((within_ss + between_ss) / (n_all - 1.0)).max(0.0).sqrt();

        let n = seqs.iter().map(|s| s.n).fold(f64::INFINITY, f64::min);
        let w = seqs.iter().map(|s| s.var(k)).sum::<f64>() / m;
        let seq_mean = seqs.iter().map(|s| s.mean[k]).sum::<f64>() / m;
        let b = n * seqs.iter().map(|s| (s.mean[k] - seq_mean).powi(2)).sum::<f64>() / (m - 1.0);
        out.rhat[k] = if w > 0.0 {
            (((n - 1.0) / n * w + b / n) / w).sqrt()
        } else {
            1.0
        };

        let bm: Vec<f64> = chains.iter().flat_map(|c| c.batches.iter().map(move |bt| bt[k])).collect();
        let bmean = bm.iter().sum::<f64>() / n_batches;
        let bvar = bm.iter().map(|x| (x - bmean).powi(2)).sum::<f64>() / (n_batches - 1.0).max(1.0);
        out.mcse[k] = (bvar / n_batches).sqrt();
    }
    Ok(out)
}
