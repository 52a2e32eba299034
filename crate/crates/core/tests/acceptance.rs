//! End-to-end acceptance checks. Each check prints one PASS/FAIL line; the
//! process exits nonzero if any check fails.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use mfpca::eigen::{EigenSystem, Selection};
use mfpca::fit::{fit_mfpca, fit_mfpca_with_surfaces, FitConfig, MfpcaFit};
use mfpca::glm::{fit_logistic, odds_ratio, RegressionSpec};
use mfpca::ingest::{band_power, BandSpec};
use mfpca::rng::stream;
use mfpca::scores::{
    compute_c, estimate_scores, estimate_scores_pcf, estimate_scores_pcp, project, Engine, GibbsConfig, ScoreMethod,
    ScoreOptions, ScoreSet, VarianceMode,
};
use mfpca::sim::{basis, bootstrap_rho, generate, generate_from_model, run_replicate, Hypothesis, ModelSpec, SimConfig};
use mfpca::{Curve, MeanEstimate, MultilevelSample, SampledGrid};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::Rng;
use rand_distr::StandardNormal;

const SEED: u64 = 2024;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn fixed_counts(cfg: FitConfig, n1: usize, n2: usize) -> FitConfig {
    FitConfig {
        level1: Selection { fixed: Some(n1), ..cfg.level1 },
        level2: Selection { fixed: Some(n2), ..cfg.level2 },
        ..cfg
    }
}

fn replicate_sample(cfg: &SimConfig, r: u64) -> MultilevelSample {
    let model = ModelSpec::for_case(cfg).unwrap();
    generate_from_model(&model, cfg.seed, &[r]).unwrap().0
}

fn leading(values: &[f64], k: usize) -> f64 {
    values.get(k).copied().unwrap_or(0.0)
}

fn eigenvalue_recovery() -> Outcome {
    let cfg = SimConfig { seed: SEED, ..Default::default() };
    let fits: Vec<MfpcaFit> = (0..100).map(|r| fit_mfpca(&replicate_sample(&cfg, r), &FitConfig::unsmoothed()).unwrap()).collect();
    let mut worst: f64 = 0.0;
    let mut medians = Vec::new();
    for level in [1, 2] {
        for k in 0..4 {
            let m = median(fits.iter().map(|f| leading(if level == 1 { &f.level1.eigenvalues } else { &f.level2.eigenvalues }, k)).collect());
            let truth = 0.5f64.powi(k as i32);
            worst = worst.max((m - truth).abs() / truth);
            medians.push(m);
        }
    }
    outcome(worst <= 0.15, format!("medians {:.3?}, worst relative error {:.3}", medians, worst))
}

fn smoothing_debiases() -> Outcome {
    let cfg = SimConfig { sigma: 2.0, seed: SEED, ..Default::default() };
    let mut smooth = Vec::new();
    let mut raw = Vec::new();
    for r in 0..100 {
        let s = replicate_sample(&cfg, r);
        smooth.push(leading(&fit_mfpca(&s, &FitConfig::default()).unwrap().level1.eigenvalues, 0));
        raw.push(leading(&fit_mfpca(&s, &FitConfig::unsmoothed()).unwrap().level1.eigenvalues, 0));
    }
    let (ms, mu) = (median(smooth), median(raw));
    let pass = (ms - 1.0).abs() <= 0.15 && (ms - 1.0).abs() < (mu - 1.0).abs();
    outcome(pass, format!("smoothed median {ms:.4}, unsmoothed median {mu:.4}"))
}

fn rmse_medians(case: u8, sigma: f64, method: ScoreMethod) -> (Vec<f64>, Vec<f64>) {
    let cfg = SimConfig { case, sigma, seed: SEED, ..Default::default() };
    let fit_cfg = if sigma == 0.0 { FitConfig::unsmoothed() } else { FitConfig::default() };
    let tables: Vec<_> = (0..10)
        .map(|r| run_replicate(&cfg, r, method, &fit_cfg, &ScoreOptions::default()).unwrap().errors.rmse())
        .collect();
    let col = |level: usize, k: usize| median(tables.iter().map(|t| if level == 1 { t.level1[k] } else { t.level2[k] }).collect());
    ((0..4).map(|k| col(1, k)).collect(), (0..4).map(|k| col(2, k)).collect())
}

fn table_rmse() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    let mut check = |label: &str, got: &[f64], want: &[f64], tol: f64| {
        let ok = got.iter().zip(want).all(|(g, w)| (g - w).abs() <= tol);
        pass &= ok;
        detail.push(format!("{label} {got:.3?} vs {want:.3?} ({})", if ok { "ok" } else { "off" }));
    };
    let (c1f, _) = rmse_medians(1, 0.0, ScoreMethod::Pcf);
    check("case1 PC-F s0 L1", &c1f, &[0.097, 0.146, 0.072, 0.047], 0.04);
    let (c1p, _) = rmse_medians(1, 0.0, ScoreMethod::Pcp);
    check("case1 PC-P s0 L1", &c1p, &[0.112, 0.155, 0.082, 0.049], 0.04);
    let (c2f, _) = rmse_medians(2, 2.0, ScoreMethod::Pcf);
    check("case2 PC-F s2 L1c1", &c2f[..1], &[0.415], 0.08);
    let (_, c2p) = rmse_medians(2, 2.0, ScoreMethod::Pcp);
    check("case2 PC-P s2 L2c3", &c2p[2..3], &[0.393], 0.08);
    outcome(pass, detail.join("; "))
}

fn eigenfunction_shapes() -> Outcome {
    let cfg = SimConfig { case: 2, seed: SEED, ..Default::default() };
    let grid = Arc::new(SampledGrid::uniform(101).unwrap());
    let truth: Vec<Vec<Curve>> = [1u8, 2].iter().map(|&l| (1..=4).map(|k| basis(2, l, k, &grid).unwrap()).collect()).collect();
    let mut errors = Vec::new();
    for r in 0..20 {
        let fit = fit_mfpca(&replicate_sample(&cfg, r), &FitConfig::unsmoothed()).unwrap();
        for (sys, want) in [(&fit.level1, &truth[0]), (&fit.level2, &truth[1])] {
            for (k, phi) in want.iter().enumerate() {
                let err = match sys.eigenfunctions.get(k) {
                    Some(est) => {
                        let sign = if grid.dot(est.values(), phi.values()) < 0.0 { -1.0 } else { 1.0 };
                        est.values().iter().zip(phi.values()).map(|(a, b)| (sign * a - b).abs()).fold(0.0, f64::max)
                    }
                    None => f64::INFINITY,
                };
                errors.push(err);
            }
        }
    }
    let max = errors.iter().copied().fold(0.0, f64::max);
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    let (floor_mean, floor_max) = score_covariance_floor(&cfg, &grid, &truth);
    outcome(
        max < 0.25 && mean < 0.1,
        format!("max sup-norm error {max:.4}, mean {mean:.4}; eigenvectors of the true scores' sample covariance give max {floor_max:.4}, mean {floor_mean:.4}"),
    )
}

/// Sup-norm errors obtained from the eigenvectors of the sample covariance of
/// the generated scores themselves, i.e. with no estimation error beyond the
/// finite number of subjects.
fn score_covariance_floor(cfg: &SimConfig, grid: &Arc<SampledGrid>, truth: &[Vec<Curve>]) -> (f64, f64) {
    let mut errors = Vec::new();
    for r in 0..20 {
        let (_, scores) = generate_from_model(&ModelSpec::for_case(cfg).unwrap(), cfg.seed, &[r]).unwrap();
        for (rows, basis) in [(&scores.xi, &truth[0]), (&scores.zeta, &truth[1])] {
            let n = rows.len() as f64;
            let c = DMatrix::from_fn(4, 4, |a, b| rows.iter().map(|x| x[a] * x[b]).sum::<f64>() / n);
            let eig = c.symmetric_eigen();
            let mut order: Vec<usize> = (0..4).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
            for (k, &col) in order.iter().enumerate() {
                let v = eig.eigenvectors.column(col);
                let sign = v[k].signum();
                let err = (0..grid.len())
                    .map(|s| ((0..4).map(|m| sign * v[m] * basis[m].values()[s]).sum::<f64>() - basis[k].values()[s]).abs())
                    .fold(0.0, f64::max);
                errors.push(err);
            }
        }
    }
    (errors.iter().sum::<f64>() / errors.len() as f64, errors.iter().copied().fold(0.0, f64::max))
}

/// Checks that `rec` is the positive part of `k` in the quadrature-weighted
/// inner product: both `rec` and `rec - k` have no negative (respectively
/// positive) directions, and their product vanishes.
fn is_positive_part(k: &DMatrix<f64>, rec: &DMatrix<f64>, grid: &SampledGrid, tol: f64) -> bool {
    let w: Vec<f64> = grid.weights().iter().map(|v| v.sqrt()).collect();
    let t = grid.len();
    let wt = |m: &DMatrix<f64>| DMatrix::from_fn(t, t, |a, b| w[a] * m[(a, b)] * w[b]);
    let mw = wt(k);
    let pw = wt(rec);
    let scale = mw.amax().max(1e-300);
    let rest = &mw - &pw;
    let p_min = pw.clone().symmetric_eigenvalues().min();
    let r_max = rest.clone().symmetric_eigenvalues().max();
    let cross = (&pw * &rest).amax();
    p_min >= -tol * scale && r_max <= tol * scale && cross <= tol * scale * scale
}

fn orthonormal(sys: &EigenSystem, grid: &SampledGrid, tol: f64) -> bool {
    let f = &sys.eigenfunctions;
    (0..f.len()).all(|a| (0..f.len()).all(|b| (grid.dot(f[a].values(), f[b].values()) - if a == b { 1.0 } else { 0.0 }).abs() < tol))
}

fn orthonormal_mercer() -> Outcome {
    let mut runner = TestRunner::new_with_rng(Config { cases: 48, failure_persistence: None, ..Config::default() }, proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha));
    let strategy = (1u8..=2, 0.0f64..1.5, 10usize..60, 11usize..61, any::<bool>(), any::<u64>());
    let result = runner.run(&strategy, |(case, sigma, i_n, t, smoothed, seed)| {
        let cfg = SimConfig { case, sigma, n_subjects: i_n, grid_len: t, seed, ..Default::default() };
        let (sample, _) = generate(&cfg).unwrap();
        let fit_cfg = if smoothed { FitConfig::default() } else { FitConfig::unsmoothed() };
        let (fit, surf) = fit_mfpca_with_surfaces(&sample, &fit_cfg).unwrap();
        let g = sample.grid();
        for (sys, k) in [(&fit.level1, &surf.kb), (&fit.level2, &surf.kw)] {
            prop_assert!(orthonormal(sys, g, 1e-8), "orthonormality, case {case} T {t}");
            let rec = sys.truncated(sys.eigenvalues.len()).reconstruct(t);
            prop_assert!(is_positive_part(k, &rec, g, 1e-8), "Mercer, case {case} T {t}");
        }
        Ok(())
    });
    match result {
        Ok(()) => outcome(true, "48 randomized fits"),
        Err(e) => outcome(false, format!("{e}")),
    }
}

fn cross_product_anchor() -> Outcome {
    let grid = Arc::new(SampledGrid::uniform(101).unwrap());
    let sys = |level| EigenSystem::from_parts(level, vec![1.0, 0.5, 0.25, 0.125], (1..=4).map(|k| basis(2, level, k, &grid).unwrap()).collect()).unwrap();
    let c = compute_c(&sys(1), &sys(2)).unwrap().c;
    let c23 = c[(1, 2)];
    outcome((c23 - 0.96).abs() <= 0.01, format!("c23 = {c23:.4}"))
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn min_score_correlation(x: &ScoreSet, y: &ScoreSet) -> f64 {
    let mut out = f64::INFINITY;
    for k in 0..x.n1() {
        let a: Vec<f64> = x.xi.iter().map(|r| r[k]).collect();
        let b: Vec<f64> = y.xi.iter().map(|r| r[k]).collect();
        out = out.min(correlation(&a, &b));
    }
    for l in 0..x.n2() {
        let a: Vec<f64> = x.zeta.iter().filter(|r| !r.is_empty()).map(|r| r[l]).collect();
        let b: Vec<f64> = y.zeta.iter().filter(|r| !r.is_empty()).map(|r| r[l]).collect();
        out = out.min(correlation(&a, &b));
    }
    out
}

fn method_agreement() -> Outcome {
    let mut detail = Vec::new();
    let mut pass = true;
    for (sigma, bound) in [(0.0, 0.99), (2.0, 0.90)] {
        let cfg = SimConfig { sigma, seed: SEED, ..Default::default() };
        let (sample, _) = generate(&cfg).unwrap();
        let base = if sigma == 0.0 { FitConfig::unsmoothed() } else { FitConfig::default() };
        let fit = fit_mfpca(&sample, &fixed_counts(base, 4, 4)).unwrap();
        let opts = ScoreOptions::default();
        let pcp = estimate_scores(&sample, &fit, ScoreMethod::Pcp, &opts).unwrap();
        let pcf = estimate_scores(&sample, &fit, ScoreMethod::Pcf, &opts).unwrap();
        let r = min_score_correlation(&pcp, &pcf);
        pass &= r > bound;
        detail.push(format!("sigma {sigma}: min correlation {r:.4} (need > {bound})"));
    }
    outcome(pass, detail.join("; "))
}

/// Observation `y = H u + e`, `u ~ N(0, diag(prior))`, `e ~ N(0, diag(noise))`:
/// the conditional mean in covariance form.
fn dense_conditional_mean(h: &DMatrix<f64>, prior: &[f64], noise: &[f64], y: &DVector<f64>) -> DVector<f64> {
    let lam = DMatrix::from_diagonal(&DVector::from_column_slice(prior));
    let cov = h * &lam * h.transpose() + DMatrix::from_diagonal(&DVector::from_column_slice(noise));
    let solved = cov.lu().solve(y).unwrap();
    &lam * h.transpose() * solved
}

fn scores_as_vector(s: &ScoreSet, i: usize, visits: &[usize]) -> Vec<f64> {
    let mut v = s.xi[i].clone();
    for &j in visits {
        v.extend_from_slice(&s.zeta[i * s.n_visits + j]);
    }
    v
}

fn blup_oracle() -> Outcome {
    let t = 31;
    let grid = Arc::new(SampledGrid::uniform(t).unwrap());
    let mut worst: f64 = 0.0;
    let mut gibbs_worst: f64 = 0.0;
    for (n1, n2, seed) in [(1usize, 2usize, 1u64), (2, 1, 2), (1, 1, 3), (2, 0, 4)] {
        let l1 = EigenSystem::from_parts(1, (0..n1).map(|k| 1.0 / (k + 1) as f64).collect(), (1..=n1).map(|k| basis(2, 1, k + 1, &grid).unwrap()).collect()).unwrap();
        let l2 = EigenSystem::from_parts(2, (0..n2).map(|k| 0.6 / (k + 1) as f64).collect(), (1..=n2).map(|k| basis(2, 2, k + 1, &grid).unwrap()).collect()).unwrap();
        let (i_n, j_n) = (6usize, 2usize);
        let sigma2 = 0.3;
        let mut rng = stream(seed, &[]);
        let mut mask = vec![true; i_n * j_n];
        mask[3] = false;
        let values: Vec<f64> = (0..i_n * j_n * t).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let sample = MultilevelSample::new(grid.clone(), i_n, j_n, values, mask).unwrap();
        let means = MeanEstimate { mu: Curve::zeros(grid.clone()), eta: vec![Curve::zeros(grid.clone()); j_n] };
        let fixed = ScoreOptions { variance: VarianceMode::Fixed { sigma1_sq: sigma2, sigma2_sq: 0.2 }, engine: Engine::Blup };
        let pcf = estimate_scores_pcf(&sample, &means, &l1, &l2, sigma2, &fixed).unwrap();
        let proj = project(&sample, &means, &l1, &l2).unwrap();
        let c = compute_c(&l1, &l2).unwrap();
        let fixed_p = ScoreOptions { variance: VarianceMode::Fixed { sigma1_sq: 0.05, sigma2_sq: 0.2 }, engine: Engine::Blup };
        let pcp = estimate_scores_pcp(&proj, &c, &l1.eigenvalues, &l2.eigenvalues, &fixed_p).unwrap();
        for i in 0..i_n {
            let visits: Vec<usize> = sample.present_visits(i).collect();
            let d = n1 + visits.len() * n2;
            let mut prior = l1.eigenvalues.clone();
            for _ in &visits {
                prior.extend_from_slice(&l2.eigenvalues);
            }
            // Full model: every grid value is an observation.
            let mut h = DMatrix::zeros(visits.len() * t, d);
            let mut y = DVector::zeros(visits.len() * t);
            for (p, &j) in visits.iter().enumerate() {
                for s in 0..t {
                    for k in 0..n1 {
                        h[(p * t + s, k)] = l1.eigenfunctions[k].values()[s];
                    }
                    for l in 0..n2 {
                        h[(p * t + s, n1 + p * n2 + l)] = l2.eigenfunctions[l].values()[s];
                    }
                    y[p * t + s] = sample.curve(i, j).unwrap()[s];
                }
            }
            let want = dense_conditional_mean(&h, &prior, &vec![sigma2; visits.len() * t], &y);
            for (a, b) in scores_as_vector(&pcf, i, &visits).iter().zip(want.iter()) {
                worst = worst.max((a - b).abs());
            }
            // Projection model: two blocks of integrals per visit.
            let mut h = DMatrix::zeros(visits.len() * (n1 + n2), d);
            let mut y = DVector::zeros(visits.len() * (n1 + n2));
            let mut noise = Vec::new();
            for (p, &j) in visits.iter().enumerate() {
                let row = p * (n1 + n2);
                for k in 0..n1 {
                    h[(row + k, k)] = 1.0;
                    for l in 0..n2 {
                        h[(row + k, n1 + p * n2 + l)] = c.c[(k, l)];
                    }
                    y[row + k] = proj.a[i * j_n + j][k];
                    noise.push(0.05);
                }
                for l in 0..n2 {
                    for k in 0..n1 {
                        h[(row + n1 + l, k)] = c.c[(k, l)];
                    }
                    h[(row + n1 + l, n1 + p * n2 + l)] = 1.0;
                    y[row + n1 + l] = proj.b[i * j_n + j][l];
                    noise.push(0.2);
                }
            }
            let want = dense_conditional_mean(&h, &prior, &noise, &y);
            for (a, b) in scores_as_vector(&pcp, i, &visits).iter().zip(want.iter()) {
                worst = worst.max((a - b).abs());
            }
        }
        let gibbs = ScoreOptions {
            engine: Engine::Gibbs(GibbsConfig { seed, sample_variances: false, ..GibbsConfig::default() }),
            ..fixed
        };
        let g = estimate_scores_pcf(&sample, &means, &l1, &l2, sigma2, &gibbs).unwrap();
        let diag = g.diagnostics.as_ref().unwrap();
        for i in 0..i_n {
            for k in 0..n1 {
                gibbs_worst = gibbs_worst.max((g.xi[i][k] - pcf.xi[i][k]).abs() / diag.xi_mcse[i][k]);
            }
            for j in sample.present_visits(i) {
                let slot = i * j_n + j;
                for l in 0..n2 {
                    gibbs_worst = gibbs_worst.max((g.zeta[slot][l] - pcf.zeta[slot][l]).abs() / diag.zeta_mcse[slot][l]);
                }
            }
        }
    }
    outcome(worst <= 1e-8 && gibbs_worst <= 3.0, format!("max BLUP deviation {worst:.2e}, max Gibbs deviation {gibbs_worst:.2} MCSE"))
}

fn bootstrap_calibration() -> Outcome {
    let cfg = SimConfig { seed: SEED, ..Default::default() };
    let fit_cfg = FitConfig::unsmoothed();
    let mut covered = 0;
    for r in 0..100u64 {
        let fit = fit_mfpca(&replicate_sample(&cfg, r), &fit_cfg).unwrap();
        let boot = bootstrap_rho(&fit, Hypothesis::H1, 200, SEED + 1 + r, &fit_cfg).unwrap();
        covered += boot.covers(0.5) as usize;
    }
    let mut null_model = ModelSpec::for_case(&cfg).unwrap();
    null_model.lambda1.clear();
    null_model.phi1.clear();
    let (null_sample, _) = generate_from_model(&null_model, SEED, &[1000]).unwrap();
    let null_fit = fit_mfpca(&null_sample, &fit_cfg).unwrap();
    let h0 = bootstrap_rho(&null_fit, Hypothesis::H0, 200, SEED, &fit_cfg).unwrap();
    outcome(covered >= 90 && h0.hi < 0.15, format!("H1 coverage {covered}/100; H0 interval [{:.4}, {:.4}]", h0.lo, h0.hi))
}

fn band_power_anchors() -> Outcome {
    let rate = 125.0;
    let spec = BandSpec::eeg(rate);
    let tone = |f: f64, amp: f64| -> Vec<f64> { (0..(rate as usize * 300)).map(|i| amp * (2.0 * PI * f * i as f64 / rate).sin()).collect() };
    let delta = band_power(&tone(2.0, 1.0), &spec, "delta").unwrap();
    let alpha = band_power(&tone(10.0, 1.0), &spec, "delta").unwrap();
    let low = delta.values.iter().map(|v| v.unwrap()).fold(1.0, f64::min);
    let high = alpha.values.iter().map(|v| v.unwrap()).fold(0.0, f64::max);
    // Direct transform of the first window as a cross-check.
    let n = 3750;
    let x = &tone(2.0, 1.0)[..n];
    let band = |lo: f64, hi: f64| -> f64 {
        (0..=n / 2)
            .filter(|&k| (lo..=hi).contains(&(k as f64 * rate / n as f64)))
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (m, v) in x.iter().enumerate() {
                    let a = -2.0 * PI * ((k * m) % n) as f64 / n as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                re * re + im * im
            })
            .sum()
    };
    let direct = band(0.8, 4.0) / (band(0.8, 4.0) + band(4.1, 8.0) + band(8.1, 13.0) + band(13.1, 20.0));
    let direct_ok = (direct - delta.values[0].unwrap()).abs() < 1e-10;
    let mixed: Vec<f64> = tone(2.0, 1.0).iter().zip(tone(6.0, 0.7)).map(|(a, b)| a + b + 0.3 * (a * 7.0).sin()).collect();
    let scaled: Vec<f64> = mixed.iter().map(|v| -37.5 * v).collect();
    let a = band_power(&mixed, &spec, "delta").unwrap();
    let b = band_power(&scaled, &spec, "delta").unwrap();
    let invariance = a.values.iter().zip(&b.values).map(|(p, q)| (p.unwrap() - q.unwrap()).abs()).fold(0.0, f64::max);
    let constant = band_power(&vec![3.0; rate as usize * 300], &spec, "delta").unwrap();
    let undefined = constant.undefined.len() == constant.n_windows() && constant.check_defined().is_err();
    let pass = low >= 0.99 && high <= 0.01 && direct_ok && invariance < 1e-10 && undefined;
    outcome(pass, format!("2 Hz min {low:.5}, 10 Hz max {high:.2e}, direct-DFT match {direct_ok}, amplitude drift {invariance:.1e}, constant undefined {undefined}"))
}

fn glm_recovery() -> Outcome {
    let (b0, b1) = (-1.0, 0.8);
    let mut hits = [0usize; 2];
    for r in 0..100u64 {
        let mut rng = stream(SEED, &[r]);
        let x: Vec<f64> = (0..20000).map(|_| rng.sample(StandardNormal)).collect();
        let y = x.iter().map(|&v| if rng.random::<f64>() < 1.0 / (1.0 + (-(b0 + b1 * v)).exp()) { 1.0 } else { 0.0 }).collect();
        let spec = RegressionSpec { outcome: y, score_names: vec!["xi1".into()], scores: vec![x], covariates: vec![], standardize: false };
        let fit = fit_logistic(&spec).unwrap();
        for (c, truth) in [b0, b1].iter().enumerate() {
            hits[c] += ((fit.terms[c].estimate - truth).abs() <= 2.0 * fit.terms[c].se) as usize;
        }
    }
    let or = format!("{:.3}", odds_ratio(-1.59));
    let pass = hits.iter().all(|&h| h >= 95) && or == "0.204";
    outcome(pass, format!("within 2 SE: intercept {}/100, slope {}/100; exp(-1.59) = {or}", hits[0], hits[1]))
}

fn scale_test() -> Outcome {
    let start = Instant::now();
    let cfg = SimConfig { n_subjects: 10000, sigma: 1.0, seed: SEED, ..Default::default() };
    let (sample, _) = generate(&cfg).unwrap();
    let result = fit_mfpca(&sample, &FitConfig::default())
        .and_then(|fit| estimate_scores(&sample, &fit, ScoreMethod::Pcp, &ScoreOptions::default()).map(|s| (fit, s)));
    let elapsed = start.elapsed().as_secs_f64();
    match result {
        Ok((fit, scores)) => outcome(
            elapsed < 600.0,
            format!("{} curves in {elapsed:.1} s, {} + {} components, {} score rows", sample.n_present(), fit.level1.n_selected, fit.level2.n_selected, scores.xi.len()),
        ),
        Err(e) => outcome(false, format!("error after {elapsed:.1} s: {e}")),
    }
}

fn main() {
    let checks: [(&str, fn() -> Outcome); 12] = [
        ("eigenvalue recovery without noise", eigenvalue_recovery),
        ("smoothing removes noise bias", smoothing_debiases),
        ("score RMSE against reference values", table_rmse),
        ("eigenfunction shape recovery", eigenfunction_shapes),
        ("orthonormality and Mercer reconstruction", orthonormal_mercer),
        ("cross-product anchor", cross_product_anchor),
        ("PC-P and PC-F agreement", method_agreement),
        ("BLUP matches dense oracle, Gibbs matches BLUP", blup_oracle),
        ("bootstrap calibration", bootstrap_calibration),
        ("band-power anchors", band_power_anchors),
        ("logistic regression recovery", glm_recovery),
        ("scale test", scale_test),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (n, (name, check)) in checks.iter().enumerate() {
        if only.is_some_and(|o| o != n + 1) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        let status = if o.pass { "PASS" } else { "FAIL" };
        failed += !o.pass as usize;
        println!("{status} [{:>2}] {name}: {} ({:.1} s)", n + 1, o.detail, start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}
