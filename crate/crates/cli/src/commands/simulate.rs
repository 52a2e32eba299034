use mfpca::sim::{run_replicate, ScoreErrors, SimConfig};
use rayon::prelude::*;
use serde_json::json;

use super::{DecompositionArgs, Prepare, ScoreArgs};
use crate::config::Settings;
use crate::error::{CliError, StageExt};
use crate::output::{num, Table};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// 1: Fourier bases at both levels; 2: Legendre polynomials at level 2.
    #[arg(long)]
    pub case: Option<u8>,
    /// Measurement noise standard deviation.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub visits: Option<usize>,
    /// Grid points per curve.
    #[arg(long)]
    pub grid: Option<usize>,
    #[command(flatten)]
    pub decomposition: DecompositionArgs,
    #[command(flatten)]
    pub scores: ScoreArgs,
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

pub fn run(a: Args, mut s: Settings, prepare: impl Prepare) -> Result<(), CliError> {
    let d = SimConfig::default();
    let sigma = s.get("sigma", a.sigma, d.sigma)?;
    let mut fit_cfg = a.decomposition.resolve(&mut s, "auto", sigma > 0.0)?;
    let cfg = SimConfig {
        case: s.get("case", a.case, d.case)?,
        n_subjects: s.get("subjects", a.subjects, d.n_subjects)?,
        n_visits: s.get("visits", a.visits, d.n_visits)?,
        grid_len: s.get("grid", a.grid, d.grid_len)?,
        sigma,
        seed: s.seed(),
        n_components: (fit_cfg.level1.fixed.unwrap_or(4), fit_cfg.level2.fixed.unwrap_or(4)),
    };
    fit_cfg.level1.fixed = Some(cfg.n_components.0);
    fit_cfg.level2.fixed = Some(cfg.n_components.1);
    let reps: usize = s.get("reps", a.reps, 10)?;
    if reps == 0 {
        return Err(CliError::usage("--reps must be at least 1"));
    }
    cfg.validate().stage("options")?;
    let (method, opts) = a.scores.resolve(&mut s, cfg.seed, "pcf")?;

    let mut ctx = prepare(s)?;
    let errors: Vec<ScoreErrors> = (0..reps as u64)
        .into_par_iter()
        .map(|r| run_replicate(&cfg, r, method, &fit_cfg, &opts).map(|res| res.errors))
        .collect::<Result<_, _>>()
        .stage("replicate")?;

    let (n1, n2) = cfg.n_components;
    let header = std::iter::once("replicate".to_string())
        .chain((1..=n1).map(|k| format!("level1_pc{k}")))
        .chain((1..=n2).map(|k| format!("level2_pc{k}")));
    let mut per = Table::new(header.clone());
    let mut rows = Vec::with_capacity(reps);
    for (r, e) in errors.iter().enumerate() {
        let t = e.rmse();
        let vals: Vec<f64> = t.level1.iter().chain(&t.level2).copied().collect();
        per.push(std::iter::once((r + 1).to_string()).chain(vals.iter().map(|v| num(*v))).collect());
        rows.push(vals);
    }
    let medians: Vec<f64> = (0..n1 + n2).map(|c| median(rows.iter().map(|r| r[c]).collect())).collect();
    let mut pooled = errors[0].clone();
    for e in &errors[1..] {
        pooled.merge(e);
    }
    let pooled_t = pooled.rmse();
    let pooled_v: Vec<f64> = pooled_t.level1.iter().chain(&pooled_t.level2).copied().collect();
    let agg_header = std::iter::once("aggregate".to_string()).chain(header.skip(1));
    let mut agg = Table::new(agg_header);
    agg.push(std::iter::once("median".to_string()).chain(medians.iter().map(|v| num(*v))).collect());
    agg.push(std::iter::once("pooled".to_string()).chain(pooled_v.iter().map(|v| num(*v))).collect());

    ctx.out.write_table("rmse_replicates.csv", &per)?;
    ctx.out.write_table("rmse_aggregate.csv", &agg)?;
    let summary = json!({
        "command": "simulate",
        "config": ctx.settings.effective(),
        "simulation": cfg,
        "fit_config": fit_cfg,
        "method": method,
        "replicates": reps,
        "median": { "level1": &medians[..n1], "level2": &medians[n1..] },
        "pooled": { "level1": pooled_t.level1, "level2": pooled_t.level2 },
    });
    ctx.out.write_json("simulate_summary.json", &summary)
}
