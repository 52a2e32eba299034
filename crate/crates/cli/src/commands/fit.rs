use std::path::PathBuf;

use mfpca::eigen::EigenSystem;
use mfpca::fit::{fit_mfpca, MfpcaFit};
use mfpca::ingest::{load_sample, LoadOptions};
use mfpca::scores::{estimate_scores, ScoreSet};
use mfpca::MultilevelSample;
use serde_json::json;

use super::{required, DecompositionArgs, FitSummary, Prepare, ScoreArgs};
use crate::config::{parse_range, Settings};
use crate::error::{CliError, StageExt};
use crate::output::{num, OutDir, Table};
use crate::plot::{line_chart, Series};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Long-format CSV with columns subject_id, visit_id, t, value.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Rescale t from lo:hi onto [0, 1].
    #[arg(long)]
    pub t_range: Option<String>,
    #[command(flatten)]
    pub decomposition: DecompositionArgs,
    #[command(flatten)]
    pub scores: ScoreArgs,
    /// Also write SVG plots.
    #[arg(long)]
    pub plots: bool,
}

pub fn run(a: Args, mut s: Settings, prepare: impl Prepare) -> Result<(), CliError> {
    let input: PathBuf = required(s.opt("input", a.input)?, "input")?;
    let t_range = s.opt("t-range", a.t_range)?.map(|r| parse_range(&r)).transpose()?;
    let fit_cfg = a.decomposition.resolve(&mut s, "smoothed", true)?;
    let seed = s.seed();
    let (method, opts) = a.scores.resolve(&mut s, seed, "pcp")?;
    let plots = s.flag("plots", a.plots)?;

    let mut ctx = prepare(s)?;
    let sample = load_sample(&input, &LoadOptions { t_range }).stage("load")?;
    let fit = fit_mfpca(&sample, &fit_cfg).stage("fit")?;
    let scores = estimate_scores(&sample, &fit, method, &opts).stage("scores")?;

    let out = &mut ctx.out;
    for sys in [&fit.level1, &fit.level2] {
        out.write_table(&format!("eigenvalues_level{}.csv", sys.level), &eigenvalue_table(sys))?;
        out.write_table(&format!("eigenfunctions_level{}.csv", sys.level), &eigenfunction_table(sys, &sample))?;
    }
    out.write_table("means.csv", &mean_table(&fit, &sample))?;
    out.write_table("scores_level1.csv", &level1_scores(&scores, &sample))?;
    out.write_table("scores_level2.csv", &level2_scores(&scores, &sample))?;
    if plots {
        write_plots(out, &fit, &sample)?;
    }
    let summary = FitSummary {
        command: "fit".into(),
        config: ctx.settings.effective(),
        sigma2: fit.sigma2,
        rho_w: fit.rho_w,
        n1: fit.level1.n_selected,
        n2: fit.level2.n_selected,
        selection: [fit_cfg.level1, fit_cfg.level2],
        smoother: fit_cfg.smoother.clone(),
        fit_config: fit_cfg,
        subject_labels: sample.subject_labels().to_vec(),
        visit_labels: sample.visit_labels().to_vec(),
        fit,
        scores,
    };
    let mut value = serde_json::to_value(&summary).map_err(|e| CliError::Io(e.to_string()))?;
    value["sigma2_clamped"] = json!(summary.fit.sigma2_clamped);
    if let Some(d) = &summary.scores.diagnostics {
        value["max_rhat"] = json!(d.max_rhat);
        value["converged"] = json!(d.converged);
    }
    out.write_json("summary.json", &value)
}

fn eigenvalue_table(sys: &EigenSystem) -> Table {
    let mut t = Table::new(["index", "eigenvalue", "proportion", "cumulative", "selected"]);
    for k in 0..sys.eigenvalues.len() {
        t.push(vec![
            (k + 1).to_string(),
            num(sys.eigenvalues[k]),
            num(sys.proportions[k]),
            num(sys.cumulative[k]),
            (k < sys.n_selected).to_string(),
        ]);
    }
    t
}

fn eigenfunction_table(sys: &EigenSystem, sample: &MultilevelSample) -> Table {
    let f = sys.selected_functions();
    let mut t = Table::new(std::iter::once("t".to_string()).chain((1..=f.len()).map(|k| format!("phi{k}"))));
    for (s, &x) in sample.grid().points().iter().enumerate() {
        t.push(std::iter::once(num(x)).chain(f.iter().map(|c| num(c.values()[s]))).collect());
    }
    t
}

fn mean_table(fit: &MfpcaFit, sample: &MultilevelSample) -> Table {
    let visits = sample.visit_labels();
    let mut t = Table::new(["t".to_string(), "mu".to_string()].into_iter().chain(visits.iter().map(|v| format!("eta_{v}"))));
    for (s, &x) in sample.grid().points().iter().enumerate() {
        let mut row = vec![num(x), num(fit.means.mu.values()[s])];
        row.extend(fit.means.eta.iter().map(|e| num(e.values()[s])));
        t.push(row);
    }
    t
}

fn level1_scores(scores: &ScoreSet, sample: &MultilevelSample) -> Table {
    let n1 = scores.n1();
    let header = std::iter::once("subject_id".to_string())
        .chain((1..=n1).map(|k| format!("xi{k}")))
        .chain((1..=n1).map(|k| format!("sd{k}")));
    let mut t = Table::new(header);
    for i in 0..scores.n_subjects {
        let mut row = vec![sample.subject_labels()[i].clone()];
        row.extend(scores.xi[i].iter().map(|v| num(*v)));
        row.extend(scores.xi_sd[i].iter().map(|v| num(*v)));
        t.push(row);
    }
    t
}

fn level2_scores(scores: &ScoreSet, sample: &MultilevelSample) -> Table {
    let n2 = scores.n2();
    let header = ["subject_id".to_string(), "visit_id".to_string()]
        .into_iter()
        .chain((1..=n2).map(|l| format!("zeta{l}")))
        .chain((1..=n2).map(|l| format!("sd{l}")));
    let mut t = Table::new(header);
    for i in 0..scores.n_subjects {
        for j in 0..scores.n_visits {
            let slot = i * scores.n_visits + j;
            if scores.zeta[slot].is_empty() && n2 > 0 || !sample.is_present(i, j) {
                continue;
            }
            let mut row = vec![sample.subject_labels()[i].clone(), sample.visit_labels()[j].clone()];
            row.extend(scores.zeta[slot].iter().map(|v| num(*v)));
            row.extend(scores.zeta_sd[slot].iter().map(|v| num(*v)));
            t.push(row);
        }
    }
    t
}

fn write_plots(out: &mut OutDir, fit: &MfpcaFit, sample: &MultilevelSample) -> Result<(), CliError> {
    let x = sample.grid().points();
    for sys in [&fit.level1, &fit.level2] {
        let series: Vec<Series> = sys
            .selected_functions()
            .iter()
            .enumerate()
            .map(|(k, f)| Series::new(format!("PC{}", k + 1), f.values().to_vec()))
            .collect();
        let svg = line_chart(&format!("Level {} eigenfunctions", sys.level), x, &series);
        out.write(&format!("eigenfunctions_level{}.svg", sys.level), svg.as_bytes())?;
    }
    let mu = fit.means.mu.values();
    let mut series = vec![Series::new("mu", mu.to_vec())];
    for (j, e) in fit.means.eta.iter().enumerate() {
        let label = format!("mu + eta_{}", sample.visit_labels()[j]);
        series.push(Series::new(label, mu.iter().zip(e.values()).map(|(m, v)| m + v).collect()));
    }
    out.write("means.svg", line_chart("Mean curves", x, &series).as_bytes())?;
    // Mean plus and minus two standard deviations of each subject-level component.
    for (k, (lam, phi)) in fit.level1.selected_values().iter().zip(fit.level1.selected_functions()).enumerate() {
        let c = 2.0 * lam.sqrt();
        let series = vec![
            Series::new("mu", mu.to_vec()),
            Series::new("+", mu.iter().zip(phi.values()).map(|(m, p)| m + c * p).collect()).dashed(),
            Series::new("-", mu.iter().zip(phi.values()).map(|(m, p)| m - c * p).collect()).dashed(),
        ];
        let svg = line_chart(&format!("Level 1 PC{}: mean +/- 2 sqrt(lambda) phi", k + 1), x, &series);
        out.write(&format!("mean_pc{}_level1.svg", k + 1), svg.as_bytes())?;
    }
    Ok(())
}
