use std::collections::HashMap;
use std::path::PathBuf;

use mfpca::glm::{fit_logistic, reconstruct_beta_curve, Covariate, RegressionSpec, Term};
use mfpca::MfpcaError;
use serde_json::json;

use super::{read_summary, required, Prepare};
use crate::config::Settings;
use crate::error::{CliError, StageExt};
use crate::output::{num, Table};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// summary.json written by `fit`.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// CSV with a subject_id column, the outcome and any covariates.
    #[arg(long)]
    pub outcomes: Option<PathBuf>,
    /// Name of the 0/1 outcome column.
    #[arg(long)]
    pub outcome_column: Option<String>,
    /// Columns to treat as categorical.
    #[arg(long, value_delimiter = ',')]
    pub categorical: Vec<String>,
    /// Number of leading level-1 scores to include (default: all).
    #[arg(long)]
    pub components: Option<usize>,
    /// Also report coefficients per standard deviation of each score.
    #[arg(long)]
    pub standardize: bool,
}

struct Outcomes {
    header: Vec<String>,
    rows: HashMap<String, Vec<String>>,
}

fn read_outcomes(path: &PathBuf) -> Result<Outcomes, CliError> {
    let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(io)?;
    let header: Vec<String> = rdr.headers().map_err(io)?.iter().map(str::to_string).collect();
    let id = header
        .iter()
        .position(|h| h == "subject_id")
        .ok_or_else(|| data(format!("{} has no subject_id column", path.display())))?;
    let mut rows = HashMap::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| data(format!("line {}: {e}", n + 2)))?;
        let fields: Vec<String> = rec.iter().map(str::to_string).collect();
        if rows.insert(fields[id].clone(), fields).is_some() {
            return Err(data(format!("line {}: subject '{}' repeated", n + 2, &rec[id])));
        }
    }
    Ok(Outcomes { header, rows })
}

fn data(msg: String) -> CliError {
    CliError::Stage { stage: "outcomes", source: MfpcaError::InvalidArgument(msg) }
}

fn display(t: &Term) -> String {
    format!("{:.3} ({:.3}){}", t.estimate, t.se, if t.significant() { "*" } else { "" })
}

pub fn run(a: Args, mut s: Settings, prepare: impl Prepare) -> Result<(), CliError> {
    let summary_path: PathBuf = required(s.opt("summary", a.summary)?, "summary")?;
    let outcomes_path: PathBuf = required(s.opt("outcomes", a.outcomes)?, "outcomes")?;
    let outcome_col: String = s.get("outcome-column", a.outcome_column, "outcome".to_string())?;
    let categorical: Vec<String> = s.get("categorical", (!a.categorical.is_empty()).then_some(a.categorical), Vec::new())?;
    let components = s.opt("components", a.components)?;
    let standardize = s.flag("standardize", a.standardize)?;
    let summary = read_summary(&summary_path)?;
    let table = read_outcomes(&outcomes_path)?;

    let n1 = summary.scores.n1();
    let k = components.unwrap_or(n1);
    if k == 0 || k > n1 {
        return Err(CliError::usage(format!("--components must lie in 1..={n1}")));
    }
    let col = |name: &str| table.header.iter().position(|h| h == name);
    let y_idx = col(&outcome_col).ok_or_else(|| data(format!("no outcome column '{outcome_col}'")))?;
    for c in &categorical {
        if col(c).is_none() {
            return Err(data(format!("no categorical column '{c}'")));
        }
    }

    // Subjects present in both the fit and the outcome table, in fit order.
    let mut outcome = Vec::new();
    let mut scores = vec![Vec::new(); k];
    let mut cov_raw: Vec<Vec<String>> = Vec::new();
    let cov_cols: Vec<usize> = (0..table.header.len()).filter(|&c| c != y_idx && table.header[c] != "subject_id").collect();
    for (i, label) in summary.subject_labels.iter().enumerate() {
        let Some(row) = table.rows.get(label) else { continue };
        let y: f64 = row[y_idx].parse().map_err(|_| data(format!("subject '{label}': outcome '{}' is not a number", row[y_idx])))?;
        outcome.push(y);
        for c in 0..k {
            scores[c].push(summary.scores.xi[i][c]);
        }
        cov_raw.push(cov_cols.iter().map(|&c| row[c].clone()).collect());
    }
    let mut covariates = Vec::new();
    for (m, &c) in cov_cols.iter().enumerate() {
        let name = table.header[c].clone();
        let values: Vec<String> = cov_raw.iter().map(|r| r[m].clone()).collect();
        if categorical.contains(&name) {
            covariates.push(Covariate::Categorical { name, values });
        } else {
            let nums = values
                .iter()
                .map(|v| v.parse::<f64>().map_err(|_| data(format!("column '{name}': '{v}' is not numeric (use --categorical)"))))
                .collect::<Result<Vec<_>, _>>()?;
            covariates.push(Covariate::Numeric { name, values: nums });
        }
    }
    let spec = RegressionSpec {
        outcome,
        score_names: (1..=k).map(|c| format!("xi{c}")).collect(),
        scores,
        covariates,
        standardize,
    };

    let mut ctx = prepare(s)?;
    let fit = fit_logistic(&spec).stage("regression")?;
    let level1 = summary.fit.level1.truncated(k);
    let beta = reconstruct_beta_curve(&fit.score_coefficients(), &level1).stage("beta curve")?;

    let mut coef = Table::new(["term", "estimate", "se", "z", "p_value", "odds_ratio", "or_lo", "or_hi", "standardized", "display"]);
    for t in &fit.terms {
        coef.push(vec![
            t.name.clone(),
            num(t.estimate),
            num(t.se),
            num(t.z),
            num(t.p_value),
            num(t.odds_ratio),
            num(t.or_lo),
            num(t.or_hi),
            t.standardized.map(num).unwrap_or_default(),
            display(t),
        ]);
    }
    let mut curve = Table::new(["t", "beta"]);
    for (x, b) in beta.grid().points().iter().zip(beta.values()) {
        curve.push(vec![num(*x), num(*b)]);
    }
    ctx.out.write_table("coefficients.csv", &coef)?;
    ctx.out.write_table("beta_curve.csv", &curve)?;
    let value = json!({
        "command": "regress",
        "config": ctx.settings.effective(),
        "n": spec.outcome.len(),
        "log_likelihood": fit.log_likelihood,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "terms": fit.terms,
    });
    ctx.out.write_json("regression.json", &value)
}
