use std::path::PathBuf;

use mfpca::sim::{bootstrap_rho, Hypothesis};
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
    /// h1 resamples the fitted model; h0 drops the subject level.
    #[arg(long)]
    pub hypothesis: Option<String>,
    /// Number of bootstrap draws.
    #[arg(long)]
    pub n: Option<usize>,
}

pub fn run(a: Args, mut s: Settings, prepare: impl Prepare) -> Result<(), CliError> {
    let path: PathBuf = required(s.opt("summary", a.summary)?, "summary")?;
    let hypothesis: Hypothesis = s.parsed("hypothesis", a.hypothesis, "h1")?;
    let n_boot: usize = s.get("n", a.n, 200)?;
    let seed = s.seed();
    let summary = read_summary(&path)?;

    let mut ctx = prepare(s)?;
    let res = bootstrap_rho(&summary.fit, hypothesis, n_boot, seed, &summary.fit_config).stage("bootstrap")?;
    let mut table = Table::new(["draw", "rho_w"]);
    for (b, v) in res.replicates.iter().enumerate() {
        table.push(vec![(b + 1).to_string(), num(*v)]);
    }
    ctx.out.write_table("bootstrap_replicates.csv", &table)?;
    let value = json!({
        "command": "bootstrap",
        "config": ctx.settings.effective(),
        "hypothesis": res.hypothesis,
        "point": res.point,
        "lo": res.lo,
        "hi": res.hi,
        "n": n_boot,
    });
    ctx.out.write_json("bootstrap.json", &value)
}
