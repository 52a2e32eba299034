pub mod bootstrap;
pub mod fit;
pub mod preprocess;
pub mod regress;
pub mod simulate;

use std::path::Path;

use mfpca::eigen::{Selection, SelectionRule};
use mfpca::fit::{FitConfig, MfpcaFit};
use mfpca::scores::{Engine, GibbsConfig, ScoreMethod, ScoreOptions, ScoreSet, VarianceMode};
use mfpca::smooth::{LambdaRule, SmootherConfig};
use serde::{Deserialize, Serialize};

use crate::config::Settings;
use crate::error::{CliError, StageExt};
use crate::Context;

/// Hands the resolved settings over and gets the output context back.
pub trait Prepare: FnOnce(Settings) -> Result<Context, CliError> {}
impl<F: FnOnce(Settings) -> Result<Context, CliError>> Prepare for F {}

#[derive(clap::Args, Debug, Default)]
pub struct DecompositionArgs {
    /// smoothed or unsmoothed (simulate also accepts auto: smoothed when sigma > 0).
    #[arg(long)]
    pub pipeline: Option<String>,
    /// Smoothing parameter rule: gcv, reml or fixed:<value>.
    #[arg(long)]
    pub lambda: Option<String>,
    /// B-spline basis size for mean curves.
    #[arg(long)]
    pub n_basis: Option<usize>,
    /// B-spline basis size per axis for covariance surfaces.
    #[arg(long)]
    pub surface_n_basis: Option<usize>,
    /// Cumulative explained-variance threshold.
    #[arg(long)]
    pub p1: Option<f64>,
    /// Individual explained-variance threshold (default 1/T).
    #[arg(long)]
    pub p2: Option<f64>,
    /// How the two thresholds combine: or, and.
    #[arg(long)]
    pub rule: Option<String>,
    /// Fixed number of level-1 components.
    #[arg(long)]
    pub n1: Option<usize>,
    /// Fixed number of level-2 components.
    #[arg(long)]
    pub n2: Option<usize>,
}

impl DecompositionArgs {
    /// `smoothed_default` decides `auto`.
    pub fn resolve(&self, s: &mut Settings, default_pipeline: &str, smoothed_default: bool) -> Result<FitConfig, CliError> {
        let pipeline: String = s.get("pipeline", self.pipeline.clone(), default_pipeline.to_string())?;
        let smoothed = match pipeline.as_str() {
            "smoothed" => true,
            "unsmoothed" => false,
            "auto" => smoothed_default,
            other => return Err(CliError::usage(format!("--pipeline must be smoothed, unsmoothed or auto, got '{other}'"))),
        };
        let lambda_rule: LambdaRule = s.parsed("lambda", self.lambda.clone(), "gcv")?;
        let smoother = SmootherConfig {
            n_basis: s.opt("n-basis", self.n_basis)?,
            penalty_order: 2,
            lambda_rule,
            surface_n_basis: s.opt("surface-n-basis", self.surface_n_basis)?,
        };
        let p1 = s.get("p1", self.p1, 0.9)?;
        let p2 = s.opt("p2", self.p2)?;
        let rule: SelectionRule = s.parsed("rule", self.rule.clone(), "or")?;
        let n1 = s.opt("n1", self.n1)?;
        let n2 = s.opt("n2", self.n2)?;
        let cfg = FitConfig {
            smoothed,
            smoother,
            level1: Selection { p1, p2, rule, fixed: n1 },
            level2: Selection { p1, p2, rule, fixed: n2 },
        };
        cfg.validate().stage("options")?;
        Ok(cfg)
    }
}

#[derive(clap::Args, Debug, Default)]
pub struct ScoreArgs {
    /// Score model: pcp (projection) or pcf (full).
    #[arg(long)]
    pub method: Option<String>,
    /// Residual variances: em or moments.
    #[arg(long)]
    pub variance: Option<String>,
    /// blup (closed form) or gibbs (sampled posterior means).
    #[arg(long)]
    pub engine: Option<String>,
    /// Sampler iterations per chain, burn-in included.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
}

impl ScoreArgs {
    pub fn resolve(&self, s: &mut Settings, seed: u64, default_method: &str) -> Result<(ScoreMethod, ScoreOptions), CliError> {
        let method: ScoreMethod = s.parsed("method", self.method.clone(), default_method)?;
        let variance = match s.get("variance", self.variance.clone(), "em".to_string())?.as_str() {
            "em" => VarianceMode::Em,
            "moments" => VarianceMode::Moments,
            other => return Err(CliError::usage(format!("--variance must be em or moments, got '{other}'"))),
        };
        let defaults = GibbsConfig::default();
        let engine_name: String = s.get("engine", self.engine.clone(), "blup".to_string())?;
        let iterations = s.get("iterations", self.iterations, defaults.iterations)?;
        let burn_in = s.get("burn-in", self.burn_in, defaults.burn_in)?;
        let chains = s.get("chains", self.chains, defaults.chains)?;
        let engine = match engine_name.as_str() {
            "blup" => Engine::Blup,
            "gibbs" => {
                let g = GibbsConfig { iterations, burn_in, chains, seed, ..defaults };
                g.validate().stage("options")?;
                Engine::Gibbs(g)
            }
            other => return Err(CliError::usage(format!("--engine must be blup or gibbs, got '{other}'"))),
        };
        Ok((method, ScoreOptions { variance, engine }))
    }
}

/// Everything later commands need from a fit.
#[derive(Debug, Serialize, Deserialize)]
pub struct FitSummary {
    pub command: String,
    pub config: serde_json::Value,
    pub sigma2: f64,
    pub rho_w: f64,
    pub n1: usize,
    pub n2: usize,
    pub selection: [Selection; 2],
    pub smoother: SmootherConfig,
    pub fit_config: FitConfig,
    pub subject_labels: Vec<String>,
    pub visit_labels: Vec<String>,
    pub fit: MfpcaFit,
    pub scores: ScoreSet,
}

pub fn read_summary(path: &Path) -> Result<FitSummary, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("summary {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("summary {}: {e}", path.display())))
}

pub fn required<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::usage(format!("--{flag} is required")))
}
