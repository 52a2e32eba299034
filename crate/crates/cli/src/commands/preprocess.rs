use std::path::PathBuf;

use mfpca::ingest::{band_power, read_signal, BandSpec, RawFormat};
use mfpca::MfpcaError;
use serde_json::json;

use super::Prepare;
use crate::config::Settings;
use crate::error::{CliError, StageExt};
use crate::output::{num, Table};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Raw signal files, one per subject visit.
    #[arg(long, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// text (one value per line) or f32le.
    #[arg(long)]
    pub raw_format: Option<String>,
    /// Sampling rate in Hz.
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub window_seconds: Option<f64>,
    /// delta, theta, alpha or beta.
    #[arg(long)]
    pub band: Option<String>,
    /// Taper each window before the transform.
    #[arg(long)]
    pub hann: bool,
    /// Subject label written to every row (default: file stem).
    #[arg(long)]
    pub subject: Option<String>,
    /// Visit label written to every row.
    #[arg(long)]
    pub visit: Option<String>,
}

pub fn run(a: Args, mut s: Settings, prepare: impl Prepare) -> Result<(), CliError> {
    let inputs: Vec<PathBuf> = s.get("input", (!a.input.is_empty()).then_some(a.input), Vec::new())?;
    if inputs.is_empty() {
        return Err(CliError::usage("--input is required"));
    }
    let format: RawFormat = s.parsed("raw-format", a.raw_format, "text")?;
    let rate: f64 = s.opt("rate", a.rate)?.ok_or_else(|| CliError::usage("--rate is required"))?;
    let mut spec = BandSpec::eeg(rate);
    spec.window_seconds = s.get("window-seconds", a.window_seconds, spec.window_seconds)?;
    spec.hann = s.flag("hann", a.hann)?;
    let band: String = s.get("band", a.band, "delta".to_string())?;
    let subject = s.opt("subject", a.subject)?;
    let visit: String = s.get("visit", a.visit, "1".to_string())?;
    spec.validate().stage("options")?;
    spec.window_len().stage("options")?;
    if !spec.bands.iter().any(|b| b.name == band) {
        return Err(CliError::usage(format!("--band '{band}' is not one of delta, theta, alpha, beta")));
    }

    let mut ctx = prepare(s)?;
    let mut report = Vec::new();
    for path in &inputs {
        let signal = read_signal(path, format).stage("read")?;
        if signal.is_empty() {
            return Err(CliError::Stage { stage: "read", source: MfpcaError::InsufficientData(format!("{} is empty", path.display())) });
        }
        let series = band_power(&signal, &spec, &band).stage("band power")?;
        let stem = path.file_stem().map(|x| x.to_string_lossy().into_owned()).unwrap_or_else(|| "signal".into());
        let id = subject.clone().unwrap_or_else(|| stem.clone());
        let mut table = Table::new(["subject_id", "visit_id", "t", "value"]);
        for (t, v) in series.times.iter().zip(&series.values) {
            if let Some(v) = v {
                table.push(vec![id.clone(), visit.clone(), num(*t), num(*v)]);
            }
        }
        ctx.out.write_table(&format!("{stem}.csv"), &table)?;
        report.push(json!({
            "input": path.display().to_string(),
            "samples": signal.len(),
            "windows": series.n_windows(),
            "dropped_samples": series.dropped_samples,
            "undefined_windows": series.undefined,
        }));
    }
    let value = json!({ "config": ctx.settings.effective(), "spec": spec, "band": band, "files": report });
    ctx.out.write_json("preprocess_report.json", &value)
}
