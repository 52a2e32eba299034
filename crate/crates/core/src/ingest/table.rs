use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{MfpcaError, Result};
use crate::grid::{MultilevelSample, SampledGrid};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LoadOptions {
    /// Map `t` from `[lo, hi]` onto `[0, 1]`.
    pub t_range: Option<(f64, f64)>,
}

pub fn load_sample(path: &Path, opts: &LoadOptions) -> Result<MultilevelSample> {
    read_sample(std::fs::File::open(path)?, opts)
}

struct Row {
    line: usize,
    subject: usize,
    visit: usize,
    t: f64,
    value: f64,
}

fn intern(labels: &mut Vec<String>, index: &mut HashMap<String, usize>, key: &str) -> usize {
    if let Some(&i) = index.get(key) {
        return i;
    }
    labels.push(key.to_string());
    index.insert(key.to_string(), labels.len() - 1);
    labels.len() - 1
}

/// Reads `subject_id,visit_id,t,value` rows. Subjects and visits are
/// numbered in order of first appearance.
pub fn read_sample<R: Read>(reader: R, opts: &LoadOptions) -> Result<MultilevelSample> {
    if let Some((lo, hi)) = opts.t_range {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(MfpcaError::InvalidArgument(format!("bad t range {lo}:{hi}")));
        }
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| MfpcaError::Parse { line: 1, message: e.to_string() })?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| MfpcaError::Parse { line: 1, message: format!("missing column '{name}'") })
    };
    let (cs, cv, ct, cy) = (col("subject_id")?, col("visit_id")?, col("t")?, col("value")?);
    let mut subjects = Vec::new();
    let mut visits = Vec::new();
    let mut subject_index = HashMap::new();
    let mut visit_index = HashMap::new();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| MfpcaError::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |c: usize| rec.get(c).ok_or_else(|| MfpcaError::Parse { line, message: "missing field".into() });
        let num = |c: usize| -> Result<f64> {
            let s = field(c)?;
            let v = s.parse::<f64>().map_err(|e| MfpcaError::Parse { line, message: format!("'{s}': {e}") })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(MfpcaError::Parse { line, message: format!("non-finite number '{s}'") })
            }
        };
        let mut t = num(ct)?;
        if let Some((lo, hi)) = opts.t_range {
            t = (t - lo) / (hi - lo);
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(MfpcaError::RangeError { line, t });
        }
        let value = num(cy)?;
        let subject = intern(&mut subjects, &mut subject_index, field(cs)?);
        let visit = intern(&mut visits, &mut visit_index, field(cv)?);
        rows.push(Row { line, subject, visit, t, value });
    }
    if rows.is_empty() {
        return Err(MfpcaError::InsufficientData("no data rows".into()));
    }
    // Grid from the first curve; every other curve must match it exactly.
    let (i_n, j_n) = (subjects.len(), visits.len());
    let mut curves: Vec<Vec<(f64, f64, usize)>> = vec![Vec::new(); i_n * j_n];
    for r in &rows {
        curves[r.subject * j_n + r.visit].push((r.t, r.value, r.line));
    }
    for c in curves.iter_mut() {
        c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
        if let Some(w) = c.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(MfpcaError::DuplicateRow { line: w[1].2 });
        }
    }
    let first = curves.iter().find(|c| !c.is_empty()).expect("at least one row");
    let points: Vec<f64> = first.iter().map(|p| p.0).collect();
    let grid = Arc::new(SampledGrid::new(points.clone())?);
    let t = grid.len();
    let mut values = vec![0.0; i_n * j_n * t];
    let mut mask = vec![false; i_n * j_n];
    for (slot, c) in curves.iter().enumerate() {
        if c.is_empty() {
            continue;
        }
        if c.len() != t || c.iter().zip(&points).any(|(p, q)| p.0 != *q) {
            return Err(MfpcaError::GridMismatch);
        }
        mask[slot] = true;
        for (s, p) in c.iter().enumerate() {
            values[slot * t + s] = p.1;
        }
    }
    MultilevelSample::new(grid, i_n, j_n, values, mask)?.with_labels(subjects, visits)
}

/// Writes the long format read by [`read_sample`]; absent visits are omitted.
/// Numbers use the shortest representation that parses back exactly.
pub fn write_sample<W: Write>(sample: &MultilevelSample, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    let io = |e: csv::Error| MfpcaError::Io(e.to_string());
    w.write_record(["subject_id", "visit_id", "t", "value"]).map_err(io)?;
    let points = sample.grid().points();
    for i in 0..sample.n_subjects() {
        for j in 0..sample.n_visits() {
            if let Some(y) = sample.curve(i, j) {
                for (t, v) in points.iter().zip(y) {
                    w.write_record([
                        sample.subject_labels()[i].as_str(),
                        sample.visit_labels()[j].as_str(),
                        &t.to_string(),
                        &v.to_string(),
                    ])
                    .map_err(io)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}
