use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;

/// Resolves each option from the command line, then the config file, then
/// the built-in default, and remembers the value that won.
pub struct Settings {
    file: Map<String, Value>,
    effective: BTreeMap<String, Value>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let file = match path {
            None => Map::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("config {}: {e}", p.display())))?;
                match serde_json::from_str::<Value>(&text) {
                    Ok(Value::Object(m)) => m,
                    Ok(_) => return Err(CliError::usage("config file must hold a JSON object")),
                    Err(e) => return Err(CliError::usage(format!("config file: {e}"))),
                }
            }
        };
        Ok(Settings { file, effective: BTreeMap::new() })
    }

    fn from_file<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.file.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| CliError::usage(format!("config key '{key}': {e}"))),
        }
    }

    fn record<T: Serialize>(&mut self, key: &str, value: &T) {
        self.effective.insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn opt<T: DeserializeOwned + Serialize>(&mut self, key: &str, cli: Option<T>) -> Result<Option<T>, CliError> {
        let v = match cli {
            Some(v) => Some(v),
            None => self.from_file(key)?,
        };
        self.record(key, &v);
        Ok(v)
    }

    pub fn get<T: DeserializeOwned + Serialize>(&mut self, key: &str, cli: Option<T>, default: T) -> Result<T, CliError> {
        let v = match cli {
            Some(v) => v,
            None => self.from_file(key)?.unwrap_or(default),
        };
        self.record(key, &v);
        Ok(v)
    }

    pub fn flag(&mut self, key: &str, cli: bool) -> Result<bool, CliError> {
        let v = cli || self.from_file::<bool>(key)?.unwrap_or(false);
        self.record(key, &v);
        Ok(v)
    }

    /// A string option parsed with `FromStr`.
    pub fn parsed<T: FromStr>(&mut self, key: &str, cli: Option<String>, default: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let s: String = self.get(key, cli, default.to_string())?;
        s.parse().map_err(|e| CliError::usage(format!("--{key} '{s}': {e}")))
    }

    /// The base seed resolved at startup.
    pub fn seed(&self) -> u64 {
        self.effective.get("seed").and_then(Value::as_u64).unwrap_or(0)
    }

    pub fn effective(&self) -> Value {
        Value::Object(self.effective.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
    }
}

/// `lo:hi` as used by `--t-range`.
pub fn parse_range(s: &str) -> Result<(f64, f64), CliError> {
    let bad = || CliError::usage(format!("range '{s}' is not of the form lo:hi"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let lo: f64 = a.trim().parse().map_err(|_| bad())?;
    let hi: f64 = b.trim().parse().map_err(|_| bad())?;
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(bad());
    }
    Ok((lo, hi))
}
