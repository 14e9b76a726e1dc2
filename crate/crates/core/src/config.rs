//! Run configuration: flat dotted keys (`model.epochs = 30`) in a TOML file,
//! overridden by `key=value` pairs from the command line.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::pipeline::{EstimatorConfig, FrontEndConfig, SweepSettings, DEFAULT_EPSILONS};
use crate::synth::ScenarioConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Contiguous segments the recording is split into.
    pub folds: usize,
    /// Folds used for training; empty means every fold not in `test_folds`.
    pub train_folds: Vec<usize>,
    /// Held-out folds; empty means the second half of the recording.
    pub test_folds: Vec<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            train_folds: Vec::new(),
            test_folds: Vec::new(),
        }
    }
}

impl DataConfig {
    /// Resolved `(train, test)` fold lists.
    pub fn split(&self) -> Result<(Vec<usize>, Vec<usize>)> {
        let n = self.folds;
        if n < 2 {
            return Err(Error::config("a train/test split needs at least two folds"));
        }
        let test = if self.test_folds.is_empty() {
            (n / 2..n).collect()
        } else {
            self.test_folds.clone()
        };
        let train: Vec<usize> = if self.train_folds.is_empty() {
            (0..n).filter(|k| !test.contains(k)).collect()
        } else {
            self.train_folds.clone()
        };
        if let Some(k) = train.iter().chain(&test).find(|&&k| k >= n) {
            return Err(Error::config(format!("fold {k} out of range (0..{n})")));
        }
        if train.iter().any(|k| test.contains(k)) {
            return Err(Error::config("train and test folds overlap"));
        }
        if train.is_empty() || test.is_empty() {
            return Err(Error::config("train and test fold lists must be non-empty"));
        }
        Ok((train, test))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub epsilons: Vec<f64>,
    #[serde(flatten)]
    pub settings: SweepSettings,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            epsilons: DEFAULT_EPSILONS.to_vec(),
            settings: SweepSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Aggregation windows in seconds.
    pub windows_s: Vec<u64>,
    /// Seed for inference noise. Seeded noise voids the privacy guarantee and
    /// exists for reproducible experiments only.
    pub noise_seed: Option<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            windows_s: vec![1800, 3600, 7200],
            noise_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub synth: ScenarioConfig,
    pub frontend: FrontEndConfig,
    pub model: EstimatorConfig,
    pub data: DataConfig,
    pub sweep: SweepConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Defaults, then the file, then each `key=value` override in order.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match file {
            Some(p) => std::fs::read_to_string(p)?
                .parse::<Table>()
                .map_err(|e| Error::config(format!("{}: {e}", p.display())))?,
            None => Table::new(),
        };
        let mut keys = flat_keys(&table, "");
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override `{o}` is not key=value")))?;
            let key = key.trim();
            set_path(&mut table, key, parse_value(raw.trim()))?;
            keys.push(key.to_string());
        }
        let cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        let known = flat_keys(&cfg.to_table()?, "");
        for k in &keys {
            if !known
                .iter()
                .any(|n| n == k || n.starts_with(&format!("{k}.")))
            {
                return Err(Error::config(format!("unknown configuration key `{k}`")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model.validate()?;
        if self.data.folds == 0 {
            return Err(Error::config("data.folds must be at least 1"));
        }
        if self.eval.windows_s.contains(&0) {
            return Err(Error::config("aggregation windows must be positive"));
        }
        Ok(())
    }

    /// Sets every seed the run consumes.
    pub fn apply_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.model.seed = seed;
    }

    pub fn to_table(&self) -> Result<Table> {
        Table::try_from(self).map_err(|e| Error::config(e.to_string()))
    }

    /// The resolved configuration as flat `key = value` lines.
    pub fn to_flat_toml(&self) -> Result<String> {
        let mut out = String::new();
        for (k, v) in flat_entries(&self.to_table()?, "") {
            out.push_str(&format!("{k} = {v}\n"));
        }
        Ok(out)
    }
}

/// Numbers, booleans, arrays and quoted strings parse as TOML; anything else
/// is taken as a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("malformed key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("`{p}` in `{key}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn flat_entries(table: &Table, prefix: &str) -> Vec<(String, Value)> {
    let mut out = Vec::new();
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => out.extend(flat_entries(t, &key)),
            other => out.push((key, other.clone())),
        }
    }
    out
}

fn flat_keys(table: &Table, prefix: &str) -> Vec<String> {
    flat_entries(table, prefix)
        .into_iter()
        .map(|(k, _)| k)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let cfg = RunConfig::resolve(None, &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.model.epochs, 30);
        assert_eq!(cfg.sweep.epsilons, DEFAULT_EPSILONS.to_vec());
    }

    #[test]
    fn file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(
            &p,
            "model.epochs = 5\nmodel.encoder = \"frozen\"\nsynth.duration_s = 600\n",
        )
        .unwrap();
        let cfg = RunConfig::resolve(
            Some(&p),
            &["model.epochs=7".into(), "model.epsilon=0.5".into()],
        )
        .unwrap();
        assert_eq!(cfg.model.epochs, 7);
        assert_eq!(cfg.model.epsilon, Some(0.5));
        assert_eq!(cfg.synth.duration_s, 600);
        assert_eq!(cfg.model.encoder, crate::pipeline::EncoderChoice::Frozen);
    }

    #[test]
    fn flat_dump_roundtrips() {
        let mut cfg = RunConfig::default();
        cfg.model.clip = Some(2.0);
        cfg.data.test_folds = vec![9];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("dump.toml");
        std::fs::write(&p, cfg.to_flat_toml().unwrap()).unwrap();
        assert_eq!(RunConfig::resolve(Some(&p), &[]).unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(matches!(
            RunConfig::resolve(None, &["model.epoch=3".into()]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::resolve(None, &["model.epochs=0".into()]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::resolve(None, &["novalue".into()]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn split_defaults_to_halves() {
        let (train, test) = DataConfig::default().split().unwrap();
        assert_eq!(train, vec![0, 1, 2, 3, 4]);
        assert_eq!(test, vec![5, 6, 7, 8, 9]);
        let bad = DataConfig {
            folds: 4,
            train_folds: vec![0, 1],
            test_folds: vec![1],
        };
        assert!(bad.split().is_err());
    }
}
