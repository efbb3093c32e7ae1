//! TOML experiment configuration.
//!
//! ```toml
//! N = 10
//! avg_parents = 1
//! F = [5, 10]
//! n_j = [10, 20]
//! scenario = "balanced"
//! replicates = 20
//! seed = 42
//! ```
//!
//! Grid keys take one value or a list. Every problem is reported at once.

use lmebn::simgen::{ExperimentConfig, Scenario};
use serde::Serialize;
use toml::{Table, Value};

use crate::error::{CliError, CliResult};

const KNOWN_KEYS: [&str; 9] = [
    "N",
    "avg_parents",
    "F",
    "n_j",
    "scenario",
    "replicates",
    "seed",
    "eval_rows",
    "mc_samples",
];

pub const DEFAULT_MC_SAMPLES: usize = 5_000;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    /// Draws for the Monte-Carlo KL between variable marginals.
    pub mc_samples: usize,
}

/// Normalised echo of a configuration, stored in run manifests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigEcho {
    #[serde(rename = "N")]
    pub n_vars: Vec<usize>,
    pub avg_parents: Vec<f64>,
    #[serde(rename = "F")]
    pub n_groups: Vec<usize>,
    pub n_j: Vec<usize>,
    pub scenario: Vec<String>,
    pub replicates: usize,
    pub seed: u64,
    pub eval_rows: usize,
    pub mc_samples: usize,
}

impl RunConfig {
    pub fn echo(&self) -> ConfigEcho {
        let e = &self.experiment;
        ConfigEcho {
            n_vars: e.n_vars.clone(),
            avg_parents: e.avg_parents.clone(),
            n_groups: e.n_groups.clone(),
            n_j: e.n_j.clone(),
            scenario: e.scenarios.iter().map(|s| s.to_string()).collect(),
            replicates: e.replicates,
            seed: e.seed,
            eval_rows: e.eval_rows,
            mc_samples: self.mc_samples,
        }
    }
}

fn list<'a>(v: &'a Value) -> Vec<&'a Value> {
    match v {
        Value::Array(items) => items.iter().collect(),
        single => vec![single],
    }
}

fn as_count(key: &str, v: &Value, errors: &mut Vec<String>) -> Option<usize> {
    match v.as_integer() {
        Some(i) if i >= 0 => Some(i as usize),
        _ => {
            errors.push(format!("{key}: expected a non-negative integer, got {v}"));
            None
        }
    }
}

fn counts(key: &str, v: &Value, errors: &mut Vec<String>) -> Vec<usize> {
    list(v).into_iter().filter_map(|x| as_count(key, x, errors)).collect()
}

fn reals(key: &str, v: &Value, errors: &mut Vec<String>) -> Vec<f64> {
    list(v)
        .into_iter()
        .filter_map(|x| match x {
            Value::Integer(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            other => {
                errors.push(format!("{key}: expected a number, got {other}"));
                None
            }
        })
        .collect()
}

fn scenarios(v: &Value, errors: &mut Vec<String>) -> Vec<Scenario> {
    list(v)
        .into_iter()
        .filter_map(|x| match x.as_str().map(str::parse::<Scenario>) {
            Some(Ok(s)) => Some(s),
            _ => {
                errors.push(format!("scenario: expected balanced, unbalanced or homogeneous, got {x}"));
                None
            }
        })
        .collect()
}

pub fn parse_config(text: &str) -> CliResult<RunConfig> {
    let table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Config(vec![e.message().trim().to_string()]))?;
    let mut errors = Vec::new();
    for key in table.keys() {
        if !KNOWN_KEYS.contains(&key.as_str()) {
            errors.push(format!("unknown key {key:?}"));
        }
    }
    for key in ["N", "avg_parents", "F", "n_j"] {
        if !table.contains_key(key) {
            errors.push(format!("missing required key {key:?}"));
        }
    }
    let mut exp = ExperimentConfig::default();
    if let Some(v) = table.get("N") {
        exp.n_vars = counts("N", v, &mut errors);
    }
    if let Some(v) = table.get("avg_parents") {
        exp.avg_parents = reals("avg_parents", v, &mut errors);
    }
    if let Some(v) = table.get("F") {
        exp.n_groups = counts("F", v, &mut errors);
    }
    if let Some(v) = table.get("n_j") {
        exp.n_j = counts("n_j", v, &mut errors);
    }
    if let Some(v) = table.get("scenario") {
        exp.scenarios = scenarios(v, &mut errors);
    }
    if let Some(v) = table.get("replicates") {
        exp.replicates = as_count("replicates", v, &mut errors).unwrap_or(1);
    }
    if let Some(v) = table.get("seed") {
        exp.seed = as_count("seed", v, &mut errors).unwrap_or(0) as u64;
    }
    if let Some(v) = table.get("eval_rows") {
        exp.eval_rows = as_count("eval_rows", v, &mut errors).unwrap_or(1);
    }
    let mut mc_samples = DEFAULT_MC_SAMPLES;
    if let Some(v) = table.get("mc_samples") {
        mc_samples = as_count("mc_samples", v, &mut errors).unwrap_or(DEFAULT_MC_SAMPLES);
        if mc_samples < 2 {
            errors.push("mc_samples must be at least 2".into());
        }
    }
    if errors.is_empty() {
        errors.extend(exp.problems());
    }
    if errors.is_empty() {
        Ok(RunConfig {
            experiment: exp,
            mc_samples,
        })
    } else {
        Err(CliError::Config(errors))
    }
}

pub fn read_config(path: &std::path::Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(vec![format!("{}: {e}", path.display())]))?;
    parse_config(&text).map_err(|e| match e {
        CliError::Config(v) => CliError::Config(v.into_iter().map(|m| format!("{}: {m}", path.display())).collect()),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_or_many() {
        let c = parse_config("N = 10\navg_parents = 1\nF = [5, 10]\nn_j = 10\nreplicates = 2\n").unwrap();
        assert_eq!(c.experiment.n_groups, [5, 10]);
        assert_eq!(c.experiment.n_j, [10]);
        assert_eq!(c.experiment.scenarios, [Scenario::Balanced]);
        assert_eq!(c.experiment.cells().len(), 2);
    }

    #[test]
    fn all_problems_listed() {
        let e = parse_config("N = 10\nF = [2]\nn_j = \"x\"\nbogus = 1\nscenario = \"sideways\"\n").unwrap_err();
        let CliError::Config(list) = e else { panic!() };
        assert_eq!(list.len(), 4, "{list:?}");
        assert!(list.iter().any(|m| m.contains("bogus")));
        assert!(list.iter().any(|m| m.contains("avg_parents")));
        assert!(list.iter().any(|m| m.contains("n_j")));
        assert!(list.iter().any(|m| m.contains("sideways")));
    }

    #[test]
    fn unbalanced_needs_allowed_group_counts() {
        let e = parse_config("N = 10\navg_parents = 1\nF = [2]\nn_j = 10\nscenario = \"unbalanced\"\n").unwrap_err();
        assert_eq!(e.exit_code(), 1);
        assert!(e.to_string().contains("unbalanced"));
    }
}
