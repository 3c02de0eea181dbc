use std::path::{Path, PathBuf};

use natgrad::gp_bench::BenchmarkConfig;
use natgrad::optimizer::OptimizerConfig;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

impl OneOrMany {
    pub fn into_vec(self) -> Vec<String> {
        match self {
            OneOrMany::One(s) => vec![s],
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpTarget {
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_true_theta")]
    pub true_theta: [f64; 3],
    #[serde(default = "default_offset")]
    pub threshold_offset: f64,
}

fn default_m() -> usize {
    BenchmarkConfig::default().m
}
fn default_seed() -> u64 {
    BenchmarkConfig::default().seed
}
fn default_true_theta() -> [f64; 3] {
    BenchmarkConfig::default().true_theta
}
fn default_offset() -> f64 {
    BenchmarkConfig::default().threshold_offset
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum TargetSpec {
    Point(Vec<f64>),
    Gp { gp: GpTarget },
}

/// The JSON document accepted by `natgrad run`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: Option<String>,
    pub similarity: Option<String>,
    /// One id or a list; defaults to the engine belonging to the similarity.
    pub metric: Option<OneOrMany>,
    pub theta0: Vec<f64>,
    pub target: TargetSpec,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Cost level for the `iters_to_threshold` column of point-target runs.
    pub threshold: Option<f64>,
    pub output_dir: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

pub fn load_experiment(path: &Path) -> Result<ExperimentConfig, CliError> {
    serde_json::from_str(&read(path)?)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// A benchmark document: [`BenchmarkConfig`] keys plus an optional `output_dir`.
pub fn load_benchmark(path: &Path) -> Result<(BenchmarkConfig, Option<PathBuf>), CliError> {
    let bad = |e: serde_json::Error| CliError::Config(format!("{}: {e}", path.display()));
    let mut value: serde_json::Value = serde_json::from_str(&read(path)?).map_err(bad)?;
    let out = match value.as_object_mut() {
        Some(obj) => match obj.remove("output_dir") {
            None | Some(serde_json::Value::Null) => None,
            Some(serde_json::Value::String(s)) => Some(PathBuf::from(s)),
            Some(other) => {
                return Err(CliError::Config(format!(
                    "{}: output_dir must be a string, got {other}",
                    path.display()
                )))
            }
        },
        None => {
            return Err(CliError::Config(format!(
                "{}: expected a JSON object",
                path.display()
            )))
        }
    };
    Ok((serde_json::from_value(value).map_err(bad)?, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_and_gp_targets_parse() {
        let c: ExperimentConfig = serde_json::from_str(
            r#"{"family":"gaussian1d","similarity":"kl","metric":["fisher","euclidean"],
                "theta0":[2,3],"target":[0,1]}"#,
        )
        .unwrap();
        assert_eq!(c.target, TargetSpec::Point(vec![0.0, 1.0]));
        assert_eq!(c.metric.unwrap().into_vec().len(), 2);

        let c: ExperimentConfig =
            serde_json::from_str(r#"{"metric":"fisher","theta0":[0,0,0],"target":{"gp":{"m":5}}}"#).unwrap();
        match c.target {
            TargetSpec::Gp { gp } => {
                assert_eq!(gp.m, 5);
                assert_eq!(gp.seed, 42);
            }
            _ => panic!("expected a gp target"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"theta0":[1],"target":[1],"lr":2}"#).is_err());
    }
}
