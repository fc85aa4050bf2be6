//! JSON run configuration and its resolution into core types.
//!
//! ```json
//! {
//!   "plant": {"A": [[0.25]], "B": [[1.0]]},
//!   "h": 1.0,
//!   "flows": [{"type": "exponential", "rate": 0.5}, {"type": "exponential", "rate": 0.5}],
//!   "d": 2,
//!   "weights": {"Q": "identity", "R": [[1.0]]},
//!   "sim": {"horizon": 60, "trials": 10000, "seed": 1, "x0": [2.0]},
//!   "output": {"format": "csv", "path": "out.csv"}
//! }
//! ```
//!
//! `discrete_plant` (`{"A_h": …, "B_h": …}`) may replace `plant`; `p` may
//! replace `flows` for the analysis commands; `gain` fixes `K` instead of
//! taking it from the Riccati solution.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use sdnctl_core::{linalg, ContinuousPlant, DMatrix, FlowSet};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolConfig {
    pub plant: Option<ContinuousPlant>,
    pub discrete_plant: Option<DiscreteRows>,
    pub h: Option<f64>,
    pub flows: Option<FlowSet>,
    pub d: Option<u32>,
    pub p: Option<f64>,
    #[serde(default)]
    pub weights: Weights,
    pub gain: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteRows {
    #[serde(rename = "A_h")]
    pub a_h: Vec<Vec<f64>>,
    #[serde(rename = "B_h")]
    pub b_h: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Named(String),
    Matrix(Vec<Vec<f64>>),
}

impl Default for WeightSpec {
    fn default() -> Self {
        WeightSpec::Named("identity".into())
    }
}

impl WeightSpec {
    pub fn resolve(&self, field: &str, dim: usize) -> Result<DMatrix<f64>, CliError> {
        match self {
            WeightSpec::Named(name) if name == "identity" => Ok(DMatrix::identity(dim, dim)),
            WeightSpec::Named(other) => Err(CliError::Config(format!(
                "weights.{field}: expected \"identity\" or a matrix, got \"{other}\""
            ))),
            WeightSpec::Matrix(rows) => {
                let m = linalg::from_rows(rows)
                    .map_err(|e| CliError::Config(format!("weights.{field}: {e}")))?;
                if m.nrows() != dim || m.ncols() != dim {
                    return Err(CliError::Config(format!(
                        "weights.{field}: must be {dim}x{dim}, got {}x{}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
                Ok(m)
            }
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    #[serde(rename = "Q", default)]
    pub q: WeightSpec,
    #[serde(rename = "R", default)]
    pub r: WeightSpec,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub horizon: Option<usize>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub x0: Option<Vec<f64>>,
    pub u_init: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub format: Option<Format>,
    pub path: Option<PathBuf>,
}

/// Parses a config, reporting the JSON path of the first offending field.
pub fn parse(text: &str) -> Result<ToolConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            CliError::Config(format!("config: {inner}"))
        } else {
            CliError::Config(format!("{path}: {inner}"))
        }
    })
}

pub fn load(path: &Path) -> Result<ToolConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_config_parses() {
        let cfg = parse(
            r#"{
                "plant": {"A": [[0.25]], "B": [[1]]},
                "h": 1.0,
                "flows": [{"type": "exponential", "rate": 0.5}, {"type": "empirical", "points": [[0, 0], [2, 1]]}],
                "d": 2,
                "weights": {"Q": "identity", "R": [[2.0]]},
                "sim": {"horizon": 10, "trials": 5, "seed": 3, "x0": [2.0], "u_init": [[0], [0]]},
                "output": {"format": "csv"}
            }"#,
        )
        .unwrap();
        assert_eq!(cfg.d, Some(2));
        assert_eq!(cfg.flows.unwrap().len(), 2);
        assert_eq!(cfg.output.format, Some(Format::Csv));
        assert_eq!(cfg.weights.r.resolve("R", 1).unwrap()[(0, 0)], 2.0);
    }

    #[test]
    fn errors_name_the_field() {
        let err = parse(r#"{"flows": [{"type": "exponential", "rate": "fast"}]}"#).unwrap_err();
        assert!(err.to_string().contains("flows[0]"), "{err}");
        let err = parse(r#"{"sim": {"horizon": -1}}"#).unwrap_err();
        assert!(err.to_string().contains("sim.horizon"), "{err}");
        let err = parse(r#"{"plant": {"A": [[1, 2]], "B": [[1]]}}"#).unwrap_err();
        assert!(err.to_string().contains("plant"), "{err}");
        let err = parse(r#"{"colour": 1}"#).unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
    }

    #[test]
    fn weight_names() {
        assert!(WeightSpec::Named("eye".into()).resolve("Q", 2).is_err());
        assert_eq!(
            WeightSpec::default().resolve("Q", 2).unwrap(),
            DMatrix::identity(2, 2)
        );
        assert!(WeightSpec::Matrix(vec![vec![1.0]]).resolve("Q", 2).is_err());
    }
}
