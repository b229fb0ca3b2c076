//! Run configuration: a flat JSON record, optionally read from a file (or
//! from the `config` field of a manifest), with command-line flags laid
//! over it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(rename = "N", skip_serializing_if = "Option::is_none")]
    pub side: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicas: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// `full`, `scattered`, `pair` or `explicit`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<String>,
    /// Particle count for `scattered`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    /// Minimum separation for `scattered`; defaults to the built-in a_N.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    /// Displacement of the second particle for `pair`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<Vec<i64>>,
    /// Coordinates of every particle for `explicit`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sites: Option<Vec<Vec<i64>>>,
    /// `full`, `count` or `time`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub event_cap: Option<u64>,
    /// Thresholds file; the `CRW_THRESHOLDS` variable is used when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub suite: Option<String>,
    /// `theta` or `vd` for `estimate`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub what: Option<String>,
    /// `exact`, `spectral` or `monte_carlo`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    /// Oracle operation name.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub operation: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speed: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($field:ident),*) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field.clone(); } )*
    };
}

impl RunConfig {
    /// Reads a config file. A manifest is accepted too, in which case its
    /// `config` record is used and its command must match.
    pub fn load(path: &Path, command: &str) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let record = match (value.get("command"), value.get("config")) {
            (Some(cmd), Some(config)) => {
                if cmd.as_str() != Some(command) {
                    return Err(CliError::Usage(format!(
                        "manifest {} was written by `{}`, not `{command}`",
                        path.display(),
                        cmd
                    )));
                }
                config.clone()
            }
            _ => value,
        };
        serde_json::from_value(record).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Fields set in `top` replace those in `self`.
    pub fn overlay(mut self, top: &RunConfig) -> Self {
        overlay!(
            self, top, d, side, seed, replicas, workers, out, initial, count, a, delta, sites, stop, stop_count,
            stop_time, event_cap, thresholds, suite, what, method, v_d, radius, operation, n, speed, times
        );
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let file = RunConfig {
            d: Some(3),
            side: Some(8),
            seed: Some(1),
            ..RunConfig::default()
        };
        let flags = RunConfig {
            seed: Some(9),
            ..RunConfig::default()
        };
        let merged = file.overlay(&flags);
        assert_eq!((merged.d, merged.side, merged.seed), (Some(3), Some(8), Some(9)));
    }

    #[test]
    fn json_keys_are_flat() {
        let c: RunConfig = serde_json::from_str(r#"{"d": 2, "N": 8, "initial": "full", "replicas": 3}"#).unwrap();
        assert_eq!(c.side, Some(8));
        assert!(serde_json::from_str::<RunConfig>(r#"{"dimension": 2}"#).is_err());
        let back = serde_json::to_string(&c).unwrap();
        assert_eq!(back, r#"{"d":2,"N":8,"replicas":3,"initial":"full"}"#);
    }
}
