//! Run configuration: documented defaults, a flat `key=value` file
//! format, and validation. Precedence is CLI flag > config file > default;
//! the file layer lives here, flag overrides are applied by the CLI.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::flow::FlowConfig;
use crate::nn::optim::OptimizerKind;
use crate::train::PipelineConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("UnknownKey: {0:?} is not a recognized config key")]
    UnknownKey(String),
    #[error("BadValue: {key}: {detail}")]
    BadValue { key: String, detail: String },
    #[error("MalformedLine: line {line}: expected key=value")]
    MalformedLine { line: usize },
    #[error("Io: {0}")]
    Io(#[from] std::io::Error),
}

/// Input/output locations; any of them may come from the config file and
/// be overridden per invocation.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunPaths {
    pub pcaps: Vec<PathBuf>,
    pub flows: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Every tunable of the pipeline with its documented default.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub paths: RunPaths,
    /// Seconds of silence after which a flow expires.
    pub inactivity_timeout: f64,
    /// Hard cap on flow lifetime, seconds.
    pub active_timeout: f64,
    /// Minimum duration used in rate denominators.
    pub duration_floor: f64,
    /// DBSCAN neighborhood radius on the normalized vectors.
    pub eps: f64,
    /// DBSCAN core-point threshold (neighbors within eps, self included).
    pub min_pts: usize,
    /// Contrastive margin m.
    pub margin: f64,
    pub embed_epochs: usize,
    pub embed_batch: usize,
    pub embed_lr: f64,
    /// Fraction of the training split used for pseudo-labeling and
    /// embedding training.
    pub downsample_rate: f64,
    pub detector_epochs: usize,
    pub detector_batch: usize,
    pub detector_lr: f64,
    pub optimizer: OptimizerKind,
    /// Base seed; every stochastic stage derives its own stream from it.
    pub seed: u64,
    /// Near-zero threshold for sparsity reporting.
    pub tau: f64,
    /// Folds for cross-validated evaluation.
    pub folds: usize,
    pub bench_iters: usize,
    pub bench_warmup: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: RunPaths::default(),
            inactivity_timeout: 120.0,
            active_timeout: 3600.0,
            duration_floor: 1e-3,
            eps: 0.3,
            min_pts: 10,
            margin: 1.0,
            embed_epochs: 150,
            embed_batch: 256,
            embed_lr: 1e-3,
            downsample_rate: 0.02,
            detector_epochs: 30,
            detector_batch: 512,
            detector_lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 42,
            tau: 0.01,
            folds: 3,
            bench_iters: 10_000,
            bench_warmup: 1_000,
        }
    }
}

fn parse_as<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| ConfigError::BadValue {
        key: key.to_string(),
        detail: format!("{e} (value {value:?})"),
    })
}

impl RunConfig {
    /// Defaults overlaid with a config file's assignments.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::MalformedLine { line: lineno + 1 })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Apply one assignment. Unknown keys are rejected so a typo cannot
    /// silently fall back to a default.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "pcaps" => {
                self.paths.pcaps = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(PathBuf::from)
                    .collect();
            }
            "flows" => self.paths.flows = Some(PathBuf::from(value)),
            "labels" => self.paths.labels = Some(PathBuf::from(value)),
            "model" => self.paths.model = Some(PathBuf::from(value)),
            "out" => self.paths.out = Some(PathBuf::from(value)),
            "inactivity_timeout" => self.inactivity_timeout = parse_as(key, value)?,
            "active_timeout" => self.active_timeout = parse_as(key, value)?,
            "duration_floor" => self.duration_floor = parse_as(key, value)?,
            "eps" => self.eps = parse_as(key, value)?,
            "min_pts" => self.min_pts = parse_as(key, value)?,
            "margin" => self.margin = parse_as(key, value)?,
            "embed_epochs" => self.embed_epochs = parse_as(key, value)?,
            "embed_batch" => self.embed_batch = parse_as(key, value)?,
            "embed_lr" => self.embed_lr = parse_as(key, value)?,
            "downsample_rate" => self.downsample_rate = parse_as(key, value)?,
            "detector_epochs" => self.detector_epochs = parse_as(key, value)?,
            "detector_batch" => self.detector_batch = parse_as(key, value)?,
            "detector_lr" => self.detector_lr = parse_as(key, value)?,
            "optimizer" => {
                self.optimizer = OptimizerKind::from_str(value).map_err(|e| {
                    ConfigError::BadValue { key: key.to_string(), detail: e }
                })?
            }
            "seed" => self.seed = parse_as(key, value)?,
            "tau" => self.tau = parse_as(key, value)?,
            "folds" => self.folds = parse_as(key, value)?,
            "bench_iters" => self.bench_iters = parse_as(key, value)?,
            "bench_warmup" => self.bench_warmup = parse_as(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Range checks that no individual parser can express.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, detail: String| Err(ConfigError::BadValue {
            key: key.to_string(),
            detail,
        });
        // Written as a predicate so NaN fails every bound it is tested
        // against instead of slipping past a `<=` rewrite.
        let positive = |v: f64| v > 0.0;
        if !positive(self.inactivity_timeout) {
            return bad("inactivity_timeout", "must be positive".into());
        }
        if !positive(self.active_timeout) {
            return bad("active_timeout", "must be positive".into());
        }
        if !positive(self.duration_floor) {
            return bad("duration_floor", "must be positive".into());
        }
        if !positive(self.eps) {
            return bad("eps", "must be positive".into());
        }
        if self.min_pts == 0 {
            return bad("min_pts", "must be at least 1".into());
        }
        if !positive(self.margin) {
            return bad("margin", "must be positive".into());
        }
        if self.embed_epochs == 0 || self.detector_epochs == 0 {
            return bad("epochs", "must be at least 1".into());
        }
        if self.embed_batch == 0 || self.detector_batch == 0 {
            return bad("batch", "must be at least 1".into());
        }
        if !positive(self.embed_lr) || !positive(self.detector_lr) {
            return bad("learning_rate", "must be positive".into());
        }
        if !positive(self.downsample_rate) || self.downsample_rate > 1.0 {
            return bad("downsample_rate", format!("must be in (0, 1], got {}", self.downsample_rate));
        }
        if self.tau.is_nan() || self.tau < 0.0 {
            return bad("tau", "must be non-negative".into());
        }
        if self.folds < 2 {
            return bad("folds", "must be at least 2".into());
        }
        Ok(())
    }

    pub fn flow_config(&self) -> FlowConfig {
        FlowConfig {
            inactivity_timeout: self.inactivity_timeout,
            active_timeout: self.active_timeout,
            duration_floor: self.duration_floor,
        }
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            seed: self.seed,
            eps: self.eps,
            min_pts: self.min_pts,
            downsample_rate: self.downsample_rate,
            margin: self.margin,
            embed_epochs: self.embed_epochs,
            embed_batch: self.embed_batch,
            embed_lr: self.embed_lr,
            detector_epochs: self.detector_epochs,
            detector_batch: self.detector_batch,
            detector_lr: self.detector_lr,
            optimizer: self.optimizer,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_config(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn defaults_match_documentation() {
        let c = RunConfig::default();
        assert_eq!(c.inactivity_timeout, 120.0);
        assert_eq!(c.active_timeout, 3600.0);
        assert_eq!(c.duration_floor, 1e-3);
        assert_eq!(c.eps, 0.3);
        assert_eq!(c.min_pts, 10);
        assert_eq!(c.margin, 1.0);
        assert_eq!(c.embed_epochs, 150);
        assert_eq!(c.embed_batch, 256);
        assert_eq!(c.embed_lr, 1e-3);
        assert_eq!(c.downsample_rate, 0.02);
        assert_eq!(c.detector_epochs, 30);
        assert_eq!(c.detector_batch, 512);
        assert_eq!(c.detector_lr, 1e-3);
        assert_eq!(c.optimizer, OptimizerKind::Adam);
        assert_eq!(c.seed, 42);
        assert_eq!(c.tau, 0.01);
        assert_eq!(c.folds, 3);
        assert_eq!(c.bench_iters, 10_000);
        assert_eq!(c.bench_warmup, 1_000);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn file_assignments_override_defaults() {
        let f = write_config(
            "# experiment with a tighter radius\n\
             eps = 0.15\n\
             min_pts=5\n\
             seed = 7\n\
             optimizer = sgd\n\
             pcaps = a.pcap, b.pcap\n\
             \n\
             labels = spec.csv\n",
        );
        let c = RunConfig::from_file(f.path()).unwrap();
        assert_eq!(c.eps, 0.15);
        assert_eq!(c.min_pts, 5);
        assert_eq!(c.seed, 7);
        assert_eq!(c.optimizer, OptimizerKind::Sgd);
        assert_eq!(c.paths.pcaps, vec![PathBuf::from("a.pcap"), PathBuf::from("b.pcap")]);
        assert_eq!(c.paths.labels.as_deref(), Some(Path::new("spec.csv")));
        // Untouched keys keep their defaults.
        assert_eq!(c.margin, 1.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let f = write_config("epz = 0.5\n");
        match RunConfig::from_file(f.path()) {
            Err(ConfigError::UnknownKey(k)) => assert_eq!(k, "epz"),
            other => panic!("expected UnknownKey, got {other:?}"),
        }
    }

    #[test]
    fn malformed_lines_and_bad_values_are_rejected() {
        let f = write_config("eps 0.5\n");
        assert!(matches!(
            RunConfig::from_file(f.path()),
            Err(ConfigError::MalformedLine { line: 1 })
        ));
        let f = write_config("min_pts = many\n");
        assert!(matches!(
            RunConfig::from_file(f.path()),
            Err(ConfigError::BadValue { .. })
        ));
    }

    #[test]
    fn validate_catches_out_of_range_settings() {
        for (key, value) in [
            ("eps", "0"),
            ("min_pts", "0"),
            ("margin", "-1"),
            ("downsample_rate", "0"),
            ("downsample_rate", "1.5"),
            ("folds", "1"),
            ("embed_epochs", "0"),
        ] {
            let mut c = RunConfig::default();
            c.set(key, value).unwrap();
            assert!(c.validate().is_err(), "{key}={value} should fail validation");
        }
    }
}
