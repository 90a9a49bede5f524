use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};

use pathcas::{DomainConfig, KEY_MAX};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DsKind {
    Bst,
    Avl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Pretty,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyDist {
    Uniform,
    /// Accepted by the parser, rejected by [`ExperimentConfig::validate`].
    Zipf,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("--ins and --del must be non-negative and sum to at most 100 (got {0} and {1})")]
    Mix(f64, f64),
    #[error("--keyrange must be in [4, {max}] (got {got})")]
    KeyRange { got: i64, max: i64 },
    #[error("--threads must be in [1, {max}] (got {got})")]
    Threads { got: usize, max: usize },
    #[error("--trials must be at least 1")]
    Trials,
    #[error("the zipf key distribution is not implemented")]
    Zipf,
    #[error("BENCH_MAX_PATH must be a positive integer (got {0:?})")]
    MaxPath(String),
}

/// Mixed-workload throughput experiment on one of the trees.
#[derive(Clone, Debug, Parser, Serialize, Deserialize, PartialEq)]
#[command(name = "bench", version, about)]
pub struct ExperimentConfig {
    #[arg(long, value_enum, default_value = "bst")]
    pub ds: DsKind,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Keys are drawn from [0, keyrange).
    #[arg(long, default_value_t = 1 << 16)]
    pub keyrange: i64,
    /// Percentage of inserts.
    #[arg(long, default_value_t = 5.0)]
    pub ins: f64,
    /// Percentage of deletes; the rest are lookups.
    #[arg(long, default_value_t = 5.0)]
    pub del: f64,
    /// Measurement window per trial.
    #[arg(long, default_value_t = 1000)]
    pub millis: u64,
    /// Fixed number of operations per thread; overrides --millis.
    #[arg(long)]
    pub ops: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub trials: u32,
    #[arg(long, value_enum, default_value = "pretty")]
    pub format: Format,
    /// Disable the validation-skipping optimizations.
    #[arg(long)]
    pub no_opt: bool,
    /// Pin worker threads to cores (best effort).
    #[arg(long)]
    pub pin: bool,
    #[arg(long, value_enum, default_value = "uniform")]
    pub dist: KeyDist,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::parse_from(["bench"])
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.ins >= 0.0 && self.del >= 0.0 && self.ins + self.del <= 100.0) {
            return Err(ConfigError::Mix(self.ins, self.del));
        }
        // Keys must stay inside the tree's key domain.
        let max = KEY_MAX;
        if self.keyrange < 4 || self.keyrange > max {
            return Err(ConfigError::KeyRange {
                got: self.keyrange,
                max,
            });
        }
        let max = DomainConfig::default().max_threads - 1;
        if self.threads == 0 || self.threads > max {
            return Err(ConfigError::Threads {
                got: self.threads,
                max,
            });
        }
        if self.trials == 0 {
            return Err(ConfigError::Trials);
        }
        if self.dist == KeyDist::Zipf {
            return Err(ConfigError::Zipf);
        }
        Ok(())
    }
}

/// Domain configuration, honouring `BENCH_MAX_PATH`.
pub fn domain_config() -> Result<DomainConfig, ConfigError> {
    let mut cfg = DomainConfig::default();
    if let Ok(s) = std::env::var("BENCH_MAX_PATH") {
        match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => cfg.max_path = n,
            _ => return Err(ConfigError::MaxPath(s)),
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(args: &[&str]) -> ExperimentConfig {
        ExperimentConfig::parse_from(std::iter::once("bench").chain(args.iter().copied()))
    }

    #[test]
    fn defaults_are_valid() {
        assert_eq!(ExperimentConfig::default().validate(), Ok(()));
    }

    #[test]
    fn rejects_bad_configs() {
        assert_eq!(
            cfg(&["--ins", "60", "--del", "50"]).validate(),
            Err(ConfigError::Mix(60.0, 50.0))
        );
        assert!(matches!(
            cfg(&["--keyrange", "3"]).validate(),
            Err(ConfigError::KeyRange { .. })
        ));
        assert!(matches!(
            cfg(&["--threads", "0"]).validate(),
            Err(ConfigError::Threads { .. })
        ));
        assert_eq!(cfg(&["--trials", "0"]).validate(), Err(ConfigError::Trials));
        assert_eq!(cfg(&["--dist", "zipf"]).validate(), Err(ConfigError::Zipf));
        assert_eq!(
            cfg(&["--ins", "50", "--del", "50", "--keyrange", "4"]).validate(),
            Ok(())
        );
    }

    #[test]
    fn parses_full_command_line() {
        let c = cfg(&[
            "--ds",
            "avl",
            "--threads",
            "8",
            "--keyrange",
            "2000000",
            "--ins",
            "1",
            "--del",
            "0",
            "--millis",
            "5000",
            "--seed",
            "7",
            "--trials",
            "6",
            "--format",
            "csv",
            "--no-opt",
            "--pin",
        ]);
        assert_eq!(c.ds, DsKind::Avl);
        assert_eq!(
            (c.threads, c.keyrange, c.ins, c.del, c.millis),
            (8, 2_000_000, 1.0, 0.0, 5000)
        );
        assert_eq!(cfg(&["--ins", "0.5", "--del", "0.5"]).validate(), Ok(()));
        assert!(cfg(&["--ins=-1"]).validate().is_err());
        assert_eq!((c.seed, c.trials, c.format), (7, 6, Format::Csv));
        assert!(c.no_opt && c.pin);
    }
}
