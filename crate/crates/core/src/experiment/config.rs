//! Experiment configuration file (TOML).
//!
//! Every key is optional except `experiment`; unknown keys are rejected.
//! See `docs/config.md` for the full schema.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use serde::Deserialize;

use crate::channel::{RateAgg, SimConfig};
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::model::train::{DEFAULT_BATCHES_PER_EPOCH, DEFAULT_EPOCHS};

pub const FULL_SCALE_RETRAINS: usize = 10;
pub const DESK_RETRAINS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    DSweep,
    StressSweep,
    SnrSweep,
    QthSweep,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::DSweep => "d_sweep",
            ExperimentKind::StressSweep => "stress_sweep",
            ExperimentKind::SnrSweep => "snr_sweep",
            ExperimentKind::QthSweep => "qth_sweep",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "d_sweep" => Ok(ExperimentKind::DSweep),
            "stress_sweep" => Ok(ExperimentKind::StressSweep),
            "snr_sweep" => Ok(ExperimentKind::SnrSweep),
            "qth_sweep" => Ok(ExperimentKind::QthSweep),
            _ => Err(Error::Config(format!("unknown experiment kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub losses: Vec<LossKind>,
    pub d_values: Vec<usize>,
    /// Target-rate regimes; models are trained and evaluated per value.
    pub gamma_th: Vec<f64>,
    /// Evaluation SNRs; training always uses `train_snr_db`.
    pub snr_db: Vec<f64>,
    /// Evaluation gate thresholds; training always uses `train_q_th`.
    pub q_th: Vec<f64>,
    pub train_snr_db: f64,
    pub train_q_th: f64,
    pub retrains: usize,
    pub n_test: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub validation_batches: usize,
    pub rate_agg: RateAgg,
    /// Normalizations applied while parsing (e.g. removed duplicates).
    pub warnings: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: ExperimentKind,
    losses: Option<Vec<LossKind>>,
    d: Option<Vec<usize>>,
    gamma_th: Option<Vec<f64>>,
    snr_db: Option<Vec<f64>>,
    q_th: Option<Vec<f64>>,
    train_snr_db: Option<f64>,
    train_q_th: Option<f64>,
    retrains: Option<usize>,
    paper_scale: Option<bool>,
    n_test: Option<usize>,
    master_seed: Option<u64>,
    output_dir: Option<PathBuf>,
    epochs: Option<usize>,
    batches_per_epoch: Option<usize>,
    validation_batches: Option<usize>,
    rate_agg: Option<RateAgg>,
}

impl ExperimentConfig {
    /// All defaults for `kind`.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let q_th = match kind {
            ExperimentKind::QthSweep => (1..=9).map(|i| i as f64 / 10.0).collect(),
            _ => vec![0.4],
        };
        let gamma_th = match kind {
            ExperimentKind::StressSweep => vec![1.0, 1.2, 1.4],
            _ => vec![1.2],
        };
        let snr_db = match kind {
            ExperimentKind::SnrSweep => vec![-6.0, -3.0, 0.0, 3.0, 6.0],
            _ => vec![0.0],
        };
        ExperimentConfig {
            kind,
            losses: LossKind::ALL.to_vec(),
            d_values: vec![2, 4, 6, 8, 10],
            gamma_th,
            snr_db,
            q_th,
            train_snr_db: 0.0,
            train_q_th: 0.4,
            retrains: DESK_RETRAINS,
            n_test: 3000,
            master_seed: 1,
            output_dir: PathBuf::from("results"),
            epochs: DEFAULT_EPOCHS,
            batches_per_epoch: DEFAULT_BATCHES_PER_EPOCH,
            validation_batches: DEFAULT_BATCHES_PER_EPOCH,
            rate_agg: RateAgg::Mean,
            warnings: Vec::new(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("schema error: {e}")))?;
        let mut cfg = Self::defaults(raw.experiment);
        if let Some(v) = raw.losses {
            cfg.losses = v;
        }
        if let Some(v) = raw.d {
            cfg.d_values = v;
        }
        if let Some(v) = raw.gamma_th {
            cfg.gamma_th = v;
        }
        if let Some(v) = raw.snr_db {
            cfg.snr_db = v;
        }
        if let Some(v) = raw.q_th {
            cfg.q_th = v;
        }
        if let Some(v) = raw.train_snr_db {
            cfg.train_snr_db = v;
        }
        if let Some(v) = raw.train_q_th {
            cfg.train_q_th = v;
        }
        if let Some(v) = raw.retrains {
            cfg.retrains = v;
        }
        if raw.paper_scale == Some(true) {
            cfg.retrains = FULL_SCALE_RETRAINS;
        }
        if let Some(v) = raw.n_test {
            cfg.n_test = v;
        }
        if let Some(v) = raw.master_seed {
            cfg.master_seed = v;
        }
        if let Some(v) = raw.output_dir {
            cfg.output_dir = v;
        }
        if let Some(v) = raw.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = raw.batches_per_epoch {
            cfg.batches_per_epoch = v;
        }
        if let Some(v) = raw.validation_batches {
            cfg.validation_batches = v;
        }
        if let Some(v) = raw.rate_agg {
            cfg.rate_agg = v;
        }
        cfg.normalize();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Removes duplicate sweep entries, keeping first occurrences.
    pub fn normalize(&mut self) {
        fn dedup<T: PartialEq + Copy + fmt::Debug>(key: &str, v: &mut Vec<T>, warnings: &mut Vec<String>) {
            let mut seen: Vec<T> = Vec::with_capacity(v.len());
            for &x in v.iter() {
                if seen.contains(&x) {
                    let msg = format!("duplicate {key} entry {x:?} removed");
                    warn!("{msg}");
                    warnings.push(msg);
                } else {
                    seen.push(x);
                }
            }
            *v = seen;
        }
        let w = &mut self.warnings;
        dedup("losses", &mut self.losses, w);
        dedup("d", &mut self.d_values, w);
        dedup("gamma_th", &mut self.gamma_th, w);
        dedup("snr_db", &mut self.snr_db, w);
        dedup("q_th", &mut self.q_th, w);
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Config(msg));
        for (key, empty) in [
            ("losses", self.losses.is_empty()),
            ("d", self.d_values.is_empty()),
            ("gamma_th", self.gamma_th.is_empty()),
            ("snr_db", self.snr_db.is_empty()),
            ("q_th", self.q_th.is_empty()),
        ] {
            if empty {
                return err(format!("{key}: sweep axis must not be empty"));
            }
        }
        let r = SimConfig::default().r;
        for (i, &d) in self.d_values.iter().enumerate() {
            if d < 1 || d > r {
                return err(format!("d[{i}] = {d} must lie in 1..={r}"));
            }
        }
        for (i, &q) in self.q_th.iter().enumerate() {
            if !(q > 0.0 && q < 1.0) {
                return err(format!("q_th[{i}] = {q} must lie in (0, 1)"));
            }
        }
        if !(self.train_q_th > 0.0 && self.train_q_th < 1.0) {
            return err(format!("train_q_th = {} must lie in (0, 1)", self.train_q_th));
        }
        for (i, &g) in self.gamma_th.iter().enumerate() {
            if !(g >= 0.0) || !g.is_finite() {
                return err(format!("gamma_th[{i}] = {g} must be finite and >= 0"));
            }
        }
        for (i, &s) in self.snr_db.iter().enumerate() {
            if !s.is_finite() {
                return err(format!("snr_db[{i}] must be finite"));
            }
        }
        if !self.train_snr_db.is_finite() {
            return err("train_snr_db must be finite".into());
        }
        if self.retrains < 1 {
            return err("retrains must be >= 1".into());
        }
        if self.n_test < 1 {
            return err("n_test must be >= 1".into());
        }
        if self.batches_per_epoch < 1 {
            return err("batches_per_epoch must be >= 1".into());
        }
        Ok(())
    }

    /// Simulator settings for a training or evaluation point.
    pub fn sim(&self, gamma_th: f64, snr_db: f64) -> SimConfig {
        SimConfig {
            gamma_th,
            snr_db,
            rate_agg: self.rate_agg,
            master_seed: self.master_seed,
            ..SimConfig::default()
        }
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_toml_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_names_missing_key() {
        let err = ExperimentConfig::from_toml_str("").unwrap_err().to_string();
        assert!(err.contains("experiment"), "{err}");
    }

    #[test]
    fn defaults_apply() {
        let cfg = ExperimentConfig::from_toml_str("experiment = \"d_sweep\"").unwrap();
        assert_eq!(cfg.d_values, vec![2, 4, 6, 8, 10]);
        assert_eq!(cfg.losses.len(), 4);
        assert_eq!(cfg.q_th, vec![0.4]);
        assert_eq!(cfg.retrains, 3);
        assert_eq!(cfg.n_test, 3000);
        assert_eq!(cfg.epochs, 65);
        let q = ExperimentConfig::from_toml_str("experiment = \"qth_sweep\"").unwrap();
        assert_eq!(q.q_th.len(), 9);
        let s = ExperimentConfig::from_toml_str("experiment = \"snr_sweep\"").unwrap();
        assert_eq!(s.snr_db, vec![-6.0, -3.0, 0.0, 3.0, 6.0]);
        let g = ExperimentConfig::from_toml_str("experiment = \"stress_sweep\"").unwrap();
        assert_eq!(g.gamma_th, vec![1.0, 1.2, 1.4]);
    }

    #[test]
    fn out_of_range_threshold_names_key() {
        let err = ExperimentConfig::from_toml_str("experiment = \"qth_sweep\"\nq_th = [0.2, 1.5]")
            .unwrap_err()
            .to_string();
        assert!(err.contains("q_th"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = ExperimentConfig::from_toml_str("experiment = \"d_sweep\"\nbogus = 1")
            .unwrap_err()
            .to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn duplicate_d_deduplicated_with_warning() {
        let cfg = ExperimentConfig::from_toml_str("experiment = \"d_sweep\"\nd = [2, 4, 2]").unwrap();
        assert_eq!(cfg.d_values, vec![2, 4]);
        assert_eq!(cfg.warnings.len(), 1);
        assert!(cfg.warnings[0].contains('d'));
    }

    #[test]
    fn full_scale_flag_sets_ten_retrains() {
        let cfg = ExperimentConfig::from_toml_str("experiment = \"d_sweep\"\npaper_scale = true").unwrap();
        assert_eq!(cfg.retrains, 10);
    }

    #[test]
    fn zero_retrains_rejected() {
        assert!(ExperimentConfig::from_toml_str("experiment = \"d_sweep\"\nretrains = 0").is_err());
        assert!(ExperimentConfig::from_toml_str("experiment = \"d_sweep\"\nd = []").is_err());
        assert!(ExperimentConfig::from_toml_str("experiment = \"d_sweep\"\nlosses = [\"OLF\"]").is_err());
    }
}
