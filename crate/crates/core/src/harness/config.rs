//! Experiment configuration, read from TOML.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{CorpusSpec, PartitionSpec};
use crate::faug::{FaugConfig, DEFAULT_GENERATOR_PARAMS};
use crate::fd::FdConfig;
use crate::fl::{FlConfig, DEFAULT_DECLARED_PARAMS};
use crate::sim::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    #[default]
    Fd,
    FdFaug,
    Fl,
    FlFaug,
    /// Each device trains alone on its own data.
    Standalone,
}

impl Arm {
    pub const ALL: [Arm; 5] = [Arm::Fd, Arm::FdFaug, Arm::Fl, Arm::FlFaug, Arm::Standalone];

    pub fn uses_faug(self) -> bool {
        matches!(self, Arm::FdFaug | Arm::FlFaug)
    }

    pub fn name(self) -> &'static str {
        match self {
            Arm::Fd => "fd",
            Arm::FdFaug => "fd-faug",
            Arm::Fl => "fl",
            Arm::FlFaug => "fl-faug",
            Arm::Standalone => "standalone",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Arm::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            format!("unknown arm `{s}`; expected one of fd, fd-faug, fl, fl-faug, standalone")
        })
    }
}

/// Schedule shared by the FD, FL and standalone arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub local_steps: usize,
    pub global_rounds: usize,
    pub batch_size: usize,
    /// Weight of the distillation term; ignored by FL.
    pub gamma: f64,
    pub eta: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let fd = FdConfig::default();
        Self {
            local_steps: fd.local_steps,
            global_rounds: fd.global_rounds,
            batch_size: fd.batch_size,
            gamma: fd.gamma,
            eta: fd.eta,
        }
    }
}

/// Sizes charged by the cost ledger, independent of the simulated networks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AccountingConfig {
    pub model_params: u64,
    pub generator_params: u64,
    pub pixels_per_sample: u64,
}

impl Default for AccountingConfig {
    fn default() -> Self {
        Self {
            model_params: DEFAULT_DECLARED_PARAMS,
            generator_params: DEFAULT_GENERATOR_PARAMS,
            pixels_per_sample: 784,
        }
    }
}

/// Real data in IDX files instead of the synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSource {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub arm: Arm,
    pub workers: usize,
    pub repeats: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub corpus: CorpusSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub idx: Option<IdxSource>,
    pub partition: PartitionSpec,
    pub model: ModelSpec,
    pub training: TrainingConfig,
    /// Required by the `+faug` arms, ignored otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub faug: Option<FaugConfig>,
    pub accounting: AccountingConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            arm: Arm::Fd,
            workers: 1,
            repeats: 1,
            out_dir: None,
            corpus: CorpusSpec::default(),
            idx: None,
            partition: PartitionSpec::default(),
            model: ModelSpec::default(),
            training: TrainingConfig::default(),
            faug: Some(FaugConfig::default()),
            accounting: AccountingConfig::default(),
        }
    }
}

/// Validation failure with the dotted path of the offending setting.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

fn err<T>(path: &str, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        path: path.to_string(),
        message: message.into(),
    })
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError {
            path: "<toml>".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Training samples per device pool for the synthetic corpus.
    fn synthetic_train_size(&self) -> usize {
        let c = &self.corpus;
        let test = (c.test_fraction * c.per_label as f64).round() as usize;
        c.num_labels * (c.per_label - test.min(c.per_label))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.workers == 0 {
            return err("workers", "must be at least 1");
        }
        if self.repeats == 0 {
            return err("repeats", "must be at least 1");
        }
        if let Err(e) = self.corpus.validate() {
            return err("corpus", e.to_string());
        }

        let p = &self.partition;
        let min_devices = if self.arm == Arm::Standalone { 1 } else { 2 };
        if p.num_devices < min_devices {
            return err(
                "partition.num_devices",
                format!("arm {} needs at least {min_devices} devices", self.arm),
            );
        }
        if p.num_target_labels >= self.corpus.num_labels {
            return err(
                "partition.num_target_labels",
                "must be below corpus.num_labels",
            );
        }
        if p.target_keep_count == 0 {
            return err("partition.target_keep_count", "must be at least 1");
        }
        if p.per_device_draw == 0 {
            return err("partition.per_device_draw", "must be positive");
        }
        if self.idx.is_none() && p.per_device_draw > self.synthetic_train_size() {
            return err(
                "partition.per_device_draw",
                format!(
                    "exceeds the {} training samples of the corpus",
                    self.synthetic_train_size()
                ),
            );
        }

        if self.model.hidden.contains(&0) {
            return err("model.hidden", "layer widths must be positive");
        }
        let t = &self.training;
        if t.batch_size == 0 {
            return err("training.batch_size", "must be positive");
        }
        if !(t.eta > 0.0 && t.eta.is_finite()) {
            return err("training.eta", "must be positive and finite");
        }
        if !(t.gamma >= 0.0 && t.gamma.is_finite()) {
            return err("training.gamma", "must be nonnegative and finite");
        }

        if self.arm.uses_faug() {
            match &self.faug {
                None => return err("faug", format!("section required for arm {}", self.arm)),
                Some(f) => {
                    if let Err(e) = f.validate(self.corpus.num_labels) {
                        return err("faug", e.to_string());
                    }
                }
            }
        }

        let a = &self.accounting;
        for (name, v) in [
            ("accounting.model_params", a.model_params),
            ("accounting.generator_params", a.generator_params),
            ("accounting.pixels_per_sample", a.pixels_per_sample),
        ] {
            if v == 0 {
                return err(name, "declared sizes must be positive");
            }
        }
        Ok(())
    }

    pub fn fd_config(&self, seed: u64) -> FdConfig {
        FdConfig {
            local_steps: self.training.local_steps,
            global_rounds: self.training.global_rounds,
            batch_size: self.training.batch_size,
            gamma: self.training.gamma,
            eta: self.training.eta,
            seed,
        }
    }

    pub fn fl_config(&self, seed: u64) -> FlConfig {
        FlConfig {
            local_steps: self.training.local_steps,
            global_rounds: self.training.global_rounds,
            batch_size: self.training.batch_size,
            eta: self.training.eta,
            seed,
            declared_params: self.accounting.model_params,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_document_fills_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            "seed = 7\narm = \"fl\"\n[partition]\nnum_devices = 6\n[training]\nglobal_rounds = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.arm, Arm::Fl);
        assert_eq!(cfg.partition.num_devices, 6);
        assert_eq!(cfg.partition.per_device_draw, 2000);
        assert_eq!(cfg.training.global_rounds, 3);
        assert_eq!(cfg.accounting.model_params, 1_199_648);
        assert!(cfg.faug.is_none());
    }

    #[test]
    fn errors_carry_paths() {
        let path_of = |text: &str| ExperimentConfig::from_toml_str(text).unwrap_err().path;
        assert_eq!(path_of("[training]\neta = 0.0\n"), "training.eta");
        assert_eq!(
            path_of("[accounting]\ngenerator_params = 0\n"),
            "accounting.generator_params"
        );
        assert_eq!(path_of("arm = \"fd-faug\"\n"), "faug");
        assert_eq!(
            path_of("arm = \"fd-faug\"\n[faug]\nthreshold_ratio = 1.5\n"),
            "faug"
        );
        assert_eq!(
            path_of("[partition]\nnum_devices = 1\n"),
            "partition.num_devices"
        );
        assert_eq!(
            path_of("[partition]\nper_device_draw = 999999\n"),
            "partition.per_device_draw"
        );
        assert_eq!(path_of("workers = 0\n"), "workers");
        assert_eq!(path_of("[corpus]\nnum_labels = 1\n"), "corpus");
        assert_eq!(path_of("bogus = 1\n"), "<toml>");
        assert_eq!(path_of("arm = \"fedprox\"\n"), "<toml>");
    }

    #[test]
    fn arm_names_parse_back() {
        for a in Arm::ALL {
            assert_eq!(a.name().parse::<Arm>().unwrap(), a);
        }
        assert!("FD".parse::<Arm>().is_err());
    }

    #[test]
    fn faug_section_optional_for_plain_arms() {
        let cfg =
            ExperimentConfig::from_toml_str("arm = \"standalone\"\n[partition]\nnum_devices = 1\n")
                .unwrap();
        assert!(cfg.faug.is_none());
    }
}
