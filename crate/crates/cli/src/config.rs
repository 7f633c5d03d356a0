//! Experiment configuration: a TOML file with strictly checked sections.

use std::fs;
use std::path::{Path, PathBuf};

use prtrade::multask::{EvalConfig, RunSpec, TaskConfig, SEQ_LEN, VOCAB};
use prtrade::nn::{ModelConfig, TrainConfig};
use prtrade::ArtCaseParams;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "PRTRADE_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "prtrade-out";
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Label written to every CSV row; derived from method and seed if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    #[serde(default)]
    pub task: TaskConfig,
    #[serde(default = "default_model")]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artcase: Option<ArtCaseSection>,
}

fn default_model() -> ModelConfig {
    ModelConfig::standard(VOCAB, SEQ_LEN)
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            run_id: None,
            task: TaskConfig::default(),
            model: default_model(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            output: OutputConfig::default(),
            artcase: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub checkpoint: String,
    pub train_log: String,
    pub sweep_csv: String,
    pub artcase_csv: String,
    pub artcase_check_csv: String,
    pub sparsity_csv: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            checkpoint: "model.ckpt".into(),
            train_log: "train_log.csv".into(),
            sweep_csv: "sweep.csv".into(),
            artcase_csv: "artcase.csv".into(),
            artcase_check_csv: "artcase_check.csv".into(),
            sparsity_csv: "sparsity.csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtCaseSection {
    pub params: ArtCaseParams,
    #[serde(default = "default_art_t_grid")]
    pub t_grid: Vec<f64>,
    #[serde(default = "default_art_lambda_grid")]
    pub lambda_grid: Vec<f64>,
}

fn default_art_t_grid() -> Vec<f64> {
    vec![0.1, 0.5, 1.0, 2.0, 10.0]
}

fn default_art_lambda_grid() -> Vec<f64> {
    (-12..=12).map(|i| 10f64.powf(i as f64 / 4.0)).collect()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::config(format!("invalid config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message)))
    }

    /// Loads `path`, or the defaults when absent.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Sets every seed (data, initialization, shuffling, sampling).
    pub fn override_seed(&mut self, seed: u64) {
        self.task.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
        self.eval.seed = seed;
    }

    pub fn run_spec(&self) -> RunSpec {
        RunSpec {
            task: self.task.clone(),
            model: self.model.clone(),
            train: self.train.clone(),
        }
    }

    pub fn validate_training(&self) -> Result<(), CliError> {
        self.run_spec().validate().map_err(|e| CliError::config(format!("invalid config: {e}")))?;
        self.eval.validate().map_err(|e| CliError::config(format!("invalid [eval]: {e}")))
    }

    pub fn run_id(&self) -> String {
        self.run_id
            .clone()
            .unwrap_or_else(|| format!("{}-s{}", self.train.loss.method, self.train.seed))
    }

    /// `--out`, then `[output] dir`, then the environment, then the default.
    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.output.dir.clone())
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(RESOLVED_CONFIG);
        fs::write(&path, self.to_toml()).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::exit;

    #[test]
    fn empty_file_gives_the_standard_setup() {
        let cfg = ExperimentConfig::parse("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.model, ModelConfig::standard(12, 8));
        assert_eq!(cfg.train.epochs, 500);
        assert_eq!(cfg.train.batch_size, 512);
        assert_eq!(cfg.task.dataset_size, 25_000);
        cfg.validate_training().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = ExperimentConfig::parse("[train]\nlearnig_rate = 0.01\n").unwrap_err();
        assert_eq!(err.code, exit::CONFIG);
        assert!(err.message.contains("learnig_rate"), "{}", err.message);
        let err = ExperimentConfig::parse("[train.loss]\nmethod = \"cdiv\"\nalfa = 1.4\n").unwrap_err();
        assert!(err.message.contains("alfa"), "{}", err.message);
        assert!(ExperimentConfig::parse("colour = 1\n").is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let text = r#"
            run_id = "demo"
            [train]
            epochs = 3
            [train.loss]
            method = "truncr"
            delta_frac = 0.25
            [eval]
            t_grid = [1.0]
            n_samples = 10
            decoding = { kind = "top_p", p = 0.9 }
            [artcase]
            t_grid = [1.0]
            [artcase.params]
            vocab_size = 6
            k = 3
            len = 3
            l1 = 1
            l2 = 2
            rho = 0.3333333333333333
            a = 0.5
            epsilon = 0.1
        "#;
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(ExperimentConfig::parse(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(cfg.run_id(), "demo");
    }

    #[test]
    fn seed_override_reaches_every_component() {
        let mut cfg = ExperimentConfig::default();
        cfg.override_seed(9);
        assert_eq!((cfg.task.seed, cfg.model.seed, cfg.train.seed, cfg.eval.seed), (9, 9, 9, 9));
        assert_eq!(cfg.run_id(), "nll-s9");
        assert_eq!(cfg.run_spec(), prtrade::multask::RunSpec::standard(prtrade::LossSpec::nll(), 9));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let cfg = ExperimentConfig::parse("[task]\nskew = { b_level = 1.5 }\n").unwrap();
        assert_eq!(cfg.validate_training().unwrap_err().code, exit::CONFIG);
    }
}
