//! The single JSON document that drives every subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trajplan_core::artifact::{config_hash, Provenance};
use trajplan_core::fm_im::MlpTrainConfig;
use trajplan_core::kinematics::ArmModel;
use trajplan_core::nn::OptimizerConfig;
use trajplan_core::tm::TmArchitecture;
use trajplan_core::trainer::TmTrainConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Arm description file; the built-in 7-DoF arm when absent.
    pub arm: Option<PathBuf>,
    pub babbling: BabblingConfig,
    pub recording: RecordingConfig,
    pub fm: MlpTrainConfig,
    pub im: MlpTrainConfig,
    pub tm: TmConfig,
    pub sweep: SweepSpec,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            arm: None,
            babbling: BabblingConfig::default(),
            recording: RecordingConfig::default(),
            fm: MlpTrainConfig::forward_default(),
            im: MlpTrainConfig::inverse_default(),
            tm: TmConfig::default(),
            sweep: SweepSpec::default(),
            eval: EvalConfig::default(),
            bench: BenchConfig::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BabblingConfig {
    pub n: usize,
    /// Per-joint action bound in rad.
    pub delta_bound: f64,
    pub seed: u64,
}

impl Default for BabblingConfig {
    fn default() -> Self {
        BabblingConfig { n: 20_000, delta_bound: 0.1, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecordingConfig {
    pub n: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    /// Per-joint start noise around the home configuration, in rad.
    pub init_noise: f64,
    pub seed: u64,
}

impl Default for RecordingConfig {
    fn default() -> Self {
        RecordingConfig { n: 12_000, horizon: 11, init_noise: 0.05, seed: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TmConfig {
    pub architecture: TmArchitecture,
    pub train: TmTrainConfig,
    /// Initialization seed; `--seed` sets both this and the shuffle seed.
    pub init_seed: u64,
    /// Write a checkpoint every k epochs; 0 disables checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TmConfig {
    fn default() -> Self {
        TmConfig { architecture: TmArchitecture::default(), train: TmTrainConfig::default(), init_seed: 0, checkpoint_every: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedOptimizer {
    pub name: String,
    pub optimizer: OptimizerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub configs: Vec<NamedOptimizer>,
    pub trials: usize,
    /// Per-trial seeds are drawn from this; trial k uses the same seed for every config.
    pub master_seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        let named = |name: &str, optimizer| NamedOptimizer { name: name.to_string(), optimizer };
        SweepSpec {
            configs: vec![
                named("1", OptimizerConfig::adam(1e-3)),
                named("2", OptimizerConfig::adam(1e-4)),
                named("3", OptimizerConfig::rmsprop(1e-2, 0.99)),
                named("4", OptimizerConfig::rmsprop(1e-3, 0.99)),
                named("5", OptimizerConfig::sgd(0.5)),
                named("6", OptimizerConfig::sgd(1.0)),
            ],
            trials: 10,
            master_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub bins: usize,
    /// Sharp-turn threshold in degrees; the corpus mean of the per-trajectory
    /// minimum angle when absent.
    pub sharp_turn_threshold: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { bins: 20, sharp_turn_threshold: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub trials: usize,
    /// Seeds the random endpoint pairs (and the weights of an untrained model).
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { trials: 1000, seed: 0 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::missing(path, e))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if let Some(arm) = &self.arm {
            if !arm.is_file() {
                return Err(CliError::MissingInput(arm.clone()));
            }
        }
        if self.babbling.n == 0 || !(self.babbling.delta_bound > 0.0) {
            return bad("babbling.n and babbling.delta_bound must be positive");
        }
        if self.recording.n == 0 || self.recording.horizon < 2 || !(self.recording.init_noise >= 0.0) {
            return bad("recording needs n >= 1, T >= 2 and init_noise >= 0");
        }
        if self.recording.horizon != self.tm.architecture.horizon {
            return bad("recording.T must equal tm.architecture.T");
        }
        if self.sweep.configs.is_empty() || self.sweep.trials == 0 {
            return bad("sweep needs at least one config and one trial");
        }
        let mut names = std::collections::HashSet::new();
        for c in &self.sweep.configs {
            if !names.insert(c.name.as_str()) {
                return Err(CliError::Config(format!("duplicate sweep config name {:?}", c.name)));
            }
            c.optimizer.validate().map_err(|e| CliError::Config(format!("sweep config {}: {e}", c.name)))?;
        }
        if self.eval.bins == 0 || self.bench.trials == 0 {
            return bad("eval.bins and bench.trials must be positive");
        }
        self.tm.train.validate().map_err(|e| CliError::Config(format!("tm.train: {e}")))?;
        for (name, m) in [("fm", &self.fm), ("im", &self.im)] {
            m.optimizer.validate().map_err(|e| CliError::Config(format!("{name}.optimizer: {e}")))?;
        }
        Ok(())
    }

    pub fn arm(&self) -> Result<ArmModel, CliError> {
        let arm = match &self.arm {
            Some(path) => ArmModel::load(path)?,
            None => ArmModel::default_arm(),
        };
        self.tm.architecture.validate(arm.dof()).map_err(|e| CliError::Config(format!("tm.architecture: {e}")))?;
        Ok(arm)
    }

    /// Hash of the config with the output directory blanked, so the same
    /// run written to two places carries the same provenance.
    pub fn hash(&self) -> Result<String, CliError> {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        Ok(config_hash(&canonical)?)
    }

    pub fn provenance(&self, seed: u64) -> Result<Provenance, CliError> {
        Ok(Provenance { config_hash: self.hash()?, seed })
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.sweep.configs.len(), 6);
        assert_eq!(cfg.sweep.trials, 10);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"babbling": {"n": 5000}, "tm": {"train": {"epochs": 3}}}"#).unwrap();
        assert_eq!(cfg.babbling.n, 5000);
        assert_eq!(cfg.babbling.delta_bound, 0.1);
        assert_eq!(cfg.tm.train.epochs, 3);
        assert_eq!(cfg.tm.train.batch_size, 64);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"babling": {}}"#).is_err());
        let mut cfg = RunConfig::default();
        cfg.sweep.trials = 0;
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
        let mut cfg = RunConfig::default();
        cfg.arm = Some(PathBuf::from("/definitely/not/here.json"));
        assert!(matches!(cfg.validate(), Err(CliError::MissingInput(_))));
    }

    #[test]
    fn hash_ignores_output_directory() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.out_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.babbling.seed += 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }
}
