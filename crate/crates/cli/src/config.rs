//! Typed experiment configuration.
//!
//! Precedence, lowest first: built-in defaults, the `--config` TOML file,
//! command-line flags. The effective configuration is archived as
//! `config.toml` in every output directory.

use std::path::{Path, PathBuf};

use flowguide_core::gradcheck::GradcheckConfig;
use flowguide_core::{
    DegradationSpec, GuidanceConfig, LossWeights, NoiseSchedule, ReverseVariance, SceneGenConfig, Schedule,
};
use flowguide_models::{
    AutoencoderConfig, DenoiserConfig, DenoiserTrainConfig, FinetuneConfig, MotionConfig, PretrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const CONFIG_FILE: &str = "config.toml";

/// Output locations; relative entries resolve against `workdir`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub workdir: PathBuf,
    pub dataset: PathBuf,
    pub denoiser: PathBuf,
    pub samples: PathBuf,
    pub decoder: PathBuf,
    pub evaluation: PathBuf,
    pub ablation: PathBuf,
    pub gradcheck: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            workdir: PathBuf::from("run"),
            dataset: PathBuf::from("data"),
            denoiser: PathBuf::from("denoiser"),
            samples: PathBuf::from("samples"),
            decoder: PathBuf::from("decoder"),
            evaluation: PathBuf::from("evaluation"),
            ablation: PathBuf::from("ablation"),
            gradcheck: PathBuf::from("gradcheck"),
        }
    }
}

impl PathsConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.workdir.join(p)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_sequences: usize,
    pub heldout_sequences: usize,
    pub scene: SceneGenConfig,
    pub degradation: DegradationSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_sequences: 30,
            heldout_sequences: 20,
            scene: SceneGenConfig::default(),
            degradation: DegradationSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub sampling_steps: usize,
    pub variance: ReverseVariance,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            timesteps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            sampling_steps: 50,
            variance: ReverseVariance::Posterior,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<Schedule> {
        Ok(NoiseSchedule::linear(self.timesteps, self.beta_start, self.beta_end)?.with_variance(self.variance))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub workers: usize,
    /// Motion-guided sampling for `sample` and the fine-tuning latents.
    pub mds_on: bool,
    /// `finetune-decoder` decodes held-out samples with the temporal
    /// decoder, and `evaluate` reads those results by default.
    pub tsd_on: bool,
    pub paths: PathsConfig,
    pub data: DataConfig,
    pub schedule: ScheduleConfig,
    pub guidance: GuidanceConfig,
    pub motion: MotionConfig,
    pub autoencoder: AutoencoderConfig,
    pub pretrain: PretrainConfig,
    pub denoiser: DenoiserConfig,
    pub denoiser_training: DenoiserTrainConfig,
    pub finetune: FinetuneConfig,
    pub loss: LossWeights,
    pub gradcheck: GradcheckConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            mds_on: true,
            tsd_on: true,
            paths: PathsConfig::default(),
            data: DataConfig::default(),
            schedule: ScheduleConfig::default(),
            guidance: GuidanceConfig::default(),
            motion: MotionConfig::default(),
            autoencoder: AutoencoderConfig::default(),
            pretrain: PretrainConfig::default(),
            denoiser: DenoiserConfig::default(),
            denoiser_training: DenoiserTrainConfig::default(),
            finetune: FinetuneConfig::default(),
            loss: LossWeights::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => Self::default(),
        };
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(w) = overrides.workers {
            cfg.workers = w;
        }
        if let Some(o) = &overrides.out {
            cfg.paths.workdir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.seed > i64::MAX as u64 {
            return bad(format!("seed {} exceeds {}", self.seed, i64::MAX));
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        let s = &self.data.scene;
        if !s.height.is_multiple_of(8) || !s.width.is_multiple_of(8) {
            return bad(format!("frame size {}x{} must be divisible by 8", s.height, s.width));
        }
        if s.frames < 2 {
            return bad("sequences need at least 2 frames".into());
        }
        if self.data.train_sequences == 0 {
            return bad("need at least one training sequence".into());
        }
        self.data.degradation.validate()?;
        if !s.height.is_multiple_of(self.data.degradation.scale) || !s.width.is_multiple_of(self.data.degradation.scale) {
            return bad(format!("degradation scale {} does not divide the frame size", self.data.degradation.scale));
        }
        if self.autoencoder.latent_channels != self.denoiser.latent_channels {
            return bad(format!(
                "autoencoder latent channels {} differ from denoiser latent channels {}",
                self.autoencoder.latent_channels, self.denoiser.latent_channels
            ));
        }
        if self.denoiser.timesteps != self.schedule.timesteps {
            return bad(format!(
                "denoiser covers {} timesteps but the schedule has {}",
                self.denoiser.timesteps, self.schedule.timesteps
            ));
        }
        self.guidance.validate()?;
        let sched = self.schedule.build()?;
        sched.strided(self.schedule.sampling_steps)?;
        Ok(())
    }

    pub fn dir(&self, p: &Path) -> PathBuf {
        self.paths.resolve(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_keeps_defaults_and_flags_win() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "seed = 5\nworkers = 2\n[data]\ntrain_sequences = 3\n").unwrap();
        let o = Overrides {
            seed: Some(9),
            ..Default::default()
        };
        let cfg = ExperimentConfig::load(Some(&p), &o).unwrap();
        assert_eq!((cfg.seed, cfg.workers, cfg.data.train_sequences), (9, 2, 3));
        assert_eq!(cfg.data.heldout_sequences, 20);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(matches!(ExperimentConfig::from_toml("sed = 1"), Err(CliError::Config(_))));
        let mut cfg = ExperimentConfig::default();
        cfg.data.scene.height = 100;
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }
}
