//! The run configuration file: one TOML document with a section per stage.
//!
//! Sections may be omitted and then take their desk-preset values; keys inside a
//! section must all be present, and unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::ProjectionConfig;
use crate::metrics::MetricsConfig;
use crate::synth::SceneSpec;
use crate::training::TrainConfig;
use crate::transformer::TransformerConfig;
use crate::vqvae::{CodebookUpkeep, VqVaeConfig};

/// File name of the resolved configuration echoed into output directories.
pub const ECHO_NAME: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub scene: SceneSpec,
    pub train: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub vqvae: TrainConfig,
    pub transformer: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    /// Scans drawn by `sample`.
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Holds `train/` and `test/` scan directories.
    pub data_dir: PathBuf,
    /// Holds one subdirectory per stage.
    pub run_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root of every random stream (data, init, gp, batch, sampling, metrics).
    pub seed: u64,
    pub projection: ProjectionConfig,
    pub synth: SynthConfig,
    pub vqvae: VqVaeConfig,
    pub codebook: CodebookUpkeep,
    pub transformer: TransformerConfig,
    pub training: TrainingConfig,
    pub sample: SampleConfig,
    pub metrics: MetricsConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// 16 x 64 synthetic scans, 256 for training and 64 held out.
    pub fn desk() -> Self {
        Self {
            seed: 0,
            projection: ProjectionConfig::desk(16, 64),
            synth: SynthConfig {
                scene: SceneSpec::default(),
                train: 256,
                test: 64,
            },
            vqvae: VqVaeConfig::desk(),
            codebook: CodebookUpkeep::default(),
            transformer: TransformerConfig::desk(),
            training: TrainingConfig {
                vqvae: TrainConfig {
                    steps: 2000,
                    batch_size: 8,
                    lr: 2e-3,
                    log_every: 50,
                    checkpoint_every: 0,
                },
                transformer: TrainConfig {
                    steps: 1500,
                    batch_size: 16,
                    lr: 1e-3,
                    log_every: 50,
                    checkpoint_every: 0,
                },
            },
            sample: SampleConfig { count: 64 },
            metrics: MetricsConfig::default(),
            paths: PathsConfig {
                data_dir: PathBuf::from("data"),
                run_dir: PathBuf::from("run"),
            },
        }
    }

    /// 64 x 1024 projection with the large model presets.
    pub fn full_scale() -> Self {
        let mut c = Self::desk();
        c.projection = ProjectionConfig::kitti360();
        c.vqvae = VqVaeConfig::full_scale();
        c.transformer = TransformerConfig::full_scale();
        c.metrics.bev = crate::metrics::BevConfig::kitti();
        c.metrics.feature_range_max = c.projection.range_max;
        c.training.vqvae.lr = 1e-4;
        c.training.transformer.lr = 3e-4;
        c
    }

    /// Copies the root seed into nested seeds. Nested seeds left at 0 are
    /// filled; any other value must equal the root.
    pub fn resolve(mut self) -> Result<Self> {
        for (name, s) in [("synth.scene.seed", &mut self.synth.scene.seed), ("metrics.seed", &mut self.metrics.seed)] {
            if *s != 0 && *s != self.seed {
                return Err(Error::Config(format!(
                    "{name} ({s}) differs from the root seed ({}); set only the root seed",
                    self.seed
                )));
            }
            *s = self.seed;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.projection.validate()?;
        self.synth.scene.validate()?;
        self.vqvae.validate()?;
        self.vqvae.latent_shape(self.projection.height, self.projection.width)?;
        self.transformer.validate()?;
        self.transformer.sampling.validate(self.vqvae.codebook_size)?;
        self.training.vqvae.validate()?;
        self.training.transformer.validate()?;
        self.metrics.validate()?;
        if self.synth.train == 0 || self.synth.test == 0 {
            return Err(Error::Config("synth.train and synth.test must be positive".into()));
        }
        if self.sample.count == 0 {
            return Err(Error::Config("sample.count must be positive".into()));
        }
        let up = &self.codebook;
        if up.dead_code_window == 0 || !(0.0..=1.0).contains(&up.reseed_until) {
            return Err(Error::Config(
                "codebook.dead_code_window must be positive and reseed_until in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Writes the resolved config into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(ECHO_NAME);
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))
    }
}
