//! Loop settings and artifacts shared by both training stages.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{checkpoint, ParamSet, Real};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Log a CSV row every this many steps (and at the last step).
    pub log_every: usize,
    /// Write an intermediate checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.log_every == 0 {
            return Err(Error::Config("steps, batch_size and log_every must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Epoch-wise shuffled batches over `n` items.
pub(crate) struct Batcher {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    pub fn new(n: usize, rng: ChaCha8Rng) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
            rng,
        }
    }

    pub fn next(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        if self.pos + size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + size].to_vec();
        self.pos += size;
        out
    }
}

/// CSV training log plus checkpoint files under an optional output directory.
pub(crate) struct Artifacts {
    dir: Option<PathBuf>,
    prefix: &'static str,
    log: Option<std::fs::File>,
}

impl Artifacts {
    pub fn new(dir: Option<&Path>, prefix: &'static str, header: &str) -> Result<Self> {
        let log = match dir {
            Some(d) => {
                std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
                let path = d.join(format!("{prefix}_log.csv"));
                let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                writeln!(f, "{header}").map_err(|e| Error::io(&path, e))?;
                Some(f)
            }
            None => None,
        };
        Ok(Self {
            dir: dir.map(Path::to_path_buf),
            prefix,
            log,
        })
    }

    pub fn row(&mut self, line: &str) -> Result<()> {
        if let (Some(f), Some(d)) = (&mut self.log, &self.dir) {
            writeln!(f, "{line}").map_err(|e| Error::io(d, e))?;
        }
        Ok(())
    }

    pub fn checkpoint<T: Real>(&self, params: &ParamSet<T>, step: Option<usize>) -> Result<()> {
        if let Some(d) = &self.dir {
            let name = match step {
                Some(s) => format!("{}_step{s:06}.ckpt", self.prefix),
                None => format!("{}.ckpt", self.prefix),
            };
            checkpoint::save(params, &d.join(name))?;
        }
        Ok(())
    }
}
