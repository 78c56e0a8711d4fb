use std::path::Path;

use super::model::Transformer;
use crate::autodiff::{adam_step, AdamConfig, Graph};
use crate::error::{Error, Result};
use crate::rng::{stream, substream};
use crate::training::{Artifacts, Batcher, TrainConfig};

pub const AR_LOG_HEADER: &str = "step,nll";

/// Teacher-forced NLL minimization over token sequences of length `h * w`.
/// Returns `(step, nll)` for every logged step.
pub fn train_transformer(
    model: &mut Transformer<f32>,
    data: &[Vec<u16>],
    cfg: &TrainConfig,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<Vec<(usize, f64)>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("empty token dataset"));
    }
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut batcher = Batcher::new(data.len(), substream(seed, stream::BATCH));
    let mut art = Artifacts::new(out_dir, "transformer", AR_LOG_HEADER)?;
    let mut log = Vec::new();
    for step in 0..cfg.steps {
        let batch: Vec<Vec<u16>> = batcher.next(cfg.batch_size).into_iter().map(|i| data[i].clone()).collect();
        let mut g = Graph::new().with_finite_checks(true);
        let b = model.params().bind(&mut g);
        let loss = model.nll_loss(&mut g, &b, &batch)?;
        let nll = g.value(loss).data()[0] as f64;
        let grads = g.backward(loss)?;
        let pg = b.gradients(model.params(), &grads);
        adam_step(model.params_mut(), &pg, &adam)?;

        if (step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps {
            log.push((step + 1, nll));
            art.row(&format!("{},{}", step + 1, nll))?;
        }
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            art.checkpoint(model.params(), Some(step + 1))?;
        }
    }
    art.checkpoint(model.params(), None)?;
    Ok(log)
}
