use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_commit_terms, loss_raydrop, loss_rec};
use super::{GeometricTransform, VqVae};
use crate::autodiff::{adam_step, AdamConfig, Graph, Real, Tensor};
use crate::dataset::Scan;
use crate::error::{Error, Result};
use crate::rng::{substream, stream};
use crate::training::{Artifacts, Batcher, TrainConfig};

/// Dead-code handling for the codebook.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodebookUpkeep {
    /// Initialize every code from encoder outputs of the first batch.
    pub data_init: bool,
    /// Codes unused for this many steps (at least one epoch) are re-seeded.
    pub dead_code_window: usize,
    /// Re-seeding stops after this fraction of the run so assignments can settle.
    pub reseed_until: f64,
}

impl Default for CodebookUpkeep {
    fn default() -> Self {
        Self {
            data_init: true,
            dead_code_window: 200,
            reseed_until: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VqLogRow {
    pub step: usize,
    pub rec: f64,
    pub raydrop: f64,
    pub commit: f64,
    pub total: f64,
    pub usage: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VqTrainLog {
    pub rows: Vec<VqLogRow>,
    /// `(step, codes re-seeded)`.
    pub reseeds: Vec<(usize, usize)>,
}

/// CSV header of the autoencoder training log.
pub const VQ_LOG_HEADER: &str = "step,l_rec,l_rl,l_com,total,codebook_usage_fraction";

/// Optimizes the model on `data` with Adam. Logs and checkpoints go to `out_dir`.
///
/// Randomness: batches from the `batch` stream, augmentation from `gp`, code
/// re-seeding from `init`, all under `seed`.
pub fn train_vqvae(
    model: &mut VqVae<f32>,
    data: &[Scan],
    cfg: &TrainConfig,
    upkeep: &CodebookUpkeep,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<VqTrainLog> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let adam = AdamConfig::with_lr(cfg.lr);
    adam.validate()?;
    let mcfg = model.config().clone();
    let (h, w) = model.input_shape();
    let px = h * w;
    let k = mcfg.codebook_size;
    let mut batcher = Batcher::new(data.len(), substream(seed, stream::BATCH));
    let mut gp_rng = substream(seed, stream::GP);
    let mut code_rng = substream(seed ^ 0x5eed, stream::INIT);
    let steps_per_epoch = data.len().div_ceil(cfg.batch_size);
    let window = upkeep.dead_code_window.max(steps_per_epoch);
    let reseed_until = (cfg.steps as f64 * upkeep.reseed_until) as usize;
    let mut last_used = vec![0usize; k];
    let mut window_used = vec![false; k];
    let mut art = Artifacts::new(out_dir, "vqvae", VQ_LOG_HEADER)?;
    let mut log = VqTrainLog::default();

    for step in 0..cfg.steps {
        let batch: Vec<&Scan> = batcher.next(cfg.batch_size).into_iter().map(|i| &data[i]).collect();
        let n = batch.len();
        let x = model.batch_input(&batch)?;
        let m_data: Vec<f32> = batch.iter().flat_map(|s| s.mask.bits().iter().map(|&b| b as f32)).collect();
        let m = Tensor::new(vec![n, 1, h, w], m_data)?;

        let (enc_in, x_t, m_t) = if mcfg.gp.enabled && gp_rng.gen_bool(mcfg.gp.probability) {
            let t = GeometricTransform::sample(&mcfg.gp, &mut gp_rng);
            let mut xs = Vec::with_capacity(n * px);
            let mut ms = Vec::with_capacity(n * px);
            for s in &batch {
                xs.extend(t.apply(s.range.values(), h, w)?);
                ms.extend(t.apply(s.mask.bits(), h, w)?.into_iter().map(|b| b as f32));
            }
            let x_t = Tensor::new(vec![n, 1, h, w], xs)?;
            let enc_in = if mcfg.gp.transform_encoder_input { x_t.clone() } else { x };
            (enc_in, x_t, Tensor::new(vec![n, 1, h, w], ms)?)
        } else {
            (x.clone(), x, m)
        };

        if step == 0 && upkeep.data_init {
            let z = encoder_vectors(model, &enc_in)?;
            reseed(model, &z, &(0..k).collect::<Vec<_>>(), &mut code_rng);
        }

        let mut g = Graph::new().with_finite_checks(true);
        let b = model.params().bind(&mut g);
        let xin = g.constant(enc_in);
        let (f, tokens) = model.forward(&mut g, &b, xin)?;
        let xt = g.constant(x_t);
        let mt = g.constant(m_t);
        let (rec, rl) = match f.logits {
            Some(logits) => (loss_rec(&mut g, xt, mt, f.range)?, Some(loss_raydrop(&mut g, mt, logits)?)),
            None => {
                // baseline: regress the noisy composite everywhere
                let d = g.sub(xt, f.range)?;
                let d = g.abs(d)?;
                (g.mean(d)?, None)
            }
        };
        let (cb_term, enc_term) = loss_commit_terms(&mut g, f.z, f.z_q)?;
        let enc_term = g.scale(enc_term, mcfg.beta as f32)?;
        let com = g.add(cb_term, enc_term)?;
        let total = super::loss::loss_total(&mut g, rec, rl, com, mcfg.lambda)?;
        let total_v = g.value(total).item() as f64;
        if !total_v.is_finite() {
            return Err(Error::NonFinite {
                op: "vqvae total loss",
                node: total.index(),
            });
        }
        let grads = g.backward(total)?;
        let pg = b.gradients(model.params(), &grads);
        adam_step(model.params_mut(), &pg, &adam)?;

        for &t in &tokens {
            last_used[t] = step + 1;
            window_used[t] = true;
        }
        if (step + 1) % window == 0 && step + 1 <= reseed_until {
            let dead: Vec<usize> = (0..k).filter(|&c| step + 1 - last_used[c] >= window).collect();
            if !dead.is_empty() {
                let z = g.value(f.z).clone();
                reseed(model, &z, &dead, &mut code_rng);
                for &c in &dead {
                    last_used[c] = step + 1;
                }
                log.reseeds.push((step + 1, dead.len()));
            }
        }

        if (step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps {
            let row = VqLogRow {
                step: step + 1,
                rec: g.value(rec).item() as f64,
                raydrop: rl.map_or(0.0, |v| g.value(v).item() as f64),
                commit: g.value(com).item() as f64,
                total: total_v,
                usage: window_used.iter().filter(|&&u| u).count() as f64 / k as f64,
            };
            art.row(&format!(
                "{},{},{},{},{},{}",
                row.step, row.rec, row.raydrop, row.commit, row.total, row.usage
            ))?;
            log.rows.push(row);
            window_used.iter_mut().for_each(|u| *u = false);
        }
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.steps {
            art.checkpoint(model.params(), Some(step + 1))?;
        }
    }
    art.checkpoint(model.params(), None)?;
    Ok(log)
}

fn encoder_vectors<T: Real>(model: &VqVae<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let b = model.params().bind_frozen(&mut g);
    let xin = g.constant(x.clone());
    let z = model.encode(&mut g, &b, xin)?;
    Ok(g.value(z).clone())
}

/// Sets each listed code to a random encoder vector of `z: [n, d, h, w]` plus a
/// small jitter, and clears its optimizer moments.
fn reseed<T: Real, R: Rng>(model: &mut VqVae<T>, z: &Tensor<T>, codes: &[usize], rng: &mut R) {
    let [n, d, h, w] = z.shape() else { return };
    let (d, plane) = (*d, h * w);
    let total = n * plane;
    let mut scale = 0.0;
    for v in z.data() {
        scale += v.as_f64() * v.as_f64();
    }
    let jitter = 1e-3 * (scale / z.len() as f64).sqrt().max(1e-6);
    let id = model.codebook_id();
    let zd = z.data().to_vec();
    let ps = model.params_mut();
    let mut rows = Vec::with_capacity(codes.len());
    for _ in codes {
        let pick = rng.gen_range(0..total);
        let (b, p) = (pick / plane, pick % plane);
        let row: Vec<T> = (0..d)
            .map(|c| zd[(b * d + c) * plane + p] + T::lit(rng.gen_range(-jitter..=jitter)))
            .collect();
        rows.push(row);
    }
    let param = ps.get_mut(id);
    for (&c, row) in codes.iter().zip(&rows) {
        param.data_mut()[c * d..(c + 1) * d].copy_from_slice(row);
    }
    ps.reset_moments_rows(id, codes, d);
}
