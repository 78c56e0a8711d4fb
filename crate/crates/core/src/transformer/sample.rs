use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Any model of `p(s_i | s_<i)` over a fixed-length sequence.
pub trait Autoregressive {
    /// Vocabulary size `K`.
    fn vocab(&self) -> usize;

    /// Sequence length `h * w`.
    fn seq_len(&self) -> usize;

    /// Natural-log probabilities of the next token after `prefix`.
    fn next_log_probs(&self, prefix: &[u16]) -> Result<Vec<f64>>;
}

/// Mean per-token negative log-likelihood (nats) of complete sequences.
pub fn sequence_nll<M: Autoregressive + ?Sized>(model: &M, seqs: &[Vec<u16>]) -> Result<f64> {
    if seqs.is_empty() {
        return Err(Error::invalid("no sequences"));
    }
    let mut total = 0.0;
    for s in seqs {
        if s.len() != model.seq_len() {
            return Err(Error::shape("sequence_nll", &[s.len()], &[model.seq_len()]));
        }
        for i in 0..s.len() {
            let lp = model.next_log_probs(&s[..i])?;
            let t = s[i] as usize;
            if t >= lp.len() {
                return Err(Error::invalid(format!("token {t} outside a vocabulary of {}", lp.len())));
            }
            total -= lp[t];
        }
    }
    Ok(total / (seqs.len() * model.seq_len()) as f64)
}

/// Temperature and top-k truncation for ancestral sampling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub temperature: f64,
    /// Keep the `k` most likely tokens; `None` keeps the whole vocabulary.
    pub top_k: Option<usize>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_k: None,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self, vocab: usize) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if let Some(k) = self.top_k {
            if k == 0 || k > vocab {
                return Err(Error::Config(format!("top_k must lie in [1, {vocab}], got {k}")));
            }
        }
        Ok(())
    }
}

/// Draws one token from `log_probs` with one uniform from `rng`.
///
/// Tokens are ranked by probability (ties by index); the top `k` are kept,
/// rescaled by `1 / temperature` and sampled by inverse CDF.
pub fn draw<R: Rng>(log_probs: &[f64], cfg: &SamplingConfig, rng: &mut R) -> u16 {
    let mut order: Vec<usize> = (0..log_probs.len()).collect();
    order.sort_by(|&a, &b| log_probs[b].total_cmp(&log_probs[a]).then(a.cmp(&b)));
    let keep = cfg.top_k.unwrap_or(order.len()).min(order.len()).max(1);
    order.truncate(keep);
    let u: f64 = rng.gen();
    if keep == 1 {
        return order[0] as u16;
    }
    let top = log_probs[order[0]] / cfg.temperature;
    let weights: Vec<f64> = order.iter().map(|&i| (log_probs[i] / cfg.temperature - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for (&i, w) in order.iter().zip(&weights) {
        acc += w / total;
        if u < acc {
            return i as u16;
        }
    }
    *order.last().expect("non-empty") as u16
}

/// Ancestral sampling of one full sequence.
pub fn ancestral_sample<M: Autoregressive + ?Sized, R: Rng>(model: &M, cfg: &SamplingConfig, rng: &mut R) -> Result<Vec<u16>> {
    cfg.validate(model.vocab())?;
    let mut seq = Vec::with_capacity(model.seq_len());
    for _ in 0..model.seq_len() {
        let lp = model.next_log_probs(&seq)?;
        seq.push(draw(&lp, cfg, rng));
    }
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    struct Fixed(Vec<f64>, usize);

    impl Autoregressive for Fixed {
        fn vocab(&self) -> usize {
            self.0.len()
        }
        fn seq_len(&self) -> usize {
            self.1
        }
        fn next_log_probs(&self, _: &[u16]) -> Result<Vec<f64>> {
            Ok(self.0.iter().map(|p| p.ln()).collect())
        }
    }

    #[test]
    fn uniform_model_nll_is_log_k() {
        let m = Fixed(vec![0.25; 4], 3);
        let nll = sequence_nll(&m, &[vec![0, 1, 2], vec![3, 3, 3]]).unwrap();
        assert!((nll - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn top1_is_greedy() {
        let m = Fixed(vec![0.2, 0.5, 0.3], 4);
        let cfg = SamplingConfig {
            temperature: 1.0,
            top_k: Some(1),
        };
        for seed in 0..5 {
            assert_eq!(ancestral_sample(&m, &cfg, &mut substream(seed, "s")).unwrap(), vec![1; 4]);
        }
    }

    #[test]
    fn invalid_sampling_settings() {
        let bad_t = SamplingConfig {
            temperature: 0.0,
            top_k: None,
        };
        assert!(bad_t.validate(4).is_err());
        let bad_k = SamplingConfig {
            temperature: 1.0,
            top_k: Some(5),
        };
        assert!(bad_k.validate(4).is_err());
    }
}
