use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sample::{draw, Autoregressive, SamplingConfig};
use crate::autodiff::{Bound, Graph, ParamId, ParamSet, Real, Var};
use crate::error::{Error, Result};
use crate::nn::{uniform, Linear};
use crate::rng::{indexed, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    /// Feed-forward width as a multiple of `d_model`.
    pub mlp_ratio: usize,
    /// Start with a zero output projection, i.e. a uniform next-token distribution.
    pub zero_init_output: bool,
    pub sampling: SamplingConfig,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TransformerConfig {
    pub fn desk() -> Self {
        Self {
            layers: 4,
            d_model: 128,
            heads: 4,
            mlp_ratio: 4,
            zero_init_output: true,
            sampling: SamplingConfig::default(),
        }
    }

    /// About 10M parameters for a 1024-code vocabulary over 512 positions.
    pub fn full_scale() -> Self {
        Self {
            layers: 12,
            d_model: 256,
            heads: 8,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.d_model == 0 || self.heads == 0 || self.mlp_ratio == 0 {
            return Err(Error::Config("transformer sizes must be positive".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model ({}) must be divisible by heads ({})",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Block {
    qkv: Linear,
    proj: Linear,
    fc: Linear,
    out: Linear,
}

/// Pre-norm causal decoder over `[BOS, s_0, ..., s_{T-2}]` predicting `s_0..s_{T-1}`.
/// The begin-of-sequence sentinel is token `K`.
#[derive(Clone, Debug)]
pub struct Transformer<T: Real> {
    config: TransformerConfig,
    vocab: usize,
    seq_len: usize,
    params: ParamSet<T>,
    tok_emb: ParamId,
    pos_emb: ParamId,
    blocks: Vec<Block>,
    head: Linear,
}

const LN_EPS: f64 = 1e-5;

impl<T: Real> Transformer<T> {
    pub fn new<R: Rng>(config: TransformerConfig, vocab: usize, seq_len: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if vocab < 2 || vocab >= u16::MAX as usize || seq_len == 0 {
            return Err(Error::Config(format!(
                "vocabulary must lie in [2, 65534] and sequences be non-empty (got {vocab}, {seq_len})"
            )));
        }
        let d = config.d_model;
        let mut ps = ParamSet::new();
        let tok_emb = ps.add("tok_emb", uniform(&[vocab + 1, d], 0.1, rng));
        let pos_emb = ps.add("pos_emb", uniform(&[seq_len + 1, d], 0.1, rng));
        // residual branches are scaled down with depth
        let resid_gain = 1.0 / (2.0 * config.layers as f64).sqrt();
        let blocks = (0..config.layers)
            .map(|i| Block {
                qkv: Linear::new(&mut ps, &format!("block{i}.qkv"), d, 3 * d, 1.0, rng),
                proj: Linear::new(&mut ps, &format!("block{i}.proj"), d, d, resid_gain, rng),
                fc: Linear::new(&mut ps, &format!("block{i}.fc"), d, config.mlp_ratio * d, 1.0, rng),
                out: Linear::new(&mut ps, &format!("block{i}.out"), config.mlp_ratio * d, d, resid_gain, rng),
            })
            .collect();
        let gain = if config.zero_init_output { 0.0 } else { 1.0 };
        let head = Linear::new(&mut ps, "head", d, vocab, gain, rng);
        Ok(Self {
            config,
            vocab,
            seq_len,
            params: ps,
            tok_emb,
            pos_emb,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn sentinel(&self) -> u16 {
        self.vocab as u16
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn cast<U: Real>(&self) -> Transformer<U> {
        Transformer {
            config: self.config.clone(),
            vocab: self.vocab,
            seq_len: self.seq_len,
            params: self.params.cast(),
            tok_emb: self.tok_emb,
            pos_emb: self.pos_emb,
            blocks: self.blocks.clone(),
            head: self.head.clone(),
        }
    }

    /// Token embedding table row of the sentinel and every code; exposed for probes.
    pub fn token_embedding_id(&self) -> ParamId {
        self.tok_emb
    }

    /// Next-token logits `[n * len, K]` for `n` inputs of equal length `len`
    /// (each starting with the sentinel).
    pub fn logits(&self, g: &mut Graph<T>, b: &Bound, inputs: &[Vec<u16>]) -> Result<Var> {
        let n = inputs.len();
        let len = inputs.first().map_or(0, Vec::len);
        if n == 0 || len == 0 || len > self.seq_len || inputs.iter().any(|s| s.len() != len) {
            return Err(Error::invalid(format!(
                "inputs must be non-empty, of equal length and at most {} tokens",
                self.seq_len
            )));
        }
        let ids: Vec<usize> = inputs.iter().flatten().map(|&t| t as usize).collect();
        if let Some(t) = ids.iter().find(|&&t| t > self.vocab) {
            return Err(Error::invalid(format!("token {t} outside the vocabulary")));
        }
        let d = self.config.d_model;
        let (nh, dh) = (self.config.heads, d / self.config.heads);
        let tok = g.embedding(b[self.tok_emb], &ids)?;
        let pos_ids: Vec<usize> = (0..n).flat_map(|_| 0..len).collect();
        let pos = g.embedding(b[self.pos_emb], &pos_ids)?;
        let mut x = g.add(tok, pos)?;

        // row-major [len, len]; true above the diagonal
        let mask: Arc<[bool]> = (0..len * len).map(|i| i % len > i / len).collect();
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        for blk in &self.blocks {
            let h = g.layer_norm(x, LN_EPS)?;
            let qkv = blk.qkv.forward(g, b, h)?;
            let qkv = g.reshape(qkv, &[n, len, 3, nh, dh])?;
            let qkv = g.permute(qkv, &[2, 0, 3, 1, 4])?;
            let qkv = g.reshape(qkv, &[3, n * nh, len, dh])?;
            let part = |g: &mut Graph<T>, i: usize| -> Result<Var> {
                let p = g.slice(qkv, 0, i, 1)?;
                g.reshape(p, &[n * nh, len, dh])
            };
            let (q, k, v) = (part(g, 0)?, part(g, 1)?, part(g, 2)?);
            let kt = g.transpose(k)?;
            let att = g.matmul(q, kt)?;
            let att = g.scale(att, scale)?;
            let att = g.masked_fill(att, mask.clone(), T::lit(-1e9))?;
            let att = g.softmax(att)?;
            let y = g.matmul(att, v)?;
            let y = g.reshape(y, &[n, nh, len, dh])?;
            let y = g.permute(y, &[0, 2, 1, 3])?;
            let y = g.reshape(y, &[n * len, d])?;
            let y = blk.proj.forward(g, b, y)?;
            x = g.add(x, y)?;

            let h = g.layer_norm(x, LN_EPS)?;
            let h = blk.fc.forward(g, b, h)?;
            let h = g.gelu(h)?;
            let h = blk.out.forward(g, b, h)?;
            x = g.add(x, h)?;
        }
        let x = g.layer_norm(x, LN_EPS)?;
        self.head.forward(g, b, x)
    }

    fn teacher_inputs(&self, seqs: &[Vec<u16>]) -> Result<(Vec<Vec<u16>>, Vec<usize>)> {
        let mut inputs = Vec::with_capacity(seqs.len());
        let mut targets = Vec::with_capacity(seqs.len() * self.seq_len);
        for s in seqs {
            if s.len() != self.seq_len {
                return Err(Error::shape("nll_loss", &[s.len()], &[self.seq_len]));
            }
            if let Some(t) = s.iter().find(|&&t| t as usize >= self.vocab) {
                return Err(Error::invalid(format!("token {t} outside a vocabulary of {}", self.vocab)));
            }
            let mut input = Vec::with_capacity(self.seq_len);
            input.push(self.sentinel());
            input.extend_from_slice(&s[..self.seq_len - 1]);
            inputs.push(input);
            targets.extend(s.iter().map(|&t| t as usize));
        }
        Ok((inputs, targets))
    }

    /// Teacher-forced mean per-token negative log-likelihood (nats).
    pub fn nll_loss(&self, g: &mut Graph<T>, b: &Bound, seqs: &[Vec<u16>]) -> Result<Var> {
        let (inputs, targets) = self.teacher_inputs(seqs)?;
        let logits = self.logits(g, b, &inputs)?;
        let lp = g.log_softmax(logits)?;
        let picked = g.pick(lp, &targets)?;
        let m = g.mean(picked)?;
        g.neg(m)
    }

    /// Last-position log-probabilities for each input (inference only).
    fn last_log_probs(&self, inputs: &[Vec<u16>]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let b = self.params.bind_frozen(&mut g);
        let logits = self.logits(&mut g, &b, inputs)?;
        let lp = g.log_softmax(logits)?;
        let len = inputs[0].len();
        let data = g.value(lp).data();
        Ok((0..inputs.len())
            .map(|i| {
                let row = (i * len + len - 1) * self.vocab;
                data[row..row + self.vocab].iter().map(|v| v.as_f64()).collect()
            })
            .collect())
    }

    /// `p(s_i | prefix)` as probabilities.
    pub fn next_token_distribution(&self, prefix: &[u16]) -> Result<Vec<f64>> {
        Ok(self.next_log_probs(prefix)?.into_iter().map(f64::exp).collect())
    }

    /// Ancestral samples `first..first + count`; sample `i` draws from the
    /// `(seed, sampling, i)` stream, so results do not depend on batching.
    pub fn sample_batch(&self, cfg: &SamplingConfig, seed: u64, first: u64, count: usize) -> Result<Vec<Vec<u16>>> {
        cfg.validate(self.vocab)?;
        let mut rngs: Vec<_> = (0..count).map(|i| indexed(seed, stream::SAMPLING, first + i as u64)).collect();
        let mut seqs: Vec<Vec<u16>> = vec![vec![self.sentinel()]; count];
        for _ in 0..self.seq_len {
            let lps = if count == 0 { Vec::new() } else { self.last_log_probs(&seqs)? };
            for ((s, lp), rng) in seqs.iter_mut().zip(&lps).zip(&mut rngs) {
                s.push(draw(lp, cfg, rng));
            }
        }
        Ok(seqs.into_iter().map(|s| s[1..].to_vec()).collect())
    }

    /// One ancestral sample from stream `(seed, sampling, 0)`.
    pub fn sample_sequence(&self, cfg: &SamplingConfig, seed: u64) -> Result<Vec<u16>> {
        Ok(self.sample_batch(cfg, seed, 0, 1)?.remove(0))
    }
}

impl<T: Real> Autoregressive for Transformer<T> {
    fn vocab(&self) -> usize {
        self.vocab
    }

    fn seq_len(&self) -> usize {
        self.seq_len
    }

    fn next_log_probs(&self, prefix: &[u16]) -> Result<Vec<f64>> {
        if prefix.len() >= self.seq_len {
            return Err(Error::invalid(format!(
                "prefix of {} tokens leaves nothing to predict in a sequence of {}",
                prefix.len(),
                self.seq_len
            )));
        }
        let mut input = Vec::with_capacity(prefix.len() + 1);
        input.push(self.sentinel());
        input.extend_from_slice(prefix);
        if let Some(t) = prefix.iter().find(|&&t| t as usize >= self.vocab) {
            return Err(Error::invalid(format!("token {t} outside a vocabulary of {}", self.vocab)));
        }
        Ok(self.last_log_probs(&[input])?.remove(0))
    }
}
