//! Training objectives. Every term is a per-pixel (or per-element) mean, so the
//! batch mean follows and the weights do not depend on batch size.

use crate::autodiff::{Graph, Real, Var};
use crate::error::Result;

/// Masked absolute error `mean(x_m * |x - x_r|)`.
pub fn loss_rec<T: Real>(g: &mut Graph<T>, x: Var, x_m: Var, x_r: Var) -> Result<Var> {
    let d = g.sub(x, x_r)?;
    let d = g.abs(d)?;
    let d = g.mul(x_m, d)?;
    g.mean(d)
}

/// Binary cross-entropy between the mask and the raydrop logits. This is the
/// negated expected log-likelihood, so it is minimized with the other terms.
pub fn loss_raydrop<T: Real>(g: &mut Graph<T>, x_m: Var, logits: Var) -> Result<Var> {
    let e = g.bce_with_logits(logits, x_m)?;
    g.mean(e)
}

/// Commitment terms `(mean((sg[z] - z_q)^2), mean((sg[z_q] - z)^2))`.
/// The first trains only the codebook, the second only the encoder.
pub fn loss_commit_terms<T: Real>(g: &mut Graph<T>, z: Var, z_q: Var) -> Result<(Var, Var)> {
    let z_sg = g.detach(z);
    let q_sg = g.detach(z_q);
    let a = g.sub(z_sg, z_q)?;
    let a = g.mul(a, a)?;
    let a = g.mean(a)?;
    let e = g.sub(q_sg, z)?;
    let e = g.mul(e, e)?;
    let e = g.mean(e)?;
    Ok((a, e))
}

/// Codebook term plus `beta` times the encoder term.
pub fn loss_commit<T: Real>(g: &mut Graph<T>, z: Var, z_q: Var, beta: f64) -> Result<Var> {
    let (a, e) = loss_commit_terms(g, z, z_q)?;
    let e = g.scale(e, T::lit(beta))?;
    g.add(a, e)
}

/// `rec + lambda * raydrop + commit` on plain values.
pub fn total(rec: f64, raydrop: f64, commit: f64, lambda: f64) -> f64 {
    rec + lambda * raydrop + commit
}

/// Graph form of [`total`]. `raydrop` is absent for the baseline.
pub fn loss_total<T: Real>(g: &mut Graph<T>, rec: Var, raydrop: Option<Var>, commit: Var, lambda: f64) -> Result<Var> {
    let mut t = g.add(rec, commit)?;
    if let Some(rl) = raydrop {
        let rl = g.scale(rl, T::lit(lambda))?;
        t = g.add(t, rl)?;
    }
    Ok(t)
}
