use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        if self.eps <= 0.0 {
            return Err(Error::invalid("Adam epsilon must be positive"));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step<T: Real>(params: &mut ParamSet<T>, grads: &[Tensor<T>], cfg: &AdamConfig) -> Result<()> {
    cfg.validate()?;
    if grads.len() != params.len() {
        return Err(Error::invalid(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));
    for (p, g) in params.params_mut().iter_mut().zip(grads) {
        if g.shape() != p.value.shape() {
            return Err(Error::shape("adam_step", p.value.shape(), g.shape()));
        }
        p.step += 1;
        let t = p.step as i32;
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        let (value, m, v) = (p.value.data_mut(), p.m.data_mut(), p.v.data_mut());
        for i in 0..value.len() {
            let gi = g.data()[i];
            m[i] = b1 * m[i] + (T::one() - b1) * gi;
            v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            value[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut ps = ParamSet::<f64>::new();
        let id = ps.add("w", Tensor::scalar(1.0));
        adam_step(&mut ps, &[Tensor::scalar(1.0)], &AdamConfig::with_lr(0.1)).unwrap();
        assert!((ps.get(id).item() - 0.9).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut ps = ParamSet::<f64>::new();
        let id = ps.add("w", Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap());
        adam_step(&mut ps, &[Tensor::zeros(&[3])], &AdamConfig::default()).unwrap();
        assert_eq!(ps.get(id).data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn non_positive_learning_rate_is_rejected() {
        let mut ps = ParamSet::<f64>::new();
        ps.add("w", Tensor::scalar(1.0));
        let err = adam_step(&mut ps, &[Tensor::scalar(1.0)], &AdamConfig::with_lr(0.0));
        assert!(err.is_err());
    }

    #[test]
    fn least_squares_fit_converges() {
        // y = 2x over a fixed grid
        let xs: Vec<f64> = (0..16).map(|i| i as f64 / 8.0 - 1.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
        let mut ps = ParamSet::<f64>::new();
        let w = ps.add("w", Tensor::scalar(0.0));
        let cfg = AdamConfig::with_lr(0.05);
        for _ in 0..200 {
            let mut g = Graph::new();
            let b = ps.bind(&mut g);
            let x = g.constant(Tensor::new(vec![16], xs.clone()).unwrap());
            let y = g.constant(Tensor::new(vec![16], ys.clone()).unwrap());
            let pred = g.mul(x, b[w]).unwrap();
            let r = g.sub(pred, y).unwrap();
            let sq = g.mul(r, r).unwrap();
            let loss = g.mean(sq).unwrap();
            let grads = g.backward(loss).unwrap();
            let pg = b.gradients(&ps, &grads);
            adam_step(&mut ps, &pg, &cfg).unwrap();
        }
        assert!((ps.get(w).item() - 2.0).abs() < 1e-3, "w = {}", ps.get(w).item());
    }
}
