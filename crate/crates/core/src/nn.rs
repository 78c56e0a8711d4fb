//! Parameterized layers shared by the autoencoder and the transformer.

use rand::Rng;

use crate::autodiff::{Bound, Graph, ParamId, ParamSet, Real, Tensor, Var};
use crate::error::Result;

/// Uniform `U(-bound, bound)` tensor.
pub fn uniform<T: Real, R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        if bound > 0.0 {
            T::lit(rng.gen_range(-bound..bound))
        } else {
            T::zero()
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvKind {
    Forward,
    Transposed,
}

/// 2-D convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub kind: ConvKind,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv {
    /// Kaiming-uniform weights (gain for ReLU), zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng>(
        ps: &mut ParamSet<T>,
        name: &str,
        kind: ConvKind,
        (c_in, c_out): (usize, usize),
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        rng: &mut R,
    ) -> Self {
        let (shape, fan_in) = match kind {
            ConvKind::Forward => ([c_out, c_in, kernel.0, kernel.1], c_in * kernel.0 * kernel.1),
            ConvKind::Transposed => (
                [c_in, c_out, kernel.0, kernel.1],
                (c_in * kernel.0 * kernel.1 / (stride.0 * stride.1)).max(1),
            ),
        };
        let bound = (6.0 / fan_in as f64).sqrt();
        let w = ps.add(format!("{name}.weight"), uniform(&shape, bound, rng));
        let b = ps.add(format!("{name}.bias"), Tensor::zeros(&[c_out]));
        Self {
            w,
            b,
            kind,
            stride,
            padding,
        }
    }

    /// Down- or upsampling layer for one axis stride pair: kernel `2s`, padding `s/2`
    /// for even strides, kernel 3 / padding 1 for stride 1. Output side is exactly
    /// `in / s` (forward) or `in * s` (transposed).
    pub fn resampling<T: Real, R: Rng>(
        ps: &mut ParamSet<T>,
        name: &str,
        kind: ConvKind,
        channels: (usize, usize),
        stride: [usize; 2],
        rng: &mut R,
    ) -> Self {
        let k = |s: usize| if s == 1 { (3, 1) } else { (2 * s, s / 2) };
        let ((kh, ph), (kw, pw)) = (k(stride[0]), k(stride[1]));
        Self::new(ps, name, kind, channels, (kh, kw), (stride[0], stride[1]), (ph, pw), rng)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        match self.kind {
            ConvKind::Forward => g.conv2d(x, b[self.w], Some(b[self.b]), self.stride, self.padding),
            ConvKind::Transposed => g.conv_transpose2d(x, b[self.w], Some(b[self.b]), self.stride, self.padding),
        }
    }
}

/// Affine map over the last axis: `x W + b`, `W: [d_in, d_out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    /// `U(-1/sqrt(d_in), 1/sqrt(d_in))` weights scaled by `gain`, zero bias.
    pub fn new<T: Real, R: Rng>(
        ps: &mut ParamSet<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let bound = gain / (d_in as f64).sqrt();
        let w = ps.add(format!("{name}.weight"), uniform(&[d_in, d_out], bound, rng));
        let b = ps.add(format!("{name}.bias"), Tensor::zeros(&[d_out]));
        Self { w, b }
    }

    /// `x: [rows, d_in]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, b[self.w])?;
        g.add(y, b[self.b])
    }
}
