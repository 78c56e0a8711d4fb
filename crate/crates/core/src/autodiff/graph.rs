//! Tape of primitive ops with reverse-mode replay.
//!
//! Nodes are appended in execution order, so the node vector is already a
//! topological order; `backward` walks it once from the loss towards the leaves.

use std::sync::Arc;

use super::conv::{col2im_batch, from_channel_major, im2col_batch, to_channel_major, ColGeom};
use super::real::Real;
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, T),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Sigmoid(Var),
    Relu(Var),
    Gelu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm { x: Var, rstd: Vec<T> },
    MatMul(Var, Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ColGeom, batch: usize },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, geom: ColGeom, batch: usize },
    Embedding { table: Var, indices: Vec<usize> },
    Pick { x: Var, indices: Vec<usize> },
    Reshape(Var),
    Permute { x: Var, perm: Vec<usize> },
    Slice { x: Var, axis: usize, start: usize },
    Concat { xs: Vec<Var>, axis: usize },
    Sum(Var),
    Mean(Var),
    MaskedFill { x: Var, mask: Arc<[bool]> },
    StraightThrough(Var),
    BceWithLogits { logits: Var, targets: Var },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Abs(_) => "abs",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::Gelu(_) => "gelu",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::MatMul(..) => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::Embedding { .. } => "embedding",
            Op::Pick { .. } => "pick",
            Op::Reshape(_) => "reshape",
            Op::Permute { .. } => "permute",
            Op::Slice { .. } => "slice",
            Op::Concat { .. } => "concat",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::MaskedFill { .. } => "masked_fill",
            Op::StraightThrough(_) => "straight_through",
            Op::BceWithLogits { .. } => "bce_with_logits",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

/// Recording of a forward computation.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    check_finite: bool,
    log_eps: T,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Numpy-style broadcast of two shapes.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For each flat index of `out`, the flat index of the broadcast input.
fn broadcast_map(out: &[usize], input: &[usize]) -> Vec<usize> {
    let lead = input.iter().take_while(|&&d| d == 1).count();
    let core = &input[lead..];
    if out.ends_with(core) {
        // a bias-like trailing block repeated over the leading axes
        let n = numel(core);
        return (0..numel(out)).map(|i| i % n).collect();
    }
    let rank = out.len();
    let offset = rank - input.len();
    let mut in_strides = vec![0usize; rank];
    let mut stride = 1;
    for i in (0..input.len()).rev() {
        in_strides[i + offset] = if input[i] == 1 { 0 } else { stride };
        stride *= input[i];
    }
    let total = numel(out);
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut flat = 0usize;
    for _ in 0..total {
        map.push(flat);
        for d in (0..rank).rev() {
            idx[d] += 1;
            flat += in_strides[d];
            if idx[d] < out[d] {
                break;
            }
            flat -= in_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Source flat index for every output element of a permutation.
fn permute_map(shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = numel(shape);
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; shape.len()];
    let mut flat = 0usize;
    for _ in 0..total {
        map.push(flat);
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            flat += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            flat -= src_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    (out_shape, map)
}

fn gelu_parts<T: Real>(x: T) -> (T, T) {
    // tanh approximation; returns (value, derivative)
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let a = T::lit(0.044715);
    let half = T::lit(0.5);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let value = half * x * (T::one() + t);
    let dinner = c * (T::one() + T::lit(3.0) * a * x * x);
    let deriv = half * (T::one() + t) + half * x * (T::one() - t * t) * dinner;
    (value, deriv)
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            check_finite: cfg!(debug_assertions),
            log_eps: T::lit(1e-12),
        }
    }

    /// Fail any op whose output contains NaN or infinity.
    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, inputs: &[Var]) -> Result<Var> {
        let node = self.nodes.len();
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite {
                op: op.name(),
                node,
            });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(node))
    }

    /// Leaf that receives gradients.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Stop-gradient: a constant copy of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<(Tensor<T>, Vec<usize>)> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let out_shape = broadcast_shape(&sa, &sb).ok_or_else(|| Error::shape(name, &sa, &sb))?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let data: Vec<T> = if sa == sb {
            va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ma = broadcast_map(&out_shape, &sa);
            let mb = broadcast_map(&out_shape, &sb);
            ma.iter().zip(&mb).map(|(&i, &j)| f(va[i], vb[j])).collect()
        };
        Ok((Tensor::new(out_shape.clone(), data)?, out_shape))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.binary(a, b, "add", |x, y| x + y)?;
        self.push(Op::Add(a, b), t, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.binary(a, b, "sub", |x, y| x - y)?;
        self.push(Op::Sub(a, b), t, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.binary(a, b, "mul", |x, y| x * y)?;
        self.push(Op::Mul(a, b), t, &[a, b])
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var> {
        let src = self.value(x);
        let t = Tensor::new(src.shape().to_vec(), src.data().iter().map(|&v| f(v)).collect())?;
        self.push(op, t, &[x])
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Neg(x), |v| -v)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        self.unary(x, Op::Scale(x, s), |v| v * s)
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Result<Var> {
        self.unary(x, Op::AddScalar(x), |v| v + s)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Exp(x), |v| v.exp())
    }

    /// Natural log of `max(x, 1e-12)`.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        let eps = self.log_eps;
        self.unary(x, Op::Log(x), |v| v.max(eps).ln())
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Abs(x), |v| v.abs())
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu(x), |v| v.max(T::zero()))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Gelu(x), |v| gelu_parts(v).0)
    }

    fn rows(&self, x: Var) -> (usize, usize) {
        let shape = self.shape(x);
        let last = *shape.last().unwrap_or(&1);
        (numel(shape) / last, last)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (_, k) = self.rows(x);
        let src = self.value(x);
        let mut out = src.data().to_vec();
        for row in out.chunks_mut(k) {
            let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v = *v / s;
            }
        }
        let t = Tensor::new(src.shape().to_vec(), out)?;
        self.push(Op::Softmax(x), t, &[x])
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let (_, k) = self.rows(x);
        let src = self.value(x);
        let mut out = src.data().to_vec();
        for row in out.chunks_mut(k) {
            let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            for v in row.iter_mut() {
                *v = *v - lse;
            }
        }
        let t = Tensor::new(src.shape().to_vec(), out)?;
        self.push(Op::LogSoftmax(x), t, &[x])
    }

    /// Normalization over the last axis to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (rows, k) = self.rows(x);
        let src = self.value(x);
        let mut out = src.data().to_vec();
        let mut rstd = Vec::with_capacity(rows);
        let kf = T::lit(k as f64);
        for row in out.chunks_mut(k) {
            let mean = row.iter().copied().sum::<T>() / kf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / kf;
            let r = T::one() / (var + T::lit(eps)).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * r;
            }
            rstd.push(r);
        }
        let t = Tensor::new(src.shape().to_vec(), out)?;
        self.push(Op::LayerNorm { x, rstd }, t, &[x])
    }

    /// `[m,k] x [k,n]`, or batched `[b,m,k] x [b,k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (batch, m, k, n) = match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [k2, n]) if k == k2 => (1, *m, *k, *n),
            ([ba, m, k], [bb, k2, n]) if k == k2 && ba == bb => (*ba, *m, *k, *n),
            _ => return Err(Error::shape("matmul", &sa, &sb)),
        };
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); batch * m * n];
        for i in 0..batch {
            T::gemm(
                m,
                k,
                n,
                T::one(),
                &va[i * m * k..(i + 1) * m * k],
                (k as isize, 1),
                &vb[i * k * n..(i + 1) * k * n],
                (n as isize, 1),
                T::zero(),
                &mut out[i * m * n..(i + 1) * m * n],
                (n as isize, 1),
            );
        }
        let shape = if sa.len() == 2 { vec![m, n] } else { vec![batch, m, n] };
        let t = Tensor::new(shape, out)?;
        self.push(Op::MatMul(a, b), t, &[a, b])
    }

    fn conv_bias_check(&self, b: Option<Var>, channels: usize, op: &'static str) -> Result<()> {
        if let Some(b) = b {
            if self.shape(b) != [channels] {
                return Err(Error::shape(op, self.shape(b), &[channels]));
            }
        }
        Ok(())
    }

    /// 2-D convolution. `x: [n, c, h, w]`, `w: [o, c, kh, kw]`, optional bias `[o]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let ([n, c, h, wd], [o, c2, kh, kw]) = (sx.as_slice(), sw.as_slice()) else {
            return Err(Error::shape("conv2d", &sx, &sw));
        };
        if c != c2 || stride.0 == 0 || stride.1 == 0 {
            return Err(Error::shape("conv2d", &sx, &sw));
        }
        let geom = ColGeom::new(*c, (*h, *wd), (*kh, *kw), stride, padding)
            .ok_or_else(|| Error::shape("conv2d", &sx, &sw))?;
        self.conv_bias_check(b, *o, "conv2d")?;
        let (n, o) = (*n, *o);
        let ckk = geom.patch_len();
        let hw_out = geom.out_h * geom.out_w;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut cols = vec![T::zero(); ckk * n * hw_out];
        im2col_batch(&geom, xv, n, &mut cols);
        let mut out_cm = vec![T::zero(); o * n * hw_out];
        T::gemm(
            o,
            ckk,
            n * hw_out,
            T::one(),
            wv,
            (ckk as isize, 1),
            &cols,
            ((n * hw_out) as isize, 1),
            T::zero(),
            &mut out_cm,
            ((n * hw_out) as isize, 1),
        );
        let mut out = from_channel_major(&out_cm, n, o, hw_out);
        if let Some(b) = b {
            let bv = self.value(b).data();
            for (chunk, bias) in out.chunks_mut(hw_out).zip(bv.iter().cycle()) {
                chunk.iter_mut().for_each(|v| *v += *bias);
            }
        }
        let t = Tensor::new(vec![n, o, geom.out_h, geom.out_w], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(Op::Conv2d { x, w, b, geom, batch: n }, t, &inputs)
    }

    /// Transposed 2-D convolution (adjoint of [`Graph::conv2d`]).
    /// `x: [n, c, h, w]`, `w: [c, o, kh, kw]`; output side is `(h-1)*s - 2p + k`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let ([n, c, h, wd], [c2, o, kh, kw]) = (sx.as_slice(), sw.as_slice()) else {
            return Err(Error::shape("conv_transpose2d", &sx, &sw));
        };
        if c != c2 || stride.0 == 0 || stride.1 == 0 {
            return Err(Error::shape("conv_transpose2d", &sx, &sw));
        }
        let out_h = ((*h - 1) * stride.0 + kh).checked_sub(2 * padding.0);
        let out_w = ((*wd - 1) * stride.1 + kw).checked_sub(2 * padding.1);
        let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
            return Err(Error::shape("conv_transpose2d", &sx, &sw));
        };
        let geom = ColGeom::new(*o, (out_h, out_w), (*kh, *kw), stride, padding)
            .filter(|g| g.out_h == *h && g.out_w == *wd)
            .ok_or_else(|| Error::shape("conv_transpose2d", &sx, &sw))?;
        self.conv_bias_check(b, *o, "conv_transpose2d")?;
        let (n, c, o) = (*n, *c, *o);
        let okk = geom.patch_len();
        let hw_in = h * wd;
        let out_len = o * out_h * out_w;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![T::zero(); n * out_len];
        let x_cm = to_channel_major(xv, n, c, hw_in);
        let mut cols = vec![T::zero(); okk * n * hw_in];
        // cols = W^T x
        T::gemm(
            okk,
            c,
            n * hw_in,
            T::one(),
            wv,
            (1, okk as isize),
            &x_cm,
            ((n * hw_in) as isize, 1),
            T::zero(),
            &mut cols,
            ((n * hw_in) as isize, 1),
        );
        col2im_batch(&geom, &cols, n, &mut out);
        if let Some(b) = b {
            let bv = self.value(b).data();
            for (chunk, bias) in out.chunks_mut(out_h * out_w).zip(bv.iter().cycle()) {
                chunk.iter_mut().for_each(|v| *v += *bias);
            }
        }
        let t = Tensor::new(vec![n, o, out_h, out_w], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(Op::ConvTranspose2d { x, w, b, geom, batch: n }, t, &inputs)
    }

    /// Rows of `table: [v, d]` selected by `indices`, giving `[len, d]`.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        let [v, d] = shape.as_slice() else {
            return Err(Error::shape("embedding", &shape, &[2]));
        };
        let (v, d) = (*v, *d);
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return Err(Error::invalid(format!("embedding index {bad} out of range {v}")));
        }
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let t = Tensor::new(vec![indices.len(), d], out)?;
        self.push(
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
            t,
            &[table],
        )
    }

    /// `out[i] = x[i, indices[i]]` for `x: [n, k]`.
    pub fn pick(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let [n, k] = shape.as_slice() else {
            return Err(Error::shape("pick", &shape, &[indices.len()]));
        };
        if *n != indices.len() || indices.iter().any(|&i| i >= *k) {
            return Err(Error::shape("pick", &shape, &[indices.len()]));
        }
        let xv = self.value(x).data();
        let out = indices.iter().enumerate().map(|(r, &i)| xv[r * k + i]).collect();
        let t = Tensor::new(vec![*n], out)?;
        self.push(
            Op::Pick {
                x,
                indices: indices.to_vec(),
            },
            t,
            &[x],
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        self.push(Op::Reshape(x), t, &[x])
    }

    /// Axis permutation; output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape("permute", &shape, perm));
        }
        let (out_shape, map) = permute_map(&shape, perm);
        let xv = self.value(x).data();
        let t = Tensor::new(out_shape, map.iter().map(|&i| xv[i]).collect())?;
        self.push(
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            t,
            &[x],
        )
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(Error::shape("transpose", self.shape(x), &[2]));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(x, &perm)
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape("slice", &shape, &[axis, start, len]));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * shape[axis] * inner + start * inner;
            out.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let t = Tensor::new(out_shape, out)?;
        self.push(Op::Slice { x, axis, start }, t, &[x])
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*xs.first().ok_or_else(|| Error::invalid("concat of nothing"))?).to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", &first, &[axis]));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &first, s));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let d = self.shape(v)[axis];
                let xv = self.value(v).data();
                out.extend_from_slice(&xv[o * d * inner..(o + 1) * d * inner]);
            }
        }
        let mut out_shape = first;
        out_shape[axis] = total;
        let t = Tensor::new(out_shape, out)?;
        self.push(
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            t,
            xs,
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push(Op::Sum(x), Tensor::scalar(s), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s = v.data().iter().copied().sum::<T>() / T::lit(v.len() as f64);
        self.push(Op::Mean(x), Tensor::scalar(s), &[x])
    }

    /// Replace entries where `mask` is true by `fill`. The mask repeats over the
    /// trailing elements of `x` (its length must divide the element count).
    pub fn masked_fill(&mut self, x: Var, mask: Arc<[bool]>, fill: T) -> Result<Var> {
        let src = self.value(x);
        if mask.is_empty() || src.len() % mask.len() != 0 {
            return Err(Error::shape("masked_fill", src.shape(), &[mask.len()]));
        }
        let out = src
            .data()
            .iter()
            .zip(mask.iter().cycle())
            .map(|(&v, &m)| if m { fill } else { v })
            .collect();
        let t = Tensor::new(src.shape().to_vec(), out)?;
        self.push(Op::MaskedFill { x, mask }, t, &[x])
    }

    /// Forward value is `value`; the backward pass hands the incoming gradient
    /// to `input` unchanged (straight-through estimator).
    pub fn straight_through(&mut self, input: Var, value: Tensor<T>) -> Result<Var> {
        if value.shape() != self.shape(input) {
            return Err(Error::shape("straight_through", self.shape(input), value.shape()));
        }
        self.push(Op::StraightThrough(input), value, &[input])
    }

    /// Elementwise binary cross-entropy `-[y log σ(l) + (1-y) log(1-σ(l))]`,
    /// evaluated in the overflow-free form.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Var) -> Result<Var> {
        if self.shape(logits) != self.shape(targets) {
            return Err(Error::shape("bce_with_logits", self.shape(logits), self.shape(targets)));
        }
        let lv = self.value(logits);
        let tv = self.value(targets).data();
        let out = lv
            .data()
            .iter()
            .zip(tv)
            .map(|(&l, &y)| l.max(T::zero()) - l * y + (-l.abs()).exp().ln_1p())
            .collect();
        let t = Tensor::new(lv.shape().to_vec(), out)?;
        self.push(Op::BceWithLogits { logits, targets }, t, &[logits, targets])
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.shape(v)));
        }
        f(slot.as_mut().expect("initialized").data_mut());
    }

    fn backprop_broadcast(&self, grads: &mut [Option<Tensor<T>>], v: Var, out_shape: &[usize], contrib: impl Fn(usize) -> T) {
        let in_shape = self.shape(v).to_vec();
        if in_shape == out_shape {
            self.accumulate(grads, v, |gv| {
                for (i, d) in gv.iter_mut().enumerate() {
                    *d += contrib(i);
                }
            });
        } else {
            let map = broadcast_map(out_shape, &in_shape);
            self.accumulate(grads, v, |gv| {
                for (i, &j) in map.iter().enumerate() {
                    gv[j] += contrib(i);
                }
            });
        }
    }

    fn elementwise_grad(&self, grads: &mut [Option<Tensor<T>>], x: Var, g: &[T], f: impl Fn(usize) -> T) {
        self.accumulate(grads, x, |gx| {
            for (i, d) in gx.iter_mut().enumerate() {
                *d += g[i] * f(i);
            }
        });
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = node.value.data();
        let out_shape = node.value.shape();
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.backprop_broadcast(grads, *a, out_shape, |k| gd[k]);
                self.backprop_broadcast(grads, *b, out_shape, |k| gd[k]);
            }
            Op::Sub(a, b) => {
                self.backprop_broadcast(grads, *a, out_shape, |k| gd[k]);
                self.backprop_broadcast(grads, *b, out_shape, |k| -gd[k]);
            }
            Op::Mul(a, b) => {
                let (sa, sb) = (self.shape(*a).to_vec(), self.shape(*b).to_vec());
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if sa == sb {
                    self.backprop_broadcast(grads, *a, out_shape, |k| gd[k] * vb[k]);
                    self.backprop_broadcast(grads, *b, out_shape, |k| gd[k] * va[k]);
                } else {
                    let ma = broadcast_map(out_shape, &sa);
                    let mb = broadcast_map(out_shape, &sb);
                    self.backprop_broadcast(grads, *a, out_shape, |k| gd[k] * vb[mb[k]]);
                    self.backprop_broadcast(grads, *b, out_shape, |k| gd[k] * va[ma[k]]);
                }
            }
            Op::Neg(x) => self.elementwise_grad(grads, *x, gd, |_| -T::one()),
            Op::Scale(x, s) => self.elementwise_grad(grads, *x, gd, |_| *s),
            Op::AddScalar(x) | Op::Reshape(x) | Op::StraightThrough(x) => {
                self.elementwise_grad(grads, *x, gd, |_| T::one())
            }
            Op::Exp(x) => self.elementwise_grad(grads, *x, gd, |k| out[k]),
            Op::Log(x) => {
                let xv = self.value(*x).data();
                let eps = self.log_eps;
                self.elementwise_grad(grads, *x, gd, |k| T::one() / xv[k].max(eps))
            }
            Op::Abs(x) => {
                let xv = self.value(*x).data();
                self.elementwise_grad(grads, *x, gd, |k| {
                    let v = xv[k];
                    if v > T::zero() {
                        T::one()
                    } else if v < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    }
                })
            }
            Op::Sigmoid(x) => self.elementwise_grad(grads, *x, gd, |k| out[k] * (T::one() - out[k])),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                self.elementwise_grad(grads, *x, gd, |k| if xv[k] > T::zero() { T::one() } else { T::zero() })
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                self.elementwise_grad(grads, *x, gd, |k| gelu_parts(xv[k]).1)
            }
            Op::Softmax(x) => {
                let k = *out_shape.last().unwrap_or(&1);
                self.accumulate(grads, *x, |gx| {
                    for ((grow, yrow), dst) in gd.chunks(k).zip(out.chunks(k)).zip(gx.chunks_mut(k)) {
                        let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                        for j in 0..k {
                            dst[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(x) => {
                let k = *out_shape.last().unwrap_or(&1);
                self.accumulate(grads, *x, |gx| {
                    for ((grow, yrow), dst) in gd.chunks(k).zip(out.chunks(k)).zip(gx.chunks_mut(k)) {
                        let total: T = grow.iter().copied().sum();
                        for j in 0..k {
                            dst[j] += grow[j] - yrow[j].exp() * total;
                        }
                    }
                });
            }
            Op::LayerNorm { x, rstd } => {
                let k = *out_shape.last().unwrap_or(&1);
                let kf = T::lit(k as f64);
                self.accumulate(grads, *x, |gx| {
                    for (r, ((grow, yrow), dst)) in gd.chunks(k).zip(out.chunks(k)).zip(gx.chunks_mut(k)).enumerate() {
                        let mg = grow.iter().copied().sum::<T>() / kf;
                        let mgy = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum::<T>() / kf;
                        for j in 0..k {
                            dst[j] += rstd[r] * (grow[j] - mg - yrow[j] * mgy);
                        }
                    }
                });
            }
            Op::MatMul(a, b) => self.backprop_matmul(*a, *b, gd, grads),
            Op::Conv2d { x, w, b, geom, batch } => self.backprop_conv(*x, *w, *b, geom, *batch, gd, grads),
            Op::ConvTranspose2d { x, w, b, geom, batch } => {
                self.backprop_conv_transpose(*x, *w, *b, geom, *batch, gd, grads)
            }
            Op::Embedding { table, indices } => {
                let d = self.shape(*table)[1];
                self.accumulate(grads, *table, |gt| {
                    for (r, &idx) in indices.iter().enumerate() {
                        for j in 0..d {
                            gt[idx * d + j] += gd[r * d + j];
                        }
                    }
                });
            }
            Op::Pick { x, indices } => {
                let k = self.shape(*x)[1];
                self.accumulate(grads, *x, |gx| {
                    for (r, &idx) in indices.iter().enumerate() {
                        gx[r * k + idx] += gd[r];
                    }
                });
            }
            Op::Permute { x, perm } => {
                let (_, map) = permute_map(self.shape(*x), perm);
                self.accumulate(grads, *x, |gx| {
                    for (k, &src) in map.iter().enumerate() {
                        gx[src] += gd[k];
                    }
                });
            }
            Op::Slice { x, axis, start } => {
                let shape = self.shape(*x);
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let (full, len) = (shape[*axis], out_shape[*axis]);
                self.accumulate(grads, *x, |gx| {
                    for o in 0..outer {
                        let base = o * full * inner + start * inner;
                        let src = &gd[o * len * inner..(o + 1) * len * inner];
                        for (d, &s) in gx[base..base + len * inner].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                });
            }
            Op::Concat { xs, axis } => {
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let total = out_shape[*axis];
                let mut offset = 0;
                for &v in xs {
                    let d = self.shape(v)[*axis];
                    self.accumulate(grads, v, |gx| {
                        for o in 0..outer {
                            let src = &gd[(o * total + offset) * inner..(o * total + offset + d) * inner];
                            for (dst, &s) in gx[o * d * inner..(o + 1) * d * inner].iter_mut().zip(src) {
                                *dst += s;
                            }
                        }
                    });
                    offset += d;
                }
            }
            Op::Sum(x) => {
                let s = gd[0];
                self.accumulate(grads, *x, |gx| gx.iter_mut().for_each(|d| *d += s));
            }
            Op::Mean(x) => {
                let s = gd[0] / T::lit(self.value(*x).len() as f64);
                self.accumulate(grads, *x, |gx| gx.iter_mut().for_each(|d| *d += s));
            }
            Op::MaskedFill { x, mask } => {
                self.accumulate(grads, *x, |gx| {
                    for ((d, &s), &m) in gx.iter_mut().zip(gd).zip(mask.iter().cycle()) {
                        if !m {
                            *d += s;
                        }
                    }
                });
            }
            Op::BceWithLogits { logits, targets } => {
                let lv = self.value(*logits).data();
                let tv = self.value(*targets).data();
                self.elementwise_grad(grads, *logits, gd, |k| sigmoid(lv[k]) - tv[k]);
                self.elementwise_grad(grads, *targets, gd, |k| -lv[k]);
            }
        }
        Ok(())
    }

    fn backprop_matmul(&self, a: Var, b: Var, gd: &[T], grads: &mut [Option<Tensor<T>>]) {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (batch, m, k) = if sa.len() == 2 { (1, sa[0], sa[1]) } else { (sa[0], sa[1], sa[2]) };
        let n = *sb.last().expect("rank >= 2");
        let va = self.value(a).data();
        let vb = self.value(b).data();
        // dA = G B^T
        self.accumulate(grads, a, |ga| {
            for i in 0..batch {
                T::gemm(
                    m,
                    n,
                    k,
                    T::one(),
                    &gd[i * m * n..(i + 1) * m * n],
                    (n as isize, 1),
                    &vb[i * k * n..(i + 1) * k * n],
                    (1, n as isize),
                    T::one(),
                    &mut ga[i * m * k..(i + 1) * m * k],
                    (k as isize, 1),
                );
            }
        });
        // dB = A^T G
        self.accumulate(grads, b, |gb| {
            for i in 0..batch {
                T::gemm(
                    k,
                    m,
                    n,
                    T::one(),
                    &va[i * m * k..(i + 1) * m * k],
                    (1, k as isize),
                    &gd[i * m * n..(i + 1) * m * n],
                    (n as isize, 1),
                    T::one(),
                    &mut gb[i * k * n..(i + 1) * k * n],
                    (n as isize, 1),
                );
            }
        });
    }

    fn bias_grad(&self, b: Option<Var>, gd: &[T], plane: usize, grads: &mut [Option<Tensor<T>>]) {
        if let Some(b) = b {
            let channels = self.shape(b)[0];
            self.accumulate(grads, b, |gb| {
                for (idx, chunk) in gd.chunks(plane).enumerate() {
                    gb[idx % channels] += chunk.iter().copied().sum::<T>();
                }
            });
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_conv(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: &ColGeom,
        batch: usize,
        gd: &[T],
        grads: &mut [Option<Tensor<T>>],
    ) {
        let o = self.shape(w)[0];
        let ckk = geom.patch_len();
        let hw_out = geom.out_h * geom.out_w;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let ld = batch * hw_out;
        let gd_cm = to_channel_major(gd, batch, o, hw_out);
        if self.requires_grad(w) {
            let mut cols = vec![T::zero(); ckk * ld];
            im2col_batch(geom, xv, batch, &mut cols);
            self.accumulate(grads, w, |gw| {
                T::gemm(
                    o,
                    ld,
                    ckk,
                    T::one(),
                    &gd_cm,
                    (ld as isize, 1),
                    &cols,
                    (1, ld as isize),
                    T::one(),
                    gw,
                    (ckk as isize, 1),
                );
            });
        }
        if self.requires_grad(x) {
            let mut cols = vec![T::zero(); ckk * ld];
            T::gemm(
                ckk,
                o,
                ld,
                T::one(),
                wv,
                (1, ckk as isize),
                &gd_cm,
                (ld as isize, 1),
                T::zero(),
                &mut cols,
                (ld as isize, 1),
            );
            self.accumulate(grads, x, |gx| col2im_batch(geom, &cols, batch, gx));
        }
        self.bias_grad(b, gd, hw_out, grads);
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_conv_transpose(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: &ColGeom,
        batch: usize,
        gd: &[T],
        grads: &mut [Option<Tensor<T>>],
    ) {
        let c = self.shape(x)[1];
        let okk = geom.patch_len();
        let hw_in = geom.out_h * geom.out_w;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let need_w = self.requires_grad(w);
        let need_x = self.requires_grad(x);
        if need_w || need_x {
            let ld = batch * hw_in;
            let mut cols = vec![T::zero(); okk * ld];
            im2col_batch(geom, gd, batch, &mut cols);
            if need_w {
                let x_cm = to_channel_major(xv, batch, c, hw_in);
                self.accumulate(grads, w, |gw| {
                    T::gemm(
                        c,
                        ld,
                        okk,
                        T::one(),
                        &x_cm,
                        (ld as isize, 1),
                        &cols,
                        (1, ld as isize),
                        T::one(),
                        gw,
                        (okk as isize, 1),
                    );
                });
            }
            if need_x {
                let mut gx_cm = vec![T::zero(); c * ld];
                T::gemm(
                    c,
                    okk,
                    ld,
                    T::one(),
                    wv,
                    (okk as isize, 1),
                    &cols,
                    (ld as isize, 1),
                    T::zero(),
                    &mut gx_cm,
                    (ld as isize, 1),
                );
                let local = from_channel_major(&gx_cm, batch, c, hw_in);
                self.accumulate(grads, x, |gx| gx.iter_mut().zip(&local).for_each(|(d, &s)| *d += s));
            }
        }
        self.bias_grad(b, gd, geom.img_h * geom.img_w, grads);
    }
}
