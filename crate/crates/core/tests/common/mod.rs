//! Independent oracles shared by the integration tests.
//!
//! Nothing here calls into the code under test for the quantity it checks;
//! each oracle is a direct, usually brute-force, restatement of the definition.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use rangevq::autodiff::{grad_check, relative_error, GradCheckReport, Graph, ParamSet, Tensor, Var};
use rangevq::geom::Point3;
use rangevq::rng::substream;
use rangevq::transformer::{Transformer, TransformerConfig};
use rangevq::vqvae::loss::{loss_commit, loss_commit_terms, loss_raydrop, loss_rec, loss_total};
use rangevq::vqvae::{VqVae, VqVaeConfig};

pub mod checks;

pub const GRAD_COORDS: usize = 20;
pub const GRAD_STEP: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-4;

pub fn rng(name: &str) -> ChaCha8Rng {
    substream(0x7e57, name)
}

// ---------------------------------------------------------------- quantizer

/// Nearest row of `codebook: [k, d]` for every vector of `z: [n, d, h, w]`,
/// using the expanded form `|e|^2 - 2 z.e` (the `|z|^2` term is constant).
pub fn nearest_oracle(codebook: &[f64], k: usize, d: usize, z: &[f64], n: usize, plane: usize) -> Vec<usize> {
    let norms: Vec<f64> = (0..k).map(|j| codebook[j * d..(j + 1) * d].iter().map(|e| e * e).sum()).collect();
    let mut out = Vec::new();
    for b in 0..n {
        for p in 0..plane {
            let v: Vec<f64> = (0..d).map(|c| z[(b * d + c) * plane + p]).collect();
            let scores: Vec<f64> = (0..k)
                .map(|j| norms[j] - 2.0 * v.iter().zip(&codebook[j * d..(j + 1) * d]).map(|(x, e)| x * e).sum::<f64>())
                .collect();
            let best = (0..k).min_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
            out.push(best);
        }
    }
    out
}

// ---------------------------------------------------------------------- FPS

fn dist2(a: &Point3, b: &Point3) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// Farthest point sampling recomputing every distance to the selected set from
/// scratch at each step. Ties go to the lowest index.
pub fn fps_oracle(pts: &[Point3], n: usize, first: usize) -> Vec<usize> {
    let mut chosen = vec![first];
    while chosen.len() < n {
        let mut best = (usize::MAX, -1.0);
        for (i, p) in pts.iter().enumerate() {
            let d = chosen.iter().map(|&c| dist2(p, &pts[c])).fold(f64::INFINITY, f64::min);
            if d > best.1 {
                best = (i, d);
            }
        }
        chosen.push(best.0);
    }
    chosen
}

// ------------------------------------------------------------ distributions

/// Base-2 JSD straight from `H(m) - (H(p) + H(q)) / 2`.
pub fn jsd_oracle(p: &[f64], q: &[f64]) -> f64 {
    let h = |v: &[f64]| -> f64 { v.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.log2()).sum() };
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    h(&m) - 0.5 * (h(p) + h(q))
}

/// Unbiased MMD^2 by direct summation over all ordered pairs.
pub fn mmd_oracle(a: &[Vec<f64>], b: &[Vec<f64>], s: f64) -> f64 {
    let k = |x: &Vec<f64>, y: &Vec<f64>| {
        let d: f64 = x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum();
        (-d / (2.0 * s * s)).exp()
    };
    let (m, n) = (a.len() as f64, b.len() as f64);
    let mut xx = 0.0;
    for (i, x) in a.iter().enumerate() {
        for (j, y) in a.iter().enumerate() {
            if i != j {
                xx += k(x, y);
            }
        }
    }
    let mut yy = 0.0;
    for (i, x) in b.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            if i != j {
                yy += k(x, y);
            }
        }
    }
    let mut xy = 0.0;
    for x in a {
        for y in b {
            xy += k(x, y);
        }
    }
    xx / (m * (m - 1.0)) + yy / (n * (n - 1.0)) - 2.0 * xy / (m * n)
}

/// Mean and unbiased covariance of the rows.
pub fn moments(rows: &[Vec<f64>]) -> (Vec<f64>, DMatrix<f64>) {
    let n = rows.len();
    let d = rows[0].len();
    let mut mu = vec![0.0; d];
    for r in rows {
        for (m, v) in mu.iter_mut().zip(r) {
            *m += v / n as f64;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (r[i] - mu[i]) * (r[j] - mu[j]) / (n - 1) as f64;
            }
        }
    }
    (mu, cov)
}

/// Principal square root of a matrix with positive spectrum by the
/// Denman-Beavers iteration. Works on the non-symmetric product `A B`.
pub fn denman_beavers(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut y = a.clone();
    let mut z = DMatrix::identity(a.nrows(), a.ncols());
    for _ in 0..100 {
        let yi = y.clone().try_inverse().expect("invertible iterate");
        let zi = z.clone().try_inverse().expect("invertible iterate");
        let y_next = (&y + zi) * 0.5;
        let z_next = (&z + yi) * 0.5;
        let delta = (&y_next - &y).norm();
        y = y_next;
        z = z_next;
        if delta < 1e-15 * y.norm() {
            break;
        }
    }
    y
}

/// `|mu_a - mu_b|^2 + tr(A + B - 2 (A B)^{1/2})`.
pub fn frechet_oracle(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (ma, ca) = moments(a);
    let (mb, cb) = moments(b);
    let mean: f64 = ma.iter().zip(&mb).map(|(x, y)| (x - y).powi(2)).sum();
    let root = denman_beavers(&(&ca * &cb));
    mean + ca.trace() + cb.trace() - 2.0 * root.trace()
}

/// W1 between equal-size samples as the minimum over all couplings
/// (permutations), which for n = 8 is 40320 candidates.
pub fn w1_permutation_oracle(a: &[f64], b: &[f64]) -> f64 {
    fn rec(a: &[f64], b: &[f64], used: &mut Vec<bool>, i: usize, acc: f64, best: &mut f64) {
        if acc >= *best {
            return;
        }
        if i == a.len() {
            *best = acc;
            return;
        }
        for j in 0..b.len() {
            if !used[j] {
                used[j] = true;
                rec(a, b, used, i + 1, acc + (a[i] - b[j]).abs(), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(a, b, &mut vec![false; b.len()], 0, 0.0, &mut best);
    best / a.len() as f64
}

/// Symmetric Chamfer (mean nearest-neighbour Euclidean distance each way).
pub fn chamfer_oracle(a: &[Point3], b: &[Point3]) -> f64 {
    let one = |x: &[Point3], y: &[Point3]| {
        x.iter()
            .map(|p| y.iter().map(|q| dist2(p, q).sqrt()).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / x.len() as f64
    };
    one(a, b) + one(b, a)
}

/// Minimum matching distance by exhaustive pairwise evaluation.
pub fn md_oracle(gen: &[Vec<Point3>], real: &[Vec<Point3>]) -> f64 {
    gen.iter()
        .map(|g| real.iter().map(|r| chamfer_oracle(g, r)).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / gen.len() as f64
}

/// All `k^len` sequences in lexicographic order.
pub fn all_sequences(k: usize, len: usize) -> Vec<Vec<u16>> {
    let total = k.pow(len as u32);
    (0..total)
        .map(|mut code| {
            let mut s = vec![0u16; len];
            for slot in s.iter_mut().rev() {
                *slot = (code % k) as u16;
                code /= k;
            }
            s
        })
        .collect()
}

pub fn random_points<R: Rng>(n: usize, scale: f64, rng: &mut R) -> Vec<Point3> {
    (0..n)
        .map(|_| [rng.gen_range(-scale..scale), rng.gen_range(-scale..scale), rng.gen_range(-scale..scale)])
        .collect()
}

// ---------------------------------------------------------- gradient suite

fn leaf(ps: &mut ParamSet<f64>, name: &str, shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let t = Tensor::from_fn(shape, |_| rng.gen_range(lo..hi));
    ps.add(name, t.clone());
    t
}

fn constant(g: &mut Graph<f64>, t: &Tensor<f64>) -> Var {
    g.constant(t.clone())
}

fn binary_mask(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| if rng.gen_bool(0.7) { 1.0 } else { 0.0 })
}

fn check(name: &str, ps: &ParamSet<f64>, f: impl Fn(&mut Graph<f64>, &rangevq::autodiff::Bound) -> rangevq::Result<Var>) -> (String, GradCheckReport) {
    let report = grad_check(ps, f, GRAD_COORDS, GRAD_STEP, GRAD_TOL, &mut rng(name)).expect(name);
    (name.to_string(), report)
}

/// Masked reconstruction loss w.r.t. the predicted range.
pub fn grad_rec() -> (String, GradCheckReport) {
    let mut r = rng("rec data");
    let shape = [2, 1, 4, 6];
    let x = Tensor::from_fn(&shape, |_| r.gen_range(0.0..1.0));
    let m = binary_mask(&shape, &mut r);
    let mut ps = ParamSet::new();
    // keep predictions away from the targets so no |.| kink sits inside the step
    let xr = x.data().iter().map(|&v| v + if r.gen_bool(0.5) { 0.3 } else { -0.3 }).collect();
    ps.add("x_r", Tensor::new(shape.to_vec(), xr).unwrap());
    check("loss_rec", &ps, |g, b| {
        let (xc, mc) = (constant(g, &x), constant(g, &m));
        loss_rec(g, xc, mc, b.vars()[0])
    })
}

/// Raydrop BCE w.r.t. the logits.
pub fn grad_raydrop() -> (String, GradCheckReport) {
    let mut r = rng("raydrop data");
    let shape = [2, 1, 4, 6];
    let m = binary_mask(&shape, &mut r);
    let mut ps = ParamSet::new();
    leaf(&mut ps, "logits", &shape, -4.0, 4.0, &mut r);
    check("loss_raydrop", &ps, |g, b| {
        let mc = constant(g, &m);
        loss_raydrop(g, mc, b.vars()[0])
    })
}

/// Compares `analytic` (gradients of the loss as trained) with central
/// differences of `surrogate`, a function of the parameter values with the
/// same gradient in which stopped operands are frozen at the base point.
/// Coordinates are drawn round-robin from the parameter-name `groups` so each
/// part of a model is exercised.
fn check_surrogate(
    name: &str,
    ps: &ParamSet<f64>,
    analytic: &[Tensor<f64>],
    surrogate: impl Fn(&ParamSet<f64>) -> f64,
    groups: &[&str],
) -> (String, GradCheckReport) {
    let mut pick = rng(name);
    let names: Vec<String> = ps.iter().map(|p| p.name.clone()).collect();
    let ids: Vec<_> = names.iter().map(|n| ps.find(n).unwrap()).collect();
    let mut probe = ps.clone();
    let mut report = GradCheckReport::default();
    let mut nonzero = 0;
    for c in 0..GRAD_COORDS {
        let prefix = groups[c % groups.len()];
        let candidates: Vec<usize> = (0..names.len()).filter(|&i| names[i].starts_with(prefix)).collect();
        let which = candidates[pick.gen_range(0..candidates.len())];
        let flat = pick.gen_range(0..analytic[which].len());
        let id = ids[which];
        let original = probe.get(id).data()[flat];
        probe.get_mut(id).data_mut()[flat] = original + GRAD_STEP;
        let plus = surrogate(&probe);
        probe.get_mut(id).data_mut()[flat] = original - GRAD_STEP;
        let minus = surrogate(&probe);
        probe.get_mut(id).data_mut()[flat] = original;
        let numeric = (plus - minus) / (2.0 * GRAD_STEP);
        let a = analytic[which].data()[flat];
        nonzero += usize::from(a != 0.0);
        let err = relative_error(a, numeric);
        report.checked += 1;
        report.max_rel_err = report.max_rel_err.max(err);
        if err > GRAD_TOL {
            report.failures.push((names[which].clone(), flat, a, numeric));
        }
    }
    // a check that only compares zeros proves nothing
    if nonzero * 2 < GRAD_COORDS {
        report.failures.push(("too few non-zero coordinates".into(), nonzero, 0.0, 0.0));
    }
    (name.to_string(), report)
}

fn analytic_of(ps: &ParamSet<f64>, f: impl Fn(&mut Graph<f64>, &rangevq::autodiff::Bound) -> rangevq::Result<Var>) -> Vec<Tensor<f64>> {
    let mut g = Graph::new();
    let b = ps.bind(&mut g);
    let loss = f(&mut g, &b).unwrap();
    let grads = g.backward(loss).unwrap();
    b.gradients(ps, &grads)
}

fn scalar(g: &Graph<f64>, v: Var) -> f64 {
    g.value(v).item()
}

/// Commitment loss. Each term alone is checked against plain finite
/// differences with its stopped operand held constant; the weighted sum with
/// both operands free is checked against the frozen surrogate
/// `mean((z0 - z_q)^2) + beta mean((q0 - z)^2)`.
pub fn grad_commit() -> Vec<(String, GradCheckReport)> {
    let mut r = rng("commit data");
    let shape = [2, 3, 2, 2];
    let z = Tensor::from_fn(&shape, |_| r.gen_range(-1.0..1.0));
    let zq = Tensor::from_fn(&shape, |_| r.gen_range(-1.0..1.0));
    let beta = 0.25;
    let mut codebook_side = ParamSet::new();
    codebook_side.add("z_q", zq.clone());
    let mut encoder_side = ParamSet::new();
    encoder_side.add("z", z.clone());
    let mut both = ParamSet::new();
    both.add("z", z.clone());
    both.add("z_q", zq.clone());
    let commit = |g: &mut Graph<f64>, b: &rangevq::autodiff::Bound| loss_commit(g, b.vars()[0], b.vars()[1], beta);
    let analytic = analytic_of(&both, commit);
    let surrogate = |ps: &ParamSet<f64>| {
        let mut g = Graph::new();
        let b = ps.bind(&mut g);
        let (z0, q0) = (constant(&mut g, &z), constant(&mut g, &zq));
        let (a, _) = loss_commit_terms(&mut g, z0, b.vars()[1]).unwrap();
        let (_, e) = loss_commit_terms(&mut g, b.vars()[0], q0).unwrap();
        scalar(&g, a) + beta * scalar(&g, e)
    };
    vec![
        check("loss_commit codebook term", &codebook_side, |g, b| {
            let zc = constant(g, &z);
            let (a, _) = loss_commit_terms(g, zc, b.vars()[0])?;
            Ok(a)
        }),
        check("loss_commit encoder term", &encoder_side, |g, b| {
            let qc = constant(g, &zq);
            let (_, e) = loss_commit_terms(g, b.vars()[0], qc)?;
            Ok(e)
        }),
        check_surrogate("loss_commit weighted", &both, &analytic, surrogate, &["z"]),
    ]
}

/// Weighted total over free range, logits, encoder output and codebook rows.
pub fn grad_total_terms() -> (String, GradCheckReport) {
    let mut r = rng("total data");
    let img = [2, 1, 4, 6];
    let lat = [2, 3, 2, 2];
    let (lambda, beta) = (0.1, 0.5);
    let x = Tensor::from_fn(&img, |_| r.gen_range(0.0..1.0));
    let m = binary_mask(&img, &mut r);
    let mut ps = ParamSet::new();
    let xr = x.data().iter().map(|&v| v + if r.gen_bool(0.5) { 0.25 } else { -0.25 }).collect();
    ps.add("x_r", Tensor::new(img.to_vec(), xr).unwrap());
    leaf(&mut ps, "logits", &img, -3.0, 3.0, &mut r);
    let z = leaf(&mut ps, "z", &lat, -1.0, 1.0, &mut r);
    let zq = leaf(&mut ps, "z_q", &lat, -1.0, 1.0, &mut r);
    let analytic = analytic_of(&ps, |g, b| {
        let (xc, mc) = (constant(g, &x), constant(g, &m));
        let rec = loss_rec(g, xc, mc, b.vars()[0])?;
        let rl = loss_raydrop(g, mc, b.vars()[1])?;
        let com = loss_commit(g, b.vars()[2], b.vars()[3], beta)?;
        loss_total(g, rec, Some(rl), com, lambda)
    });
    let surrogate = |ps: &ParamSet<f64>| {
        let mut g = Graph::new();
        let b = ps.bind(&mut g);
        let (xc, mc) = (constant(&mut g, &x), constant(&mut g, &m));
        let (z0, q0) = (constant(&mut g, &z), constant(&mut g, &zq));
        let rec = loss_rec(&mut g, xc, mc, b.vars()[0]).unwrap();
        let rl = loss_raydrop(&mut g, mc, b.vars()[1]).unwrap();
        let (a, _) = loss_commit_terms(&mut g, z0, b.vars()[3]).unwrap();
        let (_, e) = loss_commit_terms(&mut g, b.vars()[2], q0).unwrap();
        scalar(&g, rec) + lambda * scalar(&g, rl) + scalar(&g, a) + beta * scalar(&g, e)
    };
    check_surrogate("loss_total", &ps, &analytic, surrogate, &["x_r", "logits", "z"])
}

pub fn tiny_vqvae_config() -> VqVaeConfig {
    VqVaeConfig {
        stem_channels: 4,
        channels: vec![4, 6],
        strides: vec![[2, 2], [1, 2]],
        res_blocks: 1,
        codebook_size: 8,
        code_dim: 3,
        head_stages: 1,
        ..VqVaeConfig::desk()
    }
}

/// Full model: analytic gradients of the training loss (with the
/// straight-through estimator) against finite differences of the surrogate
/// that the estimator differentiates, in which the token assignment and every
/// stopped value are frozen at the base point. For decoder parameters the
/// surrogate and the true loss coincide; for the encoder it realizes the
/// identity Jacobian of the quantizer; for the codebook it keeps only the
/// codebook commitment term.
pub fn grad_model_total() -> (String, GradCheckReport) {
    let (h, w, n) = (4, 8, 2);
    let cfg = tiny_vqvae_config();
    let (lambda, beta) = (cfg.lambda, 0.5);
    let k = cfg.codebook_size;
    let d = cfg.code_dim;
    let mut model = VqVae::<f64>::new(cfg, h, w, &mut rng("tiny vqvae")).unwrap();
    let mut r = rng("tiny vqvae data");
    let x = Tensor::from_fn(&[n, 1, h, w], |_| r.gen_range(0.0..1.0));
    let m = binary_mask(&[n, 1, h, w], &mut r);

    // seed the codebook with jittered encoder outputs so most rows are in use
    {
        let mut g = Graph::new();
        let b = model.params().bind(&mut g);
        let xc = g.constant(x.clone());
        let z = model.encode(&mut g, &b, xc).unwrap();
        let (zs, zd) = (g.shape(z).to_vec(), g.value(z).data().to_vec());
        let plane = zs[2] * zs[3];
        let id = model.codebook_id();
        let cb = model.params_mut().get_mut(id).data_mut();
        for j in 0..k {
            let (bi, p) = ((j % (zs[0] * plane)) / plane, j % plane);
            for c in 0..d {
                cb[j * d + c] = zd[(bi * d + c) * plane + p] + r.gen_range(-0.01..0.01);
            }
        }
    }

    // analytic, through the real quantizer
    let mut g = Graph::new();
    let b = model.params().bind(&mut g);
    let xc = g.constant(x.clone());
    let (f, tokens) = model.forward(&mut g, &b, xc).unwrap();
    let z0 = g.value(f.z).clone();
    let zq0 = g.value(f.z_q).clone();
    let loss = {
        let (xt, mt) = (g.constant(x.clone()), g.constant(m.clone()));
        let rec = loss_rec(&mut g, xt, mt, f.range).unwrap();
        let rl = loss_raydrop(&mut g, mt, f.logits.unwrap()).unwrap();
        let com = loss_commit(&mut g, f.z, f.z_q, beta).unwrap();
        loss_total(&mut g, rec, Some(rl), com, lambda).unwrap()
    };
    let grads = g.backward(loss).unwrap();
    let analytic = b.gradients(model.params(), &grads);

    let offset = Tensor::new(
        z0.shape().to_vec(),
        zq0.data().iter().zip(z0.data()).map(|(q, z)| q - z).collect(),
    )
    .unwrap();
    let surrogate = |ps: &ParamSet<f64>| -> f64 {
        let mut probe = model.clone();
        *probe.params_mut() = ps.clone();
        let mut g = Graph::new();
        let b = probe.params().bind(&mut g);
        let xc = g.constant(x.clone());
        let z = probe.encode(&mut g, &b, xc).unwrap();
        let off = g.constant(offset.clone());
        let z_st = g.add(z, off).unwrap();
        let s = g.shape(z).to_vec();
        let rows = g.embedding(b[probe.codebook_id()], &tokens).unwrap();
        let rows = g.reshape(rows, &[s[0], s[2], s[3], s[1]]).unwrap();
        let z_q = g.permute(rows, &[0, 3, 1, 2]).unwrap();
        let (range, logits) = probe.decode(&mut g, &b, z_st).unwrap();
        let (xt, mt) = (g.constant(x.clone()), g.constant(m.clone()));
        let rec = loss_rec(&mut g, xt, mt, range).unwrap();
        let rl = loss_raydrop(&mut g, mt, logits.unwrap()).unwrap();
        let (z0c, zq0c) = (g.constant(z0.clone()), g.constant(zq0.clone()));
        let (a, _) = loss_commit_terms(&mut g, z0c, z_q).unwrap();
        let (_, e) = loss_commit_terms(&mut g, z, zq0c).unwrap();
        scalar(&g, rec) + lambda * scalar(&g, rl) + scalar(&g, a) + beta * scalar(&g, e)
    };
    check_surrogate("vqvae total (model)", model.params(), &analytic, surrogate, &["enc.", "codebook", "dec."])
}

pub fn tiny_transformer(zero_head: bool, vocab: usize, seq_len: usize, seed: &str) -> Transformer<f64> {
    let cfg = TransformerConfig {
        layers: 2,
        d_model: 8,
        heads: 2,
        mlp_ratio: 2,
        zero_init_output: zero_head,
        sampling: Default::default(),
    };
    Transformer::new(cfg, vocab, seq_len, &mut rng(seed)).unwrap()
}

/// Transformer teacher-forced NLL w.r.t. all parameters.
pub fn grad_transformer() -> (String, GradCheckReport) {
    let model = tiny_transformer(false, 5, 6, "grad transformer");
    let mut r = rng("grad transformer data");
    let seqs: Vec<Vec<u16>> = (0..3).map(|_| (0..6).map(|_| r.gen_range(0..5)).collect()).collect();
    check("transformer nll", model.params(), |g, b| model.nll_loss(g, b, &seqs))
}

/// Every loss of the two training objectives.
pub fn gradient_suite() -> Vec<(String, GradCheckReport)> {
    let mut out = vec![grad_rec(), grad_raydrop()];
    out.extend(grad_commit());
    out.push(grad_total_terms());
    out.push(grad_model_total());
    out.push(grad_transformer());
    out
}
