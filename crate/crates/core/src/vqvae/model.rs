use rand::Rng;

use super::VqVaeConfig;
use crate::autodiff::{Bound, Graph, ParamId, ParamSet, Real, Tensor, Var};
use crate::dataset::Scan;
use crate::error::{Error, Result};
use crate::geom::{ProjectionConfig, RangeImage, RaydropMask};
use crate::nn::{uniform, Conv, ConvKind};

/// `h x w` codebook indices, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenGrid {
    height: usize,
    width: usize,
    tokens: Vec<u16>,
}

impl TokenGrid {
    pub fn new(height: usize, width: usize, tokens: Vec<u16>) -> Result<Self> {
        if tokens.len() != height * width || tokens.is_empty() {
            return Err(Error::shape("token_grid", &[height, width], &[tokens.len()]));
        }
        Ok(Self { height, width, tokens })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn tokens(&self) -> &[u16] {
        &self.tokens
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.tokens[row * self.width + col]
    }

    /// Errors if any index is outside a vocabulary of `k` codes.
    pub fn check_vocab(&self, k: usize) -> Result<()> {
        match self.tokens.iter().find(|&&t| t as usize >= k) {
            Some(t) => Err(Error::invalid(format!("token {t} outside a codebook of {k}"))),
            None => Ok(()),
        }
    }
}

/// Both decoder heads for one image. `logits` is absent for the baseline decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderOutput {
    pub height: usize,
    pub width: usize,
    pub range: Vec<f32>,
    pub logits: Option<Vec<f32>>,
}

/// Bit is set iff `sigmoid(logit) >= 0.5`.
pub fn threshold_mask(height: usize, width: usize, logits: &[f32]) -> Result<RaydropMask> {
    let bits = logits
        .iter()
        .map(|&l| u8::from(1.0 / (1.0 + (-(l as f64)).exp()) >= 0.5))
        .collect();
    RaydropMask::new(height, width, bits)
}

/// `mask * range`, clamped into `[0, 1]`; masked-out pixels are exactly 0.
pub fn compose(range: &[f32], mask: &RaydropMask, cfg: &ProjectionConfig) -> Result<RangeImage> {
    if range.len() != mask.bits().len() {
        return Err(Error::shape("compose", &[range.len()], &[mask.height(), mask.width()]));
    }
    let values = range
        .iter()
        .zip(mask.bits())
        .map(|(&r, &m)| if m == 1 { r.clamp(0.0, 1.0) } else { 0.0 })
        .collect();
    RangeImage::new(values, *cfg)
}

impl DecoderOutput {
    /// Mask from the raydrop head, or from thresholding the range for the baseline.
    pub fn mask(&self, baseline_threshold: f64) -> Result<RaydropMask> {
        match &self.logits {
            Some(l) => threshold_mask(self.height, self.width, l),
            None => RaydropMask::new(
                self.height,
                self.width,
                self.range.iter().map(|&r| u8::from(r as f64 >= baseline_threshold)).collect(),
            ),
        }
    }

    pub fn to_scan(&self, cfg: &ProjectionConfig, baseline_threshold: f64) -> Result<Scan> {
        let mask = self.mask(baseline_threshold)?;
        Scan::new(compose(&self.range, &mask, cfg)?, mask)
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    c1: Conv,
    c2: Conv,
}

impl ResBlock {
    fn new<T: Real, R: Rng>(ps: &mut ParamSet<T>, name: &str, c: usize, rng: &mut R) -> Self {
        Self {
            c1: Conv::new(ps, &format!("{name}.c1"), ConvKind::Forward, (c, c), (3, 3), (1, 1), (1, 1), rng),
            c2: Conv::new(ps, &format!("{name}.c2"), ConvKind::Forward, (c, c), (1, 1), (1, 1), (0, 0), rng),
        }
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        let h = g.relu(x)?;
        let h = self.c1.forward(g, b, h)?;
        let h = g.relu(h)?;
        let h = self.c2.forward(g, b, h)?;
        g.add(x, h)
    }
}

/// Final upsampling stages plus output convolution owned by one head.
#[derive(Clone, Debug)]
struct Branch {
    ups: Vec<Conv>,
    head: Conv,
}

impl Branch {
    fn forward<T: Real>(&self, g: &mut Graph<T>, b: &Bound, mut h: Var) -> Result<Var> {
        for u in &self.ups {
            h = g.relu(h)?;
            h = u.forward(g, b, h)?;
        }
        let h = g.relu(h)?;
        self.head.forward(g, b, h)
    }
}

/// Graph values of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// Encoder output `[n, n_z, h, w]`.
    pub z: Var,
    /// Codebook rows selected for `z`; gradients reach only the codebook.
    pub z_q: Var,
    /// Same value as `z_q`, gradients pass straight through to `z`.
    pub z_st: Var,
    /// Range head `[n, 1, H, W]`.
    pub range: Var,
    /// Raydrop logits `[n, 1, H, W]` (absent for the baseline).
    pub logits: Option<Var>,
}

/// Convolutional encoder, nearest-neighbour quantizer with a learnable codebook,
/// and a decoder with a range head and an optional raydrop-logit head.
#[derive(Clone, Debug)]
pub struct VqVae<T: Real> {
    config: VqVaeConfig,
    height: usize,
    width: usize,
    latent: (usize, usize),
    params: ParamSet<T>,
    stem: Conv,
    downs: Vec<Conv>,
    enc_res: Vec<ResBlock>,
    enc_out: Conv,
    codebook: ParamId,
    dec_in: Conv,
    dec_res: Vec<ResBlock>,
    ups: Vec<Conv>,
    /// One branch emitting both channels, or a range branch and a raydrop branch.
    heads: Vec<Branch>,
}

impl<T: Real> VqVae<T> {
    pub fn new<R: Rng>(config: VqVaeConfig, height: usize, width: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let latent = config.latent_shape(height, width)?;
        let mut ps = ParamSet::new();
        let fw = ConvKind::Forward;
        let c0 = config.stem_channels;
        let stem = Conv::new(&mut ps, "enc.stem", fw, (1, c0), (3, 3), (1, 1), (1, 1), rng);
        let widths: Vec<usize> = std::iter::once(c0).chain(config.channels.iter().copied()).collect();
        let downs = config
            .strides
            .iter()
            .enumerate()
            .map(|(i, &s)| Conv::resampling(&mut ps, &format!("enc.down{i}"), fw, (widths[i], widths[i + 1]), s, rng))
            .collect();
        let c_last = *widths.last().expect("at least one stage");
        let enc_res = (0..config.res_blocks)
            .map(|i| ResBlock::new(&mut ps, &format!("enc.res{i}"), c_last, rng))
            .collect();
        let enc_out = Conv::new(&mut ps, "enc.out", fw, (c_last, config.code_dim), (1, 1), (1, 1), (0, 0), rng);
        let k = config.codebook_size;
        let codebook = ps.add("codebook", uniform(&[k, config.code_dim], 1.0 / k as f64, rng));
        let dec_in = Conv::new(&mut ps, "dec.in", fw, (config.code_dim, c_last), (3, 3), (1, 1), (1, 1), rng);
        let dec_res = (0..config.res_blocks)
            .map(|i| ResBlock::new(&mut ps, &format!("dec.res{i}"), c_last, rng))
            .collect();
        let up = |ps: &mut ParamSet<T>, i: usize, tag: &str, rng: &mut R| {
            let s = config.strides[i];
            Conv::resampling(ps, &format!("dec.{tag}up{i}"), ConvKind::Transposed, (widths[i + 1], widths[i]), s, rng)
        };
        let n_stages = config.strides.len();
        let split = config.head_stages;
        let ups = (split..n_stages).rev().map(|i| up(&mut ps, i, "", rng)).collect();
        let branch = |ps: &mut ParamSet<T>, tag: &str, out_ch: usize, rng: &mut R| Branch {
            ups: (0..split).rev().map(|i| up(ps, i, tag, rng)).collect(),
            head: Conv::new(ps, &format!("dec.{tag}head"), fw, (c0, out_ch), (3, 3), (1, 1), (1, 1), rng),
        };
        let heads = match (config.raydrop_head, config.head_stages) {
            (false, _) => vec![branch(&mut ps, "", 1, rng)],
            (true, 0) => vec![branch(&mut ps, "", 2, rng)],
            (true, _) => vec![branch(&mut ps, "range.", 1, rng), branch(&mut ps, "raydrop.", 1, rng)],
        };
        Ok(Self {
            config,
            height,
            width,
            latent,
            params: ps,
            stem,
            downs,
            enc_res,
            enc_out,
            codebook,
            dec_in,
            dec_res,
            ups,
            heads,
        })
    }

    pub fn config(&self) -> &VqVaeConfig {
        &self.config
    }

    pub fn input_shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn latent_shape(&self) -> (usize, usize) {
        self.latent
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn codebook_id(&self) -> ParamId {
        self.codebook
    }

    pub fn codebook(&self) -> &Tensor<T> {
        self.params.get(self.codebook)
    }

    /// Same architecture in another precision.
    pub fn cast<U: Real>(&self) -> VqVae<U> {
        VqVae {
            config: self.config.clone(),
            height: self.height,
            width: self.width,
            latent: self.latent,
            params: self.params.cast(),
            stem: self.stem.clone(),
            downs: self.downs.clone(),
            enc_res: self.enc_res.clone(),
            enc_out: self.enc_out.clone(),
            codebook: self.codebook,
            dec_in: self.dec_in.clone(),
            dec_res: self.dec_res.clone(),
            ups: self.ups.clone(),
            heads: self.heads.clone(),
        }
    }

    /// `x: [n, 1, H, W]` to `z: [n, n_z, h, w]`.
    pub fn encode(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 || s[1] != 1 || (s[2], s[3]) != (self.height, self.width) {
            return Err(Error::shape("encode", &s, &[0, 1, self.height, self.width]));
        }
        let h = self.stem.forward(g, b, x)?;
        let mut h = g.relu(h)?;
        for d in &self.downs {
            h = d.forward(g, b, h)?;
            h = g.relu(h)?;
        }
        for r in &self.enc_res {
            h = r.forward(g, b, h)?;
        }
        self.enc_out.forward(g, b, h)
    }

    /// Nearest codebook row (squared L2, lowest index on ties) for every
    /// spatial vector of `z: [n, n_z, h, w]`, in `(n, row, col)` order.
    pub fn nearest_codes(&self, z: &Tensor<T>) -> Result<Vec<usize>> {
        nearest_codes(self.codebook(), z)
    }

    /// Quantizes `z`. Returns `(z_q, z_st, tokens)`.
    pub fn quantize(&self, g: &mut Graph<T>, b: &Bound, z: Var) -> Result<(Var, Var, Vec<usize>)> {
        let tokens = self.nearest_codes(g.value(z))?;
        let s = g.shape(z).to_vec();
        let rows = g.embedding(b[self.codebook], &tokens)?;
        let rows = g.reshape(rows, &[s[0], s[2], s[3], s[1]])?;
        let z_q = g.permute(rows, &[0, 3, 1, 2])?;
        let value = g.value(z_q).clone();
        let z_st = g.straight_through(z, value)?;
        Ok((z_q, z_st, tokens))
    }

    /// `z_q: [n, n_z, h, w]` to `(range, logits)`, each `[n, 1, H, W]`.
    pub fn decode(&self, g: &mut Graph<T>, b: &Bound, z_q: Var) -> Result<(Var, Option<Var>)> {
        let s = g.shape(z_q).to_vec();
        if s.len() != 4 || s[1] != self.config.code_dim || (s[2], s[3]) != self.latent {
            return Err(Error::shape(
                "decode",
                &s,
                &[0, self.config.code_dim, self.latent.0, self.latent.1],
            ));
        }
        let mut h = self.dec_in.forward(g, b, z_q)?;
        for r in &self.dec_res {
            h = r.forward(g, b, h)?;
        }
        for u in &self.ups {
            h = g.relu(h)?;
            h = u.forward(g, b, h)?;
        }
        match (self.heads.as_slice(), self.config.raydrop_head) {
            ([both], true) => {
                let out = both.forward(g, b, h)?;
                let range = g.slice(out, 1, 0, 1)?;
                let logits = g.slice(out, 1, 1, 1)?;
                Ok((range, Some(logits)))
            }
            ([range, raydrop], true) => {
                let r = range.forward(g, b, h)?;
                let l = raydrop.forward(g, b, h)?;
                Ok((r, Some(l)))
            }
            (heads, _) => Ok((heads[0].forward(g, b, h)?, None)),
        }
    }

    /// Encoder, quantizer and decoder on `x: [n, 1, H, W]`.
    pub fn forward(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<(Forward, Vec<usize>)> {
        let z = self.encode(g, b, x)?;
        let (z_q, z_st, tokens) = self.quantize(g, b, z)?;
        let (range, logits) = self.decode(g, b, z_st)?;
        Ok((
            Forward {
                z,
                z_q,
                z_st,
                range,
                logits,
            },
            tokens,
        ))
    }

    /// Composite ranges of `scans` as an `[n, 1, H, W]` tensor.
    pub fn batch_input(&self, scans: &[&Scan]) -> Result<Tensor<T>> {
        let px = self.height * self.width;
        let mut data = Vec::with_capacity(scans.len() * px);
        for s in scans {
            if (s.range.height(), s.range.width()) != (self.height, self.width) {
                return Err(Error::shape(
                    "vqvae input",
                    &[s.range.height(), s.range.width()],
                    &[self.height, self.width],
                ));
            }
            data.extend(s.range.values().iter().map(|&v| T::lit(v as f64)));
        }
        Tensor::new(vec![scans.len(), 1, self.height, self.width], data)
    }

    fn chunks<'a>(scans: &'a [Scan]) -> impl Iterator<Item = Vec<&'a Scan>> {
        scans.chunks(16).map(|c| c.iter().collect())
    }

    /// Token grids of `scans` (inference only).
    pub fn encode_tokens(&self, scans: &[Scan]) -> Result<Vec<TokenGrid>> {
        let (h, w) = self.latent;
        let mut out = Vec::with_capacity(scans.len());
        for chunk in Self::chunks(scans) {
            let mut g = Graph::new();
            let b = self.params.bind_frozen(&mut g);
            let x = g.constant(self.batch_input(&chunk)?);
            let z = self.encode(&mut g, &b, x)?;
            let codes = self.nearest_codes(g.value(z))?;
            for c in codes.chunks(h * w) {
                out.push(TokenGrid::new(h, w, c.iter().map(|&t| t as u16).collect())?);
            }
        }
        Ok(out)
    }

    /// Decoder outputs for token grids (inference only).
    pub fn decode_tokens(&self, grids: &[TokenGrid]) -> Result<Vec<DecoderOutput>> {
        let (h, w) = self.latent;
        let mut out = Vec::with_capacity(grids.len());
        for chunk in grids.chunks(16) {
            let mut tokens = Vec::with_capacity(chunk.len() * h * w);
            for grid in chunk {
                if (grid.height, grid.width) != (h, w) {
                    return Err(Error::shape("decode_tokens", &[grid.height, grid.width], &[h, w]));
                }
                grid.check_vocab(self.config.codebook_size)?;
                tokens.extend(grid.tokens.iter().map(|&t| t as usize));
            }
            let mut g = Graph::new();
            let b = self.params.bind_frozen(&mut g);
            let rows = g.embedding(b[self.codebook], &tokens)?;
            let rows = g.reshape(rows, &[chunk.len(), h, w, self.config.code_dim])?;
            let z_q = g.permute(rows, &[0, 3, 1, 2])?;
            let (range, logits) = self.decode(&mut g, &b, z_q)?;
            out.extend(self.split_outputs(&g, range, logits, chunk.len()));
        }
        Ok(out)
    }

    fn split_outputs(&self, g: &Graph<T>, range: Var, logits: Option<Var>, n: usize) -> Vec<DecoderOutput> {
        let px = self.height * self.width;
        let to_f32 = |v: &[T]| v.iter().map(|x| x.as_f64() as f32).collect::<Vec<_>>();
        (0..n)
            .map(|i| DecoderOutput {
                height: self.height,
                width: self.width,
                range: to_f32(&g.value(range).data()[i * px..(i + 1) * px]),
                logits: logits.map(|l| to_f32(&g.value(l).data()[i * px..(i + 1) * px])),
            })
            .collect()
    }

    /// Encode, quantize and decode `scans` (inference only).
    pub fn reconstruct(&self, scans: &[Scan]) -> Result<Vec<DecoderOutput>> {
        let mut out = Vec::with_capacity(scans.len());
        for chunk in Self::chunks(scans) {
            let mut g = Graph::new();
            let b = self.params.bind_frozen(&mut g);
            let x = g.constant(self.batch_input(&chunk)?);
            let (f, _) = self.forward(&mut g, &b, x)?;
            out.extend(self.split_outputs(&g, f.range, f.logits, chunk.len()));
        }
        Ok(out)
    }
}

/// Brute-force nearest rows of `codebook: [k, d]` for `z: [n, d, h, w]`.
pub fn nearest_codes<T: Real>(codebook: &Tensor<T>, z: &Tensor<T>) -> Result<Vec<usize>> {
    let (&[k, d], &[n, dz, h, w]) = (codebook.shape(), z.shape()) else {
        return Err(Error::shape("quantize", z.shape(), codebook.shape()));
    };
    if d != dz {
        return Err(Error::shape("quantize", z.shape(), codebook.shape()));
    }
    let cb = codebook.data();
    let zd = z.data();
    let plane = h * w;
    let mut out = Vec::with_capacity(n * plane);
    let mut v = vec![T::zero(); d];
    for b in 0..n {
        for p in 0..plane {
            for (c, slot) in v.iter_mut().enumerate() {
                *slot = zd[(b * d + c) * plane + p];
            }
            let mut best = (0, T::infinity());
            for j in 0..k {
                let row = &cb[j * d..(j + 1) * d];
                let dist = row.iter().zip(&v).fold(T::zero(), |acc, (&e, &x)| acc + (x - e) * (x - e));
                if dist < best.1 {
                    best = (j, dist);
                }
            }
            out.push(best.0);
        }
    }
    Ok(out)
}
