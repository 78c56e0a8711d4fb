//! Patch unfolding shared by convolution and its transpose.

use super::real::Real;

/// Geometry of a sliding window over a `channels x img_h x img_w` image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ColGeom {
    pub channels: usize,
    pub img_h: usize,
    pub img_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ColGeom {
    pub fn new(
        channels: usize,
        (img_h, img_w): (usize, usize),
        (kh, kw): (usize, usize),
        (sh, sw): (usize, usize),
        (ph, pw): (usize, usize),
    ) -> Option<Self> {
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
            return None;
        }
        let span_h = (img_h + 2 * ph).checked_sub(kh)?;
        let span_w = (img_w + 2 * pw).checked_sub(kw)?;
        Some(Self {
            channels,
            img_h,
            img_w,
            kh,
            kw,
            sh,
            sw,
            ph,
            pw,
            out_h: span_h / sh + 1,
            out_w: span_w / sw + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    /// Output columns `lo..hi` whose tap `k` lands inside an axis of length `len`.
    fn valid_span(out: usize, k: usize, stride: usize, pad: usize, len: usize) -> (usize, usize) {
        // need 0 <= o*stride + k - pad < len
        let lo = pad.saturating_sub(k).div_ceil(stride);
        let hi = if len + pad > k { ((len + pad - k - 1) / stride + 1).min(out) } else { 0 };
        (lo.min(hi), hi)
    }

    /// Yields `(column row, first output position, first image offset, count)`
    /// for every run of in-bounds taps; image offsets advance by `sw` per step.
    #[inline]
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        for c in 0..self.channels {
            for ky in 0..self.kh {
                let (oy_lo, oy_hi) = Self::valid_span(self.out_h, ky, self.sh, self.ph, self.img_h);
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let (ox_lo, ox_hi) = Self::valid_span(self.out_w, kx, self.sw, self.pw, self.img_w);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in oy_lo..oy_hi {
                        let iy = oy * self.sh + ky - self.ph;
                        let ix = ox_lo * self.sw + kx - self.pw;
                        f(row, oy * self.out_w + ox_lo, (c * self.img_h + iy) * self.img_w + ix, ox_hi - ox_lo);
                    }
                }
            }
        }
    }
}

/// `cols[patch_len, out_h*out_w]` from `img[channels, img_h, img_w]`; padding reads zero.
#[cfg(test)]
pub(crate) fn im2col<T: Real>(g: &ColGeom, img: &[T], cols: &mut [T]) {
    im2col_batch(g, img, 1, cols);
}

/// Adjoint of [`im2col`]: scatter-adds columns back into `img`.
#[cfg(test)]
pub(crate) fn col2im<T: Real>(g: &ColGeom, cols: &[T], img: &mut [T]) {
    col2im_batch(g, cols, 1, img);
}

/// `cols[patch_len, n*out_h*out_w]` from `n` stacked images; sample `s` fills
/// columns `s*out_h*out_w..`.
pub(crate) fn im2col_batch<T: Real>(g: &ColGeom, imgs: &[T], n: usize, cols: &mut [T]) {
    cols.iter_mut().for_each(|v| *v = T::zero());
    let hw = g.out_h * g.out_w;
    let ld = n * hw;
    let in_len = g.channels * g.img_h * g.img_w;
    for s in 0..n {
        let img = &imgs[s * in_len..(s + 1) * in_len];
        let off = s * hw;
        let step = g.sw;
        g.for_each_run(|row, pos, src, count| {
            let dst = &mut cols[row * ld + off + pos..][..count];
            if step == 1 {
                dst.copy_from_slice(&img[src..src + count]);
            } else {
                let srcs = img[src..].iter().step_by(step);
                dst.iter_mut().zip(srcs).for_each(|(d, &v)| *d = v);
            }
        });
    }
}

/// Adjoint of [`im2col_batch`].
pub(crate) fn col2im_batch<T: Real>(g: &ColGeom, cols: &[T], n: usize, imgs: &mut [T]) {
    let hw = g.out_h * g.out_w;
    let ld = n * hw;
    let in_len = g.channels * g.img_h * g.img_w;
    for s in 0..n {
        let img = &mut imgs[s * in_len..(s + 1) * in_len];
        let off = s * hw;
        let step = g.sw;
        g.for_each_run(|row, pos, dst, count| {
            let src = &cols[row * ld + off + pos..][..count];
            if step == 1 {
                img[dst..dst + count].iter_mut().zip(src).for_each(|(d, &v)| *d += v);
            } else {
                let dsts = img[dst..].iter_mut().step_by(step);
                dsts.zip(src).for_each(|(d, &v)| *d += v);
            }
        });
    }
}

/// `[n, c, hw]` to `[c, n*hw]`.
pub(crate) fn to_channel_major<T: Copy>(x: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for ch in 0..c {
        for s in 0..n {
            out.extend_from_slice(&x[(s * c + ch) * hw..(s * c + ch + 1) * hw]);
        }
    }
    out
}

/// `[c, n*hw]` to `[n, c, hw]`.
pub(crate) fn from_channel_major<T: Copy>(x: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for s in 0..n {
        for ch in 0..c {
            out.extend_from_slice(&x[(ch * n + s) * hw..(ch * n + s + 1) * hw]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_size_formula() {
        let g = ColGeom::new(1, (16, 64), (4, 4), (2, 2), (1, 1)).unwrap();
        assert_eq!((g.out_h, g.out_w), (8, 32));
        let g = ColGeom::new(1, (4, 16), (3, 4), (1, 2), (1, 1)).unwrap();
        assert_eq!((g.out_h, g.out_w), (4, 8));
        assert!(ColGeom::new(1, (2, 2), (5, 5), (1, 1), (0, 0)).is_none());
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let g = ColGeom::new(2, (5, 6), (3, 2), (2, 1), (1, 0)).unwrap();
        let x: Vec<f64> = (0..2 * 5 * 6).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let c: Vec<f64> = (0..g.patch_len() * g.out_h * g.out_w).map(|i| ((i * 3) % 5) as f64 - 2.0).collect();
        let mut cols = vec![0.0; c.len()];
        im2col(&g, &x, &mut cols);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im(&g, &c, &mut back);
        let rhs: f64 = back.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn im2col_matches_naive_unfolding() {
        for (img, k, st, pad) in [((5, 7), (3, 3), (1, 1), (1, 1)), ((4, 9), (4, 4), (2, 2), (1, 1)), ((6, 8), (3, 4), (1, 2), (1, 1)), ((3, 3), (1, 1), (1, 1), (0, 0))] {
            let g = ColGeom::new(2, img, k, st, pad).unwrap();
            let x: Vec<f64> = (0..2 * img.0 * img.1).map(|i| i as f64 + 1.0).collect();
            let mut cols = vec![0.0; g.patch_len() * g.out_h * g.out_w];
            im2col(&g, &x, &mut cols);
            let n_out = g.out_h * g.out_w;
            for c in 0..2 {
                for ky in 0..k.0 {
                    for kx in 0..k.1 {
                        let row = (c * k.0 + ky) * k.1 + kx;
                        for oy in 0..g.out_h {
                            for ox in 0..g.out_w {
                                let iy = (oy * st.0 + ky) as isize - pad.0 as isize;
                                let ix = (ox * st.1 + kx) as isize - pad.1 as isize;
                                let inside = iy >= 0 && ix >= 0 && iy < img.0 as isize && ix < img.1 as isize;
                                let want = if inside { x[(c * img.0 + iy as usize) * img.1 + ix as usize] } else { 0.0 };
                                assert_eq!(cols[row * n_out + oy * g.out_w + ox], want);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn channel_major_round_trip() {
        let x: Vec<i32> = (0..2 * 3 * 4).collect();
        let cm = to_channel_major(&x, 2, 3, 4);
        assert_eq!(&cm[..8], &[0, 1, 2, 3, 12, 13, 14, 15]);
        assert_eq!(from_channel_major(&cm, 2, 3, 4), x);
    }
}
