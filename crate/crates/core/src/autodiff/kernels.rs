//! Numeric kernels behind the convolution-style tape operations.
//!
//! All periodic stencils go through a halo-padded copy of each plane so the
//! innermost loops run over contiguous rows.

use rayon::prelude::*;

use crate::scalar::Scalar;

#[inline]
fn axpy<S: Scalar>(dst: &mut [S], a: S, src: &[S]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + a * s;
    }
}

#[inline]
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    // four independent lanes so the loop vectorizes
    let mut lanes = [S::zero(); 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            lanes[i] = lanes[i] + x[i] * y[i];
        }
    }
    let tail = ra.iter().zip(rb).fold(S::zero(), |acc, (&x, &y)| acc + x * y);
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

/// Copies a `h x w` plane into a `(h + 2l) x (w + 2l)` periodic halo layout.
pub(crate) fn pad_periodic<S: Scalar>(plane: &[S], h: usize, w: usize, l: usize) -> Vec<S> {
    let (ph, pw) = (h + 2 * l, w + 2 * l);
    let mut out = Vec::with_capacity(ph * pw);
    for y in 0..ph {
        let sy = (y + h * (l / h + 1) - l) % h;
        let row = &plane[sy * w..(sy + 1) * w];
        for x in 0..pw {
            out.push(row[(x + w * (l / w + 1) - l) % w]);
        }
    }
    out
}

/// Adds a padded accumulator back onto the periodic plane it was built from.
pub(crate) fn fold_periodic<S: Scalar>(padded: &[S], plane: &mut [S], h: usize, w: usize, l: usize) {
    let pw = w + 2 * l;
    for y in 0..h + 2 * l {
        let sy = (y + h * (l / h + 1) - l) % h;
        for x in 0..pw {
            let sx = (x + w * (l / w + 1) - l) % w;
            plane[sy * w + sx] = plane[sy * w + sx] + padded[y * pw + x];
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub ci: usize,
    pub co: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvDims {
    fn l(&self) -> usize {
        (self.k - 1) / 2
    }
}

/// `out(n,o,y,x) = sum_{c,s,t} wgt(o,c,s,t) in(n,c,y+s-L,x+t-L)` with periodic wrap.
pub(crate) fn conv_forward<S: Scalar>(input: &[S], wgt: &[S], d: ConvDims) -> Vec<S> {
    let (hw, l, k) = (d.h * d.w, d.l(), d.k);
    let pw = d.w + 2 * l;
    let per_sample: Vec<Vec<S>> = input
        .par_chunks(d.ci * hw)
        .map(|sample| {
            let pads: Vec<Vec<S>> = sample
                .chunks(hw)
                .map(|p| pad_periodic(p, d.h, d.w, l))
                .collect();
            let mut out = vec![S::zero(); d.co * hw];
            for (o, oplane) in out.chunks_mut(hw).enumerate() {
                for (c, pad) in pads.iter().enumerate() {
                    let kern = &wgt[(o * d.ci + c) * k * k..(o * d.ci + c + 1) * k * k];
                    for s in 0..k {
                        for t in 0..k {
                            let wv = kern[s * k + t];
                            for y in 0..d.h {
                                let src = &pad[(y + s) * pw + t..(y + s) * pw + t + d.w];
                                axpy(&mut oplane[y * d.w..(y + 1) * d.w], wv, src);
                            }
                        }
                    }
                }
            }
            out
        })
        .collect();
    per_sample.concat()
}

/// Gradients of [`conv_forward`] with respect to its input and weights.
pub(crate) fn conv_backward<S: Scalar>(
    input: &[S],
    wgt: &[S],
    grad: &[S],
    d: ConvDims,
    need_input: bool,
    need_weight: bool,
) -> (Option<Vec<S>>, Option<Vec<S>>) {
    let (hw, l, k) = (d.h * d.w, d.l(), d.k);
    let pw = d.w + 2 * l;
    let ph = d.h + 2 * l;
    let per_sample: Vec<(Vec<S>, Vec<S>)> = input
        .par_chunks(d.ci * hw)
        .zip(grad.par_chunks(d.co * hw))
        .map(|(sample, g)| {
            let mut gin = Vec::new();
            let mut gw = Vec::new();
            if need_input {
                gin = vec![S::zero(); d.ci * hw];
                for (c, gplane) in gin.chunks_mut(hw).enumerate() {
                    let mut acc = vec![S::zero(); ph * pw];
                    for (o, go) in g.chunks(hw).enumerate() {
                        let kern = &wgt[(o * d.ci + c) * k * k..(o * d.ci + c + 1) * k * k];
                        for s in 0..k {
                            for t in 0..k {
                                let wv = kern[s * k + t];
                                for y in 0..d.h {
                                    let dst = &mut acc[(y + s) * pw + t..(y + s) * pw + t + d.w];
                                    axpy(dst, wv, &go[y * d.w..(y + 1) * d.w]);
                                }
                            }
                        }
                    }
                    fold_periodic(&acc, gplane, d.h, d.w, l);
                }
            }
            if need_weight {
                gw = vec![S::zero(); d.co * d.ci * k * k];
                let pads: Vec<Vec<S>> = sample
                    .chunks(hw)
                    .map(|p| pad_periodic(p, d.h, d.w, l))
                    .collect();
                for (o, go) in g.chunks(hw).enumerate() {
                    for (c, pad) in pads.iter().enumerate() {
                        let base = (o * d.ci + c) * k * k;
                        for s in 0..k {
                            for t in 0..k {
                                let mut acc = S::zero();
                                for y in 0..d.h {
                                    let src = &pad[(y + s) * pw + t..(y + s) * pw + t + d.w];
                                    acc = acc + dot(&go[y * d.w..(y + 1) * d.w], src);
                                }
                                gw[base + s * k + t] = acc;
                            }
                        }
                    }
                }
            }
            (gin, gw)
        })
        .collect();
    let gin = need_input.then(|| per_sample.iter().flat_map(|(a, _)| a.iter().copied()).collect());
    let gw = need_weight.then(|| {
        let mut total = vec![S::zero(); d.co * d.ci * k * k];
        for (_, part) in &per_sample {
            axpy(&mut total, S::one(), part);
        }
        total
    });
    (gin, gw)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LocalDims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

/// Per-pixel stencil: `out(n,c,y,x) = sum_{s,t} ker(n, s k + t, y, x) f(n,c,y+s-L,x+t-L)`.
pub(crate) fn local_forward<S: Scalar>(ker: &[S], field: &[S], d: LocalDims) -> Vec<S> {
    let (hw, k) = (d.h * d.w, d.k);
    let l = (k - 1) / 2;
    let pw = d.w + 2 * l;
    let mut out = vec![S::zero(); d.n * d.c * hw];
    for b in 0..d.n {
        let kb = &ker[b * k * k * hw..(b + 1) * k * k * hw];
        for c in 0..d.c {
            let off = (b * d.c + c) * hw;
            let pad = pad_periodic(&field[off..off + hw], d.h, d.w, l);
            let oplane = &mut out[off..off + hw];
            for s in 0..k {
                for t in 0..k {
                    let kp = &kb[(s * k + t) * hw..(s * k + t + 1) * hw];
                    for y in 0..d.h {
                        let src = &pad[(y + s) * pw + t..(y + s) * pw + t + d.w];
                        let kr = &kp[y * d.w..(y + 1) * d.w];
                        for ((o, &a), &b) in oplane[y * d.w..(y + 1) * d.w].iter_mut().zip(kr).zip(src) {
                            *o = *o + a * b;
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn local_backward<S: Scalar>(
    ker: &[S],
    field: &[S],
    grad: &[S],
    d: LocalDims,
    need_ker: bool,
    need_field: bool,
) -> (Option<Vec<S>>, Option<Vec<S>>) {
    let (hw, k) = (d.h * d.w, d.k);
    let l = (k - 1) / 2;
    let (ph, pw) = (d.h + 2 * l, d.w + 2 * l);
    let mut gk = need_ker.then(|| vec![S::zero(); ker.len()]);
    let mut gf = need_field.then(|| vec![S::zero(); field.len()]);
    for b in 0..d.n {
        let kb = &ker[b * k * k * hw..(b + 1) * k * k * hw];
        for c in 0..d.c {
            let off = (b * d.c + c) * hw;
            let g = &grad[off..off + hw];
            if let Some(gk) = gk.as_mut() {
                let pad = pad_periodic(&field[off..off + hw], d.h, d.w, l);
                let gkb = &mut gk[b * k * k * hw..(b + 1) * k * k * hw];
                for s in 0..k {
                    for t in 0..k {
                        let gp = &mut gkb[(s * k + t) * hw..(s * k + t + 1) * hw];
                        for y in 0..d.h {
                            let src = &pad[(y + s) * pw + t..(y + s) * pw + t + d.w];
                            for ((o, &a), &b) in gp[y * d.w..(y + 1) * d.w]
                                .iter_mut()
                                .zip(&g[y * d.w..(y + 1) * d.w])
                                .zip(src)
                            {
                                *o = *o + a * b;
                            }
                        }
                    }
                }
            }
            if let Some(gf) = gf.as_mut() {
                let mut acc = vec![S::zero(); ph * pw];
                for s in 0..k {
                    for t in 0..k {
                        let kp = &kb[(s * k + t) * hw..(s * k + t + 1) * hw];
                        for y in 0..d.h {
                            let dst = &mut acc[(y + s) * pw + t..(y + s) * pw + t + d.w];
                            for ((o, &a), &b) in dst
                                .iter_mut()
                                .zip(&kp[y * d.w..(y + 1) * d.w])
                                .zip(&g[y * d.w..(y + 1) * d.w])
                            {
                                *o = *o + a * b;
                            }
                        }
                    }
                }
                fold_periodic(&acc, &mut gf[off..off + hw], d.h, d.w, l);
            }
        }
    }
    (gk, gf)
}
