//! Two-dimensional discrete Fourier transforms on periodic grids.
//!
//! Convention: the forward transform is unnormalized,
//! `X(k) = sum_n x(n) exp(-2 pi i k.n / N)`, and the inverse carries the
//! `1 / (H W)` factor. Arrays are row-major `[H][W]`; transforms act on the
//! trailing two axes of a tensor.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Real and imaginary parts of a complex field, always of identical shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField<S> {
    pub re: Tensor<S>,
    pub im: Tensor<S>,
}

impl<S: Scalar> ComplexField<S> {
    pub fn new(re: Tensor<S>, im: Tensor<S>) -> Result<Self> {
        re.expect_shape("complex_field", im.shape())?;
        Ok(Self { re, im })
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }
}

/// Planned 2-D transform for a fixed `H x W` plane.
pub struct Fft2<S: Scalar> {
    h: usize,
    w: usize,
    fwd_rows: Arc<dyn Fft<S>>,
    fwd_cols: Arc<dyn Fft<S>>,
    inv_rows: Arc<dyn Fft<S>>,
    inv_cols: Arc<dyn Fft<S>>,
}

impl<S: Scalar> Fft2<S> {
    pub fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            h,
            w,
            fwd_rows: planner.plan_fft_forward(w),
            fwd_cols: planner.plan_fft_forward(h),
            inv_rows: planner.plan_fft_inverse(w),
            inv_cols: planner.plan_fft_inverse(h),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    fn transform(&self, buf: &mut [Complex<S>], rows: &dyn Fft<S>, cols: &dyn Fft<S>) {
        let (h, w) = (self.h, self.w);
        debug_assert_eq!(buf.len(), h * w);
        rows.process(buf);
        let mut t = vec![Complex::new(S::zero(), S::zero()); h * w];
        for i in 0..h {
            for j in 0..w {
                t[j * h + i] = buf[i * w + j];
            }
        }
        cols.process(&mut t);
        for i in 0..h {
            for j in 0..w {
                buf[i * w + j] = t[j * h + i];
            }
        }
    }

    pub fn forward_complex(&self, buf: &mut [Complex<S>]) {
        self.transform(buf, self.fwd_rows.as_ref(), self.fwd_cols.as_ref());
    }

    /// Normalized inverse transform.
    pub fn inverse_complex(&self, buf: &mut [Complex<S>]) {
        self.transform(buf, self.inv_rows.as_ref(), self.inv_cols.as_ref());
        let norm = S::one() / S::from_usize(self.h * self.w).unwrap();
        for z in buf.iter_mut() {
            *z = *z * norm;
        }
    }

    pub fn forward(&self, plane: &[S]) -> Vec<Complex<S>> {
        let mut buf: Vec<Complex<S>> = plane.iter().map(|&x| Complex::new(x, S::zero())).collect();
        self.forward_complex(&mut buf);
        buf
    }

    /// Forward transforms of two real planes through one complex transform.
    pub fn forward_pair(&self, a: &[S], b: &[S]) -> (Vec<Complex<S>>, Vec<Complex<S>>) {
        let (h, w) = (self.h, self.w);
        let mut z: Vec<Complex<S>> = a.iter().zip(b).map(|(&x, &y)| Complex::new(x, y)).collect();
        self.forward_complex(&mut z);
        let half = S::lit(0.5);
        let mut fa = Vec::with_capacity(h * w);
        let mut fb = Vec::with_capacity(h * w);
        for i in 0..h {
            let mi = (h - i) % h;
            for j in 0..w {
                let mj = (w - j) % w;
                let zk = z[i * w + j];
                let zc = z[mi * w + mj].conj();
                fa.push((zk + zc) * half);
                let d = (zk - zc) * half;
                fb.push(Complex::new(d.im, -d.re));
            }
        }
        (fa, fb)
    }

    /// Real parts of the inverse transforms of two spectra of real planes
    /// through one complex transform.
    pub fn inverse_real_pair(&self, a: &[Complex<S>], b: &[Complex<S>]) -> (Vec<S>, Vec<S>) {
        let mut z: Vec<Complex<S>> = a
            .iter()
            .zip(b)
            .map(|(&x, &y)| x + Complex::new(-y.im, y.re))
            .collect();
        self.inverse_complex(&mut z);
        z.into_iter().map(|c| (c.re, c.im)).unzip()
    }

    /// Real part of the normalized inverse transform.
    pub fn inverse_real(&self, spectrum: &[Complex<S>]) -> Vec<S> {
        let mut buf = spectrum.to_vec();
        self.inverse_complex(&mut buf);
        buf.into_iter().map(|z| z.re).collect()
    }
}

fn plane_dims(shape: &[usize]) -> Result<(usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "2-D transform needs at least two axes".into(),
        });
    }
    Ok((shape[shape.len() - 2], shape[shape.len() - 1]))
}

/// Forward transform of every trailing `H x W` plane of a real tensor.
pub fn dft2<S: Scalar>(field: &Tensor<S>) -> Result<ComplexField<S>> {
    let (h, w) = plane_dims(field.shape())?;
    let fft = Fft2::new(h, w);
    let mut re = Vec::with_capacity(field.len());
    let mut im = Vec::with_capacity(field.len());
    for plane in field.data().chunks(h * w) {
        for z in fft.forward(plane) {
            re.push(z.re);
            im.push(z.im);
        }
    }
    ComplexField::new(
        Tensor::new(field.shape().to_vec(), re)?,
        Tensor::new(field.shape().to_vec(), im)?,
    )
}

/// Normalized inverse transform of every trailing plane.
pub fn idft2<S: Scalar>(spec: &ComplexField<S>) -> Result<ComplexField<S>> {
    let (h, w) = plane_dims(spec.shape())?;
    let fft = Fft2::new(h, w);
    let mut re = Vec::with_capacity(spec.re.len());
    let mut im = Vec::with_capacity(spec.re.len());
    for (pr, pi) in spec.re.data().chunks(h * w).zip(spec.im.data().chunks(h * w)) {
        let mut buf: Vec<Complex<S>> = pr.iter().zip(pi).map(|(&a, &b)| Complex::new(a, b)).collect();
        fft.inverse_complex(&mut buf);
        for z in buf {
            re.push(z.re);
            im.push(z.im);
        }
    }
    ComplexField::new(
        Tensor::new(spec.shape().to_vec(), re)?,
        Tensor::new(spec.shape().to_vec(), im)?,
    )
}

/// Real part of [`idft2`].
pub fn idft2_real<S: Scalar>(spec: &ComplexField<S>) -> Result<Tensor<S>> {
    Ok(idft2(spec)?.re)
}

/// Signed frequency index of bin `i` out of `n`: `0, 1, .., n/2 - 1, -n/2, .., -1`.
pub fn signed_index(i: usize, n: usize) -> i64 {
    if i < n.div_ceil(2) {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// True for the unpaired Nyquist bin of an even-length axis.
pub fn is_nyquist(i: usize, n: usize) -> bool {
    n.is_multiple_of(2) && i == n / 2
}

/// Angular wavenumbers `2 pi k / length` for each bin.
pub fn wavenumbers<S: Scalar>(n: usize, length: f64) -> Vec<S> {
    (0..n)
        .map(|i| S::lit(2.0 * PI * signed_index(i, n) as f64 / length))
        .collect()
}

/// Wavenumbers suitable for odd-order spectral derivatives: the Nyquist bin is zeroed
/// so derivatives of real fields stay real.
pub fn derivative_wavenumbers<S: Scalar>(n: usize, length: f64) -> Vec<S> {
    let mut k = wavenumbers::<S>(n, length);
    if n.is_multiple_of(2) {
        k[n / 2] = S::zero();
    }
    k
}

/// Two-thirds-rule mask: keeps bins with `|k| < n / 3` along both axes.
pub fn dealias_mask<S: Scalar>(h: usize, w: usize) -> Vec<S> {
    let mut mask = Vec::with_capacity(h * w);
    for i in 0..h {
        let ki = signed_index(i, h).unsigned_abs() as usize;
        for j in 0..w {
            let kj = signed_index(j, w).unsigned_abs() as usize;
            let keep = 3 * ki < h && 3 * kj < w;
            mask.push(if keep { S::one() } else { S::zero() });
        }
    }
    mask
}
