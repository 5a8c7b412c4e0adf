//! Gaussian random fields with covariance `scale (-Laplacian + shift)^(-power)`.

use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::spectral::{wavenumbers, Fft2};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrfParams {
    pub scale: f64,
    pub shift: f64,
    pub power: f64,
}

impl Default for GrfParams {
    fn default() -> Self {
        Self {
            scale: 25.0,
            shift: 25.0,
            power: 3.0,
        }
    }
}

/// z-scored sample on an `n x n` grid of the periodic square `[0, length)^2`.
pub fn sample_grf<R: Rng>(rng: &mut R, n: usize, length: f64) -> Tensor<f64> {
    sample_grf_with(rng, n, length, GrfParams::default(), true)
}

/// Filters real white noise by `sqrt(scale) (|k|^2 + shift)^(-power/2)` in
/// Fourier space; `normalize` z-scores the result.
pub fn sample_grf_with<R: Rng>(rng: &mut R, n: usize, length: f64, p: GrfParams, normalize: bool) -> Tensor<f64> {
    let noise: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
    let fft = Fft2::<f64>::new(n, n);
    let mut spec = fft.forward(&noise);
    let k = wavenumbers::<f64>(n, length);
    for i in 0..n {
        for j in 0..n {
            let amp = if i == 0 && j == 0 {
                0.0
            } else {
                p.scale.sqrt() * (k[i] * k[i] + k[j] * k[j] + p.shift).powf(-p.power / 2.0)
            };
            spec[i * n + j] *= Complex::new(amp, 0.0);
        }
    }
    let mut field = fft.inverse_real(&spec);
    if normalize {
        let mean = field.iter().sum::<f64>() / field.len() as f64;
        let var = field.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / field.len() as f64;
        let sd = var.sqrt();
        for v in &mut field {
            *v = (*v - mean) / sd;
        }
    }
    Tensor::new(vec![n, n], field).expect("square field")
}
