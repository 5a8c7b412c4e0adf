#![allow(dead_code)]

use pdenetpp::autodiff::{check_gradients, Var};
use pdenetpp::hybrid::HybridModel;
use pdenetpp::layers::DiffLayer;
use pdenetpp::params::{Bound, ParamSet};
use pdenetpp::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

/// Overwrites every parameter with uniform noise so no path starts at zero.
pub fn randomize(params: &mut ParamSet<f64>, scale: f64, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = params.names().iter().map(|n| params.id(n).unwrap()).collect();
    for id in ids {
        let shape = params.get(id).shape().to_vec();
        params.set(id, random_tensor(&shape, scale, rng)).unwrap();
    }
}

/// `sum(w * y)` with fixed random weights, so no gradient cancels by symmetry.
pub fn weighted_sum<'t>(y: &Var<'t, f64>, seed: u64) -> Var<'t, f64> {
    let mut r = rng(seed);
    let w = random_tensor(&y.shape(), 1.0, &mut r);
    y.mul_const(&w).unwrap().sum()
}

/// Largest relative gradient error of one layer application w.r.t. its parameters.
pub fn layer_grad_error(
    layer: &DiffLayer<f64>,
    params: &ParamSet<f64>,
    field: &Tensor<f64>,
    coeff: Option<&Tensor<f64>>,
    with_reg: bool,
) -> f64 {
    let report = check_gradients(params.values(), 1e-6, Some(12), |tape, vars| {
        let bound = Bound::from_vars(vars.to_vec());
        let x = tape.constant(field.clone());
        let out = layer.apply(&bound, &x, coeff, Some(&x))?;
        let mut loss = weighted_sum(&out.value, 99);
        if with_reg {
            if let Some(r) = out.reg {
                loss = loss.add(&r)?;
            }
        }
        Ok(loss)
    })
    .unwrap();
    report.max_rel_err
}

/// Largest relative gradient error of a full model step.
pub fn model_grad_error(model: &HybridModel<f64>, state: &Tensor<f64>) -> f64 {
    let report = check_gradients(model.params().values(), 1e-6, Some(6), |tape, vars| {
        let bound = Bound::from_vars(vars.to_vec());
        let out = model.step(&bound, &tape.constant(state.clone()))?;
        let mut loss = weighted_sum(&out.next, 7);
        if let Some(r) = out.reg {
            loss = loss.add(&r)?;
        }
        Ok(loss)
    })
    .unwrap();
    report.max_rel_err
}

/// Max |u_x + v_y| of a `[2, n, n]` velocity, derivatives taken spectrally.
pub fn spectral_divergence(vel: &Tensor<f64>, length: f64) -> f64 {
    use num_complex::Complex;
    use pdenetpp::spectral::{derivative_wavenumbers, Fft2};
    let n = vel.shape()[1];
    let fft = Fft2::<f64>::new(n, n);
    let k = derivative_wavenumbers::<f64>(n, length);
    let (uh, vh) = fft.forward_pair(&vel.data()[..n * n], &vel.data()[n * n..]);
    let div: Vec<Complex<f64>> = (0..n * n)
        .map(|m| Complex::new(0.0, k[m / n]) * uh[m] + Complex::new(0.0, k[m % n]) * vh[m])
        .collect();
    fft.inverse_real(&div).iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// Random field with every Fourier mode outside the two-thirds band removed.
pub fn band_limited(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    use num_complex::Complex;
    use pdenetpp::spectral::{dealias_mask, Fft2};
    let fft = Fft2::<f64>::new(n, n);
    let raw: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mask = dealias_mask::<f64>(n, n);
    let spec: Vec<Complex<f64>> = fft.forward(&raw).iter().zip(&mask).map(|(z, m)| z * m).collect();
    fft.inverse_real(&spec)
}

/// Scalar RK4 for the homogeneous FitzHugh-Nagumo reaction.
pub fn fn_reaction_rk4(mut u: f64, mut v: f64, alpha: f64, beta: f64, dt: f64, steps: usize) -> (f64, f64) {
    let r = |u: f64, v: f64| (u - u * u * u - v + alpha, beta * (u - v));
    for _ in 0..steps {
        let k1 = r(u, v);
        let k2 = r(u + 0.5 * dt * k1.0, v + 0.5 * dt * k1.1);
        let k3 = r(u + 0.5 * dt * k2.0, v + 0.5 * dt * k2.1);
        let k4 = r(u + dt * k3.0, v + dt * k3.1);
        u += dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        v += dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    }
    (u, v)
}
