//! Right-hand sides of the three problems on the fine grid.

use num_complex::Complex;

use super::{rk4_step, PdeConfig, PdeKind};
use crate::error::{Error, Result};
use crate::spectral::{dealias_mask, derivative_wavenumbers, wavenumbers, Fft2};
use crate::tensor::Tensor;

type C64 = Complex<f64>;

const I: C64 = Complex { re: 0.0, im: 1.0 };

/// Precomputed transforms and wavenumbers for one problem at one resolution.
pub struct SpectralSolver {
    cfg: PdeConfig,
    n: usize,
    fft: Fft2<f64>,
    kx: Vec<f64>,
    ky: Vec<f64>,
    k2: Vec<f64>,
    mask: Vec<f64>,
    /// `cos(5x + 5y)` and `cos(5x - 5y)` for the Burgers forcing.
    waves: (Vec<f64>, Vec<f64>),
    /// Spectrum of the Navier-Stokes forcing.
    forcing_hat: Option<Vec<C64>>,
}

impl SpectralSolver {
    /// `forcing` is the `[n, n]` vorticity forcing (Navier-Stokes only).
    pub fn new(cfg: &PdeConfig, n: usize, forcing: Option<&Tensor<f64>>) -> Result<Self> {
        let fft = Fft2::new(n, n);
        let kfull = wavenumbers::<f64>(n, cfg.length);
        let kd = derivative_wavenumbers::<f64>(n, cfg.length);
        let mut k2 = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                k2.push(kfull[i] * kfull[i] + kfull[j] * kfull[j]);
            }
        }
        let forcing_hat = match (cfg.kind, forcing) {
            (PdeKind::NavierStokes, Some(f)) if cfg.forcing => {
                f.expect_shape("forcing", &[n, n])?;
                Some(fft.forward(f.data()))
            }
            (PdeKind::NavierStokes, None) if cfg.forcing => {
                return Err(Error::InvalidArgument("Navier-Stokes forcing field missing".into()))
            }
            _ => None,
        };
        Ok(Self {
            cfg: cfg.clone(),
            n,
            fft,
            kx: kd.clone(),
            ky: kd,
            k2,
            mask: dealias_mask(n, n),
            waves: {
                let x: Vec<f64> = (0..n).map(|i| i as f64 * cfg.length / n as f64).collect();
                let plus = (0..n * n).map(|k| (5.0 * x[k / n] + 5.0 * x[k % n]).cos()).collect();
                let minus = (0..n * n).map(|k| (5.0 * x[k / n] - 5.0 * x[k % n]).cos()).collect();
                (plus, minus)
            },
            forcing_hat,
        })
    }

    pub fn grid(&self) -> usize {
        self.n
    }

    pub fn config(&self) -> &PdeConfig {
        &self.cfg
    }

    fn spectral_map(&self, hat: &[C64], f: impl Fn(usize, usize, C64) -> C64) -> Vec<C64> {
        let n = self.n;
        hat.iter().enumerate().map(|(idx, &z)| f(idx / n, idx % n, z)).collect()
    }

    /// `(f_x, f_y)` from the spectrum of `f`.
    fn gradient(&self, hat: &[C64]) -> (Vec<f64>, Vec<f64>) {
        let gx = self.spectral_map(hat, |i, _, z| I * self.kx[i] * z);
        let gy = self.spectral_map(hat, |_, j, z| I * self.ky[j] * z);
        self.fft.inverse_real_pair(&gx, &gy)
    }

    fn truncate(&self, hat: &[C64]) -> Vec<C64> {
        hat.iter().zip(&self.mask).map(|(&z, &m)| z * m).collect()
    }

    /// Time derivative of a `[C, n, n]` state.
    pub fn rhs(&self, state: &[f64]) -> Vec<f64> {
        let nn = self.n * self.n;
        match self.cfg.kind {
            PdeKind::Burgers => {
                let (u, v) = state.split_at(nn);
                let (uh, vh) = self.fft.forward_pair(u, v);
                let (uht, vht) = (self.truncate(&uh), self.truncate(&vh));
                let (um, vm) = self.fft.inverse_real_pair(&uht, &vht);
                let (ux, uy) = self.gradient(&uht);
                let (vx, vy) = self.gradient(&vht);
                let mut nu_ = Vec::with_capacity(nn);
                let mut nv_ = Vec::with_capacity(nn);
                for idx in 0..nn {
                    let mut a = -(um[idx] * ux[idx] + vm[idx] * uy[idx]);
                    let mut b = -(um[idx] * vx[idx] + vm[idx] * vy[idx]);
                    if self.cfg.forcing {
                        a += vm[idx].sin() * self.waves.0[idx];
                        b += um[idx].sin() * self.waves.1[idx];
                    }
                    nu_.push(a);
                    nv_.push(b);
                }
                let nu = self.cfg.coefficient;
                let (nuh, nvh) = self.fft.forward_pair(&nu_, &nv_);
                let total = |hat: &[C64], nlh: &[C64]| -> Vec<C64> {
                    (0..nn).map(|k| nlh[k] * self.mask[k] - hat[k] * (nu * self.k2[k])).collect()
                };
                let (du, dv) = self.fft.inverse_real_pair(&total(&uh, &nuh), &total(&vh, &nvh));
                let mut out = du;
                out.extend(dv);
                out
            }
            PdeKind::FitzhughNagumo => {
                let (u, v) = state.split_at(nn);
                let (uh, vh) = self.fft.forward_pair(u, v);
                let cube: Vec<f64> = u.iter().map(|x| x * x * x).collect();
                let ch = self.fft.forward(&cube);
                let g = self.cfg.coefficient;
                let du: Vec<C64> = (0..nn).map(|k| -uh[k] * (g * self.k2[k]) - ch[k] * self.mask[k]).collect();
                let dv: Vec<C64> = (0..nn).map(|k| -vh[k] * (g * self.k2[k])).collect();
                let (du, dv) = self.fft.inverse_real_pair(&du, &dv);
                let (a, b) = (self.cfg.alpha, self.cfg.beta);
                let mut out = Vec::with_capacity(2 * nn);
                out.extend((0..nn).map(|k| du[k] + u[k] - v[k] + a));
                out.extend((0..nn).map(|k| dv[k] + b * (u[k] - v[k])));
                out
            }
            PdeKind::NavierStokes => {
                let wh = self.fft.forward(state);
                let wht = self.truncate(&wh);
                let psi = self.spectral_map(&wht, |i, j, z| {
                    let k2 = self.k2[i * self.n + j];
                    if k2 == 0.0 {
                        Complex::new(0.0, 0.0)
                    } else {
                        -z / k2
                    }
                });
                let (psi_x, psi_y) = self.gradient(&psi);
                let wm = self.fft.inverse_real(&wht);
                let fu: Vec<f64> = psi_y.iter().zip(&wm).map(|(a, b)| -a * b).collect();
                let fv: Vec<f64> = psi_x.iter().zip(&wm).map(|(a, b)| a * b).collect();
                let (fuh, fvh) = self.fft.forward_pair(&fu, &fv);
                let nu = self.cfg.coefficient;
                let n = self.n;
                let total: Vec<C64> = (0..nn)
                    .map(|k| {
                        let div = I * self.kx[k / n] * fuh[k] + I * self.ky[k % n] * fvh[k];
                        let mut t = -div * self.mask[k] - wh[k] * (nu * self.k2[k]);
                        if let Some(f) = &self.forcing_hat {
                            t += f[k];
                        }
                        t
                    })
                    .collect();
                self.fft.inverse_real(&total)
            }
        }
    }

    pub fn step(&self, state: &[f64], dt: f64) -> Vec<f64> {
        rk4_step(state, dt, |s| self.rhs(s))
    }

    /// Advances one recorded step (`substeps` solver steps).
    pub fn advance(&self, state: &[f64]) -> Vec<f64> {
        let dt = self.cfg.solver_dt();
        let mut s = state.to_vec();
        for _ in 0..self.cfg.substeps {
            s = self.step(&s, dt);
        }
        s
    }
}

/// Velocity `(u, v) = (-psi_y, psi_x)` with `Laplacian psi = w` on the periodic
/// square of side `length`; the mean of `w` is dropped. Input `[n, n]` or
/// `[1, n, n]`, output `[2, n, n]`.
pub fn velocity_from_vorticity(w: &Tensor<f64>, length: f64) -> Result<Tensor<f64>> {
    let s = w.shape();
    let (h, wd) = match s {
        [h, wd] | [1, h, wd] => (*h, *wd),
        _ => {
            return Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: "expected a single vorticity plane".into(),
            })
        }
    };
    let fft = Fft2::<f64>::new(h, wd);
    let kx_full = wavenumbers::<f64>(h, length);
    let ky_full = wavenumbers::<f64>(wd, length);
    let kx = derivative_wavenumbers::<f64>(h, length);
    let ky = derivative_wavenumbers::<f64>(wd, length);
    let wh = fft.forward(w.data());
    let mut uh = Vec::with_capacity(h * wd);
    let mut vh = Vec::with_capacity(h * wd);
    for i in 0..h {
        for j in 0..wd {
            let k2 = kx_full[i] * kx_full[i] + ky_full[j] * ky_full[j];
            let psi = if k2 == 0.0 { Complex::new(0.0, 0.0) } else { -wh[i * wd + j] / k2 };
            uh.push(-(I * ky[j] * psi));
            vh.push(I * kx[i] * psi);
        }
    }
    let mut data = fft.inverse_real(&uh);
    data.extend(fft.inverse_real(&vh));
    Tensor::new(vec![2, h, wd], data)
}
