//! Reference pseudo-spectral solvers and the dataset pipeline.
//!
//! Fine-grid states are `[C, n, n]` row-major with the first spatial axis `x`.
//! Derivatives are taken in Fourier space, nonlinear terms are evaluated in
//! physical space and truncated with the two-thirds rule, and time stepping
//! is classical RK4.

mod dataset;
mod grf;
mod rhs;

use serde::{Deserialize, Serialize};

pub use dataset::{add_noise, forcing_field, generate_dataset, noise_ratio_std, Dataset};
pub use grf::{sample_grf, sample_grf_with, GrfParams};
pub use rhs::{velocity_from_vorticity, SpectralSolver};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdeKind {
    Burgers,
    FitzhughNagumo,
    NavierStokes,
}

impl PdeKind {
    pub fn channels(self) -> usize {
        match self {
            PdeKind::Burgers | PdeKind::FitzhughNagumo => 2,
            PdeKind::NavierStokes => 1,
        }
    }
}

/// Named parameter sets of the three benchmark problems.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Burgers,
    FitzhughNagumo,
    NavierStokes,
    NavierStokesHard,
}

/// Physical and numerical setup of one problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeConfig {
    pub kind: PdeKind,
    /// Side of the square periodic domain.
    pub length: f64,
    /// Viscosity for Burgers and Navier-Stokes, diffusion for FitzHugh-Nagumo.
    pub coefficient: f64,
    pub alpha: f64,
    pub beta: f64,
    pub fine_grid: usize,
    pub coarse_grid: usize,
    /// Recorded time step.
    pub dt: f64,
    /// Solver steps per recorded step.
    pub substeps: usize,
    /// Whether the forcing term is active (Burgers and Navier-Stokes).
    pub forcing: bool,
    /// Seed of the shared Navier-Stokes forcing field.
    pub forcing_seed: u64,
}

impl PdeConfig {
    pub fn preset(p: Preset) -> Self {
        let base = Self {
            kind: PdeKind::Burgers,
            length: 2.0 * std::f64::consts::PI,
            coefficient: 0.05,
            alpha: 0.0,
            beta: 0.0,
            fine_grid: 256,
            coarse_grid: 64,
            dt: 0.01,
            substeps: 16,
            forcing: true,
            forcing_seed: 0,
        };
        match p {
            Preset::Burgers => base,
            Preset::FitzhughNagumo => Self {
                kind: PdeKind::FitzhughNagumo,
                length: 6.4,
                coefficient: 1.0,
                alpha: 0.01,
                beta: 0.25,
                dt: 0.002,
                substeps: 200,
                forcing: false,
                ..base
            },
            Preset::NavierStokes => Self {
                kind: PdeKind::NavierStokes,
                length: 1.0,
                coefficient: 1e-3,
                dt: 0.025,
                substeps: 500,
                ..base
            },
            Preset::NavierStokesHard => Self {
                kind: PdeKind::NavierStokes,
                length: 1.0,
                coefficient: 1e-4,
                dt: 0.00625,
                substeps: 125,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.coarse_grid == 0 || !self.fine_grid.is_multiple_of(self.coarse_grid) {
            return Err(Error::Config(format!(
                "coarse grid {} must divide fine grid {}",
                self.coarse_grid, self.fine_grid
            )));
        }
        if self.coarse_grid < 3 {
            return Err(Error::Config("coarse grid too small".into()));
        }
        if !(self.dt > 0.0 && self.length > 0.0) || self.substeps == 0 {
            return Err(Error::Config("time step, substeps and domain length must be positive".into()));
        }
        if self.coefficient < 0.0 {
            return Err(Error::Config("diffusion coefficient must be non-negative".into()));
        }
        Ok(())
    }

    pub fn solver_dt(&self) -> f64 {
        self.dt / self.substeps as f64
    }

    pub fn coarse_spacing(&self) -> f64 {
        self.length / self.coarse_grid as f64
    }
}

/// Classical four-stage Runge-Kutta step.
pub fn rk4_step(state: &[f64], dt: f64, rhs: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let shifted = |k: &[f64], a: f64| -> Vec<f64> { state.iter().zip(k).map(|(s, d)| s + a * d).collect() };
    let k1 = rhs(state);
    let k2 = rhs(&shifted(&k1, 0.5 * dt));
    let k3 = rhs(&shifted(&k2, 0.5 * dt));
    let k4 = rhs(&shifted(&k3, dt));
    (0..state.len())
        .map(|i| state[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Point subsampling of the trailing two axes from `fine` to `coarse` nodes.
pub fn downsample(field: &Tensor<f64>, coarse: usize) -> Result<Tensor<f64>> {
    let s = field.shape();
    if s.len() < 2 {
        return Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: "downsample needs two spatial axes".into(),
        });
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    if coarse == 0 || h % coarse != 0 || w % coarse != 0 {
        return Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: format!("grid is not divisible by {coarse}"),
        });
    }
    let (fh, fw) = (h / coarse, w / coarse);
    let planes = field.len() / (h * w);
    let mut data = Vec::with_capacity(planes * coarse * coarse);
    for p in 0..planes {
        for i in 0..coarse {
            for j in 0..coarse {
                data.push(field.data()[p * h * w + i * fh * w + j * fw]);
            }
        }
    }
    let mut shape = s.to_vec();
    let nd = shape.len();
    shape[nd - 2] = coarse;
    shape[nd - 1] = coarse;
    Tensor::new(shape, data)
}
