//! One-dimensional periodic advection schemes for `u_t + c u_x = 0` with
//! CFL number `mu = c dt / dx`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[inline]
fn at(u: &[f64], j: usize, off: isize) -> f64 {
    let n = u.len() as isize;
    u[((j as isize + off).rem_euclid(n)) as usize]
}

/// First-order upwind update.
pub fn upwind1(u: &[f64], mu: f64) -> Vec<f64> {
    let (p, m) = ((mu + mu.abs()) / 2.0, (mu - mu.abs()) / 2.0);
    (0..u.len())
        .map(|j| (1.0 - mu.abs()) * u[j] + p * at(u, j, -1) - m * at(u, j, 1))
        .collect()
}

/// Second-order upwind update on the five-point stencil.
pub fn upwind2(u: &[f64], mu: f64) -> Vec<f64> {
    let (p, m) = (mu + mu.abs(), mu - mu.abs());
    (0..u.len())
        .map(|j| {
            (2.0 - 3.0 * mu.abs()) / 2.0 * u[j] + p * at(u, j, -1) - m * at(u, j, 1) - p / 4.0 * at(u, j, -2)
                + m / 4.0 * at(u, j, 2)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Limiter {
    Minmod,
    VanLeer,
}

impl Limiter {
    /// `phi(theta)`; both stay inside the TVD region `0 <= phi <= min(2, 2 theta)`.
    pub fn phi(self, theta: f64) -> f64 {
        match self {
            Limiter::Minmod => theta.min(1.0).max(0.0),
            Limiter::VanLeer => (theta + theta.abs()) / (1.0 + theta.abs()),
        }
    }
}

/// Edge fluxes `F_{j+1/2} / c` blending upwind and Lax-Wendroff, for `c > 0`.
fn limited_fluxes(u: &[f64], mu: f64, limiter: Limiter) -> Vec<f64> {
    (0..u.len())
        .map(|j| {
            let jump = at(u, j, 1) - u[j];
            let theta = if jump != 0.0 { (u[j] - at(u, j, -1)) / jump } else { 0.0 };
            u[j] + limiter.phi(theta) * (1.0 - mu) / 2.0 * jump
        })
        .collect()
}

/// Conservative flux-limited update; requires `0 < mu <= 1`.
pub fn flux_limited(u: &[f64], mu: f64, limiter: Limiter) -> Result<Vec<f64>> {
    if !(mu > 0.0 && mu <= 1.0) {
        return Err(Error::InvalidArgument(format!("flux-limited step needs 0 < mu <= 1, got {mu}")));
    }
    let f = limited_fluxes(u, mu, limiter);
    Ok((0..u.len()).map(|j| u[j] - mu * (f[j] - at(&f, j, -1))).collect())
}

/// Weighted blend of the two three-point interface reconstructions.
#[derive(Clone, Debug, PartialEq)]
pub struct Weno3 {
    /// `u_{j+1/2}` from the left cell.
    pub values: Vec<f64>,
    /// Nonlinear weights of the `{j-1, j}` and `{j, j+1}` substencils.
    pub weights: Vec<[f64; 2]>,
}

pub const WENO_EPS: f64 = 1e-6;

/// Left-biased reconstruction of `u_{j+1/2}` from periodic cell averages.
pub fn weno3_reconstruct(avg: &[f64]) -> Weno3 {
    const D: [f64; 2] = [1.0 / 3.0, 2.0 / 3.0];
    let mut values = Vec::with_capacity(avg.len());
    let mut weights = Vec::with_capacity(avg.len());
    for j in 0..avg.len() {
        let (l, c, r) = (at(avg, j, -1), avg[j], at(avg, j, 1));
        let cand = [-0.5 * l + 1.5 * c, 0.5 * c + 0.5 * r];
        let beta = [(c - l) * (c - l), (r - c) * (r - c)];
        let alpha = [D[0] / (WENO_EPS + beta[0]).powi(2), D[1] / (WENO_EPS + beta[1]).powi(2)];
        let s = alpha[0] + alpha[1];
        let w = [alpha[0] / s, alpha[1] / s];
        values.push(w[0] * cand[0] + w[1] * cand[1]);
        weights.push(w);
    }
    Weno3 { values, weights }
}

/// Semi-discrete `-c du/dx` in CFL units for `c > 0`, WENO3 upwind fluxes.
fn weno3_rate(avg: &[f64]) -> Vec<f64> {
    let f = weno3_reconstruct(avg).values;
    (0..avg.len()).map(|j| -(f[j] - at(&f, j, -1))).collect()
}

/// Third-order SSP Runge-Kutta step of the WENO3 finite-volume scheme; `mu > 0`.
pub fn weno3_step(avg: &[f64], mu: f64) -> Vec<f64> {
    let axpy = |a: &[f64], b: &[f64], k: f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + k * y).collect() };
    let u1 = axpy(avg, &weno3_rate(avg), mu);
    let u2: Vec<f64> = axpy(&u1, &weno3_rate(&u1), mu)
        .iter()
        .zip(avg)
        .map(|(a, b)| 0.25 * a + 0.75 * b)
        .collect();
    axpy(&u2, &weno3_rate(&u2), mu)
        .iter()
        .zip(avg)
        .map(|(a, b)| (2.0 * a + b) / 3.0)
        .collect()
}

/// `sum |u_{j+1} - u_j|` with periodic wrap.
pub fn total_variation(u: &[f64]) -> f64 {
    (0..u.len()).map(|j| (at(u, j, 1) - u[j]).abs()).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Sine,
    Square,
}

impl Profile {
    fn value(self, x: f64) -> f64 {
        let x = x.rem_euclid(1.0);
        match self {
            Profile::Sine => (2.0 * std::f64::consts::PI * x).sin(),
            Profile::Square => {
                if (0.25..0.75).contains(&x) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Exact average over `[a, b]`.
    fn average(self, a: f64, b: f64) -> f64 {
        match self {
            Profile::Sine => {
                let k = 2.0 * std::f64::consts::PI;
                ((k * a).cos() - (k * b).cos()) / (k * (b - a))
            }
            Profile::Square => {
                // integrate the periodic indicator of [0.25, 0.75)
                let prim = |x: f64| {
                    let (whole, frac) = (x.floor(), x - x.floor());
                    whole * 0.5 + (frac - 0.25).clamp(0.0, 0.5)
                };
                (prim(b) - prim(a)) / (b - a)
            }
        }
    }
}

/// Configuration of the advection demos on `[0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdvectionConfig {
    #[serde(default = "default_cells")]
    pub cells: usize,
    pub mu: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_profile")]
    pub profile: Profile,
}

fn default_cells() -> usize {
    100
}
fn default_steps() -> usize {
    100
}
fn default_profile() -> Profile {
    Profile::Square
}

impl AdvectionConfig {
    /// Whether the run lies outside the stability region of the explicit schemes.
    pub fn cfl_violated(&self) -> bool {
        self.mu.abs() > 1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Upwind1,
    Upwind2,
    Minmod,
    VanLeer,
    Weno3,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [Scheme::Upwind1, Scheme::Upwind2, Scheme::Minmod, Scheme::VanLeer, Scheme::Weno3];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Upwind1 => "upwind1",
            Scheme::Upwind2 => "upwind2",
            Scheme::Minmod => "minmod",
            Scheme::VanLeer => "vanleer",
            Scheme::Weno3 => "weno3",
        }
    }

    /// Whether the scheme evolves cell averages rather than point values.
    fn finite_volume(self) -> bool {
        !matches!(self, Scheme::Upwind1 | Scheme::Upwind2)
    }

    pub fn step(self, u: &[f64], mu: f64) -> Result<Vec<f64>> {
        match self {
            Scheme::Upwind1 => Ok(upwind1(u, mu)),
            Scheme::Upwind2 => Ok(upwind2(u, mu)),
            Scheme::Minmod => flux_limited(u, mu, Limiter::Minmod),
            Scheme::VanLeer => flux_limited(u, mu, Limiter::VanLeer),
            Scheme::Weno3 => {
                if mu <= 0.0 {
                    return Err(Error::InvalidArgument(format!("weno3 demo needs mu > 0, got {mu}")));
                }
                Ok(weno3_step(u, mu))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DemoRow {
    pub step: usize,
    pub total_variation: f64,
    /// Discrete L2 error against the exactly translated profile.
    pub error: f64,
}

fn sample(profile: Profile, n: usize, shift: f64, fv: bool) -> Vec<f64> {
    let h = 1.0 / n as f64;
    (0..n)
        .map(|j| {
            let x = j as f64 * h - shift;
            if fv {
                profile.average(x - 0.5 * h, x + 0.5 * h)
            } else {
                profile.value(x)
            }
        })
        .collect()
}

/// Runs one scheme and records TV and error after every step (row 0 is the
/// initial state). Integer cell shifts are compared against an exactly
/// rolled copy of the initial data.
pub fn run_demo(cfg: &AdvectionConfig, scheme: Scheme) -> Result<Vec<DemoRow>> {
    if cfg.cells < 3 {
        return Err(Error::Config("advection demo needs at least 3 cells".into()));
    }
    let n = cfg.cells;
    let h = 1.0 / n as f64;
    let fv = scheme.finite_volume();
    let init = sample(cfg.profile, n, 0.0, fv);
    let mut u = init.clone();
    let mut rows = Vec::with_capacity(cfg.steps + 1);
    for step in 0..=cfg.steps {
        if step > 0 {
            u = scheme.step(&u, cfg.mu)?;
        }
        let cells = cfg.mu * step as f64;
        let exact = if cells.fract() == 0.0 {
            let s = (cells as i64).rem_euclid(n as i64) as usize;
            (0..n).map(|j| init[(j + n - s) % n]).collect()
        } else {
            sample(cfg.profile, n, cells * h, fv)
        };
        let err = (u.iter().zip(&exact).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * h).sqrt();
        rows.push(DemoRow {
            step,
            total_variation: total_variation(&u),
            error: err,
        });
    }
    Ok(rows)
}
