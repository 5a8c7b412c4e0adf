//! Trajectory generation and observation noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{downsample, sample_grf, PdeConfig, PdeKind, SpectralSolver};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Coarse trajectories `[N, M + 1, C, n, n]` plus the shared forcing, if any.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub trajectories: Tensor<f64>,
    /// Coarse `[n, n]` Navier-Stokes forcing.
    pub forcing: Option<Tensor<f64>>,
}

impl Dataset {
    pub fn new(trajectories: Tensor<f64>, forcing: Option<Tensor<f64>>) -> Result<Self> {
        if trajectories.ndim() != 5 {
            return Err(Error::InvalidShape {
                shape: trajectories.shape().to_vec(),
                reason: "dataset must be [N, T, C, H, W]".into(),
            });
        }
        Ok(Self { trajectories, forcing })
    }

    pub fn len(&self) -> usize {
        self.trajectories.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of snapshots per trajectory.
    pub fn snapshots(&self) -> usize {
        self.trajectories.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.trajectories.shape()[2]
    }

    pub fn grid(&self) -> usize {
        self.trajectories.shape()[3]
    }

    fn frame_len(&self) -> usize {
        self.trajectories.shape()[2..].iter().product()
    }

    /// `[C, H, W]` snapshot `t` of trajectory `i`.
    pub fn snapshot(&self, i: usize, t: usize) -> Tensor<f64> {
        let fl = self.frame_len();
        let off = (i * self.snapshots() + t) * fl;
        Tensor::new(
            self.trajectories.shape()[2..].to_vec(),
            self.trajectories.data()[off..off + fl].to_vec(),
        )
        .expect("frame shape")
    }

    /// `[T, C, H, W]` trajectory `i`.
    pub fn trajectory(&self, i: usize) -> Tensor<f64> {
        self.trajectories.index_outer(i).expect("trajectory index")
    }

    /// First `n` trajectories.
    pub fn take(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        let parts: Vec<Tensor<f64>> = (0..n).map(|i| self.trajectory(i)).collect();
        Self::new(Tensor::stack(&parts)?, self.forcing.clone())
    }
}

/// Fine-grid Navier-Stokes forcing drawn from `forcing_seed`.
pub fn forcing_field(cfg: &PdeConfig) -> Option<Tensor<f64>> {
    (cfg.kind == PdeKind::NavierStokes && cfg.forcing).then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.forcing_seed);
        sample_grf(&mut rng, cfg.fine_grid, cfg.length)
    })
}

/// Simulates `count` trajectories of `steps` recorded steps each. Trajectory
/// `i` draws its initial condition from stream `i` of the seeded generator, so
/// results do not depend on the worker count.
pub fn generate_dataset(cfg: &PdeConfig, count: usize, steps: usize, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let fine = cfg.fine_grid;
    let forcing = forcing_field(cfg);
    let solver = SpectralSolver::new(cfg, fine, forcing.as_ref())?;
    let c = cfg.kind.channels();
    let trajs: Vec<Result<Tensor<f64>>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut state = Vec::with_capacity(c * fine * fine);
            for _ in 0..c {
                state.extend_from_slice(sample_grf(&mut rng, fine, cfg.length).data());
            }
            let mut frames = Vec::with_capacity(steps + 1);
            for step in 0..=steps {
                if step > 0 {
                    state = solver.advance(&state);
                }
                if state.iter().any(|v| !v.is_finite()) {
                    return Err(Error::BlowUp { trajectory: i, step });
                }
                let t = Tensor::new(vec![c, fine, fine], state.clone())?;
                frames.push(downsample(&t, cfg.coarse_grid)?);
            }
            Tensor::stack(&frames)
        })
        .collect();
    let trajs = trajs.into_iter().collect::<Result<Vec<_>>>()?;
    let data = if trajs.is_empty() {
        Tensor::zeros(&[0, steps + 1, c, cfg.coarse_grid, cfg.coarse_grid])
    } else {
        Tensor::stack(&trajs)?
    };
    let forcing = forcing.map(|f| downsample(&f, cfg.coarse_grid)).transpose()?;
    Dataset::new(data, forcing)
}

fn plane_std(p: &[f64]) -> f64 {
    let n = p.len() as f64;
    let mean = p.iter().sum::<f64>() / n;
    (p.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// `U + amplitude * sigma * eps`, with `sigma` the spatial standard deviation
/// of each snapshot channel and `eps` i.i.d. standard normal.
pub fn add_noise(data: &Tensor<f64>, amplitude: f64, seed: u64) -> Result<Tensor<f64>> {
    let s = data.shape();
    if s.len() < 2 {
        return Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: "noise needs spatial planes".into(),
        });
    }
    let plane = s[s.len() - 2] * s[s.len() - 1];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = data.clone();
    for p in out.data_mut().chunks_mut(plane) {
        let sd = plane_std(p);
        for v in p.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v += amplitude * sd * e;
        }
    }
    Ok(out)
}

/// Standard deviation of `(noisy - clean) / sigma` over every pixel, `sigma`
/// taken per clean snapshot channel.
pub fn noise_ratio_std(clean: &Tensor<f64>, noisy: &Tensor<f64>) -> Result<f64> {
    clean.expect_shape("noise_ratio_std", noisy.shape())?;
    let s = clean.shape();
    let plane = s[s.len() - 2] * s[s.len() - 1];
    let mut ratios = Vec::with_capacity(clean.len());
    for (c, n) in clean.data().chunks(plane).zip(noisy.data().chunks(plane)) {
        let sd = plane_std(c);
        ratios.extend(c.iter().zip(n).map(|(a, b)| (b - a) / sd));
    }
    Ok(plane_std(&ratios))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::Preset;

    #[test]
    fn zero_amplitude_is_identity() {
        let d = Tensor::from_fn(&[2, 3, 4, 4], |i| (i[0] + i[2] * i[3]) as f64);
        assert_eq!(add_noise(&d, 0.0, 9).unwrap(), d);
        assert_eq!(add_noise(&d, 0.1, 9).unwrap(), add_noise(&d, 0.1, 9).unwrap());
    }

    #[test]
    fn smoke_shapes() {
        let mut cfg = PdeConfig::preset(Preset::FitzhughNagumo);
        cfg.fine_grid = 16;
        cfg.coarse_grid = 8;
        cfg.substeps = 4;
        let d = generate_dataset(&cfg, 2, 3, 1).unwrap();
        assert_eq!(d.trajectories.shape(), &[2, 4, 2, 8, 8]);
        assert!(d.forcing.is_none());
        assert_eq!(d, generate_dataset(&cfg, 2, 3, 1).unwrap());
    }
}
