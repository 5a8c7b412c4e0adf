//! Hybrid one-step models `U + dt (Phi(U) + F_NN(U))` and the black-box
//! baseline `U + dt F_NN(U)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{concat_channels, Tape, Var};
use crate::backbone::{Backbone, BackboneConfig};
use crate::error::{Error, Result};
use crate::layers::{DiffLayer, LayerKind};
use crate::moment::MomentSpec;
use crate::params::{Bound, ParamSet};
use crate::scalar::Scalar;
use crate::solvers::{PdeConfig, PdeKind};
use crate::spectral::{derivative_wavenumbers, wavenumbers};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Blackbox,
    Fdm,
    Moment,
    Tfdl,
    Tddl,
}

/// Which field decides the branch of a flipping layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoeffConvention {
    /// The signed multiplier of the derivative, e.g. `-u` in `-u du/dx`.
    #[default]
    Signed,
    /// The advecting velocity itself.
    Velocity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub method: Method,
    #[serde(default)]
    pub backbone: BackboneConfig,
    /// Kernel half-width of trainable layers.
    #[serde(default = "default_half_width")]
    pub half_width: usize,
    #[serde(default = "default_r")]
    pub r_first: usize,
    #[serde(default = "default_r")]
    pub r_second: usize,
    #[serde(default = "default_hidden")]
    pub hypernet_width: usize,
    #[serde(default)]
    pub tfdl_coefficient: CoeffConvention,
}

fn default_half_width() -> usize {
    2
}
fn default_r() -> usize {
    2
}
fn default_hidden() -> usize {
    16
}

impl ModelConfig {
    pub fn new(method: Method, backbone: BackboneConfig) -> Self {
        Self {
            method,
            backbone,
            half_width: default_half_width(),
            r_first: default_r(),
            r_second: default_r(),
            hypernet_width: default_hidden(),
            tfdl_coefficient: CoeffConvention::default(),
        }
    }

    pub fn validate(&self, pde: PdeKind) -> Result<()> {
        if self.method == Method::Tfdl && pde == PdeKind::FitzhughNagumo {
            return Err(Error::Config(
                "tfdl needs first-order derivatives in the known part; FitzHugh-Nagumo has none".into(),
            ));
        }
        Ok(())
    }
}

/// Derivatives `(p, q)` used by the known part of each problem.
pub fn required_derivatives(pde: PdeKind) -> &'static [(usize, usize)] {
    match pde {
        PdeKind::Burgers | PdeKind::NavierStokes => &[(1, 0), (0, 1), (2, 0), (0, 2)],
        PdeKind::FitzhughNagumo => &[(2, 0), (0, 2)],
    }
}

/// Output of one model step.
pub struct StepOutput<'t, S: Scalar> {
    pub next: Var<'t, S>,
    /// Sum of the layer penalties (absent for models without free moments).
    pub reg: Option<Var<'t, S>>,
}

#[derive(Clone, Debug)]
pub struct HybridModel<S> {
    config: ModelConfig,
    pde: PdeConfig,
    layers: Vec<((usize, usize), DiffLayer<S>)>,
    backbone: Backbone,
    params: ParamSet<S>,
}

impl<S: Scalar> HybridModel<S> {
    /// Builds the model for the coarse grid of `pde`; parameters are drawn
    /// from `seed`.
    pub fn new(pde: &PdeConfig, config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate(pde.kind)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let h = S::lit(pde.coarse_spacing());
        let channels = pde.kind.channels();
        let mut layers = Vec::new();
        if config.method != Method::Blackbox {
            for &(p, q) in required_derivatives(pde.kind) {
                let name = format!("d{p}{q}");
                let r = if p + q == 1 { config.r_first } else { config.r_second };
                let spec = || MomentSpec::new(p, q, r, config.half_width, h, h);
                let layer = match config.method {
                    Method::Fdm => DiffLayer::fdm(p, q, h, h)?,
                    Method::Moment => DiffLayer::moment(&mut params, &name, spec()?)?,
                    Method::Tfdl if p + q == 1 => DiffLayer::tfdl(&mut params, &name, spec()?)?,
                    Method::Tfdl => DiffLayer::moment(&mut params, &name, spec()?)?,
                    Method::Tddl => DiffLayer::tddl(&mut params, &name, spec()?, channels, config.hypernet_width, &mut rng)?,
                    Method::Blackbox => unreachable!(),
                };
                layers.push(((p, q), layer));
            }
        }
        let backbone = Backbone::new(&mut params, "backbone", &config.backbone, channels, &mut rng)?;
        Ok(Self {
            config: config.clone(),
            pde: pde.clone(),
            layers,
            backbone,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn pde(&self) -> &PdeConfig {
        &self.pde
    }

    pub fn dt(&self) -> f64 {
        self.pde.dt
    }

    pub fn channels(&self) -> usize {
        self.pde.kind.channels()
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<S> {
        &mut self.params
    }

    pub fn layer(&self, p: usize, q: usize) -> Option<&DiffLayer<S>> {
        self.layers.iter().find(|(pq, _)| *pq == (p, q)).map(|(_, l)| l)
    }

    pub fn has_free_moments(&self) -> bool {
        self.layers.iter().any(|(_, l)| l.kind() != LayerKind::Fdm)
    }

    pub fn bind<'t>(&self, tape: &'t Tape<S>) -> Bound<'t, S> {
        self.params.bind(tape)
    }

    fn derivative<'t>(
        &self,
        bound: &Bound<'t, S>,
        pq: (usize, usize),
        field: &Var<'t, S>,
        coeff: Option<&Tensor<S>>,
        state: &Var<'t, S>,
        regs: &mut Vec<Var<'t, S>>,
    ) -> Result<Var<'t, S>> {
        let layer = self.layer(pq.0, pq.1).expect("layer for every required derivative");
        let out = layer.apply(bound, field, coeff, Some(state))?;
        if let Some(r) = out.reg {
            regs.push(r);
        }
        Ok(out.value)
    }

    /// Flipping-layer selector for the advection term `-a d/dx`.
    fn coeff_field(&self, velocity: &Tensor<S>) -> Tensor<S> {
        match self.config.tfdl_coefficient {
            CoeffConvention::Signed => velocity.map(|v| -v),
            CoeffConvention::Velocity => velocity.clone(),
        }
    }

    /// The known part and the sum of layer penalties; zero for black-box models.
    pub fn known_part<'t>(&self, bound: &Bound<'t, S>, state: &Var<'t, S>) -> Result<(Var<'t, S>, Option<Var<'t, S>>)> {
        let s = state.shape();
        if s.len() != 4 || s[1] != self.channels() {
            return Err(Error::ShapeMismatch {
                op: "known_part",
                expected: vec![s.first().copied().unwrap_or(0), self.channels(), self.pde.coarse_grid, self.pde.coarse_grid],
                found: s,
            });
        }
        let tape = state.tape();
        if self.config.method == Method::Blackbox {
            return Ok((tape.constant(Tensor::zeros(&s)), None));
        }
        let mut regs = Vec::new();
        let nu = S::lit(self.pde.coefficient);
        let phi = match self.pde.kind {
            PdeKind::FitzhughNagumo => {
                let dxx = self.derivative(bound, (2, 0), state, None, state, &mut regs)?;
                let dyy = self.derivative(bound, (0, 2), state, None, state, &mut regs)?;
                dxx.add(&dyy)?.scale(nu)
            }
            PdeKind::Burgers | PdeKind::NavierStokes => {
                let (u, v, field) = if self.pde.kind == PdeKind::Burgers {
                    let u = state.slice_channels(0, 1)?;
                    let v = state.slice_channels(1, 1)?;
                    (concat_channels(&[u, u])?, concat_channels(&[v, v])?, *state)
                } else {
                    let (u, v) = velocity_var(state, self.pde.length)?;
                    (u, v, *state)
                };
                let cu = self.coeff_field(&u.value());
                let cv = self.coeff_field(&v.value());
                let dx = self.derivative(bound, (1, 0), &field, Some(&cu), state, &mut regs)?;
                let dy = self.derivative(bound, (0, 1), &field, Some(&cv), state, &mut regs)?;
                let dxx = self.derivative(bound, (2, 0), &field, None, state, &mut regs)?;
                let dyy = self.derivative(bound, (0, 2), &field, None, state, &mut regs)?;
                let adv = u.mul(&dx)?.add(&v.mul(&dy)?)?;
                dxx.add(&dyy)?.scale(nu).sub(&adv)?
            }
        };
        let reg = regs.into_iter().try_fold(None::<Var<'t, S>>, |acc, r| -> Result<_> {
            Ok(Some(match acc {
                Some(a) => a.add(&r)?,
                None => r,
            }))
        })?;
        Ok((phi, reg))
    }

    /// `U + dt (Phi(U) + F_NN(U))` for a `[B, C, H, W]` state.
    pub fn step<'t>(&self, bound: &Bound<'t, S>, state: &Var<'t, S>) -> Result<StepOutput<'t, S>> {
        let (phi, reg) = self.known_part(bound, state)?;
        let nn = self.backbone.forward(bound, state)?;
        let next = state.add(&phi.add(&nn)?.scale(S::lit(self.pde.dt)))?;
        Ok(StepOutput { next, reg })
    }

    /// Evaluates one step on a `[C, H, W]` or `[B, C, H, W]` tensor. A blown-up
    /// state comes back non-finite rather than as an error.
    pub fn predict(&self, state: &Tensor<S>) -> Result<Tensor<S>> {
        let single = state.ndim() == 3;
        let batched = if single {
            let mut s = vec![1];
            s.extend_from_slice(state.shape());
            state.reshape(&s)?
        } else {
            state.clone()
        };
        let tape = Tape::new();
        let bound = self.bind(&tape);
        let out = self.step(&bound, &tape.constant(batched))?;
        let v = (*out.next.value()).clone();
        if single {
            v.reshape(state.shape())
        } else {
            Ok(v)
        }
    }
}

/// `(u, v)` from a `[B, 1, H, W]` vorticity on the tape, via the spectral
/// stream function (`psi_hat = -w_hat / |k|^2`, zero mean).
pub fn velocity_var<'t, S: Scalar>(w: &Var<'t, S>, length: f64) -> Result<(Var<'t, S>, Var<'t, S>)> {
    let s = w.shape();
    let (h, wd) = (s[2], s[3]);
    let kf = (wavenumbers::<f64>(h, length), wavenumbers::<f64>(wd, length));
    let kd = (derivative_wavenumbers::<f64>(h, length), derivative_wavenumbers::<f64>(wd, length));
    // u_hat = i (k_y / |k|^2) w_hat, v_hat = -i (k_x / |k|^2) w_hat
    let factor = |axis: usize| {
        Tensor::from_fn(&s, |i| {
            let k2 = kf.0[i[2]] * kf.0[i[2]] + kf.1[i[3]] * kf.1[i[3]];
            if k2 == 0.0 {
                S::zero()
            } else if axis == 0 {
                S::lit(kd.1[i[3]] / k2)
            } else {
                S::lit(-kd.0[i[2]] / k2)
            }
        })
    };
    let (re, im) = (w.dft2_re()?, w.dft2_im()?);
    let mut out = Vec::with_capacity(2);
    for axis in 0..2 {
        let a = factor(axis);
        let vre = im.mul_const(&a)?.neg();
        let vim = re.mul_const(&a)?;
        out.push(Var::idft2_real(&vre, &vim)?);
    }
    Ok((out[0], out[1]))
}
