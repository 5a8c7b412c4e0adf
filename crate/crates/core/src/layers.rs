//! Difference layers: fixed central stencils, moment-parameterized kernels,
//! flipping kernels selected by the sign of a coefficient field, and
//! hypernetwork-predicted per-pixel kernels.
//!
//! All layers act on `[B, C, H, W]` fields, differentiating every channel with
//! the same stencil. Free moments are stored as dimensionless `theta` and enter
//! the moment matrix as `theta * dx^(u-p) * dy^(v-q)`, which keeps trained
//! kernels on the scale of the target derivative for any grid spacing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{concat_channels, Var};
use crate::error::{Error, Result};
use crate::moment::{assemble_constrained_kernel, flip_x, flip_y, BasisBank, Kernel, MomentSpec};
use crate::params::{Bound, ParamId, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Fdm,
    Moment,
    Tfdl,
    Tddl,
}

/// `[B, 2, H, W]` normalized grid coordinates; channel 0 varies along the
/// first spatial axis.
pub fn coordinate_channels<S: Scalar>(b: usize, h: usize, w: usize) -> Tensor<S> {
    Tensor::from_fn(&[b, 2, h, w], |i| {
        if i[1] == 0 {
            S::lit(i[2] as f64 / h as f64)
        } else {
            S::lit(i[3] as f64 / w as f64)
        }
    })
}

/// Appends the coordinate channels to a `[B, C, H, W]` state.
pub fn with_coordinates<'t, S: Scalar>(state: &Var<'t, S>) -> Result<Var<'t, S>> {
    let s = state.shape();
    if s.len() != 4 {
        return Err(Error::InvalidShape {
            shape: s,
            reason: "expected [B, C, H, W]".into(),
        });
    }
    let coords = state.tape().constant(coordinate_channels(s[0], s[2], s[3]));
    concat_channels(&[*state, coords])
}

/// Applies a single `[k, k]` kernel to every channel of `[B, C, H, W]`.
pub(crate) fn conv_channelwise<'t, S: Scalar>(field: &Var<'t, S>, kernel: &Var<'_, S>) -> Result<Var<'t, S>> {
    let s = field.shape();
    if s.len() != 4 {
        return Err(Error::InvalidShape {
            shape: s,
            reason: "expected [B, C, H, W]".into(),
        });
    }
    let ks = kernel.shape();
    let k = *ks.last().unwrap_or(&0);
    let kern = kernel.reshape(&[1, 1, k, k])?;
    field
        .reshape(&[s[0] * s[1], 1, s[2], s[3]])?
        .conv2d_periodic(&kern)?
        .reshape(&s)
}

/// Three-layer convolutional hypernetwork predicting free moments per pixel.
#[derive(Clone, Debug)]
pub struct Hypernet {
    pub k: usize,
    pub in_channels: usize,
    pub hidden: usize,
    pub out_channels: usize,
    w: [ParamId; 3],
    b: [ParamId; 3],
}

impl Hypernet {
    /// `in_channels` already includes the coordinate channels. The last layer
    /// starts at zero.
    pub fn new<S: Scalar, R: Rng>(
        params: &mut ParamSet<S>,
        prefix: &str,
        in_channels: usize,
        hidden: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let k = 3;
        let dims = [(hidden, in_channels), (hidden, hidden), (out_channels, hidden)];
        let mut w = Vec::new();
        let mut b = Vec::new();
        for (i, &(co, ci)) in dims.iter().enumerate() {
            let bound = if i == 2 { 0.0 } else { 1.0 / ((ci * k * k) as f64).sqrt() };
            w.push(params.add_uniform(format!("{prefix}.conv{i}.weight"), &[co, ci, k, k], bound, rng)?);
            b.push(params.add_uniform(format!("{prefix}.conv{i}.bias"), &[co], bound, rng)?);
        }
        Ok(Self {
            k,
            in_channels,
            hidden,
            out_channels,
            w: [w[0], w[1], w[2]],
            b: [b[0], b[1], b[2]],
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.w.iter().chain(&self.b).copied().collect()
    }

    /// `[B, in_channels, H, W] -> [B, out_channels, H, W]`.
    pub fn forward<'t, S: Scalar>(&self, bound: &Bound<'t, S>, input: &Var<'t, S>) -> Result<Var<'t, S>> {
        let mut h = *input;
        for i in 0..3 {
            h = h.conv2d_periodic(&bound.var(self.w[i]))?.add_channel_bias(&bound.var(self.b[i]))?;
            if i < 2 {
                h = h.relu();
            }
        }
        Ok(h)
    }
}

/// Output of one layer application.
pub struct Applied<'t, S: Scalar> {
    pub value: Var<'t, S>,
    /// L1 penalty of the free moments used, if the layer has any.
    pub reg: Option<Var<'t, S>>,
}

#[derive(Clone, Debug)]
pub struct DiffLayer<S> {
    kind: LayerKind,
    spec: MomentSpec<S>,
    /// `[1, k*k]` kernel at zero free moments.
    base: Tensor<S>,
    /// `[m, k*k]` kernel response of each scaled free moment.
    basis: Tensor<S>,
    flipped: Option<(Tensor<S>, Tensor<S>)>,
    theta: Option<ParamId>,
    hyper: Option<Hypernet>,
}

fn kernel_row<S: Scalar>(k: &Kernel<S>) -> Vec<S> {
    k.values().to_vec()
}

impl<S: Scalar> DiffLayer<S> {
    fn build(kind: LayerKind, spec: MomentSpec<S>) -> Result<Self> {
        let kk = spec.size() * spec.size();
        let base_k = assemble_constrained_kernel(&spec, &vec![S::zero(); spec.free_param_count()])?;
        let bank = BasisBank::new(spec.l, spec.dx, spec.dy)?;
        let free = spec.free_indices();
        let mut basis_k = Vec::with_capacity(free.len());
        for &(u, v) in &free {
            let scale = spec.dx.powi(u as i32 - spec.p as i32) * spec.dy.powi(v as i32 - spec.q as i32);
            basis_k.push(bank.get(u, v).map(|x| x * scale));
        }
        let flatten = |ks: &[Kernel<S>]| -> Result<Tensor<S>> {
            Tensor::new(vec![ks.len(), kk], ks.iter().flat_map(kernel_row).collect())
        };
        let flipped = if kind == LayerKind::Tfdl {
            let flip: fn(&Kernel<S>) -> Kernel<S> = match (spec.p, spec.q) {
                (1, 0) => flip_x,
                (0, 1) => flip_y,
                (p, q) => return Err(Error::UnsupportedDerivative { p, q, layer: "tfdl" }),
            };
            let fb: Vec<Kernel<S>> = basis_k.iter().map(flip).collect();
            Some((Tensor::new(vec![1, kk], kernel_row(&flip(&base_k)))?, flatten(&fb)?))
        } else {
            None
        };
        Ok(Self {
            kind,
            base: Tensor::new(vec![1, kk], kernel_row(&base_k))?,
            basis: flatten(&basis_k)?,
            spec,
            flipped,
            theta: None,
            hyper: None,
        })
    }

    /// Second-order central differences at `L = 1`.
    pub fn fdm(p: usize, q: usize, dx: S, dy: S) -> Result<Self> {
        let r = match (p, q) {
            (1, 0) | (0, 1) => 1,
            (2, 0) | (0, 2) => 0,
            _ => return Err(Error::UnsupportedDerivative { p, q, layer: "fdm" }),
        };
        Self::build(LayerKind::Fdm, MomentSpec::new(p, q, r, 1, dx, dy)?)
    }

    /// Trainable free moments, initialized to zero.
    pub fn moment(params: &mut ParamSet<S>, name: &str, spec: MomentSpec<S>) -> Result<Self> {
        let mut layer = Self::build(LayerKind::Moment, spec)?;
        let m = layer.spec.free_param_count();
        layer.theta = Some(params.add(format!("{name}.theta"), Tensor::zeros(&[1, m]))?);
        Ok(layer)
    }

    /// Flipping layer for first derivatives.
    pub fn tfdl(params: &mut ParamSet<S>, name: &str, spec: MomentSpec<S>) -> Result<Self> {
        let mut layer = Self::build(LayerKind::Tfdl, spec)?;
        let m = layer.spec.free_param_count();
        layer.theta = Some(params.add(format!("{name}.theta"), Tensor::zeros(&[1, m]))?);
        Ok(layer)
    }

    /// Dynamic layer; `state_channels` excludes the coordinate channels.
    pub fn tddl<R: Rng>(
        params: &mut ParamSet<S>,
        name: &str,
        spec: MomentSpec<S>,
        state_channels: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layer = Self::build(LayerKind::Tddl, spec)?;
        let m = layer.spec.free_param_count();
        layer.hyper = Some(Hypernet::new(params, &format!("{name}.hyper"), state_channels + 2, hidden, m, rng)?);
        Ok(layer)
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn spec(&self) -> &MomentSpec<S> {
        &self.spec
    }

    pub fn free_count(&self) -> usize {
        self.basis.shape()[0]
    }

    pub fn theta(&self) -> Option<ParamId> {
        self.theta
    }

    pub fn hypernet(&self) -> Option<&Hypernet> {
        self.hyper.as_ref()
    }

    /// Kernel for the given dimensionless free vector.
    pub fn kernel_for(&self, theta: &[S]) -> Result<Kernel<S>> {
        let kk = self.base.len();
        if theta.len() != self.free_count() {
            return Err(Error::ShapeMismatch {
                op: "DiffLayer::kernel_for",
                expected: vec![self.free_count()],
                found: vec![theta.len()],
            });
        }
        let mut vals = self.base.data().to_vec();
        for (j, &th) in theta.iter().enumerate() {
            for (v, &b) in vals.iter_mut().zip(&self.basis.data()[j * kk..(j + 1) * kk]) {
                *v = *v + th * b;
            }
        }
        Kernel::from_vec(self.spec.l, vals)
    }

    /// Current global kernel (zero free moments for fixed and dynamic layers).
    pub fn kernel(&self, params: &ParamSet<S>) -> Result<Kernel<S>> {
        match self.theta {
            Some(id) => self.kernel_for(params.get(id).data()),
            None => self.kernel_for(&vec![S::zero(); self.free_count()]),
        }
    }

    fn kernel_var<'t>(&self, bound: &Bound<'t, S>, base: &Tensor<S>, basis: &Tensor<S>) -> Result<Var<'t, S>> {
        let k = self.spec.size();
        match self.theta {
            Some(id) => {
                let theta = bound.var(id);
                let tape = theta.tape();
                theta.matmul(&tape.constant(basis.clone()))?.add_const(base)?.reshape(&[k, k])
            }
            None => Err(Error::InvalidArgument("layer has no free vector".into())),
        }
    }

    /// Applies the layer to `field` (`[B, C, H, W]`).
    ///
    /// `coeff` is the signed factor multiplying this derivative (same shape as
    /// `field`) and is required by flipping layers; `state` feeds the
    /// hypernetwork of dynamic layers.
    pub fn apply<'t>(
        &self,
        bound: &Bound<'t, S>,
        field: &Var<'t, S>,
        coeff: Option<&Tensor<S>>,
        state: Option<&Var<'t, S>>,
    ) -> Result<Applied<'t, S>> {
        let tape = field.tape();
        let k = self.spec.size();
        match self.kind {
            LayerKind::Fdm => {
                let kern = tape.constant(self.base.reshape(&[k, k])?);
                Ok(Applied {
                    value: conv_channelwise(field, &kern)?,
                    reg: None,
                })
            }
            LayerKind::Moment => {
                let kern = self.kernel_var(bound, &self.base, &self.basis)?;
                Ok(Applied {
                    value: conv_channelwise(field, &kern)?,
                    reg: Some(self.theta_reg(bound)),
                })
            }
            LayerKind::Tfdl => {
                let coeff = coeff.ok_or_else(|| Error::InvalidArgument("flipping layer needs a coefficient field".into()))?;
                coeff.expect_shape("tfdl coefficient", &field.shape())?;
                let (fbase, fbasis) = self.flipped.as_ref().expect("flip kernels built for tfdl");
                let plain = conv_channelwise(field, &self.kernel_var(bound, &self.base, &self.basis)?)?;
                let flipped = conv_channelwise(field, &self.kernel_var(bound, fbase, fbasis)?)?;
                let mask = coeff.map(|c| if c >= S::zero() { S::one() } else { S::zero() });
                let inv = mask.map(|m| S::one() - m);
                Ok(Applied {
                    value: plain.mul_const(&mask)?.add(&flipped.mul_const(&inv)?)?,
                    reg: Some(self.theta_reg(bound)),
                })
            }
            LayerKind::Tddl => {
                let state = state.ok_or_else(|| Error::InvalidArgument("dynamic layer needs the state".into()))?;
                let w = self.free_field(bound, state)?;
                let s = w.shape();
                let pixels = S::lit((s[0] * s[2] * s[3]) as f64);
                let reg = w.l1_norm().scale(S::one() / pixels);
                let kernels = self.local_kernels(&w)?;
                Ok(Applied {
                    value: field.local_conv(&kernels)?,
                    reg: Some(reg),
                })
            }
        }
    }

    fn theta_reg<'t>(&self, bound: &Bound<'t, S>) -> Var<'t, S> {
        bound.var(self.theta.expect("trainable layer")).l1_norm()
    }

    /// Per-pixel dimensionless free moments `[B, m, H, W]` of a dynamic layer.
    pub fn free_field<'t>(&self, bound: &Bound<'t, S>, state: &Var<'t, S>) -> Result<Var<'t, S>> {
        let hyper = self
            .hyper
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("layer has no hypernetwork".into()))?;
        hyper.forward(bound, &with_coordinates(state)?)
    }

    /// `[B, m, H, W]` free moments to `[B, k*k, H, W]` local kernels.
    pub fn local_kernels<'t>(&self, w: &Var<'t, S>) -> Result<Var<'t, S>> {
        let (m, kk) = (self.basis.shape()[0], self.basis.shape()[1]);
        let tape = w.tape();
        let wt = Tensor::from_fn(&[kk, m, 1, 1], |i| self.basis.get(&[i[1], i[0]]));
        let bias = self.base.reshape(&[kk])?;
        w.conv2d_periodic(&tape.constant(wt))?.add_channel_bias(&tape.constant(bias))
    }
}
