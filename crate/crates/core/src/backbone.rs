//! Residual networks learning the unknown part of the dynamics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::layers::with_coordinates;
use crate::params::{Bound, ParamId, ParamSet};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackboneConfig {
    ConvResnet {
        #[serde(default = "default_resnet_width")]
        width: usize,
        #[serde(default = "default_resnet_blocks")]
        blocks: usize,
    },
    Spectral {
        #[serde(default = "default_fno_width")]
        width: usize,
        #[serde(default = "default_fno_layers")]
        layers: usize,
        #[serde(default = "default_fno_modes")]
        modes: usize,
    },
}

fn default_resnet_width() -> usize {
    32
}
fn default_resnet_blocks() -> usize {
    4
}
fn default_fno_width() -> usize {
    16
}
fn default_fno_layers() -> usize {
    4
}
fn default_fno_modes() -> usize {
    8
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig::ConvResnet {
            width: default_resnet_width(),
            blocks: default_resnet_blocks(),
        }
    }
}

#[derive(Clone, Debug)]
struct Conv {
    w: ParamId,
    b: ParamId,
}

impl Conv {
    fn new<S: Scalar, R: Rng>(
        params: &mut ParamSet<S>,
        name: &str,
        co: usize,
        ci: usize,
        k: usize,
        zero: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = if zero { 0.0 } else { 1.0 / ((ci * k * k) as f64).sqrt() };
        Ok(Self {
            w: params.add_uniform(format!("{name}.weight"), &[co, ci, k, k], bound, rng)?,
            b: params.add_uniform(format!("{name}.bias"), &[co], bound, rng)?,
        })
    }

    fn apply<'t, S: Scalar>(&self, bound: &Bound<'t, S>, x: &Var<'t, S>) -> Result<Var<'t, S>> {
        x.conv2d_periodic(&bound.var(self.w))?.add_channel_bias(&bound.var(self.b))
    }
}

#[derive(Clone, Debug)]
struct SpectralLayer {
    /// `[width, width, 2m-1, 2m-1]` real and imaginary mode weights.
    wr: ParamId,
    wi: ParamId,
    pointwise: Conv,
}

#[derive(Clone, Debug)]
enum Body {
    Resnet(Vec<(Conv, Conv)>),
    Spectral { layers: Vec<SpectralLayer>, modes: usize },
}

/// `F_NN(x, U)`: `[B, C, H, W] -> [B, C, H, W]`, coordinates appended
/// internally. The final projection starts at zero.
#[derive(Clone, Debug)]
pub struct Backbone {
    config: BackboneConfig,
    channels: usize,
    lift: Conv,
    body: Body,
    project: Conv,
}

impl Backbone {
    pub fn new<S: Scalar, R: Rng>(
        params: &mut ParamSet<S>,
        prefix: &str,
        config: &BackboneConfig,
        channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let (width, body) = match *config {
            BackboneConfig::ConvResnet { width, blocks } => {
                let mut b = Vec::with_capacity(blocks);
                for i in 0..blocks {
                    b.push((
                        Conv::new(params, &format!("{prefix}.block{i}.conv0"), width, width, 3, false, rng)?,
                        Conv::new(params, &format!("{prefix}.block{i}.conv1"), width, width, 3, false, rng)?,
                    ));
                }
                (width, Body::Resnet(b))
            }
            BackboneConfig::Spectral { width, layers, modes } => {
                if modes == 0 {
                    return Err(Error::Config("spectral backbone needs at least one mode".into()));
                }
                let side = 2 * modes - 1;
                let scale = 1.0 / (width * width) as f64;
                let mut ls = Vec::with_capacity(layers);
                for i in 0..layers {
                    let name = format!("{prefix}.layer{i}");
                    ls.push(SpectralLayer {
                        wr: params.add_uniform(format!("{name}.spectral_re"), &[width, width, side, side], scale, rng)?,
                        wi: params.add_uniform(format!("{name}.spectral_im"), &[width, width, side, side], scale, rng)?,
                        pointwise: Conv::new(params, &format!("{name}.pointwise"), width, width, 1, false, rng)?,
                    });
                }
                (width, Body::Spectral { layers: ls, modes })
            }
        };
        Ok(Self {
            config: config.clone(),
            channels,
            lift: Conv::new(params, &format!("{prefix}.lift"), width, channels + 2, 1, false, rng)?,
            body,
            project: Conv::new(params, &format!("{prefix}.project"), channels, width, 1, true, rng)?,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn forward<'t, S: Scalar>(&self, bound: &Bound<'t, S>, state: &Var<'t, S>) -> Result<Var<'t, S>> {
        let s = state.shape();
        if s.len() != 4 || s[1] != self.channels {
            return Err(Error::ShapeMismatch {
                op: "backbone",
                expected: vec![s.first().copied().unwrap_or(0), self.channels, 0, 0],
                found: s,
            });
        }
        let mut h = self.lift.apply(bound, &with_coordinates(state)?)?;
        match &self.body {
            Body::Resnet(blocks) => {
                for (c0, c1) in blocks {
                    let inner = c1.apply(bound, &c0.apply(bound, &h)?.tanh())?;
                    h = h.add(&inner)?;
                }
            }
            Body::Spectral { layers, modes } => {
                if 2 * modes > s[2] + 1 || 2 * modes > s[3] + 1 {
                    return Err(Error::InvalidArgument(format!(
                        "{modes} retained modes exceed the {}x{} grid",
                        s[2], s[3]
                    )));
                }
                for (i, layer) in layers.iter().enumerate() {
                    let wr = bound.var(layer.wr).embed_modes(*modes, s[2], s[3])?;
                    let wi = bound.var(layer.wi).embed_modes(*modes, s[2], s[3])?;
                    let (re, im) = (h.dft2_re()?, h.dft2_im()?);
                    let out_re = re.mode_contract(&wr)?.sub(&im.mode_contract(&wi)?)?;
                    let out_im = re.mode_contract(&wi)?.add(&im.mode_contract(&wr)?)?;
                    let spectral = Var::idft2_real(&out_re, &out_im)?;
                    h = spectral.add(&layer.pointwise.apply(bound, &h)?)?;
                    if i + 1 < layers.len() {
                        h = h.tanh();
                    }
                }
            }
        }
        self.project.apply(bound, &h)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::Tape;
    use crate::tensor::Tensor;

    #[test]
    fn config_defaults() {
        let c: BackboneConfig = serde_json::from_str(r#"{"kind":"conv_resnet"}"#).unwrap();
        assert_eq!(c, BackboneConfig::default());
        let c: BackboneConfig = serde_json::from_str(r#"{"kind":"spectral","modes":4}"#).unwrap();
        assert_eq!(c, BackboneConfig::Spectral { width: 16, layers: 4, modes: 4 });
        assert!(serde_json::from_str::<BackboneConfig>(r#"{"kind":"conv_resnet","depth":3}"#).is_err());
    }

    #[test]
    fn untrained_output_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for cfg in [
            BackboneConfig::ConvResnet { width: 4, blocks: 1 },
            BackboneConfig::Spectral { width: 4, layers: 2, modes: 2 },
        ] {
            let mut ps = ParamSet::<f64>::new();
            let net = Backbone::new(&mut ps, "nn", &cfg, 2, &mut rng).unwrap();
            let tape = Tape::new();
            let b = ps.bind(&tape);
            let x = tape.constant(Tensor::from_fn(&[1, 2, 8, 8], |i| (i[2] * i[3]) as f64 * 0.01));
            let y = net.forward(&b, &x).unwrap();
            assert_eq!(y.shape(), vec![1, 2, 8, 8]);
            assert_eq!(y.value().max_abs(), 0.0);
        }
    }

    #[test]
    fn too_many_modes_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::<f64>::new();
        let cfg = BackboneConfig::Spectral { width: 2, layers: 1, modes: 5 };
        let net = Backbone::new(&mut ps, "nn", &cfg, 1, &mut rng).unwrap();
        let tape = Tape::new();
        let b = ps.bind(&tape);
        let x = tape.constant(Tensor::zeros(&[1, 1, 8, 8]));
        assert!(net.forward(&b, &x).is_err());
    }
}
