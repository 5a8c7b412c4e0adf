use std::rc::Rc;

use super::kernels::{self, ConvDims, LocalDims};
use super::tape::{mode_bin, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectral;
use crate::tensor::Tensor;

impl<'t, S: Scalar> Var<'t, S> {
    pub fn value(&self) -> Rc<Tensor<S>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn tape(&self) -> &'t Tape<S> {
        self.tape
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.needs_grad(self.id)
    }

    fn same_tape(&self, other: &Var<'_, S>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::ForeignVar)
        }
    }

    fn emit(&self, value: Tensor<S>, op: Op<S>, parents: &[usize]) -> Var<'t, S> {
        let needs = parents.iter().any(|&p| self.tape.needs_grad(p));
        self.tape.push(value, op, needs)
    }

    fn binary(&self, other: &Var<'_, S>, f: impl Fn(S, S) -> S, op: Op<S>) -> Result<Var<'t, S>> {
        self.same_tape(other)?;
        let a = self.value();
        let b = other.value();
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                op: "elementwise",
                expected: a.shape().to_vec(),
                found: b.shape().to_vec(),
            });
        }
        let v = a.zip_map(&b, f)?;
        Ok(self.emit(v, op, &[self.id, other.id]))
    }

    pub fn add(&self, other: &Var<'_, S>) -> Result<Var<'t, S>> {
        self.binary(other, |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: &Var<'_, S>) -> Result<Var<'t, S>> {
        self.binary(other, |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: &Var<'_, S>) -> Result<Var<'t, S>> {
        self.binary(other, |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn div(&self, other: &Var<'_, S>) -> Result<Var<'t, S>> {
        self.binary(other, |a, b| a / b, Op::Div(self.id, other.id))
    }

    /// Elementwise product with a detached tensor.
    pub fn mul_const(&self, c: &Tensor<S>) -> Result<Var<'t, S>> {
        let cv = self.tape.constant(c.clone());
        self.mul(&cv)
    }

    pub fn add_const(&self, c: &Tensor<S>) -> Result<Var<'t, S>> {
        let cv = self.tape.constant(c.clone());
        self.add(&cv)
    }

    fn unary(&self, f: impl Fn(S) -> S, op: Op<S>) -> Var<'t, S> {
        let v = self.value().map(f);
        self.emit(v, op, &[self.id])
    }

    pub fn scale(&self, k: S) -> Var<'t, S> {
        self.unary(|x| x * k, Op::Scale(self.id, k))
    }

    pub fn neg(&self) -> Var<'t, S> {
        self.scale(-S::one())
    }

    pub fn add_scalar(&self, k: S) -> Var<'t, S> {
        self.unary(|x| x + k, Op::AddScalar(self.id))
    }

    /// `max(x, 0)`, with derivative 0 at the origin.
    pub fn relu(&self) -> Var<'t, S> {
        self.unary(|x| if x > S::zero() { x } else { S::zero() }, Op::Relu(self.id))
    }

    pub fn tanh(&self) -> Var<'t, S> {
        self.unary(|x| x.tanh(), Op::Tanh(self.id))
    }

    pub fn sin(&self) -> Var<'t, S> {
        self.unary(|x| x.sin(), Op::Sin(self.id))
    }

    pub fn cos(&self) -> Var<'t, S> {
        self.unary(|x| x.cos(), Op::Cos(self.id))
    }

    pub fn pow3(&self) -> Var<'t, S> {
        self.unary(|x| x * x * x, Op::Pow3(self.id))
    }

    pub fn sum(&self) -> Var<'t, S> {
        let v = Tensor::scalar(self.value().sum());
        self.emit(v, Op::Sum(self.id), &[self.id])
    }

    pub fn mean(&self) -> Var<'t, S> {
        let v = Tensor::scalar(self.value().mean());
        self.emit(v, Op::Mean(self.id), &[self.id])
    }

    pub fn l1_norm(&self) -> Var<'t, S> {
        let x = self.value();
        let v = x.data().iter().fold(S::zero(), |acc, &a| acc + a.abs());
        self.emit(Tensor::scalar(v), Op::L1Norm(self.id), &[self.id])
    }

    pub fn l2_norm(&self) -> Var<'t, S> {
        let v = self.value().l2_norm();
        self.emit(Tensor::scalar(v), Op::L2Norm(self.id), &[self.id])
    }

    /// Euclidean norm of each row of a `[B, D]` matrix.
    pub fn row_l2_norm(&self) -> Result<Var<'t, S>> {
        let x = self.value();
        if x.ndim() != 2 {
            return Err(Error::InvalidShape {
                shape: x.shape().to_vec(),
                reason: "row_l2_norm expects a matrix".into(),
            });
        }
        let d = x.shape()[1];
        let norms: Vec<S> = x
            .data()
            .chunks(d.max(1))
            .map(|r| r.iter().fold(S::zero(), |a, &b| a + b * b).sqrt())
            .collect();
        let v = Tensor::new(vec![x.shape()[0]], norms)?;
        Ok(self.emit(v, Op::RowL2Norm(self.id), &[self.id]))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, S>> {
        let v = self.value().reshape(shape)?;
        Ok(self.emit(v, Op::Reshape(self.id), &[self.id]))
    }

    /// Periodic cross-correlation of `[N, Cin, H, W]` with `[Cout, Cin, k, k]`:
    /// `out(n,o,y,x) = sum_{c,s,t} K(o,c,s+L,t+L) in(n,c,(y+s) mod H,(x+t) mod W)`.
    pub fn conv2d_periodic(&self, weight: &Var<'_, S>) -> Result<Var<'t, S>> {
        self.same_tape(weight)?;
        let x = self.value();
        let w = weight.value();
        let (xs, ws) = (x.shape(), w.shape());
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::InvalidShape {
                shape: xs.to_vec(),
                reason: "conv2d_periodic expects [N,C,H,W] input and [O,C,k,k] kernels".into(),
            });
        }
        let k = ws[2];
        if ws[3] != k {
            return Err(Error::ShapeMismatch {
                op: "conv2d_periodic",
                expected: vec![ws[0], ws[1], k, k],
                found: ws.to_vec(),
            });
        }
        if k % 2 == 0 {
            return Err(Error::EvenKernel(k));
        }
        if ws[1] != xs[1] {
            return Err(Error::ShapeMismatch {
                op: "conv2d_periodic",
                expected: vec![ws[0], xs[1], k, k],
                found: ws.to_vec(),
            });
        }
        if xs[2] < k || xs[3] < k {
            return Err(Error::InvalidShape {
                shape: xs.to_vec(),
                reason: format!("grid smaller than the {k}x{k} kernel"),
            });
        }
        let dims = ConvDims {
            n: xs[0],
            ci: xs[1],
            co: ws[0],
            h: xs[2],
            w: xs[3],
            k,
        };
        let out = kernels::conv_forward(x.data(), w.data(), dims);
        let v = Tensor::new(vec![dims.n, dims.co, dims.h, dims.w], out)?;
        Ok(self.emit(
            v,
            Op::Conv2d {
                input: self.id,
                weight: weight.id,
                dims,
            },
            &[self.id, weight.id],
        ))
    }

    /// Adds `bias[c]` to every entry of channel `c` (axis 1).
    pub fn add_channel_bias(&self, bias: &Var<'_, S>) -> Result<Var<'t, S>> {
        self.same_tape(bias)?;
        let x = self.value();
        let b = bias.value();
        let xs = x.shape();
        if xs.len() < 2 || b.shape() != [xs[1]] {
            return Err(Error::ShapeMismatch {
                op: "add_channel_bias",
                expected: vec![xs.get(1).copied().unwrap_or(0)],
                found: b.shape().to_vec(),
            });
        }
        let c = xs[1];
        let inner: usize = xs[2..].iter().product();
        let mut data = x.data().to_vec();
        for (i, chunk) in data.chunks_mut(inner.max(1)).enumerate() {
            let bv = b.data()[i % c];
            for v in chunk {
                *v = *v + bv;
            }
        }
        let v = Tensor::new(xs.to_vec(), data)?;
        Ok(self.emit(
            v,
            Op::ChannelBias {
                x: self.id,
                bias: bias.id,
            },
            &[self.id, bias.id],
        ))
    }

    /// Channels `start..start+len` along axis 1.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Var<'t, S>> {
        let x = self.value();
        let xs = x.shape();
        if xs.len() < 2 || start + len > xs[1] {
            return Err(Error::InvalidArgument(format!(
                "channel slice {start}..{} out of range for {xs:?}",
                start + len
            )));
        }
        let (outer, total) = (xs[0], xs[1]);
        let inner: usize = xs[2..].iter().product();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * total + start) * inner;
            data.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut shape = xs.to_vec();
        shape[1] = len;
        let v = Tensor::new(shape, data)?;
        Ok(self.emit(v, Op::Slice { x: self.id, start }, &[self.id]))
    }

    /// Per-pixel stencil application. `kernels` is `[N, k*k, H, W]` (tap-major,
    /// tap index `s*k + t`), `self` is `[N, C, H, W]`; the same local kernel is
    /// applied to every channel.
    pub fn local_conv(&self, kernels: &Var<'_, S>) -> Result<Var<'t, S>> {
        self.same_tape(kernels)?;
        let f = self.value();
        let kv = kernels.value();
        let (fs, ks) = (f.shape(), kv.shape());
        if fs.len() != 4 || ks.len() != 4 || ks[0] != fs[0] || ks[2] != fs[2] || ks[3] != fs[3] {
            return Err(Error::ShapeMismatch {
                op: "local_conv",
                expected: vec![fs.first().copied().unwrap_or(0), 0, fs.get(2).copied().unwrap_or(0), fs.get(3).copied().unwrap_or(0)],
                found: ks.to_vec(),
            });
        }
        let k = (ks[1] as f64).sqrt().round() as usize;
        if k * k != ks[1] {
            return Err(Error::InvalidShape {
                shape: ks.to_vec(),
                reason: "tap count is not a square".into(),
            });
        }
        if k.is_multiple_of(2) {
            return Err(Error::EvenKernel(k));
        }
        let dims = LocalDims {
            n: fs[0],
            c: fs[1],
            h: fs[2],
            w: fs[3],
            k,
        };
        let out = kernels::local_forward(kv.data(), f.data(), dims);
        let v = Tensor::new(fs.to_vec(), out)?;
        Ok(self.emit(
            v,
            Op::LocalConv {
                kernels: kernels.id,
                field: self.id,
                dims,
            },
            &[kernels.id, self.id],
        ))
    }

    pub fn matmul(&self, other: &Var<'_, S>) -> Result<Var<'t, S>> {
        self.same_tape(other)?;
        let a = self.value();
        let b = other.value();
        if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                expected: a.shape().to_vec(),
                found: b.shape().to_vec(),
            });
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for l in 0..k {
                let ail = a.data()[i * k + l];
                for j in 0..n {
                    out[i * n + j] = out[i * n + j] + ail * b.data()[l * n + j];
                }
            }
        }
        let v = Tensor::new(vec![m, n], out)?;
        Ok(self.emit(
            v,
            Op::Matmul {
                a: self.id,
                b: other.id,
                m,
                k,
                n,
            },
            &[self.id, other.id],
        ))
    }

    /// Real part of the unnormalized 2-D DFT over the trailing two axes.
    pub fn dft2_re(&self) -> Result<Var<'t, S>> {
        let v = spectral::dft2(&self.value())?.re;
        Ok(self.emit(v, Op::Dft2Re(self.id), &[self.id]))
    }

    /// Imaginary part of the unnormalized 2-D DFT over the trailing two axes.
    pub fn dft2_im(&self) -> Result<Var<'t, S>> {
        let v = spectral::dft2(&self.value())?.im;
        Ok(self.emit(v, Op::Dft2Im(self.id), &[self.id]))
    }

    /// Real part of the normalized inverse DFT of `re + i im`.
    pub fn idft2_real(re: &Var<'t, S>, im: &Var<'_, S>) -> Result<Var<'t, S>> {
        re.same_tape(im)?;
        let spec = spectral::ComplexField::new((*re.value()).clone(), (*im.value()).clone())?;
        let v = spectral::idft2_real(&spec)?;
        Ok(re.emit(v, Op::Idft2Real { re: re.id, im: im.id }, &[re.id, im.id]))
    }

    /// Channel contraction with per-position weights:
    /// `out(n,o,p) = sum_i x(n,i,p) w(i,o,p)` for `x: [N,Ci,H,W]`, `w: [Ci,Co,H,W]`.
    pub fn mode_contract(&self, w: &Var<'_, S>) -> Result<Var<'t, S>> {
        self.same_tape(w)?;
        let x = self.value();
        let wv = w.value();
        let (xs, ws) = (x.shape(), wv.shape());
        if xs.len() != 4 || ws.len() != 4 || ws[0] != xs[1] || ws[2..] != xs[2..] {
            return Err(Error::ShapeMismatch {
                op: "mode_contract",
                expected: vec![xs.get(1).copied().unwrap_or(0), 0, xs.get(2).copied().unwrap_or(0), xs.get(3).copied().unwrap_or(0)],
                found: ws.to_vec(),
            });
        }
        let (n, ci, co, p) = (xs[0], xs[1], ws[1], xs[2] * xs[3]);
        let mut out = vec![S::zero(); n * co * p];
        for b in 0..n {
            for i in 0..ci {
                let xsl = &x.data()[(b * ci + i) * p..(b * ci + i + 1) * p];
                for o in 0..co {
                    let wsl = &wv.data()[(i * co + o) * p..(i * co + o + 1) * p];
                    let dst = &mut out[(b * co + o) * p..(b * co + o + 1) * p];
                    for ((d, &a), &c) in dst.iter_mut().zip(xsl).zip(wsl) {
                        *d = *d + a * c;
                    }
                }
            }
        }
        let v = Tensor::new(vec![n, co, xs[2], xs[3]], out)?;
        Ok(self.emit(
            v,
            Op::ModeContract {
                x: self.id,
                w: w.id,
                n,
                ci,
                co,
                p,
            },
            &[self.id, w.id],
        ))
    }

    /// Scatters compact low-mode weights `[.., 2m-1, 2m-1]` (signed frequencies
    /// `-(m-1)..=(m-1)` per axis) onto a full `[.., h, w]` frequency grid.
    pub fn embed_modes(&self, modes: usize, h: usize, wd: usize) -> Result<Var<'t, S>> {
        let x = self.value();
        let xs = x.shape();
        let side = 2 * modes - 1;
        if modes == 0 || xs.len() < 2 || xs[xs.len() - 2] != side || xs[xs.len() - 1] != side {
            return Err(Error::InvalidShape {
                shape: xs.to_vec(),
                reason: format!("expected trailing {side}x{side} mode block"),
            });
        }
        if 2 * modes > h + 1 || 2 * modes > wd + 1 {
            return Err(Error::InvalidArgument(format!(
                "{modes} retained modes exceed the {h}x{wd} grid"
            )));
        }
        let planes = x.len() / (side * side);
        let mut data = vec![S::zero(); planes * h * wd];
        for pl in 0..planes {
            for a in 0..side {
                let row = mode_bin(a, modes, h);
                for b in 0..side {
                    let col = mode_bin(b, modes, wd);
                    data[pl * h * wd + row * wd + col] = x.data()[pl * side * side + a * side + b];
                }
            }
        }
        let mut shape = xs.to_vec();
        let nd = shape.len();
        shape[nd - 2] = h;
        shape[nd - 1] = wd;
        let v = Tensor::new(shape, data)?;
        Ok(self.emit(
            v,
            Op::EmbedModes {
                w: self.id,
                modes,
                h,
                wd,
            },
            &[self.id],
        ))
    }
}

/// Concatenates `[N, C_i, ...]` tensors along axis 1.
pub fn concat_channels<'t, S: Scalar>(parts: &[Var<'t, S>]) -> Result<Var<'t, S>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
    let values: Vec<Rc<Tensor<S>>> = parts.iter().map(|p| p.value()).collect();
    let fs = values[0].shape().to_vec();
    if fs.len() < 2 {
        return Err(Error::InvalidShape {
            shape: fs,
            reason: "concat_channels needs a channel axis".into(),
        });
    }
    let mut widths = Vec::with_capacity(parts.len());
    for (p, v) in parts.iter().zip(&values) {
        first.same_tape(p)?;
        let s = v.shape();
        if s.len() != fs.len() || s[0] != fs[0] || s[2..] != fs[2..] {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                expected: fs.clone(),
                found: s.to_vec(),
            });
        }
        widths.push(s[1]);
    }
    let inner: usize = fs[2..].iter().product();
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(fs[0] * total * inner);
    for o in 0..fs[0] {
        for (v, &wd) in values.iter().zip(&widths) {
            data.extend_from_slice(&v.data()[o * wd * inner..(o + 1) * wd * inner]);
        }
    }
    let mut shape = fs.clone();
    shape[1] = total;
    let v = Tensor::new(shape, data)?;
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    Ok(first.emit(
        v,
        Op::Concat {
            parts: ids.clone(),
            widths,
        },
        &ids,
    ))
}
