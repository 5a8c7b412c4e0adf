use std::cell::{Cell, RefCell};
use std::rc::Rc;

use super::kernels::{self, ConvDims, LocalDims};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectral;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub(crate) enum Op<S> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, S),
    AddScalar(usize),
    Relu(usize),
    Tanh(usize),
    Sin(usize),
    Cos(usize),
    Pow3(usize),
    Sum(usize),
    Mean(usize),
    L1Norm(usize),
    L2Norm(usize),
    RowL2Norm(usize),
    Reshape(usize),
    Conv2d {
        input: usize,
        weight: usize,
        dims: ConvDims,
    },
    ChannelBias {
        x: usize,
        bias: usize,
    },
    Concat {
        parts: Vec<usize>,
        widths: Vec<usize>,
    },
    Slice {
        x: usize,
        start: usize,
    },
    LocalConv {
        kernels: usize,
        field: usize,
        dims: LocalDims,
    },
    Matmul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Dft2Re(usize),
    Dft2Im(usize),
    Idft2Real {
        re: usize,
        im: usize,
    },
    ModeContract {
        x: usize,
        w: usize,
        n: usize,
        ci: usize,
        co: usize,
        p: usize,
    },
    EmbedModes {
        w: usize,
        modes: usize,
        h: usize,
        wd: usize,
    },
}

impl<S> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Sin(..) => "sin",
            Op::Cos(..) => "cos",
            Op::Pow3(..) => "pow3",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::L1Norm(..) => "l1_norm",
            Op::L2Norm(..) => "l2_norm",
            Op::RowL2Norm(..) => "row_l2_norm",
            Op::Reshape(..) => "reshape",
            Op::Conv2d { .. } => "conv2d_periodic",
            Op::ChannelBias { .. } => "add_channel_bias",
            Op::Concat { .. } => "concat_channels",
            Op::Slice { .. } => "slice_channels",
            Op::LocalConv { .. } => "local_conv",
            Op::Matmul { .. } => "matmul",
            Op::Dft2Re(..) => "dft2_re",
            Op::Dft2Im(..) => "dft2_im",
            Op::Idft2Real { .. } => "idft2_real",
            Op::ModeContract { .. } => "mode_contract",
            Op::EmbedModes { .. } => "embed_modes",
        }
    }
}

pub(crate) struct Node<S> {
    pub value: Rc<Tensor<S>>,
    pub op: Op<S>,
    pub needs_grad: bool,
}

/// Ordered record of a computation. Nodes are appended in evaluation order,
/// so reverse index order is a valid topological order for backpropagation.
pub struct Tape<S: Scalar> {
    nodes: RefCell<Vec<Node<S>>>,
    first_non_finite: Cell<Option<usize>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, S: Scalar> {
    pub(crate) tape: &'t Tape<S>,
    pub(crate) id: usize,
}

impl<S: Scalar> std::fmt::Debug for Var<'_, S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            first_non_finite: Cell::new(None),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a trainable leaf.
    pub fn param(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push(value, Op::Leaf, true)
    }

    /// Records a detached leaf; no gradient flows into it.
    pub fn constant(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push(value, Op::Leaf, false)
    }

    pub(crate) fn push(&self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        if self.first_non_finite.get().is_none() && !value.is_finite() {
            self.first_non_finite.set(Some(id));
        }
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var { tape: self, id }
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor<S>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn needs_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    /// Fails with the first operation that produced a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite.get() {
            None => Ok(()),
            Some(id) => Err(Error::NonFinite {
                op: format!("{} (node {id})", self.nodes.borrow()[id].op.name()),
            }),
        }
    }

    fn owns(&self, var: &Var<'_, S>) -> bool {
        std::ptr::eq(self, var.tape)
    }

    /// Reverse-mode sweep from a one-element output.
    pub fn backward(&self, output: Var<'_, S>) -> Result<Gradients<S>> {
        if !self.owns(&output) {
            return Err(Error::ForeignVar);
        }
        self.check_finite()?;
        let nodes = self.nodes.borrow();
        let out_val = &nodes[output.id].value;
        if out_val.len() != 1 {
            return Err(Error::NotScalar(out_val.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; nodes.len()];
        grads[output.id] = Some(Tensor::ones(out_val.shape()));
        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            for (parent, pg) in local_grads(&nodes, &node.op, &node.value, &g)? {
                if !nodes[parent].needs_grad {
                    continue;
                }
                match &mut grads[parent] {
                    Some(acc) => {
                        for (a, &b) in acc.data_mut().iter_mut().zip(pg.data()) {
                            *a = *a + b;
                        }
                    }
                    slot @ None => *slot = Some(pg),
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients {
            tape: self as *const Tape<S> as usize,
            grads,
            shapes,
        })
    }
}

/// Gradients of a scalar output with respect to every trainable leaf.
pub struct Gradients<S> {
    tape: usize,
    grads: Vec<Option<Tensor<S>>>,
    shapes: Vec<Vec<usize>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient for `var`; zero if the output does not depend on it.
    pub fn wrt(&self, var: &Var<'_, S>) -> Result<Tensor<S>> {
        if var.tape as *const Tape<S> as usize != self.tape || var.id >= self.shapes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(self.grads[var.id]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.id])))
    }
}

fn same_shape<S: Scalar>(like: &Tensor<S>, data: Vec<S>) -> Tensor<S> {
    Tensor::new(like.shape().to_vec(), data).expect("gradient shape")
}

fn local_grads<S: Scalar>(
    nodes: &[Node<S>],
    op: &Op<S>,
    out: &Tensor<S>,
    g: &Tensor<S>,
) -> Result<Vec<(usize, Tensor<S>)>> {
    let val = |i: usize| -> &Tensor<S> { &nodes[i].value };
    let need = |i: usize| nodes[i].needs_grad;
    let unary = |a: usize, f: &dyn Fn(S, S, S) -> S| -> Vec<(usize, Tensor<S>)> {
        let x = val(a);
        let data = x
            .data()
            .iter()
            .zip(out.data())
            .zip(g.data())
            .map(|((&xi, &yi), &gi)| f(xi, yi, gi))
            .collect();
        vec![(a, same_shape(x, data))]
    };
    let res = match op {
        Op::Leaf => vec![],
        Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
        Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-S::one()))],
        Op::Mul(a, b) => {
            let mut v = Vec::new();
            if need(*a) {
                v.push((*a, g.zip_map(val(*b), |gi, bi| gi * bi)?));
            }
            if need(*b) {
                v.push((*b, g.zip_map(val(*a), |gi, ai| gi * ai)?));
            }
            v
        }
        Op::Div(a, b) => {
            let mut v = Vec::new();
            if need(*a) {
                v.push((*a, g.zip_map(val(*b), |gi, bi| gi / bi)?));
            }
            if need(*b) {
                let t = g.zip_map(out, |gi, yi| gi * yi)?;
                v.push((*b, t.zip_map(val(*b), |ti, bi| -ti / bi)?));
            }
            v
        }
        Op::Scale(a, k) => vec![(*a, g.scale(*k))],
        Op::AddScalar(a) => vec![(*a, g.clone())],
        Op::Relu(a) => unary(*a, &|x, _, gi| if x > S::zero() { gi } else { S::zero() }),
        Op::Tanh(a) => unary(*a, &|_, y, gi| gi * (S::one() - y * y)),
        Op::Sin(a) => unary(*a, &|x, _, gi| gi * x.cos()),
        Op::Cos(a) => unary(*a, &|x, _, gi| -gi * x.sin()),
        Op::Pow3(a) => unary(*a, &|x, _, gi| gi * S::lit(3.0) * x * x),
        Op::Sum(a) => vec![(*a, Tensor::full(val(*a).shape(), g.data()[0]))],
        Op::Mean(a) => {
            let n = S::from_usize(val(*a).len().max(1)).unwrap();
            vec![(*a, Tensor::full(val(*a).shape(), g.data()[0] / n))]
        }
        Op::L1Norm(a) => {
            let gi = g.data()[0];
            vec![(
                *a,
                val(*a).map(|x| {
                    if x > S::zero() {
                        gi
                    } else if x < S::zero() {
                        -gi
                    } else {
                        S::zero()
                    }
                }),
            )]
        }
        Op::L2Norm(a) => {
            let norm = out.data()[0];
            let gi = g.data()[0];
            let x = val(*a);
            if norm > S::zero() {
                vec![(*a, x.scale(gi / norm))]
            } else {
                vec![(*a, Tensor::zeros(x.shape()))]
            }
        }
        Op::RowL2Norm(a) => {
            let x = val(*a);
            let d = x.shape()[1];
            let mut data = Vec::with_capacity(x.len());
            for (b, row) in x.data().chunks(d).enumerate() {
                let norm = out.data()[b];
                let coef = if norm > S::zero() {
                    g.data()[b] / norm
                } else {
                    S::zero()
                };
                data.extend(row.iter().map(|&r| r * coef));
            }
            vec![(*a, same_shape(x, data))]
        }
        Op::Reshape(a) => vec![(*a, g.reshape(val(*a).shape())?)],
        Op::Conv2d {
            input,
            weight,
            dims,
        } => {
            let (gi, gw) = kernels::conv_backward(
                val(*input).data(),
                val(*weight).data(),
                g.data(),
                *dims,
                need(*input),
                need(*weight),
            );
            let mut v = Vec::new();
            if let Some(gi) = gi {
                v.push((*input, same_shape(val(*input), gi)));
            }
            if let Some(gw) = gw {
                v.push((*weight, same_shape(val(*weight), gw)));
            }
            v
        }
        Op::ChannelBias { x, bias } => {
            let shape = val(*x).shape();
            let c = shape[1];
            let inner: usize = shape[2..].iter().product();
            let mut gb = vec![S::zero(); c];
            for (i, chunk) in g.data().chunks(inner).enumerate() {
                gb[i % c] = gb[i % c] + chunk.iter().copied().fold(S::zero(), |a, b| a + b);
            }
            vec![(*x, g.clone()), (*bias, same_shape(val(*bias), gb))]
        }
        Op::Concat { parts, widths } => {
            let shape = out.shape();
            let (outer, total) = (shape[0], shape[1]);
            let inner: usize = shape[2..].iter().product();
            let mut v = Vec::new();
            let mut start = 0;
            for (&p, &wdt) in parts.iter().zip(widths) {
                if need(p) {
                    let mut data = Vec::with_capacity(outer * wdt * inner);
                    for o in 0..outer {
                        let base = (o * total + start) * inner;
                        data.extend_from_slice(&g.data()[base..base + wdt * inner]);
                    }
                    v.push((p, same_shape(val(p), data)));
                }
                start += wdt;
            }
            v
        }
        Op::Slice { x, start } => {
            let xs = val(*x).shape();
            let (outer, total) = (xs[0], xs[1]);
            let inner: usize = xs[2..].iter().product();
            let wdt = out.shape()[1];
            let mut data = vec![S::zero(); val(*x).len()];
            for o in 0..outer {
                let dst = (o * total + start) * inner;
                let src = o * wdt * inner;
                data[dst..dst + wdt * inner].copy_from_slice(&g.data()[src..src + wdt * inner]);
            }
            vec![(*x, same_shape(val(*x), data))]
        }
        Op::LocalConv {
            kernels: kid,
            field,
            dims,
        } => {
            let (gk, gf) = kernels::local_backward(
                val(*kid).data(),
                val(*field).data(),
                g.data(),
                *dims,
                need(*kid),
                need(*field),
            );
            let mut v = Vec::new();
            if let Some(gk) = gk {
                v.push((*kid, same_shape(val(*kid), gk)));
            }
            if let Some(gf) = gf {
                v.push((*field, same_shape(val(*field), gf)));
            }
            v
        }
        Op::Matmul { a, b, m, k, n } => {
            let (av, bv, gd) = (val(*a).data(), val(*b).data(), g.data());
            let mut v = Vec::new();
            if need(*a) {
                let mut ga = vec![S::zero(); m * k];
                for i in 0..*m {
                    for j in 0..*n {
                        let gij = gd[i * n + j];
                        for l in 0..*k {
                            ga[i * k + l] = ga[i * k + l] + gij * bv[l * n + j];
                        }
                    }
                }
                v.push((*a, same_shape(val(*a), ga)));
            }
            if need(*b) {
                let mut gb = vec![S::zero(); k * n];
                for i in 0..*m {
                    for l in 0..*k {
                        let ail = av[i * k + l];
                        for j in 0..*n {
                            gb[l * n + j] = gb[l * n + j] + ail * gd[i * n + j];
                        }
                    }
                }
                v.push((*b, same_shape(val(*b), gb)));
            }
            v
        }
        Op::Dft2Re(a) => vec![(*a, spectral::dft2(g)?.re)],
        Op::Dft2Im(a) => vec![(*a, spectral::dft2(g)?.im)],
        Op::Idft2Real { re, im } => {
            let shape = g.shape();
            let hw = S::from_usize(shape[shape.len() - 2] * shape[shape.len() - 1]).unwrap();
            let spec = spectral::dft2(g)?;
            let inv = S::one() / hw;
            vec![(*re, spec.re.scale(inv)), (*im, spec.im.scale(inv))]
        }
        Op::ModeContract { x, w, n, ci, co, p } => {
            let (xv, wv, gd) = (val(*x).data(), val(*w).data(), g.data());
            let mut v = Vec::new();
            if need(*x) {
                let mut gx = vec![S::zero(); n * ci * p];
                for b in 0..*n {
                    for i in 0..*ci {
                        let dst = &mut gx[(b * ci + i) * p..(b * ci + i + 1) * p];
                        for o in 0..*co {
                            let gs = &gd[(b * co + o) * p..(b * co + o + 1) * p];
                            let ws = &wv[(i * co + o) * p..(i * co + o + 1) * p];
                            for ((d, &gg), &ww) in dst.iter_mut().zip(gs).zip(ws) {
                                *d = *d + gg * ww;
                            }
                        }
                    }
                }
                v.push((*x, same_shape(val(*x), gx)));
            }
            if need(*w) {
                let mut gw = vec![S::zero(); ci * co * p];
                for b in 0..*n {
                    for i in 0..*ci {
                        let xs = &xv[(b * ci + i) * p..(b * ci + i + 1) * p];
                        for o in 0..*co {
                            let gs = &gd[(b * co + o) * p..(b * co + o + 1) * p];
                            let dst = &mut gw[(i * co + o) * p..(i * co + o + 1) * p];
                            for ((d, &gg), &xx) in dst.iter_mut().zip(gs).zip(xs) {
                                *d = *d + gg * xx;
                            }
                        }
                    }
                }
                v.push((*w, same_shape(val(*w), gw)));
            }
            v
        }
        Op::EmbedModes { w, modes, h, wd } => {
            let side = 2 * modes - 1;
            let wv = val(*w);
            let planes = wv.len() / (side * side);
            let mut data = Vec::with_capacity(wv.len());
            for pl in 0..planes {
                for a in 0..side {
                    let row = mode_bin(a, *modes, *h);
                    for b in 0..side {
                        let col = mode_bin(b, *modes, *wd);
                        data.push(g.data()[pl * h * wd + row * wd + col]);
                    }
                }
            }
            vec![(*w, same_shape(wv, data))]
        }
    };
    Ok(res)
}

/// Grid bin of compact mode index `a` in `0..2m-1` (signed frequency `a - (m - 1)`).
pub(crate) fn mode_bin(a: usize, modes: usize, n: usize) -> usize {
    let signed = a as i64 - (modes as i64 - 1);
    signed.rem_euclid(n as i64) as usize
}
