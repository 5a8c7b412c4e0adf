//! Kernels, moment matrices and moment-constrained stencils.
//!
//! A kernel `K(s,t)`, `s,t in [-L, L]`, acts on a periodic field as
//! `sum K(s,t) f(x + s dx, y + t dy)`; `s` runs along the first spatial axis.
//! Its moment matrix is `M(u,v) = sum K(s,t) s^u t^v dx^u dy^v / (u! v!)`, or
//! `M = Q_x K Q_y^T` with [`vandermonde_factor`]. Everything here is generic
//! over [`MomentScalar`], so the same code runs in exact rational arithmetic.

use crate::error::{Error, Result};
use crate::scalar::{MomentScalar, Scalar};
use crate::tensor::Tensor;

/// Dense square matrix in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<S> {
    n: usize,
    data: Vec<S>,
}

impl<S: MomentScalar> Matrix<S> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![S::zero(); n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn from_vec(n: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::InvalidShape {
                shape: vec![data.len()],
                reason: format!("expected {n}x{n} entries"),
            });
        }
        Ok(Self { n, data })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.n + j].clone()
    }

    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.n + j] = v;
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Self) -> Self {
        let n = self.n;
        Self::from_fn(n, |i, j| {
            (0..n).fold(S::zero(), |acc, k| acc + self.get(i, k) * other.get(k, j))
        })
    }

    /// Product of the pivots of a partial-pivot LU factorization.
    pub fn determinant(&self) -> S {
        match Lu::factor(self) {
            Ok(lu) => lu.determinant(),
            Err(_) => S::zero(),
        }
    }
}

/// Partial-pivot LU factorization `P A = L U`.
#[derive(Clone, Debug)]
pub struct Lu<S> {
    n: usize,
    lu: Vec<S>,
    perm: Vec<usize>,
    swaps: usize,
}

impl<S: MomentScalar> Lu<S> {
    pub fn factor(a: &Matrix<S>) -> Result<Self> {
        let n = a.n;
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut swaps = 0;
        let scale = lu
            .iter()
            .map(|v| v.magnitude())
            .fold(S::zero(), |m, v| if v > m { v } else { m });
        for col in 0..n {
            let mut piv = col;
            for row in col + 1..n {
                if lu[row * n + col].magnitude() > lu[piv * n + col].magnitude() {
                    piv = row;
                }
            }
            if lu[piv * n + col].is_negligible(&scale) {
                return Err(Error::Singular(format!("pivot {col} of a {n}x{n} system vanishes")));
            }
            if piv != col {
                for j in 0..n {
                    lu.swap(col * n + j, piv * n + j);
                }
                perm.swap(col, piv);
                swaps += 1;
            }
            let p = lu[col * n + col].clone();
            for row in col + 1..n {
                let f = lu[row * n + col].clone() / p.clone();
                lu[row * n + col] = f.clone();
                for j in col + 1..n {
                    let upd = lu[row * n + j].clone() - f.clone() * lu[col * n + j].clone();
                    lu[row * n + j] = upd;
                }
            }
        }
        Ok(Self { n, lu, perm, swaps })
    }

    pub fn determinant(&self) -> S {
        let d = (0..self.n).fold(S::one(), |acc, i| acc * self.lu[i * self.n + i].clone());
        if self.swaps % 2 == 1 {
            -d
        } else {
            d
        }
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &[S]) -> Vec<S> {
        let n = self.n;
        let mut x: Vec<S> = self.perm.iter().map(|&p| b[p].clone()).collect();
        for i in 0..n {
            for j in 0..i {
                let v = x[i].clone() - self.lu[i * n + j].clone() * x[j].clone();
                x[i] = v;
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let v = x[i].clone() - self.lu[i * n + j].clone() * x[j].clone();
                x[i] = v;
            }
            x[i] = x[i].clone() / self.lu[i * n + i].clone();
        }
        x
    }

    /// Solves `A X = B` column by column.
    pub fn solve_matrix(&self, b: &Matrix<S>) -> Matrix<S> {
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for j in 0..n {
            let col: Vec<S> = (0..n).map(|i| b.get(i, j)).collect();
            for (i, v) in self.solve(&col).into_iter().enumerate() {
                out.set(i, j, v);
            }
        }
        out
    }
}

/// Target derivative, truncation order and geometry of a constrained stencil.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentSpec<S> {
    pub p: usize,
    pub q: usize,
    pub r: usize,
    pub l: usize,
    pub dx: S,
    pub dy: S,
}

impl<S: MomentScalar> MomentSpec<S> {
    pub fn new(p: usize, q: usize, r: usize, l: usize, dx: S, dy: S) -> Result<Self> {
        if l == 0 {
            return Err(Error::InvalidSpec("half-width L must be at least 1".into()));
        }
        if p + q + r > 2 * l {
            return Err(Error::InvalidSpec(format!(
                "p + q + r = {} exceeds 2L = {}",
                p + q + r,
                2 * l
            )));
        }
        if !(dx > S::zero() && dy > S::zero()) {
            return Err(Error::InvalidSpec("grid spacings must be positive".into()));
        }
        Ok(Self { p, q, r, l, dx, dy })
    }

    pub fn size(&self) -> usize {
        2 * self.l + 1
    }

    /// Same derivative and order on a different grid.
    pub fn with_spacing(&self, dx: S, dy: S) -> Result<Self> {
        Self::new(self.p, self.q, self.r, self.l, dx, dy)
    }

    /// Whether moment entry `(u, v)` is pinned by the constraint.
    pub fn is_constrained(&self, u: usize, v: usize) -> bool {
        u + v <= self.p + self.q + self.r
    }

    /// Free moment positions, row-major over `(u, v)`.
    pub fn free_indices(&self) -> Vec<(usize, usize)> {
        let n = self.size();
        (0..n)
            .flat_map(|u| (0..n).map(move |v| (u, v)))
            .filter(|&(u, v)| !self.is_constrained(u, v))
            .collect()
    }

    pub fn free_param_count(&self) -> usize {
        free_param_count(self.l, self.p + self.q + self.r)
    }
}

/// `(2L+1)^2 - (d+1)(d+2)/2` where `d = p + q + r`.
pub fn free_param_count(l: usize, order: usize) -> usize {
    let n = 2 * l + 1;
    n * n - (order + 1) * (order + 2) / 2
}

/// Checked variant taking the individual orders.
pub fn free_param_count_for(l: usize, p: usize, q: usize, r: usize) -> Result<usize> {
    if l == 0 || p + q + r > 2 * l {
        return Err(Error::InvalidSpec(format!(
            "p + q + r = {} is not admissible for L = {l}",
            p + q + r
        )));
    }
    Ok(free_param_count(l, p + q + r))
}

/// `(2L+1) x (2L+1)` stencil indexed by offsets `s, t in [-L, L]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel<S> {
    l: usize,
    values: Matrix<S>,
}

/// Moment image of a kernel, indexed by `u, v in [0, 2L]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentMatrix<S> {
    l: usize,
    values: Matrix<S>,
}

fn offset(l: usize, s: i64) -> usize {
    let i = s + l as i64;
    assert!(i >= 0 && i <= 2 * l as i64, "offset {s} outside [-{l}, {l}]");
    i as usize
}

impl<S: MomentScalar> Kernel<S> {
    pub fn zeros(l: usize) -> Self {
        Self {
            l,
            values: Matrix::zeros(2 * l + 1),
        }
    }

    /// Builds from a row-major `(2L+1)^2` slice, first index `s`.
    pub fn from_vec(l: usize, values: Vec<S>) -> Result<Self> {
        Ok(Self {
            l,
            values: Matrix::from_vec(2 * l + 1, values)?,
        })
    }

    pub fn from_fn(l: usize, mut f: impl FnMut(i64, i64) -> S) -> Self {
        let li = l as i64;
        Self {
            l,
            values: Matrix::from_fn(2 * l + 1, |i, j| f(i as i64 - li, j as i64 - li)),
        }
    }

    pub fn delta(l: usize) -> Self {
        Self::from_fn(l, |s, t| if s == 0 && t == 0 { S::one() } else { S::zero() })
    }

    pub fn half_width(&self) -> usize {
        self.l
    }

    pub fn get(&self, s: i64, t: i64) -> S {
        self.values.get(offset(self.l, s), offset(self.l, t))
    }

    pub fn set(&mut self, s: i64, t: i64, v: S) {
        self.values.set(offset(self.l, s), offset(self.l, t), v);
    }

    pub fn matrix(&self) -> &Matrix<S> {
        &self.values
    }

    pub fn values(&self) -> &[S] {
        self.values.data()
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            l: self.l,
            values: Matrix {
                n: self.values.n,
                data: self.values.data.iter().cloned().map(f).collect(),
            },
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .data
            .iter()
            .zip(&other.values.data)
            .map(|(a, b)| (a.clone() - b.clone()).magnitude().approx_f64())
            .fold(0.0, f64::max)
    }
}

impl<S: Scalar> Kernel<S> {
    /// `[k, k]` tensor view.
    pub fn to_tensor(&self) -> Tensor<S> {
        let n = 2 * self.l + 1;
        Tensor::new(vec![n, n], self.values.data.clone()).expect("square kernel")
    }

    /// Applies the stencil to a periodic `nx x ny` plane (first axis `x`).
    pub fn apply_periodic(&self, field: &[S], nx: usize, ny: usize) -> Vec<S> {
        let li = self.l as i64;
        let mut out = vec![S::zero(); nx * ny];
        for i in 0..nx {
            for j in 0..ny {
                let mut acc = S::zero();
                for s in -li..=li {
                    let ii = (i as i64 + s).rem_euclid(nx as i64) as usize;
                    for t in -li..=li {
                        let jj = (j as i64 + t).rem_euclid(ny as i64) as usize;
                        acc = acc + self.get(s, t) * field[ii * ny + jj];
                    }
                }
                out[i * ny + j] = acc;
            }
        }
        out
    }
}

impl<S: MomentScalar> MomentMatrix<S> {
    pub fn zeros(l: usize) -> Self {
        Self {
            l,
            values: Matrix::zeros(2 * l + 1),
        }
    }

    pub fn from_vec(l: usize, values: Vec<S>) -> Result<Self> {
        Ok(Self {
            l,
            values: Matrix::from_vec(2 * l + 1, values)?,
        })
    }

    /// The unit matrix `E_uv`.
    pub fn unit(l: usize, u: usize, v: usize) -> Self {
        let mut m = Self::zeros(l);
        m.set(u, v, S::one());
        m
    }

    pub fn half_width(&self) -> usize {
        self.l
    }

    pub fn get(&self, u: usize, v: usize) -> S {
        self.values.get(u, v)
    }

    pub fn set(&mut self, u: usize, v: usize, x: S) {
        self.values.set(u, v, x);
    }

    pub fn values(&self) -> &[S] {
        self.values.data()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .data
            .iter()
            .zip(&other.values.data)
            .map(|(a, b)| (a.clone() - b.clone()).magnitude().approx_f64())
            .fold(0.0, f64::max)
    }

    /// Largest deviation of the constrained entries from `delta_up delta_vq`.
    pub fn constraint_residual(&self, spec: &MomentSpec<S>) -> f64 {
        let n = 2 * self.l + 1;
        let mut worst = 0.0f64;
        for u in 0..n {
            for v in 0..n {
                if spec.is_constrained(u, v) {
                    let target = if u == spec.p && v == spec.q { S::one() } else { S::zero() };
                    worst = worst.max((self.get(u, v) - target).magnitude().approx_f64());
                }
            }
        }
        worst
    }
}

fn factorial<S: MomentScalar>(n: usize) -> S {
    (1..=n as i64).fold(S::one(), |acc, k| acc * S::from_int(k))
}

fn pow<S: MomentScalar>(x: &S, n: usize) -> S {
    (0..n).fold(S::one(), |acc, _| acc * x.clone())
}

/// `Q(u, s) = s^u spacing^u / u!` for `u in [0, 2L]`, `s in [-L, L]` (`0^0 = 1`).
pub fn vandermonde_factor<S: MomentScalar>(l: usize, spacing: &S) -> Matrix<S> {
    let li = l as i64;
    Matrix::from_fn(2 * l + 1, |u, j| {
        let s = S::from_int(j as i64 - li);
        pow(&s, u) * pow(spacing, u) / factorial(u)
    })
}

fn check_half_width(l: usize, spec_l: usize) -> Result<()> {
    if l != spec_l {
        return Err(Error::ShapeMismatch {
            op: "moment",
            expected: vec![2 * spec_l + 1, 2 * spec_l + 1],
            found: vec![2 * l + 1, 2 * l + 1],
        });
    }
    Ok(())
}

/// `M = Q_x K Q_y^T`.
pub fn moment_from_kernel<S: MomentScalar>(k: &Kernel<S>, spec: &MomentSpec<S>) -> Result<MomentMatrix<S>> {
    check_half_width(k.l, spec.l)?;
    let qx = vandermonde_factor(spec.l, &spec.dx);
    let qy = vandermonde_factor(spec.l, &spec.dy);
    Ok(MomentMatrix {
        l: spec.l,
        values: qx.matmul(&k.values).matmul(&qy.transpose()),
    })
}

/// Inverse map `K = Q_x^{-1} M Q_y^{-T}` through two LU solves.
pub fn kernel_from_moment<S: MomentScalar>(m: &MomentMatrix<S>, spec: &MomentSpec<S>) -> Result<Kernel<S>> {
    check_half_width(m.l, spec.l)?;
    let lx = Lu::factor(&vandermonde_factor(spec.l, &spec.dx))?;
    let ly = Lu::factor(&vandermonde_factor(spec.l, &spec.dy))?;
    let x = lx.solve_matrix(&m.values);
    let kt = ly.solve_matrix(&x.transpose());
    Ok(Kernel {
        l: spec.l,
        values: kt.transpose(),
    })
}

/// Moment matrix with the constrained block set to `delta_up delta_vq` and the
/// free entries (row-major order of [`MomentSpec::free_indices`]) from `free`.
pub fn constrained_moment<S: MomentScalar>(spec: &MomentSpec<S>, free: &[S]) -> Result<MomentMatrix<S>> {
    let idx = spec.free_indices();
    if free.len() != idx.len() {
        return Err(Error::ShapeMismatch {
            op: "assemble_constrained_kernel",
            expected: vec![idx.len()],
            found: vec![free.len()],
        });
    }
    let mut m = MomentMatrix::zeros(spec.l);
    m.set(spec.p, spec.q, S::one());
    for (&(u, v), c) in idx.iter().zip(free) {
        m.set(u, v, c.clone());
    }
    Ok(m)
}

pub fn assemble_constrained_kernel<S: MomentScalar>(spec: &MomentSpec<S>, free: &[S]) -> Result<Kernel<S>> {
    kernel_from_moment(&constrained_moment(spec, free)?, spec)
}

/// `K'(s,t) = -K(-s,t)`.
pub fn flip_x<S: MomentScalar>(k: &Kernel<S>) -> Kernel<S> {
    Kernel::from_fn(k.l, |s, t| -k.get(-s, t))
}

/// `K'(s,t) = -K(s,-t)`.
pub fn flip_y<S: MomentScalar>(k: &Kernel<S>) -> Kernel<S> {
    Kernel::from_fn(k.l, |s, t| -k.get(s, -t))
}

/// The kernels `K0_uv = Q_x^{-1} E_uv Q_y^{-T}` for one grid geometry; every
/// kernel is linear in its moments, so `K = sum_uv M(u,v) K0_uv`.
#[derive(Clone, Debug)]
pub struct BasisBank<S> {
    l: usize,
    dx: S,
    dy: S,
    basis: Vec<Kernel<S>>,
}

impl<S: MomentScalar> BasisBank<S> {
    pub fn new(l: usize, dx: S, dy: S) -> Result<Self> {
        let spec = MomentSpec::new(0, 0, 0, l, dx.clone(), dy.clone())?;
        let n = 2 * l + 1;
        let mut basis = Vec::with_capacity(n * n);
        for u in 0..n {
            for v in 0..n {
                basis.push(kernel_from_moment(&MomentMatrix::unit(l, u, v), &spec)?);
            }
        }
        Ok(Self { l, dx, dy, basis })
    }

    pub fn half_width(&self) -> usize {
        self.l
    }

    pub fn spacing(&self) -> (S, S) {
        (self.dx.clone(), self.dy.clone())
    }

    pub fn get(&self, u: usize, v: usize) -> &Kernel<S> {
        &self.basis[u * (2 * self.l + 1) + v]
    }

    /// `sum_uv M(u,v) K0_uv`.
    pub fn kernel(&self, m: &MomentMatrix<S>) -> Kernel<S> {
        let n = 2 * self.l + 1;
        let mut out = vec![S::zero(); n * n];
        for u in 0..n {
            for v in 0..n {
                let c = m.get(u, v);
                if c == S::zero() {
                    continue;
                }
                for (o, b) in out.iter_mut().zip(self.get(u, v).values()) {
                    *o = o.clone() + c.clone() * b.clone();
                }
            }
        }
        Kernel {
            l: self.l,
            values: Matrix { n, data: out },
        }
    }
}

/// Smooth periodic function on `[0, length)^2` with one known derivative.
#[derive(Clone, Copy)]
pub struct TestFunction {
    pub length: f64,
    pub value: fn(f64, f64) -> f64,
    pub derivative: fn(f64, f64) -> f64,
}

/// Result of a grid refinement study.
#[derive(Clone, Debug)]
pub struct RefinementStudy {
    pub grids: Vec<usize>,
    pub errors: Vec<f64>,
    /// Least-squares slope of `log(error)` against `log(spacing)`; `None`
    /// when some error is exactly zero.
    pub order: Option<f64>,
}

/// Applies the kernel built by `kernel_for` at each resolution in `grids` and
/// fits the observed convergence order of the max-norm error against the
/// analytic derivative. The stencil depends on the spacing, so the builder is
/// called with the spec re-targeted to every grid.
pub fn empirical_order<F>(
    spec: &MomentSpec<f64>,
    mut kernel_for: F,
    test: &TestFunction,
    grids: &[usize],
) -> Result<RefinementStudy>
where
    F: FnMut(&MomentSpec<f64>) -> Result<Kernel<f64>>,
{
    if grids.len() < 2 {
        return Err(Error::InvalidArgument("refinement needs at least two grids".into()));
    }
    let mut errors = Vec::with_capacity(grids.len());
    for &n in grids {
        let h = test.length / n as f64;
        let local = spec.with_spacing(h, h)?;
        let k = kernel_for(&local)?;
        let field: Vec<f64> = (0..n * n)
            .map(|i| (test.value)((i / n) as f64 * h, (i % n) as f64 * h))
            .collect();
        let approx = k.apply_periodic(&field, n, n);
        let err = approx
            .iter()
            .enumerate()
            .map(|(i, a)| (a - (test.derivative)((i / n) as f64 * h, (i % n) as f64 * h)).abs())
            .fold(0.0, f64::max);
        errors.push(err);
    }
    let order = if errors.iter().all(|&e| e > 0.0) {
        let xs: Vec<f64> = grids.iter().map(|&n| (test.length / n as f64).ln()).collect();
        let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
        let mx = xs.iter().sum::<f64>() / xs.len() as f64;
        let my = ys.iter().sum::<f64>() / ys.len() as f64;
        let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let den: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        Some(num / den)
    } else {
        None
    };
    Ok(RefinementStudy {
        grids: grids.to_vec(),
        errors,
        order,
    })
}
