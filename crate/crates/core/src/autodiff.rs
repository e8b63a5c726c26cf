//! Reverse-mode differentiation over the tensor kernels.
//!
//! Algorithms that need gradients are written once against [`Backend`]. The
//! [`Eager`] backend just computes values; the [`Tape`] backend records every
//! operation so that [`Tape::backward`] can propagate adjoints from any set of
//! output seeds back to the leaves.
//!
//! Normalisations that only rescale an intermediate by a positive constant are
//! expressed through [`Backend::scale`] with a value-derived constant. Every
//! quantity differentiated in this crate is invariant under such rescalings,
//! so treating the constant as fixed gives the exact gradient.

use crate::error::{Error, Result};
use crate::tensor::{self, inverse_permutation, DenseTensor};

/// Singular-value pairs with `|s_i - s_j| <= SVD_DEGENERACY_TOL * s_max` are
/// treated as degenerate in the SVD adjoint and their `1/(s_j - s_i)` term is
/// dropped. That is exact for losses that see the kept singular vectors only
/// through their span (boundary compression builds its carry as `U_k^T A` for
/// this reason; doubled-layer matrices have exactly degenerate spectra).
/// Genuine gaps in PEPS bonds are orders of magnitude larger.
pub const SVD_DEGENERACY_TOL: f64 = 1e-12;

pub trait Backend {
    type T: Clone;

    fn val<'a>(&'a self, t: &'a Self::T) -> &'a DenseTensor;

    /// Wraps a value that does not depend on any differentiated input.
    fn lift(&mut self, t: DenseTensor) -> Self::T;

    fn contract(&mut self, a: &Self::T, b: &Self::T, axes_a: &[usize], axes_b: &[usize]) -> Result<Self::T>;
    fn permute(&mut self, a: &Self::T, perm: &[usize]) -> Result<Self::T>;
    fn reshape(&mut self, a: &Self::T, shape: &[usize]) -> Result<Self::T>;
    /// Multiplication by a constant.
    fn scale(&mut self, a: &Self::T, c: f64) -> Self::T;
    /// Multiplies `a` along `axis` by the vector `w`.
    fn scale_axis(&mut self, a: &Self::T, axis: usize, w: &Self::T) -> Result<Self::T>;
    /// Elementwise reciprocal; entries at or below `cutoff * max|w|` map to 0.
    fn recip(&mut self, w: &Self::T, cutoff: f64) -> Self::T;
    /// Elementwise square.
    fn square(&mut self, w: &Self::T) -> Self::T;
    fn slice(&mut self, a: &Self::T, axis: usize, start: usize, len: usize) -> Result<Self::T>;
    /// `sum_k c_k t_k` over same-shaped tensors.
    fn linear_combination(&mut self, terms: &[(f64, Self::T)]) -> Result<Self::T>;
    /// Quotient of two single-element tensors.
    fn divide(&mut self, num: &Self::T, den: &Self::T) -> Result<Self::T>;
    /// Full thin SVD of a matrix: `(U, s, Vt)`.
    fn svd(&mut self, m: &Self::T) -> Result<(Self::T, Self::T, Self::T)>;
    /// Thin QR. Only available on backends that do not record gradients.
    fn qr(&mut self, m: &Self::T) -> Result<(Self::T, Self::T)>;
    fn supports_qr(&self) -> bool;
}

/// Plain evaluation without recording.
#[derive(Default, Debug, Clone, Copy)]
pub struct Eager;

/// Plain evaluation that takes exactly the code paths of [`Tape`] (no QR
/// reductions), so values agree bit for bit with a recorded recomputation.
#[derive(Default, Debug, Clone, Copy)]
pub struct EagerNoQr;

macro_rules! eager_backend {
    ($ty:ty, $qr:expr) => {
    impl Backend for $ty {
        type T = DenseTensor;

        fn val<'a>(&'a self, t: &'a DenseTensor) -> &'a DenseTensor {
            t
        }

        fn lift(&mut self, t: DenseTensor) -> DenseTensor {
            t
        }

        fn contract(&mut self, a: &DenseTensor, b: &DenseTensor, axes_a: &[usize], axes_b: &[usize]) -> Result<DenseTensor> {
            tensor::contract(a, b, axes_a, axes_b)
        }

        fn permute(&mut self, a: &DenseTensor, perm: &[usize]) -> Result<DenseTensor> {
            a.permute(perm)
        }

        fn reshape(&mut self, a: &DenseTensor, shape: &[usize]) -> Result<DenseTensor> {
            a.reshape(shape)
        }

        fn scale(&mut self, a: &DenseTensor, c: f64) -> DenseTensor {
            a.scaled(c)
        }

        fn scale_axis(&mut self, a: &DenseTensor, axis: usize, w: &DenseTensor) -> Result<DenseTensor> {
            a.scale_axis(axis, w.data())
        }

        fn recip(&mut self, w: &DenseTensor, cutoff: f64) -> DenseTensor {
            recip_value(w, cutoff)
        }

        fn square(&mut self, w: &DenseTensor) -> DenseTensor {
            DenseTensor::new(w.shape().to_vec(), w.data().iter().map(|x| x * x).collect()).unwrap()
        }

        fn slice(&mut self, a: &DenseTensor, axis: usize, start: usize, len: usize) -> Result<DenseTensor> {
            a.slice_axis(axis, start, len)
        }

        fn linear_combination(&mut self, terms: &[(f64, DenseTensor)]) -> Result<DenseTensor> {
            linear_combination_value(terms.iter().map(|(c, t)| (*c, t)))
        }

        fn divide(&mut self, num: &DenseTensor, den: &DenseTensor) -> Result<DenseTensor> {
            Ok(DenseTensor::scalar(num.item() / den.item()))
        }

        fn svd(&mut self, m: &DenseTensor) -> Result<(DenseTensor, DenseTensor, DenseTensor)> {
            let d = tensor::svd(m)?;
            Ok((d.u, DenseTensor::vector(d.s), d.vt))
        }

        fn qr(&mut self, m: &DenseTensor) -> Result<(DenseTensor, DenseTensor)> {
            if !$qr {
                return Err(Error::Kernel("QR disabled on this backend".into()));
            }
            tensor::qr(m)
        }

        fn supports_qr(&self) -> bool {
            $qr
        }
    }
    };
}

eager_backend!(Eager, true);
eager_backend!(EagerNoQr, false);

fn recip_value(w: &DenseTensor, cutoff: f64) -> DenseTensor {
    let thr = cutoff * w.max_abs();
    let data = w.data().iter().map(|&x| if x.abs() > thr { 1.0 / x } else { 0.0 }).collect();
    DenseTensor::new(w.shape().to_vec(), data).unwrap()
}

fn linear_combination_value<'a>(mut terms: impl Iterator<Item = (f64, &'a DenseTensor)>) -> Result<DenseTensor> {
    let (c0, t0) = terms.next().ok_or_else(|| Error::Shape("empty linear combination".into()))?;
    let mut acc = t0.scaled(c0);
    for (c, t) in terms {
        acc.axpy(c, t)?;
    }
    Ok(acc)
}

/// Handle to a recorded value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Contract { a: usize, b: usize, axes_a: Vec<usize>, axes_b: Vec<usize> },
    Permute { a: usize, perm: Vec<usize> },
    Reshape { a: usize },
    Scale { a: usize, c: f64 },
    ScaleAxis { a: usize, axis: usize, w: usize },
    Recip { w: usize },
    Square { w: usize },
    Slice { a: usize, axis: usize, start: usize },
    Combine { terms: Vec<(f64, usize)> },
    Divide { num: usize, den: usize },
    /// `U` output of an SVD; `s` and `Vt` are the next two nodes.
    Svd { a: usize },
    SvdPart,
}

#[derive(Debug)]
struct Node {
    value: DenseTensor,
    op: Op,
}

/// Recording backend.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<DenseTensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&DenseTensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adjoint of `v`, or zeros of the given shape if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> DenseTensor {
        self.get(v).cloned().unwrap_or_else(|| DenseTensor::zeros(shape))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a differentiable input.
    pub fn leaf(&mut self, t: DenseTensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &DenseTensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: DenseTensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Propagates the given output adjoints back through the tape.
    pub fn backward(&self, seeds: &[(Var, DenseTensor)]) -> Result<Gradients> {
        let mut grads: Vec<Option<DenseTensor>> = vec![None; self.nodes.len()];
        for (v, g) in seeds {
            if g.shape() != self.nodes[v.0].value.shape() {
                return Err(Error::Shape(format!(
                    "seed shape {:?} does not match value shape {:?}",
                    g.shape(),
                    self.nodes[v.0].value.shape()
                )));
            }
            accumulate(&mut grads, v.0, g.clone())?;
        }
        for id in (0..self.nodes.len()).rev() {
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf | Op::SvdPart => continue,
                Op::Svd { a } => {
                    let gu = grads[id].take();
                    let gs = grads[id + 1].take();
                    let gv = grads[id + 2].take();
                    if gu.is_none() && gs.is_none() && gv.is_none() {
                        continue;
                    }
                    let ga = svd_adjoint(
                        &node.value,
                        &self.nodes[id + 1].value,
                        &self.nodes[id + 2].value,
                        gu.as_ref(),
                        gs.as_ref(),
                        gv.as_ref(),
                    )?;
                    accumulate(&mut grads, *a, ga)?;
                    continue;
                }
                _ => {}
            }
            let Some(g) = grads[id].take() else { continue };
            match &node.op {
                Op::Leaf | Op::SvdPart | Op::Svd { .. } => unreachable!(),
                Op::Contract { a, b, axes_a, axes_b } => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let (ga, gb) = contract_adjoint(av, bv, axes_a, axes_b, &g)?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::Permute { a, perm } => {
                    accumulate(&mut grads, *a, g.permute(&inverse_permutation(perm))?)?;
                }
                Op::Reshape { a } => {
                    let shape = self.nodes[*a].value.shape().to_vec();
                    accumulate(&mut grads, *a, g.into_reshaped(&shape)?)?;
                }
                Op::Scale { a, c } => {
                    accumulate(&mut grads, *a, g.scaled(*c))?;
                }
                Op::ScaleAxis { a, axis, w } => {
                    let av = &self.nodes[*a].value;
                    let wv = &self.nodes[*w].value;
                    let ga = g.scale_axis(*axis, wv.data())?;
                    let gw = axis_inner_product(&g, av, *axis);
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *w, gw)?;
                }
                Op::Recip { w } => {
                    let out = &node.value;
                    // d(1/x) = -1/x^2 = -out^2 (zero where the entry was cut)
                    let data = g.data().iter().zip(out.data()).map(|(gi, oi)| -gi * oi * oi).collect();
                    accumulate(&mut grads, *w, DenseTensor::new(g.shape().to_vec(), data)?)?;
                }
                Op::Square { w } => {
                    let wv = &self.nodes[*w].value;
                    let data = g.data().iter().zip(wv.data()).map(|(gi, wi)| 2.0 * gi * wi).collect();
                    accumulate(&mut grads, *w, DenseTensor::new(g.shape().to_vec(), data)?)?;
                }
                Op::Slice { a, axis, start } => {
                    let full = self.nodes[*a].value.shape()[*axis];
                    accumulate(&mut grads, *a, g.pad_axis(*axis, *start, full)?)?;
                }
                Op::Combine { terms } => {
                    for (c, t) in terms {
                        accumulate(&mut grads, *t, g.scaled(*c))?;
                    }
                }
                Op::Divide { num, den } => {
                    let n = self.nodes[*num].value.item();
                    let d = self.nodes[*den].value.item();
                    let gq = g.item();
                    let ns = self.nodes[*num].value.shape().to_vec();
                    let ds = self.nodes[*den].value.shape().to_vec();
                    accumulate(&mut grads, *num, DenseTensor::new(ns, vec![gq / d])?)?;
                    accumulate(&mut grads, *den, DenseTensor::new(ds, vec![-gq * n / (d * d)])?)?;
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<DenseTensor>], id: usize, g: DenseTensor) -> Result<()> {
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// `out[i] = sum over all axes except `axis` of g * a`.
fn axis_inner_product(g: &DenseTensor, a: &DenseTensor, axis: usize) -> DenseTensor {
    let dim = a.shape()[axis];
    let inner: usize = a.shape()[axis + 1..].iter().product();
    let mut out = vec![0.0; dim];
    let inner = inner.max(1);
    for (chunk_idx, (gc, ac)) in g.data().chunks(inner).zip(a.data().chunks(inner)).enumerate() {
        out[chunk_idx % dim] += gc.iter().zip(ac).map(|(x, y)| x * y).sum::<f64>();
    }
    DenseTensor::vector(out)
}

fn contract_adjoint(
    a: &DenseTensor,
    b: &DenseTensor,
    axes_a: &[usize],
    axes_b: &[usize],
    g: &DenseTensor,
) -> Result<(DenseTensor, DenseTensor)> {
    let free_a: Vec<usize> = (0..a.ndim()).filter(|k| !axes_a.contains(k)).collect();
    let free_b: Vec<usize> = (0..b.ndim()).filter(|k| !axes_b.contains(k)).collect();
    let nfa = free_a.len();
    let nfb = free_b.len();

    // g[free_a, free_b] x b[..] over free_b -> [free_a, contracted b axes ascending]
    let g_axes_b: Vec<usize> = (nfa..nfa + nfb).collect();
    let ra = tensor::contract(g, b, &g_axes_b, &free_b)?;
    let mut b_contracted: Vec<usize> = axes_b.to_vec();
    b_contracted.sort_unstable();
    let layout_a: Vec<usize> = free_a
        .iter()
        .copied()
        .chain(b_contracted.iter().map(|bj| axes_a[axes_b.iter().position(|x| x == bj).unwrap()]))
        .collect();
    let ga = ra.permute(&inverse_permutation(&layout_a))?;

    // a[..] x g over free_a -> [contracted a axes ascending, free_b]
    let g_axes_a: Vec<usize> = (0..nfa).collect();
    let rb = tensor::contract(a, g, &free_a, &g_axes_a)?;
    let mut a_contracted: Vec<usize> = axes_a.to_vec();
    a_contracted.sort_unstable();
    let layout_b: Vec<usize> = a_contracted
        .iter()
        .map(|ai| axes_b[axes_a.iter().position(|x| x == ai).unwrap()])
        .chain(free_b.iter().copied())
        .collect();
    let gb = rb.permute(&inverse_permutation(&layout_b))?;
    Ok((ga, gb))
}

/// Adjoint of the thin SVD `A = U diag(s) Vt` for gauge-invariant losses.
fn svd_adjoint(
    u: &DenseTensor,
    s: &DenseTensor,
    vt: &DenseTensor,
    gu: Option<&DenseTensor>,
    gs: Option<&DenseTensor>,
    gvt: Option<&DenseTensor>,
) -> Result<DenseTensor> {
    let (m, r) = (u.shape()[0], u.shape()[1]);
    let n = vt.shape()[1];
    let s = s.data();
    let smax = s.first().copied().unwrap_or(0.0);
    let tiny = f64::MIN_POSITIVE.max(1e-300 * smax);
    let sinv: Vec<f64> = s.iter().map(|&x| if x > tiny { 1.0 / x } else { 0.0 }).collect();
    let v = vt.t()?; // n x r
    let gv = gvt.map(|g| g.t()).transpose()?; // n x r

    // Inner r x r core. Off-diagonal entries
    //   (a_ij s_j + s_i b_ij) / (s_j^2 - s_i^2),  a = X - X^T, X = U^T gU,
    //                                             b = Y - Y^T, Y = V^T gV,
    // are split as (a+b)/(2(s_j - s_i)) + (a-b)/(2(s_j + s_i)) so that the
    // first part, which vanishes inside degenerate blocks for gauge-invariant
    // losses, can be dropped there while the second part is kept.
    let antisym = |g: Option<&DenseTensor>, basis: &DenseTensor| -> Result<Vec<f64>> {
        let mut out = vec![0.0; r * r];
        if let Some(g) = g {
            let x = tensor::contract(basis, g, &[0], &[0])?; // r x r
            let x = x.data();
            for i in 0..r {
                for j in 0..r {
                    out[i * r + j] = x[i * r + j] - x[j * r + i];
                }
            }
        }
        Ok(out)
    };
    let a = antisym(gu, u)?;
    let b = antisym(gv.as_ref(), &v)?;
    let tol = SVD_DEGENERACY_TOL * smax;
    let inv = |d: f64, t: f64| if d.abs() <= t { 0.0 } else { 1.0 / d };
    let mut core = vec![0.0; r * r];
    for i in 0..r {
        for j in 0..r {
            let k = i * r + j;
            if i != j {
                core[k] = 0.5 * (a[k] + b[k]) * inv(s[j] - s[i], tol) + 0.5 * (a[k] - b[k]) * inv(s[j] + s[i], tiny);
            } else if let Some(gs) = gs {
                core[k] = gs.data()[i];
            }
        }
    }
    let core = DenseTensor::matrix(r, r, core)?;
    let mut ga = tensor::matmul2(&tensor::matmul2(u, &core)?, vt)?;

    if let Some(gu) = gu {
        // (I - U U^T) gU S^-1 Vt
        let proj = tensor::matmul2(u, &tensor::contract(u, gu, &[0], &[0])?)?;
        let mut perp = gu.clone();
        perp.axpy(-1.0, &proj)?;
        let perp = perp.scale_axis(1, &sinv)?;
        ga.add_assign(&tensor::matmul2(&perp, vt)?)?;
    }
    if let Some(gv) = &gv {
        // U S^-1 gV^T (I - V V^T)
        let proj = tensor::matmul2(&v, &tensor::contract(&v, gv, &[0], &[0])?)?;
        let mut perp = gv.clone();
        perp.axpy(-1.0, &proj)?; // n x r
        let us = u.scale_axis(1, &sinv)?; // m x r
        ga.add_assign(&tensor::contract(&us, &perp, &[1], &[1])?)?;
    }
    debug_assert_eq!(ga.shape(), &[m, n]);
    Ok(ga)
}

impl Backend for Tape {
    type T = Var;

    fn val<'a>(&'a self, t: &'a Var) -> &'a DenseTensor {
        &self.nodes[t.0].value
    }

    fn lift(&mut self, t: DenseTensor) -> Var {
        self.push(t, Op::Leaf)
    }

    fn contract(&mut self, a: &Var, b: &Var, axes_a: &[usize], axes_b: &[usize]) -> Result<Var> {
        let v = tensor::contract(self.value(*a), self.value(*b), axes_a, axes_b)?;
        Ok(self.push(v, Op::Contract { a: a.0, b: b.0, axes_a: axes_a.to_vec(), axes_b: axes_b.to_vec() }))
    }

    fn permute(&mut self, a: &Var, perm: &[usize]) -> Result<Var> {
        let v = self.value(*a).permute(perm)?;
        Ok(self.push(v, Op::Permute { a: a.0, perm: perm.to_vec() }))
    }

    fn reshape(&mut self, a: &Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(*a).reshape(shape)?;
        Ok(self.push(v, Op::Reshape { a: a.0 }))
    }

    fn scale(&mut self, a: &Var, c: f64) -> Var {
        let v = self.value(*a).scaled(c);
        self.push(v, Op::Scale { a: a.0, c })
    }

    fn scale_axis(&mut self, a: &Var, axis: usize, w: &Var) -> Result<Var> {
        let v = self.value(*a).scale_axis(axis, self.value(*w).data())?;
        Ok(self.push(v, Op::ScaleAxis { a: a.0, axis, w: w.0 }))
    }

    fn recip(&mut self, w: &Var, cutoff: f64) -> Var {
        let v = recip_value(self.value(*w), cutoff);
        self.push(v, Op::Recip { w: w.0 })
    }

    fn square(&mut self, w: &Var) -> Var {
        let wv = self.value(*w);
        let v = DenseTensor::new(wv.shape().to_vec(), wv.data().iter().map(|x| x * x).collect()).unwrap();
        self.push(v, Op::Square { w: w.0 })
    }

    fn slice(&mut self, a: &Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let v = self.value(*a).slice_axis(axis, start, len)?;
        Ok(self.push(v, Op::Slice { a: a.0, axis, start }))
    }

    fn linear_combination(&mut self, terms: &[(f64, Var)]) -> Result<Var> {
        let v = linear_combination_value(terms.iter().map(|(c, t)| (*c, &self.nodes[t.0].value)))?;
        Ok(self.push(v, Op::Combine { terms: terms.iter().map(|(c, t)| (*c, t.0)).collect() }))
    }

    fn divide(&mut self, num: &Var, den: &Var) -> Result<Var> {
        let v = DenseTensor::scalar(self.value(*num).item() / self.value(*den).item());
        Ok(self.push(v, Op::Divide { num: num.0, den: den.0 }))
    }

    fn svd(&mut self, m: &Var) -> Result<(Var, Var, Var)> {
        let d = tensor::svd(self.value(*m))?;
        let u = self.push(d.u, Op::Svd { a: m.0 });
        let s = self.push(DenseTensor::vector(d.s), Op::SvdPart);
        let vt = self.push(d.vt, Op::SvdPart);
        Ok((u, s, vt))
    }

    fn qr(&mut self, _m: &Var) -> Result<(Var, Var)> {
        Err(Error::Kernel("QR is not differentiable on the recording backend".into()))
    }

    fn supports_qr(&self) -> bool {
        false
    }
}
