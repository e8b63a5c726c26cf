//! PEPS in the simple-update gauge.
//!
//! Site tensor `s` has axes `[phys, v_0, v_1, ...]` where the virtual axes
//! follow `lattice.incident(s)` (ascending edge index). Each edge carries a
//! positive, nonincreasing weight vector `λ_e`; the physical state is the
//! contraction of all site tensors with every `λ_e` inserted once on its bond.
//!
//! The algorithms are written against [`Backend`] so the same code runs plain
//! ([`Eager`]) or recorded for reverse mode ([`crate::autodiff::Tape`]).

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Backend, Eager};
use crate::circuit::{CircuitSpec, Mat4};
use crate::error::{Error, Result};
use crate::hamiltonian::{TfimHamiltonian, Term};
use crate::lattice::{Lattice, LatticeKind};
use crate::statevector::StateVector;
use crate::tensor::{discarded_weight, truncation_rank, DenseTensor, DEFAULT_CUTOFF};

/// Site tensors and bond weights of a PEPS, generic over the backend value.
#[derive(Clone, Debug)]
pub struct Net<T> {
    pub tensors: Vec<T>,
    pub weights: Vec<T>,
}

impl Net<DenseTensor> {
    /// Registers every tensor and weight with the backend.
    pub fn lift<B: Backend>(&self, b: &mut B) -> Net<B::T> {
        Net {
            tensors: self.tensors.iter().map(|t| b.lift(t.clone())).collect(),
            weights: self.weights.iter().map(|t| b.lift(t.clone())).collect(),
        }
    }
}

impl<T> Net<T> {
    pub fn values<B: Backend<T = T>>(&self, b: &B) -> Net<DenseTensor> {
        Net {
            tensors: self.tensors.iter().map(|t| b.val(t).clone()).collect(),
            weights: self.weights.iter().map(|t| b.val(t).clone()).collect(),
        }
    }
}

/// A PEPS together with its lattice.
#[derive(Clone, Debug)]
pub struct PepsState {
    lattice: Lattice,
    net: Net<DenseTensor>,
    log_norm: f64,
}

/// Bookkeeping produced by [`apply_circuit`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvolutionLog {
    /// Discarded weight of every gate in slot order.
    pub discarded: Vec<f64>,
    /// Sum of all discarded weights (including regauge passes).
    pub cumulative_truncation: f64,
    /// Wall-clock seconds spent per layer.
    pub layer_seconds: Vec<f64>,
}

pub fn gate_tensor(g: &Mat4) -> DenseTensor {
    DenseTensor::new(vec![2, 2, 2, 2], g.iter().flatten().copied().collect()).unwrap()
}

fn identity_gate() -> DenseTensor {
    DenseTensor::from_fn(&[2, 2, 2, 2], |i| if i[0] == i[2] && i[1] == i[3] { 1.0 } else { 0.0 })
}

fn pauli_x() -> DenseTensor {
    DenseTensor::matrix(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap()
}

fn pauli_z_diag() -> DenseTensor {
    DenseTensor::vector(vec![1.0, -1.0])
}

fn axis_of(lat: &Lattice, site: usize, edge: usize) -> Result<usize> {
    lat.incident(site)
        .iter()
        .position(|&e| e == edge)
        .map(|k| k + 1)
        .ok_or_else(|| Error::Shape(format!("edge {edge} is not incident to site {site}")))
}

/// Divides by the largest entry (a positive constant) and returns `ln` of it.
fn renormalize<B: Backend>(b: &mut B, t: &B::T) -> (B::T, f64) {
    let m = b.val(t).max_abs();
    if m > 0.0 && m.is_finite() {
        (b.scale(t, 1.0 / m), m.ln())
    } else {
        (t.clone(), 0.0)
    }
}

/// Site tensor with the environment weights of every incident edge except
/// `skip` absorbed, permuted to `[others..., phys, skip]`.
fn absorb_env<B: Backend>(
    b: &mut B,
    lat: &Lattice,
    net: &Net<B::T>,
    site: usize,
    skip: usize,
) -> Result<(B::T, Vec<usize>)> {
    let mut t = net.tensors[site].clone();
    let mut others = Vec::new();
    let mut skip_axis = 0;
    for (k, &e) in lat.incident(site).iter().enumerate() {
        if e == skip {
            skip_axis = k + 1;
        } else {
            t = b.scale_axis(&t, k + 1, &net.weights[e])?;
            others.push(k + 1);
        }
    }
    let mut perm = others.clone();
    perm.push(0);
    perm.push(skip_axis);
    Ok((b.permute(&t, &perm)?, perm))
}

/// Inverse of [`absorb_env`] for an updated tensor in `[others..., phys, skip]`
/// layout: restores the axis order and divides the environment back out.
fn restore_env<B: Backend>(
    b: &mut B,
    lat: &Lattice,
    net: &Net<B::T>,
    site: usize,
    skip: usize,
    t: &B::T,
    perm: &[usize],
    cutoff: f64,
) -> Result<B::T> {
    let mut t = b.permute(t, &crate::tensor::inverse_permutation(perm))?;
    for (k, &e) in lat.incident(site).iter().enumerate() {
        if e != skip {
            let w = &net.weights[e];
            if b.val(w).data().iter().any(|&x| x <= cutoff * b.val(w).max_abs()) {
                warn!("bond weight on edge {e} below the pseudo-inverse cutoff; dropping that direction");
            }
            let inv = b.recip(w, cutoff);
            t = b.scale_axis(&t, k + 1, &inv)?;
        }
    }
    Ok(t)
}

/// One simple-update step of a two-site operator `op[(a',b'),(a,b)]` (shape
/// `[2,2,2,2]`) on `edge`, truncating the bond to `chi`.
///
/// Returns the discarded weight and the log of the renormalisation factors.
pub fn su_step<B: Backend>(
    b: &mut B,
    lat: &Lattice,
    net: &mut Net<B::T>,
    edge: usize,
    op: &B::T,
    chi: usize,
    cutoff: f64,
) -> Result<(f64, f64)> {
    let (sa, sb) = lat.edge(edge);
    let (ta, perm_a) = absorb_env(b, lat, net, sa, edge)?;
    let (tb, perm_b) = absorb_env(b, lat, net, sb, edge)?;
    let shape_a = b.val(&ta).shape().to_vec();
    let shape_b = b.val(&tb).shape().to_vec();
    let de = *shape_a.last().unwrap();
    let ma: usize = shape_a[..shape_a.len() - 2].iter().product();
    let mb: usize = shape_b[..shape_b.len() - 2].iter().product();

    // Reduce each side to the part touching the bond.
    let reduce = |b: &mut B, t: &B::T, m: usize| -> Result<(Option<B::T>, B::T, usize)> {
        if b.supports_qr() && m > 2 * de {
            let mat = b.reshape(t, &[m, 2 * de])?;
            let (q, r) = b.qr(&mat)?;
            let rank = b.val(&r).shape()[0];
            Ok((Some(q), b.reshape(&r, &[rank, 2, de])?, rank))
        } else {
            Ok((None, b.reshape(t, &[m, 2, de])?, m))
        }
    };
    let (qa, ra, na) = reduce(b, &ta, ma)?;
    let (qb, rb, nb) = reduce(b, &tb, mb)?;

    let ra_w = b.scale_axis(&ra, 2, &net.weights[edge])?;
    let theta = b.contract(&ra_w, &rb, &[2], &[2])?; // (na, pa, nb, pb)
    let theta = b.contract(op, &theta, &[2, 3], &[1, 3])?; // (pa', pb', na, nb)
    let theta = b.permute(&theta, &[2, 0, 3, 1])?;
    let theta = b.reshape(&theta, &[na * 2, nb * 2])?;
    let (u, s, vt) = b.svd(&theta)?;
    let sv = b.val(&s).data().to_vec();
    if sv.first().copied().unwrap_or(0.0) <= 0.0 {
        return Err(Error::Numerical(format!("two-site tensor on edge {edge} vanished")));
    }
    let k = truncation_rank(&sv, chi, cutoff);
    let dw = discarded_weight(&sv, k);
    let u = b.slice(&u, 1, 0, k)?;
    let vt = b.slice(&vt, 0, 0, k)?;
    let s = b.slice(&s, 0, 0, k)?;
    let snorm = sv[..k].iter().map(|x| x * x).sum::<f64>().sqrt();
    net.weights[edge] = b.scale(&s, 1.0 / snorm);

    let new_ra = b.reshape(&u, &[na, 2, k])?;
    let vt_t = b.permute(&vt, &[1, 0])?;
    let new_rb = b.reshape(&vt_t, &[nb, 2, k])?;

    let expand = |b: &mut B, q: Option<B::T>, r: B::T, shape: &[usize]| -> Result<B::T> {
        let full = match q {
            Some(q) => b.contract(&q, &r, &[1], &[0])?,
            None => r,
        };
        let mut sh = shape[..shape.len() - 1].to_vec();
        sh.push(k);
        b.reshape(&full, &sh)
    };
    let new_a = expand(b, qa, new_ra, &shape_a)?;
    let new_b = expand(b, qb, new_rb, &shape_b)?;
    let new_a = restore_env(b, lat, net, sa, edge, &new_a, &perm_a, cutoff)?;
    let new_b = restore_env(b, lat, net, sb, edge, &new_b, &perm_b, cutoff)?;
    let (new_a, la) = renormalize(b, &new_a);
    let (new_b, lb) = renormalize(b, &new_b);
    net.tensors[sa] = new_a;
    net.tensors[sb] = new_b;
    Ok((dw, la + lb))
}

/// Applies the gates of one brickwall layer (in slot order) followed, if
/// requested, by the identity pass in reverse order.
pub fn evolve_layer<B: Backend>(
    b: &mut B,
    spec: &CircuitSpec,
    layer: usize,
    net: &mut Net<B::T>,
    gates: &[B::T],
    chi: usize,
    regauge: bool,
) -> Result<(Vec<f64>, f64, f64)> {
    let lat = spec.lattice();
    let range = spec.layer_range(layer);
    let mut discarded = Vec::with_capacity(range.len());
    let mut total = 0.0;
    let mut log_scale = 0.0;
    for (slot, gate) in range.clone().zip(gates) {
        let (dw, ls) = su_step(b, lat, net, spec.slots()[slot].edge, gate, chi, DEFAULT_CUTOFF)?;
        discarded.push(dw);
        total += dw;
        log_scale += ls;
    }
    if regauge {
        let id = b.lift(identity_gate());
        for slot in range.rev() {
            let (dw, ls) = su_step(b, lat, net, spec.slots()[slot].edge, &id, chi, DEFAULT_CUTOFF)?;
            total += dw;
            log_scale += ls;
        }
    }
    Ok((discarded, total, log_scale))
}

/// Site tensor with all incident weights absorbed except those in `skip`.
fn with_weights<B: Backend>(b: &mut B, lat: &Lattice, net: &Net<B::T>, site: usize, skip: Option<usize>) -> Result<B::T> {
    let mut t = net.tensors[site].clone();
    for (k, &e) in lat.incident(site).iter().enumerate() {
        if Some(e) != skip {
            t = b.scale_axis(&t, k + 1, &net.weights[e])?;
        }
    }
    Ok(t)
}

fn full_dot<B: Backend>(b: &mut B, x: &B::T, y: &B::T) -> Result<B::T> {
    let axes: Vec<usize> = (0..b.val(x).ndim()).collect();
    b.contract(x, y, &axes, &axes)
}

/// SU-style term expectations (scalars), one per entry of `terms`.
pub fn su_term_values<B: Backend>(b: &mut B, lat: &Lattice, net: &Net<B::T>, terms: &[Term]) -> Result<Vec<B::T>> {
    let x = b.lift(pauli_x());
    let z = b.lift(pauli_z_diag());
    let mut out = Vec::with_capacity(terms.len());
    for term in terms {
        let v = match *term {
            Term::X { site } => {
                let t = with_weights(b, lat, net, site, None)?;
                let xt = b.contract(&x, &t, &[1], &[0])?;
                let num = full_dot(b, &t, &xt)?;
                let den = full_dot(b, &t, &t)?;
                b.divide(&num, &den)?
            }
            Term::ZZ { edge, a, b: sb } => {
                let ta = with_weights(b, lat, net, a, Some(edge))?;
                let tb = with_weights(b, lat, net, sb, Some(edge))?;
                let (ea, eb) = (axis_of(lat, a, edge)?, axis_of(lat, sb, edge)?);
                let ta = b.scale_axis(&ta, ea, &net.weights[edge])?;
                let theta = b.contract(&ta, &tb, &[ea], &[eb])?;
                let pb = b.val(&ta).ndim() - 1;
                let zt = b.scale_axis(&theta, 0, &z)?;
                let zt = b.scale_axis(&zt, pb, &z)?;
                let num = full_dot(b, &theta, &zt)?;
                let den = full_dot(b, &theta, &theta)?;
                b.divide(&num, &den)?
            }
        };
        out.push(v);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Boundary-MPS contraction (square grids)
// ---------------------------------------------------------------------------

/// Local operator inserted into the ket layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum LocalOp {
    X,
    Z,
}

/// Canonical 5-axis tensors `(p, up, left, right, down)` with every bond
/// weight absorbed on the right/down side of its edge.
fn grid_tensors<B: Backend>(b: &mut B, lat: &Lattice, net: &Net<B::T>) -> Result<Vec<Vec<B::T>>> {
    let (rows, cols) = lat
        .grid_shape()
        .ok_or_else(|| Error::Config("boundary-MPS contraction needs a square grid".into()))?;
    let mut grid = Vec::with_capacity(rows);
    for r in 0..rows {
        let mut row = Vec::with_capacity(cols);
        for c in 0..cols {
            let s = r * cols + c;
            let mut t = net.tensors[s].clone();
            let mut dims = [1usize; 4];
            for (k, &e) in lat.incident(s).iter().enumerate() {
                let (a, bb) = lat.edge(e);
                let other = if a == s { bb } else { a };
                let dir = if other + cols == s {
                    0
                } else if other + 1 == s && c > 0 {
                    1
                } else if other == s + 1 && c + 1 < cols {
                    2
                } else {
                    3
                };
                dims[dir] = b.val(&t).shape()[k + 1];
                if dir >= 2 {
                    t = b.scale_axis(&t, k + 1, &net.weights[e])?;
                }
            }
            row.push(b.reshape(&t, &[2, dims[0], dims[1], dims[2], dims[3]])?);
        }
        grid.push(row);
    }
    Ok(grid)
}

fn ones<B: Backend>(b: &mut B, shape: &[usize]) -> B::T {
    b.lift(DenseTensor::from_fn(shape, |_| 1.0))
}

fn apply_op<B: Backend>(b: &mut B, t: &B::T, op: LocalOp) -> Result<B::T> {
    match op {
        LocalOp::X => {
            let x = b.lift(pauli_x());
            b.contract(&x, t, &[1], &[0])
        }
        LocalOp::Z => {
            let z = b.lift(pauli_z_diag());
            b.scale_axis(t, 0, &z)
        }
    }
}

/// Reduced right environments of the doubled row `mps ⊗ row ⊗ row`:
/// `envs[c]` (for `c >= 1`) has axes `(mps_l, ket_l, bra_l, k)` and spans the
/// dominant (at most `cap`) directions through which columns `c..` couple to
/// the left. `envs[n]` is the trivial environment.
fn right_envs<B: Backend>(b: &mut B, mps: &[B::T], row: &[B::T], cap: usize) -> Result<Vec<B::T>> {
    let n = row.len();
    let mut envs = vec![ones(b, &[1, 1, 1, 1]); n + 1];
    for c in (1..n).rev() {
        let x = b.contract(&mps[c], &envs[c + 1], &[3], &[0])?; // (lM, ku, bu, rk, rb, k)
        let x = b.contract(&x, &row[c], &[1, 3], &[1, 3])?; // (lM, bu, rb, k, p, l, d)
        let x = b.contract(&x, &row[c], &[1, 2, 4], &[1, 3, 0])?; // (lM, k, l, d, l', d')
        let x = b.permute(&x, &[0, 2, 4, 3, 5, 1])?; // (lM, l, l', d, d', k)
        let sh = b.val(&x).shape().to_vec();
        let m = b.reshape(&x, &[sh[0] * sh[1] * sh[2], sh[3] * sh[4] * sh[5]])?;
        let (_, s, vt) = b.svd(&m)?;
        let k = truncation_rank(b.val(&s).data(), cap, DEFAULT_CUTOFF);
        let vt = b.slice(&vt, 0, 0, k)?;
        // `m V_k` rather than `U_k S_k`: only the kept subspace enters.
        let e = b.contract(&m, &vt, &[1], &[1])?;
        let e = renormalize(b, &e).0;
        envs[c] = b.reshape(&e, &[sh[0], sh[1], sh[2], k])?;
    }
    Ok(envs)
}

/// Absorbs one row `(p,u,l,r,d)` into a boundary MPS with tensors
/// `(left, ket_up, bra_up, right)` by a zip-up sweep, compressing to `chi_e`.
/// Each truncation keeps the dominant left singular vectors of the column
/// matrix weighted by the reduced right environment, so the compression is
/// exact whenever the true boundary rank fits in `chi_e`.
fn absorb_row<B: Backend>(b: &mut B, mps: &[B::T], row: &[B::T], chi_e: usize) -> Result<Vec<B::T>> {
    let n = row.len();
    let envs = right_envs(b, mps, row, chi_e)?;
    let mut carry = ones(b, &[1, 1, 1, 1]); // (a, b, ket_l, bra_l)
    let mut out = Vec::with_capacity(n);
    for c in 0..n {
        let x = b.contract(&carry, &mps[c], &[1], &[0])?; // (a, kl, bl, uk, ub, b')
        let x = b.contract(&x, &row[c], &[1, 3], &[2, 1])?; // (a, bl, ub, b', p, r, d)
        let x = b.contract(&x, &row[c], &[1, 2, 4], &[2, 1, 0])?; // (a, b', r, d, r', d')
        let x = b.permute(&x, &[0, 3, 5, 1, 2, 4])?; // (a, d, d', b', r, r')
        let sh = b.val(&x).shape().to_vec();
        let (left, right) = (sh[0] * sh[1] * sh[2], sh[3] * sh[4] * sh[5]);
        if c + 1 == n {
            let t = b.reshape(&x, &[sh[0], sh[1], sh[2], right])?;
            let (t, _) = renormalize(b, &t);
            out.push(t);
            break;
        }
        let m = b.reshape(&x, &[left, right])?;
        let env = &envs[c + 1];
        let ke = b.val(env).shape()[3];
        let env = b.reshape(env, &[right, ke])?;
        let weighted = b.contract(&m, &env, &[1], &[0])?;
        let (u, s, _) = b.svd(&weighted)?;
        let k = truncation_rank(b.val(&s).data(), chi_e, DEFAULT_CUTOFF);
        let u = b.slice(&u, 1, 0, k)?;
        out.push(b.reshape(&u, &[sh[0], sh[1], sh[2], k])?);
        // `U_k^T m` rather than `S_k V_k^T`: it keeps the loss a function of
        // the kept subspace only, which the SVD adjoint needs when the
        // doubled-layer spectrum is degenerate.
        let rest = b.contract(&u, &m, &[0], &[0])?;
        let rest = b.reshape(&rest, &[k, sh[3], sh[4], sh[5]])?;
        carry = renormalize(b, &rest).0;
    }
    Ok(out)
}

/// One column step of a single-row strip: `(b, kl, bl, e) -> (b', r, r', e')`.
fn strip_step<B: Backend>(b: &mut B, env: &B::T, top: &B::T, ket: &B::T, bra: &B::T, bottom: &B::T) -> Result<B::T> {
    let x = b.contract(env, top, &[0], &[0])?; // (kl, bl, e, uk, ub, b')
    let x = b.contract(&x, ket, &[0, 3], &[2, 1])?; // (bl, e, ub, b', p, r, d)
    let x = b.contract(&x, bra, &[0, 2, 4], &[2, 1, 0])?; // (e, b', r, d, r', d')
    b.contract(&x, bottom, &[0, 3, 5], &[0, 1, 2]) // (b', r, r', e')
}

/// Term values on the rows of `grid`: each request is a list of
/// `(column, op)` insertions in one row.
fn strip_values<B: Backend>(
    b: &mut B,
    grid: &[Vec<B::T>],
    chi_e: usize,
    requests: &[(usize, Vec<(usize, LocalOp)>)],
) -> Result<Vec<B::T>> {
    let rows = grid.len();
    let cols = grid[0].len();
    // tops[r]: environment above row r; bottoms[r]: environment below row r.
    let mut tops = vec![(0..cols).map(|_| ones(b, &[1, 1, 1, 1])).collect::<Vec<_>>()];
    for r in 0..rows - 1 {
        let next = absorb_row(b, &tops[r], &grid[r], chi_e)?;
        tops.push(next);
    }
    let mut flipped = Vec::with_capacity(rows);
    for row in grid.iter().rev() {
        let mut f = Vec::with_capacity(cols);
        for t in row {
            f.push(b.permute(t, &[0, 4, 2, 3, 1])?);
        }
        flipped.push(f);
    }
    let mut bottoms_rev = vec![(0..cols).map(|_| ones(b, &[1, 1, 1, 1])).collect::<Vec<_>>()];
    for r in 0..rows - 1 {
        let next = absorb_row(b, &bottoms_rev[r], &flipped[r], chi_e)?;
        bottoms_rev.push(next);
    }
    let bottoms: Vec<_> = bottoms_rev.into_iter().rev().collect();

    let mut out = Vec::with_capacity(requests.len());
    let mut cache: Vec<Option<(Vec<B::T>, Vec<f64>)>> = vec![None; rows];
    for (row, ops) in requests {
        let row = *row;
        if cache[row].is_none() {
            // Prefix environments of the plain strip, rescaled step by step.
            let mut envs = vec![ones(b, &[1, 1, 1, 1])];
            let mut scales = Vec::with_capacity(cols);
            for c in 0..cols {
                let t = &grid[row][c];
                let next = strip_step(b, &envs[c], &tops[row][c], t, t, &bottoms[row][c])?;
                let m = b.val(&next).max_abs();
                let sc = if m > 0.0 && m.is_finite() { 1.0 / m } else { 1.0 };
                envs.push(b.scale(&next, sc));
                scales.push(sc);
            }
            cache[row] = Some((envs, scales));
        }
        let (envs, scales) = cache[row].as_ref().unwrap();
        let (envs, scales) = (envs.clone(), scales.clone());
        let first = ops.iter().map(|o| o.0).min().unwrap();
        let mut env = envs[first].clone();
        for c in first..cols {
            let t = &grid[row][c];
            let ket = match ops.iter().find(|o| o.0 == c) {
                Some(&(_, op)) => apply_op(b, t, op)?,
                None => t.clone(),
            };
            let next = strip_step(b, &env, &tops[row][c], &ket, t, &bottoms[row][c])?;
            env = b.scale(&next, scales[c]);
        }
        let num = b.reshape(&env, &[1])?;
        let den = b.reshape(&envs[cols], &[1])?;
        out.push(b.divide(&num, &den)?);
    }
    Ok(out)
}

/// Boundary-MPS term expectations (scalars), one per entry of `terms`.
pub fn boundary_term_values<B: Backend>(
    b: &mut B,
    lat: &Lattice,
    net: &Net<B::T>,
    chi_e: usize,
    terms: &[Term],
) -> Result<Vec<B::T>> {
    if chi_e == 0 {
        return Err(Error::Config("chi_E must be >= 1".into()));
    }
    let (_, cols) = lat
        .grid_shape()
        .ok_or_else(|| Error::Config("boundary-MPS contraction needs a square grid".into()))?;
    let grid = grid_tensors(b, lat, net)?;
    let rc = |s: usize| (s / cols, s % cols);
    // Horizontal strips serve X terms and horizontal bonds; vertical bonds are
    // evaluated as horizontal bonds of the transposed grid.
    let mut horiz = Vec::new();
    let mut vert = Vec::new();
    for (k, term) in terms.iter().enumerate() {
        match *term {
            Term::X { site } => {
                let (r, c) = rc(site);
                horiz.push((k, (r, vec![(c, LocalOp::X)])));
            }
            Term::ZZ { a, b: sb, .. } => {
                let ((ra, ca), (rb, cb)) = (rc(a), rc(sb));
                if ra == rb && cb == ca + 1 {
                    horiz.push((k, (ra, vec![(ca, LocalOp::Z), (cb, LocalOp::Z)])));
                } else if ca == cb && rb == ra + 1 {
                    vert.push((k, (ca, vec![(ra, LocalOp::Z), (rb, LocalOp::Z)])));
                } else {
                    return Err(Error::Config(format!("ZZ term on non-adjacent sites {a}, {sb}")));
                }
            }
        }
    }
    let mut out: Vec<Option<B::T>> = vec![None; terms.len()];
    if !horiz.is_empty() {
        let reqs: Vec<_> = horiz.iter().map(|(_, r)| r.clone()).collect();
        for ((k, _), v) in horiz.iter().zip(strip_values(b, &grid, chi_e, &reqs)?) {
            out[*k] = Some(v);
        }
    }
    if !vert.is_empty() {
        let rows = grid.len();
        let mut tgrid = Vec::with_capacity(cols);
        for c in 0..cols {
            let mut row = Vec::with_capacity(rows);
            for r in 0..rows {
                row.push(b.permute(&grid[r][c], &[0, 2, 1, 4, 3])?);
            }
            tgrid.push(row);
        }
        let reqs: Vec<_> = vert.iter().map(|(_, r)| r.clone()).collect();
        for ((k, _), v) in vert.iter().zip(strip_values(b, &tgrid, chi_e, &reqs)?) {
            out[*k] = Some(v);
        }
    }
    Ok(out.into_iter().map(|v| v.unwrap()).collect())
}

/// Energy as a backend scalar using SU-style or boundary-MPS expectations.
pub fn energy_generic<B: Backend>(
    b: &mut B,
    lat: &Lattice,
    net: &Net<B::T>,
    h: &TfimHamiltonian,
    chi_e: Option<usize>,
) -> Result<B::T> {
    let terms: Vec<Term> = h.terms().iter().map(|(_, t)| *t).collect();
    let values = match chi_e {
        None => su_term_values(b, lat, net, &terms)?,
        Some(chi_e) => boundary_term_values(b, lat, net, chi_e, &terms)?,
    };
    let combo: Vec<(f64, B::T)> = h.terms().iter().zip(values).map(|((c, _), v)| (*c, v)).collect();
    b.linear_combination(&combo)
}

// ---------------------------------------------------------------------------
// Concrete state
// ---------------------------------------------------------------------------

impl PepsState {
    /// `local^{⊗N}` with all bond dimensions 1 and all weights `[1]`.
    pub fn product(lattice: &Lattice, local: [f64; 2]) -> Result<Self> {
        let nrm = (local[0] * local[0] + local[1] * local[1]).sqrt();
        if (nrm - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("local state {local:?} is not normalized")));
        }
        let tensors = (0..lattice.n_sites())
            .map(|s| {
                let mut shape = vec![2];
                shape.extend(std::iter::repeat_n(1, lattice.incident(s).len()));
                DenseTensor::new(shape, local.to_vec()).unwrap()
            })
            .collect();
        let weights = (0..lattice.n_edges()).map(|_| DenseTensor::vector(vec![1.0])).collect();
        Ok(Self { lattice: lattice.clone(), net: Net { tensors, weights }, log_norm: 0.0 })
    }

    /// `|0...0>`.
    pub fn zero_state(lattice: &Lattice) -> Self {
        Self::product(lattice, [1.0, 0.0]).unwrap()
    }

    pub fn from_net(lattice: &Lattice, net: Net<DenseTensor>) -> Result<Self> {
        let st = Self { lattice: lattice.clone(), net, log_norm: 0.0 };
        st.check()?;
        Ok(st)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn net(&self) -> &Net<DenseTensor> {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Net<DenseTensor> {
        &mut self.net
    }

    pub fn weights(&self, edge: usize) -> &[f64] {
        self.net.weights[edge].data()
    }

    /// Accumulated log of the renormalisation factors removed from the tensors.
    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    pub fn max_bond(&self) -> usize {
        self.net.weights.iter().map(|w| w.len()).max().unwrap_or(1)
    }

    /// Checks shape consistency and weight positivity/ordering.
    pub fn check(&self) -> Result<()> {
        let lat = &self.lattice;
        if self.net.tensors.len() != lat.n_sites() || self.net.weights.len() != lat.n_edges() {
            return Err(Error::Shape("PEPS tensor/weight counts do not match the lattice".into()));
        }
        for (s, t) in self.net.tensors.iter().enumerate() {
            if t.ndim() != lat.incident(s).len() + 1 || t.shape()[0] != 2 {
                return Err(Error::Shape(format!("site {s} tensor has shape {:?}", t.shape())));
            }
            for (k, &e) in lat.incident(s).iter().enumerate() {
                if t.shape()[k + 1] != self.net.weights[e].len() {
                    return Err(Error::Shape(format!("site {s} axis for edge {e} disagrees with its weights")));
                }
            }
        }
        for (e, w) in self.net.weights.iter().enumerate() {
            let d = w.data();
            if d.iter().any(|&x| !(x > 0.0)) || d.windows(2).any(|p| p[1] > p[0]) {
                return Err(Error::Numerical(format!("weights on edge {e} are not positive and nonincreasing")));
            }
        }
        Ok(())
    }

    /// Simple-update application of an orthogonal gate; returns the discarded weight.
    pub fn apply_gate_su(&mut self, edge: usize, gate: &Mat4, chi: usize) -> Result<f64> {
        self.apply_two_site(edge, &gate_tensor(gate), chi)
    }

    /// Simple-update application of an arbitrary two-site operator `[2,2,2,2]`.
    pub fn apply_two_site(&mut self, edge: usize, op: &DenseTensor, chi: usize) -> Result<f64> {
        if edge >= self.lattice.n_edges() {
            return Err(Error::Config(format!("edge {edge} out of range")));
        }
        let (dw, ls) = su_step(&mut Eager, &self.lattice, &mut self.net, edge, op, chi, DEFAULT_CUTOFF)?;
        self.log_norm += ls;
        Ok(dw)
    }

    /// Exact absorption of a single-site operator `op[p', p]`.
    pub fn apply_site_op(&mut self, site: usize, op: &[[f64; 2]; 2]) -> Result<()> {
        let m = DenseTensor::matrix(2, 2, op.iter().flatten().copied().collect())?;
        let t = crate::tensor::contract(&m, &self.net.tensors[site], &[1], &[0])?;
        let (t, ls) = renormalize(&mut Eager, &t);
        self.net.tensors[site] = t;
        self.log_norm += ls;
        Ok(())
    }

    /// Identity gates over `edges` in reverse order; refreshes the weights.
    pub fn su_regauge(&mut self, layer_edges: &[usize], chi: usize) -> Result<f64> {
        let id = identity_gate();
        let mut total = 0.0;
        for &e in layer_edges.iter().rev() {
            total += self.apply_two_site(e, &id, chi)?;
        }
        Ok(total)
    }

    /// Regauge pass over one full brickwall layer of the lattice.
    pub fn su_regauge_layer(&mut self, chi: usize) -> Result<f64> {
        let edges: Vec<usize> = self.lattice.brickwall_groups().iter().flatten().copied().collect();
        self.su_regauge(&edges, chi)
    }

    pub fn expectation_su(&self, term: Term) -> Result<f64> {
        self.check_term(term)?;
        Ok(su_term_values(&mut Eager, &self.lattice, &self.net, &[term])?[0].item())
    }

    pub fn expectation_boundary_mps(&self, term: Term, chi_e: usize) -> Result<f64> {
        self.check_term(term)?;
        Ok(boundary_term_values(&mut Eager, &self.lattice, &self.net, chi_e, &[term])?[0].item())
    }

    fn check_term(&self, term: Term) -> Result<()> {
        match term {
            Term::X { site } if site < self.lattice.n_sites() => Ok(()),
            Term::ZZ { edge, a, b } if self.lattice.edge_between(a, b) == Some(edge) => Ok(()),
            _ => Err(Error::Config(format!("term {term:?} does not fit the lattice"))),
        }
    }

    /// Dense amplitudes (little-endian, qubit = site). Refuses networks whose
    /// intermediate contraction would exceed 2^26 entries.
    pub fn to_statevector(&self) -> Result<StateVector> {
        let lat = &self.lattice;
        let n = lat.n_sites();
        // Labels: Ok(site) for physical axes, Err(edge) for open bonds.
        let mut acc = DenseTensor::scalar(1.0);
        let mut labels: Vec<std::result::Result<usize, usize>> = Vec::new();
        for s in 0..n {
            let mut t = self.net.tensors[s].clone();
            for (k, &e) in lat.incident(s).iter().enumerate() {
                if lat.edge(e).0 == s {
                    t = t.scale_axis(k + 1, self.net.weights[e].data())?;
                }
            }
            let mut ax_acc = Vec::new();
            let mut ax_t = Vec::new();
            for (k, &e) in lat.incident(s).iter().enumerate() {
                if let Some(pos) = labels.iter().position(|l| *l == Err(e)) {
                    ax_acc.push(pos);
                    ax_t.push(k + 1);
                }
            }
            let free_acc: usize = (0..labels.len()).filter(|i| !ax_acc.contains(i)).map(|i| acc.shape()[i]).product();
            let free_t: usize = (0..t.ndim()).filter(|i| !ax_t.contains(i)).map(|i| t.shape()[i]).product();
            if free_acc.saturating_mul(free_t) > 1 << 26 {
                return Err(Error::Config("PEPS too large to expand into a statevector".into()));
            }
            acc = crate::tensor::contract(&acc, &t, &ax_acc, &ax_t)?;
            let mut new_labels: Vec<_> = (0..labels.len()).filter(|i| !ax_acc.contains(i)).map(|i| labels[i]).collect();
            new_labels.push(Ok(s));
            for (k, &e) in lat.incident(s).iter().enumerate() {
                if !ax_t.contains(&(k + 1)) {
                    new_labels.push(Err(e));
                }
            }
            labels = new_labels;
        }
        let perm: Vec<usize> = (0..n).rev().map(|q| labels.iter().position(|l| *l == Ok(q)).unwrap()).collect();
        let psi = acc.permute(&perm)?;
        StateVector::new(1 << n, psi.into_data())
    }

    /// Writes the binary container plus a JSON sidecar at `path` + `.json`.
    pub fn save(&self, path: &Path, chi: usize) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        let all: Vec<&DenseTensor> = self.net.tensors.iter().chain(self.net.weights.iter()).collect();
        buf.extend_from_slice(&(all.len() as u64).to_le_bytes());
        for t in all {
            buf.extend_from_slice(&(t.ndim() as u64).to_le_bytes());
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        let side = Sidecar {
            lattice: self.lattice.kind(),
            chi,
            log_norm: self.log_norm,
            n_tensors: self.net.tensors.len(),
            n_weights: self.net.weights.len(),
        };
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&side)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, usize)> {
        let side: Sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let bad = || Error::Config(format!("{} is not a PEPS container", path.display()));
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad());
        }
        let mut pos = MAGIC.len();
        let next_u64 = |pos: &mut usize| -> Result<u64> {
            let chunk = bytes.get(*pos..*pos + 8).ok_or_else(bad)?;
            *pos += 8;
            Ok(u64::from_le_bytes(chunk.try_into().unwrap()))
        };
        let count = next_u64(&mut pos)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let nd = next_u64(&mut pos)? as usize;
            let shape: Vec<usize> = (0..nd).map(|_| next_u64(&mut pos).map(|d| d as usize)).collect::<Result<_>>()?;
            let len: usize = shape.iter().product();
            let data = (0..len).map(|_| next_u64(&mut pos).map(f64::from_bits)).collect::<Result<Vec<_>>>()?;
            tensors.push(DenseTensor::new(shape, data)?);
        }
        if count != side.n_tensors + side.n_weights {
            return Err(bad());
        }
        let weights = tensors.split_off(side.n_tensors);
        let lattice = Lattice::from_kind(side.lattice)?;
        let mut st = Self::from_net(&lattice, Net { tensors, weights })?;
        st.log_norm = side.log_norm;
        Ok((st, side.chi))
    }
}

const MAGIC: &[u8; 8] = b"PEPSBIN1";

#[derive(Serialize, Deserialize)]
struct Sidecar {
    lattice: LatticeKind,
    chi: usize,
    log_norm: f64,
    n_tensors: usize,
    n_weights: usize,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Applies the circuit gate by gate with simple update, regauging after each
/// full layer when `regauge` is set.
pub fn apply_circuit(
    state0: &PepsState,
    spec: &CircuitSpec,
    theta: &[f64],
    chi: usize,
    regauge: bool,
) -> Result<(PepsState, EvolutionLog)> {
    if spec.lattice() != state0.lattice() {
        return Err(Error::Config("circuit lattice differs from state lattice".into()));
    }
    let gates: Vec<DenseTensor> = spec.gates(theta)?.iter().map(gate_tensor).collect();
    let mut state = state0.clone();
    let mut log = EvolutionLog::default();
    for layer in 0..spec.depth() {
        let start = Instant::now();
        let range = spec.layer_range(layer);
        let (dw, total, ls) =
            evolve_layer(&mut Eager, spec, layer, &mut state.net, &gates[range], chi, regauge)?;
        state.log_norm += ls;
        log.discarded.extend(dw);
        log.cumulative_truncation += total;
        log.layer_seconds.push(start.elapsed().as_secs_f64());
    }
    Ok((state, log))
}

pub fn energy_su(state: &PepsState, h: &TfimHamiltonian) -> Result<f64> {
    Ok(energy_generic(&mut Eager, state.lattice(), &state.net, h, None)?.item())
}

pub fn energy_boundary_mps(state: &PepsState, h: &TfimHamiltonian, chi_e: usize) -> Result<f64> {
    Ok(energy_generic(&mut Eager, state.lattice(), &state.net, h, Some(chi_e))?.item())
}

// ---------------------------------------------------------------------------
// Imaginary-time evolution
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IteConfig {
    pub dtau_schedule: Vec<f64>,
    pub max_sweeps: usize,
    pub energy_tol: f64,
    /// Boundary dimension for the final energy on square grids (`None`: SU-style).
    pub chi_e: Option<usize>,
}

impl IteConfig {
    /// Default schedule; square grids get a boundary-MPS final energy with
    /// `chi_E = chi^2`.
    pub fn default_for(lattice: &Lattice, chi: usize) -> Self {
        Self {
            dtau_schedule: vec![0.1, 0.05, 0.01, 0.005],
            max_sweeps: 2000,
            energy_tol: 1e-8,
            chi_e: lattice.is_square().then_some(chi * chi),
        }
    }
}

#[derive(Clone, Debug)]
pub struct IteResult {
    pub energy: f64,
    /// SU-style energy of the final state (used for the convergence test).
    pub energy_su: f64,
    pub converged: bool,
    pub sweeps: Vec<usize>,
    pub state: PepsState,
}

/// Ground-state reference by second-order Trotterized imaginary-time
/// evolution with simple update, starting from `|0...0>`.
pub fn imaginary_time_evolve(lattice: &Lattice, g: f64, chi: usize, cfg: &IteConfig) -> Result<IteResult> {
    if cfg.dtau_schedule.is_empty() || cfg.dtau_schedule.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::Config("dtau schedule must be nonempty and positive".into()));
    }
    if cfg.dtau_schedule.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Config("dtau schedule must be decreasing".into()));
    }
    if !(cfg.energy_tol > 0.0) {
        return Err(Error::Config("energy_tol must be > 0".into()));
    }
    let h = TfimHamiltonian::new(lattice, g);
    let mut state = PepsState::zero_state(lattice);
    let order: Vec<usize> = lattice.brickwall_groups().iter().flatten().copied().collect();
    let mut converged = true;
    let mut sweeps = Vec::new();
    let mut e_prev = energy_su(&state, &h)?;
    for &dt in &cfg.dtau_schedule {
        let (ch, sh) = ((0.5 * dt * g).cosh(), (0.5 * dt * g).sinh());
        let field = [[ch, sh], [sh, ch]];
        let (ep, em) = (dt.exp(), (-dt).exp());
        let zz = DenseTensor::from_fn(&[2, 2, 2, 2], |i| {
            if i[0] == i[2] && i[1] == i[3] {
                if i[0] == i[1] {
                    ep
                } else {
                    em
                }
            } else {
                0.0
            }
        });
        let mut done = false;
        let mut count = 0;
        for _ in 0..cfg.max_sweeps {
            for s in 0..lattice.n_sites() {
                state.apply_site_op(s, &field)?;
            }
            for &e in &order {
                state.apply_two_site(e, &zz, chi)?;
            }
            for s in 0..lattice.n_sites() {
                state.apply_site_op(s, &field)?;
            }
            count += 1;
            let e = energy_su(&state, &h)?;
            let de = (e - e_prev).abs();
            e_prev = e;
            if de < cfg.energy_tol {
                done = true;
                break;
            }
        }
        debug!("ITE dtau={dt}: {count} sweeps, E_su={e_prev}");
        sweeps.push(count);
        converged &= done;
    }
    if !converged {
        warn!("imaginary-time evolution did not reach energy_tol within max_sweeps");
    }
    let energy = match cfg.chi_e {
        Some(chi_e) if lattice.is_square() => energy_boundary_mps(&state, &h, chi_e)?,
        _ => e_prev,
    };
    Ok(IteResult { energy, energy_su: e_prev, converged, sweeps, state })
}
