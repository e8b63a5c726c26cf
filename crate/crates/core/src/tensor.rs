//! Dense real tensor kernels.
//!
//! [`DenseTensor`] stores `f64` entries in row-major order. Pairwise
//! contraction is realised as permute -> reshape -> GEMM; there is no global
//! contraction-order optimizer, callers choose the order. Matrix kernels
//! (GEMM, SVD, QR) are delegated to `faer` and run with the process-wide
//! parallelism setting (see [`set_single_threaded`]).

use faer::linalg::matmul::matmul;
use faer::{Accum, MatMut, MatRef, Par};

use crate::error::{Error, Result};

/// Relative singular-value cutoff used throughout the crate.
pub const DEFAULT_CUTOFF: f64 = 1e-12;

/// Forces all matrix kernels onto the calling thread.
pub fn set_single_threaded() {
    faer::set_global_parallelism(Par::Seq);
}

/// Lets matrix kernels use up to `threads` threads (`1` means sequential).
pub fn set_kernel_threads(threads: usize) {
    if threads <= 1 {
        set_single_threaded();
    } else {
        faer::set_global_parallelism(Par::rayon(threads));
    }
}

fn par() -> Par {
    faer::get_global_parallelism()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * shape[k + 1];
    }
    s
}

/// Inverse of a permutation given as a list of source axes.
pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    inv
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; numel(shape)] }
    }

    pub fn scalar(x: f64) -> Self {
        Self { shape: vec![], data: vec![x] }
    }

    pub fn vector(v: Vec<f64>) -> Self {
        Self { shape: vec![v.len()], data: v }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let n = numel(shape);
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f(&idx));
            for k in (0..shape.len()).rev() {
                idx[k] += 1;
                if idx[k] < shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Self { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        let st = strides(&self.shape);
        self.data[idx.iter().zip(&st).map(|(i, s)| i * s).sum::<usize>()]
    }

    /// Value of a rank-0 (or single-element) tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|x| c * x).collect() }
    }

    pub fn scale_in_place(&mut self, c: f64) {
        self.data.iter_mut().for_each(|x| *x *= c);
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("add {:?} += {:?}", self.shape, other.shape)));
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// `self += c * other`
    pub fn axpy(&mut self, c: f64, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("axpy {:?} += c*{:?}", self.shape, other.shape)));
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += c * b);
        Ok(())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} into {:?}", self.shape, shape)));
        }
        Ok(Self { shape: shape.to_vec(), data: self.data.clone() })
    }

    pub fn into_reshaped(mut self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} into {:?}", self.shape, shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Output axis `k` is input axis `perm[k]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let n = self.shape.len();
        if perm.len() != n {
            return Err(Error::Shape(format!("permutation {perm:?} has wrong length for {:?}", self.shape)));
        }
        let mut seen = vec![false; n];
        for &p in perm {
            if p >= n || seen[p] {
                return Err(Error::Shape(format!("invalid permutation {perm:?}")));
            }
            seen[p] = true;
        }
        if perm.iter().enumerate().all(|(k, &p)| k == p) {
            return Ok(self.clone());
        }
        let in_strides = strides(&self.shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let total = self.data.len();
        let mut out = Vec::with_capacity(total);
        if total == 0 {
            return Ok(Self { shape: out_shape, data: out });
        }
        // Odometer over all but the innermost output axis.
        let last = n - 1;
        let inner = out_shape[last];
        let inner_stride = src_strides[last];
        let mut idx = vec![0usize; n];
        let mut base = 0usize;
        loop {
            if inner_stride == 1 {
                out.extend_from_slice(&self.data[base..base + inner]);
            } else {
                let mut off = base;
                for _ in 0..inner {
                    out.push(self.data[off]);
                    off += inner_stride;
                }
            }
            let mut k = last;
            loop {
                if k == 0 {
                    return Ok(Self { shape: out_shape, data: out });
                }
                k -= 1;
                idx[k] += 1;
                base += src_strides[k];
                if idx[k] < out_shape[k] {
                    break;
                }
                base -= src_strides[k] * idx[k];
                idx[k] = 0;
            }
        }
    }

    /// Matrix transpose of a rank-2 tensor.
    pub fn t(&self) -> Result<Self> {
        if self.ndim() != 2 {
            return Err(Error::Shape(format!("transpose needs a matrix, got {:?}", self.shape)));
        }
        self.permute(&[1, 0])
    }

    /// Multiplies entries along `axis` by `w[i]`.
    pub fn scale_axis(&self, axis: usize, w: &[f64]) -> Result<Self> {
        if axis >= self.ndim() || self.shape[axis] != w.len() {
            return Err(Error::Shape(format!(
                "scale_axis: axis {axis} of {:?} vs weight length {}",
                self.shape,
                w.len()
            )));
        }
        let inner: usize = self.shape[axis + 1..].iter().product();
        let dim = self.shape[axis];
        let mut out = self.data.clone();
        for (chunk_idx, chunk) in out.chunks_mut(inner.max(1)).enumerate() {
            let c = w[chunk_idx % dim];
            chunk.iter_mut().for_each(|x| *x *= c);
        }
        Ok(Self { shape: self.shape.clone(), data: out })
    }

    /// Sub-tensor `start..start+len` along `axis`.
    pub fn slice_axis(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        if axis >= self.ndim() || start + len > self.shape[axis] {
            return Err(Error::Shape(format!(
                "slice {start}..{} out of range on axis {axis} of {:?}",
                start + len,
                self.shape
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let dim = self.shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(Self { shape, data })
    }

    /// Zero-pads along `axis` so that `self` occupies `start..start+len` of a
    /// dimension of size `full`. Inverse of [`DenseTensor::slice_axis`].
    pub fn pad_axis(&self, axis: usize, start: usize, full: usize) -> Result<Self> {
        let len = self.shape[axis];
        if start + len > full {
            return Err(Error::Shape(format!("pad {start}+{len} exceeds {full}")));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut shape = self.shape.clone();
        shape[axis] = full;
        let mut data = vec![0.0; outer * full * inner];
        for o in 0..outer {
            let dst = (o * full + start) * inner;
            let src = o * len * inner;
            data[dst..dst + len * inner].copy_from_slice(&self.data[src..src + len * inner]);
        }
        Ok(Self { shape, data })
    }

    fn mat_dims(&self) -> Result<(usize, usize)> {
        if self.ndim() != 2 {
            return Err(Error::Shape(format!("expected a matrix, got shape {:?}", self.shape)));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    pub(crate) fn as_mat(&self) -> Result<MatRef<'_, f64>> {
        let (m, n) = self.mat_dims()?;
        Ok(MatRef::from_row_major_slice(&self.data, m, n))
    }
}

/// `C = A B` on row-major slices.
pub fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 {
        return c;
    }
    if k == 0 {
        return c;
    }
    let am = MatRef::from_row_major_slice(a, m, k);
    let bm = MatRef::from_row_major_slice(b, k, n);
    let cm = MatMut::from_row_major_slice_mut(&mut c, m, n);
    matmul(cm, Accum::Replace, am, bm, 1.0, par());
    c
}

/// Matrix product of two rank-2 tensors.
pub fn matmul2(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    contract(a, b, &[1], &[0])
}

/// Contracts `axes_a` of `a` with `axes_b` of `b` (pairwise). The result
/// carries the free axes of `a` followed by the free axes of `b`, each in
/// their original order.
pub fn contract(a: &DenseTensor, b: &DenseTensor, axes_a: &[usize], axes_b: &[usize]) -> Result<DenseTensor> {
    if axes_a.len() != axes_b.len() {
        return Err(Error::Shape(format!("contract: {} axes vs {} axes", axes_a.len(), axes_b.len())));
    }
    for (&i, &j) in axes_a.iter().zip(axes_b) {
        if i >= a.ndim() || j >= b.ndim() {
            return Err(Error::Shape(format!("contract: axis ({i}, {j}) out of range for {:?} x {:?}", a.shape, b.shape)));
        }
        if a.shape[i] != b.shape[j] {
            return Err(Error::Shape(format!(
                "contract: axis {i} of {:?} (size {}) vs axis {j} of {:?} (size {})",
                a.shape, a.shape[i], b.shape, b.shape[j]
            )));
        }
    }
    let free_a: Vec<usize> = (0..a.ndim()).filter(|k| !axes_a.contains(k)).collect();
    let free_b: Vec<usize> = (0..b.ndim()).filter(|k| !axes_b.contains(k)).collect();
    if free_a.len() + axes_a.len() != a.ndim() || free_b.len() + axes_b.len() != b.ndim() {
        return Err(Error::Shape("contract: repeated axis".into()));
    }
    let m: usize = free_a.iter().map(|&k| a.shape[k]).product();
    let kk: usize = axes_a.iter().map(|&k| a.shape[k]).product();
    let n: usize = free_b.iter().map(|&k| b.shape[k]).product();

    let perm_a: Vec<usize> = free_a.iter().chain(axes_a).copied().collect();
    let perm_b: Vec<usize> = axes_b.iter().chain(&free_b).copied().collect();
    let pa;
    let a_data: &[f64] = if perm_a.iter().enumerate().all(|(i, &p)| i == p) {
        &a.data
    } else {
        pa = a.permute(&perm_a)?;
        &pa.data
    };
    let pb;
    let b_data: &[f64] = if perm_b.iter().enumerate().all(|(i, &p)| i == p) {
        &b.data
    } else {
        pb = b.permute(&perm_b)?;
        &pb.data
    };
    let data = gemm(a_data, b_data, m, kk, n);
    let shape: Vec<usize> = free_a.iter().map(|&k| a.shape[k]).chain(free_b.iter().map(|&k| b.shape[k])).collect();
    Ok(DenseTensor { shape, data })
}

/// Thin SVD `A = U diag(s) Vt` of a matrix, singular values nonincreasing.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: DenseTensor,
    pub s: Vec<f64>,
    pub vt: DenseTensor,
}

pub fn svd(a: &DenseTensor) -> Result<Svd> {
    let (m, n) = a.mat_dims()?;
    if !a.is_finite() {
        return Err(Error::Kernel("svd input contains non-finite entries".into()));
    }
    let r = m.min(n);
    if r == 0 {
        return Err(Error::Kernel(format!("svd of empty matrix {m}x{n}")));
    }
    let dec = a.as_mat()?.thin_svd().map_err(|e| Error::Kernel(format!("svd did not converge: {e:?}")))?;
    let (u, v, sd) = (dec.U(), dec.V(), dec.S());
    let sc = sd.column_vector();
    let s: Vec<f64> = (0..r).map(|i| sc[i].max(0.0)).collect();
    let mut ud = vec![0.0; m * r];
    for i in 0..m {
        for j in 0..r {
            ud[i * r + j] = u[(i, j)];
        }
    }
    let mut vd = vec![0.0; r * n];
    for j in 0..r {
        for i in 0..n {
            vd[j * n + i] = v[(i, j)];
        }
    }
    Ok(Svd { u: DenseTensor { shape: vec![m, r], data: ud }, s, vt: DenseTensor { shape: vec![r, n], data: vd } })
}

/// Number of singular values kept under a bond-dimension cap and a
/// relative cutoff (at least one is always kept for a nonzero spectrum).
pub fn truncation_rank(s: &[f64], chi: usize, cutoff: f64) -> usize {
    let smax = s.first().copied().unwrap_or(0.0);
    if smax <= 0.0 {
        return 1.min(s.len());
    }
    s.iter().take(chi.max(1)).take_while(|&&x| x > cutoff * smax).count().max(1)
}

/// Squared weight of the dropped tail relative to the full spectrum.
pub fn discarded_weight(s: &[f64], kept: usize) -> f64 {
    let total: f64 = s.iter().map(|x| x * x).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let dropped: f64 = s[kept..].iter().map(|x| x * x).sum();
    (dropped / total).clamp(0.0, 1.0)
}

#[derive(Clone, Debug)]
pub struct TruncationResult {
    /// Row axes of the input followed by the new bond axis.
    pub left: DenseTensor,
    pub weights: Vec<f64>,
    /// New bond axis followed by the column axes of the input.
    pub right: DenseTensor,
    pub discarded_weight: f64,
}

/// Truncated SVD across the bipartition "first `split` axes | rest".
pub fn svd_truncate(t: &DenseTensor, split: usize, chi: usize, cutoff: f64) -> Result<TruncationResult> {
    if chi == 0 {
        return Err(Error::Config("svd_truncate: chi must be >= 1".into()));
    }
    if !(cutoff >= 0.0) {
        return Err(Error::Config(format!("svd_truncate: cutoff must be >= 0 (got {cutoff})")));
    }
    if split == 0 || split >= t.ndim() {
        return Err(Error::Shape(format!("svd_truncate: split {split} invalid for {:?}", t.shape)));
    }
    let rows: usize = t.shape[..split].iter().product();
    let cols: usize = t.shape[split..].iter().product();
    let dec = svd(&t.reshape(&[rows, cols])?)?;
    if dec.s[0] <= 0.0 {
        return Err(Error::Numerical("svd_truncate: zero tensor".into()));
    }
    let k = truncation_rank(&dec.s, chi, cutoff);
    let dw = discarded_weight(&dec.s, k);
    let mut lshape = t.shape[..split].to_vec();
    lshape.push(k);
    let mut rshape = vec![k];
    rshape.extend_from_slice(&t.shape[split..]);
    let left = dec.u.slice_axis(1, 0, k)?.into_reshaped(&lshape)?;
    let right = dec.vt.slice_axis(0, 0, k)?.into_reshaped(&rshape)?;
    Ok(TruncationResult { left, weights: dec.s[..k].to_vec(), right, discarded_weight: dw })
}

/// Thin QR `A = Q R` with `Q` of shape `(m, min(m, n))`.
pub fn qr(a: &DenseTensor) -> Result<(DenseTensor, DenseTensor)> {
    let (m, n) = a.mat_dims()?;
    let r = m.min(n);
    let dec = a.as_mat()?.qr();
    let q = dec.compute_thin_Q();
    let rr = dec.thin_R();
    let mut qd = vec![0.0; m * r];
    for i in 0..m {
        for j in 0..r {
            qd[i * r + j] = q[(i, j)];
        }
    }
    let mut rd = vec![0.0; r * n];
    for i in 0..r {
        for j in i..n {
            rd[i * n + j] = rr[(i, j)];
        }
    }
    Ok((DenseTensor { shape: vec![m, r], data: qd }, DenseTensor { shape: vec![r, n], data: rd }))
}

/// Eigen-decomposition of a symmetric matrix: eigenvalues ascending and the
/// eigenvectors as columns of a row-major matrix.
pub fn symmetric_eigen(a: &DenseTensor) -> Result<(Vec<f64>, DenseTensor)> {
    let (m, n) = a.mat_dims()?;
    if m != n {
        return Err(Error::Shape(format!("symmetric_eigen of non-square {m}x{n}")));
    }
    let dec = a
        .as_mat()?
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::Kernel(format!("eigensolver did not converge: {e:?}")))?;
    let vals = dec.S().column_vector();
    let vecs = dec.U();
    let w: Vec<f64> = (0..n).map(|i| vals[i]).collect();
    let mut vd = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            vd[i * n + j] = vecs[(i, j)];
        }
    }
    Ok((w, DenseTensor { shape: vec![n, n], data: vd }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> DenseTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseTensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Naive triple loop, independent of the GEMM path.
    fn naive_matmul(a: &DenseTensor, b: &DenseTensor) -> DenseTensor {
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        DenseTensor::from_fn(&[m, n], |ix| (0..k).map(|p| a.get(&[ix[0], p]) * b.get(&[p, ix[1]])).sum())
    }

    #[test]
    fn identity_contraction() {
        let v = DenseTensor::vector(vec![0.3, -1.2]);
        let out = contract(&DenseTensor::identity(2), &v, &[1], &[0]).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn full_contraction_of_unit_vector() {
        let v = DenseTensor::vector(vec![0.6, 0.8]);
        let out = contract(&v, &v, &[0], &[0]).unwrap();
        assert_eq!(out.shape(), &[] as &[usize]);
        assert!((out.item() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn contraction_matches_triple_loop() {
        let a = random(&[3, 4], 1);
        let b = random(&[4, 5], 2);
        let c = contract(&a, &b, &[1], &[0]).unwrap();
        let oracle = naive_matmul(&a, &b);
        for (x, y) in c.data().iter().zip(oracle.data()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn contraction_free_axis_order() {
        let a = random(&[2, 3, 4], 3);
        let b = random(&[4, 5, 3], 4);
        let c = contract(&a, &b, &[1, 2], &[2, 0]).unwrap();
        assert_eq!(c.shape(), &[2, 5]);
        for i in 0..2 {
            for l in 0..5 {
                let mut acc = 0.0;
                for j in 0..3 {
                    for k in 0..4 {
                        acc += a.get(&[i, j, k]) * b.get(&[k, l, j]);
                    }
                }
                assert!((c.get(&[i, l]) - acc).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn contraction_shape_mismatch() {
        let a = random(&[2, 3], 5);
        let b = random(&[4, 2], 6);
        assert!(matches!(contract(&a, &b, &[1], &[0]), Err(Error::Shape(_))));
    }

    #[test]
    fn permute_identity_and_double_transpose() {
        let a = random(&[3, 4, 2], 7);
        assert_eq!(a.permute(&[0, 1, 2]).unwrap(), a);
        let m = random(&[3, 5], 8);
        assert_eq!(m.t().unwrap().t().unwrap(), m);
        assert!(a.permute(&[0, 0, 1]).is_err());
        assert!(a.permute(&[0, 1]).is_err());
    }

    #[test]
    fn permute_matches_index_map() {
        let a = random(&[2, 3, 4, 5], 9);
        let p = a.permute(&[2, 0, 3, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 5, 3]);
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    for l in 0..5 {
                        assert_eq!(p.get(&[k, i, l, j]), a.get(&[i, j, k, l]));
                    }
                }
            }
        }
    }

    #[test]
    fn reshape_round_trip() {
        let a = random(&[2, 6], 10);
        let b = a.reshape(&[3, 4]).unwrap().reshape(&[2, 6]).unwrap();
        assert_eq!(a, b);
        assert!(a.reshape(&[5, 2]).is_err());
    }

    #[test]
    fn truncate_rank_one() {
        let u = DenseTensor::matrix(3, 1, vec![1.0, 2.0, -1.0]).unwrap();
        let v = DenseTensor::matrix(1, 4, vec![0.5, 1.0, 0.0, 2.0]).unwrap();
        let a = matmul2(&u, &v).unwrap();
        let tr = svd_truncate(&a, 1, 1, DEFAULT_CUTOFF).unwrap();
        assert!(tr.discarded_weight.abs() < 1e-15);
        assert_eq!(tr.weights.len(), 1);
    }

    #[test]
    fn truncate_identity_half() {
        let tr = svd_truncate(&DenseTensor::identity(4), 1, 2, DEFAULT_CUTOFF).unwrap();
        assert!((tr.discarded_weight - 0.5).abs() < 1e-14);
        assert_eq!(tr.weights.len(), 2);
    }

    fn reconstruct(tr: &TruncationResult) -> DenseTensor {
        let k = tr.weights.len();
        let nl = tr.left.ndim();
        let l = tr.left.scale_axis(nl - 1, &tr.weights).unwrap();
        let _ = k;
        contract(&l, &tr.right, &[nl - 1], &[0]).unwrap()
    }

    #[test]
    fn full_rank_reconstruction() {
        let a = random(&[8, 8], 11);
        let tr = svd_truncate(&a, 1, 8, 0.0).unwrap();
        let r = reconstruct(&tr);
        let mut diff = r.clone();
        diff.axpy(-1.0, &a).unwrap();
        assert!(diff.norm() < 1e-12 * a.norm().max(1.0));
    }

    #[test]
    fn weights_sorted_and_above_cutoff() {
        let a = random(&[6, 2, 5], 12);
        let tr = svd_truncate(&a, 2, 4, 1e-3).unwrap();
        assert!(tr.weights.windows(2).all(|w| w[0] >= w[1]));
        assert!(tr.weights.iter().all(|&w| w > 1e-3 * tr.weights[0]));
        assert!((0.0..=1.0).contains(&tr.discarded_weight));
        assert_eq!(tr.left.shape(), &[6, 2, 4]);
        assert_eq!(tr.right.shape(), &[4, 5]);
    }

    #[test]
    fn qr_reconstructs() {
        let a = random(&[7, 3], 13);
        let (q, r) = qr(&a).unwrap();
        let back = matmul2(&q, &r).unwrap();
        for (x, y) in back.data().iter().zip(a.data()) {
            assert!((x - y).abs() < 1e-13);
        }
        let qtq = contract(&q, &q, &[0], &[0]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((qtq.get(&[i, j]) - e).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn slice_pad_inverse() {
        let a = random(&[3, 5, 2], 14);
        let s = a.slice_axis(1, 1, 3).unwrap();
        let p = s.pad_axis(1, 1, 5).unwrap();
        assert_eq!(p.slice_axis(1, 1, 3).unwrap(), s);
        assert_eq!(p.get(&[0, 0, 0]), 0.0);
    }

    #[test]
    fn symmetric_eigen_diagonal() {
        let a = DenseTensor::matrix(2, 2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        let (w, _) = symmetric_eigen(&a).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-14 && (w[1] - 3.0).abs() < 1e-14);
    }
}
