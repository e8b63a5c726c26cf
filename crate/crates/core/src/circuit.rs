//! SO(4) brickwall ansatz.
//!
//! A gate on edge `(a, b)` with `a < b` acts on the two-qubit space with site
//! `a` as the first (most significant) tensor factor, i.e. the 4x4 matrix index
//! is `2 * s_a + s_b`.
//!
//! The gate chart is the exponential map over the ordered antisymmetric basis
//! `E01, E02, E03, E12, E13, E23` with `Eij = e_i e_j^T - e_j e_i^T`, so zero
//! angles give the identity. The exponential is evaluated in closed form by
//! splitting the generator into its self-dual and anti-self-dual parts, which
//! commute and each square to a multiple of the identity.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Lattice, LatticeKind};

pub type Mat4 = [[f64; 4]; 4];

/// Version tag of the `(layer, group, edge)` slot order written to checkpoints.
pub const SLOT_ORDER_VERSION: u32 = 1;

const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// The `k`-th generator `E_ij`.
pub fn generator(k: usize) -> Mat4 {
    let (i, j) = PAIRS[k];
    let mut m = [[0.0; 4]; 4];
    m[i][j] = 1.0;
    m[j][i] = -1.0;
    m
}

fn identity4() -> Mat4 {
    let mut m = [[0.0; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

pub fn matmul4(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for k in 0..4 {
            let aik = a[i][k];
            for j in 0..4 {
                c[i][j] += aik * b[k][j];
            }
        }
    }
    c
}

pub fn transpose4(a: &Mat4) -> Mat4 {
    let mut t = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            t[j][i] = a[i][j];
        }
    }
    t
}

fn lin(terms: &[(f64, &Mat4)]) -> Mat4 {
    let mut m = [[0.0; 4]; 4];
    for (c, a) in terms {
        for i in 0..4 {
            for j in 0..4 {
                m[i][j] += c * a[i][j];
            }
        }
    }
    m
}

fn frob_dot(a: &Mat4, b: &Mat4) -> f64 {
    (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).map(|(i, j)| a[i][j] * b[i][j]).sum()
}

fn antisym(angles: &[f64; 6]) -> Mat4 {
    let mut a = [[0.0; 4]; 4];
    for (k, &(i, j)) in PAIRS.iter().enumerate() {
        a[i][j] += angles[k];
        a[j][i] -= angles[k];
    }
    a
}

/// Hodge dual `(*A)_ij = 1/2 eps_ijkl A_kl` of an antisymmetric 4x4 matrix.
fn hodge(a: &Mat4) -> Mat4 {
    let mut d = [[0.0; 4]; 4];
    d[0][1] = a[2][3];
    d[0][2] = -a[1][3];
    d[0][3] = a[1][2];
    d[1][2] = a[0][3];
    d[1][3] = -a[0][2];
    d[2][3] = a[0][1];
    for i in 0..4 {
        for j in 0..i {
            d[i][j] = -d[j][i];
        }
    }
    d
}

/// `(A + s * A*) / 2` for `s = +1` or `-1`.
fn chiral(a: &Mat4, s: f64) -> Mat4 {
    lin(&[(0.5, a), (0.5 * s, &hodge(a))])
}

/// `sin(x)/x`, `(x cos x - sin x)/x^3`, both smooth at 0.
fn sinc_pair(x: f64) -> (f64, f64) {
    if x < 1e-4 {
        let x2 = x * x;
        (1.0 - x2 / 6.0 + x2 * x2 / 120.0, -1.0 / 3.0 + x2 / 30.0)
    } else {
        (x.sin() / x, (x * x.cos() - x.sin()) / (x * x * x))
    }
}

/// `exp(B)` for a chiral `B` (which satisfies `B^2 = -phi^2 I`, `phi = |B|_F / 2`).
fn chiral_exp(b: &Mat4) -> Mat4 {
    let phi = frob_dot(b, b).sqrt() / 2.0;
    let (sinc, _) = sinc_pair(phi);
    lin(&[(phi.cos(), &identity4()), (sinc, b)])
}

/// Directional derivative of [`chiral_exp`] at `b` along chiral `db`.
fn chiral_exp_derivative(b: &Mat4, db: &Mat4) -> Mat4 {
    let phi = frob_dot(b, b).sqrt() / 2.0;
    let (sinc, dsinc_over_phi) = sinc_pair(phi);
    // phi * dphi = <B, dB> / 4
    let phi_dphi = frob_dot(b, db) / 4.0;
    lin(&[(-sinc * phi_dphi, &identity4()), (dsinc_over_phi * phi_dphi, b), (sinc, db)])
}

/// `exp(sum_k angles_k G_k)`.
pub fn so4_matrix(angles: &[f64; 6]) -> Mat4 {
    let a = antisym(angles);
    matmul4(&chiral_exp(&chiral(&a, 1.0)), &chiral_exp(&chiral(&a, -1.0)))
}

/// Partial derivatives of [`so4_matrix`] with respect to each angle.
pub fn so4_derivatives(angles: &[f64; 6]) -> [Mat4; 6] {
    let a = antisym(angles);
    let (ap, am) = (chiral(&a, 1.0), chiral(&a, -1.0));
    let (ep, em) = (chiral_exp(&ap), chiral_exp(&am));
    std::array::from_fn(|k| {
        let g = generator(k);
        let dp = chiral_exp_derivative(&ap, &chiral(&g, 1.0));
        let dm = chiral_exp_derivative(&am, &chiral(&g, -1.0));
        lin(&[(1.0, &matmul4(&dp, &em)), (1.0, &matmul4(&ep, &dm))])
    })
}

/// One gate position in the brickwall circuit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateSlot {
    pub layer: usize,
    pub group: usize,
    pub edge: usize,
}

/// Brickwall layout of depth `D`: each layer visits every brickwall group in
/// order and every edge of a group in ascending edge index.
#[derive(Clone, Debug)]
pub struct CircuitSpec {
    lattice: Lattice,
    depth: usize,
    slots: Vec<GateSlot>,
    slots_per_layer: usize,
}

impl CircuitSpec {
    pub fn new(lattice: &Lattice, depth: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Config("circuit depth must be >= 1".into()));
        }
        let mut layer_slots = Vec::with_capacity(lattice.n_edges());
        for (group, edges) in lattice.brickwall_groups().iter().enumerate() {
            let mut sorted = edges.clone();
            sorted.sort_unstable();
            layer_slots.extend(sorted.into_iter().map(|edge| (group, edge)));
        }
        let slots_per_layer = layer_slots.len();
        let slots = (0..depth)
            .flat_map(|layer| layer_slots.iter().map(move |&(group, edge)| GateSlot { layer, group, edge }))
            .collect();
        Ok(Self { lattice: lattice.clone(), depth, slots, slots_per_layer })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn slots(&self) -> &[GateSlot] {
        &self.slots
    }

    pub fn n_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn n_params(&self) -> usize {
        6 * self.slots.len()
    }

    pub fn slots_per_layer(&self) -> usize {
        self.slots_per_layer
    }

    /// Slot indices belonging to `layer`.
    pub fn layer_range(&self, layer: usize) -> std::ops::Range<usize> {
        layer * self.slots_per_layer..(layer + 1) * self.slots_per_layer
    }

    /// Index of the first angle of `slot` in the parameter vector.
    pub fn param_offset(&self, slot: usize) -> usize {
        6 * slot
    }

    /// Inverse of the slot enumeration.
    pub fn slot_index(&self, slot: &GateSlot) -> Option<usize> {
        let within = self.slots[..self.slots_per_layer]
            .iter()
            .position(|s| s.group == slot.group && s.edge == slot.edge)?;
        (slot.layer < self.depth).then(|| slot.layer * self.slots_per_layer + within)
    }

    /// Angles of `slot` from a full parameter slice.
    pub fn angles(&self, theta: &[f64], slot: usize) -> [f64; 6] {
        let o = self.param_offset(slot);
        theta[o..o + 6].try_into().unwrap()
    }

    /// All gate matrices in slot order.
    pub fn gates(&self, theta: &[f64]) -> Result<Vec<Mat4>> {
        self.check_len(theta.len())?;
        Ok((0..self.n_slots()).map(|s| so4_matrix(&self.angles(theta, s))).collect())
    }

    pub fn check_len(&self, n: usize) -> Result<()> {
        if n != self.n_params() {
            return Err(Error::Shape(format!("parameter vector has {n} entries, circuit needs {}", self.n_params())));
        }
        Ok(())
    }
}

/// Flat vector of SO(4) angles in slot order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(spec: &CircuitSpec) -> Self {
        Self { values: vec![0.0; spec.n_params()] }
    }

    pub fn new(spec: &CircuitSpec, values: Vec<f64>) -> Result<Self> {
        spec.check_len(values.len())?;
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Embeds depth-`D*` parameters into a depth-`D` circuit on the same lattice:
/// the first `D*` layers are copied, the remaining layers are zero (identity).
pub fn warm_start_extend(theta_opt: &[f64], spec_opt: &CircuitSpec, spec_full: &CircuitSpec) -> Result<ParamVector> {
    if spec_opt.lattice() != spec_full.lattice() {
        return Err(Error::Config("warm start lattice differs from target lattice".into()));
    }
    if spec_opt.depth() > spec_full.depth() {
        return Err(Error::Config(format!(
            "warm start depth {} exceeds target depth {}",
            spec_opt.depth(),
            spec_full.depth()
        )));
    }
    spec_opt.check_len(theta_opt.len())?;
    let mut values = vec![0.0; spec_full.n_params()];
    values[..theta_opt.len()].copy_from_slice(theta_opt);
    Ok(ParamVector { values })
}

/// On-disk parameter checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub lattice: LatticeKind,
    pub depth: usize,
    pub slot_order_version: u32,
    pub n_params: usize,
    pub values: Vec<f64>,
}

impl Checkpoint {
    pub fn new(spec: &CircuitSpec, theta: &[f64]) -> Result<Self> {
        spec.check_len(theta.len())?;
        Ok(Self {
            lattice: spec.lattice().kind(),
            depth: spec.depth(),
            slot_order_version: SLOT_ORDER_VERSION,
            n_params: theta.len(),
            values: theta.to_vec(),
        })
    }

    /// Rebuilds the circuit this checkpoint was written for.
    pub fn spec(&self) -> Result<CircuitSpec> {
        if self.slot_order_version != SLOT_ORDER_VERSION {
            return Err(Error::Config(format!(
                "checkpoint slot order version {} is not supported (expected {SLOT_ORDER_VERSION})",
                self.slot_order_version
            )));
        }
        let spec = CircuitSpec::new(&Lattice::from_kind(self.lattice)?, self.depth)?;
        if self.n_params != self.values.len() {
            return Err(Error::Config("checkpoint n_params disagrees with its values".into()));
        }
        spec.check_len(self.values.len())?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        ck.spec()?;
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// Scaling-and-squaring Taylor exponential, independent of the closed form.
    fn expm_oracle(a: &Mat4) -> Mat4 {
        let norm = frob_dot(a, a).sqrt();
        let s = (norm.log2().ceil().max(0.0) as i32) + 4;
        let scaled = lin(&[(0.5f64.powi(s), a)]);
        let mut result = identity4();
        let mut term = identity4();
        for k in 1..30 {
            term = lin(&[(1.0 / k as f64, &matmul4(&term, &scaled))]);
            result = lin(&[(1.0, &result), (1.0, &term)]);
        }
        for _ in 0..s {
            result = matmul4(&result, &result);
        }
        result
    }

    fn det4(m: &Mat4) -> f64 {
        // Laplace expansion along the first row.
        let minor = |c: usize| {
            let mut sub = [[0.0; 3]; 3];
            for i in 1..4 {
                let mut jj = 0;
                for j in 0..4 {
                    if j != c {
                        sub[i - 1][jj] = m[i][j];
                        jj += 1;
                    }
                }
            }
            sub[0][0] * (sub[1][1] * sub[2][2] - sub[1][2] * sub[2][1])
                - sub[0][1] * (sub[1][0] * sub[2][2] - sub[1][2] * sub[2][0])
                + sub[0][2] * (sub[1][0] * sub[2][1] - sub[1][1] * sub[2][0])
        };
        (0..4).map(|c| if c % 2 == 0 { 1.0 } else { -1.0 } * m[0][c] * minor(c)).sum()
    }

    fn max_diff(a: &Mat4, b: &Mat4) -> f64 {
        (0..16).map(|k| (a[k / 4][k % 4] - b[k / 4][k % 4]).abs()).fold(0.0, f64::max)
    }

    fn random_angles(rng: &mut ChaCha8Rng, scale: f64) -> [f64; 6] {
        std::array::from_fn(|_| rng.random_range(-scale..scale))
    }

    #[test]
    fn zero_angles_identity() {
        assert_eq!(so4_matrix(&[0.0; 6]), identity4());
    }

    #[test]
    fn pi_rotation_in_first_plane() {
        let m = so4_matrix(&[PI, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let mut expect = identity4();
        expect[0][0] = -1.0;
        expect[1][1] = -1.0;
        assert!(max_diff(&m, &expect) < 1e-14);
    }

    #[test]
    fn matches_expm_oracle_and_is_special_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let th = random_angles(&mut rng, 3.0);
            let m = so4_matrix(&th);
            assert!(max_diff(&m, &expm_oracle(&antisym(&th))) < 1e-12);
            assert!(max_diff(&matmul4(&transpose4(&m), &m), &identity4()) < 1e-12);
            assert!((det4(&m) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_generator_periodicity() {
        for k in 0..6 {
            let mut th = [0.0; 6];
            th[k] = 0.7;
            let a = so4_matrix(&th);
            th[k] += 2.0 * PI;
            assert!(max_diff(&a, &so4_matrix(&th)) < 1e-12);
        }
    }

    #[test]
    fn derivatives_at_zero_are_generators() {
        let d = so4_derivatives(&[0.0; 6]);
        for (k, dk) in d.iter().enumerate() {
            assert!(max_diff(dk, &generator(k)) < 1e-15);
        }
    }

    #[test]
    fn derivatives_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-5;
        for _ in 0..20 {
            let th = random_angles(&mut rng, 2.5);
            let d = so4_derivatives(&th);
            for k in 0..6 {
                let (mut p, mut m) = (th, th);
                p[k] += h;
                m[k] -= h;
                let fd = lin(&[(0.5 / h, &so4_matrix(&p)), (-0.5 / h, &so4_matrix(&m))]);
                let scale = frob_dot(&d[k], &d[k]).sqrt().max(1e-3);
                assert!(max_diff(&fd, &d[k]) / scale < 1e-7, "k={k}");
            }
        }
    }

    #[test]
    fn derivative_keeps_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let th = random_angles(&mut rng, 3.0);
        let m = so4_matrix(&th);
        for dk in so4_derivatives(&th) {
            let x = matmul4(&transpose4(&m), &dk);
            let asym = lin(&[(1.0, &x), (1.0, &transpose4(&x))]);
            assert!(max_diff(&asym, &[[0.0; 4]; 4]) < 1e-10);
        }
    }

    #[test]
    fn circuit_counts() {
        let spec = CircuitSpec::new(&Lattice::square(2, 2).unwrap(), 1).unwrap();
        assert_eq!((spec.n_slots(), spec.n_params()), (4, 24));
        let spec = CircuitSpec::new(&Lattice::square(5, 5).unwrap(), 4).unwrap();
        assert_eq!((spec.n_slots(), spec.n_params()), (160, 960));
        assert!(CircuitSpec::new(&Lattice::square(2, 2).unwrap(), 0).is_err());
    }

    #[test]
    fn slot_order_is_stable_and_bijective() {
        let lat = Lattice::heavyhex(28).unwrap();
        let a = CircuitSpec::new(&lat, 3).unwrap();
        let b = CircuitSpec::new(&lat, 3).unwrap();
        assert_eq!(a.slots(), b.slots());
        for (i, s) in a.slots().iter().enumerate() {
            assert_eq!(a.slot_index(s), Some(i));
        }
        // layer-major, then group, then edge
        for w in a.slots().windows(2) {
            assert!((w[0].layer, w[0].group, w[0].edge) < (w[1].layer, w[1].group, w[1].edge));
        }
    }

    #[test]
    fn warm_start_embedding() {
        let lat = Lattice::heavyhex(53).unwrap();
        let s2 = CircuitSpec::new(&lat, 2).unwrap();
        let s20 = CircuitSpec::new(&lat, 20).unwrap();
        let theta: Vec<f64> = (0..s2.n_params()).map(|k| 0.01 * (k as f64 + 1.0)).collect();
        let full = warm_start_extend(&theta, &s2, &s20).unwrap();
        let nonzero = full.values.iter().rposition(|&x| x != 0.0).unwrap() + 1;
        assert_eq!(nonzero, 6 * 2 * lat.n_edges());
        assert_eq!(warm_start_extend(&theta, &s2, &s2).unwrap().values, theta);
        assert!(warm_start_extend(&full.values, &s20, &s2).is_err());
        let other = CircuitSpec::new(&Lattice::heavyhex(28).unwrap(), 20).unwrap();
        assert!(warm_start_extend(&theta, &s2, &other).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let spec = CircuitSpec::new(&Lattice::square(3, 3).unwrap(), 2).unwrap();
        let theta: Vec<f64> = (0..spec.n_params()).map(|k| (k as f64).sin()).collect();
        let ck = Checkpoint::new(&spec, &theta).unwrap();
        let text = serde_json::to_string(&ck).unwrap();
        let back: Checkpoint = serde_json::from_str(&text).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.spec().unwrap().slots(), spec.slots());
    }
}
