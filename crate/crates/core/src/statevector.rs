//! Exact real statevector simulation for small systems.
//!
//! Qubit `i` is lattice site `i` and corresponds to bit `i` of the amplitude
//! index (little-endian). A gate on edge `(a, b)`, `a < b`, uses matrix index
//! `2 * s_a + s_b`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::circuit::{so4_derivatives, CircuitSpec, Mat4};
use crate::error::{Error, Result};
use crate::hamiltonian::{TfimHamiltonian, Term};
use crate::lattice::Lattice;
use crate::tensor::{symmetric_eigen, DenseTensor};

/// Largest register simulated by [`run_circuit`].
pub const DEFAULT_QUBIT_CAP: usize = 26;
/// Largest register diagonalized by [`exact_ground_energy`].
pub const GROUND_STATE_CAP: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<f64>,
}

impl StateVector {
    /// Wraps amplitudes; the vector is normalized.
    pub fn new(dim: usize, mut amps: Vec<f64>) -> Result<Self> {
        if !dim.is_power_of_two() || amps.len() != dim {
            return Err(Error::Shape(format!("statevector of length {} with dimension {dim}", amps.len())));
        }
        let n = norm(&amps);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Numerical("statevector has zero or non-finite norm".into()));
        }
        amps.iter_mut().for_each(|x| *x /= n);
        Ok(Self { n_qubits: dim.trailing_zeros() as usize, amps })
    }

    /// `local^{⊗n}` for a unit 2-vector `local`.
    pub fn product(n_qubits: usize, local: [f64; 2]) -> Result<Self> {
        check_cap(n_qubits, DEFAULT_QUBIT_CAP)?;
        if ((local[0] * local[0] + local[1] * local[1]) - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("local state {local:?} is not normalized")));
        }
        let amps = (0..1usize << n_qubits)
            .map(|i| (0..n_qubits).map(|q| local[(i >> q) & 1]).product())
            .collect();
        Ok(Self { n_qubits, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        norm(&self.amps)
    }

    pub fn overlap(&self, other: &Self) -> f64 {
        dot(&self.amps, &other.amps)
    }

    /// Applies `g` to qubits `(a, b)` with `a` the most significant factor.
    pub fn apply_gate(&mut self, a: usize, b: usize, g: &Mat4) {
        apply_two_qubit(&mut self.amps, a, b, g);
    }
}

fn check_cap(n: usize, cap: usize) -> Result<()> {
    if n > cap {
        return Err(Error::Config(format!("{n} qubits exceeds the statevector cap of {cap}")));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn apply_two_qubit(amps: &mut [f64], a: usize, b: usize, g: &Mat4) {
    let (ma, mb) = (1usize << a, 1usize << b);
    for i in 0..amps.len() {
        if i & ma != 0 || i & mb != 0 {
            continue;
        }
        let idx = [i, i | mb, i | ma, i | ma | mb];
        let v = idx.map(|k| amps[k]);
        for (r, &k) in idx.iter().enumerate() {
            amps[k] = g[r][0] * v[0] + g[r][1] * v[1] + g[r][2] * v[2] + g[r][3] * v[3];
        }
    }
}

/// `M_xy = sum_rest l[x, rest] r[y, rest]` over the pair `(a, b)`.
fn pair_outer(l: &[f64], r: &[f64], a: usize, b: usize) -> Mat4 {
    let (ma, mb) = (1usize << a, 1usize << b);
    let mut m = [[0.0; 4]; 4];
    for i in 0..l.len() {
        if i & ma != 0 || i & mb != 0 {
            continue;
        }
        let idx = [i, i | mb, i | ma, i | ma | mb];
        for x in 0..4 {
            let lx = l[idx[x]];
            for y in 0..4 {
                m[x][y] += lx * r[idx[y]];
            }
        }
    }
    m
}

/// Applies the circuit to `initial` in slot order.
pub fn run_circuit(spec: &CircuitSpec, theta: &[f64], initial: &StateVector) -> Result<StateVector> {
    check_cap(initial.n_qubits, DEFAULT_QUBIT_CAP)?;
    if initial.n_qubits != spec.lattice().n_sites() {
        return Err(Error::Shape("initial state size differs from lattice size".into()));
    }
    let gates = spec.gates(theta)?;
    let mut psi = initial.clone();
    for (slot, g) in spec.slots().iter().zip(&gates) {
        let (a, b) = spec.lattice().edge(slot.edge);
        psi.apply_gate(a, b, g);
    }
    Ok(psi)
}

/// `out = H v` without materializing `H`.
pub fn apply_hamiltonian(h: &TfimHamiltonian, v: &[f64], out: &mut [f64]) {
    let lat = h.lattice();
    for (i, o) in out.iter_mut().enumerate() {
        let mut diag = 0.0;
        for &(a, b) in lat.edges() {
            let parity = ((i >> a) ^ (i >> b)) & 1;
            diag -= if parity == 0 { 1.0 } else { -1.0 };
        }
        let mut acc = diag * v[i];
        for s in 0..lat.n_sites() {
            acc -= h.g() * v[i ^ (1 << s)];
        }
        *o = acc;
    }
}

/// `⟨P⟩` for a single Pauli term.
pub fn term_expectation(psi: &StateVector, term: Term) -> f64 {
    let amps = &psi.amps;
    match term {
        Term::ZZ { a, b, .. } => amps
            .iter()
            .enumerate()
            .map(|(i, x)| if ((i >> a) ^ (i >> b)) & 1 == 0 { x * x } else { -x * x })
            .sum(),
        Term::X { site } => amps.iter().enumerate().map(|(i, x)| x * amps[i ^ (1 << site)]).sum(),
    }
}

pub fn tfim_energy(h: &TfimHamiltonian, psi: &StateVector) -> Result<f64> {
    if psi.n_qubits != h.lattice().n_sites() {
        return Err(Error::Shape("statevector size differs from lattice size".into()));
    }
    let mut hv = vec![0.0; psi.amps.len()];
    apply_hamiltonian(h, &psi.amps, &mut hv);
    Ok(dot(&psi.amps, &hv) / dot(&psi.amps, &psi.amps))
}

/// Energy of the circuit state and its gradient by the adjoint method.
pub fn energy_and_gradient(
    spec: &CircuitSpec,
    theta: &[f64],
    initial: &StateVector,
    h: &TfimHamiltonian,
) -> Result<(f64, Vec<f64>)> {
    let gates = spec.gates(theta)?;
    let mut psi = run_circuit(spec, theta, initial)?.amps;
    let mut lam = vec![0.0; psi.len()];
    apply_hamiltonian(h, &psi, &mut lam);
    let e = dot(&psi, &lam);
    let mut grad = vec![0.0; spec.n_params()];
    for s in (0..spec.n_slots()).rev() {
        let (a, b) = spec.lattice().edge(spec.slots()[s].edge);
        let gt = crate::circuit::transpose4(&gates[s]);
        apply_two_qubit(&mut psi, a, b, &gt);
        let m = pair_outer(&lam, &psi, a, b);
        for (k, dg) in so4_derivatives(&spec.angles(theta, s)).iter().enumerate() {
            let mut acc = 0.0;
            for x in 0..4 {
                for y in 0..4 {
                    acc += m[x][y] * dg[x][y];
                }
            }
            grad[6 * s + k] = 2.0 * acc;
        }
        apply_two_qubit(&mut lam, a, b, &gt);
    }
    Ok((e, grad))
}

/// Lowest eigenvalue of the TFIM by restarted Lanczos with full
/// reorthogonalization.
pub fn exact_ground_energy(lattice: &Lattice, g: f64) -> Result<f64> {
    let n = lattice.n_sites();
    check_cap(n, GROUND_STATE_CAP)?;
    let h = TfimHamiltonian::new(lattice, g);
    let dim = 1usize << n;
    if dim <= 64 {
        let (vals, _) = symmetric_eigen(&dense_hamiltonian(&h))?;
        return Ok(vals[0]);
    }
    let krylov = if n >= 18 { 30 } else { 60 }.min(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut start: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let tol = 1e-10;
    let mut last = f64::INFINITY;
    for _restart in 0..200 {
        let nrm = norm(&start);
        start.iter_mut().for_each(|x| *x /= nrm);
        let mut basis: Vec<Vec<f64>> = vec![start.clone()];
        let mut alpha = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut w = vec![0.0; dim];
        for j in 0..krylov {
            apply_hamiltonian(&h, &basis[j], &mut w);
            alpha.push(dot(&basis[j], &w));
            for _ in 0..2 {
                for v in &basis {
                    let c = dot(v, &w);
                    w.iter_mut().zip(v).for_each(|(x, y)| *x -= c * y);
                }
            }
            let b = norm(&w);
            if j + 1 == krylov || b < 1e-13 {
                beta.push(b);
                break;
            }
            beta.push(b);
            basis.push(w.iter().map(|x| x / b).collect());
        }
        let m = alpha.len();
        let t = DenseTensor::from_fn(&[m, m], |ix| {
            let (i, j) = (ix[0], ix[1]);
            if i == j {
                alpha[i]
            } else if i + 1 == j {
                beta[i]
            } else if j + 1 == i {
                beta[j]
            } else {
                0.0
            }
        });
        let (vals, vecs) = symmetric_eigen(&t)?;
        let y: Vec<f64> = (0..m).map(|i| vecs.get(&[i, 0])).collect();
        let residual = beta[m - 1] * y[m - 1].abs();
        if residual < tol || (vals[0] - last).abs() < 1e-14 * vals[0].abs().max(1.0) {
            return Ok(vals[0]);
        }
        last = vals[0];
        start = vec![0.0; dim];
        for (yi, v) in y.iter().zip(&basis) {
            start.iter_mut().zip(v).for_each(|(x, vv)| *x += yi * vv);
        }
    }
    Err(Error::Numerical("Lanczos did not converge".into()))
}

/// Dense `2^N x 2^N` Hamiltonian (small systems and tests).
pub fn dense_hamiltonian(h: &TfimHamiltonian) -> DenseTensor {
    let dim = 1usize << h.lattice().n_sites();
    let mut m = DenseTensor::zeros(&[dim, dim]);
    let mut e = vec![0.0; dim];
    let mut col = vec![0.0; dim];
    for j in 0..dim {
        e[j] = 1.0;
        apply_hamiltonian(h, &e, &mut col);
        for i in 0..dim {
            m.data_mut()[i * dim + j] = col[i];
        }
        e[j] = 0.0;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{so4_matrix, transpose4};

    fn chain(n: usize) -> Lattice {
        Lattice::square(1, n).unwrap()
    }

    fn random_theta(spec: &CircuitSpec, seed: u64, scale: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..spec.n_params()).map(|_| rng.random_range(-scale..scale)).collect()
    }

    /// Independent oracle: explicit Kronecker-product Hamiltonian.
    fn kron_hamiltonian(lat: &Lattice, g: f64) -> DenseTensor {
        let n = lat.n_sites();
        let dim = 1usize << n;
        DenseTensor::from_fn(&[dim, dim], |ix| {
            let (i, j) = (ix[0], ix[1]);
            let mut v = 0.0;
            if i == j {
                for &(a, b) in lat.edges() {
                    let za = 1.0 - 2.0 * ((i >> a) & 1) as f64;
                    let zb = 1.0 - 2.0 * ((i >> b) & 1) as f64;
                    v -= za * zb;
                }
            }
            let diff = i ^ j;
            if diff.count_ones() == 1 {
                v -= g;
            }
            v
        })
    }

    #[test]
    fn two_site_ground_energy() {
        let e = exact_ground_energy(&chain(2), 1.0).unwrap();
        assert!((e + 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_field_ground_energy() {
        for lat in [chain(5), Lattice::square(3, 3).unwrap(), Lattice::square(2, 4).unwrap()] {
            let e = exact_ground_energy(&lat, 0.0).unwrap();
            assert!((e + lat.n_edges() as f64).abs() < 1e-9, "{e}");
        }
    }

    #[test]
    fn lanczos_matches_dense_diagonalization() {
        for (lat, g) in [(Lattice::square(3, 3).unwrap(), 2.6), (Lattice::square(2, 4).unwrap(), 1.3), (chain(10), 0.9)] {
            let (vals, _) = symmetric_eigen(&kron_hamiltonian(&lat, g)).unwrap();
            let e = exact_ground_energy(&lat, g).unwrap();
            assert!((e - vals[0]).abs() < 1e-9, "{e} vs {}", vals[0]);
        }
    }

    #[test]
    fn three_by_three_regression() {
        let e = exact_ground_energy(&Lattice::square(3, 3).unwrap(), 2.6).unwrap();
        assert!((e - GROUND_3X3_G26).abs() < 1e-9, "{e}");
    }

    /// Pinned from the dense cross-check above.
    const GROUND_3X3_G26: f64 = -24.673_145_076_728_385;

    #[test]
    fn matrix_free_matches_kron() {
        let lat = Lattice::square(2, 3).unwrap();
        let h = TfimHamiltonian::new(&lat, 0.8);
        let dense = dense_hamiltonian(&h);
        let oracle = kron_hamiltonian(&lat, 0.8);
        let diff = dense.data().iter().zip(oracle.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-14);
    }

    #[test]
    fn zero_theta_is_identity() {
        let lat = Lattice::square(3, 4).unwrap();
        let spec = CircuitSpec::new(&lat, 3).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let init = StateVector::product(lat.n_sites(), [s, s]).unwrap();
        let out = run_circuit(&spec, &vec![0.0; spec.n_params()], &init).unwrap();
        assert_eq!(out, init);
    }

    #[test]
    fn single_pi_gate_flips_sign() {
        let spec = CircuitSpec::new(&chain(2), 1).unwrap();
        let init = StateVector::product(2, [1.0, 0.0]).unwrap();
        let out = run_circuit(&spec, &[std::f64::consts::PI, 0.0, 0.0, 0.0, 0.0, 0.0], &init).unwrap();
        assert!((out.amplitudes()[0] + 1.0).abs() < 1e-14);
        assert!((out.norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn random_circuit_preserves_norm_and_inverts() {
        let lat = Lattice::square(3, 3).unwrap();
        let spec = CircuitSpec::new(&lat, 2).unwrap();
        let theta = random_theta(&spec, 3, std::f64::consts::PI);
        let init = StateVector::product(9, [1.0, 0.0]).unwrap();
        let out = run_circuit(&spec, &theta, &init).unwrap();
        assert!((out.norm() - 1.0).abs() < 1e-12);
        let mut back = out.clone();
        for (s, slot) in spec.slots().iter().enumerate().rev() {
            let (a, b) = lat.edge(slot.edge);
            back.apply_gate(a, b, &transpose4(&so4_matrix(&spec.angles(&theta, s))));
        }
        let diff = back.amplitudes().iter().zip(init.amplitudes()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-10);
    }

    #[test]
    fn adjoint_gradient_matches_finite_differences() {
        let lat = Lattice::square(2, 3).unwrap();
        let spec = CircuitSpec::new(&lat, 2).unwrap();
        let h = TfimHamiltonian::new(&lat, 1.3);
        let init = StateVector::product(6, [1.0, 0.0]).unwrap();
        let theta = random_theta(&spec, 9, 1.0);
        let (e, grad) = energy_and_gradient(&spec, &theta, &init, &h).unwrap();
        let energy = |t: &[f64]| tfim_energy(&h, &run_circuit(&spec, t, &init).unwrap()).unwrap();
        assert!((e - energy(&theta)).abs() < 1e-12);
        let step = 1e-5;
        for k in 0..spec.n_params() {
            let mut p = theta.clone();
            p[k] += step;
            let mut m = theta.clone();
            m[k] -= step;
            let fd = (energy(&p) - energy(&m)) / (2.0 * step);
            assert!((fd - grad[k]).abs() < 1e-7 * (1.0 + fd.abs()), "k={k}: {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn cap_enforced() {
        assert!(StateVector::product(27, [1.0, 0.0]).is_err());
        assert!(exact_ground_energy(&chain(21), 1.0).is_err());
    }
}
