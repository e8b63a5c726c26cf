//! Transverse-field Ising model `H = -sum_<ij> Z_i Z_j - g sum_i X_i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::peps::{self, PepsState};
use crate::statevector::{self, StateVector};

/// Finite-size critical field used as the heavy-hex default.
pub const G_C_HEAVYHEX: f64 = 1.5;
/// Finite-size critical field used as the square-lattice default.
pub const G_C_SQUARE: f64 = 2.6;

/// Default critical field for a lattice family.
pub fn default_g(lattice: &Lattice) -> f64 {
    if lattice.is_square() {
        G_C_SQUARE
    } else {
        G_C_HEAVYHEX
    }
}

/// A single Pauli term of the Hamiltonian.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Term {
    /// `Z_a Z_b` on edge index `edge` with `a < b`.
    ZZ { edge: usize, a: usize, b: usize },
    X { site: usize },
}

#[derive(Clone, Debug)]
pub struct TfimHamiltonian {
    lattice: Lattice,
    g: f64,
    terms: Vec<(f64, Term)>,
}

impl TfimHamiltonian {
    pub fn new(lattice: &Lattice, g: f64) -> Self {
        let mut terms = Vec::with_capacity(lattice.n_edges() + lattice.n_sites());
        for (edge, &(a, b)) in lattice.edges().iter().enumerate() {
            terms.push((-1.0, Term::ZZ { edge, a, b }));
        }
        for site in 0..lattice.n_sites() {
            terms.push((-g, Term::X { site }));
        }
        Self { lattice: lattice.clone(), g, terms }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    /// `(coefficient, term)` pairs: one ZZ per edge followed by one X per site.
    pub fn terms(&self) -> &[(f64, Term)] {
        &self.terms
    }

    /// Energy from term values listed in [`TfimHamiltonian::terms`] order.
    pub fn assemble(&self, values: &[f64]) -> f64 {
        self.terms.iter().zip(values).map(|((c, _), v)| c * v).sum()
    }
}

/// How term expectations are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Mean-field environment from the simple-update weights.
    Su,
    /// Row-by-row boundary contraction with boundary bond dimension `chi_e`.
    BoundaryMps { chi_e: usize },
    /// Exact statevector.
    Statevector,
}

impl Method {
    /// SU-style for heavy-hex (and other non-grid lattices), boundary MPS for
    /// square grids with `chi_E = chi^2`.
    pub fn default_for(lattice: &Lattice, chi: usize) -> Self {
        if lattice.is_square() {
            Method::BoundaryMps { chi_e: chi * chi }
        } else {
            Method::Su
        }
    }
}

/// A state the energy can be evaluated on.
#[derive(Clone, Copy, Debug)]
pub enum StateRef<'a> {
    Peps(&'a PepsState),
    Vector(&'a StateVector),
}

pub fn energy(state: StateRef<'_>, h: &TfimHamiltonian, method: Method) -> Result<f64> {
    match (state, method) {
        (StateRef::Vector(psi), Method::Statevector) => statevector::tfim_energy(h, psi),
        (StateRef::Peps(p), Method::Su) => peps::energy_su(p, h),
        (StateRef::Peps(p), Method::BoundaryMps { chi_e }) => peps::energy_boundary_mps(p, h, chi_e),
        (StateRef::Peps(p), Method::Statevector) => statevector::tfim_energy(h, &p.to_statevector()?),
        (StateRef::Vector(_), m) => Err(Error::Config(format!("method {m:?} needs a PEPS state"))),
    }
}

/// `|E - E_ref| / |E_ref|`.
pub fn relative_error(e: f64, e_ref: f64) -> Result<f64> {
    if e_ref == 0.0 {
        return Err(Error::Numerical("relative error undefined for a zero reference energy".into()));
    }
    Ok((e - e_ref).abs() / e_ref.abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn term_layout() {
        let lat = Lattice::square(3, 3).unwrap();
        let h = TfimHamiltonian::new(&lat, 2.0);
        assert_eq!(h.terms().len(), 12 + 9);
        assert!(h.terms()[..12].iter().all(|(c, t)| *c == -1.0 && matches!(t, Term::ZZ { .. })));
        assert!(h.terms()[12..].iter().all(|(c, t)| *c == -2.0 && matches!(t, Term::X { .. })));
    }

    #[test]
    fn relative_error_examples() {
        assert_eq!(relative_error(-10.0, -10.0).unwrap(), 0.0);
        assert!((relative_error(-9.9, -10.0).unwrap() - 0.01).abs() < 1e-15);
        assert!(relative_error(1.0, 0.0).is_err());
    }

    #[test]
    fn product_state_energies() {
        let lat = Lattice::square(2, 3).unwrap();
        for g in [0.0, 0.7, 2.6] {
            let h = TfimHamiltonian::new(&lat, g);
            let zero = StateVector::product(lat.n_sites(), [1.0, 0.0]).unwrap();
            let e = energy(StateRef::Vector(&zero), &h, Method::Statevector).unwrap();
            assert!((e + lat.n_edges() as f64).abs() < 1e-12);
            let s = std::f64::consts::FRAC_1_SQRT_2;
            let plus = StateVector::product(lat.n_sites(), [s, s]).unwrap();
            let e = energy(StateRef::Vector(&plus), &h, Method::Statevector).unwrap();
            assert!((e + g * lat.n_sites() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn energy_is_linear_in_g() {
        let lat = Lattice::square(2, 2).unwrap();
        let psi = StateVector::new(2usize.pow(4), (0..16).map(|k| ((k * 7 % 5) as f64) - 1.5).collect()).unwrap();
        let e = |g: f64| energy(StateRef::Vector(&psi), &TfimHamiltonian::new(&lat, g), Method::Statevector).unwrap();
        let (e0, e1, e3) = (e(0.0), e(1.0), e(3.0));
        assert!((e3 - (e0 + 3.0 * (e1 - e0))).abs() < 1e-12);
    }
}
