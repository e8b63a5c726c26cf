//! Tensor-network pre-optimization of brickwall SO(4) circuits for the
//! transverse-field Ising model.
//!
//! The crate is organised bottom-up:
//!
//! * [`lattice`] builds square grids and heavy-hex coupling maps together with
//!   their brickwall edge colorings.
//! * [`tensor`] holds the dense real tensor kernels (contraction, permutation,
//!   truncated SVD) and [`autodiff`] records them on a tape for reverse mode.
//! * [`circuit`] lays out the SO(4) brickwall ansatz and its parameters.
//! * [`peps`] implements simple-update evolution, SU-regauging, SU-style and
//!   boundary-MPS expectation values and imaginary-time reference energies.
//! * [`hamiltonian`] and [`statevector`] provide the TFIM model and the exact
//!   small-system oracle.
//! * [`optimize`], [`landscape`] and [`scaling`] are the three experiment
//!   pipelines: L-BFGS pre-optimization, variance scans around a warm start,
//!   and error-versus-time scaling fits.
//!
//! All arithmetic is real (`f64`): SO(4) gates, the TFIM Hamiltonian in the
//! computational basis and the product initial states are real, so complex
//! storage is never needed.

pub mod autodiff;
pub mod circuit;
pub mod error;
pub mod hamiltonian;
pub mod landscape;
pub mod lattice;
pub mod optimize;
pub mod peps;
pub mod scaling;
pub mod statevector;
pub mod tensor;

pub use error::{Error, Result};
