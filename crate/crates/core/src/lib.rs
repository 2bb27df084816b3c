//! Constrained quantum dynamics on trial manifolds.
//!
//! States are restricted to a finite-parameter family `x -> |Z_x>` and move
//! along the Hamiltonian flow induced by the pulled-back symplectic form.
//! Closed orbits whose accumulated geometric phase is an integer multiple of
//! `2 pi` are selected, and approximate eigenstates are rebuilt from them by
//! time-averaging the parallel-transported orbit.

pub mod cli;
pub mod error;
pub mod flow;
pub mod hilbert;
pub mod integrator;
pub mod manifold;
pub mod models;
pub mod optimize;
pub mod orbit;
pub mod requantize;
pub mod rpa;
pub mod variational;

pub use error::{Error, Result};
pub use hilbert::{C64, ComplexMatrix, HermitianOperator, PhysicalConstants, SpectralDecomposition, StateVector};
pub use manifold::ManifoldChart;
