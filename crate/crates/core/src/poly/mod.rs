//! Multivariate polynomial algebra over time-tagged disturbance variables.

mod dynamics;
mod kron;
mod monomial;
pub(crate) mod polynomial;

pub use dynamics::{FitDiagnostics, PolyDynamics};
pub use kron::{kron_index, kron_power};
pub use monomial::{AlphaFactor, AlphaId, FactorKind, Monomial, Shape, VarId};
pub use polynomial::{Polynomial, MERGE_TOLERANCE};


pub(crate) mod polynomial_wire {
    pub(crate) use super::polynomial::TermWire;
}
