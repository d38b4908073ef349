//! Axially symmetric steady states of the Vlasov–Poisson system.
//!
//! Starting from a spherically symmetric polytrope, the solver deforms the
//! potential along a one-parameter family of distribution functions
//! f = φ(E₀ − E) ψ(γ P), where P is the angular momentum about the symmetry
//! axis, and tracks the branch by Newton continuation in γ.

pub mod config;
pub mod error;
pub mod field;
pub mod geometry;
pub mod numerics;
pub mod operator;
pub mod io;
pub mod model;
pub mod profiles;
pub mod spherical;

pub use error::{Error, Result};
