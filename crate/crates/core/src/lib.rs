//! Numerics for symmetric alpha-stable processes with Kato-class drift:
//! the perturbation-series heat kernel of the drifted generator, the
//! Neumann-series resolvent, and Monte Carlo simulation of
//! dX = dY + b(X) dt, cross-validated against each other and against
//! closed-form oracles.

pub mod error;
pub mod quad;
pub mod special;
pub mod stable;

pub use error::{Error, Result};
pub use stable::{RadialProfile, StableParams};

pub mod kato;
pub mod heat;
pub mod resolvent;
