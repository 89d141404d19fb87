//! Optimal initial-wealth split, consumption streams, and portfolio
//! strategies for several CRRA agents sharing one self-financed portfolio,
//! in a complete market with a mean-reverting market price of risk.
//!
//! The allocation layer reduces the joint problem to independent
//! single-agent problems coupled only through a common marginal value of
//! wealth y: each agent receives x_i = y^(1/(gamma_i - 1)) s_i, where the
//! budget weights s_i come from an exponential-affine representation of the
//! relevant state-price expectations. A Monte-Carlo harness verifies every
//! closed-form quantity and the budget/martingale identities behind it.

pub mod allocation;
pub mod error;
pub mod mc_verify;
pub mod model;
pub mod num;
pub mod policy;
pub mod riccati;

pub use error::{ModelError, Result};
