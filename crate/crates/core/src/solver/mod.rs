//! Rank-K non-negative CP factorization of a count tensor under a Poisson
//! likelihood, fitted by multiplicative (majorize-minimize) updates.
//!
//! The model rate of an admissible cell is
//!
//! ```text
//! rate(i, j, t) = sum_k  weight_k * O[i,k] * D[j,k] * T[t,k]
//! ```
//!
//! and diagonal cells (`i == j`) are structural zeros: they carry no data
//! and no model mass.

mod fit;
mod model;
mod update;

pub use fit::{fit, init_factors, FitConfig, FitResult, FitTrace};
pub use model::{FactorModel, Mode};
pub use update::{log_likelihood, mode_update, LogLikelihood, Prior, RATE_FLOOR};
