//! Shot-noise model of threshold-limited null measurements.
//!
//! A measured level `A` is the superposition of pulses that arrive at Poisson
//! times, rise, and decay exponentially. Only `A >= x0` is observable, so the
//! null frequency `G(x) = P(A <= x)` is known for `x >= x0` alone. Exponential
//! pulse tails force `G(x) ~ C x^Q` at small `x` with `Q = sum_l q_l / a_l`,
//! which justifies straight-line extrapolation of `ln G` against `ln x`.
//!
//! Modules:
//! - [`shapes`]: pulse profiles, peaks, supports and level durations.
//! - [`process`]: seeded, parallel-deterministic sampling of the amplitude.
//! - [`transform`]: weighted level duration, kernel `Q(F)`, Laplace identity.
//! - [`density`]: forward solver for `A rho(A) = int_0^A Q(F) rho(A-F) dF`.
//! - [`inference`]: empirical CDF, censoring, log-log fit, extrapolation.
//! - [`cli`]: config parsing and the command-line subcommands.

pub mod cli;
pub mod density;
pub mod error;
pub mod inference;
pub mod process;
pub mod quad;
pub mod shapes;
pub mod stats;
pub mod transform;

pub use error::{Error, Result};
