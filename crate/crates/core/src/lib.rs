//! Open-loop control synthesis for discrete-time linear systems
//! `x(k+1) = A(k) x(k) + B u(k)` whose state matrices have independent random
//! entries, subject to a joint polytopic chance constraint.
//!
//! The pipeline is:
//!
//! 1. [`moments`] propagates exact means and variances of `G x(k)` through the
//!    random matrix products, giving an expression affine (mean) and quadratic
//!    (variance) in the stacked input `U`.
//! 2. [`reformulate`] applies Boole's inequality and the one-sided
//!    Vysochanskij–Petunin bound, turning the joint chance constraint into
//!    `E + λ·Std ≤ h` rows plus a risk budget on the `λ`s.
//! 3. [`acs`] alternates between a second-order cone program in `U`
//!    (solved by [`conic`]) and a reallocation of `λ`.
//!
//! [`scenario`] provides the sampled-constraint baseline and [`stochastics`]
//! the distributions, samplers and Monte-Carlo certification.

pub mod acs;
pub mod cli;
pub mod config;
pub mod conic;
pub mod error;
pub mod moments;
pub mod reformulate;
pub mod report;
pub mod scenario;
pub mod stochastics;

pub use error::{Error, Result};
