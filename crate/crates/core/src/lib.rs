//! Obreshkov-like integrators used as numerical differentiators.
//!
//! An integrator that relates `u` to its derivatives up to order `k` can be
//! solved for the `k`-th derivative, turning it into a recursive
//! differentiator. Whether an error in the recursion's starting values dies
//! out, oscillates, or leaves a permanent offset depends only on the
//! coefficients of the highest derivative.
//!
//! - [`tableau`]: coefficient sets and the named catalog (BE, BDF2, TR, A..F).
//! - [`suitability`]: characteristic polynomial, roots, and classification.
//! - [`spectrum`]: the s-domain relative error and its zeros.
//! - [`solver`]: coefficient synthesis from root conditions.
//! - [`simulator`]: time-domain runs with improper initial values.
//! - [`reproduce`]: the oscillation, startup, bias, and error-table experiments.

pub mod reproduce;
pub mod simulator;
pub mod solver;
pub mod spectrum;
pub mod suitability;
pub mod tableau;

pub use num_complex::Complex64;
pub use simulator::{Mode, SimulationTrace, Signal};
pub use solver::{ConstraintSet, SolveError};
pub use suitability::{Classification, SuitabilityReport};
pub use tableau::{make_catalog, DifferentiatorRule, Integrator, ObreshkovTableau, TableauError};
