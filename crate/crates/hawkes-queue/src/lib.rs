//! Infinite-server queues with self-exciting arrivals and state-dependent
//! self-exciting services.
//!
//! The arrival stream is a counting process whose intensity decays toward a
//! baseline at rate `r` and jumps by a random amount `B` at each arrival. Each
//! customer in service contributes a shared per-customer intensity factor that
//! decays toward its own baseline at rate `s`, jumps by a random amount `C` at
//! each service completion, and re-anchors when a busy period starts. The crate
//! provides:
//!
//! - an exact thinning simulator for the joint process (population, arrival
//!   intensity, service intensity), with reproducible seeded Monte Carlo
//!   estimators ([`sim`]);
//! - closed-form transient and stationary moments of the arrival process and
//!   its intensity, plus a recursive moment ODE system ([`moments`]);
//! - the joint transform `E[z^N e^{-u lambda} e^{-v mu}]` evaluated by
//!   integrating reversed-time ODE systems, for the full model and its
//!   constant-rate / memoryless-service / fully memoryless reductions
//!   ([`transform`]);
//! - probability mass recovery from the transform by stabilized finite
//!   differences in `z` ([`transform::pmf_from_pgf`]);
//! - a validation harness that cross-checks every analytic object against the
//!   simulator and arbitrates the sign/convention ambiguities that arise in
//!   the closed forms ([`validate`]).
//!
//! Fixed-step and adaptive Runge-Kutta integrators live in [`ode`]; model
//! parameter types and jump-size distributions live in [`model`].

// Negated float comparisons such as `!(x > 0.0)` are NaN guards: they reject
// NaN, which the un-negated form would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod model;
pub mod moments;
pub mod numfmt;
pub mod ode;
pub mod sim;
pub mod transform;
pub mod validate;

use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped by how the CLI maps them to exit codes: parameter and
/// query problems are domain errors (exit 1), integrator and simulation
/// breakdowns are numerical errors (exit 2), failed validation suites are
/// reported separately (exit 3).
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or query value violates its documented range.
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: String, reason: String },

    /// A simulated path exceeded the event cap before reaching the horizon.
    /// Runaway event counts are expected exactly when the mean arrival jump
    /// E[B] is at or above the decay rate r, so the error names that bound.
    #[error(
        "path for seed {seed} exceeded {cap} events by t={t:.6}; \
         the arrival side is stable only when E[B] < r (here E[B]={mean_jump}, r={r})"
    )]
    Explosion {
        seed: u64,
        cap: u64,
        t: f64,
        mean_jump: f64,
        r: f64,
    },

    /// The adaptive integrator drove the step size below the representable
    /// minimum, which signals a blow-up or an unresolvable stiffness in the
    /// right-hand side.
    #[error("step size underflow at t={t}: next step {h:.3e} is below {min:.3e}")]
    StepUnderflow { t: f64, h: f64, min: f64 },

    /// A computed quantity left its mathematically guaranteed range
    /// (non-finite state, probability outside [0,1] beyond tolerance, ...).
    #[error("numerical range violation in {context}: {detail}")]
    RangeViolation { context: String, detail: String },

    /// Input document (JSON parameters, CLI grid syntax, ...) failed to parse.
    #[error("malformed input: {0}")]
    Malformed(String),

    /// Filesystem or serialization failure while writing reports.
    #[error("output error: {0}")]
    Output(String),
}

impl Error {
    /// Shorthand for an [`Error::InvalidParameter`] naming the offending
    /// field.
    pub fn invalid(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
