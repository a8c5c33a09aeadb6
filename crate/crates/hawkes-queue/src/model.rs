//! Model parameter types and jump-size distributions.
//!
//! Everything downstream (simulator, moment formulas, transform ODEs) is
//! parameterized by [`ArrivalParams`] and [`ServiceParams`], bundled with a
//! [`ModelKind`] into [`ModelParams`]. Jump sizes for both the arrival and the
//! service intensity are described by [`JumpDist`], which carries its exact
//! Laplace transform and raw moments so the analytic modules never need
//! numerical integration over the jump law.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Distribution of a positive intensity jump size.
///
/// Only two laws are first-class: `Exponential` (the worked examples) and
/// `Constant` (degenerate; `Constant(0)` disables the excitation entirely and
/// recovers the memoryless reductions). Both admit closed-form Laplace
/// transforms and raw moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JumpDist {
    /// Exponential law with the given rate; mean is `1/rate`.
    Exponential { rate: f64 },
    /// Degenerate law putting all mass at `value >= 0`.
    Constant { value: f64 },
}

impl JumpDist {
    pub fn exponential(rate: f64) -> Result<Self> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::invalid(
                "jump rate",
                format!("exponential rate must be a positive finite real, got {rate}"),
            ));
        }
        Ok(JumpDist::Exponential { rate })
    }

    pub fn constant(value: f64) -> Result<Self> {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(Error::invalid(
                "jump value",
                format!("constant jump must be a non-negative finite real, got {value}"),
            ));
        }
        Ok(JumpDist::Constant { value })
    }

    /// Mean jump size `E[X]`.
    pub fn mean(&self) -> f64 {
        match *self {
            JumpDist::Exponential { rate } => 1.0 / rate,
            JumpDist::Constant { value } => value,
        }
    }

    /// True when the law is identically zero, i.e. the excitation is disabled.
    pub fn is_zero(&self) -> bool {
        matches!(*self, JumpDist::Constant { value } if value == 0.0)
    }

    /// Laplace transform `E[e^{-uX}]`, exact: `a/(a+u)` for `Exponential(a)`,
    /// `e^{-uc}` for `Constant(c)`. Defined for `u >= 0` and lies in `(0, 1]`.
    pub fn laplace(&self, u: f64) -> Result<f64> {
        if !(u >= 0.0) {
            return Err(Error::invalid(
                "laplace argument",
                format!("transform argument must be non-negative, got {u}"),
            ));
        }
        Ok(match *self {
            JumpDist::Exponential { rate } => rate / (rate + u),
            JumpDist::Constant { value } => (-u * value).exp(),
        })
    }

    /// Raw moment `E[X^n]` for `n >= 1`: `n!/a^n` for `Exponential(a)`,
    /// `c^n` for `Constant(c)`. `n = 0` is rejected; callers use 1 directly.
    pub fn raw_moment(&self, n: u32) -> Result<f64> {
        if n == 0 {
            return Err(Error::invalid(
                "moment order",
                "order must be at least 1; the zeroth moment is 1 by definition",
            ));
        }
        Ok(match *self {
            JumpDist::Exponential { rate } => {
                let mut m = 1.0;
                for k in 1..=n {
                    m *= f64::from(k) / rate;
                }
                m
            }
            JumpDist::Constant { value } => value.powi(n as i32),
        })
    }

    /// Draw one jump. Exponential uses the inverse-CDF method so the value is
    /// a fixed function of the generator stream.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            JumpDist::Exponential { rate } => {
                let u: f64 = rng.random();
                -(1.0 - u).ln() / rate
            }
            JumpDist::Constant { value } => value,
        }
    }
}

/// Arrival-side parameters: baseline intensity `lambda_star`, decay rate `r`,
/// initial intensity `lambda0`, and the arrival jump law `B`.
///
/// The intensity decays toward `lambda_star` at rate `r` between arrivals and
/// jumps by an independent draw of `B` at each arrival, so it never falls
/// below `min(lambda0, lambda_star)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrivalParams {
    pub lambda_star: f64,
    pub r: f64,
    pub lambda0: f64,
    pub jump: JumpDist,
}

impl ArrivalParams {
    pub fn new(lambda_star: f64, r: f64, lambda0: f64, jump: JumpDist) -> Result<Self> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::invalid(
                "r",
                format!("decay rate must be a positive finite real, got {r}"),
            ));
        }
        if !(lambda_star >= 0.0) || !lambda_star.is_finite() {
            return Err(Error::invalid(
                "lambda_star",
                format!("baseline intensity must be non-negative and finite, got {lambda_star}"),
            ));
        }
        if !(lambda0 >= 0.0) || !lambda0.is_finite() {
            return Err(Error::invalid(
                "lambda0",
                format!("initial intensity must be non-negative and finite, got {lambda0}"),
            ));
        }
        Ok(ArrivalParams {
            lambda_star,
            r,
            lambda0,
            jump,
        })
    }

    /// The arrival process stays finite on any horizon iff `E[B] < r`.
    /// Equality is constructible on purpose (the linear-growth regime is a
    /// studied case), so instability is a reported flag, not a hard error.
    pub fn is_stable(&self) -> bool {
        self.jump.mean() < self.r
    }
}

/// Service-side parameters: per-customer baseline `mu_star`, decay rate `s`,
/// busy-period anchor `mu0`, completion jump law `C`, and the reset policy.
///
/// The total service intensity is `N_t * f(t)` where `f` is a factor shared by
/// all customers: it decays toward `mu_star` at rate `s`, jumps by a draw of
/// `C` at each completion, and re-anchors to `mu0` when the system restarts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceParams {
    pub mu_star: f64,
    pub s: f64,
    pub mu0: f64,
    pub jump: JumpDist,
    /// When `true` (the default) the shared factor re-anchors to `mu0` only
    /// when an arrival starts a new busy period (population 0 -> 1). When
    /// `false` it re-anchors every time the population reaches one, including
    /// via departures; kept selectable for sensitivity runs.
    pub reset_on_busy_period_start: bool,
}

impl ServiceParams {
    pub fn new(mu_star: f64, s: f64, mu0: f64, jump: JumpDist) -> Result<Self> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::invalid(
                "s",
                format!("decay rate must be a positive finite real, got {s}"),
            ));
        }
        if !(mu_star >= 0.0) || !mu_star.is_finite() {
            return Err(Error::invalid(
                "mu_star",
                format!("baseline intensity must be non-negative and finite, got {mu_star}"),
            ));
        }
        if !(mu0 >= 0.0) || !mu0.is_finite() {
            return Err(Error::invalid(
                "mu0",
                format!("anchor intensity must be non-negative and finite, got {mu0}"),
            ));
        }
        Ok(ServiceParams {
            mu_star,
            s,
            mu0,
            jump,
            reset_on_busy_period_start: true,
        })
    }
}

/// Which analytic regime the parameters are meant to exercise. The simulator
/// treats all four identically; the kind selects the transform engine and is
/// validated against the parameters so a reduction label can never be paired
/// with parameters outside the reduction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelKind {
    /// Self-exciting arrivals, state-dependent self-exciting services.
    HawkesSdHawkes,
    /// Constant-rate (Poisson) arrivals at the given rate, state-dependent
    /// self-exciting services.
    MSdHawkes { lambda: f64 },
    /// Self-exciting arrivals, memoryless services (rate `mu_star` per
    /// customer).
    HawkesM,
    /// Poisson arrivals, memoryless services.
    Mm,
}

/// Full model parameterization: both intensity sides plus the regime label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsDoc", into = "ParamsDoc")]
pub struct ModelParams {
    pub arrival: ArrivalParams,
    pub service: ServiceParams,
    pub kind: ModelKind,
}

impl ModelParams {
    pub fn new(arrival: ArrivalParams, service: ServiceParams, kind: ModelKind) -> Result<Self> {
        let p = ModelParams {
            arrival,
            service,
            kind,
        };
        p.validate()?;
        Ok(p)
    }

    /// Re-checks every field-level invariant plus the cross-field constraints
    /// implied by the regime label:
    ///
    /// - `MSdHawkes(lambda)` requires `lambda > 0` and an arrival side that is
    ///   actually a constant-rate process: `B = Constant(0)` and
    ///   `lambda0 = lambda_star = lambda`.
    /// - `HawkesM` requires memoryless services: `C = Constant(0)` and
    ///   `mu0 = mu_star`.
    /// - `Mm` requires both.
    pub fn validate(&self) -> Result<()> {
        ArrivalParams::new(
            self.arrival.lambda_star,
            self.arrival.r,
            self.arrival.lambda0,
            self.arrival.jump,
        )?;
        ServiceParams::new(
            self.service.mu_star,
            self.service.s,
            self.service.mu0,
            self.service.jump,
        )?;
        let constant_arrivals = self.arrival.jump.is_zero()
            && self.arrival.lambda0 == self.arrival.lambda_star;
        let memoryless_service =
            self.service.jump.is_zero() && self.service.mu0 == self.service.mu_star;
        match self.kind {
            ModelKind::HawkesSdHawkes => {}
            ModelKind::MSdHawkes { lambda } => {
                if !(lambda > 0.0) || !lambda.is_finite() {
                    return Err(Error::invalid(
                        "model.lambda",
                        format!("constant arrival rate must be positive and finite, got {lambda}"),
                    ));
                }
                if !constant_arrivals || self.arrival.lambda0 != lambda {
                    return Err(Error::invalid(
                        "model",
                        "constant-arrival regime requires arrival_jump = constant 0 and \
                         lambda0 = lambda_star = model.lambda",
                    ));
                }
            }
            ModelKind::HawkesM => {
                if !memoryless_service {
                    return Err(Error::invalid(
                        "model",
                        "memoryless-service regime requires service_jump = constant 0 and \
                         mu0 = mu_star",
                    ));
                }
            }
            ModelKind::Mm => {
                if !memoryless_service || !constant_arrivals {
                    return Err(Error::invalid(
                        "model",
                        "fully memoryless regime requires arrival_jump = constant 0, \
                         lambda0 = lambda_star, service_jump = constant 0, and mu0 = mu_star",
                    ));
                }
            }
        }
        Ok(())
    }
}

// Wire format. Field set is fixed; unknown keys are rejected so that a typo in
// a parameter file fails loudly instead of silently taking a default.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsDoc {
    lambda_star: f64,
    r: f64,
    lambda0: f64,
    arrival_jump: JumpDoc,
    mu_star: f64,
    s: f64,
    mu0: f64,
    service_jump: JumpDoc,
    model: KindDoc,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JumpDoc {
    kind: String,
    param: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum KindDoc {
    HawkesSdHawkes,
    MSdHawkes { lambda: f64 },
    HawkesM,
    #[serde(rename = "mm")]
    Mm,
}

impl TryFrom<JumpDoc> for JumpDist {
    type Error = Error;
    fn try_from(doc: JumpDoc) -> Result<Self> {
        match doc.kind.as_str() {
            "exponential" => JumpDist::exponential(doc.param),
            "constant" => JumpDist::constant(doc.param),
            other => Err(Error::Malformed(format!(
                "jump kind must be \"exponential\" or \"constant\", got \"{other}\""
            ))),
        }
    }
}

impl From<JumpDist> for JumpDoc {
    fn from(d: JumpDist) -> JumpDoc {
        match d {
            JumpDist::Exponential { rate } => JumpDoc {
                kind: "exponential".into(),
                param: rate,
            },
            JumpDist::Constant { value } => JumpDoc {
                kind: "constant".into(),
                param: value,
            },
        }
    }
}

impl TryFrom<ParamsDoc> for ModelParams {
    type Error = Error;
    fn try_from(doc: ParamsDoc) -> Result<Self> {
        let arrival = ArrivalParams::new(
            doc.lambda_star,
            doc.r,
            doc.lambda0,
            JumpDist::try_from(doc.arrival_jump)?,
        )?;
        let service = ServiceParams::new(
            doc.mu_star,
            doc.s,
            doc.mu0,
            JumpDist::try_from(doc.service_jump)?,
        )?;
        let kind = match doc.model {
            KindDoc::HawkesSdHawkes => ModelKind::HawkesSdHawkes,
            KindDoc::MSdHawkes { lambda } => ModelKind::MSdHawkes { lambda },
            KindDoc::HawkesM => ModelKind::HawkesM,
            KindDoc::Mm => ModelKind::Mm,
        };
        ModelParams::new(arrival, service, kind)
    }
}

impl From<ModelParams> for ParamsDoc {
    fn from(p: ModelParams) -> ParamsDoc {
        ParamsDoc {
            lambda_star: p.arrival.lambda_star,
            r: p.arrival.r,
            lambda0: p.arrival.lambda0,
            arrival_jump: p.arrival.jump.into(),
            mu_star: p.service.mu_star,
            s: p.service.s,
            mu0: p.service.mu0,
            service_jump: p.service.jump.into(),
            model: match p.kind {
                ModelKind::HawkesSdHawkes => KindDoc::HawkesSdHawkes,
                ModelKind::MSdHawkes { lambda } => KindDoc::MSdHawkes { lambda },
                ModelKind::HawkesM => KindDoc::HawkesM,
                ModelKind::Mm => KindDoc::Mm,
            },
        }
    }
}
