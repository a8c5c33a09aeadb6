//! Transient and stationary moments of the arrival process and its intensity.
//!
//! Closed forms exist for `E[lambda_t]`, `Var[lambda_t]`, `E[M_t]`, and
//! `Var[M_t]`; all four have removable singularities at `E[B] = r` (the
//! critical regime where the intensity grows linearly instead of relaxing to
//! a stationary level). Evaluation therefore switches between three regimes
//! keyed on `kappa = r - E[B]`:
//!
//! - exactly critical (`|kappa| < 1e-9 * r`): the polynomial-in-t critical
//!   forms;
//! - nearly critical (`|kappa| * t` small): a Taylor expansion in `kappa`
//!   around the critical forms, because the generic expressions cancel to
//!   O(kappa^3) and lose up to 7 significant digits in f64;
//! - otherwise: the generic closed forms.
//!
//! Second moments depend on the second moment of the jump law. Two
//! conventions are selectable ([`MomentConvention`]): the squared mean
//! `(E[B])^2` as some sources print it, and the raw moment `E[B^2]`. They
//! coincide for constant jumps and differ by a factor 2 for exponential ones;
//! the validation suite arbitrates empirically and the crate default is
//! [`MomentConvention::RawMoments`].
//!
//! A recursive ODE system ([`moment_ode_solve`]) provides joint moments
//! `E[lambda^n M^k]` up to total order 4 and doubles as an independent check
//! of every closed form.

use serde::{Deserialize, Serialize};

use crate::model::{ArrivalParams, JumpDist};
use crate::ode::{integrate_adaptive, OdeProblem};
use crate::{numfmt, Error, Result};

/// Which second (and higher) jump moment enters the variance formulas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentConvention {
    /// Powers of the mean: `(E[B])^k`.
    AsWritten,
    /// Raw moments `E[B^k]`. Crate default; empirically selected by the
    /// variance arbitration in the validation suite.
    RawMoments,
}

impl MomentConvention {
    /// `B_hat_k`: the k-th jump moment under this convention.
    pub fn jump_moment(&self, jump: &JumpDist, k: u32) -> f64 {
        if k == 0 {
            return 1.0;
        }
        match self {
            MomentConvention::AsWritten => jump.mean().powi(k as i32),
            MomentConvention::RawMoments => jump
                .raw_moment(k)
                .expect("k >= 1 is always a valid raw moment order"),
        }
    }
}

/// Crate-wide default convention.
pub const DEFAULT_CONVENTION: MomentConvention = MomentConvention::RawMoments;

/// Below `|kappa| < CRITICAL_EPS_FACTOR * r` the critical-regime forms are
/// used verbatim; the generic formulas divide by powers of kappa and are
/// meaningless this close to criticality.
const CRITICAL_EPS_FACTOR: f64 = 1e-9;

/// Below `|kappa| * t < SERIES_THRESHOLD` the kappa-Taylor branch replaces
/// the generic forms. At the boundary both branches carry ~6e-10 relative
/// error (series truncation ~ (kappa t)^4 / 4! on one side, f64 cancellation
/// of the O(kappa^3) bracket on the other), so the crossover is seamless.
const SERIES_THRESHOLD: f64 = 5e-3;

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::invalid("t", format!("need t >= 0, got {t}")));
    }
    Ok(())
}

enum Regime {
    Critical,
    Series(f64),
    Generic(f64),
}

fn regime(p: &ArrivalParams, t: f64) -> Regime {
    let kappa = p.r - p.jump.mean();
    if kappa.abs() < CRITICAL_EPS_FACTOR * p.r {
        Regime::Critical
    } else if kappa.abs() * t < SERIES_THRESHOLD {
        Regime::Series(kappa)
    } else {
        Regime::Generic(kappa)
    }
}

/// Horner evaluation of `a0 + a1 k + a2 k^2 + a3 k^3`.
fn horner(k: f64, a: [f64; 4]) -> f64 {
    ((a[3] * k + a[2]) * k + a[1]) * k + a[0]
}

/// `E[lambda_t]`: relaxation from `lambda0` toward `r lambda_star / kappa`,
/// or linear growth `lambda0 + r lambda_star t` in the critical regime.
pub fn mean_lambda(p: &ArrivalParams, t: f64) -> Result<f64> {
    check_time(t)?;
    let (ls, l0, r) = (p.lambda_star, p.lambda0, p.r);
    Ok(match regime(p, t) {
        Regime::Critical => l0 + r * ls * t,
        Regime::Series(k) => horner(
            k,
            [
                l0 + r * ls * t,
                -l0 * t - r * ls * t * t / 2.0,
                l0 * t * t / 2.0 + r * ls * t.powi(3) / 6.0,
                -l0 * t.powi(3) / 6.0 - r * ls * t.powi(4) / 24.0,
            ],
        ),
        Regime::Generic(k) => {
            let linf = r * ls / k;
            linf + (l0 - linf) * (-k * t).exp()
        }
    })
}

/// `Var[lambda_t]` under the chosen jump-moment convention.
pub fn var_lambda(p: &ArrivalParams, t: f64, conv: MomentConvention) -> Result<f64> {
    check_time(t)?;
    let (ls, l0, r) = (p.lambda_star, p.lambda0, p.r);
    let q = conv.jump_moment(&p.jump, 2);
    Ok(match regime(p, t) {
        Regime::Critical => q * (l0 * t + r * ls * t * t / 2.0),
        Regime::Series(k) => horner(
            k,
            [
                q * (l0 * t + r * ls * t * t / 2.0),
                -q * (3.0 * l0 * t * t / 2.0 + r * ls * t.powi(3) / 2.0),
                q * (7.0 * l0 * t.powi(3) / 6.0 + 7.0 * r * ls * t.powi(4) / 24.0),
                -q * (5.0 * l0 * t.powi(4) / 8.0 + r * ls * t.powi(5) / 8.0),
            ],
        ),
        Regime::Generic(k) => {
            let linf = r * ls / k;
            let delta = l0 - linf;
            let e1 = (-k * t).exp();
            (q / k) * (linf / 2.0 + delta * e1 - (linf / 2.0 + delta) * e1 * e1)
        }
    })
}

/// `E[M_t]`: expected number of arrivals by time `t`.
pub fn mean_m(p: &ArrivalParams, t: f64) -> Result<f64> {
    check_time(t)?;
    let (ls, l0, r) = (p.lambda_star, p.lambda0, p.r);
    Ok(match regime(p, t) {
        Regime::Critical => l0 * t + r * ls * t * t / 2.0,
        Regime::Series(k) => horner(
            k,
            [
                l0 * t + r * ls * t * t / 2.0,
                -l0 * t * t / 2.0 - r * ls * t.powi(3) / 6.0,
                l0 * t.powi(3) / 6.0 + r * ls * t.powi(4) / 24.0,
                -l0 * t.powi(4) / 24.0 - r * ls * t.powi(5) / 120.0,
            ],
        ),
        Regime::Generic(k) => {
            let linf = r * ls / k;
            let delta = l0 - linf;
            // 1 - e^{-kt} via expm1 keeps precision for moderate kt.
            (linf * k * t + delta * (-(-k * t).exp_m1())) / k
        }
    })
}

/// `Var[M_t]` under the chosen jump-moment convention.
pub fn var_m(p: &ArrivalParams, t: f64, conv: MomentConvention) -> Result<f64> {
    check_time(t)?;
    let (ls, l0, r) = (p.lambda_star, p.lambda0, p.r);
    let q = conv.jump_moment(&p.jump, 2);
    Ok(match regime(p, t) {
        Regime::Critical => critical_var_m(ls, l0, r, q, t),
        Regime::Series(k) => horner(
            k,
            [
                critical_var_m(ls, l0, r, q, t),
                -3.0 * l0 * t * t / 2.0
                    - ls * q * r * t.powi(5) / 15.0
                    + t.powi(4) * (-l0 * q / 3.0 - ls * r * r / 6.0)
                    + t.powi(3) * (-2.0 * l0 * r / 3.0 - ls * r / 2.0),
                5.0 * l0 * t.powi(3) / 6.0
                    + 11.0 * ls * q * r * t.powi(6) / 360.0
                    + t.powi(5) * (11.0 * l0 * q / 60.0 + ls * r * r / 20.0)
                    + t.powi(4) * (l0 * r / 4.0 + 5.0 * ls * r / 24.0),
                -7.0 * l0 * t.powi(4) / 24.0
                    - 13.0 * ls * q * r * t.powi(7) / 1260.0
                    + t.powi(6) * (-13.0 * l0 * q / 180.0 - ls * r * r / 90.0)
                    + t.powi(5) * (-l0 * r / 15.0 - 7.0 * ls * r / 120.0),
            ],
        ),
        Regime::Generic(k) => {
            let e1 = (-k * t).exp();
            let one_m_e1 = -(-k * t).exp_m1();
            let one_m_e2 = -(-2.0 * k * t).exp_m1();
            let c_t = r * ls * (q + 2.0 * k * r - k * k);
            let c_20 = q * (l0 - r * ls / (2.0 * k));
            let c_te = 2.0 * (r * ls - k * l0) * (q + k * r - k * k);
            let c_10 = k * (2.0 * r - k) * l0 + 3.0 * k * r * ls
                - 4.0 * r * r * ls
                - 2.0 * r * ls * q / k;
            (c_t * t + c_20 * one_m_e2 + c_te * t * e1 + c_10 * one_m_e1) / k.powi(3)
        }
    })
}

/// Critical-regime `Var[M_t]`: quartic in t with the jump second moment `q`.
fn critical_var_m(ls: f64, l0: f64, r: f64, q: f64, t: f64) -> f64 {
    l0 * t
        + r * (l0 + ls / 2.0) * t * t
        + (l0 * q / 3.0 + ls * r * r / 3.0) * t.powi(3)
        + q * r * ls * t.powi(4) / 12.0
}

/// Long-run mean and variance of the intensity. Only defined for stable
/// parameters (`E[B] < r`); the critical and supercritical regimes have no
/// stationary limit.
pub fn stationary_lambda(p: &ArrivalParams, conv: MomentConvention) -> Result<(f64, f64)> {
    let kappa = p.r - p.jump.mean();
    if !(kappa > 0.0) {
        return Err(Error::invalid(
            "arrival_jump",
            format!(
                "stationary limits need E[B] < r, got E[B]={}, r={}",
                p.jump.mean(),
                p.r
            ),
        ));
    }
    let mean = p.r * p.lambda_star / kappa;
    let q = conv.jump_moment(&p.jump, 2);
    let var = p.r * p.lambda_star * q / (2.0 * kappa * kappa);
    Ok((mean, var))
}

/// All four closed-form moments at one time point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentReport {
    pub t: f64,
    pub mean_lambda: f64,
    pub var_lambda: f64,
    pub mean_m: f64,
    pub var_m: f64,
    pub convention: MomentConvention,
}

/// Evaluates the closed forms on a grid. Both variances are checked to be
/// non-negative; a negative value would mean the selected convention is
/// inconsistent with the jump law and is reported as an error rather than
/// silently returned.
pub fn moments_on_grid(
    p: &ArrivalParams,
    t_grid: &[f64],
    conv: MomentConvention,
) -> Result<Vec<MomentReport>> {
    t_grid
        .iter()
        .map(|&t| {
            let report = MomentReport {
                t,
                mean_lambda: mean_lambda(p, t)?,
                var_lambda: var_lambda(p, t, conv)?,
                mean_m: mean_m(p, t)?,
                var_m: var_m(p, t, conv)?,
                convention: conv,
            };
            for (name, v) in [
                ("var_lambda", report.var_lambda),
                ("var_m", report.var_m),
            ] {
                if v < 0.0 {
                    return Err(Error::RangeViolation {
                        context: format!("{name} at t={t}"),
                        detail: format!("negative variance {v} under {conv:?}"),
                    });
                }
            }
            Ok(report)
        })
        .collect()
}

/// CSV export with header `t,mean_lambda,var_lambda,mean_M,var_M`.
pub fn write_moments_csv<W: std::io::Write>(reports: &[MomentReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io_err = |e: csv::Error| Error::Output(e.to_string());
    w.write_record(["t", "mean_lambda", "var_lambda", "mean_M", "var_M"])
        .map_err(io_err)?;
    for rep in reports {
        w.write_record([
            numfmt::format_sig(rep.t, 12),
            numfmt::format_sig(rep.mean_lambda, 12),
            numfmt::format_sig(rep.var_lambda, 12),
            numfmt::format_sig(rep.mean_m, 12),
            numfmt::format_sig(rep.var_m, 12),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::Output(e.to_string()))?;
    Ok(())
}

/// Joint moments `E[lambda^n M^k]` on a time grid, from the recursive ODE
/// system.
#[derive(Debug, Clone)]
pub struct MomentOdeSolution {
    /// All `(n, k)` with `1 <= n + k <= n_max`, in the state order used
    /// internally.
    pub orders: Vec<(u32, u32)>,
    pub t: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl MomentOdeSolution {
    /// `E[lambda^n M^k]` at grid index `i`, if that order was solved.
    pub fn value(&self, n: u32, k: u32, i: usize) -> Option<f64> {
        let idx = self.orders.iter().position(|&o| o == (n, k))?;
        Some(self.values.get(i)?[idx])
    }
}

/// Cap on the total moment order; the state count grows quadratically and
/// orders above 4 are outside what any caller needs.
pub const MAX_MOMENT_ORDER: u32 = 4;

/// Solves the closed recursive ODE system for all joint moments
/// `E[lambda^n M^k]` with `1 <= n+k <= n_max`.
///
/// Each moment satisfies a linear ODE driven by lower- or equal-order
/// moments:
///
/// `d/dt E[l^n M^k] = n r lambda_star E[l^{n-1} M^k] - n r E[l^n M^k]
///   + sum over (i,j) in {0..n}x{0..k}, (i,j) != (n,k), of
///     C(n,i) C(k,j) B_hat(n-i) E[l^{i+1} M^j]`
///
/// where `B_hat` is the jump moment under `conv`. Initial conditions are
/// `E[lambda^n] = lambda0^n` and zero for every moment involving `M`.
pub fn moment_ode_solve(
    p: &ArrivalParams,
    n_max: u32,
    t_grid: &[f64],
    conv: MomentConvention,
) -> Result<MomentOdeSolution> {
    if n_max == 0 || n_max > MAX_MOMENT_ORDER {
        return Err(Error::invalid(
            "n_max",
            format!("total moment order must be in 1..={MAX_MOMENT_ORDER}, got {n_max}"),
        ));
    }
    if t_grid.is_empty() {
        return Err(Error::invalid("t_grid", "need at least one time point"));
    }
    if t_grid[0] < 0.0 || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(
            "t_grid",
            "time grid must be non-negative and strictly increasing",
        ));
    }

    let mut orders: Vec<(u32, u32)> = Vec::new();
    for total in 1..=n_max {
        for n in (0..=total).rev() {
            orders.push((n, total - n));
        }
    }
    let dim = orders.len();
    let idx = |n: u32, k: u32| -> usize {
        orders
            .iter()
            .position(|&o| o == (n, k))
            .expect("order within closure")
    };

    let binom = |n: u32, k: u32| -> f64 {
        let mut c = 1.0;
        for i in 0..k {
            c = c * (n - i) as f64 / (i + 1) as f64;
        }
        c
    };

    // The system is linear with constant coefficients: y' = A y + b.
    let mut a = vec![vec![0.0; dim]; dim];
    let mut b = vec![0.0; dim];
    for (row, &(n, k)) in orders.iter().enumerate() {
        if n >= 1 {
            if n - 1 == 0 && k == 0 {
                b[row] += n as f64 * p.r * p.lambda_star;
            } else {
                a[row][idx(n - 1, k)] += n as f64 * p.r * p.lambda_star;
            }
            a[row][row] -= n as f64 * p.r;
        }
        for i in 0..=n {
            for j in 0..=k {
                if (i, j) == (n, k) {
                    continue;
                }
                let coeff =
                    binom(n, i) * binom(k, j) * conv.jump_moment(&p.jump, n - i);
                a[row][idx(i + 1, j)] += coeff;
            }
        }
    }

    let mut y: Vec<f64> = orders
        .iter()
        .map(|&(n, k)| if k == 0 { p.lambda0.powi(n as i32) } else { 0.0 })
        .collect();

    let mut t_now = 0.0;
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(t_grid.len());
    for &t_next in t_grid {
        if t_next > t_now {
            let problem = OdeProblem::new(
                |_t: f64, y: &[f64], dy: &mut [f64]| {
                    for (row, slot) in dy.iter_mut().enumerate() {
                        let mut acc = b[row];
                        for (col, &yv) in y.iter().enumerate() {
                            acc += a[row][col] * yv;
                        }
                        *slot = acc;
                    }
                },
                y.clone(),
                [t_now, t_next],
            )?;
            let sol = integrate_adaptive(&problem, 1e-10, 1e-12)?;
            y = sol.final_state().to_vec();
            t_now = t_next;
        }
        values.push(y.clone());
    }

    Ok(MomentOdeSolution {
        orders,
        t: t_grid.to_vec(),
        values,
    })
}
