//! Initial-value-problem integrators used by the moment and transform modules.
//!
//! Two explicit Runge-Kutta integrators are provided: a classical 4th-order
//! fixed-step method and an embedded Dormand-Prince 5(4) pair with PI step
//! control. Integral functionals of the solution are obtained by augmenting
//! the state with an extra quadrature component; [`quadrature_trapezoid`]
//! exists only as an independent cross-check of that augmentation.
//!
//! Both integrators are pure functions of their inputs and are safe to call
//! concurrently.

use crate::{Error, Result};

/// Default relative tolerance for [`integrate_adaptive`]. Tight enough that
/// integrator error is negligible against the Monte Carlo standard errors the
/// results are compared to.
pub const DEFAULT_REL_TOL: f64 = 1e-8;
/// Default absolute tolerance companion to [`DEFAULT_REL_TOL`].
pub const DEFAULT_ABS_TOL: f64 = 1e-10;

/// An explicit first-order system `y' = rhs(t, y)` on `t_span` with initial
/// state `y0`. The right-hand side writes its output into the provided slice.
pub struct OdeProblem<F> {
    pub dimension: usize,
    pub rhs: F,
    pub y0: Vec<f64>,
    pub t_span: [f64; 2],
}

impl<F> OdeProblem<F>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    pub fn new(rhs: F, y0: Vec<f64>, t_span: [f64; 2]) -> Result<Self> {
        if y0.is_empty() {
            return Err(Error::invalid("y0", "state vector must be non-empty"));
        }
        if !y0.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("y0", "state vector must be finite"));
        }
        if !t_span[0].is_finite() || !t_span[1].is_finite() || t_span[1] < t_span[0] {
            return Err(Error::invalid(
                "t_span",
                format!("need finite t_start <= t_end, got [{}, {}]", t_span[0], t_span[1]),
            ));
        }
        Ok(OdeProblem {
            dimension: y0.len(),
            rhs,
            y0,
            t_span,
        })
    }
}

/// Step statistics accumulated during integration.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OdeStats {
    /// Accepted steps.
    pub steps: u64,
    /// Rejected trial steps (always 0 for the fixed-step method).
    pub rejected_steps: u64,
    /// Largest tolerance-normalized local error estimate over accepted steps;
    /// at most 1 by construction for the adaptive method.
    pub max_error_estimate: f64,
}

/// Time-indexed solution: states at every accepted node, both endpoints
/// included, plus the node derivatives needed for dense evaluation.
#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub stats: OdeStats,
    node_derivs: Vec<Vec<f64>>,
}

impl OdeSolution {
    /// State at the final time.
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("solution has at least one node")
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("solution has at least one node")
    }

    /// Dense evaluation by cubic Hermite interpolation between the two nodes
    /// bracketing `t`. Exact at nodes; `t` must lie within the solved span.
    pub fn sample(&self, t: f64) -> Result<Vec<f64>> {
        let (t0, t1) = (self.times[0], self.t_end());
        if !(t >= t0 && t <= t1) {
            return Err(Error::invalid(
                "t",
                format!("sample point {t} outside solved span [{t0}, {t1}]"),
            ));
        }
        // Last node with time <= t; the final node maps onto the last segment.
        let i = match self
            .times
            .binary_search_by(|probe| probe.partial_cmp(&t).unwrap())
        {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        if i + 1 == self.times.len() {
            return Ok(self.states[i].clone());
        }
        let h = self.times[i + 1] - self.times[i];
        let theta = (t - self.times[i]) / h;
        let (y0, y1) = (&self.states[i], &self.states[i + 1]);
        let (d0, d1) = (&self.node_derivs[i], &self.node_derivs[i + 1]);
        let h00 = (1.0 + 2.0 * theta) * (1.0 - theta) * (1.0 - theta);
        let h10 = theta * (1.0 - theta) * (1.0 - theta);
        let h01 = theta * theta * (3.0 - 2.0 * theta);
        let h11 = theta * theta * (theta - 1.0);
        Ok((0..y0.len())
            .map(|k| h00 * y0[k] + h * h10 * d0[k] + h01 * y1[k] + h * h11 * d1[k])
            .collect())
    }
}

fn check_finite(t: f64, y: &[f64], dy: &[f64], method: &str) -> Result<()> {
    if dy.iter().all(|v| v.is_finite()) {
        return Ok(());
    }
    Err(Error::RangeViolation {
        context: format!("{method} right-hand side"),
        detail: format!("non-finite derivative at t={t}, y={y:?}"),
    })
}

/// Classical 4th-order Runge-Kutta with fixed step size. The final step is
/// shortened to land exactly on `t_end`. Global error on smooth problems is
/// O(step^4).
pub fn integrate_rk4<F>(p: &OdeProblem<F>, step: f64) -> Result<OdeSolution>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::invalid(
            "step",
            format!("step size must be positive and finite, got {step}"),
        ));
    }
    let n = p.dimension;
    let [t0, t_end] = p.t_span;
    let mut t = t0;
    let mut y = p.y0.clone();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut work = vec![0.0; n];

    (p.rhs)(t, &y, &mut k1);
    check_finite(t, &y, &k1, "rk4")?;
    let mut times = vec![t];
    let mut states = vec![y.clone()];
    let mut derivs = vec![k1.clone()];
    let mut stats = OdeStats::default();

    while t < t_end {
        let h = step.min(t_end - t);
        (p.rhs)(t, &y, &mut k1);
        check_finite(t, &y, &k1, "rk4")?;
        for i in 0..n {
            work[i] = y[i] + 0.5 * h * k1[i];
        }
        (p.rhs)(t + 0.5 * h, &work, &mut k2);
        check_finite(t + 0.5 * h, &work, &k2, "rk4")?;
        for i in 0..n {
            work[i] = y[i] + 0.5 * h * k2[i];
        }
        (p.rhs)(t + 0.5 * h, &work, &mut k3);
        check_finite(t + 0.5 * h, &work, &k3, "rk4")?;
        for i in 0..n {
            work[i] = y[i] + h * k3[i];
        }
        (p.rhs)(t + h, &work, &mut k4);
        check_finite(t + h, &work, &k4, "rk4")?;
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        t = if t_end - t <= step { t_end } else { t + h };
        stats.steps += 1;
        (p.rhs)(t, &y, &mut k1);
        check_finite(t, &y, &k1, "rk4")?;
        times.push(t);
        states.push(y.clone());
        derivs.push(k1.clone());
    }

    Ok(OdeSolution {
        times,
        states,
        stats,
        node_derivs: derivs,
    })
}

// Dormand-Prince 5(4) tableau. B is the 5th-order propagating weight row; E is
// the difference against the embedded 4th-order row, so the local error
// estimate is h * sum(E_j * k_j).
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Embedded Dormand-Prince 5(4) with PI step-size control. Accepted steps
/// satisfy the mixed tolerance `|local error| <= abs_tol + rel_tol*|y|`
/// componentwise in the RMS sense. Fails with a step-underflow error when the
/// required step drops below `1e-14 * span`, which signals a blow-up or
/// singularity inside the span rather than returning a wrong answer.
pub fn integrate_adaptive<F>(p: &OdeProblem<F>, rel_tol: f64, abs_tol: f64) -> Result<OdeSolution>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    if !(rel_tol > 0.0) || !(abs_tol > 0.0) {
        return Err(Error::invalid(
            "tolerance",
            format!("tolerances must be positive, got rel={rel_tol}, abs={abs_tol}"),
        ));
    }
    let n = p.dimension;
    let [t0, t_end] = p.t_span;
    let span = t_end - t0;
    let mut times = vec![t0];
    let mut states = vec![p.y0.clone()];
    let mut stats = OdeStats::default();

    let mut k: Vec<Vec<f64>> = (0..7).map(|_| vec![0.0; n]).collect();
    let mut y = p.y0.clone();
    let mut t = t0;
    (p.rhs)(t, &y, &mut k[0]);
    check_finite(t, &y, &k[0], "adaptive")?;
    let mut derivs = vec![k[0].clone()];
    if span == 0.0 {
        return Ok(OdeSolution {
            times,
            states,
            stats,
            node_derivs: derivs,
        });
    }

    let mut h = initial_step(p, &y, &k[0], rel_tol, abs_tol)?;
    let h_min = 1e-14 * span;
    let mut err_prev: f64 = 1.0;
    let mut y_new = vec![0.0; n];
    let mut y_stage = vec![0.0; n];
    // PI controller exponents for a 5(4) pair, per Hairer/Norsett/Wanner.
    const BETA: f64 = 0.04;
    const ALPHA: f64 = 0.2 - 0.75 * BETA;
    const SAFETY: f64 = 0.9;

    loop {
        if t >= t_end {
            break;
        }
        if h < h_min {
            return Err(Error::StepUnderflow { t, h, min: h_min });
        }
        let last = h >= t_end - t;
        let h_eff = h.min(t_end - t);

        // Stages 2..7; stage 1 derivative is already in k[0] (FSAL).
        let mut stage_failed = false;
        for stage in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(stage) {
                    acc += DP_A[stage][j] * kj[i];
                }
                y_stage[i] = y[i] + h_eff * acc;
            }
            let t_stage = t + DP_C[stage] * h_eff;
            let (head, tail) = k.split_at_mut(stage);
            let _ = head;
            (p.rhs)(t_stage, &y_stage, &mut tail[0]);
            if !tail[0].iter().all(|v| v.is_finite()) {
                stage_failed = true;
                break;
            }
        }
        if stage_failed {
            // Treat a non-finite stage like a hard rejection: the step ran
            // into a singularity, so shrink aggressively.
            stats.rejected_steps += 1;
            h *= 0.1;
            continue;
        }

        let mut err_sq = 0.0;
        for i in 0..n {
            let mut dy = 0.0;
            let mut le = 0.0;
            for j in 0..7 {
                dy += DP_B[j] * k[j][i];
                le += DP_E[j] * k[j][i];
            }
            y_new[i] = y[i] + h_eff * dy;
            let scale = abs_tol + rel_tol * y[i].abs().max(y_new[i].abs());
            let r = h_eff * le / scale;
            err_sq += r * r;
        }
        let err = (err_sq / n as f64).sqrt();

        if err.is_finite() && err <= 1.0 {
            t = if last { t_end } else { t + h_eff };
            std::mem::swap(&mut y, &mut y_new);
            // FSAL: the 7th stage is the derivative at the accepted point.
            k.swap(0, 6);
            stats.steps += 1;
            stats.max_error_estimate = stats.max_error_estimate.max(err);
            times.push(t);
            states.push(y.clone());
            derivs.push(k[0].clone());

            let factor = if err == 0.0 {
                5.0
            } else {
                (SAFETY * err.powf(-ALPHA) * err_prev.powf(BETA)).clamp(0.2, 5.0)
            };
            err_prev = err.max(1e-4);
            h = h_eff * factor;
        } else {
            stats.rejected_steps += 1;
            let factor = if err.is_finite() {
                (SAFETY * err.powf(-0.2)).clamp(0.1, 1.0)
            } else {
                0.1
            };
            h = h_eff * factor;
        }
    }

    Ok(OdeSolution {
        times,
        states,
        stats,
        node_derivs: derivs,
    })
}

// Standard two-phase starting-step heuristic: balance the scaled norms of the
// state and its derivative, then refine with one explicit Euler probe.
fn initial_step<F>(
    p: &OdeProblem<F>,
    y0: &[f64],
    f0: &[f64],
    rel_tol: f64,
    abs_tol: f64,
) -> Result<f64>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let n = p.dimension;
    let span = p.t_span[1] - p.t_span[0];
    let scale: Vec<f64> = (0..n).map(|i| abs_tol + rel_tol * y0[i].abs()).collect();
    let rms = |v: &[f64]| -> f64 {
        (v.iter()
            .zip(&scale)
            .map(|(x, s)| (x / s) * (x / s))
            .sum::<f64>()
            / n as f64)
            .sqrt()
    };
    let d0 = rms(y0);
    let d1 = rms(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    }
    .min(span);

    let y1: Vec<f64> = (0..n).map(|i| y0[i] + h0 * f0[i]).collect();
    let mut f1 = vec![0.0; n];
    (p.rhs)(p.t_span[0] + h0, &y1, &mut f1);
    check_finite(p.t_span[0] + h0, &y1, &f1, "adaptive")?;
    let df: Vec<f64> = (0..n).map(|i| f1[i] - f0[i]).collect();
    let d2 = rms(&df) / h0;

    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok(h1.min(100.0 * h0).min(span))
}

/// Composite trapezoid rule for one solution component over the stored nodes.
/// Kept as an independent cross-check of integral terms that the production
/// path computes by state augmentation.
pub fn quadrature_trapezoid(solution: &OdeSolution, component: usize) -> Result<f64> {
    let dim = solution.states[0].len();
    if component >= dim {
        return Err(Error::invalid(
            "component",
            format!("index {component} out of range for dimension {dim}"),
        ));
    }
    let mut acc = 0.0;
    for w in solution.times.windows(2).zip(solution.states.windows(2)) {
        let (ts, ys) = w;
        acc += 0.5 * (ts[1] - ts[0]) * (ys[0][component] + ys[1][component]);
    }
    Ok(acc)
}
