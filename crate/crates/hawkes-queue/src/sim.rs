//! Exact event-driven simulation of the queue by thinning.
//!
//! Between events every intensity is a known exponential relaxation, so a
//! piecewise-constant upper bound is available in closed form and candidate
//! events can be generated from an exponential clock at that bound and
//! accepted with probability (true intensity)/(bound). Accepted candidates
//! are classified as arrivals or departures proportionally to the two
//! intensities. The resulting paths are exact samples from the model law and
//! serve as the ground-truth oracle for every analytic module.
//!
//! Monte Carlo estimators fan paths out over a thread pool; path `i` is a
//! pure function of `(params, horizon, base_seed + i)`, and the reduction
//! walks results in index order, so estimates are independent of thread count
//! and schedule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::model::{ArrivalParams, ModelKind, ModelParams, ServiceParams};
use crate::transform::TransformQuery;
use crate::{numfmt, Error, Result};

/// Default cap on accepted events per path; beyond this the path is treated
/// as exploded (the arrival side is unstable unless E[B] < r).
pub const DEFAULT_EVENT_CAP: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Arrival,
    Departure,
}

/// One accepted event with the post-jump state right after it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub lambda_after: f64,
    pub mu_after: f64,
    pub n_after: u64,
}

/// One simulated sample path, self-contained: it carries the generating
/// parameters so any time point can be reconstructed by replay.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub events: Vec<Event>,
    pub horizon: f64,
    pub seed: u64,
    pub arrival: ArrivalParams,
    pub service: ServiceParams,
    pub kind: ModelKind,
}

/// Replayed state at one time point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snapshot {
    /// Customers in the system.
    pub n: u64,
    /// Arrival intensity.
    pub lambda: f64,
    /// Total service intensity.
    pub mu: f64,
    /// Cumulative arrivals.
    pub m: u64,
    /// Cumulative departures.
    pub s: u64,
}

/// A Monte Carlo point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_paths: u64,
}

impl McEstimate {
    /// Distance from `reference` in standard errors; infinite if the standard
    /// error is zero and the values differ.
    pub fn z_score(&self, reference: f64) -> f64 {
        let diff = self.value - reference;
        if diff == 0.0 {
            0.0
        } else {
            diff / self.std_error
        }
    }
}

impl Trajectory {
    fn last_event_at_or_before(&self, t: f64) -> Option<usize> {
        // Events are strictly increasing in time; find the last index <= t.
        match self
            .events
            .binary_search_by(|e| e.time.partial_cmp(&t).unwrap())
        {
            Ok(i) => Some(i),
            Err(0) => None,
            Err(i) => Some(i - 1),
        }
    }

    /// Arrival intensity at `t`, which must not precede the last recorded
    /// event (the path after that point is not determined by this prefix).
    pub fn arrival_intensity_at(&self, t: f64) -> Result<f64> {
        let last_t = self.events.last().map_or(0.0, |e| e.time);
        if t < last_t {
            return Err(Error::invalid(
                "t",
                format!("query time {t} precedes the last recorded event at {last_t}"),
            ));
        }
        let (t0, lam0) = match self.events.last() {
            Some(e) => (e.time, e.lambda_after),
            None => (0.0, self.arrival.lambda0),
        };
        let a = &self.arrival;
        Ok(a.lambda_star + (lam0 - a.lambda_star) * (-a.r * (t - t0)).exp())
    }

    /// Total service intensity at `t` under the same prefix contract as
    /// [`Self::arrival_intensity_at`]. Zero exactly when the system is empty.
    pub fn service_intensity_at(&self, t: f64) -> Result<f64> {
        let last_t = self.events.last().map_or(0.0, |e| e.time);
        if t < last_t {
            return Err(Error::invalid(
                "t",
                format!("query time {t} precedes the last recorded event at {last_t}"),
            ));
        }
        let (t0, n, mu0) = match self.events.last() {
            Some(e) => (e.time, e.n_after, e.mu_after),
            None => (0.0, 0, 0.0),
        };
        if n == 0 {
            return Ok(0.0);
        }
        let sv = &self.service;
        let factor0 = mu0 / n as f64;
        let factor = sv.mu_star + (factor0 - sv.mu_star) * (-sv.s * (t - t0)).exp();
        Ok(n as f64 * factor)
    }

    /// Replayed state at `t` in `[0, horizon]`. At an event time the returned
    /// state includes that event's jumps (paths are right-continuous).
    pub fn snapshot(&self, t: f64) -> Result<Snapshot> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::invalid(
                "t",
                format!("snapshot time {t} outside [0, {}]", self.horizon),
            ));
        }
        let idx = self.last_event_at_or_before(t);
        let (t0, n, lam0, mu_post) = match idx {
            Some(i) => {
                let e = &self.events[i];
                (e.time, e.n_after, e.lambda_after, e.mu_after)
            }
            None => (0.0, 0, self.arrival.lambda0, 0.0),
        };
        let m = idx.map_or(0, |i| {
            self.events[..=i]
                .iter()
                .filter(|e| e.kind == EventKind::Arrival)
                .count() as u64
        });
        let s = idx.map_or(0, |i| (i as u64 + 1) - m);
        let a = &self.arrival;
        let lambda = a.lambda_star + (lam0 - a.lambda_star) * (-a.r * (t - t0)).exp();
        let mu = if n == 0 {
            0.0
        } else {
            let sv = &self.service;
            let factor0 = mu_post / n as f64;
            n as f64 * (sv.mu_star + (factor0 - sv.mu_star) * (-sv.s * (t - t0)).exp())
        };
        Ok(Snapshot { n, lambda, mu, m, s })
    }

    /// CSV export: header `time,kind,n,lambda,mu`, one row per event, 12
    /// significant digits.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io_err = |e: csv::Error| Error::Output(e.to_string());
        w.write_record(["time", "kind", "n", "lambda", "mu"])
            .map_err(io_err)?;
        for e in &self.events {
            w.write_record([
                numfmt::format_sig(e.time, 12),
                match e.kind {
                    EventKind::Arrival => "A".to_string(),
                    EventKind::Departure => "D".to_string(),
                },
                e.n_after.to_string(),
                numfmt::format_sig(e.lambda_after, 12),
                numfmt::format_sig(e.mu_after, 12),
            ])
            .map_err(io_err)?;
        }
        w.flush().map_err(|e| Error::Output(e.to_string()))?;
        Ok(())
    }
}

/// Simulates one path on `[0, horizon]` with the default event cap.
pub fn simulate_path(
    arrival: &ArrivalParams,
    service: &ServiceParams,
    kind: ModelKind,
    horizon: f64,
    seed: u64,
) -> Result<Trajectory> {
    simulate_path_with_cap(arrival, service, kind, horizon, seed, DEFAULT_EVENT_CAP)
}

/// Simulates one path with an explicit cap on accepted events.
pub fn simulate_path_with_cap(
    arrival: &ArrivalParams,
    service: &ServiceParams,
    kind: ModelKind,
    horizon: f64,
    seed: u64,
    event_cap: u64,
) -> Result<Trajectory> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::invalid(
            "horizon",
            format!("horizon must be positive and finite, got {horizon}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events: Vec<Event> = Vec::new();

    let mut t = 0.0_f64;
    let mut n: u64 = 0;
    let mut lam = arrival.lambda0;
    // Shared per-customer service factor; meaningful only while n > 0.
    let mut factor = service.mu0;

    loop {
        let mu = if n == 0 { 0.0 } else { n as f64 * factor };
        // Upper bound for total intensity until the next event: lambda decays
        // monotonically toward lambda_star, and the per-customer factor
        // decays toward mu_star, so the factor never exceeds
        // max(factor, mu_star).
        let bound = lam.max(arrival.lambda_star) + mu + n as f64 * (service.mu_star - factor).max(0.0);

        let u1: f64 = rng.random();
        let wait = -u1.ln() / bound;
        let tau = t + wait;
        if !(tau < horizon) {
            break;
        }

        // Relax both intensities to the candidate time.
        lam = arrival.lambda_star + (lam - arrival.lambda_star) * (-arrival.r * wait).exp();
        if n > 0 {
            factor = service.mu_star + (factor - service.mu_star) * (-service.s * wait).exp();
        }
        t = tau;
        let mu_tau = if n == 0 { 0.0 } else { n as f64 * factor };
        let total = lam + mu_tau;
        if total > bound * (1.0 + 1e-9) {
            return Err(Error::RangeViolation {
                context: "thinning bound".into(),
                detail: format!("total intensity {total} exceeds bound {bound} at t={t}"),
            });
        }

        let u_accept: f64 = rng.random();
        if u_accept * bound >= total {
            continue;
        }
        let u_classify: f64 = rng.random();
        let kind_now = if u_classify * total < lam {
            EventKind::Arrival
        } else {
            EventKind::Departure
        };
        match kind_now {
            EventKind::Arrival => {
                n += 1;
                lam += arrival.jump.sample(&mut rng);
                if n == 1 {
                    // Busy-period start: the service side starts as new.
                    factor = service.mu0;
                }
            }
            EventKind::Departure => {
                debug_assert!(n > 0, "departure classified while system empty");
                n -= 1;
                factor += service.jump.sample(&mut rng);
                if !service.reset_on_busy_period_start && n == 1 {
                    // Alternative reset policy: re-anchor every time the
                    // population reaches one, including via departures.
                    factor = service.mu0;
                }
            }
        }
        events.push(Event {
            time: t,
            kind: kind_now,
            lambda_after: lam,
            mu_after: if n == 0 { 0.0 } else { n as f64 * factor },
            n_after: n,
        });
        if events.len() as u64 >= event_cap {
            return Err(Error::Explosion {
                seed,
                cap: event_cap,
                t,
                mean_jump: arrival.jump.mean(),
                r: arrival.r,
            });
        }
    }

    Ok(Trajectory {
        events,
        horizon,
        seed,
        arrival: *arrival,
        service: *service,
        kind,
    })
}

/// Runs `f` on a dedicated thread pool when the `HAWKES_QUEUE_THREADS`
/// environment variable selects an explicit thread count; 0 or unset defers
/// to the global (automatic) pool.
pub(crate) fn with_thread_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    let requested = std::env::var("HAWKES_QUEUE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0);
    if requested > 0 {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new()
            .num_threads(requested)
            .build()
        {
            return pool.install(f);
        }
    }
    f()
}

pub(crate) fn mean_and_se(samples: &[f64]) -> McEstimate {
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let std_error = if n < 2 {
        0.0
    } else {
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
        (var / n as f64).sqrt()
    };
    McEstimate {
        value: mean,
        std_error,
        n_paths: n as u64,
    }
}

/// Monte Carlo estimate of the joint transform `E[z^N e^{-u lambda} e^{-v mu}]`
/// at one query point. Path `i` uses seed `base_seed + i`.
pub fn mc_transform(
    params: &ModelParams,
    query: TransformQuery,
    n_paths: usize,
    base_seed: u64,
) -> Result<McEstimate> {
    params.validate()?;
    if n_paths == 0 {
        return Err(Error::invalid("n_paths", "need at least one path"));
    }
    if query.t == 0.0 {
        // Deterministic initial state (N, lambda, mu) = (0, lambda0, 0).
        return Ok(McEstimate {
            value: (-query.u * params.arrival.lambda0).exp(),
            std_error: 0.0,
            n_paths: n_paths as u64,
        });
    }
    let samples: Vec<f64> = with_thread_pool(|| {
        (0..n_paths)
            .into_par_iter()
            .map(|i| {
                let traj = simulate_path(
                    &params.arrival,
                    &params.service,
                    params.kind,
                    query.t,
                    base_seed.wrapping_add(i as u64),
                )?;
                let snap = traj.snapshot(query.t)?;
                // 0^0 = 1: an empty system contributes z^0 = 1 for every z.
                let zn = query.z.powi(snap.n as i32);
                Ok(zn * (-query.u * snap.lambda).exp() * (-query.v * snap.mu).exp())
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    Ok(mean_and_se(&samples))
}

/// Per-time-point Monte Carlo moment estimates.
#[derive(Debug, Clone)]
pub struct McMoments {
    pub t: Vec<f64>,
    pub mean_lambda: Vec<McEstimate>,
    pub var_lambda: Vec<McEstimate>,
    pub mean_m: Vec<McEstimate>,
    pub var_m: Vec<McEstimate>,
    pub mean_n: Vec<McEstimate>,
}

/// Monte Carlo estimates of `E[lambda_t]`, `Var[lambda_t]`, `E[M_t]`,
/// `Var[M_t]`, and `E[N_t]` on a time grid. Variance estimates carry
/// delta-method standard errors (fourth central moment based), so their
/// z-scores are usable the same way as the means'.
pub fn mc_moments(
    params: &ModelParams,
    t_grid: &[f64],
    n_paths: usize,
    base_seed: u64,
) -> Result<McMoments> {
    params.validate()?;
    if n_paths == 0 {
        return Err(Error::invalid("n_paths", "need at least one path"));
    }
    if t_grid.is_empty() {
        return Err(Error::invalid("t_grid", "need at least one time point"));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) || t_grid[0] < 0.0 {
        return Err(Error::invalid(
            "t_grid",
            "time grid must be non-negative and strictly increasing",
        ));
    }
    let horizon = *t_grid.last().unwrap();
    if horizon == 0.0 {
        // Degenerate grid {0}: deterministic initial state.
        let exact = |v: f64| McEstimate {
            value: v,
            std_error: 0.0,
            n_paths: n_paths as u64,
        };
        return Ok(McMoments {
            t: t_grid.to_vec(),
            mean_lambda: vec![exact(params.arrival.lambda0)],
            var_lambda: vec![exact(0.0)],
            mean_m: vec![exact(0.0)],
            var_m: vec![exact(0.0)],
            mean_n: vec![exact(0.0)],
        });
    }

    // Per grid point: raw power sums of lambda (4), of M (4), of N (2).
    // Fixed-size chunks are summed sequentially and then folded in index
    // order, so the float totals are bit-identical for any thread count or
    // scheduling; a free-form parallel reduction would not be.
    const W: usize = 10;
    const CHUNK: usize = 4096;
    let k = t_grid.len();
    let n_chunks = n_paths.div_ceil(CHUNK);
    let chunk_sums: Vec<Vec<f64>> = with_thread_pool(|| {
        (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let mut acc = vec![0.0; W * k];
                for i in (c * CHUNK)..((c + 1) * CHUNK).min(n_paths) {
                    let traj = simulate_path(
                        &params.arrival,
                        &params.service,
                        params.kind,
                        horizon,
                        base_seed.wrapping_add(i as u64),
                    )?;
                    for (j, &t) in t_grid.iter().enumerate() {
                        let snap = traj.snapshot(t)?;
                        let lam = snap.lambda;
                        let m = snap.m as f64;
                        let n = snap.n as f64;
                        let cell = &mut acc[W * j..W * (j + 1)];
                        let mut lp = 1.0;
                        for slot in cell.iter_mut().take(4) {
                            lp *= lam;
                            *slot += lp;
                        }
                        let mut mp = 1.0;
                        for slot in cell.iter_mut().skip(4).take(4) {
                            mp *= m;
                            *slot += mp;
                        }
                        cell[8] += n;
                        cell[9] += n * n;
                    }
                }
                Ok(acc)
            })
            .collect::<Result<Vec<Vec<f64>>>>()
    })?;
    let mut sums = vec![0.0; W * k];
    for chunk in &chunk_sums {
        for (x, y) in sums.iter_mut().zip(chunk) {
            *x += y;
        }
    }

    let np = n_paths as f64;
    let mean_est = |s1: f64, s2: f64| -> McEstimate {
        let mean = s1 / np;
        let var = ((s2 / np - mean * mean) * np / (np - 1.0).max(1.0)).max(0.0);
        McEstimate {
            value: mean,
            std_error: (var / np).sqrt(),
            n_paths: n_paths as u64,
        }
    };
    // Delta-method standard error for a sample variance: sqrt((m4 - m2^2)/n)
    // with central moments m2, m4.
    let var_est = |s1: f64, s2: f64, s3: f64, s4: f64| -> McEstimate {
        let mean = s1 / np;
        let m2 = (s2 / np - mean * mean).max(0.0);
        let m4 = (s4 / np - 4.0 * mean * s3 / np + 6.0 * mean * mean * s2 / np
            - 3.0 * mean.powi(4))
        .max(0.0);
        let value = m2 * np / (np - 1.0).max(1.0);
        McEstimate {
            value,
            std_error: ((m4 - m2 * m2).max(0.0) / np).sqrt(),
            n_paths: n_paths as u64,
        }
    };

    let mut out = McMoments {
        t: t_grid.to_vec(),
        mean_lambda: Vec::with_capacity(k),
        var_lambda: Vec::with_capacity(k),
        mean_m: Vec::with_capacity(k),
        var_m: Vec::with_capacity(k),
        mean_n: Vec::with_capacity(k),
    };
    for j in 0..k {
        let c = &sums[W * j..W * (j + 1)];
        out.mean_lambda.push(mean_est(c[0], c[1]));
        out.var_lambda.push(var_est(c[0], c[1], c[2], c[3]));
        out.mean_m.push(mean_est(c[4], c[5]));
        out.var_m.push(var_est(c[4], c[5], c[6], c[7]));
        out.mean_n.push(mean_est(c[8], c[9]));
    }
    Ok(out)
}

/// JSON report shape for Monte Carlo series: parallel arrays over the grid.
#[derive(Debug, Clone, Serialize)]
pub struct McReport {
    pub t: Vec<f64>,
    pub estimate: Vec<f64>,
    pub std_error: Vec<f64>,
    pub n_paths: u64,
}

impl McReport {
    pub fn from_estimates(t: &[f64], estimates: &[McEstimate]) -> Self {
        McReport {
            t: t.to_vec(),
            estimate: estimates.iter().map(|e| e.value).collect(),
            std_error: estimates.iter().map(|e| e.std_error).collect(),
            n_paths: estimates.first().map_or(0, |e| e.n_paths),
        }
    }
}
