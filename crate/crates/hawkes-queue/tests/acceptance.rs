//! Acceptance gate: one test per shipped claim, each ending in a single
//! `[criterion N] ...: PASS/FAIL` line. Statistical checks run at fixed
//! seeds, so every outcome here is reproducible.
//!
//! Two tests fail by design and document a structural property of the
//! coupled transform engines: at queries that weight the queue length or the
//! service intensity (`z < 1` or `v > 0`), the characteristic systems the
//! full and constant-arrival engines integrate describe a pooled departure
//! flow, while the simulator serves each customer individually. The two laws
//! genuinely differ there, and the comparisons report that instead of
//! papering over it. Service-free directions (`z = 1`, `v = 0`) agree to
//! Monte Carlo accuracy, and those subsets are asserted green.

// `!(x <= 3.0)` rejects NaN z-scores; `x > 3.0` would let them pass.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::time::{Duration, Instant};

use hawkes_queue::model::{ArrivalParams, JumpDist, ModelKind, ModelParams, ServiceParams};
use hawkes_queue::moments::{self, DEFAULT_CONVENTION};
use hawkes_queue::ode::{
    integrate_adaptive, integrate_rk4, OdeProblem, DEFAULT_ABS_TOL, DEFAULT_REL_TOL,
};
use hawkes_queue::sim;
use hawkes_queue::transform::{zeta_for_model, SignVariant, TransformQuery, ZetaConvention};
use hawkes_queue::validate::{
    compare_moments, compare_transform_grid, completion_shift_sign_test, convention_test_zeta,
    conventions_markdown, dynkin_martingale_test, dynkin_martingale_test_with_fault,
    mc_transform_batch, moment_convention_label, reduction_suite, reference_constant_arrival,
    reference_full, reference_memoryless, run_suite, sign_variant_label, variance_convention_test,
    zeta_convention_label, ComparisonPoint, ComparisonReport, GeneratorFault, Suite,
    TestFunctional,
};

/// Prints the criterion's verdict line and fails the test when any sub-check
/// failed. The line goes to stdout either way; the harness surfaces it for
/// failing tests and `--nocapture` shows the full scoreboard.
fn conclude(id: u32, title: &str, note: &str, failures: &[String]) {
    if failures.is_empty() {
        println!("[criterion {id}] {title}: PASS ({note})");
    } else {
        println!("[criterion {id}] {title}: FAIL ({note})");
        panic!("criterion {id} failed:\n  - {}", failures.join("\n  - "));
    }
}

fn check(failures: &mut Vec<String>, ok: bool, detail: impl Into<String>) {
    if !ok {
        failures.push(detail.into());
    }
}

#[test]
fn criterion_01_closed_form_moments_match_simulation() {
    let mut failures = Vec::new();
    let started = Instant::now();
    let report = compare_moments(
        &reference_full(),
        &[0.5, 1.0, 2.0, 5.0],
        100_000,
        101,
        DEFAULT_CONVENTION,
    )
    .unwrap();
    let elapsed = started.elapsed();
    for p in &report.points {
        check(
            &mut failures,
            p.z_score.abs() <= 3.0,
            format!("{}: z = {:.2}", p.label, p.z_score),
        );
    }
    check(
        &mut failures,
        elapsed < Duration::from_secs(120),
        format!("runtime {elapsed:?} blew the two-minute budget"),
    );
    conclude(
        1,
        "closed-form moments vs simulation, reference parameters",
        &format!(
            "{} points, max |z| = {:.2}, {:.1?}",
            report.points.len(),
            report.max_abs_z(),
            elapsed
        ),
        &failures,
    );
}

#[test]
fn criterion_02_balanced_regime_values_and_continuity() {
    let mut failures = Vec::new();
    // Constant jumps of exactly the decay rate: the intensity mean grows
    // linearly instead of relaxing.
    let arrival = ArrivalParams::new(2.0, 2.0, 2.0, JumpDist::constant(2.0).unwrap()).unwrap();
    let service = ServiceParams::new(2.0, 2.0, 2.0, JumpDist::exponential(2.0).unwrap()).unwrap();
    let params = ModelParams::new(
        arrival,
        service,
        ModelKind::HawkesSdHawkes,
    )
    .unwrap();

    let el = moments::mean_lambda(&arrival, 1.0).unwrap();
    let em = moments::mean_m(&arrival, 1.0).unwrap();
    check(
        &mut failures,
        (el - 6.0).abs() <= 1e-9,
        format!("E[lambda_1] = {el}, want 6"),
    );
    check(
        &mut failures,
        (em - 4.0).abs() <= 1e-9,
        format!("E[M_1] = {em}, want 4"),
    );

    let mc = sim::mc_moments(&params, &[1.0], 100_000, 202).unwrap();
    let zl = mc.mean_lambda[0].z_score(6.0);
    let zm = mc.mean_m[0].z_score(4.0);
    check(&mut failures, zl.abs() <= 3.0, format!("MC mean_lambda z = {zl:.2}"));
    check(&mut failures, zm.abs() <= 3.0, format!("MC mean_m z = {zm:.2}"));

    // Continuity: the generic formulas a hair off the balance point agree
    // with the balance-point forms to 1e-3 relative, approaching from both
    // sides.
    for r in [2.0 + 1e-5, 2.0 - 1e-5] {
        let nearby = ArrivalParams::new(2.0, r, 2.0, JumpDist::constant(2.0).unwrap()).unwrap();
        let pairs = [
            ("mean_lambda", moments::mean_lambda(&nearby, 1.0).unwrap(), el),
            ("mean_m", moments::mean_m(&nearby, 1.0).unwrap(), em),
            (
                "var_lambda",
                moments::var_lambda(&nearby, 1.0, DEFAULT_CONVENTION).unwrap(),
                moments::var_lambda(&arrival, 1.0, DEFAULT_CONVENTION).unwrap(),
            ),
            (
                "var_m",
                moments::var_m(&nearby, 1.0, DEFAULT_CONVENTION).unwrap(),
                moments::var_m(&arrival, 1.0, DEFAULT_CONVENTION).unwrap(),
            ),
        ];
        for (name, near, at) in pairs {
            let rel = (near - at).abs() / at.abs();
            check(
                &mut failures,
                rel <= 1e-3,
                format!("{name} at r = {r}: relative gap {rel:.2e}"),
            );
        }
    }
    conclude(
        2,
        "balanced jump/decay regime: linear growth values and continuity",
        &format!("E[lambda_1] = {el}, E[M_1] = {em}, MC z = ({zl:.2}, {zm:.2})"),
        &failures,
    );
}

#[test]
fn criterion_03_stationary_intensity_limit() {
    let mut failures = Vec::new();
    let p = reference_full();
    let limit = 8.0 / 3.0;
    let m50 = moments::mean_lambda(&p.arrival, 50.0).unwrap();
    check(
        &mut failures,
        (m50 - limit).abs() <= 1e-6,
        format!("mean_lambda(50) = {m50}, want {limit} within 1e-6"),
    );
    let mc = sim::mc_moments(&p, &[50.0], 20_000, 303).unwrap();
    let z = mc.mean_lambda[0].z_score(limit);
    check(&mut failures, z.abs() <= 3.0, format!("MC z = {z:.2}"));
    conclude(
        3,
        "long-run intensity level",
        &format!("|mean_lambda(50) - 8/3| = {:.2e}, MC z = {z:.2}", (m50 - limit).abs()),
        &failures,
    );
}

#[test]
fn criterion_04_moment_ode_system_reproduces_closed_forms() {
    let mut failures = Vec::new();
    let p = reference_full().arrival;
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 * 0.05).collect();
    let sol = moments::moment_ode_solve(&p, 2, &grid, DEFAULT_CONVENTION).unwrap();
    let rel = |a: f64, b: f64| {
        let scale = a.abs().max(b.abs());
        if scale == 0.0 { 0.0 } else { (a - b).abs() / scale }
    };
    let mut worst: (f64, &str, f64) = (0.0, "", 0.0);
    for (i, &t) in grid.iter().enumerate() {
        let el = sol.value(1, 0, i).unwrap();
        let em = sol.value(0, 1, i).unwrap();
        let quartet = [
            ("mean_lambda", el, moments::mean_lambda(&p, t).unwrap()),
            ("mean_m", em, moments::mean_m(&p, t).unwrap()),
            (
                "var_lambda",
                sol.value(2, 0, i).unwrap() - el * el,
                moments::var_lambda(&p, t, DEFAULT_CONVENTION).unwrap(),
            ),
            (
                "var_m",
                sol.value(0, 2, i).unwrap() - em * em,
                moments::var_m(&p, t, DEFAULT_CONVENTION).unwrap(),
            ),
        ];
        for (name, ode, closed) in quartet {
            let d = rel(ode, closed);
            if d > worst.0 {
                worst = (d, name, t);
            }
        }
    }
    check(
        &mut failures,
        worst.0 < 1e-6,
        format!("max relative deviation {:.2e} ({} at t = {})", worst.0, worst.1, worst.2),
    );
    conclude(
        4,
        "recursive moment ODE system vs closed forms on [0, 5]",
        &format!("max relative deviation {:.2e}", worst.0),
        &failures,
    );
}

#[test]
fn criterion_05_transform_engines_vs_simulation() {
    let mut failures = Vec::new();
    let t_values = [0.5, 1.0, 2.0];
    let zuv: Vec<(f64, f64, f64)> = {
        let mut v = Vec::new();
        for z in [0.3, 0.7, 1.0] {
            for u in [0.0, 1.0] {
                for w in [0.0, 1.0] {
                    v.push((z, u, w));
                }
            }
        }
        v
    };

    // Normalization pins: zeta(t, 1, 0, 0) = 1 exactly, every engine.
    for params in [
        reference_full(),
        reference_constant_arrival(),
        reference_memoryless(),
    ] {
        for &t in &t_values {
            let q = TransformQuery::new(t, 1.0, 0.0, 0.0).unwrap();
            let zeta =
                zeta_for_model(&params, &q, ZetaConvention::default(), SignVariant::default())
                    .unwrap();
            check(
                &mut failures,
                (zeta - 1.0).abs() <= 1e-6,
                format!("normalization off for {:?} at t = {t}: zeta = {zeta}", params.kind),
            );
        }
    }

    // Full and constant-arrival engines over the whole grid. Both are exact
    // along the service-free directions and structurally off the simulated
    // law at coupled queries; the grid comparison reports both facts.
    let mut coupled_failures = 0usize;
    for (params, name, seed) in [
        (reference_full(), "self-exciting arrivals and services", 510),
        (reference_constant_arrival(), "constant-rate arrivals", 520),
    ] {
        let report = compare_transform_grid(&params, &t_values, &zuv, 100_000, seed).unwrap();
        for (i, point) in report.points.iter().enumerate() {
            let (z, _u, v) = zuv[i % zuv.len()];
            let service_free = z == 1.0 && v == 0.0;
            if service_free {
                check(
                    &mut failures,
                    point.z_score.abs() <= 3.0,
                    format!("{name}, exact direction: {} z = {:.2}", point.label, point.z_score),
                );
            } else if !(point.z_score.abs() <= 3.0) {
                coupled_failures += 1;
            }
        }
        check(
            &mut failures,
            report.pass,
            format!(
                "{name}: grid not fully within 3 SE (max |z| = {:.1}); the integrated law pools departures across the population and departs from the per-customer simulation at z < 1 or v > 0",
                report.max_abs_z()
            ),
        );
    }

    // Memoryless-service engine: a per-customer completion rate of mu_star
    // makes the service argument fold exactly into z, and the engine then
    // matches simulation over the entire grid.
    let p3 = reference_memoryless();
    let ms3 = p3.service.mu_star;
    let mut mem_points = Vec::new();
    for (k, &t) in t_values.iter().enumerate() {
        let queries: Vec<TransformQuery> = zuv
            .iter()
            .map(|&(z, u, v)| TransformQuery::new(t, z, u, v))
            .collect::<Result<_, _>>()
            .unwrap();
        let estimates = mc_transform_batch(&p3, t, &queries, 100_000, 530 + k as u64).unwrap();
        for (q, est) in queries.iter().zip(&estimates) {
            let folded = TransformQuery::new(q.t, q.z * (-q.v * ms3).exp(), q.u, 0.0).unwrap();
            let analytic =
                zeta_for_model(&p3, &folded, ZetaConvention::default(), SignVariant::default())
                    .unwrap();
            mem_points.push(ComparisonPoint::against_mc(
                format!("zeta @ t={}, z={}, u={}, v={}", q.t, q.z, q.u, q.v),
                analytic,
                *est,
            ));
        }
    }
    let mem_report = ComparisonReport::from_points(
        "memoryless-service engine vs simulation",
        "all |z| <= 3 at 100000 paths",
        mem_points,
    );
    check(
        &mut failures,
        mem_report.pass,
        format!("memoryless-service grid max |z| = {:.2}", mem_report.max_abs_z()),
    );

    conclude(
        5,
        "transform engines vs simulation over the acceptance grid",
        &format!(
            "exact directions and memoryless grid green; {coupled_failures} coupled points beyond 3 SE"
        ),
        &failures,
    );
}

#[test]
fn criterion_06_reduction_chain() {
    let mut failures = Vec::new();
    let reports = reduction_suite(100_000, 601).unwrap();
    assert_eq!(reports.len(), 5);

    check(
        &mut failures,
        reports[0].pass,
        format!("stiff-service collapse onto the memoryless engine: {}", reports[0].criterion),
    );
    check(
        &mut failures,
        reports[1].pass,
        format!("constant-arrival collapse onto the closed form: {}", reports[1].criterion),
    );

    // Near-degenerate collapse: the service-free query agrees, the coupled
    // queries carry the structural gap of the full engine.
    let near = &reports[2];
    check(
        &mut failures,
        near.points[0].z_score.abs() <= 3.0,
        format!("near-degenerate service-free point: {}", near.points[0].label),
    );
    check(
        &mut failures,
        near.pass,
        format!(
            "near-degenerate limit vs closed form: coupled queries disagree ({}); same pooled-departure structure as criterion 5",
            near.points[1..]
                .iter()
                .map(|p| format!("{} z = {:.0}", p.label, p.z_score))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    );

    check(
        &mut failures,
        reports[3].pass,
        format!("occupancy law goodness of fit: {}", reports[3].criterion),
    );
    check(
        &mut failures,
        reports[4].pass,
        format!("long-horizon occupancy vs stationary law: {}", reports[4].criterion),
    );
    conclude(
        6,
        "reduction chain across engines and closed forms",
        &format!(
            "stiff collapse, fit and long-horizon checks green; near-degenerate coupled queries off by design ({} points)",
            reports[2].points.len() - 1
        ),
        &failures,
    );
}

#[test]
fn criterion_07_generator_martingale_residuals() {
    let mut failures = Vec::new();
    let p = reference_full();
    let mut max_z: f64 = 0.0;
    for (k, f) in [
        TestFunctional::Lambda,
        TestFunctional::ArrivalCount,
        TestFunctional::LambdaSquared,
    ]
    .into_iter()
    .enumerate()
    {
        let report =
            dynkin_martingale_test(&p, f, 2.0, &[1.0, 2.0], 100_000, 701 + k as u64).unwrap();
        max_z = max_z.max(report.max_abs_z());
        check(
            &mut failures,
            report.pass,
            format!("{} residual: max |z| = {:.2}", f.name(), report.max_abs_z()),
        );
    }
    // Corrupted compensators must be caught loudly.
    for (f, fault) in [
        (TestFunctional::Lambda, GeneratorFault::DropArrivalJump),
        (TestFunctional::ArrivalCount, GeneratorFault::ScaleCompensator(1.1)),
        (TestFunctional::LambdaSquared, GeneratorFault::DropArrivalJump),
    ] {
        let report =
            dynkin_martingale_test_with_fault(&p, f, 2.0, &[2.0], 20_000, 777, fault).unwrap();
        check(
            &mut failures,
            !report.pass && report.max_abs_z() > 5.0,
            format!(
                "{} with {fault:?} slipped through (max |z| = {:.2})",
                f.name(),
                report.max_abs_z()
            ),
        );
    }
    conclude(
        7,
        "generator martingale residuals and fault sensitivity",
        &format!("clean residual max |z| = {max_z:.2}; all injected faults detected"),
        &failures,
    );
}

#[test]
fn criterion_08_convention_arbitration() {
    let mut failures = Vec::new();
    let full = reference_full();

    let variance = variance_convention_test(&full, 2.0, 100_000, 801).unwrap();
    check(
        &mut failures,
        variance.is_strict(),
        format!("variance arbitration not strict: {}", variance.winner),
    );
    check(
        &mut failures,
        variance.winner == moment_convention_label(DEFAULT_CONVENTION),
        format!(
            "shipped default {} vs verdict {}",
            moment_convention_label(DEFAULT_CONVENTION),
            variance.winner
        ),
    );

    let queries = [
        TransformQuery::new(1.0, 1.0, 1.0, 0.0).unwrap(),
        TransformQuery::new(2.0, 1.0, 0.5, 0.0).unwrap(),
    ];
    let prefactor = convention_test_zeta(&full, &queries, 50_000, 802).unwrap();
    check(
        &mut failures,
        prefactor.is_strict(),
        format!("prefactor arbitration not strict: {}", prefactor.winner),
    );
    check(
        &mut failures,
        prefactor.winner == zeta_convention_label(ZetaConvention::default()),
        format!(
            "shipped default {} vs verdict {}",
            zeta_convention_label(ZetaConvention::default()),
            prefactor.winner
        ),
    );

    let sign_query = [TransformQuery::new(1.0, 1.0, 1.0, 0.0).unwrap()];
    let sign = completion_shift_sign_test(&reference_constant_arrival(), &sign_query, 20_000, 803)
        .unwrap();
    check(
        &mut failures,
        sign.is_strict(),
        format!("shift-sign arbitration not strict: {}", sign.winner),
    );
    check(
        &mut failures,
        sign.winner == sign_variant_label(SignVariant::default()),
        format!(
            "shipped default {} vs verdict {}",
            sign_variant_label(SignVariant::default()),
            sign.winner
        ),
    );

    // Degenerate jump laws make the variance candidates coincide; the
    // arbitration must say so rather than invent a winner.
    let degenerate = ModelParams::new(
        ArrivalParams::new(2.0, 2.0, 2.0, JumpDist::constant(2.0).unwrap()).unwrap(),
        ServiceParams::new(2.0, 2.0, 2.0, JumpDist::constant(0.5).unwrap()).unwrap(),
        ModelKind::HawkesSdHawkes,
    )
    .unwrap();
    let tie = variance_convention_test(&degenerate, 1.0, 20_000, 804).unwrap();
    check(
        &mut failures,
        tie.is_tie(),
        format!("constant-jump arbitration should tie, got {}", tie.winner),
    );

    // The Markdown rendering of the verdicts is part of the deliverable.
    let summary = run_suite(Suite::Conventions, 20_000, 805).unwrap();
    let md = conventions_markdown(&summary);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("CONVENTIONS.md");
    std::fs::write(&path, &md).unwrap();
    let written = std::fs::read_to_string(&path).unwrap();
    for needle in [
        "# Convention verdicts",
        moment_convention_label(DEFAULT_CONVENTION),
        zeta_convention_label(ZetaConvention::default()),
        sign_variant_label(SignVariant::default()),
    ] {
        check(
            &mut failures,
            written.contains(needle),
            format!("generated conventions file lacks {needle:?}"),
        );
    }

    conclude(
        8,
        "convention arbitration strictness, shipped defaults, rendered verdicts",
        &format!(
            "winners: {}, {}, {}; degenerate case ties",
            variance.winner, prefactor.winner, sign.winner
        ),
        &failures,
    );
}

#[test]
fn criterion_09_integrator_order_and_adaptive_agreement() {
    let mut failures = Vec::new();

    // Measured convergence order on y' = -y over [0, 1].
    let decay = OdeProblem::new(
        |_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = -y[0],
        vec![1.0],
        [0.0, 1.0],
    )
    .unwrap();
    let err = |h: f64| {
        let sol = integrate_rk4(&decay, h).unwrap();
        (sol.final_state()[0] - (-1.0f64).exp()).abs()
    };
    let order = (err(0.1) / err(0.05)).log2();
    check(
        &mut failures,
        (3.5..=4.5).contains(&order),
        format!("measured order {order:.3} outside [3.5, 4.5]"),
    );

    // The four-component characteristic system at the reference parameters,
    // restated here as the oracle: state [u, v, zc, acc] with exponential
    // jump rates a = b = 2, query (t, z, u, v) = (2, 0.7, 1, 1).
    let (r, ls, s, ms, a, b) = (2.0, 2.0, 2.0, 2.0, 2.0, 2.0);
    let system = OdeProblem::new(
        move |_t: f64, y: &[f64], dy: &mut [f64]| {
            let (u, v, zc, acc) = (y[0], y[1], y[2], y[3]);
            dy[0] = 1.0 - r * u - a * zc / (a + u);
            dy[1] = 1.0 - s * v - b / (zc * (b + v));
            dy[2] = -s * ms * v * zc;
            dy[3] = -ls * r * u * acc;
        },
        vec![1.0, 1.0, 0.7, 1.0],
        [0.0, 2.0],
    )
    .unwrap();
    let fixed = integrate_rk4(&system, 1e-4).unwrap();
    let adaptive = integrate_adaptive(&system, DEFAULT_REL_TOL, DEFAULT_ABS_TOL).unwrap();
    let gap = fixed
        .final_state()
        .iter()
        .zip(adaptive.final_state())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max);
    check(
        &mut failures,
        gap < 1e-6,
        format!("adaptive vs fixed-step final state gap {gap:.2e}"),
    );

    // The shipped engine agrees with the transform reconstructed from the
    // independently integrated oracle.
    let end = fixed.final_state();
    let oracle_zeta = (-end[0] * 2.0).exp() * end[3];
    let q = TransformQuery::new(2.0, 0.7, 1.0, 1.0).unwrap();
    let engine_zeta = zeta_for_model(
        &reference_full(),
        &q,
        ZetaConvention::default(),
        SignVariant::default(),
    )
    .unwrap();
    check(
        &mut failures,
        (engine_zeta - oracle_zeta).abs() < 1e-6,
        format!("engine zeta {engine_zeta} vs oracle reconstruction {oracle_zeta}"),
    );

    conclude(
        9,
        "integrator convergence order and adaptive/fixed-step agreement",
        &format!("order {order:.3}, state gap {gap:.2e}"),
        &failures,
    );
}

#[test]
fn criterion_10_byte_identical_reruns() {
    let mut failures = Vec::new();
    let bin = env!("CARGO_BIN_EXE_hawkes-queue");
    let run = |args: &[&str]| {
        let out = std::process::Command::new(bin).args(args).output().unwrap();
        (out.stdout, out.status.code().unwrap())
    };
    let commands: Vec<Vec<&str>> = vec![
        vec!["validate", "--suite", "all", "--paths", "300", "--seed", "42"],
        vec!["simulate", "--preset", "fig1", "--horizon", "3", "--seed", "12"],
        vec![
            "moments", "--preset", "fig1", "--t-grid", "0:2:9", "--mc-paths", "2000", "--seed",
            "8",
        ],
    ];
    for args in &commands {
        let (first, code_a) = run(args);
        let (second, code_b) = run(args);
        check(
            &mut failures,
            first == second && code_a == code_b,
            format!("{} not reproducible", args.join(" ")),
        );
        check(
            &mut failures,
            !first.is_empty(),
            format!("{} produced no output", args.join(" ")),
        );
    }
    conclude(
        10,
        "byte-identical outputs on rerun with the same seed",
        &format!("{} commands, two runs each", commands.len()),
        &failures,
    );
}
