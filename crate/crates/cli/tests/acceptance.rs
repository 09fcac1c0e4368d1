//! End-to-end acceptance checks on the triple well. Prints one PASS/FAIL line
//! per criterion and exits nonzero if any fails.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use transpath::critical_points::{find_critical_points, SearchBox};
use transpath::functionals::{eval_i, eval_objective, objective_gradient, DiscretePath, Objective};
use transpath::heteroclinics::{
    build_transition_graph, hamiltonian_connection_adaptive, verify_orbit, ConnectionOptions, Edge, GraphOptions,
    OrbitKind, TransitionGraph,
};
use transpath::optimizer::{minimize, FlowConfig};
use transpath::potential::TripleWell;
use transpath_cli::config::ExperimentConfig;
use transpath_cli::experiments::{
    figure3, figure5, figure6, figure7, figure9, LimitFigure, Output, TripleWellSetup, AVOIDING_WAYPOINT,
};

const SADDLE_VALUE: f64 = 2.0 / 27.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

fn critical_point_recovery() -> Outcome {
    let (cps, took) = timed(|| find_critical_points(&TripleWell, &SearchBox::cube(2, -0.5, 1.5).unwrap(), 40).unwrap());
    let r2 = 2f64.sqrt();
    let expected = [
        ([0.0, 0.0], 0.0, 4.0),
        ([1.0, 0.0], 0.0, 8.0),
        ([0.0, 1.0], 0.0, 8.0),
        ([(2.0 + r2) / 6.0, (2.0 - r2) / 6.0], SADDLE_VALUE, 0.0),
        ([(2.0 - r2) / 6.0, (2.0 + r2) / 6.0], SADDLE_VALUE, 0.0),
    ];
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    let mut found = true;
    for (x, v, lap) in &expected {
        let (i, _) = cps.nearest(x);
        let c = &cps.points()[i];
        let dx = c.location.iter().zip(x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        found &= dx <= 1e-8;
        worst.0 = worst.0.max(dx);
        worst.1 = worst.1.max((c.value - v).abs());
        worst.2 = worst.2.max((c.laplacian - lap).abs());
    }
    let pass = cps.len() == 5 && found && worst.1 <= 1e-10 && worst.2 <= 1e-8 && took < Duration::from_secs(1);
    outcome(
        pass,
        format!(
            "{} points, max coordinate error {:.1e}, value error {:.1e}, Laplacian error {:.1e}, {:.3} s",
            cps.len(),
            worst.0,
            worst.1,
            worst.2,
            took.as_secs_f64()
        ),
    )
}

fn sum_rule() -> Outcome {
    let setup = TripleWellSetup::new().unwrap();
    let (graph, took) = timed(|| build_transition_graph(&TripleWell, &setup.cps, &[], &GraphOptions::default()).unwrap());
    let mut pass = graph.failures.is_empty() && took < Duration::from_secs(10);
    let mut lines = Vec::new();
    for (s, m) in [
        (setup.s1, setup.m0),
        (setup.s1, setup.m1),
        (setup.s2, setup.m0),
        (setup.s2, setup.m2),
    ] {
        let Some(orbit) = graph.orbit(s, m) else {
            pass = false;
            lines.push(format!("{}->{} missing", setup.name(s), setup.name(m)));
            continue;
        };
        let check = verify_orbit(&TripleWell, &orbit).unwrap();
        let gap = (orbit.action - SADDLE_VALUE).abs();
        pass &= gap <= 1e-3 && check.identity_gap <= 1e-2;
        lines.push(format!(
            "{}->{} J-2/27 {:.1e} identity {:.1e}",
            setup.name(s),
            setup.name(m),
            gap,
            check.identity_gap
        ));
    }
    outcome(pass, format!("{}; {:.2} s", lines.join(", "), took.as_secs_f64()))
}

fn saddle_connection() -> Outcome {
    let setup = TripleWellSetup::new().unwrap();
    let (a, b) = (&setup.cps.points()[setup.s1], &setup.cps.points()[setup.s2]);
    let via = [AVOIDING_WAYPOINT.to_vec()];
    let coarse = hamiltonian_connection_adaptive(&TripleWell, a, b, &via, &ConnectionOptions::default());
    let fine = hamiltonian_connection_adaptive(
        &TripleWell,
        a,
        b,
        &via,
        &ConnectionOptions {
            node_spacing: 0.005,
            ..ConnectionOptions::default()
        },
    );
    match (coarse, fine) {
        (Ok(c), Ok(f)) => {
            let r = c.residuals;
            let shift = (c.action - f.action).abs();
            let pass = c.kind == OrbitKind::Hamiltonian && r.energy <= 1e-3 && r.gradient > 0.1 && shift <= 1e-3;
            outcome(
                pass,
                format!(
                    "J = {:.6} (spacing 0.005: {:.6}, shift {:.1e}), energy residual {:.1e}, gradient residual {:.3}",
                    c.action, f.action, shift, r.energy, r.gradient
                ),
            )
        }
        (c, f) => outcome(false, format!("connection failed: {:?} / {:?}", c.err(), f.err())),
    }
}

fn figure_three() -> Outcome {
    let cfg = ExperimentConfig::default();
    let (fig, took) = timed(|| figure3(&cfg, &Output::none()));
    let fig = match fig {
        Ok(f) => f,
        Err(e) => return outcome(false, format!("{e}")),
    };
    let via = fig.via_centre.report.j_eps;
    let around = fig.avoiding.report.j_eps;
    let around_target = 2.0 * SADDLE_VALUE + fig.saddle_pair;
    let slowest = [&fig.via_centre, &fig.avoiding]
        .iter()
        .map(|r| r.trace.iterations())
        .max()
        .unwrap_or(0);
    let pass = (via - 4.0 * SADDLE_VALUE).abs() <= 2e-2
        && (around - around_target).abs() <= 2e-2
        && took < Duration::from_secs(300);
    outcome(
        pass,
        format!(
            "through M0 {via:.6} vs 8/27 = {:.6}; avoiding {around:.6} vs {around_target:.6}; {:.1} s for both ({slowest} iterations max)",
            4.0 * SADDLE_VALUE,
            took.as_secs_f64()
        ),
    )
}

fn equivalence() -> Outcome {
    let cfg = ExperimentConfig::default();
    match figure5(&cfg, &Output::none()) {
        Ok(fig) => {
            let e = fig.equivalence;
            outcome(
                e.objective_gap <= 1e-3,
                format!(
                    "|I(x_I) - J(x_J)| = {:.3e} (Laplacian term {:.3e}); |J(x_I) - J(x_J)| = {:.1e}; max node distance {:.1e}",
                    e.objective_gap, e.laplacian_term, e.same_functional_gap, e.path_distance
                ),
            )
        }
        Err(e) => outcome(false, format!("{e}")),
    }
}

fn centre_concentration(fig7: &Result<LimitFigure, String>) -> Outcome {
    let cfg = ExperimentConfig::default();
    let fig6 = figure6(&cfg, &Output::none());
    match (fig7, fig6) {
        (Ok(f7), Ok(f6)) => {
            let gap = (f6.runs[0].report.j_eps - f6.runs[1].report.j_eps).abs();
            let pass = f7.support_share >= 0.8 && gap <= 1e-3;
            outcome(
                pass,
                format!(
                    "I minimizer: {:.3} of nodes near M0; J for two dwell allocations differs by {gap:.1e}",
                    f7.support_share
                ),
            )
        }
        (a, b) => outcome(false, format!("{:?} / {:?}", a.as_ref().err(), b.err().map(|e| e.to_string()))),
    }
}

fn outer_concentration(fig9: &Result<LimitFigure, String>) -> Outcome {
    match fig9 {
        Ok(f) => outcome(
            f.support_share >= 0.8 && f.transition_fraction <= 0.05,
            format!(
                "{:.3} of nodes near M1 or M2; transition takes {:.4} of the interval",
                f.support_share, f.transition_fraction
            ),
        ),
        Err(e) => outcome(false, e.clone()),
    }
}

fn gamma_consistency(fig7: &Result<LimitFigure, String>, fig9: &Result<LimitFigure, String>) -> Outcome {
    match (fig7, fig9) {
        (Ok(a), Ok(b)) => {
            let (ca, cb) = (&a.limit.comparison, &b.limit.comparison);
            outcome(
                ca.discrepancy <= 0.05 && cb.discrepancy <= 0.05,
                format!(
                    "S1,M0,S2: I_eps {:.5} vs I0 {:.5}; M1,S1,S2,M2: I_eps {:.5} vs I0 {:.5}",
                    ca.i_eps, ca.i0, cb.i_eps, cb.i0
                ),
            )
        }
        (a, b) => outcome(false, format!("{:?} / {:?}", a.as_ref().err(), b.as_ref().err())),
    }
}

fn random_path(m: usize) -> impl Strategy<Value = DiscretePath> {
    proptest::collection::vec(-0.5f64..1.5, 2 * (m + 1)).prop_map(|n| DiscretePath::new(0.0, 1.0, 2, n).unwrap())
}

fn objective_strategy() -> impl Strategy<Value = Objective> {
    prop_oneof![Just(Objective::OnsagerMachlup), Just(Objective::LaplacianFree)]
}

fn properties() -> Outcome {
    let setup = TripleWellSetup::new().unwrap();
    let cps = setup.cps.clone();
    let cases = AtomicUsize::new(0);
    let runner = || {
        TestRunner::new(Config {
            cases: 100,
            failure_persistence: None,
            ..Config::default()
        })
    };
    let t = Instant::now();
    let mut failures = Vec::new();
    let mut check = |name: &str, r: Result<(), String>| {
        if let Err(e) = r {
            failures.push(format!("{name}: {e}"));
        }
    };

    check(
        "gradient",
        runner()
            .run(&(3usize..12).prop_flat_map(random_path).prop_flat_map(|p| (Just(p), 0.01f64..1.0, objective_strategy())), |(path, eps, obj)| {
                cases.fetch_add(1, Ordering::Relaxed);
                let g = objective_gradient(&TripleWell, &path, eps, obj).unwrap();
                let d = path.dim();
                let mut err = 0.0f64;
                let mut scale = 1.0f64;
                for (i, gi) in g.iter().enumerate() {
                    let shifted = |delta: f64| {
                        let mut nodes = path.coordinates().to_vec();
                        nodes[d + i] += delta;
                        let p = DiscretePath::new(0.0, 1.0, d, nodes).unwrap();
                        eval_objective(&TripleWell, &p, eps, obj).unwrap()
                    };
                    let fd = (shifted(1e-6) - shifted(-1e-6)) / 2e-6;
                    err = err.max((gi - fd).abs());
                    scale = scale.max(fd.abs());
                }
                prop_assert!(err / scale <= 1e-6);
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );

    check(
        "monotone decrease",
        runner()
            .run(&((3usize..40).prop_flat_map(random_path), 0.01f64..1.0, objective_strategy()), |(path, eps, obj)| {
                cases.fetch_add(1, Ordering::Relaxed);
                let mut cfg = FlowConfig::new(obj, eps);
                cfg.max_iterations = 200;
                let (_, trace) = minimize(&TripleWell, &path, &cfg).unwrap();
                prop_assert!(trace.accepted_objectives().windows(2).all(|w| w[1] <= w[0]));
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );

    let points = cps.clone();
    check(
        "lower bound",
        runner()
            .run(
                &(0usize..5, 0usize..5, proptest::collection::vec((-0.5f64..1.5, -0.5f64..1.5), 0..3), 1e-3f64..1.0),
                |(a, b, bends, eps)| {
                cases.fetch_add(1, Ordering::Relaxed);
                    let (a, b) = (&points.points()[a], &points.points()[b]);
                    let mut w = vec![a.location.clone()];
                    w.extend(bends.iter().map(|(x, y)| vec![*x, *y]));
                    w.push(b.location.clone());
                    let path = DiscretePath::through_waypoints(&w, None, 1000, 0.0, 1.0).unwrap();
                    let j = eval_i(&TripleWell, &path, eps).unwrap().j_eps;
                    prop_assert!(j >= (a.value - b.value).abs() - 1e-3);
                    Ok(())
                },
            )
            .map_err(|e| e.to_string()),
    );

    let points = cps.clone();
    check(
        "metric",
        runner()
            .run(&proptest::collection::vec(proptest::option::of(0.01f64..1.0), 10), |weights| {
                cases.fetch_add(1, Ordering::Relaxed);
                let pairs = [(0, 1), (0, 2), (0, 3), (0, 4), (1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4)];
                let mut edges = Vec::new();
                for ((a, b), w) in pairs.iter().zip(&weights) {
                    if let Some(w) = w {
                        for (from, to) in [(*a, *b), (*b, *a)] {
                            edges.push(Edge {
                                from,
                                to,
                                action: *w,
                                kind: OrbitKind::Hamiltonian,
                            });
                        }
                    }
                }
                let g = TransitionGraph::from_edges(points.clone(), edges).unwrap();
                for a in 0..5 {
                    for b in 0..5 {
                        let (x, y) = (g.phi(a, b), g.phi(b, a));
                        prop_assert!(x == y || (x - y).abs() <= 1e-12);
                        for c in 0..5 {
                            prop_assert!(g.phi(a, c) <= g.phi(a, b) + g.phi(b, c) + 1e-6);
                        }
                    }
                }
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );

    check(
        "decomposition",
        runner()
            .run(&((3usize..60).prop_flat_map(random_path), 1e-3f64..1.0), |(path, eps)| {
                cases.fetch_add(1, Ordering::Relaxed);
                let r = eval_i(&TripleWell, &path, eps).unwrap();
                prop_assert!((r.i_eps - (r.kinetic + r.force - r.laplacian)).abs() <= 1e-12 * r.i_eps.abs().max(1.0));
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );

    let took = t.elapsed();
    let pass = failures.is_empty() && cases.load(Ordering::Relaxed) >= 500 && took < Duration::from_secs(60);
    let detail = if failures.is_empty() {
        format!("5 suites, {} cases in {:.1} s", cases.load(Ordering::Relaxed), took.as_secs_f64())
    } else {
        failures.join("; ")
    };
    outcome(pass, detail)
}

/// Criteria named by number on the command line run alone; none means all.
fn main() {
    let only: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: u8| only.is_empty() || only.contains(&n);
    let cfg = ExperimentConfig::default();
    let mut results: Vec<(u8, Outcome)> = Vec::new();
    let mut record = |n: u8, name: &str, run: &dyn Fn() -> Outcome| {
        if !wanted(n) {
            return;
        }
        let o = run();
        println!("{} {n}. {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, o));
    };

    record(1, "critical points", &critical_point_recovery);
    record(2, "gradient orbit sum rule", &sum_rule);
    record(3, "saddle-to-saddle connection", &saddle_connection);
    record(4, "M1 to M2 action minimizers", &figure_three);
    record(5, "I and J minimizers away from M0", &equivalence);
    let limits = [6, 7, 8].into_iter().any(wanted);
    let fig7 = if limits {
        figure7(&cfg, &Output::none()).map_err(|e| e.to_string())
    } else {
        Err("skipped".into())
    };
    let fig9 = if limits {
        figure9(&cfg, &Output::none()).map_err(|e| e.to_string())
    } else {
        Err("skipped".into())
    };
    record(6, "concentration at M0", &|| centre_concentration(&fig7));
    record(7, "concentration at M1 and M2", &|| outer_concentration(&fig9));
    record(8, "limit functional consistency", &|| gamma_consistency(&fig7, &fig9));
    record(9, "property suites", &properties);

    let failed: Vec<u8> = results.iter().filter(|r| !r.1.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(" ({failed:?})")
        }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
