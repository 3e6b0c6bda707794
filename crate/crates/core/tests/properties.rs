//! Property suites: tier partition, ledger zero-sum, primal mapping,
//! determinism, solver optimality and the binary search.

use flexmarket::da_fo::solve_da_fo;
use flexmarket::io::{apply_override, reference_system, parse_system, serialize_system};
use flexmarket::model::{tier_probabilities, System};
use flexmarket::opt::{kkt_residual, solve, solve_with_binaries, solve_with_binaries_exhaustive, Program, Sense, Status, KKT_TOL};
use flexmarket::rt::{build_rt, solve_rt_fo, DaSchedule};
use flexmarket::settlement::{check_triggers, settle_fo_run, Component, Stage, ISO};
use flexmarket::verify::{apply_draw, check_convergence, mapped_rt_point, DrawParams};
use proptest::prelude::*;

fn probabilities(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, n).prop_map(|w| {
        let total: f64 = w.iter().sum();
        w.iter().map(|x| x / total).collect()
    })
}

/// Fleet 1 with drawn ramps and strikes, the same ranges as the sweep.
fn market() -> impl Strategy<Value = System> {
    let base = reference_system().with_fleet("fleet1").unwrap();
    let n = base.generators.len();
    (prop::collection::vec(0.0f64..=1.0, n), prop::collection::vec(0.0f64..=1.0, n), prop::collection::vec(0.0f64..=1.0, n))
        .prop_map(move |(r, u, d)| {
            let params = DrawParams {
                ramp: base.generators.iter().zip(&r).map(|(g, t)| t * g.capacity).collect(),
                strike_up: base.generators.iter().zip(&u).map(|(g, t)| g.cost * (1.0 + t)).collect(),
                strike_down: base.generators.iter().zip(&d).map(|(g, t)| g.cost * t).collect(),
            };
            apply_draw(&base, &params)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tier_probabilities_partition(probs in (2usize..9).prop_flat_map(probabilities)) {
        let (up, down) = tier_probabilities(&probs);
        prop_assert_eq!(up.len(), probs.len() - 1);
        let mut cum = 0.0;
        for r in 0..up.len() {
            cum += probs[r];
            prop_assert!((up[r] - cum).abs() < 1e-12);
            prop_assert!((up[r] + down[r] - 1.0).abs() < 1e-12);
            if r > 0 {
                prop_assert!(up[r] >= up[r - 1]);
            }
        }
    }

    #[test]
    fn triggers_never_fire_both_ways(p in 0.0f64..300.0, q in 0.0f64..300.0, price in -50.0f64..300.0, vc in 0.0f64..100.0) {
        let (up, down) = check_triggers(p, q, q, price, vc, vc);
        prop_assert!(!(up && down));
    }

    #[test]
    fn round_trip_with_overrides(d1 in 100.0f64..300.0, m in 0.0f64..0.1, strike in 20.0f64..40.0) {
        let mut s = reference_system();
        apply_override(&mut s, &format!("d1={d1}")).unwrap();
        apply_override(&mut s, &format!("m={m}")).unwrap();
        apply_override(&mut s, &format!("strike_up.ST1={strike}")).unwrap();
        prop_assert_eq!(parse_system(&serialize_system(&s)).unwrap(), s);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fo_ledger_is_zero_sum(system in market()) {
        let da = solve_da_fo(&system).unwrap();
        let rts = solve_rt_fo(&system, &da).unwrap();
        let (ledger, _) = settle_fo_run(&system, &da, &rts);
        prop_assert!(ledger.cash_imbalance(Stage::Da, None).abs() < 1e-6);
        prop_assert!(ledger.amount(ISO, Stage::Da, None, Component::Fo).abs() < 1e-6);
        for s in 0..system.scenario_count() {
            prop_assert!(ledger.cash_imbalance(Stage::Rt, Some(s)).abs() < 1e-6);
            prop_assert!(ledger.amount(ISO, Stage::Rt, Some(s), Component::Fo).abs() < 1e-6);
        }
    }

    #[test]
    fn da_awards_map_to_optimal_rt_points(system in market()) {
        let da = solve_da_fo(&system).unwrap();
        let rts = solve_rt_fo(&system, &da).unwrap();
        let report = check_convergence(&system, &da, &rts);
        prop_assert!(report.primal_mapping_ok(1e-6), "{:?}", report);
        let schedule = DaSchedule::from(&da);
        for rt in &rts {
            let program = build_rt(&system, &schedule, rt.scenario, rt.regime);
            let x = mapped_rt_point(&da, rt.scenario);
            // The mapped point balances every scenario by construction.
            prop_assert!((program.activity(0, &x) - program.rows[0].rhs).abs() < 1e-7);
        }
    }

    #[test]
    fn reruns_are_bitwise_identical(system in market()) {
        let a = solve_da_fo(&system).unwrap();
        let b = solve_da_fo(&system).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a.raw.x), bits(&b.raw.x));
        prop_assert_eq!(bits(&a.raw.duals), bits(&b.raw.duals));
        let ra = solve_rt_fo(&system, &a).unwrap();
        let rb = solve_rt_fo(&system, &b).unwrap();
        for (x, y) in ra.iter().zip(&rb) {
            prop_assert_eq!(x.price.to_bits(), y.price.to_bits());
        }
    }
}

/// Box-bounded program with `<=` rows made feasible at a known interior point.
fn random_program() -> impl Strategy<Value = (Program, Vec<f64>)> {
    (2usize..7, 1usize..6).prop_flat_map(|(n, m)| {
        (
            prop::collection::vec((-10.0f64..10.0, 0.0f64..2.0, 1.0f64..20.0), n),
            prop::collection::vec(prop::collection::vec(-3.0f64..3.0, n), m),
            prop::collection::vec(0.0f64..=1.0, n),
            prop::collection::vec(0.0f64..5.0, m),
        )
            .prop_map(|(vars, rows, point, slack)| {
                let mut p = Program::new();
                let mut x0 = Vec::new();
                for (j, &(c, q, ub)) in vars.iter().enumerate() {
                    let v = p.add_var(format!("x{j}"), 0.0, ub, c);
                    if j % 2 == 0 {
                        p.set_quad(v, q);
                    }
                    x0.push(point[j] * ub);
                }
                for (i, a) in rows.iter().enumerate() {
                    let terms: Vec<(usize, f64)> = a.iter().cloned().enumerate().collect();
                    let act: f64 = a.iter().zip(&x0).map(|(c, x)| c * x).sum();
                    p.add_row(format!("r{i}"), &terms, Sense::Le, act + slack[i]);
                }
                (p, x0)
            })
    })
}

fn feasible(p: &Program, x: &[f64]) -> bool {
    p.vars.iter().zip(x).all(|(v, &xj)| xj >= v.lower - 1e-9 && xj <= v.upper + 1e-9)
        && p.rows.iter().enumerate().all(|(i, r)| p.activity(i, x) <= r.rhs + 1e-9)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn solver_optimum_satisfies_kkt((p, x0) in random_program(), samples in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 7), 40)) {
        let r = solve(&p).unwrap();
        prop_assert_eq!(r.status, Status::Optimal);
        prop_assert!(kkt_residual(&p, &r) <= KKT_TOL);
        // No feasible point found by sampling beats the optimum.
        prop_assert!(r.objective <= p.objective(&x0) + 1e-7);
        for s in samples {
            let x: Vec<f64> = p.vars.iter().zip(&s).map(|(v, t)| t * v.upper).collect();
            if feasible(&p, &x) {
                prop_assert!(r.objective <= p.objective(&x) + 1e-7);
            }
        }
    }

    #[test]
    fn pruned_search_matches_exhaustive(
        costs in prop::collection::vec((0.0f64..20.0, 1.0f64..50.0, 5.0f64..30.0), 2..6),
        demand in 1.0f64..40.0,
    ) {
        // Unit commitment: fixed cost, energy cost and capacity per unit,
        // plus a dear backstop so every assignment is feasible.
        let mut p = Program::new();
        let mut us = Vec::new();
        let mut bal = Vec::new();
        for (i, &(fixed, c, cap)) in costs.iter().enumerate() {
            let g = p.add_var(format!("g{i}"), 0.0, f64::INFINITY, c);
            let u = p.add_var(format!("u{i}"), 0.0, 1.0, fixed);
            p.add_row(format!("cap{i}"), &[(g, 1.0), (u, -cap)], Sense::Le, 0.0);
            bal.push((g, 1.0));
            us.push(u);
        }
        let backstop = p.add_var("backstop", 0.0, f64::INFINITY, 1000.0);
        bal.push((backstop, 1.0));
        p.add_row("balance", &bal, Sense::Eq, demand);
        let a = solve_with_binaries(&p, &us).unwrap();
        let b = solve_with_binaries_exhaustive(&p, &us).unwrap();
        prop_assert!((a.objective - b.objective).abs() <= 1e-7 * (1.0 + b.objective.abs()));
        for &u in &us {
            prop_assert!(a.x[u] == 0.0 || a.x[u] == 1.0);
        }
    }
}
