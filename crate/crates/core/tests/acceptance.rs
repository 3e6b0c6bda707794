//! Acceptance suite. Prints one line per criterion and exits non-zero when a
//! hard criterion fails. Soft targets are reported but never fail the run.

use flexmarket::da_fo::solve_da_fo;
use flexmarket::io::{apply_override, reference_system, parse_system, serialize_system};
use flexmarket::model::{tier_probabilities, System};
use flexmarket::report::{run_fleets, Design, FleetRun};
use flexmarket::rt::solve_rt_fo;
use flexmarket::settlement::{Component, Stage, ISO};
use flexmarket::verify::{alt_optima_study, randomized_convergence_harness, RandomDrawSpec};

const CALIBRATION: &str = "calibration: strikes = variable costs, RE cost 0, vc_up 1000; \
     the test system's penalty and hedge parameters are not published";

struct Outcome {
    id: &'static str,
    hard: bool,
    pass: bool,
    detail: String,
}

#[derive(Default)]
struct Suite {
    outcomes: Vec<Outcome>,
}

impl Suite {
    fn record(&mut self, id: &'static str, hard: bool, pass: bool, detail: String) {
        let tag = match (pass, hard) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "SOFT-FAIL",
        };
        println!("[{tag}] criterion {id}: {detail}");
        self.outcomes.push(Outcome { id, hard, pass, detail });
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn fo(run: &FleetRun) -> &flexmarket::report::FoRun {
    run.fo.as_ref().expect("FO run")
}

fn ir(run: &FleetRun) -> &flexmarket::report::IrRun {
    run.ir.as_ref().expect("IR run")
}

/// Cost of serving each scenario's net load by merit order with unlimited
/// ramping, weighted by probability.
fn merit_order_cost(system: &System) -> f64 {
    let mut gens: Vec<(f64, f64)> = system.generators.iter().map(|g| (g.cost, g.capacity)).collect();
    gens.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut total = 0.0;
    for (s, pi) in system.scenarios.probabilities.iter().enumerate() {
        let mut need = system.config.demand - system.buyers.iter().map(|b| b.triggers[s]).sum::<f64>();
        let mut cost: f64 = system.buyers.iter().map(|b| b.cost * b.triggers[s]).sum();
        for &(c, cap) in &gens {
            let q = need.min(cap).max(0.0);
            cost += c * q;
            need -= q;
        }
        assert!(need <= 1e-9, "merit order cannot serve scenario {s}");
        total += pi * cost;
    }
    total
}

fn criterion_1(suite: &mut Suite, runs: &[FleetRun]) {
    let f1 = &runs[0];
    let got = fo(f1).system_cost;
    let oracle = merit_order_cost(&f1.system);
    let by_hand = (1800.0 + 1315.0 + 900.0 + 700.0 + 560.0) / 5.0;
    let pass = close(got, 1055.0, 0.5) && close(oracle, by_hand, 1e-9) && close(got, oracle, 0.5);
    suite.record("1", true, pass, format!("fleet1 FO cost {got:.3}, merit-order oracle {oracle:.3}, target 1055 +/- 0.5"));
}

fn criterion_2(suite: &mut Suite, runs: &[FleetRun], alt: &[FleetRun]) {
    let mut order_ok = true;
    let mut pairs = Vec::new();
    for run in runs {
        let (i, f) = (ir(run).system_cost, fo(run).system_cost);
        order_ok &= f <= i + 1e-6;
        pairs.push(format!("{:.2}/{:.2}", i, f));
    }
    let eq = close(fo(&runs[0]).system_cost, ir(&runs[0]).system_cost, 1.0)
        && close(fo(&runs[5]).system_cost, ir(&runs[5]).system_cost, 1.0);
    suite.record("2", true, order_ok && eq, format!("FO <= IR for all fleets, equal for fleets 1 and 6; IR/FO {}", pairs.join(" ")));

    let table = [(1055.0, 1055.0), (1166.0, 1107.0), (1206.0, 1139.0), (1123.0, 1063.0), (1125.0, 1063.0), (1289.0, 1289.0)];
    for (label, set) in [("bundled calibration d1=167 d2=10", runs), ("d1=170 d2=0.01", alt)] {
        let mut worst = 0.0f64;
        for (run, (pi, pf)) in set.iter().zip(table) {
            worst = worst.max(((ir(run).system_cost - pi) / pi).abs()).max(((fo(run).system_cost - pf) / pf).abs());
        }
        suite.record(
            "2-soft",
            false,
            worst <= 0.01,
            format!("cost pairs under {label}: worst relative deviation {:.3}% (limit 1%); {CALIBRATION}", 100.0 * worst),
        );
    }
}

fn criterion_3(suite: &mut Suite, runs: &[FleetRun]) {
    let up_want = [17.0, 17.0, 17.0, 17.0, 17.0, 38.0];
    let dn_want = [-12.0, -4.0, -4.0, -8.0, -8.0, -12.0];
    let mut pass = true;
    let mut cells = Vec::new();
    for (k, run) in runs.iter().enumerate() {
        let f = fo(run);
        let probs = &run.system.scenarios.probabilities;
        let prices: Vec<f64> = f.rts.iter().map(|r| r.price).collect();
        // Up tier 2 pays in the two lowest scenarios, down tier 2 in the three highest.
        let up_formula = probs[0] * prices[0] + probs[1] * prices[1];
        let dn_formula = -(2..prices.len()).map(|s| probs[s] * prices[s]).sum::<f64>();
        let (up, dn) = (f.da.duals.up[1], f.da.duals.down[1]);
        pass &= close(up, up_want[k], 0.5) && close(dn, dn_want[k], 0.5);
        pass &= close(up, up_formula, 0.1) && close(dn, dn_formula, 0.1);
        cells.push(format!("{:.2}/{:.2}", up, dn));
    }
    suite.record("3", true, pass, format!("tier-2 up/down prices {}; cumulative-probability formula within 0.1", cells.join(" ")));
}

fn criterion_4(suite: &mut Suite, runs: &[FleetRun]) {
    let want: [(f64, [f64; 5]); 6] = [
        (29.0, [50.0, 35.0, 20.0, 20.0, 20.0]),
        (21.0, [50.0, 35.0, 20.0, 0.0, 0.0]),
        (21.0, [50.0, 35.0, 20.0, 0.0, 0.0]),
        (25.0, [50.0, 35.0, 20.0, 20.0, 0.0]),
        (25.0, [50.0, 35.0, 20.0, 20.0, 0.0]),
        (50.0, [170.0, 20.0, 20.0, 20.0, 20.0]),
    ];
    let dev = |k: usize| {
        let f = fo(&runs[k]);
        let mut worst = (f.da.duals.energy - want[k].0).abs();
        for (rt, w) in f.rts.iter().zip(want[k].1) {
            worst = worst.max((rt.price - w).abs());
        }
        worst
    };
    let hard = dev(0).max(dev(5));
    suite.record("4", true, hard <= 0.5, format!("fleets 1 and 6 DA/RT prices, worst deviation {hard:.3} (limit 0.5)"));
    let soft = (1..5).map(dev).fold(0.0, f64::max);
    suite.record("4-soft", false, soft <= 1.0, format!("fleets 2-5 DA/RT prices, worst deviation {soft:.3} (limit 1); {CALIBRATION}"));
}

fn criterion_5(suite: &mut Suite, runs: &[FleetRun]) {
    let run = &runs[5];
    let probs = &run.system.scenarios.probabilities;
    let l = &fo(run).ledger;
    let rt = |p: &str, s: usize| probs[s] * l.amount(p, Stage::Rt, Some(s), Component::Fo);
    let da = |p: &str| l.amount(p, Stage::Da, None, Component::Fo);
    let mut worst = 0.0f64;
    let mut check = |got: f64, want: f64| worst = worst.max((got - want).abs());
    check(da("ST1"), 596.0);
    check(rt("ST1", 0), -596.0);
    check(da("CT2"), 39.0);
    check(da("CT3"), 48.0);
    check(da("RE"), -683.0);
    for (s, w) in [647.0, 9.0, 9.0, 9.0, 9.0].into_iter().enumerate() {
        check(rt("RE", s), w);
    }
    let mut iso = da(ISO).abs().max(l.cash_imbalance(Stage::Da, None).abs());
    for s in 0..probs.len() {
        iso = iso.max(l.amount(ISO, Stage::Rt, Some(s), Component::Fo).abs());
        iso = iso.max(l.cash_imbalance(Stage::Rt, Some(s)).abs());
    }
    let il = &ir(run).ledger;
    let mut ir_iso = vec![il.amount(ISO, Stage::Da, None, Component::Ir)];
    ir_iso.extend((0..probs.len()).map(|s| probs[s] * il.amount(ISO, Stage::Rt, Some(s), Component::Ir)));
    let ir_dev = ir_iso.iter().zip([-654.0, 131.0, 71.0, 0.0, 0.0, 0.0]).fold(0.0f64, |a, (g, w)| a.max((g - w).abs()));
    let pass = worst <= 2.0 && iso <= 1e-6 && ir_dev <= 2.0;
    suite.record(
        "5",
        true,
        pass,
        format!(
            "fleet6 FO ledger worst cell deviation {worst:.2} (limit 2), FO operator max |cash| {iso:.1e}, IR operator row {:?} deviation {ir_dev:.2}",
            ir_iso.iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>()
        ),
    );
}

fn criterion_6(suite: &mut Suite, runs: &[FleetRun]) {
    let mut worst = (0.0f64, String::new());
    for run in runs {
        let l = &fo(run).ledger;
        for p in &l.participants {
            let v = l.expected(p, Component::Fo).abs();
            if v > worst.0 {
                worst = (v, format!("{} {p}", run.fleet));
            }
        }
    }
    suite.record("6", true, worst.0 <= 2.0, format!("largest |expected FO cash| {:.3} at {} (limit 2)", worst.0, worst.1));
}

fn criterion_7(suite: &mut Suite, runs: &[FleetRun]) {
    let mut worst = f64::INFINITY;
    let mut count = 0;
    for run in runs {
        let f = fo(run);
        for (i, g) in run.system.generators.iter().enumerate() {
            if f.da.sellers[i].p <= 1e-9 {
                continue;
            }
            count += 1;
            let row = f.margins.row(&g.id).unwrap();
            worst = f.margins.per_scenario[row].iter().fold(worst, |a, &m| a.min(m));
        }
    }
    suite.record("7", true, worst >= -1e-6, format!("{count} scheduled FO sellers, smallest per-scenario gross margin {worst:.4}"));
}

fn criterion_8(suite: &mut Suite) {
    let system = reference_system().with_fleet("fleet6").unwrap();
    let study = alt_optima_study(&system, &[0.0, 0.01]).unwrap();
    let (m0, m1) = (&study.rows[0], &study.rows[1]);
    let core = study.core_objective_spread();
    let same = study.schedule_spread();
    let volume_ok = m1.fo_volume <= m0.fo_volume + 1e-9;
    suite.record(
        "8",
        true,
        core <= 0.1 && same <= 0.05 && volume_ok,
        format!(
            "core objectives {:.3}/{:.3}, RT schedule spread {same:.4}, FO volume M=0.01 {:.2} <= M=0 {:.2}",
            m0.core_objective, m1.core_objective, m1.fo_volume, m0.fo_volume
        ),
    );
    let want = [50.0, 40.14, 30.14, 20.14, 13.14];
    let st1 = &m1.rt_schedules[0];
    let dev: Vec<f64> = st1.iter().zip(want).map(|(g, w)| g - w).collect();
    let pass = dev.iter().all(|d| d.abs() <= 0.05);
    suite.record(
        "8-schedule",
        true,
        pass,
        format!(
            "ST1 RT schedule {:?} vs target {want:?}; deviations {:?} (limit 0.05)",
            st1.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>(),
            dev.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>()
        ),
    );
    let up = [5.86, 14.0, 0.0, 0.0];
    let dn = [0.0, 0.0, 10.0, 7.0];
    let basket = &m1.baskets[0];
    let worst = basket.1.iter().zip(up).chain(basket.2.iter().zip(dn)).fold(0.0f64, |a, (g, w)| a.max((g - w).abs()));
    suite.record("8-soft", false, worst <= 0.05, format!("ST1 M=0.01 basket worst deviation {worst:.3} from the published basket"));
}

fn criterion_9(suite: &mut Suite) {
    let system = reference_system().with_fleet("fleet1").unwrap();
    let summary = randomized_convergence_harness(&system, RandomDrawSpec { seed: 1, draws: 1000 });
    let pass = summary.draws == 1000 && summary.converged_fraction() >= 0.99 && summary.kkt_ok == summary.draws;
    suite.record(
        "9",
        true,
        pass,
        format!(
            "1000 draws: {:.1}% within 0.1 $/MWh, {} of {} KKT <= 1e-7 (max {:.1e}), {} solver failures",
            100.0 * summary.converged_fraction(),
            summary.kkt_ok,
            summary.draws,
            summary.max_kkt,
            summary.failures
        ),
    );
}

fn criterion_10(suite: &mut Suite, runs: &[FleetRun]) {
    let mut pass = true;
    let mut notes = Vec::new();

    let probs = &runs[0].system.scenarios.probabilities;
    let (up, dn) = tier_probabilities(probs);
    let partition = up.iter().zip(&dn).all(|(a, b)| close(a + b, 1.0, 1e-12));
    pass &= partition;
    notes.push(format!("tier partition {partition}"));

    let mut zero_sum = 0.0f64;
    for run in runs {
        for l in run.fo.iter().map(|f| &f.ledger).chain(run.ir.iter().map(|i| &i.ledger)) {
            zero_sum = zero_sum.max(l.cash_imbalance(Stage::Da, None).abs());
            for s in 0..l.scenario_count() {
                zero_sum = zero_sum.max(l.cash_imbalance(Stage::Rt, Some(s)).abs());
            }
        }
    }
    pass &= zero_sum <= 1e-6;
    notes.push(format!("ledger zero-sum {zero_sum:.1e}"));

    let mapping = runs
        .iter()
        .map(|r| {
            let c = &fo(r).convergence;
            c.mapping_infeasibility.iter().chain(&c.buyer_identity).chain(&c.mapping_objective_gap).fold(0.0f64, |a, b| a.max(b.abs()))
        })
        .fold(0.0f64, f64::max);
    pass &= mapping <= 1e-6;
    notes.push(format!("primal mapping {mapping:.1e}"));

    let sys = reference_system().with_fleet("fleet3").unwrap();
    let a = solve_da_fo(&sys).unwrap();
    let b = solve_da_fo(&sys).unwrap();
    let ra = solve_rt_fo(&sys, &a).unwrap();
    let rb = solve_rt_fo(&sys, &b).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let det = bits(&a.raw.x) == bits(&b.raw.x)
        && bits(&a.raw.duals) == bits(&b.raw.duals)
        && ra.iter().zip(&rb).all(|(x, y)| x.price.to_bits() == y.price.to_bits() && bits(&x.raw.x) == bits(&y.raw.x));
    let s1 = randomized_convergence_harness(&sys, RandomDrawSpec { seed: 5, draws: 20 });
    let s2 = randomized_convergence_harness(&sys, RandomDrawSpec { seed: 5, draws: 20 });
    let det = det && s1.to_csv() == s2.to_csv();
    pass &= det;
    notes.push(format!("bitwise determinism {det}"));

    let round_trip = parse_system(&serialize_system(&reference_system())).map(|s| s == reference_system()).unwrap_or(false);
    pass &= round_trip;
    notes.push(format!("round trip {round_trip}"));
    suite.record("10", true, pass, notes.join(", "));

}

fn main() {
    let base = reference_system();
    let fleets = base.fleet_names();
    let runs = run_fleets(&base, &fleets, Design::Both).expect("reference system runs");
    let mut alt_system = base.clone();
    apply_override(&mut alt_system, "d1=170").unwrap();
    apply_override(&mut alt_system, "d2=0.01").unwrap();
    let alt = run_fleets(&alt_system, &fleets, Design::Both).expect("alternative calibration runs");

    let mut suite = Suite::default();
    criterion_1(&mut suite, &runs);
    criterion_2(&mut suite, &runs, &alt);
    criterion_3(&mut suite, &runs);
    criterion_4(&mut suite, &runs);
    criterion_5(&mut suite, &runs);
    criterion_6(&mut suite, &runs);
    criterion_7(&mut suite, &runs);
    criterion_8(&mut suite);
    criterion_9(&mut suite);
    criterion_10(&mut suite, &runs);

    let failed: Vec<&Outcome> = suite.outcomes.iter().filter(|o| o.hard && !o.pass).collect();
    let soft = suite.outcomes.iter().filter(|o| !o.hard && !o.pass).count();
    println!(
        "\nacceptance: {} checks, {} hard failures, {} soft misses",
        suite.outcomes.len(),
        failed.len(),
        soft
    );
    for o in &failed {
        println!("  failed {}: {}", o.id, o.detail);
    }
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
