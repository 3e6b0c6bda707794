//! Verification suites: DA/RT price convergence, cost recovery, alternative
//! optima and the randomized convergence sweep.

use crate::da_fo::{solve_da_fo, DaFoSolution, MarketError};
use crate::model::System;
use crate::opt;
use crate::rt::{self, build_rt, DaSchedule, RtSolution};
use crate::settlement::{Component, ExerciseReport, Ledger, Stage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt::Write as _;

/// Tolerance for the approximate relations between DA and RT duals.
pub const PRICE_TOL: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub da_price: f64,
    pub expected_rt_price: f64,
    pub price_gap: f64,
    /// Up-tier price residuals; `None` for tiers without trade.
    pub tier_up: Vec<Option<f64>>,
    pub tier_down: Vec<Option<f64>>,
    /// Worst bound or row violation of the mapped RT point, per scenario.
    pub mapping_infeasibility: Vec<f64>,
    /// Mapped RT objective minus the RT optimum, per scenario.
    pub mapping_objective_gap: Vec<f64>,
    /// Buyer net-deviation identity residual, per scenario.
    pub buyer_identity: Vec<f64>,
    /// Capacity-row dual residuals per seller with positive output.
    pub cap_dual: Vec<Option<f64>>,
    /// Floor-row dual residuals per seller with positive output.
    pub floor_dual: Vec<Option<f64>>,
    /// Ramp-row dual relations, informational only.
    pub ramp_up_dual: Vec<f64>,
    pub ramp_down_dual: Vec<f64>,
}

fn max_opt(v: &[Option<f64>]) -> f64 {
    v.iter().flatten().fold(0.0, |a, &b| a.max(b))
}

impl ConvergenceReport {
    pub fn prices_converged(&self, tol: f64) -> bool {
        self.price_gap <= tol
    }

    pub fn max_tier_residual(&self) -> f64 {
        max_opt(&self.tier_up).max(max_opt(&self.tier_down))
    }

    pub fn tiers_ok(&self, tol: f64) -> bool {
        self.max_tier_residual() <= tol
    }

    pub fn primal_mapping_ok(&self, tol: f64) -> bool {
        self.mapping_infeasibility.iter().chain(&self.buyer_identity).all(|&r| r <= tol)
            && self.mapping_objective_gap.iter().all(|&g| g.abs() <= tol)
    }

    pub fn energy_duals_ok(&self, tol: f64) -> bool {
        max_opt(&self.cap_dual).max(max_opt(&self.floor_dual)) <= tol
    }
}

/// RT point induced by the DA awards of scenario `s`, in the variable order of
/// [`build_rt`].
pub fn mapped_rt_point(da: &DaFoSolution, s: usize) -> Vec<f64> {
    let nr = da.layout.tiers;
    let mut x = Vec::new();
    for g in &da.sellers {
        x.push((s..nr).map(|r| g.hs_up[r]).sum());
        x.push((0..s.min(nr)).map(|r| g.hs_down[r]).sum());
    }
    for b in &da.buyers {
        let hedged_up: f64 = (s..nr).map(|r| b.hd_up[r]).sum();
        let hedged_down: f64 = (0..s.min(nr)).map(|r| b.hd_down[r]).sum();
        x.push(hedged_down);
        x.push(hedged_up + b.d_rt[s]);
        x.push((0..s.min(nr)).map(|r| b.sd_down[r]).sum());
        x.push((s..nr).map(|r| b.sd_up[r]).sum());
    }
    x.push(da.d_rt[s]);
    x
}

fn infeasibility(program: &opt::Program, x: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for (v, &xj) in program.vars.iter().zip(x) {
        worst = worst.max(v.lower - xj).max(xj - v.upper);
    }
    for (i, row) in program.rows.iter().enumerate() {
        let gap = program.activity(i, x) - row.rhs;
        worst = worst.max(match row.sense {
            opt::Sense::Eq => gap.abs(),
            opt::Sense::Le => gap,
            opt::Sense::Ge => -gap,
        });
    }
    worst.max(0.0)
}

/// Evaluates the DA/RT dual and primal relations for one FO run.
pub fn check_convergence(system: &System, da: &DaFoSolution, rts: &[RtSolution]) -> ConvergenceReport {
    let probs = &system.scenarios.probabilities;
    let nr = da.layout.tiers;
    let ns = probs.len();
    let prices: Vec<f64> = rts.iter().map(|r| r.price).collect();
    let expected: f64 = probs.iter().zip(&prices).map(|(p, l)| p * l).sum();
    let traded = |r: usize, up: bool| -> bool {
        da.buyers.iter().map(|b| if up { b.hd_up[r] } else { b.hd_down[r] }).sum::<f64>() > 1e-9
    };
    let tier_up = (0..nr)
        .map(|r| traded(r, true).then(|| (da.duals.up[r] - (0..=r).map(|s| probs[s] * prices[s]).sum::<f64>()).abs()))
        .collect();
    let tier_down = (0..nr)
        .map(|r| {
            traded(r, false).then(|| (da.duals.down[r] + (r + 1..ns).map(|s| probs[s] * prices[s]).sum::<f64>()).abs())
        })
        .collect();

    let sched = DaSchedule::from(da);
    let mut mapping_infeasibility = Vec::with_capacity(ns);
    let mut mapping_objective_gap = Vec::with_capacity(ns);
    let mut buyer_identity = Vec::with_capacity(ns);
    for rt in rts {
        let s = rt.scenario;
        let program = build_rt(system, &sched, s, rt.regime);
        let x = mapped_rt_point(da, s);
        mapping_infeasibility.push(infeasibility(&program, &x));
        mapping_objective_gap.push(program.objective(&x) - rt.objective);
        let mut worst = 0.0f64;
        for (b, award) in system.buyers.iter().zip(&da.buyers) {
            let down: f64 = (0..s.min(nr)).map(|r| award.hd_down[r] + award.sd_down[r]).sum();
            let up: f64 = (s..nr).map(|r| award.hd_up[r] + award.sd_up[r]).sum();
            worst = worst.max((b.triggers[s] - award.p - (down - up - award.d_rt[s])).abs());
        }
        buyer_identity.push(worst);
    }

    let lambda = da.duals.energy;
    let mut cap_dual = Vec::new();
    let mut floor_dual = Vec::new();
    let mut ramp_up_dual = Vec::new();
    let mut ramp_down_dual = Vec::new();
    for (i, g) in system.generators.iter().enumerate() {
        let s11 = -da.duals.cap[i];
        let s12 = da.duals.floor[i];
        // Both relations follow from stationarity in p, so they need p > 0.
        // When the capacity and floor rows bind together only their
        // difference is pinned down.
        let producing = da.sellers[i].u > 0.5 && da.sellers[i].p > 1e-9;
        let binds = |row: usize| {
            let r = &da.program.rows[row];
            (da.program.activity(row, &da.raw.x) - r.rhs).abs() < 1e-7
        };
        let both = binds(da.layout.row_cap[i]) && binds(da.layout.row_floor[i]);
        let joint = (s12 - s11 - (g.cost - lambda)).abs();
        cap_dual.push(producing.then(|| if both { joint } else { (s11 - (lambda - g.cost).max(0.0)).abs() }));
        floor_dual.push(producing.then(|| if both { joint } else { (s12 - (g.cost - lambda).max(0.0)).abs() }));
        let mut up_sum = 0.0;
        let mut dn_sum = 0.0;
        for rt in rts {
            let at_up = rt.up[i] > 0.0 && (rt.up[i] - g.ramp).abs() < 1e-7;
            let at_dn = rt.down[i] > 0.0 && (rt.down[i] - g.ramp).abs() < 1e-7;
            if at_up {
                up_sum += probs[rt.scenario] * (rt.price - g.strike_up).max(0.0);
            }
            if at_dn {
                dn_sum += probs[rt.scenario] * (g.strike_down - rt.price).max(0.0);
            }
        }
        ramp_up_dual.push((-da.duals.ramp_up[i] - (up_sum - s11).max(0.0)).abs());
        ramp_down_dual.push((-da.duals.ramp_down[i] - (dn_sum - s12).max(0.0)).abs());
    }

    ConvergenceReport {
        da_price: lambda,
        expected_rt_price: expected,
        price_gap: (lambda - expected).abs(),
        tier_up,
        tier_down,
        mapping_infeasibility,
        mapping_objective_gap,
        buyer_identity,
        cap_dual,
        floor_dual,
        ramp_up_dual,
        ramp_down_dual,
    }
}

/// Per-scenario gross margin terms of one participant.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryTerms {
    pub participant: String,
    pub scenario: usize,
    /// DA energy margin.
    pub da_energy: f64,
    /// DA option premium (credit for sellers, charge for buyers).
    pub da_option: f64,
    /// RT energy margin and option payoff for upward moves.
    pub rt_up_energy: f64,
    pub rt_up_option: f64,
    pub rt_down_energy: f64,
    pub rt_down_option: f64,
}

impl RecoveryTerms {
    pub fn total(&self) -> f64 {
        self.da_energy + self.da_option + self.rt_up_energy + self.rt_up_option + self.rt_down_energy + self.rt_down_option
    }

    /// Smallest of the four grouped terms: DA energy, DA option, net up, net down.
    pub fn min_term(&self) -> f64 {
        self.da_energy
            .min(self.da_option)
            .min(self.rt_up_energy + self.rt_up_option)
            .min(self.rt_down_energy + self.rt_down_option)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostRecoveryReport {
    pub sellers: Vec<RecoveryTerms>,
    pub buyers: Vec<RecoveryTerms>,
    pub probabilities: Vec<f64>,
}

impl CostRecoveryReport {
    /// DA premium plus probability-weighted RT payoffs of a participant.
    pub fn option_balance(&self, participant: &str) -> f64 {
        let rows: Vec<&RecoveryTerms> =
            self.sellers.iter().chain(&self.buyers).filter(|t| t.participant == participant).collect();
        let da = rows.first().map_or(0.0, |t| t.da_option);
        da + rows.iter().map(|t| self.probabilities[t.scenario] * (t.rt_up_option + t.rt_down_option)).sum::<f64>()
    }

    /// Worst grouped seller term over sellers with positive DA output.
    pub fn worst_seller_term(&self, system: &System, da: &DaFoSolution) -> f64 {
        self.sellers
            .iter()
            .filter(|t| {
                let i = system.generators.iter().position(|g| g.id == t.participant).unwrap();
                da.sellers[i].p > 1e-9
            })
            .map(RecoveryTerms::min_term)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Decomposes seller and buyer margins into DA energy, DA option premium and
/// RT energy/payoff terms in each direction.
pub fn cost_recovery_report(
    system: &System,
    da: &DaFoSolution,
    rts: &[RtSolution],
    exercises: &[ExerciseReport],
    ledger: &Ledger,
) -> CostRecoveryReport {
    let lambda = da.duals.energy;
    let mut sellers = Vec::new();
    for (i, g) in system.generators.iter().enumerate() {
        let award = &da.sellers[i];
        let premium = ledger.amount(&g.id, Stage::Da, None, Component::Fo);
        for (rt, ex) in rts.iter().zip(exercises) {
            let price = rt.price;
            let up_pay: f64 =
                ex.up.iter().enumerate().map(|(r, t)| t.alpha * (price - g.strike_up).max(0.0) * award.hs_up[r]).sum();
            let dn_pay: f64 = ex
                .down
                .iter()
                .enumerate()
                .map(|(r, t)| t.alpha * (g.strike_down - price).max(0.0) * award.hs_down[r])
                .sum();
            sellers.push(RecoveryTerms {
                participant: g.id.clone(),
                scenario: rt.scenario,
                da_energy: (lambda - g.cost) * award.p,
                da_option: premium,
                rt_up_energy: (price - g.strike_up) * rt.up[i],
                rt_up_option: -up_pay,
                rt_down_energy: -(price - g.strike_down) * rt.down[i],
                rt_down_option: -dn_pay,
            });
        }
    }
    let mut buyers = Vec::new();
    for (bi, b) in system.buyers.iter().enumerate() {
        let award = &da.buyers[bi];
        let premium = ledger.amount(&b.id, Stage::Da, None, Component::Fo);
        for (rt, ex) in rts.iter().zip(exercises) {
            let price = rt.price;
            let up_credit: f64 = ex.up.iter().map(|t| (price - t.vc).max(0.0) * t.hd_bar[bi]).sum();
            let dn_credit: f64 = ex.down.iter().map(|t| (t.vc - price).max(0.0) * t.hd_bar[bi]).sum();
            buyers.push(RecoveryTerms {
                participant: b.id.clone(),
                scenario: rt.scenario,
                da_energy: (lambda - b.cost) * award.p,
                da_option: premium,
                rt_up_energy: -(price - b.cost) * rt.buyer_down[bi],
                rt_up_option: up_credit,
                rt_down_energy: (price - b.cost) * rt.buyer_up[bi],
                rt_down_option: dn_credit,
            });
        }
    }
    CostRecoveryReport { sellers, buyers, probabilities: system.scenarios.probabilities.clone() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AltOptimaRow {
    pub m: f64,
    pub core_objective: f64,
    pub objective: f64,
    /// `(id, hs_up, hs_down)` per seller.
    pub baskets: Vec<(String, Vec<f64>, Vec<f64>)>,
    /// RT output per seller and scenario.
    pub rt_schedules: Vec<Vec<f64>>,
    pub da_schedule: Vec<f64>,
    pub fo_volume: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AltOptimaStudy {
    pub seller_ids: Vec<String>,
    pub rows: Vec<AltOptimaRow>,
}

impl AltOptimaStudy {
    pub fn core_objective_spread(&self) -> f64 {
        let v: Vec<f64> = self.rows.iter().map(|r| r.core_objective).collect();
        spread(&v)
    }

    /// Largest difference between rows in any seller's RT output.
    pub fn schedule_spread(&self) -> f64 {
        let mut worst = 0.0f64;
        for a in &self.rows {
            for b in &self.rows {
                for (x, y) in a.rt_schedules.iter().flatten().zip(b.rt_schedules.iter().flatten()) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
        worst
    }
}

fn spread(v: &[f64]) -> f64 {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if v.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Re-solves the DA-FO market for each alternative-optima weight `m`.
pub fn alt_optima_study(system: &System, ms: &[f64]) -> Result<AltOptimaStudy, MarketError> {
    let mut rows = Vec::with_capacity(ms.len());
    for &m in ms {
        let mut sys = system.clone();
        sys.config.m = m;
        let da = solve_da_fo(&sys)?;
        let rts = rt::solve_rt_fo(&sys, &da)?;
        let sched = DaSchedule::from(&da);
        let per_scenario: Vec<Vec<f64>> = rts.iter().map(|r| r.seller_schedule(&sched)).collect();
        let rt_schedules = (0..sys.generators.len()).map(|i| per_scenario.iter().map(|s| s[i]).collect()).collect();
        rows.push(AltOptimaRow {
            m,
            core_objective: da.core_objective,
            objective: da.objective,
            baskets: da.sellers.iter().map(|s| (s.id.clone(), s.hs_up.clone(), s.hs_down.clone())).collect(),
            rt_schedules,
            da_schedule: sched.seller_p.clone(),
            fo_volume: da.sellers.iter().map(|s| s.hs_up.iter().chain(&s.hs_down).sum::<f64>()).sum(),
        });
    }
    Ok(AltOptimaStudy { seller_ids: system.generators.iter().map(|g| g.id.clone()).collect(), rows })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomDrawSpec {
    pub seed: u64,
    pub draws: usize,
}

/// Seller parameters of one draw.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawParams {
    pub ramp: Vec<f64>,
    pub strike_up: Vec<f64>,
    pub strike_down: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrawOutcome {
    pub id: usize,
    pub params: DrawParams,
    pub price_gap: f64,
    pub tier_residual: f64,
    pub mapping_residual: f64,
    pub kkt: f64,
    pub error: Option<String>,
}

impl DrawOutcome {
    pub fn converged(&self, tol: f64) -> bool {
        self.error.is_none() && self.price_gap <= tol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub draws: usize,
    pub converged: usize,
    pub kkt_ok: usize,
    pub failures: usize,
    pub max_gap: f64,
    pub mean_gap: f64,
    pub max_kkt: f64,
    pub outcomes: Vec<DrawOutcome>,
}

impl SweepSummary {
    pub fn converged_fraction(&self) -> f64 {
        if self.draws == 0 {
            0.0
        } else {
            self.converged as f64 / self.draws as f64
        }
    }

    pub fn kkt_fraction(&self) -> f64 {
        if self.draws == 0 {
            0.0
        } else {
            self.kkt_ok as f64 / self.draws as f64
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("draw,price_gap,tier_residual,mapping_residual,kkt,converged,kkt_ok,error\n");
        for o in &self.outcomes {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                o.id,
                o.price_gap,
                o.tier_residual,
                o.mapping_residual,
                o.kkt,
                o.converged(PRICE_TOL),
                o.kkt <= opt::KKT_TOL,
                o.error.as_deref().unwrap_or("")
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        format!(
            "draws {}\nconverged {} ({:.2}%)\nkkt_ok {} ({:.2}%)\nfailures {}\nmax_gap {:.6}\nmean_gap {:.6}\nmax_kkt {:.3e}\n",
            self.draws,
            self.converged,
            100.0 * self.converged_fraction(),
            self.kkt_ok,
            100.0 * self.kkt_fraction(),
            self.failures,
            self.max_gap,
            self.mean_gap,
            self.max_kkt
        )
    }
}

/// Draws seller parameters: ramp on `[0, capacity]`, strike-up on
/// `[cost, 2 cost]`, strike-down on `[0, cost]`.
pub fn draw_params(system: &System, spec: RandomDrawSpec) -> Vec<DrawParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.draws)
        .map(|_| {
            let mut p = DrawParams { ramp: Vec::new(), strike_up: Vec::new(), strike_down: Vec::new() };
            for g in &system.generators {
                p.ramp.push(rng.gen_range(0.0..=g.capacity));
                p.strike_up.push(rng.gen_range(g.cost..=2.0 * g.cost));
                p.strike_down.push(rng.gen_range(0.0..=g.cost));
            }
            p
        })
        .collect()
}

pub fn apply_draw(system: &System, params: &DrawParams) -> System {
    let mut out = system.clone();
    for (i, g) in out.generators.iter_mut().enumerate() {
        g.ramp = params.ramp[i];
        g.strike_up = params.strike_up[i];
        g.strike_down = params.strike_down[i];
    }
    out
}

/// Largest KKT residual over the DA solve (with commitments fixed) and every RT solve.
pub fn run_kkt(da: &DaFoSolution, rts: &[RtSolution]) -> f64 {
    let mut restricted = da.program.clone();
    for &u in &da.layout.seller_u {
        restricted.fix(u, da.raw.x[u].round());
    }
    let mut worst = opt::kkt_residual(&restricted, &da.raw);
    for rt in rts {
        worst = worst.max(opt::kkt_residual(&rt.program, &rt.raw));
    }
    worst
}

pub fn evaluate_draw(system: &System, id: usize, params: DrawParams) -> DrawOutcome {
    let sys = apply_draw(system, &params);
    let result = solve_da_fo(&sys).and_then(|da| {
        let rts = rt::solve_rt_fo(&sys, &da)?;
        Ok((da, rts))
    });
    match result {
        Ok((da, rts)) => {
            let report = check_convergence(&sys, &da, &rts);
            let mapping = report
                .mapping_infeasibility
                .iter()
                .chain(report.mapping_objective_gap.iter())
                .fold(0.0f64, |a, b| a.max(b.abs()));
            DrawOutcome {
                id,
                params,
                price_gap: report.price_gap,
                tier_residual: report.max_tier_residual(),
                mapping_residual: mapping,
                kkt: run_kkt(&da, &rts),
                error: None,
            }
        }
        Err(e) => DrawOutcome {
            id,
            params,
            price_gap: f64::NAN,
            tier_residual: f64::NAN,
            mapping_residual: f64::NAN,
            kkt: f64::NAN,
            error: Some(e.to_string()),
        },
    }
}

/// Runs the seeded sweep. Draws are generated sequentially and evaluated in
/// parallel; results are reduced in draw order.
pub fn randomized_convergence_harness(system: &System, spec: RandomDrawSpec) -> SweepSummary {
    let params = draw_params(system, spec);
    let outcomes: Vec<DrawOutcome> =
        params.into_par_iter().enumerate().map(|(id, p)| evaluate_draw(system, id, p)).collect();
    let ok: Vec<&DrawOutcome> = outcomes.iter().filter(|o| o.error.is_none()).collect();
    let max_gap = ok.iter().map(|o| o.price_gap).fold(0.0, f64::max);
    let mean_gap = if ok.is_empty() { 0.0 } else { ok.iter().map(|o| o.price_gap).sum::<f64>() / ok.len() as f64 };
    SweepSummary {
        draws: outcomes.len(),
        converged: outcomes.iter().filter(|o| o.converged(PRICE_TOL)).count(),
        kkt_ok: ok.iter().filter(|o| o.kkt <= opt::KKT_TOL).count(),
        failures: outcomes.len() - ok.len(),
        max_gap,
        mean_gap,
        max_kkt: ok.iter().map(|o| o.kkt).fold(0.0, f64::max),
        outcomes,
    }
}

/// Probability-weighted tier prices `(up, down)` implied by RT prices.
pub fn implied_tier_prices(probabilities: &[f64], prices: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = probabilities.len();
    let up = (0..n.saturating_sub(1)).map(|r| (0..=r).map(|s| probabilities[s] * prices[s]).sum()).collect();
    let down = (0..n.saturating_sub(1)).map(|r| -(r + 1..n).map(|s| probabilities[s] * prices[s]).sum::<f64>()).collect();
    (up, down)
}
