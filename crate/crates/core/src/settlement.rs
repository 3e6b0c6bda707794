//! Cash flows of both designs: FO premiums and payoffs, IR credits and
//! charges, energy settlements, gross margins and the ISO position.

use crate::da_fo::DaFoSolution;
use crate::da_ir::DaIrSolution;
use crate::model::System;
use crate::rt::{DaSchedule, RtSolution};
use std::fmt::Write as _;

pub const LOAD: &str = "LOAD";
pub const VIRTUAL: &str = "VIRTUAL";
pub const ISO: &str = "ISO";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Da,
    Rt,
}

impl Stage {
    pub fn label(self) -> &'static str {
        match self {
            Stage::Da => "DA",
            Stage::Rt => "RT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Component {
    Energy,
    Fo,
    Ir,
    /// Variable cost of actual production; not a cash flow.
    Cost,
}

impl Component {
    pub fn label(self) -> &'static str {
        match self {
            Component::Energy => "energy",
            Component::Fo => "fo",
            Component::Ir => "ir",
            Component::Cost => "variable_cost",
        }
    }

    pub fn is_cash(self) -> bool {
        self != Component::Cost
    }
}

/// Positive amounts are received by the participant.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerEntry {
    pub participant: String,
    pub stage: Stage,
    /// `None` for DA entries, which apply to every scenario.
    pub scenario: Option<usize>,
    pub component: Component,
    pub amount: f64,
}

fn entry(participant: &str, stage: Stage, scenario: Option<usize>, component: Component, amount: f64) -> LedgerEntry {
    LedgerEntry { participant: participant.to_string(), stage, scenario, component, amount }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ledger {
    pub participants: Vec<String>,
    pub probabilities: Vec<f64>,
    pub entries: Vec<LedgerEntry>,
}

impl Ledger {
    fn new(system: &System, with_virtual: bool) -> Self {
        let mut participants: Vec<String> = system.generators.iter().map(|g| g.id.clone()).collect();
        participants.extend(system.buyers.iter().map(|b| b.id.clone()));
        participants.push(LOAD.to_string());
        if with_virtual {
            participants.push(VIRTUAL.to_string());
        }
        participants.push(ISO.to_string());
        Ledger { participants, probabilities: system.scenarios.probabilities.clone(), entries: Vec::new() }
    }

    pub fn scenario_count(&self) -> usize {
        self.probabilities.len()
    }

    /// Sum of matching entries. `scenario = None` selects DA entries only.
    pub fn amount(&self, participant: &str, stage: Stage, scenario: Option<usize>, component: Component) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.participant == participant && e.stage == stage && e.scenario == scenario && e.component == component)
            .map(|e| e.amount)
            .sum()
    }

    /// DA amount plus probability-weighted RT amount of one component.
    pub fn expected(&self, participant: &str, component: Component) -> f64 {
        let da = self.amount(participant, Stage::Da, None, component);
        da + self
            .probabilities
            .iter()
            .enumerate()
            .map(|(s, p)| p * self.amount(participant, Stage::Rt, Some(s), component))
            .sum::<f64>()
    }

    /// Gross margin of a participant in one scenario: every DA entry plus the
    /// scenario's RT entries, costs included.
    pub fn margin(&self, participant: &str, scenario: usize) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.participant == participant && e.scenario.map_or(true, |s| s == scenario))
            .map(|e| e.amount)
            .sum()
    }

    pub fn weighted_margin(&self, participant: &str) -> f64 {
        self.probabilities.iter().enumerate().map(|(s, p)| p * self.margin(participant, s)).sum()
    }

    /// Sum of all cash flows at one stage and scenario; zero by construction.
    pub fn cash_imbalance(&self, stage: Stage, scenario: Option<usize>) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.stage == stage && e.scenario == scenario && e.component.is_cash())
            .map(|e| e.amount)
            .sum()
    }

    fn close_iso(&mut self) {
        let mut keys: Vec<(Stage, Option<usize>, Component)> = Vec::new();
        for e in &self.entries {
            let k = (e.stage, e.scenario, e.component);
            if e.component.is_cash() && !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.sort();
        for (stage, scenario, component) in keys {
            let total: f64 = self
                .entries
                .iter()
                .filter(|e| e.stage == stage && e.scenario == scenario && e.component == component)
                .map(|e| e.amount)
                .sum();
            self.entries.push(entry(ISO, stage, scenario, component, -total));
        }
    }

    /// CSV with columns participant, stage, scenario, component, amount.
    /// Scenarios are 1-based; DA rows leave the scenario empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("participant,stage,scenario,component,amount\n");
        for e in &self.entries {
            let sc = e.scenario.map(|s| (s + 1).to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{}", e.participant, e.stage.label(), sc, e.component.label(), e.amount);
        }
        out
    }
}

/// Quantity and price trigger states `(up, down)` of one option pair.
pub fn check_triggers(p_rt: f64, q_up: f64, q_down: f64, price: f64, vc_up: f64, vc_down: f64) -> (bool, bool) {
    (p_rt < q_up && price > vc_up, p_rt > q_down && price < vc_down)
}

/// DA FO premiums: seller credits at tier price net of the expected strike
/// payment, and buyer charges at the quantity-weighted average per tier.
pub fn settle_da_fo(system: &System, da: &DaFoSolution) -> Vec<LedgerEntry> {
    let nr = da.layout.tiers;
    let (pu, pd) = crate::model::tier_probabilities(&da.probabilities);
    let mut out = Vec::new();
    let mut tier_up = vec![0.0; nr];
    let mut tier_down = vec![0.0; nr];
    for (g, s) in system.generators.iter().zip(&da.sellers) {
        let mut credit = 0.0;
        for r in 0..nr {
            let up = (da.duals.up[r] - pu[r] * g.strike_up) * s.hs_up[r];
            let dn = (da.duals.down[r] + pd[r] * g.strike_down) * s.hs_down[r];
            tier_up[r] += up;
            tier_down[r] += dn;
            credit += up + dn;
        }
        out.push(entry(&g.id, Stage::Da, None, Component::Fo, credit));
    }
    for (bi, b) in da.buyers.iter().enumerate() {
        let mut charge = 0.0;
        for r in 0..nr {
            let hu: f64 = da.buyers.iter().map(|x| x.hd_up[r]).sum();
            let hd: f64 = da.buyers.iter().map(|x| x.hd_down[r]).sum();
            if hu > 0.0 {
                charge += tier_up[r] * b.hd_up[r] / hu;
            }
            if hd > 0.0 {
                charge += tier_down[r] * b.hd_down[r] / hd;
            }
        }
        out.push(entry(&system.buyers[bi].id, Stage::Da, None, Component::Fo, -charge));
    }
    out
}

/// Exercise state of one tier and direction.
#[derive(Debug, Clone, PartialEq)]
pub struct TierExercise {
    /// Exercisable volume per buyer.
    pub hd_bar: Vec<f64>,
    pub purchased: f64,
    pub alpha: f64,
    /// FO supply from sellers whose strike is in the money.
    pub hs_bar: f64,
    /// System-wide strike price.
    pub vc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExerciseReport {
    pub scenario: usize,
    pub price: f64,
    pub up: Vec<TierExercise>,
    pub down: Vec<TierExercise>,
}

impl ExerciseReport {
    pub fn exercised_up(&self) -> f64 {
        self.up.iter().map(|t| t.hd_bar.iter().sum::<f64>()).sum()
    }

    pub fn exercised_down(&self) -> f64 {
        self.down.iter().map(|t| t.hd_bar.iter().sum::<f64>()).sum()
    }
}

fn tier_exercise(hd_bar: Vec<f64>, purchased: f64, sellers: &[(f64, f64)], price: f64, up: bool) -> TierExercise {
    let demand: f64 = hd_bar.iter().sum();
    let alpha = if purchased > 0.0 { demand / purchased } else { 0.0 };
    let itm = |c: f64| if up { c < price } else { c > price };
    let hs_bar: f64 = sellers.iter().filter(|(c, _)| itm(*c)).map(|(_, h)| h).sum();
    let vc = if demand > 0.0 {
        let strikes: f64 = sellers.iter().filter(|(c, _)| itm(*c)).map(|(c, h)| c * h * alpha).sum();
        (strikes + (demand - alpha * hs_bar).max(0.0) * price) / demand
    } else {
        0.0
    };
    TierExercise { hd_bar, purchased, alpha, hs_bar, vc }
}

/// Exercisable volumes, activation fractions and system strike prices for one scenario.
pub fn compute_exercise(system: &System, da: &DaFoSolution, scenario: usize, price: f64) -> ExerciseReport {
    let nr = da.layout.tiers;
    let mut up = Vec::with_capacity(nr);
    let mut down = Vec::with_capacity(nr);
    for r in 0..nr {
        let hd_up: Vec<f64> = system
            .buyers
            .iter()
            .zip(&da.buyers)
            .map(|(b, x)| x.hd_up[r].min((b.triggers[r + 1] - b.triggers[scenario]).max(0.0)))
            .collect();
        let hd_dn: Vec<f64> = system
            .buyers
            .iter()
            .zip(&da.buyers)
            .map(|(b, x)| x.hd_down[r].min((b.triggers[scenario] - b.triggers[r]).max(0.0)))
            .collect();
        let sup: Vec<(f64, f64)> = system.generators.iter().zip(&da.sellers).map(|(g, s)| (g.strike_up, s.hs_up[r])).collect();
        let sdn: Vec<(f64, f64)> =
            system.generators.iter().zip(&da.sellers).map(|(g, s)| (g.strike_down, s.hs_down[r])).collect();
        let pu: f64 = da.buyers.iter().map(|x| x.hd_up[r]).sum();
        let pdn: f64 = da.buyers.iter().map(|x| x.hd_down[r]).sum();
        up.push(tier_exercise(hd_up, pu, &sup, price, true));
        down.push(tier_exercise(hd_dn, pdn, &sdn, price, false));
    }
    ExerciseReport { scenario, price, up, down }
}

/// RT FO payoffs: sellers remit their strike spread on the activated share,
/// buyers receive the spread over the system strike price.
pub fn settle_rt_fo(system: &System, da: &DaFoSolution, ex: &ExerciseReport) -> Vec<LedgerEntry> {
    let s = Some(ex.scenario);
    let price = ex.price;
    let mut out = Vec::new();
    for (g, x) in system.generators.iter().zip(&da.sellers) {
        let mut charge = 0.0;
        for (r, t) in ex.up.iter().enumerate() {
            charge += (price - g.strike_up).max(0.0) * t.alpha * x.hs_up[r];
        }
        for (r, t) in ex.down.iter().enumerate() {
            charge += (g.strike_down - price).max(0.0) * t.alpha * x.hs_down[r];
        }
        out.push(entry(&g.id, Stage::Rt, s, Component::Fo, -charge));
    }
    for (bi, b) in system.buyers.iter().enumerate() {
        let mut credit = 0.0;
        for t in &ex.up {
            credit += (price - t.vc).max(0.0) * t.hd_bar[bi];
        }
        for t in &ex.down {
            credit += (t.vc - price).max(0.0) * t.hd_bar[bi];
        }
        out.push(entry(&b.id, Stage::Rt, s, Component::Fo, credit));
    }
    out
}

/// Energy settlements and variable costs around a DA schedule.
fn energy_entries(system: &System, da: &DaSchedule, da_price: f64, rts: &[RtSolution]) -> Vec<LedgerEntry> {
    let cfg = &system.config;
    let mut out = Vec::new();
    for (i, g) in system.generators.iter().enumerate() {
        out.push(entry(&g.id, Stage::Da, None, Component::Energy, da_price * da.seller_p[i]));
    }
    for (i, b) in system.buyers.iter().enumerate() {
        out.push(entry(&b.id, Stage::Da, None, Component::Energy, da_price * da.buyer_p[i]));
    }
    out.push(entry(LOAD, Stage::Da, None, Component::Energy, -da_price * (cfg.demand - da.d_da)));
    if da.virtual_supply != 0.0 {
        out.push(entry(VIRTUAL, Stage::Da, None, Component::Energy, da_price * da.virtual_supply));
    }
    for rt in rts {
        let s = Some(rt.scenario);
        let price = rt.price;
        for (i, g) in system.generators.iter().enumerate() {
            let dev = rt.up[i] - rt.down[i];
            out.push(entry(&g.id, Stage::Rt, s, Component::Energy, price * dev));
            out.push(entry(&g.id, Stage::Rt, s, Component::Cost, -g.cost * (da.seller_p[i] + dev)));
        }
        for (i, b) in system.buyers.iter().enumerate() {
            let dev = rt.buyer_up[i] - rt.buyer_down[i];
            out.push(entry(&b.id, Stage::Rt, s, Component::Energy, price * dev));
            let cost = b.cost * (da.buyer_p[i] + dev)
                + (b.vc_up - b.cost) * rt.shortfall[i]
                + (b.cost - b.vc_down) * rt.spill[i];
            out.push(entry(&b.id, Stage::Rt, s, Component::Cost, -cost));
        }
        out.push(entry(LOAD, Stage::Rt, s, Component::Energy, price * rt.unserved));
        if da.virtual_supply != 0.0 {
            out.push(entry(VIRTUAL, Stage::Rt, s, Component::Energy, -price * da.virtual_supply));
        }
    }
    out
}

/// Complete FO ledger: energy, premiums, payoffs, costs and ISO closing rows.
pub fn settle_fo_run(system: &System, da: &DaFoSolution, rts: &[RtSolution]) -> (Ledger, Vec<ExerciseReport>) {
    let mut ledger = Ledger::new(system, false);
    let sched = DaSchedule::from(da);
    ledger.entries.extend(energy_entries(system, &sched, da.duals.energy, rts));
    ledger.entries.extend(settle_da_fo(system, da));
    let mut reports = Vec::with_capacity(rts.len());
    for rt in rts {
        let ex = compute_exercise(system, da, rt.scenario, rt.price);
        ledger.entries.extend(settle_rt_fo(system, da, &ex));
        reports.push(ex);
    }
    ledger.close_iso();
    (ledger, reports)
}

/// IR reserve flows: DA credits at the reserve prices, RT charges to buyers
/// for realized imbalance capped at the requirement.
pub fn settle_ir(system: &System, ir: &DaIrSolution) -> Vec<LedgerEntry> {
    let mut out = Vec::new();
    let (mu_up, mu_dn) = (ir.reserve_up_price, ir.reserve_down_price);
    for s in &ir.sellers {
        out.push(entry(&s.id, Stage::Da, None, Component::Ir, mu_up * s.res_up + mu_dn * s.res_down));
    }
    for (bi, b) in system.buyers.iter().enumerate() {
        let x = &ir.buyers[bi];
        out.push(entry(&b.id, Stage::Da, None, Component::Ir, mu_up * x.res_up + mu_dn * x.res_down));
        for s in 0..system.scenario_count() {
            let short = (x.p - b.triggers[s]).max(0.0).min(ir.resreq_up);
            let surplus = (b.triggers[s] - x.p).max(0.0).min(ir.resreq_down);
            out.push(entry(&b.id, Stage::Rt, Some(s), Component::Ir, -(mu_up * short + mu_dn * surplus)));
        }
    }
    out
}

/// Complete IR ledger.
pub fn settle_ir_run(system: &System, ir: &DaIrSolution) -> Ledger {
    let mut ledger = Ledger::new(system, ir.virtual_supply != 0.0);
    ledger.entries.extend(energy_entries(system, &ir.schedule(), ir.energy_price, &ir.rt));
    ledger.entries.extend(settle_ir(system, ir));
    ledger.close_iso();
    ledger
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginTable {
    pub participants: Vec<String>,
    /// `[participant][scenario]`.
    pub per_scenario: Vec<Vec<f64>>,
    pub weighted: Vec<f64>,
}

impl MarginTable {
    pub fn row(&self, participant: &str) -> Option<usize> {
        self.participants.iter().position(|p| p == participant)
    }

    pub fn positive_count(&self, participant: &str) -> usize {
        self.row(participant).map_or(0, |i| self.per_scenario[i].iter().filter(|&&m| m > 1e-6).count())
    }
}

pub fn gross_margins(ledger: &Ledger) -> MarginTable {
    let per_scenario: Vec<Vec<f64>> = ledger
        .participants
        .iter()
        .map(|p| (0..ledger.scenario_count()).map(|s| ledger.margin(p, s)).collect())
        .collect();
    let weighted = ledger.participants.iter().map(|p| ledger.weighted_margin(p)).collect();
    MarginTable { participants: ledger.participants.clone(), per_scenario, weighted }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::da_fo::solve_da_fo;
    use crate::io::reference_system;
    use crate::rt::solve_rt_fo;

    fn fo_run(n: usize) -> (System, DaFoSolution, Vec<RtSolution>, Ledger) {
        let s = reference_system().with_fleet(&format!("fleet{n}")).unwrap();
        let da = solve_da_fo(&s).unwrap();
        let rts = solve_rt_fo(&s, &da).unwrap();
        let (ledger, _) = settle_fo_run(&s, &da, &rts);
        (s, da, rts, ledger)
    }

    #[test]
    fn triggers() {
        assert_eq!(check_triggers(131.0, 155.0, 0.0, 50.0, 20.0, 0.0).0, true);
        assert_eq!(check_triggers(155.0, 155.0, 0.0, 50.0, 20.0, 0.0).0, false);
        assert_eq!(check_triggers(172.0, 200.0, 165.0, 20.0, 0.0, 50.0).1, true);
    }

    #[test]
    fn fleet6_da_premiums() {
        let (_, _, _, l) = fo_run(6);
        let da = |p| l.amount(p, Stage::Da, None, Component::Fo);
        assert!((da("ST1") - 596.0).abs() < 2.0, "{}", da("ST1"));
        assert!((da("CT2") - 39.0).abs() < 2.0);
        assert!((da("CT3") - 48.0).abs() < 2.0);
        assert!((da("RE") + 683.0).abs() < 2.0);
        assert!(da(ISO).abs() < 1e-9);
    }

    #[test]
    fn fleet6_rt_payoffs() {
        let (_, _, _, l) = fo_run(6);
        let rt = |p, s| 0.2 * l.amount(p, Stage::Rt, Some(s), Component::Fo);
        assert!((rt("ST1", 0) + 596.0).abs() < 2.0);
        for (s, want) in [647.0, 9.0, 9.0, 9.0, 9.0].iter().enumerate() {
            assert!((rt("RE", s) - want).abs() < 2.0, "sc{} {}", s + 1, rt("RE", s));
            assert!(rt(ISO, s).abs() < 1e-6);
        }
    }

    #[test]
    fn fleet1_margins() {
        let (_, _, _, l) = fo_run(1);
        let m = gross_margins(&l);
        for (p, want) in [("ST1", 450.0), ("CT2", 30.0), ("CT3", 0.0), ("RE", 4265.0), (LOAD, -5800.0), (ISO, 0.0)] {
            let got = m.weighted[m.row(p).unwrap()];
            assert!((got - want).abs() < 2.0, "{p} {got}");
        }
    }

    #[test]
    fn exercise_full_in_lowest_scenario() {
        let (s, da, rts, _) = fo_run(6);
        let ex = compute_exercise(&s, &da, 0, rts[0].price);
        for t in &ex.up {
            if t.purchased > 0.0 {
                assert!((t.alpha - 1.0).abs() < 1e-12);
            }
        }
        let dev = da.buyers[0].p - s.buyers[0].triggers[0];
        assert!((ex.exercised_up() + da.buyers[0].sd_up.iter().sum::<f64>() - dev).abs() < 0.2);
    }

    #[test]
    fn exercise_capped_by_headroom() {
        let t = tier_exercise(vec![10.0f64.min(4.0)], 10.0, &[(20.0, 10.0)], 50.0, true);
        assert_eq!(t.hd_bar[0], 4.0);
        assert!((t.alpha - 0.4).abs() < 1e-12);
        assert!((t.vc - 20.0).abs() < 1e-12);
    }

    #[test]
    fn zero_spread_no_charge() {
        let t = tier_exercise(vec![5.0], 5.0, &[(20.0, 5.0)], 20.0, true);
        assert!((t.vc - 20.0).abs() < 1e-12);
        assert_eq!(t.hs_bar, 0.0);
    }

    #[test]
    fn csv_shape() {
        let (_, _, _, l) = fo_run(1);
        let csv = l.to_csv();
        assert!(csv.starts_with("participant,stage,scenario,component,amount\n"));
        assert!(csv.lines().skip(1).all(|line| line.split(',').count() == 5));
    }
}
