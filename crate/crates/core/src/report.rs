//! Run orchestration and report emission: aligned text tables, raw CSV and a
//! key-value run record.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::da_fo::{solve_da_fo, DaFoSolution, MarketError};
use crate::da_ir::{solve_da_ir_with_virtual_equilibrium, DaIrSolution};
use crate::io::{apply_override, reference_system, parse_system, ParseError};
use crate::model::{validate_system, ModelError, System};
use crate::rt::{self, DaSchedule, RtSolution};
use crate::settlement::{
    gross_margins, settle_fo_run, settle_ir_run, Component, ExerciseReport, Ledger, MarginTable, Stage, ISO,
};
use crate::verify::{
    alt_optima_study, check_convergence, cost_recovery_report, AltOptimaStudy, ConvergenceReport, CostRecoveryReport,
    PRICE_TOL,
};

/// Tolerance for revenue neutrality and cost recovery.
pub const CASH_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: ParseError },
    #[error(transparent)]
    Override(ParseError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{fleet}, {design}: {source}")]
    Market { fleet: String, design: &'static str, source: MarketError },
    #[error("unknown design {0:?} (expected fo, ir or both)")]
    Design(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Design {
    Fo,
    Ir,
    Both,
}

impl Design {
    pub fn has_fo(self) -> bool {
        matches!(self, Design::Fo | Design::Both)
    }

    pub fn has_ir(self) -> bool {
        matches!(self, Design::Ir | Design::Both)
    }
}

impl FromStr for Design {
    type Err = RunError;
    fn from_str(s: &str) -> Result<Self, RunError> {
        match s.to_ascii_lowercase().as_str() {
            "fo" => Ok(Design::Fo),
            "ir" => Ok(Design::Ir),
            "both" => Ok(Design::Both),
            _ => Err(RunError::Design(s.to_string())),
        }
    }
}

/// What to run and where to write it.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    /// System file; the bundled system when `None`.
    pub system: Option<PathBuf>,
    pub design: Design,
    /// Fleet names; every fleet of the system when empty.
    pub fleets: Vec<String>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    /// `key=value` overrides applied after parsing.
    pub overrides: Vec<String>,
}

impl Default for RunManifest {
    fn default() -> Self {
        RunManifest { system: None, design: Design::Both, fleets: Vec::new(), out: None, seed: 1, overrides: Vec::new() }
    }
}

/// Loads the manifest's system and applies its overrides.
pub fn load_system(manifest: &RunManifest) -> Result<System, RunError> {
    let mut system = match &manifest.system {
        None => reference_system(),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| RunError::Io { path: path.clone(), source })?;
            parse_system(&text).map_err(|source| RunError::Parse { path: path.display().to_string(), source })?
        }
    };
    for o in &manifest.overrides {
        apply_override(&mut system, o).map_err(RunError::Override)?;
    }
    let problems = validate_system(&system);
    if !problems.is_empty() {
        return Err(RunError::Override(ParseError::Invalid(problems)));
    }
    for f in &manifest.fleets {
        system.with_fleet(f)?;
    }
    Ok(system)
}

/// Fleet names to run: the manifest's selection, all fleets, or `base` for a
/// system without fleets.
pub fn selected_fleets(system: &System, manifest: &RunManifest) -> Vec<String> {
    if !manifest.fleets.is_empty() {
        manifest.fleets.clone()
    } else if system.fleets.is_empty() {
        vec!["base".to_string()]
    } else {
        system.fleet_names()
    }
}

fn fleet_system(system: &System, name: &str) -> Result<System, ModelError> {
    if name == "base" && system.fleets.iter().all(|f| f.name != name) {
        Ok(system.clone())
    } else {
        system.with_fleet(name)
    }
}

#[derive(Debug, Clone)]
pub struct FoRun {
    pub da: DaFoSolution,
    pub rts: Vec<RtSolution>,
    pub ledger: Ledger,
    pub exercises: Vec<ExerciseReport>,
    pub margins: MarginTable,
    pub convergence: ConvergenceReport,
    pub recovery: CostRecoveryReport,
    pub system_cost: f64,
}

#[derive(Debug, Clone)]
pub struct IrRun {
    pub ir: DaIrSolution,
    pub ledger: Ledger,
    pub margins: MarginTable,
    pub system_cost: f64,
}

#[derive(Debug, Clone)]
pub struct FleetRun {
    pub fleet: String,
    pub system: System,
    pub fo: Option<FoRun>,
    pub ir: Option<IrRun>,
}

pub fn run_fo(system: &System) -> Result<FoRun, MarketError> {
    let da = solve_da_fo(system)?;
    let rts = rt::solve_rt_fo(system, &da)?;
    let (ledger, exercises) = settle_fo_run(system, &da, &rts);
    let margins = gross_margins(&ledger);
    let convergence = check_convergence(system, &da, &rts);
    let recovery = cost_recovery_report(system, &da, &rts, &exercises, &ledger);
    let system_cost = da.core_objective;
    Ok(FoRun { da, rts, ledger, exercises, margins, convergence, recovery, system_cost })
}

pub fn run_ir(system: &System) -> Result<IrRun, MarketError> {
    let ir = solve_da_ir_with_virtual_equilibrium(system)?;
    let ledger = settle_ir_run(system, &ir);
    let margins = gross_margins(&ledger);
    let system_cost = ir.system_cost(system);
    Ok(IrRun { ir, ledger, margins, system_cost })
}

pub fn run_fleet(system: &System, fleet: &str, design: Design) -> Result<FleetRun, RunError> {
    let sys = fleet_system(system, fleet)?;
    let ctx = |design: &'static str| move |source| RunError::Market { fleet: fleet.to_string(), design, source };
    let fo = if design.has_fo() { Some(run_fo(&sys).map_err(ctx("FO"))?) } else { None };
    let ir = if design.has_ir() { Some(run_ir(&sys).map_err(ctx("IR"))?) } else { None };
    Ok(FleetRun { fleet: fleet.to_string(), system: sys, fo, ir })
}

/// Runs the selected fleets in parallel, keeping fleet order.
pub fn run_fleets(system: &System, fleets: &[String], design: Design) -> Result<Vec<FleetRun>, RunError> {
    fleets.par_iter().map(|f| run_fleet(system, f, design)).collect()
}

/// Violations of hard invariants: FO revenue neutrality, FO cost recovery and
/// FO cost no higher than IR cost.
pub fn hard_failures(runs: &[FleetRun]) -> Vec<String> {
    let mut out = Vec::new();
    for run in runs {
        if let Some(fo) = &run.fo {
            let ns = fo.ledger.scenario_count();
            let mut worst = fo.ledger.cash_imbalance(Stage::Da, None).abs();
            for s in 0..ns {
                worst = worst.max(fo.ledger.cash_imbalance(Stage::Rt, Some(s)).abs());
                for stage in [Stage::Da, Stage::Rt] {
                    let sc = if stage == Stage::Da { None } else { Some(s) };
                    worst = worst.max(fo.ledger.amount(ISO, stage, sc, Component::Fo).abs());
                }
            }
            if worst > CASH_TOL {
                out.push(format!("{}: FO operator imbalance {worst:.3e}", run.fleet));
            }
            for (i, g) in run.system.generators.iter().enumerate() {
                if fo.da.sellers[i].p <= 1e-9 {
                    continue;
                }
                let row = fo.margins.row(&g.id).unwrap();
                let min = fo.margins.per_scenario[row].iter().cloned().fold(f64::INFINITY, f64::min);
                if min < -CASH_TOL {
                    out.push(format!("{}: {} gross margin {min:.6} below zero", run.fleet, g.id));
                }
            }
        }
        if let (Some(fo), Some(ir)) = (&run.fo, &run.ir) {
            if fo.system_cost > ir.system_cost + CASH_TOL {
                out.push(format!(
                    "{}: FO cost {:.4} exceeds IR cost {:.4}",
                    run.fleet, fo.system_cost, ir.system_cost
                ));
            }
        }
    }
    out
}

/// Formats a value at table precision: at most two decimals, trailing zeros
/// and negative zero removed.
pub fn fmt_num(x: f64) -> String {
    if !x.is_finite() {
        return "-".to_string();
    }
    let r = (x * 100.0).round() / 100.0;
    let s = format!("{:.2}", if r == 0.0 { 0.0 } else { r });
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

fn fmt_int(x: f64) -> String {
    let r = x.round();
    format!("{}", if r == 0.0 { 0.0 } else { r })
}

/// An aligned text table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub note: Option<String>,
}

impl Table {
    fn new(name: &str, title: &str, header: Vec<String>) -> Self {
        Table { name: name.to_string(), title: title.to_string(), header, rows: Vec::new(), note: None }
    }

    pub fn render(&self) -> String {
        let ncol = self.header.len();
        let mut width = vec![0usize; ncol];
        for row in std::iter::once(&self.header).chain(&self.rows) {
            for (w, c) in width.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = format!("{}\n\n", self.title);
        for row in std::iter::once(&self.header).chain(&self.rows) {
            let mut line = String::new();
            for (i, c) in row.iter().enumerate() {
                if i == 0 {
                    let _ = write!(line, "{:<w$}", c, w = width[i]);
                } else {
                    let _ = write!(line, "  {:>w$}", c, w = width[i]);
                }
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        if let Some(n) = &self.note {
            let _ = write!(out, "\n{n}\n");
        }
        out
    }
}

fn pair(ir: Option<String>, fo: Option<String>) -> String {
    match (ir, fo) {
        (Some(a), Some(b)) => format!("{a}/{b}"),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => "-".to_string(),
    }
}

fn design_note(design: Design) -> Option<String> {
    (design == Design::Both).then(|| "IR/FO results shown left and right of '/'.".to_string())
}

fn cell(run: &FleetRun, ir: impl Fn(&IrRun) -> String, fo: impl Fn(&FoRun) -> String) -> String {
    pair(run.ir.as_ref().map(ir), run.fo.as_ref().map(fo))
}

fn fleet_header(first: &str, runs: &[FleetRun]) -> Vec<String> {
    std::iter::once(first.to_string()).chain(runs.iter().map(|r| r.fleet.clone())).collect()
}

fn table_cost(runs: &[FleetRun], design: Design) -> Table {
    let gens: Vec<String> = runs.first().map(|r| r.system.generators.iter().map(|g| g.id.clone()).collect()).unwrap_or_default();
    let mut header = vec!["".to_string(), "System cost ($)".to_string()];
    header.extend(gens.iter().map(|g| format!("{g} (MW)")));
    let mut t = Table::new("system_cost", "PROBABILITY-WEIGHTED SYSTEM COST AND DA ENERGY SCHEDULES", header);
    for run in runs {
        let mut row = vec![run.fleet.clone(), cell(run, |i| fmt_int(i.system_cost), |f| fmt_int(f.system_cost))];
        for k in 0..gens.len() {
            row.push(cell(run, |i| fmt_num(i.ir.sellers[k].p), |f| fmt_num(f.da.sellers[k].p)));
        }
        t.rows.push(row);
    }
    t.note = design_note(design);
    t
}

/// Cumulative FO demand and net-load forecast error at each cumulative
/// probability: upward volumes exercised in the k-th lowest scenario,
/// downward volumes in the k-th highest.
pub fn cumulative_fo_demand(system: &System, da: &DaFoSolution) -> Vec<(f64, [f64; 2], [f64; 2])> {
    let probs = &system.scenarios.probabilities;
    let ns = probs.len();
    let nr = da.layout.tiers;
    let mut out = Vec::new();
    let mut cum = 0.0;
    for k in 0..nr {
        cum += probs[k];
        let s_up = k;
        let s_dn = ns - 1 - k;
        let fo_up: f64 = da.buyers.iter().map(|b| (s_up..nr).map(|r| b.hd_up[r]).sum::<f64>()).sum();
        let fo_dn: f64 = da.buyers.iter().map(|b| (0..s_dn.min(nr)).map(|r| b.hd_down[r]).sum::<f64>()).sum();
        let nl_up: f64 = system.buyers.iter().zip(&da.buyers).map(|(b, a)| (a.p - b.triggers[s_up]).max(0.0)).sum();
        let nl_dn: f64 = system.buyers.iter().zip(&da.buyers).map(|(b, a)| (b.triggers[s_dn] - a.p).max(0.0)).sum();
        out.push((cum, [fo_up, fo_dn], [nl_up, nl_dn]));
    }
    out
}

fn table_fo_demand(runs: &[FleetRun]) -> Option<Table> {
    let fo_runs: Vec<&FleetRun> = runs.iter().filter(|r| r.fo.is_some()).collect();
    if fo_runs.is_empty() {
        return None;
    }
    let header = std::iter::once("Probability".to_string()).chain(fo_runs.iter().map(|r| r.fleet.clone())).collect();
    let mut t = Table::new("fo_demand", "CUMULATIVE FO DEMAND AND NL FORECAST ERROR (MW)", header);
    let cols: Vec<_> = fo_runs.iter().map(|r| cumulative_fo_demand(&r.system, &r.fo.as_ref().unwrap().da)).collect();
    let n = cols.iter().map(Vec::len).min().unwrap_or(0);
    for k in 0..n {
        let pct = format!("{}%", fmt_num(100.0 * cols[0][k].0));
        let mut fo = vec![format!("{pct} FO")];
        let mut nl = vec![format!("{pct} NL")];
        for c in &cols {
            fo.push(format!("{}/{}", fmt_int(c[k].1[0]), fmt_int(c[k].1[1])));
            nl.push(format!("{}/{}", fmt_int(c[k].2[0]), fmt_int(c[k].2[1])));
        }
        t.rows.push(fo);
        t.rows.push(nl);
    }
    t.note = Some("Upward/downward shown left and right of '/'.".to_string());
    Some(t)
}

/// Tier shown in the flexibility price table: the second when it exists.
fn shown_tier(nr: usize) -> usize {
    nr.min(2).saturating_sub(1)
}

fn table_flex_prices(runs: &[FleetRun], design: Design) -> Table {
    let mut t = Table::new("flex_prices", "PRICE SIGNALS FOR FLEXIBILITY ($/MW)", fleet_header("", runs));
    let tier = |f: &FoRun| shown_tier(f.da.layout.tiers);
    let mut up = vec!["Up".to_string()];
    let mut dn = vec!["Down".to_string()];
    for run in runs {
        up.push(cell(run, |i| fmt_num(i.ir.reserve_up_price), |f| fmt_num(f.da.duals.up.get(tier(f)).copied().unwrap_or(0.0))));
        dn.push(cell(
            run,
            |i| fmt_num(i.ir.reserve_down_price),
            |f| fmt_num(f.da.duals.down.get(tier(f)).copied().unwrap_or(0.0)),
        ));
    }
    t.rows.push(up);
    t.rows.push(dn);
    let mut note = design_note(design).unwrap_or_default();
    if design.has_fo() {
        if !note.is_empty() {
            note.push(' ');
        }
        note.push_str("FO prices are shown for tier 2; all tiers are in csv/flex_prices.csv.");
    }
    t.note = (!note.is_empty()).then_some(note);
    t
}

fn table_energy_prices(runs: &[FleetRun], design: Design) -> Table {
    let ns = runs.first().map_or(0, |r| r.system.scenario_count());
    let header = ["".to_string(), "DA".to_string()].into_iter().chain((1..=ns).map(|s| format!("sc{s}"))).collect();
    let mut t = Table::new("energy_prices", "ENERGY PRICES: DA AND SCENARIO-SPECIFIC RT ($/MWh)", header);
    for run in runs {
        let mut row = vec![run.fleet.clone(), cell(run, |i| fmt_num(i.ir.energy_price), |f| fmt_num(f.da.duals.energy))];
        for s in 0..ns {
            row.push(cell(run, |i| fmt_num(i.ir.rt[s].price), |f| fmt_num(f.rts[s].price)));
        }
        t.rows.push(row);
    }
    t.note = design_note(design);
    t
}

fn table_buyer_supply(runs: &[FleetRun], design: Design) -> Table {
    let mut t = Table::new("buyer_supply", "UNCERTAIN AND VIRTUAL DA ENERGY SUPPLY (MW)", fleet_header("", runs));
    let ids: Vec<String> = runs.first().map(|r| r.system.buyers.iter().map(|b| b.id.clone()).collect()).unwrap_or_default();
    for (k, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        for run in runs {
            row.push(cell(run, |i| fmt_num(i.ir.buyers[k].p), |f| fmt_num(f.da.buyers[k].p)));
        }
        t.rows.push(row);
    }
    let mut row = vec!["Virtual".to_string()];
    for run in runs {
        row.push(cell(run, |i| fmt_num(i.ir.virtual_supply), |_| "0".to_string()));
    }
    t.rows.push(row);
    t.note = design_note(design);
    t
}

/// Product settlements of one fleet, probability-weighted in RT.
fn table_settlements(run: &FleetRun, design: Design) -> Table {
    let ns = run.system.scenario_count();
    let probs = &run.system.scenarios.probabilities;
    let header =
        ["".to_string(), "DA".to_string()].into_iter().chain((1..=ns).map(|s| format!("RT sc{s}"))).collect();
    let mut t = Table::new(
        &format!("settlements_{}", run.fleet),
        &format!("{}: IR/FO-RELATED PROBABILITY-WEIGHTED SETTLEMENTS ($)", run.fleet.to_uppercase()),
        header,
    );
    let mut parts: Vec<String> = run.system.generators.iter().map(|g| g.id.clone()).collect();
    parts.extend(run.system.buyers.iter().map(|b| b.id.clone()));
    parts.push(ISO.to_string());
    let val = |l: &Ledger, comp: Component, p: &str, s: Option<usize>| match s {
        None => l.amount(p, Stage::Da, None, comp),
        Some(s) => probs[s] * l.amount(p, Stage::Rt, Some(s), comp),
    };
    for p in &parts {
        let mut row = vec![p.clone()];
        for s in std::iter::once(None).chain((0..ns).map(Some)) {
            row.push(cell(run, |i| fmt_int(val(&i.ledger, Component::Ir, p, s)), |f| fmt_int(val(&f.ledger, Component::Fo, p, s))));
        }
        t.rows.push(row);
    }
    t.note = design_note(design);
    t
}

fn table_positive_margins(runs: &[FleetRun], design: Design) -> Table {
    let mut t = Table::new("positive_margins", "NUMBER OF SCENARIOS WITH POSITIVE GROSS MARGINS", fleet_header("", runs));
    if let Some(first) = runs.first() {
        for g in &first.system.generators {
            let mut row = vec![g.id.clone()];
            for run in runs {
                row.push(cell(
                    run,
                    |i| i.margins.positive_count(&g.id).to_string(),
                    |f| f.margins.positive_count(&g.id).to_string(),
                ));
            }
            t.rows.push(row);
        }
    }
    t.note = design_note(design);
    t
}

/// Per-scenario gross margin divided by the probability-weighted mean.
pub fn normalized_margins(margins: &MarginTable, participant: &str) -> Vec<f64> {
    let Some(i) = margins.row(participant) else { return Vec::new() };
    let mean = margins.weighted[i];
    margins.per_scenario[i].iter().map(|m| if mean.abs() > 1e-12 { m / mean } else { f64::NAN }).collect()
}

fn table_normalized_margins(runs: &[FleetRun], design: Design) -> Table {
    let mut t = Table::new(
        "normalized_margins",
        "UNCERTAIN RESOURCE GROSS MARGIN PER SCENARIO (NORMALIZED BY THE MEAN)",
        fleet_header("", runs),
    );
    if let Some(first) = runs.first() {
        let multi = first.system.buyers.len() > 1;
        for b in &first.system.buyers {
            let ir: Vec<Vec<f64>> = runs.iter().map(|r| r.ir.as_ref().map_or(vec![], |i| normalized_margins(&i.margins, &b.id))).collect();
            let fo: Vec<Vec<f64>> = runs.iter().map(|r| r.fo.as_ref().map_or(vec![], |f| normalized_margins(&f.margins, &b.id))).collect();
            for s in 0..first.system.scenario_count() {
                let label = if multi { format!("{} sc{}", b.id, s + 1) } else { format!("sc{}", s + 1) };
                let mut row = vec![label];
                for (k, run) in runs.iter().enumerate() {
                    row.push(pair(run.ir.as_ref().map(|_| fmt_num(ir[k][s])), run.fo.as_ref().map(|_| fmt_num(fo[k][s]))));
                }
                t.rows.push(row);
            }
        }
    }
    t.note = design_note(design);
    t
}

fn table_weighted_margins(runs: &[FleetRun], design: Design) -> Table {
    let mut t = Table::new("weighted_margins", "PROBABILITY-WEIGHTED GROSS MARGINS OF PARTICIPANTS ($)", fleet_header("", runs));
    let mut parts: Vec<String> = Vec::new();
    for run in runs {
        for m in run.ir.iter().map(|i| &i.margins).chain(run.fo.iter().map(|f| &f.margins)) {
            for p in &m.participants {
                if !parts.contains(p) {
                    parts.push(p.clone());
                }
            }
        }
    }
    // Keep the operator last.
    parts.retain(|p| p != ISO);
    parts.push(ISO.to_string());
    let get = |m: &MarginTable, p: &str| m.row(p).map_or("-".to_string(), |i| fmt_num(m.weighted[i]));
    for p in &parts {
        let mut row = vec![p.clone()];
        for run in runs {
            row.push(cell(run, |i| get(&i.margins, p), |f| get(&f.margins, p)));
        }
        t.rows.push(row);
    }
    t.note = design_note(design);
    t
}

/// Tiered FO sales of one seller under each alternative-optima weight.
pub fn table_alt_optima(fleet: &str, study: &AltOptimaStudy, seller: usize) -> Table {
    let id = &study.seller_ids[seller];
    let mut header = vec!["".to_string()];
    for row in &study.rows {
        header.push(format!("M={} (hs_up)", fmt_num(row.m)));
        header.push(format!("M={} (hs_down)", fmt_num(row.m)));
    }
    let mut t = Table::new(
        &format!("alt_optima_{fleet}"),
        &format!("{}: ALTERNATIVE OPTIMA FOR {id} FO SALES (MW)", fleet.to_uppercase()),
        header,
    );
    let nr = study.rows.first().map_or(0, |r| r.baskets[seller].1.len());
    for r in 0..nr {
        let mut line = vec![format!("tier{}", r + 1)];
        for row in &study.rows {
            line.push(fmt_num(row.baskets[seller].1[r]));
            line.push(fmt_num(row.baskets[seller].2[r]));
        }
        t.rows.push(line);
    }
    let mut sched = vec![format!("{id} RT")];
    for row in &study.rows {
        let s: Vec<String> = row.rt_schedules[seller].iter().map(|&x| fmt_num(x)).collect();
        sched.push(s.join(" "));
        sched.push(String::new());
    }
    t.rows.push(sched);
    let mut core = vec!["core cost".to_string()];
    let mut vol = vec!["FO volume".to_string()];
    for row in &study.rows {
        core.push(fmt_num(row.core_objective));
        core.push(String::new());
        vol.push(fmt_num(row.fo_volume));
        vol.push(String::new());
    }
    t.rows.push(core);
    t.rows.push(vol);
    t
}

fn table_convergence(runs: &[FleetRun]) -> Option<Table> {
    let header = ["fleet", "DA", "E[RT]", "gap", "tier", "mapping", "cap/floor", "ramp (info)"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut t = Table::new("convergence", "FO DA/RT CONVERGENCE RESIDUALS", header);
    for run in runs {
        let Some(fo) = &run.fo else { continue };
        let c = &fo.convergence;
        let mapping = c
            .mapping_infeasibility
            .iter()
            .chain(&c.buyer_identity)
            .chain(c.mapping_objective_gap.iter())
            .fold(0.0f64, |a, b| a.max(b.abs()));
        let dual = c.cap_dual.iter().chain(&c.floor_dual).flatten().fold(0.0f64, |a, &b| a.max(b));
        let ramp = c.ramp_up_dual.iter().chain(&c.ramp_down_dual).fold(0.0f64, |a, &b| a.max(b));
        t.rows.push(vec![
            run.fleet.clone(),
            fmt_num(c.da_price),
            fmt_num(c.expected_rt_price),
            format!("{:.4}", c.price_gap),
            format!("{:.4}", c.max_tier_residual()),
            format!("{mapping:.2e}"),
            format!("{dual:.4}"),
            format!("{ramp:.4}"),
        ]);
    }
    t.note = Some(format!("Pass thresholds: gap and tier residuals <= {PRICE_TOL}."));
    (!t.rows.is_empty()).then_some(t)
}

fn csv_join<T: ToString>(v: impl IntoIterator<Item = T>) -> String {
    v.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn csv_fleets(runs: &[FleetRun]) -> String {
    let ns = runs.first().map_or(0, |r| r.system.scenario_count());
    let mut out = String::from("fleet,design,system_cost,da_price");
    for s in 1..=ns {
        let _ = write!(out, ",rt_price_sc{s}");
    }
    out.push_str(",virtual_supply,price_gap\n");
    for run in runs {
        if let Some(i) = &run.ir {
            let prices: Vec<f64> = i.ir.rt.iter().map(|r| r.price).collect();
            let _ = writeln!(
                out,
                "{},IR,{},{},{},{},{}",
                run.fleet,
                i.system_cost,
                i.ir.energy_price,
                csv_join(prices),
                i.ir.virtual_supply,
                i.ir.gap
            );
        }
        if let Some(f) = &run.fo {
            let prices: Vec<f64> = f.rts.iter().map(|r| r.price).collect();
            let _ = writeln!(
                out,
                "{},FO,{},{},{},0,{}",
                run.fleet,
                f.system_cost,
                f.da.duals.energy,
                csv_join(prices),
                f.convergence.price_gap
            );
        }
    }
    out
}

fn csv_schedules(runs: &[FleetRun]) -> String {
    let mut out = String::from("fleet,design,resource,da,res_up,res_down,u\n");
    for run in runs {
        if let Some(i) = &run.ir {
            for a in i.ir.sellers.iter().chain(&i.ir.buyers) {
                let _ = writeln!(out, "{},IR,{},{},{},{},{}", run.fleet, a.id, a.p, a.res_up, a.res_down, a.u);
            }
        }
        if let Some(f) = &run.fo {
            for a in &f.da.sellers {
                let _ = writeln!(out, "{},FO,{},{},,,{}", run.fleet, a.id, a.p, a.u);
            }
            for a in &f.da.buyers {
                let _ = writeln!(out, "{},FO,{},{},,,", run.fleet, a.id, a.p);
            }
        }
    }
    out
}

fn csv_fo_awards(runs: &[FleetRun]) -> String {
    let mut out = String::from("fleet,participant,side,direction,tier,volume\n");
    for run in runs {
        let Some(f) = &run.fo else { continue };
        for s in &f.da.sellers {
            for (r, v) in s.hs_up.iter().enumerate() {
                let _ = writeln!(out, "{},{},sell,up,{},{}", run.fleet, s.id, r + 1, v);
            }
            for (r, v) in s.hs_down.iter().enumerate() {
                let _ = writeln!(out, "{},{},sell,down,{},{}", run.fleet, s.id, r + 1, v);
            }
        }
        for b in &f.da.buyers {
            for (kind, up, dn) in [("buy", &b.hd_up, &b.hd_down), ("self", &b.sd_up, &b.sd_down)] {
                for (r, v) in up.iter().enumerate() {
                    let _ = writeln!(out, "{},{},{kind},up,{},{}", run.fleet, b.id, r + 1, v);
                }
                for (r, v) in dn.iter().enumerate() {
                    let _ = writeln!(out, "{},{},{kind},down,{},{}", run.fleet, b.id, r + 1, v);
                }
            }
        }
    }
    out
}

fn csv_flex_prices(runs: &[FleetRun]) -> String {
    let mut out = String::from("fleet,design,direction,tier,price\n");
    for run in runs {
        if let Some(i) = &run.ir {
            let _ = writeln!(out, "{},IR,up,,{}", run.fleet, i.ir.reserve_up_price);
            let _ = writeln!(out, "{},IR,down,,{}", run.fleet, i.ir.reserve_down_price);
        }
        if let Some(f) = &run.fo {
            for (r, p) in f.da.duals.up.iter().enumerate() {
                let _ = writeln!(out, "{},FO,up,{},{}", run.fleet, r + 1, p);
            }
            for (r, p) in f.da.duals.down.iter().enumerate() {
                let _ = writeln!(out, "{},FO,down,{},{}", run.fleet, r + 1, p);
            }
        }
    }
    out
}

fn csv_margins(runs: &[FleetRun]) -> String {
    let ns = runs.first().map_or(0, |r| r.system.scenario_count());
    let mut out = String::from("fleet,design,participant");
    for s in 1..=ns {
        let _ = write!(out, ",sc{s}");
    }
    out.push_str(",weighted\n");
    for run in runs {
        let tables = run.ir.iter().map(|i| ("IR", &i.margins)).chain(run.fo.iter().map(|f| ("FO", &f.margins)));
        for (d, m) in tables {
            for (k, p) in m.participants.iter().enumerate() {
                let _ = writeln!(out, "{},{d},{p},{},{}", run.fleet, csv_join(&m.per_scenario[k]), m.weighted[k]);
            }
        }
    }
    out
}

fn csv_recovery(runs: &[FleetRun]) -> String {
    let mut out =
        String::from("fleet,participant,scenario,da_energy,da_option,rt_up_energy,rt_up_option,rt_down_energy,rt_down_option,total\n");
    for run in runs {
        let Some(f) = &run.fo else { continue };
        for t in f.recovery.sellers.iter().chain(&f.recovery.buyers) {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                run.fleet,
                t.participant,
                t.scenario + 1,
                t.da_energy,
                t.da_option,
                t.rt_up_energy,
                t.rt_up_option,
                t.rt_down_energy,
                t.rt_down_option,
                t.total()
            );
        }
    }
    out
}

/// Everything a run emits, keyed by relative file name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportBundle {
    pub tables: Vec<(String, String)>,
    pub csv: Vec<(String, String)>,
    pub summary: String,
    pub failures: Vec<String>,
}

impl ReportBundle {
    /// All tables concatenated, for printing.
    pub fn text(&self) -> String {
        self.tables.iter().map(|(_, t)| t.as_str()).collect::<Vec<_>>().join("\n")
    }

    /// Writes `tables/*.txt`, `csv/*.csv` and `summary.txt` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), RunError> {
        let io = |path: PathBuf| move |source| RunError::Io { path, source };
        for sub in ["tables", "csv"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(io(p.clone()))?;
        }
        for (name, body) in &self.tables {
            let p = dir.join("tables").join(format!("{name}.txt"));
            fs::write(&p, body).map_err(io(p.clone()))?;
        }
        for (name, body) in &self.csv {
            let p = dir.join("csv").join(format!("{name}.csv"));
            fs::write(&p, body).map_err(io(p.clone()))?;
        }
        let p = dir.join("summary.txt");
        fs::write(&p, &self.summary).map_err(io(p.clone()))
    }
}

fn summary(runs: &[FleetRun], design: Design, failures: &[String], system: &System) -> String {
    let c = &system.config;
    let mut out = String::new();
    let _ = writeln!(out, "design = {design:?}");
    let _ = writeln!(out, "d1 = {}", c.d1);
    let _ = writeln!(out, "d2 = {}", c.d2);
    let _ = writeln!(out, "m = {}", c.m);
    let _ = writeln!(out, "fleets = {}", runs.iter().map(|r| r.fleet.as_str()).collect::<Vec<_>>().join(" "));
    for run in runs {
        let f = &run.fleet;
        if let Some(fo) = &run.fo {
            let _ = writeln!(out, "{f}.fo.system_cost = {}", fo.system_cost);
            let _ = writeln!(out, "{f}.fo.da_price = {}", fo.da.duals.energy);
            let _ = writeln!(out, "{f}.fo.price_gap = {}", fo.convergence.price_gap);
            let _ = writeln!(out, "{f}.fo.tier_residual = {}", fo.convergence.max_tier_residual());
            let _ = writeln!(out, "{f}.fo.fo_volume = {}", fo.da.fo_volume());
            for w in &fo.da.warnings {
                let _ = writeln!(out, "{f}.fo.warning = {w}");
            }
        }
        if let Some(ir) = &run.ir {
            let _ = writeln!(out, "{f}.ir.system_cost = {}", ir.system_cost);
            let _ = writeln!(out, "{f}.ir.da_price = {}", ir.ir.energy_price);
            let _ = writeln!(out, "{f}.ir.virtual_supply = {}", ir.ir.virtual_supply);
            let _ = writeln!(out, "{f}.ir.converged = {}", ir.ir.converged);
            let _ = writeln!(out, "{f}.ir.gap = {}", ir.ir.gap);
            let iso: f64 = ir.ledger.expected(ISO, Component::Ir);
            let _ = writeln!(out, "{f}.ir.operator_expected_reserve_cash = {iso}");
        }
    }
    let _ = writeln!(out, "hard_failures = {}", failures.len());
    for m in failures {
        let _ = writeln!(out, "failure = {m}");
    }
    out
}

/// Builds tables, CSV and the run record for completed fleet runs.
pub fn build_report(system: &System, runs: &[FleetRun], design: Design, studies: &[(String, AltOptimaStudy)]) -> ReportBundle {
    let mut tables = vec![table_cost(runs, design)];
    tables.extend(table_fo_demand(runs));
    tables.push(table_flex_prices(runs, design));
    tables.push(table_energy_prices(runs, design));
    tables.push(table_buyer_supply(runs, design));
    for run in runs {
        tables.push(table_settlements(run, design));
    }
    tables.push(table_positive_margins(runs, design));
    if runs.first().is_some_and(|r| !r.system.buyers.is_empty()) {
        tables.push(table_normalized_margins(runs, design));
    }
    tables.push(table_weighted_margins(runs, design));
    for (fleet, study) in studies {
        if !study.seller_ids.is_empty() {
            tables.push(table_alt_optima(fleet, study, 0));
        }
    }
    tables.extend(table_convergence(runs));

    let mut csv = vec![
        ("fleets".to_string(), csv_fleets(runs)),
        ("schedules".to_string(), csv_schedules(runs)),
        ("flex_prices".to_string(), csv_flex_prices(runs)),
        ("margins".to_string(), csv_margins(runs)),
    ];
    if design.has_fo() {
        csv.push(("fo_awards".to_string(), csv_fo_awards(runs)));
        csv.push(("cost_recovery".to_string(), csv_recovery(runs)));
    }
    for run in runs {
        if let Some(i) = &run.ir {
            csv.push((format!("ledger_ir_{}", run.fleet), i.ledger.to_csv()));
        }
        if let Some(f) = &run.fo {
            csv.push((format!("ledger_fo_{}", run.fleet), f.ledger.to_csv()));
        }
    }
    for (fleet, study) in studies {
        csv.push((format!("alt_optima_{fleet}"), csv_alt_optima(study)));
    }
    let failures = hard_failures(runs);
    let summary = summary(runs, design, &failures, system);
    ReportBundle {
        tables: tables.into_iter().map(|t| (t.name.clone(), t.render())).collect(),
        csv,
        summary,
        failures,
    }
}

pub fn csv_alt_optima(study: &AltOptimaStudy) -> String {
    let mut out = String::from("m,seller,direction,tier,volume\n");
    for row in &study.rows {
        for (id, up, dn) in &row.baskets {
            for (r, v) in up.iter().enumerate() {
                let _ = writeln!(out, "{},{id},up,{},{v}", row.m, r + 1);
            }
            for (r, v) in dn.iter().enumerate() {
                let _ = writeln!(out, "{},{id},down,{},{v}", row.m, r + 1);
            }
        }
    }
    out
}

/// Loads, runs and reports. The bundle is also written when the manifest
/// names an output directory.
pub fn run_and_report(manifest: &RunManifest) -> Result<ReportBundle, RunError> {
    let system = load_system(manifest)?;
    let fleets = selected_fleets(&system, manifest);
    let runs = run_fleets(&system, &fleets, manifest.design)?;
    let mut studies = Vec::new();
    if manifest.design.has_fo() {
        for run in &runs {
            let study = alt_optima_study(&run.system, &[system.config.m, 0.0]).map_err(|source| RunError::Market {
                fleet: run.fleet.clone(),
                design: "FO",
                source,
            })?;
            studies.push((run.fleet.clone(), study));
        }
    }
    let bundle = build_report(&system, &runs, manifest.design, &studies);
    if let Some(dir) = &manifest.out {
        bundle.write_to(dir)?;
    }
    Ok(bundle)
}

/// RT seller output per scenario, `[seller][scenario]`.
pub fn rt_schedules(da: &DaSchedule, rts: &[RtSolution]) -> Vec<Vec<f64>> {
    let per: Vec<Vec<f64>> = rts.iter().map(|r| r.seller_schedule(da)).collect();
    (0..da.seller_p.len()).map(|i| per.iter().map(|s| s[i]).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format() {
        assert_eq!(fmt_num(-0.001), "0");
        assert_eq!(fmt_num(30.14), "30.14");
        assert_eq!(fmt_num(17.0), "17");
        assert_eq!(fmt_num(0.96), "0.96");
        assert_eq!(fmt_int(-0.4), "0");
        assert_eq!(fmt_int(1054.6), "1055");
    }

    #[test]
    fn table_alignment() {
        let mut t = Table::new("x", "T", vec!["".into(), "a".into(), "bbb".into()]);
        t.rows.push(vec!["row".into(), "12".into(), "3".into()]);
        let r = t.render();
        assert!(r.contains("row  12    3"), "{r}");
    }

    #[test]
    fn design_parse() {
        assert_eq!("FO".parse::<Design>().unwrap(), Design::Fo);
        assert!("x".parse::<Design>().is_err());
    }

    #[test]
    fn fo_fleet1_cost_cell() {
        let m = RunManifest { design: Design::Fo, fleets: vec!["fleet1".into()], ..Default::default() };
        let b = run_and_report(&m).unwrap();
        assert!(b.failures.is_empty(), "{:?}", b.failures);
        let cost = &b.tables.iter().find(|(n, _)| n == "system_cost").unwrap().1;
        assert!(cost.lines().any(|l| l.starts_with("fleet1") && l.contains("1055")), "{cost}");
    }

    #[test]
    fn cumulative_demand_fleet1() {
        let s = reference_system().with_fleet("fleet1").unwrap();
        let da = solve_da_fo(&s).unwrap();
        let rows = cumulative_fo_demand(&s, &da);
        assert!((rows[0].2[0] - 24.0).abs() < 0.5 && (rows[0].2[1] - 17.0).abs() < 0.5);
        assert!((rows[0].1[0] - 24.0).abs() < 0.5);
    }

    #[test]
    fn unknown_fleet_is_reported() {
        let m = RunManifest { fleets: vec!["nope".into()], ..Default::default() };
        assert!(matches!(run_and_report(&m), Err(RunError::Model(ModelError::UnknownFleet(_)))));
    }
}
