//! Day-ahead energy and imbalance reserve clearing, with a virtual bidder
//! equilibrium against the real-time markets.

use crate::da_fo::MarketError;
use crate::model::{DemandStep, System};
use crate::opt::{self, Program, Sense, SolveResult, Status};
use crate::rt::{self, DaSchedule, Regime, RtSolution};

const INF: f64 = f64::INFINITY;

#[derive(Debug, Clone)]
pub struct IrLayout {
    pub seller_p: Vec<usize>,
    pub seller_res_up: Vec<usize>,
    pub seller_res_down: Vec<usize>,
    pub seller_u: Vec<usize>,
    pub buyer_p: Vec<usize>,
    pub buyer_res_up: Vec<usize>,
    pub buyer_res_down: Vec<usize>,
    pub short_up: Vec<usize>,
    pub short_down: Vec<usize>,
    pub d_da: usize,
    pub virtual_supply: usize,
    pub row_energy: usize,
    pub row_req_up: usize,
    pub row_req_down: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReserveAward {
    pub id: String,
    pub p: f64,
    pub res_up: f64,
    pub res_down: f64,
    pub u: f64,
}

#[derive(Debug, Clone)]
pub struct DaIrSolution {
    pub sellers: Vec<ReserveAward>,
    pub buyers: Vec<ReserveAward>,
    pub short_up: Vec<f64>,
    pub short_down: Vec<f64>,
    pub virtual_supply: f64,
    pub d_da: f64,
    /// Reported day-ahead energy price.
    pub energy_price: f64,
    pub energy_range: (f64, f64),
    pub reserve_up_price: f64,
    pub reserve_down_price: f64,
    pub resreq_up: f64,
    pub resreq_down: f64,
    pub objective: f64,
    /// RT solutions at the returned virtual position, prices made consistent
    /// with `energy_price` where the intervals allow it.
    pub rt: Vec<RtSolution>,
    /// Distance between the DA price interval and the expected RT price interval.
    pub gap: f64,
    pub converged: bool,
    pub iterations: usize,
    pub program: Program,
    pub layout: IrLayout,
    pub raw: SolveResult,
}

impl DaIrSolution {
    pub fn schedule(&self) -> DaSchedule {
        DaSchedule {
            seller_p: self.sellers.iter().map(|s| s.p).collect(),
            seller_u: self.sellers.iter().map(|s| s.u.round()).collect(),
            buyer_p: self.buyers.iter().map(|b| b.p).collect(),
            d_da: self.d_da,
            virtual_supply: self.virtual_supply,
        }
    }

    /// DA energy cost of physical resources plus the DA unserved penalty.
    pub fn da_cost(&self, system: &System) -> f64 {
        let cfg = &system.config;
        let gens: f64 = self.sellers.iter().zip(&system.generators).map(|(s, g)| s.p * g.cost).sum();
        let buyers: f64 = self.buyers.iter().zip(&system.buyers).map(|(s, b)| s.p * b.cost).sum();
        gens + buyers + cfg.d1 * self.d_da + cfg.d2 * self.d_da * self.d_da
    }

    /// Probability-weighted system cost: DA cost plus expected RT redispatch cost.
    pub fn system_cost(&self, system: &System) -> f64 {
        self.da_cost(system) + rt::expected_rt_cost(system, &self.rt)
    }
}

/// Reserve demand steps, defaulting to one step the size of the requirement.
pub fn demand_steps(system: &System) -> (Vec<DemandStep>, Vec<DemandStep>) {
    let ir = &system.config.ir;
    let (up, down) = system.reserve_requirements();
    let default = |req: f64| vec![DemandStep { size: req, wtp: ir.default_wtp }];
    let pick = |steps: &Vec<DemandStep>, req: f64| if steps.is_empty() { default(req) } else { steps.clone() };
    (pick(&ir.steps_up, up), pick(&ir.steps_down, down))
}

/// Builds the DA-IR program. With `virtual_supply = None` the virtual position
/// is free at the configured bid cost; otherwise it is fixed and costless.
pub fn build_da_ir(system: &System, virtual_supply: Option<f64>) -> (Program, IrLayout) {
    let cfg = &system.config;
    let (req_up, req_down) = system.reserve_requirements();
    let (steps_up, steps_down) = demand_steps(system);
    let mut p = Program::new();
    let mut seller_p = Vec::new();
    let mut seller_res_up = Vec::new();
    let mut seller_res_down = Vec::new();
    let mut seller_u = Vec::new();
    for g in &system.generators {
        seller_p.push(p.add_var(format!("p[{}]", g.id), 0.0, INF, g.cost));
        seller_res_up.push(p.add_var(format!("res_up[{}]", g.id), 0.0, INF, 0.0));
        seller_res_down.push(p.add_var(format!("res_dn[{}]", g.id), 0.0, INF, 0.0));
        seller_u.push(p.add_var(format!("u[{}]", g.id), 0.0, 1.0, 0.0));
    }
    let mut buyer_p = Vec::new();
    let mut buyer_res_up = Vec::new();
    let mut buyer_res_down = Vec::new();
    for b in &system.buyers {
        let forecast = b.expected(&system.scenarios);
        buyer_p.push(p.add_var(format!("p[{}]", b.id), 0.0, forecast, b.cost));
        buyer_res_up.push(p.add_var(format!("res_up[{}]", b.id), 0.0, INF, 0.0));
        buyer_res_down.push(p.add_var(format!("res_dn[{}]", b.id), 0.0, INF, 0.0));
    }
    let short_up: Vec<usize> = steps_up
        .iter()
        .enumerate()
        .map(|(l, st)| p.add_var(format!("short_up[{}]", l + 1), 0.0, st.size, st.wtp))
        .collect();
    let short_down: Vec<usize> = steps_down
        .iter()
        .enumerate()
        .map(|(l, st)| p.add_var(format!("short_dn[{}]", l + 1), 0.0, st.size, st.wtp))
        .collect();
    let d_da = p.add_var("d_da", 0.0, INF, cfg.d1);
    p.set_quad(d_da, cfg.d2);
    let vs = match virtual_supply {
        Some(v) => p.add_var("virtual", v, v, 0.0),
        None => p.add_var("virtual", -INF, INF, cfg.ir.vbc),
    };

    let mut bal: Vec<(usize, f64)> = seller_p.iter().chain(&buyer_p).map(|&v| (v, 1.0)).collect();
    bal.push((d_da, 1.0));
    bal.push((vs, 1.0));
    let row_energy = p.add_row("energy_balance", &bal, Sense::Eq, cfg.demand);
    let up: Vec<(usize, f64)> = seller_res_up.iter().chain(&buyer_res_up).chain(&short_up).map(|&v| (v, 1.0)).collect();
    let row_req_up = p.add_row("reserve_up", &up, Sense::Ge, req_up);
    let dn: Vec<(usize, f64)> =
        seller_res_down.iter().chain(&buyer_res_down).chain(&short_down).map(|&v| (v, 1.0)).collect();
    let row_req_down = p.add_row("reserve_dn", &dn, Sense::Ge, req_down);

    for (i, g) in system.generators.iter().enumerate() {
        let u = seller_u[i];
        p.add_row(format!("ramp_up[{}]", g.id), &[(seller_res_up[i], 1.0), (u, -g.ramp)], Sense::Le, 0.0);
        p.add_row(format!("ramp_dn[{}]", g.id), &[(seller_res_down[i], 1.0), (u, -g.ramp)], Sense::Le, 0.0);
        p.add_row(
            format!("cap[{}]", g.id),
            &[(seller_p[i], 1.0), (seller_res_up[i], 1.0), (u, -g.capacity)],
            Sense::Le,
            0.0,
        );
        p.add_row(
            format!("floor[{}]", g.id),
            &[(seller_p[i], 1.0), (seller_res_down[i], -1.0), (u, -g.pmin)],
            Sense::Ge,
            0.0,
        );
    }
    for (i, b) in system.buyers.iter().enumerate() {
        let forecast = b.expected(&system.scenarios);
        p.add_row(
            format!("cap[{}]", b.id),
            &[(buyer_p[i], 1.0), (buyer_res_up[i], 1.0)],
            Sense::Le,
            forecast,
        );
        p.add_row(format!("floor[{}]", b.id), &[(buyer_p[i], 1.0), (buyer_res_down[i], -1.0)], Sense::Ge, 0.0);
    }
    let layout = IrLayout {
        seller_p,
        seller_res_up,
        seller_res_down,
        seller_u,
        buyer_p,
        buyer_res_up,
        buyer_res_down,
        short_up,
        short_down,
        d_da,
        virtual_supply: vs,
        row_energy,
        row_req_up,
        row_req_down,
    };
    (p, layout)
}

/// One DA-IR clearing at a given virtual position, without the RT side.
#[derive(Debug, Clone)]
pub struct IrClearing {
    pub program: Program,
    pub layout: IrLayout,
    pub raw: SolveResult,
    /// Program with commitments fixed at the optimum, used for pricing.
    pub restricted: Program,
}

/// Clears the DA-IR market at a fixed (`Some`) or free (`None`) virtual position.
pub fn clear_da_ir(system: &System, virtual_supply: Option<f64>) -> Result<IrClearing, MarketError> {
    let (program, layout) = build_da_ir(system, virtual_supply);
    let raw = opt::solve_with_binaries(&program, &layout.seller_u)?;
    if raw.status != Status::Optimal {
        return Err(MarketError::Status { stage: "DA-IR", status: raw.status });
    }
    let mut restricted = program.clone();
    for &u in &layout.seller_u {
        restricted.fix(u, raw.x[u].round());
    }
    Ok(IrClearing { program, layout, raw, restricted })
}

struct Trial {
    vs: f64,
    clearing: IrClearing,
    da_range: (f64, f64),
    rt: Vec<RtSolution>,
    gap: f64,
}

fn expected_bounds(system: &System, rts: &[RtSolution]) -> (f64, f64) {
    let probs = &system.scenarios.probabilities;
    let lo = probs.iter().zip(rts).map(|(p, r)| p * r.price_range.0).sum();
    let hi = probs.iter().zip(rts).map(|(p, r)| p * r.price_range.1).sum();
    (lo, hi)
}

fn interval_gap(da: (f64, f64), rt: (f64, f64)) -> f64 {
    if da.0 > rt.1 {
        da.0 - rt.1
    } else if da.1 < rt.0 {
        da.1 - rt.0
    } else {
        0.0
    }
}

fn trial(system: &System, vs: f64) -> Result<Trial, MarketError> {
    let clearing = clear_da_ir(system, Some(vs))?;
    let da_range = opt::dual_range(&clearing.restricted, clearing.layout.row_energy, rt::PRICE_PROBE)?;
    let x = &clearing.raw.x;
    let l = &clearing.layout;
    let schedule = DaSchedule {
        seller_p: l.seller_p.iter().map(|&j| x[j]).collect(),
        seller_u: l.seller_u.iter().map(|&j| x[j].round()).collect(),
        buyer_p: l.buyer_p.iter().map(|&j| x[j]).collect(),
        d_da: x[l.d_da],
        virtual_supply: vs,
    };
    let rt = (0..system.scenario_count())
        .map(|s| rt::solve_rt(system, &schedule, s, Regime::Ir))
        .collect::<Result<Vec<_>, _>>()?;
    let gap = interval_gap(da_range, expected_bounds(system, &rt));
    Ok(Trial { vs, clearing, da_range, rt, gap })
}

/// Searches the virtual position by bisection on the gap between the DA price
/// interval and the expected RT price interval. A positive gap (DA above RT)
/// calls for more virtual supply.
pub fn solve_da_ir_with_virtual_equilibrium(system: &System) -> Result<DaIrSolution, MarketError> {
    let cfg = &system.config;
    let mut lo = -cfg.demand.abs();
    let mut hi = cfg.demand.abs();
    let mut best = trial(system, 0.0)?;
    let mut iterations = 1;
    if best.gap != 0.0 {
        let mut probe_lo = trial(system, lo)?;
        let mut probe_hi = trial(system, hi)?;
        iterations += 2;
        for t in [&mut probe_lo, &mut probe_hi] {
            if t.gap.abs() < best.gap.abs() {
                std::mem::swap(&mut best, t);
            }
        }
        if best.gap > 0.0 {
            lo = best.vs;
        } else if best.gap < 0.0 {
            hi = best.vs;
        }
        while best.gap != 0.0 && iterations < cfg.ir.max_iter {
            let mid = 0.5 * (lo + hi);
            let t = trial(system, mid)?;
            iterations += 1;
            if t.gap > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if t.gap.abs() <= best.gap.abs() {
                best = t;
            }
        }
    }
    Ok(finish(system, best, iterations))
}

/// Clears the DA-IR market with the virtual position fixed, pricing RT by
/// vertex duals.
pub fn solve_da_ir_fixed(system: &System, virtual_supply: f64) -> Result<DaIrSolution, MarketError> {
    let t = trial(system, virtual_supply)?;
    Ok(finish(system, t, 1))
}

fn finish(system: &System, t: Trial, iterations: usize) -> DaIrSolution {
    let Trial { vs, clearing, da_range, mut rt, gap } = t;
    let IrClearing { program, layout, raw, .. } = clearing;
    let x = &raw.x;
    let y = &raw.duals;
    let (e_lo, e_hi) = expected_bounds(system, &rt);
    let lo = da_range.0.max(e_lo);
    let hi = da_range.1.min(e_hi);
    let energy_price = if lo <= hi { y[layout.row_energy].clamp(lo, hi) } else { y[layout.row_energy] };
    if lo <= hi {
        let theta = if e_hi > e_lo { (energy_price - e_lo) / (e_hi - e_lo) } else { 0.0 };
        for r in &mut rt {
            let (a, b) = r.price_range;
            r.price = a + theta * (b - a);
        }
    }
    let (resreq_up, resreq_down) = system.reserve_requirements();
    let sellers = system
        .generators
        .iter()
        .enumerate()
        .map(|(i, g)| ReserveAward {
            id: g.id.clone(),
            p: x[layout.seller_p[i]],
            res_up: x[layout.seller_res_up[i]],
            res_down: x[layout.seller_res_down[i]],
            u: x[layout.seller_u[i]],
        })
        .collect();
    let buyers = system
        .buyers
        .iter()
        .enumerate()
        .map(|(i, b)| ReserveAward {
            id: b.id.clone(),
            p: x[layout.buyer_p[i]],
            res_up: x[layout.buyer_res_up[i]],
            res_down: x[layout.buyer_res_down[i]],
            u: 1.0,
        })
        .collect();
    DaIrSolution {
        sellers,
        buyers,
        short_up: layout.short_up.iter().map(|&j| x[j]).collect(),
        short_down: layout.short_down.iter().map(|&j| x[j]).collect(),
        virtual_supply: vs,
        d_da: x[layout.d_da],
        energy_price,
        energy_range: da_range,
        reserve_up_price: y[layout.row_req_up],
        reserve_down_price: y[layout.row_req_down],
        resreq_up,
        resreq_down,
        objective: raw.objective,
        rt,
        gap,
        converged: gap.abs() <= system.config.ir.price_tol,
        iterations,
        program,
        layout,
        raw,
    }
}
