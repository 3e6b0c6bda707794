//! Day-ahead co-optimization of energy and flexibility options.

use crate::model::{ModelError, System, TierSchedule};
use crate::opt::{self, Program, Sense, SolveError, SolveResult, Status};
use thiserror::Error;

const INF: f64 = f64::INFINITY;

#[derive(Debug, Error)]
pub enum MarketError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("{stage} program is {status:?}")]
    Status { stage: &'static str, status: Status },
}

/// Variable and row indices of an assembled DA-FO program.
#[derive(Debug, Clone)]
pub struct FoLayout {
    pub tiers: usize,
    pub scenarios: usize,
    pub seller_p: Vec<usize>,
    pub seller_up: Vec<Vec<usize>>,
    pub seller_down: Vec<Vec<usize>>,
    pub seller_u: Vec<usize>,
    pub buyer_p: Vec<usize>,
    pub buyer_up: Vec<Vec<usize>>,
    pub buyer_down: Vec<Vec<usize>>,
    pub self_up: Vec<Vec<usize>>,
    pub self_down: Vec<Vec<usize>>,
    pub y: Vec<Vec<usize>>,
    pub d_rt: Vec<Vec<usize>>,
    pub e: Vec<usize>,
    pub d_da: usize,
    pub row_energy: usize,
    pub row_up: Vec<usize>,
    pub row_down: Vec<usize>,
    pub row_cover: Vec<Vec<usize>>,
    pub row_y_volume: Vec<Vec<usize>>,
    pub row_y_over: Vec<Vec<usize>>,
    pub row_y_under: Vec<Vec<usize>>,
    pub row_ramp_up: Vec<usize>,
    pub row_ramp_down: Vec<usize>,
    pub row_cap: Vec<usize>,
    pub row_floor: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SellerAward {
    pub id: String,
    pub p: f64,
    pub hs_up: Vec<f64>,
    pub hs_down: Vec<f64>,
    pub u: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuyerAward {
    pub id: String,
    pub p: f64,
    pub hd_up: Vec<f64>,
    pub hd_down: Vec<f64>,
    pub sd_up: Vec<f64>,
    pub sd_down: Vec<f64>,
    pub y: Vec<f64>,
    pub d_rt: Vec<f64>,
}

/// Duals of the DA-FO rows, each `d objective / d rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct FoDuals {
    pub energy: f64,
    pub up: Vec<f64>,
    pub down: Vec<f64>,
    /// Coverage rows, indexed `[buyer][scenario]`.
    pub cover: Vec<Vec<f64>>,
    pub y_volume: Vec<Vec<f64>>,
    pub y_over: Vec<Vec<f64>>,
    pub y_under: Vec<Vec<f64>>,
    pub ramp_up: Vec<f64>,
    pub ramp_down: Vec<f64>,
    pub cap: Vec<f64>,
    pub floor: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DaFoSolution {
    pub sellers: Vec<SellerAward>,
    pub buyers: Vec<BuyerAward>,
    pub d_da: f64,
    /// Aggregate incremental unserved energy per scenario.
    pub d_rt: Vec<f64>,
    pub duals: FoDuals,
    pub objective: f64,
    /// Objective without the alternative-optima term.
    pub core_objective: f64,
    pub tiers: Vec<TierSchedule>,
    pub probabilities: Vec<f64>,
    pub program: Program,
    pub layout: FoLayout,
    pub raw: SolveResult,
    pub warnings: Vec<String>,
}

impl DaFoSolution {
    /// Scenario prices implied by the coverage duals: `-sum_b dual[b][s] / pi_s`,
    /// averaged over buyers.
    pub fn implied_scenario_prices(&self) -> Vec<f64> {
        let nb = self.duals.cover.len().max(1) as f64;
        (0..self.probabilities.len())
            .map(|s| -self.duals.cover.iter().map(|c| c[s]).sum::<f64>() / (self.probabilities[s] * nb))
            .collect()
    }

    pub fn total_y(&self) -> f64 {
        self.buyers.iter().flat_map(|b| b.y.iter()).sum()
    }

    /// Sum of absolute FO and self-hedge volumes across tiers.
    pub fn fo_volume(&self) -> f64 {
        let sellers: f64 = self.sellers.iter().map(|s| s.hs_up.iter().chain(&s.hs_down).sum::<f64>()).sum();
        let buyers: f64 = self
            .buyers
            .iter()
            .map(|b| b.hd_up.iter().chain(&b.hd_down).chain(&b.sd_up).chain(&b.sd_down).sum::<f64>())
            .sum();
        sellers + buyers
    }
}

/// Tier prices `(up, down)` from the FO balance duals.
pub fn fo_tier_prices(solution: &DaFoSolution) -> (Vec<f64>, Vec<f64>) {
    (solution.duals.up.clone(), solution.duals.down.clone())
}

/// Builds the DA-FO program. Warnings are returned for systems without sellers
/// or buyers, where every FO volume is forced to zero.
pub fn build_da_fo(system: &System) -> Result<(Program, FoLayout, Vec<String>), MarketError> {
    let cfg = &system.config;
    let ns = system.scenario_count();
    let nr = ns.saturating_sub(1);
    let probs = &system.scenarios.probabilities;
    let mut warnings = Vec::new();
    if system.generators.is_empty() {
        warnings.push("no FO sellers: FO balance forces all purchases to zero".to_string());
    }
    if system.buyers.is_empty() {
        warnings.push("no FO buyers: FO balance forces all sales to zero".to_string());
    }
    let tiers = system.tiers()?;
    let (pu, pd) = crate::model::tier_probabilities(probs);
    if ns < 2 {
        return Err(ModelError::TooFewScenarios(ns).into());
    }

    let mut p = Program::new();
    let mut seller_p = Vec::new();
    let mut seller_up: Vec<Vec<usize>> = Vec::new();
    let mut seller_down: Vec<Vec<usize>> = Vec::new();
    let mut seller_u = Vec::new();
    for g in &system.generators {
        seller_p.push(p.add_var(format!("p[{}]", g.id), 0.0, INF, g.cost));
        seller_up.push(
            (0..nr).map(|r| p.add_var(format!("hs_up[{},{}]", g.id, r + 1), 0.0, INF, pu[r] * g.strike_up)).collect(),
        );
        seller_down.push(
            (0..nr)
                .map(|r| p.add_var(format!("hs_dn[{},{}]", g.id, r + 1), 0.0, INF, -pd[r] * g.strike_down))
                .collect(),
        );
        seller_u.push(p.add_var(format!("u[{}]", g.id), 0.0, 1.0, 0.0));
    }

    let mut buyer_p = Vec::new();
    let mut buyer_up: Vec<Vec<usize>> = Vec::new();
    let mut buyer_down: Vec<Vec<usize>> = Vec::new();
    let mut self_up: Vec<Vec<usize>> = Vec::new();
    let mut self_down: Vec<Vec<usize>> = Vec::new();
    let mut y: Vec<Vec<usize>> = Vec::new();
    let mut d_rt: Vec<Vec<usize>> = Vec::new();
    for b in &system.buyers {
        buyer_p.push(p.add_var(format!("p[{}]", b.id), 0.0, INF, b.cost));
        buyer_up.push((0..nr).map(|r| p.add_var(format!("hd_up[{},{}]", b.id, r + 1), 0.0, INF, -pu[r] * b.cost)).collect());
        buyer_down
            .push((0..nr).map(|r| p.add_var(format!("hd_dn[{},{}]", b.id, r + 1), 0.0, INF, pd[r] * b.cost)).collect());
        self_up.push(
            (0..nr)
                .map(|r| p.add_var(format!("sd_up[{},{}]", b.id, r + 1), 0.0, INF, pu[r] * (b.vc_up - b.cost)))
                .collect(),
        );
        self_down.push(
            (0..nr)
                .map(|r| p.add_var(format!("sd_dn[{},{}]", b.id, r + 1), 0.0, INF, pd[r] * (b.cost - b.vc_down)))
                .collect(),
        );
        y.push((0..ns).map(|s| p.add_var(format!("y[{},{}]", b.id, s + 1), 0.0, INF, cfg.m)).collect());
        d_rt.push((0..ns).map(|s| p.add_var(format!("d_rt[{},{}]", b.id, s + 1), 0.0, INF, 0.0)).collect());
    }
    let d_da = p.add_var("d_da", 0.0, INF, 0.0);
    let e: Vec<usize> = (0..ns)
        .map(|s| {
            let v = p.add_var(format!("unserved[{}]", s + 1), 0.0, INF, probs[s] * cfg.d1);
            p.set_quad(v, probs[s] * cfg.d2);
            v
        })
        .collect();

    for s in 0..ns {
        let mut terms = vec![(e[s], 1.0), (d_da, -1.0)];
        terms.extend(d_rt.iter().map(|d: &Vec<usize>| (d[s], -1.0)));
        p.add_row(format!("unserved_def[{}]", s + 1), &terms, Sense::Eq, 0.0);
    }

    let mut terms: Vec<(usize, f64)> = seller_p.iter().chain(&buyer_p).map(|&v| (v, 1.0)).collect();
    terms.push((d_da, 1.0));
    let row_energy = p.add_row("energy_balance", &terms, Sense::Eq, cfg.demand);

    let mut row_up = Vec::new();
    let mut row_down = Vec::new();
    for r in 0..nr {
        let mut up: Vec<(usize, f64)> = seller_up.iter().map(|v: &Vec<usize>| (v[r], 1.0)).collect();
        up.extend(buyer_up.iter().map(|v: &Vec<usize>| (v[r], -1.0)));
        row_up.push(p.add_row(format!("fo_up[{}]", r + 1), &up, Sense::Eq, 0.0));
        let mut dn: Vec<(usize, f64)> = seller_down.iter().map(|v: &Vec<usize>| (v[r], 1.0)).collect();
        dn.extend(buyer_down.iter().map(|v: &Vec<usize>| (v[r], -1.0)));
        row_down.push(p.add_row(format!("fo_dn[{}]", r + 1), &dn, Sense::Eq, 0.0));
    }

    let mut row_cover = Vec::new();
    let mut row_y_volume = Vec::new();
    let mut row_y_over = Vec::new();
    let mut row_y_under = Vec::new();
    for (bi, b) in system.buyers.iter().enumerate() {
        let mut cover = Vec::new();
        let mut vol = Vec::new();
        let mut over = Vec::new();
        let mut under = Vec::new();
        for s in 0..ns {
            let mut c = vec![(buyer_p[bi], 1.0), (d_rt[bi][s], -1.0)];
            let mut v = vec![(y[bi][s], -1.0)];
            for r in 0..s.min(nr) {
                c.push((buyer_down[bi][r], 1.0));
                c.push((self_down[bi][r], 1.0));
                v.push((buyer_down[bi][r], 1.0));
                v.push((self_down[bi][r], 1.0));
            }
            for r in s..nr {
                c.push((buyer_up[bi][r], -1.0));
                c.push((self_up[bi][r], -1.0));
                v.push((buyer_up[bi][r], 1.0));
                v.push((self_up[bi][r], 1.0));
            }
            let trig = b.triggers[s];
            cover.push(p.add_row(format!("cover[{},{}]", b.id, s + 1), &c, Sense::Eq, trig));
            vol.push(p.add_row(format!("y_volume[{},{}]", b.id, s + 1), &v, Sense::Le, 0.0));
            over.push(p.add_row(
                format!("y_over[{},{}]", b.id, s + 1),
                &[(y[bi][s], 1.0), (buyer_p[bi], -1.0)],
                Sense::Ge,
                -trig,
            ));
            under.push(p.add_row(
                format!("y_under[{},{}]", b.id, s + 1),
                &[(y[bi][s], 1.0), (buyer_p[bi], 1.0)],
                Sense::Ge,
                trig,
            ));
        }
        row_cover.push(cover);
        row_y_volume.push(vol);
        row_y_over.push(over);
        row_y_under.push(under);
    }

    let mut row_ramp_up = Vec::new();
    let mut row_ramp_down = Vec::new();
    let mut row_cap = Vec::new();
    let mut row_floor = Vec::new();
    for (gi, g) in system.generators.iter().enumerate() {
        let u = seller_u[gi];
        let mut up: Vec<(usize, f64)> = seller_up[gi].iter().map(|&v| (v, 1.0)).collect();
        let mut dn: Vec<(usize, f64)> = seller_down[gi].iter().map(|&v| (v, 1.0)).collect();
        let mut cap = up.clone();
        let mut floor: Vec<(usize, f64)> = seller_down[gi].iter().map(|&v| (v, -1.0)).collect();
        up.push((u, -g.ramp));
        dn.push((u, -g.ramp));
        cap.push((seller_p[gi], 1.0));
        cap.push((u, -g.capacity));
        floor.push((seller_p[gi], 1.0));
        floor.push((u, -g.pmin));
        row_ramp_up.push(p.add_row(format!("ramp_up[{}]", g.id), &up, Sense::Le, 0.0));
        row_ramp_down.push(p.add_row(format!("ramp_dn[{}]", g.id), &dn, Sense::Le, 0.0));
        row_cap.push(p.add_row(format!("cap[{}]", g.id), &cap, Sense::Le, 0.0));
        row_floor.push(p.add_row(format!("floor[{}]", g.id), &floor, Sense::Ge, 0.0));
    }

    let _ = tiers;
    let layout = FoLayout {
        tiers: nr,
        scenarios: ns,
        seller_p,
        seller_up,
        seller_down,
        seller_u,
        buyer_p,
        buyer_up,
        buyer_down,
        self_up,
        self_down,
        y,
        d_rt,
        e,
        d_da,
        row_energy,
        row_up,
        row_down,
        row_cover,
        row_y_volume,
        row_y_over,
        row_y_under,
        row_ramp_up,
        row_ramp_down,
        row_cap,
        row_floor,
    };
    Ok((p, layout, warnings))
}

/// Solves the DA-FO program with unit commitment by enumeration; prices come
/// from the continuous restriction at the chosen commitment.
pub fn solve_da_fo(system: &System) -> Result<DaFoSolution, MarketError> {
    let (program, layout, warnings) = build_da_fo(system)?;
    let raw = opt::solve_with_binaries(&program, &layout.seller_u)?;
    if raw.status != Status::Optimal {
        return Err(MarketError::Status { stage: "DA-FO", status: raw.status });
    }
    Ok(extract(system, program, layout, raw, warnings))
}

fn pick(x: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&j| x[j]).collect()
}

fn extract(system: &System, program: Program, layout: FoLayout, raw: SolveResult, warnings: Vec<String>) -> DaFoSolution {
    let x = &raw.x;
    let y = &raw.duals;
    let l = &layout;
    let sellers = system
        .generators
        .iter()
        .enumerate()
        .map(|(i, g)| SellerAward {
            id: g.id.clone(),
            p: x[l.seller_p[i]],
            hs_up: pick(x, &l.seller_up[i]),
            hs_down: pick(x, &l.seller_down[i]),
            u: x[l.seller_u[i]],
        })
        .collect();
    let buyers: Vec<BuyerAward> = system
        .buyers
        .iter()
        .enumerate()
        .map(|(i, b)| BuyerAward {
            id: b.id.clone(),
            p: x[l.buyer_p[i]],
            hd_up: pick(x, &l.buyer_up[i]),
            hd_down: pick(x, &l.buyer_down[i]),
            sd_up: pick(x, &l.self_up[i]),
            sd_down: pick(x, &l.self_down[i]),
            y: pick(x, &l.y[i]),
            d_rt: pick(x, &l.d_rt[i]),
        })
        .collect();
    let d_rt = (0..l.scenarios).map(|s| buyers.iter().map(|b| b.d_rt[s]).sum()).collect();
    let duals = FoDuals {
        energy: y[l.row_energy],
        up: pick(y, &l.row_up),
        down: pick(y, &l.row_down),
        cover: l.row_cover.iter().map(|r| pick(y, r)).collect(),
        y_volume: l.row_y_volume.iter().map(|r| pick(y, r)).collect(),
        y_over: l.row_y_over.iter().map(|r| pick(y, r)).collect(),
        y_under: l.row_y_under.iter().map(|r| pick(y, r)).collect(),
        ramp_up: pick(y, &l.row_ramp_up),
        ramp_down: pick(y, &l.row_ramp_down),
        cap: pick(y, &l.row_cap),
        floor: pick(y, &l.row_floor),
    };
    let ysum: f64 = buyers.iter().flat_map(|b| b.y.iter()).sum();
    let objective = raw.objective;
    let core_objective = objective - system.config.m * ysum;
    DaFoSolution {
        sellers,
        buyers,
        d_da: x[l.d_da],
        d_rt,
        duals,
        objective,
        core_objective,
        tiers: system.tiers().unwrap_or_default(),
        probabilities: system.scenarios.probabilities.clone(),
        program,
        layout,
        raw,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::reference_system;

    fn fleet(n: usize) -> System {
        reference_system().with_fleet(&format!("fleet{n}")).unwrap()
    }

    #[test]
    fn fleet1_structure() {
        let (p, l, w) = build_da_fo(&fleet(1)).unwrap();
        assert!(w.is_empty());
        assert_eq!(l.row_up.len() + l.row_down.len(), 8);
        assert_eq!(l.row_cover[0].len(), 5);
        assert_eq!(p.rows.iter().filter(|r| r.label == "energy_balance").count(), 1);
    }

    #[test]
    fn two_scenarios_one_tier() {
        let mut s = fleet(1);
        s.buyers[0].triggers = vec![140.0, 160.0];
        s.scenarios.probabilities = vec![0.5, 0.5];
        let (_, l, _) = build_da_fo(&s).unwrap();
        assert_eq!((l.row_up.len(), l.row_down.len(), l.row_cover[0].len()), (1, 1, 2));
    }

    #[test]
    fn fleet1_cost_and_schedule() {
        let sol = solve_da_fo(&fleet(1)).unwrap();
        assert!((sol.core_objective - 1055.0).abs() < 0.5, "{}", sol.core_objective);
        assert!((sol.sellers[0].p - 45.0).abs() < 1e-6);
        assert!((sol.buyers[0].p - 155.0).abs() < 1e-6);
        assert!(opt::kkt_residual(&sol.program, &sol.raw) <= opt::KKT_TOL);
    }

    #[test]
    fn no_uncertainty_needs_no_options() {
        let mut s = fleet(1);
        s.buyers[0].triggers = vec![150.0; 5];
        let sol = solve_da_fo(&s).unwrap();
        let b = &sol.buyers[0];
        assert!((b.p - 150.0).abs() < 1e-6);
        assert!(sol.fo_volume() < 1e-9);
        for (s, y) in b.y.iter().enumerate() {
            assert!((y - (b.p - 150.0).abs()).abs() < 1e-9, "scenario {s}");
        }
    }

    #[test]
    fn tier_prices_fleet1() {
        let sol = solve_da_fo(&fleet(1)).unwrap();
        let (up, down) = fo_tier_prices(&sol);
        assert!((up[1] - 17.0).abs() < 0.5, "{up:?}");
        assert!((down[1] + 12.0).abs() < 0.5, "{down:?}");
    }
}
