//! Per-scenario real-time redispatch around a day-ahead schedule.

use crate::da_fo::{DaFoSolution, MarketError};
use crate::model::System;
use crate::opt::{self, Program, Sense, SolveResult, Status};

/// Step used to probe the one-sided derivatives of the RT objective.
pub const PRICE_PROBE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    /// Sellers redispatch at their strike prices.
    Fo,
    /// Sellers redispatch at their variable costs.
    Ir,
}

impl Regime {
    pub fn label(self) -> &'static str {
        match self {
            Regime::Fo => "FO",
            Regime::Ir => "IR",
        }
    }
}

/// The day-ahead quantities the RT market is built around.
#[derive(Debug, Clone, PartialEq)]
pub struct DaSchedule {
    pub seller_p: Vec<f64>,
    pub seller_u: Vec<f64>,
    pub buyer_p: Vec<f64>,
    pub d_da: f64,
    /// Virtual supply cleared day-ahead, which must be replaced physically in RT.
    pub virtual_supply: f64,
}

impl From<&DaFoSolution> for DaSchedule {
    fn from(sol: &DaFoSolution) -> Self {
        DaSchedule {
            seller_p: sol.sellers.iter().map(|s| s.p).collect(),
            seller_u: sol.sellers.iter().map(|s| s.u.round()).collect(),
            buyer_p: sol.buyers.iter().map(|b| b.p).collect(),
            d_da: sol.d_da,
            virtual_supply: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RtSolution {
    pub scenario: usize,
    pub regime: Regime,
    pub up: Vec<f64>,
    pub down: Vec<f64>,
    pub buyer_up: Vec<f64>,
    pub buyer_down: Vec<f64>,
    /// Unhedged spill.
    pub spill: Vec<f64>,
    /// Unhedged shortfall covered at the buyer's own scarcity cost.
    pub shortfall: Vec<f64>,
    pub unserved: f64,
    /// Balance dual at the vertex the solver stopped on.
    pub vertex_price: f64,
    /// Interval of valid balance duals.
    pub price_range: (f64, f64),
    /// Reported price, a point of `price_range`.
    pub price: f64,
    /// Scenario redispatch cost, excluding the constant day-ahead unserved penalty.
    pub objective: f64,
    pub program: Program,
    pub raw: SolveResult,
}

impl RtSolution {
    pub fn seller_schedule(&self, da: &DaSchedule) -> Vec<f64> {
        da.seller_p.iter().zip(&self.up).zip(&self.down).map(|((p, u), d)| p + u - d).collect()
    }

    /// Clamps `target` into the valid price interval and makes it the reported price.
    pub fn anchor(&mut self, target: f64) {
        let (lo, hi) = self.price_range;
        self.price = target.clamp(lo, hi);
    }
}

/// Builds the scenario program. Rows: `balance`, then one `deviation[id]` per buyer.
pub fn build_rt(system: &System, da: &DaSchedule, scenario: usize, regime: Regime) -> Program {
    let cfg = &system.config;
    let mut p = Program::new();
    let mut balance = Vec::new();
    for (i, g) in system.generators.iter().enumerate() {
        let pda = da.seller_p[i];
        let u = da.seller_u[i];
        let (cu, cd) = match regime {
            Regime::Fo => (g.strike_up, g.strike_down),
            Regime::Ir => (g.cost, g.cost),
        };
        let up_room = (g.ramp.min(g.capacity - pda) * u).max(0.0);
        let dn_room = (g.ramp.min(pda - g.pmin) * u).max(0.0);
        let up = p.add_var(format!("up[{}]", g.id), 0.0, up_room, cu);
        let dn = p.add_var(format!("down[{}]", g.id), 0.0, dn_room, -cd);
        balance.push((up, 1.0));
        balance.push((dn, -1.0));
    }
    let mut deviation = Vec::new();
    for b in &system.buyers {
        let bp = p.add_var(format!("buyer_up[{}]", b.id), 0.0, f64::INFINITY, b.cost);
        let bm = p.add_var(format!("buyer_down[{}]", b.id), 0.0, f64::INFINITY, -b.cost);
        let sp = p.add_var(format!("spill[{}]", b.id), 0.0, f64::INFINITY, b.cost - b.vc_down);
        let sm = p.add_var(format!("shortfall[{}]", b.id), 0.0, f64::INFINITY, b.vc_up - b.cost);
        balance.push((bp, 1.0));
        balance.push((bm, -1.0));
        deviation.push((b, [(bp, 1.0), (bm, -1.0), (sp, 1.0), (sm, -1.0)]));
    }
    let d = p.add_var("unserved", 0.0, f64::INFINITY, cfg.d1 + 2.0 * cfg.d2 * da.d_da);
    p.set_quad(d, cfg.d2);
    balance.push((d, 1.0));
    p.add_row("balance", &balance, Sense::Eq, da.virtual_supply);
    for (bi, (b, terms)) in deviation.into_iter().enumerate() {
        p.add_row(format!("deviation[{}]", b.id), &terms, Sense::Eq, b.triggers[scenario] - da.buyer_p[bi]);
    }
    p
}

/// Solves one scenario and reports the vertex balance dual as the price.
pub fn solve_rt(system: &System, da: &DaSchedule, scenario: usize, regime: Regime) -> Result<RtSolution, MarketError> {
    let program = build_rt(system, da, scenario, regime);
    let raw = opt::solve(&program)?;
    if raw.status != Status::Optimal {
        return Err(MarketError::Status { stage: "RT", status: raw.status });
    }
    let price_range = opt::dual_range(&program, 0, PRICE_PROBE)?;
    let ng = system.generators.len();
    let nb = system.buyers.len();
    let x = &raw.x;
    let col = |k: usize| -> Vec<f64> { (0..nb).map(|b| x[2 * ng + 4 * b + k]).collect() };
    let unserved = x[2 * ng + 4 * nb];
    let vertex_price = raw.duals[0];
    let objective = raw.objective;
    // Opposite moves on one resource cancel at zero net cost when they occur
    // at an optimum, so they are netted out.
    let (up, down) = net((0..ng).map(|i| x[2 * i]).collect(), (0..ng).map(|i| x[2 * i + 1]).collect());
    let (buyer_up, buyer_down) = net(col(0), col(1));
    let (spill, shortfall) = net(col(2), col(3));
    Ok(RtSolution {
        scenario,
        regime,
        up,
        down,
        buyer_up,
        buyer_down,
        spill,
        shortfall,
        unserved,
        vertex_price,
        price_range,
        price: vertex_price.clamp(price_range.0, price_range.1),
        objective,
        program,
        raw,
    })
}

fn net(mut a: Vec<f64>, mut b: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let m = x.min(*y);
        *x -= m;
        *y -= m;
    }
    (a, b)
}

/// RT solutions for every scenario of an FO day-ahead solution, each price
/// anchored at the scenario price implied by the day-ahead coverage duals.
pub fn solve_rt_fo(system: &System, da: &DaFoSolution) -> Result<Vec<RtSolution>, MarketError> {
    let schedule = DaSchedule::from(da);
    let implied = da.implied_scenario_prices();
    (0..system.scenario_count())
        .map(|s| {
            let mut rt = solve_rt(system, &schedule, s, Regime::Fo)?;
            rt.anchor(implied[s]);
            Ok(rt)
        })
        .collect()
}

/// Probability-weighted RT price.
pub fn expected_rt_price(system: &System, solutions: &[RtSolution]) -> f64 {
    system.scenarios.probabilities.iter().zip(solutions).map(|(p, rt)| p * rt.price).sum()
}

/// Probability-weighted RT redispatch cost.
pub fn expected_rt_cost(system: &System, solutions: &[RtSolution]) -> f64 {
    system.scenarios.probabilities.iter().zip(solutions).map(|(p, rt)| p * rt.objective).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::da_fo::solve_da_fo;
    use crate::io::reference_system;

    fn fleet(n: usize) -> System {
        reference_system().with_fleet(&format!("fleet{n}")).unwrap()
    }

    #[test]
    fn fleet1_prices() {
        let s = fleet(1);
        let da = solve_da_fo(&s).unwrap();
        let rts = solve_rt_fo(&s, &da).unwrap();
        let prices: Vec<f64> = rts.iter().map(|r| r.price).collect();
        for (p, want) in prices.iter().zip([50.0, 35.0, 20.0, 20.0, 20.0]) {
            assert!((p - want).abs() < 0.5, "{prices:?}");
        }
        assert!((expected_rt_price(&s, &rts) - 29.0).abs() < 0.1);
    }

    #[test]
    fn fleet6_scarcity() {
        let s = fleet(6);
        let da = solve_da_fo(&s).unwrap();
        let rts = solve_rt_fo(&s, &da).unwrap();
        assert!((rts[0].price - 170.0).abs() < 0.5, "{}", rts[0].price);
        assert!((rts[0].unserved + da.d_da - 0.15).abs() < 0.01);
    }

    #[test]
    fn zero_imbalance_is_idle() {
        let s = fleet(1);
        let da = DaSchedule {
            seller_p: vec![45.0, 0.0, 0.0, 0.0, 0.0],
            seller_u: vec![1.0; 5],
            buyer_p: vec![155.0],
            d_da: 0.0,
            virtual_supply: 0.0,
        };
        let rt = solve_rt(&s, &da, 2, Regime::Fo).unwrap();
        assert!(rt.raw.x.iter().all(|v| v.abs() < 1e-9));
        assert!((rt.price_range.0 - 20.0).abs() < 1e-3 && (rt.price_range.1 - 20.0).abs() < 1e-3);
        assert!((rt.price - 20.0).abs() < 1e-3);
    }

    #[test]
    fn balance_and_deviation_identities() {
        let s = fleet(3);
        let da = solve_da_fo(&s).unwrap();
        let sched = DaSchedule::from(&da);
        for rt in solve_rt_fo(&s, &da).unwrap() {
            let supply: f64 = rt.up.iter().sum::<f64>() + rt.buyer_up[0] + rt.unserved;
            let demand: f64 = rt.down.iter().sum::<f64>() + rt.buyer_down[0];
            assert!((supply - demand).abs() < 1e-7);
            let dev = rt.buyer_up[0] - rt.buyer_down[0] + rt.spill[0] - rt.shortfall[0];
            assert!((dev - (s.buyers[0].triggers[rt.scenario] - sched.buyer_p[0])).abs() < 1e-7);
            for (u, d) in rt.up.iter().zip(&rt.down) {
                assert!(u * d < 1e-7);
            }
        }
    }
}
