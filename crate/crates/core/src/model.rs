//! Market data model: resources, scenarios, fleets and configuration.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("at least two scenarios are required, got {0}")]
    TooFewScenarios(usize),
    #[error("triggers of {0} are not sorted ascending")]
    UnsortedTriggers(String),
    #[error("{0} has {1} triggers but the scenario set has {2} scenarios")]
    TriggerCount(String, usize, usize),
    #[error("unknown fleet {0}")]
    UnknownFleet(String),
    #[error("fleet {0} lists {1} ramp rates for {2} generators")]
    FleetWidth(String, usize, usize),
    #[error("invalid system: {0}")]
    Invalid(String),
}

/// Scenario probabilities, shared by every uncertain resource. Scenarios are
/// ordered by ascending output of the uncertain resources.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    pub probabilities: Vec<f64>,
}

impl ScenarioSet {
    pub fn equiprobable(count: usize) -> Self {
        Self { probabilities: vec![1.0 / count as f64; count] }
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }
}

/// A seller of flexibility.
#[derive(Debug, Clone, PartialEq)]
pub struct FlexibleResource {
    pub id: String,
    pub capacity: f64,
    pub pmin: f64,
    pub cost: f64,
    pub ramp: f64,
    pub strike_up: f64,
    pub strike_down: f64,
}

/// A buyer of flexibility with per-scenario real-time upper operating limits.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertainResource {
    pub id: String,
    pub cost: f64,
    /// Scarcity cost of self-hedging an upward imbalance.
    pub vc_up: f64,
    /// Scarcity cost of self-hedging a downward imbalance.
    pub vc_down: f64,
    /// Trigger quantities, one per scenario, ascending.
    pub triggers: Vec<f64>,
}

impl UncertainResource {
    pub fn expected(&self, scenarios: &ScenarioSet) -> f64 {
        self.triggers.iter().zip(&scenarios.probabilities).map(|(p, w)| p * w).sum()
    }
}

/// Up and down tiers built from one buyer's triggers.
#[derive(Debug, Clone, PartialEq)]
pub struct TierSchedule {
    pub up_trigger: Vec<f64>,
    pub up_prob: Vec<f64>,
    pub down_trigger: Vec<f64>,
    pub down_prob: Vec<f64>,
}

impl TierSchedule {
    pub fn len(&self) -> usize {
        self.up_trigger.len()
    }

    pub fn is_empty(&self) -> bool {
        self.up_trigger.is_empty()
    }
}

/// Tier `r` (0-based) has up trigger `P[r+1]` exercised with probability
/// `sum_{s<=r} pi_s` and down trigger `P[r]` exercised with `sum_{s>r} pi_s`.
pub fn build_tiers(scenarios: &ScenarioSet, buyer: &UncertainResource) -> Result<TierSchedule, ModelError> {
    let n = scenarios.len();
    if n < 2 {
        return Err(ModelError::TooFewScenarios(n));
    }
    if buyer.triggers.len() != n {
        return Err(ModelError::TriggerCount(buyer.id.clone(), buyer.triggers.len(), n));
    }
    if buyer.triggers.windows(2).any(|w| w[0] > w[1]) {
        return Err(ModelError::UnsortedTriggers(buyer.id.clone()));
    }
    Ok(TierSchedule {
        up_trigger: buyer.triggers[1..].to_vec(),
        up_prob: tier_probabilities(&scenarios.probabilities).0,
        down_trigger: buyer.triggers[..n - 1].to_vec(),
        down_prob: tier_probabilities(&scenarios.probabilities).1,
    })
}

/// Cumulative up and down exercise probabilities per tier.
pub fn tier_probabilities(probs: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let tiers = probs.len().saturating_sub(1);
    let up = (0..tiers).map(|r| probs[..=r].iter().sum()).collect();
    let down = (0..tiers).map(|r| probs[r + 1..].iter().sum()).collect();
    (up, down)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandStep {
    pub size: f64,
    pub wtp: f64,
}

/// Imbalance reserve parameters. `None` requirements and empty step lists are
/// derived from the buyers' scenarios.
#[derive(Debug, Clone, PartialEq)]
pub struct IrConfig {
    pub resreq_up: Option<f64>,
    pub resreq_down: Option<f64>,
    pub steps_up: Vec<DemandStep>,
    pub steps_down: Vec<DemandStep>,
    pub default_wtp: f64,
    pub vbc: f64,
    pub price_tol: f64,
    pub max_iter: usize,
}

impl Default for IrConfig {
    fn default() -> Self {
        Self {
            resreq_up: None,
            resreq_down: None,
            steps_up: Vec::new(),
            steps_down: Vec::new(),
            default_wtp: 500.0,
            vbc: 0.0,
            price_tol: 0.05,
            max_iter: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketConfig {
    pub demand: f64,
    pub d1: f64,
    pub d2: f64,
    pub m: f64,
    pub ir: IrConfig,
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self { demand: 200.0, d1: 167.0, d2: 10.0, m: 0.01, ir: IrConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fleet {
    pub name: String,
    pub ramps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct System {
    pub generators: Vec<FlexibleResource>,
    pub buyers: Vec<UncertainResource>,
    pub scenarios: ScenarioSet,
    pub fleets: Vec<Fleet>,
    pub config: MarketConfig,
}

impl System {
    /// Copy of the system with the named fleet's ramp rates applied.
    pub fn with_fleet(&self, name: &str) -> Result<System, ModelError> {
        let fleet = self
            .fleets
            .iter()
            .find(|f| f.name == name)
            .ok_or_else(|| ModelError::UnknownFleet(name.to_string()))?;
        if fleet.ramps.len() != self.generators.len() {
            return Err(ModelError::FleetWidth(name.to_string(), fleet.ramps.len(), self.generators.len()));
        }
        let mut out = self.clone();
        for (g, &r) in out.generators.iter_mut().zip(&fleet.ramps) {
            g.ramp = r;
        }
        Ok(out)
    }

    pub fn fleet_names(&self) -> Vec<String> {
        self.fleets.iter().map(|f| f.name.clone()).collect()
    }

    pub fn tiers(&self) -> Result<Vec<TierSchedule>, ModelError> {
        self.buyers.iter().map(|b| build_tiers(&self.scenarios, b)).collect()
    }

    pub fn scenario_count(&self) -> usize {
        self.scenarios.len()
    }

    /// Aggregate buyer output per scenario.
    pub fn aggregate_triggers(&self) -> Vec<f64> {
        (0..self.scenarios.len()).map(|s| self.buyers.iter().map(|b| b.triggers[s]).sum()).collect()
    }

    /// Upward and downward reserve requirements: expected aggregate output
    /// minus its minimum, and maximum minus expected.
    pub fn reserve_requirements(&self) -> (f64, f64) {
        let agg = self.aggregate_triggers();
        if agg.is_empty() {
            return (0.0, 0.0);
        }
        let mean: f64 = agg.iter().zip(&self.scenarios.probabilities).map(|(a, p)| a * p).sum();
        let lo = agg.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = agg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (
            self.config.ir.resreq_up.unwrap_or((mean - lo).max(0.0)),
            self.config.ir.resreq_down.unwrap_or((hi - mean).max(0.0)),
        )
    }
}

/// Lists every violated invariant; empty when the system is well formed.
pub fn validate_system(system: &System) -> Vec<String> {
    let mut out = Vec::new();
    let probs = &system.scenarios.probabilities;
    if probs.len() < 2 {
        out.push(format!("need at least two scenarios, found {}", probs.len()));
    }
    if probs.iter().any(|&p| !(p > 0.0)) {
        out.push("scenario probabilities must be positive".to_string());
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        out.push(format!("scenario probabilities sum to {total}, not 1"));
    }
    for g in &system.generators {
        if g.pmin < 0.0 || g.pmin > g.capacity {
            out.push(format!("{}: need 0 <= pmin <= capacity", g.id));
        }
        if g.ramp < 0.0 {
            out.push(format!("{}: negative ramp rate", g.id));
        }
        if g.strike_down > g.strike_up {
            out.push(format!("{}: strike_down exceeds strike_up", g.id));
        }
    }
    for b in &system.buyers {
        if b.triggers.len() != probs.len() {
            out.push(format!("{}: {} triggers for {} scenarios", b.id, b.triggers.len(), probs.len()));
        }
        if b.triggers.windows(2).any(|w| w[0] > w[1]) {
            out.push(format!("{}: triggers must be ascending", b.id));
        }
        if b.vc_down > b.vc_up {
            out.push(format!("{}: vc_down exceeds vc_up", b.id));
        }
    }
    for f in &system.fleets {
        if f.ramps.len() != system.generators.len() {
            out.push(format!("fleet {}: {} ramp rates for {} generators", f.name, f.ramps.len(), system.generators.len()));
        }
        if f.ramps.iter().any(|&r| r < 0.0) {
            out.push(format!("fleet {}: negative ramp rate", f.name));
        }
    }
    let c = &system.config;
    if c.d1 < 0.0 || c.d2 < 0.0 || c.m < 0.0 {
        out.push("D1, D2 and M must be non-negative".to_string());
    }
    for (dir, steps) in [("up", &c.ir.steps_up), ("down", &c.ir.steps_down)] {
        if steps.windows(2).any(|w| w[1].wtp > w[0].wtp) {
            out.push(format!("IR {dir} willingness-to-pay steps must be non-increasing"));
        }
        if steps.iter().any(|s| s.size < 0.0) {
            out.push(format!("IR {dir} step sizes must be non-negative"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn buyer(triggers: &[f64]) -> UncertainResource {
        UncertainResource { id: "RE".into(), cost: 0.0, vc_up: 1000.0, vc_down: 0.0, triggers: triggers.to_vec() }
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn five_scenario_tiers() {
        let t = build_tiers(&ScenarioSet::equiprobable(5), &buyer(&[131.0, 141.0, 155.0, 165.0, 172.0])).unwrap();
        assert_eq!(t.up_trigger, vec![141.0, 155.0, 165.0, 172.0]);
        assert_eq!(t.down_trigger, vec![131.0, 141.0, 155.0, 165.0]);
        assert!(close(&t.up_prob, &[0.2, 0.4, 0.6, 0.8]));
        assert!(close(&t.down_prob, &[0.8, 0.6, 0.4, 0.2]));
    }

    #[test]
    fn two_scenario_tiers() {
        let t = build_tiers(&ScenarioSet { probabilities: vec![0.5, 0.5] }, &buyer(&[0.0, 10.0])).unwrap();
        assert_eq!((t.up_trigger.clone(), t.up_prob.clone()), (vec![10.0], vec![0.5]));
        assert_eq!((t.down_trigger.clone(), t.down_prob.clone()), (vec![0.0], vec![0.5]));
    }

    #[test]
    fn uneven_tiers_match_membership_count() {
        let probs = [0.1, 0.3, 0.6];
        let t = build_tiers(&ScenarioSet { probabilities: probs.to_vec() }, &buyer(&[1.0, 2.0, 3.0])).unwrap();
        // Up tier r pays in every scenario whose output is below its trigger.
        let triggers = [1.0, 2.0, 3.0];
        for r in 0..2 {
            let up: f64 = (0..3).filter(|&s| triggers[s] < t.up_trigger[r]).map(|s| probs[s]).sum();
            let down: f64 = (0..3).filter(|&s| triggers[s] > t.down_trigger[r]).map(|s| probs[s]).sum();
            assert!((t.up_prob[r] - up).abs() < 1e-12);
            assert!((t.down_prob[r] - down).abs() < 1e-12);
        }
        assert!(close(&t.up_prob, &[0.1, 0.4]));
        assert!(close(&t.down_prob, &[0.9, 0.6]));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert_eq!(
            build_tiers(&ScenarioSet { probabilities: vec![1.0] }, &buyer(&[1.0])),
            Err(ModelError::TooFewScenarios(1))
        );
        assert!(matches!(
            build_tiers(&ScenarioSet::equiprobable(2), &buyer(&[5.0, 1.0])),
            Err(ModelError::UnsortedTriggers(_))
        ));
    }

    fn tiny_system() -> System {
        System {
            generators: vec![FlexibleResource {
                id: "G".into(),
                capacity: 10.0,
                pmin: 0.0,
                cost: 20.0,
                ramp: 10.0,
                strike_up: 20.0,
                strike_down: 20.0,
            }],
            buyers: vec![buyer(&[1.0, 2.0])],
            scenarios: ScenarioSet { probabilities: vec![0.5, 0.5] },
            fleets: vec![],
            config: MarketConfig::default(),
        }
    }

    #[test]
    fn validation_reports_each_problem() {
        let ok = tiny_system();
        assert!(validate_system(&ok).is_empty());

        let mut bad = ok.clone();
        bad.generators[0].pmin = 20.0;
        assert_eq!(validate_system(&bad).len(), 1);

        let mut bad = ok.clone();
        bad.scenarios.probabilities = vec![0.5, 0.6];
        assert_eq!(validate_system(&bad).len(), 1);
    }
}
