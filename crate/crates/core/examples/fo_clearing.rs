//! Clears the day-ahead flexibility option market for one fleet and prints
//! energy schedules, tier prices and the option baskets.
//!
//! cargo run --example fo_clearing -- fleet3

use flexmarket::da_fo::{fo_tier_prices, solve_da_fo};
use flexmarket::io::reference_system;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fleet = std::env::args().nth(1).unwrap_or_else(|| "fleet1".into());
    let system = reference_system().with_fleet(&fleet)?;
    let da = solve_da_fo(&system)?;

    println!("{fleet}: system cost {:.2}, DA energy price {:.2}", da.core_objective, da.duals.energy);
    for s in &da.sellers {
        println!("  {:<4} p {:>6.2}  up {:?}  down {:?}", s.id, s.p, round(&s.hs_up), round(&s.hs_down));
    }
    for b in &da.buyers {
        println!("  {:<4} p {:>6.2}  bought up {:?}  down {:?}", b.id, b.p, round(&b.hd_up), round(&b.hd_down));
    }
    let (up, down) = fo_tier_prices(&da);
    println!("tier prices up {:?}", round(&up));
    println!("tier prices down {:?}", round(&down));
    println!("implied RT prices {:?}", round(&da.implied_scenario_prices()));
    Ok(())
}

fn round(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 100.0).round() / 100.0 + 0.0).collect()
}
