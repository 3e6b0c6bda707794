//! Randomized DA/RT price convergence sweep over seller ramp rates and
//! strike prices.
//!
//! cargo run --release --example convergence_sweep -- 200 7

use flexmarket::io::reference_system;
use flexmarket::verify::{randomized_convergence_harness, RandomDrawSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let draws = args.next().map(|s| s.parse()).transpose()?.unwrap_or(100);
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let system = reference_system().with_fleet("fleet1")?;
    let summary = randomized_convergence_harness(&system, RandomDrawSpec { seed, draws });
    print!("{}", summary.to_text());
    if let Some(worst) = summary.outcomes.iter().filter(|o| o.error.is_none()).max_by(|a, b| a.price_gap.total_cmp(&b.price_gap)) {
        println!("largest gap at draw {}: {:?}", worst.id, worst.params);
    }
    Ok(())
}
