//! Effect of the alternative-optima weight on FO baskets: the core cost and
//! real-time schedules stay put while the traded volumes change.

use flexmarket::io::reference_system;
use flexmarket::report::table_alt_optima;
use flexmarket::verify::alt_optima_study;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let system = reference_system().with_fleet("fleet6")?;
    let study = alt_optima_study(&system, &[0.01, 0.0, 0.1])?;
    print!("{}", table_alt_optima("fleet6", &study, 0).render());
    println!("\ncore spread {:.4}, schedule spread {:.4}", study.core_objective_spread(), study.schedule_spread());
    Ok(())
}
