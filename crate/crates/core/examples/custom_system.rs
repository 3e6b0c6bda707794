//! Builds a small system from text, applies overrides and runs both designs
//! through the report pipeline.

use flexmarket::io::{apply_override, parse_system, serialize_system};
use flexmarket::report::{build_report, run_fleets, Design};

const SYSTEM: &str = "
[generators]
# id = capacity cost pmin strike_up strike_down
BASE = 80 15 0 15 15
PEAK = 30 60 0 60 60

[uncertain]
WIND = 0 1000 0 | 40 60 80 | 0.25 0.5 0.25

[fleets]
slow = 10 30
fast = 40 30

[config]
demand = 150
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut system = parse_system(SYSTEM)?;
    apply_override(&mut system, "strike_up.PEAK=70")?;
    assert_eq!(parse_system(&serialize_system(&system))?, system);

    let fleets = system.fleet_names();
    let runs = run_fleets(&system, &fleets, Design::Both)?;
    let report = build_report(&system, &runs, Design::Both, &[]);
    print!("{}", report.text());
    println!("hard failures: {:?}", report.failures);
    Ok(())
}
