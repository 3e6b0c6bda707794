//! Real-time redispatch around an FO day-ahead schedule: per-scenario
//! schedules, the interval of valid balance prices and the reported price.

use flexmarket::da_fo::solve_da_fo;
use flexmarket::io::reference_system;
use flexmarket::rt::{expected_rt_price, solve_rt_fo, DaSchedule};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fleet = std::env::args().nth(1).unwrap_or_else(|| "fleet6".into());
    let system = reference_system().with_fleet(&fleet)?;
    let da = solve_da_fo(&system)?;
    let schedule = DaSchedule::from(&da);
    let rts = solve_rt_fo(&system, &da)?;

    for rt in &rts {
        let out: Vec<String> = rt.seller_schedule(&schedule).iter().map(|p| format!("{p:.2}")).collect();
        println!(
            "sc{}  price {:>7.2}  interval [{:.2}, {:.2}]  unserved {:.2}  output {}",
            rt.scenario + 1,
            rt.price,
            rt.price_range.0,
            rt.price_range.1,
            rt.unserved,
            out.join(" ")
        );
    }
    println!("DA price {:.2}, expected RT price {:.2}", da.duals.energy, expected_rt_price(&system, &rts));
    Ok(())
}
