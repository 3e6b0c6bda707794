//! Settles the FO and IR designs for fleet 6 and shows where the operator
//! is left holding cash.

use flexmarket::da_fo::solve_da_fo;
use flexmarket::da_ir::solve_da_ir_with_virtual_equilibrium;
use flexmarket::io::reference_system;
use flexmarket::rt::solve_rt_fo;
use flexmarket::settlement::{gross_margins, settle_fo_run, settle_ir_run, Component, Stage, ISO};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let system = reference_system().with_fleet("fleet6")?;
    let da = solve_da_fo(&system)?;
    let rts = solve_rt_fo(&system, &da)?;
    let (fo, exercises) = settle_fo_run(&system, &da, &rts);
    let ir = settle_ir_run(&system, &solve_da_ir_with_virtual_equilibrium(&system)?);

    for ex in &exercises {
        println!("sc{} price {:.2}: exercised up {:.2}, down {:.2}", ex.scenario + 1, ex.price, ex.exercised_up(), ex.exercised_down());
    }
    println!();
    for p in &fo.participants {
        println!("{p:<8} FO expected {:>9.2}   IR expected {:>9.2}", fo.expected(p, Component::Fo), ir.expected(p, Component::Ir));
    }
    let worst = (0..fo.scenario_count())
        .map(|s| fo.amount(ISO, Stage::Rt, Some(s), Component::Fo).abs())
        .fold(fo.amount(ISO, Stage::Da, None, Component::Fo).abs(), f64::max);
    println!("\nFO operator position, worst cell: {worst:.2e}");

    let margins = gross_margins(&fo);
    for (p, w) in margins.participants.iter().zip(&margins.weighted) {
        println!("{p:<8} weighted gross margin {w:>10.2}");
    }
    std::fs::write(std::env::temp_dir().join("fleet6_fo_ledger.csv"), fo.to_csv())?;
    Ok(())
}
