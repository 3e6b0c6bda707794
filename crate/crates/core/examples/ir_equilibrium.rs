//! Day-ahead energy and imbalance reserve clearing with the virtual bidder
//! position found by interval bisection.

use flexmarket::da_ir::solve_da_ir_with_virtual_equilibrium;
use flexmarket::io::reference_system;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let system = reference_system();
    for fleet in system.fleet_names() {
        let sys = system.with_fleet(&fleet)?;
        let ir = solve_da_ir_with_virtual_equilibrium(&sys)?;
        let prices: Vec<String> = ir.rt.iter().map(|r| format!("{:.0}", r.price)).collect();
        println!(
            "{fleet}: cost {:>7.2}  virtual {:>5.2}  DA {:>5.2}  RT [{}]  reserve up {:.2} down {:.2}  converged {}",
            ir.system_cost(&sys),
            ir.virtual_supply,
            ir.energy_price,
            prices.join(" "),
            ir.reserve_up_price,
            ir.reserve_down_price,
            ir.converged
        );
    }
    Ok(())
}
