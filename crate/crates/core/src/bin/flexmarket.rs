use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flexmarket::report::{load_system, run_and_report, table_alt_optima, csv_alt_optima, Design, RunManifest};
use flexmarket::verify::{alt_optima_study, randomized_convergence_harness, RandomDrawSpec};

#[derive(Parser)]
#[command(name = "flexmarket", version, about = "Clear, settle and verify flexibility option and imbalance reserve markets")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args, Clone)]
struct Common {
    /// System file (the bundled six-fleet system when omitted)
    #[arg(long)]
    system: Option<PathBuf>,
    /// Fleet name; repeat for several, all fleets when omitted
    #[arg(long)]
    fleet: Vec<String>,
    /// Output directory for tables, CSV and the run record
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for the randomized sweep
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Override, e.g. `--set d1=170` or `--set strike_up.CT2=40`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Verb {
    /// Parse and validate a system file
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Run one design and print its tables
    Run {
        #[command(flatten)]
        common: Common,
        /// fo, ir or both
        #[arg(long, default_value = "fo")]
        design: String,
    },
    /// Run both designs side by side
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Randomized DA/RT price convergence sweep
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Number of draws
        #[arg(long, default_value_t = 1000)]
        draws: usize,
    },
    /// Compare FO baskets and RT schedules across alternative-optima weights
    StudyM {
        #[command(flatten)]
        common: Common,
        /// Weights to compare
        #[arg(long = "m", value_delimiter = ',', default_value = "0.01,0")]
        m: Vec<f64>,
    },
}

fn manifest(common: &Common, design: Design) -> RunManifest {
    RunManifest {
        system: common.system.clone(),
        design,
        fleets: common.fleet.clone(),
        out: common.out.clone(),
        seed: common.seed,
        overrides: common.set.clone(),
    }
}

fn write_out(dir: &Option<PathBuf>, files: &[(&str, &str)]) -> Result<(), String> {
    let Some(dir) = dir else { return Ok(()) };
    std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    for (name, body) in files {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| format!("{}: {e}", p.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool, String> {
    match cli.verb {
        Verb::Validate { common } => {
            let system = load_system(&manifest(&common, Design::Fo)).map_err(|e| e.to_string())?;
            println!(
                "ok: {} generators, {} uncertain resources, {} scenarios, fleets [{}]",
                system.generators.len(),
                system.buyers.len(),
                system.scenario_count(),
                system.fleet_names().join(" ")
            );
            Ok(true)
        }
        Verb::Run { common, design } => report(&manifest(&common, design.parse().map_err(|e: flexmarket::report::RunError| e.to_string())?)),
        Verb::Compare { common } => report(&manifest(&common, Design::Both)),
        Verb::Sweep { common, draws } => {
            let m = manifest(&common, Design::Fo);
            let system = load_system(&m).map_err(|e| e.to_string())?;
            let base = match common.fleet.first() {
                Some(f) => system.with_fleet(f).map_err(|e| e.to_string())?,
                None => system,
            };
            let summary = randomized_convergence_harness(&base, RandomDrawSpec { seed: common.seed, draws });
            print!("seed {}\n{}", common.seed, summary.to_text());
            write_out(&common.out, &[("sweep.csv", &summary.to_csv()), ("sweep_summary.txt", &summary.to_text())])?;
            Ok(summary.converged_fraction() >= 0.99 && summary.kkt_ok == summary.draws)
        }
        Verb::StudyM { common, m } => {
            let man = manifest(&common, Design::Fo);
            let system = load_system(&man).map_err(|e| e.to_string())?;
            let fleets = if common.fleet.is_empty() { vec!["fleet6".to_string()] } else { common.fleet.clone() };
            let mut ok = true;
            for f in &fleets {
                let sys = system.with_fleet(f).map_err(|e| e.to_string())?;
                let study = alt_optima_study(&sys, &m).map_err(|e| format!("{f}: {e}"))?;
                let table = table_alt_optima(f, &study, 0).render();
                println!("{table}");
                println!(
                    "core objective spread {:.4}, RT schedule spread {:.4}\n",
                    study.core_objective_spread(),
                    study.schedule_spread()
                );
                ok &= study.core_objective_spread() <= 0.1 && study.schedule_spread() <= 0.05;
                write_out(
                    &common.out,
                    &[(&format!("alt_optima_{f}.txt"), &table), (&format!("alt_optima_{f}.csv"), &csv_alt_optima(&study))],
                )?;
            }
            Ok(ok)
        }
    }
}

fn report(m: &RunManifest) -> Result<bool, String> {
    let bundle = run_and_report(m).map_err(|e| e.to_string())?;
    print!("{}", bundle.text());
    for f in &bundle.failures {
        eprintln!("hard invariant failure: {f}");
    }
    Ok(bundle.failures.is_empty())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
