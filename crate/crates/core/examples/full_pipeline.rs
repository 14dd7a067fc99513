//! All stages of a bundled scenario into a run directory, then a summary of
//! the report.
//!
//! `cargo run --release --example full_pipeline -- configs/scenario_a.json runs/a`

use std::path::PathBuf;

use safe_il_pde::cli::{ExperimentConfig, Report, Run, Stage, REPORT};

fn main() {
    let mut args = std::env::args().skip(1);
    let config = PathBuf::from(args.next().unwrap_or_else(|| "configs/scenario_a.json".into()));
    let out = args.next().map(PathBuf::from);
    let run = ExperimentConfig::load(&config).and_then(|cfg| Run::new(cfg, out, None));
    let run = match run {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    };
    if let Err(e) = Stage::All.run(&run) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
    let report: Report = serde_json::from_str(&std::fs::read_to_string(run.out.join(REPORT)).unwrap()).unwrap();
    println!("scenario {} (n0 = {}, δ = {})", report.scenario, report.n0, report.delta);
    println!("dataset {} states, training converged {} in {} iterations", report.dataset_size, report.training.converged, report.training.iterations);
    println!("certified {}, α* {:?}, remedy {:?}", report.certified, report.alpha_star, report.remedy);
    println!("ROA fraction {:.2}, decay satisfied {}", report.roa_fraction, report.roa_decay_satisfied);
    println!("speedup {:.0}x", report.timing.speedup);
    println!("artifacts in {}", run.out.display());
}
