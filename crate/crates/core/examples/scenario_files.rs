//! A complete run driven by a JSON config, writing CSV and JSON outputs to a
//! directory, then reading the error CSV back to check the summary.
//!
//!     cargo run --example scenario_files [output_dir]

use std::path::PathBuf;

use drsync::scenario::{comparison_scenario, run_simulation, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("drsync-scenario"));

    let json = serde_json::to_string_pretty(&comparison_scenario())?;
    println!("config:\n{json}\n");
    let mut cfg = ScenarioConfig::from_json(&json)?;
    cfg.transport = drsync::netsim::TransportMode::UnreliableDr;
    cfg.duration_ms = 60_000;
    cfg.output_dir = Some(out.clone());

    let summary = run_simulation(&cfg)?;
    println!("summary:\n{}", serde_json::to_string_pretty(&summary)?);

    let mut errors = Vec::new();
    let mut rdr = csv::Reader::from_path(out.join("errors.csv"))?;
    for rec in rdr.records() {
        errors.push(rec?[2].parse::<f64>()?);
    }
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    println!(
        "\n{} error samples in {}, mean {mean}",
        errors.len(),
        out.display()
    );
    Ok(())
}
