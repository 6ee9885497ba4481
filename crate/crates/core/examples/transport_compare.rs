//! Reliable in-order transport against unreliable DR vectors behind a
//! playout buffer, paired over ten seeds on the same lossy channel.
//!
//!     cargo run --release --example transport_compare

use drsync::scenario::{comparison_scenario, run_compare, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seeds: Vec<u64> = (1..=10).collect();
    for heartbeat in [Some(100), None] {
        let mut cfg: ScenarioConfig = comparison_scenario();
        cfg.protocol.heartbeat_ms = heartbeat;
        let cmp = run_compare(&cfg, &seeds)?;
        println!("heartbeat {heartbeat:?}, rto {} ms", cmp.rto_ms);
        println!(
            "{:>5} {:>10} {:>10} {:>10}",
            "seed", "reliable", "unreliable", "diff"
        );
        for r in &cmp.rows {
            println!(
                "{:>5} {:>10.4} {:>10.4} {:>+10.4}",
                r.seed, r.reliable.mean, r.unreliable.mean, r.mean_diff
            );
        }
        println!(
            "unreliable lower in {}/{} seeds, mean difference {:+.4}\n",
            cmp.unreliable_wins,
            cmp.rows.len(),
            cmp.mean_of_diffs
        );
    }
    Ok(())
}
