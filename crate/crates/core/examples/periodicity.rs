//! Autocorrelation and period detection on aggregate arrival counts, with
//! and without the action model and global events.
//!
//!     cargo run --release --example periodicity

use drsync::analysis::{acf, autocorr, detect_period, CountSeries};
use drsync::workload::{generate_trace, preset, Direction};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let full = preset("mmorpg")?;
    let mut no_events = full.clone();
    no_events.global_event = None;
    let periodic = full.strictly_periodic();

    for (label, profile) in [
        ("full model", &full),
        ("no global events", &no_events),
        ("strictly periodic", &periodic),
    ] {
        let trace = generate_trace(profile, 50, 300_000, 11)?;
        let s100 = CountSeries::from_trace(&trace, Direction::ClientToServer, 100, None)?;
        let per_tick = CountSeries::from_trace(
            &trace,
            Direction::ClientToServer,
            profile.tick_period_ms,
            None,
        )?;
        let r = acf(&s100)?;
        println!("{label}:");
        println!(
            "  100 ms buckets, lags 1..=4: {:?}",
            r[1..=4]
                .iter()
                .map(|v| (v * 1000.0).round() / 1000.0)
                .collect::<Vec<_>>()
        );
        match detect_period(&s100)? {
            Some(p) => println!(
                "  period {} buckets ({} ms), strength {:.3}",
                p.lag,
                p.lag as u64 * 100,
                p.strength
            ),
            None => println!("  no period"),
        }
        if let Ok(r1) = autocorr(&per_tick, 1) {
            println!("  per-tick lag-1 autocorrelation {r1:.3}");
        }
        let event_lag = 30_000 / profile.tick_period_ms as usize;
        match autocorr(&per_tick, event_lag) {
            Ok(r) => println!("  per-tick lag-{event_lag} (30 s) autocorrelation {r:.3}"),
            Err(e) => println!("  per-tick lag-{event_lag}: {e}"),
        }
    }
    Ok(())
}
