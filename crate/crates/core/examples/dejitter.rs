//! The playout buffer: jittery arrivals go in, evenly spaced deliveries come
//! out when the playout delay covers the jitter. A shorter delay lets some
//! packets through late.
//!
//!     cargo run --example dejitter

use drsync::model::TimeMs;
use drsync::netsim::{unreliable_run, ChannelConfig, DejitterConfig, LatePolicy, TransportStats};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let chan = ChannelConfig {
        base_latency_ms: 60,
        jitter_max_ms: 80,
        loss_rate: 0.0,
        seed: 7,
    };
    let sends: Vec<(u64, TimeMs)> = (1..=1000).map(|s| (s, TimeMs(s * 50))).collect();

    println!(
        "{:>8} {:>6} {:>8} {:>14}",
        "delay_ms", "late", "dropped", "gap_spread_ms"
    );
    for delay in [0, 20, 40, 60, 80, 120] {
        for policy in [LatePolicy::DeliverLate, LatePolicy::Drop] {
            let dj = DejitterConfig {
                playout_delay_ms: delay,
                late_policy: policy,
            };
            let events = unreliable_run(&chan, &dj, &sends)?;
            let stats = TransportStats::from_events(&events);
            let delivered: Vec<u64> = events
                .iter()
                .filter_map(|e| e.deliver_ms.map(|t| t.0))
                .collect();
            let gaps: Vec<i64> = delivered
                .windows(2)
                .map(|w| w[1] as i64 - w[0] as i64)
                .collect();
            let spread = gaps.iter().max().unwrap_or(&0) - gaps.iter().min().unwrap_or(&0);
            println!(
                "{delay:>8} {:>6} {:>8} {spread:>14}   {policy:?}",
                stats.late, stats.dropped_late
            );
        }
    }
    Ok(())
}
