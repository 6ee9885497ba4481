//! Synthetic MMORPG and FPS traffic and the statistics the analyzer reports
//! for it: packet sizes, per-client bandwidth, header and ack overhead.
//!
//!     cargo run --release --example workload_traffic

use drsync::analysis::{compute_stats, interarrival_stats};
use drsync::workload::{generate_trace, preset, Direction};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (name, clients) in [("mmorpg", 50), ("fps", 16)] {
        let profile = preset(name)?;
        let trace = generate_trace(&profile, clients, 600_000, 1)?;
        println!(
            "{name}: {clients} clients, 600 s, {} records",
            trace.records.len()
        );
        for d in [Direction::ClientToServer, Direction::ServerToClient] {
            let s = compute_stats(&trace, d)?;
            println!(
                "  {d}: {:>8} pkts  <71B {:>6.2}%  {:>7.0} bit/s per client  headers {:>5.1}%  acks {:>5.1}% of bytes",
                s.packets,
                100.0 * s.fraction_below(71),
                s.mean_client_bandwidth_bps,
                100.0 * s.header_byte_fraction,
                100.0 * s.ack_byte_fraction
            );
        }
        let ia = interarrival_stats(&trace, 0, Direction::ClientToServer)?;
        println!(
            "  client 0 upstream inter-arrival: mean {:.1} ms, sd {:.1} ms, p95 {} ms",
            ia.mean_ms, ia.stddev_ms, ia.p95_ms
        );
    }
    println!(
        "\nmmorpg profile as JSON:\n{}",
        serde_json::to_string_pretty(&preset("mmorpg")?)?
    );
    Ok(())
}
