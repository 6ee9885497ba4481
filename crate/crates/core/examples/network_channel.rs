//! The impaired channel on its own: loss and jitter statistics, then the two
//! transports over a hand-written link that drops one packet, showing the
//! head-of-line stall of in-order delivery.
//!
//!     cargo run --example network_channel

use drsync::model::TimeMs;
use drsync::netsim::{
    reliable_run, reliable_run_over, unreliable_run_over, Channel, ChannelConfig, DejitterConfig,
    ScriptedLink, TransportStats,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ChannelConfig {
        base_latency_ms: 100,
        jitter_max_ms: 40,
        loss_rate: 0.1,
        seed: 42,
    };
    let mut chan = Channel::new(cfg);
    let arrivals: Vec<u64> = (0..10_000u64)
        .filter_map(|i| chan.transmit(TimeMs(i * 10)).map(|a| a.0 - i * 10))
        .collect();
    let mean = arrivals.iter().sum::<u64>() as f64 / arrivals.len() as f64;
    println!(
        "10000 packets at 10% loss: {} delivered, mean one-way delay {mean:.1} ms",
        arrivals.len()
    );

    let sends: Vec<(u64, TimeMs)> = (1..=1000).map(|s| (s, TimeMs(s * 50))).collect();
    let events = reliable_run(&cfg, 400, &sends)?;
    let stats = TransportStats::from_events(&events);
    println!(
        "reliable, 1000 packets: {} transmissions, {} lost attempts, all {} delivered in order",
        stats.transmissions, stats.lost_transmissions, stats.delivered
    );

    // packet 2 loses its first attempt; packets 3 and 4 arrive on time but wait
    let sends: Vec<(u64, TimeMs)> = (1..=5).map(|s| (s, TimeMs(s * 50))).collect();
    let link = || ScriptedLink::new(100).lose(2, 0);
    let reliable = reliable_run_over(&mut link(), 400, &sends)?;
    let unreliable = unreliable_run_over(&mut link(), &DejitterConfig::default(), &sends)?;
    println!("\nseq  send  reliable_deliver  unreliable_deliver");
    for (r, u) in reliable.iter().zip(&unreliable) {
        let show = |t: Option<TimeMs>| t.map_or("lost".to_string(), |t| t.0.to_string());
        println!(
            "{:>3} {:>5} {:>17} {:>19}",
            r.seq,
            r.send_ms.0,
            show(r.deliver_ms),
            show(u.deliver_ms)
        );
    }
    Ok(())
}
