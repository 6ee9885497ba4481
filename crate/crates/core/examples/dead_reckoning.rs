//! Sender and receiver of the dead-reckoning protocol over a scripted path,
//! with a perfect network. Shows how the threshold trades update count for
//! rendering error.
//!
//!     cargo run --example dead_reckoning

use drsync::model::{EntityId, TimeMs, TrajectoryScript, Vec3};
use drsync::protocol::{compute_export_error, ProtocolConfig, ReceiverState, SenderState};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // a square lap followed by a climb
    let script = TrajectoryScript::new(vec![
        (TimeMs(0), Vec3::new(0.0, 0.0, 0.0)),
        (TimeMs(4_000), Vec3::new(40.0, 0.0, 0.0)),
        (TimeMs(8_000), Vec3::new(40.0, 40.0, 0.0)),
        (TimeMs(12_000), Vec3::new(0.0, 40.0, 0.0)),
        (TimeMs(16_000), Vec3::new(0.0, 0.0, 0.0)),
        (TimeMs(20_000), Vec3::new(0.0, 0.0, 25.0)),
    ])?;
    let entity = EntityId(1);

    println!(
        "{:>9} {:>6} {:>9} {:>9}",
        "threshold", "sends", "mean_err", "max_err"
    );
    for threshold in [0.1, 0.5, 1.0, 2.0, 5.0] {
        let cfg = ProtocolConfig {
            threshold,
            tick_ms: 50,
            ..ProtocolConfig::default()
        };
        let mut sender = SenderState::new(entity);
        let mut receiver = ReceiverState::default();
        let (mut truth, mut rendered) = (Vec::new(), Vec::new());
        let mut sends = 0;
        let mut t = script.start();
        while t <= script.end() {
            let p = script.sample(t)?;
            if let Some(dr) = sender.tick(&cfg, p, t)? {
                // zero latency: the receiver sees the update in the same tick
                receiver.apply(dr);
                sends += 1;
            }
            truth.push((t, p));
            rendered.push((t, receiver.render(t)));
            t = t + cfg.tick_ms;
        }
        let s = compute_export_error(entity, &truth, &rendered)?.summary();
        println!("{threshold:>9} {sends:>6} {:>9.4} {:>9.4}", s.mean, s.max);
        assert!(s.max <= threshold);
    }
    Ok(())
}
