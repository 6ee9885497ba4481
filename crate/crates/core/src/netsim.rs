//! Seeded channel impairment, the two transport delivery models and the
//! de-jitter playout buffer.
//!
//! Every transmission draws exactly two values from the channel RNG, in this
//! order: a uniform `f64` in `[0, 1)` for loss (lost iff below `loss_rate`),
//! then an integer jitter uniform on `[0, jitter_max_ms]`. The jitter draw
//! happens even for lost packets so that a stream's draws depend only on how
//! many transmissions preceded it.
//!
//! The reliable transport draws first attempts and retransmissions from two
//! independent substreams. First transmissions therefore see identical
//! impairments in both transport modes when the channel seed is shared.

use std::collections::HashSet;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{check_ms, TimeMs};
use crate::rng::{derive_seed, seeded, SimRng};

/// Upper bound on attempts per packet in reliable mode.
pub const MAX_ATTEMPTS: u32 = 1024;

const RETRANSMIT_STREAM: u64 = 0x7265_7472_616e_736d;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("sequence numbers must be contiguous from 1: position {index} holds seq {seq}")]
    NonContiguous { index: usize, seq: u64 },
    #[error("send times must be non-decreasing: seq {seq} sent at {send_ms} after {prev}")]
    NonMonotone {
        seq: u64,
        send_ms: TimeMs,
        prev: TimeMs,
    },
    #[error("seq {seq} still undelivered after {MAX_ATTEMPTS} attempts")]
    RetransmissionLimit { seq: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub base_latency_ms: u64,
    /// Additive jitter is uniform on `[0, jitter_max_ms]`.
    pub jitter_max_ms: u64,
    pub loss_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ChannelConfig {
    pub fn ideal() -> Self {
        Self {
            base_latency_ms: 0,
            jitter_max_ms: 0,
            loss_rate: 0.0,
            seed: 0,
        }
    }

    pub fn violations(&self) -> Vec<(String, String)> {
        let mut v = Vec::new();
        if !(0.0..=1.0).contains(&self.loss_rate) {
            v.push(("channel.loss_rate".into(), "must be within [0, 1]".into()));
        }
        check_ms(&mut v, "channel.base_latency_ms", self.base_latency_ms);
        check_ms(&mut v, "channel.jitter_max_ms", self.jitter_max_ms);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransportMode {
    /// In-order reliable delivery with fixed-timeout retransmission.
    ReliableOrdered { rto_ms: u64 },
    /// Fire-and-forget DR vectors through the de-jitter buffer.
    UnreliableDr,
}

impl TransportMode {
    pub fn label(&self) -> &'static str {
        match self {
            TransportMode::ReliableOrdered { .. } => "reliable",
            TransportMode::UnreliableDr => "unreliable",
        }
    }

    pub fn violations(&self) -> Vec<(String, String)> {
        match self {
            TransportMode::ReliableOrdered { rto_ms: 0 } => {
                vec![("transport.rto_ms".into(), "must be >= 1".into())]
            }
            TransportMode::ReliableOrdered { rto_ms } => {
                let mut v = Vec::new();
                check_ms(&mut v, "transport.rto_ms", *rto_ms);
                v
            }
            TransportMode::UnreliableDr => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatePolicy {
    #[default]
    DeliverLate,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DejitterConfig {
    pub playout_delay_ms: u64,
    #[serde(default)]
    pub late_policy: LatePolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryEvent {
    pub seq: u64,
    pub send_ms: TimeMs,
    /// `None` when the packet was lost.
    pub arrive_ms: Option<TimeMs>,
    /// `None` when lost or dropped by the playout buffer.
    pub deliver_ms: Option<TimeMs>,
    pub late: bool,
    pub retransmissions: u32,
}

/// One impaired channel direction with its own RNG stream.
#[derive(Debug, Clone)]
pub struct Channel {
    cfg: ChannelConfig,
    rng: SimRng,
}

impl Channel {
    pub fn new(cfg: ChannelConfig) -> Self {
        Self {
            cfg,
            rng: seeded(cfg.seed),
        }
    }

    fn with_seed(cfg: ChannelConfig, seed: u64) -> Self {
        Self {
            cfg,
            rng: seeded(seed),
        }
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.cfg
    }

    pub fn transmit(&mut self, send_ms: TimeMs) -> Option<TimeMs> {
        channel_transmit(&self.cfg, &mut self.rng, send_ms)
    }
}

/// Pushes one transmission through the channel; `None` means lost.
pub fn channel_transmit(cfg: &ChannelConfig, rng: &mut SimRng, send_ms: TimeMs) -> Option<TimeMs> {
    let loss_draw: f64 = rng.gen();
    let jitter = rng.gen_range(0..=cfg.jitter_max_ms);
    if loss_draw < cfg.loss_rate {
        None
    } else {
        Some(send_ms + cfg.base_latency_ms + jitter)
    }
}

/// Packet carrier used by the transports. `attempt` is 0 for the first
/// transmission of `seq`.
pub trait Link {
    fn transmit(&mut self, seq: u64, attempt: u32, send_ms: TimeMs) -> Option<TimeMs>;
    fn base_latency_ms(&self) -> u64;
}

/// The seeded channel: first attempts on the channel seed, retransmissions on
/// a derived substream.
#[derive(Debug, Clone)]
pub struct ImpairedLink {
    first: Channel,
    retx: Channel,
}

impl ImpairedLink {
    pub fn new(cfg: ChannelConfig) -> Self {
        Self {
            first: Channel::new(cfg),
            retx: Channel::with_seed(cfg, derive_seed(cfg.seed, RETRANSMIT_STREAM)),
        }
    }
}

impl Link for ImpairedLink {
    fn transmit(&mut self, _seq: u64, attempt: u32, send_ms: TimeMs) -> Option<TimeMs> {
        if attempt == 0 {
            self.first.transmit(send_ms)
        } else {
            self.retx.transmit(send_ms)
        }
    }

    fn base_latency_ms(&self) -> u64 {
        self.first.cfg.base_latency_ms
    }
}

/// Deterministic link for hand-built schedules: fixed latency, per-seq extra
/// delay, and an explicit set of lost `(seq, attempt)` pairs.
#[derive(Debug, Clone, Default)]
pub struct ScriptedLink {
    pub base_latency_ms: u64,
    pub lost: HashSet<(u64, u32)>,
    pub extra_delay: Vec<(u64, u64)>,
}

impl ScriptedLink {
    pub fn new(base_latency_ms: u64) -> Self {
        Self {
            base_latency_ms,
            ..Default::default()
        }
    }

    pub fn lose(mut self, seq: u64, attempt: u32) -> Self {
        self.lost.insert((seq, attempt));
        self
    }

    pub fn delay(mut self, seq: u64, extra_ms: u64) -> Self {
        self.extra_delay.push((seq, extra_ms));
        self
    }
}

impl Link for ScriptedLink {
    fn transmit(&mut self, seq: u64, attempt: u32, send_ms: TimeMs) -> Option<TimeMs> {
        if self.lost.contains(&(seq, attempt)) {
            return None;
        }
        let extra = self
            .extra_delay
            .iter()
            .find(|(s, _)| *s == seq)
            .map_or(0, |(_, d)| *d);
        Some(send_ms + self.base_latency_ms + extra)
    }

    fn base_latency_ms(&self) -> u64 {
        self.base_latency_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DejitterOutcome {
    Deliver { deliver_ms: TimeMs, late: bool },
    Dropped,
}

/// Playout decision for one packet: on-time packets are held until
/// `send + base_latency + playout_delay`.
pub fn dejitter_deliver(
    cfg: &DejitterConfig,
    base_latency_ms: u64,
    send_ms: TimeMs,
    arrive_ms: TimeMs,
) -> DejitterOutcome {
    let playout = send_ms + base_latency_ms + cfg.playout_delay_ms;
    if arrive_ms <= playout {
        DejitterOutcome::Deliver {
            deliver_ms: playout,
            late: false,
        }
    } else {
        match cfg.late_policy {
            LatePolicy::DeliverLate => DejitterOutcome::Deliver {
                deliver_ms: arrive_ms,
                late: true,
            },
            LatePolicy::Drop => DejitterOutcome::Dropped,
        }
    }
}

fn validate_sends(sends: &[(u64, TimeMs)]) -> Result<(), NetError> {
    let mut prev = None;
    for (i, (seq, t)) in sends.iter().enumerate() {
        if *seq != i as u64 + 1 {
            return Err(NetError::NonContiguous {
                index: i,
                seq: *seq,
            });
        }
        if let Some(p) = prev {
            if *t < p {
                return Err(NetError::NonMonotone {
                    seq: *seq,
                    send_ms: *t,
                    prev: p,
                });
            }
        }
        prev = Some(*t);
    }
    Ok(())
}

pub fn reliable_run(
    chan: &ChannelConfig,
    rto_ms: u64,
    sends: &[(u64, TimeMs)],
) -> Result<Vec<DeliveryEvent>, NetError> {
    reliable_run_over(&mut ImpairedLink::new(*chan), rto_ms, sends)
}

/// In-order reliable delivery. A lost attempt is retried `rto_ms` after it
/// was sent; the application sees packet `k` no earlier than packet `k - 1`.
pub fn reliable_run_over<L: Link>(
    link: &mut L,
    rto_ms: u64,
    sends: &[(u64, TimeMs)],
) -> Result<Vec<DeliveryEvent>, NetError> {
    validate_sends(sends)?;
    let mut events = Vec::with_capacity(sends.len());
    let mut prev_deliver = TimeMs::ZERO;
    for &(seq, send_ms) in sends {
        let mut attempt = 0u32;
        let mut attempt_ms = send_ms;
        let arrive = loop {
            if let Some(a) = link.transmit(seq, attempt, attempt_ms) {
                break a;
            }
            attempt += 1;
            if attempt >= MAX_ATTEMPTS {
                return Err(NetError::RetransmissionLimit { seq });
            }
            attempt_ms = attempt_ms + rto_ms;
        };
        let deliver = arrive.max(prev_deliver);
        prev_deliver = deliver;
        events.push(DeliveryEvent {
            seq,
            send_ms,
            arrive_ms: Some(arrive),
            deliver_ms: Some(deliver),
            late: false,
            retransmissions: attempt,
        });
    }
    Ok(events)
}

pub fn unreliable_run(
    chan: &ChannelConfig,
    dejitter: &DejitterConfig,
    sends: &[(u64, TimeMs)],
) -> Result<Vec<DeliveryEvent>, NetError> {
    unreliable_run_over(&mut ImpairedLink::new(*chan), dejitter, sends)
}

/// Single-shot delivery through the playout buffer; losses are final and
/// delivery order follows the buffer, not the sequence.
pub fn unreliable_run_over<L: Link>(
    link: &mut L,
    dejitter: &DejitterConfig,
    sends: &[(u64, TimeMs)],
) -> Result<Vec<DeliveryEvent>, NetError> {
    validate_sends(sends)?;
    let base = link.base_latency_ms();
    Ok(sends
        .iter()
        .map(|&(seq, send_ms)| {
            let arrive_ms = link.transmit(seq, 0, send_ms);
            let (deliver_ms, late) = match arrive_ms {
                None => (None, false),
                Some(a) => match dejitter_deliver(dejitter, base, send_ms, a) {
                    DejitterOutcome::Deliver { deliver_ms, late } => (Some(deliver_ms), late),
                    DejitterOutcome::Dropped => (None, true),
                },
            };
            DeliveryEvent {
                seq,
                send_ms,
                arrive_ms,
                deliver_ms,
                late,
                retransmissions: 0,
            }
        })
        .collect())
}

/// Runs `sends` through whichever transport `mode` names.
pub fn run_transport(
    mode: &TransportMode,
    chan: &ChannelConfig,
    dejitter: &DejitterConfig,
    sends: &[(u64, TimeMs)],
) -> Result<Vec<DeliveryEvent>, NetError> {
    match mode {
        TransportMode::ReliableOrdered { rto_ms } => reliable_run(chan, *rto_ms, sends),
        TransportMode::UnreliableDr => unreliable_run(chan, dejitter, sends),
    }
}

/// Counters derived from a delivery event list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TransportStats {
    pub packets: u64,
    pub transmissions: u64,
    pub lost_transmissions: u64,
    pub arrivals: u64,
    pub delivered: u64,
    pub late: u64,
    pub dropped_late: u64,
}

impl TransportStats {
    pub fn from_events(events: &[DeliveryEvent]) -> Self {
        let mut s = TransportStats {
            packets: events.len() as u64,
            ..Default::default()
        };
        for e in events {
            let attempts = 1 + u64::from(e.retransmissions);
            s.transmissions += attempts;
            // every attempt but the arriving one was lost
            let arrived = u64::from(e.arrive_ms.is_some());
            s.lost_transmissions += attempts - arrived;
            s.arrivals += arrived;
            s.delivered += u64::from(e.deliver_ms.is_some());
            s.late += u64::from(e.late);
            s.dropped_late += u64::from(e.arrive_ms.is_some() && e.deliver_ms.is_none());
        }
        s
    }
}

fn opt(t: Option<TimeMs>) -> String {
    t.map(|t| t.0.to_string()).unwrap_or_default()
}

/// `seq,send_ms,arrive_ms,deliver_ms,late,retransmissions`, empty fields for none.
pub fn write_events_csv<W: Write>(events: &[DeliveryEvent], mut w: W) -> std::io::Result<()> {
    writeln!(w, "seq,send_ms,arrive_ms,deliver_ms,late,retransmissions")?;
    for e in events {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            e.seq,
            e.send_ms.0,
            opt(e.arrive_ms),
            opt(e.deliver_ms),
            e.late,
            e.retransmissions
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chan(base: u64, jitter: u64, loss: f64, seed: u64) -> ChannelConfig {
        ChannelConfig {
            base_latency_ms: base,
            jitter_max_ms: jitter,
            loss_rate: loss,
            seed,
        }
    }

    fn sends(times: &[u64]) -> Vec<(u64, TimeMs)> {
        times
            .iter()
            .enumerate()
            .map(|(i, t)| (i as u64 + 1, TimeMs(*t)))
            .collect()
    }

    fn periodic(n: u64, gap: u64) -> Vec<(u64, TimeMs)> {
        (0..n).map(|i| (i + 1, TimeMs(i * gap))).collect()
    }

    #[test]
    fn transmit_without_randomness() {
        let mut c = Channel::new(chan(50, 0, 0.0, 3));
        assert_eq!(c.transmit(TimeMs(100)), Some(TimeMs(150)));
    }

    #[test]
    fn full_loss_loses_everything() {
        let mut c = Channel::new(chan(50, 20, 1.0, 3));
        assert!((0..1000).all(|i| c.transmit(TimeMs(i)).is_none()));
    }

    #[test]
    fn jitter_stays_in_bounds_and_covers_range() {
        let mut c = Channel::new(chan(10, 5, 0.0, 11));
        let mut seen = [false; 6];
        for i in 0..2000 {
            let a = c.transmit(TimeMs(i)).unwrap().0 - i - 10;
            assert!(a <= 5);
            seen[a as usize] = true;
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn binomial_loss_count() {
        let mut c = Channel::new(chan(0, 0, 0.1, 42));
        let delivered = (0..10_000)
            .filter(|i| c.transmit(TimeMs(*i)).is_some())
            .count();
        assert!((8910..=9090).contains(&delivered), "{delivered}");
    }

    #[test]
    fn dejitter_examples() {
        let d = DejitterConfig {
            playout_delay_ms: 80,
            late_policy: LatePolicy::DeliverLate,
        };
        assert_eq!(
            dejitter_deliver(&d, 50, TimeMs(0), TimeMs(100)),
            DejitterOutcome::Deliver {
                deliver_ms: TimeMs(130),
                late: false
            }
        );
        let d = DejitterConfig {
            playout_delay_ms: 10,
            late_policy: LatePolicy::Drop,
        };
        assert_eq!(
            dejitter_deliver(&d, 50, TimeMs(0), TimeMs(100)),
            DejitterOutcome::Dropped
        );
        let d = DejitterConfig {
            playout_delay_ms: 10,
            late_policy: LatePolicy::DeliverLate,
        };
        assert_eq!(
            dejitter_deliver(&d, 50, TimeMs(0), TimeMs(100)),
            DejitterOutcome::Deliver {
                deliver_ms: TimeMs(100),
                late: true
            }
        );
    }

    #[test]
    fn zero_delay_buffer_is_transparent() {
        let d = DejitterConfig::default();
        for jitter in 0..5u64 {
            let arrive = TimeMs(50 + jitter);
            assert_eq!(
                dejitter_deliver(&d, 50, TimeMs(0), arrive),
                DejitterOutcome::Deliver {
                    deliver_ms: arrive,
                    late: jitter > 0
                }
            );
        }
    }

    #[test]
    fn reliable_lossless_is_send_plus_base() {
        let ev = reliable_run(&chan(50, 0, 0.0, 1), 200, &periodic(20, 33)).unwrap();
        for e in &ev {
            assert_eq!(e.deliver_ms, Some(e.send_ms + 50));
            assert_eq!(e.retransmissions, 0);
        }
    }

    #[test]
    fn reliable_single_loss_blocks_head_of_line() {
        let mut link = ScriptedLink::new(50).lose(2, 0);
        let ev = reliable_run_over(&mut link, 200, &sends(&[0, 100, 200])).unwrap();
        assert_eq!(ev[0].deliver_ms, Some(TimeMs(50)));
        assert_eq!(ev[1].arrive_ms, Some(TimeMs(350)));
        assert_eq!(ev[1].deliver_ms, Some(TimeMs(350)));
        assert_eq!(ev[1].retransmissions, 1);
        assert_eq!(ev[2].arrive_ms, Some(TimeMs(250)));
        assert_eq!(ev[2].deliver_ms, Some(TimeMs(350)));
    }

    #[test]
    fn reliable_double_loss() {
        let mut link = ScriptedLink::new(50).lose(2, 0).lose(2, 1);
        let ev = reliable_run_over(&mut link, 200, &sends(&[0, 100, 200])).unwrap();
        assert_eq!(ev[1].deliver_ms, Some(TimeMs(550)));
        assert_eq!(ev[1].retransmissions, 2);
        assert_eq!(ev[2].deliver_ms, Some(TimeMs(550)));
    }

    #[test]
    fn reliable_gives_up_on_dead_channel() {
        let err = reliable_run(&chan(10, 0, 1.0, 0), 100, &sends(&[0])).unwrap_err();
        assert_eq!(err, NetError::RetransmissionLimit { seq: 1 });
    }

    #[test]
    fn input_validation() {
        let bad = vec![(1, TimeMs(0)), (3, TimeMs(10))];
        assert_eq!(
            reliable_run(&ChannelConfig::ideal(), 10, &bad),
            Err(NetError::NonContiguous { index: 1, seq: 3 })
        );
        let bad = vec![(1, TimeMs(10)), (2, TimeMs(5))];
        assert!(matches!(
            unreliable_run(&ChannelConfig::ideal(), &DejitterConfig::default(), &bad),
            Err(NetError::NonMonotone { .. })
        ));
        assert!(reliable_run(&ChannelConfig::ideal(), 10, &[])
            .unwrap()
            .is_empty());
    }

    #[test]
    fn lossless_modes_coincide() {
        let c = chan(70, 0, 0.0, 5);
        let s = periodic(50, 20);
        let r = reliable_run(&c, 300, &s).unwrap();
        let u = unreliable_run(&c, &DejitterConfig::default(), &s).unwrap();
        assert_eq!(r, u);
    }

    #[test]
    fn unreliable_full_loss_delivers_nothing() {
        let ev = unreliable_run(
            &chan(70, 10, 1.0, 5),
            &DejitterConfig::default(),
            &periodic(100, 10),
        )
        .unwrap();
        assert!(ev
            .iter()
            .all(|e| e.deliver_ms.is_none() && e.arrive_ms.is_none()));
    }

    #[test]
    fn unreliable_can_reorder() {
        let mut link = ScriptedLink::new(10).delay(1, 100);
        let d = DejitterConfig::default();
        let ev = unreliable_run_over(&mut link, &d, &sends(&[0, 5])).unwrap();
        assert!(ev[0].deliver_ms > ev[1].deliver_ms);
        assert!(ev[0].late);
    }

    #[test]
    fn late_drop_policy_counts() {
        let d = DejitterConfig {
            playout_delay_ms: 5,
            late_policy: LatePolicy::Drop,
        };
        let ev = unreliable_run(&chan(20, 40, 0.0, 9), &d, &periodic(500, 10)).unwrap();
        let st = TransportStats::from_events(&ev);
        assert!(st.dropped_late > 0);
        assert_eq!(st.dropped_late, st.late);
        assert_eq!(st.delivered + st.dropped_late, st.arrivals);
    }

    #[test]
    fn first_transmissions_match_across_modes() {
        let c = chan(100, 40, 0.2, 77);
        let s = periodic(300, 50);
        let r = reliable_run(&c, 400, &s).unwrap();
        let u = unreliable_run(&c, &DejitterConfig::default(), &s).unwrap();
        for (a, b) in r.iter().zip(&u) {
            if b.arrive_ms.is_some() {
                assert_eq!(a.retransmissions, 0);
                assert_eq!(a.arrive_ms, b.arrive_ms);
            } else {
                assert!(a.retransmissions >= 1);
            }
        }
    }

    #[test]
    fn csv_layout() {
        let ev = vec![
            DeliveryEvent {
                seq: 1,
                send_ms: TimeMs(0),
                arrive_ms: Some(TimeMs(50)),
                deliver_ms: Some(TimeMs(60)),
                late: false,
                retransmissions: 0,
            },
            DeliveryEvent {
                seq: 2,
                send_ms: TimeMs(10),
                arrive_ms: None,
                deliver_ms: None,
                late: false,
                retransmissions: 0,
            },
        ];
        let mut buf = Vec::new();
        write_events_csv(&ev, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "seq,send_ms,arrive_ms,deliver_ms,late,retransmissions\n1,0,50,60,false,0\n2,10,,,false,0\n"
        );
    }

    proptest! {
        #[test]
        fn runs_are_deterministic(seed in any::<u64>(), loss in 0.0f64..0.5, jitter in 0u64..100) {
            let c = chan(30, jitter, loss, seed);
            let s = periodic(200, 25);
            prop_assert_eq!(reliable_run(&c, 150, &s).unwrap(), reliable_run(&c, 150, &s).unwrap());
            let d = DejitterConfig { playout_delay_ms: 20, late_policy: LatePolicy::DeliverLate };
            prop_assert_eq!(unreliable_run(&c, &d, &s).unwrap(), unreliable_run(&c, &d, &s).unwrap());
        }

        #[test]
        fn reliable_is_ordered_and_complete(seed in any::<u64>(), loss in 0.0f64..0.6, jitter in 0u64..200) {
            let ev = reliable_run(&chan(40, jitter, loss, seed), 120, &periodic(150, 15)).unwrap();
            prop_assert_eq!(ev.len(), 150);
            prop_assert!(ev.iter().all(|e| e.deliver_ms.is_some()));
            prop_assert!(ev.windows(2).all(|w| w[0].deliver_ms <= w[1].deliver_ms));
            for e in &ev {
                prop_assert!(e.send_ms <= e.arrive_ms.unwrap() && e.arrive_ms <= e.deliver_ms);
            }
        }

        #[test]
        fn conservation(seed in any::<u64>(), loss in 0.0f64..0.6, reliable in any::<bool>()) {
            let c = chan(40, 30, loss, seed);
            let s = periodic(200, 10);
            let ev = if reliable {
                reliable_run(&c, 100, &s).unwrap()
            } else {
                unreliable_run(&c, &DejitterConfig { playout_delay_ms: 10, late_policy: LatePolicy::DeliverLate }, &s).unwrap()
            };
            let st = TransportStats::from_events(&ev);
            prop_assert_eq!(st.arrivals + st.lost_transmissions, st.transmissions);
        }

        #[test]
        fn sufficient_playout_delay_removes_jitter(seed in any::<u64>(), jitter in 0u64..150, extra in 0u64..50, gaps in prop::collection::vec(0u64..40, 1..200)) {
            let mut t = 0;
            let s: Vec<_> = gaps.iter().enumerate().map(|(i, g)| { t += g; (i as u64 + 1, TimeMs(t)) }).collect();
            let d = DejitterConfig { playout_delay_ms: jitter + extra, late_policy: LatePolicy::Drop };
            let ev = unreliable_run(&chan(60, jitter, 0.0, seed), &d, &s).unwrap();
            prop_assert!(ev.iter().all(|e| !e.late));
            for (w, sw) in ev.windows(2).zip(s.windows(2)) {
                prop_assert_eq!(w[1].deliver_ms.unwrap().0 - w[0].deliver_ms.unwrap().0, sw[1].1 .0 - sw[0].1 .0);
            }
        }
    }
}
