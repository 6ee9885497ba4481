//! Sender and receiver state machines for DR vector exchange, and the export
//! error metric comparing sender truth with receiver-rendered positions.
//!
//! The sender samples the true position every tick and emits a new
//! [`DrVector`] only when the position the receivers would extrapolate has
//! drifted from the truth by more than the configured threshold. Receivers
//! keep the newest vector per entity and extrapolate from it.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{check_ms, deviation, extrapolate, DrVector, EntityId, TimeMs, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("clock went backwards: tick at {t} after {last}")]
    Clock { t: TimeMs, last: TimeMs },
    #[error("true position is not finite at {0}")]
    NonFinite(TimeMs),
    #[error("series misaligned at index {index}: {detail}")]
    Alignment { index: usize, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    /// Deviation (world units) that triggers a new DR vector.
    pub threshold: f64,
    pub tick_ms: u64,
    #[serde(default)]
    pub min_send_interval_ms: u64,
    /// Refresh: also send when this long has passed since the last DR vector.
    #[serde(default)]
    pub heartbeat_ms: Option<u64>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            threshold: 1.0,
            tick_ms: 50,
            min_send_interval_ms: 0,
            heartbeat_ms: None,
        }
    }
}

impl ProtocolConfig {
    /// Returns the names of violated fields with a reason each.
    pub fn violations(&self) -> Vec<(String, String)> {
        let mut v = Vec::new();
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            v.push((
                "protocol.threshold".into(),
                "must be finite and >= 0".into(),
            ));
        }
        if self.tick_ms < 1 {
            v.push(("protocol.tick_ms".into(), "must be >= 1".into()));
        }
        check_ms(&mut v, "protocol.tick_ms", self.tick_ms);
        check_ms(
            &mut v,
            "protocol.min_send_interval_ms",
            self.min_send_interval_ms,
        );
        if let Some(h) = self.heartbeat_ms {
            check_ms(&mut v, "protocol.heartbeat_ms", h);
        }
        if self.heartbeat_ms == Some(0) {
            v.push((
                "protocol.heartbeat_ms".into(),
                "must be >= 1 when set".into(),
            ));
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SenderState {
    pub entity_id: EntityId,
    pub last_sent: Option<DrVector>,
    /// True position at the previous tick, for the finite-difference velocity.
    pub prev_true_pos: Option<Vec3>,
    pub next_seq: u64,
    last_tick: Option<TimeMs>,
}

impl SenderState {
    pub fn new(entity_id: EntityId) -> Self {
        Self {
            entity_id,
            last_sent: None,
            prev_true_pos: None,
            next_seq: 1,
            last_tick: None,
        }
    }

    /// A fresh sender whose first velocity estimate is taken against
    /// `prev_pos` rather than zero.
    pub fn with_velocity_reference(entity_id: EntityId, prev_pos: Vec3) -> Self {
        Self {
            prev_true_pos: Some(prev_pos),
            ..Self::new(entity_id)
        }
    }

    /// Processes one sampling tick; returns the DR vector to transmit, if any.
    pub fn tick(
        &mut self,
        cfg: &ProtocolConfig,
        true_pos: Vec3,
        t: TimeMs,
    ) -> Result<Option<DrVector>, ProtocolError> {
        if let Some(last) = self.last_tick {
            if t <= last {
                return Err(ProtocolError::Clock { t, last });
            }
        }
        if !true_pos.is_finite() {
            return Err(ProtocolError::NonFinite(t));
        }

        let send = match &self.last_sent {
            None => true,
            Some(last) => {
                // t > last.t_sent is guaranteed by the clock check
                let predicted = extrapolate(last, t).expect("monotone clock");
                let since = t.0 - last.t_sent.0;
                let stale = cfg.heartbeat_ms.is_some_and(|h| since >= h);
                (stale || deviation(true_pos, predicted) > cfg.threshold)
                    && since >= cfg.min_send_interval_ms
            }
        };

        let velocity = match self.prev_true_pos {
            Some(prev) => (true_pos - prev) * (1000.0 / cfg.tick_ms as f64),
            None => Vec3::ZERO,
        };
        self.prev_true_pos = Some(true_pos);
        self.last_tick = Some(t);

        if !send {
            return Ok(None);
        }
        let dr = DrVector {
            entity_id: self.entity_id,
            seq: self.next_seq,
            t_sent: t,
            position: true_pos,
            velocity,
        };
        self.next_seq += 1;
        self.last_sent = Some(dr);
        Ok(Some(dr))
    }
}

/// Receiver view of a single remote entity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReceiverState {
    pub latest: Option<DrVector>,
}

impl ReceiverState {
    /// Newest-wins: accepts `dr` iff nothing is held yet or its seq is higher.
    pub fn apply(&mut self, dr: DrVector) -> bool {
        match &self.latest {
            Some(cur) if dr.seq <= cur.seq => false,
            _ => {
                self.latest = Some(dr);
                true
            }
        }
    }

    pub fn render(&self, t: TimeMs) -> Option<Vec3> {
        self.latest
            .as_ref()
            .map(|dr| extrapolate(dr, t.max(dr.t_sent)).expect("clamped to t_sent"))
    }
}

/// Receiver tracking any number of entities.
#[derive(Debug, Clone, Default)]
pub struct Receiver {
    entities: BTreeMap<EntityId, ReceiverState>,
}

impl Receiver {
    pub fn apply(&mut self, dr: DrVector) -> bool {
        self.entities.entry(dr.entity_id).or_default().apply(dr)
    }

    pub fn render(&self, entity: EntityId, t: TimeMs) -> Option<Vec3> {
        self.entities.get(&entity).and_then(|s| s.render(t))
    }

    pub fn state(&self, entity: EntityId) -> Option<&ReceiverState> {
        self.entities.get(&entity)
    }
}

/// Sender truth vs. receiver rendering, per tick and aggregated.
#[derive(Debug, Clone, PartialEq)]
pub struct ExportErrorReport {
    pub series: BTreeMap<EntityId, Vec<(TimeMs, f64)>>,
    pub mean: f64,
    pub max: f64,
    pub p95: f64,
    pub samples_count: usize,
    /// Ticks excluded because nothing had been rendered yet.
    pub warmup_ticks: usize,
    pub sends: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub mean: f64,
    pub max: f64,
    pub p95: f64,
    pub samples: usize,
    pub warmup_ticks: usize,
    pub sends: u64,
}

/// Nearest-rank percentile of an unsorted sample; 0 when empty.
pub fn nearest_rank(values: &[f64], pct: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl ExportErrorReport {
    /// Builds a report, computing aggregates over the series in entity order,
    /// then time order.
    pub fn from_series(
        series: BTreeMap<EntityId, Vec<(TimeMs, f64)>>,
        warmup_ticks: usize,
        sends: u64,
    ) -> Self {
        let errors: Vec<f64> = series.values().flatten().map(|(_, e)| *e).collect();
        let n = errors.len();
        let sum: f64 = errors.iter().sum();
        let mean = if n == 0 { 0.0 } else { sum / n as f64 };
        let max = errors.iter().copied().fold(0.0, f64::max);
        let p95 = nearest_rank(&errors, 95.0);
        Self {
            series,
            mean,
            max,
            p95,
            samples_count: n,
            warmup_ticks,
            sends,
        }
    }

    /// Combines per-entity reports into one.
    pub fn merge(reports: impl IntoIterator<Item = ExportErrorReport>) -> Self {
        let mut series = BTreeMap::new();
        let (mut warmup, mut sends) = (0, 0);
        for r in reports {
            warmup += r.warmup_ticks;
            sends += r.sends;
            for (id, s) in r.series {
                series.entry(id).or_insert_with(Vec::new).extend(s);
            }
        }
        Self::from_series(series, warmup, sends)
    }

    pub fn with_sends(mut self, sends: u64) -> Self {
        self.sends = sends;
        self
    }

    pub fn summary(&self) -> ErrorSummary {
        ErrorSummary {
            mean: self.mean,
            max: self.max,
            p95: self.p95,
            samples: self.samples_count,
            warmup_ticks: self.warmup_ticks,
            sends: self.sends,
        }
    }

    /// `t_ms,entity_id,error` rows in entity then time order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t_ms,entity_id,error")?;
        for (id, s) in &self.series {
            for (t, e) in s {
                writeln!(w, "{},{},{}", t.0, id.0, e)?;
            }
        }
        Ok(())
    }
}

/// Compares a true path against what the receiver rendered at the same ticks.
pub fn compute_export_error(
    entity: EntityId,
    true_series: &[(TimeMs, Vec3)],
    rendered_series: &[(TimeMs, Option<Vec3>)],
) -> Result<ExportErrorReport, ProtocolError> {
    if true_series.len() != rendered_series.len() {
        return Err(ProtocolError::Alignment {
            index: true_series.len().min(rendered_series.len()),
            detail: format!("length {} vs {}", true_series.len(), rendered_series.len()),
        });
    }
    let mut errors = Vec::with_capacity(true_series.len());
    let mut warmup = 0;
    for (i, ((tt, truth), (tr, rendered))) in true_series.iter().zip(rendered_series).enumerate() {
        if tt != tr {
            return Err(ProtocolError::Alignment {
                index: i,
                detail: format!("true tick {tt} vs rendered tick {tr}"),
            });
        }
        match rendered {
            Some(r) => errors.push((*tt, deviation(*truth, *r))),
            None => warmup += 1,
        }
    }
    Ok(ExportErrorReport::from_series(
        BTreeMap::from([(entity, errors)]),
        warmup,
        0,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TrajectoryScript;
    use proptest::prelude::*;

    const E: EntityId = EntityId(7);

    fn cfg(threshold: f64, tick_ms: u64) -> ProtocolConfig {
        ProtocolConfig {
            threshold,
            tick_ms,
            min_send_interval_ms: 0,
            heartbeat_ms: None,
        }
    }

    #[test]
    fn first_tick_always_sends_seq_one() {
        let mut s = SenderState::new(E);
        let dr = s
            .tick(&cfg(100.0, 10), Vec3::new(5.0, 5.0, 5.0), TimeMs(40))
            .unwrap()
            .unwrap();
        assert_eq!(dr.seq, 1);
        assert_eq!(dr.entity_id, E);
        assert_eq!(dr.t_sent, TimeMs(40));
        assert_eq!(s.next_seq, 2);
    }

    #[test]
    fn heartbeat_refreshes_stationary_entity() {
        let mut s = SenderState::new(E);
        let c = ProtocolConfig {
            heartbeat_ms: Some(200),
            ..cfg(1.0, 50)
        };
        let p = Vec3::new(1.0, 1.0, 1.0);
        let sent: Vec<u64> = (0..20u64)
            .filter_map(|i| s.tick(&c, p, TimeMs(i * 50)).unwrap())
            .map(|d| d.t_sent.0)
            .collect();
        assert_eq!(sent, vec![0, 200, 400, 600, 800]);
        assert_eq!(
            ProtocolConfig {
                heartbeat_ms: Some(0),
                ..c
            }
            .violations()[0]
                .0,
            "protocol.heartbeat_ms"
        );
    }

    #[test]
    fn stationary_entity_sends_once() {
        let mut s = SenderState::new(E);
        let c = cfg(1.0, 50);
        let p = Vec3::new(3.0, -1.0, 2.0);
        let sends = (0..2000u64)
            .filter_map(|k| s.tick(&c, p, TimeMs(k * 50)).unwrap())
            .count();
        assert_eq!(sends, 1);
    }

    fn forced_velocity_second_send(tick_ms: u64) -> TimeMs {
        // truth moves at 1 unit/s along +x, first DR claims 2 units/s
        let c = cfg(0.5, tick_ms);
        let prev = Vec3::new(-2.0 * tick_ms as f64 / 1000.0, 0.0, 0.0);
        let mut s = SenderState::with_velocity_reference(E, prev);
        let first = s.tick(&c, Vec3::ZERO, TimeMs(0)).unwrap().unwrap();
        assert_eq!(first.velocity, Vec3::new(2.0, 0.0, 0.0));
        for k in 1..1000u64 {
            let t = k * tick_ms;
            let truth = Vec3::new(t as f64 / 1000.0, 0.0, 0.0);
            if let Some(dr) = s.tick(&c, truth, TimeMs(t)).unwrap() {
                assert_eq!(dr.seq, 2);
                return dr.t_sent;
            }
        }
        panic!("no second send");
    }

    #[test]
    fn forced_velocity_drift_triggers_after_half_second() {
        // drift 1 unit/s: deviation > 0.5 first at the first tick past 500 ms
        assert_eq!(forced_velocity_second_send(30), TimeMs(510));
        assert_eq!(forced_velocity_second_send(7), TimeMs(504));
        // exactly 0.5 at 500 ms does not trigger
        assert_eq!(forced_velocity_second_send(100), TimeMs(600));
    }

    #[test]
    fn clock_must_advance() {
        let mut s = SenderState::new(E);
        let c = cfg(1.0, 10);
        s.tick(&c, Vec3::ZERO, TimeMs(100)).unwrap();
        assert_eq!(
            s.tick(&c, Vec3::ZERO, TimeMs(90)),
            Err(ProtocolError::Clock {
                t: TimeMs(90),
                last: TimeMs(100)
            })
        );
        assert!(s.tick(&c, Vec3::ZERO, TimeMs(100)).is_err());
    }

    #[test]
    fn velocity_is_backward_difference_per_second() {
        let c = cfg(0.0, 20);
        let mut s = SenderState::new(E);
        s.tick(&c, Vec3::ZERO, TimeMs(0)).unwrap();
        let dr = s
            .tick(&c, Vec3::new(1.0, 0.0, -2.0), TimeMs(20))
            .unwrap()
            .unwrap();
        assert_eq!(dr.velocity, Vec3::new(50.0, 0.0, -100.0));
    }

    #[test]
    fn min_send_interval_is_respected() {
        let c = ProtocolConfig {
            threshold: 0.1,
            tick_ms: 10,
            min_send_interval_ms: 250,
            heartbeat_ms: None,
        };
        let mut s = SenderState::new(E);
        let mut sent = Vec::new();
        for k in 0..500u64 {
            // zig-zag in y every 50 ms
            let t = k * 10;
            let y = if (k / 5) % 2 == 0 { 0.0 } else { 5.0 };
            if let Some(dr) = s.tick(&c, Vec3::new(0.0, y, 0.0), TimeMs(t)).unwrap() {
                sent.push(dr.t_sent.0);
            }
        }
        assert!(sent.len() > 2);
        assert!(sent.windows(2).all(|w| w[1] - w[0] >= 250));
    }

    fn dr(seq: u64, t: u64, p: Vec3, v: Vec3) -> DrVector {
        DrVector {
            entity_id: E,
            seq,
            t_sent: TimeMs(t),
            position: p,
            velocity: v,
        }
    }

    #[test]
    fn receiver_newest_wins() {
        let mut r = ReceiverState::default();
        assert!(r.apply(dr(5, 0, Vec3::ZERO, Vec3::ZERO)));
        let before = r.clone();
        assert!(!r.apply(dr(3, 0, Vec3::ZERO, Vec3::ZERO)));
        assert_eq!(r, before);
        assert!(!r.apply(dr(5, 10, Vec3::ZERO, Vec3::ZERO)));
        assert!(r.apply(dr(6, 0, Vec3::ZERO, Vec3::ZERO)));
        assert_eq!(r.latest.unwrap().seq, 6);
    }

    #[test]
    fn render_examples() {
        let mut r = ReceiverState::default();
        assert_eq!(r.render(TimeMs(10)), None);
        r.apply(dr(1, 0, Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0)));
        assert_eq!(r.render(TimeMs(2000)), Some(Vec3::new(2.0, 0.0, 0.0)));
        assert_eq!(r.render(TimeMs(0)), Some(Vec3::ZERO));

        // rendering before t_sent clamps
        let mut r = ReceiverState::default();
        r.apply(dr(
            1,
            500,
            Vec3::new(1.0, 1.0, 1.0),
            Vec3::new(9.0, 0.0, 0.0),
        ));
        assert_eq!(r.render(TimeMs(100)), Some(Vec3::new(1.0, 1.0, 1.0)));
    }

    #[test]
    fn multi_entity_receiver_is_independent() {
        let mut r = Receiver::default();
        let mut a = dr(3, 0, Vec3::ZERO, Vec3::ZERO);
        a.entity_id = EntityId(1);
        let mut b = dr(1, 0, Vec3::new(1.0, 0.0, 0.0), Vec3::ZERO);
        b.entity_id = EntityId(2);
        assert!(r.apply(a));
        assert!(r.apply(b));
        assert_eq!(
            r.render(EntityId(2), TimeMs(5)),
            Some(Vec3::new(1.0, 0.0, 0.0))
        );
        assert_eq!(r.render(EntityId(3), TimeMs(5)), None);
    }

    #[test]
    fn export_error_identical_is_zero() {
        let truth: Vec<_> = (0..10u64)
            .map(|k| (TimeMs(k * 10), Vec3::new(k as f64, 0.0, 1.0)))
            .collect();
        let rendered: Vec<_> = truth.iter().map(|(t, p)| (*t, Some(*p))).collect();
        let rep = compute_export_error(E, &truth, &rendered).unwrap();
        assert_eq!((rep.mean, rep.max, rep.p95), (0.0, 0.0, 0.0));
        assert_eq!(rep.samples_count, 10);
    }

    #[test]
    fn export_error_constant_offset() {
        let truth: Vec<_> = (0..20u64)
            .map(|k| (TimeMs(k), Vec3::new(k as f64, 2.0, 0.0)))
            .collect();
        let rendered: Vec<_> = truth
            .iter()
            .map(|(t, p)| (*t, Some(*p + Vec3::new(3.0, 4.0, 0.0))))
            .collect();
        let rep = compute_export_error(E, &truth, &rendered).unwrap();
        assert_eq!((rep.mean, rep.max, rep.p95), (5.0, 5.0, 5.0));
    }

    #[test]
    fn export_error_warmup_and_alignment() {
        let truth = vec![
            (TimeMs(0), Vec3::ZERO),
            (TimeMs(10), Vec3::ZERO),
            (TimeMs(20), Vec3::ZERO),
        ];
        let rendered = vec![
            (TimeMs(0), None),
            (TimeMs(10), Some(Vec3::new(1.0, 0.0, 0.0))),
            (TimeMs(20), Some(Vec3::ZERO)),
        ];
        let rep = compute_export_error(E, &truth, &rendered).unwrap();
        assert_eq!(rep.warmup_ticks, 1);
        assert_eq!(rep.samples_count, 2);
        assert_eq!(rep.mean, 0.5);

        let shifted = vec![(TimeMs(0), None), (TimeMs(11), None), (TimeMs(20), None)];
        assert!(matches!(
            compute_export_error(E, &truth, &shifted),
            Err(ProtocolError::Alignment { index: 1, .. })
        ));
        assert!(compute_export_error(E, &truth, &shifted[..2]).is_err());
    }

    #[test]
    fn nearest_rank_p95() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 95.0), 95.0);
        assert_eq!(nearest_rank(&[3.0], 95.0), 3.0);
        assert_eq!(nearest_rank(&[], 95.0), 0.0);
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 95.0), 10.0);
    }

    #[test]
    fn csv_output_rows() {
        let truth = vec![(TimeMs(0), Vec3::ZERO), (TimeMs(10), Vec3::ZERO)];
        let rendered = vec![
            (TimeMs(0), None),
            (TimeMs(10), Some(Vec3::new(0.0, 0.5, 0.0))),
        ];
        let rep = compute_export_error(E, &truth, &rendered).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "t_ms,entity_id,error\n10,7,0.5\n"
        );
    }

    /// Zero-latency loop: every DR is applied at the tick it is sent.
    fn zero_latency_errors(script: &TrajectoryScript, c: &ProtocolConfig) -> (Vec<f64>, usize) {
        let mut s = SenderState::new(E);
        let mut r = ReceiverState::default();
        let mut errs = Vec::new();
        let mut sends = 0;
        let mut t = script.start().0;
        while t <= script.end().0 {
            let truth = script.sample(TimeMs(t)).unwrap();
            if let Some(dr) = s.tick(c, truth, TimeMs(t)).unwrap() {
                sends += 1;
                r.apply(dr);
            }
            errs.push(deviation(truth, r.render(TimeMs(t)).unwrap()));
            t += c.tick_ms;
        }
        (errs, sends)
    }

    fn zigzag() -> TrajectoryScript {
        let wps = (0..12u64)
            .map(|k| {
                let y = if k % 2 == 0 { 0.0 } else { 8.0 };
                (
                    TimeMs(k * 1500),
                    Vec3::new(k as f64 * 6.0, y, 0.5 * k as f64),
                )
            })
            .collect();
        TrajectoryScript::new(wps).unwrap()
    }

    #[test]
    fn zigzag_threshold_bound() {
        let (errs, sends) = zero_latency_errors(&zigzag(), &cfg(1.0, 50));
        assert!(sends > 11);
        assert!(errs.iter().all(|e| *e <= 1.0));
    }

    fn random_script(seed: u64) -> TrajectoryScript {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut t = 0;
        let wps = (0..8)
            .map(|_| {
                let p = Vec3::new(
                    rng.gen_range(0.0..50.0),
                    rng.gen_range(0.0..50.0),
                    rng.gen_range(0.0..50.0),
                );
                let out = (TimeMs(t), p);
                t += rng.gen_range(500..4000);
                out
            })
            .collect();
        TrajectoryScript::new(wps).unwrap()
    }

    #[test]
    fn raising_threshold_never_increases_sends() {
        for seed in 0..10 {
            let script = random_script(seed);
            let counts: Vec<usize> = [0.1, 0.5, 1.0, 2.0, 5.0, 20.0]
                .iter()
                .map(|th| zero_latency_errors(&script, &cfg(*th, 20)).1)
                .collect();
            assert!(
                counts.windows(2).all(|w| w[1] <= w[0]),
                "seed {seed}: {counts:?}"
            );
        }
    }

    proptest! {
        #[test]
        fn latest_seq_is_max_regardless_of_order(seqs in prop::collection::vec(1u64..50, 1..8).prop_shuffle()) {
            let mut r = ReceiverState::default();
            for s in &seqs {
                r.apply(dr(*s, 0, Vec3::ZERO, Vec3::ZERO));
            }
            prop_assert_eq!(r.latest.unwrap().seq, *seqs.iter().max().unwrap());
        }

        #[test]
        fn threshold_bound_random_scripts(seed in 0u64..1000, th in 0.05f64..5.0) {
            let (errs, _) = zero_latency_errors(&random_script(seed), &cfg(th, 25));
            prop_assert!(errs.iter().all(|e| *e <= th));
        }
    }
}
