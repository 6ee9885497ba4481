//! End-to-end runs: a sender ticking over a ground-truth trajectory, its DR
//! vectors pushed through an impaired transport, a receiver rendering every
//! tick, and the resulting export error.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{check_ms, DrVector, EntityId, ModelError, TimeMs, TrajectoryScript, Vec3};
use crate::netsim::{
    run_transport, write_events_csv, ChannelConfig, DejitterConfig, DeliveryEvent, NetError,
    TransportMode, TransportStats,
};
use crate::protocol::{
    compute_export_error, ErrorSummary, ExportErrorReport, ProtocolConfig, ProtocolError,
    ReceiverState, SenderState,
};
use crate::qon::{self, PredictorWeights, RiskAssessment, SessionMetrics};
use crate::rng::{derive_seed, seeded};

/// Per-packet header bytes assumed when reporting byte totals.
pub const HEADER_BYTES: u64 = 40;

const TRAJECTORY_STREAM: u64 = 0x7472_616a;
const CHANNEL_STREAM: u64 = 0x6368_616e;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid config: {}", format_violations(.0))]
    Invalid(Vec<(String, String)>),
    #[error("config parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl ScenarioError {
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            ScenarioError::Io(_) | ScenarioError::Model(ModelError::Io(_))
        )
    }
}

fn format_violations(v: &[(String, String)]) -> String {
    v.iter()
        .map(|(f, why)| format!("{f} {why}"))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Seeded random-waypoint motion inside an axis-aligned cube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub entities: u32,
    pub box_size: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub waypoint_min_ms: u64,
    pub waypoint_max_ms: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            entities: 1,
            box_size: 1000.0,
            speed_min: 1.0,
            speed_max: 10.0,
            waypoint_min_ms: 2000,
            waypoint_max_ms: 5000,
        }
    }
}

impl GeneratorConfig {
    fn violations(&self) -> Vec<(String, String)> {
        let mut v = Vec::new();
        let mut bad =
            |f: &str, why: &str| v.push((format!("trajectory.generator.{f}"), why.to_string()));
        if self.entities == 0 {
            bad("entities", "must be >= 1");
        }
        if !(self.box_size.is_finite() && self.box_size > 0.0) {
            bad("box_size", "must be finite and > 0");
        }
        if !(self.speed_min.is_finite() && self.speed_min >= 0.0) {
            bad("speed_min", "must be finite and >= 0");
        }
        if !(self.speed_max.is_finite() && self.speed_max >= self.speed_min) {
            bad("speed_max", "must be finite and >= speed_min");
        }
        if self.waypoint_min_ms == 0 {
            bad("waypoint_min_ms", "must be >= 1");
        }
        if self.waypoint_max_ms < self.waypoint_min_ms {
            bad("waypoint_max_ms", "must be >= waypoint_min_ms");
        }
        check_ms(
            &mut v,
            "trajectory.generator.waypoint_max_ms",
            self.waypoint_max_ms,
        );
        v
    }

    /// Waypoints covering `[0, duration_ms]`. Segments that would leave the
    /// box are reflected back into it.
    pub fn generate(&self, duration_ms: u64, seed: u64) -> TrajectoryScript {
        let mut rng = seeded(seed);
        let size = self.box_size;
        let mut pos = Vec3::new(
            rng.gen_range(0.0..size),
            rng.gen_range(0.0..size),
            rng.gen_range(0.0..size),
        );
        let mut t = 0u64;
        let mut waypoints = vec![(TimeMs(0), pos)];
        while t < duration_ms {
            let seg = rng.gen_range(self.waypoint_min_ms..=self.waypoint_max_ms);
            let speed = if self.speed_max > self.speed_min {
                rng.gen_range(self.speed_min..=self.speed_max)
            } else {
                self.speed_min
            };
            // uniform direction on the sphere
            let z: f64 = rng.gen_range(-1.0..=1.0);
            let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = (1.0 - z * z).sqrt();
            let dir = Vec3::new(r * phi.cos(), r * phi.sin(), z);
            let step = dir * (speed * seg as f64 / 1000.0);
            pos = Vec3::new(
                reflect(pos.x + step.x, size),
                reflect(pos.y + step.y, size),
                reflect(pos.z + step.z, size),
            );
            t += seg;
            waypoints.push((TimeMs(t), pos));
        }
        TrajectoryScript::new(waypoints).expect("generated waypoints are increasing")
    }
}

fn reflect(v: f64, size: f64) -> f64 {
    let m = v.rem_euclid(2.0 * size);
    if m > size {
        2.0 * size - m
    } else {
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectorySource {
    /// CSV with header `t_ms,x,y,z`; relative paths resolve against the
    /// config file's directory.
    File(PathBuf),
    Generator(GeneratorConfig),
}

impl Default for TrajectorySource {
    fn default() -> Self {
        TrajectorySource::Generator(GeneratorConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub trajectory: TrajectorySource,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    /// `channel.seed` is mixed with the scenario seed, it does not replace it.
    pub channel: ChannelConfig,
    pub transport: TransportMode,
    #[serde(default)]
    pub dejitter: DejitterConfig,
    pub duration_ms: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file, resolving a relative trajectory path against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::from_json(&text)?;
        if let TrajectorySource::File(p) = &mut cfg.trajectory {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn violations(&self) -> Vec<(String, String)> {
        let mut v = self.protocol.violations();
        v.extend(self.channel.violations());
        v.extend(self.transport.violations());
        if let TrajectorySource::Generator(g) = &self.trajectory {
            v.extend(g.violations());
        }
        check_ms(
            &mut v,
            "dejitter.playout_delay_ms",
            self.dejitter.playout_delay_ms,
        );
        check_ms(&mut v, "duration_ms", self.duration_ms);
        if self.duration_ms < self.protocol.tick_ms.max(1) {
            v.push(("duration_ms".into(), "must cover at least one tick".into()));
        }
        if matches!(self.transport, TransportMode::ReliableOrdered { .. })
            && self.channel.loss_rate >= 1.0
        {
            v.push((
                "channel.loss_rate".into(),
                "must be < 1 for reliable transport".into(),
            ));
        }
        v
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(v))
        }
    }

    fn scripts(&self) -> Result<Vec<(EntityId, TrajectoryScript)>, ScenarioError> {
        match &self.trajectory {
            TrajectorySource::File(p) => {
                Ok(vec![(EntityId(0), TrajectoryScript::from_csv_path(p)?)])
            }
            TrajectorySource::Generator(g) => Ok((0..g.entities)
                .map(|e| {
                    let seed = derive_seed(derive_seed(self.seed, TRAJECTORY_STREAM), u64::from(e));
                    (EntityId(e), g.generate(self.duration_ms, seed))
                })
                .collect()),
        }
    }

    fn channel_for(&self, entity: EntityId) -> ChannelConfig {
        let base = derive_seed(self.seed ^ self.channel.seed, CHANNEL_STREAM);
        ChannelConfig {
            seed: derive_seed(base, u64::from(entity.0)),
            ..self.channel
        }
    }
}

/// What one entity produced in one run.
#[derive(Debug, Clone)]
pub struct EntityRun {
    pub entity: EntityId,
    pub sent: Vec<DrVector>,
    pub events: Vec<DeliveryEvent>,
    pub report: ExportErrorReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QonSnapshot {
    pub metrics: SessionMetrics,
    pub connectivity_recoverable: bool,
    pub assessment: RiskAssessment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: String,
    pub seed: u64,
    pub export_error: ErrorSummary,
    pub dr_sends: u64,
    pub transport: TransportStats,
    /// Wire bytes over all transmissions, headers included.
    pub bytes: u64,
    pub qon: QonSnapshot,
    /// Wall-clock time of the run; not written to disk so outputs stay
    /// byte-identical across reruns.
    #[serde(skip)]
    pub runtime_ms: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub entities: Vec<EntityRun>,
    pub report: ExportErrorReport,
}

/// Ticks at which the sender samples and the receiver renders.
fn tick_times(script: &TrajectoryScript, cfg: &ScenarioConfig) -> Vec<TimeMs> {
    let end = cfg.duration_ms.min(script.end().0);
    (script.start().0..=end)
        .step_by(cfg.protocol.tick_ms as usize)
        .map(TimeMs)
        .collect()
}

fn run_entity(
    cfg: &ScenarioConfig,
    entity: EntityId,
    script: &TrajectoryScript,
) -> Result<EntityRun, ScenarioError> {
    let ticks = tick_times(script, cfg);
    let mut sender = SenderState::new(entity);
    let mut truth = Vec::with_capacity(ticks.len());
    let mut sent = Vec::new();
    for &t in &ticks {
        let p = script.sample(t)?;
        truth.push((t, p));
        if let Some(dr) = sender.tick(&cfg.protocol, p, t)? {
            sent.push(dr);
        }
    }

    let sends: Vec<(u64, TimeMs)> = sent.iter().map(|d| (d.seq, d.t_sent)).collect();
    let events = run_transport(
        &cfg.transport,
        &cfg.channel_for(entity),
        &cfg.dejitter,
        &sends,
    )?;

    // deliveries in time order, ties by seq
    let mut deliveries: Vec<(TimeMs, u64, DrVector)> = events
        .iter()
        .zip(&sent)
        .filter_map(|(e, dr)| {
            let wire = dr.encode();
            e.deliver_ms
                .map(|t| (t, e.seq, DrVector::decode(&wire).expect("own encoding")))
        })
        .collect();
    deliveries.sort_by_key(|(t, seq, _)| (*t, *seq));

    let mut receiver = ReceiverState::default();
    let mut next = 0;
    let mut rendered = Vec::with_capacity(ticks.len());
    for &t in &ticks {
        while next < deliveries.len() && deliveries[next].0 <= t {
            receiver.apply(deliveries[next].2);
            next += 1;
        }
        rendered.push((t, receiver.render(t)));
    }
    let report = compute_export_error(entity, &truth, &rendered)?.with_sends(sent.len() as u64);
    Ok(EntityRun {
        entity,
        sent,
        events,
        report,
    })
}

/// Network quality as a player would experience it over the run.
fn session_metrics(cfg: &ScenarioConfig, runs: &[EntityRun]) -> (SessionMetrics, bool) {
    let base = cfg.channel.base_latency_ms as f64;
    let jitters: Vec<f64> = runs
        .iter()
        .flat_map(|r| &r.events)
        .filter_map(|e| {
            // one-way jitter of the arriving transmission
            let attempt_sent = e.send_ms.0 + u64::from(e.retransmissions) * rto_of(&cfg.transport);
            e.arrive_ms.map(|a| (a.0 - attempt_sent) as f64 - base)
        })
        .collect();
    let (mean_j, sd_j) = mean_sd(&jitters);
    let stats = runs
        .iter()
        .map(|r| TransportStats::from_events(&r.events))
        .fold(TransportStats::default(), |a, b| TransportStats {
            packets: a.packets + b.packets,
            transmissions: a.transmissions + b.transmissions,
            lost_transmissions: a.lost_transmissions + b.lost_transmissions,
            arrivals: a.arrivals + b.arrivals,
            delivered: a.delivered + b.delivered,
            late: a.late + b.late,
            dropped_late: a.dropped_late + b.dropped_late,
        });
    let loss_rate = if stats.transmissions == 0 {
        0.0
    } else {
        stats.lost_transmissions as f64 / stats.transmissions as f64
    };
    let metrics = SessionMetrics {
        rtt_mean_ms: 2.0 * base + mean_j,
        rtt_jitter_ms: sd_j,
        loss_rate,
        elapsed_min: cfg.duration_ms as f64 / 60_000.0,
    };
    // probe: something arrived within the last 30 s of the run
    let last_arrival = runs
        .iter()
        .flat_map(|r| &r.events)
        .filter_map(|e| e.arrive_ms)
        .max();
    let probe_ok = last_arrival.is_some_and(|t| t.0 + qon::PROBE_WINDOW_MS >= cfg.duration_ms);
    (metrics, qon::connectivity_recoverable(loss_rate, probe_ok))
}

fn rto_of(mode: &TransportMode) -> u64 {
    match mode {
        TransportMode::ReliableOrdered { rto_ms } => *rto_ms,
        TransportMode::UnreliableDr => 0,
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs one scenario in memory.
pub fn simulate(cfg: &ScenarioConfig) -> Result<RunOutput, ScenarioError> {
    cfg.validate()?;
    let started = Instant::now();
    let entities = cfg
        .scripts()?
        .iter()
        .map(|(e, s)| run_entity(cfg, *e, s))
        .collect::<Result<Vec<_>, _>>()?;
    let report = ExportErrorReport::merge(entities.iter().map(|r| r.report.clone()));

    let transport = TransportStats::from_events(
        &entities
            .iter()
            .flat_map(|r| r.events.iter().copied())
            .collect::<Vec<_>>(),
    );
    let bytes = transport.transmissions * (DrVector::WIRE_SIZE as u64 + HEADER_BYTES);
    let (metrics, recoverable) = session_metrics(cfg, &entities);
    let weights = PredictorWeights::calibrated();
    let assessment = qon::assess(
        &weights,
        &metrics,
        qon::DEFAULT_DECISION_THRESHOLD,
        recoverable,
    );

    let summary = RunSummary {
        mode: cfg.transport.label().to_string(),
        seed: cfg.seed,
        export_error: report.summary(),
        dr_sends: report.sends,
        transport,
        bytes,
        qon: QonSnapshot {
            metrics,
            connectivity_recoverable: recoverable,
            assessment,
        },
        runtime_ms: started.elapsed().as_secs_f64() * 1000.0,
    };
    log::info!(
        "{} seed={} mean_err={:.4} max_err={:.4} sends={}",
        summary.mode,
        summary.seed,
        summary.export_error.mean,
        summary.export_error.max,
        summary.dr_sends
    );
    Ok(RunOutput {
        summary,
        entities,
        report,
    })
}

/// Writes `summary.json`, `errors.csv`, `sends.csv` and one
/// `deliveries_<entity>.csv` per entity under `dir`.
pub fn write_run(out: &RunOutput, dir: &Path) -> Result<(), ScenarioError> {
    fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(fs::File::create(dir.join("errors.csv"))?);
    out.report.write_csv(&mut w)?;
    w.flush()?;

    let mut w = BufWriter::new(fs::File::create(dir.join("sends.csv"))?);
    writeln!(w, "entity_id,seq,t_sent,x,y,z,vx,vy,vz")?;
    for r in &out.entities {
        for d in &r.sent {
            let (p, v) = (d.position, d.velocity);
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                d.entity_id.0, d.seq, d.t_sent.0, p.x, p.y, p.z, v.x, v.y, v.z
            )?;
        }
    }
    w.flush()?;

    for r in &out.entities {
        let path = dir.join(format!("deliveries_{}.csv", r.entity.0));
        let mut w = BufWriter::new(fs::File::create(path)?);
        write_events_csv(&r.events, &mut w)?;
        w.flush()?;
    }
    let json = serde_json::to_string_pretty(&out.summary)?;
    fs::write(dir.join("summary.json"), json + "\n")?;
    Ok(())
}

/// Runs the configured scenario and writes its outputs to `cfg.output_dir`
/// when one is set.
pub fn run_simulation(cfg: &ScenarioConfig) -> Result<RunSummary, ScenarioError> {
    let out = simulate(cfg)?;
    if let Some(dir) = &cfg.output_dir {
        write_run(&out, dir)?;
    }
    Ok(out.summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRow {
    pub seed: u64,
    pub reliable: ErrorSummary,
    pub unreliable: ErrorSummary,
    /// `reliable.mean - unreliable.mean`; positive favours unreliable DR.
    pub mean_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rto_ms: u64,
    pub rows: Vec<PairedRow>,
    pub mean_of_diffs: f64,
    pub unreliable_wins: usize,
}

impl Comparison {
    /// `seed,reliable_mean,...,mean_diff` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "seed,reliable_mean,reliable_max,reliable_p95,reliable_sends,\
             unreliable_mean,unreliable_max,unreliable_p95,unreliable_sends,mean_diff"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                r.seed,
                r.reliable.mean,
                r.reliable.max,
                r.reliable.p95,
                r.reliable.sends,
                r.unreliable.mean,
                r.unreliable.max,
                r.unreliable.p95,
                r.unreliable.sends,
                r.mean_diff
            )?;
        }
        Ok(())
    }
}

/// Retransmission timeout used by `run_compare` when the base config is
/// already unreliable.
pub const DEFAULT_RTO_MS: u64 = 400;

/// The transport-comparison setup: 10 % loss, 100 ms base latency, up to
/// 40 ms jitter, 400 ms retransmission timeout, 80 ms playout delay,
/// threshold 1.0 and a 100 ms heartbeat, over two minutes of generated
/// motion.
pub fn comparison_scenario() -> ScenarioConfig {
    ScenarioConfig {
        trajectory: TrajectorySource::default(),
        protocol: ProtocolConfig {
            threshold: 1.0,
            tick_ms: 50,
            min_send_interval_ms: 0,
            heartbeat_ms: Some(100),
        },
        channel: ChannelConfig {
            base_latency_ms: 100,
            jitter_max_ms: 40,
            loss_rate: 0.1,
            seed: 0,
        },
        transport: TransportMode::ReliableOrdered {
            rto_ms: DEFAULT_RTO_MS,
        },
        dejitter: DejitterConfig {
            playout_delay_ms: 80,
            late_policy: crate::netsim::LatePolicy::DeliverLate,
        },
        duration_ms: 120_000,
        seed: 1,
        output_dir: None,
    }
}

/// Runs every seed under both transports with identical channels. Outputs,
/// when `cfg.output_dir` is set, go to `seed_<n>/{reliable,unreliable}/`
/// plus `compare.csv` and `compare.json`.
pub fn run_compare(cfg: &ScenarioConfig, seeds: &[u64]) -> Result<Comparison, ScenarioError> {
    if seeds.len() < 2 {
        return Err(ScenarioError::Invalid(vec![(
            "seeds".into(),
            format!("need at least 2 seeds, got {}", seeds.len()),
        )]));
    }
    cfg.validate()?;
    let rto_ms = match cfg.transport {
        TransportMode::ReliableOrdered { rto_ms } => rto_ms,
        TransportMode::UnreliableDr => DEFAULT_RTO_MS,
    };
    let rows = seeds
        .par_iter()
        .map(|&seed| {
            let mut per_mode = Vec::with_capacity(2);
            for mode in [
                TransportMode::ReliableOrdered { rto_ms },
                TransportMode::UnreliableDr,
            ] {
                let run_cfg = ScenarioConfig {
                    transport: mode,
                    seed,
                    output_dir: cfg
                        .output_dir
                        .as_ref()
                        .map(|d| d.join(format!("seed_{seed}")).join(mode.label())),
                    ..cfg.clone()
                };
                per_mode.push(run_simulation(&run_cfg)?.export_error);
            }
            let (reliable, unreliable) = (per_mode[0], per_mode[1]);
            Ok(PairedRow {
                seed,
                reliable,
                unreliable,
                mean_diff: reliable.mean - unreliable.mean,
            })
        })
        .collect::<Result<Vec<_>, ScenarioError>>()?;

    let mean_of_diffs = rows.iter().map(|r| r.mean_diff).sum::<f64>() / rows.len() as f64;
    let unreliable_wins = rows.iter().filter(|r| r.mean_diff > 0.0).count();
    let cmp = Comparison {
        rto_ms,
        rows,
        mean_of_diffs,
        unreliable_wins,
    };
    if let Some(dir) = &cfg.output_dir {
        fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(fs::File::create(dir.join("compare.csv"))?);
        cmp.write_csv(&mut w)?;
        w.flush()?;
        fs::write(
            dir.join("compare.json"),
            serde_json::to_string_pretty(&cmp)? + "\n",
        )?;
    }
    Ok(cmp)
}
