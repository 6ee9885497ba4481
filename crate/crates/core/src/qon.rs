//! Quality-of-network session monitoring.
//!
//! Three pieces live here:
//!
//! * a synthetic ground-truth churn model: a per-minute quit probability that
//!   grows with loss and with latency beyond a knee,
//! * a logistic risk predictor over normalized latency, loss and jitter,
//!   trained by full-batch gradient descent on mean log-loss,
//! * the action rule turning a risk score into "do nothing", "reactivate
//!   automatically" or "notify the player".
//!
//! All coefficients are synthetic. [`PredictorWeights::calibrated`] holds the
//! weights obtained by fitting [`calibration_dataset`] with
//! [`CALIBRATION_HYPER`]; a unit test refits and checks they still match.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{seeded, SimRng};

pub const DEFAULT_DECISION_THRESHOLD: f64 = 0.5;
/// A probe must have succeeded this recently for connectivity to count as
/// recoverable.
pub const PROBE_WINDOW_MS: u64 = 30_000;
/// Loss at or above this makes automatic reactivation pointless.
pub const RECOVERABLE_LOSS_LIMIT: f64 = 0.5;

const RTT_SCALE_MS: f64 = 500.0;
const JITTER_SCALE_MS: f64 = 100.0;

#[derive(Debug, Error)]
pub enum QonError {
    #[error("dataset is empty")]
    Empty,
    #[error("dataset has only one label class ({0})")]
    SingleClass(bool),
    #[error("invalid metrics: {0}")]
    InvalidMetrics(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv row {row}: {detail}")]
    Row { row: usize, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub rtt_mean_ms: f64,
    /// Standard deviation of RTT samples.
    pub rtt_jitter_ms: f64,
    pub loss_rate: f64,
    pub elapsed_min: f64,
}

impl SessionMetrics {
    pub fn validate(&self) -> Result<(), QonError> {
        let fields = [
            ("rtt_mean_ms", self.rtt_mean_ms),
            ("rtt_jitter_ms", self.rtt_jitter_ms),
            ("loss_rate", self.loss_rate),
            ("elapsed_min", self.elapsed_min),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(QonError::InvalidMetrics(format!(
                    "{name}={v} must be finite and >= 0"
                )));
            }
        }
        if self.loss_rate > 1.0 {
            return Err(QonError::InvalidMetrics(format!(
                "loss_rate={} > 1",
                self.loss_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChurnModelParams {
    /// Baseline per-minute quit probability.
    pub q0: f64,
    /// Loss coefficient.
    pub a: f64,
    /// Latency coefficient, per 100 ms above the knee.
    pub b: f64,
    pub latency_knee_ms: f64,
    pub premature_window_min: f64,
}

impl Default for ChurnModelParams {
    fn default() -> Self {
        Self {
            q0: 0.01,
            a: 0.5,
            b: 0.05,
            latency_knee_ms: 100.0,
            premature_window_min: 5.0,
        }
    }
}

impl ChurnModelParams {
    pub fn quit_probability(&self, m: &SessionMetrics) -> f64 {
        let over_knee = (m.rtt_mean_ms - self.latency_knee_ms).max(0.0);
        (self.q0 + self.a * m.loss_rate + self.b * over_knee / 100.0).clamp(0.0, 1.0)
    }
}

/// One Bernoulli draw: does the player quit during this minute?
pub fn ground_truth_quit(params: &ChurnModelParams, m: &SessionMetrics, rng: &mut SimRng) -> bool {
    rng.gen::<f64>() < params.quit_probability(m)
}

/// Minute (1-based) in which the player quits within the premature window,
/// if they do.
pub fn simulate_session(
    params: &ChurnModelParams,
    m: &SessionMetrics,
    rng: &mut SimRng,
) -> Option<u32> {
    let minutes = params.premature_window_min.ceil().max(0.0) as u32;
    (1..=minutes).find(|_| ground_truth_quit(params, m, rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledSession {
    pub metrics: SessionMetrics,
    pub quit_premature: bool,
}

/// Sessions with network conditions drawn from a broad range, labeled by the
/// ground-truth churn model.
///
/// RTT is uniform on [20, 400) ms, jitter is 5-30 % of RTT, loss is uniform
/// on [0, 0.15).
pub fn synthetic_dataset(params: &ChurnModelParams, n: usize, seed: u64) -> Vec<LabeledSession> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| {
            let rtt = rng.gen_range(20.0..400.0);
            let jitter = rtt * rng.gen_range(0.05..0.30);
            let loss = rng.gen_range(0.0..0.15);
            let mut m = SessionMetrics {
                rtt_mean_ms: rtt,
                rtt_jitter_ms: jitter,
                loss_rate: loss,
                elapsed_min: 0.0,
            };
            let quit = simulate_session(params, &m, &mut rng);
            m.elapsed_min = quit.map_or(params.premature_window_min, f64::from);
            LabeledSession {
                metrics: m,
                quit_premature: quit.is_some(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictorWeights {
    pub bias: f64,
    pub w_latency: f64,
    pub w_loss: f64,
    pub w_jitter: f64,
}

pub const CALIBRATION_PARAMS: ChurnModelParams = ChurnModelParams {
    q0: 0.01,
    a: 1.0,
    b: 0.4,
    latency_knee_ms: 100.0,
    premature_window_min: 5.0,
};
pub const CALIBRATION_SEED: u64 = 20_240_601;
pub const CALIBRATION_SESSIONS: usize = 1000;
pub const CALIBRATION_HYPER: FitHyper = FitHyper {
    learn_rate: 2.0,
    epochs: 4000,
};

/// The committed calibration dataset: [`CALIBRATION_SESSIONS`] sessions from
/// [`CALIBRATION_PARAMS`] under [`CALIBRATION_SEED`]. The first 70 % is the
/// training split.
pub fn calibration_dataset() -> Vec<LabeledSession> {
    synthetic_dataset(&CALIBRATION_PARAMS, CALIBRATION_SESSIONS, CALIBRATION_SEED)
}

pub fn train_test_split(
    data: &[LabeledSession],
    train_frac: f64,
) -> (&[LabeledSession], &[LabeledSession]) {
    let cut = ((data.len() as f64) * train_frac).round() as usize;
    data.split_at(cut.min(data.len()))
}

impl PredictorWeights {
    pub fn calibrated() -> Self {
        Self {
            bias: -3.257870709041743,
            w_latency: 11.983837409007972,
            w_loss: 12.449568294289808,
            w_jitter: 1.0656874285655797,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|w| w.is_finite())
    }

    fn as_array(&self) -> [f64; 4] {
        [self.bias, self.w_latency, self.w_loss, self.w_jitter]
    }

    fn from_array(a: [f64; 4]) -> Self {
        Self {
            bias: a[0],
            w_latency: a[1],
            w_loss: a[2],
            w_jitter: a[3],
        }
    }
}

/// `[1, rtt/500, loss, jitter/100]`.
pub fn features(m: &SessionMetrics) -> [f64; 4] {
    [
        1.0,
        m.rtt_mean_ms / RTT_SCALE_MS,
        m.loss_rate,
        m.rtt_jitter_ms / JITTER_SCALE_MS,
    ]
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn linear(w: &PredictorWeights, m: &SessionMetrics) -> f64 {
    w.as_array()
        .iter()
        .zip(features(m))
        .map(|(w, x)| w * x)
        .sum()
}

/// Probability that the session ends prematurely.
pub fn risk_score(w: &PredictorWeights, m: &SessionMetrics) -> f64 {
    logistic(linear(w, m))
}

/// Mean log-loss of the logistic model over `data`.
pub fn log_loss(w: &PredictorWeights, data: &[LabeledSession]) -> f64 {
    let total: f64 = data
        .iter()
        .map(|s| {
            let z = linear(w, &s.metrics);
            // log(1 + e^z) - y z, computed stably
            let softplus = if z > 0.0 {
                z + (-z).exp().ln_1p()
            } else {
                z.exp().ln_1p()
            };
            softplus - if s.quit_premature { z } else { 0.0 }
        })
        .sum();
    total / data.len() as f64
}

/// Gradient of [`log_loss`] with respect to `[bias, w_latency, w_loss, w_jitter]`.
pub fn log_loss_gradient(w: &PredictorWeights, data: &[LabeledSession]) -> [f64; 4] {
    let mut g = [0.0; 4];
    for s in data {
        let x = features(&s.metrics);
        let err = logistic(linear(w, &s.metrics)) - f64::from(u8::from(s.quit_premature));
        for (gi, xi) in g.iter_mut().zip(x) {
            *gi += err * xi;
        }
    }
    let n = data.len() as f64;
    g.map(|gi| gi / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitHyper {
    pub learn_rate: f64,
    pub epochs: usize,
}

/// Full-batch gradient descent from zero weights.
pub fn fit_weights(
    data: &[LabeledSession],
    hyper: &FitHyper,
) -> Result<PredictorWeights, QonError> {
    let first = data.first().ok_or(QonError::Empty)?.quit_premature;
    if data.iter().all(|s| s.quit_premature == first) {
        return Err(QonError::SingleClass(first));
    }
    let mut w = [0.0; 4];
    for _ in 0..hyper.epochs {
        let g = log_loss_gradient(&PredictorWeights::from_array(w), data);
        for (wi, gi) in w.iter_mut().zip(g) {
            *wi -= hyper.learn_rate * gi;
        }
    }
    Ok(PredictorWeights::from_array(w))
}

/// Fraction of sessions whose thresholded score matches the label.
pub fn accuracy(w: &PredictorWeights, data: &[LabeledSession], threshold: f64) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let hits = data
        .iter()
        .filter(|s| (risk_score(w, &s.metrics) >= threshold) == s.quit_premature)
        .count();
    hits as f64 / data.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    None,
    /// Reconnect the session automatically (e.g. hand over to a mobile link).
    ReactivateAuto,
    /// Tell the player about their network conditions.
    NotifyMessage,
}

pub fn decide_action(score: f64, threshold: f64, connectivity_recoverable: bool) -> Action {
    if score < threshold {
        Action::None
    } else if connectivity_recoverable {
        Action::ReactivateAuto
    } else {
        Action::NotifyMessage
    }
}

/// Recoverable means the channel still carries most packets and a probe got
/// through within [`PROBE_WINDOW_MS`].
pub fn connectivity_recoverable(loss_rate: f64, probe_ok: bool) -> bool {
    loss_rate < RECOVERABLE_LOSS_LIMIT && probe_ok
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskAssessment {
    pub score: f64,
    pub premature_flag: bool,
    pub action: Action,
}

pub fn assess(
    w: &PredictorWeights,
    m: &SessionMetrics,
    threshold: f64,
    connectivity_recoverable: bool,
) -> RiskAssessment {
    let score = risk_score(w, m);
    RiskAssessment {
        score,
        premature_flag: score >= threshold,
        action: decide_action(score, threshold, connectivity_recoverable),
    }
}

const DATASET_HEADER: [&str; 5] = [
    "rtt_mean_ms",
    "rtt_jitter_ms",
    "loss_rate",
    "elapsed_min",
    "quit_premature",
];

/// `rtt_mean_ms,rtt_jitter_ms,loss_rate,elapsed_min,quit_premature` with the
/// label written as 0/1.
pub fn write_dataset_csv<W: Write>(data: &[LabeledSession], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{}", DATASET_HEADER.join(","))?;
    for s in data {
        let m = &s.metrics;
        writeln!(
            w,
            "{},{},{},{},{}",
            m.rtt_mean_ms,
            m.rtt_jitter_ms,
            m.loss_rate,
            m.elapsed_min,
            u8::from(s.quit_premature)
        )?;
    }
    Ok(())
}

fn parse_label(s: &str) -> Option<bool> {
    match s {
        "1" | "true" => Some(true),
        "0" | "false" => Some(false),
        _ => None,
    }
}

/// Reads metric rows by column name. With `require_label` the
/// `quit_premature` column must be present; otherwise it is optional and
/// missing labels read as `false`.
pub fn read_sessions_csv<R: Read>(
    rdr: R,
    require_label: bool,
) -> Result<Vec<LabeledSession>, QonError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(rdr);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut idx = [0usize; 4];
    for (slot, name) in idx.iter_mut().zip(&DATASET_HEADER[..4]) {
        *slot = col(name).ok_or_else(|| QonError::Row {
            row: 0,
            detail: format!("missing column {name}"),
        })?;
    }
    let label_col = col("quit_premature");
    if require_label && label_col.is_none() {
        return Err(QonError::Row {
            row: 0,
            detail: "missing column quit_premature".into(),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let num = |c: usize| -> Result<f64, QonError> {
            rec.get(c)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| QonError::Row {
                    row,
                    detail: format!("bad number in column {}", headers.get(c).unwrap_or("?")),
                })
        };
        let metrics = SessionMetrics {
            rtt_mean_ms: num(idx[0])?,
            rtt_jitter_ms: num(idx[1])?,
            loss_rate: num(idx[2])?,
            elapsed_min: num(idx[3])?,
        };
        metrics.validate().map_err(|e| QonError::Row {
            row,
            detail: e.to_string(),
        })?;
        let quit_premature = match label_col {
            Some(c) => parse_label(rec.get(c).unwrap_or("")).ok_or_else(|| QonError::Row {
                row,
                detail: "bad quit_premature".into(),
            })?,
            None => false,
        };
        out.push(LabeledSession {
            metrics,
            quit_premature,
        });
    }
    Ok(out)
}
