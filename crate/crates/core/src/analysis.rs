//! Trace statistics: packet sizes, bandwidth, header and ack overhead,
//! inter-arrival times, autocorrelation and periodicity of count series.

use std::collections::BTreeMap;
use std::io::Write;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;
use thiserror::Error;

use crate::workload::{Direction, Trace};

/// Minimum autocorrelation for [`detect_period`] to report a period.
pub const PERIOD_THRESHOLD: f64 = 0.3;
/// Default bucket width for arrival-process series.
pub const DEFAULT_BUCKET_MS: u64 = 100;
/// Default byte width of the size histogram written to CSV.
pub const DEFAULT_HISTOGRAM_BYTES: u32 = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("no packets in the {0} direction")]
    EmptyInput(Direction),
    #[error("need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("series has zero variance; correlation undefined")]
    ZeroVariance,
    #[error("lag {lag} out of range for series of length {len}")]
    LagOutOfRange { lag: usize, len: usize },
    #[error("trace duration is zero")]
    ZeroDuration,
    #[error("bucket width must be positive")]
    ZeroBucket,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceStats {
    pub direction: Direction,
    /// Total packet size (header + payload) → packet count.
    pub size_histogram: BTreeMap<u32, u64>,
    pub packets: u64,
    pub ack_packets: u64,
    pub total_bytes: u64,
    pub header_bytes: u64,
    pub ack_bytes: u64,
    pub mean_client_bandwidth_bps: f64,
    pub header_byte_fraction: f64,
    pub ack_byte_fraction: f64,
    pub ack_packet_fraction: f64,
}

impl TraceStats {
    /// Fraction of packets whose total size is strictly below `bytes`.
    pub fn fraction_below(&self, bytes: u32) -> f64 {
        let below: u64 = self.size_histogram.range(..bytes).map(|(_, c)| c).sum();
        below as f64 / self.packets as f64
    }

    /// Size histogram with `width`-byte buckets as `(low, high_exclusive, count)`.
    pub fn bucketed(&self, width: u32) -> Vec<(u32, u32, u64)> {
        let width = width.max(1);
        let mut out: BTreeMap<u32, u64> = BTreeMap::new();
        for (size, count) in &self.size_histogram {
            *out.entry(size / width * width).or_default() += count;
        }
        out.into_iter().map(|(lo, c)| (lo, lo + width, c)).collect()
    }

    /// `bucket_low,bucket_high,count`.
    pub fn write_histogram_csv<W: Write>(&self, mut w: W, width: u32) -> std::io::Result<()> {
        writeln!(w, "bucket_low,bucket_high,count")?;
        for (lo, hi, c) in self.bucketed(width) {
            writeln!(w, "{lo},{hi},{c}")?;
        }
        Ok(())
    }
}

pub fn compute_stats(trace: &Trace, direction: Direction) -> Result<TraceStats, AnalysisError> {
    let mut stats = TraceStats {
        direction,
        size_histogram: BTreeMap::new(),
        packets: 0,
        ack_packets: 0,
        total_bytes: 0,
        header_bytes: 0,
        ack_bytes: 0,
        mean_client_bandwidth_bps: 0.0,
        header_byte_fraction: 0.0,
        ack_byte_fraction: 0.0,
        ack_packet_fraction: 0.0,
    };
    for r in trace.direction(direction) {
        let size = r.size();
        *stats.size_histogram.entry(size).or_default() += 1;
        stats.packets += 1;
        stats.total_bytes += u64::from(size);
        stats.header_bytes += u64::from(r.header_bytes);
        if r.is_ack {
            stats.ack_packets += 1;
            stats.ack_bytes += u64::from(size);
        }
    }
    if stats.packets == 0 {
        return Err(AnalysisError::EmptyInput(direction));
    }
    if trace.duration_ms == 0 {
        return Err(AnalysisError::ZeroDuration);
    }
    let clients = f64::from(trace.n_clients.max(1));
    let seconds = trace.duration_ms as f64 / 1000.0;
    stats.mean_client_bandwidth_bps = stats.total_bytes as f64 * 8.0 / seconds / clients;
    if stats.total_bytes > 0 {
        stats.header_byte_fraction = stats.header_bytes as f64 / stats.total_bytes as f64;
        stats.ack_byte_fraction = stats.ack_bytes as f64 / stats.total_bytes as f64;
    }
    stats.ack_packet_fraction = stats.ack_packets as f64 / stats.packets as f64;
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterarrivalStats {
    pub samples: usize,
    pub mean_ms: f64,
    pub stddev_ms: f64,
    pub p50_ms: u64,
    pub p95_ms: u64,
    pub p99_ms: u64,
}

/// Statistics of consecutive gaps between packets of one connection in one
/// direction. Standard deviation is the population form.
pub fn interarrival_stats(
    trace: &Trace,
    conn_id: u32,
    direction: Direction,
) -> Result<InterarrivalStats, AnalysisError> {
    let mut times: Vec<u64> = trace
        .direction(direction)
        .filter(|r| r.conn_id == conn_id)
        .map(|r| r.t_ms.0)
        .collect();
    times.sort_unstable();
    interarrival_from_times(&times)
}

pub fn interarrival_from_times(times: &[u64]) -> Result<InterarrivalStats, AnalysisError> {
    if times.len() < 2 {
        return Err(AnalysisError::InsufficientData {
            needed: 2,
            got: times.len(),
        });
    }
    let mut gaps: Vec<u64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    let n = gaps.len() as f64;
    let mean = gaps.iter().sum::<u64>() as f64 / n;
    let var = gaps.iter().map(|g| (*g as f64 - mean).powi(2)).sum::<f64>() / n;
    gaps.sort_unstable();
    let pct = |p: f64| {
        let rank = ((p * gaps.len() as f64).ceil() as usize).clamp(1, gaps.len());
        gaps[rank - 1]
    };
    Ok(InterarrivalStats {
        samples: gaps.len(),
        mean_ms: mean,
        stddev_ms: var.sqrt(),
        p50_ms: pct(0.5),
        p95_ms: pct(0.95),
        p99_ms: pct(0.99),
    })
}

/// Packet counts in fixed-width time buckets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountSeries {
    pub bucket_ms: u64,
    pub counts: Vec<u64>,
}

impl CountSeries {
    pub fn new(bucket_ms: u64, counts: Vec<u64>) -> Result<Self, AnalysisError> {
        if bucket_ms == 0 {
            return Err(AnalysisError::ZeroBucket);
        }
        Ok(Self { bucket_ms, counts })
    }

    /// Buckets the packets of `direction` over the trace window. With
    /// `conn_id` set only that connection is counted.
    pub fn from_trace(
        trace: &Trace,
        direction: Direction,
        bucket_ms: u64,
        conn_id: Option<u32>,
    ) -> Result<Self, AnalysisError> {
        if bucket_ms == 0 {
            return Err(AnalysisError::ZeroBucket);
        }
        let len = trace.duration_ms.div_ceil(bucket_ms) as usize;
        let mut counts = vec![0u64; len];
        for r in trace.direction(direction) {
            if conn_id.is_some_and(|c| c != r.conn_id) {
                continue;
            }
            let b = (r.t_ms.0 / bucket_ms) as usize;
            if b < len {
                counts[b] += 1;
            }
        }
        Ok(Self { bucket_ms, counts })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    fn centered(&self) -> Result<(Vec<f64>, f64), AnalysisError> {
        if self.counts.len() < 2 {
            return Err(AnalysisError::InsufficientData {
                needed: 2,
                got: self.counts.len(),
            });
        }
        let n = self.counts.len() as f64;
        let mean = self.counts.iter().map(|c| *c as f64).sum::<f64>() / n;
        let x: Vec<f64> = self.counts.iter().map(|c| *c as f64 - mean).collect();
        let denom: f64 = x.iter().map(|v| v * v).sum();
        if denom <= 0.0 {
            return Err(AnalysisError::ZeroVariance);
        }
        Ok((x, denom))
    }
}

/// Lag-`lag` autocorrelation:
/// `sum_{i < n-lag} (x_i - m)(x_{i+lag} - m) / sum_i (x_i - m)^2`
/// with `m` the full-series mean.
pub fn autocorr(series: &CountSeries, lag: usize) -> Result<f64, AnalysisError> {
    let (x, denom) = series.centered()?;
    if lag >= x.len() {
        return Err(AnalysisError::LagOutOfRange { lag, len: x.len() });
    }
    let num: f64 = x.iter().zip(&x[lag..]).map(|(a, b)| a * b).sum();
    Ok(num / denom)
}

/// Autocorrelation at every lag `0..len`, same estimator as [`autocorr`],
/// computed with one zero-padded FFT round trip.
pub fn acf(series: &CountSeries) -> Result<Vec<f64>, AnalysisError> {
    let (x, denom) = series.centered()?;
    let n = x.len();
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(*v, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let scale = size as f64 * denom;
    Ok(buf[..n].iter().map(|c| c.re / scale).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Period {
    pub lag: usize,
    pub strength: f64,
}

/// Strongest lag in `1..=len/2` if its autocorrelation reaches
/// [`PERIOD_THRESHOLD`]. Ties go to the shorter lag. A constant series has no
/// period.
pub fn detect_period(series: &CountSeries) -> Result<Option<Period>, AnalysisError> {
    detect_period_with(series, PERIOD_THRESHOLD)
}

pub fn detect_period_with(
    series: &CountSeries,
    threshold: f64,
) -> Result<Option<Period>, AnalysisError> {
    if series.len() < 8 {
        return Err(AnalysisError::InsufficientData {
            needed: 8,
            got: series.len(),
        });
    }
    let r = match acf(series) {
        Ok(r) => r,
        Err(AnalysisError::ZeroVariance) => return Ok(None),
        Err(e) => return Err(e),
    };
    let mut best: Option<Period> = None;
    for (lag, &strength) in r.iter().enumerate().take(series.len() / 2 + 1).skip(1) {
        if best.is_none_or(|b| strength > b.strength) {
            best = Some(Period { lag, strength });
        }
    }
    Ok(best.filter(|b| b.strength >= threshold))
}

/// Summary written by the `analyze` command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceReport {
    pub n_clients: u32,
    pub duration_ms: u64,
    pub bucket_ms: u64,
    pub client_to_server: DirectionReport,
    pub server_to_client: Option<DirectionReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectionReport {
    pub packets: u64,
    pub fraction_below_71: f64,
    pub mean_client_bandwidth_bps: f64,
    pub header_byte_fraction: f64,
    pub ack_byte_fraction: f64,
    pub ack_packet_fraction: f64,
    pub mean_packet_bytes: f64,
    /// Aggregate count-series autocorrelation at lags 1..=5.
    pub short_lag_autocorr: Vec<f64>,
    pub period: Option<Period>,
    pub conn0_interarrival: Option<InterarrivalStats>,
    #[serde(skip)]
    pub stats: TraceStats,
}

fn direction_report(
    trace: &Trace,
    d: Direction,
    bucket_ms: u64,
) -> Result<DirectionReport, AnalysisError> {
    let stats = compute_stats(trace, d)?;
    let series = CountSeries::from_trace(trace, d, bucket_ms, None)?;
    let short_lag_autocorr = match acf(&series) {
        Ok(r) => r.into_iter().skip(1).take(5).collect(),
        Err(_) => Vec::new(),
    };
    let period = if series.len() >= 8 {
        detect_period(&series)?
    } else {
        None
    };
    let first_conn = trace.direction(d).map(|r| r.conn_id).min();
    let conn0_interarrival = first_conn.and_then(|c| interarrival_stats(trace, c, d).ok());
    Ok(DirectionReport {
        packets: stats.packets,
        fraction_below_71: stats.fraction_below(71),
        mean_client_bandwidth_bps: stats.mean_client_bandwidth_bps,
        header_byte_fraction: stats.header_byte_fraction,
        ack_byte_fraction: stats.ack_byte_fraction,
        ack_packet_fraction: stats.ack_packet_fraction,
        mean_packet_bytes: stats.total_bytes as f64 / stats.packets as f64,
        short_lag_autocorr,
        period,
        conn0_interarrival,
        stats,
    })
}

/// Client-side statistics are required; server-side ones are included when
/// the trace has any server packets.
pub fn analyze_trace(trace: &Trace, bucket_ms: u64) -> Result<TraceReport, AnalysisError> {
    let client_to_server = direction_report(trace, Direction::ClientToServer, bucket_ms)?;
    let server_to_client = match direction_report(trace, Direction::ServerToClient, bucket_ms) {
        Ok(r) => Some(r),
        Err(AnalysisError::EmptyInput(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(TraceReport {
        n_clients: trace.n_clients,
        duration_ms: trace.duration_ms,
        bucket_ms,
        client_to_server,
        server_to_client,
    })
}
