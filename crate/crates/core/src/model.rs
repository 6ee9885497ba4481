//! Domain primitives: 3-D vectors, millisecond clock, DR vectors and scripted
//! ground-truth trajectories.

use std::fmt;
use std::io::Read;
use std::ops::{Add, Mul, Sub};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot extrapolate backwards: t={t} is before t_sent={t_sent}")]
    BackwardExtrapolation { t: TimeMs, t_sent: TimeMs },
    #[error("t={t} outside trajectory range [{start}, {end}]")]
    OutOfRange {
        t: TimeMs,
        start: TimeMs,
        end: TimeMs,
    },
    #[error("trajectory needs at least 2 waypoints, got {0}")]
    TooFewWaypoints(usize),
    #[error("waypoint times must be strictly increasing (index {0})")]
    NonIncreasingWaypoints(usize),
    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),
    #[error("trajectory csv: {0}")]
    Csv(String),
    #[error("trajectory csv: {0}")]
    Io(#[from] std::io::Error),
}

/// Position or velocity in world units (or world units per second).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// Largest millisecond value accepted in configs (about 31 years). Keeps
/// sums of latencies, timeouts and durations far from `u64` overflow.
pub const MAX_CONFIG_MS: u64 = 1_000_000_000_000;

/// Pushes a violation for `field` when `ms` exceeds [`MAX_CONFIG_MS`].
pub fn check_ms(v: &mut Vec<(String, String)>, field: &str, ms: u64) {
    if ms > MAX_CONFIG_MS {
        v.push((field.to_string(), format!("must be <= {MAX_CONFIG_MS}")));
    }
}

/// Milliseconds since simulation start.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct TimeMs(pub u64);

impl TimeMs {
    pub const ZERO: TimeMs = TimeMs(0);

    pub fn as_u64(self) -> u64 {
        self.0
    }

    pub fn saturating_sub(self, other: TimeMs) -> u64 {
        self.0.saturating_sub(other.0)
    }
}

impl Add<u64> for TimeMs {
    type Output = TimeMs;
    fn add(self, ms: u64) -> TimeMs {
        TimeMs(self.0 + ms)
    }
}

impl fmt::Display for TimeMs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}

/// Opaque entity identifier.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct EntityId(pub u32);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A dead-reckoning update: where the entity was at `t_sent` and how fast it
/// was moving along each axis (world units per second).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrVector {
    pub entity_id: EntityId,
    pub seq: u64,
    pub t_sent: TimeMs,
    pub position: Vec3,
    pub velocity: Vec3,
}

impl DrVector {
    /// Encoded size in bytes, see [`DrVector::encode`].
    pub const WIRE_SIZE: usize = 4 + 8 + 8 + 6 * 8;

    /// Little-endian wire encoding: entity id (u32), seq (u64), t_sent (u64),
    /// then position and velocity as six f64 values.
    pub fn encode(&self) -> [u8; Self::WIRE_SIZE] {
        let mut buf = [0u8; Self::WIRE_SIZE];
        buf[0..4].copy_from_slice(&self.entity_id.0.to_le_bytes());
        buf[4..12].copy_from_slice(&self.seq.to_le_bytes());
        buf[12..20].copy_from_slice(&self.t_sent.0.to_le_bytes());
        let comps = [
            self.position.x,
            self.position.y,
            self.position.z,
            self.velocity.x,
            self.velocity.y,
            self.velocity.z,
        ];
        for (i, c) in comps.iter().enumerate() {
            let at = 20 + i * 8;
            buf[at..at + 8].copy_from_slice(&c.to_le_bytes());
        }
        buf
    }

    pub fn decode(buf: &[u8]) -> Option<DrVector> {
        if buf.len() != Self::WIRE_SIZE {
            return None;
        }
        let u32_at = |at: usize| u32::from_le_bytes(buf[at..at + 4].try_into().unwrap());
        let u64_at = |at: usize| u64::from_le_bytes(buf[at..at + 8].try_into().unwrap());
        let f64_at = |i: usize| f64::from_le_bytes(buf[20 + i * 8..28 + i * 8].try_into().unwrap());
        let dr = DrVector {
            entity_id: EntityId(u32_at(0)),
            seq: u64_at(4),
            t_sent: TimeMs(u64_at(12)),
            position: Vec3::new(f64_at(0), f64_at(1), f64_at(2)),
            velocity: Vec3::new(f64_at(3), f64_at(4), f64_at(5)),
        };
        (dr.position.is_finite() && dr.velocity.is_finite()).then_some(dr)
    }
}

/// Predicted position of the entity described by `dr` at time `t`.
pub fn extrapolate(dr: &DrVector, t: TimeMs) -> Result<Vec3, ModelError> {
    if t < dr.t_sent {
        return Err(ModelError::BackwardExtrapolation {
            t,
            t_sent: dr.t_sent,
        });
    }
    let dt_s = (t.0 - dr.t_sent.0) as f64 / 1000.0;
    Ok(dr.position + dr.velocity * dt_s)
}

/// Euclidean distance between two points.
pub fn deviation(a: Vec3, b: Vec3) -> f64 {
    (a - b).norm()
}

/// Piecewise-linear ground-truth path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryScript {
    waypoints: Vec<(TimeMs, Vec3)>,
}

impl TrajectoryScript {
    pub fn new(waypoints: Vec<(TimeMs, Vec3)>) -> Result<Self, ModelError> {
        if waypoints.len() < 2 {
            return Err(ModelError::TooFewWaypoints(waypoints.len()));
        }
        for (i, pair) in waypoints.windows(2).enumerate() {
            if pair[1].0 <= pair[0].0 {
                return Err(ModelError::NonIncreasingWaypoints(i + 1));
            }
        }
        if waypoints.iter().any(|(_, p)| !p.is_finite()) {
            return Err(ModelError::NonFinite("waypoint"));
        }
        Ok(Self { waypoints })
    }

    pub fn waypoints(&self) -> &[(TimeMs, Vec3)] {
        &self.waypoints
    }

    pub fn start(&self) -> TimeMs {
        self.waypoints[0].0
    }

    pub fn end(&self) -> TimeMs {
        self.waypoints[self.waypoints.len() - 1].0
    }

    /// Position at `t`, linearly interpolated between the bracketing waypoints.
    pub fn sample(&self, t: TimeMs) -> Result<Vec3, ModelError> {
        let (start, end) = (self.start(), self.end());
        if t < start || t > end {
            return Err(ModelError::OutOfRange { t, start, end });
        }
        // first waypoint with time >= t
        let idx = self.waypoints.partition_point(|(wt, _)| *wt < t);
        let (t1, p1) = self.waypoints[idx];
        if t1 == t {
            return Ok(p1);
        }
        let (t0, p0) = self.waypoints[idx - 1];
        let frac = (t.0 - t0.0) as f64 / (t1.0 - t0.0) as f64;
        Ok(p0 + (p1 - p0) * frac)
    }

    /// Reads a `t_ms,x,y,z` CSV with header.
    pub fn from_csv_reader<R: Read>(rdr: R) -> Result<Self, ModelError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(rdr);
        let headers = rdr
            .headers()
            .map_err(|e| ModelError::Csv(e.to_string()))?
            .clone();
        let expected = ["t_ms", "x", "y", "z"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(ModelError::Csv(format!(
                "expected header t_ms,x,y,z, got {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut waypoints = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| ModelError::Csv(e.to_string()))?;
            let bad = |field: &str| ModelError::Csv(format!("row {}: bad {field}", line + 1));
            let t: u64 = rec[0].parse().map_err(|_| bad("t_ms"))?;
            let x: f64 = rec[1].parse().map_err(|_| bad("x"))?;
            let y: f64 = rec[2].parse().map_err(|_| bad("y"))?;
            let z: f64 = rec[3].parse().map_err(|_| bad("z"))?;
            waypoints.push((TimeMs(t), Vec3::new(x, y, z)));
        }
        Self::new(waypoints)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self, ModelError> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_ms,x,y,z\n");
        for (t, p) in &self.waypoints {
            out.push_str(&format!("{},{},{},{}\n", t.0, p.x, p.y, p.z));
        }
        out
    }
}
