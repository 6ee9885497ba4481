use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use drsync::analysis::{self, AnalysisError, DEFAULT_BUCKET_MS, DEFAULT_HISTOGRAM_BYTES};
use drsync::qon::{self, FitHyper, PredictorWeights, QonError};
use drsync::scenario::{self, ScenarioConfig, ScenarioError};
use drsync::workload::{self, Trace, WorkloadError, WorkloadProfile};

#[derive(Parser)]
#[command(
    name = "drsync",
    version,
    about = "Dead-reckoning sync and game traffic toolkit"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario.
    Simulate(#[command(flatten)] Common),
    /// Run reliable and unreliable transports over paired seeds.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated seeds or ranges, e.g. `1-10` or `1,4,9`.
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Generate a synthetic game traffic trace.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "mmorpg")]
        preset: String,
        #[arg(long, default_value_t = 50)]
        clients: u32,
        #[arg(long, default_value_t = 600_000)]
        duration_ms: u64,
    },
    /// Compute statistics of a trace CSV.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trace: PathBuf,
        /// Observation window; defaults to the last timestamp rounded up to a second.
        #[arg(long)]
        duration_ms: Option<u64>,
        #[arg(long, default_value_t = DEFAULT_BUCKET_MS)]
        bucket_ms: u64,
    },
    /// Score session metrics with predictor weights.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Weights JSON; the calibrated weights are used when omitted.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, default_value_t = qon::DEFAULT_DECISION_THRESHOLD)]
        threshold: f64,
    },
    /// Fit predictor weights on labelled sessions.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Labelled sessions CSV; a synthetic dataset is generated when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = qon::CALIBRATION_SESSIONS)]
        sessions: usize,
        #[arg(long, default_value_t = qon::CALIBRATION_HYPER.epochs)]
        epochs: usize,
        #[arg(long, default_value_t = qon::CALIBRATION_HYPER.learn_rate)]
        learn_rate: f64,
    },
}

enum Failure {
    Invalid(String),
    Io(String),
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else {
            Failure::Invalid(e.to_string())
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else {
            Failure::Invalid(e.to_string())
        }
    }
}

fn csv_failure(e: &csv::Error, msg: String) -> Failure {
    if e.is_io_error() {
        Failure::Io(msg)
    } else {
        Failure::Invalid(msg)
    }
}

impl From<WorkloadError> for Failure {
    fn from(e: WorkloadError) -> Self {
        match &e {
            WorkloadError::Csv(c) => csv_failure(c, e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<QonError> for Failure {
    fn from(e: QonError) -> Self {
        match &e {
            QonError::Csv(c) => csv_failure(c, e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

fn open(path: &Path) -> Result<fs::File, Failure> {
    fs::File::open(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<fs::File>, Failure> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(fs::File::create(dir.join(name))?))
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), Failure> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Writes to stdout; a closed pipe on the reading side is not an error.
fn emit(text: &str) -> Result<(), Failure> {
    match writeln!(io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Failure> {
    emit(&serde_json::to_string_pretty(value)?)
}

fn load_scenario(c: &Common) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match &c.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => scenario::comparison_scenario(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.output_dir = Some(out.clone());
    }
    Ok(cfg)
}

fn parse_seeds(arg: &str) -> Result<Vec<u64>, Failure> {
    let bad = || Failure::Invalid(format!("bad --seeds value {arg:?}"));
    let mut seeds = Vec::new();
    for part in arg.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) =
                    (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(part.parse().map_err(|_| bad())?),
        }
    }
    Ok(seeds)
}

fn run(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Simulate(c) => {
            let summary = scenario::run_simulation(&load_scenario(&c)?)?;
            print_json(&summary)
        }
        Cmd::Compare { common, seeds } => {
            let cfg = load_scenario(&common)?;
            let seeds = match seeds {
                Some(s) => parse_seeds(&s)?,
                None => (cfg.seed..cfg.seed.saturating_add(10)).collect(),
            };
            let cmp = scenario::run_compare(&cfg, &seeds)?;
            for r in &cmp.rows {
                emit(&format!(
                    "seed {:>4}  reliable {:>9.4}  unreliable {:>9.4}  diff {:>+9.4}",
                    r.seed, r.reliable.mean, r.unreliable.mean, r.mean_diff
                ))?;
            }
            emit(&format!(
                "unreliable lower in {}/{} seeds, mean paired difference {:+.4}",
                cmp.unreliable_wins,
                cmp.rows.len(),
                cmp.mean_of_diffs
            ))
        }
        Cmd::Generate {
            common,
            preset,
            clients,
            duration_ms,
        } => {
            let profile: WorkloadProfile = match &common.config {
                Some(p) => serde_json::from_reader(open(p)?)?,
                None => workload::preset(&preset)?,
            };
            let trace =
                workload::generate_trace(&profile, clients, duration_ms, common.seed.unwrap_or(1))?;
            match &common.out {
                Some(dir) => {
                    let mut w = create(dir, "trace.csv")?;
                    trace.write_csv(&mut w)?;
                    w.flush()?;
                    write_json(dir, "profile.json", &profile)?;
                    eprintln!(
                        "{} records -> {}",
                        trace.records.len(),
                        dir.join("trace.csv").display()
                    );
                }
                None => {
                    let stdout = io::stdout();
                    let mut w = BufWriter::new(stdout.lock());
                    trace.write_csv(&mut w)?;
                    w.flush()?;
                }
            }
            Ok(())
        }
        Cmd::Analyze {
            common,
            trace,
            duration_ms,
            bucket_ms,
        } => {
            let trace = Trace::read_csv(open(&trace)?, duration_ms)?;
            let report = analysis::analyze_trace(&trace, bucket_ms)?;
            if let Some(dir) = &common.out {
                write_json(dir, "stats.json", &report)?;
                let mut w = create(dir, "histogram.csv")?;
                report
                    .client_to_server
                    .stats
                    .write_histogram_csv(&mut w, DEFAULT_HISTOGRAM_BYTES)?;
                w.flush()?;
                if let Some(s2c) = &report.server_to_client {
                    let mut w = create(dir, "histogram_s2c.csv")?;
                    s2c.stats
                        .write_histogram_csv(&mut w, DEFAULT_HISTOGRAM_BYTES)?;
                    w.flush()?;
                }
            }
            print_json(&report)
        }
        Cmd::Predict {
            common,
            weights,
            metrics,
            threshold,
        } => {
            if !(0.0..=1.0).contains(&threshold) {
                return Err(Failure::Invalid(format!(
                    "--threshold {threshold} outside [0, 1]"
                )));
            }
            let w: PredictorWeights = match &weights {
                Some(p) => serde_json::from_reader(open(p)?)?,
                None => PredictorWeights::calibrated(),
            };
            if !w.is_finite() {
                return Err(Failure::Invalid("weights must be finite".into()));
            }
            let rows = qon::read_sessions_csv(open(&metrics)?, false)?;
            let mut out: Box<dyn Write> = match &common.out {
                Some(dir) => Box::new(create(dir, "predictions.csv")?),
                None => Box::new(io::stdout().lock()),
            };
            writeln!(
                out,
                "row,rtt_mean_ms,rtt_jitter_ms,loss_rate,score,premature_flag,action"
            )?;
            for (i, s) in rows.iter().enumerate() {
                let m = &s.metrics;
                // no probe information in a metrics file: loss alone decides
                let recoverable = qon::connectivity_recoverable(m.loss_rate, true);
                let a = qon::assess(&w, m, threshold, recoverable);
                let action = serde_json::to_value(a.action)?;
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    i + 1,
                    m.rtt_mean_ms,
                    m.rtt_jitter_ms,
                    m.loss_rate,
                    a.score,
                    u8::from(a.premature_flag),
                    action.as_str().unwrap_or_default()
                )?;
            }
            out.flush()?;
            Ok(())
        }
        Cmd::Fit {
            common,
            data,
            sessions,
            epochs,
            learn_rate,
        } => {
            let dataset = match &data {
                Some(p) => qon::read_sessions_csv(open(p)?, true)?,
                None => qon::synthetic_dataset(
                    &qon::CALIBRATION_PARAMS,
                    sessions,
                    common.seed.unwrap_or(qon::CALIBRATION_SEED),
                ),
            };
            let (train, test) = qon::train_test_split(&dataset, 0.7);
            let w = qon::fit_weights(train, &FitHyper { learn_rate, epochs })?;
            let acc = qon::accuracy(&w, test, qon::DEFAULT_DECISION_THRESHOLD);
            if let Some(dir) = &common.out {
                write_json(dir, "weights.json", &w)?;
                if data.is_none() {
                    let mut f = create(dir, "dataset.csv")?;
                    qon::write_dataset_csv(&dataset, &mut f)?;
                    f.flush()?;
                }
            }
            print_json(&w)?;
            eprintln!("held-out accuracy {acc:.4} on {} sessions", test.len());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let filter = env_logger::Env::new().filter_or("DRSYNC_LOG", "warn");
    env_logger::Builder::from_env(filter).init();

    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("io error: {msg}");
            ExitCode::from(2)
        }
    }
}
