use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use drsync::qon::PredictorWeights;
use drsync::scenario::{comparison_scenario, ScenarioConfig};

fn drsync(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drsync"))
        .args(args)
        .env("DRSYNC_LOG", "off")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, cfg: &ScenarioConfig) -> String {
    let p = dir.join("s.json");
    fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p.display().to_string()
}

fn short_scenario() -> ScenarioConfig {
    ScenarioConfig {
        duration_ms: 20_000,
        ..comparison_scenario()
    }
}

#[test]
fn simulate_writes_outputs_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &short_scenario());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = drsync(&[
            "simulate",
            "--config",
            &cfg,
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in [
        "summary.json",
        "errors.csv",
        "sends.csv",
        "deliveries_0.csv",
    ] {
        let (x, y) = (fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
        assert!(!x.is_empty());
        assert_eq!(x, y, "{f} differs");
    }
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 7);
}

#[test]
fn compare_writes_paired_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &short_scenario());
    let out = tmp.path().join("c");
    let o = drsync(&[
        "compare",
        "--config",
        &cfg,
        "--seeds",
        "1-3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("compare.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(out.join("seed_2/reliable/summary.json").exists());
    assert!(out.join("seed_2/unreliable/errors.csv").exists());

    let o = drsync(&["compare", "--config", &cfg, "--seeds", "5"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn generate_then_analyze() {
    let tmp = tempfile::tempdir().unwrap();
    let g = tmp.path().join("g");
    let o = drsync(&[
        "generate",
        "--preset",
        "mmorpg",
        "--clients",
        "50",
        "--duration-ms",
        "600000",
        "--seed",
        "3",
        "--out",
        g.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let profile: serde_json::Value =
        serde_json::from_slice(&fs::read(g.join("profile.json")).unwrap()).unwrap();
    assert_eq!(profile["header_bytes"], 40);

    let r = tmp.path().join("r");
    let trace = g.join("trace.csv");
    let o = drsync(&[
        "analyze",
        "--trace",
        trace.to_str().unwrap(),
        "--out",
        r.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stats: serde_json::Value =
        serde_json::from_slice(&fs::read(r.join("stats.json")).unwrap()).unwrap();
    let c2s = &stats["client_to_server"];
    assert!(c2s["fraction_below_71"].as_f64().unwrap() >= 0.98, "{c2s}");
    assert_eq!(stats["duration_ms"], 600_000);
    assert_eq!(c2s["period"]["lag"], 2);
    let hist = fs::read_to_string(r.join("histogram.csv")).unwrap();
    assert!(hist.starts_with("bucket_low,bucket_high,count\n"));
    let total: u64 = hist
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(total, c2s["packets"].as_u64().unwrap());
}

#[test]
fn generate_rejects_unknown_preset() {
    let o = drsync(&[
        "generate",
        "--preset",
        "rts",
        "--clients",
        "2",
        "--duration-ms",
        "1000",
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn predict_scores_clean_sessions_low() {
    let tmp = tempfile::tempdir().unwrap();
    let weights = tmp.path().join("w.json");
    fs::write(
        &weights,
        serde_json::to_string(&PredictorWeights::calibrated()).unwrap(),
    )
    .unwrap();
    let metrics = tmp.path().join("m.csv");
    fs::write(
        &metrics,
        "rtt_mean_ms,rtt_jitter_ms,loss_rate,elapsed_min\n0,0,0,0\n0,0,0,3\n",
    )
    .unwrap();
    let out = tmp.path().join("p");
    let o = drsync(&[
        "predict",
        "--weights",
        weights.to_str().unwrap(),
        "--metrics",
        metrics.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("predictions.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut n = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let score: f64 = rec[4].parse().unwrap();
        assert!(score <= 0.1, "{score}");
        assert_eq!(&rec[6], "none");
        n += 1;
    }
    assert_eq!(n, 2);
}

#[test]
fn fit_reproduces_calibrated_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("f");
    let o = drsync(&["fit", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let w: PredictorWeights =
        serde_json::from_slice(&fs::read(out.join("weights.json")).unwrap()).unwrap();
    assert_eq!(w, PredictorWeights::calibrated());

    // refit from the written dataset
    let data = out.join("dataset.csv");
    let o = drsync(&["fit", "--data", data.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let w2: PredictorWeights = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(w2, w);
}

#[test]
fn exit_codes() {
    assert_eq!(code(&drsync(&["simulate", "--bogus"])), 1);
    assert_eq!(code(&drsync(&[])), 1);
    assert_eq!(code(&drsync(&["--help"])), 0);
    assert_eq!(
        code(&drsync(&[
            "simulate",
            "--config",
            "/definitely/not/here.json"
        ])),
        2
    );
    assert_eq!(
        code(&drsync(&["analyze", "--trace", "/definitely/not/here.csv"])),
        2
    );

    let tmp = tempfile::tempdir().unwrap();
    let mut bad = short_scenario();
    bad.channel.loss_rate = 2.0;
    bad.protocol.tick_ms = 0;
    let cfg = write_config(tmp.path(), &bad);
    let o = drsync(&["simulate", "--config", &cfg]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("channel.loss_rate") && err.contains("protocol.tick_ms"),
        "{err}"
    );

    let typo = tmp.path().join("typo.json");
    fs::write(&typo, r#"{"channel":{"base_latency_ms":0,"jitter_max_ms":0,"loss_rate":0},"transport":{"mode":"unreliable_dr"},"duration_ms":1000,"sede":3}"#).unwrap();
    assert_eq!(
        code(&drsync(&["simulate", "--config", typo.to_str().unwrap()])),
        1
    );
}
