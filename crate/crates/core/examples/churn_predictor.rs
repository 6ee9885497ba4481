//! Premature-departure prediction: generate labelled sessions from the
//! synthetic churn model, fit the logistic predictor, and turn scores into
//! actions.
//!
//!     cargo run --release --example churn_predictor

use drsync::qon::{
    accuracy, assess, calibration_dataset, connectivity_recoverable, fit_weights, train_test_split,
    PredictorWeights, SessionMetrics, CALIBRATION_HYPER, DEFAULT_DECISION_THRESHOLD,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = calibration_dataset();
    let quits = data.iter().filter(|s| s.quit_premature).count();
    println!("{} sessions, {quits} quit early", data.len());

    let (train, test) = train_test_split(&data, 0.7);
    let w = fit_weights(train, &CALIBRATION_HYPER)?;
    println!("fitted {w:?}");
    println!(
        "held-out accuracy {:.3}",
        accuracy(&w, test, DEFAULT_DECISION_THRESHOLD)
    );
    assert_eq!(w, PredictorWeights::calibrated());

    println!(
        "\n{:>6} {:>7} {:>5} {:>6}  action",
        "rtt", "jitter", "loss", "score"
    );
    for (rtt, jitter, loss) in [
        (40.0, 5.0, 0.0),
        (120.0, 20.0, 0.01),
        (250.0, 50.0, 0.05),
        (380.0, 90.0, 0.12),
        (300.0, 60.0, 0.6),
    ] {
        let m = SessionMetrics {
            rtt_mean_ms: rtt,
            rtt_jitter_ms: jitter,
            loss_rate: loss,
            elapsed_min: 2.0,
        };
        let a = assess(
            &w,
            &m,
            DEFAULT_DECISION_THRESHOLD,
            connectivity_recoverable(loss, true),
        );
        println!(
            "{rtt:>6} {jitter:>7} {loss:>5} {:>6.3}  {:?}",
            a.score, a.action
        );
    }
    Ok(())
}
