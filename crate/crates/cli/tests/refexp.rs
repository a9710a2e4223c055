//! Scratch experiment driver for picking the reference-run configuration.
//! Run explicitly: cargo test -p jvae-cli --test refexp -- --ignored --nocapture

use jvae_core::data::{generate_utterances, ParallelUtterance, SynthConfig};
use jvae_core::train::{evaluate, train_run_in_memory, MetricsRow, Objective, TrainConfig};

fn split_corpus(seed: u64) -> (Vec<ParallelUtterance>, Vec<ParallelUtterance>) {
    let tmin: usize = std::env::var("REF_TMIN")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(20);
    let tmax: usize = std::env::var("REF_TMAX")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(40);
    let synth = SynthConfig {
        seed,
        ..SynthConfig::default()
    };
    let mut utts = generate_utterances(&synth, 120, (tmin, tmax)).unwrap();
    let eval = utts.split_off(100);
    (utts, eval)
}

fn run_objective(
    objective: Objective,
    seed: u64,
    epochs: usize,
    lr: f64,
    train: &[ParallelUtterance],
    evalu: &[ParallelUtterance],
    out: &std::path::Path,
) -> (f64, f64, Vec<MetricsRow>) {
    let mut cfg = TrainConfig {
        objective,
        epochs,
        seed,
        ..TrainConfig::default()
    };
    cfg.optim.learning_rate = lr;
    let outcome = train_run_in_memory(&cfg, train.to_vec(), out).unwrap();
    if matches!(objective, Objective::Vae) {
        return (f64::NAN, f64::NAN, outcome.rows);
    }
    let report = evaluate(
        &outcome.model,
        evalu,
        matches!(objective, Objective::Am),
    )
    .unwrap();
    (
        report.frame_error_pct,
        report.mean_enhancement_gain,
        outcome.rows,
    )
}

fn quartile_stats(rows: &[MetricsRow]) -> (f64, f64, f64, f64) {
    let n = rows.len();
    let q = n / 4;
    let kld_late: Vec<f64> = rows[n - q..].iter().filter_map(|r| r.terms.kld).collect();
    let mut kld_sorted = kld_late.clone();
    kld_sorted.sort_by(f64::total_cmp);
    let kld_median = if kld_sorted.is_empty() {
        f64::NAN
    } else {
        kld_sorted[kld_sorted.len() / 2]
    };

    let slope = |rows: &[MetricsRow]| -> f64 {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter_map(|r| r.terms.mse_da.map(|v| (r.step as f64, v)))
            .collect();
        if pts.len() < 2 {
            return f64::NAN;
        }
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    };
    let first_slope = slope(&rows[..q]);
    let last_slope = slope(&rows[n - q..]);
    let da_first = rows[..q]
        .iter()
        .filter_map(|r| r.terms.mse_da)
        .collect::<Vec<_>>();
    let da_drop = if da_first.is_empty() {
        f64::NAN
    } else {
        da_first[0] - da_first[da_first.len() - 1]
    };
    (kld_median, first_slope, last_slope, da_drop)
}

#[test]
#[ignore]
fn reference_sweep() {
    let epochs: usize = std::env::var("REF_EPOCHS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(12);
    let lr: f64 = std::env::var("REF_LR")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1e-3);
    let seeds: u64 = std::env::var("REF_SEEDS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1);

    let dir = tempfile::tempdir().unwrap();
    let results: Vec<String> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..seeds)
            .map(|seed| {
                let dir = dir.path().to_path_buf();
                scope.spawn(move || {
                    let started = std::time::Instant::now();
                    let (train, evalu) = split_corpus(seed);
                    let (err_m, gain_m, rows_m) = run_objective(
                        Objective::Matched,
                        seed,
                        epochs,
                        lr,
                        &train,
                        &evalu,
                        &dir.join(format!("m{seed}")),
                    );
                    let (err_d, gain_d, _) = run_objective(
                        Objective::Da,
                        seed,
                        epochs,
                        lr,
                        &train,
                        &evalu,
                        &dir.join(format!("d{seed}")),
                    );
                    let (err_a, _, _) = run_objective(
                        Objective::Am,
                        seed,
                        epochs,
                        lr,
                        &train,
                        &evalu,
                        &dir.join(format!("a{seed}")),
                    );
                    let (err_v, _, rows_v) = run_objective(
                        Objective::Vae,
                        seed,
                        epochs,
                        lr,
                        &train,
                        &evalu,
                        &dir.join(format!("v{seed}")),
                    );
                    let (kld_m, s1, s2, drop) = quartile_stats(&rows_m);
                    let da_first = rows_m.iter().find_map(|r| r.terms.mse_da).unwrap_or(f64::NAN);
                    let da_last = rows_m.iter().rev().find_map(|r| r.terms.mse_da).unwrap_or(f64::NAN);
                    let ce_last = rows_m.iter().rev().find_map(|r| r.terms.ce).unwrap_or(f64::NAN);
                    let kld_v = {
                        let n = rows_v.len();
                        let mut late: Vec<f64> = rows_v[n - n / 4..]
                            .iter()
                            .filter_map(|r| r.terms.kld)
                            .collect();
                        late.sort_by(f64::total_cmp);
                        late[late.len() / 2]
                    };
                    let _ = err_v;
                    format!(
                        "seed {seed}: matched {err_m:.2} da {err_d:.2} am {err_a:.2} | gain m {gain_m:.4} d {gain_d:.4} | kld_m {kld_m:.4} kld_v {kld_v:.4} | da_slope {s1:.5} -> {s2:.5} (drop {drop:.4}) | mse_da {da_first:.3}->{da_last:.3} ce_last {ce_last:.3} | {:.0}s",
                        started.elapsed().as_secs_f64()
                    )
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for r in results {
        println!("{r}");
    }
}
