//! Acceptance gate. Each test checks one shipped guarantee end to end and
//! prints a `pass:` line with the measured quantities (visible under
//! `--nocapture`); tolerances are pinned inline next to each assertion.

use num_complex::Complex;
use rand::Rng;
use std::process::Command;
use tidet::channel::{noise_sigma_from_snr, sample_complex_channel, sample_transmit, to_real_system};
use tidet::detectors::{ti_forward, DetectorParams};
use tidet::eval::{layer_trace, snr_sweep, DetectorKind, EvalConfig};
use tidet::linalg::DenseMatrix;
use tidet::stream::rng_from;
use tidet::training::{squared_loss, ti_backward, train_incremental, TrainConfig};
use tidet::{Params, Scalar, System};

fn single_sample_loss(sys: &System, y: &[f64], x: &[f64], p: &Params, depth: usize) -> f64 {
    let trace = ti_forward(sys, y, p, depth).unwrap();
    squared_loss(&[x.to_vec()], &[trace.estimate().to_vec()]).unwrap()
}

/// Gradient oracle: analytic backward pass against central finite
/// differences (h = 1e-6), per-parameter relative error <= 1e-5, over 20
/// random instances with signal dim <= 16, observation dim <= 10, depth <= 5.
#[test]
fn a1_backward_gradients_match_finite_differences() {
    let mut rng = rng_from(0xA1);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.gen_range(2..=8usize);
        let m = rng.gen_range(1..=n.min(5));
        let depth = rng.gen_range(1..=5usize);
        let ch = sample_complex_channel::<f64, _>(n, m, &mut rng).unwrap();
        let sigma_w2 = noise_sigma_from_snr(10.0, 2 * n);
        let sys = to_real_system(&ch, sigma_w2).unwrap();
        let gamma: Vec<f64> = (0..depth).map(|_| rng.gen_range(0.5..1.5)).collect();
        let theta: Vec<f64> = (0..depth)
            .map(|_| rng.gen_range(0.5..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        let params = DetectorParams::new(gamma, theta).unwrap();
        let x = sample_transmit::<f64, _>(2 * n, &mut rng);
        let obs = sys.transmit(&x, &mut rng).unwrap();

        let trace = ti_forward(&sys, &obs.y, &params, depth).unwrap();
        let grads = ti_backward(&sys, &trace, &x, &params, depth).unwrap();

        let mut check = |analytic: f64, bump: &dyn Fn(&mut Params, f64)| {
            let mut plus = params.clone();
            bump(&mut plus, h);
            let mut minus = params.clone();
            bump(&mut minus, -h);
            let fd = (single_sample_loss(&sys, &obs.y, &x, &plus, depth)
                - single_sample_loss(&sys, &obs.y, &x, &minus, depth))
                / (2.0 * h);
            // Central differences at h = 1e-6 carry ~1e-10 absolute noise, so
            // below a 1e-3 gradient magnitude the comparison switches to the
            // equivalent absolute bound (still <= 1e-8 there).
            let denom = analytic.abs().max(fd.abs()).max(1e-3);
            let rel = (analytic - fd).abs() / denom;
            worst = worst.max(rel);
            assert!(rel <= 1e-5, "rel {rel} (analytic {analytic}, fd {fd})");
        };
        for i in 0..depth {
            check(grads.dgamma[i], &|p: &mut Params, d: f64| p.gamma[i] += d);
            check(grads.dtheta[i], &|p: &mut Params, d: f64| p.theta[i] += d);
        }
    }
    println!("A1 pass: worst relative error {worst:.3e} (<= 1e-5)");
}

fn frob_diff(a: &DenseMatrix<f64>, b: &DenseMatrix<f64>) -> f64 {
    assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()));
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

/// All four Moore-Penrose identities hold to 1e-8 Frobenius on 100 random
/// full-row-rank matrices with rows <= cols <= 64.
#[test]
fn a2_pseudo_inverse_satisfies_moore_penrose_identities() {
    let mut rng = rng_from(0xA2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let cols = rng.gen_range(1..=64usize);
        let rows = rng.gen_range(1..=cols);
        let data: Vec<f64> = (0..rows * cols).map(|_| f64::standard_normal(&mut rng)).collect();
        let h = DenseMatrix::new(rows, cols, data).unwrap();
        let w = tidet::linalg::pseudo_inverse(&h).unwrap();
        let hw = h.matmul(&w).unwrap();
        let wh = w.matmul(&h).unwrap();
        let residuals = [
            frob_diff(&hw.matmul(&h).unwrap(), &h),
            frob_diff(&wh.matmul(&w).unwrap(), &w),
            frob_diff(&hw.transpose(), &hw),
            frob_diff(&wh.transpose(), &wh),
        ];
        for r in residuals {
            worst = worst.max(r);
            assert!(r <= 1e-8, "identity residual {r} at {rows}x{cols}");
        }
    }
    println!("A2 pass: worst Frobenius residual {worst:.3e} (<= 1e-8)");
}

/// Power convention behind SNR = E_s/N_0 = N/sigma_w^2: the Monte-Carlo
/// mean of ||Hx||^2 / m over complex channel draws equals 2n within 5%.
#[test]
fn a3_transmit_power_matches_snr_convention() {
    let mut rng = rng_from(0xA3);
    let (n, m) = (100usize, 64usize);
    let draws = 10_000usize;
    let mut total = 0.0f64;
    for _ in 0..draws {
        let ch = sample_complex_channel::<f64, _>(n, m, &mut rng).unwrap();
        let x = sample_transmit::<f64, _>(2 * n, &mut rng);
        for i in 0..m {
            let mut acc = Complex::new(0.0, 0.0);
            for j in 0..n {
                acc += ch.entries[i * n + j] * Complex::new(x[j], x[j + n]);
            }
            total += acc.norm_sqr();
        }
    }
    let mean = total / (draws as f64 * m as f64);
    let expect = 2.0 * n as f64;
    let rel = (mean / expect - 1.0).abs();
    assert!(rel <= 0.05, "mean {mean} vs {expect}, rel {rel}");
    println!("A3 pass: E||Hx||^2/m = {mean:.2} vs 2n = {expect} (rel {rel:.4} <= 0.05)");
}

/// Detection ordering at signal dim 64, observation dim 40, 15 dB, 20
/// layers: after training with batch 500, 500 batches per round, lr 0.025,
/// the trained detector's BER is at most half the MMSE BER, both counted
/// to at least 100 bit errors.
#[test]
fn a4_trained_detector_halves_mmse_error_rate() {
    let cfg = TrainConfig::<f64> {
        n: 32,
        m: 20,
        snr_db: 15.0,
        layers: 20,
        batch: 500,
        rounds_batches: 500,
        lr: 0.025,
        seed: 41,
        carry_adam: false,
    };
    let (params, _) = train_incremental(&cfg).unwrap();
    let eval = EvalConfig::<f64> {
        n: 32,
        m: 20,
        snrs_db: vec![15.0],
        detectors: vec![DetectorKind::Ti, DetectorKind::Mmse],
        params: Some(params),
        trials_per_channel: 1250,
        min_errors: 100,
        max_bits: 100_000_000,
        seed: 4241,
        ista_iters: 50,
    };
    let records = snr_sweep(&eval).unwrap();
    let ti = records.iter().find(|r| r.detector.name() == "ti").unwrap();
    let mmse = records.iter().find(|r| r.detector.name() == "mmse").unwrap();
    assert!(ti.errors >= 100, "ti errors {}", ti.errors);
    assert!(mmse.errors >= 100, "mmse errors {}", mmse.errors);
    assert!(
        ti.ber <= 0.5 * mmse.ber,
        "ti {} vs mmse {}: ratio {}",
        ti.ber,
        mmse.ber,
        ti.ber / mmse.ber
    );
    println!(
        "A4 pass: ti BER {:.3e} ({} errors) <= 0.5 x mmse BER {:.3e} ({} errors)",
        ti.ber, ti.errors, mmse.ber, mmse.errors
    );
}

/// The linear MMSE baseline plateaus when overloaded: signal dim 200,
/// observation dim 128 at 20 dB gives BER in [0.03, 0.2] over >= 1e6 bits.
#[test]
fn a5_mmse_error_floor_when_overloaded() {
    let eval = EvalConfig::<f64> {
        n: 100,
        m: 64,
        snrs_db: vec![20.0],
        detectors: vec![DetectorKind::Mmse],
        params: None,
        trials_per_channel: 1250,
        min_errors: u64::MAX,
        max_bits: 1_000_000,
        seed: 5,
        ista_iters: 50,
    };
    let records = snr_sweep(&eval).unwrap();
    let r = &records[0];
    assert!(r.bits >= 1_000_000, "bits {}", r.bits);
    assert!((0.03..=0.2).contains(&r.ber), "ber {}", r.ber);
    println!("A5 pass: mmse BER {:.4} over {} bits (in [0.03, 0.2])", r.ber, r.bits);
}

/// Full-scale reproduction: signal dim 200, observation dim 128, 50 layers,
/// batch 1250, 2000 batches per round, lr 0.025 at 20 dB, then BER within a
/// factor of 3 of 4.3e-5, counted to >= 50 errors. Training takes hours on
/// one CPU, so the test is opt-in; see the README for the recipe.
#[test]
#[ignore = "multi-hour training run; opt in with --ignored"]
fn a6_full_scale_training_reaches_target_ber() {
    let cfg = TrainConfig::<f64> {
        n: 100,
        m: 64,
        snr_db: 20.0,
        layers: 50,
        batch: 1250,
        rounds_batches: 2000,
        lr: 0.025,
        seed: 600,
        carry_adam: false,
    };
    let (params, _) = train_incremental(&cfg).unwrap();
    let eval = EvalConfig::<f64> {
        n: 100,
        m: 64,
        snrs_db: vec![20.0],
        detectors: vec![DetectorKind::Ti],
        params: Some(params),
        trials_per_channel: 1250,
        min_errors: 50,
        max_bits: 100_000_000,
        seed: 601,
        ista_iters: 50,
    };
    let records = snr_sweep(&eval).unwrap();
    let r = &records[0];
    let target = 4.3e-5;
    assert!(r.errors >= 50, "errors {}", r.errors);
    assert!(
        (target / 3.0..=target * 3.0).contains(&r.ber),
        "ber {} outside factor 3 of {}",
        r.ber,
        target
    );
    println!("A6 pass: ti BER {:.3e} within 3x of {target:.1e} ({} errors)", r.ber, r.errors);
}

/// Layer traces of a trained model stay finite with |theta_t| > 0, and the
/// held-out per-layer error is lower at the last layer than after the
/// first, as medians over 5 instances.
#[test]
fn a7_layer_trace_error_decreases_with_depth() {
    let cfg = TrainConfig::<f64> {
        n: 16,
        m: 10,
        snr_db: 12.0,
        layers: 8,
        batch: 200,
        rounds_batches: 200,
        lr: 0.025,
        seed: 7,
        carry_adam: false,
    };
    let (params, _) = train_incremental(&cfg).unwrap();
    let mut first = Vec::new();
    let mut last = Vec::new();
    for seed in 4700..4705u64 {
        let rows = layer_trace(cfg.n, cfg.m, cfg.snr_db, &params, seed).unwrap();
        assert_eq!(rows.len(), cfg.layers);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.layer, i + 1);
            assert!(row.gamma.is_finite());
            assert!(row.theta_abs.is_finite() && row.theta_abs > 0.0);
            assert!(row.err_norm.is_finite());
        }
        first.push(rows.first().unwrap().err_norm);
        last.push(rows.last().unwrap().err_norm);
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    let (m_first, m_last) = (median(&mut first), median(&mut last));
    assert!(m_last < m_first, "layer-8 median {m_last} vs layer-1 median {m_first}");
    println!("A7 pass: median error layer 8 = {m_last:.3} < layer 1 = {m_first:.3}");
}

fn run_cli(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_tidet"))
        .args(args)
        .output()
        .expect("spawn tidet");
    assert!(
        out.status.success(),
        "tidet {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read_nonempty(path: &std::path::Path) -> Vec<u8> {
    let bytes = std::fs::read(path).unwrap();
    assert!(!bytes.is_empty(), "{} is empty", path.display());
    bytes
}

/// Two runs of every subcommand with identical flags and seed write
/// byte-identical output files.
#[test]
fn a8_identical_invocations_write_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let s = |name: &str| p(name).to_str().unwrap().to_owned();

    for tag in ["a", "b"] {
        run_cli(&[
            "train", "--n", "4", "--m", "2", "--snr-db", "10", "--layers", "3", "--batch", "8",
            "--rounds-batches", "5", "--lr", "0.025", "--seed", "9",
            "--out", &s(&format!("params_{tag}.txt")),
            "--loss-log", &s(&format!("loss_{tag}.txt")),
        ]);
        run_cli(&[
            "sweep", "--n", "4", "--m", "2", "--snr-db", "6,10", "--detector", "mmse,ista",
            "--trials-per-channel", "16", "--min-errors", "10", "--max-bits", "4000",
            "--seed", "3", "--out", &s(&format!("sweep_{tag}.csv")),
        ]);
        run_cli(&[
            "eval", "--n", "4", "--m", "2", "--snr-db", "8", "--detector", "ti",
            "--params", &s("params_a.txt"), "--trials-per-channel", "16", "--min-errors", "10",
            "--max-bits", "4000", "--seed", "3", "--out", &s(&format!("eval_{tag}.csv")),
        ]);
        run_cli(&[
            "export-trace", "--params", &s("params_a.txt"),
            "--out", &s(&format!("trace_{tag}.tsv")),
        ]);
    }
    for stem in ["params", "loss", "sweep", "eval", "trace"] {
        let ext = match stem {
            "sweep" | "eval" => "csv",
            "trace" => "tsv",
            _ => "txt",
        };
        let a = read_nonempty(&p(&format!("{stem}_a.{ext}")));
        let b = read_nonempty(&p(&format!("{stem}_b.{ext}")));
        assert_eq!(a, b, "{stem} outputs differ between identical runs");
    }
    println!("A8 pass: train/sweep/eval/export-trace outputs byte-identical across reruns");
}
