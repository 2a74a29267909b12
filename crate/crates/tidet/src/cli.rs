//! Command-line front end: flag parsing, subcommand dispatch, and the
//! on-disk parameter format.
//!
//! All configuration comes from flags; there are no config files or
//! environment overrides, so a command line plus a seed fully determines
//! every output byte.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::detectors::DetectorParams;
use crate::error::{Error, Result};
use crate::eval::{layer_trace, snr_sweep, write_csv, DetectorKind, EvalConfig};
use crate::training::{train_incremental_with, TrainConfig};

/// First header line of a parameter file.
pub const PARAMS_FORMAT: &str = "tidet-params v1";
/// First header line of a trace export.
pub const TRACE_FORMAT: &str = "tidet-trace v1";

#[derive(Parser, Debug)]
#[command(
    name = "tidet",
    version,
    about = "Trainable iterative detector for overloaded MIMO: training, baselines, BER evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train detector parameters incrementally and write a parameter file.
    Train(TrainArgs),
    /// Estimate the BER of one detector at one SNR.
    Eval(EvalArgs),
    /// Estimate BER over a grid of SNRs and detectors.
    Sweep(SweepArgs),
    /// Export per-layer parameters and errors of a trained model.
    ExportTrace(TraceArgs),
}

fn positive_usize(s: &str) -> std::result::Result<usize, String> {
    let v: usize = s.parse().map_err(|e| format!("{e}"))?;
    if v == 0 {
        return Err("must be positive".into());
    }
    Ok(v)
}

fn positive_u64(s: &str) -> std::result::Result<u64, String> {
    let v: u64 = s.parse().map_err(|e| format!("{e}"))?;
    if v == 0 {
        return Err("must be positive".into());
    }
    Ok(v)
}

fn finite_f64(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if !v.is_finite() {
        return Err("must be finite".into());
    }
    Ok(v)
}

fn positive_f64(s: &str) -> std::result::Result<f64, String> {
    let v = finite_f64(s)?;
    if v <= 0.0 {
        return Err("must be positive".into());
    }
    Ok(v)
}

fn parse_detector(s: &str) -> std::result::Result<DetectorKind, String> {
    DetectorKind::from_str(s).map_err(|e| e.to_string())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Transmit-antenna count (signal dimension is 2n).
    #[arg(long, value_parser = positive_usize)]
    pub n: usize,
    /// Receive-antenna count (observation dimension is 2m).
    #[arg(long, value_parser = positive_usize)]
    pub m: usize,
    /// Training SNR in dB.
    #[arg(long = "snr-db", value_parser = finite_f64, allow_hyphen_values = true)]
    pub snr_db: f64,
    /// Layer count T (the model has 2T trainable scalars).
    #[arg(long, value_parser = positive_usize)]
    pub layers: usize,
    /// Mini-batch size D.
    #[arg(long, default_value_t = 1250, value_parser = positive_usize)]
    pub batch: usize,
    /// Mini-batches per incremental round, K.
    #[arg(long = "rounds-batches", default_value_t = 2000)]
    pub rounds_batches: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 0.025, value_parser = positive_f64)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Parameter file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Write per-round loss lines here instead of standard output.
    #[arg(long = "loss-log")]
    pub loss_log: Option<PathBuf>,
    /// Keep Adam moments across rounds instead of resetting them.
    #[arg(long = "carry-adam")]
    pub carry_adam: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Transmit-antenna count (signal dimension is 2n).
    #[arg(long, value_parser = positive_usize)]
    pub n: usize,
    /// Receive-antenna count (observation dimension is 2m).
    #[arg(long, value_parser = positive_usize)]
    pub m: usize,
    /// Evaluation SNR in dB.
    #[arg(long = "snr-db", value_parser = finite_f64, allow_hyphen_values = true)]
    pub snr_db: f64,
    /// Detector to evaluate: ti, mmse, or ista.
    #[arg(long, value_parser = parse_detector)]
    pub detector: DetectorKind,
    /// Parameter file (required for the ti detector).
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Trials sharing one channel draw.
    #[arg(long = "trials-per-channel", default_value_t = 1250, value_parser = positive_usize)]
    pub trials_per_channel: usize,
    /// Stop after this many bit errors.
    #[arg(long = "min-errors", default_value_t = 100, value_parser = positive_u64)]
    pub min_errors: u64,
    /// Stop after this many transmitted bits.
    #[arg(long = "max-bits", default_value_t = 100_000_000, value_parser = positive_u64)]
    pub max_bits: u64,
    /// ISTA iteration count.
    #[arg(long = "ista-iters", default_value_t = 50, value_parser = positive_usize)]
    pub ista_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// BER CSV to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Transmit-antenna count (signal dimension is 2n).
    #[arg(long, value_parser = positive_usize)]
    pub n: usize,
    /// Receive-antenna count (observation dimension is 2m).
    #[arg(long, value_parser = positive_usize)]
    pub m: usize,
    /// SNR grid in dB: repeat the flag or pass a comma-separated list.
    #[arg(
        long = "snr-db",
        value_parser = finite_f64,
        value_delimiter = ',',
        required = true,
        allow_hyphen_values = true
    )]
    pub snr_db: Vec<f64>,
    /// Detectors to evaluate: repeat the flag or pass a comma-separated list.
    #[arg(
        long = "detector",
        value_parser = parse_detector,
        value_delimiter = ',',
        required = true
    )]
    pub detector: Vec<DetectorKind>,
    /// Parameter file (required when the detectors include ti).
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Trials sharing one channel draw.
    #[arg(long = "trials-per-channel", default_value_t = 1250, value_parser = positive_usize)]
    pub trials_per_channel: usize,
    /// Stop after this many bit errors (per point).
    #[arg(long = "min-errors", default_value_t = 100, value_parser = positive_u64)]
    pub min_errors: u64,
    /// Stop after this many transmitted bits (per point).
    #[arg(long = "max-bits", default_value_t = 100_000_000, value_parser = positive_u64)]
    pub max_bits: u64,
    /// ISTA iteration count.
    #[arg(long = "ista-iters", default_value_t = 50, value_parser = positive_usize)]
    pub ista_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// BER CSV to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TraceArgs {
    /// Parameter file of the trained model.
    #[arg(long)]
    pub params: PathBuf,
    /// Instance SNR in dB; defaults to the file's training SNR.
    #[arg(long = "snr-db", value_parser = finite_f64, allow_hyphen_values = true)]
    pub snr_db: Option<f64>,
    /// Instance seed; defaults to the file's training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trace TSV to write.
    #[arg(long)]
    pub out: PathBuf,
}

/// Header recording the configuration a parameter file was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamHeader {
    pub n: usize,
    pub m: usize,
    pub layers: usize,
    pub snr_db: f64,
    pub seed: u64,
}

/// Serialize header and parameters as tab-separated text. Values carry 17
/// significant digits, so reading them back reproduces the exact bits.
pub fn write_params<W: Write>(
    out: &mut W,
    header: &ParamHeader,
    params: &DetectorParams<f64>,
) -> Result<()> {
    if params.layers() != header.layers {
        return Err(Error::dim(format!(
            "header claims {} layers, parameters have {}",
            header.layers,
            params.layers()
        )));
    }
    writeln!(out, "# {PARAMS_FORMAT}")?;
    writeln!(out, "# n {}", header.n)?;
    writeln!(out, "# m {}", header.m)?;
    writeln!(out, "# layers {}", header.layers)?;
    writeln!(out, "# snr_db {}", header.snr_db)?;
    writeln!(out, "# seed {}", header.seed)?;
    writeln!(out, "# layer gamma theta")?;
    for t in 0..header.layers {
        writeln!(out, "{}\t{:.16e}\t{:.16e}", t + 1, params.gamma[t], params.theta[t])?;
    }
    Ok(())
}

/// Parse the parameter-file text format.
pub fn parse_params(text: &str, origin: &Path) -> Result<(ParamHeader, DetectorParams<f64>)> {
    let fail = |msg: String| Error::FileFormat {
        path: origin.to_path_buf(),
        msg,
    };
    let mut lines = text.lines();
    match lines.next() {
        Some(first) if first == format!("# {PARAMS_FORMAT}") => {}
        other => {
            return Err(fail(format!(
                "expected '# {PARAMS_FORMAT}' as the first line, got {other:?}"
            )))
        }
    }

    let mut n = None;
    let mut m = None;
    let mut layers = None;
    let mut snr_db = None;
    let mut seed = None;
    let mut gamma = Vec::new();
    let mut theta = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("# ") {
            let mut it = rest.split_whitespace();
            let key = it.next().unwrap_or("");
            let value = it.next();
            match (key, value) {
                ("layer", _) => {} // column caption
                ("n", Some(v)) => n = Some(v.parse().map_err(|e| fail(format!("n: {e}")))?),
                ("m", Some(v)) => m = Some(v.parse().map_err(|e| fail(format!("m: {e}")))?),
                ("layers", Some(v)) => {
                    layers = Some(v.parse().map_err(|e| fail(format!("layers: {e}")))?)
                }
                ("snr_db", Some(v)) => {
                    snr_db = Some(v.parse().map_err(|e| fail(format!("snr_db: {e}")))?)
                }
                ("seed", Some(v)) => seed = Some(v.parse().map_err(|e| fail(format!("seed: {e}")))?),
                _ => return Err(fail(format!("unrecognized header line: {line}"))),
            }
        } else {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(fail(format!("expected 3 tab-separated fields: {line}")));
            }
            let t: usize = fields[0].parse().map_err(|e| fail(format!("layer index: {e}")))?;
            if t != gamma.len() + 1 {
                return Err(fail(format!(
                    "layer indices must run 1..layers; got {t} at position {}",
                    gamma.len() + 1
                )));
            }
            let g: f64 = fields[1].parse().map_err(|e| fail(format!("gamma: {e}")))?;
            let th: f64 = fields[2].parse().map_err(|e| fail(format!("theta: {e}")))?;
            gamma.push(g);
            theta.push(th);
        }
    }

    let header = ParamHeader {
        n: n.ok_or_else(|| fail("missing 'n' header".into()))?,
        m: m.ok_or_else(|| fail("missing 'm' header".into()))?,
        layers: layers.ok_or_else(|| fail("missing 'layers' header".into()))?,
        snr_db: snr_db.ok_or_else(|| fail("missing 'snr_db' header".into()))?,
        seed: seed.ok_or_else(|| fail("missing 'seed' header".into()))?,
    };
    if gamma.len() != header.layers {
        return Err(fail(format!(
            "header claims {} layers, file has {} rows",
            header.layers,
            gamma.len()
        )));
    }
    let params = DetectorParams::new(gamma, theta).map_err(|e| fail(e.to_string()))?;
    Ok((header, params))
}

/// Read a parameter file from disk.
pub fn read_params(path: &Path) -> Result<(ParamHeader, DetectorParams<f64>)> {
    let text = fs::read_to_string(path)?;
    parse_params(&text, path)
}

fn run_train(args: TrainArgs) -> Result<()> {
    let cfg = TrainConfig {
        n: args.n,
        m: args.m,
        snr_db: args.snr_db,
        layers: args.layers,
        batch: args.batch,
        rounds_batches: args.rounds_batches,
        lr: args.lr,
        seed: args.seed,
        carry_adam: args.carry_adam,
    };
    let mut sink: Box<dyn Write> = match &args.loss_log {
        Some(path) => Box::new(BufWriter::new(fs::File::create(path)?)),
        None => Box::new(io::stdout()),
    };
    let mut sink_err: Option<io::Error> = None;
    let (params, _) = train_incremental_with(&cfg, |entry| {
        if sink_err.is_none() {
            if let Err(e) = writeln!(sink, "round {} loss {:.6e}", entry.round, entry.loss) {
                sink_err = Some(e);
            }
        }
    })?;
    sink.flush()?;
    if let Some(e) = sink_err {
        return Err(e.into());
    }

    let header = ParamHeader {
        n: args.n,
        m: args.m,
        layers: args.layers,
        snr_db: args.snr_db,
        seed: args.seed,
    };
    let mut out = BufWriter::new(fs::File::create(&args.out)?);
    write_params(&mut out, &header, &params)?;
    out.flush()?;
    Ok(())
}

/// Load parameters when a path is given, and reject a model trained for a
/// different system size.
fn load_params_checked(
    path: Option<&Path>,
    n: usize,
    m: usize,
) -> Result<Option<DetectorParams<f64>>> {
    match path {
        None => Ok(None),
        Some(p) => {
            let (header, params) = read_params(p)?;
            if header.n != n || header.m != m {
                return Err(Error::InvalidParam(format!(
                    "parameter file {} was trained for n={} m={}, not n={n} m={m}",
                    p.display(),
                    header.n,
                    header.m
                )));
            }
            Ok(Some(params))
        }
    }
}

fn run_points(cfg: &EvalConfig<f64>, out_path: &Path) -> Result<()> {
    let records = snr_sweep(cfg)?;
    let mut out = BufWriter::new(fs::File::create(out_path)?);
    write_csv(&records, &mut out)?;
    out.flush()?;
    for r in &records {
        println!(
            "snr {} dB {}: ber {} ({} errors / {} bits)",
            crate::eval::fmt_sig(r.snr_db, 6),
            r.detector,
            crate::eval::fmt_sig(r.ber, 6),
            r.errors,
            r.bits
        );
    }
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let cfg = EvalConfig {
        n: args.n,
        m: args.m,
        snrs_db: vec![args.snr_db],
        detectors: vec![args.detector],
        params: load_params_checked(args.params.as_deref(), args.n, args.m)?,
        trials_per_channel: args.trials_per_channel,
        min_errors: args.min_errors,
        max_bits: args.max_bits,
        seed: args.seed,
        ista_iters: args.ista_iters,
    };
    run_points(&cfg, &args.out)
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let cfg = EvalConfig {
        n: args.n,
        m: args.m,
        snrs_db: args.snr_db,
        detectors: args.detector,
        params: load_params_checked(args.params.as_deref(), args.n, args.m)?,
        trials_per_channel: args.trials_per_channel,
        min_errors: args.min_errors,
        max_bits: args.max_bits,
        seed: args.seed,
        ista_iters: args.ista_iters,
    };
    run_points(&cfg, &args.out)
}

fn run_trace(args: TraceArgs) -> Result<()> {
    let (header, params) = read_params(&args.params)?;
    let snr_db = args.snr_db.unwrap_or(header.snr_db);
    let seed = args.seed.unwrap_or(header.seed);
    let rows = layer_trace(header.n, header.m, snr_db, &params, seed)?;
    let mut out = BufWriter::new(fs::File::create(&args.out)?);
    writeln!(out, "# {TRACE_FORMAT}")?;
    writeln!(
        out,
        "# n {} m {} layers {} snr_db {} seed {}",
        header.n, header.m, header.layers, snr_db, seed
    )?;
    writeln!(out, "# layer gamma theta_abs err_norm")?;
    for row in &rows {
        writeln!(
            out,
            "{}\t{:.16e}\t{:.16e}\t{:.16e}",
            row.layer, row.gamma, row.theta_abs, row.err_norm
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Execute a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Sweep(args) => run_sweep(args),
        Command::ExportTrace(args) => run_trace(args),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_training_invocation() {
        let cli = Cli::try_parse_from([
            "tidet", "train", "--n", "200", "--m", "128", "--snr-db", "20", "--layers", "50",
            "--batch", "1250", "--rounds-batches", "2000", "--lr", "0.025", "--seed", "7",
            "--out", "p.tsv",
        ])
        .unwrap();
        match cli.command {
            Command::Train(a) => {
                assert_eq!(a.n, 200);
                assert_eq!(a.m, 128);
                assert_eq!(a.snr_db, 20.0);
                assert_eq!(a.layers, 50);
                assert_eq!(a.batch, 1250);
                assert_eq!(a.rounds_batches, 2000);
                assert_eq!(a.lr, 0.025);
                assert_eq!(a.seed, 7);
                assert_eq!(a.out, PathBuf::from("p.tsv"));
                assert!(!a.carry_adam);
            }
            other => panic!("wrong command: {other:?}"),
        }
    }

    #[test]
    fn rejects_zero_dimensions_and_missing_output() {
        assert!(Cli::try_parse_from([
            "tidet", "train", "--n", "4", "--m", "0", "--snr-db", "10", "--layers", "2", "--out",
            "p.tsv",
        ])
        .is_err());
        assert!(Cli::try_parse_from([
            "tidet", "train", "--n", "4", "--m", "3", "--snr-db", "10", "--layers", "2",
        ])
        .is_err());
        assert!(Cli::try_parse_from([
            "tidet", "eval", "--n", "4", "--m", "3", "--snr-db", "10", "--detector", "zf",
            "--out", "b.csv",
        ])
        .is_err());
        assert!(Cli::try_parse_from(["tidet", "frobnicate"]).is_err());
    }

    #[test]
    fn parses_sweep_lists() {
        let cli = Cli::try_parse_from([
            "tidet", "sweep", "--n", "8", "--m", "5", "--snr-db", "4,8,12", "--detector",
            "mmse,ista", "--out", "b.csv",
        ])
        .unwrap();
        match cli.command {
            Command::Sweep(a) => {
                assert_eq!(a.snr_db, vec![4.0, 8.0, 12.0]);
                assert_eq!(a.detector, vec![DetectorKind::Mmse, DetectorKind::Ista]);
                assert_eq!(a.min_errors, 100);
                assert_eq!(a.max_bits, 100_000_000);
                assert_eq!(a.trials_per_channel, 1250);
            }
            other => panic!("wrong command: {other:?}"),
        }
    }

    #[test]
    fn accepts_negative_snr_values() {
        let cli = Cli::try_parse_from([
            "tidet", "sweep", "--n", "8", "--m", "5", "--snr-db", "-2", "--snr-db", "3",
            "--detector", "mmse", "--out", "b.csv",
        ])
        .unwrap();
        match cli.command {
            Command::Sweep(a) => assert_eq!(a.snr_db, vec![-2.0, 3.0]),
            other => panic!("wrong command: {other:?}"),
        }
    }

    #[test]
    fn param_file_round_trips_bytes_and_bits() {
        let header = ParamHeader {
            n: 16,
            m: 10,
            layers: 3,
            snr_db: 12.5,
            seed: 42,
        };
        let params = DetectorParams::new(
            vec![1.0249999987500001, 0.3333333333333333, -1.7e-8],
            vec![0.9750000012345678, -2.25, 1e-6],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_params(&mut buf, &header, &params).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();

        let (h2, p2) = parse_params(&text, Path::new("test")).unwrap();
        assert_eq!(h2, header);
        for t in 0..3 {
            assert_eq!(p2.gamma[t].to_bits(), params.gamma[t].to_bits());
            assert_eq!(p2.theta[t].to_bits(), params.theta[t].to_bits());
        }

        let mut buf2 = Vec::new();
        write_params(&mut buf2, &h2, &p2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn param_parser_rejects_malformed_input() {
        let origin = Path::new("test");
        assert!(parse_params("not a header\n", origin).is_err());
        assert!(parse_params("# tidet-params v9\n", origin).is_err());

        let ok = "# tidet-params v1\n# n 2\n# m 1\n# layers 1\n# snr_db 10\n# seed 0\n\
                  # layer gamma theta\n1\t1.0e0\t1.0e0\n";
        assert!(parse_params(ok, origin).is_ok());

        let missing_key = ok.replace("# seed 0\n", "");
        assert!(parse_params(&missing_key, origin).is_err());
        let bad_index = ok.replace("1\t1.0e0\t1.0e0", "2\t1.0e0\t1.0e0");
        assert!(parse_params(&bad_index, origin).is_err());
        let zero_theta = ok.replace("1\t1.0e0\t1.0e0", "1\t1.0e0\t0.0e0");
        assert!(parse_params(&zero_theta, origin).is_err());
        let wrong_count = ok.replace("# layers 1", "# layers 2");
        assert!(parse_params(&wrong_count, origin).is_err());
        let junk_header = ok.replace("# seed 0", "# flavor vanilla");
        assert!(parse_params(&junk_header, origin).is_err());
        let two_fields = ok.replace("1\t1.0e0\t1.0e0", "1\t1.0e0");
        assert!(parse_params(&two_fields, origin).is_err());
    }

    #[test]
    fn detector_names_parse_exactly() {
        assert_eq!(parse_detector("ti").unwrap(), DetectorKind::Ti);
        assert_eq!(parse_detector("mmse").unwrap(), DetectorKind::Mmse);
        assert_eq!(parse_detector("ista").unwrap(), DetectorKind::Ista);
        assert!(parse_detector("TI").is_err());
        assert!(parse_detector("zf").is_err());
    }
}
