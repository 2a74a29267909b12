//! Monte-Carlo bit-error-rate estimation and SNR sweeps.
//!
//! Evaluation proceeds in blocks: one block draws a fresh channel, builds
//! any per-channel detector state (MMSE filter factorization, ISTA step
//! size, the shared pseudo-inverse), and runs `trials_per_channel` trials
//! under that channel. Blocks are indexed and seeded independently through
//! the splittable stream, so a fixed chunk of blocks can be evaluated in
//! parallel and reduced in block order; parallel and serial runs produce
//! identical counts.

use std::fmt;
use std::io::Write as IoWrite;
use std::str::FromStr;

use rayon::prelude::*;

use crate::channel::{
    noise_sigma_from_snr, sample_complex_channel, to_real_system, Observation, RealSystem,
};
use crate::detectors::{
    hard_decision, ista_default_beta, ista_default_tau, ista_detect, mmse_filter, ti_forward,
    DetectorParams,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stream::{child, child_path, rng_from, StreamRng, DOMAIN_EVAL, DOMAIN_TRACE};

/// Blocks evaluated per stop-condition check. Counts accumulate in block
/// order, so the value changes how much work a run does after the stop
/// condition is first met, never the counts of the blocks it reports.
const CHUNK: u64 = 4;

/// Detector selector, named as it appears in CSV output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    Ista,
    Mmse,
    Ti,
}

impl DetectorKind {
    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Ista => "ista",
            DetectorKind::Mmse => "mmse",
            DetectorKind::Ti => "ti",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ista" => Ok(DetectorKind::Ista),
            "mmse" => Ok(DetectorKind::Mmse),
            "ti" => Ok(DetectorKind::Ti),
            other => Err(Error::InvalidParam(format!(
                "unknown detector '{other}' (expected ti, mmse, or ista)"
            ))),
        }
    }
}

/// Evaluation settings shared across the points of one sweep.
#[derive(Debug, Clone)]
pub struct EvalConfig<S> {
    /// Transmit-antenna count (signal dimension `N = 2n`).
    pub n: usize,
    /// Receive-antenna count (observation dimension `M = 2m`).
    pub m: usize,
    pub snrs_db: Vec<S>,
    pub detectors: Vec<DetectorKind>,
    /// Trained parameters; required whenever `detectors` includes `ti`.
    pub params: Option<DetectorParams<S>>,
    /// Trials sharing one channel draw before the channel is redrawn.
    pub trials_per_channel: usize,
    /// Stop once this many bit errors are counted...
    pub min_errors: u64,
    /// ...or this many bits are transmitted, whichever comes first.
    pub max_bits: u64,
    pub seed: u64,
    /// ISTA layer count (the baseline has no trained depth of its own).
    pub ista_iters: usize,
}

impl<S: Scalar> EvalConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::InvalidParam("antenna counts must be positive".into()));
        }
        if self.trials_per_channel == 0 {
            return Err(Error::InvalidParam("trials per channel must be positive".into()));
        }
        if self.min_errors == 0 {
            return Err(Error::InvalidParam("error target must be positive".into()));
        }
        if self.max_bits < 2 * self.n as u64 {
            return Err(Error::InvalidParam(format!(
                "bit budget {} below one trial ({} bits)",
                self.max_bits,
                2 * self.n
            )));
        }
        if self.ista_iters == 0 {
            return Err(Error::InvalidParam("ista iteration count must be positive".into()));
        }
        if self.snrs_db.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("SNR values must be finite".into()));
        }
        if self.detectors.contains(&DetectorKind::Ti) && self.params.is_none() {
            return Err(Error::InvalidParam(
                "ti detector requires trained parameters".into(),
            ));
        }
        Ok(())
    }
}

/// One Monte-Carlo measurement point.
#[derive(Debug, Clone, PartialEq)]
pub struct BerRecord<S> {
    pub snr_db: S,
    pub detector: DetectorKind,
    pub bits: u64,
    pub errors: u64,
    /// Exactly `errors / bits`.
    pub ber: f64,
}

impl<S: Scalar> BerRecord<S> {
    /// 95% binomial confidence half-width `1.96 sqrt(ber (1-ber) / bits)`.
    pub fn ci95(&self) -> f64 {
        1.96 * (self.ber * (1.0 - self.ber) / self.bits as f64).sqrt()
    }
}

/// Per-channel detector instance: maps one observation to a soft estimate.
/// The transmitted vector rides along for test stubs; real detectors read
/// only `obs.y`.
type BlockDetector<'a, S> =
    Box<dyn Fn(&RealSystem<S>, &Observation<S>) -> Result<Vec<S>> + Send + Sync + 'a>;

/// Builds the per-channel detector instance once per block.
type DetectorFactory<'a, S> =
    dyn Fn(&RealSystem<S>) -> Result<BlockDetector<'a, S>> + Send + Sync + 'a;

fn eval_block<S: Scalar>(
    n: usize,
    m: usize,
    sigma_w2: S,
    trials: usize,
    block: u64,
    stream_seed: u64,
    factory: &DetectorFactory<'_, S>,
) -> Result<(u64, u64)> {
    let mut rng: StreamRng = rng_from(child(stream_seed, block));
    let ch = sample_complex_channel::<S, _>(n, m, &mut rng)?;
    let sys = to_real_system(&ch, sigma_w2)?;
    let detect = factory(&sys)?;
    let mut bits = 0u64;
    let mut errors = 0u64;
    for _ in 0..trials {
        let obs = sys.observe(&mut rng)?;
        let soft = detect(&sys, &obs)?;
        let decided = hard_decision(&soft);
        bits += obs.x.len() as u64;
        errors += obs
            .x
            .iter()
            .zip(&decided)
            .filter(|(&a, &b)| a != b)
            .count() as u64;
    }
    Ok((bits, errors))
}

/// Core counting loop: evaluates blocks in fixed-size chunks until the stop
/// condition holds, accumulating in block order. `parallel` only selects
/// how a chunk's blocks are computed, not the result.
fn estimate_counts<S: Scalar>(
    cfg: &EvalConfig<S>,
    snr_db: S,
    stream_seed: u64,
    factory: &DetectorFactory<'_, S>,
    parallel: bool,
) -> Result<(u64, u64)> {
    let sigma_w2 = noise_sigma_from_snr(snr_db, 2 * cfg.n);
    let mut bits = 0u64;
    let mut errors = 0u64;
    let mut next_block = 0u64;
    loop {
        let blocks: Vec<u64> = (next_block..next_block + CHUNK).collect();
        let run = |&b: &u64| {
            eval_block(cfg.n, cfg.m, sigma_w2, cfg.trials_per_channel, b, stream_seed, factory)
        };
        let counts: Vec<(u64, u64)> = if parallel {
            blocks.par_iter().map(run).collect::<Result<_>>()?
        } else {
            blocks.iter().map(run).collect::<Result<_>>()?
        };
        for (b, e) in counts {
            bits += b;
            errors += e;
            if errors >= cfg.min_errors || bits >= cfg.max_bits {
                return Ok((bits, errors));
            }
        }
        next_block += CHUNK;
    }
}

fn make_factory<'a, S: Scalar>(
    cfg: &'a EvalConfig<S>,
    detector: DetectorKind,
) -> Result<Box<DetectorFactory<'a, S>>> {
    match detector {
        DetectorKind::Ti => {
            let params = cfg.params.as_ref().ok_or_else(|| {
                Error::InvalidParam("ti detector requires trained parameters".into())
            })?;
            Ok(Box::new(move |_sys: &RealSystem<S>| {
                Ok(Box::new(move |sys: &RealSystem<S>, obs: &Observation<S>| {
                    let trace = ti_forward(sys, &obs.y, params, params.layers())?;
                    Ok(trace.estimate().to_vec())
                }) as BlockDetector<'a, S>)
            }))
        }
        DetectorKind::Mmse => Ok(Box::new(|sys: &RealSystem<S>| {
            let filter = mmse_filter(sys)?;
            Ok(Box::new(move |_sys: &RealSystem<S>, obs: &Observation<S>| {
                filter.matvec(&obs.y)
            }) as BlockDetector<'a, S>)
        })),
        DetectorKind::Ista => {
            let iters = cfg.ista_iters;
            Ok(Box::new(move |sys: &RealSystem<S>| {
                let beta = ista_default_beta(&sys.h)?;
                let tau = ista_default_tau::<S>();
                Ok(Box::new(move |sys: &RealSystem<S>, obs: &Observation<S>| {
                    ista_detect(&sys.h, &obs.y, beta, tau, iters)
                }) as BlockDetector<'a, S>)
            }))
        }
    }
}

/// Estimate the BER of one detector at one SNR. `stream_seed` addresses the
/// point's block streams; `snr_sweep` derives it per point, direct callers
/// can pass the config seed.
pub fn estimate_ber<S: Scalar>(
    cfg: &EvalConfig<S>,
    snr_db: S,
    detector: DetectorKind,
    stream_seed: u64,
) -> Result<BerRecord<S>> {
    cfg.validate()?;
    let factory = make_factory(cfg, detector)?;
    let (bits, errors) = estimate_counts(cfg, snr_db, stream_seed, factory.as_ref(), true)?;
    Ok(BerRecord {
        snr_db,
        detector,
        bits,
        errors,
        ber: errors as f64 / bits as f64,
    })
}

/// Evaluate every (SNR, detector) pair of the config, ordered by SNR
/// ascending then detector name. Each point gets its own derived stream, so
/// the records do not depend on evaluation order.
pub fn snr_sweep<S: Scalar>(cfg: &EvalConfig<S>) -> Result<Vec<BerRecord<S>>> {
    cfg.validate()?;
    if cfg.snrs_db.is_empty() || cfg.detectors.is_empty() {
        return Err(Error::InvalidParam("sweep needs at least one SNR and one detector".into()));
    }
    let mut snrs: Vec<S> = cfg.snrs_db.clone();
    snrs.sort_by(|a, b| a.partial_cmp(b).expect("validated finite"));
    let mut detectors = cfg.detectors.clone();
    detectors.sort_by_key(|d| d.name());
    detectors.dedup();

    let mut records = Vec::with_capacity(snrs.len() * detectors.len());
    for (si, &snr) in snrs.iter().enumerate() {
        for (di, &det) in detectors.iter().enumerate() {
            let stream_seed = child_path(cfg.seed, &[DOMAIN_EVAL, si as u64, di as u64]);
            records.push(estimate_ber(cfg, snr, det, stream_seed)?);
        }
    }
    Ok(records)
}

/// Format with `sig` significant digits: fixed notation for moderate
/// exponents, otherwise scientific, trailing zeros trimmed.
pub fn fmt_sig(x: f64, sig: usize) -> String {
    debug_assert!(sig >= 1);
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.*e}", sig - 1, x);
    let (mant, exp) = sci.split_once('e').expect("e-notation");
    let exp: i32 = exp.parse().expect("exponent");
    if exp >= -4 && exp < sig as i32 {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        let mant = trim_zeros(mant.to_string());
        format!("{mant}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(mut s: String) -> String {
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

/// Write records as CSV: header plus one row per record, floats at 6
/// significant digits, counts as integers.
pub fn write_csv<S: Scalar, W: IoWrite>(records: &[BerRecord<S>], out: &mut W) -> Result<()> {
    writeln!(out, "snr_db,detector,bits,errors,ber,ci95")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_sig(r.snr_db.to_f64().expect("scalar fits f64"), 6),
            r.detector,
            r.bits,
            r.errors,
            fmt_sig(r.ber, 6),
            fmt_sig(r.ci95(), 6),
        )?;
    }
    Ok(())
}

/// One row of the per-layer diagnostic export.
#[derive(Debug, Clone)]
pub struct TraceRow<S> {
    pub layer: usize,
    pub gamma: S,
    pub theta_abs: S,
    /// `||x - s_{t+1}||` on the sampled instance.
    pub err_norm: S,
}

/// Run the full-depth detector on one random instance and report, per
/// layer, the parameters and the distance of the layer output from the
/// transmitted vector.
pub fn layer_trace<S: Scalar>(
    n: usize,
    m: usize,
    snr_db: S,
    params: &DetectorParams<S>,
    seed: u64,
) -> Result<Vec<TraceRow<S>>> {
    let mut rng = rng_from(child(seed, DOMAIN_TRACE));
    let ch = sample_complex_channel::<S, _>(n, m, &mut rng)?;
    let sys = to_real_system(&ch, noise_sigma_from_snr(snr_db, 2 * n))?;
    let obs = sys.observe(&mut rng)?;
    let trace = ti_forward(&sys, &obs.y, params, params.layers())?;
    Ok((0..params.layers())
        .map(|t| {
            let err = trace.s[t + 1]
                .iter()
                .zip(&obs.x)
                .map(|(&s, &x)| (s - x) * (s - x))
                .fold(S::zero(), |a, b| a + b)
                .sqrt();
            TraceRow {
                layer: t + 1,
                gamma: params.gamma[t],
                theta_abs: params.theta[t].abs(),
                err_norm: err,
            }
        })
        .collect())
}
