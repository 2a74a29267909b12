//! Training of the unrolled detector: analytic gradients through the
//! recursion, a from-scratch Adam optimizer, and incremental layer-by-layer
//! optimization under the varying-channel scenario (one fresh channel per
//! mini-batch).
//!
//! Round `t` minimizes the depth-`t` squared loss over the first `2t`
//! parameters; later parameters receive zero gradient and zero moment, so
//! one full-width Adam step leaves them bit-identical.

use rayon::prelude::*;

use crate::channel::{
    noise_sigma_from_snr, sample_complex_channel, to_real_system, RealSystem,
};
use crate::detectors::{ti_forward, DetectorParams, ForwardTrace};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::scalar::{cast, Scalar};
use crate::stream::{child, rng_from, DOMAIN_TRAIN};

/// Hyperparameters of one training run.
#[derive(Debug, Clone)]
pub struct TrainConfig<S> {
    /// Transmit-antenna count (signal dimension is `2n`).
    pub n: usize,
    /// Receive-antenna count (observation dimension is `2m`).
    pub m: usize,
    /// Training SNR in dB; evaluation at the same SNR uses the same model.
    pub snr_db: S,
    /// Layer count `T`.
    pub layers: usize,
    /// Mini-batch size `D`.
    pub batch: usize,
    /// Mini-batches per incremental round, `K`.
    pub rounds_batches: usize,
    /// Adam learning rate.
    pub lr: S,
    pub seed: u64,
    /// Keep Adam moments across rounds instead of resetting them. Each
    /// round optimizes a different-depth objective, so the default resets.
    pub carry_adam: bool,
}

impl<S: Scalar> TrainConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::InvalidParam("antenna counts must be positive".into()));
        }
        if self.layers == 0 {
            return Err(Error::InvalidParam("layer count must be positive".into()));
        }
        if self.batch == 0 {
            return Err(Error::InvalidParam("mini-batch size must be positive".into()));
        }
        if !(self.lr > S::zero()) || !self.lr.is_finite() {
            return Err(Error::InvalidParam(format!(
                "learning rate must be positive and finite, got {}",
                self.lr
            )));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::InvalidParam("SNR must be finite".into()));
        }
        Ok(())
    }
}

/// One mini-batch: `D` observations sharing a freshly drawn channel.
#[derive(Debug, Clone)]
pub struct MiniBatch<S> {
    pub sys: RealSystem<S>,
    pub xs: Vec<Vec<S>>,
    pub ys: Vec<Vec<S>>,
}

/// Adam optimizer state over the flattened parameter vector
/// `[gamma_1..gamma_T, theta_1..theta_T]`.
#[derive(Debug, Clone)]
pub struct AdamState<S> {
    pub step: u64,
    pub m1: Vec<S>,
    pub m2: Vec<S>,
    pub beta1: S,
    pub beta2: S,
    pub eps_hat: S,
}

impl<S: Scalar> AdamState<S> {
    /// Fresh state with the optimizer's customary constants.
    pub fn new(dim: usize) -> Self {
        Self {
            step: 0,
            m1: vec![S::zero(); dim],
            m2: vec![S::zero(); dim],
            beta1: cast(0.9),
            beta2: cast(0.999),
            eps_hat: cast(1e-8),
        }
    }
}

/// Loss gradients with respect to the detector parameters. Entries past the
/// active depth are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<S> {
    pub dgamma: Vec<S>,
    pub dtheta: Vec<S>,
}

impl<S: Scalar> Gradients<S> {
    pub fn zeros(layers: usize) -> Self {
        Self {
            dgamma: vec![S::zero(); layers],
            dtheta: vec![S::zero(); layers],
        }
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, &b) in self.dgamma.iter_mut().zip(&other.dgamma) {
            *a += b;
        }
        for (a, &b) in self.dtheta.iter_mut().zip(&other.dtheta) {
            *a += b;
        }
    }

    fn scale(&mut self, factor: S) {
        for v in self.dgamma.iter_mut().chain(self.dtheta.iter_mut()) {
            *v *= factor;
        }
    }
}

/// Mean squared estimation error `(1/D) sum_i ||x_i - xhat_i||^2`.
pub fn squared_loss<S: Scalar>(xs: &[Vec<S>], xhats: &[Vec<S>]) -> Result<S> {
    if xs.len() != xhats.len() || xs.is_empty() {
        return Err(Error::dim(format!(
            "loss needs equal nonempty sample counts, got {} and {}",
            xs.len(),
            xhats.len()
        )));
    }
    let mut total = S::zero();
    for (x, xhat) in xs.iter().zip(xhats) {
        if x.len() != xhat.len() {
            return Err(Error::dim("loss sample dimensions differ"));
        }
        for (&a, &b) in x.iter().zip(xhat) {
            let d = a - b;
            total += d * d;
        }
    }
    Ok(total / cast(xs.len() as f64))
}

/// Gradient of the single-sample squared loss `||x - s_{depth+1}||^2` with
/// respect to every parameter, by reverse accumulation through the trace.
///
/// The downstream vector `d` starts at `2 (s_{depth+1} - x)` and passes
/// through each layer: the tanh stage contributes the factor
/// `(1 - s_{t+1}^2) / |theta_t|` and the theta gradient
/// `-(sign(theta_t)/theta_t^2) <d tanh', r_t>`; the linear stage contributes
/// the gamma gradient `<., W(y - H s_t)>` and propagates through
/// `(I - gamma_t W H)^T`.
pub fn ti_backward<S: Scalar>(
    sys: &RealSystem<S>,
    trace: &ForwardTrace<S>,
    x: &[S],
    params: &DetectorParams<S>,
    depth: usize,
) -> Result<Gradients<S>> {
    let layers = params.layers();
    if depth == 0 || depth > layers || trace.depth() != depth {
        return Err(Error::InvalidParam(format!(
            "backward depth {depth} does not match trace depth {} within {layers} layers",
            trace.depth()
        )));
    }
    let n = sys.signal_dim;
    if x.len() != n || trace.s[0].len() != n {
        return Err(Error::dim(format!(
            "target length {} does not match signal dimension {n}",
            x.len()
        )));
    }

    let two = cast::<S>(2.0);
    let mut grads = Gradients::zeros(layers);
    let mut d: Vec<S> = trace.s[depth]
        .iter()
        .zip(x)
        .map(|(&si, &xi)| two * (si - xi))
        .collect();

    let mut dl_du = vec![S::zero(); n];
    let mut obs_tmp = vec![S::zero(); sys.obs_dim];
    let mut back = vec![S::zero(); n];
    for t in (0..depth).rev() {
        let theta = params.theta[t];
        let gamma = params.gamma[t];
        let scale = theta.abs();
        let sign = if theta >= S::zero() { S::one() } else { -S::one() };
        let s_next = &trace.s[t + 1];
        let r = &trace.r[t];
        let g = &trace.corrections[t];

        for ((u, &di), &si) in dl_du.iter_mut().zip(&d).zip(s_next) {
            *u = di * (S::one() - si * si);
        }
        grads.dtheta[t] = -(sign / (scale * scale)) * dot(&dl_du, r);

        // dl_du / scale serves both the gamma gradient and the propagation.
        for u in dl_du.iter_mut() {
            *u /= scale;
        }
        grads.dgamma[t] = dot(&dl_du, g);

        if t > 0 {
            sys.w.tr_matvec_into(&dl_du, &mut obs_tmp)?;
            sys.h.tr_matvec_into(&obs_tmp, &mut back)?;
            for ((di, &ui), &bi) in d.iter_mut().zip(&dl_du).zip(&back) {
                *di = ui - gamma * bi;
            }
        }
    }
    Ok(grads)
}

/// One Adam update of the full parameter vector, then the theta guard that
/// keeps `|theta_t| >= 1e-6` (sign preserved, sign(0) taken as +1).
pub fn adam_step<S: Scalar>(
    state: &mut AdamState<S>,
    params: &mut DetectorParams<S>,
    grads: &Gradients<S>,
    lr: S,
) -> Result<()> {
    let layers = params.layers();
    if grads.dgamma.len() != layers || grads.dtheta.len() != layers {
        return Err(Error::dim("gradient length does not match parameters"));
    }
    if state.m1.len() != 2 * layers {
        return Err(Error::dim("optimizer state does not match parameters"));
    }
    if grads
        .dgamma
        .iter()
        .chain(grads.dtheta.iter())
        .any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("gradient".into()));
    }

    state.step += 1;
    let b1 = state.beta1;
    let b2 = state.beta2;
    let step_s = cast::<S>(state.step as f64);
    let corr1 = S::one() - b1.powf(step_s);
    let corr2 = S::one() - b2.powf(step_s);

    let mut update = |idx: usize, param: &mut S, g: S| {
        state.m1[idx] = b1 * state.m1[idx] + (S::one() - b1) * g;
        state.m2[idx] = b2 * state.m2[idx] + (S::one() - b2) * g * g;
        let m1_hat = state.m1[idx] / corr1;
        let m2_hat = state.m2[idx] / corr2;
        *param -= lr * m1_hat / (m2_hat.sqrt() + state.eps_hat);
    };
    for (i, (p, &g)) in params.gamma.iter_mut().zip(&grads.dgamma).enumerate() {
        update(i, p, g);
    }
    for (i, (p, &g)) in params.theta.iter_mut().zip(&grads.dtheta).enumerate() {
        update(layers + i, p, g);
    }

    let floor = cast::<S>(1e-6);
    for th in params.theta.iter_mut() {
        let sign = if *th >= S::zero() { S::one() } else { -S::one() };
        *th = th.abs().max(floor) * sign;
    }
    Ok(())
}

/// Draw one mini-batch: a fresh channel at the configured SNR and `D`
/// independent observations under it.
pub fn make_minibatch<S: Scalar>(
    cfg: &TrainConfig<S>,
    rng: &mut crate::stream::StreamRng,
) -> Result<MiniBatch<S>> {
    let ch = sample_complex_channel(cfg.n, cfg.m, rng)?;
    let sys = to_real_system(&ch, noise_sigma_from_snr(cfg.snr_db, 2 * cfg.n))?;
    let mut xs = Vec::with_capacity(cfg.batch);
    let mut ys = Vec::with_capacity(cfg.batch);
    for _ in 0..cfg.batch {
        let obs = sys.observe(rng)?;
        xs.push(obs.x);
        ys.push(obs.y);
    }
    Ok(MiniBatch { sys, xs, ys })
}

/// Batch loss and averaged gradients at depth `depth`. Per-sample passes run
/// in parallel; the reduction is an ordered sum, so results do not depend on
/// thread scheduling.
pub fn batch_gradients<S: Scalar>(
    batch: &MiniBatch<S>,
    params: &DetectorParams<S>,
    depth: usize,
) -> Result<(Gradients<S>, S)> {
    if batch.xs.is_empty() || batch.xs.len() != batch.ys.len() {
        return Err(Error::dim("mini-batch is empty or ragged"));
    }
    let per_sample: Vec<(Gradients<S>, S)> = batch
        .xs
        .par_iter()
        .zip(batch.ys.par_iter())
        .map(|(x, y)| -> Result<(Gradients<S>, S)> {
            let trace = ti_forward(&batch.sys, y, params, depth)?;
            let mut loss = S::zero();
            for (&xi, &si) in x.iter().zip(trace.estimate()) {
                let d = xi - si;
                loss += d * d;
            }
            let grads = ti_backward(&batch.sys, &trace, x, params, depth)?;
            Ok((grads, loss))
        })
        .collect::<Result<_>>()?;

    let inv = S::one() / cast::<S>(batch.xs.len() as f64);
    let mut grads = Gradients::zeros(params.layers());
    let mut loss = S::zero();
    for (g, l) in &per_sample {
        grads.add_assign(g);
        loss += *l;
    }
    grads.scale(inv);
    Ok((grads, loss * inv))
}

/// Mean loss of the last up-to-10 mini-batches of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog<S> {
    pub round: usize,
    pub loss: S,
}

/// One incremental round: `k` mini-batches from `next_batch`, each a
/// depth-`round` forward/backward pass and one Adam step. Returns the
/// per-batch losses (evaluated before each step).
pub fn train_round<S: Scalar>(
    params: &mut DetectorParams<S>,
    adam: &mut AdamState<S>,
    round: usize,
    k: usize,
    lr: S,
    mut next_batch: impl FnMut() -> Result<MiniBatch<S>>,
) -> Result<Vec<S>> {
    let mut losses = Vec::with_capacity(k);
    for _ in 0..k {
        let batch = next_batch()?;
        let (grads, loss) = batch_gradients(&batch, params, round)?;
        adam_step(adam, params, &grads, lr)?;
        losses.push(loss);
    }
    Ok(losses)
}

/// Incremental training: rounds `t = 1..=T`, each optimizing the depth-`t`
/// loss for `K` mini-batches from all-ones initialization. Deterministic
/// given the seed. The log holds one entry per round with at least one
/// batch; `on_round` sees each entry as its round completes.
pub fn train_incremental_with<S: Scalar>(
    cfg: &TrainConfig<S>,
    mut on_round: impl FnMut(&RoundLog<S>),
) -> Result<(DetectorParams<S>, Vec<RoundLog<S>>)> {
    cfg.validate()?;
    let mut rng = rng_from(child(cfg.seed, DOMAIN_TRAIN));
    let mut params = DetectorParams::ones(cfg.layers);
    let mut adam = AdamState::new(2 * cfg.layers);
    let mut logs = Vec::new();
    for round in 1..=cfg.layers {
        if !cfg.carry_adam {
            adam = AdamState::new(2 * cfg.layers);
        }
        let losses = train_round(
            &mut params,
            &mut adam,
            round,
            cfg.rounds_batches,
            cfg.lr,
            || make_minibatch(cfg, &mut rng),
        )?;
        if !losses.is_empty() {
            let tail = &losses[losses.len().saturating_sub(10)..];
            let mean = tail.iter().copied().sum::<S>() / cast(tail.len() as f64);
            let entry = RoundLog { round, loss: mean };
            on_round(&entry);
            logs.push(entry);
        }
    }
    Ok((params, logs))
}

/// [`train_incremental_with`] without progress reporting.
pub fn train_incremental<S: Scalar>(
    cfg: &TrainConfig<S>,
) -> Result<(DetectorParams<S>, Vec<RoundLog<S>>)> {
    train_incremental_with(cfg, |_| {})
}
