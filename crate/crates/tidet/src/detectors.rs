//! Detectors: the trainable unrolled iterative detector's forward recursion,
//! MMSE and ISTA baselines, and the hard-decision rule.
//!
//! The iterative detector alternates a linear estimator
//! `r_t = s_t + gamma_t * W (y - H s_t)` with an elementwise nonlinear
//! estimator `s_{t+1} = tanh(r_t / |theta_t|)`, starting from `s_1 = 0`.
//! Per layer the cost is O(MN): two matrix-vector products. The 2T scalars
//! `{gamma_t, theta_t}` are the only trainable parameters.

use crate::channel::RealSystem;
use crate::error::{Error, Result};
use crate::linalg::{dot, solve_spd, DenseMatrix};
use crate::scalar::{cast, Scalar};

/// Trainable scalars of the unrolled detector: step sizes `gamma` and
/// nonlinearity scales `theta`, one of each per layer.
///
/// `theta_t` enters the recursion only through `|theta_t|`; negative stored
/// values are legal, zeros are not.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorParams<S> {
    pub gamma: Vec<S>,
    pub theta: Vec<S>,
}

impl<S: Scalar> DetectorParams<S> {
    /// Validated constructor: equal lengths, at least one layer, finite
    /// values, nonzero `theta`.
    pub fn new(gamma: Vec<S>, theta: Vec<S>) -> Result<Self> {
        if gamma.len() != theta.len() || gamma.is_empty() {
            return Err(Error::dim(format!(
                "parameter vectors must have equal positive length, got {} and {}",
                gamma.len(),
                theta.len()
            )));
        }
        if gamma.iter().chain(theta.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("detector parameters".into()));
        }
        if theta.iter().any(|&v| v == S::zero()) {
            return Err(Error::InvalidParam("theta must be nonzero".into()));
        }
        Ok(Self { gamma, theta })
    }

    /// All-ones initialization: unit step sizes, unit nonlinearity scales.
    pub fn ones(layers: usize) -> Self {
        Self {
            gamma: vec![S::one(); layers],
            theta: vec![S::one(); layers],
        }
    }

    pub fn layers(&self) -> usize {
        self.gamma.len()
    }
}

/// Per-layer intermediates of one forward pass, retained for
/// backpropagation: `s` holds the layer outputs `s_1..s_{depth+1}`, `r` the
/// pre-activation vectors `r_1..r_depth`. `corrections[t]` caches
/// `W (y - H s_t)`, reused by the backward pass as the step-size gradient
/// direction.
#[derive(Debug, Clone)]
pub struct ForwardTrace<S> {
    pub s: Vec<Vec<S>>,
    pub r: Vec<Vec<S>>,
    pub(crate) corrections: Vec<Vec<S>>,
}

impl<S: Scalar> ForwardTrace<S> {
    /// Depth of the pass that produced this trace.
    pub fn depth(&self) -> usize {
        self.r.len()
    }

    /// The detector output: the last layer's `s`.
    pub fn estimate(&self) -> &[S] {
        self.s.last().expect("trace holds at least s_1")
    }
}

/// Run the unrolled detector for `depth` layers and keep all intermediates.
pub fn ti_forward<S: Scalar>(
    sys: &RealSystem<S>,
    y: &[S],
    params: &DetectorParams<S>,
    depth: usize,
) -> Result<ForwardTrace<S>> {
    if depth == 0 || depth > params.layers() {
        return Err(Error::InvalidParam(format!(
            "depth {depth} outside 1..={}",
            params.layers()
        )));
    }
    if y.len() != sys.obs_dim {
        return Err(Error::dim(format!(
            "observation length {} does not match system dimension {}",
            y.len(),
            sys.obs_dim
        )));
    }
    let n = sys.signal_dim;
    let mut s_list = Vec::with_capacity(depth + 1);
    let mut r_list = Vec::with_capacity(depth);
    let mut corrections = Vec::with_capacity(depth);
    s_list.push(vec![S::zero(); n]);

    let mut hs = vec![S::zero(); sys.obs_dim];
    let mut resid = vec![S::zero(); sys.obs_dim];
    for t in 0..depth {
        let theta = params.theta[t];
        if theta == S::zero() {
            return Err(Error::InvalidParam(format!("theta[{t}] is zero")));
        }
        let gamma = params.gamma[t];
        let s = &s_list[t];

        sys.h.matvec_into(s, &mut hs)?;
        for ((ri, &yi), &hi) in resid.iter_mut().zip(y).zip(&hs) {
            *ri = yi - hi;
        }
        let g = sys.w.matvec(&resid)?;

        let mut r = s.clone();
        for (ri, &gi) in r.iter_mut().zip(&g) {
            *ri += gamma * gi;
        }
        let scale = theta.abs();
        let s_next: Vec<S> = r.iter().map(|&ri| (ri / scale).tanh()).collect();

        corrections.push(g);
        r_list.push(r);
        s_list.push(s_next);
    }
    Ok(ForwardTrace {
        s: s_list,
        r: r_list,
        corrections,
    })
}

/// Elementwise sign with ties to -1: `z <= 0` maps to -1, else +1.
pub fn hard_decision<S: Scalar>(s: &[S]) -> Vec<S> {
    s.iter()
        .map(|&v| if v <= S::zero() { -S::one() } else { S::one() })
        .collect()
}

/// Linear MMSE filter `(H^T H + (sigma_w^2/2) I)^{-1} H^T` for a unit-power
/// `+-1` prior, as an `N x M` matrix applied per observation. Factoring once
/// per channel amortizes the solve across trials.
pub fn mmse_filter<S: Scalar>(sys: &RealSystem<S>) -> Result<DenseMatrix<S>> {
    let ht = sys.h.transpose();
    let mut gram = ht.gram_rows();
    let reg = sys.component_noise_var();
    for i in 0..gram.rows() {
        gram.set(i, i, gram.get(i, i) + reg);
    }
    solve_spd(&gram, &ht)
}

/// MMSE estimate of the transmitted vector for one observation.
pub fn mmse_detect<S: Scalar>(sys: &RealSystem<S>, y: &[S]) -> Result<Vec<S>> {
    mmse_filter(sys)?.matvec(y)
}

/// Soft-thresholding `sign(r) * max(|r| - tau, 0)`.
pub fn soft_threshold<S: Scalar>(r: S, tau: S) -> S {
    let mag = r.abs() - tau;
    if mag > S::zero() {
        mag * r.signum()
    } else {
        S::zero()
    }
}

/// Iterative soft thresholding: `r_t = s_t + beta * A^T (u - A s_t)`,
/// `s_{t+1} = soft_threshold(r_t; tau)`, from `s_1 = 0`.
pub fn ista_detect<S: Scalar>(
    a: &DenseMatrix<S>,
    u: &[S],
    beta: S,
    tau: S,
    iters: usize,
) -> Result<Vec<S>> {
    if iters == 0 {
        return Err(Error::InvalidParam("iteration count must be positive".into()));
    }
    if beta <= S::zero() || tau < S::zero() {
        return Err(Error::InvalidParam(format!(
            "need beta > 0 and tau >= 0, got beta {beta}, tau {tau}"
        )));
    }
    if u.len() != a.rows() {
        return Err(Error::dim(format!(
            "observation length {} does not match matrix rows {}",
            u.len(),
            a.rows()
        )));
    }
    let mut s = vec![S::zero(); a.cols()];
    let mut as_vec = vec![S::zero(); a.rows()];
    let mut resid = vec![S::zero(); a.rows()];
    let mut back = vec![S::zero(); a.cols()];
    for _ in 0..iters {
        a.matvec_into(&s, &mut as_vec)?;
        for ((ri, &ui), &avi) in resid.iter_mut().zip(u).zip(&as_vec) {
            *ri = ui - avi;
        }
        a.tr_matvec_into(&resid, &mut back)?;
        for (si, &bi) in s.iter_mut().zip(&back) {
            *si = soft_threshold(*si + beta * bi, tau);
        }
    }
    Ok(s)
}

/// Largest eigenvalue of `A^T A` by `steps` power iterations from the
/// normalized all-ones vector. Deterministic; adequate for step-size
/// selection, not a general eigensolver.
pub fn power_iteration_lmax<S: Scalar>(a: &DenseMatrix<S>, steps: usize) -> Result<S> {
    let n = a.cols();
    if n == 0 {
        return Err(Error::dim("power iteration on empty matrix"));
    }
    let mut v = vec![S::one() / cast::<S>(n as f64).sqrt(); n];
    let mut av = vec![S::zero(); a.rows()];
    let mut next = vec![S::zero(); n];
    let mut lambda = S::zero();
    for _ in 0..steps {
        a.matvec_into(&v, &mut av)?;
        a.tr_matvec_into(&av, &mut next)?;
        lambda = dot(&next, &v);
        let norm = dot(&next, &next).sqrt();
        if norm == S::zero() {
            return Ok(S::zero());
        }
        for (vi, &ni) in v.iter_mut().zip(&next) {
            *vi = ni / norm;
        }
    }
    Ok(lambda)
}

/// Default ISTA step size `1/lambda_max(A^T A)` from 20 power iterations.
pub fn ista_default_beta<S: Scalar>(a: &DenseMatrix<S>) -> Result<S> {
    let lmax = power_iteration_lmax(a, 20)?;
    if lmax <= S::zero() {
        return Err(Error::InvalidParam("matrix has no positive spectrum".into()));
    }
    Ok(S::one() / lmax)
}

/// Default ISTA threshold. The source recursion names but never values it;
/// 0.1 keeps the dead zone small relative to unit symbols.
pub fn ista_default_tau<S: Scalar>() -> S {
    cast::<S>(0.1)
}
