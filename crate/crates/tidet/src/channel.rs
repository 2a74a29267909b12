//! Channel model: complex Rayleigh channel draws, the complex-to-real
//! conversion, and transmit/observation sampling.
//!
//! A complex system with `n` transmit and `m` receive antennas becomes a
//! real system with signal dimension `N = 2n` and observation dimension
//! `M = 2m` through the block map `[[Re, -Im], [Im, Re]]`. QPSK symbols in
//! the complex model turn into `+-1` symbols per real dimension, which is
//! the alphabet every detector in this crate works with. Overloaded means
//! `m < n`: fewer observations than signal dimensions.

use num_complex::Complex;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{pseudo_inverse, DenseMatrix};
use crate::scalar::{cast, Scalar};

/// Complex path-gain matrix: `m` receive rows by `n` transmit columns,
/// row-major.
#[derive(Debug, Clone)]
pub struct ComplexChannel<S> {
    /// Transmit-antenna count.
    pub n: usize,
    /// Receive-antenna count.
    pub m: usize,
    pub entries: Vec<Complex<S>>,
}

/// Draw an `m x n` channel with i.i.d. CN(0,1) entries: real and imaginary
/// parts are independent N(0, 1/2).
pub fn sample_complex_channel<S: Scalar, R: Rng + ?Sized>(
    n: usize,
    m: usize,
    rng: &mut R,
) -> Result<ComplexChannel<S>> {
    if n == 0 || m == 0 {
        return Err(Error::dim(format!("channel dimensions {m}x{n} must be positive")));
    }
    let half_sqrt = cast::<S>(0.5).sqrt();
    let entries = (0..m * n)
        .map(|_| {
            let re = S::standard_normal(rng) * half_sqrt;
            let im = S::standard_normal(rng) * half_sqrt;
            Complex::new(re, im)
        })
        .collect();
    Ok(ComplexChannel { n, m, entries })
}

/// Real-valued system: channel matrix, its pseudo-inverse, and the noise
/// variance of the complex model.
#[derive(Debug, Clone)]
pub struct RealSystem<S> {
    /// `N = 2n`: signal dimension.
    pub signal_dim: usize,
    /// `M = 2m`: observation dimension.
    pub obs_dim: usize,
    /// `M x N` channel matrix.
    pub h: DenseMatrix<S>,
    /// `N x M` Moore-Penrose pseudo-inverse of `h`, mapping observation-space
    /// residuals back to the signal space.
    pub w: DenseMatrix<S>,
    /// Complex-model noise variance; each real component carries half of it.
    pub sigma_w2: S,
}

/// Observation `y = H x + w` together with the transmitted symbols.
#[derive(Debug, Clone)]
pub struct Observation<S> {
    pub x: Vec<S>,
    pub y: Vec<S>,
}

/// Noise variance `sigma_w^2 = N / 10^(snr_db/10)` for SNR defined as
/// `E_s/N_0 = N/sigma_w^2`, with `N` the real signal dimension.
pub fn noise_sigma_from_snr<S: Scalar>(snr_db: S, signal_dim: usize) -> S {
    let ten = cast::<S>(10.0);
    cast::<S>(signal_dim as f64) / ten.powf(snr_db / ten)
}

/// Convert a complex channel into its real-valued system at noise variance
/// `sigma_w2`, including the pseudo-inverse used by the iterative detector.
pub fn to_real_system<S: Scalar>(ch: &ComplexChannel<S>, sigma_w2: S) -> Result<RealSystem<S>> {
    let n = ch.n;
    let m = ch.m;
    if ch.entries.len() != n * m {
        return Err(Error::dim(format!(
            "complex channel {}x{} needs {} entries, got {}",
            m,
            n,
            n * m,
            ch.entries.len()
        )));
    }
    let h = DenseMatrix::from_fn(2 * m, 2 * n, |r, c| {
        let e = ch.entries[(r % m) * n + (c % n)];
        match (r >= m, c >= n) {
            (false, false) => e.re,
            (false, true) => -e.im,
            (true, false) => e.im,
            (true, true) => e.re,
        }
    });
    RealSystem::from_matrix(h, sigma_w2)
}

impl<S: Scalar> RealSystem<S> {
    /// Build a system directly from a real channel matrix and the complex
    /// noise variance `sigma_w^2`.
    pub fn from_matrix(h: DenseMatrix<S>, sigma_w2: S) -> Result<Self> {
        if !sigma_w2.is_finite() || sigma_w2 < S::zero() {
            return Err(Error::InvalidParam(format!(
                "noise variance must be finite and nonnegative, got {sigma_w2}"
            )));
        }
        let w = pseudo_inverse(&h)?;
        Ok(Self {
            signal_dim: h.cols(),
            obs_dim: h.rows(),
            h,
            w,
            sigma_w2,
        })
    }

    /// Noise variance per real component: `sigma_w^2 / 2`.
    pub fn component_noise_var(&self) -> S {
        self.sigma_w2 / cast::<S>(2.0)
    }

    /// `y = H x + w` with i.i.d. N(0, sigma_w^2/2) noise per component.
    pub fn transmit<R: Rng + ?Sized>(&self, x: &[S], rng: &mut R) -> Result<Observation<S>> {
        let sigma = self.component_noise_var().sqrt();
        let mut y = self.h.matvec(x)?;
        for v in y.iter_mut() {
            *v += S::standard_normal(rng) * sigma;
        }
        Ok(Observation { x: x.to_vec(), y })
    }

    /// `y = H x + w` with the noise vector supplied by the caller, for
    /// exact-arithmetic tests.
    pub fn transmit_given_noise(&self, x: &[S], w: &[S]) -> Result<Observation<S>> {
        if w.len() != self.obs_dim {
            return Err(Error::dim(format!(
                "noise length {} does not match observation dimension {}",
                w.len(),
                self.obs_dim
            )));
        }
        let mut y = self.h.matvec(x)?;
        for (v, &wi) in y.iter_mut().zip(w) {
            *v += wi;
        }
        Ok(Observation { x: x.to_vec(), y })
    }

    /// Draw symbols and a noisy observation in one step.
    pub fn observe<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Observation<S>> {
        let x = sample_transmit(self.signal_dim, rng);
        self.transmit(&x, rng)
    }
}

/// Draw a uniform `+-1` symbol vector.
pub fn sample_transmit<S: Scalar, R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<S> {
    (0..len)
        .map(|_| if rng.gen::<bool>() { S::one() } else { -S::one() })
        .collect()
}
