//! Scalar numerical primitives shared by every other module: the Gaussian
//! tail function Q and its inverse, bisection root finding, and the seeded
//! RNG stream contract that makes Monte-Carlo runs reproducible.

use std::fmt;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

/// A probability value, guaranteed to lie in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Probability(f64);

impl Probability {
    pub const ZERO: Probability = Probability(0.0);
    pub const HALF: Probability = Probability(0.5);
    pub const ONE: Probability = Probability(1.0);

    /// Construct from a raw value, rejecting anything outside `[0, 1]`.
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && (0.0..=1.0).contains(&value) {
            Ok(Probability(value))
        } else {
            Err(Error::domain(format!("probability {value} outside [0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `1 - p`, exact at the endpoints.
    pub fn complement(self) -> Self {
        Probability(1.0 - self.0)
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

impl fmt::Display for Probability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A reproducible random stream: identical `(seed, stream)` pairs yield
/// bitwise-identical sample sequences, distinct streams are independent.
///
/// Streams are cheap value types; parallel workers each take their own
/// substream so that tallies are deterministic regardless of scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngStream { seed, stream }
    }

    /// Instantiate the generator for this stream.
    pub fn rng(&self) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Derive a child stream. Distinct indices map to distinct streams with
    /// overwhelming probability (64-bit mixed ids).
    pub fn substream(&self, index: u64) -> Self {
        RngStream {
            seed: self.seed,
            stream: splitmix64(self.stream).wrapping_add(splitmix64(index ^ 0x9e37_79b9_7f4a_7c15)),
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

const FRAC_1_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI / 2.0;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7; // 1/sqrt(2 pi)

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// The Gaussian tail function `Q(x) = ∫_x^∞ φ(t) dt`, with absolute error
/// well below 1e-12 over the whole real line.
pub fn q_function(x: f64) -> Result<Probability> {
    if !x.is_finite() {
        return Err(Error::domain(format!("q_function requires finite input, got {x}")));
    }
    if x < 0.0 {
        let tail = q_function(-x)?;
        return Ok(Probability(1.0 - tail.0));
    }
    Ok(Probability(0.5 * erfc_nonneg(x / std::f64::consts::SQRT_2)))
}

/// erfc(z) for z >= 0: Maclaurin series of erf below the crossover,
/// Laplace continued fraction above it. Both converge in f64 to ~1e-15.
fn erfc_nonneg(z: f64) -> f64 {
    debug_assert!(z >= 0.0);
    if z < 2.5 {
        1.0 - erf_series(z)
    } else {
        // erfc(z) = exp(-z^2)/sqrt(pi) * 1/(z + (1/2)/(z + 1/(z + (3/2)/(z + ...))))
        // evaluated by backward recurrence; exp underflows to 0 for z > ~27.3.
        let mut tail = 0.0_f64;
        for n in (1..=160u32).rev() {
            tail = 0.5 * f64::from(n) / (z + tail);
        }
        (-(z * z)).exp() * FRAC_1_SQRT_PI / (z + tail)
    }
}

/// erf(z) via the alternating Maclaurin series, accurate for small z.
fn erf_series(z: f64) -> f64 {
    let z2 = z * z;
    let mut term = z;
    let mut sum = z;
    for n in 1..80u32 {
        term *= -z2 / f64::from(n);
        let contribution = term / f64::from(2 * n + 1);
        sum += contribution;
        if contribution.abs() < sum.abs() * 1e-17 {
            break;
        }
    }
    sum * std::f64::consts::FRAC_2_SQRT_PI
}

/// Inverse of [`q_function`] on the open interval (0, 1).
///
/// Rational approximation (Acklam) refined by one Newton step against
/// `q_function` itself, so the round trip is exact to ~1e-14 relative.
pub fn inverse_q(p: Probability) -> Result<f64> {
    let p = p.value();
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!(
            "inverse_q requires 0 < p < 1, got {p} (accuracy target unreachable)"
        )));
    }
    // Q^{-1}(p) = Phi^{-1}(1 - p) = -Phi^{-1}(p)
    let x0 = -acklam_ndtri(p);
    // One Newton step: Q'(x) = -phi(x).
    let residual = q_function(x0)?.value() - p;
    let x = x0 + residual / normal_pdf(x0);
    Ok(x)
}

/// Acklam's rational approximation to the standard normal quantile,
/// ~1.15e-9 relative error before refinement.
fn acklam_ndtri(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Bisection on a continuous function with a sign change over `[lo, hi]`.
/// Returns the bracket midpoint once the bracket is narrower than `tol`.
pub fn bisect_root<F>(f: F, lo: f64, hi: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::domain(format!("invalid bracket [{lo}, {hi}]")));
    }
    if !(tol > 0.0) {
        return Err(Error::domain(format!("tolerance must be positive, got {tol}")));
    }
    let flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() * fhi.signum() > 0.0 {
        return Err(Error::Bracket { lo, hi, flo, fhi });
    }
    let (mut lo, mut hi, mut flo) = (lo, hi, flo);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break; // bracket exhausted in f64
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
