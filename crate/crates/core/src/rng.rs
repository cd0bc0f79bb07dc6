//! Seeded random streams and the scalar variate generators used by the samplers.
//!
//! Every random draw in the crate goes through a [`RngHandle`]: a master seed plus a
//! stream index. ChaCha8 supports 2^64 independent streams per key, so distinct
//! stream indices give independent, reproducible substreams without coordination
//! between threads.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Master seed plus substream index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngHandle {
    pub seed: u64,
    pub stream: u64,
}

impl RngHandle {
    pub fn new(seed: u64) -> Self {
        RngHandle { seed, stream: 0 }
    }

    pub fn with_stream(self, stream: u64) -> Self {
        RngHandle { stream, ..self }
    }

    /// Handle offset from this one's stream index.
    pub fn substream(self, offset: u64) -> Self {
        RngHandle {
            stream: self.stream.wrapping_add(offset),
            ..self
        }
    }

    /// Fresh generator positioned at the start of this substream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Uniform on the open interval (0, 1), 53-bit resolution.
pub fn uniform_open01<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Log of (1 - B) for B ~ Beta(1, alpha), by inversion: 1 - B = U^(1/alpha).
///
/// Returning the log keeps the complementary mass exact when alpha is huge and
/// B is tiny.
pub fn ln_one_minus_beta1<R: RngCore + ?Sized>(rng: &mut R, alpha: f64) -> f64 {
    uniform_open01(rng).ln() / alpha
}

/// B ~ Beta(1, alpha) by inversion.
pub fn beta1<R: RngCore + ?Sized>(rng: &mut R, alpha: f64) -> f64 {
    -ln_one_minus_beta1(rng, alpha).exp_m1()
}

/// Log of a Gamma(shape, 1) variate (Marsaglia–Tsang).
///
/// For shape < 1 the boost `G(shape) = G(shape + 1) * U^(1/shape)` is applied in
/// log space, so the result stays finite even when the variate itself would
/// underflow.
pub fn ln_gamma_variate<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    debug_assert!(shape > 0.0 && shape.is_finite());
    if shape < 1.0 {
        let boosted = ln_gamma_variate(rng, shape + 1.0);
        return boosted + uniform_open01(rng).ln() / shape;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = standard_normal(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = uniform_open01(rng);
        if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
            return (d * v).ln();
        }
    }
}

pub fn gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    ln_gamma_variate(rng, shape).exp()
}
