//! Deterministic random streams.
//!
//! Every random quantity in the crate is drawn from an [`RngStream`] keyed by a
//! global seed and a [`StreamId`] `(index, purpose)`. The ChaCha block
//! function gives each key its own 2^64-block stream, so results do not depend
//! on how work is split across threads: trajectory `k` always sees the same
//! draws whether it runs first, last, or on another core.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Real;

/// What a stream is used for. Distinct purposes never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    Chain = 1,
    Coupled = 2,
    OperatorG = 3,
    OperatorW = 4,
    Process = 5,
    Jump = 6,
    Check = 7,
    Bootstrap = 8,
    Baseline = 9,
    Lyapunov = 10,
    Sampler = 11,
}

/// Identifies one independent stream under a seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub index: u64,
    pub purpose: Purpose,
}

impl StreamId {
    pub fn new(index: u64, purpose: Purpose) -> Self {
        assert!(index < 1 << 56, "stream index must fit in 56 bits");
        Self { index, purpose }
    }

    fn word(self) -> u64 {
        (self.index << 8) | self.purpose as u64
    }
}

/// A seeded, independently addressable random stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(id.word());
        Self { inner }
    }

    /// Convenience for `RngStream::new(seed, StreamId::new(index, purpose))`.
    pub fn for_task(seed: u64, index: u64, purpose: Purpose) -> Self {
        Self::new(seed, StreamId::new(index, purpose))
    }

    /// Uniform on `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform on the open interval `(0, 1)`; the zero grid point is moved half a step up.
    #[inline]
    pub fn uniform_open(&mut self) -> f64 {
        let u = self.uniform();
        if u == 0.0 {
            f64::EPSILON / 4.0
        } else {
            u
        }
    }

    /// `Exp(rate)` by inversion from a single uniform; always strictly positive.
    #[inline]
    pub fn exponential<T: Real>(&mut self, rate: T) -> T {
        let u = self.uniform_open();
        T::of(-(-u).ln_1p()) / rate
    }

    /// Index drawn with probability proportional to `weights` by inversion
    /// from a single uniform. Weights need not be normalized but must have a
    /// positive finite total.
    pub fn categorical<T: Real>(&mut self, weights: &[T]) -> usize {
        let u = self.uniform();
        categorical_from_uniform(weights, u)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Inverse-CDF selection. Zero-weight categories are never chosen.
pub(crate) fn categorical_from_uniform<T: Real>(weights: &[T], u: f64) -> usize {
    let total: T = weights.iter().copied().sum();
    let target = T::of(u) * total;
    let mut acc = T::zero();
    let mut last_positive = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w > T::zero() {
            acc += w;
            last_positive = k;
            if target < acc {
                return k;
            }
        }
    }
    // Rounding can leave `target` a hair above the accumulated total.
    last_positive
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_sequence() {
        let mut a = RngStream::for_task(7, 3, Purpose::Chain);
        let mut b = RngStream::for_task(7, 3, Purpose::Chain);
        for _ in 0..100 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn distinct_keys_diverge() {
        let mut a = RngStream::for_task(7, 3, Purpose::Chain);
        let mut b = RngStream::for_task(7, 4, Purpose::Chain);
        let mut c = RngStream::for_task(7, 3, Purpose::Coupled);
        let mut d = RngStream::for_task(8, 3, Purpose::Chain);
        let xa: Vec<f64> = (0..8).map(|_| a.uniform()).collect();
        for other in [&mut b, &mut c, &mut d] {
            let xo: Vec<f64> = (0..8).map(|_| other.uniform()).collect();
            assert_ne!(xa, xo);
        }
    }

    #[test]
    fn independent_streams_are_uncorrelated() {
        let n = 20_000;
        let mut a = RngStream::for_task(1, 0, Purpose::Chain);
        let mut b = RngStream::for_task(1, 1, Purpose::Chain);
        let (mut sab, mut sa, mut sb, mut saa, mut sbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let (x, y) = (a.uniform(), b.uniform());
            sab += x * y;
            sa += x;
            sb += y;
            saa += x * x;
            sbb += y * y;
        }
        let nf = n as f64;
        let cov = sab / nf - sa * sb / nf / nf;
        let corr = cov / ((saa / nf - (sa / nf).powi(2)) * (sbb / nf - (sb / nf).powi(2))).sqrt();
        // 4 standard errors of a null correlation.
        assert!(corr.abs() < 4.0 / nf.sqrt(), "corr = {corr}");
    }

    #[test]
    fn exponential_mean() {
        let mut r = RngStream::for_task(11, 0, Purpose::Chain);
        let n = 100_000;
        let m: f64 = (0..n).map(|_| r.exponential(2.0f64)).sum::<f64>() / n as f64;
        assert!((m - 0.5).abs() < 4.0 * 0.5 / (n as f64).sqrt());
    }

    #[test]
    fn categorical_skips_zero_weights() {
        let w = [0.0, 0.3, 0.0, 0.7, 0.0];
        assert_eq!(categorical_from_uniform(&w, 0.0), 1);
        assert_eq!(categorical_from_uniform(&w, 0.29), 1);
        assert_eq!(categorical_from_uniform(&w, 0.31), 3);
        assert_eq!(categorical_from_uniform(&w, 0.999_999_999_999), 3);
    }
}
