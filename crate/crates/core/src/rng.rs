//! Seedable, portable randomness.
//!
//! Every sampler in the crate draws from [`Stream`], a ChaCha8 generator.
//! Stream splitting rule: a stream is identified by `(seed, stream_id)`; the
//! 64-bit seed is expanded into the ChaCha key with `seed_from_u64` and the
//! id selects the ChaCha stream word. Independent consumers of the same seed
//! (phases of a sampler, generator stages) use distinct ids from
//! [`streams`]. Derived seeds (per-K sweep seeds) go through [`mix`].
//!
//! All conversions to floating point are implemented here rather than
//! borrowed from `rand`, so outputs are identical across platforms and crate
//! upgrades.

use alloc::vec::Vec;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Well-known stream ids.
pub mod streams {
    pub const LDA_INIT: u64 = 1;
    pub const LDA_GIBBS: u64 = 2;
    pub const SYNTH_TOPICS: u64 = 10;
    pub const SYNTH_DOCS: u64 = 11;
    pub const QDTM_MAIN: u64 = 20;
    pub const QDTM_SUB: u64 = 21;
    pub const EMBEDDING: u64 = 30;
    pub const SAMPLING: u64 = 40;
}

/// SplitMix64 finalizer applied to `seed ^ golden * (salt + 1)`.
pub fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(salt.wrapping_add(1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct Stream {
    inner: ChaCha8Rng,
}

impl Stream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Stream { inner }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in (0, 1].
    #[inline]
    pub fn uniform_open0(&mut self) -> f64 {
        1.0 - self.uniform()
    }

    /// Uniform integer in `0..n` (Lemire's method with rejection). `n` must be > 0.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        let n = n as u64;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            let low = m as u64;
            if low >= n || low >= n.wrapping_neg() % n {
                return (m >> 64) as usize;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard normal via Box-Muller (one value per call).
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform_open0();
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
    }

    /// Gamma(shape, 1) by Marsaglia-Tsang, boosted for shape < 1.
    pub fn gamma(&mut self, shape: f64) -> f64 {
        debug_assert!(shape > 0.0);
        if shape < 1.0 {
            let g = self.gamma(shape + 1.0);
            return g * libm::pow(self.uniform_open0(), 1.0 / shape);
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / libm::sqrt(9.0 * d);
        loop {
            let x = self.normal();
            let v = 1.0 + c * x;
            if v <= 0.0 {
                continue;
            }
            let v = v * v * v;
            let u = self.uniform_open0();
            if u < 1.0 - 0.0331 * x * x * x * x
                || libm::log(u) < 0.5 * x * x + d * (1.0 - v + libm::log(v))
            {
                return d * v;
            }
        }
    }

    /// Dirichlet draw with the given concentration vector.
    pub fn dirichlet(&mut self, alpha: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = alpha.iter().map(|&a| self.gamma(a)).collect();
        normalize_or_uniform(&mut out, self);
        out
    }

    pub fn symmetric_dirichlet(&mut self, alpha: f64, dim: usize) -> Vec<f64> {
        let mut out: Vec<f64> = (0..dim).map(|_| self.gamma(alpha)).collect();
        normalize_or_uniform(&mut out, self);
        out
    }

    /// Poisson(mean) by counting unit-rate exponential arrivals.
    pub fn poisson(&mut self, mean: f64) -> usize {
        let mut acc = 0.0;
        let mut n = 0usize;
        loop {
            acc -= libm::log(self.uniform_open0());
            if acc > mean {
                return n;
            }
            n += 1;
        }
    }

    /// Index drawn proportionally to non-negative `weights` with known `total`.
    #[inline]
    pub fn categorical(&mut self, weights: &[f64], total: f64) -> usize {
        let mut u = self.uniform() * total;
        for (i, &w) in weights.iter().enumerate() {
            if u < w {
                return i;
            }
            u -= w;
        }
        // floating-point residue: last positive weight
        weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

// Dirichlet draws with tiny concentrations can underflow every component to
// zero; in that case put all mass on one uniformly chosen coordinate.
fn normalize_or_uniform(v: &mut [f64], rng: &mut Stream) {
    let total: f64 = v.iter().sum();
    if total > 0.0 && total.is_finite() {
        v.iter_mut().for_each(|x| *x /= total);
    } else {
        let hot = rng.below(v.len());
        v.iter_mut().enumerate().for_each(|(i, x)| *x = if i == hot { 1.0 } else { 0.0 });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = Stream::new(7, 1);
        let mut b = Stream::new(7, 1);
        let mut c = Stream::new(7, 2);
        let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..8).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn mix_separates_nearby_inputs() {
        assert_ne!(mix(42, 5), mix(42, 6));
        assert_ne!(mix(42, 5), mix(43, 5));
        assert_eq!(mix(42, 5), mix(42, 5));
    }

    #[test]
    fn below_stays_in_range() {
        let mut r = Stream::new(1, 0);
        for n in 1..50 {
            for _ in 0..20 {
                assert!(r.below(n) < n);
            }
        }
    }

    #[test]
    fn gamma_mean_matches_shape() {
        let mut r = Stream::new(3, 0);
        for &shape in &[0.1, 0.5, 1.0, 4.0] {
            let n = 20_000;
            let mean: f64 = (0..n).map(|_| r.gamma(shape)).sum::<f64>() / n as f64;
            // sd of the mean is sqrt(shape / n)
            assert!((mean - shape).abs() < 5.0 * libm::sqrt(shape / n as f64), "{shape} {mean}");
        }
    }

    #[test]
    fn poisson_mean() {
        let mut r = Stream::new(5, 0);
        let n = 5_000;
        let mean = (0..n).map(|_| r.poisson(80.0)).sum::<usize>() as f64 / n as f64;
        assert!((mean - 80.0).abs() < 5.0 * libm::sqrt(80.0 / n as f64));
    }

    #[test]
    fn dirichlet_rows_sum_to_one() {
        let mut r = Stream::new(9, 0);
        for _ in 0..50 {
            let d = r.symmetric_dirichlet(0.01, 100);
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(d.iter().all(|&x| x >= 0.0));
        }
    }
}
