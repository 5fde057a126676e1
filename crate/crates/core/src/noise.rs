//! Counter-based Wiener increments.
//!
//! The increment for `(master_seed, path_index, step)` is a pure function of
//! that key: a ChaCha8 generator is keyed with the three integers and a single
//! standard normal is drawn from it. Paths and steps can therefore be
//! evaluated in any order, on any thread, and on any mesh with identical
//! results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Variance convention for `ΔWⁿ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncrementVariance {
    /// `ΔWⁿ ~ N(0, τ)`, a Brownian increment over one step.
    #[default]
    Tau,
    /// `ΔWⁿ ~ N(0, 1)` regardless of the step size.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseStream {
    master_seed: u64,
    path_index: u64,
}

const DOMAIN_TAG: u64 = 0x5343_485f_5749_454e; // "SCH_WIEN"

impl NoiseStream {
    pub fn new(master_seed: u64, path_index: u64) -> Self {
        Self {
            master_seed,
            path_index,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    /// Standard normal sample keyed by `(seed, path, step)`.
    pub fn standard_normal(&self, step: usize) -> f64 {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.master_seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.path_index.to_le_bytes());
        key[16..24].copy_from_slice(&(step as u64).to_le_bytes());
        key[24..32].copy_from_slice(&DOMAIN_TAG.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        StandardNormal.sample(&mut rng)
    }

    /// `ΔWⁿ` for step `n ≥ 1`.
    pub fn increment(&self, step: usize, tau: f64, variance: IncrementVariance) -> f64 {
        debug_assert!(step >= 1, "increments are indexed from step 1");
        let z = self.standard_normal(step);
        match variance {
            IncrementVariance::Tau => tau.sqrt() * z,
            IncrementVariance::Unit => z,
        }
    }

    /// Increments for steps `1..=n`.
    pub fn increments(&self, n: usize, tau: f64, variance: IncrementVariance) -> Vec<f64> {
        (1..=n).map(|k| self.increment(k, tau, variance)).collect()
    }
}

/// Order-sensitive FNV-1a digest of the bit patterns of `values`.
pub fn checksum(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_keyed() {
        let s = NoiseStream::new(42, 3);
        assert_eq!(s.standard_normal(5).to_bits(), s.standard_normal(5).to_bits());
        assert_ne!(s.standard_normal(5), s.standard_normal(6));
        assert_ne!(s.standard_normal(5), NoiseStream::new(42, 4).standard_normal(5));
        assert_ne!(s.standard_normal(5), NoiseStream::new(43, 3).standard_normal(5));
    }

    #[test]
    fn variance_modes() {
        let s = NoiseStream::new(1, 0);
        let z = s.standard_normal(9);
        assert_eq!(s.increment(9, 0.04, IncrementVariance::Tau), 0.2 * z);
        assert_eq!(s.increment(9, 0.04, IncrementVariance::Unit), z);
    }

    #[test]
    fn sample_variance_within_three_sigma() {
        // oracle: var(s²) = 2σ⁴/(n-1) for Gaussian samples
        let tau = 1e-3;
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|k| NoiseStream::new(2024, (k / 1000) as u64).increment(k % 1000 + 1, tau, IncrementVariance::Tau))
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sigma = tau * (2.0 / (n - 1) as f64).sqrt();
        assert!((var - tau).abs() <= 3.0 * sigma, "{var}");
        assert!((0.00097..=0.00103).contains(&var));
    }

    #[test]
    fn summed_increments_have_variance_t() {
        let (tau, steps, paths) = (1e-3, 100, 10_000);
        let sums: Vec<f64> = (0..paths)
            .map(|p| {
                NoiseStream::new(9, p)
                    .increments(steps, tau, IncrementVariance::Tau)
                    .iter()
                    .sum()
            })
            .collect();
        let mean = sums.iter().sum::<f64>() / paths as f64;
        let var = sums.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (paths - 1) as f64;
        assert!((var / 0.1 - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn checksum_is_order_sensitive() {
        assert_eq!(checksum(&[1.0, 2.0]), checksum(&[1.0, 2.0]));
        assert_ne!(checksum(&[1.0, 2.0]), checksum(&[2.0, 1.0]));
    }
}
