//! Seeded random generation.
//!
//! All stochastic stages run on [`DsiRng`], a ChaCha12 generator keyed by a
//! 64-bit seed. ChaCha exposes independent substreams for one key, which
//! gives per-member and per-iteration generators that do not depend on
//! evaluation order; [`DsiRng::stream`] returns a fresh generator on a chosen
//! substream regardless of how far the parent has advanced.
//!
//! Draw helpers sample in `f64` and convert, so one seed yields identical
//! sequences for `f32` and `f64` instantiations.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::scalar::Scalar;

/// Identifier recorded in run manifests next to the seed.
pub const RNG_ALGORITHM: &str = "chacha12";

/// Deterministic, splittable random generator.
#[derive(Debug, Clone)]
pub struct DsiRng {
    seed: u64,
    inner: ChaCha12Rng,
}

impl DsiRng {
    /// Generator on substream 0 of `seed`.
    pub fn from_seed(seed: u64) -> Self {
        DsiRng {
            seed,
            inner: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    /// The 64-bit seed this generator was built from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fresh generator on substream `id` of the same seed.
    ///
    /// Independent of this generator's current position, so callers can hand
    /// out per-member streams in any order (or in parallel) and reproduce the
    /// same draws.
    pub fn stream(&self, id: u64) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(self.seed);
        inner.set_stream(id);
        DsiRng { seed: self.seed, inner }
    }

    /// Fresh generator on a seed derived from this seed and `id` by a
    /// SplitMix64 round. Streams of one seed do not nest (`stream` discards
    /// any prior stream choice), so layered splitting goes through `child`:
    /// `child(i).stream(j)` draws differ across both `i` and `j`.
    pub fn child(&self, id: u64) -> Self {
        let mut z = self.seed ^ id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        DsiRng::from_seed(z)
    }
}

impl RngCore for DsiRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
}

/// One draw from the standard normal distribution.
pub fn standard_normal<S: Scalar>(rng: &mut impl Rng) -> S {
    let z: f64 = StandardNormal.sample(rng);
    S::of_f64(z)
}

/// One draw from N(mean, std^2).
pub fn normal<S: Scalar>(rng: &mut impl Rng, mean: S, std: S) -> S {
    mean + std * standard_normal::<S>(rng)
}

/// One draw from the uniform distribution on [lo, hi).
pub fn uniform<S: Scalar>(rng: &mut impl Rng, lo: S, hi: S) -> S {
    let u: f64 = rng.random();
    lo + (hi - lo) * S::of_f64(u)
}

/// One draw from the log-normal distribution exp(N(mu_ln, sigma_ln^2)).
pub fn log_normal<S: Scalar>(rng: &mut impl Rng, mu_ln: S, sigma_ln: S) -> S {
    (mu_ln + sigma_ln * standard_normal::<S>(rng)).exp()
}

/// One draw from Gamma(shape, 1), evaluated in `f64`.
pub fn gamma_unit_scale(rng: &mut impl Rng, shape: f64) -> f64 {
    Gamma::new(shape, 1.0)
        .expect("gamma shape validated by caller")
        .sample(rng)
}

/// One Dirichlet draw with concentration `alpha`, as normalized gammas.
pub fn dirichlet<S: Scalar>(rng: &mut impl Rng, alpha: &[f64]) -> Vec<S> {
    let draws: Vec<f64> = alpha.iter().map(|&a| gamma_unit_scale(rng, a)).collect();
    let total: f64 = draws.iter().sum();
    draws.iter().map(|&g| S::of_f64(g / total)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_draws() {
        let mut a = DsiRng::from_seed(7);
        let mut b = DsiRng::from_seed(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_are_independent_of_parent_position() {
        let mut parent = DsiRng::from_seed(3);
        let before: Vec<u64> = (0..4).map(|i| parent.stream(i).next_u64()).collect();
        parent.next_u64();
        let after: Vec<u64> = (0..4).map(|i| parent.stream(i).next_u64()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn distinct_streams_differ() {
        let rng = DsiRng::from_seed(11);
        assert_ne!(rng.stream(0).next_u64(), rng.stream(1).next_u64());
    }

    #[test]
    fn children_nest_where_streams_do_not() {
        let rng = DsiRng::from_seed(11);
        // Streams forget the parent stream: these collide by construction.
        assert_eq!(
            rng.stream(2).stream(0).next_u64(),
            rng.stream(3).stream(0).next_u64()
        );
        // Children re-key, so the same substream differs across children.
        assert_ne!(
            rng.child(2).stream(0).next_u64(),
            rng.child(3).stream(0).next_u64()
        );
        assert_ne!(rng.child(0).seed(), rng.seed());
        // Deterministic: same id, same child.
        assert_eq!(rng.child(7).next_u64(), rng.child(7).next_u64());
    }

    #[test]
    fn draws_match_across_scalar_types() {
        let mut a = DsiRng::from_seed(5);
        let mut b = DsiRng::from_seed(5);
        for _ in 0..32 {
            let x: f64 = standard_normal(&mut a);
            let y: f32 = standard_normal(&mut b);
            assert_eq!(x as f32, y);
        }
    }

    #[test]
    fn dirichlet_sums_to_one() {
        let mut rng = DsiRng::from_seed(9);
        let w: Vec<f64> = dirichlet(&mut rng, &[2.0, 2.0, 2.0]);
        let total: f64 = w.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|&x| x > 0.0));
    }
}
