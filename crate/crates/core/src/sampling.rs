//! Seeded samplers for symbols and symbol pairs.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;

use crate::distribution::{JointDistribution, Symbol};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Generator used everywhere a seed is surfaced.
pub type SeededRng = ChaCha8Rng;

/// Stream offsets keeping each consumer of a shared seed independent.
pub mod streams {
    pub const ESTIMATES: u64 = 0;
    pub const BANDS: u64 = 1 << 32;
    pub const DATA: u64 = 2 << 32;
    pub const SIGNATURES: u64 = 3 << 32;
    pub const TRIALS: u64 = 4 << 32;
    pub const PERTURB: u64 = 5 << 32;
}

/// Independent generator for sub-task `stream` of a run seeded with `seed`.
pub fn rng_for(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Alias-method sampler over a finite weight vector.
#[derive(Clone, Debug)]
pub struct SymbolSampler {
    table: WeightedAliasIndex<f64>,
}

impl SymbolSampler {
    pub fn new<T: Real>(weights: &[T]) -> Result<Self> {
        let w: Vec<f64> = weights.iter().map(|v| v.as_f64()).collect();
        let table = WeightedAliasIndex::new(w)
            .map_err(|e| Error::NotADistribution(format!("cannot sample weights: {e}")))?;
        Ok(Self { table })
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.table.sample(rng)
    }
}

/// Samplers for `P`, `P^A` and `P^B` of one distribution.
#[derive(Clone, Debug)]
pub struct PairSampler {
    joint: SymbolSampler,
    a: SymbolSampler,
    b: SymbolSampler,
    l: usize,
}

impl PairSampler {
    pub fn new<T: Real>(jd: &JointDistribution<T>) -> Result<Self> {
        let flat: Vec<T> = jd.rows().into_iter().flatten().collect();
        Ok(Self {
            joint: SymbolSampler::new(&flat)?,
            a: SymbolSampler::new(jd.marginal_a())?,
            b: SymbolSampler::new(jd.marginal_b())?,
            l: jd.l(),
        })
    }

    /// `(a, b) ~ P`.
    #[inline]
    pub fn joint<R: Rng + ?Sized>(&self, rng: &mut R) -> (Symbol, Symbol) {
        let c = self.joint.sample(rng);
        ((c / self.l) as Symbol, (c % self.l) as Symbol)
    }

    /// `a ~ P^A`.
    #[inline]
    pub fn a<R: Rng + ?Sized>(&self, rng: &mut R) -> Symbol {
        self.a.sample(rng) as Symbol
    }

    /// `b ~ P^B`.
    #[inline]
    pub fn b<R: Rng + ?Sized>(&self, rng: &mut R) -> Symbol {
        self.b.sample(rng) as Symbol
    }
}
