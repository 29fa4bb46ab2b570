//! Banded signature search: a pair is a candidate when all `rows` hashes of
//! some band agree.

use std::collections::HashMap;

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::{JointDistribution, Sequence, Symbol};
use crate::error::{Error, Result};
use crate::sampling::{rng_for, streams};
use crate::scalar::Real;

use super::exponents::{lsh_hamming_best, minhash_best, minhash_rate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignatureMethod {
    MinHash,
    LshHamming,
}

/// A concrete hash family for one method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchemeKind {
    /// Min-wise hash of `{s : x_s = a}` against `{s : y_s = b}`.
    MinHash { a: Symbol, b: Symbol },
    /// Sampled bit `x_s` against `y_s`, or against `1 − y_s` when flipped.
    LshHamming { flipped: bool },
}

impl SchemeKind {
    /// The variant with the best closed-form exponent for `jd`.
    pub fn best_for<T: Real>(method: SignatureMethod, jd: &JointDistribution<T>) -> Result<Self> {
        Ok(match method {
            SignatureMethod::MinHash => {
                let (_, (a, b)) = minhash_best(jd)?;
                SchemeKind::MinHash {
                    a: a as Symbol,
                    b: b as Symbol,
                }
            }
            SignatureMethod::LshHamming => SchemeKind::LshHamming {
                flipped: lsh_hamming_best(jd)?.1,
            },
        })
    }

    /// Per-row collision rates `(true pair, unrelated pair)`.
    pub fn row_rates<T: Real>(&self, jd: &JointDistribution<T>) -> (f64, f64) {
        let f = |g: &dyn Fn(usize, usize) -> T| [[g(0, 0).as_f64(), g(0, 1).as_f64()], [g(1, 0).as_f64(), g(1, 1).as_f64()]];
        let (p, q) = (f(&|i, j| jd.p(i, j)), f(&|i, j| jd.q(i, j)));
        match *self {
            SchemeKind::MinHash { a, b } => (minhash_rate(&p, a as usize, b as usize), minhash_rate(&q, a as usize, b as usize)),
            SchemeKind::LshHamming { flipped: false } => (p[0][0] + p[1][1], q[0][0] + q[1][1]),
            SchemeKind::LshHamming { flipped: true } => (p[0][1] + p[1][0], q[0][1] + q[1][0]),
        }
    }

    /// Value of row hash `h` on a sequence; `side_b` selects the query side.
    fn hash(&self, h: u64, seed: u64, seq: &[Symbol], side_b: bool) -> u32 {
        let mut rng = rng_for(seed, streams::SIGNATURES + h);
        let s = seq.len() as u32;
        match *self {
            SchemeKind::LshHamming { flipped } => {
                let v = seq[rng.random_range(0..s) as usize] as u32;
                if side_b && flipped {
                    1 - v.min(1)
                } else {
                    v
                }
            }
            SchemeKind::MinHash { a, b } => {
                let want = if side_b { b } else { a };
                // Positions drawn with replacement reach the same first
                // element of the union as a permutation would.
                let cap = 64 * seq.len();
                for _ in 0..cap {
                    let pos = (rng.next_u64() % s as u64) as usize;
                    if seq[pos] == want {
                        return pos as u32;
                    }
                }
                if side_b {
                    u32::MAX - 1
                } else {
                    u32::MAX
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandedLimits {
    pub max_rows: usize,
    pub max_bands: usize,
}

impl Default for BandedLimits {
    fn default() -> Self {
        Self {
            max_rows: 64,
            max_bands: 20_000,
        }
    }
}

/// Predicted unit-cost work of `bands × rows` banding: hashing, insertion
/// and candidate checks.
pub fn predicted_work(rows: usize, bands: usize, p_false: f64, n: usize, m: usize) -> f64 {
    let (b, r) = (bands as f64, rows as f64);
    b * r * (n + m) as f64 + b * n as f64 + b * (n as f64) * (m as f64) * p_false.powi(rows as i32)
}

/// Bands needed for `1 − (1 − p^rows)^bands ≥ tp`.
pub fn bands_needed(p_true: f64, rows: usize, tp_target: f64) -> Option<usize> {
    let hit = p_true.powi(rows as i32);
    if hit <= 0.0 {
        return None;
    }
    if hit >= 1.0 {
        return Some(1);
    }
    Some(((1.0 - tp_target).ln() / (-hit).ln_1p()).ceil().max(1.0) as usize)
}

/// `(rows, bands)` meeting `tp_target` at least predicted work.
pub fn tune_banding(p_true: f64, p_false: f64, n: usize, m: usize, tp_target: f64, limits: &BandedLimits) -> Result<(usize, usize)> {
    if !(tp_target > 0.0 && tp_target < 1.0) {
        return Err(Error::InvalidArgument(format!("tp_target must lie in (0,1), got {tp_target}")));
    }
    (1..=limits.max_rows)
        .filter_map(|r| bands_needed(p_true, r, tp_target).map(|b| (r, b)))
        .filter(|&(_, b)| b <= limits.max_bands)
        .min_by(|&(r1, b1), &(r2, b2)| {
            predicted_work(r1, b1, p_false, n, m)
                .total_cmp(&predicted_work(r2, b2, p_false, n, m))
                .then(r1.cmp(&r2))
        })
        .ok_or_else(|| {
            Error::TuningFailed(format!(
                "no rows ≤ {} reach recall {tp_target} within {} bands",
                limits.max_rows, limits.max_bands
            ))
        })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignatureStats {
    pub kind: SchemeKind,
    pub n_rows: usize,
    pub n_bands: usize,
    pub p_true: f64,
    pub p_false: f64,
    /// Recall of planted pairs over all queries.
    pub recall: f64,
    /// Recall on the validation half used for tuning.
    pub validation_recall: f64,
    pub raw_positives: u64,
    pub distinct_candidates: u64,
    pub hash_evaluations: u64,
    pub insertions: u64,
    /// `hash_evaluations + insertions + raw_positives`.
    pub work: u64,
}

/// Tunes `(rows, bands)` from the closed-form rates, then adds bands until
/// the planted pairs in the validation half (even-numbered pairs) reach
/// `tp_target`, and reports recall and work over every query.
pub fn banded_signature_search<T: Real>(
    method: SignatureMethod,
    xs: &[Sequence],
    ys: &[Sequence],
    planted: &[(u32, u32)],
    jd: &JointDistribution<T>,
    tp_target: f64,
    seed: u64,
    limits: &BandedLimits,
) -> Result<SignatureStats> {
    let kind = SchemeKind::best_for(method, jd)?;
    let (p_true, p_false) = kind.row_rates(jd);
    let (rows, mut bands) = tune_banding(p_true, p_false, xs.len(), ys.len(), tp_target, limits)?;
    let validation: Vec<(u32, u32)> = planted.iter().copied().step_by(2).collect();

    let mut candidates: Vec<Vec<u32>> = vec![Vec::new(); ys.len()];
    let mut raw = 0u64;
    let mut insertions = 0u64;
    let mut built = 0usize;
    loop {
        for z in built..bands {
            let (r, ins) = run_band(kind, z, rows, seed, xs, ys, &mut candidates);
            raw += r;
            insertions += ins;
        }
        built = bands;
        let found = |pairs: &[(u32, u32)]| {
            pairs
                .iter()
                .filter(|&&(x, y)| candidates[y as usize].binary_search(&x).is_ok())
                .count()
        };
        let ok = validation.is_empty() || found(&validation) as f64 >= tp_target * validation.len() as f64;
        if ok || bands >= limits.max_bands {
            if !ok {
                return Err(Error::TuningFailed(format!(
                    "validation recall below {tp_target} at the band limit {}",
                    limits.max_bands
                )));
            }
            let recall = if planted.is_empty() { 1.0 } else { found(planted) as f64 / planted.len() as f64 };
            let validation_recall = if validation.is_empty() {
                1.0
            } else {
                found(&validation) as f64 / validation.len() as f64
            };
            let hash_evaluations = (bands * rows * (xs.len() + ys.len())) as u64;
            let distinct = candidates.iter().map(|c| c.len() as u64).sum();
            return Ok(SignatureStats {
                kind,
                n_rows: rows,
                n_bands: bands,
                p_true,
                p_false,
                recall,
                validation_recall,
                raw_positives: raw,
                distinct_candidates: distinct,
                hash_evaluations,
                insertions,
                work: hash_evaluations + insertions + raw,
            });
        }
        bands = (bands + bands.div_ceil(5)).min(limits.max_bands);
    }
}

/// Hashes every point into band `z`, merges colliding ids into the sorted
/// per-query candidate lists, and returns `(raw positives, insertions)`.
fn run_band(kind: SchemeKind, z: usize, rows: usize, seed: u64, xs: &[Sequence], ys: &[Sequence], candidates: &mut [Vec<u32>]) -> (u64, u64) {
    let key = |seq: &Sequence, side_b: bool| -> Vec<u32> {
        (0..rows)
            .map(|r| kind.hash((z * rows + r) as u64, seed, seq, side_b))
            .collect()
    };
    let x_keys: Vec<Vec<u32>> = xs.par_iter().map(|x| key(x, false)).collect();
    let mut table: HashMap<Vec<u32>, Vec<u32>> = HashMap::new();
    for (i, k) in x_keys.into_iter().enumerate() {
        table.entry(k).or_default().push(i as u32);
    }
    let raw: u64 = candidates
        .par_iter_mut()
        .zip(ys.par_iter())
        .map(|(cands, y)| match table.get(&key(y, true)) {
            Some(hit) => {
                let mut merged = Vec::with_capacity(cands.len() + hit.len());
                let (mut i, mut j) = (0, 0);
                while i < cands.len() || j < hit.len() {
                    let next = if j >= hit.len() || (i < cands.len() && cands[i] <= hit[j]) {
                        i += 1;
                        cands[i - 1]
                    } else {
                        j += 1;
                        hit[j - 1]
                    };
                    if merged.last() != Some(&next) {
                        merged.push(next);
                    }
                }
                *cands = merged;
                hit.len() as u64
            }
            None => 0,
        })
        .sum();
    (raw, xs.len() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_pairs;
    use crate::fixtures;

    #[test]
    fn banding_formula_meets_target() {
        let (r, b) = tune_banding(0.8, 0.3, 1000, 1000, 0.99, &BandedLimits::default()).unwrap();
        assert!(1.0 - (1.0 - 0.8f64.powi(r as i32)).powi(b as i32) >= 0.99);
        assert!(b == 1 || 1.0 - (1.0 - 0.8f64.powi(r as i32)).powi(b as i32 - 1) < 0.99);
        let tight = BandedLimits { max_rows: 2, max_bands: 1 };
        assert!(matches!(tune_banding(0.1, 0.05, 10, 10, 0.99, &tight), Err(Error::TuningFailed(_))));
    }

    #[test]
    fn identical_copies_always_collide() {
        let jd = fixtures::hamming::<f64>(1.0 - 1e-9).unwrap();
        let d = generate_pairs(&fixtures::uniform2::<f64>(), 30, 30, 40, 1).unwrap();
        let kind = SchemeKind::best_for(SignatureMethod::LshHamming, &jd).unwrap();
        let mut cands = vec![Vec::new(); 30];
        run_band(kind, 0, 1, 5, &d.xs, &d.xs, &mut cands);
        for (i, c) in cands.iter().enumerate() {
            assert!(c.binary_search(&(i as u32)).is_ok());
        }
    }

    #[test]
    fn single_band_collision_rate_matches_rows_formula() {
        let jd = fixtures::example::<f64>();
        let d = generate_pairs(&jd, 400, 400, 64, 2).unwrap();
        for method in [SignatureMethod::LshHamming, SignatureMethod::MinHash] {
            let kind = SchemeKind::best_for(method, &jd).unwrap();
            let (_, pf) = kind.row_rates(&jd);
            let rows = 2;
            let mut cands = vec![Vec::new(); 400];
            let (raw, _) = run_band(kind, 0, rows, 8, &d.xs, &d.ys, &mut cands);
            let planted_hits = (0..400).filter(|&i| cands[i].binary_search(&(i as u32)).is_ok()).count() as u64;
            let cross = (raw - planted_hits) as f64 / (400.0 * 399.0);
            let want = pf.powi(rows as i32);
            // Pairs share row hashes, so allow a generous margin.
            assert!((cross - want).abs() < 0.25 * want, "{method:?}: {cross} vs {want}");
        }
    }

    #[test]
    fn planted_recall_reaches_target() {
        let jd = fixtures::p_of_t::<f64>(0.5).unwrap();
        let d = generate_pairs(&jd, 300, 300, 300, 4).unwrap();
        for method in [SignatureMethod::LshHamming, SignatureMethod::MinHash] {
            let s = banded_signature_search(method, &d.xs, &d.ys, &d.planted, &jd, 0.9, 7, &BandedLimits::default()).unwrap();
            assert!(s.validation_recall >= 0.9);
            assert!(s.recall >= 0.8, "{method:?}: {}", s.recall);
            assert!(s.distinct_candidates <= s.raw_positives);
        }
    }
}
