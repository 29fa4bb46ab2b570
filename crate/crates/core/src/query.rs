//! Candidate generation through bucket collisions and exact rescoring.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::{JointDistribution, Sequence, Symbol};
use crate::error::{Error, Result};
use crate::index::{BandIndex, BandSet};
use crate::scalar::Real;
use crate::tree::{DecisionTree, Side};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SearchResult<T> {
    pub query: usize,
    /// `(class id, log P(y|x))`, sorted by class id.
    pub hits: Vec<(u32, T)>,
    /// Positive calls with multiplicity across bands and buckets.
    pub raw_positives: u64,
    /// Distinct classes scored.
    pub candidates_checked: u64,
    pub per_band_collisions: Vec<u64>,
}

/// Everything a query needs, borrowed from its owners.
#[derive(Clone, Copy)]
pub struct Searcher<'a, T> {
    pub tree: &'a DecisionTree<T>,
    pub bands: &'a BandSet,
    pub index: &'a BandIndex,
    pub database: &'a [Sequence],
    pub jd: &'a JointDistribution<T>,
}

/// `log Δ`, or `None` when `Δ = 0` reports every positive.
pub fn log_threshold<T: Real>(delta: f64) -> Result<Option<T>> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::InvalidArgument(format!("delta must lie in [0, 1], got {delta}")));
    }
    Ok(if delta == 0.0 { None } else { Some(T::lit(delta.ln())) })
}

#[inline]
pub(crate) fn passes<T: Real>(score: T, threshold: Option<T>) -> bool {
    threshold.is_none_or(|t| score > t)
}

impl<'a, T: Real> Searcher<'a, T> {
    pub fn new(
        tree: &'a DecisionTree<T>,
        bands: &'a BandSet,
        index: &'a BandIndex,
        database: &'a [Sequence],
        jd: &'a JointDistribution<T>,
    ) -> Result<Self> {
        if index.n_points != database.len() || index.bands.len() != bands.len() {
            return Err(Error::ShapeMismatch(format!(
                "index covers {} points in {} bands, database has {} points and band set {} bands",
                index.n_points,
                index.bands.len(),
                database.len(),
                bands.len()
            )));
        }
        Ok(Self {
            tree,
            bands,
            index,
            database,
            jd,
        })
    }

    fn check_query(&self, y: &[Symbol]) -> Result<()> {
        if y.len() != self.bands.s {
            return Err(Error::LengthMismatch {
                expected: self.bands.s,
                found: y.len(),
            });
        }
        self.jd.alphabet_b().check(y)
    }

    /// Sorted distinct candidates plus raw and per-band collision counts.
    pub fn candidates(&self, y: &[Symbol]) -> Result<(Vec<u32>, u64, Vec<u64>)> {
        self.check_query(y)?;
        let mut found = Vec::new();
        let mut per_band = vec![0u64; self.bands.len()];
        let mut buckets = Vec::new();
        for (z, count) in per_band.iter_mut().enumerate() {
            self.bands.assign_in_band(self.tree, Side::B, z, y, &mut buckets);
            for &v in &buckets {
                let hit = self.index.lookup(z, v);
                *count += hit.len() as u64;
                found.extend_from_slice(hit);
            }
        }
        let raw = found.len() as u64;
        found.sort_unstable();
        found.dedup();
        Ok((found, raw, per_band))
    }

    /// Classes whose collision with `y` scores above `Δ`.
    pub fn search(&self, query: usize, y: &[Symbol], delta: f64) -> Result<SearchResult<T>> {
        let threshold = log_threshold::<T>(delta)?;
        let (found, raw_positives, per_band_collisions) = self.candidates(y)?;
        let hits = found
            .iter()
            .map(|&id| (id, self.jd.log_likelihood_unchecked(&self.database[id as usize], y)))
            .filter(|&(_, s)| passes(s, threshold))
            .collect();
        Ok(SearchResult {
            query,
            hits,
            raw_positives,
            candidates_checked: found.len() as u64,
            per_band_collisions,
        })
    }

    /// Best-scoring colliding class; ties go to the smaller id.
    pub fn search_top1(&self, y: &[Symbol]) -> Result<(u32, T)> {
        let (found, _, _) = self.candidates(y)?;
        best_of(found.into_iter().map(|id| (id, self.jd.log_likelihood_unchecked(&self.database[id as usize], y))))
            .ok_or(Error::NoCandidate)
    }

    /// Independent searches run in parallel; results keep query order.
    pub fn search_batch(&self, queries: &[Sequence], delta: f64) -> Result<Vec<SearchResult<T>>> {
        queries
            .par_iter()
            .enumerate()
            .map(|(q, y)| self.search(q, y, delta))
            .collect()
    }
}

/// Maximum score, smallest id among equals, over ids given in any order.
pub fn best_of<T: Real>(scored: impl IntoIterator<Item = (u32, T)>) -> Option<(u32, T)> {
    scored.into_iter().fold(None, |best, (id, s)| match best {
        None => Some((id, s)),
        Some((bid, bs)) => {
            if s > bs || (s == bs && id < bid) {
                Some((id, s))
            } else {
                Some((bid, bs))
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::ProblemDims;
    use crate::sampling::{rng_for, PairSampler};
    use crate::solver::HashParams;

    fn setup() -> (JointDistribution<f64>, DecisionTree<f64>, Vec<Sequence>, Vec<Sequence>) {
        let jd = JointDistribution::from_rows(&[vec![0.4, 0.3], vec![0.1, 0.2]]).unwrap();
        let dims = ProblemDims::new(20, 5, 8).unwrap();
        let params = HashParams::from_triple(&jd, &dims, 0.0, 0.0, 0.0);
        let tree = DecisionTree::root_bucket(&jd, &params, &dims);
        let s = PairSampler::new(&jd).unwrap();
        let mut rng = rng_for(5, 0);
        let xs = (0..20).map(|_| (0..8).map(|_| s.a(&mut rng)).collect()).collect();
        let ys = (0..5).map(|_| (0..8).map(|_| s.b(&mut rng)).collect()).collect();
        (jd, tree, xs, ys)
    }

    #[test]
    fn root_bucket_search_is_a_full_scan() {
        let (jd, tree, xs, ys) = setup();
        let bands = BandSet::new(2, 8, 1).unwrap();
        let index = BandIndex::build(&tree, &bands, &xs).unwrap();
        let searcher = Searcher::new(&tree, &bands, &index, &xs, &jd).unwrap();
        for (q, y) in ys.iter().enumerate() {
            let r = searcher.search(q, y, 0.0).unwrap();
            assert_eq!(r.candidates_checked, 20);
            assert_eq!(r.raw_positives, 40);
            assert_eq!(r.hits.len(), 20);
            let none = searcher.search(q, y, 1.0).unwrap();
            assert!(none.hits.is_empty());
            let (best, score) = searcher.search_top1(y).unwrap();
            let brute = best_of(xs.iter().enumerate().map(|(i, x)| (i as u32, jd.log_likelihood(x, y).unwrap()))).unwrap();
            assert_eq!((best, score), brute);
        }
        let batch = searcher.search_batch(&ys, 0.0).unwrap();
        assert_eq!(batch.len(), 5);
        assert_eq!(batch[3].query, 3);
    }

    #[test]
    fn ties_go_to_smaller_id() {
        assert_eq!(best_of([(4, -1.0), (2, -1.0), (9, -3.0)]), Some((2, -1.0)));
        assert_eq!(best_of::<f64>([]), None);
    }

    #[test]
    fn no_collision_is_no_candidate() {
        let (jd, _, xs, _) = setup();
        let dims = ProblemDims::new(20, 5, 8).unwrap();
        let params = HashParams::from_triple(&jd, &dims, 0.0, 0.0, 0.0);
        let tree = DecisionTree::from_bucket_paths(&jd, &params, &dims, &[vec![(0, 0); 8]]).unwrap();
        let bands = BandSet::identity(1, 8).unwrap();
        let index = BandIndex::build(&tree, &bands, &xs).unwrap();
        let searcher = Searcher::new(&tree, &bands, &index, &xs, &jd).unwrap();
        assert!(matches!(searcher.search_top1(&[1; 8]), Err(Error::NoCandidate)));
        assert!(searcher.search(0, &[0; 7], 0.0).is_err());
        assert!(searcher.search(0, &[0; 8], 1.5).is_err());
    }
}
