use rayon::prelude::*;

use crate::distribution::{JointDistribution, Sequence, Symbol};
use crate::error::{Error, Result};
use crate::query::{best_of, log_threshold, passes, SearchResult};
use crate::scalar::Real;

/// Exact scan over every class.
pub fn brute_force<T: Real>(
    xs: &[Sequence],
    query: usize,
    y: &[Symbol],
    jd: &JointDistribution<T>,
    delta: f64,
) -> Result<SearchResult<T>> {
    let threshold = log_threshold::<T>(delta)?;
    let scores: Vec<T> = xs
        .par_iter()
        .map(|x| jd.log_likelihood(x, y))
        .collect::<Result<_>>()?;
    let hits = scores
        .into_iter()
        .enumerate()
        .filter(|&(_, s)| passes(s, threshold))
        .map(|(i, s)| (i as u32, s))
        .collect();
    Ok(SearchResult {
        query,
        hits,
        raw_positives: xs.len() as u64,
        candidates_checked: xs.len() as u64,
        per_band_collisions: vec![xs.len() as u64],
    })
}

/// Maximum-likelihood class; ties go to the smaller id.
pub fn brute_force_top1<T: Real>(xs: &[Sequence], y: &[Symbol], jd: &JointDistribution<T>) -> Result<(u32, T)> {
    let scores: Vec<T> = xs
        .par_iter()
        .map(|x| jd.log_likelihood(x, y))
        .collect::<Result<_>>()?;
    best_of(scores.into_iter().enumerate().map(|(i, s)| (i as u32, s))).ok_or(Error::NoCandidate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn single_class_and_thresholds() {
        let jd = fixtures::example::<f64>();
        let xs = vec![vec![0, 1]];
        let y = [0, 1];
        let all = brute_force(&xs, 0, &y, &jd, 0.0).unwrap();
        assert_eq!(all.hits.len(), 1);
        let expected = (0.4f64 / 0.7).ln() + (0.2f64 / 0.3).ln();
        assert!((all.hits[0].1 - expected).abs() < 1e-12);
        assert!(brute_force(&xs, 0, &y, &jd, 1.0).unwrap().hits.is_empty());
        assert!(brute_force(&xs, 0, &y, &jd, 0.2).unwrap().hits.len() == 1);
        assert!(brute_force(&xs, 0, &y, &jd, 0.3).unwrap().hits.len() == 1);
        assert!(brute_force(&xs, 0, &y, &jd, 0.4).unwrap().hits.is_empty());
        assert_eq!(brute_force_top1(&xs, &y, &jd).unwrap().0, 0);
        assert!(matches!(brute_force_top1(&[], &y, &jd), Err(Error::NoCandidate)));
    }
}
