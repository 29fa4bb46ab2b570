//! Complexity exponent of ball bucketing for the symmetric binary channel.
//!
//! A random centre `b` is drawn per bucket. `P1(d)` is the chance that an
//! unrelated point lies within Hamming distance `d` of `b`, `P2(d)` the
//! chance that both halves of a true pair do. The radius `d0` is the
//! smallest `d` with `P1(d) ≥ 1/N`, kept only if `P1(d0) ≤ 2/N`, and the
//! exponent is `log P2(d0) / log P1(d0)`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{rng_for, streams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DubinerEstimate {
    pub exponent: f64,
    /// Standard error of the exponent; zero for the exact evaluation.
    pub std_err: f64,
    pub d0: usize,
    pub p1: f64,
    pub p2: f64,
}

fn check(p: f64, n: u64, s: usize) -> Result<()> {
    if !(0.5..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("p must lie in [0.5, 1], got {p}")));
    }
    if n < 2 || s == 0 {
        return Err(Error::InvalidArgument("need N ≥ 2 and S ≥ 1".into()));
    }
    Ok(())
}

/// Smallest `d` with `cdf[d] ≥ 1/N`, accepted when `cdf[d] ≤ 2/N`.
fn radius(cdf: &[f64], n: u64) -> Result<usize> {
    let target = 1.0 / n as f64;
    let d = cdf
        .iter()
        .position(|&c| c >= target)
        .ok_or_else(|| Error::NoFeasibleRadius(format!("P1 never reaches 1/N = {target}")))?;
    if cdf[d] > 2.0 * target {
        return Err(Error::NoFeasibleRadius(format!(
            "P1 jumps from below 1/N to {} at d = {d}; S is too small for N",
            cdf[d]
        )));
    }
    Ok(d)
}

/// `ln i!` for `i ≤ n`.
fn ln_factorials(n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n + 1];
    for i in 1..=n {
        t[i] = t[i - 1] + (i as f64).ln();
    }
    t
}

fn ln_binom_pmf(lf: &[f64], n: usize, k: usize, ln_p: f64, ln_q: f64) -> f64 {
    let c = lf[n] - lf[k] - lf[n - k];
    let a = if k == 0 { 0.0 } else { k as f64 * ln_p };
    let b = if n == k { 0.0 } else { (n - k) as f64 * ln_q };
    c + a + b
}

/// `Pr[Bin(n, p) = i]` for `i = 0..=n`.
fn binom_pmf(lf: &[f64], n: usize, p: f64) -> Vec<f64> {
    let (ln_p, ln_q) = (p.ln(), (1.0 - p).ln());
    (0..=n)
        .map(|k| {
            if (p == 0.0 && k > 0) || (p == 1.0 && k < n) {
                0.0
            } else {
                ln_binom_pmf(lf, n, k, ln_p, ln_q).exp()
            }
        })
        .collect()
}

fn cumulative(pmf: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    pmf.iter()
        .map(|&v| {
            acc += v;
            acc.min(1.0)
        })
        .collect()
}

/// Exact `P1`, `P2` from binomial sums.
///
/// With `a = d(x, b) ~ Bin(S, ½)`, the query `y` disagrees with `b` on
/// `Bin(a, p)` of those `a` positions and on `Bin(S − a, 1 − p)` of the rest.
pub fn dubiner_hamming_exact(p: f64, n: u64, s: usize) -> Result<DubinerEstimate> {
    check(p, n, s)?;
    let lf = ln_factorials(s);
    let p1_cdf = cumulative(&binom_pmf(&lf, s, 0.5));
    let d0 = radius(&p1_cdf, n)?;
    let p_a = binom_pmf(&lf, s, 0.5);
    let mut p2 = 0.0;
    for a in 0..=d0 {
        let keep = binom_pmf(&lf, a, p);
        let rest = cumulative(&binom_pmf(&lf, s - a, 1.0 - p));
        let inner: f64 = (0..=a.min(d0))
            .map(|c| keep[c] * rest[(d0 - c).min(s - a)])
            .sum();
        p2 += p_a[a] * inner;
    }
    let p1 = p1_cdf[d0];
    Ok(DubinerEstimate {
        exponent: p2.ln() / p1.ln(),
        std_err: 0.0,
        d0,
        p1,
        p2,
    })
}

/// Monte-Carlo version: per trial a fresh centre, an unrelated point and a
/// true pair, with distance histograms turned into `P1`, `P2` curves.
pub fn dubiner_hamming_estimate(p: f64, n: u64, s: usize, n_trials: u64, seed: u64) -> Result<DubinerEstimate> {
    check(p, n, s)?;
    if n_trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let chunks = 64u64;
    let (h1, h2) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed, streams::TRIALS + c);
            let mut h1 = vec![0u64; s + 1];
            let mut h2 = vec![0u64; s + 1];
            let count = n_trials / chunks + u64::from(c < n_trials % chunks);
            for _ in 0..count {
                // Only disagreements with the centre matter, and the centre
                // is uniform, so each position is a fair coin for x.
                let mut dx = 0usize;
                let mut dy = 0usize;
                let mut du = 0usize;
                for _ in 0..s {
                    let x_off: bool = rng.random();
                    let same: bool = rng.random_bool(p);
                    dx += usize::from(x_off);
                    dy += usize::from(x_off == same);
                    du += usize::from(rng.random::<bool>());
                }
                h1[du] += 1;
                h2[dx.max(dy)] += 1;
            }
            (h1, h2)
        })
        .reduce(
            || (vec![0u64; s + 1], vec![0u64; s + 1]),
            |(mut a1, mut a2), (b1, b2)| {
                a1.iter_mut().zip(b1).for_each(|(a, b)| *a += b);
                a2.iter_mut().zip(b2).for_each(|(a, b)| *a += b);
                (a1, a2)
            },
        );
    let t = n_trials as f64;
    let cdf = |h: &[u64]| {
        let mut acc = 0u64;
        h.iter()
            .map(|&v| {
                acc += v;
                acc as f64 / t
            })
            .collect::<Vec<f64>>()
    };
    let (c1, c2) = (cdf(&h1), cdf(&h2));
    let d0 = radius(&c1, n)?;
    let (p1, p2) = (c1[d0], c2[d0]);
    if p2 == 0.0 {
        return Err(Error::NoFeasibleRadius(format!(
            "no true pair fell inside radius {d0} in {n_trials} trials"
        )));
    }
    let exponent = p2.ln() / p1.ln();
    // Delta method on log P1 and log P2 with Bernoulli variances.
    let v1 = (1.0 - p1) / (t * p1);
    let v2 = (1.0 - p2) / (t * p2);
    let (l1, l2) = (p1.ln(), p2.ln());
    let std_err = ((v2 / (l1 * l1)) + (l2 * l2 * v1 / l1.powi(4))).sqrt();
    Ok(DubinerEstimate {
        exponent,
        std_err,
        d0,
        p1,
        p2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        let indep = dubiner_hamming_exact(0.5, 1000, 200).unwrap();
        assert!((indep.p2 - indep.p1 * indep.p1).abs() < 1e-12 * indep.p1);
        assert!((indep.exponent - 2.0).abs() < 1e-9);
        let same = dubiner_hamming_exact(1.0, 1000, 200).unwrap();
        assert!((same.exponent - 1.0).abs() < 1e-9);
    }

    #[test]
    fn exact_p2_matches_brute_enumeration() {
        // S = 4: enumerate all joint disagreement patterns.
        let (p, s) = (0.8, 4usize);
        let lf = ln_factorials(s);
        for d in 0..=s {
            let mut want = 0.0;
            for mask in 0..(1u32 << (2 * s)) {
                let mut pr = 1.0;
                let (mut dx, mut dy) = (0, 0);
                for i in 0..s {
                    let xo = mask >> (2 * i) & 1 == 1;
                    let same = mask >> (2 * i + 1) & 1 == 1;
                    pr *= 0.5 * if same { p } else { 1.0 - p };
                    dx += usize::from(xo);
                    dy += usize::from(xo == same);
                }
                if dx <= d && dy <= d {
                    want += pr;
                }
            }
            let mut got = 0.0;
            let pa = binom_pmf(&lf, s, 0.5);
            for a in 0..=d {
                let keep = binom_pmf(&lf, a, p);
                let rest = cumulative(&binom_pmf(&lf, s - a, 1.0 - p));
                got += pa[a] * (0..=a).filter(|&c| c <= d).map(|c| keep[c] * rest[(d - c).min(s - a)]).sum::<f64>();
            }
            assert!((got - want).abs() < 1e-12, "d={d}: {got} vs {want}");
        }
    }

    #[test]
    fn monte_carlo_agrees_with_exact_at_small_scale() {
        for p in [0.6, 0.8, 0.95] {
            let exact = dubiner_hamming_exact(p, 50, 60).unwrap();
            let mc = dubiner_hamming_estimate(p, 50, 60, 200_000, 3).unwrap();
            assert_eq!(mc.d0, exact.d0);
            assert!((mc.exponent - exact.exponent).abs() <= 4.0 * mc.std_err + 1e-3, "{mc:?} vs {exact:?}");
        }
    }

    #[test]
    fn exponent_falls_with_correlation() {
        let mut last = f64::INFINITY;
        for p in [0.5, 0.6, 0.7, 0.8, 0.9, 0.99] {
            let e = dubiner_hamming_exact(p, 100_000, 1000).unwrap().exponent;
            assert!(e <= last + 1e-12);
            last = e;
        }
    }

    #[test]
    fn radius_must_resolve_one_over_n() {
        assert!(matches!(dubiner_hamming_exact(0.9, 1_000_000, 3), Err(Error::NoFeasibleRadius(_))));
    }
}
