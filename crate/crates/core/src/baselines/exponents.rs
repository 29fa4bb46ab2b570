//! Closed-form per-query exponents of banded MinHash and bit-sampling LSH
//! on binary pairs.

use crate::distribution::JointDistribution;
use crate::error::{Error, Result};
use crate::scalar::Real;

fn require_binary<T: Real>(jd: &JointDistribution<T>) -> Result<()> {
    if jd.k() != 2 || jd.l() != 2 {
        return Err(Error::Unsupported(format!(
            "closed-form exponents need a 2×2 distribution, got {}×{}",
            jd.k(),
            jd.l()
        )));
    }
    Ok(())
}

/// `log(num) / log(den)`, with `+∞` when the pair never collides and an
/// error when the ratio carries no information.
fn log_ratio(num: f64, den: f64, what: &str) -> Result<f64> {
    if !(den > 0.0 && den < 1.0) {
        return Err(Error::UndefinedRatio(format!("{what}: independent collision rate {den}")));
    }
    if !(0.0..=1.0).contains(&num) {
        return Err(Error::UndefinedRatio(format!("{what}: collision rate {num}")));
    }
    Ok(if num == 0.0 { f64::INFINITY } else { num.ln() / den.ln() })
}

/// Jaccard collision rate of the coordinate sets `{s : x_s = a}` and
/// `{s : y_s = b}` under `m`.
pub fn minhash_rate(m: &[[f64; 2]; 2], a: usize, b: usize) -> f64 {
    m[a][b] / (1.0 - m[1 - a][1 - b])
}

fn matrices<T: Real>(jd: &JointDistribution<T>) -> ([[f64; 2]; 2], [[f64; 2]; 2]) {
    let f = |g: &dyn Fn(usize, usize) -> T| [[g(0, 0).as_f64(), g(0, 1).as_f64()], [g(1, 0).as_f64(), g(1, 1).as_f64()]];
    (f(&|i, j| jd.p(i, j)), f(&|i, j| jd.q(i, j)))
}

/// Best MinHash exponent over the four choices of designated symbols, with
/// the winning `(a, b)`.
pub fn minhash_best<T: Real>(jd: &JointDistribution<T>) -> Result<(f64, (usize, usize))> {
    require_binary(jd)?;
    let (p, q) = matrices(jd);
    let mut best: Option<(f64, (usize, usize))> = None;
    for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        let e = log_ratio(minhash_rate(&p, a, b), minhash_rate(&q, a, b), "minhash")?;
        if e.is_finite() && best.is_none_or(|(v, _)| e < v) {
            best = Some((e, (a, b)));
        }
    }
    best.ok_or_else(|| Error::UndefinedRatio("no designated symbol pair ever collides".into()))
}

/// `min(mh1, mh2, mh3, mh4)`.
pub fn minhash_exponent<T: Real>(jd: &JointDistribution<T>) -> Result<f64> {
    minhash_best(jd).map(|(e, _)| e)
}

/// Best bit-sampling exponent, and whether the flipped variant
/// (`x_s` against `1 − y_s`) wins.
pub fn lsh_hamming_best<T: Real>(jd: &JointDistribution<T>) -> Result<(f64, bool)> {
    require_binary(jd)?;
    let (p, q) = matrices(jd);
    let same = log_ratio(p[0][0] + p[1][1], q[0][0] + q[1][1], "lsh-hamming")?;
    let flip = log_ratio(p[0][1] + p[1][0], q[0][1] + q[1][0], "lsh-hamming")?;
    let (e, flipped) = if flip < same { (flip, true) } else { (same, false) };
    if !e.is_finite() {
        return Err(Error::UndefinedRatio("pairs never agree on a sampled bit".into()));
    }
    Ok((e, flipped))
}

/// `min(log(p00+p11)/log(q00+q11), log(p01+p10)/log(q01+q10))`.
pub fn lsh_hamming_exponent<T: Real>(jd: &JointDistribution<T>) -> Result<f64> {
    lsh_hamming_best(jd).map(|(e, _)| e)
}
