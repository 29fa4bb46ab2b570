//! Embedding whose inner product is the per-pair log-likelihood ratio.

use crate::distribution::{JointDistribution, Symbol};
use crate::error::Result;
use crate::scalar::Real;

pub type SparseVector = Vec<(u64, f64)>;

#[derive(Clone, Debug, PartialEq)]
pub struct MipsEmbedding {
    k: usize,
    l: usize,
    /// `ω_ij`; zero where `p_ij = q_ij`.
    omega: Vec<f64>,
    /// `log(p_ij / q_ij)`.
    log_ratio: Vec<f64>,
}

impl MipsEmbedding {
    /// `ω_ij = (pA_i / pB_j)^0.25 · |log(p_ij / q_ij)|^0.5`. Zero cells keep
    /// `ω = 1` and carry `−∞` on the A side.
    pub fn new<T: Real>(jd: &JointDistribution<T>) -> Self {
        let (k, l) = (jd.k(), jd.l());
        let mut omega = vec![0.0; k * l];
        let mut log_ratio = vec![0.0; k * l];
        for i in 0..k {
            for j in 0..l {
                let c = i * l + j;
                let p = jd.p(i, j).as_f64();
                if p == 0.0 {
                    omega[c] = 1.0;
                    log_ratio[c] = f64::NEG_INFINITY;
                    continue;
                }
                let r = p.ln() - jd.q(i, j).as_f64().ln();
                log_ratio[c] = r;
                if r != 0.0 {
                    let (pa, pb) = (jd.pa(i).as_f64(), jd.pb(j).as_f64());
                    omega[c] = (pa / pb).powf(0.25) * r.abs().sqrt();
                }
            }
        }
        Self { k, l, omega, log_ratio }
    }

    pub fn omega(&self, i: usize, j: usize) -> f64 {
        self.omega[i * self.l + j]
    }

    fn coord(&self, s: usize, i: usize, j: usize) -> u64 {
        (s * self.k * self.l + i * self.l + j) as u64
    }

    /// `T(x)`: at position `s`, `log(p_ij/q_ij)/ω_ij` on coordinates `(s, x_s, j)`.
    pub fn embed_x(&self, x: &[Symbol]) -> Result<SparseVector> {
        check(x, self.k)?;
        let mut v = Vec::new();
        for (s, &a) in x.iter().enumerate() {
            let i = a as usize;
            for j in 0..self.l {
                let c = i * self.l + j;
                if self.omega[c] != 0.0 {
                    v.push((self.coord(s, i, j), self.log_ratio[c] / self.omega[c]));
                }
            }
        }
        Ok(v)
    }

    /// `T(y)`: at position `s`, `ω_ij` on coordinates `(s, i, y_s)`.
    pub fn embed_y(&self, y: &[Symbol]) -> Result<SparseVector> {
        check(y, self.l)?;
        let mut v = Vec::new();
        for (s, &b) in y.iter().enumerate() {
            let j = b as usize;
            for i in 0..self.k {
                let c = i * self.l + j;
                if self.omega[c] != 0.0 {
                    v.push((self.coord(s, i, j), self.omega[c]));
                }
            }
        }
        v.sort_unstable_by_key(|&(c, _)| c);
        Ok(v)
    }

}

fn check(seq: &[Symbol], n: usize) -> Result<()> {
    match seq.iter().find(|&&s| s as usize >= n) {
        Some(s) => Err(crate::error::Error::SymbolOutOfAlphabet(format!("#{s}"))),
        None => Ok(()),
    }
}

/// Inner product of two coordinate-sorted sparse vectors.
pub fn sparse_dot(a: &[(u64, f64)], b: &[(u64, f64)]) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn single_position_dot() {
        let jd = fixtures::example::<f64>();
        let e = MipsEmbedding::new(&jd);
        let d = sparse_dot(&e.embed_x(&[0]).unwrap(), &e.embed_y(&[0]).unwrap());
        assert!((d - (0.4f64 / 0.35).ln()).abs() < 1e-12);
        assert!((d - 0.1335).abs() < 1e-4);
    }

    #[test]
    fn independent_distribution_embeds_to_zero() {
        let jd = fixtures::uniform2::<f64>();
        let e = MipsEmbedding::new(&jd);
        assert!(e.embed_x(&[0, 1, 1]).unwrap().is_empty());
        assert_eq!(sparse_dot(&e.embed_x(&[0, 1]).unwrap(), &e.embed_y(&[1, 1]).unwrap()), 0.0);
    }

    #[test]
    fn zero_cell_gives_minus_infinity() {
        let jd = fixtures::p1::<f64>();
        let e = MipsEmbedding::new(&jd);
        let d = sparse_dot(&e.embed_x(&[0]).unwrap(), &e.embed_y(&[1]).unwrap());
        assert_eq!(d, f64::NEG_INFINITY);
        assert!(e.embed_x(&[2]).is_err());
    }
}
