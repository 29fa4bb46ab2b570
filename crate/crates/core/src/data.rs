//! Synthetic pair generation, distribution transforms, rank ingestion and
//! sequence files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::{Alphabet, JointDistribution, Sequence, Symbol};
use crate::error::{Error, Result};
use crate::sampling::{rng_for, streams, PairSampler};
use crate::scalar::Real;

/// Database points `xs`, queries `ys`, and which of them were drawn together.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedDataset {
    pub xs: Vec<Sequence>,
    pub ys: Vec<Sequence>,
    /// `(x index, y index)` of every jointly drawn pair.
    pub planted: Vec<(u32, u32)>,
    pub seed: u64,
}

/// `min(N, M)` planted pairs `(x_i, y_i)` drawn from `P` position by
/// position; every other sequence from its marginal. Item `i` uses its own
/// stream, so the output is a function of the seed alone.
pub fn generate_pairs<T: Real>(jd: &JointDistribution<T>, n: usize, m: usize, s: usize, seed: u64) -> Result<PairedDataset> {
    if n == 0 || m == 0 || s == 0 {
        return Err(Error::InvalidArgument("N, M and S must be positive".into()));
    }
    let sampler = PairSampler::new(jd)?;
    let planted = n.min(m);
    let rows: Vec<(Option<Sequence>, Option<Sequence>)> = (0..n.max(m))
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, streams::DATA + i as u64);
            if i < planted {
                let (x, y): (Sequence, Sequence) = (0..s).map(|_| sampler.joint(&mut rng)).unzip();
                (Some(x), Some(y))
            } else if i < n {
                (Some((0..s).map(|_| sampler.a(&mut rng)).collect()), None)
            } else {
                (None, Some((0..s).map(|_| sampler.b(&mut rng)).collect()))
            }
        })
        .collect();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(m);
    for (x, y) in rows {
        xs.extend(x);
        ys.extend(y);
    }
    Ok(PairedDataset {
        xs,
        ys,
        planted: (0..planted as u32).map(|i| (i, i)).collect(),
        seed,
    })
}

/// `(1−t)·P1 + t·P2`.
pub fn interpolate<T: Real>(p1: &JointDistribution<T>, p2: &JointDistribution<T>, t: T) -> Result<JointDistribution<T>> {
    if p1.k() != p2.k() || p1.l() != p2.l() {
        return Err(Error::ShapeMismatch(format!(
            "{}×{} vs {}×{}",
            p1.k(),
            p1.l(),
            p2.k(),
            p2.l()
        )));
    }
    if !(t >= T::zero() && t <= T::one()) {
        return Err(Error::InvalidArgument(format!("t must lie in [0, 1], got {t}")));
    }
    let rows: Vec<Vec<T>> = (0..p1.k())
        .map(|i| {
            (0..p1.l())
                .map(|j| (T::one() - t) * p1.p(i, j) + t * p2.p(i, j))
                .collect()
        })
        .collect();
    JointDistribution::from_matrix(&rows, p1.alphabet_a().clone(), p1.alphabet_b().clone())
}

pub const MAX_PERTURB_ATTEMPTS: usize = 100;

/// Random `P'` with `p/(1+ε) ≤ p' ≤ p(1+ε)` on every cell: multiplicative
/// noise, renormalization, and rejection when the band is left.
pub fn perturb<T: Real>(jd: &JointDistribution<T>, epsilon: T, seed: u64) -> Result<JointDistribution<T>> {
    if !(epsilon >= T::zero()) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!("epsilon must be non-negative, got {epsilon}")));
    }
    let hi = (T::one() + epsilon).as_f64();
    let lo = 1.0 / hi;
    let mut rng = rng_for(seed, streams::PERTURB);
    for _ in 0..MAX_PERTURB_ATTEMPTS {
        let raw: Vec<Vec<f64>> = jd
            .rows()
            .iter()
            .map(|r| {
                r.iter()
                    .map(|&p| {
                        let f = if hi > lo { rng.random_range(lo..=hi) } else { 1.0 };
                        p.as_f64() * f
                    })
                    .collect()
            })
            .collect();
        let total: f64 = raw.iter().flatten().sum();
        let inside = raw.iter().flatten().zip(jd.rows().iter().flatten()).all(|(&v, &p)| {
            let (v, p) = (v / total, p.as_f64());
            v >= p * lo * (1.0 - 1e-12) && v <= p * hi * (1.0 + 1e-12)
        });
        if inside {
            let rows: Vec<Vec<T>> = raw
                .iter()
                .map(|r| r.iter().map(|&v| T::lit(v / total)).collect())
                .collect();
            return JointDistribution::from_weights(&rows, jd.alphabet_a().clone(), jd.alphabet_b().clone());
        }
    }
    Err(Error::PerturbationInfeasible {
        attempts: MAX_PERTURB_ATTEMPTS,
    })
}

/// Rank bucketing `⌊log_b r⌋ + 1`, capped at `n_levels`, for ranks `r ≥ 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRank {
    pub base: u64,
    pub n_levels: u16,
}

impl LogRank {
    pub fn new(base: u64, n_levels: u16) -> Result<Self> {
        if base < 2 || n_levels == 0 {
            return Err(Error::InvalidArgument(format!(
                "logRank needs base ≥ 2 and at least one level, got base {base}, {n_levels} levels"
            )));
        }
        Ok(Self { base, n_levels })
    }

    /// Level in `1..=n_levels`.
    pub fn level(&self, rank: i64) -> Result<u16> {
        if rank < 1 {
            return Err(Error::InvalidRank(rank));
        }
        let mut level = 1u16;
        let mut bound = self.base as u128;
        while (rank as u128) >= bound && level < self.n_levels {
            level += 1;
            bound *= self.base as u128;
        }
        Ok(level)
    }

    /// The reserved level of a position without a peak.
    pub fn absent_level(&self) -> u16 {
        self.n_levels + 1
    }

    /// Symbols `"1" … "n_levels"` followed by the absent symbol `"0"`;
    /// level `v` becomes symbol index `v − 1`.
    pub fn alphabet(&self) -> Alphabet {
        Alphabet::new((1..=self.n_levels).map(|v| v.to_string()).chain(["0".to_string()]))
            .expect("distinct level names")
    }

    /// One symbol per position; `None` marks an absent peak.
    pub fn transform(&self, ranks: &[Option<i64>]) -> Result<Sequence> {
        ranks
            .iter()
            .map(|r| match r {
                Some(r) => self.level(*r).map(|v| v - 1),
                None => Ok(self.absent_level() - 1),
            })
            .collect()
    }
}

/// Parses one rank list: comma separated ranks, empty or `-` for no peak.
pub fn parse_rank_line(line: &str) -> std::result::Result<Vec<Option<i64>>, String> {
    line.split(',')
        .map(str::trim)
        .map(|t| match t {
            "" | "-" => Ok(None),
            t => t.parse::<i64>().map(Some).map_err(|e| format!("bad rank `{t}`: {e}")),
        })
        .collect()
}

/// Reads a rank-list file and applies the logRank transform to each item.
pub fn ingest_ranks(reader: impl BufRead, transform: &LogRank) -> Result<Vec<Sequence>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let ranks = parse_rank_line(&line).map_err(|message| Error::Parse { line: n + 1, message })?;
        out.push(transform.transform(&ranks).map_err(|e| e.context(format!("line {}", n + 1)))?);
    }
    Ok(out)
}

/// One sequence per non-empty line.
pub fn parse_sequences(reader: impl BufRead, alphabet: &Alphabet) -> Result<Vec<Sequence>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let seq = alphabet.parse_sequence(&line).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(seq);
    }
    Ok(out)
}

pub fn read_sequences(path: impl AsRef<Path>, alphabet: &Alphabet) -> Result<Vec<Sequence>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    parse_sequences(BufReader::new(file), alphabet).map_err(|e| e.context(path.display().to_string()))
}

pub fn write_sequences(path: impl AsRef<Path>, alphabet: &Alphabet, seqs: &[Sequence]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in seqs {
        writeln!(w, "{}", alphabet.format_sequence(s))?;
    }
    w.flush()?;
    Ok(())
}

/// All sequences share one length.
pub fn common_length(seqs: &[Sequence]) -> Result<Option<usize>> {
    let Some(first) = seqs.first() else {
        return Ok(None);
    };
    for s in seqs {
        if s.len() != first.len() {
            return Err(Error::LengthMismatch {
                expected: first.len(),
                found: s.len(),
            });
        }
    }
    Ok(Some(first.len()))
}

/// Empirical cell frequencies of aligned pairs, row-major.
pub fn cell_frequencies(pairs: impl IntoIterator<Item = (Symbol, Symbol)>, k: usize, l: usize) -> Vec<f64> {
    let mut counts = vec![0u64; k * l];
    let mut n = 0u64;
    for (a, b) in pairs {
        counts[a as usize * l + b as usize] += 1;
        n += 1;
    }
    counts.into_iter().map(|c| c as f64 / n.max(1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn deterministic_distribution_gives_constant_pairs() {
        let jd = JointDistribution::<f64>::from_rows(&[vec![1.0]]).unwrap();
        let d = generate_pairs(&jd, 3, 2, 5, 1).unwrap();
        assert_eq!(d.xs, vec![vec![0; 5]; 3]);
        assert_eq!(d.ys, vec![vec![0; 5]; 2]);
        assert_eq!(d.planted, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn generation_is_reproducible() {
        let jd = fixtures::example::<f64>();
        let a = generate_pairs(&jd, 50, 70, 20, 9).unwrap();
        let b = generate_pairs(&jd, 50, 70, 20, 9).unwrap();
        assert_eq!(bincode::serialize(&a).unwrap(), bincode::serialize(&b).unwrap());
        assert_eq!(a.xs.len(), 50);
        assert_eq!(a.ys.len(), 70);
        assert_ne!(a, generate_pairs(&jd, 50, 70, 20, 10).unwrap());
    }

    #[test]
    fn planted_cells_follow_p() {
        let jd = fixtures::example::<f64>();
        let d = generate_pairs(&jd, 200, 200, 500, 4).unwrap();
        let pairs = d
            .planted
            .iter()
            .flat_map(|&(i, j)| d.xs[i as usize].iter().copied().zip(d.ys[j as usize].iter().copied()));
        let freq = cell_frequencies(pairs, 2, 2);
        let n = 200.0 * 500.0;
        for (f, p) in freq.iter().zip([0.4, 0.3, 0.1, 0.2]) {
            assert!((f - p).abs() <= 3.0 * (p * (1.0 - p) / n).sqrt(), "{f} vs {p}");
        }
    }

    #[test]
    fn interpolation_endpoints_and_mean() {
        let (a, b) = (fixtures::p1::<f64>(), fixtures::p2::<f64>());
        assert_eq!(interpolate(&a, &b, 0.0).unwrap().rows(), a.rows());
        assert_eq!(interpolate(&a, &b, 1.0).unwrap().rows(), b.rows());
        let mid = interpolate(&a, &b, 0.5).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((mid.p(i, j) - (a.p(i, j) + b.p(i, j)) / 2.0).abs() < 1e-12);
            }
        }
        assert!(interpolate(&a, &fixtures::mass_spec_4x4(), 0.5).is_err());
    }

    #[test]
    fn perturbation_stays_in_band() {
        let jd = fixtures::p_of_t::<f64>(0.25).unwrap();
        for seed in 0..20 {
            let q = perturb(&jd, 0.03, seed).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    let (p, v) = (jd.p(i, j), q.p(i, j));
                    assert!(v >= p / 1.03 - 1e-12 && v <= p * 1.03 + 1e-12);
                }
            }
        }
        assert_eq!(perturb(&jd, 0.0, 1).unwrap().rows(), jd.rows());
        let one = JointDistribution::<f64>::from_rows(&[vec![1.0]]).unwrap();
        assert_eq!(perturb(&one, 0.5, 1).unwrap().rows(), vec![vec![1.0]]);
    }

    #[test]
    fn logrank_levels() {
        let b2 = LogRank::new(2, 10).unwrap();
        for r in 4..8 {
            assert_eq!(b2.level(r).unwrap(), 3);
        }
        for base in 2..6 {
            assert_eq!(LogRank::new(base, 5).unwrap().level(1).unwrap(), 1);
        }
        let b4 = LogRank::new(4, 4).unwrap();
        let levels: Vec<u16> = (1..=51).map(|r| b4.level(r).unwrap()).collect();
        assert_eq!(levels[..3], [1, 1, 1]);
        assert_eq!(levels[3], 2);
        assert_eq!(levels[14], 2);
        assert_eq!(levels[15], 3);
        assert_eq!(levels[50], 3);
        assert_eq!(b4.level(64).unwrap(), 4);
        assert_eq!(b4.level(10_000).unwrap(), 4);
        assert!(matches!(b4.level(0), Err(Error::InvalidRank(0))));
    }

    #[test]
    fn rank_lists_ingest_with_absent_level() {
        let t = LogRank::new(2, 3).unwrap();
        let seqs = ingest_ranks("1,2,-,9\n\n3,,1,1\n".as_bytes(), &t).unwrap();
        assert_eq!(seqs, vec![vec![0, 1, 3, 2], vec![1, 3, 0, 0]]);
        assert_eq!(t.alphabet().len(), 4);
        assert!(matches!(
            ingest_ranks("1,x".as_bytes(), &t),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn sequence_files_round_trip() {
        let alphabet = Alphabet::numeric(3).unwrap();
        let seqs = vec![vec![0, 1, 2], vec![2, 2, 0]];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seqs.txt");
        write_sequences(&path, &alphabet, &seqs).unwrap();
        assert_eq!(read_sequences(&path, &alphabet).unwrap(), seqs);
        assert!(matches!(
            parse_sequences("0 1\n0 5\n".as_bytes(), &alphabet),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
