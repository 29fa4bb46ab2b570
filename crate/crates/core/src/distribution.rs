//! Joint symbol distributions, their marginals, and sequence likelihoods.
//!
//! A [`JointDistribution`] holds the `k × l` matrix `p` of a pair of symbols
//! `(a_i, b_j)` drawn together, plus the marginals `pA`, `pB` and the product
//! distribution `q = pA ⊗ pB` that an unrelated pair follows. Sequences are
//! i.i.d. across positions, so every sequence-level quantity is a sum of
//! per-position logs.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Index of a symbol inside its [`Alphabet`].
pub type Symbol = u16;

/// A sequence of symbol indices.
pub type Sequence = Vec<Symbol>;

/// Tolerance on the input sum before a matrix is rejected.
pub const INPUT_SUM_TOLERANCE: f64 = 1e-6;

/// Tolerance applied when checking derived quantities.
pub const DERIVED_TOLERANCE: f64 = 1e-9;

/// Ordered set of distinct symbols; the position of a symbol is its index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Alphabet {
    symbols: Vec<String>,
    lookup: HashMap<String, Symbol>,
}

impl Alphabet {
    pub fn new<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Result<Self> {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        if symbols.is_empty() {
            return Err(Error::EmptyAlphabet);
        }
        if symbols.len() > Symbol::MAX as usize + 1 {
            return Err(Error::InvalidArgument(format!(
                "alphabet of {} symbols exceeds the supported maximum",
                symbols.len()
            )));
        }
        let mut lookup = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if lookup.insert(s.clone(), i as Symbol).is_some() {
                return Err(Error::DuplicateSymbol(s.clone()));
            }
        }
        Ok(Self { symbols, lookup })
    }

    /// Alphabet `{"0", "1", …, "size-1"}`.
    pub fn numeric(size: usize) -> Result<Self> {
        Self::new((0..size).map(|i| i.to_string()))
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbol(&self, index: Symbol) -> Option<&str> {
        self.symbols.get(index as usize).map(String::as_str)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn index_of(&self, symbol: &str) -> Option<Symbol> {
        self.lookup.get(symbol).copied()
    }

    /// Parses one line of the text data format.
    ///
    /// Tokens are separated by whitespace or commas. A line without
    /// separators is read one character per symbol when every symbol of the
    /// alphabet is a single character (`"0010"` for a binary alphabet).
    pub fn parse_sequence(&self, line: &str) -> Result<Sequence> {
        let line = line.trim();
        let has_separator = line.contains(|c: char| c.is_whitespace() || c == ',');
        let single_chars = self.symbols.iter().all(|s| s.chars().count() == 1);
        if !has_separator && single_chars {
            let mut buf = [0u8; 4];
            return line
                .chars()
                .map(|c| self.lookup_token(c.encode_utf8(&mut buf)))
                .collect();
        }
        line.split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| self.lookup_token(t))
            .collect()
    }

    fn lookup_token(&self, token: &str) -> Result<Symbol> {
        self.index_of(token)
            .ok_or_else(|| Error::SymbolOutOfAlphabet(token.to_string()))
    }

    /// Space separated rendering, the inverse of [`Alphabet::parse_sequence`].
    pub fn format_sequence(&self, seq: &[Symbol]) -> String {
        seq.iter()
            .map(|&s| self.symbol(s).unwrap_or("?"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn check(&self, seq: &[Symbol]) -> Result<()> {
        match seq.iter().find(|&&s| s as usize >= self.len()) {
            Some(s) => Err(Error::SymbolOutOfAlphabet(format!("#{s}"))),
            None => Ok(()),
        }
    }
}

impl TryFrom<Vec<String>> for Alphabet {
    type Error = Error;

    fn try_from(symbols: Vec<String>) -> Result<Self> {
        Alphabet::new(symbols)
    }
}

impl From<Alphabet> for Vec<String> {
    fn from(a: Alphabet) -> Self {
        a.symbols
    }
}

/// A cell `(i, j)` with `p_ij > 0`, with the logs needed by the recursions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell<T> {
    pub i: Symbol,
    pub j: Symbol,
    pub p: T,
    pub log_p: T,
    pub log_pa: T,
    pub log_pb: T,
}

/// On-disk model: `{"alphabet_a": [...], "alphabet_b": [...], "p": [[...]]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub alphabet_a: Vec<String>,
    pub alphabet_b: Vec<String>,
    pub p: Vec<Vec<f64>>,
}

/// Validated joint distribution of a symbol pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "ModelFile",
    into = "ModelFile",
    bound(serialize = "T: Real", deserialize = "T: Real")
)]
pub struct JointDistribution<T> {
    alphabet_a: Alphabet,
    alphabet_b: Alphabet,
    p: Vec<T>,
    pa: Vec<T>,
    pb: Vec<T>,
    q: Vec<T>,
    log_conditional: Vec<T>,
    cells: Vec<Cell<T>>,
}

impl<T: Real> JointDistribution<T> {
    /// Validates `rows` as a distribution.
    ///
    /// A matrix whose sum is within `1e-6` of one is rescaled by its sum;
    /// anything further off is rejected.
    pub fn from_matrix(rows: &[Vec<T>], alphabet_a: Alphabet, alphabet_b: Alphabet) -> Result<Self> {
        let sum = Self::checked_sum(rows, &alphabet_a, &alphabet_b)?;
        if (sum.as_f64() - 1.0).abs() >= INPUT_SUM_TOLERANCE {
            return Err(Error::NotADistribution(format!(
                "entries sum to {sum}, expected 1"
            )));
        }
        Ok(Self::build(rows, sum, alphabet_a, alphabet_b))
    }

    /// [`JointDistribution::from_matrix`] with numeric alphabets `0..k`, `0..l`.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let (k, l) = Self::shape(rows)?;
        Self::from_matrix(rows, Alphabet::numeric(k)?, Alphabet::numeric(l)?)
    }

    /// Normalizes arbitrary non-negative weights (counts, rounded published
    /// tables) into a distribution.
    pub fn from_weights(rows: &[Vec<T>], alphabet_a: Alphabet, alphabet_b: Alphabet) -> Result<Self> {
        let sum = Self::checked_sum(rows, &alphabet_a, &alphabet_b)?;
        if sum <= T::zero() {
            return Err(Error::NotADistribution("weights sum to zero".into()));
        }
        Ok(Self::build(rows, sum, alphabet_a, alphabet_b))
    }

    /// [`JointDistribution::from_weights`] with numeric alphabets.
    pub fn from_weight_rows(rows: &[Vec<T>]) -> Result<Self> {
        let (k, l) = Self::shape(rows)?;
        Self::from_weights(rows, Alphabet::numeric(k)?, Alphabet::numeric(l)?)
    }

    fn shape(rows: &[Vec<T>]) -> Result<(usize, usize)> {
        let k = rows.len();
        let l = rows.first().map_or(0, Vec::len);
        if k == 0 || l == 0 {
            return Err(Error::EmptyAlphabet);
        }
        Ok((k, l))
    }

    fn checked_sum(rows: &[Vec<T>], alphabet_a: &Alphabet, alphabet_b: &Alphabet) -> Result<T> {
        let (k, l) = Self::shape(rows)?;
        if k != alphabet_a.len() || l != alphabet_b.len() {
            return Err(Error::ShapeMismatch(format!(
                "matrix is {k}x{l} but alphabets have sizes {}x{}",
                alphabet_a.len(),
                alphabet_b.len()
            )));
        }
        let mut sum = T::zero();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != l {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} has {} entries, expected {l}",
                    row.len()
                )));
            }
            for &v in row {
                if !v.is_finite() || v < T::zero() {
                    return Err(Error::NotADistribution(format!(
                        "entry {v} in row {i} is negative or not finite"
                    )));
                }
                sum = sum + v;
            }
        }
        Ok(sum)
    }

    fn build(rows: &[Vec<T>], sum: T, alphabet_a: Alphabet, alphabet_b: Alphabet) -> Self {
        let k = rows.len();
        let l = rows[0].len();
        let p: Vec<T> = rows.iter().flatten().map(|&v| v / sum).collect();
        let pa: Vec<T> = (0..k).map(|i| (0..l).map(|j| p[i * l + j]).sum()).collect();
        let pb: Vec<T> = (0..l).map(|j| (0..k).map(|i| p[i * l + j]).sum()).collect();
        let q: Vec<T> = (0..k * l).map(|c| pa[c / l] * pb[c % l]).collect();
        let log_conditional = (0..k * l)
            .map(|c| if p[c] > T::zero() { p[c].ln() - pa[c / l].ln() } else { T::neg_infinity() })
            .collect();
        let cells = (0..k * l)
            .filter(|&c| p[c] > T::zero())
            .map(|c| Cell {
                i: (c / l) as Symbol,
                j: (c % l) as Symbol,
                p: p[c],
                log_p: p[c].ln(),
                log_pa: pa[c / l].ln(),
                log_pb: pb[c % l].ln(),
            })
            .collect();
        Self {
            alphabet_a,
            alphabet_b,
            p,
            pa,
            pb,
            q,
            log_conditional,
            cells,
        }
    }

    /// Size of the A-side alphabet.
    pub fn k(&self) -> usize {
        self.pa.len()
    }

    /// Size of the B-side alphabet.
    pub fn l(&self) -> usize {
        self.pb.len()
    }

    pub fn alphabet_a(&self) -> &Alphabet {
        &self.alphabet_a
    }

    pub fn alphabet_b(&self) -> &Alphabet {
        &self.alphabet_b
    }

    #[inline]
    pub fn p(&self, i: usize, j: usize) -> T {
        self.p[i * self.l() + j]
    }

    #[inline]
    pub fn q(&self, i: usize, j: usize) -> T {
        self.q[i * self.l() + j]
    }

    #[inline]
    pub fn pa(&self, i: usize) -> T {
        self.pa[i]
    }

    #[inline]
    pub fn pb(&self, j: usize) -> T {
        self.pb[j]
    }

    pub fn marginal_a(&self) -> &[T] {
        &self.pa
    }

    pub fn marginal_b(&self) -> &[T] {
        &self.pb
    }

    /// Row-major copy of `p`.
    pub fn rows(&self) -> Vec<Vec<T>> {
        self.p.chunks(self.l()).map(<[T]>::to_vec).collect()
    }

    /// Row-major copy of `q`.
    pub fn product_rows(&self) -> Vec<Vec<T>> {
        self.q.chunks(self.l()).map(<[T]>::to_vec).collect()
    }

    /// Cells with `p_ij > 0` in row-major order. Zero cells never appear in
    /// sums, products or tree branches.
    pub fn nonzero_cells(&self) -> &[Cell<T>] {
        &self.cells
    }

    /// `log p(b_j | a_i)`, `-inf` for a zero cell.
    #[inline]
    pub fn log_conditional(&self, i: usize, j: usize) -> T {
        self.log_conditional[i * self.l() + j]
    }

    fn check_pair(&self, x: &[Symbol], y: &[Symbol]) -> Result<()> {
        if x.len() != y.len() {
            return Err(Error::LengthMismatch {
                expected: x.len(),
                found: y.len(),
            });
        }
        self.alphabet_a.check(x)?;
        self.alphabet_b.check(y)
    }

    /// `log P(y | x) = Σ_s log(p(x_s, y_s) / pA(x_s))`.
    pub fn log_likelihood(&self, x: &[Symbol], y: &[Symbol]) -> Result<T> {
        self.check_pair(x, y)?;
        Ok(self.log_likelihood_unchecked(x, y))
    }

    /// Like [`JointDistribution::log_likelihood`] for inputs already known to be valid.
    pub fn log_likelihood_unchecked(&self, x: &[Symbol], y: &[Symbol]) -> T {
        let l = self.l();
        let table = &self.log_conditional;
        let term = |a: Symbol, b: Symbol| table[a as usize * l + b as usize];
        let n = x.len().min(y.len());
        let (xc, yc) = (x[..n].chunks_exact(4), y[..n].chunks_exact(4));
        let tail = xc.remainder().iter().zip(yc.remainder()).fold(T::zero(), |t, (&a, &b)| t + term(a, b));
        let mut acc = [T::zero(); 4];
        for (xs, ys) in xc.zip(yc) {
            for r in 0..4 {
                acc[r] = acc[r] + term(xs[r], ys[r]);
            }
        }
        (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
    }

    /// `log(P(x, y) / Q(x, y)) = Σ_s log(p(x_s, y_s) / q(x_s, y_s))`.
    pub fn log_likelihood_ratio(&self, x: &[Symbol], y: &[Symbol]) -> Result<T> {
        self.check_pair(x, y)?;
        let mut total = T::zero();
        for (&a, &b) in x.iter().zip(y) {
            let (a, b) = (a as usize, b as usize);
            let p = self.p(a, b);
            if p <= T::zero() {
                return Ok(T::neg_infinity());
            }
            total = total + p.ln() - self.q(a, b).ln();
        }
        Ok(total)
    }

    /// Estimates `p` by counting aligned symbol pairs.
    ///
    /// `p_ij = (count_ij + smoothing) / (positions + smoothing·k·l)`.
    pub fn estimate_from_pairs(
        pairs: &[(Sequence, Sequence)],
        alphabet_a: Alphabet,
        alphabet_b: Alphabet,
        smoothing: T,
    ) -> Result<Self> {
        if !(smoothing >= T::zero()) || !smoothing.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "smoothing must be a finite non-negative number, got {smoothing}"
            )));
        }
        let (k, l) = (alphabet_a.len(), alphabet_b.len());
        let mut counts = vec![0u64; k * l];
        let mut positions = 0u64;
        for (x, y) in pairs {
            if x.len() != y.len() {
                return Err(Error::LengthMismatch {
                    expected: x.len(),
                    found: y.len(),
                });
            }
            alphabet_a.check(x)?;
            alphabet_b.check(y)?;
            for (&a, &b) in x.iter().zip(y) {
                counts[a as usize * l + b as usize] += 1;
            }
            positions += x.len() as u64;
        }
        if positions == 0 {
            return Err(Error::EmptyTrainingSet);
        }
        let total = T::lit(positions as f64) + smoothing * T::lit((k * l) as f64);
        let rows: Vec<Vec<T>> = counts
            .chunks(l)
            .map(|row| {
                row.iter()
                    .map(|&c| (T::lit(c as f64) + smoothing) / total)
                    .collect()
            })
            .collect();
        Self::from_matrix(&rows, alphabet_a, alphabet_b)
    }

    /// Same distribution with symbols relabelled: new row `r` is old row
    /// `perm_a[r]`, new column `c` is old column `perm_b[c]`.
    pub fn permuted(&self, perm_a: &[usize], perm_b: &[usize]) -> Result<Self> {
        if perm_a.len() != self.k() || perm_b.len() != self.l() {
            return Err(Error::ShapeMismatch("permutation length".into()));
        }
        let rows: Vec<Vec<T>> = perm_a
            .iter()
            .map(|&i| perm_b.iter().map(|&j| self.p(i, j)).collect())
            .collect();
        let pick = |alpha: &Alphabet, perm: &[usize]| {
            Alphabet::new(perm.iter().map(|&i| alpha.symbols()[i].clone()))
        };
        Self::from_weights(&rows, pick(&self.alphabet_a, perm_a)?, pick(&self.alphabet_b, perm_b)?)
    }

    /// Converts the entries to another scalar type.
    pub fn cast<U: Real>(&self) -> Result<JointDistribution<U>> {
        let rows: Vec<Vec<U>> = self
            .rows()
            .iter()
            .map(|r| r.iter().map(|&v| U::lit(v.as_f64())).collect())
            .collect();
        JointDistribution::from_weights(&rows, self.alphabet_a.clone(), self.alphabet_b.clone())
    }

    pub fn to_model_file(&self) -> ModelFile {
        ModelFile {
            alphabet_a: self.alphabet_a.symbols().to_vec(),
            alphabet_b: self.alphabet_b.symbols().to_vec(),
            p: self
                .rows()
                .iter()
                .map(|r| r.iter().map(|v| v.as_f64()).collect())
                .collect(),
        }
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

impl<T: Real> TryFrom<ModelFile> for JointDistribution<T> {
    type Error = Error;

    fn try_from(m: ModelFile) -> Result<Self> {
        let rows: Vec<Vec<T>> = m
            .p
            .iter()
            .map(|r| r.iter().map(|&v| T::lit(v)).collect())
            .collect();
        Self::from_matrix(&rows, Alphabet::new(m.alphabet_a)?, Alphabet::new(m.alphabet_b)?)
    }
}

impl<T: Real> From<JointDistribution<T>> for ModelFile {
    fn from(jd: JointDistribution<T>) -> Self {
        jd.to_model_file()
    }
}

/// Problem size: `N` classes, `M` queries, sequences of length `S`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemDims {
    pub n: u64,
    pub m: u64,
    pub s: usize,
}

impl ProblemDims {
    pub fn new(n: u64, m: u64, s: usize) -> Result<Self> {
        if n < 2 || m < 1 || s < 1 {
            return Err(Error::InvalidArgument(format!(
                "need N >= 2, M >= 1, S >= 1; got N={n}, M={m}, S={s}"
            )));
        }
        Ok(Self { n, m, s })
    }

    /// `δ = log M / log N`.
    pub fn delta(&self) -> f64 {
        (self.m as f64).ln() / (self.n as f64).ln()
    }

    pub fn log_n(&self) -> f64 {
        (self.n as f64).ln()
    }
}
