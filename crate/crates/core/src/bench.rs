//! End-to-end experiments: solve, build, index, query, compare.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{banded_signature_search, brute_force, dubiner_hamming_exact, BandedLimits, SignatureMethod};
use crate::data::{generate_pairs, perturb, PairedDataset};
use crate::distribution::{JointDistribution, ProblemDims};
use crate::error::{Error, Result};
use crate::fixtures;
use crate::index::{BandIndex, BandSet};
use crate::query::Searcher;
use crate::scalar::Real;
use crate::solver::{depth_constant, noise_complexity_bound, solve_params, HashParams, SolverConfig};
use crate::tree::{
    bands_for, build_tree, complexity_report, estimate_family_stats, family_stats, lower_bound_functional, CostModel, DecisionTree,
    FamilyStats, MonteCarloStats, Side, Thresholds, TreeConfig,
};

/// Where the joint distribution comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSource {
    File { path: PathBuf },
    Fixture { name: String },
    /// `(1−t)·P1 + t·P2` of the sparse binary pair.
    Interpolate { t: f64 },
    /// Symmetric binary channel with agreement probability `p`.
    Hamming { p: f64 },
    Matrix { p: Vec<Vec<f64>> },
}

impl ModelSource {
    pub fn load<T: Real>(&self) -> Result<JointDistribution<T>> {
        match self {
            ModelSource::File { path } => JointDistribution::load_json(path),
            ModelSource::Fixture { name } => fixture(name),
            ModelSource::Interpolate { t } => fixtures::p_of_t(*t),
            ModelSource::Hamming { p } => fixtures::hamming(*p),
            ModelSource::Matrix { p } => {
                let rows: Vec<Vec<T>> = p.iter().map(|r| r.iter().map(|&v| T::lit(v)).collect()).collect();
                JointDistribution::from_rows(&rows)
            }
        }
    }
}

pub const FIXTURE_NAMES: [&str; 6] = ["example", "uniform2", "p1", "p2", "mass-spec-4x4", "mass-spec-8x8"];

pub fn fixture<T: Real>(name: &str) -> Result<JointDistribution<T>> {
    Ok(match name {
        "example" => fixtures::example(),
        "uniform2" => fixtures::uniform2(),
        "p1" => fixtures::p1(),
        "p2" => fixtures::p2(),
        "mass-spec-4x4" => fixtures::mass_spec_4x4(),
        "mass-spec-8x8" => fixtures::mass_spec_8x8(),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown fixture `{other}`; known: {}",
                FIXTURE_NAMES.join(", ")
            )))
        }
    })
}

/// Accept/prune constants. Scales multiply `p0·q0`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ThresholdSpec {
    #[default]
    Default,
    Scaled { c1: f64, c2: f64, c3: f64 },
    Explicit { c1: f64, c2: f64, c3: f64 },
    /// Cartesian grid of scales, resolved by [`threshold_sweep`].
    Sweep { c1: Vec<f64>, c2: Vec<f64>, c3: Vec<f64> },
    /// [`AUTO_SWEEP_SCALES`] on every constant.
    AutoSweep,
}

pub const AUTO_SWEEP_SCALES: [f64; 5] = [1.0, 10.0, 100.0, 1e3, 1e4];

impl ThresholdSpec {
    /// Every candidate setting for `params`.
    pub fn candidates<T: Real>(&self, params: &HashParams<T>) -> Result<Vec<Thresholds>> {
        let base = Thresholds::default_for(params);
        let scaled = |c1: f64, c2: f64, c3: f64| -> Result<Thresholds> {
            for c in [c1, c2, c3] {
                if !(c > 0.0) {
                    return Err(Error::InvalidArgument(format!("threshold scale must be positive, got {c}")));
                }
            }
            Ok(Thresholds::from_logs(base.log_c1 + c1.ln(), base.log_c2 + c2.ln(), base.log_c3 + c3.ln()))
        };
        match self {
            ThresholdSpec::Default => Ok(vec![base]),
            ThresholdSpec::Scaled { c1, c2, c3 } => Ok(vec![scaled(*c1, *c2, *c3)?]),
            ThresholdSpec::Explicit { c1, c2, c3 } => Ok(vec![Thresholds::new(*c1, *c2, *c3)?]),
            ThresholdSpec::AutoSweep => {
                let grid = AUTO_SWEEP_SCALES.to_vec();
                ThresholdSpec::Sweep { c1: grid.clone(), c2: grid.clone(), c3: grid }.candidates(params)
            }
            ThresholdSpec::Sweep { c1, c2, c3 } => {
                if c1.is_empty() || c2.is_empty() || c3.is_empty() {
                    return Err(Error::InvalidArgument("threshold sweep grid is empty".into()));
                }
                let mut out = Vec::new();
                for &a in c1 {
                    for &b in c2 {
                        for &c in c3 {
                            out.push(scaled(a, b, c)?);
                        }
                    }
                }
                Ok(out)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Forest,
    Brute,
    MinHash,
    LshHamming,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Forest => "forest",
            Method::Brute => "brute",
            Method::MinHash => "min-hash",
            Method::LshHamming => "lsh-hamming",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Sweep {
    /// Database size, with `M = N·(M/N)` of the base config.
    N { values: Vec<u64> },
    /// Interpolation weight of the sparse binary pair.
    T { values: Vec<f64> },
    Bands { values: Vec<usize> },
    /// Data drawn from a perturbed model, bands inflated by `(1+ε)^depth`.
    Noise { epsilons: Vec<f64> },
    /// Hamming channel strength, compared against ball bucketing.
    Dubiner { ps: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub grid_max: f64,
    pub grid_step: f64,
    pub tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            grid_max: 20.0,
            grid_step: 0.1,
            tol: 0.01,
        }
    }
}

impl SolverSettings {
    pub fn config<T: Real>(&self) -> Result<SolverConfig<T>> {
        if !(self.grid_max > 0.0 && self.grid_step > 0.0 && self.tol > 0.0) {
            return Err(Error::InvalidArgument("solver grid max, step and tol must be positive".into()));
        }
        Ok(SolverConfig::uniform(T::lit(self.grid_max), T::lit(self.grid_step), T::lit(self.tol)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: ModelSource,
    pub n: u64,
    pub m: u64,
    pub s: usize,
    pub tp_target: f64,
    /// Probability threshold `Δ`; zero reports every positive.
    pub delta: f64,
    pub thresholds: ThresholdSpec,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub cost: CostModel,
    pub max_depth: Option<usize>,
    pub max_nodes: usize,
    pub mc_samples: u64,
    /// Skip the Monte-Carlo cross-check of the family sums.
    pub skip_cross_validation: bool,
    /// Fixed band count instead of the one derived from `α`.
    pub n_bands: Option<usize>,
    pub sweep: Option<Sweep>,
    pub solver: SolverSettings,
    pub banded_limits: BandedLimits,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            model: ModelSource::Interpolate { t: 0.25 },
            n: 1000,
            m: 1000,
            s: 1000,
            tp_target: 0.99,
            delta: 0.0,
            thresholds: ThresholdSpec::Default,
            seed: 0,
            methods: vec![Method::Forest],
            cost: CostModel::default(),
            max_depth: None,
            max_nodes: TreeConfig::DEFAULT_MAX_NODES,
            mc_samples: 100_000,
            skip_cross_validation: false,
            n_bands: None,
            sweep: None,
            solver: SolverSettings::default(),
            banded_limits: BandedLimits::default(),
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    /// Reads JSON, or TOML when the extension is `.toml`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
        let cfg: Self = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml")) {
            toml::from_str(&text).map_err(|e| Error::Toml(e.to_string()))?
        } else {
            serde_json::from_str(&text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        ProblemDims::new(self.n, self.m, self.s)?;
        if !(self.tp_target > 0.0 && self.tp_target < 1.0) {
            return Err(Error::InvalidArgument(format!("tp_target must lie in (0,1), got {}", self.tp_target)));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::InvalidArgument(format!("delta must lie in [0,1], got {}", self.delta)));
        }
        if self.mc_samples == 0 {
            return Err(Error::InvalidArgument("mc_samples must be positive".into()));
        }
        if self.n_bands == Some(0) {
            return Err(Error::InvalidArgument("n_bands must be positive".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> Result<ProblemDims> {
        ProblemDims::new(self.n, self.m, self.s)
    }

    fn tree_config(&self, thresholds: Thresholds) -> TreeConfig {
        TreeConfig::new(thresholds, self.max_depth.unwrap_or(self.s)).with_max_nodes(self.max_nodes)
    }
}

/// One method at one sweep point.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub method: String,
    pub sweep: Option<String>,
    pub sweep_value: Option<f64>,
    pub n: u64,
    pub m: u64,
    pub s: usize,
    pub wall_ms: f64,
    pub n_bands: usize,
    pub recall: f64,
    pub recall_std_err: f64,
    pub predicted_tp: Option<f64>,
    pub raw_positives: u64,
    pub distinct_candidates: u64,
    pub candidates_per_query: f64,
    pub hash_evaluations: u64,
    pub insertions: u64,
    /// `hash_evaluations + insertions + raw_positives`.
    pub work: u64,
    /// `log(work) / log N`.
    pub work_exponent: f64,
    pub lambda: Option<f64>,
    pub n_nodes: Option<usize>,
    pub n_buckets: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma_a: Option<f64>,
    pub gamma_b: Option<f64>,
    pub alpha_mc: Option<f64>,
    pub beta_mc: Option<f64>,
    pub gamma_a_mc: Option<f64>,
    pub gamma_b_mc: Option<f64>,
    pub predicted_cost: Option<f64>,
    pub lower_bound: Option<f64>,
    pub capped_mass: Option<f64>,
}

/// A plot table: named columns of numbers.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub records: Vec<MetricsRecord>,
    pub tables: Vec<Table>,
    /// Fitted log-log slopes, by name.
    pub slopes: Vec<(String, f64)>,
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Solved parameters, tree and family statistics for one distribution.
#[derive(Clone, Debug)]
pub struct ForestModel<T> {
    pub jd: JointDistribution<T>,
    pub dims: ProblemDims,
    pub params: HashParams<T>,
    pub tree: DecisionTree<T>,
    pub stats: FamilyStats<T>,
}

impl<T: Real> ForestModel<T> {
    pub fn build(jd: &JointDistribution<T>, dims: &ProblemDims, solver: &SolverConfig<T>, thresholds: &ThresholdSpec, tree_cfg: &TreeConfig, tp_target: T) -> Result<Self> {
        let params = solve_params(jd, dims, solver)?;
        Self::with_params(jd, dims, params, thresholds, tree_cfg, tp_target)
    }

    /// Builds with fixed parameters. A threshold grid keeps the setting
    /// with the least predicted cost.
    pub fn with_params(jd: &JointDistribution<T>, dims: &ProblemDims, params: HashParams<T>, thresholds: &ThresholdSpec, tree_cfg: &TreeConfig, tp_target: T) -> Result<Self> {
        let candidates = thresholds.candidates(&params)?;
        let chosen = if candidates.len() == 1 {
            candidates[0]
        } else {
            threshold_sweep(jd, dims, &params, &candidates, tree_cfg, tp_target, &CostModel::default(), None)?.best
        };
        let cfg = TreeConfig { thresholds: chosen, ..*tree_cfg };
        let tree = build_tree(jd, &params, dims, &cfg)?;
        let stats = family_stats(&tree, tp_target)?;
        Ok(Self {
            jd: jd.clone(),
            dims: *dims,
            params,
            tree,
            stats,
        })
    }

    /// Monte-Carlo check of the exact family sums at `k` standard errors.
    pub fn cross_validate(&self, samples: u64, seed: u64, k: f64) -> Result<MonteCarloStats> {
        let mc = estimate_family_stats(&self.tree, &self.jd, samples, seed)?;
        let bad = mc.mismatches(&self.stats, k);
        if !bad.is_empty() {
            return Err(Error::CrossValidation(bad.join("; ")));
        }
        Ok(mc)
    }

    /// Bands for the target rate when true pairs follow a model within
    /// `(1+ε)` of this one: `α` is discounted by `(1+ε)^depth`.
    pub fn noise_bands(&self, epsilon: f64) -> Result<usize> {
        let depth = self.tree.max_bucket_depth() as f64;
        let alpha = self.stats.alpha.as_f64() / (1.0 + epsilon).powf(depth);
        bands_for(alpha, self.stats.tp_target.as_f64())
    }

    /// Indexes `data.xs` in `n_bands` bands and runs every query.
    pub fn run(&self, data: &PairedDataset, n_bands: usize, delta: f64, seed: u64) -> Result<MetricsRecord> {
        let start = Instant::now();
        let bands = BandSet::new(n_bands, self.dims.s, seed)?;
        let index = BandIndex::build(&self.tree, &bands, &data.xs)?;
        let searcher = Searcher::new(&self.tree, &bands, &index, &data.xs, &self.jd)?;
        let results = searcher.search_batch(&data.ys, delta)?;
        let query_memberships: u64 = data
            .ys
            .par_iter()
            .map(|y| {
                let mut out = Vec::new();
                (0..bands.len())
                    .map(|z| {
                        bands.assign_in_band(&self.tree, Side::B, z, y, &mut out);
                        out.len() as u64
                    })
                    .sum::<u64>()
            })
            .sum();
        let found = |x: u32, y: u32| results[y as usize].hits.binary_search_by_key(&x, |h| h.0).is_ok();
        let (recall, recall_std_err) = planted_recall(data, &self.jd, delta, found)?;
        let raw: u64 = results.iter().map(|r| r.raw_positives).sum();
        let distinct: u64 = results.iter().map(|r| r.candidates_checked).sum();
        let hash_evaluations = (n_bands * (data.xs.len() + data.ys.len())) as u64;
        let insertions = index.insertions() as u64 + query_memberships;
        let work = hash_evaluations + insertions + raw;
        let report = complexity_report(self.tree.len(), &self.stats.with_bands(n_bands), &self.dims, &CostModel::default())?;
        Ok(MetricsRecord {
            method: Method::Forest.name().into(),
            n: data.xs.len() as u64,
            m: data.ys.len() as u64,
            s: self.dims.s,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            n_bands,
            recall,
            recall_std_err,
            predicted_tp: Some(crate::tree::true_positive_rate(self.stats.alpha, n_bands).as_f64()),
            raw_positives: raw,
            distinct_candidates: distinct,
            candidates_per_query: distinct as f64 / data.ys.len().max(1) as f64,
            hash_evaluations,
            insertions,
            work,
            work_exponent: (work as f64).ln() / (data.xs.len().max(2) as f64).ln(),
            lambda: Some(self.params.lambda.as_f64()),
            n_nodes: Some(self.tree.len()),
            n_buckets: Some(self.tree.buckets.len()),
            alpha: Some(self.stats.alpha.as_f64()),
            beta: Some(self.stats.beta.as_f64()),
            gamma_a: Some(self.stats.gamma_a.as_f64()),
            gamma_b: Some(self.stats.gamma_b.as_f64()),
            predicted_cost: Some(report.total_banded),
            lower_bound: Some(lower_bound_functional(&self.stats, &self.params).as_f64()),
            capped_mass: Some(self.stats.capped_mass.as_f64()),
            ..Default::default()
        })
    }
}

/// Fraction of planted pairs reported, among those the exact scan reports,
/// with its binomial standard error.
pub fn planted_recall<T: Real>(data: &PairedDataset, jd: &JointDistribution<T>, delta: f64, found: impl Fn(u32, u32) -> bool) -> Result<(f64, f64)> {
    let threshold = crate::query::log_threshold::<T>(delta)?;
    let eligible: Vec<&(u32, u32)> = data
        .planted
        .iter()
        .filter(|&&(x, y)| crate::query::passes(jd.log_likelihood_unchecked(&data.xs[x as usize], &data.ys[y as usize]), threshold))
        .collect();
    if eligible.is_empty() {
        return Ok((1.0, 0.0));
    }
    let n = eligible.len() as f64;
    let r = eligible.iter().filter(|&&&(x, y)| found(x, y)).count() as f64 / n;
    Ok((r, (r * (1.0 - r) / n).sqrt()))
}

pub fn run_brute<T: Real>(jd: &JointDistribution<T>, data: &PairedDataset, delta: f64) -> Result<MetricsRecord> {
    let start = Instant::now();
    let results: Vec<_> = data
        .ys
        .par_iter()
        .enumerate()
        .map(|(q, y)| brute_force(&data.xs, q, y, jd, delta))
        .collect::<Result<_>>()?;
    let found = |x: u32, y: u32| results[y as usize].hits.binary_search_by_key(&x, |h| h.0).is_ok();
    let (recall, recall_std_err) = planted_recall(data, jd, delta, found)?;
    let checks = (data.xs.len() * data.ys.len()) as u64;
    Ok(MetricsRecord {
        method: Method::Brute.name().into(),
        n: data.xs.len() as u64,
        m: data.ys.len() as u64,
        s: data.xs.first().map_or(0, Vec::len),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        n_bands: 1,
        recall,
        recall_std_err,
        raw_positives: checks,
        distinct_candidates: checks,
        candidates_per_query: data.xs.len() as f64,
        work: checks,
        work_exponent: (checks as f64).ln() / (data.xs.len().max(2) as f64).ln(),
        ..Default::default()
    })
}

pub fn run_banded<T: Real>(method: SignatureMethod, jd: &JointDistribution<T>, data: &PairedDataset, tp_target: f64, seed: u64, limits: &BandedLimits) -> Result<MetricsRecord> {
    let start = Instant::now();
    let s = banded_signature_search(method, &data.xs, &data.ys, &data.planted, jd, tp_target, seed, limits)?;
    let n = data.planted.len().max(1) as f64;
    Ok(MetricsRecord {
        method: match method {
            SignatureMethod::MinHash => Method::MinHash.name().into(),
            SignatureMethod::LshHamming => Method::LshHamming.name().into(),
        },
        n: data.xs.len() as u64,
        m: data.ys.len() as u64,
        s: data.xs.first().map_or(0, Vec::len),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        n_bands: s.n_bands,
        recall: s.recall,
        recall_std_err: (s.recall * (1.0 - s.recall) / n).sqrt(),
        predicted_tp: Some(1.0 - (1.0 - s.p_true.powi(s.n_rows as i32)).powi(s.n_bands as i32)),
        raw_positives: s.raw_positives,
        distinct_candidates: s.distinct_candidates,
        candidates_per_query: s.distinct_candidates as f64 / data.ys.len().max(1) as f64,
        hash_evaluations: s.hash_evaluations,
        insertions: s.insertions,
        work: s.work,
        work_exponent: (s.work as f64).ln() / (data.xs.len().max(2) as f64).ln(),
        ..Default::default()
    })
}

/// One row of a threshold sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub thresholds: Thresholds,
    pub n_nodes: Option<usize>,
    pub alpha: Option<f64>,
    pub n_bands: Option<usize>,
    pub predicted_cost: Option<f64>,
    pub measured_work: Option<u64>,
    pub measured_recall: Option<f64>,
    pub error: Option<String>,
}

/// Held-out pairs for scoring a sweep by measured work.
#[derive(Clone, Copy, Debug)]
pub struct Validation<'a> {
    pub data: &'a PairedDataset,
    pub seed: u64,
    /// Rows whose measured recall falls below this are not eligible.
    pub min_recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweepOutcome {
    pub best: Thresholds,
    pub rows: Vec<ThresholdRow>,
}

/// Builds a tree per threshold setting and keeps the cheapest: measured work
/// on `validation` when given, predicted cost otherwise. With validation,
/// only rows reaching its recall floor are eligible. Ties go to the larger `C1`.
#[allow(clippy::too_many_arguments)]
pub fn threshold_sweep<T: Real>(
    jd: &JointDistribution<T>,
    dims: &ProblemDims,
    params: &HashParams<T>,
    grid: &[Thresholds],
    tree_cfg: &TreeConfig,
    tp_target: T,
    cost: &CostModel,
    validation: Option<Validation<'_>>,
) -> Result<ThresholdSweepOutcome> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("threshold grid is empty".into()));
    }
    let rows: Vec<(ThresholdRow, Option<f64>, bool)> = grid
        .par_iter()
        .map(|&th| {
            let cfg = TreeConfig { thresholds: th, ..*tree_cfg };
            let attempt = || -> Result<(ThresholdRow, f64, bool)> {
                let tree = build_tree(jd, params, dims, &cfg)?;
                let stats = family_stats(&tree, tp_target)?;
                let report = complexity_report(tree.len(), &stats, dims, cost)?;
                let measured = match validation {
                    Some(v) => {
                        let model = ForestModel {
                            jd: jd.clone(),
                            dims: *dims,
                            params: params.clone(),
                            tree: tree.clone(),
                            stats: stats.clone(),
                        };
                        Some(model.run(v.data, stats.n_bands, 0.0, v.seed)?)
                    }
                    None => None,
                };
                let score = measured.as_ref().map_or(report.total_banded, |r| r.work as f64);
                let eligible = match (&measured, validation) {
                    (Some(r), Some(v)) => r.recall >= v.min_recall,
                    _ => true,
                };
                Ok((
                    ThresholdRow {
                        thresholds: th,
                        n_nodes: Some(tree.len()),
                        alpha: Some(stats.alpha.as_f64()),
                        n_bands: Some(stats.n_bands),
                        predicted_cost: Some(report.total_banded),
                        measured_work: measured.as_ref().map(|r| r.work),
                        measured_recall: measured.as_ref().map(|r| r.recall),
                        error: None,
                    },
                    score,
                    eligible,
                ))
            };
            match attempt() {
                Ok((row, score, eligible)) => (row, Some(score), eligible),
                Err(e) => (
                    ThresholdRow {
                        thresholds: th,
                        n_nodes: None,
                        alpha: None,
                        n_bands: None,
                        predicted_cost: None,
                        measured_work: None,
                        measured_recall: None,
                        error: Some(e.to_string()),
                    },
                    None,
                    false,
                ),
            }
        })
        .collect();
    let best = rows
        .iter()
        .filter(|(_, _, eligible)| *eligible)
        .filter_map(|(row, score, _)| score.map(|s| (row.thresholds, s)))
        .min_by(|(a, sa), (b, sb)| sa.total_cmp(sb).then(b.log_c1.total_cmp(&a.log_c1)))
        .map(|(t, _)| t)
        .ok_or(Error::AllBuildsFailed)?;
    Ok(ThresholdSweepOutcome {
        best,
        rows: rows.into_iter().map(|(r, ..)| r).collect(),
    })
}

/// A single sweep point, resolved.
#[derive(Clone, Debug)]
struct Point {
    label: Option<(String, f64)>,
    model: ModelSource,
    n: u64,
    m: u64,
    n_bands: Option<usize>,
    epsilon: Option<f64>,
}

fn points(cfg: &ExperimentConfig) -> Vec<Point> {
    let base = Point {
        label: None,
        model: cfg.model.clone(),
        n: cfg.n,
        m: cfg.m,
        n_bands: cfg.n_bands,
        epsilon: None,
    };
    let with = |name: &str, v: f64, f: &dyn Fn(&mut Point)| {
        let mut p = base.clone();
        p.label = Some((name.to_string(), v));
        f(&mut p);
        p
    };
    match &cfg.sweep {
        None => vec![base.clone()],
        Some(Sweep::N { values }) => values
            .iter()
            .map(|&n| {
                with("n", n as f64, &|p| {
                    p.m = ((n as f64) * cfg.m as f64 / cfg.n as f64).round().max(1.0) as u64;
                    p.n = n;
                })
            })
            .collect(),
        Some(Sweep::T { values }) => values
            .iter()
            .map(|&t| with("t", t, &|p| p.model = ModelSource::Interpolate { t }))
            .collect(),
        Some(Sweep::Bands { values }) => values
            .iter()
            .map(|&b| with("bands", b as f64, &|p| p.n_bands = Some(b)))
            .collect(),
        Some(Sweep::Noise { epsilons }) => epsilons
            .iter()
            .map(|&e| with("epsilon", e, &|p| p.epsilon = Some(e)))
            .collect(),
        Some(Sweep::Dubiner { ps }) => ps
            .iter()
            .map(|&v| with("p", v, &|p| p.model = ModelSource::Hamming { p: v }))
            .collect(),
    }
}

struct PointOutput {
    records: Vec<MetricsRecord>,
    tree_row: Option<Vec<f64>>,
}

fn run_point(cfg: &ExperimentConfig, point: &Point, index: usize) -> Result<PointOutput> {
    let jd = point.model.load::<f64>()?;
    let dims = ProblemDims::new(point.n, point.m, cfg.s)?;
    let seed = cfg.seed.wrapping_add(index as u64);
    let solver = cfg.solver.config::<f64>()?;
    let mut records = Vec::new();
    let mut tree_row = None;

    if let Some(Sweep::Dubiner { .. }) = cfg.sweep {
        let p = point.label.as_ref().map_or(0.0, |l| l.1);
        let params = solve_params(&jd, &dims, &solver)?;
        let dub = dubiner_hamming_exact(p, point.n, cfg.s)?;
        tree_row = Some(vec![p, params.lambda, dub.exponent, dub.d0 as f64]);
        return Ok(PointOutput { records, tree_row });
    }
    if cfg.methods.is_empty() {
        return Ok(PointOutput { records, tree_row });
    }

    let data_model = match point.epsilon {
        Some(e) => perturb(&jd, e, seed)?,
        None => jd.clone(),
    };
    let data = generate_pairs(&data_model, point.n as usize, point.m as usize, cfg.s, seed)?;
    let label = |mut r: MetricsRecord| {
        if let Some((name, v)) = &point.label {
            r.sweep = Some(name.clone());
            r.sweep_value = Some(*v);
        }
        r
    };

    for method in &cfg.methods {
        match method {
            Method::Forest => {
                let model = ForestModel::build(&jd, &dims, &solver, &cfg.thresholds, &cfg.tree_config(Thresholds::from_logs(0.0, 0.0, 0.0)), cfg.tp_target)?;
                let mc = if cfg.skip_cross_validation {
                    None
                } else {
                    Some(model.cross_validate(cfg.mc_samples, seed, 3.0)?)
                };
                let bands = match (point.n_bands, point.epsilon) {
                    (Some(b), _) => b,
                    (None, Some(e)) => model.noise_bands(e)?,
                    (None, None) => model.stats.n_bands,
                };
                let mut r = model.run(&data, bands, cfg.delta, seed)?;
                if let Some(mc) = mc {
                    r.alpha_mc = Some(mc.alpha.mean);
                    r.beta_mc = Some(mc.beta.mean);
                    r.gamma_a_mc = Some(mc.gamma_a.mean);
                    r.gamma_b_mc = Some(mc.gamma_b.mean);
                }
                let s = &model.stats;
                let bound = match point.epsilon {
                    Some(e) => noise_complexity_bound(&model.params, &jd, e).unwrap_or(f64::NAN),
                    None => model.params.lambda,
                };
                tree_row = Some(vec![
                    point.label.as_ref().map_or(point.n as f64, |l| l.1),
                    point.n as f64,
                    model.tree.len() as f64,
                    (s.log_alpha - s.log_beta).exp(),
                    (s.log_alpha - s.log_gamma_a).exp(),
                    (s.log_alpha - s.log_gamma_b).exp(),
                    model.params.lambda,
                    bands as f64,
                    r.recall,
                    r.predicted_tp.unwrap_or(f64::NAN),
                    r.work as f64,
                    bound,
                ]);
                records.push(label(r));
            }
            Method::Brute => records.push(label(run_brute(&jd, &data, cfg.delta)?)),
            Method::MinHash => records.push(label(run_banded(SignatureMethod::MinHash, &jd, &data, cfg.tp_target, seed, &cfg.banded_limits)?)),
            Method::LshHamming => records.push(label(run_banded(SignatureMethod::LshHamming, &jd, &data, cfg.tp_target, seed, &cfg.banded_limits)?)),
        }
    }
    Ok(PointOutput { records, tree_row })
}

const FOREST_COLUMNS: [&str; 12] = [
    "x",
    "n",
    "nodes",
    "alpha_over_beta",
    "alpha_over_gamma_a",
    "alpha_over_gamma_b",
    "lambda",
    "bands",
    "recall",
    "predicted_tp",
    "work",
    "exponent_bound",
];

/// Runs every sweep point in parallel and writes results in point order.
/// Points that finished before a failure are still written.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let pts = points(cfg);
    let outcomes: Vec<Result<PointOutput>> = pts
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            run_point(cfg, p, i).map_err(|e| match &p.label {
                Some((name, v)) => e.context(format!("{} at {name} = {v}", cfg.name)),
                None => e.context(cfg.name.clone()),
            })
        })
        .collect();

    let mut out = ExperimentOutput::default();
    let mut table = match cfg.sweep {
        Some(Sweep::Dubiner { .. }) => Table::new("dubiner", &["p", "lambda", "dubiner", "d0"]),
        _ => Table::new(sweep_name(cfg), &FOREST_COLUMNS),
    };
    let mut failure = None;
    for outcome in outcomes {
        match outcome {
            Ok(p) => {
                out.records.extend(p.records);
                table.rows.extend(p.tree_row);
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    if matches!(cfg.sweep, Some(Sweep::N { .. })) && table.rows.len() >= 2 {
        let ln = |name: &str| table.column(name).unwrap().iter().map(|v| v.ln()).collect::<Vec<f64>>();
        let x = ln("n");
        for name in ["nodes", "alpha_over_beta", "alpha_over_gamma_a", "alpha_over_gamma_b", "work"] {
            out.slopes.push((name.to_string(), fit_slope(&x, &ln(name))));
        }
    }
    if !table.rows.is_empty() {
        out.tables.push(table);
    }
    if let Some(dir) = &cfg.output_dir {
        write_outputs(dir, cfg, &out)?;
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

fn sweep_name(cfg: &ExperimentConfig) -> &'static str {
    match cfg.sweep {
        None => "point",
        Some(Sweep::N { .. }) => "scaling",
        Some(Sweep::T { .. }) => "interpolation",
        Some(Sweep::Bands { .. }) => "bands",
        Some(Sweep::Noise { .. }) => "noise",
        Some(Sweep::Dubiner { .. }) => "dubiner",
    }
}

/// `metrics.jsonl`, `metrics.csv`, one CSV per table and `summary.json`.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, out: &ExperimentOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut jsonl = fs::File::create(dir.join("metrics.jsonl"))?;
    for r in &out.records {
        writeln!(jsonl, "{}", serde_json::to_string(r)?)?;
    }
    let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
    for r in &out.records {
        w.serialize(r)?;
    }
    w.flush()?;
    for t in &out.tables {
        t.write_csv(dir.join(format!("{}.csv", t.name)))?;
    }
    let summary = serde_json::json!({
        "config": cfg,
        "slopes": out.slopes,
        "records": out.records.len(),
    });
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

/// `c_d` for reporting alongside the noise bound.
pub fn depth_constant_of<T: Real>(model: &ForestModel<T>) -> Result<T> {
    depth_constant(model.params.lambda, model.params.delta, &model.jd)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_method_list_is_a_no_op() {
        let cfg = ExperimentConfig {
            methods: vec![],
            ..Default::default()
        };
        let out = run_experiment(&cfg).unwrap();
        assert!(out.records.is_empty());
        assert!(out.tables.is_empty());
    }

    #[test]
    fn configs_parse_from_json_and_toml() {
        let dir = tempfile::tempdir().unwrap();
        let json = dir.path().join("c.json");
        fs::write(&json, r#"{"model": {"kind": "fixture", "name": "example"}, "n": 50, "m": 50, "s": 20, "methods": ["forest", "brute"], "sweep": {"kind": "n", "values": [16, 32]}}"#).unwrap();
        let cfg = ExperimentConfig::load(&json).unwrap();
        assert_eq!(cfg.methods, vec![Method::Forest, Method::Brute]);
        assert_eq!(cfg.sweep, Some(Sweep::N { values: vec![16, 32] }));
        let toml_path = dir.path().join("c.toml");
        fs::write(&toml_path, "n = 64\nm = 64\ns = 10\nmethods = []\n[model]\nkind = \"hamming\"\np = 0.9\n[thresholds]\nkind = \"scaled\"\nc1 = 10.0\nc2 = 10.0\nc3 = 10.0\n").unwrap();
        let cfg = ExperimentConfig::load(&toml_path).unwrap();
        assert_eq!(cfg.model, ModelSource::Hamming { p: 0.9 });
        let bad = dir.path().join("bad.json");
        fs::write(&bad, r#"{"tp_target": 1.5}"#).unwrap();
        assert!(ExperimentConfig::load(&bad).unwrap_err().is_validation());
    }

    #[test]
    fn single_point_grid_returns_itself() {
        let jd = fixtures::example::<f64>();
        let dims = ProblemDims::new(5, 5, 8).unwrap();
        let params = solve_params(&jd, &dims, &SolverConfig::default()).unwrap();
        let th = Thresholds::default_for(&params);
        let out = threshold_sweep(&jd, &dims, &params, &[th], &TreeConfig::new(th, 8), 0.99, &CostModel::default(), None).unwrap();
        assert_eq!(out.best, th);
        let hopeless = Thresholds::new(1e9, 1e-9, 1e-9).unwrap();
        let err = threshold_sweep(&jd, &dims, &params, &[hopeless], &TreeConfig::new(hopeless, 3), 0.99, &CostModel::default(), None).unwrap_err();
        assert!(matches!(err, Error::AllBuildsFailed));
    }

    #[test]
    fn validation_recall_floor() {
        let jd = fixtures::p_of_t::<f64>(0.25).unwrap();
        let dims = ProblemDims::new(200, 200, 300).unwrap();
        let params = solve_params(&jd, &dims, &SolverConfig::default()).unwrap();
        let base = Thresholds::default_for(&params);
        let grid: Vec<Thresholds> = [5.0, 6.0]
            .iter()
            .map(|&o| Thresholds::from_logs(base.log_c1 + o, base.log_c2 + o, base.log_c3 + o))
            .collect();
        let data = generate_pairs(&jd, 200, 200, 300, 4).unwrap();
        let cfg = TreeConfig::new(base, 300);
        let open = Validation { data: &data, seed: 1, min_recall: 0.0 };
        let out = threshold_sweep(&jd, &dims, &params, &grid, &cfg, 0.99, &CostModel::default(), Some(open)).unwrap();
        assert!(out.rows.iter().all(|r| r.measured_recall.is_some() && r.measured_work.is_some()));
        let closed = Validation { min_recall: 1.1, ..open };
        let err = threshold_sweep(&jd, &dims, &params, &grid, &cfg, 0.99, &CostModel::default(), Some(closed)).unwrap_err();
        assert!(matches!(err, Error::AllBuildsFailed));
    }

    #[test]
    fn example_grid_table() {
        let jd = fixtures::example::<f64>();
        let dims = ProblemDims::new(5, 5, 12).unwrap();
        let mut params = solve_params(&jd, &dims, &SolverConfig::default()).unwrap();
        params.lambda = 1.72;
        let grid: Vec<Thresholds> = [0.5, 0.8, 1.0].iter().map(|&c| Thresholds::uniform(c).unwrap()).collect();
        let out = threshold_sweep(&jd, &dims, &params, &grid, &TreeConfig::new(grid[0], 12), 0.99, &CostModel::default(), None).unwrap();
        assert_eq!(out.rows.len(), 3);
        for row in &out.rows {
            assert!(row.n_nodes.is_some() && row.alpha.is_some() && row.predicted_cost.is_some());
        }
        let best_cost = out.rows.iter().filter_map(|r| r.predicted_cost).fold(f64::INFINITY, f64::min);
        let chosen = out.rows.iter().find(|r| r.thresholds == out.best).unwrap();
        assert_eq!(chosen.predicted_cost, Some(best_cost));
    }

    #[test]
    fn small_end_to_end_run() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            model: ModelSource::Interpolate { t: 0.25 },
            n: 200,
            m: 200,
            s: 200,
            methods: vec![Method::Forest, Method::Brute, Method::LshHamming, Method::MinHash],
            thresholds: ThresholdSpec::Scaled { c1: 100.0, c2: 100.0, c3: 100.0 },
            sweep: Some(Sweep::Bands { values: vec![1, 4] }),
            mc_samples: 20_000,
            output_dir: Some(dir.path().to_path_buf()),
            ..Default::default()
        };
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.records.len(), 8);
        let forest: Vec<&MetricsRecord> = out.records.iter().filter(|r| r.method == "forest").collect();
        assert!(forest[1].recall >= forest[0].recall);
        assert!(forest[1].work > forest[0].work);
        assert!(dir.path().join("metrics.jsonl").exists());
        assert!(dir.path().join("bands.csv").exists());
        let again = run_experiment(&cfg).unwrap();
        let strip = |rs: &[MetricsRecord]| rs.iter().map(|r| MetricsRecord { wall_ms: 0.0, ..r.clone() }).collect::<Vec<_>>();
        assert_eq!(strip(&out.records), strip(&again.records));
    }
}
