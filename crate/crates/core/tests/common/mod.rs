#![allow(dead_code)]

use forest_dsh::distribution::{JointDistribution, ProblemDims, Symbol};
use forest_dsh::sampling::rng_for;
use forest_dsh::solver::{solve_params, HashParams, SolverConfig};
use forest_dsh::tree::{build_tree, DecisionTree, Thresholds, TreeConfig};
use rand::Rng;

pub fn coarse_solver() -> SolverConfig<f64> {
    SolverConfig::uniform(10.0, 0.5, 0.05)
}

/// A `k×l` distribution with every row and column nonzero; some cells may be zero.
pub fn random_distribution(rng: &mut impl Rng, k: usize, l: usize, zero_rate: f64) -> JointDistribution<f64> {
    loop {
        let rows: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                (0..l)
                    .map(|_| if rng.random_bool(zero_rate) { 0.0 } else { rng.random_range(0.05..1.0) })
                    .collect()
            })
            .collect();
        let row_ok = rows.iter().all(|r| r.iter().any(|&v| v > 0.0));
        let col_ok = (0..l).all(|j| rows.iter().any(|r| r[j] > 0.0));
        let cells = rows.iter().flatten().filter(|&&v| v > 0.0).count();
        if row_ok && col_ok && cells >= 2 {
            if let Ok(jd) = JointDistribution::from_weight_rows(&rows) {
                return jd;
            }
        }
    }
}

pub struct RandomTree {
    pub jd: JointDistribution<f64>,
    pub dims: ProblemDims,
    pub params: HashParams<f64>,
    pub tree: DecisionTree<f64>,
}

/// A solved tree with at most `max_buckets` buckets, or `None` when this
/// seed's draw does not give one.
pub fn random_tree(seed: u64, s: usize, max_buckets: usize) -> Option<RandomTree> {
    let mut rng = rng_for(seed, 7);
    let k = rng.random_range(2..=3);
    let l = rng.random_range(2..=3);
    let jd = random_distribution(&mut rng, k, l, 0.2);
    let n = rng.random_range(20..2000u64);
    let m = rng.random_range(20..2000u64);
    let dims = ProblemDims::new(n, m, s).ok()?;
    let params = solve_params(&jd, &dims, &coarse_solver()).ok()?;
    let th = Thresholds::default_for(&params);
    let scale = rng.random_range(0.0..4.0f64) * std::f64::consts::LN_10;
    let th = Thresholds::from_logs(th.log_c1 + scale, th.log_c2 + scale * 0.5, th.log_c3 + scale * 0.5);
    let cfg = TreeConfig::new(th, s).with_max_nodes(20 * max_buckets);
    let tree = build_tree(&jd, &params, &dims, &cfg).ok()?;
    (tree.buckets.len() <= max_buckets).then_some(RandomTree { jd, dims, params, tree })
}

pub fn random_sequence(rng: &mut impl Rng, alphabet: usize, s: usize) -> Vec<Symbol> {
    (0..s).map(|_| rng.random_range(0..alphabet) as Symbol).collect()
}

/// Buckets whose `side` sequence is a prefix of `seq`, by direct comparison.
pub fn brute_prefix(tree: &DecisionTree<f64>, a_side: bool, seq: &[Symbol]) -> Vec<u32> {
    let mut out: Vec<u32> = tree
        .buckets
        .iter()
        .copied()
        .filter(|&b| {
            let p = if a_side { tree.seq_a(b) } else { tree.seq_b(b) };
            p.len() <= seq.len() && p[..] == seq[..p.len()]
        })
        .collect();
    out.sort_unstable();
    out
}

pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    forest_dsh::bench::fit_slope(xs, ys)
}
