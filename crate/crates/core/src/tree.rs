//! Decision-tree hash family: construction, bucket statistics and cost model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::distribution::{JointDistribution, ProblemDims, Symbol};
use crate::error::{Error, Result};
use crate::sampling::{rng_for, PairSampler};
use crate::scalar::{ceil_tolerant, log_sum_exp, Real};
use crate::solver::HashParams;

pub type NodeId = u32;

pub const ROOT: NodeId = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeStatus {
    Bucket,
    Pruned,
    Internal,
}

/// Which side of a pair a sequence belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct TreeNode<T> {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub depth: u32,
    /// Symbol pair on the edge from the parent.
    pub edge: Option<(Symbol, Symbol)>,
    pub log_phi: T,
    pub log_psi_a: T,
    pub log_psi_b: T,
    pub status: NodeStatus,
    /// Sorted by edge pair; zero-probability pairs never appear.
    pub children: Vec<NodeId>,
}

impl<T: Real> TreeNode<T> {
    pub fn log_psi(&self) -> T {
        self.log_psi_a + self.log_psi_b
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Accept/prune constants `C1, C2, C3`, held as logarithms so that
/// `p0·q0` on large alphabets does not underflow.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub log_c1: f64,
    pub log_c2: f64,
    pub log_c3: f64,
}

impl Thresholds {
    pub fn new(c1: f64, c2: f64, c3: f64) -> Result<Self> {
        for (name, c) in [("C1", c1), ("C2", c2), ("C3", c3)] {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {c}")));
            }
        }
        Ok(Self::from_logs(c1.ln(), c2.ln(), c3.ln()))
    }

    pub fn from_logs(log_c1: f64, log_c2: f64, log_c3: f64) -> Self {
        Self {
            log_c1,
            log_c2,
            log_c3,
        }
    }

    pub fn uniform(c: f64) -> Result<Self> {
        Self::new(c, c, c)
    }

    /// `C1 = C2 = C3 = p0·q0`.
    pub fn default_for<T: Real>(params: &HashParams<T>) -> Self {
        let c = (params.log_p0 + params.log_q0).as_f64();
        Self::from_logs(c, c, c)
    }

    /// Every constant multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let s = factor.ln();
        Self::from_logs(self.log_c1 + s, self.log_c2 + s, self.log_c3 + s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub thresholds: Thresholds,
    pub max_depth: usize,
    pub max_nodes: usize,
}

impl TreeConfig {
    pub const DEFAULT_MAX_NODES: usize = 5_000_000;

    pub fn new(thresholds: Thresholds, max_depth: usize) -> Self {
        Self {
            thresholds,
            max_depth,
            max_nodes: Self::DEFAULT_MAX_NODES,
        }
    }

    pub fn with_max_nodes(mut self, max_nodes: usize) -> Self {
        self.max_nodes = max_nodes;
        self
    }
}

/// Log-domain right-hand sides of the three node rules.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RuleBounds<T> {
    pub accept: T,
    pub prune_a: T,
    pub prune_b: T,
}

impl<T: Real> RuleBounds<T> {
    pub fn new(thresholds: &Thresholds, lambda: T, dims: &ProblemDims) -> Self {
        let log_n = T::lit(dims.log_n());
        let delta = T::lit(dims.delta());
        let one = T::one();
        Self {
            accept: T::lit(thresholds.log_c1) + (one + delta - lambda) * log_n,
            prune_a: T::lit(thresholds.log_c2) + (one - lambda) * log_n,
            prune_b: T::lit(thresholds.log_c3) + (delta - lambda) * log_n,
        }
    }

    /// Status of a freshly created node. Accept wins ties with prune.
    pub fn classify(&self, log_phi: T, log_psi_a: T, log_psi_b: T) -> NodeStatus {
        if log_phi - log_psi_a - log_psi_b >= self.accept {
            NodeStatus::Bucket
        } else if log_phi - log_psi_a <= self.prune_a || log_phi - log_psi_b <= self.prune_b {
            NodeStatus::Pruned
        } else {
            NodeStatus::Internal
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct DecisionTree<T> {
    pub nodes: Vec<TreeNode<T>>,
    pub buckets: Vec<NodeId>,
    pub thresholds: Thresholds,
    pub params: HashParams<T>,
    pub dims: ProblemDims,
    pub k: usize,
    pub l: usize,
    /// Effective depth cap, `min(S, max_depth)`.
    pub max_depth: usize,
    /// Leaves forced to `Pruned` by the depth cap.
    pub capped_leaves: usize,
    /// `log Σ Φ` over depth-capped leaves.
    pub log_capped_mass: T,
}

impl<T: Real> DecisionTree<T> {
    fn empty(jd: &JointDistribution<T>, params: &HashParams<T>, dims: &ProblemDims, thresholds: Thresholds, max_depth: usize) -> Self {
        Self {
            nodes: vec![TreeNode {
                id: ROOT,
                parent: None,
                depth: 0,
                edge: None,
                log_phi: T::zero(),
                log_psi_a: T::zero(),
                log_psi_b: T::zero(),
                status: NodeStatus::Internal,
                children: Vec::new(),
            }],
            buckets: Vec::new(),
            thresholds,
            params: params.clone(),
            dims: *dims,
            k: jd.k(),
            l: jd.l(),
            max_depth,
            capped_leaves: 0,
            log_capped_mass: T::neg_infinity(),
        }
    }

    /// Degenerate family whose only bucket is the root: every pair collides.
    pub fn root_bucket(jd: &JointDistribution<T>, params: &HashParams<T>, dims: &ProblemDims) -> Self {
        let mut tree = Self::empty(jd, params, dims, Thresholds::default_for(params), dims.s);
        tree.nodes[0].status = NodeStatus::Bucket;
        tree.buckets.push(ROOT);
        tree
    }

    /// Tree whose buckets sit at the ends of the given edge paths. Intermediate
    /// nodes are created as needed; no path may extend another.
    pub fn from_bucket_paths(
        jd: &JointDistribution<T>,
        params: &HashParams<T>,
        dims: &ProblemDims,
        paths: &[Vec<(Symbol, Symbol)>],
    ) -> Result<Self> {
        let max_len = paths.iter().map(Vec::len).max().unwrap_or(0);
        let mut tree = Self::empty(jd, params, dims, Thresholds::default_for(params), max_len.max(dims.s));
        let mut index: BTreeMap<(NodeId, (Symbol, Symbol)), NodeId> = BTreeMap::new();
        for path in paths {
            let mut at = ROOT;
            for &(a, b) in path {
                if tree.nodes[at as usize].status == NodeStatus::Bucket {
                    return Err(Error::InvalidArgument("bucket path extends another bucket".into()));
                }
                if a as usize >= jd.k() || b as usize >= jd.l() || jd.p(a as usize, b as usize) <= T::zero() {
                    return Err(Error::InvalidArgument(format!("edge ({a}, {b}) has no mass")));
                }
                at = match index.get(&(at, (a, b))) {
                    Some(&c) => c,
                    None => {
                        let c = tree.push_child(jd, at, a, b, NodeStatus::Internal);
                        index.insert((at, (a, b)), c);
                        c
                    }
                };
            }
            let node = &mut tree.nodes[at as usize];
            if node.status == NodeStatus::Bucket || !node.children.is_empty() {
                return Err(Error::InvalidArgument("bucket paths must be prefix-free".into()));
            }
            node.status = NodeStatus::Bucket;
            tree.buckets.push(at);
        }
        if tree.buckets.is_empty() {
            return Err(Error::EmptyBucketSet);
        }
        tree.sort_children();
        tree.buckets.sort_unstable();
        Ok(tree)
    }

    fn push_child(&mut self, jd: &JointDistribution<T>, parent: NodeId, a: Symbol, b: Symbol, status: NodeStatus) -> NodeId {
        let id = self.nodes.len() as NodeId;
        let p = &self.nodes[parent as usize];
        let (i, j) = (a as usize, b as usize);
        let node = TreeNode {
            id,
            parent: Some(parent),
            depth: p.depth + 1,
            edge: Some((a, b)),
            log_phi: p.log_phi + jd.p(i, j).ln(),
            log_psi_a: p.log_psi_a + jd.pa(i).ln(),
            log_psi_b: p.log_psi_b + jd.pb(j).ln(),
            status,
            children: Vec::new(),
        };
        self.nodes.push(node);
        self.nodes[parent as usize].children.push(id);
        id
    }

    fn sort_children(&mut self) {
        let edges: Vec<(Symbol, Symbol)> = self.nodes.iter().map(|n| n.edge.unwrap_or((0, 0))).collect();
        for node in self.nodes.iter_mut() {
            node.children.sort_by_key(|&c| edges[c as usize]);
        }
    }

    pub fn node(&self, id: NodeId) -> &TreeNode<T> {
        &self.nodes[id as usize]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode<T>> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    /// Edge pairs from the root down to `id`.
    pub fn path(&self, id: NodeId) -> Vec<(Symbol, Symbol)> {
        let mut out = Vec::with_capacity(self.node(id).depth as usize);
        let mut at = id;
        while let Some(e) = self.node(at).edge {
            out.push(e);
            at = self.node(at).parent.expect("non-root node has a parent");
        }
        out.reverse();
        out
    }

    pub fn seq_a(&self, id: NodeId) -> Vec<Symbol> {
        self.path(id).into_iter().map(|(a, _)| a).collect()
    }

    pub fn seq_b(&self, id: NodeId) -> Vec<Symbol> {
        self.path(id).into_iter().map(|(_, b)| b).collect()
    }

    pub fn max_bucket_depth(&self) -> usize {
        self.buckets
            .iter()
            .map(|&b| self.node(b).depth as usize)
            .max()
            .unwrap_or(0)
    }

    /// `log Σ Φ` over all leaves, bucket or pruned.
    pub fn log_leaf_mass(&self) -> T {
        log_sum_exp(self.leaves().map(|n| n.log_phi))
    }

    /// Appends every bucket whose sequence on `side` is a prefix of the
    /// sequence read through `symbol_at`, which has `len` positions.
    pub fn collect_prefix_buckets<F>(&self, side: Side, len: usize, symbol_at: F, out: &mut Vec<NodeId>)
    where
        F: Fn(usize) -> Symbol,
    {
        let mut stack = vec![ROOT];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id as usize];
            match node.status {
                NodeStatus::Bucket => out.push(id),
                NodeStatus::Pruned => {}
                NodeStatus::Internal => {
                    let d = node.depth as usize;
                    if d >= len {
                        continue;
                    }
                    let want = symbol_at(d);
                    match side {
                        Side::A => {
                            let lo = node.children.partition_point(|&c| self.edge_of(c).0 < want);
                            for &c in node.children[lo..].iter().take_while(|&&c| self.edge_of(c).0 == want) {
                                stack.push(c);
                            }
                        }
                        Side::B => {
                            for &c in &node.children {
                                if self.edge_of(c).1 == want {
                                    stack.push(c);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Buckets reached by `seq` on `side`, sorted.
    pub fn prefix_buckets(&self, side: Side, seq: &[Symbol]) -> Vec<NodeId> {
        let mut out = Vec::new();
        self.collect_prefix_buckets(side, seq.len(), |s| seq[s], &mut out);
        out.sort_unstable();
        out
    }

    /// The bucket reached by a pair along its joint path, if any.
    pub fn joint_bucket(&self, x: &[Symbol], y: &[Symbol]) -> Option<NodeId> {
        let len = x.len().min(y.len());
        self.walk(|d| if d < len { Some((x[d], y[d])) } else { None })
    }

    /// Follows the unique path whose edge at depth `d` is `next(d)`.
    fn walk<F: FnMut(usize) -> Option<(Symbol, Symbol)>>(&self, mut next: F) -> Option<NodeId> {
        let mut at = ROOT;
        loop {
            let node = &self.nodes[at as usize];
            match node.status {
                NodeStatus::Bucket => return Some(at),
                NodeStatus::Pruned => return None,
                NodeStatus::Internal => {
                    let edge = next(node.depth as usize)?;
                    let pos = node.children.binary_search_by_key(&edge, |&c| self.edge_of(c)).ok()?;
                    at = node.children[pos];
                }
            }
        }
    }

    #[inline]
    fn edge_of(&self, id: NodeId) -> (Symbol, Symbol) {
        self.nodes[id as usize].edge.expect("child has an edge")
    }
}

/// Builds the tree depth-first from the root. The root itself is never
/// tested; each created child is accepted, pruned or expanded.
pub fn build_tree<T: Real>(
    jd: &JointDistribution<T>,
    params: &HashParams<T>,
    dims: &ProblemDims,
    cfg: &TreeConfig,
) -> Result<DecisionTree<T>> {
    if cfg.max_nodes == 0 {
        return Err(Error::InvalidArgument("max_nodes must be positive".into()));
    }
    if jd.k() != params.r_star.len() || params.r_star.first().map_or(0, Vec::len) != jd.l() {
        return Err(Error::ShapeMismatch("parameters were solved for a different alphabet".into()));
    }
    let max_depth = cfg.max_depth.min(dims.s);
    let rules = RuleBounds::new(&cfg.thresholds, params.lambda, dims);
    let mut tree = DecisionTree::empty(jd, params, dims, cfg.thresholds, max_depth);
    let cells = jd.nonzero_cells();
    let mut capped = Vec::new();

    let mut stack = vec![ROOT];
    while let Some(parent) = stack.pop() {
        let depth = tree.nodes[parent as usize].depth as usize;
        if depth >= max_depth {
            tree.nodes[parent as usize].status = NodeStatus::Pruned;
            tree.capped_leaves += 1;
            capped.push(tree.nodes[parent as usize].log_phi);
            continue;
        }
        if tree.nodes.len() + cells.len() > cfg.max_nodes {
            return Err(Error::NodeBudgetExceeded { limit: cfg.max_nodes });
        }
        let first = tree.nodes.len();
        for c in cells {
            let id = tree.push_child(jd, parent, c.i, c.j, NodeStatus::Internal);
            let n = &mut tree.nodes[id as usize];
            n.status = rules.classify(n.log_phi, n.log_psi_a, n.log_psi_b);
            if n.status == NodeStatus::Bucket {
                tree.buckets.push(id);
            }
        }
        for id in (first..tree.nodes.len()).rev() {
            if tree.nodes[id].status == NodeStatus::Internal {
                stack.push(id as NodeId);
            }
        }
    }
    if tree.buckets.is_empty() {
        return Err(Error::EmptyBucketSet);
    }
    tree.log_capped_mass = log_sum_exp(capped);
    Ok(tree)
}

/// Collision statistics of a built family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct FamilyStats<T> {
    pub alpha: T,
    pub beta: T,
    pub gamma_a: T,
    pub gamma_b: T,
    pub log_alpha: T,
    pub log_beta: T,
    pub log_gamma_a: T,
    pub log_gamma_b: T,
    pub n_bands: usize,
    pub tp_target: T,
    /// `1 − (1−α)^n_bands`.
    pub predicted_tp: T,
    /// True-pair mass lost to the depth cap.
    pub capped_mass: T,
}

impl<T: Real> FamilyStats<T> {
    /// Stats recomputed for an explicit band count.
    pub fn with_bands(&self, n_bands: usize) -> Self {
        Self {
            n_bands,
            predicted_tp: true_positive_rate(self.alpha, n_bands),
            ..self.clone()
        }
    }
}

/// `1 − (1−α)^bands`.
pub fn true_positive_rate<T: Real>(alpha: T, bands: usize) -> T {
    let n = T::lit(bands as f64);
    -(n * (-alpha).ln_1p()).exp_m1()
}

/// Band count `ceil(ln(1/(1−tp)) / α)`. A family with `α = 1` collides every
/// true pair in one band and gets exactly one.
pub fn bands_for<T: Real>(alpha: T, tp_target: T) -> Result<usize> {
    if !(tp_target > T::zero() && tp_target < T::one()) {
        return Err(Error::InvalidArgument(format!("tp_target must be in (0,1), got {tp_target}")));
    }
    if !(alpha > T::zero()) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    if alpha.as_f64() >= 1.0 - crate::distribution::DERIVED_TOLERANCE {
        return Ok(1);
    }
    let needed = (-(-tp_target).ln_1p()).as_f64() / alpha.as_f64();
    Ok(ceil_tolerant(needed).max(1.0) as usize)
}

pub fn family_stats<T: Real>(tree: &DecisionTree<T>, tp_target: T) -> Result<FamilyStats<T>> {
    if tree.buckets.is_empty() {
        return Err(Error::EmptyBucketSet);
    }
    let sum = |f: fn(&TreeNode<T>) -> T| log_sum_exp(tree.buckets.iter().map(|&b| f(tree.node(b))));
    let log_alpha = sum(|n| n.log_phi);
    let log_beta = sum(|n| n.log_psi());
    let log_gamma_a = sum(|n| n.log_psi_a);
    let log_gamma_b = sum(|n| n.log_psi_b);
    let alpha = log_alpha.exp();
    let n_bands = bands_for(alpha, tp_target)?;
    Ok(FamilyStats {
        alpha,
        beta: log_beta.exp(),
        gamma_a: log_gamma_a.exp(),
        gamma_b: log_gamma_b.exp(),
        log_alpha,
        log_beta,
        log_gamma_a,
        log_gamma_b,
        n_bands,
        tp_target,
        predicted_tp: true_positive_rate(alpha, n_bands),
        capped_mass: tree.log_capped_mass.exp(),
    })
}

/// A Monte-Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

impl Estimate {
    /// Mean of Bernoulli draws with the analytic standard error at the truth
    /// `reference`, or at the mean when no reference is given.
    pub fn bernoulli(hits: u64, n: u64, reference: Option<f64>) -> Self {
        let mean = hits as f64 / n as f64;
        let p = reference.unwrap_or(mean);
        Self {
            mean,
            std_err: (p * (1.0 - p) / n as f64).sqrt(),
        }
    }

    pub fn from_samples(sum: f64, sum_sq: f64, n: u64) -> Self {
        let nf = n as f64;
        let mean = sum / nf;
        let var = if n > 1 {
            ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0)
        } else {
            0.0
        };
        Self {
            mean,
            std_err: (var / nf).sqrt(),
        }
    }

    /// Whether `value` lies within `k` standard errors. A zero standard
    /// error requires near equality.
    pub fn agrees(&self, value: f64, k: f64) -> bool {
        let tol = (k * self.std_err).max(1e-12 * value.abs().max(1.0));
        (self.mean - value).abs() <= tol
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloStats {
    pub alpha: Estimate,
    pub beta: Estimate,
    pub gamma_a: Estimate,
    pub gamma_b: Estimate,
    pub n_samples: u64,
}

impl MonteCarloStats {
    /// Whether each estimate is within `k` standard errors of the exact sums.
    /// Bernoulli errors are evaluated at the exact value.
    pub fn agrees_with<T: Real>(&self, exact: &FamilyStats<T>, k: f64) -> bool {
        self.mismatches(exact, k).is_empty()
    }

    /// Names of the quantities that disagree, with both values.
    pub fn mismatches<T: Real>(&self, exact: &FamilyStats<T>, k: f64) -> Vec<String> {
        let n = self.n_samples as f64;
        let bern = |e: &Estimate, p: f64| Estimate {
            mean: e.mean,
            std_err: (p * (1.0 - p) / n).sqrt(),
        };
        [
            ("alpha", bern(&self.alpha, exact.alpha.as_f64()), exact.alpha.as_f64()),
            ("beta", bern(&self.beta, exact.beta.as_f64()), exact.beta.as_f64()),
            ("gamma_a", self.gamma_a, exact.gamma_a.as_f64()),
            ("gamma_b", self.gamma_b, exact.gamma_b.as_f64()),
        ]
        .into_iter()
        .filter(|(_, e, v)| !e.agrees(*v, k))
        .map(|(name, e, v)| format!("{name}: estimate {} ± {} vs exact {v}", e.mean, e.std_err))
        .collect()
    }
}

/// Monte-Carlo estimates of `α, β, γ^A, γ^B`: true pairs for `α`,
/// independent marginal draws for the rest.
pub fn estimate_family_stats<T: Real>(
    tree: &DecisionTree<T>,
    jd: &JointDistribution<T>,
    n_samples: u64,
    seed: u64,
) -> Result<MonteCarloStats> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    let sampler = PairSampler::new(jd)?;
    let depth = tree.max_bucket_depth();

    let mut rng = rng_for(seed, 0);
    let alpha_hits = (0..n_samples)
        .filter(|_| tree.walk(|_| Some(sampler.joint(&mut rng))).is_some())
        .count() as u64;

    let mut rng = rng_for(seed, 1);
    let beta_hits = (0..n_samples)
        .filter(|_| tree.walk(|_| Some((sampler.a(&mut rng), sampler.b(&mut rng)))).is_some())
        .count() as u64;

    let gamma = |side: Side, stream: u64| {
        let mut rng = rng_for(seed, stream);
        let mut seq = vec![0 as Symbol; depth];
        let mut out = Vec::new();
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..n_samples {
            for s in seq.iter_mut() {
                *s = match side {
                    Side::A => sampler.a(&mut rng),
                    Side::B => sampler.b(&mut rng),
                };
            }
            out.clear();
            tree.collect_prefix_buckets(side, depth, |d| seq[d], &mut out);
            let c = out.len() as f64;
            sum += c;
            sum_sq += c * c;
        }
        Estimate::from_samples(sum, sum_sq, n_samples)
    };
    let gamma_a = gamma(Side::A, 2);
    let gamma_b = gamma(Side::B, 3);

    Ok(MonteCarloStats {
        alpha: Estimate::bernoulli(alpha_hits, n_samples, None),
        beta: Estimate::bernoulli(beta_hits, n_samples, None),
        gamma_a,
        gamma_b,
        n_samples,
    })
}

/// Plug-in estimates from per-bucket occupancy counts `(|X ∩ v|, |Y ∩ v|)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyEstimates {
    pub beta: f64,
    pub gamma_a: f64,
    pub gamma_b: f64,
}

pub fn occupancy_estimates(counts: &[(u64, u64)], n_x: u64, n_y: u64) -> Result<OccupancyEstimates> {
    if n_x == 0 || n_y == 0 {
        return Err(Error::InvalidArgument("occupancy needs non-empty X and Y".into()));
    }
    let pairs: u64 = counts.iter().map(|&(a, b)| a * b).sum();
    let xs: u64 = counts.iter().map(|&(a, _)| a).sum();
    let ys: u64 = counts.iter().map(|&(_, b)| b).sum();
    Ok(OccupancyEstimates {
        beta: pairs as f64 / (n_x * n_y) as f64,
        gamma_a: xs as f64 / n_x as f64,
        gamma_b: ys as f64 / n_y as f64,
    })
}

/// Unit costs of tree construction, hashing, insertion and candidate checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub c_tree: f64,
    pub c_hash: f64,
    pub c_insertion: f64,
    pub c_pos: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            c_tree: 1.0,
            c_hash: 1.0,
            c_insertion: 1.0,
            c_pos: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub tree: f64,
    pub hashing: f64,
    pub insertion: f64,
    pub positives: f64,
    /// Total with the real-valued band count `ln(1/(1−TP))/α`.
    pub total: f64,
    /// Total with the integer band count.
    pub total_banded: f64,
    pub n_nodes: usize,
    pub n_bands: usize,
}

/// Predicted cost `c_tree|V| + (c_hash(N+M) + c_ins(Nγ^A + Mγ^B) + c_pos·MNβ)/α · ln(1/(1−TP))`.
pub fn complexity_report<T: Real>(
    n_nodes: usize,
    stats: &FamilyStats<T>,
    dims: &ProblemDims,
    cost: &CostModel,
) -> Result<ComplexityReport> {
    if [cost.c_tree, cost.c_hash, cost.c_insertion, cost.c_pos]
        .iter()
        .any(|c| !(*c > 0.0))
    {
        return Err(Error::InvalidArgument("cost constants must be positive".into()));
    }
    let (n, m) = (dims.n as f64, dims.m as f64);
    let alpha = stats.alpha.as_f64();
    let bands = -(-stats.tp_target.as_f64()).ln_1p() / alpha;
    let per_band_hash = cost.c_hash * (n + m);
    let per_band_ins = cost.c_insertion * (n * stats.gamma_a.as_f64() + m * stats.gamma_b.as_f64());
    let per_band_pos = cost.c_pos * m * n * stats.beta.as_f64();
    let tree = cost.c_tree * n_nodes as f64;
    let banded = stats.n_bands as f64;
    Ok(ComplexityReport {
        tree,
        hashing: per_band_hash * bands,
        insertion: per_band_ins * bands,
        positives: per_band_pos * bands,
        total: tree + (per_band_hash + per_band_ins + per_band_pos) * bands,
        total_banded: tree + (per_band_hash + per_band_ins + per_band_pos) * banded,
        n_nodes,
        n_bands: stats.n_bands,
    })
}

/// `α^(1+μ+ν−η) (γ^A)^(−μ+η) (γ^B)^(−ν+η) β^(−η)`, never above one for a
/// valid family.
pub fn lower_bound_functional<T: Real>(stats: &FamilyStats<T>, params: &HashParams<T>) -> T {
    let (mu, nu, eta) = (params.mu, params.nu, params.eta);
    ((T::one() + mu + nu - eta) * stats.log_alpha
        + (eta - mu) * stats.log_gamma_a
        + (eta - nu) * stats.log_gamma_b
        - eta * stats.log_beta)
        .exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{solve_params, SolverConfig};

    fn example() -> JointDistribution<f64> {
        JointDistribution::from_rows(&[vec![0.4, 0.3], vec![0.1, 0.2]]).unwrap()
    }

    fn params_with_lambda(jd: &JointDistribution<f64>, dims: &ProblemDims, lambda: f64) -> HashParams<f64> {
        let mut p = HashParams::from_triple(jd, dims, 0.0, 0.0, 0.0);
        p.lambda = lambda;
        p
    }

    #[test]
    fn example_node_is_accepted() {
        let dims = ProblemDims::new(5, 5, 10).unwrap();
        let rules = RuleBounds::<f64>::new(&Thresholds::uniform(0.8).unwrap(), 1.72, &dims);
        let bound = rules.accept.exp();
        assert!((bound - 0.8 * 5f64.powf(0.28)).abs() < 1e-12);
        assert!((bound - 1.26).abs() < 0.01);
        let log_ratio = 1.31f64.ln();
        let status = rules.classify(log_ratio, 0.0, 0.0);
        assert_eq!(status, NodeStatus::Bucket);
    }

    #[test]
    fn accept_wins_ties_with_prune() {
        let rules = RuleBounds {
            accept: 0.0,
            prune_a: 10.0,
            prune_b: 10.0,
        };
        assert_eq!(rules.classify(0.0, 0.0, 0.0), NodeStatus::Bucket);
        assert_eq!(rules.classify(-0.1, 0.0, 0.0), NodeStatus::Pruned);
    }

    #[test]
    fn single_symbol_chain_accepts_first_child() {
        let jd = JointDistribution::<f64>::from_rows(&[vec![1.0]]).unwrap();
        let dims = ProblemDims::new(10, 10, 5).unwrap();
        let params = params_with_lambda(&jd, &dims, 1.5);
        let cfg = TreeConfig::new(Thresholds::uniform(1e-3).unwrap(), 5);
        let tree = build_tree(&jd, &params, &dims, &cfg).unwrap();
        assert_eq!(tree.len(), 2);
        assert_eq!(tree.buckets, vec![1]);
        assert_eq!(tree.node(1).depth, 1);
    }

    #[test]
    fn unreachable_accept_threshold_has_no_buckets() {
        let jd = example();
        let dims = ProblemDims::new(4, 4, 3).unwrap();
        let params = solve_params(&jd, &dims, &SolverConfig::default()).unwrap();
        let th = Thresholds::new(1e6, 1e-12, 1e-12).unwrap();
        let err = build_tree(&jd, &params, &dims, &TreeConfig::new(th, 3)).unwrap_err();
        assert!(matches!(err, Error::EmptyBucketSet));
    }

    #[test]
    fn node_budget_is_enforced() {
        let jd = example();
        let dims = ProblemDims::new(1 << 20, 1 << 20, 200).unwrap();
        let params = solve_params(&jd, &dims, &SolverConfig::default()).unwrap();
        let cfg = TreeConfig::new(Thresholds::uniform(1e3).unwrap(), 200).with_max_nodes(50);
        let err = build_tree(&jd, &params, &dims, &cfg).unwrap_err();
        assert!(err.is_budget());
    }

    fn built() -> (JointDistribution<f64>, DecisionTree<f64>) {
        let jd = JointDistribution::from_rows(&[vec![0.345, 0.0], vec![0.31, 0.345]]).unwrap();
        let dims = ProblemDims::new(1000, 1000, 1000).unwrap();
        let params = solve_params(&jd, &dims, &SolverConfig::default()).unwrap();
        let cfg = TreeConfig::new(Thresholds::default_for(&params), 1000);
        let tree = build_tree(&jd, &params, &dims, &cfg).unwrap();
        (jd, tree)
    }

    #[test]
    fn built_tree_satisfies_structural_invariants() {
        let (jd, tree) = built();
        let rules = RuleBounds::new(&tree.thresholds, tree.params.lambda, &tree.dims);
        for node in &tree.nodes[1..] {
            let path = tree.path(node.id);
            assert_eq!(path.len(), node.depth as usize);
            let direct: f64 = path.iter().map(|&(a, b)| jd.p(a as usize, b as usize)).product();
            if node.depth <= 40 {
                assert!((node.log_phi.exp() - direct).abs() <= 1e-9 * direct);
            }
            match node.status {
                NodeStatus::Bucket => assert!(node.log_phi - node.log_psi() >= rules.accept),
                NodeStatus::Pruned => assert!(
                    node.log_phi - node.log_psi_a <= rules.prune_a
                        || node.log_phi - node.log_psi_b <= rules.prune_b
                        || node.depth as usize >= tree.max_depth
                ),
                NodeStatus::Internal => assert!(!node.children.is_empty()),
            }
        }
        for &b in &tree.buckets {
            let mut at = tree.node(b).parent;
            while let Some(p) = at {
                assert_ne!(tree.node(p).status, NodeStatus::Bucket);
                at = tree.node(p).parent;
            }
        }
        assert!(tree.len() <= 2 * tree.leaves().count());
        // With a zero cell, leaf mass plus the mass of the missing edges is one.
        let missing: f64 = tree
            .nodes
            .iter()
            .filter(|n| n.status == NodeStatus::Internal)
            .map(|n| n.log_phi.exp() * jd.p(0, 1))
            .sum();
        assert!((tree.log_leaf_mass().exp() + missing - 1.0).abs() < 1e-6);
    }

    #[test]
    fn leaf_mass_is_one_without_zero_cells() {
        let jd = example();
        let dims = ProblemDims::new(64, 64, 64).unwrap();
        let params = solve_params(&jd, &dims, &SolverConfig::default()).unwrap();
        let tree = build_tree(&jd, &params, &dims, &TreeConfig::new(Thresholds::default_for(&params), 64)).unwrap();
        assert!((tree.log_leaf_mass().exp() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn root_bucket_family_is_all_ones() {
        let jd = example();
        let dims = ProblemDims::new(4, 4, 3).unwrap();
        let params = HashParams::from_triple(&jd, &dims, 0.0, 0.0, 0.0);
        let tree = DecisionTree::root_bucket(&jd, &params, &dims);
        let stats = family_stats(&tree, 0.99).unwrap();
        assert_eq!((stats.alpha, stats.beta, stats.gamma_a, stats.gamma_b), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(stats.n_bands, 1);
        let mc = estimate_family_stats(&tree, &jd, 100, 3).unwrap();
        assert_eq!(mc.alpha.mean, 1.0);
        assert_eq!(mc.beta.mean, 1.0);
        assert_eq!(mc.gamma_a.mean, 1.0);
        assert_eq!(mc.gamma_b.mean, 1.0);
    }

    #[test]
    fn band_count_formula() {
        assert_eq!(bands_for(0.5, 0.99).unwrap(), 10);
        assert_eq!(bands_for(1.0, 1.0 - (-1.0f64).exp()).unwrap(), 1);
        assert!(true_positive_rate(0.5, 10) >= 0.99);
        assert!(bands_for(0.5, 1.0).is_err());
    }

    #[test]
    fn two_level_occupancy() {
        let counts = [(2, 2), (1, 2), (2, 1), (1, 1), (1, 1), (1, 1)];
        let est = occupancy_estimates(&counts, 6, 7).unwrap();
        assert!((est.beta - 11.0 / 42.0).abs() < 1e-15);
    }

    #[test]
    fn unit_cost_model() {
        let stats = FamilyStats {
            alpha: 1.0,
            beta: 1.0,
            gamma_a: 1.0,
            gamma_b: 1.0,
            log_alpha: 0.0,
            log_beta: 0.0,
            log_gamma_a: 0.0,
            log_gamma_b: 0.0,
            n_bands: 1,
            tp_target: 1.0 - (-1.0f64).exp(),
            predicted_tp: 1.0,
            capped_mass: 0.0,
        };
        let dims = ProblemDims::new(10, 10, 1).unwrap();
        let r = complexity_report(1, &stats, &dims, &CostModel::default()).unwrap();
        assert!((r.total - 141.0).abs() < 1e-9);
        assert!((r.total_banded - 141.0).abs() < 1e-9);
        let doubled = CostModel {
            c_pos: 2.0,
            ..CostModel::default()
        };
        let r2 = complexity_report(1, &stats, &dims, &doubled).unwrap();
        assert!((r2.positives - 2.0 * r.positives).abs() < 1e-9);
        assert!((r2.total - r.total - r.positives).abs() < 1e-9);
    }

    #[test]
    fn monte_carlo_matches_tree_sums() {
        let jd = example();
        let dims = ProblemDims::new(64, 64, 64).unwrap();
        let params = solve_params(&jd, &dims, &SolverConfig::default()).unwrap();
        let tree = build_tree(&jd, &params, &dims, &TreeConfig::new(Thresholds::default_for(&params), 64)).unwrap();
        let exact = family_stats(&tree, 0.99).unwrap();
        let mc = estimate_family_stats(&tree, &jd, 100_000, 11).unwrap();
        assert!(mc.agrees_with(&exact, 3.0), "{:?}", mc.mismatches(&exact, 3.0));
        assert!(lower_bound_functional(&exact, &params) <= 1.0 + 1e-6);
    }

    #[test]
    fn explicit_paths_reject_nesting() {
        let jd = example();
        let dims = ProblemDims::new(4, 4, 3).unwrap();
        let params = HashParams::from_triple(&jd, &dims, 0.0, 0.0, 0.0);
        let err = DecisionTree::from_bucket_paths(&jd, &params, &dims, &[vec![(0, 0)], vec![(0, 0), (1, 1)]]);
        assert!(err.is_err());
        let err = DecisionTree::from_bucket_paths(&jd, &params, &dims, &[vec![(0, 0), (1, 1)], vec![(0, 0)]]);
        assert!(err.is_err());
    }
}
