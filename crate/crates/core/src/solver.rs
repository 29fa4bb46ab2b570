//! Optimal exponent solver.
//!
//! For a distribution `P` and problem size `(N, M)` the search cost of the
//! best decision-tree family grows as `N^λ*`, where
//!
//! ```text
//! λ(μ, ν, η) = (max(1, δ) + μ + δ·ν) / (1 + μ + ν − η)
//! ```
//!
//! is maximised over triples with `min(μ, ν) ≥ η ≥ 0` on the surface
//! `Σ_ij p_ij^(1+μ+ν−η) · pA_i^(−μ) · pB_j^(−ν) = 1`.
//!
//! [`solve_params`] runs a coarse grid scan first and then refines the
//! winner: `η` is bisected onto the surface for fixed `(μ, ν)`, and a
//! pattern search over `(μ, ν)` climbs the resulting one-constraint ridge.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::{JointDistribution, ProblemDims};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// `Σ_ij exp((1+μ+ν−η)·log p_ij − μ·log pA_i − ν·log pB_j)` over nonzero cells.
///
/// Callers are expected to respect `min(μ, ν) ≥ η ≥ 0`.
pub fn constraint_value<T: Real>(jd: &JointDistribution<T>, mu: T, nu: T, eta: T) -> T {
    let e = T::one() + mu + nu - eta;
    jd.nonzero_cells()
        .iter()
        .map(|c| (e * c.log_p - mu * c.log_pa - nu * c.log_pb).exp())
        .sum()
}

/// `λ(μ, ν, η)` for a given `δ`.
pub fn lambda_of<T: Real>(delta: T, mu: T, nu: T, eta: T) -> T {
    (delta.max(T::one()) + mu + delta * nu) / (T::one() + mu + nu - eta)
}

/// Grids and tolerance of the coarse scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SolverConfig<T> {
    pub grid_mu: Vec<T>,
    pub grid_nu: Vec<T>,
    pub grid_eta: Vec<T>,
    /// Coarse feasibility threshold on `|constraint − 1|`.
    pub tol: T,
    /// Upper bound on pattern-search iterations during refinement.
    pub max_refine_iters: usize,
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        Self::uniform(T::lit(20.0), T::lit(0.1), T::lit(0.01))
    }
}

impl<T: Real> SolverConfig<T> {
    /// `μ, ν ∈ {0, step, …, max}` and `η` on a grid twice as fine.
    pub fn uniform(max: T, step: T, tol: T) -> Self {
        let grid = |step: T| {
            let n = (max / step + T::lit(1e-9)).floor().to_usize().unwrap_or(0);
            (0..=n).map(|i| T::lit(i as f64) * step).collect::<Vec<_>>()
        };
        let half = step / T::lit(2.0);
        Self {
            grid_mu: grid(step),
            grid_nu: grid(step),
            grid_eta: grid(half),
            tol,
            max_refine_iters: 20_000,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, grid) in [("mu", &self.grid_mu), ("nu", &self.grid_nu), ("eta", &self.grid_eta)] {
            if grid.is_empty() {
                return Err(Error::InvalidArgument(format!("grid_{name} is empty")));
            }
            if grid.iter().any(|&v| !(v >= T::zero()) || !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "grid_{name} must be finite and non-negative"
                )));
            }
            if grid.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidArgument(format!(
                    "grid_{name} must be strictly ascending"
                )));
            }
        }
        if !(self.tol > T::zero()) {
            return Err(Error::InvalidArgument("tol must be positive".into()));
        }
        Ok(())
    }

    fn initial_step(&self) -> T {
        let step = |g: &[T]| {
            if g.len() > 1 {
                g[1] - g[0]
            } else {
                T::lit(0.1)
            }
        };
        step(&self.grid_mu).max(step(&self.grid_nu))
    }
}

/// `p0 = Π p_ij` and `q0 = min(Π q_ij, Π pA_i, Π pB_j)`, each product over
/// nonzero cells, in linear and log form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct P0Q0<T> {
    pub p0: T,
    pub q0: T,
    pub log_p0: T,
    pub log_q0: T,
}

pub fn compute_p0_q0<T: Real>(jd: &JointDistribution<T>) -> P0Q0<T> {
    let cells = jd.nonzero_cells();
    let log_p0: T = cells.iter().map(|c| c.log_p).sum();
    let log_q: T = cells.iter().map(|c| c.log_pa + c.log_pb).sum();
    let log_a: T = cells.iter().map(|c| c.log_pa).sum();
    let log_b: T = cells.iter().map(|c| c.log_pb).sum();
    let log_q0 = log_q.min(log_a).min(log_b);
    P0Q0 {
        p0: log_p0.exp(),
        q0: log_q0.exp(),
        log_p0,
        log_q0,
    }
}

/// Solved hash-family parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct HashParams<T> {
    pub mu: T,
    pub nu: T,
    pub eta: T,
    pub lambda: T,
    pub delta: T,
    pub p0: T,
    pub q0: T,
    pub log_p0: T,
    pub log_q0: T,
    /// `r*_ij = p_ij^(1+μ+ν−η)·pA_i^(−μ)·pB_j^(−ν)`, zero on zero cells.
    pub r_star: Vec<Vec<T>>,
    /// Characteristic bucket depth `(max(1,δ) − λ)·log N / Σ r*_ij log(p_ij / r*_ij)`.
    pub n_star: T,
}

impl<T: Real> HashParams<T> {
    /// Derives every dependent quantity from a triple `(μ, ν, η)`.
    pub fn from_triple(jd: &JointDistribution<T>, dims: &ProblemDims, mu: T, nu: T, eta: T) -> Self {
        let delta = T::lit(dims.delta());
        let lambda = lambda_of(delta, mu, nu, eta);
        let e = T::one() + mu + nu - eta;
        let mut r_star = vec![vec![T::zero(); jd.l()]; jd.k()];
        let mut divergence = T::zero();
        for c in jd.nonzero_cells() {
            let log_r = e * c.log_p - mu * c.log_pa - nu * c.log_pb;
            let r = log_r.exp();
            r_star[c.i as usize][c.j as usize] = r;
            divergence = divergence + r * (c.log_p - log_r);
        }
        let n_star = (delta.max(T::one()) - lambda) * T::lit(dims.log_n()) / divergence;
        let pq = compute_p0_q0(jd);
        Self {
            mu,
            nu,
            eta,
            lambda,
            delta,
            p0: pq.p0,
            q0: pq.q0,
            log_p0: pq.log_p0,
            log_q0: pq.log_q0,
            r_star,
            n_star,
        }
    }

    /// Exponent of the work spent per query, `λ − δ`.
    pub fn per_query_exponent(&self) -> T {
        self.lambda - self.delta
    }

    pub fn r_star_sum(&self) -> T {
        self.r_star.iter().flatten().copied().sum()
    }
}

/// Root of `constraint_value(μ, ν, ·) = 1` on `[0, min(μ, ν)]`, if one exists.
pub fn solve_eta<T: Real>(jd: &JointDistribution<T>, mu: T, nu: T) -> Option<T> {
    let f = |eta: T| constraint_value(jd, mu, nu, eta) - T::one();
    let slack = T::epsilon() * T::lit(64.0);
    let hi = mu.min(nu);
    let f_lo = f(T::zero());
    if f_lo > slack {
        return None;
    }
    if f_lo >= -slack {
        return Some(T::zero());
    }
    let f_hi = f(hi);
    if f_hi < -slack {
        return None;
    }
    if f_hi <= slack {
        return Some(hi);
    }
    let (mut lo, mut hi) = (T::zero(), hi);
    for _ in 0..200 {
        let mid = (lo + hi) / T::lit(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // pick whichever end sits closer to the surface
    if f(lo).abs() <= f(hi).abs() {
        Some(lo)
    } else {
        Some(hi)
    }
}

#[derive(Clone, Copy, Debug)]
struct Candidate<T> {
    lambda: T,
    mu: T,
    nu: T,
    eta: T,
}

impl<T: Real> Candidate<T> {
    /// Larger λ wins; ties go to the lexicographically smallest triple.
    fn better_than(&self, other: &Self) -> bool {
        if self.lambda != other.lambda {
            return self.lambda > other.lambda;
        }
        (self.mu, self.nu, self.eta) < (other.mu, other.nu, other.eta)
    }
}

fn pick_best<T: Real>(a: Option<Candidate<T>>, b: Option<Candidate<T>>) -> Option<Candidate<T>> {
    match (a, b) {
        (Some(a), Some(b)) => Some(if b.better_than(&a) { b } else { a }),
        (a, None) => a,
        (None, b) => b,
    }
}

/// Best grid point `η` for fixed `(μ, ν)`.
///
/// The constraint is non-decreasing in `η` and so is `λ`, so the feasible
/// `η` values form a contiguous run of the grid and the best one is the
/// largest `η` whose constraint is still `≤ 1 + tol`.
fn scan_eta<T: Real>(
    jd: &JointDistribution<T>,
    cfg: &SolverConfig<T>,
    delta: T,
    mu: T,
    nu: T,
) -> Option<Candidate<T>> {
    let cap = mu.min(nu);
    let end = cfg.grid_eta.partition_point(|&e| e <= cap);
    if end == 0 {
        return None;
    }
    let g = |idx: usize| constraint_value(jd, mu, nu, cfg.grid_eta[idx]);
    let upper = T::one() + cfg.tol;
    // last index with constraint <= 1 + tol
    let (mut lo, mut hi) = (0usize, end);
    if g(0) > upper {
        return None;
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if g(mid) <= upper {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let value = g(lo);
    if (value - T::one()).abs() > cfg.tol {
        return None;
    }
    let eta = cfg.grid_eta[lo];
    Some(Candidate {
        lambda: lambda_of(delta, mu, nu, eta),
        mu,
        nu,
        eta,
    })
}

fn refined<T: Real>(jd: &JointDistribution<T>, delta: T, mu: T, nu: T) -> Option<Candidate<T>> {
    if mu < T::zero() || nu < T::zero() {
        return None;
    }
    let eta = solve_eta(jd, mu, nu)?;
    Some(Candidate {
        lambda: lambda_of(delta, mu, nu, eta),
        mu,
        nu,
        eta,
    })
}

/// Solves for `(μ*, ν*, η*, λ*)` and the derived parameters.
pub fn solve_params<T: Real>(
    jd: &JointDistribution<T>,
    dims: &ProblemDims,
    cfg: &SolverConfig<T>,
) -> Result<HashParams<T>> {
    cfg.validate()?;
    if jd.nonzero_cells().len() < 2 {
        return Err(Error::NoFeasiblePoint(
            "a single nonzero cell makes the constraint identically one and λ unbounded".into(),
        ));
    }
    let delta = T::lit(dims.delta());

    let coarse = cfg
        .grid_mu
        .par_iter()
        .map(|&mu| {
            cfg.grid_nu
                .iter()
                .map(|&nu| scan_eta(jd, cfg, delta, mu, nu))
                .fold(None, pick_best)
        })
        .reduce(|| None, pick_best)
        .ok_or_else(|| {
            Error::NoFeasiblePoint(format!(
                "no grid triple satisfies the constraint within {}",
                cfg.tol
            ))
        })?;

    // The coarse winner may sit within `tol` of the surface without an
    // exact root; fall back to the best grid pair that has one.
    let start = match refined(jd, delta, coarse.mu, coarse.nu) {
        Some(c) => c,
        None => cfg
            .grid_mu
            .par_iter()
            .map(|&mu| {
                cfg.grid_nu
                    .iter()
                    .map(|&nu| refined(jd, delta, mu, nu))
                    .fold(None, pick_best)
            })
            .reduce(|| None, pick_best)
            .ok_or_else(|| Error::NoFeasiblePoint("no grid pair admits an exact η".into()))?,
    };

    let best = pattern_search(jd, delta, start, cfg.initial_step(), cfg.max_refine_iters);
    Ok(HashParams::from_triple(jd, dims, best.mu, best.nu, best.eta))
}

fn pattern_search<T: Real>(
    jd: &JointDistribution<T>,
    delta: T,
    start: Candidate<T>,
    initial_step: T,
    max_iters: usize,
) -> Candidate<T> {
    const DIRECTIONS: [(f64, f64); 8] = [
        (1.0, 0.0),
        (-1.0, 0.0),
        (0.0, 1.0),
        (0.0, -1.0),
        (1.0, 1.0),
        (-1.0, -1.0),
        (1.0, -1.0),
        (-1.0, 1.0),
    ];
    let min_step = T::lit(1e-6);
    let mut current = start;
    let mut step = initial_step;
    for _ in 0..max_iters {
        if step < min_step {
            break;
        }
        let best_move = DIRECTIONS
            .iter()
            .filter_map(|&(dm, dn)| {
                refined(
                    jd,
                    delta,
                    current.mu + T::lit(dm) * step,
                    current.nu + T::lit(dn) * step,
                )
            })
            .fold(None, |acc: Option<Candidate<T>>, c| pick_best(acc, Some(c)));
        match best_move {
            Some(c) if c.lambda > current.lambda => current = c,
            _ => step = step / T::lit(2.0),
        }
    }
    current
}

/// `λ* + 3·c_d·log(1 + ε)` with
/// `c_d = (λ* − min(1, δ)) / |log max_ij min(p_ij / pA_i, p_ij / pB_j)|`.
pub fn noise_complexity_bound<T: Real>(
    params: &HashParams<T>,
    jd: &JointDistribution<T>,
    epsilon: T,
) -> Result<T> {
    if !(epsilon >= T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be non-negative, got {epsilon}"
        )));
    }
    let c_d = depth_constant(params.lambda, params.delta, jd)?;
    Ok(params.lambda + T::lit(3.0) * c_d * epsilon.ln_1p())
}

/// `c_d` of the noise bound; bucket depth is at most `c_d · log N`.
pub fn depth_constant<T: Real>(lambda: T, delta: T, jd: &JointDistribution<T>) -> Result<T> {
    let max_ratio = jd
        .nonzero_cells()
        .iter()
        .map(|c| (c.log_p - c.log_pa).min(c.log_p - c.log_pb))
        .fold(T::neg_infinity(), T::max);
    if max_ratio >= T::zero() {
        return Err(Error::DegenerateRatio);
    }
    Ok((lambda - delta.min(T::one())) / max_ratio.abs())
}
