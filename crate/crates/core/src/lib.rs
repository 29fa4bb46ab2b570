//! Maximum-likelihood search over discrete sequences with decision-tree
//! buckets tuned to a known joint distribution.

pub mod baselines;
pub mod bench;
pub mod data;
pub mod distribution;
pub mod error;
pub mod fixtures;
pub mod index;
pub mod query;
pub mod sampling;
pub mod scalar;
pub mod solver;
pub mod tree;

pub use bench::{run_experiment, ExperimentConfig, MetricsRecord};
pub use distribution::{Alphabet, JointDistribution, ProblemDims, Sequence, Symbol};
pub use error::{Error, Result};
pub use index::{BandIndex, BandSet};
pub use query::{SearchResult, Searcher};
pub use scalar::Real;
pub use solver::{solve_params, HashParams, SolverConfig};
pub use tree::{build_tree, family_stats, DecisionTree, FamilyStats, Thresholds, TreeConfig};

pub type JointDistributionF64 = JointDistribution<f64>;
pub type JointDistributionF32 = JointDistribution<f32>;
pub type HashParamsF64 = HashParams<f64>;
pub type HashParamsF32 = HashParams<f32>;
pub type DecisionTreeF64 = DecisionTree<f64>;
pub type DecisionTreeF32 = DecisionTree<f32>;
pub type FamilyStatsF64 = FamilyStats<f64>;
pub type FamilyStatsF32 = FamilyStats<f32>;
