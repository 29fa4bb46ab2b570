//! Reference methods the tree family is measured against.

pub mod banded;
pub mod brute;
pub mod dubiner;
pub mod exponents;
pub mod mips;

pub use banded::{banded_signature_search, tune_banding, BandedLimits, SchemeKind, SignatureMethod, SignatureStats};
pub use brute::{brute_force, brute_force_top1};
pub use dubiner::{dubiner_hamming_estimate, dubiner_hamming_exact, DubinerEstimate};
pub use exponents::{lsh_hamming_exponent, minhash_exponent};
pub use mips::{sparse_dot, MipsEmbedding};
