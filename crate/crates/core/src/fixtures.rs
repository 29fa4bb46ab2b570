//! Named distributions used by experiments and tests.

use crate::distribution::JointDistribution;
use crate::error::Result;
use crate::scalar::Real;

fn lit<T: Real>(rows: &[&[f64]]) -> Vec<Vec<T>> {
    rows.iter().map(|r| r.iter().map(|&v| T::lit(v)).collect()).collect()
}

/// `[[0.4, 0.3], [0.1, 0.2]]`.
pub fn example<T: Real>() -> JointDistribution<T> {
    JointDistribution::from_rows(&lit(&[&[0.4, 0.3], &[0.1, 0.2]])).expect("valid fixture")
}

pub fn uniform2<T: Real>() -> JointDistribution<T> {
    JointDistribution::from_rows(&lit(&[&[0.25, 0.25], &[0.25, 0.25]])).expect("valid fixture")
}

/// Sparse binary pairs: the `(0, 1)` cell is empty.
pub fn p1<T: Real>() -> JointDistribution<T> {
    JointDistribution::from_rows(&lit(&[&[0.345, 0.0], &[0.31, 0.345]])).expect("valid fixture")
}

pub fn p2<T: Real>() -> JointDistribution<T> {
    JointDistribution::from_rows(&lit(&[&[0.019625, 0.0], &[0.036875, 0.9435]])).expect("valid fixture")
}

/// `(1−t)·P1 + t·P2`.
pub fn p_of_t<T: Real>(t: f64) -> Result<JointDistribution<T>> {
    crate::data::interpolate(&p1(), &p2(), T::lit(t))
}

/// Symmetric binary channel `[[p/2, (1−p)/2], [(1−p)/2, p/2]]`.
pub fn hamming<T: Real>(p: f64) -> Result<JointDistribution<T>> {
    let (d, o) = (p / 2.0, (1.0 - p) / 2.0);
    JointDistribution::from_rows(&lit(&[&[d, o], &[o, d]]))
}

/// Four-level logRank co-occurrence of matched spectra (last level is "absent").
pub fn mass_spec_4x4<T: Real>() -> JointDistribution<T> {
    JointDistribution::from_weight_rows(&lit(&[
        &[0.000125, 5.008081e-5, 9.689274e-8, 0.000404],
        &[5.008082e-5, 0.000209, 6.205379e-6, 0.001921],
        &[9.689274e-8, 6.205379e-6, 2.688879e-5, 0.000355],
        &[0.000404, 0.001921, 0.000355, 0.994165],
    ]))
    .expect("valid fixture")
}

/// Eight-level logRank co-occurrence of matched spectra.
pub fn mass_spec_8x8<T: Real>() -> JointDistribution<T> {
    JointDistribution::from_weight_rows(&lit(&[
        &[3.458e-5, 1.442e-5, 5.434e-6, 1.723e-6, 2.920e-7, 7.496e-8, 6.718e-8, 5.023e-5],
        &[1.442e-5, 3.708e-5, 2.550e-5, 8.706e-6, 1.561e-6, 4.809e-7, 2.680e-7, 1.575e-4],
        &[5.434e-6, 2.550e-5, 3.907e-5, 2.948e-5, 6.442e-6, 2.008e-6, 1.251e-6, 3.672e-4],
        &[1.723e-6, 8.706e-6, 2.948e-5, 4.867e-5, 1.813e-5, 6.098e-6, 4.532e-6, 5.539e-4],
        &[2.921e-7, 1.561e-6, 6.442e-6, 1.813e-5, 2.887e-5, 6.892e-6, 5.309e-6, 4.138e-4],
        &[7.496e-8, 4.809e-7, 2.008e-6, 6.098e-6, 6.892e-6, 2.123e-5, 5.826e-6, 3.246e-4],
        &[6.718e-8, 2.680e-7, 1.251e-6, 4.531e-6, 5.309e-6, 5.826e-6, 6.411e-5, 8.364e-4],
        &[5.023e-5, 1.574e-4, 3.671e-4, 5.539e-4, 4.138e-4, 3.246e-4, 8.364e-4, 0.994],
    ]))
    .expect("valid fixture")
}

/// Published optimal exponents for the fixtures above.
/// Log-offsets over `p0·q0` for `C1, C2, C3` that put `P(t = 0.25)` trees
/// in their scaling regime for `N` between 2^7 and 2^12.
pub const P_T_SCALING_OFFSETS: [f64; 3] = [5.75, 6.0, 7.0];

pub mod published {
    pub const EXAMPLE_LAMBDA: f64 = 1.7203;
    pub const P1_TRIPLE: (f64, f64, f64) = (4.6611, 4.6611, 3.1462);
    pub const P1_LAMBDA: f64 = 1.4384;
    pub const MASS_SPEC_4X4_LAMBDA: f64 = 1.326723;
    pub const MASS_SPEC_8X8_LAMBDA: f64 = 1.294837;
    /// The 51-level matrix behind this value is not published.
    pub const MASS_SPEC_51X51_LAMBDA: f64 = 1.281621;
    pub const P1_MINHASH: f64 = 0.5207;
    pub const P1_LSH_HAMMING: f64 = 0.4672;
}
