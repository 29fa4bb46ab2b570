//! Banded bucket assignment and the inverted index over database points.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::Symbol;
use crate::error::{Error, Result};
use crate::sampling::{rng_for, streams};
use crate::scalar::Real;
use crate::tree::{DecisionTree, NodeId, Side};

/// One position permutation per band, shared by both sides of a pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandSet {
    pub seed: u64,
    pub s: usize,
    /// `perms[z][s]` is the source position read at permuted position `s`.
    pub perms: Vec<Vec<u32>>,
}

impl BandSet {
    /// Band `z` is a shuffle drawn from `(seed, z)` alone.
    pub fn new(n_bands: usize, s: usize, seed: u64) -> Result<Self> {
        Self::check(n_bands, s)?;
        let perms = (0..n_bands)
            .map(|z| Self::permutation(s, seed, z))
            .collect();
        Ok(Self { seed, s, perms })
    }

    /// Every band reads positions in order.
    pub fn identity(n_bands: usize, s: usize) -> Result<Self> {
        Self::check(n_bands, s)?;
        Ok(Self {
            seed: 0,
            s,
            perms: vec![(0..s as u32).collect(); n_bands],
        })
    }

    fn check(n_bands: usize, s: usize) -> Result<()> {
        if n_bands == 0 || s == 0 {
            return Err(Error::InvalidArgument("need at least one band and one position".into()));
        }
        if s > u32::MAX as usize {
            return Err(Error::InvalidArgument(format!("sequence length {s} too large")));
        }
        Ok(())
    }

    pub fn permutation(s: usize, seed: u64, z: usize) -> Vec<u32> {
        let mut perm: Vec<u32> = (0..s as u32).collect();
        perm.shuffle(&mut rng_for(seed, streams::BANDS + z as u64));
        perm
    }

    pub fn len(&self) -> usize {
        self.perms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perms.is_empty()
    }

    /// The first `n` bands.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            seed: self.seed,
            s: self.s,
            perms: self.perms[..n.min(self.perms.len())].to_vec(),
        }
    }

    pub fn permute(&self, z: usize, seq: &[Symbol]) -> Vec<Symbol> {
        self.perms[z].iter().map(|&p| seq[p as usize]).collect()
    }

    fn check_len(&self, seq: &[Symbol]) -> Result<()> {
        if seq.len() != self.s {
            return Err(Error::LengthMismatch {
                expected: self.s,
                found: seq.len(),
            });
        }
        Ok(())
    }

    /// Sorted buckets reached by `seq` in band `z`.
    pub fn assign_in_band<T: Real>(&self, tree: &DecisionTree<T>, side: Side, z: usize, seq: &[Symbol], out: &mut Vec<NodeId>) {
        out.clear();
        let perm = &self.perms[z];
        tree.collect_prefix_buckets(side, perm.len(), |d| seq[perm[d] as usize], out);
        out.sort_unstable();
    }

    fn assign<T: Real>(&self, tree: &DecisionTree<T>, side: Side, seq: &[Symbol]) -> Result<Vec<Vec<NodeId>>> {
        self.check_len(seq)?;
        Ok((0..self.len())
            .map(|z| {
                let mut out = Vec::new();
                self.assign_in_band(tree, side, z, seq, &mut out);
                out
            })
            .collect())
    }

    /// Per-band buckets whose A-sequence prefixes the permuted `x`.
    pub fn assign_a<T: Real>(&self, tree: &DecisionTree<T>, x: &[Symbol]) -> Result<Vec<Vec<NodeId>>> {
        self.assign(tree, Side::A, x)
    }

    /// Per-band buckets whose B-sequence prefixes the permuted `y`.
    pub fn assign_b<T: Real>(&self, tree: &DecisionTree<T>, y: &[Symbol]) -> Result<Vec<Vec<NodeId>>> {
        self.assign(tree, Side::B, y)
    }
}

/// Bucket → point ids for one band, in compressed rows sorted by bucket.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandTable {
    pub buckets: Vec<NodeId>,
    pub offsets: Vec<u32>,
    pub points: Vec<u32>,
}

impl BandTable {
    fn from_pairs(mut pairs: Vec<(NodeId, u32)>) -> Self {
        pairs.sort_unstable();
        let mut table = BandTable {
            buckets: Vec::new(),
            offsets: vec![0],
            points: Vec::with_capacity(pairs.len()),
        };
        for (bucket, point) in pairs {
            if table.buckets.last() != Some(&bucket) {
                if !table.buckets.is_empty() {
                    table.offsets.push(table.points.len() as u32);
                }
                table.buckets.push(bucket);
            }
            table.points.push(point);
        }
        if !table.buckets.is_empty() {
            table.offsets.push(table.points.len() as u32);
        }
        table
    }

    pub fn lookup(&self, bucket: NodeId) -> &[u32] {
        match self.buckets.binary_search(&bucket) {
            Ok(i) => &self.points[self.offsets[i] as usize..self.offsets[i + 1] as usize],
            Err(_) => &[],
        }
    }

    pub fn insertions(&self) -> usize {
        self.points.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandIndex {
    pub n_points: usize,
    pub bands: Vec<BandTable>,
}

impl BandIndex {
    /// Indexes `points` in every band. Bands are built in parallel; each
    /// table is sorted, so the result does not depend on scheduling.
    pub fn build<T: Real>(tree: &DecisionTree<T>, bands: &BandSet, points: &[Vec<Symbol>]) -> Result<Self> {
        for x in points {
            bands.check_len(x)?;
        }
        if points.len() > u32::MAX as usize {
            return Err(Error::InvalidArgument("too many database points".into()));
        }
        let tables = (0..bands.len())
            .into_par_iter()
            .map(|z| {
                let mut pairs = Vec::new();
                let mut out = Vec::new();
                for (id, x) in points.iter().enumerate() {
                    bands.assign_in_band(tree, Side::A, z, x, &mut out);
                    pairs.extend(out.iter().map(|&v| (v, id as u32)));
                }
                BandTable::from_pairs(pairs)
            })
            .collect();
        Ok(Self {
            n_points: points.len(),
            bands: tables,
        })
    }

    pub fn lookup(&self, band: usize, bucket: NodeId) -> &[u32] {
        self.bands[band].lookup(bucket)
    }

    /// Total (point, bucket, band) insertions.
    pub fn insertions(&self) -> usize {
        self.bands.iter().map(BandTable::insertions).sum()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(bincode::serialize(self)?)
    }
}

/// Writes any serializable value as bincode.
pub fn save_binary<V: Serialize>(value: &V, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path.as_ref()).map_err(|e| Error::from(e).context(path.as_ref().display().to_string()))?;
    bincode::serialize_into(BufWriter::new(file), value)?;
    Ok(())
}

pub fn load_binary<V: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<V> {
    let file = File::open(path.as_ref()).map_err(|e| Error::from(e).context(path.as_ref().display().to_string()))?;
    Ok(bincode::deserialize_from(BufReader::new(file))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::{JointDistribution, ProblemDims};
    use crate::solver::HashParams;

    /// Six buckets; 000 reaches v1 and v3, 001 reaches v1 and v2.
    pub(crate) fn three_bucket_tree() -> (DecisionTree<f64>, [NodeId; 3]) {
        let jd = JointDistribution::from_rows(&[vec![0.4, 0.1], vec![0.1, 0.4]]).unwrap();
        let dims = ProblemDims::new(8, 8, 3).unwrap();
        let params = HashParams::from_triple(&jd, &dims, 0.0, 0.0, 0.0);
        let paths = vec![
            vec![(0, 0), (0, 1)],
            vec![(0, 1), (0, 0), (1, 1)],
            vec![(0, 1), (0, 0), (0, 1)],
            vec![(1, 0)],
            vec![(1, 1), (0, 0)],
            vec![(1, 1), (1, 1)],
        ];
        let tree = DecisionTree::from_bucket_paths(&jd, &params, &dims, &paths).unwrap();
        let end = |p: &[(Symbol, Symbol)]| {
            tree.nodes
                .iter()
                .find(|n| n.status == crate::tree::NodeStatus::Bucket && tree.path(n.id) == p)
                .unwrap()
                .id
        };
        let ids = [end(&paths[0]), end(&paths[1]), end(&paths[2])];
        (tree, ids)
    }

    #[test]
    fn three_bucket_mappings() {
        let (tree, [v1, v2, v3]) = three_bucket_tree();
        let bands = BandSet::identity(1, 3).unwrap();
        let mut want = vec![v1, v3];
        want.sort_unstable();
        assert_eq!(bands.assign_a(&tree, &[0, 0, 0]).unwrap(), vec![want]);
        let mut want = vec![v1, v2];
        want.sort_unstable();
        assert_eq!(bands.assign_a(&tree, &[0, 0, 1]).unwrap(), vec![want]);

        let index = BandIndex::build(&tree, &bands, &[vec![0, 0, 0], vec![0, 0, 1]]).unwrap();
        assert_eq!(index.lookup(0, v1), &[0, 1]);
        assert_eq!(index.lookup(0, v2), &[1]);
        assert_eq!(index.lookup(0, v3), &[0]);
        assert_eq!(index.insertions(), 4);
    }

    #[test]
    fn root_bucket_catches_everything() {
        let jd = JointDistribution::from_rows(&[vec![0.4, 0.3], vec![0.1, 0.2]]).unwrap();
        let dims = ProblemDims::new(4, 4, 3).unwrap();
        let params = HashParams::from_triple(&jd, &dims, 0.0, 0.0, 0.0);
        let tree = DecisionTree::root_bucket(&jd, &params, &dims);
        let bands = BandSet::new(3, 3, 9).unwrap();
        assert_eq!(bands.assign_a(&tree, &[1, 0, 1]).unwrap(), vec![vec![0]; 3]);
        assert_eq!(bands.assign_b(&tree, &[0, 0, 1]).unwrap(), vec![vec![0]; 3]);
        let empty = BandIndex::build(&tree, &bands, &[]).unwrap();
        assert_eq!(empty.insertions(), 0);
        assert!(empty.lookup(0, 0).is_empty());
    }

    #[test]
    fn forced_chain_on_single_symbol() {
        let jd = JointDistribution::from_rows(&[vec![1.0]]).unwrap();
        let dims = ProblemDims::new(4, 4, 3).unwrap();
        let params = HashParams::from_triple(&jd, &dims, 0.0, 0.0, 0.0);
        let tree = DecisionTree::from_bucket_paths(&jd, &params, &dims, &[vec![(0, 0), (0, 0)]]).unwrap();
        let bands = BandSet::new(1, 3, 1).unwrap();
        assert_eq!(bands.assign_b(&tree, &[0, 0, 0]).unwrap(), vec![vec![2]]);
    }

    #[test]
    fn permutations_are_seeded_bijections() {
        let a = BandSet::new(4, 50, 17).unwrap();
        let b = BandSet::new(4, 50, 17).unwrap();
        assert_eq!(a, b);
        for p in &a.perms {
            let mut sorted = p.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..50).collect::<Vec<u32>>());
        }
        assert_ne!(a.perms[0], a.perms[1]);
        assert_eq!(a.perms[2], BandSet::permutation(50, 17, 2));
    }

    #[test]
    fn length_is_checked() {
        let (tree, _) = three_bucket_tree();
        let bands = BandSet::identity(1, 3).unwrap();
        assert!(matches!(
            bands.assign_a(&tree, &[0, 0]),
            Err(Error::LengthMismatch { expected: 3, found: 2 })
        ));
    }
}
