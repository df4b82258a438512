//! Cluster orderings: greedy nearest-neighbor chains over atom sets, the
//! consecutive differences they induce, and cluster-partition verification.

use serde::{Deserialize, Serialize};

use crate::core::euclidean;
use crate::error::{Error, Result};

/// Largest atom count accepted by the O(K^2) chain construction.
pub const MAX_ATOMS: usize = 64;

/// A visiting order of K atoms, stored as a 0-based permutation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterOrdering {
    pub perm: Vec<usize>,
}

impl ClusterOrdering {
    pub fn identity(k: usize) -> Self {
        Self {
            perm: (0..k).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }
}

/// Greedy nearest-neighbor chain from a fixed start; ties by smallest index.
fn greedy_chain(atoms: &[Vec<f64>], start: usize) -> (Vec<usize>, f64) {
    let k = atoms.len();
    let mut visited = vec![false; k];
    let mut perm = Vec::with_capacity(k);
    let mut total = 0.0;
    let mut cur = start;
    visited[cur] = true;
    perm.push(cur);
    for _ in 1..k {
        let mut best = usize::MAX;
        let mut best_dist = f64::INFINITY;
        for j in 0..k {
            if !visited[j] {
                let d = euclidean(&atoms[cur], &atoms[j]);
                if d < best_dist {
                    best_dist = d;
                    best = j;
                }
            }
        }
        visited[best] = true;
        perm.push(best);
        total += best_dist;
        cur = best;
    }
    (perm, total)
}

/// Lexicographic coordinate comparison used to break equal-length chains:
/// starting from the smaller endpoint reduces to the ascending natural
/// ordering on the real line.
fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

/// Builds a cluster ordering of the atoms: both endpoints of the diameter
/// pair seed a greedy nearest-neighbor chain, and the chain with the smaller
/// total consecutive distance wins. Equal totals resolve toward the chain
/// whose starting atom is lexicographically smaller, then by smaller start
/// index.
pub fn nn_chain_ordering(atoms: &[Vec<f64>]) -> ClusterOrdering {
    let k = atoms.len();
    assert!(k >= 1, "ordering requires at least one atom");
    assert!(k <= MAX_ATOMS, "ordering supports at most {MAX_ATOMS} atoms");
    if k == 1 {
        return ClusterOrdering::identity(1);
    }
    let (mut m1, mut m2) = (0, 1);
    let mut max_dist = -1.0;
    for i in 0..k {
        for j in (i + 1)..k {
            let d = euclidean(&atoms[i], &atoms[j]);
            if d > max_dist {
                max_dist = d;
                m1 = i;
                m2 = j;
            }
        }
    }
    let (chain1, len1) = greedy_chain(atoms, m1);
    let (chain2, len2) = greedy_chain(atoms, m2);
    let perm = if len1 < len2 {
        chain1
    } else if len2 < len1 {
        chain2
    } else if lex_less(&atoms[m2], &atoms[m1]) {
        chain2
    } else {
        chain1
    };
    ClusterOrdering { perm }
}

/// Consecutive differences along an ordering: the j-th entry is the step
/// from the j-th visited atom to the next one.
pub fn consecutive_differences(atoms: &[Vec<f64>], ordering: &ClusterOrdering) -> Vec<Vec<f64>> {
    let k = atoms.len();
    assert_eq!(ordering.perm.len(), k);
    let mut out = Vec::with_capacity(k.saturating_sub(1));
    for j in 0..k.saturating_sub(1) {
        let a = &atoms[ordering.perm[j]];
        let b = &atoms[ordering.perm[j + 1]];
        out.push(b.iter().zip(a).map(|(x, y)| x - y).collect());
    }
    out
}

/// Checks Definition-style cluster partitions: every block's largest
/// internal distance must be strictly smaller than its distance to any
/// outside atom.
pub fn is_cluster_partition(atoms: &[Vec<f64>], partition: &[Vec<usize>]) -> Result<bool> {
    let k = atoms.len();
    let mut seen = vec![false; k];
    for block in partition {
        for &i in block {
            if i >= k {
                return Err(Error::InvalidPartition {
                    reason: format!("index {i} out of range for {k} atoms"),
                });
            }
            if seen[i] {
                return Err(Error::InvalidPartition {
                    reason: format!("index {i} appears in two blocks"),
                });
            }
            seen[i] = true;
        }
    }
    if seen.iter().any(|&s| !s) {
        return Err(Error::InvalidPartition {
            reason: "partition does not cover all atoms".into(),
        });
    }
    for block in partition {
        let mut intra_max = 0.0f64;
        for (pos, &i) in block.iter().enumerate() {
            for &j in &block[pos + 1..] {
                intra_max = intra_max.max(euclidean(&atoms[i], &atoms[j]));
            }
        }
        let in_block = |idx: usize| block.contains(&idx);
        let mut inter_min = f64::INFINITY;
        for &i in block {
            for l in 0..k {
                if !in_block(l) {
                    inter_min = inter_min.min(euclidean(&atoms[i], &atoms[l]));
                }
            }
        }
        if inter_min.is_finite() && intra_max >= inter_min {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atoms1d(vals: &[f64]) -> Vec<Vec<f64>> {
        vals.iter().map(|&v| vec![v]).collect()
    }

    #[test]
    fn one_dim_sorts_ascending() {
        let ord = nn_chain_ordering(&atoms1d(&[3.0, 1.0, 2.0]));
        assert_eq!(ord.perm, vec![1, 2, 0]); // values 1, 2, 3
    }

    #[test]
    fn single_atom_identity() {
        let ord = nn_chain_ordering(&[vec![4.0, 4.0]]);
        assert_eq!(ord.perm, vec![0]);
    }

    #[test]
    fn two_dim_diameter_tie() {
        // Both chains have total length 11; the tie resolves to the chain
        // starting at (0,1), visiting (0,1), (0,0), (10,0).
        let atoms = vec![vec![0.0, 0.0], vec![10.0, 0.0], vec![0.0, 1.0]];
        let ord = nn_chain_ordering(&atoms);
        assert_eq!(ord.perm, vec![2, 0, 1]);
    }

    /// Enumerates the two candidate chains directly as an oracle.
    fn chain_oracle(atoms: &[Vec<f64>]) -> Vec<usize> {
        let k = atoms.len();
        let mut best_pair = (0, 1);
        let mut best = -1.0;
        for i in 0..k {
            for j in (i + 1)..k {
                let d = euclidean(&atoms[i], &atoms[j]);
                if d > best {
                    best = d;
                    best_pair = (i, j);
                }
            }
        }
        let c1 = greedy_chain(atoms, best_pair.0);
        let c2 = greedy_chain(atoms, best_pair.1);
        if c1.1 < c2.1 {
            c1.0
        } else if c2.1 < c1.1 {
            c2.0
        } else if lex_less(&atoms[best_pair.1], &atoms[best_pair.0]) {
            c2.0
        } else {
            c1.0
        }
    }

    #[test]
    fn matches_two_chain_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let k = rng.gen_range(2..9);
            let atoms: Vec<Vec<f64>> = (0..k)
                .map(|_| vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)])
                .collect();
            assert_eq!(nn_chain_ordering(&atoms).perm, chain_oracle(&atoms));
        }
    }

    #[test]
    fn differences_basic() {
        let atoms = atoms1d(&[1.0, 3.0]);
        let d = consecutive_differences(&atoms, &ClusterOrdering::identity(2));
        assert_eq!(d, vec![vec![2.0]]);
    }

    #[test]
    fn differences_empty_for_single_atom() {
        let atoms = vec![vec![0.0]];
        let d = consecutive_differences(&atoms, &ClusterOrdering::identity(1));
        assert!(d.is_empty());
    }

    #[test]
    fn differences_two_dim() {
        let atoms = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![3.0, 0.0]];
        let d = consecutive_differences(&atoms, &ClusterOrdering::identity(3));
        assert_eq!(d, vec![vec![1.0, 1.0], vec![2.0, -1.0]]);
    }

    #[test]
    fn singleton_blocks_form_partition() {
        let atoms = atoms1d(&[0.0, 1.0, 5.0]);
        let partition = vec![vec![0], vec![1], vec![2]];
        assert!(is_cluster_partition(&atoms, &partition).unwrap());
    }

    #[test]
    fn tight_pairs_form_partition() {
        let atoms = atoms1d(&[0.0, 0.1, 5.0, 5.1]);
        assert!(is_cluster_partition(&atoms, &[vec![0, 1], vec![2, 3]]).unwrap());
        assert!(!is_cluster_partition(&atoms, &[vec![0, 2], vec![1, 3]]).unwrap());
    }

    #[test]
    fn partition_must_cover() {
        let atoms = atoms1d(&[0.0, 1.0]);
        assert!(is_cluster_partition(&atoms, &[vec![0]]).is_err());
        assert!(is_cluster_partition(&atoms, &[vec![0, 1], vec![1]]).is_err());
    }

    #[test]
    fn relabeling_preserves_visiting_sequence() {
        use rand::{seq::SliceRandom, Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let k = rng.gen_range(2..8);
            let atoms: Vec<Vec<f64>> = (0..k)
                .map(|_| vec![rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)])
                .collect();
            let base = nn_chain_ordering(&atoms);
            let visited: Vec<&Vec<f64>> = base.perm.iter().map(|&i| &atoms[i]).collect();

            let mut idx: Vec<usize> = (0..k).collect();
            idx.shuffle(&mut rng);
            let shuffled: Vec<Vec<f64>> = idx.iter().map(|&i| atoms[i].clone()).collect();
            let re = nn_chain_ordering(&shuffled);
            let re_visited: Vec<&Vec<f64>> = re.perm.iter().map(|&i| &shuffled[i]).collect();
            assert_eq!(visited, re_visited);
        }
    }

    #[test]
    fn planted_clusters_visited_consecutively() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let blocks = rng.gen_range(2..5);
            let mut atoms = Vec::new();
            let mut partition: Vec<Vec<usize>> = Vec::new();
            for b in 0..blocks {
                let center = vec![3.0 * b as f64, -2.0 * b as f64];
                let size = rng.gen_range(1..4);
                let mut ids = Vec::new();
                for _ in 0..size {
                    ids.push(atoms.len());
                    atoms.push(vec![
                        center[0] + rng.gen_range(-0.005..0.005),
                        center[1] + rng.gen_range(-0.005..0.005),
                    ]);
                }
                partition.push(ids);
            }
            assert!(is_cluster_partition(&atoms, &partition).unwrap());
            let ord = nn_chain_ordering(&atoms);
            // each block's indices must occupy consecutive ordering slots
            for block in &partition {
                let slots: Vec<usize> = ord
                    .perm
                    .iter()
                    .enumerate()
                    .filter(|(_, i)| block.contains(i))
                    .map(|(slot, _)| slot)
                    .collect();
                let min = *slots.iter().min().unwrap();
                let max = *slots.iter().max().unwrap();
                assert_eq!(max - min + 1, block.len(), "block split: {slots:?}");
            }
        }
    }

    #[test]
    fn one_dim_monotone_on_random_values() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let k = rng.gen_range(2..10);
            let vals: Vec<f64> = (0..k).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let ord = nn_chain_ordering(&atoms1d(&vals));
            let visited: Vec<f64> = ord.perm.iter().map(|&i| vals[i]).collect();
            let ascending = visited.windows(2).all(|w| w[0] <= w[1]);
            let descending = visited.windows(2).all(|w| w[0] >= w[1]);
            assert!(ascending || descending, "not monotone: {visited:?}");
        }
    }
}
