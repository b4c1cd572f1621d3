use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::EmbeddingError;

/// Binary Huffman tree over vocabulary ids.
///
/// Each leaf stores its root-to-leaf bit string and the inner-node ids along
/// that path. Inner nodes are numbered in creation order, so the root is
/// `inner_count() - 1`. When two subtrees have equal weight the one with the
/// smaller node id is merged first and becomes the left (bit 0) child.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanTree {
    codes: Vec<Vec<u8>>,
    points: Vec<Vec<u32>>,
}

impl HuffmanTree {
    pub fn build(frequencies: &[u64]) -> Result<Self, EmbeddingError> {
        let leaves = frequencies.len();
        if leaves < 2 {
            return Err(EmbeddingError::VocabularyTooSmall(leaves));
        }
        let total = 2 * leaves - 1;
        let mut parent = vec![usize::MAX; total];
        let mut bit = vec![0u8; total];
        let mut heap: BinaryHeap<Reverse<(u64, usize)>> = frequencies
            .iter()
            .enumerate()
            .map(|(id, &f)| Reverse((f, id)))
            .collect();
        let mut next = leaves;
        while heap.len() > 1 {
            let Reverse((fa, a)) = heap.pop().expect("len > 1");
            let Reverse((fb, b)) = heap.pop().expect("len > 1");
            parent[a] = next;
            parent[b] = next;
            bit[b] = 1;
            heap.push(Reverse((fa.saturating_add(fb), next)));
            next += 1;
        }
        let root = total - 1;

        let mut codes = Vec::with_capacity(leaves);
        let mut points = Vec::with_capacity(leaves);
        for leaf in 0..leaves {
            let mut code = Vec::new();
            let mut path = Vec::new();
            let mut node = leaf;
            while node != root {
                code.push(bit[node]);
                node = parent[node];
                path.push((node - leaves) as u32);
            }
            code.reverse();
            path.reverse();
            codes.push(code);
            points.push(path);
        }
        Ok(HuffmanTree { codes, points })
    }

    pub fn leaf_count(&self) -> usize {
        self.codes.len()
    }

    pub fn inner_count(&self) -> usize {
        self.codes.len() - 1
    }

    /// Root-to-leaf bits for a vocabulary id.
    pub fn code(&self, id: u32) -> &[u8] {
        &self.codes[id as usize]
    }

    /// Inner-node ids from the root down to the leaf's parent.
    pub fn path(&self, id: u32) -> &[u32] {
        &self.points[id as usize]
    }

    pub fn code_len(&self, id: u32) -> usize {
        self.codes[id as usize].len()
    }

    /// `Σ freq · code_len`.
    pub fn weighted_path_length(&self, frequencies: &[u64]) -> u64 {
        frequencies
            .iter()
            .zip(&self.codes)
            .map(|(f, c)| f * c.len() as u64)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    /// Minimum weighted path length over all full binary trees, found by
    /// trying every merge order (not just the two lightest), memoized on the
    /// sorted multiset of remaining weights.
    fn exhaustive_optimum(weights: &[u64]) -> u64 {
        fn go(ws: Vec<u64>, memo: &mut HashMap<Vec<u64>, u64>) -> u64 {
            if ws.len() <= 1 {
                return 0;
            }
            if let Some(&v) = memo.get(&ws) {
                return v;
            }
            let mut best = u64::MAX;
            for i in 0..ws.len() {
                for j in i + 1..ws.len() {
                    let merged = ws[i] + ws[j];
                    let mut rest: Vec<u64> = ws
                        .iter()
                        .enumerate()
                        .filter(|&(k, _)| k != i && k != j)
                        .map(|(_, &w)| w)
                        .collect();
                    rest.push(merged);
                    rest.sort_unstable();
                    best = best.min(merged + go(rest, memo));
                }
            }
            memo.insert(ws, best);
            best
        }
        let mut ws = weights.to_vec();
        ws.sort_unstable();
        go(ws, &mut HashMap::new())
    }

    fn is_prefix_free(tree: &HuffmanTree) -> bool {
        for a in 0..tree.leaf_count() {
            for b in 0..tree.leaf_count() {
                if a != b && tree.codes[b].starts_with(&tree.codes[a]) {
                    return false;
                }
            }
        }
        true
    }

    #[test]
    fn two_leaves() {
        let t = HuffmanTree::build(&[3, 3]).unwrap();
        assert_eq!(t.code(0), &[0]);
        assert_eq!(t.code(1), &[1]);
        assert_eq!(t.inner_count(), 1);
        assert_eq!(t.path(0), &[0]);
    }

    #[test]
    fn textbook_lengths() {
        let t = HuffmanTree::build(&[8, 4, 2, 1]).unwrap();
        let lens: Vec<usize> = (0..4).map(|i| t.code_len(i)).collect();
        assert_eq!(lens, vec![1, 2, 3, 3]);
        assert_eq!(t.path(3)[0], 2, "root is the last inner node");
    }

    #[test]
    fn too_small() {
        assert!(HuffmanTree::build(&[]).is_err());
        assert!(HuffmanTree::build(&[5]).is_err());
    }

    #[test]
    fn exhaustive_oracle_sanity() {
        assert_eq!(exhaustive_optimum(&[8, 4, 2, 1]), 8 + 8 + 6 + 3);
        assert_eq!(exhaustive_optimum(&[1, 1]), 2);
    }

    proptest! {
        #[test]
        fn optimal_for_small_vocabularies(freqs in proptest::collection::vec(1u64..50, 2..=8)) {
            let t = HuffmanTree::build(&freqs).unwrap();
            prop_assert_eq!(t.weighted_path_length(&freqs), exhaustive_optimum(&freqs));
        }

        #[test]
        fn structural_invariants(freqs in proptest::collection::vec(1u64..1000, 2..=32)) {
            let t = HuffmanTree::build(&freqs).unwrap();
            prop_assert_eq!(t.leaf_count(), freqs.len());
            prop_assert!(is_prefix_free(&t));
            for a in 0..freqs.len() {
                prop_assert_eq!(t.code(a as u32).len(), t.path(a as u32).len());
                for b in 0..freqs.len() {
                    if freqs[a] > freqs[b] {
                        prop_assert!(t.code_len(a as u32) <= t.code_len(b as u32));
                    }
                }
            }
            // Kraft equality holds for a full binary tree
            let kraft: f64 = (0..freqs.len()).map(|i| 0.5f64.powi(t.code_len(i as u32) as i32)).sum();
            prop_assert!((kraft - 1.0).abs() < 1e-12);
        }
    }
}
