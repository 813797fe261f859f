//! Heterogeneous AP/UE graph: one node per (AP, UE) pair.
//!
//! Node `i = m * K + k` (0-based, row-major) stands for the link between AP
//! `m` and UE `k`. Two nodes are joined by a UE-type edge when they share
//! the UE, and by an AP-type edge when they share the AP. There are no
//! self-loops; every node has `M - 1` UE-neighbors and `K - 1` AP-neighbors.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeType {
    Ap,
    Ue,
}

impl EdgeType {
    pub const BOTH: [EdgeType; 2] = [EdgeType::Ap, EdgeType::Ue];

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeType::Ap => "ap",
            EdgeType::Ue => "ue",
        }
    }
}

/// Bijection between `(m, k)` pairs and node indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeIndexMap {
    pub num_aps: usize,
    pub num_ues: usize,
}

impl NodeIndexMap {
    pub fn new(num_aps: usize, num_ues: usize) -> Self {
        Self { num_aps, num_ues }
    }

    pub fn len(&self) -> usize {
        self.num_aps * self.num_ues
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, m: usize, k: usize) -> Result<usize> {
        if m >= self.num_aps || k >= self.num_ues {
            return Err(Error::OutOfRange(format!(
                "pair ({m}, {k}) outside {}x{}",
                self.num_aps, self.num_ues
            )));
        }
        Ok(m * self.num_ues + k)
    }

    pub fn pair(&self, i: usize) -> Result<(usize, usize)> {
        if i >= self.len() {
            return Err(Error::OutOfRange(format!("node {i} outside 0..{}", self.len())));
        }
        Ok((i / self.num_ues, i % self.num_ues))
    }
}

pub fn node_index(m: usize, k: usize, num_ues: usize) -> usize {
    m * num_ues + k
}

pub fn node_pair(i: usize, num_ues: usize) -> (usize, usize) {
    (i / num_ues, i % num_ues)
}

/// Compressed neighbor lists for one edge type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl Adjacency {
    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Positions of node `i`'s edges in the flat edge order.
    #[inline]
    pub fn edge_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Number of directed edges.
    pub fn num_edges(&self) -> usize {
        self.targets.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeteroGraph {
    map: NodeIndexMap,
    ap: Adjacency,
    ue: Adjacency,
}

impl HeteroGraph {
    pub fn build(num_aps: usize, num_ues: usize) -> Result<Self> {
        if num_aps == 0 || num_ues == 0 {
            return Err(Error::Config(format!(
                "graph needs M >= 1 and K >= 1, got {num_aps}x{num_ues}"
            )));
        }
        let map = NodeIndexMap::new(num_aps, num_ues);
        let n = map.len();
        let mut ap = Adjacency {
            offsets: Vec::with_capacity(n + 1),
            targets: Vec::with_capacity(n * (num_ues - 1)),
        };
        let mut ue = Adjacency {
            offsets: Vec::with_capacity(n + 1),
            targets: Vec::with_capacity(n * (num_aps - 1)),
        };
        ap.offsets.push(0);
        ue.offsets.push(0);
        for m in 0..num_aps {
            for k in 0..num_ues {
                ap.targets
                    .extend((0..num_ues).filter(|&k2| k2 != k).map(|k2| node_index(m, k2, num_ues)));
                ap.offsets.push(ap.targets.len());
                ue.targets
                    .extend((0..num_aps).filter(|&m2| m2 != m).map(|m2| node_index(m2, k, num_ues)));
                ue.offsets.push(ue.targets.len());
            }
        }
        Ok(Self { map, ap, ue })
    }

    /// Shared instance per `(M, K)`, built on first use.
    pub fn cached(num_aps: usize, num_ues: usize) -> Result<Arc<Self>> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<HeteroGraph>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(g) = guard.get(&(num_aps, num_ues)) {
            return Ok(Arc::clone(g));
        }
        let g = Arc::new(Self::build(num_aps, num_ues)?);
        guard.insert((num_aps, num_ues), Arc::clone(&g));
        Ok(g)
    }

    pub fn index_map(&self) -> NodeIndexMap {
        self.map
    }

    pub fn num_aps(&self) -> usize {
        self.map.num_aps
    }

    pub fn num_ues(&self) -> usize {
        self.map.num_ues
    }

    pub fn num_nodes(&self) -> usize {
        self.map.len()
    }

    pub fn adjacency(&self, ty: EdgeType) -> &Adjacency {
        match ty {
            EdgeType::Ap => &self.ap,
            EdgeType::Ue => &self.ue,
        }
    }

    /// Nodes sharing the same AP as `i`.
    pub fn ap_neighbors(&self, i: usize) -> &[usize] {
        self.ap.neighbors(i)
    }

    /// Nodes sharing the same UE as `i`.
    pub fn ue_neighbors(&self, i: usize) -> &[usize] {
        self.ue.neighbors(i)
    }

    pub fn neighbors(&self, ty: EdgeType, i: usize) -> &[usize] {
        self.adjacency(ty).neighbors(i)
    }

    pub fn num_edges(&self, ty: EdgeType) -> usize {
        self.adjacency(ty).num_edges()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    #[test]
    fn index_examples() {
        let map = NodeIndexMap::new(3, 2);
        assert_eq!(map.index(0, 0).unwrap(), 0);
        assert_eq!(map.index(2, 1).unwrap(), 5);
        assert_eq!(map.pair(5).unwrap(), (2, 1));
        assert!(map.index(3, 0).is_err());
        assert!(map.index(0, 2).is_err());
        assert!(map.pair(6).is_err());
    }

    #[test]
    fn edge_counts() {
        let g = HeteroGraph::build(32, 9).unwrap();
        assert_eq!(g.num_nodes(), 288);
        assert_eq!(g.num_edges(EdgeType::Ue), 8928);
        assert_eq!(g.num_edges(EdgeType::Ap), 2304);

        let g = HeteroGraph::build(1, 1).unwrap();
        assert_eq!(g.num_nodes(), 1);
        assert_eq!(g.num_edges(EdgeType::Ue) + g.num_edges(EdgeType::Ap), 0);

        let g = HeteroGraph::build(2, 2).unwrap();
        assert_eq!((g.num_edges(EdgeType::Ue), g.num_edges(EdgeType::Ap)), (4, 4));
        // node (0,0) = 0: UE-neighbor (1,0) = 2, AP-neighbor (0,1) = 1
        assert_eq!(g.ue_neighbors(0), &[2]);
        assert_eq!(g.ap_neighbors(0), &[1]);
        assert!(HeteroGraph::build(0, 3).is_err());
    }

    #[test]
    fn cache_returns_same_instance() {
        let a = HeteroGraph::cached(5, 4).unwrap();
        let b = HeteroGraph::cached(5, 4).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(*a, HeteroGraph::build(5, 4).unwrap());
    }

    fn shuffled(n: usize, seed: u64) -> Vec<usize> {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut v: Vec<usize> = (0..n).collect();
        v.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        v
    }

    proptest! {
        #[test]
        fn structure_invariants(m_aps in 1usize..9, k_ues in 1usize..9) {
            let g = HeteroGraph::build(m_aps, k_ues).unwrap();
            let map = g.index_map();
            for i in 0..g.num_nodes() {
                let (m, k) = map.pair(i).unwrap();
                prop_assert_eq!(map.index(m, k).unwrap(), i);
                let ue: BTreeSet<_> = g.ue_neighbors(i).iter().copied().collect();
                let ap: BTreeSet<_> = g.ap_neighbors(i).iter().copied().collect();
                prop_assert_eq!(ue.len(), m_aps - 1);
                prop_assert_eq!(ap.len(), k_ues - 1);
                prop_assert!(!ue.contains(&i) && !ap.contains(&i));
                prop_assert!(ue.is_disjoint(&ap));
                prop_assert_eq!(ue.union(&ap).count(), m_aps + k_ues - 2);
                for &j in &ue {
                    prop_assert_eq!(map.pair(j).unwrap().1, k);
                    prop_assert!(g.ue_neighbors(j).contains(&i));
                }
                for &j in &ap {
                    prop_assert_eq!(map.pair(j).unwrap().0, m);
                    prop_assert!(g.ap_neighbors(j).contains(&i));
                }
            }
        }

        #[test]
        fn relabeling_is_isomorphism(m_aps in 1usize..7, k_ues in 1usize..7, seed in any::<u64>()) {
            let g = HeteroGraph::build(m_aps, k_ues).unwrap();
            let sigma = shuffled(m_aps, seed);
            let rho = shuffled(k_ues, seed.wrapping_add(1));
            let relabel = |i: usize| {
                let (m, k) = node_pair(i, k_ues);
                node_index(sigma[m], rho[k], k_ues)
            };
            for ty in EdgeType::BOTH {
                for i in 0..g.num_nodes() {
                    let mapped: BTreeSet<_> = g.neighbors(ty, i).iter().map(|&j| relabel(j)).collect();
                    let direct: BTreeSet<_> = g.neighbors(ty, relabel(i)).iter().copied().collect();
                    prop_assert_eq!(mapped, direct);
                }
            }
        }
    }
}
