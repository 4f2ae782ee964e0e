//! Directed communication topologies.
//!
//! Agents are identified by `1..=n` in every public API and in reports;
//! storage is 0-based.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A directed graph on agents `1..=n`. An edge `(i, j)` means agent `i`
/// sends to agent `j`. Self-loops are never stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectedGraph {
    n: usize,
    /// 0-based, sorted, deduplicated.
    edges: Vec<(usize, usize)>,
    in_nbrs: Vec<Vec<usize>>,
    out_nbrs: Vec<Vec<usize>>,
}

impl DirectedGraph {
    /// Builds a graph from 1-based edge pairs. Duplicate edges collapse;
    /// self-loops and out-of-range ids are rejected.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("graph needs at least one agent"));
        }
        let mut set = BTreeSet::new();
        for &(i, j) in edges {
            if i == 0 || j == 0 || i > n || j > n {
                return Err(Error::domain(format!(
                    "edge ({i},{j}) references an agent outside 1..={n}"
                )));
            }
            if i == j {
                return Err(Error::domain(format!("self-loop on agent {i}")));
            }
            set.insert((i - 1, j - 1));
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut in_nbrs = vec![Vec::new(); n];
        let mut out_nbrs = vec![Vec::new(); n];
        for &(i, j) in &edges {
            out_nbrs[i].push(j);
            in_nbrs[j].push(i);
        }
        for v in in_nbrs.iter_mut().chain(out_nbrs.iter_mut()) {
            v.sort_unstable();
        }
        Ok(Self {
            n,
            edges,
            in_nbrs,
            out_nbrs,
        })
    }

    /// Directed cycle `1 -> 2 -> ... -> n -> 1`.
    pub fn cycle(n: usize) -> Result<Self> {
        if n < 2 {
            return Self::new(n, &[]);
        }
        let edges: Vec<_> = (1..=n).map(|i| (i, i % n + 1)).collect();
        Self::new(n, &edges)
    }

    /// The canonical six-agent sensor network: ring `1 -> ... -> 6 -> 1`
    /// with chords `1 -> 4` and `5 -> 2`.
    pub fn sensor_ring6() -> Self {
        let mut edges: Vec<_> = (1..=6).map(|i| (i, i % 6 + 1)).collect();
        edges.push((1, 4));
        edges.push((5, 2));
        Self::new(6, &edges).expect("preset is well formed")
    }

    /// Two agents exchanging messages in both directions.
    pub fn pair() -> Self {
        Self::new(2, &[(1, 2), (2, 1)]).expect("preset is well formed")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// 0-based edges in sorted order. Transcript records follow this order.
    pub fn edges0(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// 1-based edges, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|&(i, j)| (i + 1, j + 1)).collect()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        from >= 1 && to >= 1 && self.edges.binary_search(&(from - 1, to - 1)).is_ok()
    }

    fn check_id(&self, i: usize) -> Result<usize> {
        if i == 0 || i > self.n {
            Err(Error::domain(format!("unknown agent id {i} (graph has {} agents)", self.n)))
        } else {
            Ok(i - 1)
        }
    }

    /// `{ j : (j, i) in edges }`, 1-based.
    pub fn in_neighbors(&self, i: usize) -> Result<BTreeSet<usize>> {
        let i0 = self.check_id(i)?;
        Ok(self.in_nbrs[i0].iter().map(|j| j + 1).collect())
    }

    /// `{ l : (i, l) in edges }`, 1-based.
    pub fn out_neighbors(&self, i: usize) -> Result<BTreeSet<usize>> {
        let i0 = self.check_id(i)?;
        Ok(self.out_nbrs[i0].iter().map(|j| j + 1).collect())
    }

    pub(crate) fn in0(&self, i0: usize) -> &[usize] {
        &self.in_nbrs[i0]
    }

    pub(crate) fn out0(&self, i0: usize) -> &[usize] {
        &self.out_nbrs[i0]
    }

    /// True iff every agent reaches every other along directed edges.
    ///
    /// One forward and one backward search from agent 1 suffice: if all
    /// agents are reachable from 1 and 1 is reachable from all, any pair
    /// connects through 1.
    pub fn is_strongly_connected(&self) -> bool {
        let forward = reach_count(self.n, &self.out_nbrs);
        forward == self.n && reach_count(self.n, &self.in_nbrs) == self.n
    }

    pub fn require_strongly_connected(&self) -> Result<()> {
        if self.is_strongly_connected() {
            Ok(())
        } else {
            Err(Error::config("communication graph is not strongly connected"))
        }
    }
}

fn reach_count(n: usize, adj: &[Vec<usize>]) -> usize {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count
}
