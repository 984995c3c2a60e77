//! Directed network topologies and their incidence matrices.
//!
//! Nodes and edges are 0-based internally. Everything that crosses a file or
//! message boundary uses 1-based numbering.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A directed link `src -> dst`. The elastic buffer for it lives at `dst`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
}

impl Edge {
    pub fn new(src: usize, dst: usize) -> Self {
        Edge { src, dst }
    }
}

/// A validated directed multigraph. Edge order is the canonical column order
/// of every `n x m` matrix and every per-edge vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n: usize,
    edges: Vec<Edge>,
}

impl Topology {
    /// Validates 0-based edges: indices in range, no self-loops. Parallel
    /// edges are kept; each one gets its own buffer.
    pub fn new(n: usize, edges: Vec<Edge>) -> Result<Self> {
        if n == 0 {
            return Err(Error::TooFewNodes(n));
        }
        for (e, edge) in edges.iter().enumerate() {
            let reason = if edge.src >= n || edge.dst >= n {
                Some("node index out of range")
            } else if edge.src == edge.dst {
                Some("self-loop")
            } else {
                None
            };
            if let Some(reason) = reason {
                return Err(Error::InvalidEdge {
                    edge: e + 1,
                    src: edge.src + 1,
                    dst: edge.dst + 1,
                    reason,
                });
            }
        }
        Ok(Topology { n, edges })
    }

    /// Builds from 1-based `(src, dst)` pairs as they appear in config files.
    pub fn from_one_based(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut edges = Vec::with_capacity(pairs.len());
        for (e, &(src, dst)) in pairs.iter().enumerate() {
            if src == 0 || dst == 0 {
                return Err(Error::InvalidEdge {
                    edge: e + 1,
                    src,
                    dst,
                    reason: "node numbers start at 1",
                });
            }
            edges.push(Edge::new(src - 1, dst - 1));
        }
        Topology::new(n, edges)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn to_one_based(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|e| (e.src + 1, e.dst + 1)).collect()
    }

    /// Indices of the edges whose buffer sits at `node`.
    pub fn in_edges(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.dst == node)
            .map(|(i, _)| i)
    }

    pub fn in_degree(&self, node: usize) -> usize {
        self.in_edges(node).count()
    }

    pub fn max_in_degree(&self) -> usize {
        let mut deg = vec![0usize; self.n];
        for e in &self.edges {
            deg[e.dst] += 1;
        }
        deg.into_iter().max().unwrap_or(0)
    }

    /// First node (0-based) that is not mutually reachable with node 0, if any.
    pub fn unreachable_node(&self) -> Option<usize> {
        let forward = reachable_from(self.n, 0, self.edges.iter().map(|e| (e.src, e.dst)));
        let backward = reachable_from(self.n, 0, self.edges.iter().map(|e| (e.dst, e.src)));
        (0..self.n).find(|&i| !forward[i] || !backward[i])
    }
}

fn reachable_from(
    n: usize,
    start: usize,
    arcs: impl Iterator<Item = (usize, usize)>,
) -> Vec<bool> {
    let mut adj = vec![Vec::new(); n];
    for (a, b) in arcs {
        adj[a].push(b);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    seen
}

/// True iff every node can reach every other node along directed edges.
pub fn is_strongly_connected(topology: &Topology) -> bool {
    topology.unreachable_node().is_none()
}

/// Source, destination and signed incidence matrices, all `n x m`.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceSet {
    pub source: DMatrix<f64>,
    pub dest: DMatrix<f64>,
    /// `source - dest`
    pub incidence: DMatrix<f64>,
}

pub fn build_incidence(topology: &Topology) -> IncidenceSet {
    let (n, m) = (topology.n(), topology.m());
    let mut source = DMatrix::zeros(n, m);
    let mut dest = DMatrix::zeros(n, m);
    for (e, edge) in topology.edges().iter().enumerate() {
        source[(edge.src, e)] = 1.0;
        dest[(edge.dst, e)] = 1.0;
    }
    let incidence = &source - &dest;
    IncidenceSet {
        source,
        dest,
        incidence,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    Ring,
    BidirectionalRing,
    Complete,
    RandomStrong,
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TopologyKind::Ring => "ring",
            TopologyKind::BidirectionalRing => "bidirectional-ring",
            TopologyKind::Complete => "complete",
            TopologyKind::RandomStrong => "random-strong",
        })
    }
}

impl FromStr for TopologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ring" => Ok(TopologyKind::Ring),
            "bidirectional-ring" => Ok(TopologyKind::BidirectionalRing),
            "complete" => Ok(TopologyKind::Complete),
            "random-strong" => Ok(TopologyKind::RandomStrong),
            other => Err(Error::param("topology kind", format!("unknown kind {other:?}"))),
        }
    }
}

/// Generates a strongly connected topology.
///
/// `RandomStrong` starts from the directed ring `1 -> 2 -> ... -> n -> 1` and
/// appends `floor(extra_fraction * n(n-2))` distinct non-ring edges drawn
/// with a ChaCha8 stream seeded by `seed`. Other kinds ignore `seed` and
/// `extra_fraction`.
pub fn generate_topology(
    kind: TopologyKind,
    n: usize,
    seed: u64,
    extra_fraction: f64,
) -> Result<Topology> {
    if n < 2 {
        return Err(Error::TooFewNodes(n));
    }
    if !(0.0..=1.0).contains(&extra_fraction) {
        return Err(Error::param(
            "extra_edge_fraction",
            format!("{extra_fraction} is outside [0, 1]"),
        ));
    }
    let ring = (0..n).map(|i| Edge::new(i, (i + 1) % n));
    let edges: Vec<Edge> = match kind {
        TopologyKind::Ring => ring.collect(),
        TopologyKind::BidirectionalRing if n == 2 => vec![Edge::new(0, 1), Edge::new(1, 0)],
        TopologyKind::BidirectionalRing => ring
            .flat_map(|e| [e, Edge::new(e.dst, e.src)])
            .collect(),
        TopologyKind::Complete => (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| Edge::new(i, j)))
            .collect(),
        TopologyKind::RandomStrong => {
            let mut candidates: Vec<Edge> = (0..n)
                .flat_map(|i| {
                    (0..n)
                        .filter(move |&j| j != i && j != (i + 1) % n)
                        .map(move |j| Edge::new(i, j))
                })
                .collect();
            let extra = (extra_fraction * (n * (n - 2)) as f64).floor() as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (chosen, _) = candidates.partial_shuffle(&mut rng, extra);
            ring.chain(chosen.iter().copied()).collect()
        }
    };
    Topology::new(n, edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn topo(n: usize, pairs: &[(usize, usize)]) -> Topology {
        Topology::from_one_based(n, pairs).unwrap()
    }

    #[test]
    fn two_cycle_incidence() {
        let inc = build_incidence(&topo(2, &[(1, 2), (2, 1)]));
        assert_eq!(inc.source, DMatrix::from_row_slice(2, 2, &[1., 0., 0., 1.]));
        assert_eq!(inc.dest, DMatrix::from_row_slice(2, 2, &[0., 1., 1., 0.]));
        assert_eq!(inc.incidence, DMatrix::from_row_slice(2, 2, &[1., -1., -1., 1.]));
    }

    #[test]
    fn three_ring_incidence() {
        let inc = build_incidence(&topo(3, &[(1, 2), (2, 3), (3, 1)]));
        let expected =
            DMatrix::from_row_slice(3, 3, &[1., 0., -1., -1., 1., 0., 0., -1., 1.]);
        assert_eq!(inc.incidence, expected);
        for col in inc.incidence.column_iter() {
            assert_eq!(col.sum(), 0.0);
        }
    }

    #[test]
    fn rejects_self_loop_and_out_of_range() {
        let err = Topology::from_one_based(3, &[(1, 2), (2, 2)]).unwrap_err();
        assert!(matches!(err, Error::InvalidEdge { edge: 2, src: 2, dst: 2, .. }));
        assert!(err.to_string().contains("self-loop"));
        let err = Topology::from_one_based(3, &[(1, 4)]).unwrap_err();
        assert!(matches!(err, Error::InvalidEdge { edge: 1, .. }));
        assert!(Topology::from_one_based(3, &[(0, 1)]).is_err());
    }

    #[test]
    fn parallel_edges_allowed() {
        let t = topo(2, &[(1, 2), (1, 2), (2, 1)]);
        assert_eq!(t.m(), 3);
        assert_eq!(t.in_degree(1), 2);
        assert_eq!(t.max_in_degree(), 2);
    }

    #[test]
    fn strong_connectivity() {
        assert!(is_strongly_connected(&topo(2, &[(1, 2), (2, 1)])));
        assert!(!is_strongly_connected(&topo(2, &[(1, 2)])));
        assert!(is_strongly_connected(&topo(3, &[(1, 2), (2, 3), (3, 1), (1, 3)])));
        let dangling = topo(3, &[(1, 2), (2, 1)]);
        assert_eq!(dangling.unreachable_node(), Some(2));
    }

    #[test]
    fn canonical_generators() {
        let ring = generate_topology(TopologyKind::Ring, 3, 7, 0.0).unwrap();
        assert_eq!(ring.to_one_based(), vec![(1, 2), (2, 3), (3, 1)]);
        let bi = generate_topology(TopologyKind::BidirectionalRing, 2, 99, 0.0).unwrap();
        assert_eq!(bi.to_one_based(), vec![(1, 2), (2, 1)]);
        let bi4 = generate_topology(TopologyKind::BidirectionalRing, 4, 0, 0.0).unwrap();
        assert_eq!(bi4.m(), 8);
        let complete = generate_topology(TopologyKind::Complete, 4, 0, 0.0).unwrap();
        assert_eq!(complete.m(), 12);
        assert!(generate_topology(TopologyKind::Ring, 1, 0, 0.0).is_err());
        assert!(generate_topology(TopologyKind::RandomStrong, 4, 0, 1.5).is_err());
    }

    #[test]
    fn random_strong_edge_count() {
        let t = generate_topology(TopologyKind::RandomStrong, 8, 42, 0.3).unwrap();
        assert_eq!(t.m(), 8 + 14);
        assert!(is_strongly_connected(&t));
        let mut seen = std::collections::HashSet::new();
        assert!(t.edges().iter().all(|e| seen.insert(*e)));
    }

    #[test]
    fn full_fraction_is_complete() {
        let t = generate_topology(TopologyKind::RandomStrong, 5, 3, 1.0).unwrap();
        assert_eq!(t.m(), 20);
    }
}
