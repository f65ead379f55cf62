//! The double-next-neighbour (DNN) digraph and the assignment of its edges
//! to invariant coordinate planes.
//!
//! Nodes are numbered `1..=n`. Every node `k` has exactly two outgoing edges,
//! `k -> k+1` and `k -> k+2` (indices wrap modulo `n`). All incoming edges of
//! a node live in the same plane `P_0j`; nodes 1 and 2 own planes 1 and 2, and
//! from node 3 onwards the targets cycle through planes 3, 4, 5.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A directed edge between two 1-based node indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
}

impl Edge {
    pub fn new(source: usize, target: usize) -> Self {
        Self { source, target }
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.source, self.target)
    }
}

/// Plane carrying the incoming connections of `target`.
pub fn plane_for_target(target: usize) -> usize {
    if target <= 2 {
        target
    } else {
        (target - 3) % 3 + 3
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DnnGraph {
    n: usize,
    edges: Vec<Edge>,
    planes: BTreeMap<Edge, usize>,
}

/// Number of edges in the DNN graph on `n` nodes.
pub fn expected_edge_count(n: usize) -> usize {
    2 * n
}

/// Build the DNN graph on `n >= 3` nodes together with its plane assignment.
pub fn build_graph(n: usize) -> Result<DnnGraph> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "a DNN graph needs at least 3 nodes, got n = {n}"
        )));
    }
    let wrap = |k: usize| (k - 1) % n + 1;
    let mut edges = Vec::with_capacity(2 * n);
    for step in [1, 2] {
        for k in 1..=n {
            edges.push(Edge::new(k, wrap(k + step)));
        }
    }
    let planes = edges
        .iter()
        .map(|e| (*e, plane_for_target(e.target)))
        .collect();
    Ok(DnnGraph { n, edges, planes })
}

impl DnnGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn contains(&self, edge: Edge) -> bool {
        self.planes.contains_key(&edge)
    }

    pub fn plane_of_edge(&self, edge: Edge) -> Option<usize> {
        self.planes.get(&edge).copied()
    }

    /// Highest plane index that carries at least one edge.
    pub fn plane_count(&self) -> usize {
        self.n.min(5)
    }

    pub fn outgoing(&self, node: usize) -> impl Iterator<Item = Edge> + '_ {
        self.edges.iter().copied().filter(move |e| e.source == node)
    }

    pub fn incoming(&self, node: usize) -> impl Iterator<Item = Edge> + '_ {
        self.edges.iter().copied().filter(move |e| e.target == node)
    }

    /// Planes that carry an outgoing edge of `node`.
    pub fn outgoing_planes(&self, node: usize) -> Vec<usize> {
        let mut planes: Vec<usize> = self
            .outgoing(node)
            .map(|e| self.planes[&e])
            .collect();
        planes.sort_unstable();
        planes.dedup();
        planes
    }

    /// Nodes whose incoming connections lie in `plane`, in increasing order.
    pub fn targets_in_plane(&self, plane: usize) -> Vec<usize> {
        (1..=self.n)
            .filter(|&t| plane_for_target(t) == plane)
            .collect()
    }

    /// Edges carried by `plane`, ordered by source.
    pub fn edges_in_plane(&self, plane: usize) -> Vec<Edge> {
        let mut edges: Vec<Edge> = self
            .edges
            .iter()
            .copied()
            .filter(|e| self.planes[e] == plane)
            .collect();
        edges.sort();
        edges
    }

    /// Nodes that neither leave nor enter through `plane`.
    pub fn non_connecting_nodes(&self, plane: usize) -> Vec<usize> {
        (1..=self.n)
            .filter(|&k| !self.outgoing_planes(k).contains(&plane) && plane_for_target(k) != plane)
            .collect()
    }

    /// Unordered node pairs joined by edges in both directions, `i < k`.
    pub fn two_cycles(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for i in 1..=self.n {
            for k in (i + 1)..=self.n {
                if self.contains(Edge::new(i, k)) && self.contains(Edge::new(k, i)) {
                    pairs.push((i, k));
                }
            }
        }
        pairs
    }

    pub fn to_json_value(&self) -> GraphDocument {
        GraphDocument {
            n: self.n,
            edges: self.edges.iter().map(|e| [e.source, e.target]).collect(),
            planes: self
                .planes
                .iter()
                .map(|(e, p)| (e.to_string(), *p))
                .collect(),
        }
    }
}

/// Serialized form: `{"n": int, "edges": [[s,t],...], "planes": {"s->t": j}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
    pub planes: BTreeMap<String, usize>,
}

impl GraphDocument {
    pub fn into_graph(self) -> Result<DnnGraph> {
        let graph = build_graph(self.n)?;
        let doc = graph.to_json_value();
        if doc != self {
            return Err(Error::InvalidArgument(
                "graph document does not describe the DNN graph on its node count".into(),
            ));
        }
        Ok(graph)
    }
}
