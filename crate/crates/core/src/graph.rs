//! Directed communication graphs.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("edge ({from}, {to}) references a node outside 0..{n}")]
    NodeOutOfRange { from: usize, to: usize, n: usize },
    #[error("graph is not strongly connected: node {unreached} is unreachable")]
    NotStronglyConnected { unreached: usize },
    #[error("topology needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("graph file line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// A validated, strongly connected digraph without self-loops.
///
/// Edges are kept sorted lexicographically; an edge's position in that order
/// is its stable edge id used by schedules and the engine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    out_edges: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
}

impl DirectedGraph {
    /// Validates `edges` on `n` nodes.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        if n < 2 {
            return Err(GraphError::TooFewNodes(n));
        }
        let mut set = BTreeSet::new();
        for &(from, to) in edges {
            if from >= n || to >= n {
                return Err(GraphError::NodeOutOfRange { from, to, n });
            }
            if from == to {
                return Err(GraphError::SelfLoop(from));
            }
            if !set.insert((from, to)) {
                return Err(GraphError::DuplicateEdge(from, to));
            }
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut out_edges = vec![Vec::new(); n];
        let mut in_edges = vec![Vec::new(); n];
        for (id, &(from, to)) in edges.iter().enumerate() {
            out_edges[from].push(id);
            in_edges[to].push(id);
        }
        let graph = Self {
            n,
            edges,
            out_edges,
            in_edges,
        };
        graph.check_strongly_connected()?;
        Ok(graph)
    }

    fn check_strongly_connected(&self) -> Result<(), GraphError> {
        for forward in [true, false] {
            let mut seen = vec![false; self.n];
            let mut stack = vec![0];
            seen[0] = true;
            while let Some(v) = stack.pop() {
                let ids = if forward {
                    &self.out_edges[v]
                } else {
                    &self.in_edges[v]
                };
                for &e in ids {
                    let (from, to) = self.edges[e];
                    let w = if forward { to } else { from };
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            if let Some(unreached) = seen.iter().position(|s| !s) {
                return Err(GraphError::NotStronglyConnected { unreached });
            }
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// All edges in id order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge(&self, id: usize) -> (usize, usize) {
        self.edges[id]
    }

    pub fn edge_id(&self, from: usize, to: usize) -> Option<usize> {
        self.edges.binary_search(&(from, to)).ok()
    }

    /// Edge ids leaving `node`, ordered by receiver.
    pub fn out_edges(&self, node: usize) -> &[usize] {
        &self.out_edges[node]
    }

    /// Edge ids entering `node`, ordered by sender.
    pub fn in_edges(&self, node: usize) -> &[usize] {
        &self.in_edges[node]
    }

    pub fn out_degree(&self, node: usize) -> usize {
        self.out_edges[node].len()
    }

    pub fn out_neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.out_edges[node].iter().map(move |&e| self.edges[e].1)
    }

    pub fn in_neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.in_edges[node].iter().map(move |&e| self.edges[e].0)
    }

    /// The graph with every edge reversed.
    pub fn reversed(&self) -> Self {
        let edges: Vec<_> = self.edges.iter().map(|&(a, b)| (b, a)).collect();
        Self::new(self.n, &edges).expect("reversal preserves strong connectivity")
    }

    /// Parses the plain-text graph format: `n=<count>` then one `i j` pair per line.
    pub fn parse(text: &str) -> Result<Self, GraphError> {
        let mut n = None;
        let mut edges = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = idx + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if n.is_none() {
                let count = line
                    .strip_prefix("n=")
                    .and_then(|v| v.trim().parse::<usize>().ok())
                    .ok_or_else(|| GraphError::Parse {
                        line: lineno,
                        msg: "expected `n=<count>` header".into(),
                    })?;
                n = Some(count);
                continue;
            }
            let mut parts = line.split_whitespace().map(usize::from_str);
            match (parts.next(), parts.next(), parts.next()) {
                (Some(Ok(i)), Some(Ok(j)), None) => edges.push((i, j)),
                _ => {
                    return Err(GraphError::Parse {
                        line: lineno,
                        msg: format!("expected `i j`, got `{line}`"),
                    })
                }
            }
        }
        let n = n.ok_or(GraphError::Parse {
            line: 0,
            msg: "missing `n=<count>` header".into(),
        })?;
        Self::new(n, &edges)
    }
}

impl fmt::Display for DirectedGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n={}", self.n)?;
        for (i, j) in &self.edges {
            writeln!(f, "{i} {j}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Path,
    Star,
    Cycle,
}

impl Topology {
    pub const ALL: [Topology; 3] = [Topology::Star, Topology::Path, Topology::Cycle];

    pub fn name(self) -> &'static str {
        match self {
            Topology::Path => "path",
            Topology::Star => "star",
            Topology::Cycle => "cycle",
        }
    }
}

impl FromStr for Topology {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "path" => Ok(Topology::Path),
            "star" => Ok(Topology::Star),
            "cycle" => Ok(Topology::Cycle),
            other => Err(format!("unknown topology `{other}`")),
        }
    }
}

/// Builds one of the standard experiment topologies.
///
/// Path and star are bidirectional; node 0 is the star hub. The cycle is the
/// directed ring `0 -> 1 -> ... -> n-1 -> 0`.
pub fn standard_topology(kind: Topology, n: usize) -> Result<DirectedGraph, GraphError> {
    if n < 2 {
        return Err(GraphError::TooFewNodes(n));
    }
    let mut edges = Vec::new();
    match kind {
        Topology::Path => {
            for i in 0..n - 1 {
                edges.push((i, i + 1));
                edges.push((i + 1, i));
            }
        }
        Topology::Star => {
            for leaf in 1..n {
                edges.push((0, leaf));
                edges.push((leaf, 0));
            }
        }
        Topology::Cycle => {
            for i in 0..n {
                let next = (i + 1) % n;
                if !edges.contains(&(i, next)) {
                    edges.push((i, next));
                }
            }
        }
    }
    DirectedGraph::new(n, &edges)
}

/// Random strongly connected digraph: a directed ring through a random
/// node order plus each remaining ordered pair with probability `extra`.
pub fn random_strongly_connected<R: Rng + ?Sized>(
    n: usize,
    extra: f64,
    rng: &mut R,
) -> Result<DirectedGraph, GraphError> {
    if n < 2 {
        return Err(GraphError::TooFewNodes(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges: Vec<(usize, usize)> = (0..n).map(|k| (order[k], order[(k + 1) % n])).collect();
    for i in 0..n {
        for j in 0..n {
            if i != j && !edges.contains(&(i, j)) && rng.gen::<f64>() < extra {
                edges.push((i, j));
            }
        }
    }
    DirectedGraph::new(n, &edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn smallest_strongly_connected() {
        let g = DirectedGraph::new(2, &[(0, 1), (1, 0)]).unwrap();
        assert_eq!(g.out_degree(0), 1);
        assert_eq!(g.out_degree(1), 1);
    }

    #[test]
    fn directed_four_cycle() {
        let g = DirectedGraph::new(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        assert!((0..4).all(|i| g.out_degree(i) == 1));
    }

    #[test]
    fn rejects_bad_edge_sets() {
        assert!(matches!(
            DirectedGraph::new(3, &[(0, 1), (1, 2)]),
            Err(GraphError::NotStronglyConnected { .. })
        ));
        assert_eq!(
            DirectedGraph::new(2, &[(0, 0)]),
            Err(GraphError::SelfLoop(0))
        );
        assert_eq!(
            DirectedGraph::new(2, &[(0, 1), (1, 0), (0, 1)]),
            Err(GraphError::DuplicateEdge(0, 1))
        );
        assert!(matches!(
            DirectedGraph::new(2, &[(0, 5)]),
            Err(GraphError::NodeOutOfRange { .. })
        ));
    }

    #[test]
    fn standard_topologies() {
        let star = standard_topology(Topology::Star, 4).unwrap();
        assert_eq!(
            star.edges(),
            &[(0, 1), (0, 2), (0, 3), (1, 0), (2, 0), (3, 0)]
        );
        let cycle = standard_topology(Topology::Cycle, 4).unwrap();
        assert_eq!(cycle.edges(), &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        let path = standard_topology(Topology::Path, 2).unwrap();
        assert_eq!(path.edges(), &[(0, 1), (1, 0)]);
        assert_eq!(
            standard_topology(Topology::Path, 1),
            Err(GraphError::TooFewNodes(1))
        );
    }

    #[test]
    fn file_format_round_trips() {
        let g = standard_topology(Topology::Path, 4).unwrap();
        assert_eq!(DirectedGraph::parse(&g.to_string()).unwrap(), g);
        assert!(matches!(
            DirectedGraph::parse("n=2\n0 1 2\n"),
            Err(GraphError::Parse { line: 2, .. })
        ));
    }

    proptest! {
        #[test]
        fn reversal_preserves_validity(n in 2usize..9, extra in prop::collection::vec((0usize..8, 0usize..8), 0..12)) {
            let mut edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
            edges.extend(extra.into_iter().filter(|&(a, b)| a < n && b < n && a != b));
            edges.sort();
            edges.dedup();
            let g = DirectedGraph::new(n, &edges).unwrap();
            let r = g.reversed();
            prop_assert_eq!(r.edge_count(), g.edge_count());
            prop_assert_eq!(r.reversed(), g);
        }

        #[test]
        fn standard_topologies_validate(n in 2usize..12) {
            for kind in Topology::ALL {
                prop_assert!(standard_topology(kind, n).is_ok());
            }
        }
    }
}
