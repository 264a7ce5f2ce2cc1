//! Whole-graph descriptors and unweighted geodesics on the binary graph.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::duplication::BinaryGraph;
use crate::error::{Error, Result};

/// Name of the clustering coefficient variant, recorded in reports.
pub const CLUSTERING_VARIANT: &str = "average-local (Watts-Strogatz), degree<2 nodes count as 0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub node_count: usize,
    pub edge_count: usize,
    pub density: f64,
    pub clustering_coefficient: f64,
    pub clustering_variant: String,
}

impl GraphSummary {
    pub fn of(graph: &BinaryGraph) -> Result<Self> {
        Ok(Self {
            node_count: graph.len(),
            edge_count: graph.edge_count(),
            density: density(graph)?,
            clustering_coefficient: clustering_coefficient(graph)?,
            clustering_variant: CLUSTERING_VARIANT.to_string(),
        })
    }
}

fn require_pairs(graph: &BinaryGraph) -> Result<()> {
    if graph.len() < 2 {
        return Err(Error::validation(format!(
            "graph metric needs at least 2 nodes, got {}",
            graph.len()
        )));
    }
    Ok(())
}

/// Present ties over possible unordered pairs.
pub fn density(graph: &BinaryGraph) -> Result<f64> {
    require_pairs(graph)?;
    let n = graph.len() as f64;
    Ok(graph.edge_count() as f64 / (n * (n - 1.0) / 2.0))
}

/// Mean local clustering coefficient over all nodes.
///
/// A node's local coefficient is the share of its neighbor pairs that are
/// themselves tied. Nodes with fewer than two neighbors contribute 0 but are
/// still counted in the mean.
pub fn clustering_coefficient(graph: &BinaryGraph) -> Result<f64> {
    require_pairs(graph)?;
    let n = graph.len();
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|v| local_clustering(graph, v))
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    Ok(total / n as f64)
}

pub fn local_clustering(graph: &BinaryGraph, v: usize) -> f64 {
    let ns = graph.neighbors(v);
    let k = ns.len();
    if k < 2 {
        return 0.0;
    }
    let mut closed = 0usize;
    for (a, &x) in ns.iter().enumerate() {
        for &y in &ns[a + 1..] {
            if graph.has_edge(x, y) {
                closed += 1;
            }
        }
    }
    closed as f64 / (k * (k - 1) / 2) as f64
}

/// All-pairs unweighted shortest-path lengths. `None` marks unreachable pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Geodesics {
    n: usize,
    dist: Vec<Option<u32>>,
}

impl Geodesics {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, from: usize, to: usize) -> Option<u32> {
        self.dist[from * self.n + to]
    }

    pub fn row(&self, from: usize) -> &[Option<u32>] {
        &self.dist[from * self.n..(from + 1) * self.n]
    }
}

/// Breadth-first distances from a set of sources (all at distance 0).
pub fn bfs_from(graph: &BinaryGraph, sources: &[usize]) -> Vec<Option<u32>> {
    let mut dist = vec![None; graph.len()];
    let mut queue = VecDeque::new();
    for &s in sources {
        if dist[s].is_none() {
            dist[s] = Some(0);
            queue.push_back(s);
        }
    }
    while let Some(v) = queue.pop_front() {
        let d = dist[v].expect("queued nodes have a distance") + 1;
        for &w in graph.neighbors(v) {
            if dist[w].is_none() {
                dist[w] = Some(d);
                queue.push_back(w);
            }
        }
    }
    dist
}

pub fn all_pairs_geodesics(graph: &BinaryGraph) -> Geodesics {
    let n = graph.len();
    let rows: Vec<Vec<Option<u32>>> = (0..n)
        .into_par_iter()
        .map(|s| bfs_from(graph, &[s]))
        .collect();
    Geodesics {
        n,
        dist: rows.into_iter().flatten().collect(),
    }
}
