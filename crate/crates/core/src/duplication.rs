//! Audience duplication between site pairs and the graphs built from it.
//!
//! Observed duplication is the share of the panel that visited both sites.
//! Expected duplication is the product of the two reaches. The above-random
//! residual `observed - expected` is the tie value: negative residuals are
//! zeroed in the valued graph, and the binary graph keeps a tie wherever the
//! residual is strictly positive.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{PanelSnapshot, Proportion, Site};

/// Share of the panel universe that visited both `a` and `b`.
pub fn observed_duplication(snapshot: &PanelSnapshot, a: &str, b: &str) -> Result<Proportion> {
    if a == b {
        return Err(Error::InvalidPair(a.to_string()));
    }
    let ia = snapshot
        .site_index(a)
        .ok_or_else(|| Error::NotFound(format!("site {a:?}")))?;
    let ib = snapshot
        .site_index(b)
        .ok_or_else(|| Error::NotFound(format!("site {b:?}")))?;
    let shared = snapshot
        .audience(ia)
        .intersection_len(snapshot.audience(ib));
    Proportion::new(shared, snapshot.user_count() as u64)
}

/// Duplication expected by chance: the product of the two reaches.
pub fn expected_duplication(reach_a: Proportion, reach_b: Proportion) -> Result<Proportion> {
    let count = reach_a.count().checked_mul(reach_b.count());
    let total = reach_a.total().checked_mul(reach_b.total());
    match (count, total) {
        (Some(c), Some(t)) => Proportion::new(c, t),
        _ => Err(Error::validation("panel too large for exact duplication")),
    }
}

/// Above-random duplication, `observed - expected`, evaluated exactly and
/// rounded once. Positive means more shared audience than chance.
pub fn above_random(observed: Proportion, expected: Proportion) -> f64 {
    let num = i128::from(observed.count()) * i128::from(expected.total())
        - i128::from(expected.count()) * i128::from(observed.total());
    let den = i128::from(observed.total()) * i128::from(expected.total());
    num as f64 / den as f64
}

/// Symmetric valued graph of above-random duplication (negatives zeroed).
#[derive(Debug, Clone, PartialEq)]
pub struct DuplicationGraph {
    label: String,
    sites: Vec<Site>,
    values: Vec<f64>,
    pairs_evaluated: u64,
}

impl DuplicationGraph {
    /// Builds a graph from explicit `(i, j, value)` ties. Pairs not listed
    /// carry zero. Every unordered pair is counted as evaluated.
    pub fn from_edges(
        label: impl Into<String>,
        sites: Vec<Site>,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let n = sites.len();
        let mut values = vec![0.0; n * n];
        for (i, j, v) in edges {
            if i >= n || j >= n {
                return Err(Error::validation(format!(
                    "edge ({i}, {j}) out of range for {n} sites"
                )));
            }
            if i == j {
                return Err(Error::validation(format!("self-tie on site {i}")));
            }
            if !v.is_finite() || v < 0.0 {
                return Err(Error::validation(format!(
                    "edge ({i}, {j}) has invalid value {v}"
                )));
            }
            if values[i * n + j] != 0.0 {
                return Err(Error::validation(format!("edge ({i}, {j}) listed twice")));
            }
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
        Ok(Self {
            label: label.into(),
            sites,
            values,
            pairs_evaluated: pair_count(n),
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Number of unordered site pairs whose duplication was computed.
    pub fn pairs_evaluated(&self) -> u64 {
        self.pairs_evaluated
    }

    /// Tie value between two distinct sites. The diagonal reads as zero.
    pub fn value(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            self.values[i * self.len() + j]
        }
    }

    /// Row `i` of the matrix; entry `i` is always zero.
    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.len();
        &self.values[i * n..(i + 1) * n]
    }

    /// Positive ties as `(i, j, value)` with `i < j`, row-major.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.len();
        (0..n).flat_map(move |i| {
            ((i + 1)..n).filter_map(move |j| {
                let v = self.values[i * n + j];
                (v > 0.0).then_some((i, j, v))
            })
        })
    }

    /// Sum of tie values incident to each site.
    pub fn strengths(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.row(i).iter().sum()).collect()
    }

    /// Copy with every tie multiplied by `factor` (> 0).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    /// Serializable form listing only positive ties.
    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            schema_version: crate::pipeline::SCHEMA_VERSION.to_string(),
            tool_version: crate::TOOL_VERSION.to_string(),
            snapshot_label: self.label.clone(),
            pairs_evaluated: self.pairs_evaluated,
            sites: self.sites.iter().map(SiteEntry::from).collect(),
            edges: self
                .edges()
                .map(|(i, j, value)| EdgeEntry { i, j, value })
                .collect(),
        }
    }

    pub fn from_document(doc: &GraphDocument) -> Result<Self> {
        let sites = doc
            .sites
            .iter()
            .map(|s| Site {
                id: s.id,
                domain: s.domain.clone(),
                languages: s.languages.iter().cloned().collect(),
                region_tag: s.region_tag.clone(),
            })
            .collect();
        let mut graph = Self::from_edges(
            doc.snapshot_label.clone(),
            sites,
            doc.edges.iter().map(|e| (e.i, e.j, e.value)),
        )?;
        if doc.pairs_evaluated != graph.pairs_evaluated {
            return Err(Error::validation(format!(
                "graph document claims {} pairs for {} sites",
                doc.pairs_evaluated,
                graph.len()
            )));
        }
        graph.pairs_evaluated = doc.pairs_evaluated;
        Ok(graph)
    }
}

/// `n(n-1)/2`.
pub fn pair_count(n: usize) -> u64 {
    let n = n as u64;
    n * n.saturating_sub(1) / 2
}

/// Computes the above-random duplication of every unordered site pair.
pub fn build_valued_graph(snapshot: &PanelSnapshot) -> Result<DuplicationGraph> {
    let n = snapshot.site_count();
    if n < 2 {
        return Err(Error::validation(
            "duplication graph needs at least 2 sites",
        ));
    }
    let users = snapshot.user_count() as i128;
    let den = (users * users) as f64;
    let counts: Vec<i128> = (0..n)
        .map(|i| i128::from(snapshot.audience(i).len()))
        .collect();

    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = snapshot.audience(i);
            ((i + 1)..n)
                .map(|j| {
                    let shared = i128::from(a.intersection_len(snapshot.audience(j)));
                    let num = shared * users - counts[i] * counts[j];
                    if num > 0 {
                        num as f64 / den
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();

    let mut values = vec![0.0; n * n];
    let mut pairs = 0u64;
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + 1 + off;
            values[i * n + j] = v;
            values[j * n + i] = v;
            pairs += 1;
        }
    }
    Ok(DuplicationGraph {
        label: snapshot.label().to_string(),
        sites: snapshot.sites().to_vec(),
        values,
        pairs_evaluated: pairs,
    })
}

/// Undirected simple graph: tie present wherever duplication is positive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryGraph {
    sites: Vec<Site>,
    adjacency: Vec<bool>,
    neighbors: Vec<Vec<usize>>,
}

impl BinaryGraph {
    /// Graph on `n` placeholder sites (`n0`, `n1`, ...) with the given edges.
    /// Self-loops and duplicate edges are ignored.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let sites = (0..n)
            .map(|i| Site::new(i as u32, format!("n{i}")))
            .collect();
        Self::with_sites(sites, edges)
    }

    pub fn with_sites(sites: Vec<Site>, edges: &[(usize, usize)]) -> Result<Self> {
        let n = sites.len();
        let mut adjacency = vec![false; n * n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::validation(format!(
                    "edge ({i}, {j}) out of range for {n} nodes"
                )));
            }
            if i != j {
                adjacency[i * n + j] = true;
                adjacency[j * n + i] = true;
            }
        }
        Ok(Self::from_adjacency(sites, adjacency))
    }

    fn from_adjacency(sites: Vec<Site>, adjacency: Vec<bool>) -> Self {
        let n = sites.len();
        let neighbors = (0..n)
            .map(|i| (0..n).filter(|&j| adjacency[i * n + j]).collect())
            .collect();
        Self {
            sites,
            adjacency,
            neighbors,
        }
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.len() + j]
    }

    /// Sorted neighbor list of node `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Edges as `(i, j)` with `i < j`, row-major.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, ns)| ns.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
    }

    /// Copy without the edge `i`–`j`.
    pub fn without_edge(&self, i: usize, j: usize) -> Self {
        let n = self.len();
        let mut adjacency = self.adjacency.clone();
        adjacency[i * n + j] = false;
        adjacency[j * n + i] = false;
        Self::from_adjacency(self.sites.clone(), adjacency)
    }
}

/// Binary view of a valued graph: tie present iff value > 0.
pub fn dichotomize(graph: &DuplicationGraph) -> BinaryGraph {
    let n = graph.len();
    let adjacency = (0..n * n)
        .map(|k| k / n != k % n && graph.values[k] > 0.0)
        .collect();
    BinaryGraph::from_adjacency(graph.sites.clone(), adjacency)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteEntry {
    pub id: u32,
    pub domain: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub languages: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_tag: Option<String>,
}

impl From<&Site> for SiteEntry {
    fn from(s: &Site) -> Self {
        Self {
            id: s.id,
            domain: s.domain.clone(),
            languages: s.languages.iter().cloned().collect(),
            region_tag: s.region_tag.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeEntry {
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

/// Graph export: positive ties only, indices into `sites`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub schema_version: String,
    pub tool_version: String,
    pub snapshot_label: String,
    pub pairs_evaluated: u64,
    pub sites: Vec<SiteEntry>,
    pub edges: Vec<EdgeEntry>,
}
