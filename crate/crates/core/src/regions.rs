//! Regional clusters of sites.
//!
//! Sites are compared by the Pearson correlation of their duplication
//! profiles, grouped by average-linkage agglomerative clustering on `1 - r`,
//! and the dendrogram is cut either at a fixed cluster count or at the level
//! that maximizes weighted modularity on the valued graph. Clusters from
//! different snapshots are paired by membership overlap.

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::duplication::DuplicationGraph;
use crate::error::{Error, Result};
use crate::panel::Site;

/// Default Jaccard overlap for pairing clusters across snapshots.
pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.3;

/// Symmetric matrix of profile correlations, unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    /// Wraps a dense row-major matrix after checking shape, symmetry and range.
    pub fn from_dense(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::validation(format!(
                "similarity matrix needs {} entries, got {}",
                n * n,
                values.len()
            )));
        }
        for i in 0..n {
            for j in 0..n {
                let v = values[i * n + j];
                if !(-1.0 - 1e-9..=1.0 + 1e-9).contains(&v) || v != values[j * n + i] {
                    return Err(Error::validation(format!(
                        "similarity entry ({i}, {j}) = {v} is out of range or asymmetric"
                    )));
                }
            }
        }
        Ok(Self { n, values })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

/// Pearson correlation of valued rows `i` and `j` over every coordinate
/// except `i` and `j`. A constant row correlates 0 with everything.
pub fn profile_correlation(graph: &DuplicationGraph, i: usize, j: usize) -> f64 {
    let (x, y) = (graph.row(i), graph.row(j));
    let keep = |k: &usize| *k != i && *k != j;
    let m = (0..graph.len()).filter(keep).count() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for k in (0..graph.len()).filter(keep) {
        sx += x[k];
        sy += y[k];
    }
    let (mx, my) = (sx / m, sy / m);
    let (mut cxy, mut cxx, mut cyy) = (0.0, 0.0, 0.0);
    for k in (0..graph.len()).filter(keep) {
        let (dx, dy) = (x[k] - mx, y[k] - my);
        cxy += dx * dy;
        cxx += dx * dx;
        cyy += dy * dy;
    }
    if cxx <= 0.0 || cyy <= 0.0 {
        return 0.0;
    }
    (cxy / (cxx.sqrt() * cyy.sqrt())).clamp(-1.0, 1.0)
}

pub fn profile_similarity(graph: &DuplicationGraph) -> Result<SimilarityMatrix> {
    let n = graph.len();
    if n < 3 {
        return Err(Error::validation(format!(
            "profile similarity needs at least 3 sites, got {n}"
        )));
    }
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..n)
                .map(|j| profile_correlation(graph, i, j))
                .collect()
        })
        .collect();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
        for (off, &r) in upper[i].iter().enumerate() {
            let j = i + 1 + off;
            values[i * n + j] = r;
            values[j * n + i] = r;
        }
    }
    Ok(SimilarityMatrix { n, values })
}

/// How to cut the dendrogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum CutSpec {
    /// Level with the highest weighted modularity on the valued graph.
    #[default]
    Auto,
    /// Exactly `k` clusters.
    K { k: usize },
}

/// One agglomeration step. Leaves are ids `0..n`; the cluster created by
/// step `s` gets id `n + s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    leaves: usize,
    merges: Vec<Merge>,
    /// Modularity of the partition after each number of merges (index 0 is
    /// all singletons).
    modularity: Vec<f64>,
}

impl Dendrogram {
    pub fn leaves(&self) -> usize {
        self.leaves
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    /// Weighted modularity at every level, indexed by merges performed.
    pub fn level_modularity(&self) -> &[f64] {
        &self.modularity
    }

    /// Leaves in left-to-right order of the final tree.
    pub fn leaf_order(&self) -> Vec<usize> {
        let n = self.leaves;
        if n == 0 {
            return Vec::new();
        }
        let mut order = Vec::with_capacity(n);
        let mut stack = vec![if self.merges.is_empty() {
            0
        } else {
            n + self.merges.len() - 1
        }];
        while let Some(id) = stack.pop() {
            if id < n {
                order.push(id);
            } else {
                let m = self.merges[id - n];
                stack.push(m.right);
                stack.push(m.left);
            }
        }
        order
    }

    /// Leaf sets of every internal node, by node id minus `n`.
    pub fn subtrees(&self) -> Vec<Vec<usize>> {
        let n = self.leaves;
        let mut sets: Vec<Vec<usize>> = Vec::with_capacity(self.merges.len());
        for m in &self.merges {
            let side = |id: usize, sets: &Vec<Vec<usize>>| {
                if id < n {
                    vec![id]
                } else {
                    sets[id - n].clone()
                }
            };
            let mut s = side(m.left, &sets);
            s.extend(side(m.right, &sets));
            s.sort_unstable();
            sets.push(s);
        }
        sets
    }

    /// Cluster label per leaf after the first `merges` steps.
    fn labels_after(&self, merges: usize) -> Vec<usize> {
        let n = self.leaves;
        let mut parent: Vec<usize> = (0..n + merges).collect();
        for (s, m) in self.merges.iter().take(merges).enumerate() {
            parent[m.left] = n + s;
            parent[m.right] = n + s;
        }
        (0..n)
            .map(|mut v| {
                while parent[v] != v {
                    v = parent[v];
                }
                v
            })
            .collect()
    }
}

/// Provenance of a partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutRecord {
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modularity: Option<f64>,
}

/// Disjoint, covering assignment of sites to clusters.
///
/// Cluster ids run `0..k`, ordered by descending size then by smallest
/// member index.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    label: String,
    domains: Vec<String>,
    assignment: Vec<usize>,
    clusters: Vec<Vec<usize>>,
    colors: Vec<String>,
    cut: CutRecord,
}

impl Partition {
    /// Builds a partition from arbitrary per-site labels, renumbering
    /// clusters into canonical order.
    pub fn from_labels(
        label: impl Into<String>,
        domains: Vec<String>,
        labels: &[usize],
        cut: CutRecord,
    ) -> Result<Self> {
        if labels.len() != domains.len() {
            return Err(Error::validation(format!(
                "{} labels for {} sites",
                labels.len(),
                domains.len()
            )));
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (site, &l) in labels.iter().enumerate() {
            groups.entry(l).or_default().push(site);
        }
        let mut clusters: Vec<Vec<usize>> = groups.into_values().collect();
        clusters.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        Self::from_clusters(label, domains, clusters, cut)
    }

    fn from_clusters(
        label: impl Into<String>,
        domains: Vec<String>,
        clusters: Vec<Vec<usize>>,
        cut: CutRecord,
    ) -> Result<Self> {
        let n = domains.len();
        let mut assignment = vec![usize::MAX; n];
        for (id, members) in clusters.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::validation(format!("cluster {id} is empty")));
            }
            for &m in members {
                if m >= n || assignment[m] != usize::MAX {
                    return Err(Error::validation(format!(
                        "site index {m} is out of range or assigned twice"
                    )));
                }
                assignment[m] = id;
            }
        }
        if let Some(site) = assignment.iter().position(|&a| a == usize::MAX) {
            return Err(Error::validation(format!(
                "site {:?} is not assigned to any cluster",
                domains[site]
            )));
        }
        let colors = (0..clusters.len()).map(palette_color).collect();
        Ok(Self {
            label: label.into(),
            domains,
            assignment,
            clusters,
            colors,
            cut,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn domains(&self) -> &[String] {
        &self.domains
    }

    /// Cluster id of every site, in site order.
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }

    /// Sorted member indices of cluster `id`.
    pub fn members(&self, id: usize) -> &[usize] {
        &self.clusters[id]
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn colors(&self) -> &[String] {
        &self.colors
    }

    pub fn cut(&self) -> &CutRecord {
        &self.cut
    }

    pub fn set_colors(&mut self, colors: Vec<String>) -> Result<()> {
        if colors.len() != self.clusters.len() {
            return Err(Error::validation("one color per cluster required"));
        }
        self.colors = colors;
        Ok(())
    }

    /// Gives matched clusters the color of their counterpart in `previous`;
    /// the rest take the first palette colors used by neither partition.
    pub fn inherit_colors(&mut self, previous: &Partition, matches: &ClusterMatch) {
        let mut colors: Vec<Option<String>> = vec![None; self.clusters.len()];
        for pair in &matches.pairs {
            colors[pair.right] = Some(previous.colors[pair.left].clone());
        }
        let taken: HashSet<String> = previous
            .colors
            .iter()
            .chain(colors.iter().flatten())
            .cloned()
            .collect();
        let mut fresh = (0..).map(palette_color).filter(|c| !taken.contains(c));
        self.colors = colors
            .into_iter()
            .map(|c| c.unwrap_or_else(|| fresh.next().expect("palette is unbounded")))
            .collect();
    }

    /// Member domains of cluster `id`, in site order.
    pub fn member_domains(&self, id: usize) -> Vec<String> {
        self.clusters[id]
            .iter()
            .map(|&m| self.domains[m].clone())
            .collect()
    }

    pub fn to_document(&self) -> PartitionDocument {
        PartitionDocument {
            schema_version: crate::pipeline::SCHEMA_VERSION.to_string(),
            tool_version: crate::TOOL_VERSION.to_string(),
            snapshot_label: self.label.clone(),
            cut: self.cut.clone(),
            clusters: (0..self.clusters.len())
                .map(|id| ClusterEntry {
                    id,
                    color: self.colors[id].clone(),
                    member_domains: self.member_domains(id),
                })
                .collect(),
        }
    }

    /// Rebuilds a partition over `graph`'s sites from its JSON form.
    pub fn from_document(doc: &PartitionDocument, graph: &DuplicationGraph) -> Result<Self> {
        let index: HashMap<&str, usize> = graph
            .sites()
            .iter()
            .enumerate()
            .map(|(i, s)| (s.domain.as_str(), i))
            .collect();
        let mut entries: Vec<&ClusterEntry> = doc.clusters.iter().collect();
        entries.sort_by_key(|c| c.id);
        if entries.iter().enumerate().any(|(i, c)| c.id != i) {
            return Err(Error::validation("cluster ids must be 0..k"));
        }
        let mut clusters = Vec::with_capacity(entries.len());
        for c in &entries {
            let mut members = c
                .member_domains
                .iter()
                .map(|d| {
                    index.get(d.as_str()).copied().ok_or_else(|| {
                        Error::validation(format!("partition lists unknown site {d:?}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            members.sort_unstable();
            clusters.push(members);
        }
        let domains = graph.sites().iter().map(|s| s.domain.clone()).collect();
        let mut p = Self::from_clusters(
            doc.snapshot_label.clone(),
            domains,
            clusters,
            doc.cut.clone(),
        )?;
        p.colors = entries.iter().map(|c| c.color.clone()).collect();
        Ok(p)
    }
}

impl Partition {
    /// Rebuilds a partition from its JSON form alone, for matching against
    /// another snapshot. Sites are the listed members in domain order.
    pub fn from_document_members(doc: &PartitionDocument) -> Result<Self> {
        let mut domains: Vec<String> = doc
            .clusters
            .iter()
            .flat_map(|c| c.member_domains.iter().cloned())
            .collect();
        domains.sort();
        let sites: Vec<Site> = domains
            .iter()
            .enumerate()
            .map(|(i, d)| Site::new(i as u32, d.clone()))
            .collect();
        let graph =
            DuplicationGraph::from_edges(doc.snapshot_label.clone(), sites, std::iter::empty())?;
        Self::from_document(doc, &graph)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterEntry {
    pub id: usize,
    pub color: String,
    pub member_domains: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionDocument {
    pub schema_version: String,
    pub tool_version: String,
    pub snapshot_label: String,
    pub cut: CutRecord,
    pub clusters: Vec<ClusterEntry>,
}

/// Weighted modularity of a labelling on the valued graph. Zero when the
/// graph carries no weight.
pub fn modularity(graph: &DuplicationGraph, labels: &[usize]) -> f64 {
    let strengths = graph.strengths();
    let two_m: f64 = strengths.iter().sum();
    if two_m <= 0.0 {
        return 0.0;
    }
    let mut internal: BTreeMap<usize, f64> = BTreeMap::new();
    let mut degree: BTreeMap<usize, f64> = BTreeMap::new();
    for (i, &li) in labels.iter().enumerate() {
        *degree.entry(li).or_default() += strengths[i];
        for (j, &lj) in labels.iter().enumerate().skip(i + 1) {
            if li == lj {
                *internal.entry(li).or_default() += graph.value(i, j);
            }
        }
    }
    degree
        .iter()
        .map(|(c, k)| {
            let l = internal.get(c).copied().unwrap_or(0.0);
            2.0 * l / two_m - (k / two_m).powi(2)
        })
        .sum()
}

/// Average-linkage clustering on `1 - r`, then a cut.
///
/// The valued graph supplies weights for modularity; it must be the graph
/// the similarity matrix was computed from. Equal dissimilarities merge the
/// lexicographically smallest `(id, id)` pair first.
pub fn cluster(
    similarity: &SimilarityMatrix,
    graph: &DuplicationGraph,
    cut: CutSpec,
) -> Result<(Dendrogram, Partition)> {
    let n = similarity.len();
    if graph.len() != n {
        return Err(Error::validation(format!(
            "similarity has {n} sites but graph has {}",
            graph.len()
        )));
    }
    if n == 0 {
        return Err(Error::validation("nothing to cluster"));
    }
    if let CutSpec::K { k } = cut {
        if k < 1 || k > n {
            return Err(Error::validation(format!(
                "cluster count k = {k} must lie in 1..={n}"
            )));
        }
    }
    let dendrogram = average_linkage(similarity, graph);

    let (merges, mode) = match cut {
        CutSpec::K { k } => (n - k, "k"),
        CutSpec::Auto => {
            let mut best = 0;
            for (level, &q) in dendrogram.modularity.iter().enumerate() {
                if q > dendrogram.modularity[best] {
                    best = level;
                }
            }
            (best, "auto")
        }
    };
    let labels = dendrogram.labels_after(merges);
    let record = CutRecord {
        mode: mode.to_string(),
        k: Some(n - merges),
        modularity: Some(modularity(graph, &labels)),
    };
    let domains = graph.sites().iter().map(|s| s.domain.clone()).collect();
    let partition = Partition::from_labels(graph.label(), domains, &labels, record)?;
    Ok((dendrogram, partition))
}

fn average_linkage(similarity: &SimilarityMatrix, graph: &DuplicationGraph) -> Dendrogram {
    let n = similarity.len();
    // Slot-indexed working matrices; a merged cluster reuses the lower slot.
    let mut dist: Vec<f64> = (0..n * n).map(|k| 1.0 - similarity.values[k]).collect();
    let mut weight: Vec<f64> = (0..n * n).map(|k| graph.value(k / n, k % n)).collect();
    let mut ids: Vec<usize> = (0..n).collect();
    let mut sizes = vec![1usize; n];
    let mut active: Vec<usize> = (0..n).collect();

    let strengths = graph.strengths();
    let two_m: f64 = strengths.iter().sum();
    let mut cluster_strength = strengths.clone();
    let mut q = if two_m > 0.0 {
        -strengths.iter().map(|k| (k / two_m).powi(2)).sum::<f64>()
    } else {
        0.0
    };
    let mut modularity = Vec::with_capacity(n);
    modularity.push(q);

    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    while active.len() > 1 {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for (x, &a) in active.iter().enumerate() {
            for &b in &active[x + 1..] {
                let d = dist[a * n + b];
                let key = (ids[a].min(ids[b]), ids[a].max(ids[b]));
                let better = match best {
                    None => true,
                    Some((bd, _, _, k0, k1)) => d < bd || (d == bd && key < (k0, k1)),
                };
                if better {
                    best = Some((d, a, b, key.0, key.1));
                }
            }
        }
        let (height, a, b, left, right) = best.expect("at least two active clusters");
        let (keep, gone) = (a.min(b), a.max(b));
        let (sa, sb) = (sizes[a] as f64, sizes[b] as f64);

        if two_m > 0.0 {
            q += 2.0 * weight[a * n + b] / two_m
                - 2.0 * cluster_strength[a] * cluster_strength[b] / (two_m * two_m);
        }
        for &c in &active {
            if c == a || c == b {
                continue;
            }
            let d = (sa * dist[a * n + c] + sb * dist[b * n + c]) / (sa + sb);
            dist[keep * n + c] = d;
            dist[c * n + keep] = d;
            let w = weight[a * n + c] + weight[b * n + c];
            weight[keep * n + c] = w;
            weight[c * n + keep] = w;
        }
        cluster_strength[keep] = cluster_strength[a] + cluster_strength[b];
        sizes[keep] = sizes[a] + sizes[b];
        ids[keep] = n + merges.len();
        active.retain(|&s| s != gone);
        merges.push(Merge {
            left,
            right,
            height,
            size: sizes[keep],
        });
        modularity.push(q);
    }
    Dendrogram {
        leaves: n,
        merges,
        modularity,
    }
}

/// A pairing of a cluster in the earlier partition with one in the later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub left: usize,
    pub right: usize,
    pub jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMatch {
    pub pairs: Vec<MatchPair>,
    /// Clusters of the earlier partition with no counterpart (dissolved).
    pub unmatched_left: Vec<usize>,
    /// Clusters of the later partition with no counterpart (new).
    pub unmatched_right: Vec<usize>,
}

impl ClusterMatch {
    pub fn partner_of_left(&self, left: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.left == left).map(|p| p.right)
    }

    /// Same pairs with the two sides exchanged.
    pub fn swapped(&self) -> ClusterMatch {
        let mut pairs: Vec<MatchPair> = self
            .pairs
            .iter()
            .map(|p| MatchPair {
                left: p.right,
                right: p.left,
                jaccard: p.jaccard,
            })
            .collect();
        pairs.sort_by_key(|p| p.left);
        ClusterMatch {
            pairs,
            unmatched_left: self.unmatched_right.clone(),
            unmatched_right: self.unmatched_left.clone(),
        }
    }
}

/// Greedy maximum-Jaccard pairing of clusters over the sites both
/// partitions contain (matched by domain). Pairs below `threshold` or with
/// no shared member stay unmatched.
///
/// Candidates are taken by descending overlap; ties go to the pair whose
/// shared members include the smallest domain, which no other pair can
/// share, so the result does not depend on argument order.
pub fn match_clusters(earlier: &Partition, later: &Partition, threshold: f64) -> ClusterMatch {
    let later_index: HashMap<&str, usize> = later
        .domains
        .iter()
        .enumerate()
        .map(|(i, d)| (d.as_str(), i))
        .collect();
    let earlier_set: HashSet<&str> = earlier.domains.iter().map(String::as_str).collect();

    let restricted_size = |p: &Partition, keep: &dyn Fn(&str) -> bool| -> Vec<usize> {
        p.clusters
            .iter()
            .map(|ms| ms.iter().filter(|&&m| keep(&p.domains[m])).count())
            .collect()
    };
    let left_sizes = restricted_size(earlier, &|d| later_index.contains_key(d));
    let right_sizes = restricted_size(later, &|d| earlier_set.contains(d));

    // (left, right) -> (shared count, smallest shared domain)
    let mut overlap: BTreeMap<(usize, usize), (usize, &str)> = BTreeMap::new();
    for (i, domain) in earlier.domains.iter().enumerate() {
        if let Some(&j) = later_index.get(domain.as_str()) {
            let key = (earlier.assignment[i], later.assignment[j]);
            let e = overlap.entry(key).or_insert((0, domain.as_str()));
            e.0 += 1;
            if domain.as_str() < e.1 {
                e.1 = domain.as_str();
            }
        }
    }
    let mut candidates: Vec<(f64, &str, usize, usize)> = overlap
        .into_iter()
        .map(|((l, r), (shared, first))| {
            let union = left_sizes[l] + right_sizes[r] - shared;
            (shared as f64 / union as f64, first, l, r)
        })
        .collect();
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));

    let mut used_left = vec![false; earlier.cluster_count()];
    let mut used_right = vec![false; later.cluster_count()];
    let mut pairs = Vec::new();
    for (jaccard, _, l, r) in candidates {
        if jaccard < threshold || used_left[l] || used_right[r] {
            continue;
        }
        used_left[l] = true;
        used_right[r] = true;
        pairs.push(MatchPair {
            left: l,
            right: r,
            jaccard,
        });
    }
    pairs.sort_by_key(|p| p.left);
    ClusterMatch {
        pairs,
        unmatched_left: (0..used_left.len()).filter(|&i| !used_left[i]).collect(),
        unmatched_right: (0..used_right.len()).filter(|&i| !used_right[i]).collect(),
    }
}

/// Chance-corrected agreement between two labellings of the same items.
pub fn adjusted_rand_index<A, B>(left: &[A], right: &[B]) -> Result<f64>
where
    A: std::hash::Hash + Eq,
    B: std::hash::Hash + Eq,
{
    if left.len() != right.len() {
        return Err(Error::validation(format!(
            "label length mismatch: {} vs {}",
            left.len(),
            right.len()
        )));
    }
    let comb2 = |x: usize| (x * x.saturating_sub(1) / 2) as f64;
    let mut a: HashMap<&A, usize> = HashMap::new();
    let mut b: HashMap<&B, usize> = HashMap::new();
    let mut joint: HashMap<(&A, &B), usize> = HashMap::new();
    for (x, y) in left.iter().zip(right) {
        *a.entry(x).or_default() += 1;
        *b.entry(y).or_default() += 1;
        *joint.entry((x, y)).or_default() += 1;
    }
    let total = comb2(left.len());
    let index: f64 = joint.values().map(|&c| comb2(c)).sum();
    let sa: f64 = a.values().map(|&c| comb2(c)).sum();
    let sb: f64 = b.values().map(|&c| comb2(c)).sum();
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sa * sb / total;
    let max = 0.5 * (sa + sb);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

const PALETTE: [&str; 20] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf", "#aec7e8", "#ffbb78", "#98df8a", "#ff9896", "#c5b0d5", "#c49c94",
    "#f7b6d2", "#c7c7c7", "#dbdb8d", "#9edae5",
];

/// Deterministic color for palette slot `i`; beyond the fixed palette, hues
/// step by the golden angle.
pub fn palette_color(i: usize) -> String {
    if let Some(c) = PALETTE.get(i) {
        return (*c).to_string();
    }
    let hue = ((i - PALETTE.len()) as f64 * 137.507_764) % 360.0;
    let (r, g, b) = hsl_to_rgb(hue, 0.55, 0.5);
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn hsl_to_rgb(h: f64, s: f64, l: f64) -> (u8, u8, u8) {
    let c = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = l - c / 2.0;
    let to = |v: f64| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    (to(r), to(g), to(b))
}
