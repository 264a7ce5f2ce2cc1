//! Per-cluster measures: size, distance and thickness.
//!
//! Distance is computed on the binary graph with the cluster contracted to a
//! single node; thickness is the E-I index on valued ties.

use serde::{Deserialize, Serialize};

use crate::duplication::{BinaryGraph, DuplicationGraph};
use crate::error::{Error, Result};
use crate::graphmetrics::bfs_from;
use crate::regions::Partition;

/// Flag set when a cluster has neither internal nor external weight.
pub const FLAG_NO_TIES: &str = "no_ties";
/// Flag set when every standardized cluster had the same E-I index.
pub const FLAG_ZERO_VARIANCE: &str = "zero_variance";

fn member_mask(n: usize, members: &[usize]) -> Result<Vec<bool>> {
    if members.is_empty() {
        return Err(Error::validation("cluster has no members"));
    }
    let mut mask = vec![false; n];
    for &m in members {
        if m >= n {
            return Err(Error::validation(format!(
                "cluster member {m} out of range for {n} nodes"
            )));
        }
        mask[m] = true;
    }
    Ok(mask)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterDistance {
    /// Mean geodesic length from the contracted cluster to every non-member.
    pub mean: f64,
    /// Non-members not reachable from the cluster.
    pub unreachable: usize,
}

/// Mean shortest-path length from the cluster, treated as one node, to all
/// other nodes. Unreachable nodes count as one step beyond the farthest
/// reachable node.
pub fn cluster_distance(graph: &BinaryGraph, members: &[usize]) -> Result<ClusterDistance> {
    let n = graph.len();
    let mask = member_mask(n, members)?;
    let outside = mask.iter().filter(|m| !**m).count();
    if outside == 0 {
        return Err(Error::UndefinedDistance(n));
    }
    // Multi-source BFS from every member equals BFS from the supernode.
    let dist = bfs_from(graph, members);
    let farthest = dist.iter().flatten().copied().max().unwrap_or(0);
    let mut total = 0u64;
    let mut unreachable = 0;
    for v in (0..n).filter(|&v| !mask[v]) {
        match dist[v] {
            Some(d) => total += u64::from(d),
            None => {
                unreachable += 1;
                total += u64::from(farthest) + 1;
            }
        }
    }
    Ok(ClusterDistance {
        mean: total as f64 / outside as f64,
        unreachable,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EiScore {
    pub value: f64,
    /// Summed weight of member–non-member dyads.
    pub external: f64,
    /// Summed weight of member–member dyads, each counted once.
    pub internal: f64,
    /// True when both sums are zero; `value` is then 0.
    pub degenerate: bool,
}

/// Valued E-I index `(E - I) / (E + I)` of a cluster.
pub fn ei_index(graph: &DuplicationGraph, members: &[usize]) -> Result<EiScore> {
    let n = graph.len();
    let mask = member_mask(n, members)?;
    let (mut external, mut internal) = (0.0, 0.0);
    for i in (0..n).filter(|&i| mask[i]) {
        let row = graph.row(i);
        for (j, &w) in row.iter().enumerate() {
            if j == i || w == 0.0 {
                continue;
            }
            if !mask[j] {
                external += w;
            } else if j > i {
                internal += w;
            }
        }
    }
    let sum = external + internal;
    if sum == 0.0 {
        return Ok(EiScore {
            value: 0.0,
            external,
            internal,
            degenerate: true,
        });
    }
    Ok(EiScore {
        value: (external - internal) / sum,
        external,
        internal,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub z: Vec<f64>,
    pub zero_variance: bool,
}

/// Z-scores against the mean and population standard deviation.
pub fn standardize(values: &[f64]) -> Result<Standardized> {
    if values.len() < 2 {
        return Err(Error::StandardizationUndefined(values.len()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd <= f64::EPSILON * mean.abs().max(1.0) {
        return Ok(Standardized {
            z: vec![0.0; values.len()],
            zero_variance: true,
        });
    }
    Ok(Standardized {
        z: values.iter().map(|v| (v - mean) / sd).collect(),
        zero_variance: false,
    })
}

/// Metrics row for one cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CultureMetrics {
    pub id: usize,
    pub size: usize,
    pub distance: f64,
    pub unreachable_count: usize,
    pub ei_index: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ei_standardized: Option<f64>,
    #[serde(default)]
    pub degenerate_flags: Vec<String>,
}

/// Standardizes the E-I index of the listed clusters in place. Other rows
/// lose any previous standardized value.
pub fn standardized_ei(metrics: &mut [CultureMetrics], ids: &[usize]) -> Result<()> {
    let rows: Vec<usize> = ids
        .iter()
        .map(|id| {
            metrics
                .iter()
                .position(|m| m.id == *id)
                .ok_or_else(|| Error::NotFound(format!("cluster {id}")))
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = rows.iter().map(|&r| metrics[r].ei_index).collect();
    let std = standardize(&values)?;
    for m in metrics.iter_mut() {
        m.ei_standardized = None;
        m.degenerate_flags.retain(|f| f != FLAG_ZERO_VARIANCE);
    }
    for (&r, z) in rows.iter().zip(std.z) {
        metrics[r].ei_standardized = Some(z);
        if std.zero_variance {
            metrics[r]
                .degenerate_flags
                .push(FLAG_ZERO_VARIANCE.to_string());
        }
    }
    Ok(())
}

/// One metrics row per cluster, in cluster-id order.
pub fn snapshot_metrics(
    graph: &DuplicationGraph,
    binary: &BinaryGraph,
    partition: &Partition,
) -> Result<Vec<CultureMetrics>> {
    let n = graph.len();
    if binary.len() != n || partition.domains().len() != n {
        return Err(Error::validation(format!(
            "site universes differ: graph {n}, binary {}, partition {}",
            binary.len(),
            partition.domains().len()
        )));
    }
    let same = graph
        .sites()
        .iter()
        .zip(partition.domains())
        .all(|(s, d)| &s.domain == d);
    if !same {
        return Err(Error::validation(
            "partition sites do not match graph sites",
        ));
    }
    partition
        .clusters()
        .iter()
        .enumerate()
        .map(|(id, members)| {
            let distance = cluster_distance(binary, members)?;
            let ei = ei_index(graph, members)?;
            Ok(CultureMetrics {
                id,
                size: members.len(),
                distance: distance.mean,
                unreachable_count: distance.unreachable,
                ei_index: ei.value,
                ei_standardized: None,
                degenerate_flags: if ei.degenerate {
                    vec![FLAG_NO_TIES.to_string()]
                } else {
                    Vec::new()
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub schema_version: String,
    pub tool_version: String,
    pub snapshot_label: String,
    pub clusters: Vec<CultureMetrics>,
}

impl MetricsDocument {
    pub fn new(label: &str, clusters: Vec<CultureMetrics>) -> Self {
        Self {
            schema_version: crate::pipeline::SCHEMA_VERSION.to_string(),
            tool_version: crate::TOOL_VERSION.to_string(),
            snapshot_label: label.to_string(),
            clusters,
        }
    }
}
