//! Fruchterman-Reingold layout and static SVG charts.
//!
//! Three documents are produced: the network map (nodes colored by cluster,
//! ties as lines), the distance/thickness scatter (circle area proportional
//! to cluster size), and E-I trajectories across snapshots. All styling is
//! local to this module.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::duplication::BinaryGraph;
use crate::error::{Error, Result};
use crate::measures::CultureMetrics;
use crate::regions::Partition;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutParams {
    pub width: f64,
    pub height: f64,
    pub iterations: usize,
    /// Starting maximum displacement as a fraction of the frame width.
    pub initial_temperature: f64,
    pub seed: u64,
}

impl Default for LayoutParams {
    fn default() -> Self {
        Self {
            width: 1000.0,
            height: 1000.0,
            iterations: 500,
            initial_temperature: 0.1,
            seed: 0,
        }
    }
}

impl LayoutParams {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::validation("layout needs at least one iteration"));
        }
        if !(self.initial_temperature > 0.0) {
            return Err(Error::validation("layout temperature must be positive"));
        }
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(Error::validation("layout frame must have positive size"));
        }
        Ok(())
    }
}

/// Node coordinates inside `[0, width] × [0, height]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub snapshot_label: String,
    pub params: LayoutParams,
    pub domains: Vec<String>,
    pub positions: Vec<(f64, f64)>,
}

impl Layout {
    pub fn to_document(&self) -> LayoutDocument {
        LayoutDocument {
            schema_version: crate::pipeline::SCHEMA_VERSION.to_string(),
            tool_version: crate::TOOL_VERSION.to_string(),
            snapshot_label: self.snapshot_label.clone(),
            params: self.params,
            positions: self
                .domains
                .iter()
                .zip(&self.positions)
                .map(|(d, &(x, y))| PositionEntry {
                    domain: d.clone(),
                    x,
                    y,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionEntry {
    pub domain: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutDocument {
    pub schema_version: String,
    pub tool_version: String,
    pub snapshot_label: String,
    pub params: LayoutParams,
    pub positions: Vec<PositionEntry>,
}

const MIN_SEPARATION: f64 = 1e-6;

/// Force-directed placement.
///
/// Every pair repels with `k²/d`, every tie attracts with `d²/k`, where
/// `k = sqrt(area / n)`. Per-step displacement is capped by a temperature
/// that falls linearly from `initial_temperature * width` to zero. Forces
/// are summed in node order, so results do not depend on thread count.
pub fn fr_layout(graph: &BinaryGraph, label: &str, params: &LayoutParams) -> Result<Layout> {
    params.validate()?;
    let n = graph.len();
    let (w, h) = (params.width, params.height);
    let domains = graph.sites().iter().map(|s| s.domain.clone()).collect();
    let mut pos: Vec<(f64, f64)> = if n == 1 {
        vec![(w / 2.0, h / 2.0)]
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        (0..n)
            .map(|_| (rng.gen::<f64>() * w, rng.gen::<f64>() * h))
            .collect()
    };
    if n > 1 {
        let k = (w * h / n as f64).sqrt();
        let k2 = k * k;
        let t0 = params.initial_temperature * w;
        for step in 0..params.iterations {
            let temperature = t0 * (1.0 - step as f64 / params.iterations as f64);
            let snapshot = &pos;
            let disp: Vec<(f64, f64)> = (0..n)
                .into_par_iter()
                .map(|v| {
                    let (vx, vy) = snapshot[v];
                    let (mut fx, mut fy) = (0.0, 0.0);
                    for (u, &(ux, uy)) in snapshot.iter().enumerate() {
                        if u == v {
                            continue;
                        }
                        let (dx, dy, d) = separation(vx - ux, vy - uy, v, u);
                        let repulse = k2 / d;
                        fx += dx / d * repulse;
                        fy += dy / d * repulse;
                    }
                    for &u in graph.neighbors(v) {
                        let (ux, uy) = snapshot[u];
                        let (dx, dy, d) = separation(vx - ux, vy - uy, v, u);
                        let attract = d * d / k;
                        fx -= dx / d * attract;
                        fy -= dy / d * attract;
                    }
                    (fx, fy)
                })
                .collect();
            for (p, (fx, fy)) in pos.iter_mut().zip(disp) {
                let len = (fx * fx + fy * fy).sqrt();
                if len > 0.0 {
                    let step_len = len.min(temperature);
                    p.0 = (p.0 + fx / len * step_len).clamp(0.0, w);
                    p.1 = (p.1 + fy / len * step_len).clamp(0.0, h);
                }
            }
        }
    }
    Ok(Layout {
        snapshot_label: label.to_string(),
        params: *params,
        domains,
        positions: pos,
    })
}

/// Offset between two nodes, nudged apart along a fixed direction when they
/// coincide.
fn separation(dx: f64, dy: f64, v: usize, u: usize) -> (f64, f64, f64) {
    let d = (dx * dx + dy * dy).sqrt();
    if d >= MIN_SEPARATION {
        return (dx, dy, d);
    }
    let sign = if v < u { -1.0 } else { 1.0 };
    let e = MIN_SEPARATION * std::f64::consts::FRAC_1_SQRT_2;
    (sign * e, sign * e, MIN_SEPARATION)
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn svg_open(out: &mut String, width: f64, height: f64, title: &str) {
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = writeln!(out, "<title>{}</title>", escape(title));
    let _ = writeln!(
        out,
        r##"<rect x="0" y="0" width="{width:.0}" height="{height:.0}" fill="#ffffff"/>"##
    );
}

const MAP_MARGIN: f64 = 20.0;
const LEGEND_WIDTH: f64 = 180.0;

/// Network map: one circle per site colored by cluster, one line per tie,
/// one legend entry per cluster.
pub fn render_map(layout: &Layout, partition: &Partition, graph: &BinaryGraph) -> Result<String> {
    let n = graph.len();
    let graph_domains = graph.sites().iter().map(|s| &s.domain);
    if layout.domains.len() != n
        || partition.domains().len() != n
        || !graph_domains
            .clone()
            .zip(&layout.domains)
            .all(|(a, b)| a == b)
        || !graph_domains.zip(partition.domains()).all(|(a, b)| a == b)
    {
        return Err(Error::validation(
            "layout, partition and graph cover different sites",
        ));
    }
    let (w, h) = (layout.params.width, layout.params.height);
    let total_w = w + 2.0 * MAP_MARGIN + LEGEND_WIDTH;
    let legend_h = 40.0 + 18.0 * partition.cluster_count() as f64;
    let total_h = (h + 2.0 * MAP_MARGIN).max(legend_h);
    let mut out = String::new();
    svg_open(
        &mut out,
        total_w,
        total_h,
        &format!("Ethnological map {}", layout.snapshot_label),
    );
    let px = |(x, y): (f64, f64)| (x + MAP_MARGIN, y + MAP_MARGIN);

    out.push_str(
        r##"<g class="edges" stroke="#9a9a9a" stroke-opacity="0.25" stroke-width="0.4">"##,
    );
    out.push('\n');
    for (i, j) in graph.edges() {
        let (x1, y1) = px(layout.positions[i]);
        let (x2, y2) = px(layout.positions[j]);
        let _ = writeln!(
            out,
            r#"<line class="edge" x1="{x1:.3}" y1="{y1:.3}" x2="{x2:.3}" y2="{y2:.3}"/>"#
        );
    }
    out.push_str("</g>\n<g class=\"nodes\">\n");
    for (i, domain) in layout.domains.iter().enumerate() {
        let (x, y) = px(layout.positions[i]);
        let cluster = partition.assignment()[i];
        let _ = writeln!(
            out,
            r#"<circle class="node" data-domain="{}" data-cluster="{cluster}" cx="{x:.3}" cy="{y:.3}" r="4" fill="{}"/>"#,
            escape(domain),
            escape(&partition.colors()[cluster]),
        );
    }
    out.push_str("</g>\n");
    let lx = w + 2.0 * MAP_MARGIN;
    let _ = writeln!(
        out,
        r#"<g class="legend" font-family="sans-serif" font-size="12"><text x="{lx:.0}" y="24">Clusters</text>"#
    );
    for id in 0..partition.cluster_count() {
        let y = 40.0 + 18.0 * id as f64;
        let _ = writeln!(
            out,
            r#"<g class="legend-entry" data-cluster="{id}"><rect x="{lx:.0}" y="{:.0}" width="12" height="12" fill="{}"/><text x="{:.0}" y="{:.0}">cluster {id} ({} sites)</text></g>"#,
            y - 10.0,
            escape(&partition.colors()[id]),
            lx + 18.0,
            y,
            partition.members(id).len(),
        );
    }
    out.push_str("</g>\n</svg>\n");
    Ok(out)
}

const PLOT_W: f64 = 640.0;
const PLOT_H: f64 = 480.0;
const PLOT_LEFT: f64 = 70.0;
const PLOT_TOP: f64 = 30.0;
const MAX_RADIUS: f64 = 36.0;

/// Linear mapping from data to pixel coordinates, written into the SVG so
/// readers can invert it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axes {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Axes {
    pub fn to_px(&self, x: f64, y: f64) -> (f64, f64) {
        (
            PLOT_LEFT + (x - self.x_min) / (self.x_max - self.x_min) * PLOT_W,
            PLOT_TOP + (self.y_max - y) / (self.y_max - self.y_min) * PLOT_H,
        )
    }

    pub fn from_px(&self, px: f64, py: f64) -> (f64, f64) {
        (
            self.x_min + (px - PLOT_LEFT) / PLOT_W * (self.x_max - self.x_min),
            self.y_max - (py - PLOT_TOP) / PLOT_H * (self.y_max - self.y_min),
        )
    }

    fn write_frame(&self, out: &mut String, x_label: &str, y_label: &str) {
        let _ = writeln!(
            out,
            r#"<g class="plot" data-x-min="{}" data-x-max="{}" data-y-min="{}" data-y-max="{}" font-family="sans-serif" font-size="12">"#,
            self.x_min, self.x_max, self.y_min, self.y_max
        );
        let (x0, y0) = (PLOT_LEFT, PLOT_TOP + PLOT_H);
        let _ = writeln!(
            out,
            r##"<line class="axis" x1="{x0}" y1="{y0}" x2="{}" y2="{y0}" stroke="#333333"/>"##,
            PLOT_LEFT + PLOT_W
        );
        let _ = writeln!(
            out,
            r##"<line class="axis" x1="{x0}" y1="{PLOT_TOP}" x2="{x0}" y2="{y0}" stroke="#333333"/>"##
        );
        for t in 0..=4 {
            let f = t as f64 / 4.0;
            let xv = self.x_min + f * (self.x_max - self.x_min);
            let yv = self.y_min + f * (self.y_max - self.y_min);
            let (px, _) = self.to_px(xv, self.y_min);
            let (_, py) = self.to_px(self.x_min, yv);
            let _ = writeln!(
                out,
                r#"<text class="tick" x="{px:.1}" y="{:.1}" text-anchor="middle">{xv:.2}</text><text class="tick" x="{:.1}" y="{py:.1}" text-anchor="end">{yv:.2}</text>"#,
                y0 + 16.0,
                x0 - 6.0,
            );
        }
        let _ = writeln!(
            out,
            r#"<text class="axis-label" x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            PLOT_LEFT + PLOT_W / 2.0,
            y0 + 40.0,
            escape(x_label)
        );
        let _ = writeln!(
            out,
            r#"<text class="axis-label" x="20" y="{:.1}" text-anchor="middle" transform="rotate(-90 20 {:.1})">{}</text>"#,
            PLOT_TOP + PLOT_H / 2.0,
            PLOT_TOP + PLOT_H / 2.0,
            escape(y_label)
        );
    }
}

/// Circle radius for a cluster: area proportional to size.
pub fn scatter_radius(size: usize, max_size: usize) -> f64 {
    MAX_RADIUS * (size as f64 / max_size.max(1) as f64).sqrt()
}

/// Distance (x) against E-I index (y), one circle per cluster.
pub fn render_scatter(
    label: &str,
    metrics: &[CultureMetrics],
    colors: &[String],
) -> Result<String> {
    if metrics.is_empty() {
        return Err(Error::validation("scatter needs at least one cluster"));
    }
    let lo = metrics
        .iter()
        .map(|m| m.distance)
        .fold(f64::INFINITY, f64::min);
    let hi = metrics
        .iter()
        .map(|m| m.distance)
        .fold(f64::NEG_INFINITY, f64::max);
    let pad = ((hi - lo) * 0.1).max(0.1);
    let axes = Axes {
        x_min: lo - pad,
        x_max: hi + pad,
        y_min: -1.1,
        y_max: 1.1,
    };
    let max_size = metrics.iter().map(|m| m.size).max().unwrap_or(1);
    let mut out = String::new();
    svg_open(
        &mut out,
        PLOT_LEFT + PLOT_W + 40.0,
        PLOT_TOP + PLOT_H + 60.0,
        &format!("Cluster distance and thickness {label}"),
    );
    axes.write_frame(&mut out, "distance", "thickness (E-I index)");
    for m in metrics {
        let (cx, cy) = axes.to_px(m.distance, m.ei_index);
        let color = colors.get(m.id).map_or("#1f77b4", String::as_str);
        let _ = writeln!(
            out,
            r#"<circle class="cluster" data-cluster="{}" data-size="{}" data-distance="{}" data-ei="{}" cx="{cx:.4}" cy="{cy:.4}" r="{:.4}" fill="{}" fill-opacity="0.6"/>"#,
            m.id,
            m.size,
            m.distance,
            m.ei_index,
            scatter_radius(m.size, max_size),
            escape(color),
        );
        let _ = writeln!(
            out,
            r#"<text class="cluster-label" x="{cx:.1}" y="{cy:.1}" text-anchor="middle">{}</text>"#,
            m.id
        );
    }
    out.push_str("</g>\n</svg>\n");
    Ok(out)
}

/// Standardized E-I of one homologous cluster across snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub name: String,
    pub color: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryChart {
    pub svg: String,
    /// Set when there was nothing to plot.
    pub warning: Option<String>,
}

pub const NO_TRAJECTORIES: &str = "no homologous clusters across snapshots";

/// One labelled polyline per homologous cluster.
pub fn render_trajectories(snapshots: &[String], series: &[Trajectory]) -> Result<TrajectoryChart> {
    if snapshots.len() < 2 {
        return Err(Error::validation(
            "trajectories need at least two snapshots",
        ));
    }
    if let Some(t) = series.iter().find(|t| t.values.len() != snapshots.len()) {
        return Err(Error::validation(format!(
            "trajectory {:?} has {} points for {} snapshots",
            t.name,
            t.values.len(),
            snapshots.len()
        )));
    }
    let reach = series
        .iter()
        .flat_map(|t| t.values.iter())
        .fold(1.0f64, |m, v| m.max(v.abs()));
    let axes = Axes {
        x_min: -0.25,
        x_max: (snapshots.len() - 1) as f64 + 0.25,
        y_min: -reach * 1.1,
        y_max: reach * 1.1,
    };
    let mut out = String::new();
    svg_open(
        &mut out,
        PLOT_LEFT + PLOT_W + 120.0,
        PLOT_TOP + PLOT_H + 60.0,
        "Thickening of regional clusters over time",
    );
    axes.write_frame(&mut out, "snapshot", "relative E-I (standardized)");
    for (i, s) in snapshots.iter().enumerate() {
        let (px, _) = axes.to_px(i as f64, axes.y_min);
        let _ = writeln!(
            out,
            r#"<text class="snapshot" x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            PLOT_TOP + PLOT_H + 28.0,
            escape(s)
        );
    }
    let warning = if series.is_empty() {
        let _ = writeln!(
            out,
            r#"<text class="warning" x="{:.1}" y="{:.1}" text-anchor="middle">{NO_TRAJECTORIES}</text>"#,
            PLOT_LEFT + PLOT_W / 2.0,
            PLOT_TOP + PLOT_H / 2.0
        );
        Some(NO_TRAJECTORIES.to_string())
    } else {
        None
    };
    for t in series {
        let points: Vec<String> = t
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let (x, y) = axes.to_px(i as f64, v);
                format!("{x:.3},{y:.3}")
            })
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline class="trajectory" data-cluster="{}" points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            escape(&t.name),
            points.join(" "),
            escape(&t.color)
        );
        let last = t.values[t.values.len() - 1];
        let (x, y) = axes.to_px((t.values.len() - 1) as f64, last);
        let _ = writeln!(
            out,
            r#"<text class="trajectory-label" x="{:.1}" y="{y:.1}">{}</text>"#,
            x + 8.0,
            escape(&t.name)
        );
    }
    out.push_str("</g>\n</svg>\n");
    Ok(TrajectoryChart { svg: out, warning })
}
