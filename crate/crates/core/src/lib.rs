//! Usage-based mapping of web cultures.
//!
//! The crate turns user×site visitation panels into audience duplication
//! networks, partitions those networks into regional clusters of sites, scores
//! every cluster's distance (contracted-node farness) and thickness (valued
//! E-I index), and renders maps and charts as SVG.
//!
//! Module map, in pipeline order:
//!
//! - [`panel`]: visitation panels, reach, top-N selection.
//! - [`duplication`]: observed/expected/above-random duplication and graphs.
//! - [`graphmetrics`]: density, clustering coefficient, geodesics.
//! - [`regions`]: profile similarity, average-linkage clustering, cuts, matching.
//! - [`measures`]: per-cluster distance and E-I metrics.
//! - [`cartograph`]: force-directed layout and SVG rendering.
//! - [`synthworld`]: planted geo-linguistic panel generator.
//! - [`pipeline`]: run configuration, stage artifacts and multi-snapshot runs.

pub mod cartograph;
pub mod duplication;
pub mod error;
pub mod graphmetrics;
pub mod measures;
pub mod panel;
pub mod pipeline;
pub mod regions;
pub mod synthworld;

pub use error::{Error, Result};

/// Version string stamped into every JSON artifact.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
