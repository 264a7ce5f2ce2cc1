//! Run configuration, stage functions and the multi-snapshot pipeline.
//!
//! Every stage reads and writes the same JSON artifacts, so a run split
//! into separate commands produces the files a one-shot run produces.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cartograph::{self, Layout, LayoutParams, Trajectory};
use crate::duplication::{self, DuplicationGraph, GraphDocument};
use crate::error::{Error, Result};
use crate::graphmetrics::GraphSummary;
use crate::measures::{self, CultureMetrics, MetricsDocument};
use crate::panel::{self, PanelSnapshot};
use crate::regions::{self, ClusterMatch, CutRecord, CutSpec, Partition};
use crate::synthworld::{self, WorldSpec};

/// Schema id carried by every JSON artifact.
pub const SCHEMA_VERSION: &str = "ethnomap/1";
/// Schema id a run configuration must declare.
pub const CONFIG_SCHEMA: &str = "ethnomap-run/1";

pub const DEFAULT_TOP_N: usize = 1000;
pub const DEFAULT_MIN_MAJOR_SIZE: usize = 3;

const DISTANCE_NOTE: &str = "distance uses unweighted geodesics on the dichotomized graph";

/// A panel read from disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelSource {
    pub label: String,
    pub visits: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sites: Option<PathBuf>,
}

/// A synthetic series: the world spec plus how many snapshots to draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSource {
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(flatten)]
    pub spec: WorldSpec,
}

fn default_snapshots() -> usize {
    3
}

impl WorldSource {
    /// Snapshot labels, `t0`, `t1`, ... unless given.
    pub fn snapshot_labels(&self) -> Vec<String> {
        match &self.labels {
            Some(l) => l.clone(),
            None => (0..self.snapshots).map(|i| format!("t{i}")).collect(),
        }
    }
}

/// Layout settings; the seed always comes from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutSettings {
    pub width: f64,
    pub height: f64,
    pub iterations: usize,
    pub initial_temperature: f64,
}

impl Default for LayoutSettings {
    fn default() -> Self {
        let p = LayoutParams::default();
        Self {
            width: p.width,
            height: p.height,
            iterations: p.iterations,
            initial_temperature: p.initial_temperature,
        }
    }
}

impl LayoutSettings {
    pub fn params(&self, seed: u64) -> LayoutParams {
        LayoutParams {
            width: self.width,
            height: self.height,
            iterations: self.iterations,
            initial_temperature: self.initial_temperature,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    #[serde(default)]
    pub cut: CutSpec,
    #[serde(default = "default_threshold")]
    pub match_threshold: f64,
    #[serde(default = "default_min_major")]
    pub min_major_size: usize,
    #[serde(default)]
    pub layout: LayoutSettings,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub panels: Vec<PanelSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world: Option<WorldSource>,
}

fn default_top_n() -> usize {
    DEFAULT_TOP_N
}

fn default_threshold() -> f64 {
    regions::DEFAULT_MATCH_THRESHOLD
}

fn default_min_major() -> usize {
    DEFAULT_MIN_MAJOR_SIZE
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    /// A config over a synthetic world with every other setting defaulted.
    pub fn for_world(world: WorldSource, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            schema: CONFIG_SCHEMA.to_string(),
            seed: world.spec.seed,
            top_n: DEFAULT_TOP_N,
            cut: CutSpec::default(),
            match_threshold: regions::DEFAULT_MATCH_THRESHOLD,
            min_major_size: DEFAULT_MIN_MAJOR_SIZE,
            layout: LayoutSettings::default(),
            output_dir: output_dir.into(),
            panels: Vec::new(),
            world: Some(world),
        }
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let mut config = Self::from_toml(&text, path)?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        config.output_dir = base.join(&config.output_dir);
        for p in &mut config.panels {
            p.visits = base.join(&p.visits);
            p.sites = p.sites.as_ref().map(|s| base.join(s));
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::validation(format!(
                "config schema {:?} is not {CONFIG_SCHEMA:?}",
                self.schema
            )));
        }
        if self.top_n < 2 {
            return Err(Error::validation(format!(
                "top_n must be at least 2, got {}",
                self.top_n
            )));
        }
        if !(0.0..=1.0).contains(&self.match_threshold) {
            return Err(Error::validation("match_threshold must lie in [0, 1]"));
        }
        if self.min_major_size == 0 {
            return Err(Error::validation("min_major_size must be positive"));
        }
        if let CutSpec::K { k } = self.cut {
            if k == 0 {
                return Err(Error::validation("cut k must be positive"));
            }
        }
        self.layout.params(self.seed).validate()?;
        match (&self.world, self.panels.is_empty()) {
            (None, true) => return Err(Error::validation("config needs panels or a world")),
            (Some(_), false) => {
                return Err(Error::validation(
                    "config takes panels or a world, not both",
                ))
            }
            (Some(w), true) => {
                if w.snapshots == 0 {
                    return Err(Error::validation("world needs at least one snapshot"));
                }
                if let Some(l) = &w.labels {
                    if l.len() != w.snapshots {
                        return Err(Error::validation(format!(
                            "{} labels for {} snapshots",
                            l.len(),
                            w.snapshots
                        )));
                    }
                }
                self.world_spec().expect("world present").validate()?;
            }
            (None, false) => {}
        }
        let labels = self.snapshot_labels();
        let mut seen = BTreeSet::new();
        for l in &labels {
            validate_label(l)?;
            if !seen.insert(l.as_str()) {
                return Err(Error::validation(format!(
                    "snapshot label {l:?} appears twice"
                )));
            }
        }
        Ok(())
    }

    pub fn snapshot_labels(&self) -> Vec<String> {
        match &self.world {
            Some(w) => w.snapshot_labels(),
            None => self.panels.iter().map(|p| p.label.clone()).collect(),
        }
    }

    /// The world spec with the run seed in place of its own.
    pub fn world_spec(&self) -> Option<WorldSpec> {
        self.world.as_ref().map(|w| WorldSpec {
            seed: self.seed,
            ..w.spec.clone()
        })
    }

    pub fn layout_params(&self) -> LayoutParams {
        self.layout.params(self.seed)
    }
}

/// Labels become file name parts, so they are restricted to
/// `[A-Za-z0-9._-]` and may not start with a dot.
pub fn validate_label(label: &str) -> Result<()> {
    let ok = !label.is_empty()
        && !label.starts_with('.')
        && label
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    if ok {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "snapshot label {label:?} must be non-empty [A-Za-z0-9._-] not starting with '.'"
        )))
    }
}

/// Artifact file names for one snapshot.
pub mod files {
    pub fn panel(label: &str) -> String {
        format!("panel_{label}.csv")
    }
    pub fn sites(label: &str) -> String {
        format!("sites_{label}.csv")
    }
    pub fn graph(label: &str) -> String {
        format!("graph_{label}.json")
    }
    pub fn summary(label: &str) -> String {
        format!("summary_{label}.json")
    }
    pub fn partition(label: &str) -> String {
        format!("partition_{label}.json")
    }
    pub fn metrics(label: &str) -> String {
        format!("metrics_{label}.json")
    }
    pub fn layout(label: &str) -> String {
        format!("layout_{label}.json")
    }
    pub fn map(label: &str) -> String {
        format!("map_{label}.svg")
    }
    pub fn scatter(label: &str) -> String {
        format!("scatter_{label}.svg")
    }
    pub fn report(label: &str) -> String {
        format!("report_{label}.json")
    }
    pub const MATCHES: &str = "matches.json";
    pub const TRAJECTORIES: &str = "trajectories.svg";
    pub const RUN: &str = "run.json";
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Dependency {
            path: path.to_path_buf(),
        },
        _ => Error::io(path, e),
    })
}

/// Reads a JSON artifact; a missing file is a dependency error.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact types serialize");
    s.push('\n');
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json(value))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Loads a graph artifact.
pub fn load_graph(path: &Path) -> Result<DuplicationGraph> {
    let doc: GraphDocument = read_json(path)?;
    DuplicationGraph::from_document(&doc)
}

/// Loads a partition artifact over the sites of `graph`.
pub fn load_partition(path: &Path, graph: &DuplicationGraph) -> Result<Partition> {
    let doc = read_json(path)?;
    Partition::from_document(&doc, graph)
}

/// Panel → top-n sites → valued duplication graph.
pub fn graph_stage(snapshot: &PanelSnapshot, top_n: usize) -> Result<DuplicationGraph> {
    let top = snapshot.top_n(top_n)?;
    duplication::build_valued_graph(&top)
}

/// Similarity, clustering and cut. With a previous partition, matched
/// clusters take over its colors.
pub fn cluster_stage(
    graph: &DuplicationGraph,
    cut: CutSpec,
    previous: Option<&Partition>,
    threshold: f64,
) -> Result<(Partition, Option<ClusterMatch>)> {
    let similarity = regions::profile_similarity(graph)?;
    let (_, mut partition) = regions::cluster(&similarity, graph, cut)?;
    let matches = previous.map(|prev| {
        let m = regions::match_clusters(prev, &partition, threshold);
        partition.inherit_colors(prev, &m);
        m
    });
    Ok((partition, matches))
}

/// Clusters standardized when no homologous set is given.
pub fn major_clusters(partition: &Partition, min_size: usize) -> Vec<usize> {
    (0..partition.cluster_count())
        .filter(|&id| partition.members(id).len() >= min_size)
        .collect()
}

/// Per-cluster metrics, standardized over `standardize` when it names at
/// least two clusters. Returns a note when standardization was skipped.
pub fn measure_stage(
    graph: &DuplicationGraph,
    partition: &Partition,
    standardize: &[usize],
) -> Result<(Vec<CultureMetrics>, Option<String>)> {
    let binary = duplication::dichotomize(graph);
    let mut metrics = measures::snapshot_metrics(graph, &binary, partition)?;
    if standardize.len() < 2 {
        let note = format!(
            "E-I not standardized: {} cluster(s) in the comparison set",
            standardize.len()
        );
        return Ok((metrics, Some(note)));
    }
    measures::standardized_ei(&mut metrics, standardize)?;
    Ok((metrics, None))
}

/// Force-directed layout and the map drawn from it.
pub fn layout_stage(
    graph: &DuplicationGraph,
    partition: &Partition,
    params: &LayoutParams,
) -> Result<(Layout, String)> {
    let binary = duplication::dichotomize(graph);
    let layout = cartograph::fr_layout(&binary, graph.label(), params)?;
    let svg = cartograph::render_map(&layout, partition, &binary)?;
    Ok((layout, svg))
}

/// Agreement of the partition with the sites' region tags, when every
/// site has one.
pub fn tag_agreement(graph: &DuplicationGraph, partition: &Partition) -> Result<Option<f64>> {
    let tags: Option<Vec<&str>> = graph
        .sites()
        .iter()
        .map(|s| s.region_tag.as_deref())
        .collect();
    match tags {
        Some(t) if !t.is_empty() => Ok(Some(regions::adjusted_rand_index(
            partition.assignment(),
            &t,
        )?)),
        _ => Ok(None),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotReport {
    pub schema_version: String,
    pub tool_version: String,
    pub snapshot_label: String,
    pub pairs_evaluated: u64,
    pub summary: GraphSummary,
    pub partition_file: String,
    pub cut: CutRecord,
    pub cluster_count: usize,
    pub metrics: Vec<CultureMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_ari: Option<f64>,
    pub notes: Vec<String>,
    pub files: Vec<FileEntry>,
}

/// Written in place of a report when a snapshot fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotFailure {
    pub schema_version: String,
    pub tool_version: String,
    pub snapshot_label: String,
    pub stage: String,
    pub error: String,
    pub exit_code: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub from: String,
    pub to: String,
    #[serde(flatten)]
    pub matches: ClusterMatch,
}

/// A cluster followed through every surviving snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub name: String,
    pub color: String,
    /// Cluster id in each surviving snapshot.
    pub clusters: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchesDocument {
    pub schema_version: String,
    pub tool_version: String,
    pub snapshots: Vec<String>,
    pub threshold: f64,
    pub transitions: Vec<Transition>,
    pub chains: Vec<Chain>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotStatus {
    pub label: String,
    pub status: String,
    pub report: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDocument {
    pub schema_version: String,
    pub tool_version: String,
    pub seed: u64,
    pub top_n: usize,
    pub cut: CutSpec,
    pub match_threshold: f64,
    pub min_major_size: usize,
    pub layout: LayoutParams,
    pub snapshots: Vec<SnapshotStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_warning: Option<String>,
    pub files: Vec<FileEntry>,
}

/// What a run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub reports: Vec<SnapshotReport>,
    pub failures: Vec<SnapshotFailure>,
    pub matches: Option<MatchesDocument>,
    pub trajectory_warning: Option<String>,
}

/// Per-snapshot state carried from the parallel phase to the join.
struct Stage1 {
    label: String,
    graph: DuplicationGraph,
    summary: GraphSummary,
    partition: Partition,
    layout: Layout,
    inputs: Vec<FileEntry>,
}

struct Failed {
    stage: &'static str,
    error: Error,
}

fn at(stage: &'static str) -> impl Fn(Error) -> Failed {
    move |error| Failed { stage, error }
}

/// Writes a file under `dir` and returns its manifest entry.
fn emit(dir: &Path, name: &str, text: &str) -> Result<FileEntry> {
    write_text(&dir.join(name), text)?;
    Ok(FileEntry {
        path: name.to_string(),
        sha256: sha256_hex(text.as_bytes()),
    })
}

fn load_snapshot(
    config: &RunConfig,
    index: usize,
    label: &str,
) -> std::result::Result<(PanelSnapshot, Vec<FileEntry>), Failed> {
    let dir = &config.output_dir;
    match config.world_spec() {
        Some(spec) => {
            let (generated, _) =
                synthworld::generate_snapshot(&spec, index, label).map_err(at("generate"))?;
            let written = write_panel_files(&generated, dir).map_err(at("generate"))?;
            // Read back so a run matches stages fed from the same CSV files.
            let snapshot = panel::load_panel(
                label,
                &dir.join(files::panel(label)),
                Some(&dir.join(files::sites(label))),
            )
            .map_err(at("load"))?;
            Ok((snapshot, written))
        }
        None => {
            let source = &config.panels[index];
            let snapshot = panel::load_panel(label, &source.visits, source.sites.as_deref())
                .map_err(at("load"))?;
            Ok((snapshot, Vec::new()))
        }
    }
}

/// Writes `panel_L.csv` and `sites_L.csv` for a snapshot.
pub fn write_panel_files(snapshot: &PanelSnapshot, dir: &Path) -> Result<Vec<FileEntry>> {
    let label = snapshot.label();
    let mut visits = Vec::new();
    snapshot.write_visits(&mut visits)?;
    let mut sites = Vec::new();
    snapshot.write_sites(&mut sites)?;
    let to_text = |b: Vec<u8>| String::from_utf8(b).expect("csv output is utf-8");
    Ok(vec![
        emit(dir, &files::panel(label), &to_text(visits))?,
        emit(dir, &files::sites(label), &to_text(sites))?,
    ])
}

fn first_phase(
    config: &RunConfig,
    index: usize,
    label: &str,
) -> std::result::Result<Stage1, Failed> {
    let (snapshot, inputs) = load_snapshot(config, index, label)?;
    let graph = graph_stage(&snapshot, config.top_n).map_err(at("graph"))?;
    let binary = duplication::dichotomize(&graph);
    let summary = GraphSummary::of(&binary).map_err(at("graph"))?;
    let (partition, _) =
        cluster_stage(&graph, config.cut, None, config.match_threshold).map_err(at("cluster"))?;
    let layout =
        cartograph::fr_layout(&binary, label, &config.layout_params()).map_err(at("layout"))?;
    Ok(Stage1 {
        label: label.to_string(),
        graph,
        summary,
        partition,
        layout,
        inputs,
    })
}

/// Follows clusters of at least `min_size` sites through consecutive
/// matches; only chains present and major in every snapshot are kept.
pub fn homologous_chains(
    partitions: &[&Partition],
    transitions: &[ClusterMatch],
    min_size: usize,
) -> Vec<Chain> {
    let Some(first) = partitions.first() else {
        return Vec::new();
    };
    let mut chains = Vec::new();
    for start in major_clusters(first, min_size) {
        let mut ids = vec![start];
        let mut ok = true;
        for (t, m) in transitions.iter().enumerate() {
            match m.partner_of_left(*ids.last().expect("non-empty")) {
                Some(next) if partitions[t + 1].members(next).len() >= min_size => ids.push(next),
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            let top = first.members(start)[0];
            chains.push(Chain {
                name: first.domains()[top].clone(),
                color: partitions.last().expect("non-empty").colors()
                    [*ids.last().expect("non-empty")]
                .clone(),
                clusters: ids,
            });
        }
    }
    chains
}

fn finish_snapshot(
    config: &RunConfig,
    s: &Stage1,
    standardize: &[usize],
) -> std::result::Result<SnapshotReport, Failed> {
    let dir = &config.output_dir;
    let label = &s.label;
    let (metrics, note) =
        measure_stage(&s.graph, &s.partition, standardize).map_err(at("measure"))?;
    let binary = duplication::dichotomize(&s.graph);
    let map = cartograph::render_map(&s.layout, &s.partition, &binary).map_err(at("render"))?;
    let scatter =
        cartograph::render_scatter(label, &metrics, s.partition.colors()).map_err(at("render"))?;
    let ari = tag_agreement(&s.graph, &s.partition).map_err(at("measure"))?;

    let write = |name: String, text: String| emit(dir, &name, &text).map_err(at("write"));
    let mut manifest = s.inputs.clone();
    manifest.push(write(files::graph(label), to_json(&s.graph.to_document()))?);
    manifest.push(write(files::summary(label), to_json(&s.summary))?);
    manifest.push(write(
        files::partition(label),
        to_json(&s.partition.to_document()),
    )?);
    manifest.push(write(
        files::metrics(label),
        to_json(&MetricsDocument::new(label, metrics.clone())),
    )?);
    manifest.push(write(
        files::layout(label),
        to_json(&s.layout.to_document()),
    )?);
    manifest.push(write(files::map(label), map)?);
    manifest.push(write(files::scatter(label), scatter)?);

    let mut notes = vec![DISTANCE_NOTE.to_string()];
    notes.extend(note);
    let report = SnapshotReport {
        schema_version: SCHEMA_VERSION.to_string(),
        tool_version: crate::TOOL_VERSION.to_string(),
        snapshot_label: label.clone(),
        pairs_evaluated: s.graph.pairs_evaluated(),
        summary: s.summary.clone(),
        partition_file: files::partition(label),
        cut: s.partition.cut().clone(),
        cluster_count: s.partition.cluster_count(),
        metrics,
        ground_truth_ari: ari,
        notes,
        files: manifest,
    };
    write_json(&dir.join(files::report(label)), &report).map_err(at("write"))?;
    Ok(report)
}

fn failure(label: &str, f: Failed) -> SnapshotFailure {
    SnapshotFailure {
        schema_version: SCHEMA_VERSION.to_string(),
        tool_version: crate::TOOL_VERSION.to_string(),
        snapshot_label: label.to_string(),
        stage: f.stage.to_string(),
        error: f.error.to_string(),
        exit_code: f.error.exit_code(),
    }
}

/// Runs every snapshot, then matching, standardization and the trajectory
/// chart over the snapshots that succeeded. A failing snapshot gets a
/// failure report; only configuration and output errors abort the run.
pub fn run_pipeline(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let labels = config.snapshot_labels();

    let first: Vec<std::result::Result<Stage1, Failed>> = labels
        .par_iter()
        .enumerate()
        .map(|(i, l)| first_phase(config, i, l))
        .collect();

    let mut failures = Vec::new();
    let mut alive: Vec<Stage1> = Vec::new();
    for (label, r) in labels.iter().zip(first) {
        match r {
            Ok(s) => alive.push(s),
            Err(f) => failures.push(failure(label, f)),
        }
    }

    let mut transitions = Vec::new();
    for i in 1..alive.len() {
        let (before, after) = alive.split_at_mut(i);
        let prev = &before[i - 1].partition;
        let m = regions::match_clusters(prev, &after[0].partition, config.match_threshold);
        after[0].partition.inherit_colors(prev, &m);
        transitions.push(m);
    }

    let partitions: Vec<&Partition> = alive.iter().map(|s| &s.partition).collect();
    let chains = if alive.len() == 1 {
        Vec::new()
    } else {
        homologous_chains(&partitions, &transitions, config.min_major_size)
    };
    let standardize: Vec<Vec<usize>> = (0..alive.len())
        .map(|i| {
            if alive.len() == 1 {
                major_clusters(&alive[0].partition, config.min_major_size)
            } else {
                chains.iter().map(|c| c.clusters[i]).collect()
            }
        })
        .collect();

    let finished: Vec<std::result::Result<SnapshotReport, Failed>> = alive
        .par_iter()
        .zip(&standardize)
        .map(|(s, ids)| finish_snapshot(config, s, ids))
        .collect();
    let mut reports = Vec::new();
    for (s, r) in alive.iter().zip(finished) {
        match r {
            Ok(rep) => reports.push(rep),
            Err(f) => failures.push(failure(&s.label, f)),
        }
    }
    for f in &failures {
        write_json(&dir.join(files::report(&f.snapshot_label)), f)?;
    }

    let mut run_files = Vec::new();
    let mut matches = None;
    let mut trajectory_warning = None;
    if alive.len() >= 2 {
        let snapshot_labels: Vec<String> = alive.iter().map(|s| s.label.clone()).collect();
        let doc = MatchesDocument {
            schema_version: SCHEMA_VERSION.to_string(),
            tool_version: crate::TOOL_VERSION.to_string(),
            snapshots: snapshot_labels.clone(),
            threshold: config.match_threshold,
            transitions: alive
                .windows(2)
                .zip(&transitions)
                .map(|(w, m)| Transition {
                    from: w[0].label.clone(),
                    to: w[1].label.clone(),
                    matches: m.clone(),
                })
                .collect(),
            chains: chains.clone(),
        };
        run_files.push(emit(dir, files::MATCHES, &to_json(&doc))?);

        let series: Vec<Trajectory> = if chains.len() >= 2 && reports.len() == alive.len() {
            chains
                .iter()
                .map(|c| Trajectory {
                    name: c.name.clone(),
                    color: c.color.clone(),
                    values: c
                        .clusters
                        .iter()
                        .zip(&reports)
                        .map(|(&id, r)| {
                            r.metrics[id]
                                .ei_standardized
                                .expect("chain members are standardized")
                        })
                        .collect(),
                })
                .collect()
        } else {
            Vec::new()
        };
        let chart = cartograph::render_trajectories(&snapshot_labels, &series)?;
        trajectory_warning = chart.warning.clone();
        run_files.push(emit(dir, files::TRAJECTORIES, &chart.svg)?);
        matches = Some(doc);
    }

    let statuses = labels
        .iter()
        .map(|l| SnapshotStatus {
            label: l.clone(),
            status: if reports.iter().any(|r| &r.snapshot_label == l) {
                "ok"
            } else {
                "error"
            }
            .to_string(),
            report: files::report(l),
        })
        .collect();
    let run = RunDocument {
        schema_version: SCHEMA_VERSION.to_string(),
        tool_version: crate::TOOL_VERSION.to_string(),
        seed: config.seed,
        top_n: config.top_n,
        cut: config.cut,
        match_threshold: config.match_threshold,
        min_major_size: config.min_major_size,
        layout: config.layout_params(),
        snapshots: statuses,
        trajectory_warning: trajectory_warning.clone(),
        files: run_files,
    };
    write_json(&dir.join(files::RUN), &run)?;

    failures.sort_by_key(|f| labels.iter().position(|l| l == &f.snapshot_label));
    Ok(RunOutcome {
        reports,
        failures,
        matches,
        trajectory_warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::{Engagement, RegionSpec};

    fn world(snapshots: usize) -> WorldSource {
        WorldSource {
            snapshots,
            labels: None,
            spec: WorldSpec {
                regions: (0..3)
                    .map(|r| RegionSpec {
                        name: format!("R{r}"),
                        user_share: 1.0 / 3.0,
                        site_count: 8,
                        language: format!("l{r}"),
                        p_home: None,
                    })
                    .collect(),
                global_sites: 0,
                p_home: 0.3,
                p_cross: 0.02,
                p_global: 0.0,
                language_overlap: Vec::new(),
                users: 3000,
                seed: 0,
                drift: Vec::new(),
                engagement: Engagement::default(),
            },
        }
    }

    fn config(dir: &Path, snapshots: usize) -> RunConfig {
        let mut c = RunConfig::for_world(world(snapshots), dir);
        c.layout.iterations = 50;
        c
    }

    #[test]
    fn config_parses_with_defaults() {
        let text = r#"
schema = "ethnomap-run/1"
seed = 7

[[panels]]
label = "y2009"
visits = "visits.csv"
"#;
        let c = RunConfig::from_toml(text, Path::new("run.toml")).unwrap();
        assert_eq!(c.top_n, 1000);
        assert_eq!(c.cut, CutSpec::Auto);
        assert_eq!(c.match_threshold, 0.3);
        assert_eq!(c.layout_params().seed, 7);
    }

    #[test]
    fn config_world_is_flattened() {
        let text = r#"
schema = "ethnomap-run/1"
seed = 3
cut = { mode = "k", k = 4 }

[world]
snapshots = 2
p_home = 0.3
p_cross = 0.02
users = 100
regions = [
  { name = "A", user_share = 0.5, site_count = 3, language = "a" },
  { name = "B", user_share = 0.5, site_count = 3, language = "b" },
]
"#;
        let c = RunConfig::from_toml(text, Path::new("run.toml")).unwrap();
        assert_eq!(c.cut, CutSpec::K { k: 4 });
        assert_eq!(c.snapshot_labels(), ["t0", "t1"]);
        assert_eq!(c.world_spec().unwrap().seed, 3);
    }

    #[test]
    fn config_rejects_bad_input() {
        let base = "schema = \"ethnomap-run/1\"\n";
        let panel = "[[panels]]\nlabel = \"a\"\nvisits = \"v.csv\"\n";
        let cases = [
            base.to_string(),
            format!("schema = \"other\"\n{panel}"),
            format!("{base}top_n = 1\n{panel}"),
            format!("{base}bogus = 1\n{panel}"),
            format!("{base}{panel}{panel}"),
            format!("{base}[[panels]]\nlabel = \"a/b\"\nvisits = \"v.csv\"\n"),
        ];
        for text in &cases {
            let err = RunConfig::from_toml(text, Path::new("c.toml")).unwrap_err();
            assert_eq!(err.exit_code(), 1, "{text}");
        }
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(
            &path,
            "schema = \"ethnomap-run/1\"\noutput_dir = \"o\"\n[[panels]]\nlabel = \"a\"\nvisits = \"v.csv\"\n",
        )
        .unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.output_dir, dir.path().join("o"));
        assert_eq!(c.panels[0].visits, dir.path().join("v.csv"));
    }

    #[test]
    fn missing_config_is_a_dependency_error() {
        let err = RunConfig::load(Path::new("/nonexistent/run.toml")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn pipeline_writes_every_artifact_and_manifest_hashes_match() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_pipeline(&config(dir.path(), 3)).unwrap();
        assert_eq!(out.reports.len(), 3);
        assert!(out.failures.is_empty());
        for r in &out.reports {
            assert_eq!(r.pairs_evaluated, 24 * 23 / 2);
            assert!(r.ground_truth_ari.unwrap() > 0.9);
            for f in &r.files {
                let bytes = fs::read(dir.path().join(&f.path)).unwrap();
                assert_eq!(sha256_hex(&bytes), f.sha256, "{}", f.path);
            }
            assert!(dir.path().join(files::report(&r.snapshot_label)).exists());
        }
        let m = out.matches.unwrap();
        assert_eq!(m.transitions.len(), 2);
        assert_eq!(m.chains.len(), 3);
        assert!(dir.path().join(files::TRAJECTORIES).exists());
        assert!(out.trajectory_warning.is_none());
        let run: RunDocument = read_json(&dir.path().join(files::RUN)).unwrap();
        assert!(run.snapshots.iter().all(|s| s.status == "ok"));
    }

    #[test]
    fn matched_clusters_keep_their_color() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_pipeline(&config(dir.path(), 2)).unwrap();
        let m = out.matches.unwrap();
        let load = |l: &str| -> regions::PartitionDocument {
            read_json(&dir.path().join(files::partition(l))).unwrap()
        };
        let (a, b) = (load("t0"), load("t1"));
        for p in &m.transitions[0].matches.pairs {
            assert_eq!(a.clusters[p.left].color, b.clusters[p.right].color);
        }
    }

    #[test]
    fn failing_snapshot_leaves_the_others() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.csv");
        fs::write(
            &good,
            "user_id,site_domain\nu1,a.com\nu1,b.com\nu2,a.com\nu3,c.com\n",
        )
        .unwrap();
        let c = RunConfig {
            panels: vec![
                PanelSource {
                    label: "a".into(),
                    visits: good.clone(),
                    sites: None,
                },
                PanelSource {
                    label: "b".into(),
                    visits: dir.path().join("missing.csv"),
                    sites: None,
                },
            ],
            world: None,
            ..config(dir.path(), 1)
        };
        let out = run_pipeline(&c).unwrap();
        assert_eq!(out.reports.len(), 1);
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].stage, "load");
        assert_eq!(out.failures[0].exit_code, 2);
        let f: SnapshotFailure = read_json(&dir.path().join(files::report("b"))).unwrap();
        assert_eq!(f.snapshot_label, "b");
        assert!(out.matches.is_none());
    }

    #[test]
    fn chains_require_major_clusters_throughout() {
        let doms: Vec<String> = (0..6).map(|i| format!("d{i}")).collect();
        let cut = CutRecord {
            mode: "k".into(),
            k: Some(2),
            modularity: None,
        };
        let p1 =
            Partition::from_labels("a", doms.clone(), &[0, 0, 0, 1, 1, 1], cut.clone()).unwrap();
        let p2 = Partition::from_labels("b", doms, &[0, 0, 0, 0, 1, 1], cut).unwrap();
        let m = regions::match_clusters(&p1, &p2, 0.3);
        let chains = homologous_chains(&[&p1, &p2], &[m], 3);
        assert_eq!(chains.len(), 1);
        assert_eq!(chains[0].clusters, vec![0, 0]);
        assert_eq!(chains[0].name, "d0");
    }

    #[test]
    fn labels_are_file_safe() {
        for ok in ["2009", "y-2011", "a.b_c"] {
            validate_label(ok).unwrap();
        }
        for bad in ["", ".hidden", "a/b", "a b", "é"] {
            assert!(validate_label(bad).is_err(), "{bad}");
        }
    }
}
