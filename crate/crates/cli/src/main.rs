use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ethnomap::cartograph;
use ethnomap::duplication;
use ethnomap::graphmetrics::GraphSummary;
use ethnomap::measures::MetricsDocument;
use ethnomap::panel;
use ethnomap::pipeline::{self, files, PanelSource, RunConfig};
use ethnomap::regions::{CutSpec, Partition, PartitionDocument};
use ethnomap::synthworld::{self, WorldSpec};
use ethnomap::{Error, Result};

/// Audience duplication networks, regional cultures and ethnological maps.
#[derive(Debug, Parser)]
#[command(name = "ethnomap", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw synthetic panels and write them as CSV.
    Generate {
        /// World spec (TOML); defaults to the config's world.
        #[arg(long)]
        world: Option<PathBuf>,
        /// Snapshots to draw from `--world`.
        #[arg(long, default_value_t = 1)]
        snapshots: usize,
    },
    /// Panel CSV to duplication graph and summary.
    Graph {
        #[command(flatten)]
        panel: PanelArgs,
        #[arg(long)]
        top_n: Option<usize>,
    },
    /// Graph to partition.
    Cluster {
        #[command(flatten)]
        stage: StageArgs,
        /// Partition of the preceding snapshot, for stable colors.
        #[arg(long)]
        previous: Option<PathBuf>,
        /// Fixed number of clusters instead of the modularity cut.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Graph and partition to metrics and scatter chart.
    Measure {
        #[command(flatten)]
        stage: StageArgs,
        #[arg(long)]
        partition: Option<PathBuf>,
        /// Clusters to standardize against (comma separated ids);
        /// defaults to every cluster of at least the major size.
        #[arg(long, value_delimiter = ',')]
        clusters: Option<Vec<usize>>,
    },
    /// Graph and partition to coordinates and map.
    Layout {
        #[command(flatten)]
        stage: StageArgs,
        #[arg(long)]
        partition: Option<PathBuf>,
    },
    /// Every stage for one panel.
    Report {
        #[command(flatten)]
        panel: PanelArgs,
    },
    /// Every stage for every snapshot in the config.
    Pipeline,
}

#[derive(Debug, Args)]
struct PanelArgs {
    /// Visits CSV (`user_id,site_domain`).
    #[arg(long)]
    panel: PathBuf,
    /// Site metadata CSV.
    #[arg(long)]
    sites: Option<PathBuf>,
    #[arg(long)]
    label: String,
}

#[derive(Debug, Args)]
struct StageArgs {
    #[arg(long)]
    label: String,
    /// Graph artifact; defaults to `graph_<label>.json` in the output directory.
    #[arg(long)]
    graph: Option<PathBuf>,
}

/// Settings shared by the stage commands.
struct Settings {
    config: RunConfig,
    out: PathBuf,
}

impl Settings {
    fn new(cli: &Cli) -> Result<Self> {
        let mut config = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig {
                schema: pipeline::CONFIG_SCHEMA.to_string(),
                seed: 0,
                top_n: pipeline::DEFAULT_TOP_N,
                cut: CutSpec::Auto,
                match_threshold: ethnomap::regions::DEFAULT_MATCH_THRESHOLD,
                min_major_size: pipeline::DEFAULT_MIN_MAJOR_SIZE,
                layout: Default::default(),
                output_dir: PathBuf::from("out"),
                panels: Vec::new(),
                world: None,
            },
        };
        if let Some(s) = cli.seed {
            config.seed = s;
        }
        if let Some(o) = &cli.out {
            config.output_dir = o.clone();
        }
        Ok(Self {
            out: config.output_dir.clone(),
            config,
        })
    }

    fn artifact(&self, given: &Option<PathBuf>, name: String) -> PathBuf {
        given.clone().unwrap_or_else(|| self.out.join(name))
    }

    fn write_text(&self, name: &str, text: &str) -> Result<()> {
        let path = self.out.join(name);
        pipeline::write_text(&path, text)?;
        eprintln!("wrote {}", path.display());
        Ok(())
    }
}

fn generate(s: &Settings, world: &Option<PathBuf>, snapshots: usize) -> Result<()> {
    let (spec, labels) = match world {
        Some(path) => {
            let mut spec = WorldSpec::from_toml(&pipeline::read_text(path)?)?;
            spec.seed = s.config.seed;
            let labels: Vec<String> = (0..snapshots).map(|i| format!("t{i}")).collect();
            (spec, labels)
        }
        None => {
            let spec = s.config.world_spec().ok_or_else(|| {
                Error::Validation("generate needs --world or a config with a world".into())
            })?;
            (spec, s.config.snapshot_labels())
        }
    };
    for (snapshot, _) in synthworld::generate_series(&spec, &labels)? {
        for f in pipeline::write_panel_files(&snapshot, &s.out)? {
            eprintln!("wrote {}", s.out.join(f.path).display());
        }
    }
    Ok(())
}

fn graph(s: &Settings, p: &PanelArgs, top_n: Option<usize>) -> Result<()> {
    pipeline::validate_label(&p.label)?;
    let snapshot = panel::load_panel(&p.label, &p.panel, p.sites.as_deref())?;
    let graph = pipeline::graph_stage(&snapshot, top_n.unwrap_or(s.config.top_n))?;
    let summary = GraphSummary::of(&duplication::dichotomize(&graph))?;
    s.write_text(
        &files::graph(&p.label),
        &pipeline::to_json(&graph.to_document()),
    )?;
    s.write_text(&files::summary(&p.label), &pipeline::to_json(&summary))
}

fn cluster(
    s: &Settings,
    st: &StageArgs,
    previous: &Option<PathBuf>,
    k: Option<usize>,
    threshold: Option<f64>,
) -> Result<()> {
    let graph = pipeline::load_graph(&s.artifact(&st.graph, files::graph(&st.label)))?;
    let previous = match previous {
        Some(path) => {
            let doc: PartitionDocument = pipeline::read_json(path)?;
            Some(Partition::from_document_members(&doc)?)
        }
        None => None,
    };
    let cut = k.map(|k| CutSpec::K { k }).unwrap_or(s.config.cut);
    let threshold = threshold.unwrap_or(s.config.match_threshold);
    let (partition, _) = pipeline::cluster_stage(&graph, cut, previous.as_ref(), threshold)?;
    s.write_text(
        &files::partition(&st.label),
        &pipeline::to_json(&partition.to_document()),
    )
}

fn load_pair(
    s: &Settings,
    st: &StageArgs,
    partition: &Option<PathBuf>,
) -> Result<(duplication::DuplicationGraph, Partition)> {
    let graph = pipeline::load_graph(&s.artifact(&st.graph, files::graph(&st.label)))?;
    let partition =
        pipeline::load_partition(&s.artifact(partition, files::partition(&st.label)), &graph)?;
    Ok((graph, partition))
}

fn measure(
    s: &Settings,
    st: &StageArgs,
    partition: &Option<PathBuf>,
    clusters: &Option<Vec<usize>>,
) -> Result<()> {
    let (graph, partition) = load_pair(s, st, partition)?;
    let ids = match clusters {
        Some(ids) => ids.clone(),
        None => pipeline::major_clusters(&partition, s.config.min_major_size),
    };
    let (metrics, note) = pipeline::measure_stage(&graph, &partition, &ids)?;
    if let Some(n) = note {
        eprintln!("note: {n}");
    }
    let scatter = cartograph::render_scatter(&st.label, &metrics, partition.colors())?;
    s.write_text(
        &files::metrics(&st.label),
        &pipeline::to_json(&MetricsDocument::new(&st.label, metrics)),
    )?;
    s.write_text(&files::scatter(&st.label), &scatter)
}

fn layout(s: &Settings, st: &StageArgs, partition: &Option<PathBuf>) -> Result<()> {
    let (graph, partition) = load_pair(s, st, partition)?;
    let (layout, map) = pipeline::layout_stage(&graph, &partition, &s.config.layout_params())?;
    s.write_text(
        &files::layout(&st.label),
        &pipeline::to_json(&layout.to_document()),
    )?;
    s.write_text(&files::map(&st.label), &map)
}

fn run(config: &RunConfig) -> Result<u8> {
    let outcome = pipeline::run_pipeline(config)?;
    for r in &outcome.reports {
        eprintln!(
            "{}: {} sites, {} clusters, {} pairs",
            r.snapshot_label, r.summary.node_count, r.cluster_count, r.pairs_evaluated
        );
    }
    if let Some(w) = &outcome.trajectory_warning {
        eprintln!("warning: {w}");
    }
    for f in &outcome.failures {
        eprintln!(
            "error: {} failed at {}: {}",
            f.snapshot_label, f.stage, f.error
        );
    }
    eprintln!("wrote {}", config.output_dir.join(files::RUN).display());
    Ok(outcome.failures.first().map_or(0, |f| f.exit_code as u8))
}

fn report(s: &Settings, p: &PanelArgs) -> Result<u8> {
    let config = RunConfig {
        panels: vec![PanelSource {
            label: p.label.clone(),
            visits: p.panel.clone(),
            sites: p.sites.clone(),
        }],
        world: None,
        ..s.config.clone()
    };
    run(&config)
}

fn pipeline_command(cli: &Cli, s: &Settings) -> Result<u8> {
    if cli.config.is_none() {
        return Err(Error::Validation("pipeline needs --config".into()));
    }
    run(&s.config)
}

fn dispatch(cli: &Cli) -> Result<u8> {
    let s = Settings::new(cli)?;
    match &cli.command {
        Command::Generate { world, snapshots } => generate(&s, world, *snapshots).map(|_| 0),
        Command::Graph { panel, top_n } => graph(&s, panel, *top_n).map(|_| 0),
        Command::Cluster {
            stage,
            previous,
            k,
            threshold,
        } => cluster(&s, stage, previous, *k, *threshold).map(|_| 0),
        Command::Measure {
            stage,
            partition,
            clusters,
        } => measure(&s, stage, partition, clusters).map(|_| 0),
        Command::Layout { stage, partition } => layout(&s, stage, partition).map(|_| 0),
        Command::Report { panel } => report(&s, panel),
        Command::Pipeline => pipeline_command(cli, &s),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
