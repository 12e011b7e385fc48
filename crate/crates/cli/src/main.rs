//! Command-line front end: run scenarios, rank networks, predict routes,
//! parse event feeds and drive the regular-obstruction harness.

use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use congestion_core::prediction::PredictionConfig;
use congestion_core::ranking::RankingConfig;
use congestion_core::sim::{
    run_scenario, HarnessSpec, MetricsBundle, Scenario, ScenarioOverrides, SimMode,
};
use congestion_core::{
    edge_frequencies, parse_event, predict_route, rank_edges, Event, HistoryGraph, NodeId,
    TrafficGraph, VehicleId,
};

#[derive(Parser)]
#[command(
    name = "congestion-engine",
    version,
    about = "Decision engine for connected vehicles: route prediction, obstruction parsing, link admission control and load balancing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write the metrics CSV files
    Run(RunArgs),
    /// Rank the links of a network; CSV on standard output
    Rank(RankArgs),
    /// Predict the most likely route from a node, given a trip history
    Predict(PredictArgs),
    /// Parse incident messages from standard input, one per line
    ParseEvent,
    /// Run the regular-obstruction random-walk harness
    RegularHarness(HarnessArgs),
    /// Check a scenario file without running it
    Validate(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML)
    scenario: PathBuf,
    /// Output directory for the CSV files
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// RNG seed override
    #[arg(long)]
    seed: Option<u64>,
    /// Mode override: baseline | uncontrolled | controlled
    #[arg(long)]
    mode: Option<String>,
    /// Duration override, in ticks
    #[arg(long)]
    duration: Option<u64>,
    /// Replaces the max capacity of every opening event
    #[arg(long)]
    capacity: Option<u32>,
    /// Controller smoothing coefficient override
    #[arg(long)]
    alpha: Option<f64>,
    /// Edge-ranking damping factor override
    #[arg(long)]
    damping: Option<f64>,
    /// Prediction horizon override, in links
    #[arg(long)]
    horizon: Option<usize>,
    /// Assessment radius override, in meters
    #[arg(long)]
    radius: Option<f64>,
}

#[derive(Args)]
struct RankArgs {
    /// Edge-list network file
    network: PathBuf,
    /// Damping factor
    #[arg(long, default_value_t = 0.93)]
    damping: f64,
}

#[derive(Args)]
struct PredictArgs {
    /// Edge-list network file
    network: PathBuf,
    /// Trip history file: one trip per line, whitespace-separated node ids
    history: PathBuf,
    /// Node the prediction starts from
    node: String,
    /// Prediction horizon, in links
    #[arg(long, default_value_t = 5)]
    horizon: usize,
    /// Damping factor
    #[arg(long, default_value_t = 0.93)]
    damping: f64,
}

#[derive(Args)]
struct HarnessArgs {
    /// Harness configuration file (TOML)
    config: PathBuf,
    /// Output directory for allocations.csv
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// RNG seed override
    #[arg(long)]
    seed: Option<u64>,
    /// Capacity override
    #[arg(long)]
    capacity: Option<u32>,
    /// Smoothing coefficient override
    #[arg(long)]
    alpha: Option<f64>,
    /// Walk gain override
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Scenario file (TOML)
    scenario: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::default().filter_or("CONGESTION_ENGINE_LOG", "warn"),
    )
    .init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(args) => run(args),
        Command::Rank(args) => rank(args),
        Command::Predict(args) => predict(args),
        Command::ParseEvent => parse_events(),
        Command::RegularHarness(args) => regular_harness(args),
        Command::Validate(args) => validate(args),
    }
}

fn overrides_of(args: &RunArgs) -> Result<ScenarioOverrides> {
    let mode = match &args.mode {
        Some(m) => Some(m.parse::<SimMode>()?),
        None => None,
    };
    Ok(ScenarioOverrides {
        seed: args.seed,
        mode,
        duration_ticks: args.duration,
        capacity: args.capacity,
        alpha: args.alpha,
        damping: args.damping,
        horizon: args.horizon,
        radius_m: args.radius,
    })
}

fn run(args: RunArgs) -> Result<()> {
    let overrides = overrides_of(&args)?;
    let scenario = Scenario::load(&args.scenario, &overrides)
        .with_context(|| format!("loading {}", args.scenario.display()))?;
    log::info!(
        "running scenario: mode={} seed={} duration={}",
        scenario.mode,
        scenario.seed,
        scenario.duration_ticks
    );
    let output = run_scenario(scenario)?;
    output
        .metrics
        .write_dir(&args.out_dir)
        .with_context(|| format!("writing metrics to {}", args.out_dir.display()))?;
    println!(
        "ran {} ticks: {} vehicles spawned, {} finished; metrics in {}",
        output.ticks,
        output.spawned,
        output.finished,
        args.out_dir.display()
    );
    Ok(())
}

fn rank(args: RankArgs) -> Result<()> {
    let graph = TrafficGraph::load_edge_list(&args.network)
        .with_context(|| format!("loading {}", args.network.display()))?;
    let config = RankingConfig {
        damping: args.damping,
        ..RankingConfig::default()
    };
    let ranks = rank_edges(&graph, &config)?;
    print!("{}", ranks.to_csv());
    Ok(())
}

fn load_history(path: &PathBuf, graph: &TrafficGraph) -> Result<HistoryGraph> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("loading {}", path.display()))?;
    let mut history = HistoryGraph::new(VehicleId::new("cli"));
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let nodes: Vec<NodeId> = line.split_whitespace().map(NodeId::new).collect();
        let trip = graph
            .node_path_to_links(&nodes)
            .with_context(|| format!("{}:{}: invalid trip", path.display(), idx + 1))?;
        history
            .record_trip(graph, &trip)
            .with_context(|| format!("{}:{}: invalid trip", path.display(), idx + 1))?;
    }
    Ok(history)
}

fn predict(args: PredictArgs) -> Result<()> {
    let graph = TrafficGraph::load_edge_list(&args.network)
        .with_context(|| format!("loading {}", args.network.display()))?;
    let history = load_history(&args.history, &graph)?;
    let node = NodeId::new(args.node.as_str());
    if !graph.contains_node(&node) {
        bail!("node `{node}` is not part of the network");
    }
    let ranks = rank_edges(
        &graph,
        &RankingConfig {
            damping: args.damping,
            ..RankingConfig::default()
        },
    )?;
    let config = PredictionConfig {
        horizon: args.horizon,
        ..PredictionConfig::default()
    };
    let route = predict_route(&history, &graph, &ranks, &node, &config);
    if route.is_empty() {
        println!("route: (empty)");
    } else {
        let links: Vec<String> = route.links.iter().map(|l| l.to_string()).collect();
        println!("route: {}", links.join(" "));
    }
    println!("score: {:.6}", route.score);
    // The per-link detail helps when comparing candidate branches by hand.
    let freqs = edge_frequencies(&history, &graph);
    for link in &route.links {
        println!(
            "  {link}: frequency={:.6} rank={:.6}",
            freqs.frequency(link),
            ranks.rank(link)
        );
    }
    Ok(())
}

fn parse_events() -> Result<()> {
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let mut failures = 0usize;
    for (idx, line) in stdin.lock().lines().enumerate() {
        let line = line.context("reading standard input")?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_event(&line) {
            Ok(Event::Open(open)) => writeln!(
                out,
                "open location=\"{}\" lat={:.6} lon={:.6} capacity={} speed_kmh={} time={}",
                open.location,
                open.latitude,
                open.longitude,
                open.max_capacity,
                open.max_speed_kmh,
                open.timestamp.format("%Y-%m-%dT%H:%M:%SZ")
            )?,
            Ok(Event::Close(close)) => writeln!(
                out,
                "close location=\"{}\" time={}",
                close.location,
                close.timestamp.format("%Y-%m-%dT%H:%M:%SZ")
            )?,
            Err(err) => {
                eprintln!("line {}: {err}", idx + 1);
                failures += 1;
            }
        }
    }
    if failures > 0 {
        bail!("{failures} message(s) failed to parse");
    }
    Ok(())
}

fn regular_harness(args: HarnessArgs) -> Result<()> {
    let mut spec = HarnessSpec::load(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        spec.walk.seed = seed;
    }
    if let Some(capacity) = args.capacity {
        spec.walk.capacity = capacity;
    }
    if let Some(alpha) = args.alpha {
        spec.alpha = alpha;
    }
    if let Some(beta) = args.beta {
        spec.walk.beta = beta;
    }
    let output = spec.run()?;
    let mut metrics = MetricsBundle::new();
    metrics.allocations = output.allocations;
    std::fs::create_dir_all(&args.out_dir)?;
    std::fs::write(
        args.out_dir.join("allocations.csv"),
        metrics.allocations_csv(),
    )
    .with_context(|| format!("writing to {}", args.out_dir.display()))?;
    let mean = output.final_means.iter().sum::<f64>() / output.final_means.len() as f64;
    let max = output.final_means.iter().cloned().fold(f64::MIN, f64::max);
    let min = output.final_means.iter().cloned().fold(f64::MAX, f64::min);
    println!(
        "ran {} ticks for {} vehicles (c={})",
        output.ticks,
        output.final_means.len(),
        spec.walk.capacity
    );
    println!("mean gamma: {:.6}", output.mean_gamma);
    for (i, m) in output.final_means.iter().enumerate() {
        println!("veh-{i:02}: mean allocation {:.6}", m);
    }
    println!(
        "final means: avg={mean:.6} spread={:.6}",
        if mean > 0.0 { (max - min) / mean } else { 0.0 }
    );
    println!(
        "allocations in {}",
        args.out_dir.join("allocations.csv").display()
    );
    Ok(())
}

fn validate(args: ValidateArgs) -> Result<()> {
    let scenario = Scenario::load(&args.scenario, &ScenarioOverrides::default())
        .with_context(|| format!("loading {}", args.scenario.display()))?;
    println!(
        "ok: {} nodes, {} links, {} demand rows, {} events, mode={}, duration={} ticks, seed={}",
        scenario.graph.num_nodes(),
        scenario.graph.num_links(),
        scenario.demand.len(),
        scenario.events.len(),
        scenario.mode,
        scenario.duration_ticks,
        scenario.seed
    );
    Ok(())
}
