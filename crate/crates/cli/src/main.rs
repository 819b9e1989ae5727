#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use inetcep::cep::{build_operator_tree, OrderKey};
use inetcep::ingest::{load_csv, SchemaKind};
use inetcep::oracle::oracle_emissions;
use inetcep::query::{parse_query, qname, validate_with, QueryParams};
use inetcep::sim::{ConfigError, Mode, Scenario, Simulator};
use inetcep::topology::{build_topology, LinkParams, TopologyKind};

#[derive(Parser)]
#[command(
    name = "inetcep",
    version,
    about = "In-network complex event processing simulator"
)]
struct Cli {
    /// More log output (-v, -vv).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write its report.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory for report.json, latency.csv and throughput.csv.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, env = "INETCEP_SEED")]
        seed: Option<u64>,
        /// Force every query into ucl or pr mode.
        #[arg(long)]
        mode: Option<Mode>,
        /// Also write every handled packet to trace.csv.
        #[arg(long)]
        trace: bool,
    },
    /// Parse and validate a query; prints the syntax tree as JSON.
    Parse { query: String },
    /// Evaluate a query over a recorded stream without the network.
    Oracle {
        query: String,
        /// CSV file with a `ts` column and the schema's attributes.
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value = "gps")]
        schema: SchemaKind,
        /// Source name the records belong to; defaults to the query's first source.
        #[arg(long)]
        source: Option<String>,
    },
    /// Print a named topology as JSON.
    Topo {
        kind: TopologyKind,
        #[arg(long, default_value_t = 3)]
        depth: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match cli.cmd {
        Cmd::Run {
            scenario,
            out,
            seed,
            mode,
            trace,
        } => run(scenario, out, seed, mode, trace),
        Cmd::Parse { query } => parse(&query),
        Cmd::Oracle {
            query,
            trace,
            schema,
            source,
        } => report(oracle(&query, &trace, schema, source)),
        Cmd::Topo { kind, depth } => report(topo(kind, depth)),
    }
}

fn report(r: anyhow::Result<()>) -> ExitCode {
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(
    path: PathBuf,
    out: PathBuf,
    seed: Option<u64>,
    mode: Option<Mode>,
    trace: bool,
) -> ExitCode {
    let mut sc = match Scenario::load(&path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(1);
        }
    };
    if let Some(s) = seed {
        sc.seed = s;
    }
    if let Some(m) = mode {
        sc = sc.with_mode(m);
    }
    let mut sim = match Simulator::new(sc) {
        Ok(s) => s,
        Err(e @ (ConfigError::Invalid(_) | ConfigError::Io(_) | ConfigError::Toml(_))) => {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(1);
        }
    };
    if trace {
        sim = sim.with_trace();
    }
    let result = (|| -> anyhow::Result<()> {
        let rep = sim.run();
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        fs::write(out.join("report.json"), rep.to_json())?;
        rep.write_csv(&out)?;
        if trace {
            sim.write_trace(&out.join("trace.csv"))?;
        }
        for q in &rep.queries {
            println!(
                "{} [{}] generated={} processed={} delivered={} loss={:.4} throughput={:.1}/s{}",
                q.query,
                q.mode,
                q.generated,
                q.processed,
                q.delivered,
                q.loss_rate,
                q.throughput_mean,
                q.f1.map(|f| format!(" f1={f:.2}")).unwrap_or_default()
            );
        }
        println!("trace {}", rep.trace_hash);
        Ok(())
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn parse(text: &str) -> ExitCode {
    let ast = match parse_query(text) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let diags = validate_with(&ast, &QueryParams::default());
    if !diags.is_empty() {
        for d in diags {
            eprintln!("error: {d:?}");
        }
        return ExitCode::from(2);
    }
    let out = serde_json::json!({
        "canonical": ast.canonical(),
        "name": qname(&ast).to_string(),
        "ast": ast,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&out).expect("ASTs serialize")
    );
    ExitCode::SUCCESS
}

fn oracle(
    text: &str,
    trace: &Path,
    schema: SchemaKind,
    source: Option<String>,
) -> anyhow::Result<()> {
    let ast = parse_query(text)?;
    let params = QueryParams::default();
    let diags = validate_with(&ast, &params);
    anyhow::ensure!(diags.is_empty(), "invalid query: {diags:?}");
    build_operator_tree(&ast)?;
    let source = source.unwrap_or_else(|| ast.sources()[0].clone());
    let mut stream =
        load_csv(trace, schema).with_context(|| format!("reading {}", trace.display()))?;
    let events: Vec<_> = stream
        .by_ref()
        .enumerate()
        .map(|(i, t)| (OrderKey::new(t.ts, &source, i as u64), t))
        .collect();
    if stream.skipped > 0 {
        log::warn!("{} malformed rows skipped", stream.skipped);
    }
    for e in oracle_emissions(&ast, &params, &events) {
        println!("{}", serde_json::to_string(&e)?);
    }
    Ok(())
}

fn topo(kind: TopologyKind, depth: usize) -> anyhow::Result<()> {
    let t = build_topology(kind, depth, LinkParams::default())?;
    println!("{}", serde_json::to_string_pretty(&t)?);
    Ok(())
}
