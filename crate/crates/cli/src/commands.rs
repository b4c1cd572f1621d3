//! Subcommand definitions and dispatch.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use log2ns_core::embedding::PairSchema;
use log2ns_core::formal::{compile_rules, parse_config};
use log2ns_core::ingest::{Field, LogFormat, TokenScheme};
use log2ns_core::pipeline::{self, ClusterSpec, PipelineConfig, Project, StageRun, TrainSpec};
use log2ns_core::query::{self, parse_query};
use log2ns_core::store::ProjectStore;
use log2ns_core::synth::{synthesize, SynthSpec};
use log2ns_core::ExecMode;

#[derive(Debug, Parser)]
#[command(
    name = "log2ns",
    version,
    about = "Flow-log embeddings, clustering and firewall reachability queries"
)]
pub struct Cli {
    /// Project store directory.
    #[arg(
        long,
        global = true,
        env = "LOG2NS_STORE",
        default_value = "log2ns-store"
    )]
    pub store: PathBuf,
    /// Run data-parallel stages on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a flow log into the store.
    Ingest {
        input: PathBuf,
        /// csv or jsonl; defaults from the file extension.
        #[arg(long)]
        format: Option<String>,
    },
    /// Build the vocabulary and pairs, then train the embedding.
    Train(TrainArgs),
    /// Vectorize rows and fit K-means.
    Cluster(ClusterArgs),
    /// Compile a firewall config into the store.
    Compile { config: PathBuf },
    /// Run a query against the stored artifacts.
    Query { text: String },
    /// Replay sampled log rows against the firewall model.
    WitnessCheck {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve the JSON API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
    /// Run every stage from a pipeline document.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write synthetic flow logs drawn from a firewall config as CSV.
    Synth {
        #[arg(long)]
        firewall: PathBuf,
        /// TOML synthesis spec; flags below override it.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output file; stdout when absent.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Comma-separated fields to tokenize; all tokenizable fields by default.
    #[arg(long, value_delimiter = ',')]
    pub tokens: Vec<Field>,
    /// `context:target` pairs, comma-separated; the default flow schema otherwise.
    #[arg(long, value_delimiter = ',')]
    pub pairs: Vec<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Lock-free parallel SGD (not bit-reproducible).
    #[arg(long)]
    pub parallel_sgd: bool,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long, conflicts_with = "k_range")]
    pub k: Option<usize>,
    /// Inclusive range `LO..HI` searched by silhouette.
    #[arg(long)]
    pub k_range: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
}

fn parse_k_range(s: &str) -> Result<[usize; 2]> {
    let (lo, hi) = s
        .split_once("..")
        .with_context(|| format!("k range {s:?} is not LO..HI"))?;
    Ok([lo.trim().parse()?, hi.trim().parse()?])
}

fn parse_pairs(items: &[String]) -> Result<PairSchema> {
    let mut entries = Vec::with_capacity(items.len());
    for item in items {
        let (c, t) = item
            .split_once(':')
            .with_context(|| format!("pair {item:?} is not context:target"))?;
        let c: Field = c.parse().map_err(anyhow::Error::msg)?;
        let t: Field = t.parse().map_err(anyhow::Error::msg)?;
        entries.push((c, t));
    }
    Ok(PairSchema::new(entries)?)
}

/// Writes to stdout; a closed pipe ends output quietly.
fn emit(text: &str) -> Result<()> {
    match io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn print_stage(run: &StageRun) -> Result<()> {
    let status = match run.status {
        pipeline::StageStatus::Ran => "ran",
        pipeline::StageStatus::UpToDate => "up-to-date",
    };
    emit(&format!(
        "{:<10} {:<11} {}\n",
        run.name,
        status,
        &run.hash[..16]
    ))
}

fn open_locked(root: &Path) -> Result<ProjectStore> {
    ProjectStore::open(root).with_context(|| format!("opening store {}", root.display()))
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let mode = if cli.sequential {
        ExecMode::Sequential
    } else {
        ExecMode::Parallel
    };
    match cli.command {
        Command::Ingest { input, format } => {
            let format = match format {
                Some(f) => f.parse::<LogFormat>().map_err(anyhow::Error::msg)?,
                None => pipeline::log_format_for(&input),
            };
            let bytes = fs::read(&input).with_context(|| format!("reading {}", input.display()))?;
            let mut store = open_locked(&cli.store)?;
            let _lock = store.lock()?;
            print_stage(&pipeline::stage_ingest_file(
                &mut store, &bytes, format, mode,
            )?)?;
        }
        Command::Train(args) => {
            let scheme = if args.tokens.is_empty() {
                None
            } else {
                Some(TokenScheme::new(args.tokens.clone())?)
            };
            let pairs = if args.pairs.is_empty() {
                None
            } else {
                Some(parse_pairs(&args.pairs)?)
            };
            let d = TrainSpec::default();
            let spec = TrainSpec {
                dim: args.dim.unwrap_or(d.dim),
                epochs: args.epochs.unwrap_or(d.epochs),
                learning_rate: args.learning_rate.unwrap_or(d.learning_rate),
                seed: args.seed.unwrap_or(d.seed),
                parallel: args.parallel_sgd,
            };
            let mut store = open_locked(&cli.store)?;
            let _lock = store.lock()?;
            print_stage(&pipeline::stage_vocab(&mut store, scheme.as_ref())?)?;
            print_stage(&pipeline::stage_pairs(&mut store, pairs.as_ref())?)?;
            print_stage(&pipeline::stage_train(&mut store, &spec)?)?;
        }
        Command::Cluster(args) => {
            let spec = ClusterSpec {
                k: args.k,
                k_range: args.k_range.as_deref().map(parse_k_range).transpose()?,
                seed: args.seed,
                restarts: args.restarts,
                ..ClusterSpec::default()
            };
            let mut store = open_locked(&cli.store)?;
            let _lock = store.lock()?;
            print_stage(&pipeline::stage_vectorize(&mut store, None, mode)?)?;
            print_stage(&pipeline::stage_cluster(&mut store, &spec, mode)?)?;
        }
        Command::Compile { config } => {
            let bytes =
                fs::read(&config).with_context(|| format!("reading {}", config.display()))?;
            let mut store = open_locked(&cli.store)?;
            let _lock = store.lock()?;
            print_stage(&pipeline::stage_compile(&mut store, &bytes)?)?;
        }
        Command::Query { text } => {
            let q = parse_query(&text)
                .map_err(|e| anyhow::anyhow!("{}\n  {text}\n  {}^", e, " ".repeat(e.position)))?;
            let store = open_locked(&cli.store)?;
            let project = Project::load(&store, &[])?;
            let result = query::execute(&q, &project.artifacts(), mode)?;
            emit(&format!("{}\n", serde_json::to_string_pretty(&result)?))?;
        }
        Command::WitnessCheck { n, seed } => {
            let store = open_locked(&cli.store)?;
            let project = Project::load(&store, &[pipeline::LOGS, pipeline::FIREWALL])?;
            let report = query::witness_check(
                project.corpus.as_ref().expect("required"),
                project.firewall.as_ref().expect("required"),
                n,
                seed,
                mode,
            );
            emit(&format!("{}\n", serde_json::to_string_pretty(&report)?))?;
            if !report.failures.is_empty() {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Serve { bind } => {
            let store = open_locked(&cli.store)?;
            let project = Arc::new(Project::load(&store, &pipeline::SERVE_REQUIRES)?);
            serve(project, mode, &bind)?;
        }
        Command::Pipeline { config } => {
            let cfg = PipelineConfig::load(&config)?;
            let mut store = open_locked(&cli.store)?;
            let report = pipeline::run_pipeline(&mut store, &cfg, mode)?;
            for s in &report.stages {
                print_stage(s)?;
            }
            emit(&format!("digest     {}\n", report.digest))?;
        }
        Command::Synth {
            firewall,
            spec,
            rows,
            seed,
            output,
        } => {
            let mut s = match spec {
                Some(p) => toml::from_str::<SynthSpec>(&fs::read_to_string(&p)?)
                    .with_context(|| format!("parsing {}", p.display()))?,
                None => SynthSpec::default(),
            };
            if let Some(r) = rows {
                s.rows = r;
            }
            if let Some(v) = seed {
                s.seed = v;
            }
            let bytes =
                fs::read(&firewall).with_context(|| format!("reading {}", firewall.display()))?;
            let model = compile_rules(&parse_config(&bytes)?);
            let csv = synthesize(&model, &s)?.corpus.to_csv()?;
            match output {
                Some(p) => {
                    fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?
                }
                None => emit(&csv)?,
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn serve(project: Arc<Project>, mode: ExecMode, bind: &str) -> Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(bind)
            .await
            .with_context(|| format!("binding {bind}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, crate::api::router(project, mode))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok::<_, anyhow::Error>(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_range_and_pairs_parse() {
        assert_eq!(parse_k_range("2..30").unwrap(), [2, 30]);
        assert!(parse_k_range("2-30").is_err());
        let s = parse_pairs(&["src_ip:dst_ip".into(), "application:dst_ip".into()]).unwrap();
        assert_eq!(
            s.entries,
            [
                (Field::SrcIp, Field::DstIp),
                (Field::Application, Field::DstIp)
            ]
        );
        assert!(parse_pairs(&["src_ip".into()]).is_err());
        assert!(parse_pairs(&["src_ip:src_ip".into()]).is_err());
    }

    #[test]
    fn global_flags_and_subcommands_parse() {
        let cli = Cli::try_parse_from([
            "log2ns",
            "--store",
            "/tmp/s",
            "query",
            "logs: src_ip=1.2.3.4",
        ])
        .unwrap();
        assert_eq!(cli.store, PathBuf::from("/tmp/s"));
        let cli =
            Cli::try_parse_from(["log2ns", "witness-check", "--n", "5", "--seed", "3"]).unwrap();
        assert!(matches!(
            cli.command,
            Command::WitnessCheck { n: 5, seed: 3 }
        ));
        assert!(
            Cli::try_parse_from(["log2ns", "cluster", "--k", "2", "--k-range", "2..3"]).is_err()
        );
    }
}
