use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use featlab::backend::{load_cassette, save_cassette, AgentTranscript, CostLedger, Stage};
use featlab::config::RunConfig;
use featlab::error::{exit_code, Error, Result};
use featlab::evaluation::{audit_leakage, evaluate_heldout, freeze, FrozenFeatureSet};
use featlab::ingest::{load_dataset, materialize_split, stratified_split, write_records};
use featlab::metrics::{compare_conditions, RunSummary};
use featlab::pipeline::{artifact, read_json, run_consolidation, run_discovery, run_pipeline, run_scoring, write_json};
use featlab::report::{load_stats, ranked, render_comparison, render_delta_table, render_extended_table};
use featlab::synth::{derive_rulebook, generate_population, table_plants, PopulationPlan};
use featlab::{Condition, DatasetRole, FeatureSpec, PopulationCounts, ProviderKind};
use log::info;

/// Agent-driven feature discovery and held-out evaluation.
#[derive(Parser)]
#[command(name = "featlab", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_condition)]
    condition: Option<Condition>,
    #[arg(long, global = true, value_parser = parse_provider)]
    provider: Option<ProviderKind>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Maximum concurrent provider calls.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// Mock provider rulebook.
    #[arg(long, global = true)]
    rulebook: Option<PathBuf>,
    /// Replay cassette; repeatable.
    #[arg(long = "cassette", global = true)]
    cassettes: Vec<PathBuf>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run Agent 1 over a discovery dataset and write the master list.
    Discover {
        #[arg(long)]
        discovery: Option<PathBuf>,
    },
    /// Merge overlapping features of a master list and freeze the result.
    Consolidate {
        #[arg(long)]
        master: PathBuf,
    },
    /// Tag a labeled dataset with a frozen feature set and compute statistics.
    Score {
        #[arg(long)]
        frozen: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "discovery", value_parser = parse_role)]
        role: DatasetRole,
    },
    /// Audit upstream transcripts, then score the held-out set.
    Evaluate {
        #[arg(long)]
        frozen: PathBuf,
        #[arg(long)]
        heldout: Option<PathBuf>,
        /// Discovery and consolidation transcripts of the source run.
        #[arg(long = "transcripts", required = true)]
        transcripts: Vec<PathBuf>,
    },
    /// Render stats files as tables, or compare two run summaries.
    Report {
        /// Stats files (JSON or CSV).
        #[arg(long = "stats")]
        stats: Vec<PathBuf>,
        /// Two summary files: run A, then baseline B.
        #[arg(long, num_args = 2, value_names = ["A", "B"])]
        compare: Option<Vec<PathBuf>>,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        min_support: Option<u64>,
    },
    /// discover, consolidate, freeze, score, evaluate and summarize.
    Pipeline {
        #[arg(long)]
        discovery: Option<PathBuf>,
        #[arg(long)]
        heldout: Option<PathBuf>,
        /// Reuse stages completed by a failed earlier run.
        #[arg(long)]
        resume: bool,
    },
    /// Generate discovery and held-out populations with planted features.
    Synth {
        /// Plant plan; defaults to ten planted features in a 400/600 population.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Stratified discovery/held-out split of a labeled pool.
    Split {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        fraction: f64,
    },
}

fn parse_condition(s: &str) -> std::result::Result<Condition, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_provider(s: &str) -> std::result::Result<ProviderKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_role(s: &str) -> std::result::Result<DatasetRole, String> {
    match s {
        "discovery" => Ok(DatasetRole::Discovery),
        "heldout" => Ok(DatasetRole::Heldout),
        other => Err(format!("unknown role `{other}` (expected discovery|heldout)")),
    }
}

fn resolve_config(c: &Common) -> Result<RunConfig> {
    let mut config = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = c.condition {
        config.condition = v;
    }
    if let Some(v) = c.provider {
        config.provider = v;
    }
    if let Some(v) = c.seed {
        config.seed = v;
    }
    if let Some(v) = &c.out {
        config.paths.out_dir = v.clone();
    }
    if let Some(v) = c.parallelism {
        config.parallelism = v;
    }
    if let Some(v) = &c.rulebook {
        config.paths.rulebook = Some(v.clone());
    }
    if !c.cassettes.is_empty() {
        config.paths.cassettes = c.cassettes.clone();
    }
    config.validate()?;
    Ok(config)
}

fn out_dir(config: &RunConfig) -> Result<&Path> {
    let out = config.paths.out_dir.as_path();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    Ok(out)
}

fn require(path: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    path.ok_or_else(|| Error::InvalidArgument(format!("missing --{flag} (or set it in the config paths)")))
}

fn write_ledger(out: &Path, transcripts: &[AgentTranscript], stage: Stage) -> Result<()> {
    let mut ledger = CostLedger::new();
    ledger.record_all(transcripts, stage);
    write_json(&out.join(artifact::LEDGER), &ledger)
}

fn run(cli: Cli) -> Result<()> {
    let config = resolve_config(&cli.common)?;
    match cli.command {
        Command::Discover { discovery } => {
            let path = require(discovery.or(config.paths.discovery.clone()), "discovery")?;
            let dataset = load_dataset(&path, DatasetRole::Discovery)?;
            let backend = config.backend()?;
            let (master, ts) = run_discovery(&config, &backend, &dataset).map_err(|e| e.in_stage("discover"))?;
            let out = out_dir(&config)?;
            write_json(&out.join(artifact::MASTER_LIST), &master)?;
            save_cassette(&out.join(artifact::TRANSCRIPTS_DISCOVERY), &ts)?;
            write_ledger(out, &ts, Stage::Discovery)?;
            println!("{} features discovered from {} records", master.len(), dataset.len());
        }
        Command::Consolidate { master } => {
            let master: Vec<FeatureSpec> = read_json(&master)?;
            let backend = config.backend()?;
            let c = run_consolidation(&config, &backend, &master).map_err(|e| e.in_stage("consolidate"))?;
            let frozen = freeze(&c.features, &config.run_id()).map_err(|e| e.in_stage("freeze"))?;
            let out = out_dir(&config)?;
            write_json(&out.join(artifact::CONSOLIDATED), &c.features)?;
            write_json(&out.join(artifact::MERGE_DECISIONS), &c.decisions)?;
            frozen.save(&out.join(artifact::FROZEN))?;
            save_cassette(&out.join(artifact::TRANSCRIPTS_CONSOLIDATION), &c.transcripts)?;
            write_ledger(out, &c.transcripts, Stage::Consolidation)?;
            println!(
                "{} features consolidated into {} ({} merges), checksum {}",
                master.len(),
                frozen.len(),
                c.decisions.len(),
                frozen.checksum()
            );
        }
        Command::Score { frozen, dataset, role } => {
            let frozen = FrozenFeatureSet::load(&frozen)?;
            let dataset = load_dataset(&dataset, role)?;
            let backend = config.backend()?;
            let (matrix, stats, ts) =
                run_scoring(&config, &backend, frozen.features(), &dataset).map_err(|e| e.in_stage("score"))?;
            let out = out_dir(&config)?;
            write_json(&out.join(format!("{role}_assignments.json")), &matrix)?;
            write_json(&out.join(format!("{role}_stats.json")), &stats)?;
            let mut csv = Vec::new();
            featlab::metrics::write_stats_csv(&mut csv, &stats)?;
            let csv_path = out.join(format!("{role}_stats.csv"));
            fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
            save_cassette(&out.join(format!("transcripts_scoring_{role}.json")), &ts)?;
            write_ledger(out, &ts, Stage::Scoring)?;
            print!("{}", render_delta_table(&ranked(&stats, config.min_support_count, config.top_k)));
        }
        Command::Evaluate { frozen, heldout, transcripts } => {
            let frozen = FrozenFeatureSet::load(&frozen)?;
            let path = require(heldout.or(config.paths.heldout.clone()), "heldout")?;
            let heldout = load_dataset(&path, DatasetRole::Heldout)?;
            let mut upstream = Vec::new();
            for p in &transcripts {
                upstream.extend(load_cassette(p)?);
            }
            let out = out_dir(&config)?;
            let audit = audit_leakage(&upstream, &heldout);
            write_json(&out.join(artifact::AUDIT), &audit)?;
            let backend = config.backend()?;
            let eval = evaluate_heldout(&frozen, &heldout, &backend, &upstream, config.scoring_options())
                .map_err(|e| e.in_stage("evaluate"))?;
            write_json(&out.join(artifact::HELDOUT_ASSIGNMENTS), &eval.matrix)?;
            write_json(&out.join(artifact::HELDOUT_STATS), &eval.stats)?;
            let mut csv = Vec::new();
            featlab::metrics::write_stats_csv(&mut csv, &eval.stats)?;
            let csv_path = out.join(artifact::HELDOUT_STATS_CSV);
            fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
            save_cassette(&out.join(artifact::TRANSCRIPTS_SCORING_HELDOUT), &eval.transcripts)?;
            write_ledger(out, &eval.transcripts, Stage::Scoring)?;
            print!("{}", render_extended_table(&ranked(&eval.stats, config.min_support_count, config.top_k)));
        }
        Command::Report {
            stats,
            compare,
            top_k,
            min_support,
        } => {
            let top_k = top_k.unwrap_or(config.top_k);
            let min_support = min_support.unwrap_or(config.min_support_count);
            let mut text = String::new();
            let mut csv_rows = Vec::new();
            for path in &stats {
                let rows = ranked(&load_stats(path)?, min_support, top_k);
                text.push_str(&format!("{}\n\n", path.display()));
                text.push_str(&render_delta_table(&rows));
                text.push('\n');
                text.push_str(&render_extended_table(&rows));
                text.push('\n');
                csv_rows.extend(rows);
            }
            if let Some(pair) = compare {
                let a: RunSummary = read_json(&pair[0])?;
                let b: RunSummary = read_json(&pair[1])?;
                let report = compare_conditions(&a, &b)?;
                text.push_str(&render_comparison(&report));
                if let Some(dir) = &cli.common.out {
                    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                    write_json(&dir.join("comparison.json"), &report)?;
                }
            }
            if let Some(dir) = &cli.common.out {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let mut csv = Vec::new();
                featlab::metrics::write_stats_csv(&mut csv, &csv_rows)?;
                let csv_path = dir.join("report.csv");
                fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
                let txt_path = dir.join(artifact::REPORT);
                fs::write(&txt_path, &text).map_err(|e| Error::io(&txt_path, e))?;
            }
            print!("{text}");
        }
        Command::Pipeline {
            discovery,
            heldout,
            resume,
        } => {
            let mut config = config;
            if discovery.is_some() {
                config.paths.discovery = discovery;
            }
            if heldout.is_some() {
                config.paths.heldout = heldout;
            }
            let backend = config.backend()?;
            let output = run_pipeline(&config, &backend, resume)?;
            let s = &output.summary;
            println!(
                "{}: {} frozen features, mean delta_sr {:.3}, median {:.3}, cost {:.4}",
                s.label, s.feature_count, s.mean_delta_sr, s.median_delta_sr, s.cost
            );
        }
        Command::Synth { plan } => {
            let plan = match plan {
                Some(p) => PopulationPlan::load(&p)?,
                None => PopulationPlan::new(PopulationCounts::new(400, 600)?, "", table_plants()),
            }
            .resolve()?;
            let out = out_dir(&config)?;
            let prefixed = |tag: &str| PopulationPlan::new(plan.counts, &format!("{}{tag}", plan.id_prefix), plan.planted.clone());
            let discovery = generate_population(&prefixed("d"), config.seed, DatasetRole::Discovery)?;
            let heldout = generate_population(&prefixed("h"), config.seed.wrapping_add(1), DatasetRole::Heldout)?;
            write_records(&out.join("discovery.jsonl"), discovery.records())?;
            write_records(&out.join("heldout.jsonl"), heldout.records())?;
            write_json(&out.join("plan.json"), &plan)?;
            write_json(&out.join("rulebook.json"), &derive_rulebook(&plan.planted)?)?;
            println!(
                "wrote {} discovery and {} held-out records with {} planted features",
                discovery.len(),
                heldout.len(),
                plan.planted.len()
            );
        }
        Command::Split { pool, fraction } => {
            let pool = load_dataset(&pool, DatasetRole::Discovery)?;
            let split = stratified_split(&pool, fraction, config.seed)?;
            let manifest = materialize_split(&split, out_dir(&config)?)?;
            println!(
                "{} discovery / {} held-out records (seed {})",
                split.discovery.len(),
                split.heldout.len(),
                manifest.seed
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit_code::USAGE as u8 } else { 0 });
        }
    };
    let level = if cli.common.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    info!("featlab {}", env!("CARGO_PKG_VERSION"));
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
