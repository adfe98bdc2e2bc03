//! Command-line wiring. The binary is a thin shell over the library: each
//! subcommand resolves a config (file, dotted-key overrides, convenience
//! flags) and calls the matching pipeline stage.
//!
//! Any flag containing a dot is treated as a config override of the same
//! dotted name (`--gnn.dropout 0.3`), so every config key is reachable from
//! the command line.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{load_config, ExperimentConfig};
use crate::experiment::{
    run_ablate, run_build_features, run_enrich, run_make_synthetic, run_prompt_sweep,
    run_train_eval, PipelineError, SynthArgs,
};

#[derive(Parser)]
#[command(
    name = "tape",
    about = "Node classification on text-attributed graphs with LLM-enriched features",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Query the LLM (or mock) per node and write parsed enrichment records.
    Enrich(StageArgs),
    /// Build the three frozen feature matrices (orig, expl, pred).
    BuildFeatures(StageArgs),
    /// Train one GNN per source over the seed list and report the ensemble.
    Train(StageArgs),
    /// Full run plus leave-one-out rows for every source.
    Ablate(StageArgs),
    /// Zero-shot top-1 accuracy per prompt template.
    PromptSweep(StageArgs),
    /// Generate a synthetic dataset directory.
    MakeSynthetic(MakeSyntheticArgs),
}

#[derive(Args)]
struct StageArgs {
    /// TOML config file; omitted keys use defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the offline mock oracle instead of a live endpoint.
    #[arg(long)]
    mock: bool,
    /// Mock top-1 accuracy dial (implies --mock).
    #[arg(long)]
    mock_accuracy: Option<f64>,
    /// Comma-separated seed list for the training repetitions.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Output directory for artifacts and reports.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the resolved config and planned stages without side effects.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct MakeSyntheticArgs {
    #[arg(long, default_value_t = 600)]
    nodes: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 0.8)]
    homophily: f64,
    #[arg(long, default_value_t = 6)]
    keywords_per_class: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Dataset directory to create.
    #[arg(long)]
    out: PathBuf,
}

/// Splits dotted-key overrides (`--a.b value`) out of the raw argument list
/// so clap only sees its declared flags.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut plain = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut iter = args.into_iter().peekable();
    while let Some(arg) = iter.next() {
        if let Some(key) = arg.strip_prefix("--") {
            if key.contains('.') {
                if let Some((k, v)) = key.split_once('=') {
                    overrides.push((k.to_string(), v.to_string()));
                } else if let Some(value) = iter.next() {
                    overrides.push((key.to_string(), value));
                } else {
                    overrides.push((key.to_string(), "true".to_string()));
                }
                continue;
            }
        }
        plain.push(arg);
    }
    (plain, overrides)
}

fn resolve_config(
    stage: &StageArgs,
    overrides: &[(String, String)],
) -> Result<ExperimentConfig, PipelineError> {
    let mut all = overrides.to_vec();
    if stage.mock || stage.mock_accuracy.is_some() {
        all.push(("llm.mock".into(), "true".into()));
    }
    if let Some(p) = stage.mock_accuracy {
        all.push(("llm.mock_accuracy".into(), p.to_string()));
    }
    if let Some(seeds) = &stage.seed {
        let list = seeds
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(",");
        all.push(("run.seeds".into(), list));
    }
    if let Some(out) = &stage.out {
        all.push(("run.out_dir".into(), out.to_string_lossy().into_owned()));
    }
    Ok(load_config(stage.config.as_deref(), &all)?)
}

fn dry_run(cfg: &ExperimentConfig, stages: &[&str]) {
    println!("# resolved config (hash {})", cfg.hash());
    print!("{}", cfg.to_toml());
    println!("# planned stages: {}", stages.join(" -> "));
}

fn execute(command: Command, overrides: &[(String, String)]) -> Result<(), PipelineError> {
    match command {
        Command::Enrich(stage) => {
            let cfg = resolve_config(&stage, overrides)?;
            if stage.dry_run {
                dry_run(&cfg, &["enrich"]);
                return Ok(());
            }
            let outcome = run_enrich(&cfg, None)?;
            println!(
                "enriched {} nodes ({} cache hits) -> {}",
                outcome.records.len(),
                outcome.cache_hits,
                outcome.enriched_path.display()
            );
            println!(
                "parse status: {} full, {} partial, {} fallback (fallback rate {:.4})",
                outcome.summary.full,
                outcome.summary.partial,
                outcome.summary.fallback,
                outcome.summary.fallback_rate()
            );
        }
        Command::BuildFeatures(stage) => {
            let cfg = resolve_config(&stage, overrides)?;
            if stage.dry_run {
                dry_run(&cfg, &["enrich (if needed)", "build-features"]);
                return Ok(());
            }
            let paths = run_build_features(&cfg, None)?;
            for (source, path) in paths {
                println!("features[{source}] -> {}", path.display());
            }
        }
        Command::Train(stage) => {
            let cfg = resolve_config(&stage, overrides)?;
            if stage.dry_run {
                dry_run(
                    &cfg,
                    &["enrich (if needed)", "build-features (if needed)", "train"],
                );
                return Ok(());
            }
            let report = run_train_eval(&cfg)?;
            print!("{}", report.render_table());
            println!("report -> {}", cfg.out_dir().join("report.json").display());
        }
        Command::Ablate(stage) => {
            let cfg = resolve_config(&stage, overrides)?;
            if stage.dry_run {
                dry_run(
                    &cfg,
                    &["enrich (if needed)", "build-features (if needed)", "ablate"],
                );
                return Ok(());
            }
            let ablation = run_ablate(&cfg)?;
            print!("{}", ablation.render_table());
            println!(
                "ablation -> {}",
                cfg.out_dir().join("ablation.json").display()
            );
        }
        Command::PromptSweep(stage) => {
            let cfg = resolve_config(&stage, overrides)?;
            if stage.dry_run {
                dry_run(&cfg, &["prompt-sweep"]);
                return Ok(());
            }
            let sweep = run_prompt_sweep(&cfg, None)?;
            print!("{}", sweep.render_table());
            println!(
                "sweep -> {}",
                cfg.out_dir().join("prompt_sweep.json").display()
            );
        }
        Command::MakeSynthetic(args) => {
            let out = run_make_synthetic(&SynthArgs {
                nodes: args.nodes,
                classes: args.classes,
                homophily: args.homophily,
                keywords_per_class: args.keywords_per_class,
                seed: args.seed,
                out: args.out,
            })?;
            println!("synthetic dataset -> {}", out.display());
        }
    }
    Ok(())
}

/// Parses and runs, returning the process exit code (0 success, 2 config
/// error, 3 transport error, 4 numeric abort, 1 other failures).
pub fn run_from<I: IntoIterator<Item = String>>(args: I) -> i32 {
    let (plain, overrides) = split_overrides(args.into_iter().collect());
    let cli = match Cli::try_parse_from(plain) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own help/usage; 2 matches the config-error code.
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command, &overrides) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run() -> i32 {
    run_from(std::env::args())
}
