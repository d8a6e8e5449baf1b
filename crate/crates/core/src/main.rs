use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use infopot::llm_gateway::ProviderKind;
use infopot::pipeline::{open_run, Overrides, Pipeline, PipelineError, Stage};
use infopot::prompts::PromptSet;
use tracing_subscriber::EnvFilter;

#[derive(Parser, Debug)]
#[command(
    name = "infopot",
    version,
    about = "Estimate how much a text collection teaches a language model"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "infopot.toml")]
    config: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the provider kind from the config.
    #[arg(long, global = true, value_enum)]
    provider: Option<ProviderArg>,
    #[arg(long, global = true)]
    run_id: Option<String>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Rerun stages even when their inputs are unchanged.
    #[arg(long, global = true)]
    force: bool,
    /// Log filter, e.g. `info` or `infopot=debug`. RUST_LOG takes precedence.
    #[arg(long, global = true, default_value = "warn")]
    log: String,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProviderArg {
    Mock,
    OpenaiCompatible,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic baseline chapters from the configured topic list.
    SynthBaseline,
    /// Split the corpus into fixed-size word chunks.
    Chunk,
    /// Generate questions for every chunk.
    Generate,
    /// Score and filter the question pool.
    Filter,
    /// Ask every evaluator model each question with and without context.
    Evaluate,
    /// Build contingency tables and information potential.
    Score,
    /// Re-filter at several cutoffs and rescore from stored verdicts.
    Sweep(PercentileArgs),
    /// Run all stages in order, skipping those already up to date.
    Run(PercentileArgs),
    /// Print the summary of a scored run and write its report bundle.
    Report {
        /// Print the bundle as JSON instead of the text summary.
        #[arg(long)]
        json: bool,
    },
    /// Copy the built-in prompt templates into a directory for editing.
    Templates {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug, Default)]
struct PercentileArgs {
    /// Comma-separated cutoffs, e.g. 0,10,20,30.
    #[arg(long, value_delimiter = ',')]
    percentiles: Option<Vec<u32>>,
}

impl Global {
    fn overrides(&self, percentiles: Option<Vec<u32>>) -> Overrides {
        Overrides {
            run_id: self.run_id.clone(),
            seed: self.seed,
            percentiles,
            provider: self.provider.map(|p| match p {
                ProviderArg::Mock => ProviderKind::Mock,
                ProviderArg::OpenaiCompatible => ProviderKind::OpenaiCompatible,
            }),
            output_dir: self.output_dir.clone(),
            force: self.force,
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let mut out = std::io::stdout().lock();
    let (stage, percentiles) = match cli.command {
        Command::Templates { out: dir } => {
            PromptSet::builtin()
                .write_dir(&dir)
                .with_context(|| format!("writing templates to {}", dir.display()))?;
            writeln!(out, "{}", dir.display())?;
            return Ok(());
        }
        Command::Report { json } => {
            let pipeline = open_run(&g.config, &g.overrides(None))?;
            let (bundle, summary) = pipeline.report()?;
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&bundle)?)?;
            } else {
                write!(out, "{summary}")?;
            }
            return Ok(());
        }
        Command::SynthBaseline => (Some(Stage::SynthBaseline), None),
        Command::Chunk => (Some(Stage::Chunk), None),
        Command::Generate => (Some(Stage::Generate), None),
        Command::Filter => (Some(Stage::Filter), None),
        Command::Evaluate => (Some(Stage::Evaluate), None),
        Command::Score => (Some(Stage::Score), None),
        Command::Sweep(p) => (Some(Stage::Sweep), p.percentiles),
        Command::Run(p) => (None, p.percentiles),
    };
    let mut pipeline = Pipeline::open(&g.config, &g.overrides(percentiles))?;
    let outcomes = match stage {
        Some(s) => vec![pipeline.run_stage(s)?],
        None => pipeline.run_all()?,
    };
    for o in &outcomes {
        writeln!(out, "{}", serde_json::to_string(o)?)?;
    }
    if stage.is_none() {
        write!(out, "{}", pipeline.report()?.1)?;
    }
    Ok(())
}

fn error_json(err: &anyhow::Error) -> serde_json::Value {
    let kind = err
        .downcast_ref::<PipelineError>()
        .map(PipelineError::kind)
        .unwrap_or("internal");
    let causes: Vec<String> = err.chain().skip(1).map(|c| c.to_string()).collect();
    serde_json::json!({ "error": { "kind": kind, "message": err.to_string(), "causes": causes } })
}

fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.downcast_ref::<std::io::Error>()
        .is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter =
        EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(&cli.global.log));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) if is_broken_pipe(&err) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", error_json(&err));
            let config_error = matches!(
                err.downcast_ref::<PipelineError>(),
                Some(PipelineError::ConfigRead { .. } | PipelineError::InvalidConfig(_))
            );
            ExitCode::from(if config_error { 2 } else { 1 })
        }
    }
}
