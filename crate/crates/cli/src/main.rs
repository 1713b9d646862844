use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use newsmotion::pipeline::{Outcome, Pipeline, PipelineConfig, Stage};
use newsmotion::Error;

#[derive(Parser)]
#[command(
    name = "newsmotion",
    version,
    about = "News-driven stock movement prediction pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config file (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Override a config value, e.g. `--set lexicon.keywords=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Rerun even when the stage manifest matches.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic articles, prices and aliases files.
    Synth(Common),
    /// Split articles into sentences, tag mentions and build labeled samples.
    Ingest(Common),
    /// Train word embeddings on training-period sentences.
    Embed(Common),
    /// Build the keyword and category lexicons.
    Lexicon(Common),
    /// Compute feature vectors for every labeled sample.
    Featurize(Common),
    /// Train the classifier.
    Train(Common),
    /// Build the price-correlation graph.
    Graph(Common),
    /// Write model and propagated predictions for the test period.
    Predict(Common),
    /// Write the ablation and propagation-sweep reports.
    Evaluate(Common),
    /// Run every stage from ingest through evaluate.
    All(Common),
}

fn run(cli: Cli) -> newsmotion::Result<()> {
    let (stages, common): (Vec<Stage>, Common) = match cli.command {
        Command::Synth(c) => (vec![Stage::Synth], c),
        Command::Ingest(c) => (vec![Stage::Ingest], c),
        Command::Embed(c) => (vec![Stage::Embed], c),
        Command::Lexicon(c) => (vec![Stage::Lexicon], c),
        Command::Featurize(c) => (vec![Stage::Featurize], c),
        Command::Train(c) => (vec![Stage::Train], c),
        Command::Graph(c) => (vec![Stage::Graph], c),
        Command::Predict(c) => (vec![Stage::Predict], c),
        Command::Evaluate(c) => (vec![Stage::Evaluate], c),
        Command::All(c) => (Stage::PIPELINE.to_vec(), c),
    };
    let config = match PipelineConfig::load(&common.config, &common.overrides) {
        Err(Error::Io { path, source }) => {
            return Err(Error::Config(format!(
                "cannot read config {}: {source}",
                path.display()
            )))
        }
        other => other?,
    };
    let mut pipeline = Pipeline::open(config)?;
    pipeline.force = common.force;
    for stage in stages {
        match pipeline.run(stage)? {
            Outcome::Ran => eprintln!("{stage}: done"),
            Outcome::UpToDate => eprintln!("{stage}: up to date"),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
