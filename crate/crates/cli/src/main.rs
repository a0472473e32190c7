use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sgdcn_cli::pipeline::format_summary;
use sgdcn_cli::{CliResult, PipelineConfig, Run};

#[derive(Parser)]
#[command(name = "sgdcn", version, about = "Superpixel-graph DeeperGCN dark-spot segmentation")]
struct Args {
    /// Configuration file (`key = value` lines); built-in defaults if omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "run")]
    run_dir: PathBuf,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the `workers` key.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate a synthetic dataset into the data directory.
    Synth,
    /// Lee-filter and tile the dataset scenes.
    Preprocess,
    /// Superpixels, region graphs and node labels per tile.
    Segment,
    /// Per-node feature matrices and the training normalizer.
    Features,
    /// SVM-RFE ranking, F1 curve and the selected subset.
    Select,
    /// Train the graph network.
    Train,
    /// Predict masks for every tile, plus the Otsu baseline.
    Predict,
    /// Score test-split predictions and write metrics CSVs.
    Eval,
    /// All stages in order (synth only without an external data_dir).
    Run,
}

fn execute(args: &Args) -> CliResult<()> {
    let mut config = match &args.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(w) = args.workers {
        config.workers = w;
    }
    let mut run = Run::open(config, &args.run_dir)?;
    match args.command {
        Command::Synth => drop(run.synth()?),
        Command::Preprocess => drop(run.preprocess()?),
        Command::Segment => drop(run.segment()?),
        Command::Features => drop(run.features()?),
        Command::Select => drop(run.select()?),
        Command::Train => drop(run.train()?),
        Command::Predict => drop(run.predict()?),
        Command::Eval => print!("{}", format_summary(&run.eval()?)),
        Command::Run => print!("{}", format_summary(&run.run_all()?)),
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
