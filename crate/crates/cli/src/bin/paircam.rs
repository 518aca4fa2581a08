use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use paircam_cli::config::split_list;
use paircam_cli::report::{parse_numbers, pearson};
use paircam_cli::{commands, CliError, CliResult, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "paircam", version, about = "Explain and evaluate pairwise similarity models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// `toy`, `untrained[:SEED]` or a checkpoint path
    #[arg(long)]
    model: Option<String>,
    /// `toy[:SEED]`, a PNG directory, an image, or `a.png,b.png`
    #[arg(long)]
    pairs: Option<String>,
    /// Comma-separated method names
    #[arg(long)]
    methods: Option<String>,
    /// Comma-separated metric names (SI, SD, CI, CD, SAD, CAD, MS)
    #[arg(long)]
    metrics: Option<String>,
    #[arg(long)]
    transform: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON run configuration; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "n-pairs")]
    n_pairs: Option<usize>,
    /// Pixels inserted or deleted per curve step
    #[arg(long = "L")]
    pixels_per_step: Option<usize>,
    #[arg(long = "mask-size")]
    mask_size: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long = "n-masks")]
    n_masks: Option<usize>,
    /// Comma-separated layer ids for inversion
    #[arg(long)]
    layers: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write raw maps, overlays and metadata for one pair
    Explain(Common),
    /// Aggregate metrics over a set of pairs
    Evaluate(Common),
    /// Render the interpolation strip of a transform
    Dissect(Common),
    /// Cascading randomization grids
    Sanity(Common),
    /// Feature inversion images per layer
    Invert(Common),
    /// Time each method
    Bench(Common),
    /// Train the toy encoder and write a checkpoint
    Train(Common),
    /// Grouped scores from evaluation reports
    Summarize {
        reports: Vec<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Correlation of two comma-separated lists
    Pearson { xs: String, ys: String },
}

fn resolve(name: &str, c: Common) -> CliResult<RunConfig> {
    let layers = match c.layers {
        Some(s) => Some(
            split_list(&s)
                .iter()
                .map(|v| v.parse::<usize>().map_err(|_| CliError::Input(format!("bad layer id '{v}'"))))
                .collect::<CliResult<Vec<_>>>()?,
        ),
        None => None,
    };
    let flags = Overrides {
        model: c.model,
        pairs: c.pairs,
        methods: c.methods.as_deref().map(split_list),
        metrics: c.metrics.as_deref().map(split_list),
        transform: c.transform,
        out: c.out,
        seed: c.seed,
        n_pairs: c.n_pairs,
        pixels_per_step: c.pixels_per_step,
        mask_size: c.mask_size,
        stride: c.stride,
        n_masks: c.n_masks,
        layers,
    };
    RunConfig::resolve(name, c.config.as_deref(), flags)
}

fn run(cli: Cli) -> CliResult<Vec<PathBuf>> {
    type Cmd = fn(&RunConfig) -> CliResult<Vec<PathBuf>>;
    let (name, common, f): (&str, Common, Cmd) = match cli.command {
        Command::Explain(c) => ("explain", c, commands::explain),
        Command::Evaluate(c) => ("evaluate", c, commands::evaluate),
        Command::Dissect(c) => ("dissect", c, commands::dissect),
        Command::Sanity(c) => ("sanity", c, commands::sanity),
        Command::Invert(c) => ("invert", c, commands::invert),
        Command::Bench(c) => ("bench", c, commands::bench),
        Command::Train(c) => ("train", c, commands::train),
        Command::Summarize { reports, out } => return commands::summarize(&reports, &out),
        Command::Pearson { xs, ys } => {
            let r = pearson(&parse_numbers(&xs)?, &parse_numbers(&ys)?)?;
            println!("{r:.6}");
            return Ok(Vec::new());
        }
    };
    let cfg = resolve(name, common)?;
    f(&cfg)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("paircam: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
