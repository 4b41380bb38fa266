use std::io::{self, BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use newsforge_cli::{cmd_evaluate, cmd_ingest, cmd_predict, cmd_train, CliError, RunConfig};

/// Classify news articles as false, partially false or true.
#[derive(Debug, Parser)]
#[command(name = "newsforge", version)]
struct Cli {
    #[command(flatten)]
    opts: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags override values from `--config`.
#[derive(Debug, Args)]
struct Overrides {
    /// JSON run configuration
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Labeled corpus (.csv or .jsonl)
    #[arg(long, global = true, value_name = "PATH")]
    corpus: Option<PathBuf>,
    /// Seed for the split, initialization and training (default: $NEWSFORGE_SEED, then 0)
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    /// Test fraction of the corpus
    #[arg(long, global = true)]
    ratio: Option<f64>,
    /// GloVe text-format vectors
    #[arg(long, global = true, value_name = "PATH")]
    embeddings: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Training history CSV
    #[arg(long, global = true, value_name = "PATH")]
    history: Option<PathBuf>,
    /// Evaluation report JSON
    #[arg(long, global = true, value_name = "PATH")]
    report: Option<PathBuf>,
    /// Fail on inputs that preprocess to nothing instead of printing UNSCORABLE
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load the corpus and print document, label and source counts
    Ingest,
    /// Train a model and write the checkpoint and history
    Train,
    /// Print and save the classification report on the test split
    Evaluate,
    /// Classify texts given as arguments or read one per line from --input
    Predict {
        texts: Vec<String>,
        /// File with one text per line (`-` for stdin)
        #[arg(long, value_name = "PATH", conflicts_with = "texts")]
        input: Option<PathBuf>,
    },
}

fn build_config(o: &Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = match &o.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &o.corpus {
        cfg.corpus = Some(v.clone());
    }
    if o.seed.is_some() {
        cfg.seed = o.seed;
    }
    if let Some(v) = o.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = o.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = o.ratio {
        cfg.ratio = v;
    }
    if let Some(v) = &o.embeddings {
        cfg.embeddings = Some(v.clone());
    }
    if let Some(v) = &o.checkpoint {
        cfg.checkpoint = v.clone();
    }
    if let Some(v) = &o.history {
        cfg.history = v.clone();
    }
    if let Some(v) = &o.report {
        cfg.report = v.clone();
    }
    Ok(cfg)
}

fn read_lines(path: &PathBuf) -> Result<Vec<String>, CliError> {
    let fail = |e: io::Error| CliError::Data(format!("{}: {e}", path.display()));
    if path.as_os_str() == "-" {
        return io::stdin().lock().lines().collect::<Result<_, _>>().map_err(fail);
    }
    let text = std::fs::read_to_string(path).map_err(fail)?;
    Ok(text.lines().map(str::to_string).collect())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = build_config(&cli.opts)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Ingest => cmd_ingest(&cfg, &mut out).map(drop),
        Command::Train => cmd_train(&cfg, &mut out).map(drop),
        Command::Evaluate => cmd_evaluate(&cfg, &mut out).map(drop),
        Command::Predict { texts, input } => {
            let inputs = match input {
                Some(p) => read_lines(&p)?,
                None if texts.is_empty() => return Err(CliError::Usage("nothing to predict".into())),
                None => texts,
            };
            cmd_predict(&cfg, &inputs, cli.opts.strict, &mut out).map(drop)
        }
    }?;
    out.flush().map_err(|e| CliError::Data(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
