//! `poster`: turns a parsed paper into a tikzposter document, and exposes
//! every stage (ingest, labeling, training, baselines, evaluation) on its own.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{usage, BaselineMethod, CmdResult, PipelineArgs};
use config::{PipelineConfig, Preset};
use poster_core::composer::Orientation;

#[derive(Parser)]
#[command(name = "poster", version, about = "Generate posters from scientific papers")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Model size preset that config tables are applied over.
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic annotated corpus.
    Synth {
        #[arg(long, default_value_t = 20)]
        papers: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate paper files or corpus directories; optionally write normalized copies.
    Ingest {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Derive greedy sentence labels and emit the updated annotation document.
    Label {
        paper: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the section filter.
    TrainFilter {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the sentence/graph extraction model.
    TrainExtract {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score the sections of a paper: {section_id: score}.
    Filter {
        paper: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a non-neural baseline over every section of a paper.
    Baseline {
        paper: PathBuf,
        #[arg(long, value_enum)]
        method: BaselineMethod,
        /// Caption similarity threshold for `similarity`.
        #[arg(long, default_value_t = 0.3)]
        threshold: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// K-fold cross-validation over a corpus.
    Evaluate {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score units and select panel content for sections of a paper.
    Extract {
        paper: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Section ids to extract; all sections when omitted.
        #[arg(long, value_delimiter = ',')]
        sections: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render panels (from `extract` or `baseline`) into a .tex poster.
    Compose {
        paper: PathBuf,
        #[arg(long)]
        panels: PathBuf,
        #[arg(long, value_enum)]
        orientation: Option<OrientationArg>,
        #[arg(long)]
        template_file: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter, extract and compose in one go.
    Pipeline {
        paper: PathBuf,
        #[arg(long)]
        filter_checkpoint: Option<PathBuf>,
        #[arg(long)]
        extract_checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        orientation: Option<OrientationArg>,
        #[arg(long)]
        template_file: Option<PathBuf>,
        /// Directory receiving `<paper id>.tex` and `<paper id>.report.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum OrientationArg {
    Portrait,
    Landscape,
}

impl From<OrientationArg> for Orientation {
    fn from(o: OrientationArg) -> Self {
        match o {
            OrientationArg::Portrait => Orientation::Portrait,
            OrientationArg::Landscape => Orientation::Landscape,
        }
    }
}

fn required(flag: Option<PathBuf>, configured: &Option<PathBuf>, name: &str) -> Result<PathBuf, commands::CliError> {
    flag.or_else(|| configured.clone())
        .ok_or_else(|| usage(format!("--{name} is required (or set it under [paths])")))
}

fn run(cli: Cli) -> CmdResult {
    let config = PipelineConfig::load(cli.config.as_deref(), cli.seed, cli.preset).map_err(|e| {
        if cli.config.as_ref().is_some_and(|p| !p.exists()) {
            commands::data(e)
        } else {
            usage(format!("{e:#}"))
        }
    })?;
    let paths = &config.paths;
    match cli.command {
        Command::Synth { papers, out } => commands::synth(&config, papers, &out),
        Command::Ingest { inputs, out } => commands::ingest(&inputs, out.as_deref()),
        Command::Label { paper, out } => commands::label(&paper, out.as_deref()),
        Command::TrainFilter { corpus, out } => {
            let corpus = required(corpus, &paths.corpus, "corpus")?;
            let out = required(out, &paths.filter_checkpoint, "out")?;
            commands::train_filter(&config, &corpus, &out)
        }
        Command::TrainExtract { corpus, out } => {
            let corpus = required(corpus, &paths.corpus, "corpus")?;
            let out = required(out, &paths.extract_checkpoint, "out")?;
            commands::train_extract(&config, &corpus, &out)
        }
        Command::Filter { paper, checkpoint, out } => {
            let checkpoint = required(checkpoint, &paths.filter_checkpoint, "checkpoint")?;
            commands::filter(&paper, &checkpoint, out.as_deref())
        }
        Command::Baseline {
            paper,
            method,
            threshold,
            out,
        } => commands::baseline(&config, &paper, method, threshold, out.as_deref()),
        Command::Evaluate { corpus, folds, out } => {
            let corpus = required(corpus, &paths.corpus, "corpus")?;
            commands::evaluate(&config, &corpus, folds, out.as_deref())
        }
        Command::Extract {
            paper,
            checkpoint,
            sections,
            out,
        } => {
            let checkpoint = required(checkpoint, &paths.extract_checkpoint, "checkpoint")?;
            commands::extract(&paper, &checkpoint, &sections, out.as_deref())
        }
        Command::Compose {
            paper,
            panels,
            orientation,
            template_file,
            out,
        } => {
            let template_file = template_file.or_else(|| paths.templates.clone());
            commands::compose(
                &config,
                &paper,
                &panels,
                orientation.map(Into::into),
                template_file.as_deref(),
                &out,
            )
        }
        Command::Pipeline {
            paper,
            filter_checkpoint,
            extract_checkpoint,
            orientation,
            template_file,
            out,
        } => {
            let args = PipelineArgs {
                paper,
                filter_checkpoint: required(filter_checkpoint, &paths.filter_checkpoint, "filter-checkpoint")?,
                extract_checkpoint: required(extract_checkpoint, &paths.extract_checkpoint, "extract-checkpoint")?,
                orientation: orientation.map(Into::into),
                template_file: template_file.or_else(|| paths.templates.clone()),
                out: required(out, &paths.output, "out")?,
            };
            commands::pipeline(&config, &args)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
