//! `ttv`: tonal tension toolkit. Preprocess MIDI, train the VAE, extract
//! attribute vectors, generate variations and run the evaluation suite.

mod cmd;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

#[derive(Parser, Debug)]
#[command(name = "ttv", version, about = "Tonal tension analysis and tension-controlled generation")]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    rng_seed: Option<u64>,

    /// JSON settings file with optional `model` and `spiral` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,

    /// Print the command summary as JSON on stdout.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrackArgs {
    /// Melody track name (otherwise the highest-pitched qualifying track).
    #[arg(long)]
    melody_track: Option<String>,
    /// Bass track name (otherwise the lowest-pitched qualifying track).
    #[arg(long)]
    bass_track: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-fragment tension curves of one MIDI file.
    Analyze {
        midi: PathBuf,
        #[command(flatten)]
        tracks: TrackArgs,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Builds a fragment dataset from a directory of MIDI files.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        tracks: TrackArgs,
    },
    /// Trains a model; writes model.ttvc, ledger.csv and summary.json.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extracts attribute vectors from a trained model.
    Vectors {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// `all` or a comma-separated list such as `tensile_strain_direction,cloud_diameter_level`.
        #[arg(long, default_value = "all")]
        kinds: String,
        #[arg(long, default_value_t = 1000)]
        target_n: usize,
        /// Fragments to select classes from.
        #[arg(long, value_enum, default_value_t = cmd::vectors::Pool::Train)]
        pool: cmd::vectors::Pool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extracts a vector for a tension shape template.
    ShapeVector {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// `triangle` or `ramp`.
        #[arg(long)]
        template: String,
        #[arg(long, value_enum, default_value_t = cmd::Kind::Tensile)]
        kind: cmd::Kind,
        #[arg(long, default_value_t = 1000)]
        target_n: usize,
        #[arg(long, value_enum, default_value_t = cmd::vectors::Pool::Train)]
        pool: cmd::vectors::Pool,
        /// Adds the vector to an existing vectors file instead of replacing it.
        #[arg(long)]
        append: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decodes one fragment, optionally edited by attribute vectors.
    Generate {
        #[command(flatten)]
        common: cmd::generate::GenArgs,
        /// `NAME=SCALE`, applied in order; repeatable.
        #[arg(long = "edit")]
        edits: Vec<String>,
        /// Tension report; defaults to the MIDI path with a .json extension.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Chains 4-bar blocks decoded from one seed with cumulative edits.
    ComposeChain {
        #[command(flatten)]
        common: cmd::generate::GenArgs,
        /// `BARS[:NAME=SCALE,...]`; bars must be a multiple of 4. Repeatable.
        #[arg(long = "section", required = true)]
        sections: Vec<String>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Runs one experiment of the evaluation suite.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long, value_enum)]
        experiment: cmd::eval::Experiment,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        /// Comma-separated scales; the experiment's default grid when absent.
        #[arg(long, allow_hyphen_values = true)]
        scales: Option<String>,
        /// Vectors to sweep (comma-separated). Interaction takes exactly two.
        #[arg(long = "vector")]
        vector: Option<String>,
        /// Scale for pitch-dist.
        #[arg(long, default_value_t = 6.0, allow_hyphen_values = true)]
        alpha: f64,
        /// Bar range for pitch-dist, `START..END`.
        #[arg(long, default_value = "2..4")]
        bars: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compares analytic and finite-difference gradients on a tiny model.
    Gradcheck {
        #[arg(long, default_value_t = 200)]
        samples: usize,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<ttv_core::Error>() {
        Some(e) if e.is_invalid_input() => 2,
        _ => 1,
    }
}

fn print_summary(summary: &Value, json: bool) {
    if summary.is_null() {
        return;
    }
    if json {
        println!("{}", serde_json::to_string_pretty(summary).expect("summary serializes"));
        return;
    }
    if let Value::Object(map) = summary {
        for (k, v) in map {
            match v {
                Value::String(s) => println!("{k}: {s}"),
                Value::Array(items) if items.iter().all(|i| !i.is_object()) => {
                    let parts: Vec<String> = items.iter().map(|i| i.as_str().map_or_else(|| i.to_string(), String::from)).collect();
                    println!("{k}: {}", parts.join(", "));
                }
                other => println!("{k}: {other}"),
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<Value> {
    let settings = settings::Settings::load(cli.config.as_deref())?;
    let seed = cli.rng_seed;
    match cli.command {
        Command::Analyze { midi, tracks, out } => cmd::corpus::analyze(&settings, &midi, &tracks, out.as_deref(), cli.json),
        Command::Preprocess { input, out, tracks } => cmd::corpus::preprocess(&settings, &input, &out, &tracks),
        Command::Train { dataset, out } => cmd::train::train(&settings, seed, &dataset, &out),
        Command::Vectors { model, dataset, kinds, target_n, pool, out } => {
            cmd::vectors::vectors(&model, &dataset, &kinds, target_n, pool, &out)
        }
        Command::ShapeVector { model, dataset, template, kind, target_n, pool, append, out } => {
            cmd::vectors::shape_vector(&model, &dataset, &template, kind, target_n, pool, append, &out)
        }
        Command::Generate { common, edits, report } => cmd::generate::generate(&settings, seed, &common, &edits, report),
        Command::ComposeChain { common, sections, report } => {
            cmd::generate::compose_chain(&settings, seed, &common, &sections, report)
        }
        Command::Eval { model, vectors, experiment, n, scales, vector, alpha, bars, out } => {
            let req = cmd::eval::EvalRequest { experiment, n, scales, vector, alpha, bars, seed: seed.unwrap_or(0) };
            cmd::eval::eval(&settings, &model, &vectors, &req, &out)
        }
        Command::Gradcheck { samples } => cmd::train::gradcheck(seed.unwrap_or(0), samples),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
    let json = cli.json;
    match run(cli) {
        Ok(summary) => {
            print_summary(&summary, json);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
