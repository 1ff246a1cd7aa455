//! `longtail`: one binary wiring every pipeline stage into reproducible
//! subcommands.
//!
//! Exit codes: 0 success, 1 validation error (bad configuration or data),
//! 2 internal error. Structured JSONL events go to stdout, human-readable
//! progress to stderr. Every artifact-producing command writes a
//! `<artifact>.meta.json` sidecar with the resolved configuration and
//! content digests of its inputs; re-running with unchanged inputs
//! reproduces byte-identical outputs.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "longtail",
    version,
    about = "Long-tailed classification pipeline"
)]
struct Cli {
    /// Worker threads per stage (0 = all cores). All stages currently run
    /// sequentially, which is the reference every parallel implementation
    /// must match, so this flag does not change any output.
    #[arg(long, global = true, env = "LONGTAIL_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Merge detector output and species metadata into a manifest.
    Ingest {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        metadata: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated reserved species names to exclude.
        #[arg(long, default_value = "empty,vehicle")]
        drop: String,
        /// Fail when rejects exceed this fraction of metadata entries.
        #[arg(long, default_value_t = 0.05)]
        reject_threshold: f64,
        /// Ignore detections below this confidence.
        #[arg(long, default_value_t = 0.0)]
        min_conf: f64,
    },
    /// Cap every class at a maximum sample count.
    Balance {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        cap: u64,
        #[arg(long)]
        seed: u64,
    },
    /// Deterministic stratified train/val/test split.
    Split {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Comma-separated train,val,test fractions.
        #[arg(long, default_value = "0.8,0.1,0.1")]
        fractions: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// JSON map of image_ref to train/val/test, overriding the seeded
        /// shuffle to reproduce an externally published split.
        #[arg(long)]
        assignments: Option<PathBuf>,
    },
    /// Head/tail/few-shot partition from a manifest.
    Partition {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        head_share: f64,
        #[arg(long, default_value_t = 20)]
        fewshot: u64,
    },
    /// Build a reduced-bias test set from an external manifest.
    ReducedBias {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        source_labels: PathBuf,
        #[arg(long)]
        external: PathBuf,
        #[arg(long)]
        external_labels: PathBuf,
        /// Comma-separated shared class names.
        #[arg(long)]
        shared: String,
        #[arg(long)]
        out: PathBuf,
        /// Overlap window in seconds at the same site.
        #[arg(long, default_value_t = 3600)]
        dt: i64,
    },
    /// Train a classifier from an experiment config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on a test manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Label map of the manifest; defaults to the checkpoint's own
        /// label space.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        partition: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Feature mode: vectors or tiny-image (uses the checkpoint's
        /// preprocess spec).
        #[arg(long, default_value = "vectors")]
        features: String,
        #[arg(long)]
        standardize: bool,
        #[arg(long)]
        image_base: Option<PathBuf>,
        /// JSON map translating manifest class names to checkpoint names.
        #[arg(long)]
        label_map: Option<PathBuf>,
    },
    /// Render a stored report as json, csv, or markdown.
    Report {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "md")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prediction distribution for one class of a stored report.
    Collapse {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        class: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify every analytic loss gradient against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
    /// Run the synthetic long-tailed benchmark grid and print the table.
    BenchSynthetic {
        /// Comma-separated seeds.
        #[arg(long, default_value = "0,1,2,3,4")]
        seeds: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = std::panic::catch_unwind(|| run(cli.command));
    match result {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(err)) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
        Err(_) => {
            eprintln!("internal error: unexpected panic");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> longtail::Result<()> {
    match command {
        Command::Ingest {
            detections,
            metadata,
            labels,
            out,
            drop,
            reject_threshold,
            min_conf,
        } => commands::ingest::run(
            &detections,
            &metadata,
            &labels,
            &out,
            &drop,
            reject_threshold,
            min_conf,
        ),
        Command::Balance {
            input,
            out,
            cap,
            seed,
        } => commands::data::balance(&input, &out, cap, seed),
        Command::Split {
            input,
            out_dir,
            fractions,
            seed,
            assignments,
        } => commands::data::split(&input, &out_dir, &fractions, seed, assignments.as_deref()),
        Command::Partition {
            input,
            labels,
            out,
            head_share,
            fewshot,
        } => commands::data::partition(&input, &labels, &out, head_share, fewshot),
        Command::ReducedBias {
            source,
            source_labels,
            external,
            external_labels,
            shared,
            out,
            dt,
        } => commands::data::reduced_bias(
            &source,
            &source_labels,
            &external,
            &external_labels,
            &shared,
            &out,
            dt,
        ),
        Command::Train { config } => commands::train::run(&config),
        Command::Eval {
            checkpoint,
            manifest,
            labels,
            partition,
            out,
            features,
            standardize,
            image_base,
            label_map,
        } => commands::eval::run(
            &checkpoint,
            &manifest,
            labels.as_deref(),
            &partition,
            &out,
            &features,
            standardize,
            image_base.as_deref(),
            label_map.as_deref(),
        ),
        Command::Report {
            report,
            format,
            out,
        } => commands::eval::report(&report, &format, out.as_deref()),
        Command::Collapse { report, class, out } => {
            commands::eval::collapse(&report, &class, out.as_deref())
        }
        Command::Gradcheck { seed, instances } => commands::check::gradcheck(seed, instances),
        Command::BenchSynthetic { seeds, out } => {
            commands::check::bench_synthetic(&seeds, out.as_deref())
        }
    }
}
