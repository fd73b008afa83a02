//! `rtkg`: ingest -> sample -> split -> train -> eval -> export.

mod commands;
mod config;
mod data;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rtkg::eval::{QueryKind, RerankMode, Slot};
use rtkg::kg::SplitMode;
use rtkg::ModelKind;

use crate::commands::EvalMode;
use crate::config::{parse_triple, RunConfig};

#[derive(Parser)]
#[command(name = "rtkg", version, about = "Temporal knowledge-graph embeddings with relative time context")]
struct Cli {
    /// TOML run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract tuples from newline-delimited JSON event files.
    Ingest {
        /// Event files (plain or gzip).
        #[arg(long, num_args = 1.., required = true)]
        events: Vec<PathBuf>,
        /// Rule table file (default: built-in table).
        #[arg(long)]
        rules: Option<String>,
        /// Keep every relation, not just the default subset.
        #[arg(long)]
        all_relations: bool,
        /// Day zero, YYYY-MM-DD (default: earliest event day).
        #[arg(long)]
        epoch: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Degree-prioritised snowball sample of a graph directory.
    SampleSnowball {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        sample_size: Option<usize>,
        #[arg(long)]
        growth_size: Option<usize>,
        #[arg(long)]
        initial_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Union of the most popular repository neighbourhoods.
    SampleTemporal {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        w_size: Option<f64>,
        #[arg(long)]
        w_span: Option<f64>,
        #[arg(long)]
        sample_size: Option<usize>,
    },
    /// Train/validation/test split of a graph directory.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_split_mode)]
        mode: Option<SplitMode>,
        /// Train,validation,test fractions.
        #[arg(long, value_parser = parse_triple::<f64>)]
        ratios: Option<[f64; 3]>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Size and degree statistics of a graph or split directory.
    Stats {
        #[arg(long)]
        data: PathBuf,
        /// Output TSV (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model on a split directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        hp: Hyper,
        /// Train on train and validation, keep the final parameters.
        #[arg(long)]
        train_on_validation: bool,
        /// Keep the final parameters without validating.
        #[arg(long)]
        no_selection: bool,
    },
    /// Evaluate a checkpoint on the test part of a split directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        mode: EvalMode,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        slot: Option<Slot>,
        #[arg(long)]
        rerank: Option<RerankMode>,
    },
    /// Write |W_P| of a relative-time checkpoint as a labelled TSV matrix.
    ExportImportance {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every combination of the [grid] lists and keep the best.
    Grid {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        hp: Hyper,
    },
}

/// Overrides shared by `train` and `grid`.
#[derive(Args)]
struct Hyper {
    #[arg(long)]
    model: Option<ModelKind>,
    /// d_s,d_t,d_r.
    #[arg(long, value_parser = parse_triple::<usize>)]
    dims: Option<[usize; 3]>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    validation_every: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Query kind used for validation.
    #[arg(long)]
    selection_kind: Option<QueryKind>,
}

fn parse_split_mode(s: &str) -> Result<SplitMode, String> {
    match s {
        "interpolated" | "random" => Ok(SplitMode::Interpolated),
        "extrapolated" | "temporal" => Ok(SplitMode::Extrapolated),
        other => Err(format!("unknown split mode `{other}` (expected interpolated or extrapolated)")),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Hyper {
    fn apply(self, cfg: &mut RunConfig) {
        set(&mut cfg.model.kind, self.model);
        if let Some([ds, dt, dr]) = self.dims {
            cfg.model.static_dim = ds;
            cfg.model.temporal_dim = dt;
            cfg.model.relative_dim = dr;
        }
        set(&mut cfg.train.total_steps, self.steps);
        set(&mut cfg.train.learning_rate, self.learning_rate);
        set(&mut cfg.train.batch_size, self.batch_size);
        set(&mut cfg.train.dropout, self.dropout);
        set(&mut cfg.train.validation_every, self.validation_every);
        set(&mut cfg.eval.kind, self.selection_kind);
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
            .context("configuring worker threads")?;
    }
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest { events, rules, all_relations, epoch, out } => {
            if rules.is_some() {
                cfg.ingest.rules = rules;
            }
            cfg.ingest.all_relations |= all_relations;
            if epoch.is_some() {
                cfg.ingest.epoch = epoch;
            }
            commands::ingest(&cfg.resolve()?, &events, &out)
        }
        Command::SampleSnowball { data, out, sample_size, growth_size, initial_size, seed } => {
            set(&mut cfg.snowball.sample_size, sample_size);
            set(&mut cfg.snowball.growth_size, growth_size);
            set(&mut cfg.snowball.initial_size, initial_size);
            if seed.is_some() {
                cfg.seed = seed;
            }
            commands::sample_snowball(&cfg.resolve()?, &data, &out)
        }
        Command::SampleTemporal { data, out, w_size, w_span, sample_size } => {
            set(&mut cfg.temporal.w_size, w_size);
            set(&mut cfg.temporal.w_span, w_span);
            set(&mut cfg.temporal.sample_size, sample_size);
            commands::sample_temporal(&cfg.resolve()?, &data, &out)
        }
        Command::Split { data, out, mode, ratios, seed } => {
            set(&mut cfg.split.mode, mode);
            set(&mut cfg.split.ratios, ratios);
            if seed.is_some() {
                cfg.seed = seed;
            }
            commands::split(&cfg.resolve()?, &data, &out)
        }
        Command::Stats { data, out } => commands::stats_cmd(&data, out.as_deref()),
        Command::Train { data, out, hp, train_on_validation, no_selection } => {
            hp.apply(&mut cfg);
            cfg.selection.train_on_validation |= train_on_validation;
            cfg.selection.disabled |= no_selection;
            commands::train(&cfg.resolve()?, &data, &out)
        }
        Command::Eval { checkpoint, data, mode, out, slot, rerank } => {
            set(&mut cfg.eval.slot, slot);
            set(&mut cfg.eval.rerank, rerank);
            commands::eval(&cfg.resolve()?, &checkpoint, &data, mode, &out)
        }
        Command::ExportImportance { checkpoint, out } => commands::export_importance(&checkpoint, &out),
        Command::Grid { data, out, hp } => {
            hp.apply(&mut cfg);
            commands::grid(&cfg.resolve()?, &data, &out)
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
