mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use segclass_core::synthetic::BlobSpec;
use segclass_core::{Error, Result};
use serde::Deserialize;

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "segclass", version, about = "Segment-level feature selection, classification and fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Score features with the ANOVA F-test and export the ranking.
    Select(Common),
    /// Fit standardize, select and classifier on the training partition.
    Train(Common),
    /// Predict labels and class scores with a saved model.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Fuse probability files by weighted soft voting.
    Ensemble(Common),
    /// Grow the training set with confident predictions on unlabeled segments.
    PseudoLabel(Common),
    /// Score predictions against reference labels.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Write a seeded Gaussian-blob dataset.
    GenSynthetic {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
        #[arg(long)]
        dims: Option<usize>,
        #[arg(long)]
        informative: Option<usize>,
        #[arg(long)]
        separation: Option<f64>,
    },
}

fn load_run(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

#[derive(Deserialize, Default)]
struct SyntheticFile {
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
    #[serde(default)]
    synthetic: SyntheticSection,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct SyntheticSection {
    classes: Option<usize>,
    train: Option<usize>,
    test: Option<usize>,
    dims: Option<usize>,
    informative: Option<usize>,
    separation: Option<f64>,
}

fn load_synthetic(common: &Common, flags: SyntheticSection) -> Result<(BlobSpec, PathBuf)> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", common.config.display())))?;
    let file: SyntheticFile =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", common.config.display())))?;
    let base = common.config.parent().unwrap_or(Path::new(""));
    let s = file.synthetic;
    let d = BlobSpec::default();
    let spec = BlobSpec {
        n_classes: flags.classes.or(s.classes).unwrap_or(d.n_classes),
        n_train: flags.train.or(s.train).unwrap_or(d.n_train),
        n_test: flags.test.or(s.test).unwrap_or(d.n_test),
        dims: flags.dims.or(s.dims).unwrap_or(d.dims),
        informative: flags.informative.or(s.informative).unwrap_or(d.informative),
        separation: flags.separation.or(s.separation).unwrap_or(d.separation),
        seed: common.seed.or(file.seed).unwrap_or(d.seed),
    };
    if spec.n_classes < 2 {
        return Err(Error::Config("synthetic data needs at least 2 classes".into()));
    }
    let dir = match (&common.out, file.output_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) if o.is_absolute() => o,
        (None, Some(o)) => base.join(o),
        (None, None) => base.join("out"),
    };
    Ok((spec, dir))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Select(c) => commands::run_select(&load_run(&c)?),
        Command::Train(c) => commands::run_train(&load_run(&c)?),
        Command::Predict {
            common,
            model,
            features,
        } => commands::run_predict(&load_run(&common)?, model.as_deref(), features.as_deref()),
        Command::Ensemble(c) => commands::run_ensemble(&load_run(&c)?),
        Command::PseudoLabel(c) => commands::run_pseudo_label(&load_run(&c)?),
        Command::Evaluate {
            common,
            predictions,
            labels,
        } => {
            let text = commands::run_evaluate(&load_run(&common)?, predictions.as_deref(), labels.as_deref())?;
            print!("{text}");
            Ok(())
        }
        Command::GenSynthetic {
            common,
            classes,
            train,
            test,
            dims,
            informative,
            separation,
        } => {
            let flags = SyntheticSection {
                classes,
                train,
                test,
                dims,
                informative,
                separation,
            };
            let (spec, dir) = load_synthetic(&common, flags)?;
            commands::run_gen_synthetic(&spec, &dir)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
