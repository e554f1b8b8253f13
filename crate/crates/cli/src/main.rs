//! `splatscene`: train, render, update and evaluate splat reconstructions.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use splatscene_core::Error;

#[derive(Parser, Debug)]
#[command(name = "splatscene", version, about = "Object-centric Gaussian splat reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a scene from a dataset manifest.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// TOML training configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render one of the scene's cameras to PNG files.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        camera: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Remove objects, settle the rest and refine against a post-change view.
    Update {
        #[arg(long)]
        scene: PathBuf,
        /// Object ids to remove, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        remove: Vec<usize>,
        /// Name of the post-change view in `--dataset`.
        #[arg(long)]
        post_view: String,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// TOML update configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Keep surviving objects where they are.
        #[arg(long)]
        no_simulate: bool,
    },
    /// Depth metrics of the scene against ground-truth depth images.
    Eval {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Directory of 16-bit millimeter PNGs named after the dataset views.
        #[arg(long)]
        gt_depth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic box dataset with ground-truth depth.
    Synth {
        #[arg(long, value_enum)]
        scene: Preset,
        #[arg(long)]
        out: PathBuf,
        /// Also write post-change data with these objects removed.
        #[arg(long, value_delimiter = ',')]
        remove: Vec<usize>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    TwoObjects,
    StackedPair,
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Train {
            dataset,
            out,
            config,
            seed,
        } => commands::train(&dataset, &out, config.as_deref(), seed),
        Command::Render { scene, camera, out } => commands::render(&scene, &camera, &out),
        Command::Update {
            scene,
            remove,
            post_view,
            dataset,
            out,
            config,
            no_simulate,
        } => commands::update(&commands::UpdateArgs {
            scene: &scene,
            remove: &remove,
            post_view: &post_view,
            dataset: &dataset,
            out: &out,
            config: config.as_deref(),
            simulate: !no_simulate,
        }),
        Command::Eval {
            scene,
            dataset,
            gt_depth,
            out,
        } => commands::eval(&scene, &dataset, &gt_depth, &out),
        Command::Synth { scene, out, remove } => commands::synth(
            match scene {
                Preset::TwoObjects => commands::SynthPreset::TwoObjects,
                Preset::StackedPair => commands::SynthPreset::StackedPair,
            },
            &out,
            &remove,
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_DATA
    }
}
