//! `fad` — dataset generation, teacher training, student distillation,
//! ablation sweeps, and model reports for point-cloud classification.
//!
//! Set `FAD_THREADS` to cap how many (variant, seed) runs execute in
//! parallel; it defaults to the machine's available parallelism.

mod commands;
mod runner;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::*;
use fad_core::losses::{FadAxis, FadVariant};

#[derive(Parser)]
#[command(name = "fad", version, about = "Point-cloud knowledge distillation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SharedTrainArgs {
    /// Training epochs
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    /// Samples per optimizer step
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Initial learning rate (cosine-decayed to 1e-4 unless --constant-lr)
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    /// KD softmax temperature
    #[arg(long, default_value_t = 4.0)]
    temperature: f64,
    /// Comma-separated seed list
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    /// Hold the learning rate constant instead of cosine decay
    #[arg(long)]
    constant_lr: bool,
    /// Disable train-time random-translation augmentation
    #[arg(long)]
    no_augment: bool,
}

impl SharedTrainArgs {
    fn flags(&self) -> TrainFlags {
        TrainFlags {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            temperature: self.temperature,
            seeds: self.seeds.clone(),
            constant_lr: self.constant_lr,
            no_augment: self.no_augment,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset or ingest a directory of OFF meshes
    GenData {
        /// Comma-separated shape families (sphere, cube, cylinder, torus, plane)
        #[arg(long, value_delimiter = ',', default_value = "sphere,cube,cylinder,torus")]
        classes: Vec<String>,
        /// Samples per class (synthetic source)
        #[arg(long, default_value_t = 125)]
        per_class: usize,
        /// Ingest OFF meshes from this directory instead of generating shapes
        #[arg(long)]
        mesh_dir: Option<PathBuf>,
        /// Points per sample
        #[arg(long, default_value_t = 1024)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Overwrite existing outputs
        #[arg(long)]
        force: bool,
    },
    /// Train a teacher with plain cross-entropy
    TrainTeacher {
        /// Dataset directory (from gen-data)
        #[arg(long)]
        dataset: PathBuf,
        /// Teacher model config file (defaults to the shipped teacher)
        #[arg(long)]
        teacher_config: Option<PathBuf>,
        #[command(flatten)]
        train: SharedTrainArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Distill a student from a trained teacher
    Distill {
        #[arg(long)]
        dataset: PathBuf,
        /// Teacher checkpoint (.fadc)
        #[arg(long)]
        teacher_ckpt: PathBuf,
        /// Student model config file (defaults to the shipped student)
        #[arg(long)]
        student_config: Option<PathBuf>,
        /// FAD variants to run (comma-separated: max, min, mean)
        #[arg(long, value_delimiter = ',', default_value = "mean")]
        variant: Vec<FadVariantArg>,
        /// Weight of the FAD term
        #[arg(long, default_value_t = 1.0 / 3.0)]
        alpha: f64,
        /// Weight of the KD term
        #[arg(long, default_value_t = 1.0 / 3.0)]
        beta: f64,
        /// Weight of the CE term
        #[arg(long, default_value_t = 1.0 / 3.0)]
        gamma: f64,
        /// Axis the max/min feature statistics reduce over
        #[arg(long, value_parser = parse_fad_axis, default_value = "dims")]
        fad_axis: FadAxis,
        #[command(flatten)]
        train: SharedTrainArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Run the four-row ablation (norm KD vs FAD min/max/mean)
    Ablate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        teacher_ckpt: PathBuf,
        #[arg(long)]
        student_config: Option<PathBuf>,
        /// FAD-row weight of the FAD term
        #[arg(long, default_value_t = 1.0 / 3.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0 / 3.0)]
        beta: f64,
        #[arg(long, default_value_t = 1.0 / 3.0)]
        gamma: f64,
        #[arg(long, value_parser = parse_fad_axis, default_value = "dims")]
        fad_axis: FadAxis,
        #[command(flatten)]
        train: SharedTrainArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Print parameter counts, FLOPs per sample, and the compression ratio
    Report {
        #[arg(long)]
        teacher_config: Option<PathBuf>,
        #[arg(long)]
        student_config: Option<PathBuf>,
        /// Points per sample for the FLOP column
        #[arg(long, default_value_t = 1024)]
        points: usize,
        /// Class count for the shipped default configs
        #[arg(long, default_value_t = 4)]
        classes: usize,
    },
    /// Evaluate a checkpoint on one dataset split
    Eval {
        /// Checkpoint (.fadc)
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Which split to score
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
    },
}

/// clap-friendly wrapper so --variant accepts comma-separated names.
#[derive(Clone, Copy)]
struct FadVariantArg(FadVariant);

impl std::str::FromStr for FadVariantArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.parse::<FadVariant>()
            .map(FadVariantArg)
            .map_err(|e| e.to_string())
    }
}

fn parse_fad_axis(s: &str) -> Result<FadAxis, String> {
    s.parse::<FadAxis>().map_err(|e| e.to_string())
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData {
            classes,
            per_class,
            mesh_dir,
            points,
            seed,
            out,
            force,
        } => cmd_gen_data(&GenDataOpts {
            classes,
            per_class,
            mesh_dir,
            points,
            seed,
            out,
            force,
        }),
        Command::TrainTeacher {
            dataset,
            teacher_config,
            train,
            out,
            force,
        } => cmd_train_teacher(&TrainTeacherOpts {
            dataset,
            teacher_config,
            flags: train.flags(),
            out,
            force,
        }),
        Command::Distill {
            dataset,
            teacher_ckpt,
            student_config,
            variant,
            alpha,
            beta,
            gamma,
            fad_axis,
            train,
            out,
            force,
        } => cmd_distill(&DistillOpts {
            dataset,
            teacher_ckpt,
            student_config,
            variants: variant.iter().map(|v| v.0).collect(),
            weights: (alpha, beta, gamma),
            fad_axis,
            flags: train.flags(),
            out,
            force,
        }),
        Command::Ablate {
            dataset,
            teacher_ckpt,
            student_config,
            alpha,
            beta,
            gamma,
            fad_axis,
            train,
            out,
            force,
        } => cmd_ablate(&AblateOpts {
            dataset,
            teacher_ckpt,
            student_config,
            weights: (alpha, beta, gamma),
            fad_axis,
            flags: train.flags(),
            out,
            force,
        }),
        Command::Report {
            teacher_config,
            student_config,
            points,
            classes,
        } => cmd_report(&ReportOpts {
            teacher_config,
            student_config,
            points,
            classes,
        }),
        Command::Eval {
            ckpt,
            dataset,
            split,
            batch_size,
        } => cmd_eval(&EvalOpts {
            ckpt,
            dataset,
            split,
            batch_size,
        }),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
