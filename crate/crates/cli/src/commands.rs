//! Command implementations behind the `fad` binary.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use fad_core::data::{dataset_from_meshes, generate_synthetic, shapes::ShapeFamily, Dataset};
use fad_core::losses::{FadAxis, FadVariant, KdLossConfig, LossWeights};
use fad_core::models::{count_params_flops, load_checkpoint, save_checkpoint, ModelConfig};
use fad_core::train::{
    distill, evaluate, train_teacher, LrSchedule, RunRecord, Teacher, TrainConfig, TrainOutcome,
};

use crate::runner::run_parallel;

/// Refuse to clobber existing outputs unless `--force` was given.
fn ensure_writable(paths: &[PathBuf], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    let existing: Vec<String> = paths
        .iter()
        .filter(|p| p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !existing.is_empty() {
        bail!(
            "refusing to overwrite existing outputs (pass --force):\n  {}",
            existing.join("\n  ")
        );
    }
    Ok(())
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    Dataset::load(dir).with_context(|| format!("loading dataset from {}", dir.display()))
}

fn model_config_from(path: Option<&PathBuf>, default: ModelConfig) -> Result<ModelConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading model config {}", p.display()))?;
            Ok(ModelConfig::parse(&text)
                .with_context(|| format!("parsing model config {}", p.display()))?)
        }
        None => Ok(default),
    }
}

/// Shared training knobs parsed by several subcommands.
#[derive(Debug, Clone)]
pub struct TrainFlags {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub temperature: f64,
    pub seeds: Vec<u64>,
    pub constant_lr: bool,
    pub no_augment: bool,
}

impl TrainFlags {
    fn to_config(&self, seed: u64, weights: LossWeights, variant: FadVariant, axis: FadAxis) -> Result<TrainConfig> {
        Ok(TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            schedule: if self.constant_lr {
                LrSchedule::Constant
            } else {
                LrSchedule::Cosine { final_lr: 1e-4 }
            },
            seed,
            weights,
            variant,
            fad_axis: axis,
            kd: KdLossConfig::new(self.temperature)?,
            augment: !self.no_augment,
            ..TrainConfig::default()
        })
    }
}

// ── gen-data ───────────────────────────────────────────────────────────

pub struct GenDataOpts {
    pub classes: Vec<String>,
    pub per_class: usize,
    pub mesh_dir: Option<PathBuf>,
    pub points: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub force: bool,
}

pub fn cmd_gen_data(opts: &GenDataOpts) -> Result<()> {
    let outputs: Vec<PathBuf> = ["train.pcd", "test.pcd", "manifest.txt"]
        .iter()
        .map(|f| opts.out.join(f))
        .collect();
    ensure_writable(&outputs, opts.force)?;

    let dataset = match &opts.mesh_dir {
        Some(dir) => {
            let (ds, failures) = dataset_from_meshes(dir, opts.points, opts.seed)?;
            for (path, err) in &failures {
                eprintln!("skipped {}: {err}", path.display());
            }
            ds
        }
        None => {
            let families: Vec<ShapeFamily> = opts
                .classes
                .iter()
                .map(|name| name.parse())
                .collect::<fad_core::Result<_>>()?;
            generate_synthetic(&families, opts.per_class, opts.points, opts.seed)?
        }
    };
    dataset.save(&opts.out)?;
    let manifest = dataset.manifest();
    println!("dataset written to {}", opts.out.display());
    println!("{:<16} {:>6} {:>6}", "class", "train", "test");
    for (i, name) in manifest.class_names.iter().enumerate() {
        println!(
            "{:<16} {:>6} {:>6}",
            name, manifest.train_counts[i], manifest.test_counts[i]
        );
    }
    println!(
        "{:<16} {:>6} {:>6}",
        "total",
        dataset.train.len(),
        dataset.test.len()
    );
    Ok(())
}

// ── train-teacher ──────────────────────────────────────────────────────

pub struct TrainTeacherOpts {
    pub dataset: PathBuf,
    pub teacher_config: Option<PathBuf>,
    pub flags: TrainFlags,
    pub out: PathBuf,
    pub force: bool,
}

pub fn cmd_train_teacher(opts: &TrainTeacherOpts) -> Result<()> {
    let data = load_dataset(&opts.dataset)?;
    let config = model_config_from(
        opts.teacher_config.as_ref(),
        ModelConfig::default_teacher(data.classes()),
    )?;
    let mut outputs = Vec::new();
    for seed in &opts.flags.seeds {
        outputs.push(opts.out.join(format!("teacher_s{seed}.fadc")));
        outputs.push(opts.out.join(format!("teacher_s{seed}.csv")));
    }
    ensure_writable(&outputs, opts.force)?;
    std::fs::create_dir_all(&opts.out)?;

    let jobs: Vec<u64> = opts.flags.seeds.clone();
    let results = run_parallel(&jobs, |&seed| -> std::result::Result<(u64, f64, f64), String> {
        let cfg = opts
            .flags
            .to_config(seed, LossWeights::ce_only(), FadVariant::Mean, FadAxis::Dims)
            .map_err(|e| e.to_string())?;
        let outcome = train_teacher(&config, &cfg, &data).map_err(|e| e.to_string())?;
        persist_run(
            &opts.out,
            &format!("teacher_s{seed}"),
            &outcome,
        )
        .map_err(|e| e.to_string())?;
        let last = outcome.record.epochs.last().unwrap();
        Ok((seed, outcome.record.best_test_acc, last.train_acc))
    });

    let mut failures = Vec::new();
    for (seed, result) in jobs.iter().zip(results) {
        match result {
            Ok((seed, best, train_acc)) => println!(
                "teacher seed {seed}: best test acc {best:.4}, final train acc {train_acc:.4}"
            ),
            Err(e) => failures.push(format!("seed {seed}: {e}")),
        }
    }
    fail_if_any("train-teacher", failures)
}

fn persist_run(dir: &Path, stem: &str, outcome: &TrainOutcome) -> Result<()> {
    save_checkpoint(&dir.join(format!("{stem}.fadc")), &outcome.config, &outcome.best_params)?;
    std::fs::write(dir.join(format!("{stem}.csv")), outcome.record.to_csv())?;
    Ok(())
}

fn fail_if_any(what: &str, failures: Vec<String>) -> Result<()> {
    if failures.is_empty() {
        Ok(())
    } else {
        bail!("{what}: {} run(s) failed:\n  {}", failures.len(), failures.join("\n  "))
    }
}

// ── distill ────────────────────────────────────────────────────────────

pub struct DistillOpts {
    pub dataset: PathBuf,
    pub teacher_ckpt: PathBuf,
    pub student_config: Option<PathBuf>,
    pub variants: Vec<FadVariant>,
    pub weights: (f64, f64, f64),
    pub fad_axis: FadAxis,
    pub flags: TrainFlags,
    pub out: PathBuf,
    pub force: bool,
}

struct RunRow {
    label: String,
    seed: u64,
    best_test_acc: f64,
    final_test_acc: f64,
    best_epoch: usize,
}

fn run_student_sweep(
    data: &Dataset,
    teacher_config: &ModelConfig,
    teacher_params: &fad_core::models::ModelParams,
    student_config: &ModelConfig,
    jobs: &[(String, LossWeights, FadVariant, u64)],
    flags: &TrainFlags,
    fad_axis: FadAxis,
    out: &Path,
) -> Result<Vec<RunRow>> {
    std::fs::create_dir_all(out)?;
    let results = run_parallel(jobs, |(label, weights, variant, seed)| {
        let run = || -> Result<RunRow> {
            let cfg = flags.to_config(*seed, *weights, *variant, fad_axis)?;
            let outcome = distill(
                student_config,
                Teacher {
                    config: teacher_config,
                    params: teacher_params,
                },
                &cfg,
                data,
            )?;
            persist_run(out, &format!("student_{label}_s{seed}"), &outcome)?;
            std::fs::write(
                out.join(format!("run_{label}_s{seed}.csv")),
                outcome.record.to_csv(),
            )?;
            let last = outcome.record.epochs.last().unwrap();
            Ok(RunRow {
                label: label.clone(),
                seed: *seed,
                best_test_acc: outcome.record.best_test_acc,
                final_test_acc: last.test_acc,
                best_epoch: outcome.record.best_epoch,
            })
        };
        run().map_err(|e| format!("{label} seed {seed}: {e}"))
    });
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for result in results {
        match result {
            Ok(row) => rows.push(row),
            Err(e) => failures.push(e),
        }
    }
    fail_if_any("student sweep", failures)?;
    Ok(rows)
}

pub fn cmd_distill(opts: &DistillOpts) -> Result<()> {
    let data = load_dataset(&opts.dataset)?;
    let (teacher_config, teacher_params) = load_checkpoint(&opts.teacher_ckpt)
        .with_context(|| format!("loading teacher checkpoint {}", opts.teacher_ckpt.display()))?;
    let student_config = model_config_from(
        opts.student_config.as_ref(),
        ModelConfig::default_student(data.classes()),
    )?;
    let (alpha, beta, gamma) = opts.weights;
    let weights = LossWeights::new(alpha, beta, gamma)
        .map_err(|e| anyhow!("{e} (check --alpha/--beta/--gamma)"))?;
    if opts.variants.is_empty() {
        bail!("no FAD variant given (use --variant max,min,mean)");
    }

    let mut jobs = Vec::new();
    let mut outputs = Vec::new();
    for variant in &opts.variants {
        for &seed in &opts.flags.seeds {
            jobs.push((variant.name().to_string(), weights, *variant, seed));
            outputs.push(opts.out.join(format!("student_{variant}_s{seed}.fadc")));
            outputs.push(opts.out.join(format!("run_{variant}_s{seed}.csv")));
        }
    }
    outputs.push(opts.out.join("summary.csv"));
    ensure_writable(&outputs, opts.force)?;

    let rows = run_student_sweep(
        &data,
        &teacher_config,
        &teacher_params,
        &student_config,
        &jobs,
        &opts.flags,
        opts.fad_axis,
        &opts.out,
    )?;
    let teacher_acc = evaluate(&teacher_config, &teacher_params, &data.test, opts.flags.batch_size)?
        .accuracy;

    let mut summary = String::from(
        "variant,seed,best_test_acc,final_test_acc,best_epoch,teacher_test_acc,transfer_gap\n",
    );
    println!(
        "{:<8} {:>6} {:>10} {:>10} {:>8}",
        "variant", "seed", "best_acc", "gap", "epoch"
    );
    for row in &rows {
        let gap = teacher_acc - row.best_test_acc;
        summary.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.label, row.seed, row.best_test_acc, row.final_test_acc, row.best_epoch, teacher_acc, gap
        ));
        println!(
            "{:<8} {:>6} {:>10.4} {:>10.4} {:>8}",
            row.label, row.seed, row.best_test_acc, gap, row.best_epoch
        );
    }
    std::fs::write(opts.out.join("summary.csv"), summary)?;
    println!("teacher test acc {teacher_acc:.4}; outputs in {}", opts.out.display());
    Ok(())
}

// ── ablate ─────────────────────────────────────────────────────────────

pub struct AblateOpts {
    pub dataset: PathBuf,
    pub teacher_ckpt: PathBuf,
    pub student_config: Option<PathBuf>,
    pub weights: (f64, f64, f64),
    pub fad_axis: FadAxis,
    pub flags: TrainFlags,
    pub out: PathBuf,
    pub force: bool,
}

/// The four-row protocol: norm KD (α=0, β and γ renormalized) against the
/// three FAD variants, each over the full seed list, plus the teacher
/// reference row.
pub fn cmd_ablate(opts: &AblateOpts) -> Result<()> {
    let data = load_dataset(&opts.dataset)?;
    let (teacher_config, teacher_params) = load_checkpoint(&opts.teacher_ckpt)
        .with_context(|| format!("loading teacher checkpoint {}", opts.teacher_ckpt.display()))?;
    let student_config = model_config_from(
        opts.student_config.as_ref(),
        ModelConfig::default_student(data.classes()),
    )?;
    let (alpha, beta, gamma) = opts.weights;
    let fad_weights = LossWeights::new(alpha, beta, gamma)
        .map_err(|e| anyhow!("{e} (check --alpha/--beta/--gamma)"))?;
    if beta + gamma <= 0.0 {
        bail!("ablation needs β+γ > 0 to form the norm-KD baseline");
    }
    let normkd_weights = LossWeights::norm_kd(beta / (beta + gamma), gamma / (beta + gamma))?;
    if opts.flags.seeds.len() < 2 {
        eprintln!(
            "warning: {} seed(s) — the reported std is degenerate",
            opts.flags.seeds.len()
        );
    }

    let methods: Vec<(String, LossWeights, FadVariant)> = vec![
        ("normkd".into(), normkd_weights, FadVariant::Mean),
        ("min".into(), fad_weights, FadVariant::Min),
        ("max".into(), fad_weights, FadVariant::Max),
        ("mean".into(), fad_weights, FadVariant::Mean),
    ];
    let mut jobs = Vec::new();
    let mut outputs = vec![opts.out.join("ablation.csv")];
    for (label, weights, variant) in &methods {
        for &seed in &opts.flags.seeds {
            jobs.push((label.clone(), *weights, *variant, seed));
            outputs.push(opts.out.join(format!("student_{label}_s{seed}.fadc")));
            outputs.push(opts.out.join(format!("run_{label}_s{seed}.csv")));
        }
        outputs.push(opts.out.join(format!("plot_{label}.csv")));
    }
    ensure_writable(&outputs, opts.force)?;

    let rows = run_student_sweep(
        &data,
        &teacher_config,
        &teacher_params,
        &student_config,
        &jobs,
        &opts.flags,
        opts.fad_axis,
        &opts.out,
    )?;
    let teacher_acc = evaluate(&teacher_config, &teacher_params, &data.test, opts.flags.batch_size)?
        .accuracy;

    // per-method aggregation, preserving protocol order
    struct MethodSummary {
        label: String,
        mean: f64,
        std: f64,
        mean_gap: f64,
    }
    let mut summaries = Vec::new();
    for (label, _, _) in &methods {
        let accs: Vec<f64> = rows
            .iter()
            .filter(|r| &r.label == label)
            .map(|r| r.best_test_acc)
            .collect();
        let n = accs.len() as f64;
        let mean = accs.iter().sum::<f64>() / n;
        let std = if accs.len() > 1 {
            (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        summaries.push(MethodSummary {
            label: label.clone(),
            mean,
            std,
            mean_gap: teacher_acc - mean,
        });
    }

    // per-method mean/std of the per-epoch test accuracy, for plotting
    for (label, _, _) in &methods {
        let records: Vec<RunRecord> = opts
            .flags
            .seeds
            .iter()
            .map(|seed| {
                let text =
                    std::fs::read_to_string(opts.out.join(format!("run_{label}_s{seed}.csv")))?;
                Ok(RunRecord::parse_csv(&text)?)
            })
            .collect::<Result<_>>()?;
        let epochs = records[0].epochs.len();
        let mut plot = String::from("epoch,test_acc_mean,test_acc_std\n");
        for e in 0..epochs {
            let accs: Vec<f64> = records.iter().map(|r| r.epochs[e].test_acc).collect();
            let n = accs.len() as f64;
            let mean = accs.iter().sum::<f64>() / n;
            let std = if accs.len() > 1 {
                (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            plot.push_str(&format!("{e},{mean},{std}\n"));
        }
        std::fs::write(opts.out.join(format!("plot_{label}.csv")), plot)?;
    }

    let mut csv = String::from("method,mean_test_acc,std_test_acc,mean_transfer_gap,seeds\n");
    csv.push_str(&format!("teacher,{teacher_acc},0,0,-\n"));
    for s in &summaries {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            s.label,
            s.mean,
            s.std,
            s.mean_gap,
            opts.flags.seeds.len()
        ));
    }
    std::fs::write(opts.out.join("ablation.csv"), csv)?;

    println!("{:<10} {:>10} {:>10} {:>10}", "method", "mean_acc", "std", "gap");
    println!("{:<10} {:>10.4} {:>10} {:>10}", "teacher", teacher_acc, "-", "-");
    for s in &summaries {
        println!(
            "{:<10} {:>10.4} {:>10.4} {:>10.4}",
            s.label, s.mean, s.std, s.mean_gap
        );
    }
    let mut ranked: Vec<&MethodSummary> = summaries.iter().collect();
    ranked.sort_by(|a, b| b.mean.partial_cmp(&a.mean).unwrap());
    println!(
        "ranking: {}",
        ranked
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{}. {}", i + 1, s.label))
            .collect::<Vec<_>>()
            .join("  ")
    );
    Ok(())
}

// ── report ─────────────────────────────────────────────────────────────

pub struct ReportOpts {
    pub teacher_config: Option<PathBuf>,
    pub student_config: Option<PathBuf>,
    pub points: usize,
    pub classes: usize,
}

pub fn cmd_report(opts: &ReportOpts) -> Result<()> {
    let teacher = model_config_from(
        opts.teacher_config.as_ref(),
        ModelConfig::default_teacher(opts.classes),
    )?;
    let student = model_config_from(
        opts.student_config.as_ref(),
        ModelConfig::default_student(opts.classes),
    )?;
    let (tp, tf) = count_params_flops(&teacher, opts.points);
    let (sp, sf) = count_params_flops(&student, opts.points);
    println!("{:<10} {:>12} {:>16}", "model", "params", "flops/sample");
    println!("{:<10} {:>12} {:>16}", "teacher", tp, tf);
    println!("{:<10} {:>12} {:>16}", "student", sp, sf);
    println!(
        "{:<10} {:>11.2}x {:>15.2}x",
        "ratio",
        tp as f64 / sp as f64,
        tf as f64 / sf as f64
    );
    Ok(())
}

// ── eval ───────────────────────────────────────────────────────────────

pub struct EvalOpts {
    pub ckpt: PathBuf,
    pub dataset: PathBuf,
    pub split: String,
    pub batch_size: usize,
}

pub fn cmd_eval(opts: &EvalOpts) -> Result<()> {
    let data = load_dataset(&opts.dataset)?;
    let (config, params) = load_checkpoint(&opts.ckpt)?;
    let split = match opts.split.as_str() {
        "train" => &data.train,
        "test" => &data.test,
        other => bail!("unknown split {other:?} (expected train or test)"),
    };
    let result = evaluate(&config, &params, split, opts.batch_size)?;
    println!(
        "accuracy: {:.4} ({}/{})",
        result.accuracy, result.correct, result.total
    );
    println!("{:<16} {:>8}", "class", "acc");
    for (i, acc) in result.per_class.iter().enumerate() {
        let name = data
            .class_names
            .get(i)
            .map(|s| s.as_str())
            .unwrap_or("?");
        println!("{:<16} {:>8.4}", name, acc);
    }
    println!("confusion (rows = true class):");
    for row in &result.confusion {
        println!(
            "  {}",
            row.iter().map(|c| format!("{c:>5}")).collect::<Vec<_>>().join(" ")
        );
    }
    Ok(())
}
