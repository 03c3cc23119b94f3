//! Training: SGD with momentum and weight decay, the epoch loop with
//! shuffling and translation augmentation, teacher pre-training, student
//! distillation, evaluation, and best-checkpoint tracking.

use rand::seq::SliceRandom;

use crate::data::{augment, Batch, Dataset, PointCloud};
use crate::error::{Error, Result};
use crate::losses::{
    ce_loss, fad_loss, joint_loss, kd_loss, FadAxis, FadVariant, KdLossConfig, LossWeights,
};
use crate::models::{
    apply_adapter, classify, encode, register, ModelConfig, ModelParams, ModelVars,
};
use crate::rng::{stream, PURPOSE_AUGMENT, PURPOSE_SHUFFLE};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// SGD with momentum 0.9 and weight decay 2e-4 (classical formulation:
/// decay folded into the gradient). Decay applies to weights only.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// One velocity buffer per parameter tensor, in `layers()` order
    /// (weight then bias per layer).
    velocities: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        let velocities = params
            .layers()
            .flat_map(|l| [vec![0.0; l.weight.numel()], vec![0.0; l.bias.numel()]])
            .collect();
        OptimizerState {
            learning_rate,
            momentum,
            weight_decay,
            velocities,
        }
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.learning_rate = lr;
    }
}

/// Gradients for every parameter tensor, in `layers()` order. `None` marks
/// a parameter the loss did not reach.
#[derive(Debug, Clone)]
pub struct GradSet {
    entries: Vec<Option<Vec<f64>>>,
}

impl GradSet {
    /// Pull gradients off a tape for one registered model.
    pub fn collect(tape: &Tape, vars: &ModelVars) -> GradSet {
        let mut entries = Vec::new();
        let layer_vars = vars
            .encoder
            .iter()
            .chain(vars.head.iter())
            .chain(vars.adapter.iter());
        for &(w, b) in layer_vars {
            entries.push(tape.grad(w).map(|g| g.to_vec()));
            entries.push(tape.grad(b).map(|g| g.to_vec()));
        }
        GradSet { entries }
    }

    /// A parameter the loss does not depend on has gradient exactly zero;
    /// materialize those zeros so the optimizer contract is satisfied.
    pub fn fill_missing_with_zeros(&mut self, params: &ModelParams) {
        let sizes: Vec<usize> = params
            .layers()
            .flat_map(|l| [l.weight.numel(), l.bias.numel()])
            .collect();
        for (entry, size) in self.entries.iter_mut().zip(sizes) {
            entry.get_or_insert_with(|| vec![0.0; size]);
        }
    }
}

/// One update: v ← m·v + (g + wd·p); p ← p − lr·v. Errors if any trainable
/// parameter is missing its gradient.
pub fn sgd_step(params: &mut ModelParams, grads: &GradSet, state: &mut OptimizerState) -> Result<()> {
    let n_tensors = params.layers().count() * 2;
    if grads.entries.len() != n_tensors {
        return Err(Error::Optimizer(format!(
            "gradient set has {} entries for {} parameter tensors",
            grads.entries.len(),
            n_tensors
        )));
    }
    let lr = state.learning_rate;
    let momentum = state.momentum;
    let decay = state.weight_decay;
    for (slot, layer) in params.layers_mut().enumerate() {
        for (tensor_idx, is_weight) in [(2 * slot, true), (2 * slot + 1, false)] {
            let tensor = if is_weight { &mut layer.weight } else { &mut layer.bias };
            let grad = grads.entries[tensor_idx].as_ref().ok_or_else(|| {
                Error::Optimizer(format!("missing gradient for trainable parameter {tensor_idx}"))
            })?;
            if grad.len() != tensor.numel() {
                return Err(Error::Optimizer(format!(
                    "gradient length {} does not match parameter length {}",
                    grad.len(),
                    tensor.numel()
                )));
            }
            let wd = if is_weight { decay } else { 0.0 };
            let velocity = &mut state.velocities[tensor_idx];
            for ((p, &g), v) in tensor.data_mut().iter_mut().zip(grad).zip(velocity.iter_mut()) {
                *v = momentum * *v + (g + wd * *p);
                *p -= lr * *v;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    /// Cosine decay from the initial rate down to `final_lr` over the run.
    Cosine { final_lr: f64 },
    Constant,
}

impl LrSchedule {
    pub fn at(&self, initial: f64, epoch: usize, total_epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => initial,
            LrSchedule::Cosine { final_lr } => {
                if total_epochs <= 1 {
                    return initial;
                }
                let t = epoch as f64 / (total_epochs - 1) as f64;
                final_lr + 0.5 * (initial - final_lr) * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

/// Full §3-style recipe. Defaults: 200 epochs, batch 32, lr 0.01 with
/// cosine decay to 1e-4, momentum 0.9, weight decay 2e-4, τ=4.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub weights: LossWeights,
    pub variant: FadVariant,
    pub fad_axis: FadAxis,
    pub kd: KdLossConfig,
    pub momentum: f64,
    pub weight_decay: f64,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 32,
            lr: 0.01,
            schedule: LrSchedule::Cosine { final_lr: 1e-4 },
            seed: 0,
            weights: LossWeights::default(),
            variant: FadVariant::Mean,
            fad_axis: FadAxis::default(),
            kd: KdLossConfig::default(),
            momentum: 0.9,
            weight_decay: 2e-4,
            augment: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub fad_loss: f64,
    pub kd_loss: f64,
    pub ce_loss: f64,
    pub total_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunRecord {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_test_acc: f64,
}

pub const RUN_CSV_HEADER: &str = "epoch,lr,L_FAD,L_KD,L_CE,L,train_acc,test_acc";

impl RunRecord {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(RUN_CSV_HEADER);
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                e.epoch, e.lr, e.fad_loss, e.kd_loss, e.ce_loss, e.total_loss, e.train_acc, e.test_acc
            ));
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<RunRecord> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == RUN_CSV_HEADER => {}
            other => {
                return Err(Error::Config(format!(
                    "bad run record header: {other:?}"
                )))
            }
        }
        let mut epochs = Vec::new();
        for line in lines {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 8 {
                return Err(Error::Config(format!("bad run record row: {line:?}")));
            }
            let f = |i: usize| -> Result<f64> {
                cols[i]
                    .parse()
                    .map_err(|_| Error::Config(format!("bad number {:?}", cols[i])))
            };
            epochs.push(EpochRecord {
                epoch: cols[0]
                    .parse()
                    .map_err(|_| Error::Config(format!("bad epoch {:?}", cols[0])))?,
                lr: f(1)?,
                fad_loss: f(2)?,
                kd_loss: f(3)?,
                ce_loss: f(4)?,
                total_loss: f(5)?,
                train_acc: f(6)?,
                test_acc: f(7)?,
            });
        }
        let (best_epoch, best_test_acc) = epochs
            .iter()
            .fold((0, f64::NEG_INFINITY), |(be, ba), e| {
                if e.test_acc > ba {
                    (e.epoch, e.test_acc)
                } else {
                    (be, ba)
                }
            });
        Ok(RunRecord {
            epochs,
            best_epoch,
            best_test_acc,
        })
    }
}

/// A finished run: final parameters, the best-by-test-accuracy snapshot,
/// and the per-epoch record.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub config: ModelConfig,
    pub final_params: ModelParams,
    pub best_params: ModelParams,
    pub record: RunRecord,
}

#[derive(Debug, Clone)]
pub struct EvalResult {
    pub accuracy: f64,
    pub per_class: Vec<f64>,
    /// confusion[true_class][predicted_class]
    pub confusion: Vec<Vec<u64>>,
    pub correct: usize,
    pub total: usize,
}

fn argmax_rows(data: &[f64], cols: usize) -> Vec<usize> {
    data.chunks_exact(cols)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

fn forward_logits(
    config: &ModelConfig,
    params: &ModelParams,
    coords: Tensor,
) -> Result<Vec<usize>> {
    let mut tape = Tape::new();
    let vars = register(&mut tape, params, false);
    let x = tape.leaf(coords);
    let f = encode(&mut tape, &vars.encoder, x)?;
    let logits = classify(&mut tape, &vars.head, config.head.pool, f)?;
    let classes = tape.shape(logits)[1];
    Ok(argmax_rows(tape.data(logits), classes))
}

/// Argmax-of-logits accuracy over a split; no augmentation.
pub fn evaluate(
    config: &ModelConfig,
    params: &ModelParams,
    split: &[PointCloud],
    batch_size: usize,
) -> Result<EvalResult> {
    if split.is_empty() {
        return Err(Error::Dataset("cannot evaluate an empty split".into()));
    }
    let classes = config.head.classes;
    let mut confusion = vec![vec![0u64; classes]; classes];
    let mut correct = 0usize;
    for chunk in split.chunks(batch_size.max(1)) {
        let refs: Vec<&PointCloud> = chunk.iter().collect();
        let batch = Batch::from_clouds(&refs);
        let preds = forward_logits(config, params, batch.coords)?;
        for (pred, pc) in preds.iter().zip(chunk) {
            if pc.label >= classes {
                return Err(Error::LabelOutOfRange {
                    label: pc.label,
                    classes,
                });
            }
            confusion[pc.label][*pred] += 1;
            if pc.label == *pred {
                correct += 1;
            }
        }
    }
    let per_class = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                0.0
            } else {
                row[c] as f64 / total as f64
            }
        })
        .collect();
    Ok(EvalResult {
        accuracy: correct as f64 / split.len() as f64,
        per_class,
        confusion,
        correct,
        total: split.len(),
    })
}

/// Teacher handle for distillation: parameters stay immutable throughout.
pub struct Teacher<'a> {
    pub config: &'a ModelConfig,
    pub params: &'a ModelParams,
}

/// Train the teacher with pure cross-entropy (α=β=0, γ=1).
pub fn train_teacher(
    config: &ModelConfig,
    train_cfg: &TrainConfig,
    data: &Dataset,
) -> Result<TrainOutcome> {
    if data.classes() < 2 {
        return Err(Error::Dataset(format!(
            "teacher training needs at least 2 classes, dataset has {}",
            data.classes()
        )));
    }
    let mut cfg = train_cfg.clone();
    cfg.weights = LossWeights::ce_only();
    run_training(config, None, &cfg, data)
}

/// Train a student against a frozen teacher with the joint objective.
pub fn distill(
    student_config: &ModelConfig,
    teacher: Teacher<'_>,
    train_cfg: &TrainConfig,
    data: &Dataset,
) -> Result<TrainOutcome> {
    if teacher.config.head.classes != data.classes() {
        return Err(Error::Config(format!(
            "teacher has {} classes, dataset has {}",
            teacher.config.head.classes,
            data.classes()
        )));
    }
    let student_fad_dim = student_config
        .adapter_dim
        .unwrap_or(student_config.encoder.feature_dim);
    if train_cfg.weights.alpha() > 0.0 && student_fad_dim != teacher.config.encoder.feature_dim {
        return Err(Error::Config(format!(
            "feature dimension mismatch: student produces {} (after adapter, if any) but teacher \
             produces {}; set an adapter_dim matching the teacher",
            student_fad_dim, teacher.config.encoder.feature_dim
        )));
    }
    run_training(student_config, Some(teacher), train_cfg, data)
}

fn run_training(
    model_config: &ModelConfig,
    teacher: Option<Teacher<'_>>,
    cfg: &TrainConfig,
    data: &Dataset,
) -> Result<TrainOutcome> {
    model_config.validate()?;
    if model_config.head.classes != data.classes() {
        return Err(Error::Config(format!(
            "model has {} classes, dataset has {}",
            model_config.head.classes,
            data.classes()
        )));
    }
    if cfg.epochs == 0 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    if data.train.is_empty() || data.test.is_empty() {
        return Err(Error::Dataset("training needs non-empty train and test splits".into()));
    }
    let needs_teacher = cfg.weights.alpha() > 0.0 || cfg.weights.beta() > 0.0;
    if needs_teacher && teacher.is_none() {
        return Err(Error::Config(
            "FAD/KD weights are positive but no teacher was provided".into(),
        ));
    }

    let mut params = crate::models::init_params(model_config, cfg.seed);
    let mut opt = OptimizerState::new(&params, cfg.lr, cfg.momentum, cfg.weight_decay);
    let n_train = data.train.len();
    let mut record = RunRecord::default();
    let mut best_params = params.clone();
    let mut best_test_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;

    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.at(cfg.lr, epoch, cfg.epochs);
        opt.set_learning_rate(lr);
        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut stream(cfg.seed, PURPOSE_SHUFFLE, epoch as u64));

        let mut sums = [0.0f64; 4]; // fad, kd, ce, total
        let mut steps = 0usize;
        let mut train_correct = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let clouds: Vec<PointCloud> = chunk
                .iter()
                .map(|&idx| {
                    if cfg.augment {
                        let mut rng =
                            stream(cfg.seed, PURPOSE_AUGMENT, (epoch * n_train + idx) as u64);
                        augment(&data.train[idx], &mut rng)
                    } else {
                        data.train[idx].clone()
                    }
                })
                .collect();
            let refs: Vec<&PointCloud> = clouds.iter().collect();
            let batch = Batch::from_clouds(&refs);

            // frozen teacher forward on the same augmented batch
            let teacher_out: Option<(Tensor, Option<Tensor>)> = match (&teacher, needs_teacher) {
                (Some(t), true) => {
                    let mut ttape = Tape::new();
                    let tvars = register(&mut ttape, t.params, false);
                    let x = ttape.leaf(batch.coords.clone());
                    let f = encode(&mut ttape, &tvars.encoder, x)?;
                    let logits = if cfg.weights.beta() > 0.0 {
                        Some(
                            classify(&mut ttape, &tvars.head, t.config.head.pool, f)
                                .map(|l| ttape.value(l).clone())?,
                        )
                    } else {
                        None
                    };
                    Some((ttape.value(f).clone(), logits))
                }
                _ => None,
            };

            let mut tape = Tape::new();
            let vars = register(&mut tape, &params, true);
            let x = tape.leaf(batch.coords.clone());
            let f_s = encode(&mut tape, &vars.encoder, x)?;
            let logits = classify(&mut tape, &vars.head, model_config.head.pool, f_s)?;

            let fad = if cfg.weights.alpha() > 0.0 {
                let (f_t, _) = teacher_out.as_ref().unwrap();
                let f_for_fad = match vars.adapter {
                    Some(adapter) => apply_adapter(&mut tape, adapter, f_s)?,
                    None => f_s,
                };
                Some(fad_loss(&mut tape, f_t, f_for_fad, cfg.variant, cfg.fad_axis)?)
            } else {
                None
            };
            let kd = if cfg.weights.beta() > 0.0 {
                let (_, l_t) = teacher_out.as_ref().unwrap();
                Some(kd_loss(&mut tape, logits, l_t.as_ref().unwrap(), &cfg.kd)?)
            } else {
                None
            };
            let ce = if cfg.weights.gamma() > 0.0 {
                Some(ce_loss(&mut tape, logits, &batch.labels)?)
            } else {
                None
            };
            let joint = joint_loss(&mut tape, fad, kd, ce, &cfg.weights)?;

            let fad_v = fad.map_or(0.0, |v| tape.value(v).item());
            let kd_v = kd.map_or(0.0, |v| tape.value(v).item());
            let ce_v = ce.map_or(0.0, |v| tape.value(v).item());
            let joint_v = tape.value(joint).item();
            debug_assert!(
                (joint_v
                    - (cfg.weights.alpha() * fad_v
                        + cfg.weights.beta() * kd_v
                        + cfg.weights.gamma() * ce_v))
                    .abs()
                    <= 1e-12 * joint_v.abs().max(1.0),
                "joint loss must decompose into its weighted components"
            );

            let preds = argmax_rows(tape.data(logits), model_config.head.classes);
            train_correct += preds
                .iter()
                .zip(&batch.labels)
                .filter(|(p, l)| p == l)
                .count();

            tape.backward(joint)?;
            let mut grads = GradSet::collect(&tape, &vars);
            grads.fill_missing_with_zeros(&params);
            sgd_step(&mut params, &grads, &mut opt)?;

            sums[0] += fad_v;
            sums[1] += kd_v;
            sums[2] += ce_v;
            sums[3] += joint_v;
            steps += 1;
        }

        let test = evaluate(model_config, &params, &data.test, cfg.batch_size)?;
        let row = EpochRecord {
            epoch,
            lr,
            fad_loss: sums[0] / steps as f64,
            kd_loss: sums[1] / steps as f64,
            ce_loss: sums[2] / steps as f64,
            total_loss: sums[3] / steps as f64,
            train_acc: train_correct as f64 / n_train as f64,
            test_acc: test.accuracy,
        };
        if row.test_acc > best_test_acc {
            best_test_acc = row.test_acc;
            best_epoch = epoch;
            best_params = params.clone();
        }
        record.epochs.push(row);
    }
    record.best_epoch = best_epoch;
    record.best_test_acc = best_test_acc;
    Ok(TrainOutcome {
        config: model_config.clone(),
        final_params: params,
        best_params,
        record,
    })
}
