//! The distillation loss family: cross-entropy on hard labels,
//! temperature-scaled KD on soft labels, the three FAD feature distances
//! (max, min, mean), and the weighted joint objective.
//!
//! Teacher outputs enter every loss as gradient-stopped constants; only the
//! student side participates in backpropagation.

use crate::error::{Error, Result};
use crate::tape::{ReduceKind, Tape, Var};
use crate::tensor::Tensor;

/// Joint-objective weights (α, β, γ) for FAD, KD, and CE.
/// Must be nonnegative and sum to 1 within 1e-9.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    alpha: f64,
    beta: f64,
    gamma: f64,
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let ok = alpha >= 0.0
            && beta >= 0.0
            && gamma >= 0.0
            && (alpha + beta + gamma - 1.0).abs() <= 1e-9;
        if !ok {
            return Err(Error::BadWeights { alpha, beta, gamma });
        }
        Ok(LossWeights { alpha, beta, gamma })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// CE-only training, e.g. for the teacher.
    pub fn ce_only() -> Self {
        LossWeights {
            alpha: 0.0,
            beta: 0.0,
            gamma: 1.0,
        }
    }

    /// The norm-KD baseline: no feature term, β+γ=1.
    pub fn norm_kd(beta: f64, gamma: f64) -> Result<Self> {
        let w = Self::new(0.0, beta, gamma)?;
        Ok(w)
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0 / 3.0,
            beta: 1.0 / 3.0,
            gamma: 1.0 / 3.0,
        }
    }
}

/// Temperature configuration for the KD loss. `tau_squared` opts into the
/// classical τ² gradient-magnitude correction, off by default.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KdLossConfig {
    pub temperature: f64,
    pub tau_squared: bool,
}

impl KdLossConfig {
    pub fn new(temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::Config(format!(
                "KD temperature must be positive, got {temperature}"
            )));
        }
        Ok(KdLossConfig {
            temperature,
            tau_squared: false,
        })
    }
}

impl Default for KdLossConfig {
    fn default() -> Self {
        KdLossConfig {
            temperature: 4.0,
            tau_squared: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FadVariant {
    Max,
    Min,
    Mean,
}

impl FadVariant {
    pub const ALL: [FadVariant; 3] = [FadVariant::Max, FadVariant::Min, FadVariant::Mean];

    pub fn name(&self) -> &'static str {
        match self {
            FadVariant::Max => "max",
            FadVariant::Min => "min",
            FadVariant::Mean => "mean",
        }
    }
}

impl std::str::FromStr for FadVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(FadVariant::Max),
            "min" => Ok(FadVariant::Min),
            "mean" => Ok(FadVariant::Mean),
            other => Err(Error::Config(format!(
                "unknown FAD variant {other:?} (expected max, min, or mean)"
            ))),
        }
    }
}

impl std::fmt::Display for FadVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Which axis the max/min feature statistics reduce over: the feature
/// dimension per point (default) or the point axis per dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FadAxis {
    #[default]
    Dims,
    Points,
}

impl std::str::FromStr for FadAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dims" => Ok(FadAxis::Dims),
            "points" => Ok(FadAxis::Points),
            other => Err(Error::Config(format!(
                "unknown FAD axis {other:?} (expected dims or points)"
            ))),
        }
    }
}

impl std::fmt::Display for FadAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FadAxis::Dims => "dims",
            FadAxis::Points => "points",
        })
    }
}

/// Row-wise temperature softmax over the last axis, computed with
/// max-subtraction so huge logits cannot overflow.
pub fn softmax(logits: &Tensor, temperature: f64) -> Tensor {
    let shape = logits.shape();
    let cols = *shape.last().expect("softmax needs rank >= 1");
    let mut out = vec![0.0; logits.numel()];
    for (row_in, row_out) in logits.data().chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let m = row_in.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        for (o, &v) in row_out.iter_mut().zip(row_in) {
            *o = ((v - m) / temperature).exp();
            sum += *o;
        }
        for o in row_out.iter_mut() {
            *o /= sum;
        }
    }
    Tensor::new(out, shape).unwrap()
}

/// log softmax over the last axis of a 2-D tensor, on the tape.
/// Built from primitives; the max-subtraction shift cancels analytically, so
/// autodiff through it yields the exact softmax gradient.
fn log_softmax(tape: &mut Tape, logits: Var) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    let rows = shape[0];
    let m = tape.reduce(logits, 1, ReduceKind::Max)?;
    let m_col = tape.reshape(m, &[rows, 1])?;
    let shifted = tape.sub(logits, m_col)?;
    let e = tape.exp(shifted);
    let sums = tape.reduce(e, 1, ReduceKind::Sum)?;
    let lse = tape.log(sums)?;
    let lse_col = tape.reshape(lse, &[rows, 1])?;
    tape.sub(shifted, lse_col)
}

/// Mean over the batch of −log softmax(logits)[label].
pub fn ce_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "ce_loss",
            lhs: shape,
            rhs: vec![labels.len(), 0],
        });
    }
    let (rows, classes) = (shape[0], shape[1]);
    let mut onehot = vec![0.0; rows * classes];
    for (i, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        onehot[i * classes + label] = 1.0;
    }
    let logp = log_softmax(tape, logits)?;
    let mask = tape.constant(onehot, &[rows, classes])?;
    let picked = tape.mul(logp, mask)?;
    let per_sample = tape.reduce(picked, 1, ReduceKind::Sum)?;
    let mean = tape.reduce(per_sample, 0, ReduceKind::Mean)?;
    Ok(tape.neg(mean))
}

/// Mean over the batch of the cross-entropy between the teacher's and the
/// student's temperature-softened distributions. The teacher is a constant;
/// the gradient seen by the student logits is (σ(l_S/τ) − σ(l_T/τ))/τ
/// averaged over the batch (times τ² when `tau_squared` is set).
pub fn kd_loss(
    tape: &mut Tape,
    student_logits: Var,
    teacher_logits: &Tensor,
    config: &KdLossConfig,
) -> Result<Var> {
    let shape = tape.shape(student_logits).to_vec();
    if shape != teacher_logits.shape() || shape.len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "kd_loss",
            lhs: shape,
            rhs: teacher_logits.shape().to_vec(),
        });
    }
    let tau = config.temperature;
    let soft_targets = softmax(teacher_logits, tau);
    let q = tape.leaf(soft_targets);
    let scaled = tape.scale(student_logits, 1.0 / tau);
    let logp = log_softmax(tape, scaled)?;
    let prod = tape.mul(logp, q)?;
    let per_sample = tape.reduce(prod, 1, ReduceKind::Sum)?;
    let mean = tape.reduce(per_sample, 0, ReduceKind::Mean)?;
    let loss = tape.neg(mean);
    Ok(if config.tau_squared {
        tape.scale(loss, tau * tau)
    } else {
        loss
    })
}

/// FAD feature distance between a constant teacher map and the student map,
/// both `[B, N, D]`.
///
/// - `Max`/`Min`: per sample, Σ over the kept axis of |stat(f_T) − stat(f_S)|
///   where the statistic reduces over `axis` (feature dims per point by
///   default), then mean over the batch.
/// - `Mean`: per sample, the mean over all N·D entries of |f_T − f_S|, then
///   mean over the batch.
pub fn fad_loss(
    tape: &mut Tape,
    teacher_features: &Tensor,
    student_features: Var,
    variant: FadVariant,
    axis: FadAxis,
) -> Result<Var> {
    let shape = tape.shape(student_features).to_vec();
    if shape != teacher_features.shape() || shape.len() != 3 {
        return Err(Error::ShapeMismatch {
            op: "fad_loss",
            lhs: shape,
            rhs: teacher_features.shape().to_vec(),
        });
    }
    let teacher = tape.leaf(teacher_features.clone());
    let per_sample = match variant {
        FadVariant::Mean => {
            let diff = tape.sub(teacher, student_features)?;
            let dist = tape.abs(diff);
            let over_dims = tape.reduce(dist, 2, ReduceKind::Mean)?;
            tape.reduce(over_dims, 1, ReduceKind::Mean)?
        }
        FadVariant::Max | FadVariant::Min => {
            let kind = if variant == FadVariant::Max {
                ReduceKind::Max
            } else {
                ReduceKind::Min
            };
            let reduce_axis = match axis {
                FadAxis::Dims => 2,
                FadAxis::Points => 1,
            };
            let t_stat = tape.reduce(teacher, reduce_axis, kind)?;
            let s_stat = tape.reduce(student_features, reduce_axis, kind)?;
            let diff = tape.sub(t_stat, s_stat)?;
            let dist = tape.abs(diff);
            tape.reduce(dist, 1, ReduceKind::Sum)?
        }
    };
    tape.reduce(per_sample, 0, ReduceKind::Mean)
}

/// α·L_FAD + β·L_KD + γ·L_CE. Zero-weight components may be omitted; a
/// positive-weight component must be supplied.
pub fn joint_loss(
    tape: &mut Tape,
    fad: Option<Var>,
    kd: Option<Var>,
    ce: Option<Var>,
    weights: &LossWeights,
) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (weight, term, name) in [
        (weights.alpha, fad, "FAD"),
        (weights.beta, kd, "KD"),
        (weights.gamma, ce, "CE"),
    ] {
        if weight == 0.0 {
            continue;
        }
        let term = term.ok_or_else(|| {
            Error::Config(format!("joint loss: {name} has weight {weight} but no term"))
        })?;
        if tape.value(term).numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: tape.shape(term).to_vec(),
            });
        }
        let scaled = tape.scale(term, weight);
        acc = Some(match acc {
            Some(prev) => tape.add(prev, scaled)?,
            None => scaled,
        });
    }
    acc.ok_or_else(|| Error::Config("joint loss has no active terms".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{fd_gradient, max_rel_error};

    fn grad_leaf(tape: &mut Tape, data: &[f64], shape: &[usize]) -> Var {
        tape.leaf(Tensor::new(data.to_vec(), shape).unwrap().with_grad())
    }

    #[test]
    fn softmax_symmetry_and_closed_form() {
        let p = softmax(&Tensor::new(vec![0.0, 0.0], &[1, 2]).unwrap(), 3.7);
        assert!((p.data()[0] - 0.5).abs() < 1e-15);
        let p = softmax(&Tensor::new(vec![3.0f64.ln(), 0.0], &[1, 2]).unwrap(), 1.0);
        assert!((p.data()[0] - 0.75).abs() < 1e-12);
        assert!((p.data()[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let p = softmax(&Tensor::new(vec![1000.0, 0.0], &[1, 2]).unwrap(), 1.0);
        assert!(p.is_finite());
        assert!((p.data()[0] - 1.0).abs() < 1e-12);
        assert!(p.data()[1] >= 0.0 && p.data()[1] < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let vals: Vec<f64> = (0..15).map(|i| ((i * 31 + 7) % 13) as f64 - 6.0).collect();
        for tau in [1.0, 4.0, 10.0] {
            let p = softmax(&Tensor::new(vals.clone(), &[3, 5]).unwrap(), tau);
            for row in p.data().chunks_exact(5) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ce_uniform_case_is_ln2() {
        let mut tape = Tape::new();
        let logits = grad_leaf(&mut tape, &[0.0, 0.0], &[1, 2]);
        let loss = ce_loss(&mut tape, logits, &[0]).unwrap();
        assert!((tape.value(loss).item() - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ce_confident_correct_is_tiny() {
        let mut tape = Tape::new();
        let logits = grad_leaf(&mut tape, &[10.0, -10.0], &[1, 2]);
        let loss = ce_loss(&mut tape, logits, &[0]).unwrap();
        assert!(tape.value(loss).item() < 1e-8);
    }

    #[test]
    fn ce_matches_straight_line_oracle() {
        let vals: Vec<f64> = (0..12).map(|i| ((i * 17 + 5) % 23) as f64 / 4.0 - 2.0).collect();
        let labels = [2usize, 0, 1, 2];
        let mut tape = Tape::new();
        let logits = grad_leaf(&mut tape, &vals, &[4, 3]);
        let loss = ce_loss(&mut tape, logits, &labels).unwrap();
        // oracle: direct -log p_y per row
        let mut expect = 0.0;
        for (row, &y) in vals.chunks_exact(3).zip(&labels) {
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            let p = (row[y] - m).exp() / z;
            expect += -p.ln() / 4.0;
        }
        assert!((tape.value(loss).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn ce_rejects_bad_label() {
        let mut tape = Tape::new();
        let logits = grad_leaf(&mut tape, &[0.0, 0.0], &[1, 2]);
        assert!(matches!(
            ce_loss(&mut tape, logits, &[2]),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn kd_equal_logits_gives_entropy_and_zero_gradient() {
        let vals = vec![0.7, -1.2, 0.4, 2.0, 0.0, -0.5];
        let teacher = Tensor::new(vals.clone(), &[2, 3]).unwrap();
        let cfg = KdLossConfig::new(4.0).unwrap();
        let mut tape = Tape::new();
        let student = grad_leaf(&mut tape, &vals, &[2, 3]);
        let loss = kd_loss(&mut tape, student, &teacher, &cfg).unwrap();
        // value: mean entropy of the softened teacher distribution
        let q = softmax(&teacher, 4.0);
        let entropy: f64 = q
            .data()
            .chunks_exact(3)
            .map(|row| -row.iter().map(|p| p * p.ln()).sum::<f64>())
            .sum::<f64>()
            / 2.0;
        assert!((tape.value(loss).item() - entropy).abs() < 1e-12);
        tape.backward(loss).unwrap();
        for g in tape.grad(student).unwrap() {
            assert!(g.abs() < 1e-12, "student gradient {g} should vanish");
        }
    }

    #[test]
    fn kd_closed_form_ln2() {
        let teacher = Tensor::new(vec![3.0f64.ln(), 0.0], &[1, 2]).unwrap();
        let cfg = KdLossConfig::new(1.0).unwrap();
        let mut tape = Tape::new();
        let student = grad_leaf(&mut tape, &[0.0, 0.0], &[1, 2]);
        let loss = kd_loss(&mut tape, student, &teacher, &cfg).unwrap();
        assert!((tape.value(loss).item() - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn kd_gradient_matches_analytic_formula_and_fd() {
        let sv: Vec<f64> = (0..8).map(|i| ((i * 13 + 3) % 19) as f64 / 5.0 - 1.8).collect();
        let tv: Vec<f64> = (0..8).map(|i| ((i * 7 + 11) % 17) as f64 / 4.0 - 2.0).collect();
        let teacher = Tensor::new(tv, &[2, 4]).unwrap();
        for tau in [1.0, 4.0] {
            let cfg = KdLossConfig::new(tau).unwrap();
            let mut tape = Tape::new();
            let student = grad_leaf(&mut tape, &sv, &[2, 4]);
            let loss = kd_loss(&mut tape, student, &teacher, &cfg).unwrap();
            tape.backward(loss).unwrap();
            let analytic = tape.grad(student).unwrap().to_vec();

            // closed form: (p - q)/τ / B
            let p = softmax(&Tensor::new(sv.clone(), &[2, 4]).unwrap(), tau);
            let q = softmax(&teacher, tau);
            for i in 0..8 {
                let formula = (p.data()[i] - q.data()[i]) / tau / 2.0;
                assert!((analytic[i] - formula).abs() < 1e-12);
            }

            // finite differences
            let fd = fd_gradient(
                |x| {
                    let mut t = Tape::new();
                    let s = t.leaf(Tensor::new(x.to_vec(), &[2, 4]).unwrap().with_grad());
                    let l = kd_loss(&mut t, s, &teacher, &cfg).unwrap();
                    t.value(l).item()
                },
                &sv,
                1e-5,
            );
            assert!(max_rel_error(&analytic, &fd, 1e-6) < 1e-6);
        }
    }

    #[test]
    fn fad_worked_example() {
        let teacher = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[1, 2, 2]).unwrap();
        for (variant, expect) in [
            (FadVariant::Max, 6.0),
            (FadVariant::Min, 4.0),
            (FadVariant::Mean, 2.5),
        ] {
            let mut tape = Tape::new();
            let student = grad_leaf(&mut tape, &[0.0; 4], &[1, 2, 2]);
            let loss = fad_loss(&mut tape, &teacher, student, variant, FadAxis::Dims).unwrap();
            assert_eq!(tape.value(loss).item(), expect, "{variant}");
        }
    }

    #[test]
    fn fad_identity_is_zero() {
        let vals: Vec<f64> = (0..24).map(|i| (i as f64 * 0.83).sin()).collect();
        let teacher = Tensor::new(vals.clone(), &[2, 3, 4]).unwrap();
        for variant in FadVariant::ALL {
            let mut tape = Tape::new();
            let student = grad_leaf(&mut tape, &vals, &[2, 3, 4]);
            let loss = fad_loss(&mut tape, &teacher, student, variant, FadAxis::Dims).unwrap();
            assert_eq!(tape.value(loss).item(), 0.0);
        }
    }

    #[test]
    fn fad_positive_homogeneity() {
        let tv: Vec<f64> = (0..12).map(|i| ((i * 11 + 2) % 9) as f64 - 4.0).collect();
        let sv: Vec<f64> = (0..12).map(|i| ((i * 5 + 1) % 8) as f64 - 3.0).collect();
        let c = 3.5;
        for variant in FadVariant::ALL {
            let eval = |scale: f64| {
                let t = Tensor::new(tv.iter().map(|v| v * scale).collect(), &[1, 3, 4]).unwrap();
                let mut tape = Tape::new();
                let s = tape
                    .constant(sv.iter().map(|v| v * scale).collect(), &[1, 3, 4])
                    .unwrap();
                let l = fad_loss(&mut tape, &t, s, variant, FadAxis::Dims).unwrap();
                tape.value(l).item()
            };
            let base = eval(1.0);
            let scaled = eval(c);
            assert!(
                (scaled - c * base).abs() < 1e-12 * scaled.abs().max(1.0),
                "{variant}: {scaled} vs {}",
                c * base
            );
        }
    }

    #[test]
    fn fad_axis_toggle_changes_reduction() {
        // [1, 2, 3]: dims-reading reduces rows, points-reading reduces columns
        let tv = vec![5.0, 1.0, 0.0, 2.0, 3.0, 4.0];
        let teacher = Tensor::new(tv, &[1, 2, 3]).unwrap();
        let mut tape = Tape::new();
        let student = tape.constant(vec![0.0; 6], &[1, 2, 3]).unwrap();
        let dims = fad_loss(&mut tape, &teacher, student, FadVariant::Max, FadAxis::Dims).unwrap();
        // per point maxes: 5, 4 → 9
        assert_eq!(tape.value(dims).item(), 9.0);
        let mut tape = Tape::new();
        let student = tape.constant(vec![0.0; 6], &[1, 2, 3]).unwrap();
        let pts = fad_loss(&mut tape, &teacher, student, FadVariant::Max, FadAxis::Points).unwrap();
        // per dim maxes: 5, 3, 4 → 12
        assert_eq!(tape.value(pts).item(), 12.0);
    }

    #[test]
    fn fad_shape_mismatch_rejected() {
        let teacher = Tensor::new(vec![0.0; 8], &[1, 2, 4]).unwrap();
        let mut tape = Tape::new();
        let student = grad_leaf(&mut tape, &[0.0; 6], &[1, 2, 3]);
        assert!(fad_loss(&mut tape, &teacher, student, FadVariant::Mean, FadAxis::Dims).is_err());
    }

    #[test]
    fn joint_degenerate_weights_equal_ce_exactly() {
        let mut tape = Tape::new();
        let logits = grad_leaf(&mut tape, &[0.4, -0.3, 1.1, 0.0], &[2, 2]);
        let ce = ce_loss(&mut tape, logits, &[1, 0]).unwrap();
        let joint = joint_loss(&mut tape, None, None, Some(ce), &LossWeights::ce_only()).unwrap();
        assert_eq!(tape.value(joint).item().to_bits(), tape.value(ce).item().to_bits());
    }

    #[test]
    fn joint_weighted_average_arithmetic() {
        let w = LossWeights::new(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0).unwrap();
        let mut tape = Tape::new();
        let a = tape.constant(vec![3.0], &[]).unwrap();
        let b = tape.constant(vec![6.0], &[]).unwrap();
        let c = tape.constant(vec![9.0], &[]).unwrap();
        let joint = joint_loss(&mut tape, Some(a), Some(b), Some(c), &w).unwrap();
        assert!((tape.value(joint).item() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn joint_gradient_is_weighted_sum_of_component_gradients() {
        let sv: Vec<f64> = (0..6).map(|i| ((i * 29 + 3) % 11) as f64 / 3.0 - 1.5).collect();
        let tv: Vec<f64> = (0..6).map(|i| ((i * 19 + 7) % 13) as f64 / 4.0 - 1.4).collect();
        let teacher = Tensor::new(tv, &[2, 3]).unwrap();
        let labels = [0usize, 2];
        let cfg = KdLossConfig::default();
        let w = LossWeights::new(0.0, 0.6, 0.4).unwrap();

        let grad_of = |beta_on: bool, gamma_on: bool| -> Vec<f64> {
            let weights = if beta_on && gamma_on {
                w
            } else if beta_on {
                LossWeights::new(0.0, 1.0, 0.0).unwrap()
            } else {
                LossWeights::new(0.0, 0.0, 1.0).unwrap()
            };
            let mut tape = Tape::new();
            let s = tape.leaf(Tensor::new(sv.clone(), &[2, 3]).unwrap().with_grad());
            let kd = kd_loss(&mut tape, s, &teacher, &cfg).unwrap();
            let ce = ce_loss(&mut tape, s, &labels).unwrap();
            let j = joint_loss(&mut tape, None, Some(kd), Some(ce), &weights).unwrap();
            tape.backward(j).unwrap();
            tape.grad(s).unwrap().to_vec()
        };
        let combined = grad_of(true, true);
        let kd_only = grad_of(true, false);
        let ce_only = grad_of(false, true);
        for i in 0..6 {
            let expect = 0.6 * kd_only[i] + 0.4 * ce_only[i];
            assert!((combined[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_constructor_enforces_simplex() {
        assert!(LossWeights::new(0.5, 0.5, 0.0).is_ok());
        assert!(LossWeights::new(0.333, 0.333, 0.334).is_ok());
        assert!(LossWeights::new(0.5, 0.5, 0.1).is_err());
        assert!(LossWeights::new(-0.2, 0.6, 0.6).is_err());
    }

    #[test]
    fn shift_invariance_of_softmax_ce_kd() {
        let vals: Vec<f64> = (0..8).map(|i| ((i * 23 + 1) % 15) as f64 / 3.0 - 2.0).collect();
        let shifted: Vec<f64> = vals
            .chunks_exact(4)
            .enumerate()
            .flat_map(|(r, row)| {
                let c = 10.0 * (r as f64 + 1.0);
                row.iter().map(move |v| v + c)
            })
            .collect();
        let labels = [1usize, 3];
        let base_t = Tensor::new(vals.clone(), &[2, 4]).unwrap();
        let shift_t = Tensor::new(shifted.clone(), &[2, 4]).unwrap();
        for tau in [1.0, 4.0] {
            let (p, ps) = (softmax(&base_t, tau), softmax(&shift_t, tau));
            for (a, b) in p.data().iter().zip(ps.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let eval = |v: &[f64]| {
            let mut tape = Tape::new();
            let s = tape.leaf(Tensor::new(v.to_vec(), &[2, 4]).unwrap().with_grad());
            let ce = ce_loss(&mut tape, s, &labels).unwrap();
            let kd = kd_loss(&mut tape, s, &base_t, &KdLossConfig::default()).unwrap();
            (tape.value(ce).item(), tape.value(kd).item())
        };
        let (ce0, _) = eval(&vals);
        let (ce1, _) = eval(&shifted);
        assert!((ce0 - ce1).abs() < 1e-12);
        // shifting the student logits leaves the KD loss invariant too
        let kd_of = |v: &[f64]| eval(v).1;
        assert!((kd_of(&vals) - kd_of(&shifted)).abs() < 1e-12);
    }
}
