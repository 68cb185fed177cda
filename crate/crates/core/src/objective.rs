//! Heated-up softmax cross-entropy and its epoch-indexed temperature schedule.
//!
//! The loss uses `p = softmax(α·z)`; `α` is the inverse temperature
//! (`α = 1/T`). Its logit gradient is `α·(p − onehot(y))`, so a larger `α`
//! amplifies the push on examples the model currently gets wrong.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ndtensor::{softmax_scaled, Graph, Tensor, TensorError, Var};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("temperature alpha must be positive, got {0}")]
    NonPositiveAlpha(f64),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("{logits} logit rows but {labels} labels")]
    LengthMismatch { logits: usize, labels: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid temperature schedule: {0}")]
    InvalidSchedule(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Piecewise-constant `α` over epochs. Each phase runs from its start epoch
/// (inclusive) to the next phase's start (exclusive); the last is open-ended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(usize, f64)>", into = "Vec<(usize, f64)>")]
pub struct TemperatureSchedule {
    phases: Vec<(usize, f64)>,
}

impl Default for TemperatureSchedule {
    /// α = 4 for epochs 0–9, 1 for 10–19, 0.5 from 20 on.
    fn default() -> Self {
        Self {
            phases: vec![(0, 4.0), (10, 1.0), (20, 0.5)],
        }
    }
}

impl TemperatureSchedule {
    pub fn new(phases: Vec<(usize, f64)>) -> Result<Self, ObjectiveError> {
        match phases.first() {
            None => return Err(ObjectiveError::InvalidSchedule("no phases".into())),
            Some(&(s, _)) if s != 0 => {
                return Err(ObjectiveError::InvalidSchedule(format!(
                    "first phase starts at epoch {s}, not 0"
                )))
            }
            _ => {}
        }
        if phases.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(ObjectiveError::InvalidSchedule(
                "phase starts must be strictly increasing".into(),
            ));
        }
        if let Some(&(_, a)) = phases.iter().find(|(_, a)| !(*a > 0.0 && a.is_finite())) {
            return Err(ObjectiveError::InvalidSchedule(format!("alpha {a} must be positive")));
        }
        Ok(Self { phases })
    }

    pub fn constant(alpha: f64) -> Result<Self, ObjectiveError> {
        Self::new(vec![(0, alpha)])
    }

    /// `(start, end, alpha)`, `end == None` for the open last phase.
    pub fn phases(&self) -> impl Iterator<Item = (usize, Option<usize>, f64)> + '_ {
        self.phases.iter().enumerate().map(|(i, &(s, a))| {
            (s, self.phases.get(i + 1).map(|p| p.0), a)
        })
    }

    pub fn alpha_at(&self, epoch: usize) -> f64 {
        self.phases
            .iter()
            .rev()
            .find(|(s, _)| *s <= epoch)
            .map(|&(_, a)| a)
            .expect("first phase starts at 0")
    }
}

impl TryFrom<Vec<(usize, f64)>> for TemperatureSchedule {
    type Error = ObjectiveError;
    fn try_from(v: Vec<(usize, f64)>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<TemperatureSchedule> for Vec<(usize, f64)> {
    fn from(s: TemperatureSchedule) -> Self {
        s.phases
    }
}

pub fn schedule_alpha(schedule: &TemperatureSchedule, epoch: usize) -> f64 {
    schedule.alpha_at(epoch)
}

/// Loss, probabilities, and logit gradient for one example.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue<T> {
    pub loss: T,
    pub probs: Vec<T>,
    pub grad: Vec<T>,
}

pub fn heated_ce_loss<T: Scalar>(logits: &[T], label: usize, alpha: T) -> Result<LossValue<T>, ObjectiveError> {
    if !(alpha > T::zero()) {
        return Err(ObjectiveError::NonPositiveAlpha(alpha.as_f64()));
    }
    if label >= logits.len() {
        return Err(ObjectiveError::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let probs = softmax_scaled(&Tensor::vector(logits), alpha)?.into_values();
    let max = logits
        .iter()
        .fold(T::neg_infinity(), |m, &v| if v > m { v } else { m });
    let lse = logits
        .iter()
        .map(|&v| (alpha * (v - max)).exp())
        .sum::<T>()
        .ln();
    let loss = lse - alpha * (logits[label] - max);
    let grad = probs
        .iter()
        .enumerate()
        .map(|(j, &p)| alpha * (p - if j == label { T::one() } else { T::zero() }))
        .collect();
    Ok(LossValue { loss, probs, grad })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchLoss<T> {
    pub loss: T,
    /// `[B × C]`, already scaled by `1/B`.
    pub grad: Tensor<T>,
}

/// Mean of per-example heated losses over a `[B × C]` logit matrix.
pub fn batch_loss<T: Scalar>(logits: &Tensor<T>, labels: &[usize], alpha: T) -> Result<BatchLoss<T>, ObjectiveError> {
    let (rows, cols) = logits.dims2();
    if labels.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    if rows != labels.len() {
        return Err(ObjectiveError::LengthMismatch {
            logits: rows,
            labels: labels.len(),
        });
    }
    let b = T::lit(rows as f64);
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(rows * cols);
    for (i, &y) in labels.iter().enumerate() {
        let lv = heated_ce_loss(logits.row(i), y, alpha)?;
        total += lv.loss;
        grad.extend(lv.grad.into_iter().map(|g| g / b));
    }
    Ok(BatchLoss {
        loss: total / b,
        grad: Tensor::new(logits.shape(), grad)?,
    })
}

/// Records the mean heated loss of `logits` (`[B × C]`) on the graph,
/// composed from differentiable primitives.
pub fn heated_ce_graph<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    labels: &[usize],
    alpha: T,
) -> Result<Var, ObjectiveError> {
    if labels.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    let (rows, _) = g.dims(logits);
    if rows != labels.len() {
        return Err(ObjectiveError::LengthMismatch {
            logits: rows,
            labels: labels.len(),
        });
    }
    let logp = g.log_softmax_scaled(logits, alpha).map_err(|e| match e {
        TensorError::NonPositiveAlpha(a) => ObjectiveError::NonPositiveAlpha(a),
        e => e.into(),
    })?;
    let picked = g.pick(logp, labels)?;
    let mean = g.mean(picked);
    Ok(g.neg(mean))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_values() {
        let s = TemperatureSchedule::default();
        assert_eq!(schedule_alpha(&s, 0), 4.0);
        assert_eq!(schedule_alpha(&s, 9), 4.0);
        assert_eq!(schedule_alpha(&s, 10), 1.0);
        assert_eq!(schedule_alpha(&s, 19), 1.0);
        assert_eq!(schedule_alpha(&s, 25), 0.5);
        assert_eq!(schedule_alpha(&s, 10_000), 0.5);
        let phases: Vec<_> = s.phases().collect();
        assert_eq!(phases, vec![(0, Some(10), 4.0), (10, Some(20), 1.0), (20, None, 0.5)]);
    }

    #[test]
    fn schedule_validation() {
        assert!(TemperatureSchedule::new(vec![]).is_err());
        assert!(TemperatureSchedule::new(vec![(1, 1.0)]).is_err());
        assert!(TemperatureSchedule::new(vec![(0, 1.0), (0, 2.0)]).is_err());
        assert!(TemperatureSchedule::new(vec![(0, 0.0)]).is_err());
        let s: TemperatureSchedule = serde_json::from_str("[[0, 2.0], [3, 1.0]]").unwrap();
        assert_eq!(s.alpha_at(4), 1.0);
        assert!(serde_json::from_str::<TemperatureSchedule>("[[2, 2.0]]").is_err());
    }

    #[test]
    fn loss_examples() {
        let lv = heated_ce_loss(&[0.0f64, 0.0], 1, 3.0).unwrap();
        assert!((lv.loss - std::f64::consts::LN_2).abs() < 1e-15);
        let lv = heated_ce_loss(&[1.0f64, 2.0], 1, 1.0).unwrap();
        assert!((lv.loss - 0.313_261_687_518_222_8).abs() < 1e-12);
        assert!(matches!(
            heated_ce_loss(&[1.0f64, 2.0], 1, 0.0),
            Err(ObjectiveError::NonPositiveAlpha(_))
        ));
    }

    #[test]
    fn wrong_class_gradient_grows_with_alpha() {
        let norm = |a: f64| {
            let g = heated_ce_loss(&[2.0, 1.0], 1, a).unwrap().grad;
            (g[0] * g[0] + g[1] * g[1]).sqrt()
        };
        assert!(norm(4.0) > norm(1.0));
    }

    #[test]
    fn batch_examples() {
        let one = Tensor::from_rows(&[vec![0.3f64, -1.2]]).unwrap();
        let b = batch_loss(&one, &[0], 2.0).unwrap();
        let e = heated_ce_loss(&[0.3, -1.2], 0, 2.0).unwrap();
        assert_eq!(b.loss, e.loss);
        assert_eq!(b.grad.values(), e.grad.as_slice());

        let two = Tensor::from_rows(&[vec![0.3f64, -1.2], vec![0.3, -1.2]]).unwrap();
        let b2 = batch_loss(&two, &[0, 0], 2.0).unwrap();
        assert!((b2.loss - e.loss).abs() < 1e-15);

        let mixed = Tensor::from_rows(&[vec![1.0f64, 2.0], vec![0.5, -0.5], vec![-2.0, 0.0]]).unwrap();
        let labels = [1, 1, 0];
        let b = batch_loss(&mixed, &labels, 1.0).unwrap();
        let hand: f64 = (0..3)
            .map(|i| heated_ce_loss(mixed.row(i), labels[i], 1.0).unwrap().loss)
            .sum::<f64>()
            / 3.0;
        assert!((b.loss - hand).abs() < 1e-15);

        let empty = Tensor::<f64>::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert!(matches!(batch_loss(&empty, &[], 1.0), Err(ObjectiveError::EmptyBatch)));
        assert!(matches!(
            batch_loss(&empty, &[0, 1], 1.0),
            Err(ObjectiveError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn graph_loss_matches_closed_form() {
        let rows = [vec![1.0f64, 2.0], vec![0.5, -0.5], vec![-2.0, 0.0]];
        let labels = [1, 0, 0];
        for alpha in [0.5, 1.0, 4.0] {
            let mut g = Graph::<f64>::new(false);
            let z = g.variable(3, 2, rows.concat());
            let loss = heated_ce_graph(&mut g, z, &labels, alpha).unwrap();
            g.backward(loss).unwrap();
            let closed = batch_loss(&Tensor::from_rows(&rows).unwrap(), &labels, alpha).unwrap();
            assert!((g.value(loss)[0] - closed.loss).abs() < 1e-12);
            for (a, b) in g.grad(z).unwrap().iter().zip(closed.grad.values()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
