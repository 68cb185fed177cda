//! Fast-gradient-method perturbation of the embedding layer and the
//! clean + adversarial training step.
//!
//! With `g = ∇ₓ log p(y|x)` the perturbation is `r = −ε·g/‖g‖₂`, the
//! minimizer of the linearized log-likelihood over the `ε`-ball. The norm
//! is taken over the embedding tensor of the whole batch.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{EncoderError, EncoderModel};
use crate::ndtensor::{l2_norm, Graph, Tensor, TensorError};
use crate::objective::{heated_ce_graph, ObjectiveError};
use crate::scalar::Scalar;
use crate::tokenizer::TokenSequence;

/// Gradients with a smaller norm yield no perturbation.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum AdvError {
    #[error("gradient norm {0:e} is too small to define a perturbation")]
    DegenerateGradient(f64),
    #[error("invalid adversarial config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvConfig {
    pub enabled: bool,
    /// L2 budget of the perturbation, in embedding units.
    pub epsilon: f64,
    /// Weight `w` of the adversarial gradient: `(1−w)·clean + w·adv`.
    pub combine_weight: f64,
    /// Normalize each token row separately instead of the whole tensor.
    pub per_token_norm: bool,
}

impl Default for AdvConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            epsilon: 0.5,
            combine_weight: 0.5,
            per_token_norm: false,
        }
    }
}

impl AdvConfig {
    pub fn validate(&self) -> Result<(), AdvError> {
        if self.enabled && !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(AdvError::InvalidConfig(format!(
                "adv.epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(0.0..=1.0).contains(&self.combine_weight) {
            return Err(AdvError::InvalidConfig(format!(
                "adv.combine_weight must lie in [0, 1], got {}",
                self.combine_weight
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationRecord<T> {
    pub r_adv: Tensor<T>,
    pub gradient_norm: T,
}

/// `r = −ε·g/‖g‖₂` over the whole tensor, where `grad_loglik` is the
/// gradient of the log-likelihood (the negated loss gradient).
pub fn fgm_perturbation<T: Scalar>(grad_loglik: &Tensor<T>, epsilon: T) -> Result<PerturbationRecord<T>, AdvError> {
    let norm = grad_loglik.l2_norm();
    if !(norm >= T::lit(DEGENERATE_NORM)) {
        return Err(AdvError::DegenerateGradient(norm.as_f64()));
    }
    let k = -epsilon / norm;
    let r = grad_loglik.values().iter().map(|&v| k * v).collect();
    Ok(PerturbationRecord {
        r_adv: Tensor::new(grad_loglik.shape(), r)?,
        gradient_norm: norm,
    })
}

/// Row-wise variant: every token row with a non-degenerate gradient gets a
/// perturbation of norm `ε`; other rows stay zero.
pub fn fgm_perturbation_per_token<T: Scalar>(
    grad_loglik: &Tensor<T>,
    epsilon: T,
) -> Result<PerturbationRecord<T>, AdvError> {
    let norm = grad_loglik.l2_norm();
    if !(norm >= T::lit(DEGENERATE_NORM)) {
        return Err(AdvError::DegenerateGradient(norm.as_f64()));
    }
    let (rows, _) = grad_loglik.dims2();
    let mut r = Vec::with_capacity(grad_loglik.len());
    for i in 0..rows {
        let row = grad_loglik.row(i);
        let n = l2_norm(row);
        if n >= T::lit(DEGENERATE_NORM) {
            r.extend(row.iter().map(|&v| -epsilon * v / n));
        } else {
            r.extend(std::iter::repeat_n(T::zero(), row.len()));
        }
    }
    Ok(PerturbationRecord {
        r_adv: Tensor::new(grad_loglik.shape(), r)?,
        gradient_norm: norm,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord<T> {
    pub clean_loss: T,
    /// `None` when adversarial training is off or the pass was skipped.
    pub adv_loss: Option<T>,
    /// Set when a degenerate gradient forced a clean-only step.
    pub skipped: bool,
    /// `‖g‖₂` over the batch's embedding tensor (absent for clean-only
    /// steps).
    pub gradient_norm: Option<T>,
}

/// Clean forward/backward; leaves parameter gradients on `model`.
pub fn training_step<T: Scalar>(
    model: &mut EncoderModel<T>,
    batch: &[&TokenSequence],
    labels: &[usize],
    alpha: T,
    dropout_seed: u64,
) -> Result<StepRecord<T>, AdvError> {
    let (loss, grads, _) = clean_pass(model, batch, labels, alpha, dropout_seed)?;
    model.set_grads(grads)?;
    Ok(StepRecord {
        clean_loss: loss,
        adv_loss: None,
        skipped: false,
        gradient_norm: None,
    })
}

type CleanPass<T> = (T, Vec<Vec<T>>, Vec<Tensor<T>>);

fn clean_pass<T: Scalar>(
    model: &EncoderModel<T>,
    batch: &[&TokenSequence],
    labels: &[usize],
    alpha: T,
    dropout_seed: u64,
) -> Result<CleanPass<T>, AdvError> {
    let mut g = Graph::new(true);
    let bound = model.bind(&mut g);
    let out = model.forward_batch(&mut g, &bound, batch, None, dropout_seed)?;
    let loss = heated_ce_graph(&mut g, out.logits, labels, alpha)?;
    g.backward(loss)?;
    let emb_grads = out
        .embeddings
        .iter()
        .map(|&e| {
            let (r, c) = g.dims(e);
            let gv = g.grad(e).map_or_else(|| vec![T::zero(); r * c], <[T]>::to_vec);
            Tensor::new(&[r, c], gv)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((g.value(loss)[0], model.collect_grads(&g, &bound), emb_grads))
}

/// One training step with FGM: clean pass, perturbation of the batch's
/// embeddings, a second pass under the same dropout masks, and the
/// `(1−w)·clean + w·adv` gradient blend written to the model.
pub fn adversarial_training_step<T: Scalar>(
    model: &mut EncoderModel<T>,
    batch: &[&TokenSequence],
    labels: &[usize],
    alpha: T,
    adv: &AdvConfig,
    dropout_seed: u64,
) -> Result<StepRecord<T>, AdvError> {
    if !adv.enabled {
        return training_step(model, batch, labels, alpha, dropout_seed);
    }
    let (clean_loss, clean_grads, emb_grads) = clean_pass(model, batch, labels, alpha, dropout_seed)?;
    // one tensor for the whole batch: rows of every example stacked
    let h = emb_grads[0].dims2().1;
    let rows: usize = emb_grads.iter().map(|t| t.dims2().0).sum();
    // loss = −log p, so ∇ log p = −∇ loss
    let loglik: Vec<T> = emb_grads.iter().flat_map(|t| t.values().iter().map(|&v| -v)).collect();
    let loglik = Tensor::new(&[rows, h], loglik)?;
    let eps = T::lit(adv.epsilon);
    let rec = if adv.per_token_norm {
        fgm_perturbation_per_token(&loglik, eps)
    } else {
        fgm_perturbation(&loglik, eps)
    };
    let rec = match rec {
        Ok(rec) => rec,
        Err(AdvError::DegenerateGradient(n)) => {
            log::debug!("degenerate embedding gradient ({n:e}); clean-only step");
            model.set_grads(clean_grads)?;
            return Ok(StepRecord {
                clean_loss,
                adv_loss: None,
                skipped: true,
                gradient_norm: None,
            });
        }
        Err(e) => return Err(e),
    };
    let mut perturb = Vec::with_capacity(batch.len());
    let mut offset = 0;
    for gl in &emb_grads {
        let n = gl.len();
        perturb.push(Tensor::new(gl.shape(), rec.r_adv.values()[offset..offset + n].to_vec())?);
        offset += n;
    }

    let mut g = Graph::new(true);
    let bound = model.bind(&mut g);
    let out = model.forward_batch(&mut g, &bound, batch, Some(&perturb), dropout_seed)?;
    let loss = heated_ce_graph(&mut g, out.logits, labels, alpha)?;
    g.backward(loss)?;
    let adv_loss = g.value(loss)[0];
    let adv_grads = model.collect_grads(&g, &bound);

    let w = T::lit(adv.combine_weight);
    let keep = T::one() - w;
    let combined = clean_grads
        .into_iter()
        .zip(adv_grads)
        .map(|(c, a)| c.into_iter().zip(a).map(|(c, a)| keep * c + w * a).collect())
        .collect();
    model.set_grads(combined)?;
    Ok(StepRecord {
        clean_loss,
        adv_loss: Some(adv_loss),
        skipped: false,
        gradient_norm: Some(rec.gradient_norm),
    })
}

/// Mean heated loss of a batch under fixed perturbations, without touching
/// gradients.
pub fn perturbed_loss<T: Scalar>(
    model: &EncoderModel<T>,
    batch: &[&TokenSequence],
    labels: &[usize],
    alpha: T,
    perturb: Option<&[Tensor<T>]>,
) -> Result<T, AdvError> {
    let mut g = Graph::new(false);
    let bound = model.bind_frozen(&mut g);
    let out = model.forward_batch(&mut g, &bound, batch, perturb, 0)?;
    let loss = heated_ce_graph(&mut g, out.logits, labels, alpha)?;
    Ok(g.value(loss)[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::ModelConfig;
    use crate::tokenizer::{encode, build_vocab};
    use proptest::prelude::*;

    #[test]
    fn unit_scaling_example() {
        let g = Tensor::vector(&[3.0f64, 4.0]);
        let r = fgm_perturbation(&g, 1.0).unwrap();
        assert!((r.r_adv.values()[0] + 0.6).abs() < 1e-15);
        assert!((r.r_adv.values()[1] + 0.8).abs() < 1e-15);
        assert_eq!(r.gradient_norm, 5.0);
    }

    #[test]
    fn zero_gradient_is_degenerate() {
        let g = Tensor::<f64>::zeros(&[4, 3]);
        assert!(matches!(fgm_perturbation(&g, 0.5), Err(AdvError::DegenerateGradient(_))));
    }

    #[test]
    fn per_token_rows_have_norm_eps() {
        let g = Tensor::from_rows(&[vec![3.0f64, 4.0], vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let r = fgm_perturbation_per_token(&g, 2.0).unwrap();
        assert!((l2_norm(r.r_adv.row(0)) - 2.0).abs() < 1e-12);
        assert_eq!(r.r_adv.row(1), &[0.0, 0.0]);
        assert_eq!(r.r_adv.row(2), &[-2.0, 0.0]);
    }

    #[test]
    fn config_validation() {
        assert!(AdvConfig::default().validate().is_ok());
        let bad = AdvConfig {
            epsilon: 0.0,
            ..AdvConfig::default()
        };
        assert!(bad.validate().is_err());
        let off = AdvConfig {
            enabled: false,
            epsilon: 0.0,
            ..AdvConfig::default()
        };
        assert!(off.validate().is_ok());
        let w = AdvConfig {
            combine_weight: 1.5,
            ..AdvConfig::default()
        };
        assert!(w.validate().is_err());
    }

    proptest! {
        #[test]
        fn norm_and_direction_contract(
            vals in proptest::collection::vec(-10.0f64..10.0, 1..64),
            eps in 0.01f64..5.0,
        ) {
            let g = Tensor::vector(&vals);
            prop_assume!(g.l2_norm() > 1e-6);
            let r = fgm_perturbation(&g, eps).unwrap();
            prop_assert!((r.r_adv.l2_norm() - eps).abs() < 1e-9);
            let dot: f64 = r.r_adv.values().iter().zip(&vals).map(|(a, b)| a * b).sum();
            prop_assert!((dot + eps * r.gradient_norm).abs() < 1e-9 * (1.0 + eps * r.gradient_norm));
        }
    }

    fn tiny() -> (EncoderModel<f64>, Vec<TokenSequence>, Vec<usize>) {
        let corpus = ["masks stop virus spread", "garlic cures virus fast"];
        let vocab = build_vocab(&corpus, 64).unwrap();
        let cfg = ModelConfig {
            vocab_size: vocab.len(),
            max_len: 8,
            hidden_dim: 8,
            num_layers: 1,
            num_heads: 2,
            ff_dim: 8,
            dropout: 0.1,
            seed: 3,
            ..ModelConfig::default()
        };
        let model = EncoderModel::new(cfg).unwrap();
        let seqs = corpus.iter().map(|t| encode(t, &vocab, 8)).collect();
        (model, seqs, vec![1, 0])
    }

    #[test]
    fn disabled_matches_plain_step_bitwise() {
        let (mut a, seqs, labels) = tiny();
        let mut b = a.clone();
        let batch: Vec<&TokenSequence> = seqs.iter().collect();
        let off = AdvConfig {
            enabled: false,
            ..AdvConfig::default()
        };
        adversarial_training_step(&mut a, &batch, &labels, 4.0, &off, 11).unwrap();
        training_step(&mut b, &batch, &labels, 4.0, 11).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.grad(), pb.grad());
        }
    }

    #[test]
    fn zero_epsilon_reproduces_clean_pass() {
        let (mut a, seqs, labels) = tiny();
        let mut b = a.clone();
        let batch: Vec<&TokenSequence> = seqs.iter().collect();
        let cfg = AdvConfig {
            epsilon: 0.0,
            ..AdvConfig::default()
        };
        let rec = adversarial_training_step(&mut a, &batch, &labels, 1.0, &cfg, 5).unwrap();
        assert!((rec.adv_loss.unwrap() - rec.clean_loss).abs() < 1e-12);
        training_step(&mut b, &batch, &labels, 1.0, 5).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params()) {
            for (x, y) in pa.grad().unwrap().iter().zip(pb.grad().unwrap()) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn step_leaves_parameters_untouched() {
        let (mut a, seqs, labels) = tiny();
        let before: Vec<Vec<f64>> = a.params().iter().map(|p| p.values().to_vec()).collect();
        let batch: Vec<&TokenSequence> = seqs.iter().collect();
        adversarial_training_step(&mut a, &batch, &labels, 1.0, &AdvConfig::default(), 1).unwrap();
        for (p, b) in a.params().iter().zip(&before) {
            assert_eq!(p.values(), b.as_slice());
        }
    }
}
