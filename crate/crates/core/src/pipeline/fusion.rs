use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::train::finish;
use super::{run_pipeline, Artifact, FusedArtifact, FusionConfig, ModelArtifact, PreparedData, Result, RunConfig, RunOutcome};
use crate::encoder::{mix_seed, FusionHead};
use crate::metrics::{evaluate_predictions, ClassificationReport};
use crate::ndtensor::{AdamConfig, AdamState, Graph};
use crate::objective::heated_ce_graph;
use crate::textprep::CleanedExample;

#[derive(Clone, Debug, PartialEq)]
pub struct FusionOutcome {
    pub fused: FusedArtifact,
    /// Validation report of the selected head.
    pub report: ClassificationReport,
    /// 0 means the initial head was kept.
    pub best_epoch: usize,
    /// `(epoch, mean loss, validation weighted F1)`; epoch 0 is the
    /// initial head.
    pub history: Vec<(usize, f64, f64)>,
}

fn head_report(head: &FusionHead<f64>, x: &[Vec<f64>], y: &[usize]) -> Result<ClassificationReport> {
    let mut g = Graph::new(false);
    let vars = head.bind(&mut g);
    let w = head.input_width();
    let xv = g.constant(x.len(), w, x.concat());
    let out = head.forward_graph(&mut g, &vars, xv)?;
    let preds: Vec<usize> = g
        .value(out)
        .chunks(2)
        .map(|l| usize::from(l[1] > l[0]))
        .collect();
    Ok(evaluate_predictions(&preds, y)?)
}

/// Trains a head over the frozen sources' features on `validation` with
/// plain cross-entropy, keeping the head with the best weighted F1.
///
/// With `cfg.warm_start`, the starting head is the best of a random head and
/// the two pass-through heads (when `hidden ≥ 4`).
pub fn train_fused(
    a: &ModelArtifact,
    b: &ModelArtifact,
    validation: &[CleanedExample],
    cfg: &FusionConfig,
    seed: u64,
) -> Result<FusionOutcome> {
    let (ha, hb) = (a.model.config().hidden_dim, b.model.config().hidden_dim);
    let probe = FusionHead::<f64>::new(cfg.mode, ha, hb, cfg.hidden, 0);
    let mut x = Vec::with_capacity(validation.len());
    for e in validation {
        x.push(probe.features(&a.features(&e.tokens_text)?, &b.features(&e.tokens_text)?)?);
    }
    let y: Vec<usize> = validation.iter().map(|e| e.label.index()).collect();

    let mut head = FusionHead::<f64>::new(cfg.mode, ha, hb, cfg.hidden, mix_seed(seed, 0xF0));
    let mut report = head_report(&head, &x, &y)?;
    if cfg.warm_start && cfg.hidden >= 4 {
        let via_a = FusionHead::<f64>::pass_through(cfg.mode, ha, hb, cfg.hidden);
        // pass-through of the second source: swap its logits into the first slot
        let mut via_b = via_a.clone();
        let w1 = via_b.params()[0].values().to_vec();
        let mut swapped = w1.clone();
        let hid = cfg.hidden;
        for k in 0..2 {
            swapped[(k + 2) * hid..(k + 3) * hid].copy_from_slice(&w1[k * hid..(k + 1) * hid]);
            swapped[k * hid..(k + 1) * hid].iter_mut().for_each(|v| *v = 0.0);
        }
        via_b.params_mut()[0].values_mut().copy_from_slice(&swapped);
        for cand in [via_a, via_b] {
            let r = head_report(&cand, &x, &y)?;
            if r.f1 > report.f1 {
                head = cand;
                report = r;
            }
        }
    }

    let mut history = vec![(0, f64::NAN, report.f1)];
    let mut best = (head.clone(), report, 0usize);
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        warmup: 0.0,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(adam_cfg, head.params());
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xF1));
    let mut order: Vec<usize> = (0..x.len()).collect();
    let total = cfg.epochs * x.len().div_ceil(cfg.batch_size);
    let mut step = 0;
    let w = head.input_width();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut nb = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let mut g = Graph::new(true);
            let vars = head.bind(&mut g);
            let xb: Vec<f64> = idx.iter().flat_map(|&i| x[i].iter().copied()).collect();
            let yb: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
            let xv = g.constant(idx.len(), w, xb);
            let out = head.forward_graph(&mut g, &vars, xv)?;
            let loss = heated_ce_graph(&mut g, out, &yb, 1.0)?;
            g.backward(loss)?;
            loss_sum += g.value(loss)[0];
            nb += 1;
            let grads: Vec<Vec<f64>> = vars
                .iter()
                .zip(head.params())
                .map(|(&v, p)| g.grad(v).map_or_else(|| vec![0.0; p.len()], <[f64]>::to_vec))
                .collect();
            for (p, gr) in head.params_mut().iter_mut().zip(grads) {
                p.set_grad(gr)?;
            }
            step += 1;
            adam.step(head.params_mut(), step, total)?;
        }
        let r = head_report(&head, &x, &y)?;
        history.push((epoch, loss_sum / nb.max(1) as f64, r.f1));
        if r.f1 > best.1.f1 {
            best = (head.clone(), r, epoch);
        }
    }
    let (head, report, best_epoch) = best;
    Ok(FusionOutcome {
        fused: FusedArtifact {
            a: a.clone(),
            b: b.clone(),
            head,
        },
        report,
        best_epoch,
        history,
    })
}

/// Seed stream of the second fusion source.
const STREAM_SECOND: u64 = 0xB;

/// The second source's config: a different seed and, optionally, a
/// different model.
pub fn second_source_config(cfg: &RunConfig) -> RunConfig {
    let mut c = cfg.clone();
    c.seed = mix_seed(cfg.seed, STREAM_SECOND);
    if let Some(m) = &cfg.fusion.second_model {
        c.model = m.clone();
    }
    c
}

/// Trains both sources through the full procedure, then the head on the
/// validation split.
pub fn run_fused_pipeline(cfg: &RunConfig, data: &PreparedData) -> Result<RunOutcome> {
    let first = run_pipeline(cfg, data)?;
    let second = run_pipeline(&second_source_config(cfg), data)?;
    let (Artifact::Single(a), Artifact::Single(b)) = (first.artifact, second.artifact) else {
        unreachable!("single-source runs return encoder artifacts")
    };
    let fused = train_fused(&a, &b, &data.validation, &cfg.fusion, cfg.seed)?;
    let mut log = first.log;
    log.epochs.extend(second.log.epochs);
    log.rounds.extend(second.log.rounds);
    let mut augmented = first.augmented;
    augmented.extend(second.augmented);
    finish(
        Artifact::Fused(fused.fused),
        data,
        cfg.train.eval_batch_size,
        log,
        first.best_round,
        augmented,
    )
}
