use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentationRecord, Lexicon};
use super::data::{prepare_vocab, Encoded};
use super::{Artifact, ModelArtifact, PipelineError, PreparedData, Result, RunConfig};
use crate::advtrain::adversarial_training_step;
use crate::encoder::{mix_seed, EncoderModel};
use crate::metrics::{evaluate_predictions, ClassificationReport};
use crate::ndtensor::{AdamState, Graph};
use crate::textprep::{CleanedExample, Label};
use crate::tokenizer::{TokenSequence, Vocabulary};

// Seed streams derived from the run seed.
const STREAM_MODEL: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_DROPOUT: u64 = 3;
pub(crate) const STREAM_AUGMENT: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub round: usize,
    pub epoch: usize,
    pub alpha: f64,
    /// Learning rate of the epoch's last update.
    pub lr: f64,
    pub train_size: usize,
    pub clean_loss: f64,
    /// Absent when adversarial training is off.
    pub adv_loss: Option<f64>,
    /// Batches that fell back to a clean-only step.
    pub skipped_batches: usize,
    pub val_accuracy: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    pub val_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub train_size: usize,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    /// Misclassified train+validation examples after this round.
    pub hard_samples: usize,
    /// Augmented examples added for the next round.
    pub augmented: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub rounds: Vec<RoundRecord>,
}

impl TrainLog {
    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("record serializes") + "\n")
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub gold: Option<Label>,
    pub pred: Label,
    pub p_fake: f64,
    pub p_real: f64,
}

impl Prediction {
    pub fn tsv_header() -> &'static str {
        "id\tgold\tpred\tp_fake\tp_real"
    }

    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{:.6}\t{:.6}",
            self.id,
            self.gold.map_or("-", Label::name),
            self.pred.name(),
            self.p_fake,
            self.p_real
        )
    }
}

pub fn write_predictions<W: Write>(mut w: W, preds: &[Prediction]) -> std::io::Result<()> {
    writeln!(w, "{}", Prediction::tsv_header())?;
    for p in preds {
        writeln!(w, "{}", p.tsv_row())?;
    }
    Ok(())
}

fn to_prediction(id: &str, gold: Option<Label>, logits: &[f64]) -> Prediction {
    let m = logits[0].max(logits[1]);
    let (e0, e1) = ((logits[0] - m).exp(), (logits[1] - m).exp());
    let (p_fake, p_real) = (e0 / (e0 + e1), e1 / (e0 + e1));
    Prediction {
        id: id.to_string(),
        gold,
        pred: if logits[1] > logits[0] { Label::Real } else { Label::Fake },
        p_fake,
        p_real,
    }
}

fn batch_logits(model: &EncoderModel<f64>, seqs: &[&TokenSequence]) -> Result<Vec<f64>> {
    let mut g = Graph::new(false);
    let bound = model.bind_frozen(&mut g);
    let out = model.forward_batch(&mut g, &bound, seqs, None, 0)?;
    Ok(g.value(out.logits).to_vec())
}

fn predict_encoder(
    model: &EncoderModel<f64>,
    vocab: &Vocabulary,
    examples: &[CleanedExample],
    chunk: usize,
) -> Result<Vec<Prediction>> {
    let enc = Encoded::all(examples, vocab, model.config().max_len);
    let mut out = Vec::with_capacity(enc.len());
    for part in enc.chunks(chunk.max(1)) {
        let seqs: Vec<&TokenSequence> = part.iter().map(|e| &e.seq).collect();
        let logits = batch_logits(model, &seqs)?;
        for (e, l) in part.iter().zip(logits.chunks(2)) {
            out.push(to_prediction(&e.id, Some(e.label), l));
        }
    }
    Ok(out)
}

/// Evaluation-mode predictions, processed in chunks of `chunk` examples.
pub fn predict_all(artifact: &Artifact, examples: &[CleanedExample], chunk: usize) -> Result<Vec<Prediction>> {
    match artifact {
        Artifact::Single(m) => predict_encoder(&m.model, &m.vocab, examples, chunk),
        Artifact::Fused(_) => examples
            .iter()
            .map(|e| {
                let l = artifact.logits(&e.tokens_text)?;
                Ok(to_prediction(&e.id, Some(e.label), l.values()))
            })
            .collect(),
    }
}

/// Weighted report plus the per-example predictions it was computed from.
pub fn evaluate(
    artifact: &Artifact,
    examples: &[CleanedExample],
    chunk: usize,
) -> Result<(ClassificationReport, Vec<Prediction>)> {
    let preds = predict_all(artifact, examples, chunk)?;
    let report = report_of(&preds)?;
    Ok((report, preds))
}

fn report_of(preds: &[Prediction]) -> Result<ClassificationReport> {
    let p: Vec<usize> = preds.iter().map(|p| p.pred.index()).collect();
    let y: Vec<usize> = preds
        .iter()
        .map(|p| p.gold.map(Label::index))
        .collect::<Option<_>>()
        .ok_or_else(|| PipelineError::Data("evaluation needs gold labels".into()))?;
    Ok(evaluate_predictions(&p, &y)?)
}

/// Misclassified examples of both splits, ordered by id.
pub fn harvest_hard_samples(
    artifact: &Artifact,
    train: &[CleanedExample],
    validation: &[CleanedExample],
    chunk: usize,
) -> Result<Vec<CleanedExample>> {
    let mut hard = Vec::new();
    for split in [train, validation] {
        let preds = predict_all(artifact, split, chunk)?;
        hard.extend(
            split
                .iter()
                .zip(&preds)
                .filter(|(e, p)| p.pred != e.label)
                .map(|(e, _)| e.clone()),
        );
    }
    hard.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(hard)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Weights from the epoch with the best validation weighted F1.
    pub artifact: ModelArtifact,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_report: ClassificationReport,
}

/// One training run from fresh weights.
pub fn train(
    cfg: &RunConfig,
    vocab: &Vocabulary,
    train_set: &[CleanedExample],
    validation: &[CleanedExample],
    round: usize,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || validation.is_empty() {
        return Err(PipelineError::Data("training and validation sets must be non-empty".into()));
    }
    let mut mcfg = cfg.model.clone();
    mcfg.seed = mix_seed(cfg.seed, STREAM_MODEL);
    mcfg.vocab_size = vocab.base_len();
    let mut model = EncoderModel::<f64>::new(mcfg)?;
    model.grow_vocab(vocab)?;

    let max_len = model.config().max_len;
    let enc = Encoded::all(train_set, vocab, max_len);
    let labels: Vec<usize> = enc.iter().map(|e| e.label.index()).collect();
    let bs = cfg.train.batch_size;
    let steps_per_epoch = enc.len().div_ceil(bs);
    let total_steps = steps_per_epoch * cfg.train.epochs;
    let mut adam = AdamState::new(cfg.train.adam(), model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(cfg.seed, STREAM_SHUFFLE), round as u64));
    let dropout_base = mix_seed(mix_seed(cfg.seed, STREAM_DROPOUT), round as u64);

    let mut order: Vec<usize> = (0..enc.len()).collect();
    let mut step = 0usize;
    let mut records = Vec::new();
    let mut best: Option<(f64, usize, EncoderModel<f64>, ClassificationReport)> = None;
    let mut since_best = 0usize;

    for epoch in 0..cfg.train.epochs {
        let alpha = cfg.alpha_at(epoch);
        order.shuffle(&mut rng);
        let (mut clean_sum, mut adv_sum, mut adv_n, mut skipped) = (0.0, 0.0, 0usize, 0usize);
        let mut lr = 0.0;
        for (b, idx) in order.chunks(bs).enumerate() {
            let batch: Vec<&TokenSequence> = idx.iter().map(|&i| &enc[i].seq).collect();
            let ys: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let seed = mix_seed(dropout_base, (epoch * steps_per_epoch + b) as u64);
            let rec = adversarial_training_step(&mut model, &batch, &ys, alpha, &cfg.adv, seed)?;
            let finite = rec.clean_loss.is_finite() && rec.adv_loss.is_none_or(f64::is_finite);
            if !finite {
                return Err(PipelineError::NonFiniteLoss { epoch, batch: b });
            }
            clean_sum += rec.clean_loss;
            if let Some(a) = rec.adv_loss {
                adv_sum += a;
                adv_n += 1;
            }
            skipped += usize::from(rec.skipped);
            step += 1;
            lr = adam.step(model.params_mut(), step, total_steps)?;
        }
        let nb = steps_per_epoch as f64;
        let report = report_of(&predict_encoder(&model, vocab, validation, cfg.train.eval_batch_size)?)?;
        records.push(EpochRecord {
            round,
            epoch,
            alpha,
            lr,
            train_size: enc.len(),
            clean_loss: clean_sum / nb,
            adv_loss: cfg.adv.enabled.then(|| adv_sum / adv_n.max(1) as f64),
            skipped_batches: skipped,
            val_accuracy: report.accuracy,
            val_precision: report.precision,
            val_recall: report.recall,
            val_f1: report.f1,
        });
        log::info!(
            "round {round} epoch {epoch}: alpha {alpha} loss {:.4} val acc {:.4} f1 {:.4}",
            clean_sum / nb,
            report.accuracy,
            report.f1
        );
        if best.as_ref().is_none_or(|(f, ..)| report.f1 > *f) {
            let mut keep = model.clone();
            keep.zero_grad();
            best = Some((report.f1, epoch, keep, report));
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.train.patience.is_some_and(|p| since_best >= p) {
                log::info!("early stop after epoch {epoch}");
                break;
            }
        }
    }
    let (_, best_epoch, best_model, best_report) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        artifact: ModelArtifact {
            vocab: vocab.clone(),
            model: best_model,
        },
        epochs: records,
        best_epoch,
        best_report,
    })
}

/// Result of the full multi-round procedure.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub artifact: Artifact,
    pub log: TrainLog,
    pub best_round: usize,
    pub validation: ClassificationReport,
    pub test: Option<ClassificationReport>,
    /// Test predictions when a test split exists, validation otherwise.
    pub predictions: Vec<Prediction>,
    pub augmented: Vec<AugmentationRecord>,
}

#[derive(Serialize)]
struct ReportFile<'a> {
    best_round: usize,
    validation: &'a ClassificationReport,
    test: Option<&'a ClassificationReport>,
    rounds: &'a [RoundRecord],
}

impl RunOutcome {
    /// Writes `checkpoint.bin`, `trainlog.jsonl`, `report.json`,
    /// `predictions.tsv`, and `augmented.tsv` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        self.artifact.save(dir.join("checkpoint.bin"))?;
        let write = |name: &str, body: &[u8]| {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| PipelineError::io(&p, e))
        };
        write("trainlog.jsonl", self.log.to_jsonl().as_bytes())?;
        let report = ReportFile {
            best_round: self.best_round,
            validation: &self.validation,
            test: self.test.as_ref(),
            rounds: &self.log.rounds,
        };
        write(
            "report.json",
            (serde_json::to_string_pretty(&report).expect("report serializes") + "\n").as_bytes(),
        )?;
        let mut buf = Vec::new();
        write_predictions(&mut buf, &self.predictions).expect("in-memory write");
        write("predictions.tsv", &buf)?;
        let mut aug = String::from("round\tsource_id\ttransformation\tpositions\ttext\n");
        for r in &self.augmented {
            let pos: Vec<String> = r.positions.iter().map(usize::to_string).collect();
            aug.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.round,
                r.source_id,
                r.transformation.name(),
                pos.join(","),
                r.text
            ));
        }
        write("augmented.tsv", aug.as_bytes())
    }
}

pub(crate) fn lexicon_for(cfg: &RunConfig) -> Result<Lexicon> {
    match &cfg.augment.lexicon {
        Some(p) => Ok(Lexicon::from_file(p)?),
        None => Ok(Lexicon::english()),
    }
}

/// Training rounds with hard-sample augmentation in between. Each round
/// trains from fresh weights on the grown training set; the round with the
/// best validation weighted F1 is kept.
pub fn run_pipeline(cfg: &RunConfig, data: &PreparedData) -> Result<RunOutcome> {
    let vocab = prepare_vocab(cfg, &data.train, &data.validation)?;
    run_with_vocab(cfg, data, &vocab)
}

pub fn run_with_vocab(cfg: &RunConfig, data: &PreparedData, vocab: &Vocabulary) -> Result<RunOutcome> {
    cfg.validate()?;
    let lexicon = if cfg.augment.rounds > 0 {
        lexicon_for(cfg)?
    } else {
        Lexicon::default()
    };
    let chunk = cfg.train.eval_batch_size;
    let mut train_set = data.train.clone();
    let mut log = TrainLog::default();
    let mut augmented = Vec::new();
    let mut best: Option<(usize, TrainOutcome)> = None;
    for round in 0..=cfg.augment.rounds {
        let out = train(cfg, vocab, &train_set, &data.validation, round)?;
        log.epochs.extend(out.epochs.iter().cloned());
        let mut record = RoundRecord {
            round,
            train_size: train_set.len(),
            best_epoch: out.best_epoch,
            best_val_f1: out.best_report.f1,
            hard_samples: 0,
            augmented: 0,
        };
        if round < cfg.augment.rounds {
            let art = Artifact::Single(out.artifact.clone());
            let hard = harvest_hard_samples(&art, &train_set, &data.validation, chunk)?;
            let new = augment(&hard, &lexicon, mix_seed(cfg.seed, STREAM_AUGMENT), round + 1);
            record.hard_samples = hard.len();
            record.augmented = new.len();
            for (ex, rec) in new {
                if !train_set.iter().any(|e| e.id == ex.id && e.tokens_text == ex.tokens_text) {
                    train_set.push(ex);
                    augmented.push(rec);
                }
            }
        }
        log.rounds.push(record);
        if best.as_ref().is_none_or(|(_, b)| out.best_report.f1 > b.best_report.f1) {
            best = Some((round, out));
        }
    }
    let (best_round, best) = best.expect("at least one round");
    let artifact = Artifact::Single(best.artifact);
    finish(artifact, data, chunk, log, best_round, augmented)
}

pub(crate) fn finish(
    artifact: Artifact,
    data: &PreparedData,
    chunk: usize,
    log: TrainLog,
    best_round: usize,
    augmented: Vec<AugmentationRecord>,
) -> Result<RunOutcome> {
    let (validation, val_preds) = evaluate(&artifact, &data.validation, chunk)?;
    let (test, predictions) = match &data.test {
        Some(t) => {
            let (r, p) = evaluate(&artifact, t, chunk)?;
            (Some(r), p)
        }
        None => (None, val_preds),
    };
    Ok(RunOutcome {
        artifact,
        log,
        best_round,
        validation,
        test,
        predictions,
        augmented,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prediction_rows() {
        let p = to_prediction("7", Some(Label::Fake), &[0.0, 0.0]);
        assert_eq!(p.pred, Label::Fake);
        assert_eq!(p.tsv_row(), "7\tfake\tfake\t0.500000\t0.500000");
        let q = to_prediction("8", None, &[-1.0, 2.0]);
        assert_eq!(q.pred, Label::Real);
        assert!(q.tsv_row().starts_with("8\t-\treal\t"));
        assert!((q.p_fake + q.p_real - 1.0).abs() < 1e-15);
    }
}
