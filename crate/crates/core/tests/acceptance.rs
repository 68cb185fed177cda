//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; the process fails if any is red.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hft::advtrain::{adversarial_training_step, fgm_perturbation, AdvConfig};
use hft::encoder::{mix_seed, EncoderModel, ModelConfig};
use hft::metrics::{confusion_counts, weighted_report};
use hft::ndtensor::{entropy, softmax_scaled, Graph, Tensor};
use hft::objective::{heated_ce_graph, TemperatureSchedule};
use hft::pipeline::synth::{strip_words, CorpusKind, SynthCorpus};
use hft::pipeline::{
    augment, evaluate, load_split, prepare_vocab, run_pipeline, run_with_vocab, train, train_fused,
    write_predictions, Artifact, Encoded, Lexicon, PreparedData, RunConfig, Transformation,
};
use hft::textprep::{CleanedExample, Label, Split, StopWords};
use hft::tokenizer::{build_vocab, encode, TokenSequence, CLS_ID, DOMAIN_TOKENS};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- 1

fn random_params(m: &mut EncoderModel<f64>, rng: &mut ChaCha8Rng) {
    for p in m.params_mut() {
        let noise = Tensor::<f64>::randn(p.shape(), 0.5, rng);
        p.values_mut().iter_mut().zip(noise.values()).for_each(|(v, n)| *v += n);
    }
}

fn random_seq(rng: &mut ChaCha8Rng, vocab: usize, max_len: usize) -> TokenSequence {
    let len = rng.random_range(1..=max_len);
    let mut ids = vec![0u32; max_len];
    let mut mask = vec![0u8; max_len];
    ids[0] = CLS_ID;
    mask[0] = 1;
    for i in 1..len {
        ids[i] = rng.random_range(3..vocab as u32);
        mask[i] = 1;
    }
    TokenSequence {
        ids,
        mask,
        true_length: len,
    }
}

fn loss_of(m: &EncoderModel<f64>, batch: &[&TokenSequence], labels: &[usize], alpha: f64) -> f64 {
    let mut g = Graph::new(false);
    let b = m.bind_frozen(&mut g);
    let out = m.forward_batch(&mut g, &b, batch, None, 0).unwrap();
    let l = heated_ce_graph(&mut g, out.logits, labels, alpha).unwrap();
    g.value(l)[0]
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let alphas = [0.5, 1.0, 4.0];
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut max_params = 0;
    let models = 24;
    for k in 0..models {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + k);
        let cfg = ModelConfig {
            vocab_size: 10,
            max_len: 4,
            hidden_dim: 4,
            num_layers: 1,
            num_heads: 2,
            ff_dim: 4,
            dropout: 0.0,
            seed: k,
            ..ModelConfig::default()
        };
        let mut m = EncoderModel::<f64>::new(cfg).unwrap();
        max_params = max_params.max(m.parameter_count());
        random_params(&mut m, &mut rng);
        let seqs: Vec<TokenSequence> = (0..3).map(|_| random_seq(&mut rng, 10, 4)).collect();
        let batch: Vec<&TokenSequence> = seqs.iter().collect();
        let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..2)).collect();
        let alpha = alphas[k as usize % 3];

        let mut g = Graph::new(false);
        let b = m.bind(&mut g);
        let out = m.forward_batch(&mut g, &b, &batch, None, 0).unwrap();
        let l = heated_ce_graph(&mut g, out.logits, &labels, alpha).unwrap();
        g.backward(l).unwrap();
        let grads = m.collect_grads(&g, &b);
        for pi in 0..grads.len() {
            for j in 0..grads[pi].len() {
                let orig = m.params()[pi].values()[j];
                m.params_mut()[pi].values_mut()[j] = orig + h;
                let up = loss_of(&m, &batch, &labels, alpha);
                m.params_mut()[pi].values_mut()[j] = orig - h;
                let down = loss_of(&m, &batch, &labels, alpha);
                m.params_mut()[pi].values_mut()[j] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = grads[pi][j];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(REL_FLOOR);
                worst = worst.max(rel);
            }
        }
    }
    let took = start.elapsed();
    outcome(
        worst < 1e-4 && max_params <= 500 && took < Duration::from_secs(60),
        format!("{models} models, ≤{max_params} params, max rel err {worst:.2e}, {took:.1?}"),
    )
}

/// Gradients smaller than this are compared on an absolute scale, since
/// central differences cannot resolve a relative error below roundoff.
const REL_FLOOR: f64 = 1e-6;

// ---------------------------------------------------------------- 2

fn plain_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn softmax_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut bitwise = true;
    let mut sum_err: f64 = 0.0;
    let mut entropy_ok = true;
    let mut grad_err: f64 = 0.0;
    for _ in 0..100 {
        let mut z: [f64; 2] = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
        if (z[0] - z[1]).abs() < 1e-3 {
            z[1] += 0.5;
        }
        let t = Tensor::vector(&z);
        let p1 = softmax_scaled(&t, 1.0).unwrap();
        bitwise &= p1.values() == plain_softmax(&z).as_slice();
        let mut last = f64::INFINITY;
        for alpha in [0.5, 1.0, 2.0, 4.0] {
            let p = softmax_scaled(&t, alpha).unwrap();
            sum_err = sum_err.max((p.values().iter().sum::<f64>() - 1.0).abs());
            let h = entropy(p.values());
            entropy_ok &= h < last;
            last = h;
            for label in 0..2 {
                let mut g = Graph::new(false);
                let v = g.variable(1, 2, z.to_vec());
                let l = heated_ce_graph(&mut g, v, &[label], alpha).unwrap();
                g.backward(l).unwrap();
                let grad = g.grad(v).unwrap();
                for j in 0..2 {
                    let expect = alpha * (p.values()[j] - if j == label { 1.0 } else { 0.0 });
                    grad_err = grad_err.max((grad[j] - expect).abs());
                }
            }
        }
    }
    outcome(
        bitwise && sum_err <= 1e-12 && entropy_ok && grad_err <= 1e-10,
        format!(
            "α=1 bitwise {bitwise}, |Σp−1| ≤ {sum_err:.1e}, entropy decreasing {entropy_ok}, grad err {grad_err:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- 3

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn fgm_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut norm_err: f64 = 0.0;
    let mut inner_err: f64 = 0.0;
    let mut beaten = 0usize;
    let trials = 1000;
    for _ in 0..trials {
        // a single-element tensor has only two directions, so a random draw
        // ties with r_adv; every trial has at least two
        let (rows, cols) = (rng.random_range(1..6), rng.random_range(2..9));
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let g = Tensor::<f64>::randn(&[rows, cols], scale, &mut rng);
        let eps = rng.random_range(0.01..2.0);
        let r = fgm_perturbation(&g, eps).unwrap().r_adv;
        let gn = g.l2_norm();
        norm_err = norm_err.max((r.l2_norm() - eps).abs());
        inner_err = inner_err.max((dot(r.values(), g.values()) + eps * gn).abs() / (eps * gn));
        // the loss gradient is −g; a first-order loss change is ⟨δ, −g⟩
        let gain = -dot(r.values(), g.values());
        let wins = (0..1000).all(|_| {
            let u = Tensor::<f64>::randn(&[rows, cols], 1.0, &mut rng);
            let k = eps / u.l2_norm();
            let ugain = -dot(u.values(), g.values()) * k;
            gain > ugain
        });
        beaten += usize::from(wins);
    }
    outcome(
        norm_err <= 1e-9 && inner_err <= 1e-9 && beaten == trials,
        format!(
            "{trials} gradients: |‖r‖−ε| ≤ {norm_err:.1e}, rel inner-product err {inner_err:.1e}, beats random in {beaten}/{trials}"
        ),
    )
}

// ---------------------------------------------------------------- 4

fn tiny_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = seed;
    cfg.model.hidden_dim = 32;
    cfg.model.num_layers = 1;
    cfg.model.num_heads = 2;
    cfg.model.ff_dim = 64;
    cfg.model.max_len = 16;
    cfg.vocab.target_size = 64;
    cfg.vocab.auto_new_tokens = Some(6);
    cfg.train.epochs = 15;
    cfg.train.batch_size = 16;
    cfg.train.lr = 5e-3;
    cfg.train.patience = None;
    cfg.schedule = TemperatureSchedule::new(vec![(0, 4.0), (5, 1.0), (10, 0.5)]).unwrap();
    cfg.adv.epsilon = 0.1;
    cfg.augment.rounds = 0;
    cfg
}

fn baseline(mut cfg: RunConfig) -> RunConfig {
    cfg.adv.enabled = false;
    cfg.toggles.heated_loss = false;
    cfg.toggles.new_tokens = false;
    cfg.toggles.fusion = false;
    cfg
}

fn adversarial_loss_property() -> Outcome {
    let mut higher = 0;
    let mut total = 0;
    for s in 0..2u64 {
        let corpus = SynthCorpus::new(CorpusKind::Noisy, 40 + s);
        let data = corpus.prepared();
        let mut cfg = baseline(tiny_config(s));
        cfg.train.epochs = 4;
        cfg.model.dropout = 0.0;
        let vocab = prepare_vocab(&cfg, &data.train, &data.validation).unwrap();
        let out = train(&cfg, &vocab, &data.train, &data.validation, 0).unwrap();
        let mut model = out.artifact.model;
        let pool = Encoded::all(&data.train, &vocab, cfg.model.max_len);
        let adv = AdvConfig {
            epsilon: 0.1,
            ..AdvConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(400 + s);
        for _ in 0..50 {
            let idx: Vec<usize> = (0..8).map(|_| rng.random_range(0..pool.len())).collect();
            let batch: Vec<&TokenSequence> = idx.iter().map(|&i| &pool[i].seq).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| pool[i].label.index()).collect();
            let rec = adversarial_training_step(&mut model, &batch, &labels, 1.0, &adv, 0).unwrap();
            total += 1;
            if rec.adv_loss.is_some_and(|a| a >= rec.clean_loss) {
                higher += 1;
            }
        }
    }
    let frac = higher as f64 / total as f64;
    outcome(
        frac >= 0.95,
        format!("adv ≥ clean on {higher}/{total} batches (ε=0.1, 2 trained models)"),
    )
}

// ---------------------------------------------------------------- 5

fn brute_force(preds: &[usize], labels: &[usize]) -> (f64, f64, f64) {
    let n = labels.len() as f64;
    let (mut wp, mut wr) = (0.0, 0.0);
    for c in 0..2 {
        let support = labels.iter().filter(|&&y| y == c).count();
        let predicted = preds.iter().filter(|&&p| p == c).count();
        let hit = preds.iter().zip(labels).filter(|(&p, &y)| p == c && y == c).count();
        let precision = if predicted == 0 { 0.0 } else { hit as f64 / predicted as f64 };
        let recall = if support == 0 { 0.0 } else { hit as f64 / support as f64 };
        let w = support as f64 / n;
        wp += w * precision;
        wr += w * recall;
    }
    let f1 = if wp + wr > 0.0 { 2.0 * wp * wr / (wp + wr) } else { 0.0 };
    (wp, wr, f1)
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..40);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let r = weighted_report(&confusion_counts(&preds, &labels).unwrap()).unwrap();
        let (p, rc, f) = brute_force(&preds, &labels);
        if (r.precision, r.recall, r.f1) != (p, rc, f) {
            mismatches += 1;
        }
    }
    let hand = weighted_report(&confusion_counts(&[0, 0, 1, 1], &[0, 0, 0, 1]).unwrap()).unwrap();
    let hand_ok = (hand.precision - 0.875).abs() <= 1e-6
        && (hand.recall - 0.75).abs() <= 1e-6
        && (hand.f1 - 0.807692).abs() <= 1e-6;
    outcome(
        mismatches == 0 && hand_ok,
        format!(
            "{mismatches}/1000 mismatches; hand example P/R/F1 = {:.6}/{:.6}/{:.6}",
            hand.precision, hand.recall, hand.f1
        ),
    )
}

// ---------------------------------------------------------------- 6

const GENERAL_NEWS: [&str; 10] = [
    "officials confirm new cases in several districts",
    "doctors warn against rumours spreading online",
    "people line up for vaccine doses across india",
    "schools reopen after months of closure",
    "health ministry shares daily testing figures",
    "x-ray scans show damage in patients since 2019",
    "markets fall as workers stay home",
    "volunteers deliver food to elderly citizens",
    "scientists study how the virus spreads indoors",
    "hospitals add beds and oxygen supply",
];

fn tokenizer_extension() -> Outcome {
    let vocab = build_vocab(&GENERAL_NEWS, 80).unwrap();
    let before: Vec<usize> = DOMAIN_TOKENS
        .iter()
        .map(|t| encode(t, &vocab, 32).true_length - 1)
        .collect();
    let (ext, added) = vocab.extend(&DOMAIN_TOKENS);
    let after: Vec<usize> = DOMAIN_TOKENS
        .iter()
        .map(|t| {
            let s = encode(t, &ext, 32);
            let single = s.true_length == 2 && ext.token(s.ids[1]) == Some(*t);
            if single { 1 } else { s.true_length - 1 }
        })
        .collect();
    outcome(
        added == 6 && before.iter().all(|&n| n >= 2) && after.iter().all(|&n| n == 1),
        format!("pieces before {before:?}, after {after:?}"),
    )
}

// ---------------------------------------------------------------- 7

fn separable_data() -> PreparedData {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/data/synth/separable");
    let stop = StopWords::english();
    let load = |name: &str, split| load_split(std::path::Path::new(&format!("{dir}/{name}")), None, split, &stop).unwrap();
    PreparedData {
        train: load("train.tsv", Split::Train),
        validation: load("validation.tsv", Split::Validation),
        test: Some(load("test.tsv", Split::Test)),
    }
}

fn desk_scale_learning() -> Outcome {
    let start = Instant::now();
    let data = separable_data();
    let mut cfg = baseline(tiny_config(7));
    cfg.vocab.target_size = 200;
    let out = run_pipeline(&cfg, &data).unwrap();
    let took = start.elapsed();
    let first = out.log.epochs.iter().find(|e| e.val_accuracy >= 0.95).map(|e| e.epoch);
    let best = out.log.epochs.iter().map(|e| e.val_accuracy).fold(0.0, f64::max);
    outcome(
        first.is_some() && took < Duration::from_secs(300),
        format!(
            "{} train / {} val, val acc ≥ 0.95 first at epoch {} of 15 (best {best:.2}), {took:.1?}",
            data.train.len(),
            data.validation.len(),
            first.map_or("never".to_string(), |e| e.to_string())
        ),
    )
}

// ---------------------------------------------------------------- 8

fn ablation_direction() -> Outcome {
    let seeds = 5u64;
    let names = ["baseline", "+fgm", "+heated-loss", "+all-three"];
    let mut means = [0.0; 4];
    for s in 0..seeds {
        let data = SynthCorpus::new(CorpusKind::Noisy, 100 + s).prepared();
        let base = tiny_config(s);
        let configs = [
            baseline(base.clone()),
            RunConfig {
                adv: AdvConfig {
                    enabled: true,
                    ..base.adv.clone()
                },
                ..baseline(base.clone())
            },
            {
                let mut c = baseline(base.clone());
                c.toggles.heated_loss = true;
                c
            },
            {
                let mut c = base.clone();
                c.adv.enabled = true;
                c.toggles.heated_loss = true;
                c.toggles.new_tokens = true;
                c
            },
        ];
        for (m, cfg) in means.iter_mut().zip(&configs) {
            let out = run_pipeline(cfg, &data).unwrap();
            *m += out.test.unwrap().f1 / seeds as f64;
        }
    }
    let noisy_ok = means[1..].iter().all(|&m| m >= means[0] - 0.005);

    let mut fusion = [0.0; 3];
    for s in 0..seeds {
        let corpus = SynthCorpus::new(CorpusKind::Complementary, 200 + s);
        let data = corpus.prepared();
        let cfg = baseline(tiny_config(s));
        let source = |hidden: &[&String], seed: u64| {
            let mut c = cfg.clone();
            c.seed = seed;
            let visible = strip_words(&data.train, hidden.iter().copied());
            let vocab = prepare_vocab(&c, &visible, &[]).unwrap();
            match run_with_vocab(&c, &data, &vocab).unwrap().artifact {
                Artifact::Single(m) => m,
                Artifact::Fused(_) => unreachable!(),
            }
        };
        let fam_a: Vec<&String> = corpus.keywords.family_a_words().collect();
        let fam_b: Vec<&String> = corpus.keywords.family_b_words().collect();
        let a = source(&fam_b, s);
        let b = source(&fam_a, mix_seed(s, 0xB));
        let fused = train_fused(&a, &b, &data.validation, &cfg.fusion, s).unwrap().fused;
        let test = data.test.as_ref().unwrap();
        for (slot, art) in fusion.iter_mut().zip([
            Artifact::Single(a),
            Artifact::Single(b),
            Artifact::Fused(fused),
        ]) {
            *slot += evaluate(&art, test, 128).unwrap().0.f1 / seeds as f64;
        }
    }
    let fused_ok = fusion[2] >= fusion[0] - 0.005 && fusion[2] >= fusion[1] - 0.005;
    let noisy: Vec<String> = names.iter().zip(means).map(|(n, m)| format!("{n} {m:.4}")).collect();
    outcome(
        noisy_ok && fused_ok,
        format!(
            "noisy mean F1: {}; complementary: A {:.4}, B {:.4}, fused {:.4}",
            noisy.join(", "),
            fusion[0],
            fusion[1],
            fusion[2]
        ),
    )
}

// ---------------------------------------------------------------- 9

fn determinism_and_persistence() -> Outcome {
    let data = SynthCorpus::new(CorpusKind::Noisy, 9).prepared();
    let mut cfg = tiny_config(9);
    cfg.train.epochs = 4;
    cfg.schedule = TemperatureSchedule::new(vec![(0, 4.0), (2, 1.0), (3, 0.5)]).unwrap();
    cfg.augment.rounds = 1;
    let run = || {
        let out = run_pipeline(&cfg, &data).unwrap();
        let mut preds = Vec::new();
        write_predictions(&mut preds, &out.predictions).unwrap();
        (out, preds)
    };
    let (a, pa) = run();
    let (b, pb) = run();
    let same_log = a.log.to_jsonl() == b.log.to_jsonl();
    let same_preds = pa == pb;

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.bin");
    a.artifact.save(&path).unwrap();
    let loaded = Artifact::load(&path).unwrap();
    let test = data.test.as_ref().unwrap();
    let before = evaluate(&a.artifact, test, 128).unwrap();
    let after = evaluate(&loaded, test, 128).unwrap();
    let persisted = before == after && after.0 == *a.test.as_ref().unwrap();
    outcome(
        same_log && same_preds && persisted,
        format!("trainlog identical {same_log}, predictions identical {same_preds}, reload reproduces report {persisted}"),
    )
}

// ---------------------------------------------------------------- 10

fn augmentation_contract() -> Outcome {
    let lexicon = Lexicon::english();
    let mut hard: Vec<CleanedExample> = GENERAL_NEWS
        .iter()
        .chain(&[
            "garlic water cures virus overnight",
            "drinking hot tea kills the germ fast",
            "doctors say masks help stop the spread",
        ])
        .enumerate()
        .map(|(i, t)| CleanedExample {
            id: format!("h{i}"),
            tokens_text: t.to_string(),
            label: if i % 2 == 0 { Label::Fake } else { Label::Real },
        })
        .collect();
    hard.extend(SynthCorpus::new(CorpusKind::Noisy, 10).prepared().train.into_iter().take(40));
    let mut bad = Vec::new();
    let mut kinds = [0usize; 2];
    for round in 1..=2 {
        let out = augment(&hard, &lexicon, 10, round);
        if out != augment(&hard, &lexicon, 10, round) {
            bad.push("not reproducible".to_string());
        }
        for (new, rec) in &out {
            let src = hard.iter().find(|e| e.id == rec.source_id).unwrap();
            let sw: Vec<&str> = src.tokens_text.split_whitespace().collect();
            let nw: Vec<&str> = new.tokens_text.split_whitespace().collect();
            let ok = new.label == src.label
                && new.id == format!("{}~r{round}", src.id)
                && (1..=2).contains(&rec.positions.len())
                && match rec.transformation {
                    Transformation::SynonymSwap => {
                        kinds[0] += 1;
                        nw.len() == sw.len()
                            && (0..sw.len()).all(|i| {
                                if rec.positions.contains(&i) {
                                    lexicon.synonyms(sw[i]).is_some_and(|s| s.iter().any(|x| x == nw[i]))
                                } else {
                                    nw[i] == sw[i]
                                }
                            })
                    }
                    Transformation::WordDrop => {
                        kinds[1] += 1;
                        let kept: Vec<&str> = (0..sw.len())
                            .filter(|i| !rec.positions.contains(i))
                            .map(|i| sw[i])
                            .collect();
                        kept == nw
                    }
                };
            if !ok {
                bad.push(rec.source_id.clone());
            }
        }
    }
    outcome(
        bad.is_empty() && kinds.iter().all(|&k| k > 0),
        format!("{} swaps, {} drops, violations {bad:?}", kinds[0], kinds[1]),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient fidelity", gradient_fidelity),
        ("heated softmax contract", softmax_contract),
        ("FGM perturbation contract", fgm_contract),
        ("adversarial loss property", adversarial_loss_property),
        ("weighted metrics oracle", metrics_oracle),
        ("tokenizer extension", tokenizer_extension),
        ("desk-scale learning", desk_scale_learning),
        ("ablation direction", ablation_direction),
        ("determinism and persistence", determinism_and_persistence),
        ("augmentation contract", augmentation_contract),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|s| s == &n.to_string() || name.contains(s.as_str())) {
            continue;
        }
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        println!(
            "{} criterion {n:>2} [PRIMARY] {name}: {}",
            if res.pass { "PASS" } else { "FAIL" },
            res.detail
        );
        failed += usize::from(!res.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
