use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mix_seed, EncoderError};
use crate::ndtensor::{Checkpoint, Graph, Tensor, Var};
use crate::scalar::Scalar;
use crate::tokenizer::{self, TokenSequence, Vocabulary};

/// Standard deviation of the normal initializer for weight matrices and
/// embedding tables.
pub const INIT_STD: f64 = 0.02;

const PARAMS_PER_LAYER: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
    pub num_classes: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 1000,
            max_len: tokenizer::DEFAULT_MAX_LEN,
            hidden_dim: 64,
            num_layers: 2,
            num_heads: 2,
            ff_dim: 128,
            num_classes: 2,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: String| Err(EncoderError::InvalidConfig(m));
        if self.vocab_size <= tokenizer::CLS_ID as usize {
            return bad(format!("vocab_size {} must exceed the special tokens", self.vocab_size));
        }
        if self.max_len == 0 || self.hidden_dim == 0 || self.num_heads == 0 || self.ff_dim == 0 {
            return bad("max_len, hidden_dim, num_heads and ff_dim must be positive".into());
        }
        if !self.hidden_dim.is_multiple_of(self.num_heads) {
            return bad(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.num_classes != 2 {
            return bad(format!("num_classes must be 2, got {}", self.num_classes));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Closed-form parameter count:
    /// `V·H + L·H + layers·(4H² + 2HF + 9H + F) + 4H + 2`.
    pub fn parameter_count(&self) -> usize {
        let (v, l, h, f) = (self.vocab_size, self.max_len, self.hidden_dim, self.ff_dim);
        v * h + l * h + self.num_layers * (4 * h * h + 2 * h * f + 9 * h + f) + 4 * h + 2
    }
}

/// Graph handles for one binding of the model parameters.
#[derive(Clone, Debug)]
pub struct Bound {
    pub vars: Vec<Var>,
}

/// Graph handles produced by a batch forward pass.
#[derive(Clone, Debug)]
pub struct BatchOutput {
    /// `[B × 2]` logits.
    pub logits: Var,
    /// `[1 × H]` CLS representation per example.
    pub pooled: Vec<Var>,
    /// Clean `[max_len × H]` embedding per example (before any perturbation).
    pub embeddings: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictedFeatures<T> {
    pub logits: Tensor<T>,
    pub pooled: Tensor<T>,
}

/// Pre-norm transformer encoder with a CLS classification head.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel<T> {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
}

struct LayerIdx {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

impl LayerIdx {
    fn new(layer: usize) -> Self {
        let o = 2 + layer * PARAMS_PER_LAYER;
        Self {
            ln1_g: o,
            ln1_b: o + 1,
            wq: o + 2,
            bq: o + 3,
            wk: o + 4,
            bk: o + 5,
            wv: o + 6,
            bv: o + 7,
            wo: o + 8,
            bo: o + 9,
            ln2_g: o + 10,
            ln2_b: o + 11,
            w1: o + 12,
            b1: o + 13,
            w2: o + 14,
            b2: o + 15,
        }
    }
}

const TOK_EMB: usize = 0;
const POS_EMB: usize = 1;

impl<T: Scalar> EncoderModel<T> {
    /// Draws every weight from `N(0, 0.02²)` using `config.seed`; biases
    /// start at zero and layer-norm gains at one.
    pub fn new(config: ModelConfig) -> Result<Self, EncoderError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (v, l, h, f) = (config.vocab_size, config.max_len, config.hidden_dim, config.ff_dim);
        let mut names = Vec::new();
        let mut params = Vec::new();
        let mut add = |name: String, t: Tensor<T>| {
            names.push(name);
            params.push(t.requiring_grad());
        };
        add("tok_emb".into(), Tensor::randn(&[v, h], INIT_STD, &mut rng));
        add("pos_emb".into(), Tensor::randn(&[l, h], INIT_STD, &mut rng));
        for i in 0..config.num_layers {
            let p = format!("layer{i}.");
            add(format!("{p}ln1.gain"), Tensor::ones(&[h]));
            add(format!("{p}ln1.bias"), Tensor::zeros(&[h]));
            for w in ["q", "k", "v", "o"] {
                add(format!("{p}attn.w{w}"), Tensor::randn(&[h, h], INIT_STD, &mut rng));
                add(format!("{p}attn.b{w}"), Tensor::zeros(&[h]));
            }
            add(format!("{p}ln2.gain"), Tensor::ones(&[h]));
            add(format!("{p}ln2.bias"), Tensor::zeros(&[h]));
            add(format!("{p}ff.w1"), Tensor::randn(&[h, f], INIT_STD, &mut rng));
            add(format!("{p}ff.b1"), Tensor::zeros(&[f]));
            add(format!("{p}ff.w2"), Tensor::randn(&[f, h], INIT_STD, &mut rng));
            add(format!("{p}ff.b2"), Tensor::zeros(&[h]));
        }
        add("ln_f.gain".into(), Tensor::ones(&[h]));
        add("ln_f.bias".into(), Tensor::zeros(&[h]));
        add("cls.weight".into(), Tensor::randn(&[h, 2], INIT_STD, &mut rng));
        add("cls.bias".into(), Tensor::zeros(&[2]));
        Ok(Self {
            config,
            names,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.params[i])
    }

    pub fn token_embeddings(&self) -> &Tensor<T> {
        &self.params[TOK_EMB]
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Appends embedding rows for vocabulary entries beyond the current
    /// table, initialized from their base-vocabulary pieces. Returns the
    /// number of rows added.
    pub fn grow_vocab(&mut self, vocab: &Vocabulary) -> Result<usize, EncoderError> {
        let current = self.config.vocab_size;
        if vocab.len() <= current {
            return Ok(0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.config.seed, 0x61_6464_6564));
        let mut rows = Vec::new();
        for id in current..vocab.len() {
            let token = vocab.token(id as u32).expect("id within vocabulary");
            rows.extend(tokenizer::init_added_token_embedding(
                vocab,
                &self.params[TOK_EMB],
                token,
                &mut rng,
            )?);
        }
        self.params[TOK_EMB].push_rows(&rows)?;
        self.config.vocab_size = vocab.len();
        Ok(vocab.len() - current)
    }

    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| g.leaf(p)).collect(),
        }
    }

    fn check_ids(&self, seq: &TokenSequence) -> Result<(), EncoderError> {
        if seq.ids.len() > self.config.max_len {
            return Err(EncoderError::SequenceTooLong {
                len: seq.ids.len(),
                max_len: self.config.max_len,
            });
        }
        match seq.ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            Some(&id) => Err(EncoderError::IdOutOfRange {
                id,
                vocab_size: self.config.vocab_size,
            }),
            None => Ok(()),
        }
    }

    /// Token plus position embedding for every slot, `[len × H]`. This is
    /// where adversarial perturbations are applied.
    pub fn embed(&self, g: &mut Graph<T>, bound: &Bound, seq: &TokenSequence) -> Result<Var, EncoderError> {
        self.check_ids(seq)?;
        let ids: Vec<usize> = seq.ids.iter().map(|&i| i as usize).collect();
        let tok = g.gather_rows(bound.vars[TOK_EMB], &ids)?;
        let pos = g.slice_rows(bound.vars[POS_EMB], 0, ids.len())?;
        Ok(g.add(tok, pos)?)
    }

    /// Encoder stack over `embeddings` (`[len × H]`). Rows after the last
    /// unmasked position are never read; masked keys inside that span get
    /// the masked attention score.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        embeddings: Var,
        mask: &[u8],
        dropout_seed: u64,
    ) -> Result<(Var, Var), EncoderError> {
        let (len, h) = g.dims(embeddings);
        if h != self.config.hidden_dim || mask.len() != len {
            return Err(EncoderError::Tensor(crate::ndtensor::TensorError::ShapeMismatch {
                op: "forward",
                left: vec![len, h],
                right: vec![mask.len(), self.config.hidden_dim],
            }));
        }
        let span = mask.iter().rposition(|&m| m != 0).map_or(1, |p| p + 1);
        let key_mask = &mask[..span];
        let p = &bound.vars;
        let heads = self.config.num_heads;
        let dh = h / heads;
        let att_scale = T::lit(1.0 / (dh as f64).sqrt());
        let rate = if g.is_training() { self.config.dropout } else { 0.0 };

        let mut x = g.slice_rows(embeddings, 0, span)?;
        for layer in 0..self.config.num_layers {
            let ix = LayerIdx::new(layer);
            let site = |k: u64| mix_seed(dropout_seed, (layer as u64) * 8 + k);

            let hn = g.layer_norm(x, p[ix.ln1_g], p[ix.ln1_b])?;
            let q = linear(g, hn, p[ix.wq], p[ix.bq])?;
            let k = linear(g, hn, p[ix.wk], p[ix.bk])?;
            let v = linear(g, hn, p[ix.wv], p[ix.bv])?;
            let mut head_out = Vec::with_capacity(heads);
            for hd in 0..heads {
                let qh = g.slice_cols(q, hd * dh, dh)?;
                let kh = g.slice_cols(k, hd * dh, dh)?;
                let vh = g.slice_cols(v, hd * dh, dh)?;
                let kt = g.transpose(kh);
                let scores = g.matmul(qh, kt)?;
                let att = g.masked_softmax(scores, att_scale, key_mask)?;
                head_out.push(g.matmul(att, vh)?);
            }
            let cat = if heads == 1 { head_out[0] } else { g.concat_cols(&head_out)? };
            let o = linear(g, cat, p[ix.wo], p[ix.bo])?;
            let o = g.dropout(o, rate, site(0));
            x = g.add(x, o)?;

            let hn = g.layer_norm(x, p[ix.ln2_g], p[ix.ln2_b])?;
            let f = linear(g, hn, p[ix.w1], p[ix.b1])?;
            let f = g.gelu(f);
            let f = linear(g, f, p[ix.w2], p[ix.b2])?;
            let f = g.dropout(f, rate, site(1));
            x = g.add(x, f)?;
        }
        let n = p.len();
        let cls = g.slice_rows(x, 0, 1)?;
        let pooled = g.layer_norm(cls, p[n - 4], p[n - 3])?;
        let logits = linear(g, pooled, p[n - 2], p[n - 1])?;
        Ok((logits, pooled))
    }

    /// Forward pass over a batch. `perturb[i]`, when given, is added to the
    /// clean embedding of example `i` as a constant.
    pub fn forward_batch(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        batch: &[&TokenSequence],
        perturb: Option<&[Tensor<T>]>,
        dropout_seed: u64,
    ) -> Result<BatchOutput, EncoderError> {
        let mut logits = Vec::with_capacity(batch.len());
        let mut pooled = Vec::with_capacity(batch.len());
        let mut embeddings = Vec::with_capacity(batch.len());
        for (i, seq) in batch.iter().enumerate() {
            let emb = self.embed(g, bound, seq)?;
            embeddings.push(emb);
            let input = match perturb {
                Some(rs) => {
                    let (r, c) = g.dims(emb);
                    let delta = g.constant(r, c, rs[i].values().to_vec());
                    g.add(emb, delta)?
                }
                None => emb,
            };
            let (l, pl) = self.forward(g, bound, input, &seq.mask, mix_seed(dropout_seed, i as u64))?;
            logits.push(l);
            pooled.push(pl);
        }
        let logits = g.concat_rows(&logits)?;
        Ok(BatchOutput {
            logits,
            pooled,
            embeddings,
        })
    }

    /// Evaluation-mode features for one sequence.
    pub fn predict(&self, seq: &TokenSequence) -> Result<PredictedFeatures<T>, EncoderError> {
        let mut g = Graph::new(false);
        let bound = self.bind_frozen(&mut g);
        let emb = self.embed(&mut g, &bound, seq)?;
        let (logits, pooled) = self.forward(&mut g, &bound, emb, &seq.mask, 0)?;
        Ok(PredictedFeatures {
            logits: Tensor::vector(g.value(logits)),
            pooled: Tensor::vector(g.value(pooled)),
        })
    }

    /// Binds parameters as constants (no gradient bookkeeping).
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| {
                    let (r, c) = p.dims2();
                    g.constant(r, c, p.values().to_vec())
                })
                .collect(),
        }
    }

    /// Copies parameter gradients out of a differentiated graph.
    pub fn collect_grads(&self, g: &Graph<T>, bound: &Bound) -> Vec<Vec<T>> {
        bound
            .vars
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| g.grad(v).map_or_else(|| vec![T::zero(); p.len()], <[T]>::to_vec))
            .collect()
    }

    pub fn set_grads(&mut self, grads: Vec<Vec<T>>) -> Result<(), EncoderError> {
        for (p, g) in self.params.iter_mut().zip(grads) {
            p.set_grad(g)?;
        }
        Ok(())
    }

    /// Writes parameters under `prefix` and records the config in `meta`.
    pub fn write_checkpoint(&self, ck: &mut Checkpoint, prefix: &str) {
        for (n, p) in self.names.iter().zip(&self.params) {
            ck.push(format!("{prefix}{n}"), p);
        }
    }

    pub fn from_checkpoint(config: ModelConfig, ck: &Checkpoint, prefix: &str) -> Result<Self, EncoderError> {
        let mut model = Self::new(config)?;
        for (n, p) in model.names.iter().zip(model.params.iter_mut()) {
            let block = ck.block(&format!("{prefix}{n}"))?;
            if block.shape != p.shape() {
                return Err(EncoderError::Checkpoint(crate::ndtensor::CheckpointError::Malformed(
                    format!("{n}: shape {:?}, expected {:?}", block.shape, p.shape()),
                )));
            }
            let mut t: Tensor<T> = block.to_tensor()?;
            t.set_requires_grad(true);
            *p = t;
        }
        Ok(model)
    }
}

fn linear<T: Scalar>(g: &mut Graph<T>, x: Var, w: Var, b: Var) -> Result<Var, EncoderError> {
    let y = g.matmul(x, w)?;
    Ok(g.add_row(y, b)?)
}
