use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EncoderError, PredictedFeatures};
use crate::ndtensor::{Checkpoint, Graph, Tensor, Var};
use crate::scalar::Scalar;

/// Default width of the fusion hidden layer.
pub const DEFAULT_FUSION_HIDDEN: usize = 16;

/// Which predicted features feed the fusion head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Both models' logits: input width 4.
    LogitsOnly,
    /// Logits plus both CLS vectors: width `4 + H_a + H_b`.
    LogitsPooled,
}

/// One-hidden-layer MLP over concatenated source features.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionHead<T> {
    mode: FusionMode,
    hidden_a: usize,
    hidden_b: usize,
    /// `[w1 (in×hid), b1 (hid), w2 (hid×2), b2 (2)]`
    params: Vec<Tensor<T>>,
}

const NAMES: [&str; 4] = ["w1", "b1", "w2", "b2"];

impl<T: Scalar> FusionHead<T> {
    /// He-normal hidden weights, `N(0, 1/hid)` output weights, zero biases.
    pub fn new(mode: FusionMode, hidden_a: usize, hidden_b: usize, fusion_hidden: usize, seed: u64) -> Self {
        let in_dim = input_width(mode, hidden_a, hidden_b);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = vec![
            Tensor::randn(&[in_dim, fusion_hidden], (2.0 / in_dim as f64).sqrt(), &mut rng).requiring_grad(),
            Tensor::zeros(&[fusion_hidden]).requiring_grad(),
            Tensor::randn(&[fusion_hidden, 2], (1.0 / fusion_hidden as f64).sqrt(), &mut rng).requiring_grad(),
            Tensor::zeros(&[2]).requiring_grad(),
        ];
        Self {
            mode,
            hidden_a,
            hidden_b,
            params,
        }
    }

    /// A head whose output equals `fa.logits` exactly: hidden units carry
    /// `relu(±z)` and the output layer recombines `relu(z) − relu(−z)`.
    pub fn pass_through(mode: FusionMode, hidden_a: usize, hidden_b: usize, fusion_hidden: usize) -> Self {
        assert!(fusion_hidden >= 4, "pass-through needs four hidden units");
        let mut head = Self::new(mode, hidden_a, hidden_b, fusion_hidden, 0);
        let in_dim = head.input_width();
        let mut w1 = vec![T::zero(); in_dim * fusion_hidden];
        let mut w2 = vec![T::zero(); fusion_hidden * 2];
        for class in 0..2 {
            let (pos, neg) = (2 * class, 2 * class + 1);
            w1[class * fusion_hidden + pos] = T::one();
            w1[class * fusion_hidden + neg] = -T::one();
            w2[pos * 2 + class] = T::one();
            w2[neg * 2 + class] = -T::one();
        }
        head.params[0] = Tensor::new(&[in_dim, fusion_hidden], w1).expect("shape").requiring_grad();
        head.params[1] = Tensor::zeros(&[fusion_hidden]).requiring_grad();
        head.params[2] = Tensor::new(&[fusion_hidden, 2], w2).expect("shape").requiring_grad();
        head.params[3] = Tensor::zeros(&[2]).requiring_grad();
        head
    }

    pub fn mode(&self) -> FusionMode {
        self.mode
    }

    pub fn input_width(&self) -> usize {
        input_width(self.mode, self.hidden_a, self.hidden_b)
    }

    pub fn fusion_hidden(&self) -> usize {
        self.params[1].len()
    }

    pub fn source_widths(&self) -> (usize, usize) {
        (self.hidden_a, self.hidden_b)
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    /// Concatenates the features this head consumes.
    pub fn features(&self, fa: &PredictedFeatures<T>, fb: &PredictedFeatures<T>) -> Result<Vec<T>, EncoderError> {
        let mut v = Vec::with_capacity(self.input_width());
        v.extend_from_slice(fa.logits.values());
        v.extend_from_slice(fb.logits.values());
        if self.mode == FusionMode::LogitsPooled {
            v.extend_from_slice(fa.pooled.values());
            v.extend_from_slice(fb.pooled.values());
        }
        if v.len() != self.input_width() || fa.logits.len() != 2 || fb.logits.len() != 2 {
            return Err(EncoderError::WidthMismatch {
                expected: self.input_width(),
                found: v.len(),
            });
        }
        Ok(v)
    }

    /// Graph form: `relu(x·W1 + b1)·W2 + b2` for `x` of shape `[B × in]`.
    pub fn forward_graph(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<Var, EncoderError> {
        let (_, w) = g.dims(x);
        if w != self.input_width() {
            return Err(EncoderError::WidthMismatch {
                expected: self.input_width(),
                found: w,
            });
        }
        let h = g.matmul(x, vars[0])?;
        let h = g.add_row(h, vars[1])?;
        let h = g.relu(h);
        let o = g.matmul(h, vars[2])?;
        Ok(g.add_row(o, vars[3])?)
    }

    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.params.iter().map(|p| g.leaf(p)).collect()
    }

    pub fn write_checkpoint(&self, ck: &mut Checkpoint, prefix: &str) {
        for (n, p) in NAMES.iter().zip(&self.params) {
            ck.push(format!("{prefix}{n}"), p);
        }
    }

    pub fn from_checkpoint(
        mode: FusionMode,
        hidden_a: usize,
        hidden_b: usize,
        ck: &Checkpoint,
        prefix: &str,
    ) -> Result<Self, EncoderError> {
        let mut params = Vec::with_capacity(4);
        for n in NAMES {
            let mut t: Tensor<T> = ck.block(&format!("{prefix}{n}"))?.to_tensor()?;
            t.set_requires_grad(true);
            params.push(t);
        }
        let head = Self {
            mode,
            hidden_a,
            hidden_b,
            params,
        };
        if head.params[0].dims2().0 != head.input_width() {
            return Err(EncoderError::WidthMismatch {
                expected: head.input_width(),
                found: head.params[0].dims2().0,
            });
        }
        Ok(head)
    }
}

pub fn input_width(mode: FusionMode, hidden_a: usize, hidden_b: usize) -> usize {
    match mode {
        FusionMode::LogitsOnly => 4,
        FusionMode::LogitsPooled => 4 + hidden_a + hidden_b,
    }
}

/// Fused logits for one example.
pub fn fuse<T: Scalar>(
    head: &FusionHead<T>,
    fa: &PredictedFeatures<T>,
    fb: &PredictedFeatures<T>,
) -> Result<Tensor<T>, EncoderError> {
    let x = head.features(fa, fb)?;
    let mut g = Graph::new(false);
    let vars = head.bind(&mut g);
    let xv = g.constant(1, x.len(), x);
    let out = head.forward_graph(&mut g, &vars, xv)?;
    Ok(Tensor::vector(g.value(out)))
}
