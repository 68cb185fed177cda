//! Tape-based reverse-mode differentiation over 2-D row-major values.
//!
//! A [`Graph`] records every forward op in creation order, so the node list is
//! already topologically sorted and `backward` is a single reverse sweep.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{softmax_row_into, Tensor};
use super::TensorError;
use crate::scalar::Scalar;

/// Score assigned to masked attention keys.
pub const MASKED_SCORE: f64 = -1e9;

/// Variance floor used by layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    /// Row softmax of `scale·x` with masked key columns.
    MaskedSoftmax {
        x: Var,
        scale: T,
    },
    SoftmaxScaled {
        x: Var,
        alpha: T,
    },
    LogSoftmaxScaled {
        x: Var,
        alpha: T,
        probs: Vec<T>,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Pick {
        x: Var,
        cols: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node<T> {
    rows: usize,
    cols: usize,
    value: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// A single-use computation graph.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    consumed: bool,
    training: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new(false)
    }
}

impl<T: Scalar> Graph<T> {
    /// `training` switches dropout on.
    pub fn new(training: bool) -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
            training,
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Inserts a tensor as a leaf; it is differentiated iff `requires_grad`.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        let (r, c) = t.dims2();
        self.push(r, c, t.values().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// A differentiated leaf built from raw values.
    pub fn variable(&mut self, rows: usize, cols: usize, values: Vec<T>) -> Var {
        self.push(rows, cols, values, Op::Leaf, true)
    }

    /// A non-differentiated leaf.
    pub fn constant(&mut self, rows: usize, cols: usize, values: Vec<T>) -> Var {
        self.push(rows, cols, values, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.node(v).value
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = self.node(v);
        Tensor::new(&[n.rows, n.cols], n.value.clone()).expect("node shape is consistent")
    }

    /// Gradient of the last `backward` loss w.r.t. `v`, if it was tracked.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        TensorError::ShapeMismatch {
            op,
            left: vec![ar, ac],
            right: vec![br, bc],
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let out = matmul_raw(&self.node(a).value, &self.node(b).value, m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(m, n, out, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = transpose_raw(&self.node(a).value, r, c);
        let ng = self.ng(a);
        self.push(c, r, out, Op::Transpose(a), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.dims(a) != self.dims(b) {
            return Err(self.mismatch("add", a, b));
        }
        let (r, c) = self.dims(a);
        let out = zip_map(&self.node(a).value, &self.node(b).value, |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(r, c, out, Op::Add(a, b), ng))
    }

    /// `x[m×n] + b[n]`, broadcasting `b` over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var, TensorError> {
        let (r, c) = self.dims(x);
        if self.node(b).value.len() != c {
            return Err(self.mismatch("add_row", x, b));
        }
        let bv = &self.node(b).value;
        let out: Vec<T> = self
            .node(x)
            .value
            .chunks(c)
            .flat_map(|row| row.iter().zip(bv).map(|(&v, &w)| v + w))
            .collect();
        let ng = self.ng(x) || self.ng(b);
        Ok(self.push(r, c, out, Op::AddRow(x, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.dims(a) != self.dims(b) {
            return Err(self.mismatch("mul", a, b));
        }
        let (r, c) = self.dims(a);
        let out = zip_map(&self.node(a).value, &self.node(b).value, |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(r, c, out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let (r, c) = self.dims(a);
        let out = self.node(a).value.iter().map(|&v| v * s).collect();
        let ng = self.ng(a);
        self.push(r, c, out, Op::Scale(a, s), ng)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = self
            .node(a)
            .value
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let ng = self.ng(a);
        self.push(r, c, out, Op::Relu(a), ng)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = self.node(a).value.iter().map(|&v| gelu_tanh(v).0).collect();
        let ng = self.ng(a);
        self.push(r, c, out, Op::Gelu(a), ng)
    }

    /// Normalizes each row to zero mean and unit variance, then applies
    /// `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, TensorError> {
        let (r, c) = self.dims(x);
        if self.node(gain).value.len() != c {
            return Err(self.mismatch("layer_norm", x, gain));
        }
        if self.node(bias).value.len() != c {
            return Err(self.mismatch("layer_norm", x, bias));
        }
        let n = T::lit(c as f64);
        let eps = T::lit(LAYER_NORM_EPS);
        let mut xhat = Vec::with_capacity(r * c);
        let mut inv_std = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        {
            let xv = &self.node(x).value;
            let g = &self.node(gain).value;
            let b = &self.node(bias).value;
            for row in xv.chunks(c) {
                let mean = row.iter().copied().sum::<T>() / n;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
                let is = T::one() / (var + eps).sqrt();
                inv_std.push(is);
                for (j, &v) in row.iter().enumerate() {
                    let h = (v - mean) * is;
                    xhat.push(h);
                    out.push(g[j] * h + b[j]);
                }
            }
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        Ok(self.push(
            r,
            c,
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// Inverted dropout with a mask drawn from `seed`. Identity outside
    /// training mode or when `rate == 0`.
    pub fn dropout(&mut self, x: Var, rate: f64, seed: u64) -> Var {
        if !self.training || rate <= 0.0 {
            return x;
        }
        let (r, c) = self.dims(x);
        let keep = 1.0 - rate;
        let scale = T::lit(1.0 / keep);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<T> = (0..r * c)
            .map(|_| {
                if rng.random::<f64>() < keep {
                    scale
                } else {
                    T::zero()
                }
            })
            .collect();
        let out = zip_map(&self.node(x).value, &mask, |v, m| v * m);
        let ng = self.ng(x);
        self.push(r, c, out, Op::Dropout { x, mask }, ng)
    }

    /// Row softmax of `scale·x` where key columns with `key_mask[j] == 0`
    /// receive [`MASKED_SCORE`].
    pub fn masked_softmax(&mut self, x: Var, scale: T, key_mask: &[u8]) -> Result<Var, TensorError> {
        let (r, c) = self.dims(x);
        if key_mask.len() != c {
            return Err(TensorError::ShapeMismatch {
                op: "masked_softmax",
                left: vec![r, c],
                right: vec![key_mask.len()],
            });
        }
        let masked = T::lit(MASKED_SCORE);
        let mut out = Vec::with_capacity(r * c);
        let mut scores = Vec::with_capacity(c);
        for row in self.node(x).value.chunks(c) {
            scores.clear();
            scores.extend(
                row.iter()
                    .zip(key_mask)
                    .map(|(&v, &m)| if m == 0 { masked } else { v * scale }),
            );
            softmax_row_into(&scores, T::one(), &mut out);
        }
        let ng = self.ng(x);
        Ok(self.push(r, c, out, Op::MaskedSoftmax { x, scale }, ng))
    }

    /// Row-wise `softmax(α·x)`.
    pub fn softmax_scaled(&mut self, x: Var, alpha: T) -> Result<Var, TensorError> {
        if !(alpha > T::zero()) {
            return Err(TensorError::NonPositiveAlpha(alpha.as_f64()));
        }
        let (r, c) = self.dims(x);
        let mut out = Vec::with_capacity(r * c);
        for row in self.node(x).value.chunks(c) {
            softmax_row_into(row, alpha, &mut out);
        }
        let ng = self.ng(x);
        Ok(self.push(r, c, out, Op::SoftmaxScaled { x, alpha }, ng))
    }

    /// Row-wise `log softmax(α·x)`.
    pub fn log_softmax_scaled(&mut self, x: Var, alpha: T) -> Result<Var, TensorError> {
        if !(alpha > T::zero()) {
            return Err(TensorError::NonPositiveAlpha(alpha.as_f64()));
        }
        let (r, c) = self.dims(x);
        let mut out = Vec::with_capacity(r * c);
        let mut probs = Vec::with_capacity(r * c);
        for row in self.node(x).value.chunks(c) {
            let max = row
                .iter()
                .fold(T::neg_infinity(), |m, &v| if v > m { v } else { m });
            let lse = row
                .iter()
                .map(|&v| (alpha * (v - max)).exp())
                .sum::<T>()
                .ln();
            for &v in row {
                let l = alpha * (v - max) - lse;
                out.push(l);
                probs.push(l.exp());
            }
        }
        let ng = self.ng(x);
        Ok(self.push(r, c, out, Op::LogSoftmaxScaled { x, alpha, probs }, ng))
    }

    /// Selects rows `ids` of `table`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let (r, c) = self.dims(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= r) {
            return Err(TensorError::IdOutOfRange { id: bad, limit: r });
        }
        let tv = &self.node(table).value;
        let mut out = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            out.extend_from_slice(&tv[i * c..(i + 1) * c]);
        }
        let ng = self.ng(table);
        Ok(self.push(
            ids.len(),
            c,
            out,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (r, c) = self.dims(x);
        if len == 0 || start + len > r {
            return Err(TensorError::InvalidShape(vec![start, len, r]));
        }
        let out = self.node(x).value[start * c..(start + len) * c].to_vec();
        let ng = self.ng(x);
        Ok(self.push(len, c, out, Op::SliceRows { x, start }, ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (r, c) = self.dims(x);
        if len == 0 || start + len > c {
            return Err(TensorError::InvalidShape(vec![start, len, c]));
        }
        let out = self
            .node(x)
            .value
            .chunks(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let ng = self.ng(x);
        Ok(self.push(r, len, out, Op::SliceCols { x, start }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let r = parts
            .first()
            .map(|&p| self.dims(p).0)
            .ok_or(TensorError::InvalidShape(vec![]))?;
        if let Some(&bad) = parts.iter().find(|&&p| self.dims(p).0 != r) {
            return Err(self.mismatch("concat_cols", parts[0], bad));
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                let c = self.dims(p).1;
                out.extend_from_slice(&self.node(p).value[i * c..(i + 1) * c]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(r, total, out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let c = parts
            .first()
            .map(|&p| self.dims(p).1)
            .ok_or(TensorError::InvalidShape(vec![]))?;
        if let Some(&bad) = parts.iter().find(|&&p| self.dims(p).1 != c) {
            return Err(self.mismatch("concat_rows", parts[0], bad));
        }
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            rows += self.dims(p).0;
            out.extend_from_slice(&self.node(p).value);
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(rows, c, out, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// `out[i] = x[i, cols[i]]`, one entry per row.
    pub fn pick(&mut self, x: Var, cols: &[usize]) -> Result<Var, TensorError> {
        let (r, c) = self.dims(x);
        if cols.len() != r {
            return Err(TensorError::ShapeMismatch {
                op: "pick",
                left: vec![r, c],
                right: vec![cols.len()],
            });
        }
        if let Some(&bad) = cols.iter().find(|&&j| j >= c) {
            return Err(TensorError::IdOutOfRange { id: bad, limit: c });
        }
        let xv = &self.node(x).value;
        let out = cols.iter().enumerate().map(|(i, &j)| xv[i * c + j]).collect();
        let ng = self.ng(x);
        Ok(self.push(
            r,
            1,
            out,
            Op::Pick {
                x,
                cols: cols.to_vec(),
            },
            ng,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.node(x).value.iter().copied().sum();
        let ng = self.ng(x);
        self.push(1, 1, vec![s], Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::lit(self.node(x).value.len() as f64);
        let s = self.node(x).value.iter().copied().sum::<T>() / n;
        let ng = self.ng(x);
        self.push(1, 1, vec![s], Op::Mean(x), ng)
    }

    /// Propagates `∂loss/∂node` to every tracked node. A graph can be
    /// differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.consumed {
            return Err(TensorError::GraphAlreadyConsumed);
        }
        let (r, c) = self.dims(loss);
        if r * c != 1 {
            return Err(TensorError::NotScalarLoss(vec![r, c]));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            if self.nodes[idx].needs_grad {
                self.propagate(idx, &gout, &mut grads);
            }
            grads[idx] = Some(gout);
        }
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.needs_grad {
                *g = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, idx: usize, gout: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = cols;
                if self.ng(*a) {
                    // dA = dC · Bᵀ
                    let bt = transpose_raw(self.value(*b), k, n);
                    let da = matmul_raw(gout, &bt, m, n, k);
                    acc(grads, *a, &da);
                }
                if self.ng(*b) {
                    // dB = Aᵀ · dC
                    let at = transpose_raw(self.value(*a), m, k);
                    let db = matmul_raw(&at, gout, k, m, n);
                    acc(grads, *b, &db);
                }
            }
            Op::Transpose(a) => {
                let g = transpose_raw(gout, rows, cols);
                acc(grads, *a, &g);
            }
            Op::Add(a, b) => {
                if self.ng(*a) {
                    acc(grads, *a, gout);
                }
                if self.ng(*b) {
                    acc(grads, *b, gout);
                }
            }
            Op::AddRow(x, b) => {
                if self.ng(*x) {
                    acc(grads, *x, gout);
                }
                if self.ng(*b) {
                    let mut gb = vec![T::zero(); cols];
                    for row in gout.chunks(cols) {
                        gb.iter_mut().zip(row).for_each(|(s, &v)| *s += v);
                    }
                    acc(grads, *b, &gb);
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let g = zip_map(gout, self.value(*b), |g, y| g * y);
                    acc(grads, *a, &g);
                }
                if self.ng(*b) {
                    let g = zip_map(gout, self.value(*a), |g, x| g * x);
                    acc(grads, *b, &g);
                }
            }
            Op::Scale(a, s) => {
                let g: Vec<T> = gout.iter().map(|&g| g * *s).collect();
                acc(grads, *a, &g);
            }
            Op::Relu(a) => {
                let g = zip_map(gout, self.value(*a), |g, x| if x > T::zero() { g } else { T::zero() });
                acc(grads, *a, &g);
            }
            Op::Gelu(a) => {
                let g = zip_map(gout, self.value(*a), |g, x| g * gelu_tanh(x).1);
                acc(grads, *a, &g);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gain);
                if self.ng(*gain) {
                    let mut gg = vec![T::zero(); cols];
                    for (grow, hrow) in gout.chunks(cols).zip(xhat.chunks(cols)) {
                        for j in 0..cols {
                            gg[j] += grow[j] * hrow[j];
                        }
                    }
                    acc(grads, *gain, &gg);
                }
                if self.ng(*bias) {
                    let mut gb = vec![T::zero(); cols];
                    for grow in gout.chunks(cols) {
                        gb.iter_mut().zip(grow).for_each(|(s, &v)| *s += v);
                    }
                    acc(grads, *bias, &gb);
                }
                if self.ng(*x) {
                    let n = T::lit(cols as f64);
                    let mut gx = Vec::with_capacity(rows * cols);
                    for ((grow, hrow), &is) in gout.chunks(cols).zip(xhat.chunks(cols)).zip(inv_std) {
                        // dx = inv_std/n · (n·dh − Σdh − x̂·Σ(dh·x̂)), dh = g ⊙ gain
                        let mut sum_dh = T::zero();
                        let mut sum_dh_h = T::zero();
                        for j in 0..cols {
                            let dh = grow[j] * gv[j];
                            sum_dh += dh;
                            sum_dh_h += dh * hrow[j];
                        }
                        for j in 0..cols {
                            let dh = grow[j] * gv[j];
                            gx.push(is / n * (n * dh - sum_dh - hrow[j] * sum_dh_h));
                        }
                    }
                    acc(grads, *x, &gx);
                }
            }
            Op::Dropout { x, mask } => {
                let g = zip_map(gout, mask, |g, m| g * m);
                acc(grads, *x, &g);
            }
            Op::MaskedSoftmax { x, scale } => {
                let g = softmax_backward(gout, &node.value, cols, *scale);
                acc(grads, *x, &g);
            }
            Op::SoftmaxScaled { x, alpha } => {
                let g = softmax_backward(gout, &node.value, cols, *alpha);
                acc(grads, *x, &g);
            }
            Op::LogSoftmaxScaled { x, alpha, probs } => {
                // dz = α·(dy − p·Σdy)
                let mut g = Vec::with_capacity(rows * cols);
                for (grow, prow) in gout.chunks(cols).zip(probs.chunks(cols)) {
                    let s: T = grow.iter().copied().sum();
                    for j in 0..cols {
                        g.push(*alpha * (grow[j] - prow[j] * s));
                    }
                }
                acc(grads, *x, &g);
            }
            Op::GatherRows { table, ids } => {
                let (tr, tc) = self.dims(*table);
                let slot = grads[table.0].get_or_insert_with(|| vec![T::zero(); tr * tc]);
                for (k, &i) in ids.iter().enumerate() {
                    for j in 0..tc {
                        slot[i * tc + j] += gout[k * tc + j];
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let (xr, xc) = self.dims(*x);
                let slot = grads[x.0].get_or_insert_with(|| vec![T::zero(); xr * xc]);
                for (k, &v) in gout.iter().enumerate() {
                    slot[start * xc + k] += v;
                }
            }
            Op::SliceCols { x, start } => {
                let (xr, xc) = self.dims(*x);
                let slot = grads[x.0].get_or_insert_with(|| vec![T::zero(); xr * xc]);
                for i in 0..rows {
                    for j in 0..cols {
                        slot[i * xc + start + j] += gout[i * cols + j];
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (pr, pc) = self.dims(p);
                    if self.ng(p) {
                        let mut g = Vec::with_capacity(pr * pc);
                        for i in 0..pr {
                            g.extend_from_slice(&gout[i * cols + offset..i * cols + offset + pc]);
                        }
                        acc(grads, p, &g);
                    }
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.ng(p) {
                        acc(grads, p, &gout[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::Pick { x, cols: picked } => {
                let (xr, xc) = self.dims(*x);
                let slot = grads[x.0].get_or_insert_with(|| vec![T::zero(); xr * xc]);
                for (i, &j) in picked.iter().enumerate() {
                    slot[i * xc + j] += gout[i];
                }
            }
            Op::Sum(x) => {
                let g = vec![gout[0]; self.value(*x).len()];
                acc(grads, *x, &g);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                let g = vec![gout[0] / T::lit(n as f64); n];
                acc(grads, *x, &g);
            }
        }
    }
}

fn acc<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, g: &[T]) {
    match &mut grads[v.0] {
        Some(buf) => buf.iter_mut().zip(g).for_each(|(b, &x)| *b += x),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn zip_map<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// `dz = s·p ⊙ (dp − Σ dp ⊙ p)` row-wise.
fn softmax_backward<T: Scalar>(gout: &[T], probs: &[T], cols: usize, s: T) -> Vec<T> {
    let mut g = Vec::with_capacity(gout.len());
    for (grow, prow) in gout.chunks(cols).zip(probs.chunks(cols)) {
        let dot: T = grow.iter().zip(prow).map(|(&a, &b)| a * b).sum();
        for j in 0..cols {
            g.push(s * prow[j] * (grow[j] - dot));
        }
    }
    g
}

pub(crate) fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw<T: Scalar>(a: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

/// GELU tanh approximation and its derivative.
fn gelu_tanh<T: Scalar>(x: T) -> (T, T) {
    let half = T::lit(0.5);
    let k = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let c = T::lit(0.044715);
    let three = T::lit(3.0);
    let inner = k * (x + c * x * x * x);
    let t = inner.tanh();
    let y = half * x * (T::one() + t);
    let dinner = k * (T::one() + three * c * x * x);
    let dy = half * (T::one() + t) + half * x * (T::one() - t * t) * dinner;
    (y, dy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(g: &mut Graph<f64>, rows: usize, cols: usize, v: &[f64]) -> Var {
        g.variable(rows, cols, v.to_vec())
    }

    #[test]
    fn matmul_identity_and_hand_product() {
        let mut g = Graph::<f64>::new(false);
        let i2 = g.constant(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let m = g.constant(2, 2, vec![3.0, -1.0, 2.5, 7.0]);
        let p = g.matmul(i2, m).unwrap();
        assert_eq!(g.value(p), &[3.0, -1.0, 2.5, 7.0]);
        let a = g.constant(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let ones = g.constant(2, 1, vec![1.0, 1.0]);
        let p = g.matmul(a, ones).unwrap();
        assert_eq!(g.value(p), &[3.0, 7.0]);
        assert_eq!(g.dims(p), (2, 1));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut g = Graph::<f64>::new(false);
        let a = g.constant(2, 3, vec![0.0; 6]);
        let b = g.constant(2, 3, vec![0.0; 6]);
        assert!(matches!(g.matmul(a, b), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn relu_and_dropout_identity() {
        let mut g = Graph::<f64>::new(true);
        let x = g.constant(1, 2, vec![-1.0, 2.0]);
        let r = g.relu(x);
        assert_eq!(g.value(r), &[0.0, 2.0]);
        let d = g.dropout(x, 0.0, 42);
        assert_eq!(g.value(d), g.value(x));
        let mut eval = Graph::<f64>::new(false);
        let x = eval.constant(1, 3, vec![1.0, 2.0, 3.0]);
        let d = eval.dropout(x, 0.5, 7);
        assert_eq!(eval.value(d), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn dropout_mask_depends_only_on_seed() {
        let run = || {
            let mut g = Graph::<f64>::new(true);
            let x = g.constant(4, 4, vec![1.0; 16]);
            let d = g.dropout(x, 0.5, 99);
            g.value(d).to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn layer_norm_of_constant_row_is_bias() {
        let mut g = Graph::<f64>::new(false);
        let x = g.constant(1, 3, vec![5.0, 5.0, 5.0]);
        let gain = g.constant(1, 3, vec![2.0, 3.0, 4.0]);
        let bias = g.constant(1, 3, vec![0.1, -0.2, 0.3]);
        let y = g.layer_norm(x, gain, bias).unwrap();
        assert_eq!(g.value(y), &[0.1, -0.2, 0.3]);
    }

    #[test]
    fn linear_and_square_gradients() {
        let mut g = Graph::<f64>::new(false);
        let w = leaf(&mut g, 1, 3, &[0.3, -0.7, 2.0]);
        let x = g.constant(1, 3, vec![1.5, 2.5, -4.0]);
        let wx = g.mul(w, x).unwrap();
        let loss = g.sum(wx);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[1.5, 2.5, -4.0]);
        assert!(g.grad(x).is_none());

        let mut g = Graph::<f64>::new(false);
        let w = leaf(&mut g, 1, 2, &[1.0, 2.0]);
        let sq = g.mul(w, w).unwrap();
        let loss = g.sum(sq);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_errors() {
        let mut g = Graph::<f64>::new(false);
        let w = leaf(&mut g, 1, 2, &[1.0, 2.0]);
        assert!(matches!(g.backward(w), Err(TensorError::NotScalarLoss(_))));
        let s = g.sum(w);
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(TensorError::GraphAlreadyConsumed)));
    }

    #[test]
    fn gather_out_of_range() {
        let mut g = Graph::<f64>::new(false);
        let t = g.constant(3, 2, vec![0.0; 6]);
        assert!(matches!(
            g.gather_rows(t, &[0, 3]),
            Err(TensorError::IdOutOfRange { id: 3, limit: 3 })
        ));
    }

    #[test]
    fn masked_softmax_ignores_masked_columns() {
        let mut g = Graph::<f64>::new(false);
        let x = g.constant(1, 3, vec![0.5, 100.0, 0.5]);
        let p = g.masked_softmax(x, 1.0, &[1, 0, 1]).unwrap();
        assert_eq!(g.value(p), &[0.5, 0.0, 0.5]);
    }

    #[test]
    fn gelu_matches_reference_points() {
        let (y, _) = gelu_tanh(1.0f64);
        assert!((y - 0.841_191_990_608_276_8).abs() < 1e-12);
        let (y, _) = gelu_tanh(0.0f64);
        assert_eq!(y, 0.0);
    }
}
