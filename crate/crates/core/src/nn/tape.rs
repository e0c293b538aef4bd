//! Operation tape: forward execution with recorded reverse passes.
//!
//! Every op computes its output eagerly and, when gradients are enabled and
//! some input needs them, records itself. [`Tape::backward`] replays the
//! record in reverse, accumulating adjoints buffer by buffer. Parameters are
//! borrowed from a [`ParamStore`](super::ParamStore), so building a tape
//! never copies weights.
//!
//! All buffers are matrices `[rows, cols]`; scalars are `[1, 1]`.

use std::collections::BTreeMap;

use crate::nn::tensor::Tensor;
use crate::{Error, Result};

/// Clamp used inside log() in the loss ops, to keep them finite.
const LOG_EPS: f64 = 1e-12;
/// Variance floor in layer norm.
const LN_EPS: f64 = 1e-5;

/// Handle to a buffer on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Id(usize);

enum Data<'p> {
    Owned(Vec<f64>),
    Borrowed(&'p [f64]),
}

struct Buf<'p> {
    data: Data<'p>,
    rows: usize,
    cols: usize,
}

impl Buf<'_> {
    fn data(&self) -> &[f64] {
        match &self.data {
            Data::Owned(v) => v,
            Data::Borrowed(s) => s,
        }
    }
}

enum Op {
    Matmul { a: Id, b: Id, out: Id },
    /// `a @ b^T` with `b` stored row-major `[n, k]`.
    MatmulTB { a: Id, b: Id, out: Id },
    Add { a: Id, b: Id, out: Id },
    AddRowBroadcast { x: Id, bias: Id, out: Id },
    Scale { a: Id, s: f64, out: Id },
    Mul { a: Id, b: Id, out: Id },
    Relu { a: Id, out: Id },
    Sigmoid { a: Id, out: Id },
    SoftmaxRows { a: Id, out: Id },
    LayerNorm { x: Id, gain: Id, bias: Id, out: Id },
    ConcatRows { inputs: Vec<Id>, out: Id },
    SliceRows { a: Id, start: usize, out: Id },
    ConcatCols { inputs: Vec<Id>, out: Id },
    SliceCols { a: Id, start: usize, out: Id },
    Reshape { a: Id, out: Id },
    MeanAll { a: Id, out: Id },
    SumAll { a: Id, out: Id },
    CrossEntropyFromProbs { probs: Id, target: Vec<f64>, out: Id },
    BceMean { pred: Id, target: Vec<f64>, out: Id },
    L1Mean { pred: Id, target: Vec<f64>, out: Id },
}

/// Forward/backward tape over borrowed parameters.
pub struct Tape<'p> {
    bufs: Vec<Buf<'p>>,
    requires: Vec<bool>,
    grads: Vec<Vec<f64>>,
    ops: Vec<Op>,
    params: Vec<(String, Id)>,
    grad_enabled: bool,
}

impl<'p> Tape<'p> {
    /// Tape that records operations for a later [`backward`](Tape::backward).
    pub fn new() -> Tape<'p> {
        Tape::with_grad(true)
    }

    /// Tape that only runs forward; nothing is recorded, `backward` is an
    /// error. Same math, less memory, for inference.
    pub fn inference() -> Tape<'p> {
        Tape::with_grad(false)
    }

    fn with_grad(grad_enabled: bool) -> Tape<'p> {
        Tape {
            bufs: Vec::new(),
            requires: Vec::new(),
            grads: Vec::new(),
            ops: Vec::new(),
            params: Vec::new(),
            grad_enabled,
        }
    }

    fn push(&mut self, data: Data<'p>, rows: usize, cols: usize, requires: bool) -> Id {
        self.bufs.push(Buf { data, rows, cols });
        self.requires.push(requires && self.grad_enabled);
        self.grads.push(Vec::new());
        Id(self.bufs.len() - 1)
    }

    /// Leaf with no gradient (features, targets, precomputed embeddings).
    pub fn constant(&mut self, data: Vec<f64>, rows: usize, cols: usize) -> Result<Id> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "constant: {} values for [{rows}, {cols}]",
                data.len()
            )));
        }
        Ok(self.push(Data::Owned(data), rows, cols, false))
    }

    /// Leaf with a gradient but no name; used to differentiate with respect
    /// to an input rather than a parameter.
    pub fn input(&mut self, data: Vec<f64>, rows: usize, cols: usize) -> Result<Id> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "input: {} values for [{rows}, {cols}]",
                data.len()
            )));
        }
        Ok(self.push(Data::Owned(data), rows, cols, true))
    }

    /// Trainable parameter, borrowed zero-copy from the store.
    pub fn param(&mut self, name: &str, t: &'p Tensor) -> Result<Id> {
        let (rows, cols) = t.as_matrix()?;
        let id = self.push(Data::Borrowed(&t.data), rows, cols, true);
        self.params.push((name.to_string(), id));
        Ok(id)
    }

    /// Frozen parameter: borrowed, participates in the forward pass only.
    pub fn frozen(&mut self, t: &'p Tensor) -> Result<Id> {
        let (rows, cols) = t.as_matrix()?;
        Ok(self.push(Data::Borrowed(&t.data), rows, cols, false))
    }

    pub fn value(&self, id: Id) -> &[f64] {
        self.bufs[id.0].data()
    }

    pub fn shape(&self, id: Id) -> (usize, usize) {
        let b = &self.bufs[id.0];
        (b.rows, b.cols)
    }

    /// Gradient of the last `backward` loss w.r.t. this buffer, if any flowed.
    pub fn grad(&self, id: Id) -> Option<&[f64]> {
        let g = &self.grads[id.0];
        if g.is_empty() {
            None
        } else {
            Some(g)
        }
    }

    /// Gradients for all named parameters (zeros where nothing flowed).
    pub fn param_grads(&self) -> BTreeMap<String, Vec<f64>> {
        let mut out = BTreeMap::new();
        for (name, id) in &self.params {
            let g = &self.grads[id.0];
            let g = if g.is_empty() {
                vec![0.0; self.bufs[id.0].data().len()]
            } else {
                g.clone()
            };
            out.insert(name.clone(), g);
        }
        out
    }

    fn record(&mut self, op: Op, any_requires: bool) {
        if self.grad_enabled && any_requires {
            self.ops.push(op);
        }
    }

    fn req(&self, id: Id) -> bool {
        self.requires[id.0]
    }

    // ---- operations ------------------------------------------------------

    pub fn matmul(&mut self, a: Id, b: Id) -> Result<Id> {
        let (m, ka) = self.shape(a);
        let (kb, n) = self.shape(b);
        if ka != kb {
            return Err(Error::shape(format!(
                "matmul: [{m}, {ka}] @ [{kb}, {n}]"
            )));
        }
        let out_data = matmul_kernel(self.value(a), self.value(b), m, ka, n);
        let req = self.req(a) || self.req(b);
        let out = self.push(Data::Owned(out_data), m, n, req);
        self.record(Op::Matmul { a, b, out }, req);
        Ok(out)
    }

    /// `a @ b^T`: `a` is `[m, k]`, `b` is `[n, k]`, result `[m, n]`.
    pub fn matmul_tb(&mut self, a: Id, b: Id) -> Result<Id> {
        let (m, ka) = self.shape(a);
        let (n, kb) = self.shape(b);
        if ka != kb {
            return Err(Error::shape(format!(
                "matmul_tb: [{m}, {ka}] @ [{n}, {kb}]^T"
            )));
        }
        let out_data = matmul_tb_kernel(self.value(a), self.value(b), m, ka, n);
        let req = self.req(a) || self.req(b);
        let out = self.push(Data::Owned(out_data), m, n, req);
        self.record(Op::MatmulTB { a, b, out }, req);
        Ok(out)
    }

    pub fn add(&mut self, a: Id, b: Id) -> Result<Id> {
        let (m, n) = self.same_shape("add", a, b)?;
        let out_data: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let req = self.req(a) || self.req(b);
        let out = self.push(Data::Owned(out_data), m, n, req);
        self.record(Op::Add { a, b, out }, req);
        Ok(out)
    }

    /// Adds a `[1, c]` bias row to every row of `x`.
    pub fn add_row_broadcast(&mut self, x: Id, bias: Id) -> Result<Id> {
        let (m, n) = self.shape(x);
        let (br, bc) = self.shape(bias);
        if br != 1 || bc != n {
            return Err(Error::shape(format!(
                "add_row_broadcast: x [{m}, {n}], bias [{br}, {bc}]"
            )));
        }
        let b = self.value(bias).to_vec();
        let mut out_data = self.value(x).to_vec();
        for row in out_data.chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(&b) {
                *o += bv;
            }
        }
        let req = self.req(x) || self.req(bias);
        let out = self.push(Data::Owned(out_data), m, n, req);
        self.record(Op::AddRowBroadcast { x, bias, out }, req);
        Ok(out)
    }

    pub fn scale(&mut self, a: Id, s: f64) -> Id {
        let (m, n) = self.shape(a);
        let out_data: Vec<f64> = self.value(a).iter().map(|x| x * s).collect();
        let req = self.req(a);
        let out = self.push(Data::Owned(out_data), m, n, req);
        self.record(Op::Scale { a, s, out }, req);
        out
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Id, b: Id) -> Result<Id> {
        let (m, n) = self.same_shape("mul", a, b)?;
        let out_data: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let req = self.req(a) || self.req(b);
        let out = self.push(Data::Owned(out_data), m, n, req);
        self.record(Op::Mul { a, b, out }, req);
        Ok(out)
    }

    pub fn relu(&mut self, a: Id) -> Id {
        let (m, n) = self.shape(a);
        let out_data: Vec<f64> = self.value(a).iter().map(|x| x.max(0.0)).collect();
        let req = self.req(a);
        let out = self.push(Data::Owned(out_data), m, n, req);
        self.record(Op::Relu { a, out }, req);
        out
    }

    pub fn sigmoid(&mut self, a: Id) -> Id {
        let (m, n) = self.shape(a);
        let out_data: Vec<f64> = self
            .value(a)
            .iter()
            .map(|x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let req = self.req(a);
        let out = self.push(Data::Owned(out_data), m, n, req);
        self.record(Op::Sigmoid { a, out }, req);
        out
    }

    /// Row-wise softmax with max subtraction for stability.
    pub fn softmax_rows(&mut self, a: Id) -> Id {
        let (m, n) = self.shape(a);
        let mut out_data = self.value(a).to_vec();
        for row in out_data.chunks_mut(n) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let req = self.req(a);
        let out = self.push(Data::Owned(out_data), m, n, req);
        self.record(Op::SoftmaxRows { a, out }, req);
        out
    }

    /// Row-wise layer norm with learned gain and bias (both `[1, c]`).
    pub fn layer_norm(&mut self, x: Id, gain: Id, bias: Id) -> Result<Id> {
        let (m, n) = self.shape(x);
        for (name, id) in [("gain", gain), ("bias", bias)] {
            let (r, c) = self.shape(id);
            if r != 1 || c != n {
                return Err(Error::shape(format!(
                    "layer_norm: {name} is [{r}, {c}], x is [{m}, {n}]"
                )));
            }
        }
        let g = self.value(gain).to_vec();
        let b = self.value(bias).to_vec();
        let mut out_data = self.value(x).to_vec();
        for row in out_data.chunks_mut(n) {
            let (mean, var) = mean_var(row);
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv * g[j] + b[j];
            }
        }
        let req = self.req(x) || self.req(gain) || self.req(bias);
        let out = self.push(Data::Owned(out_data), m, n, req);
        self.record(Op::LayerNorm { x, gain, bias, out }, req);
        Ok(out)
    }

    /// Stacks inputs vertically; all must share a column count.
    pub fn concat_rows(&mut self, inputs: &[Id]) -> Result<Id> {
        if inputs.is_empty() {
            return Err(Error::shape("concat_rows: no inputs"));
        }
        let cols = self.shape(inputs[0]).1;
        let mut rows = 0;
        let mut out_data = Vec::new();
        let mut req = false;
        for &id in inputs {
            let (r, c) = self.shape(id);
            if c != cols {
                return Err(Error::shape(format!(
                    "concat_rows: column mismatch {c} vs {cols}"
                )));
            }
            rows += r;
            out_data.extend_from_slice(self.value(id));
            req |= self.req(id);
        }
        let out = self.push(Data::Owned(out_data), rows, cols, req);
        self.record(
            Op::ConcatRows {
                inputs: inputs.to_vec(),
                out,
            },
            req,
        );
        Ok(out)
    }

    pub fn slice_rows(&mut self, a: Id, start: usize, len: usize) -> Result<Id> {
        let (m, n) = self.shape(a);
        if start + len > m {
            return Err(Error::shape(format!(
                "slice_rows: rows {start}..{} of [{m}, {n}]",
                start + len
            )));
        }
        let out_data = self.value(a)[start * n..(start + len) * n].to_vec();
        let req = self.req(a);
        let out = self.push(Data::Owned(out_data), len, n, req);
        self.record(Op::SliceRows { a, start, out }, req);
        Ok(out)
    }

    /// Stacks inputs horizontally; all must share a row count.
    pub fn concat_cols(&mut self, inputs: &[Id]) -> Result<Id> {
        if inputs.is_empty() {
            return Err(Error::shape("concat_cols: no inputs"));
        }
        let rows = self.shape(inputs[0]).0;
        let mut cols = 0;
        let mut req = false;
        for &id in inputs {
            let (r, c) = self.shape(id);
            if r != rows {
                return Err(Error::shape(format!(
                    "concat_cols: row mismatch {r} vs {rows}"
                )));
            }
            cols += c;
            req |= self.req(id);
        }
        let mut out_data = vec![0.0; rows * cols];
        let mut off = 0;
        for &id in inputs {
            let c = self.shape(id).1;
            let data = self.value(id);
            for i in 0..rows {
                out_data[i * cols + off..i * cols + off + c]
                    .copy_from_slice(&data[i * c..(i + 1) * c]);
            }
            off += c;
        }
        let out = self.push(Data::Owned(out_data), rows, cols, req);
        self.record(
            Op::ConcatCols {
                inputs: inputs.to_vec(),
                out,
            },
            req,
        );
        Ok(out)
    }

    pub fn slice_cols(&mut self, a: Id, start: usize, len: usize) -> Result<Id> {
        let (m, n) = self.shape(a);
        if start + len > n {
            return Err(Error::shape(format!(
                "slice_cols: cols {start}..{} of [{m}, {n}]",
                start + len
            )));
        }
        let src = self.value(a);
        let mut out_data = Vec::with_capacity(m * len);
        for i in 0..m {
            out_data.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let req = self.req(a);
        let out = self.push(Data::Owned(out_data), m, len, req);
        self.record(Op::SliceCols { a, start, out }, req);
        Ok(out)
    }

    pub fn reshape(&mut self, a: Id, rows: usize, cols: usize) -> Result<Id> {
        let (m, n) = self.shape(a);
        if m * n != rows * cols {
            return Err(Error::shape(format!(
                "reshape: [{m}, {n}] -> [{rows}, {cols}]"
            )));
        }
        let out_data = self.value(a).to_vec();
        let req = self.req(a);
        let out = self.push(Data::Owned(out_data), rows, cols, req);
        self.record(Op::Reshape { a, out }, req);
        Ok(out)
    }

    pub fn mean_all(&mut self, a: Id) -> Id {
        let data = self.value(a);
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        let req = self.req(a);
        let out = self.push(Data::Owned(vec![mean]), 1, 1, req);
        self.record(Op::MeanAll { a, out }, req);
        out
    }

    pub fn sum_all(&mut self, a: Id) -> Id {
        let sum = self.value(a).iter().sum::<f64>();
        let req = self.req(a);
        let out = self.push(Data::Owned(vec![sum]), 1, 1, req);
        self.record(Op::SumAll { a, out }, req);
        out
    }

    /// `-sum_i target_i * ln(p_i)` over a `[1, n]` probability row.
    pub fn cross_entropy_from_probs(&mut self, probs: Id, target: &[f64]) -> Result<Id> {
        let (m, n) = self.shape(probs);
        if m != 1 || n != target.len() {
            return Err(Error::shape(format!(
                "cross_entropy_from_probs: probs [{m}, {n}], target len {}",
                target.len()
            )));
        }
        let loss = -self
            .value(probs)
            .iter()
            .zip(target)
            .map(|(p, t)| t * p.max(LOG_EPS).ln())
            .sum::<f64>();
        let req = self.req(probs);
        let out = self.push(Data::Owned(vec![loss]), 1, 1, req);
        self.record(
            Op::CrossEntropyFromProbs {
                probs,
                target: target.to_vec(),
                out,
            },
            req,
        );
        Ok(out)
    }

    /// Mean binary cross-entropy between probabilities and 0/1 targets.
    pub fn bce_mean(&mut self, pred: Id, target: &[f64]) -> Result<Id> {
        let (m, n) = self.shape(pred);
        if m * n != target.len() {
            return Err(Error::shape(format!(
                "bce_mean: pred [{m}, {n}], target len {}",
                target.len()
            )));
        }
        let loss = self
            .value(pred)
            .iter()
            .zip(target)
            .map(|(p, t)| -(t * p.max(LOG_EPS).ln() + (1.0 - t) * (1.0 - p).max(LOG_EPS).ln()))
            .sum::<f64>()
            / target.len() as f64;
        let req = self.req(pred);
        let out = self.push(Data::Owned(vec![loss]), 1, 1, req);
        self.record(
            Op::BceMean {
                pred,
                target: target.to_vec(),
                out,
            },
            req,
        );
        Ok(out)
    }

    /// Mean absolute error against a constant target.
    pub fn l1_mean(&mut self, pred: Id, target: &[f64]) -> Result<Id> {
        let (m, n) = self.shape(pred);
        if m * n != target.len() {
            return Err(Error::shape(format!(
                "l1_mean: pred [{m}, {n}], target len {}",
                target.len()
            )));
        }
        let loss = self
            .value(pred)
            .iter()
            .zip(target)
            .map(|(p, t)| (p - t).abs())
            .sum::<f64>()
            / target.len() as f64;
        let req = self.req(pred);
        let out = self.push(Data::Owned(vec![loss]), 1, 1, req);
        self.record(
            Op::L1Mean {
                pred,
                target: target.to_vec(),
                out,
            },
            req,
        );
        Ok(out)
    }

    fn same_shape(&self, opname: &str, a: Id, b: Id) -> Result<(usize, usize)> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(Error::shape(format!(
                "{opname}: [{}, {}] vs [{}, {}]",
                sa.0, sa.1, sb.0, sb.1
            )));
        }
        Ok(sa)
    }

    // ---- reverse pass ----------------------------------------------------

    /// Accumulates gradients of the scalar `loss` into every recorded buffer.
    /// May be called repeatedly (gradients add up), matching the usual
    /// multi-loss pattern: run backward once per loss term, or once on a
    /// combined scalar.
    pub fn backward(&mut self, loss: Id) -> Result<()> {
        if !self.grad_enabled {
            return Err(Error::shape(
                "backward on an inference tape; build it with Tape::new()",
            ));
        }
        if self.shape(loss) != (1, 1) {
            let (m, n) = self.shape(loss);
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got [{m}, {n}]"
            )));
        }
        self.ensure_grad(loss);
        self.grads[loss.0][0] += 1.0;

        let ops = std::mem::take(&mut self.ops);
        for op in ops.iter().rev() {
            self.op_backward(op);
        }
        self.ops = ops;
        Ok(())
    }

    fn ensure_grad(&mut self, id: Id) {
        if self.grads[id.0].is_empty() {
            let len = self.bufs[id.0].data().len();
            self.grads[id.0] = vec![0.0; len];
        }
    }

    /// Adds `delta` into the gradient buffer of `id` (if it needs gradients).
    fn acc(&mut self, id: Id, delta: &[f64]) {
        if !self.requires[id.0] {
            return;
        }
        self.ensure_grad(id);
        for (g, d) in self.grads[id.0].iter_mut().zip(delta) {
            *g += d;
        }
    }

    /// Takes (and clears) the adjoint of an op output. Each output is
    /// produced by exactly one op, so by the time the reverse sweep reaches
    /// that op every consumer has already contributed; consuming the buffer
    /// here is what lets `backward` run more than once, accumulating into
    /// leaves without double-counting intermediates.
    fn take_out_grad(&mut self, out: Id) -> Option<Vec<f64>> {
        let g = std::mem::take(&mut self.grads[out.0]);
        if g.is_empty() {
            None
        } else {
            Some(g)
        }
    }

    fn op_backward(&mut self, op: &Op) {
        match *op {
            Op::Matmul { a, b, out } => {
                let Some(dout) = self.take_out_grad(out) else { return };
                let (m, k) = self.shape(a);
                let n = self.shape(b).1;
                if self.requires[a.0] {
                    // dA = dOut @ B^T
                    let da = matmul_tb_kernel(&dout, self.value(b), m, n, k);
                    self.acc(a, &da);
                }
                if self.requires[b.0] {
                    // dB = A^T @ dOut
                    let db = matmul_ta_kernel(self.value(a), &dout, m, k, n);
                    self.acc(b, &db);
                }
            }
            Op::MatmulTB { a, b, out } => {
                let Some(dout) = self.take_out_grad(out) else { return };
                let (m, k) = self.shape(a);
                let n = self.shape(b).0;
                if self.requires[a.0] {
                    // dA = dOut @ B
                    let da = matmul_kernel(&dout, self.value(b), m, n, k);
                    self.acc(a, &da);
                }
                if self.requires[b.0] {
                    // dB = dOut^T @ A
                    let db = matmul_ta_kernel(&dout, self.value(a), m, n, k);
                    self.acc(b, &db);
                }
            }
            Op::Add { a, b, out } => {
                let Some(dout) = self.take_out_grad(out) else { return };
                self.acc(a, &dout);
                self.acc(b, &dout);
            }
            Op::AddRowBroadcast { x, bias, out } => {
                let Some(dout) = self.take_out_grad(out) else { return };
                self.acc(x, &dout);
                if self.requires[bias.0] {
                    let n = self.shape(bias).1;
                    let mut db = vec![0.0; n];
                    for row in dout.chunks(n) {
                        for (g, d) in db.iter_mut().zip(row) {
                            *g += d;
                        }
                    }
                    self.acc(bias, &db);
                }
            }
            Op::Scale { a, s, out } => {
                let Some(mut dout) = self.take_out_grad(out) else { return };
                for d in dout.iter_mut() {
                    *d *= s;
                }
                self.acc(a, &dout);
            }
            Op::Mul { a, b, out } => {
                let Some(dout) = self.take_out_grad(out) else { return };
                if self.requires[a.0] {
                    let da: Vec<f64> = dout.iter().zip(self.value(b)).map(|(d, y)| d * y).collect();
                    self.acc(a, &da);
                }
                if self.requires[b.0] {
                    let db: Vec<f64> = dout.iter().zip(self.value(a)).map(|(d, x)| d * x).collect();
                    self.acc(b, &db);
                }
            }
            Op::Relu { a, out } => {
                let Some(dout) = self.take_out_grad(out) else { return };
                let da: Vec<f64> = dout
                    .iter()
                    .zip(self.value(a))
                    .map(|(d, x)| if *x > 0.0 { *d } else { 0.0 })
                    .collect();
                self.acc(a, &da);
            }
            Op::Sigmoid { a, out } => {
                let Some(dout) = self.take_out_grad(out) else { return };
                let da: Vec<f64> = dout
                    .iter()
                    .zip(self.value(out))
                    .map(|(d, y)| d * y * (1.0 - y))
                    .collect();
                self.acc(a, &da);
            }
            Op::SoftmaxRows { a, out } => {
                let Some(dout) = self.take_out_grad(out) else { return };
                let (m, n) = self.shape(out);
                let p = self.value(out);
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    let (pr, dr) = (&p[i * n..(i + 1) * n], &dout[i * n..(i + 1) * n]);
                    let dot: f64 = pr.iter().zip(dr).map(|(pv, dv)| pv * dv).sum();
                    for j in 0..n {
                        da[i * n + j] = pr[j] * (dr[j] - dot);
                    }
                }
                self.acc(a, &da);
            }
            Op::LayerNorm { x, gain, bias, out } => {
                let Some(dout) = self.take_out_grad(out) else { return };
                let (m, n) = self.shape(x);
                let xv = self.value(x).to_vec();
                let g = self.value(gain).to_vec();
                let mut dx = vec![0.0; m * n];
                let mut dg = vec![0.0; n];
                let mut db = vec![0.0; n];
                for i in 0..m {
                    let row = &xv[i * n..(i + 1) * n];
                    let dr = &dout[i * n..(i + 1) * n];
                    let (mean, var) = mean_var(row);
                    let inv = 1.0 / (var + LN_EPS).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                    let h: Vec<f64> = dr.iter().zip(&g).map(|(d, gv)| d * gv).collect();
                    let h_mean = h.iter().sum::<f64>() / n as f64;
                    let hx_mean = h.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for j in 0..n {
                        dx[i * n + j] = (h[j] - h_mean - xhat[j] * hx_mean) * inv;
                        dg[j] += dr[j] * xhat[j];
                        db[j] += dr[j];
                    }
                }
                self.acc(x, &dx);
                self.acc(gain, &dg);
                self.acc(bias, &db);
            }
            Op::ConcatRows { ref inputs, out } => {
                let Some(dout) = self.take_out_grad(out) else { return };
                let cols = self.shape(out).1;
                let mut row = 0;
                for &id in inputs {
                    let r = self.shape(id).0;
                    let seg = dout[row * cols..(row + r) * cols].to_vec();
                    self.acc(id, &seg);
                    row += r;
                }
            }
            Op::SliceRows { a, start, out } => {
                let Some(dout) = self.take_out_grad(out) else { return };
                if self.requires[a.0] {
                    let (m, n) = self.shape(a);
                    let mut da = vec![0.0; m * n];
                    da[start * n..start * n + dout.len()].copy_from_slice(&dout);
                    self.acc(a, &da);
                }
            }
            Op::ConcatCols { ref inputs, out } => {
                let Some(dout) = self.take_out_grad(out) else { return };
                let (rows, cols) = self.shape(out);
                let mut off = 0;
                for &id in inputs {
                    let c = self.shape(id).1;
                    if self.requires[id.0] {
                        let mut seg = vec![0.0; rows * c];
                        for i in 0..rows {
                            seg[i * c..(i + 1) * c]
                                .copy_from_slice(&dout[i * cols + off..i * cols + off + c]);
                        }
                        self.acc(id, &seg);
                    }
                    off += c;
                }
            }
            Op::SliceCols { a, start, out } => {
                let Some(dout) = self.take_out_grad(out) else { return };
                if self.requires[a.0] {
                    let (m, n) = self.shape(a);
                    let len = self.shape(out).1;
                    let mut da = vec![0.0; m * n];
                    for i in 0..m {
                        da[i * n + start..i * n + start + len]
                            .copy_from_slice(&dout[i * len..(i + 1) * len]);
                    }
                    self.acc(a, &da);
                }
            }
            Op::Reshape { a, out } => {
                let Some(dout) = self.take_out_grad(out) else { return };
                self.acc(a, &dout);
            }
            Op::MeanAll { a, out } => {
                let Some(dout) = self.take_out_grad(out) else { return };
                let len = self.bufs[a.0].data().len();
                let da = vec![dout[0] / len as f64; len];
                self.acc(a, &da);
            }
            Op::SumAll { a, out } => {
                let Some(dout) = self.take_out_grad(out) else { return };
                let len = self.bufs[a.0].data().len();
                let da = vec![dout[0]; len];
                self.acc(a, &da);
            }
            Op::CrossEntropyFromProbs { probs, ref target, out } => {
                let Some(dout) = self.take_out_grad(out) else { return };
                let da: Vec<f64> = self
                    .value(probs)
                    .iter()
                    .zip(target)
                    .map(|(p, t)| {
                        if *p > LOG_EPS {
                            -dout[0] * t / p
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.acc(probs, &da);
            }
            Op::BceMean { pred, ref target, out } => {
                let Some(dout) = self.take_out_grad(out) else { return };
                let n = target.len() as f64;
                let da: Vec<f64> = self
                    .value(pred)
                    .iter()
                    .zip(target)
                    .map(|(p, t)| {
                        let mut d = 0.0;
                        if *p > LOG_EPS {
                            d -= t / p;
                        }
                        if 1.0 - p > LOG_EPS {
                            d += (1.0 - t) / (1.0 - p);
                        }
                        dout[0] * d / n
                    })
                    .collect();
                self.acc(pred, &da);
            }
            Op::L1Mean { pred, ref target, out } => {
                let Some(dout) = self.take_out_grad(out) else { return };
                let n = target.len() as f64;
                let da: Vec<f64> = self
                    .value(pred)
                    .iter()
                    .zip(target)
                    .map(|(p, t)| dout[0] * (p - t).signum_or_zero() / n)
                    .collect();
                self.acc(pred, &da);
            }
        }
    }
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Tape::new()
    }
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    /// `signum` with the subgradient convention sign(0) = 0.
    fn signum_or_zero(self) -> f64 {
        if self == 0.0 {
            0.0
        } else {
            self.signum()
        }
    }
}

fn mean_var(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// `[m, k] @ [k, n]`, i-k-j loop order for contiguous inner accesses.
pub(crate) fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += aip * brow[j];
            }
        }
    }
    c
}

/// `[m, k] @ [n, k]^T` — row-by-row dot products.
pub(crate) fn matmul_tb_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// `[m, k]^T @ [m, n]` — accumulates outer products row by row.
pub(crate) fn matmul_ta_kernel(a: &[f64], d: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let drow = &d[i * n..(i + 1) * n];
            let crow = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += aip * drow[j];
            }
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Naive j-outer matmul, deliberately a different loop structure than the
    /// production kernel.
    fn matmul_naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for j in 0..n {
            for i in 0..m {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    fn arb_data(len: usize, seed: u64) -> Vec<f64> {
        // Cheap deterministic pseudo-values, enough to exercise the kernels.
        (0..len)
            .map(|i| ((i as f64 + 1.3) * (seed as f64 + 0.7)).sin())
            .collect()
    }

    #[test]
    fn matmul_kernels_match_naive_reference() {
        for (m, k, n) in [(1, 1, 1), (2, 3, 4), (5, 7, 3), (8, 8, 8)] {
            let a = arb_data(m * k, 1);
            let b = arb_data(k * n, 2);
            let want = matmul_naive(&a, &b, m, k, n);
            let got = matmul_kernel(&a, &b, m, k, n);
            for (g, w) in got.iter().zip(&want) {
                assert_relative_eq!(g, w, max_relative = 1e-12, epsilon = 1e-12);
            }
            // a @ b^T against transposed-by-hand b.
            let bt: Vec<f64> = (0..n * k).map(|i| b[(i % k) * n + i / k]).collect();
            let got_tb = matmul_tb_kernel(&a, &bt, m, k, n);
            for (g, w) in got_tb.iter().zip(&want) {
                assert_relative_eq!(g, w, max_relative = 1e-12, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn forward_values_softmax_and_losses() {
        let mut t = Tape::new();
        let x = t.constant(vec![1.0, 2.0, 3.0], 1, 3).unwrap();
        let p = t.softmax_rows(x);
        let pv = t.value(p);
        let z: f64 = (1f64).exp() + (2f64).exp() + (3f64).exp();
        assert_relative_eq!(pv[0], 1f64.exp() / z, max_relative = 1e-12);
        assert_relative_eq!(pv.iter().sum::<f64>(), 1.0, max_relative = 1e-12);

        // CE against one-hot target picks out -ln p_2.
        let expect = -(3f64.exp() / z).ln();
        let mut t = Tape::new();
        let x = t.constant(vec![1.0, 2.0, 3.0], 1, 3).unwrap();
        let p = t.softmax_rows(x);
        let ce = t.cross_entropy_from_probs(p, &[0.0, 0.0, 1.0]).unwrap();
        assert_relative_eq!(t.value(ce)[0], expect, max_relative = 1e-12);

        // L1: mean(|1-0|, |−2−1|) = (1+3)/2 = 2.
        let mut t = Tape::new();
        let x = t.constant(vec![1.0, -2.0], 1, 2).unwrap();
        let l = t.l1_mean(x, &[0.0, 1.0]).unwrap();
        assert_relative_eq!(t.value(l)[0], 2.0, max_relative = 1e-12);
    }

    #[test]
    fn shape_mismatches_are_errors() {
        let mut t = Tape::new();
        let a = t.constant(vec![0.0; 6], 2, 3).unwrap();
        let b = t.constant(vec![0.0; 6], 2, 3).unwrap();
        assert!(t.matmul(a, b).is_err());
        assert!(t.add_row_broadcast(a, b).is_err());
        assert!(t.slice_rows(a, 1, 2).is_err());
        assert!(t.reshape(a, 4, 2).is_err());
        // backward demands a scalar
        let mut t = Tape::new();
        let a = t.input(vec![0.0; 6], 2, 3).unwrap();
        assert!(t.backward(a).is_err());
    }

    #[test]
    fn inference_tape_rejects_backward() {
        let mut t = Tape::inference();
        let a = t.input(vec![1.0], 1, 1).unwrap();
        let b = t.scale(a, 2.0);
        assert!(t.backward(b).is_err());
    }

    /// Central finite difference of a scalar-valued tape function w.r.t. an
    /// input vector, compared against the tape's own reverse pass.
    fn fd_check(build: impl Fn(&mut Tape, Id) -> Id, x0: Vec<f64>, rows: usize, cols: usize) {
        let eps = 1e-5;
        let mut tape = Tape::new();
        let x = tape.input(x0.clone(), rows, cols).unwrap();
        let loss = build(&mut tape, x);
        tape.backward(loss).unwrap();
        let analytic = tape.grad(x).unwrap().to_vec();

        for i in 0..x0.len() {
            let eval = |v: f64| -> f64 {
                let mut pert = x0.clone();
                pert[i] = v;
                let mut t = Tape::inference();
                let xi = t.input(pert, rows, cols).unwrap();
                let l = build(&mut t, xi);
                t.value(l)[0]
            };
            let fd = (eval(x0[i] + eps) - eval(x0[i] - eps)) / (2.0 * eps);
            let tol = 1e-3 * analytic[i].abs().max(fd.abs()) + 1e-8;
            assert!(
                (analytic[i] - fd).abs() <= tol,
                "element {i}: analytic {} vs fd {fd}",
                analytic[i]
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences_per_op() {
        let x0 = vec![0.31, -0.74, 1.21, 0.05, -1.4, 0.9];

        // matmul with a constant rhs, then sum.
        fd_check(
            |t, x| {
                let w = t
                    .constant(vec![0.5, -1.0, 0.25, 2.0, 1.5, -0.5], 3, 2)
                    .unwrap();
                let y = t.matmul(x, w).unwrap();
                t.sum_all(y)
            },
            x0.clone(),
            2,
            3,
        );

        // matmul_tb both sides: x @ x^T via mul for nonlinearity.
        fd_check(
            |t, x| {
                let y = t.matmul_tb(x, x).unwrap();
                let z = t.mul(y, y).unwrap();
                t.sum_all(z)
            },
            x0.clone(),
            2,
            3,
        );

        // softmax + cross entropy.
        fd_check(
            |t, x| {
                let p = t.softmax_rows(x);
                let row = t.slice_rows(p, 0, 1).unwrap();
                t.cross_entropy_from_probs(row, &[0.2, 0.3, 0.5]).unwrap()
            },
            x0.clone(),
            2,
            3,
        );

        // layer norm with constant gain/bias != identity.
        fd_check(
            |t, x| {
                let g = t.constant(vec![1.2, 0.8, -0.5], 1, 3).unwrap();
                let b = t.constant(vec![0.1, -0.2, 0.3], 1, 3).unwrap();
                let y = t.layer_norm(x, g, b).unwrap();
                let z = t.mul(y, y).unwrap();
                t.sum_all(z)
            },
            x0.clone(),
            2,
            3,
        );

        // sigmoid -> bce.
        fd_check(
            |t, x| {
                let s = t.sigmoid(x);
                t.bce_mean(s, &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap()
            },
            x0.clone(),
            2,
            3,
        );

        // relu, scale, add_row_broadcast, mean.
        fd_check(
            |t, x| {
                let b = t.constant(vec![0.5, -0.5, 0.25], 1, 3).unwrap();
                let y = t.add_row_broadcast(x, b).unwrap();
                let r = t.relu(y);
                let s = t.scale(r, 3.0);
                t.mean_all(s)
            },
            x0.clone(),
            2,
            3,
        );

        // slicing and concatenation round trip.
        fd_check(
            |t, x| {
                let top = t.slice_rows(x, 0, 1).unwrap();
                let bottom = t.slice_rows(x, 1, 1).unwrap();
                let left = t.slice_cols(x, 0, 2).unwrap();
                let cat = t.concat_rows(&[top, bottom]).unwrap();
                let catc = t.concat_cols(&[cat, x]).unwrap();
                let resh = t.reshape(catc, 3, 4).unwrap();
                let sq = t.mul(resh, resh).unwrap();
                let s1 = t.sum_all(sq);
                let l = t.sum_all(left);
                let both = t.concat_cols(&[s1, l]).unwrap();
                t.sum_all(both)
            },
            x0.clone(),
            2,
            3,
        );

        // l1 against an offset target (kept away from the |.|=0 kink).
        fd_check(
            |t, x| t.l1_mean(x, &[1.0, 1.0, 2.0, -1.0, 0.5, 2.0]).unwrap(),
            x0,
            2,
            3,
        );
    }

    #[test]
    fn backward_accumulates_across_losses() {
        // d/dx (sum(2x) + sum(3x)) = 5 per element.
        let mut t = Tape::new();
        let x = t.input(vec![1.0, 2.0], 1, 2).unwrap();
        let a = t.scale(x, 2.0);
        let b = t.scale(x, 3.0);
        let la = t.sum_all(a);
        let lb = t.sum_all(b);
        t.backward(la).unwrap();
        t.backward(lb).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[5.0, 5.0]);
    }

    #[test]
    fn params_are_borrowed_not_copied() {
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut t = Tape::new();
        let wid = t.param("w", &w).unwrap();
        let x = t.constant(vec![1.0, 1.0], 1, 2).unwrap();
        let y = t.matmul(x, wid).unwrap();
        assert_eq!(t.value(y), &[4.0, 6.0]);
        let s = t.sum_all(y);
        t.backward(s).unwrap();
        let grads = t.param_grads();
        assert_eq!(grads["w"], vec![1.0, 1.0, 1.0, 1.0]);
        // value slice is literally the tensor's storage
        assert_eq!(t.value(wid).as_ptr(), w.data.as_ptr());
    }

    #[test]
    fn unused_param_gets_zero_grad() {
        let w = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let mut t = Tape::new();
        let _wid = t.param("w", &w).unwrap();
        let x = t.input(vec![3.0], 1, 1).unwrap();
        let l = t.sum_all(x);
        t.backward(l).unwrap();
        assert_eq!(t.param_grads()["w"], vec![0.0, 0.0]);
    }
}
