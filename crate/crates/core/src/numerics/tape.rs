//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value and the handles of
//! its operands. Operands always precede their consumers, so a single reverse
//! sweep over the node list visits each node after all of its consumers.
//!
//! A tape is single-use: [`Tape::backward`] consumes it and a second call
//! returns [`PanError::TapeConsumed`]. Build a fresh tape (or [`Tape::clear`])
//! for every training step.

use crate::error::{PanError, Result};
use crate::numerics::tensor::{matmul_a_bt_into, matmul_at_b_into, sigmoid, Tensor};

/// Lower clamp applied to both log arguments of the weighted cross-entropy.
pub const LOG_CLAMP: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    ScaleRows(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    Column(Var, usize),
    MaskedSoftmax(Var),
    Gather(Var, Vec<usize>),
    SelectRows {
        on: Var,
        off: Option<Var>,
        mask: Vec<bool>,
    },
    Sum(Var),
    SumSquares(Var),
    WeightedBce {
        pred: Var,
        target: Vec<f64>,
        pos_weight: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    trainable: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients of trainable leaves produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a trainable leaf; zeros when the loss does not depend on it.
    /// `None` for frozen leaves and intermediate nodes.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops every recorded node and re-arms the tape.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, trainable: bool) -> Var {
        self.push(value, Op::Leaf, trainable, trainable)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, trainable: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            trainable,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, requires_grad, false)
    }

    fn dims(&self, var: Var) -> Result<(usize, usize)> {
        self.nodes[var.0].value.dims2()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(PanError::dim(op, sa, sb));
        }
        Ok(())
    }

    fn elementwise(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let values = ta.values().iter().zip(tb.values()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), values).expect("shape preserved")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor::new(ta.shape(), ta.values().iter().map(|&x| f(x)).collect()).expect("shape preserved")
    }

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.record(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.elementwise(a, b, |x, y| x + y);
        Ok(self.record(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.elementwise(a, b, |x, y| x - y);
        Ok(self.record(value, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.elementwise(a, b, |x, y| x * y);
        Ok(self.record(value, Op::Mul(a, b), &[a, b]))
    }

    /// `a[m×n] + bias[1×n]`, the bias broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        let (br, bc) = self.dims(bias)?;
        if br != 1 || bc != n {
            return Err(PanError::dim("add_row", &[m, n], &[br, bc]));
        }
        let ta = self.value(a);
        let tb = self.value(bias).values();
        let mut values = ta.values().to_vec();
        for row in values.chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(tb) {
                *v += b;
            }
        }
        let value = Tensor::new(&[m, n], values)?;
        Ok(self.record(value, Op::AddRow(a, bias), &[a, bias]))
    }

    /// Scales row `i` of `a[m×n]` by `col[i]` where `col` is m×1.
    pub fn scale_rows(&mut self, a: Var, col: Var) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        let (cr, cc) = self.dims(col)?;
        if cr != m || cc != 1 {
            return Err(PanError::dim("scale_rows", &[m, n], &[cr, cc]));
        }
        let c = self.value(col).values();
        let mut values = self.value(a).values().to_vec();
        for (row, &s) in values.chunks_mut(n).zip(c) {
            for v in row {
                *v *= s;
            }
        }
        let value = Tensor::new(&[m, n], values)?;
        Ok(self.record(value, Op::ScaleRows(a, col), &[a, col]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.map(a, |x| x * factor);
        self.record(value, Op::Scale(a, factor), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.map(a, sigmoid);
        self.record(value, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.map(a, f64::tanh);
        self.record(value, Op::Tanh(a), &[a])
    }

    /// Feature-axis concatenation of matrices sharing their row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(PanError::Contract("concat of zero parts".into()));
        };
        if parts.len() == 1 {
            return Ok(first);
        }
        let rows = self.dims(first)?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p)?;
            if r != rows {
                return Err(PanError::dim("concat", self.value(first).shape(), &[r, c]));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut values = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                values.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor::new(&[rows, total], values)?;
        Ok(self.record(value, Op::Concat(parts.to_vec()), parts))
    }

    /// Column `col` of `a[m×n]` as an m×1 matrix.
    pub fn column(&mut self, a: Var, col: usize) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        if col >= n {
            return Err(PanError::dim("column", &[m, n], &[col]));
        }
        let ta = self.value(a);
        let values = (0..m).map(|i| ta.at(i, col)).collect();
        let value = Tensor::new(&[m, 1], values)?;
        Ok(self.record(value, Op::Column(a, col), &[a]))
    }

    /// Row-wise softmax over the positions where `mask` is set. Masked
    /// positions are exactly zero. Every row needs at least one valid position.
    pub fn masked_softmax(&mut self, scores: Var, mask: &[bool]) -> Result<Var> {
        let (m, n) = self.dims(scores)?;
        if mask.len() != m * n {
            return Err(PanError::dim("masked_softmax", &[m, n], &[mask.len()]));
        }
        let s = self.value(scores).values();
        let mut values = vec![0.0; m * n];
        for i in 0..m {
            let row = &s[i * n..(i + 1) * n];
            let row_mask = &mask[i * n..(i + 1) * n];
            let max = row
                .iter()
                .zip(row_mask)
                .filter(|(_, &keep)| keep)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(PanError::EmptySequence(format!(
                    "softmax row {i} has no valid position"
                )));
            }
            let out = &mut values[i * n..(i + 1) * n];
            let mut total = 0.0;
            for j in 0..n {
                if row_mask[j] {
                    out[j] = (row[j] - max).exp();
                    total += out[j];
                }
            }
            for v in out.iter_mut() {
                *v /= total;
            }
        }
        let value = Tensor::new(&[m, n], values)?;
        Ok(self.record(value, Op::MaskedSoftmax(scores), &[scores]))
    }

    /// Row lookup `table[indices[r]]`, equivalent to one-hot rows times `table`.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (rows, cols) = self.dims(table)?;
        if indices.is_empty() {
            return Err(PanError::Contract("gather with no indices".into()));
        }
        let t = self.value(table);
        let mut values = Vec::with_capacity(indices.len() * cols);
        for &idx in indices {
            if idx >= rows {
                return Err(PanError::Lookup { index: idx, rows });
            }
            values.extend_from_slice(t.row(idx));
        }
        let value = Tensor::new(&[indices.len(), cols], values)?;
        Ok(self.record(value, Op::Gather(table, indices.to_vec()), &[table]))
    }

    /// Row `i` comes from `on` where `mask[i]` is set and from `off` otherwise.
    pub fn select_rows(&mut self, on: Var, off: Var, mask: &[bool]) -> Result<Var> {
        self.same_shape("select_rows", on, off)?;
        self.select_impl(on, Some(off), mask)
    }

    /// Zeroes the rows of `a` where `mask` is unset.
    pub fn mask_rows(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        self.select_impl(a, None, mask)
    }

    fn select_impl(&mut self, on: Var, off: Option<Var>, mask: &[bool]) -> Result<Var> {
        let (m, n) = self.dims(on)?;
        if mask.len() != m {
            return Err(PanError::dim("select_rows", &[m, n], &[mask.len()]));
        }
        let mut values = vec![0.0; m * n];
        for (i, (&keep, out)) in mask.iter().zip(values.chunks_mut(n)).enumerate() {
            if keep {
                out.copy_from_slice(self.value(on).row(i));
            } else if let Some(off) = off {
                out.copy_from_slice(self.value(off).row(i));
            }
        }
        let value = Tensor::new(&[m, n], values)?;
        let inputs: Vec<Var> = std::iter::once(on).chain(off).collect();
        let op = Op::SelectRows {
            on,
            off,
            mask: mask.to_vec(),
        };
        Ok(self.record(value, op, &inputs))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.record(value, Op::Sum(a), &[a])
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum_squares());
        self.record(value, Op::SumSquares(a), &[a])
    }

    /// Positive-weighted binary cross-entropy, summed over label columns,
    /// divided by the number of labels, averaged over rows.
    pub fn weighted_bce(&mut self, pred: Var, target: &Tensor, pos_weight: f64) -> Result<Var> {
        let tp = self.value(pred);
        if tp.shape() != target.shape() {
            return Err(PanError::dim("weighted_bce", tp.shape(), target.shape()));
        }
        let loss = bce_value(tp, target.values(), pos_weight)?;
        let op = Op::WeightedBce {
            pred,
            target: target.values().to_vec(),
            pos_weight,
        };
        Ok(self.record(Tensor::scalar(loss), op, &[pred]))
    }

    /// Fills gradients of every trainable leaf with ∂loss/∂leaf.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(PanError::TapeConsumed);
        }
        let loss_value = self.value(loss);
        if loss_value.numel() != 1 {
            return Err(PanError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| {
                node.trainable.then(|| {
                    let values = g.unwrap_or_else(|| vec![0.0; node.value.numel()]);
                    Tensor::new(node.value.shape(), values).expect("grad shape mirrors value")
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.values();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().expect("checked");
                let n = self.value(*b).dims2().expect("checked").1;
                let (va, vb) = (self.value(*a).values(), self.value(*b).values());
                self.accumulate(grads, *a, |ga| matmul_a_bt_into(g, vb, ga, m, k, n));
                self.accumulate(grads, *b, |gb| matmul_at_b_into(va, g, gb, m, k, n));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| axpy(ga, g, 1.0));
                self.accumulate(grads, *b, |gb| axpy(gb, g, 1.0));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |ga| axpy(ga, g, 1.0));
                self.accumulate(grads, *b, |gb| axpy(gb, g, -1.0));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).values(), self.value(*b).values());
                self.accumulate(grads, *a, |ga| {
                    for ((o, gi), bi) in ga.iter_mut().zip(g).zip(vb) {
                        *o += gi * bi;
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((o, gi), ai) in gb.iter_mut().zip(g).zip(va) {
                        *o += gi * ai;
                    }
                });
            }
            Op::AddRow(a, bias) => {
                let n = self.value(*bias).numel();
                self.accumulate(grads, *a, |ga| axpy(ga, g, 1.0));
                self.accumulate(grads, *bias, |gb| {
                    for row in g.chunks(n) {
                        axpy(gb, row, 1.0);
                    }
                });
            }
            Op::ScaleRows(a, col) => {
                let n = self.value(*a).dims2().expect("checked").1;
                let (va, vc) = (self.value(*a).values(), self.value(*col).values());
                self.accumulate(grads, *a, |ga| {
                    for ((ga_row, g_row), &c) in ga.chunks_mut(n).zip(g.chunks(n)).zip(vc) {
                        for (o, gi) in ga_row.iter_mut().zip(g_row) {
                            *o += gi * c;
                        }
                    }
                });
                self.accumulate(grads, *col, |gc| {
                    for ((o, g_row), a_row) in gc.iter_mut().zip(g.chunks(n)).zip(va.chunks(n)) {
                        *o += g_row.iter().zip(a_row).map(|(x, y)| x * y).sum::<f64>();
                    }
                });
            }
            Op::Scale(a, factor) => {
                self.accumulate(grads, *a, |ga| axpy(ga, g, *factor));
            }
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, |ga| {
                    for ((o, gi), y) in ga.iter_mut().zip(g).zip(out) {
                        *o += gi * y * (1.0 - y);
                    }
                });
            }
            Op::Tanh(a) => {
                self.accumulate(grads, *a, |ga| {
                    for ((o, gi), y) in ga.iter_mut().zip(g).zip(out) {
                        *o += gi * (1.0 - y * y);
                    }
                });
            }
            Op::Concat(parts) => {
                let total = node.value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let width = self.value(p).shape()[1];
                    self.accumulate(grads, p, |gp| {
                        for (gp_row, g_row) in gp.chunks_mut(width).zip(g.chunks(total)) {
                            axpy(gp_row, &g_row[offset..offset + width], 1.0);
                        }
                    });
                    offset += width;
                }
            }
            Op::Column(a, col) => {
                let n = self.value(*a).shape()[1];
                self.accumulate(grads, *a, |ga| {
                    for (row, gi) in g.iter().enumerate() {
                        ga[row * n + col] += gi;
                    }
                });
            }
            Op::MaskedSoftmax(scores) => {
                let n = node.value.shape()[1];
                self.accumulate(grads, *scores, |gs| {
                    for ((gs_row, g_row), y_row) in gs.chunks_mut(n).zip(g.chunks(n)).zip(out.chunks(n)) {
                        let dot: f64 = g_row.iter().zip(y_row).map(|(a, b)| a * b).sum();
                        for ((o, gi), y) in gs_row.iter_mut().zip(g_row).zip(y_row) {
                            *o += y * (gi - dot);
                        }
                    }
                });
            }
            Op::Gather(table, indices) => {
                let cols = node.value.shape()[1];
                self.accumulate(grads, *table, |gt| {
                    for (&idx, g_row) in indices.iter().zip(g.chunks(cols)) {
                        axpy(&mut gt[idx * cols..(idx + 1) * cols], g_row, 1.0);
                    }
                });
            }
            Op::SelectRows { on, off, mask } => {
                let n = node.value.shape()[1];
                self.accumulate(grads, *on, |go| {
                    for ((go_row, g_row), &keep) in go.chunks_mut(n).zip(g.chunks(n)).zip(mask) {
                        if keep {
                            axpy(go_row, g_row, 1.0);
                        }
                    }
                });
                if let Some(off) = off {
                    self.accumulate(grads, *off, |gf| {
                        for ((gf_row, g_row), &keep) in gf.chunks_mut(n).zip(g.chunks(n)).zip(mask) {
                            if !keep {
                                axpy(gf_row, g_row, 1.0);
                            }
                        }
                    });
                }
            }
            Op::Sum(a) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|o| *o += g[0]));
            }
            Op::SumSquares(a) => {
                let va = self.value(*a).values();
                self.accumulate(grads, *a, |ga| {
                    for (o, x) in ga.iter_mut().zip(va) {
                        *o += 2.0 * x * g[0];
                    }
                });
            }
            Op::WeightedBce {
                pred,
                target,
                pos_weight,
            } => {
                let tp = self.value(*pred);
                self.accumulate(grads, *pred, |gp| bce_grad_into(tp, target, *pos_weight, g[0], gp));
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], var: Var, f: impl FnOnce(&mut [f64])) {
        let node = &self.nodes[var.0];
        if !node.requires_grad {
            return;
        }
        let buf = grads[var.0].get_or_insert_with(|| vec![0.0; node.value.numel()]);
        f(buf);
    }
}

fn axpy(out: &mut [f64], x: &[f64], alpha: f64) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

pub(crate) fn bce_value(pred: &Tensor, target: &[f64], pos_weight: f64) -> Result<f64> {
    let (rows, labels) = pred.dims2()?;
    let mut total = 0.0;
    for (p_row, y_row) in pred.values().chunks(labels).zip(target.chunks(labels)) {
        let mut row_sum = 0.0;
        for (&p, &y) in p_row.iter().zip(y_row) {
            if !(0.0..=1.0).contains(&p) {
                return Err(PanError::Numeric(format!("prediction {p} outside [0, 1]")));
            }
            row_sum += pos_weight * y * p.max(LOG_CLAMP).ln() + (1.0 - y) * (1.0 - p).max(LOG_CLAMP).ln();
        }
        total += -row_sum / labels as f64;
    }
    Ok(total / rows as f64)
}

fn bce_grad_into(pred: &Tensor, target: &[f64], pos_weight: f64, upstream: f64, out: &mut [f64]) {
    let (rows, labels) = pred.dims2().expect("checked at record time");
    let scale = upstream / (rows * labels) as f64;
    for ((o, &p), &y) in out.iter_mut().zip(pred.values()).zip(target) {
        let p_pos = p.max(LOG_CLAMP);
        let p_neg = (1.0 - p).max(LOG_CLAMP);
        *o += -scale * (pos_weight * y / p_pos - (1.0 - y) / p_neg);
    }
}
