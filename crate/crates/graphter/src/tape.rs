//! Straight-line recorded computation with reverse-mode gradients.
//!
//! Every forward op appends a node holding its output values and the saved
//! intermediates its backward rule needs. `backward` walks the record once in
//! reverse, accumulating gradients into leaves. A tape is single-use: after
//! `backward` it must be rebuilt by a fresh forward pass.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::{gemm_nn, gemm_nt, gemm_tn, Scalar};
use crate::tensor::Tensor;
use rand::Rng;

/// Handle to a tensor recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Running statistics for a batchnorm op, owned by the layer across steps.
#[derive(Debug, Clone)]
pub struct BnRunning<F> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
}

impl<F: Scalar> BnRunning<F> {
    pub fn new(channels: usize) -> Self {
        BnRunning { mean: vec![F::zero(); channels], var: vec![F::one(); channels] }
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

enum Op<F> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Matmul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Concat { inputs: Vec<Var>, axis: usize },
    Broadcast { input: Var },
    Relu { input: Var },
    LeakyRelu { input: Var, slope: F },
    MaxAxis { input: Var, axis: usize, argmax: Vec<usize> },
    MeanAxis { input: Var, axis: usize },
    BatchNorm { input: Var, gamma: Var, beta: Var, x_hat: Vec<F>, inv_std: Vec<F>, train: bool },
    Dropout { input: Var, scale: Vec<F> },
    LogSoftmax { input: Var, axis: usize },
    GatherRows { input: Var, indices: Vec<usize> },
    Reshape { input: Var },
    Scale { input: Var, factor: F },
    MaskedMse { pred: Var, target: Var, row_mask: Vec<bool>, denom: usize },
    NllLoss { logp: Var, labels: Vec<usize> },
}

struct Node<F> {
    shape: Vec<usize>,
    values: Vec<F>,
    requires_grad: bool,
    param: Option<ParamId>,
    op: Op<F>,
}

pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Vec<F>>>,
    consumed: bool,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new(), consumed: false }
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<F>, requires_grad: bool, op: Op<F>) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.nodes.push(Node { shape, values, requires_grad, param: None, op });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn values(&self, v: Var) -> &[F] {
        &self.nodes[v.0].values
    }

    pub fn tensor(&self, v: Var) -> Tensor<F> {
        Tensor::new(self.nodes[v.0].shape.clone(), self.nodes[v.0].values.clone()).unwrap()
    }

    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // ── Leaves ──────────────────────────────────────────────────────────

    pub fn leaf(&mut self, t: Tensor<F>, requires_grad: bool) -> Var {
        let shape = t.shape().to_vec();
        let values = t.values().to_vec();
        self.push(shape, values, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.leaf(t, false)
    }

    /// Leaf bound to a parameter store entry; `write_param_grads` routes its
    /// gradient back after `backward`.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        let v = self.leaf(store.tensor(id).clone(), true);
        self.nodes[v.0].param = Some(id);
        v
    }

    // ── Elementwise / linear ops ────────────────────────────────────────

    fn binary_check(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_check("add", a, b)?;
        let values: Vec<F> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        Ok(self.push(self.nodes[a.0].shape.clone(), values, rg, Op::Add(a, b)))
    }

    pub fn subtract(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_check("subtract", a, b)?;
        let values: Vec<F> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(&x, &y)| x - y)
            .collect();
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        Ok(self.push(self.nodes[a.0].shape.clone(), values, rg, Op::Sub(a, b)))
    }

    pub fn multiply(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_check("multiply", a, b)?;
        let values: Vec<F> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(&x, &y)| x * y)
            .collect();
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        Ok(self.push(self.nodes[a.0].shape.clone(), values, rg, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: F) -> Var {
        let values: Vec<F> = self.nodes[a.0].values.iter().map(|&x| x * factor).collect();
        let rg = self.nodes[a.0].requires_grad;
        self.push(self.nodes[a.0].shape.clone(), values, rg, Op::Scale { input: a, factor })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch { op: "matmul", lhs: sa.clone(), rhs: sb.clone() });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut values = vec![F::zero(); m * n];
        gemm_nn(m, k, n, &self.nodes[a.0].values, &self.nodes[b.0].values, &mut values);
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        Ok(self.push(vec![m, n], values, rg, Op::Matmul { a, b, m, k, n }))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = &self.nodes[inputs[0].0].shape;
        if axis >= first.len() {
            return Err(Error::InvalidAxis { op: "concat", axis, shape: first.clone() });
        }
        let mut out_shape = first.clone();
        let mut axis_total = 0;
        for v in inputs {
            let s = &self.nodes[v.0].shape;
            if s.len() != first.len()
                || s.iter().zip(first.iter()).enumerate().any(|(d, (x, y))| d != axis && x != y)
            {
                return Err(Error::ShapeMismatch { op: "concat", lhs: first.clone(), rhs: s.clone() });
            }
            axis_total += s[axis];
        }
        out_shape[axis] = axis_total;
        let (outer, _, inner) = axis_split(&out_shape, axis);
        let mut values = vec![F::zero(); outer * axis_total * inner];
        let mut offset = 0;
        for v in inputs {
            let s = &self.nodes[v.0].shape;
            let block = s[axis] * inner;
            for o in 0..outer {
                let src = &self.nodes[v.0].values[o * block..(o + 1) * block];
                let dst_start = (o * axis_total + offset) * inner;
                values[dst_start..dst_start + block].copy_from_slice(src);
            }
            offset += s[axis];
        }
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(out_shape, values, rg, Op::Concat { inputs: inputs.to_vec(), axis }))
    }

    /// Numpy-style broadcast of `a` to `target` (right-aligned, extents equal
    /// or 1).
    pub fn broadcast(&mut self, a: Var, target: &[usize]) -> Result<Var> {
        let src = self.nodes[a.0].shape.clone();
        if src.len() > target.len() {
            return Err(Error::ShapeMismatch { op: "broadcast", lhs: src, rhs: target.to_vec() });
        }
        let pad = target.len() - src.len();
        for (d, &e) in src.iter().enumerate() {
            if e != 1 && e != target[pad + d] {
                return Err(Error::ShapeMismatch { op: "broadcast", lhs: src, rhs: target.to_vec() });
            }
        }
        let numel: usize = target.iter().product();
        let mut values = vec![F::zero(); numel];
        let src_numel: usize = src.iter().product();
        // strides of the (padded) source within the target index space
        let mut src_strides = vec![0usize; target.len()];
        {
            let mut stride = 1;
            for d in (0..src.len()).rev() {
                src_strides[pad + d] = if src[d] == 1 { 0 } else { stride };
                stride *= src[d];
            }
        }
        let src_vals = &self.nodes[a.0].values;
        for (out_idx, slot) in values.iter_mut().enumerate() {
            let mut rem = out_idx;
            let mut src_idx = 0;
            for d in (0..target.len()).rev() {
                let coord = rem % target[d];
                rem /= target[d];
                src_idx += coord * src_strides[d];
            }
            debug_assert!(src_idx < src_numel);
            *slot = src_vals[src_idx];
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(target.to_vec(), values, rg, Op::Broadcast { input: a }))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let values: Vec<F> =
            self.nodes[a.0].values.iter().map(|&x| if x > F::zero() { x } else { F::zero() }).collect();
        let rg = self.nodes[a.0].requires_grad;
        self.push(self.nodes[a.0].shape.clone(), values, rg, Op::Relu { input: a })
    }

    pub fn leaky_relu(&mut self, a: Var, slope: F) -> Var {
        let values: Vec<F> = self.nodes[a.0]
            .values
            .iter()
            .map(|&x| if x > F::zero() { x } else { x * slope })
            .collect();
        let rg = self.nodes[a.0].requires_grad;
        self.push(self.nodes[a.0].shape.clone(), values, rg, Op::LeakyRelu { input: a, slope })
    }

    /// Elementwise max along `axis`; ties go to the lowest index. Returns the
    /// reduced tensor; `argmax_of` exposes the winning indices.
    pub fn max_over_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.nodes[a.0].shape.clone();
        if axis >= shape.len() {
            return Err(Error::InvalidAxis { op: "max_over_axis", axis, shape });
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let vals = &self.nodes[a.0].values;
        let mut values = vec![F::zero(); outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = vals[(o * len) * inner + i];
                let mut best_j = 0;
                for j in 1..len {
                    let v = vals[(o * len + j) * inner + i];
                    if v > best {
                        best = v;
                        best_j = j;
                    }
                }
                values[o * inner + i] = best;
                argmax[o * inner + i] = best_j;
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(out_shape, values, rg, Op::MaxAxis { input: a, axis, argmax }))
    }

    /// Per-element argmax indices recorded by a `max_over_axis` node.
    pub fn argmax_of(&self, v: Var) -> Option<&[usize]> {
        match &self.nodes[v.0].op {
            Op::MaxAxis { argmax, .. } => Some(argmax),
            _ => None,
        }
    }

    pub fn mean_over_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.nodes[a.0].shape.clone();
        if axis >= shape.len() {
            return Err(Error::InvalidAxis { op: "mean_over_axis", axis, shape });
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let vals = &self.nodes[a.0].values;
        let inv = F::of(1.0 / len as f64);
        let mut values = vec![F::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..len {
                for i in 0..inner {
                    values[o * inner + i] = values[o * inner + i] + vals[(o * len + j) * inner + i];
                }
            }
        }
        for v in values.iter_mut() {
            *v = *v * inv;
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(out_shape, values, rg, Op::MeanAxis { input: a, axis }))
    }

    /// Batch normalization over the rows of an R×C tensor, per channel.
    ///
    /// In train mode batch statistics are used and `running` is updated with
    /// momentum 0.1; in eval mode `running` is read and left untouched.
    pub fn batchnorm(
        &mut self,
        a: Var,
        gamma: Var,
        beta: Var,
        running: &mut BnRunning<F>,
        train: bool,
    ) -> Result<Var> {
        let shape = self.nodes[a.0].shape.clone();
        if shape.len() != 2 {
            return Err(Error::InvalidAxis { op: "batchnorm", axis: 1, shape });
        }
        let (rows, ch) = (shape[0], shape[1]);
        if self.nodes[gamma.0].values.len() != ch || self.nodes[beta.0].values.len() != ch {
            return Err(Error::ShapeMismatch {
                op: "batchnorm",
                lhs: shape,
                rhs: self.nodes[gamma.0].shape.clone(),
            });
        }
        let eps = F::of(BN_EPS);
        let (mean, var) = if train {
            let mut mean = vec![F::zero(); ch];
            let mut var = vec![F::zero(); ch];
            let vals = &self.nodes[a.0].values;
            for r in 0..rows {
                for c in 0..ch {
                    mean[c] = mean[c] + vals[r * ch + c];
                }
            }
            let inv_r = F::of(1.0 / rows as f64);
            for m in mean.iter_mut() {
                *m = *m * inv_r;
            }
            for r in 0..rows {
                for c in 0..ch {
                    let d = vals[r * ch + c] - mean[c];
                    var[c] = var[c] + d * d;
                }
            }
            for v in var.iter_mut() {
                *v = *v * inv_r;
            }
            let mom = F::of(BN_MOMENTUM);
            let keep = F::one() - mom;
            let unbias = if rows > 1 { F::of(rows as f64 / (rows as f64 - 1.0)) } else { F::one() };
            for c in 0..ch {
                running.mean[c] = keep * running.mean[c] + mom * mean[c];
                running.var[c] = keep * running.var[c] + mom * var[c] * unbias;
            }
            (mean, var)
        } else {
            (running.mean.clone(), running.var.clone())
        };
        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let vals = &self.nodes[a.0].values;
        let mut x_hat = vec![F::zero(); rows * ch];
        let mut values = vec![F::zero(); rows * ch];
        let g = &self.nodes[gamma.0].values;
        let b = &self.nodes[beta.0].values;
        for r in 0..rows {
            for c in 0..ch {
                let xh = (vals[r * ch + c] - mean[c]) * inv_std[c];
                x_hat[r * ch + c] = xh;
                values[r * ch + c] = g[c] * xh + b[c];
            }
        }
        let rg = self.nodes[a.0].requires_grad
            || self.nodes[gamma.0].requires_grad
            || self.nodes[beta.0].requires_grad;
        Ok(self.push(
            vec![rows, ch],
            values,
            rg,
            Op::BatchNorm { input: a, gamma, beta, x_hat, inv_std, train },
        ))
    }

    /// Train-mode dropout: each element dropped with probability `rate`,
    /// survivors scaled by 1/(1−rate). Eval mode is the identity and records
    /// nothing.
    pub fn dropout<R: Rng>(&mut self, a: Var, rate: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0,1)")));
        }
        if !train || rate == 0.0 {
            return Ok(a);
        }
        let keep = F::of(1.0 / (1.0 - rate));
        let scale: Vec<F> = self.nodes[a.0]
            .values
            .iter()
            .map(|_| if rng.gen::<f64>() < rate { F::zero() } else { keep })
            .collect();
        let values: Vec<F> =
            self.nodes[a.0].values.iter().zip(&scale).map(|(&x, &s)| x * s).collect();
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(self.nodes[a.0].shape.clone(), values, rg, Op::Dropout { input: a, scale }))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.nodes[a.0].shape.clone();
        if axis >= shape.len() {
            return Err(Error::InvalidAxis { op: "log_softmax", axis, shape });
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let vals = &self.nodes[a.0].values;
        let mut values = vec![F::zero(); vals.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let mut mx = vals[idx(0)];
                for j in 1..len {
                    if vals[idx(j)] > mx {
                        mx = vals[idx(j)];
                    }
                }
                let mut sum = F::zero();
                for j in 0..len {
                    sum = sum + (vals[idx(j)] - mx).exp();
                }
                let log_z = mx + sum.ln();
                for j in 0..len {
                    values[idx(j)] = vals[idx(j)] - log_z;
                }
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(shape, values, rg, Op::LogSoftmax { input: a, axis }))
    }

    /// Select rows of an R×C tensor; gradient scatter-adds back.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.nodes[a.0].shape.clone();
        if shape.len() != 2 {
            return Err(Error::InvalidAxis { op: "gather_rows", axis: 0, shape });
        }
        let (rows, ch) = (shape[0], shape[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::InvalidArgument(format!("gather_rows: index {bad} >= {rows}")));
        }
        let vals = &self.nodes[a.0].values;
        let mut values = Vec::with_capacity(indices.len() * ch);
        for &i in indices {
            values.extend_from_slice(&vals[i * ch..(i + 1) * ch]);
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(
            vec![indices.len(), ch],
            values,
            rg,
            Op::GatherRows { input: a, indices: indices.to_vec() },
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[a.0].values.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: shape,
            });
        }
        let values = self.nodes[a.0].values.clone();
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(shape, values, rg, Op::Reshape { input: a }))
    }

    /// Mean squared error over the rows flagged by `row_mask`, averaged over
    /// masked rows × components. Unmasked rows contribute nothing.
    pub fn masked_mse(&mut self, pred: Var, target: Var, row_mask: &[bool]) -> Result<Var> {
        self.binary_check("masked_mse", pred, target)?;
        let shape = self.nodes[pred.0].shape.clone();
        if shape.len() != 2 || shape[0] != row_mask.len() {
            return Err(Error::ShapeMismatch {
                op: "masked_mse",
                lhs: shape,
                rhs: vec![row_mask.len()],
            });
        }
        let count = row_mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::InvalidArgument("masked_mse: empty mask".into()));
        }
        let (_, ch) = (shape[0], shape[1]);
        let denom = count * ch;
        let p = &self.nodes[pred.0].values;
        let t = &self.nodes[target.0].values;
        let mut sum = F::zero();
        for (r, &m) in row_mask.iter().enumerate() {
            if m {
                for c in 0..ch {
                    let d = p[r * ch + c] - t[r * ch + c];
                    sum = sum + d * d;
                }
            }
        }
        let loss = sum * F::of(1.0 / denom as f64);
        let rg = self.nodes[pred.0].requires_grad || self.nodes[target.0].requires_grad;
        Ok(self.push(
            vec![],
            vec![loss],
            rg,
            Op::MaskedMse { pred, target, row_mask: row_mask.to_vec(), denom },
        ))
    }

    /// Mean negative log likelihood of log-probability rows at the labels.
    pub fn nll_loss(&mut self, logp: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.nodes[logp.0].shape.clone();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::ShapeMismatch { op: "nll_loss", lhs: shape, rhs: vec![labels.len()] });
        }
        let (rows, ch) = (shape[0], shape[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= ch) {
            return Err(Error::InvalidArgument(format!("nll_loss: label {bad} >= {ch}")));
        }
        let vals = &self.nodes[logp.0].values;
        let mut sum = F::zero();
        for (r, &l) in labels.iter().enumerate() {
            sum = sum - vals[r * ch + l];
        }
        let loss = sum * F::of(1.0 / rows as f64);
        let rg = self.nodes[logp.0].requires_grad;
        Ok(self.push(vec![], vec![loss], rg, Op::NllLoss { logp, labels: labels.to_vec() }))
    }

    // ── Backward ────────────────────────────────────────────────────────

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.nodes[loss.0].values.len() != 1 {
            return Err(Error::NonScalarLoss { shape: self.nodes[loss.0].shape.clone() });
        }
        self.consumed = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<F>>> = vec![None; n];
        grads[loss.0] = Some(vec![F::one()]);

        for id in (0..n).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let gy = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate_inputs(id, &gy, &mut grads);
            grads[id] = Some(gy);
        }
        self.grads = grads;
        Ok(())
    }

    fn add_into(grads: &mut [Option<Vec<F>>], node_len: usize, v: Var, f: impl FnOnce(&mut [F])) {
        let slot = grads[v.0].get_or_insert_with(|| vec![F::zero(); node_len]);
        f(slot);
    }

    fn accumulate_inputs(&self, id: usize, gy: &[F], grads: &mut [Option<Vec<F>>]) {
        let node = &self.nodes[id];
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let len = |v: Var| self.nodes[v.0].values.len();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for &(v, _) in [(a, 0), (b, 1)].iter() {
                    if rg(*v) {
                        Self::add_into(grads, len(*v), *v, |g| {
                            for (gi, &gyi) in g.iter_mut().zip(gy) {
                                *gi = *gi + gyi;
                            }
                        });
                    }
                }
            }
            Op::Sub(a, b) => {
                if rg(*a) {
                    Self::add_into(grads, len(*a), *a, |g| {
                        for (gi, &gyi) in g.iter_mut().zip(gy) {
                            *gi = *gi + gyi;
                        }
                    });
                }
                if rg(*b) {
                    Self::add_into(grads, len(*b), *b, |g| {
                        for (gi, &gyi) in g.iter_mut().zip(gy) {
                            *gi = *gi - gyi;
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    let bv = &self.nodes[b.0].values;
                    Self::add_into(grads, len(*a), *a, |g| {
                        for i in 0..g.len() {
                            g[i] = g[i] + gy[i] * bv[i];
                        }
                    });
                }
                if rg(*b) {
                    let av = &self.nodes[a.0].values;
                    Self::add_into(grads, len(*b), *b, |g| {
                        for i in 0..g.len() {
                            g[i] = g[i] + gy[i] * av[i];
                        }
                    });
                }
            }
            Op::Scale { input, factor } => {
                if rg(*input) {
                    let f = *factor;
                    Self::add_into(grads, len(*input), *input, |g| {
                        for (gi, &gyi) in g.iter_mut().zip(gy) {
                            *gi = *gi + gyi * f;
                        }
                    });
                }
            }
            Op::Matmul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                if rg(*a) {
                    let bv = &self.nodes[b.0].values;
                    Self::add_into(grads, len(*a), *a, |g| {
                        // dA += dC · Bᵀ
                        gemm_nt(m, n, k, gy, bv, g);
                    });
                }
                if rg(*b) {
                    let av = &self.nodes[a.0].values;
                    Self::add_into(grads, len(*b), *b, |g| {
                        // dB += Aᵀ · dC
                        gemm_tn(k, m, n, av, gy, g);
                    });
                }
            }
            Op::Concat { inputs, axis } => {
                let out_shape = &node.shape;
                let (outer, axis_total, inner) = axis_split(out_shape, *axis);
                let mut offset = 0;
                for v in inputs {
                    let s = &self.nodes[v.0].shape;
                    let block = s[*axis] * inner;
                    if rg(*v) {
                        let off = offset;
                        Self::add_into(grads, len(*v), *v, |g| {
                            for o in 0..outer {
                                let src_start = (o * axis_total + off) * inner;
                                for i in 0..block {
                                    g[o * block + i] = g[o * block + i] + gy[src_start + i];
                                }
                            }
                        });
                    }
                    offset += s[*axis];
                }
            }
            Op::Broadcast { input } => {
                if rg(*input) {
                    let src = &self.nodes[input.0].shape;
                    let target = &node.shape;
                    let pad = target.len() - src.len();
                    let mut src_strides = vec![0usize; target.len()];
                    let mut stride = 1;
                    for d in (0..src.len()).rev() {
                        src_strides[pad + d] = if src[d] == 1 { 0 } else { stride };
                        stride *= src[d];
                    }
                    Self::add_into(grads, len(*input), *input, |g| {
                        for (out_idx, &gyi) in gy.iter().enumerate() {
                            let mut rem = out_idx;
                            let mut src_idx = 0;
                            for d in (0..target.len()).rev() {
                                let coord = rem % target[d];
                                rem /= target[d];
                                src_idx += coord * src_strides[d];
                            }
                            g[src_idx] = g[src_idx] + gyi;
                        }
                    });
                }
            }
            Op::Relu { input } => {
                if rg(*input) {
                    let x = &self.nodes[input.0].values;
                    Self::add_into(grads, len(*input), *input, |g| {
                        for i in 0..g.len() {
                            if x[i] > F::zero() {
                                g[i] = g[i] + gy[i];
                            }
                        }
                    });
                }
            }
            Op::LeakyRelu { input, slope } => {
                if rg(*input) {
                    let x = &self.nodes[input.0].values;
                    let s = *slope;
                    Self::add_into(grads, len(*input), *input, |g| {
                        for i in 0..g.len() {
                            let d = if x[i] > F::zero() { F::one() } else { s };
                            g[i] = g[i] + gy[i] * d;
                        }
                    });
                }
            }
            Op::MaxAxis { input, axis, argmax } => {
                if rg(*input) {
                    let shape = &self.nodes[input.0].shape;
                    let (outer, alen, inner) = axis_split(shape, *axis);
                    Self::add_into(grads, len(*input), *input, |g| {
                        for o in 0..outer {
                            for i in 0..inner {
                                let j = argmax[o * inner + i];
                                let idx = (o * alen + j) * inner + i;
                                g[idx] = g[idx] + gy[o * inner + i];
                            }
                        }
                    });
                }
            }
            Op::MeanAxis { input, axis } => {
                if rg(*input) {
                    let shape = &self.nodes[input.0].shape;
                    let (outer, alen, inner) = axis_split(shape, *axis);
                    let inv = F::of(1.0 / alen as f64);
                    Self::add_into(grads, len(*input), *input, |g| {
                        for o in 0..outer {
                            for j in 0..alen {
                                for i in 0..inner {
                                    let idx = (o * alen + j) * inner + i;
                                    g[idx] = g[idx] + gy[o * inner + i] * inv;
                                }
                            }
                        }
                    });
                }
            }
            Op::BatchNorm { input, gamma, beta, x_hat, inv_std, train } => {
                let ch = self.nodes[gamma.0].values.len();
                let rows = self.nodes[input.0].values.len() / ch;
                if rg(*beta) {
                    Self::add_into(grads, len(*beta), *beta, |g| {
                        for r in 0..rows {
                            for c in 0..ch {
                                g[c] = g[c] + gy[r * ch + c];
                            }
                        }
                    });
                }
                if rg(*gamma) {
                    Self::add_into(grads, len(*gamma), *gamma, |g| {
                        for r in 0..rows {
                            for c in 0..ch {
                                g[c] = g[c] + gy[r * ch + c] * x_hat[r * ch + c];
                            }
                        }
                    });
                }
                if rg(*input) {
                    let gvals = &self.nodes[gamma.0].values;
                    if *train {
                        let mut sum_dy = vec![F::zero(); ch];
                        let mut sum_dy_xhat = vec![F::zero(); ch];
                        for r in 0..rows {
                            for c in 0..ch {
                                sum_dy[c] = sum_dy[c] + gy[r * ch + c];
                                sum_dy_xhat[c] = sum_dy_xhat[c] + gy[r * ch + c] * x_hat[r * ch + c];
                            }
                        }
                        let inv_r = F::of(1.0 / rows as f64);
                        Self::add_into(grads, len(*input), *input, |g| {
                            for r in 0..rows {
                                for c in 0..ch {
                                    let idx = r * ch + c;
                                    let term = gy[idx] - inv_r * sum_dy[c]
                                        - inv_r * x_hat[idx] * sum_dy_xhat[c];
                                    g[idx] = g[idx] + gvals[c] * inv_std[c] * term;
                                }
                            }
                        });
                    } else {
                        Self::add_into(grads, len(*input), *input, |g| {
                            for r in 0..rows {
                                for c in 0..ch {
                                    let idx = r * ch + c;
                                    g[idx] = g[idx] + gy[idx] * gvals[c] * inv_std[c];
                                }
                            }
                        });
                    }
                }
            }
            Op::Dropout { input, scale } => {
                if rg(*input) {
                    Self::add_into(grads, len(*input), *input, |g| {
                        for i in 0..g.len() {
                            g[i] = g[i] + gy[i] * scale[i];
                        }
                    });
                }
            }
            Op::LogSoftmax { input, axis } => {
                if rg(*input) {
                    let shape = &self.nodes[input.0].shape;
                    let (outer, alen, inner) = axis_split(shape, *axis);
                    let y = &node.values;
                    Self::add_into(grads, len(*input), *input, |g| {
                        for o in 0..outer {
                            for i in 0..inner {
                                let idx = |j: usize| (o * alen + j) * inner + i;
                                let mut sum = F::zero();
                                for j in 0..alen {
                                    sum = sum + gy[idx(j)];
                                }
                                for j in 0..alen {
                                    g[idx(j)] = g[idx(j)] + gy[idx(j)] - y[idx(j)].exp() * sum;
                                }
                            }
                        }
                    });
                }
            }
            Op::GatherRows { input, indices } => {
                if rg(*input) {
                    let ch = node.shape[1];
                    Self::add_into(grads, len(*input), *input, |g| {
                        for (r, &i) in indices.iter().enumerate() {
                            for c in 0..ch {
                                g[i * ch + c] = g[i * ch + c] + gy[r * ch + c];
                            }
                        }
                    });
                }
            }
            Op::Reshape { input } => {
                if rg(*input) {
                    Self::add_into(grads, len(*input), *input, |g| {
                        for i in 0..g.len() {
                            g[i] = g[i] + gy[i];
                        }
                    });
                }
            }
            Op::MaskedMse { pred, target, row_mask, denom } => {
                let ch = self.nodes[pred.0].shape[1];
                let scale = F::of(2.0 / *denom as f64) * gy[0];
                let p = &self.nodes[pred.0].values;
                let t = &self.nodes[target.0].values;
                if rg(*pred) {
                    Self::add_into(grads, len(*pred), *pred, |g| {
                        for (r, &m) in row_mask.iter().enumerate() {
                            if m {
                                for c in 0..ch {
                                    let idx = r * ch + c;
                                    g[idx] = g[idx] + scale * (p[idx] - t[idx]);
                                }
                            }
                        }
                    });
                }
                if rg(*target) {
                    Self::add_into(grads, len(*target), *target, |g| {
                        for (r, &m) in row_mask.iter().enumerate() {
                            if m {
                                for c in 0..ch {
                                    let idx = r * ch + c;
                                    g[idx] = g[idx] - scale * (p[idx] - t[idx]);
                                }
                            }
                        }
                    });
                }
            }
            Op::NllLoss { logp, labels } => {
                if rg(*logp) {
                    let ch = self.nodes[logp.0].shape[1];
                    let scale = F::of(1.0 / labels.len() as f64) * gy[0];
                    Self::add_into(grads, len(*logp), *logp, |g| {
                        for (r, &l) in labels.iter().enumerate() {
                            g[r * ch + l] = g[r * ch + l] - scale;
                        }
                    });
                }
            }
        }
    }

    /// Copy gradients of param-bound leaves back into the store, accumulating
    /// across multiple leaves bound to the same parameter (weight sharing).
    pub fn write_param_grads(&self, store: &mut ParamStore<F>) {
        for (id, node) in self.nodes.iter().enumerate() {
            if let Some(pid) = node.param {
                if let Some(g) = self.grads.get(id).and_then(|g| g.as_ref()) {
                    store.accumulate_grad(pid, g);
                }
            }
        }
    }
}
