//! Reverse-mode tape.
//!
//! Every operation evaluates eagerly and appends one node holding its output
//! and whatever it needs for the backward pass. Inputs always precede their
//! consumers, so a single reverse sweep visits each node once.

use std::collections::HashMap;
use std::sync::OnceLock;

use super::kernels::{self, split_axis};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

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
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Tensor),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Elu(Var),
    Sum(Var),
    SumAxis(Var, usize),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Gather { table: Var, indices: Vec<usize> },
    OuterConst { vector: Var, coeffs: Vec<f64> },
    PairwiseProduct(Var),
    BroadcastNeighbors(Var),
    MaskedSoftmax { input: Var, mask: Vec<bool> },
    WeightedSum { weights: Var, values: Var },
    LogLoss { logits: Var, labels: Vec<f64> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "hadamard",
            Op::AddBias(..) => "add_bias",
            Op::Scale(..) => "scale",
            Op::MulConst(..) => "mul_const",
            Op::Relu(_) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Elu(_) => "elu",
            Op::Sum(_) => "sum",
            Op::SumAxis(..) => "sum_axis",
            Op::Reshape(_) => "reshape",
            Op::Concat(..) => "concat",
            Op::Gather { .. } => "gather",
            Op::OuterConst { .. } => "outer_const",
            Op::PairwiseProduct(_) => "pairwise_product",
            Op::BroadcastNeighbors(_) => "broadcast_neighbors",
            Op::MaskedSoftmax { .. } => "masked_softmax",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::LogLoss { .. } => "logloss",
        }
    }
}

#[derive(Debug)]
struct Node {
    // `None` for parameter leaves, whose value lives in the store.
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records one forward pass so it can be differentiated once.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    leaves: HashMap<usize, Tensor>,
    params: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf created with [`Tape::leaf`], if it was reached.
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.leaves.get(&var.0)
    }

    /// Gradient of a parameter; `None` if no path from the loss reaches it.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    /// Like [`Gradients::param`] but materialises zeros for unreached params.
    pub fn param_or_zeros(&self, id: ParamId, store: &ParamStore) -> Tensor {
        self.param(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()))
    }

    /// Sums another set of parameter gradients into this one, in param order.
    pub fn accumulate_params(&mut self, other: &Gradients) {
        if self.params.len() < other.params.len() {
            self.params.resize(other.params.len(), None);
        }
        for (mine, theirs) in self.params.iter_mut().zip(&other.params) {
            match (mine.as_mut(), theirs) {
                (Some(m), Some(t)) => m.add_assign(t),
                (None, Some(t)) => *mine = Some(t.clone()),
                _ => {}
            }
        }
    }

    pub fn scale_params(&mut self, factor: f64) {
        for g in self.params.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }
}

fn empty_store() -> &'static ParamStore {
    static EMPTY: OnceLock<ParamStore> = OnceLock::new();
    EMPTY.get_or_init(ParamStore::new)
}

impl Tape<'static> {
    /// A tape with no parameter store, for differentiating plain leaves.
    pub fn standalone() -> Self {
        Tape::new(empty_store())
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        let node = &self.nodes[var.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.value(var).shape()
    }

    fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn map_unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(src.shape(), data)?;
        let rg = self.requires_grad(x);
        self.push(out, op, rg)
    }

    fn zip_binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape(), data)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(out, op, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(Tensor::new(&[m, n], data)?, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Element-wise product.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_binary("hadamard", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds `bias[N]` to every length-`N` row of `x[..., N]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        let n = *sx.last().unwrap_or(&1);
        if sb.len() != 1 || sb[0] != n || sx.is_empty() {
            return Err(Error::dim("add_bias", format!("{sx:?} + {sb:?}")));
        }
        let b = self.value(bias).data();
        let src = self.value(x);
        let data = src
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(r, bb)| r + bb))
            .collect();
        let out = Tensor::new(src.shape(), data)?;
        let rg = self.requires_grad(x) || self.requires_grad(bias);
        self.push(out, Op::AddBias(x, bias), rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.map_unary(x, Op::Scale(x, c), |v| v * c)
    }

    /// Element-wise product with a constant of the same shape.
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        if self.shape(x) != c.shape() {
            return Err(Error::dim(
                "mul_const",
                format!("{:?} vs {:?}", self.shape(x), c.shape()),
            ));
        }
        let src = self.value(x);
        let data = src.data().iter().zip(c.data()).map(|(a, b)| a * b).collect();
        let out = Tensor::new(src.shape(), data)?;
        let rg = self.requires_grad(x);
        self.push(out, Op::MulConst(x, c), rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map_unary(x, Op::Relu(x), |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.map_unary(x, Op::LeakyRelu(x, slope), |v| if v > 0.0 { v } else { slope * v })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map_unary(x, Op::Sigmoid(x), kernels::sigmoid)
    }

    /// ELU with α = 1.
    pub fn elu(&mut self, x: Var) -> Result<Var> {
        self.map_unary(x, Op::Elu(x), |v| if v > 0.0 { v } else { v.exp_m1() })
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let rg = self.requires_grad(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::Contract("mean of empty tensor".into()));
        }
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Sums out `axis`, removing it from the shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim("sum_axis", format!("axis {axis} of {shape:?}")));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                let dst = &mut data[o * inner..(o + 1) * inner];
                for (d, s) in dst.iter_mut().zip(&src[base..base + inner]) {
                    *d += s;
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let rg = self.requires_grad(x);
        self.push(Tensor::new(&out_shape, data)?, Op::SumAxis(x, axis), rg)
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let len = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| Error::dim("mean_axis", format!("axis {axis}")))?;
        let s = self.sum_axis(x, axis)?;
        self.scale(s, 1.0 / len as f64)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        let rg = self.requires_grad(x);
        self.push(out, Op::Reshape(x), rg)
    }

    /// Concatenates along an existing axis; all other dims must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim("concat", format!("axis {axis} of {base:?}")));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim("concat", format!("{s:?} vs {base:?}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let len = self.shape(x)[axis];
                let chunk = len * inner;
                data.extend_from_slice(&self.value(x).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = xs.iter().any(|&x| self.requires_grad(x));
        self.push(Tensor::new(&shape, data)?, Op::Concat(xs.to_vec(), axis), rg)
    }

    /// Stacks equal-shaped tensors along a new axis.
    pub fn stack(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let mut expanded = Vec::with_capacity(xs.len());
        for &x in xs {
            let mut s = self.shape(x).to_vec();
            if axis > s.len() {
                return Err(Error::dim("stack", format!("axis {axis} of {s:?}")));
            }
            s.insert(axis, 1);
            expanded.push(self.reshape(x, &s)?);
        }
        self.concat(&expanded, axis)
    }

    /// Row lookup: `table[V×D]`, `indices[B]` → `[B×D]`.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(Error::dim("gather", format!("table shape {s:?}")));
        }
        let (rows, d) = (s[0], s[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::dim("gather", format!("index {bad} >= {rows}")));
        }
        let t = self.value(table).data();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&t[i * d..(i + 1) * d]);
        }
        let rg = self.requires_grad(table);
        self.push(
            Tensor::new(&[indices.len(), d], data)?,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            rg,
        )
    }

    /// `out[b, :] = coeffs[b] · vector`, for `vector[D]` → `[B×D]`.
    pub fn outer_const(&mut self, coeffs: &[f64], vector: Var) -> Result<Var> {
        let s = self.shape(vector);
        if s.len() != 1 {
            return Err(Error::dim("outer_const", format!("vector shape {s:?}")));
        }
        let d = s[0];
        let v = self.value(vector).data();
        let data = coeffs
            .iter()
            .flat_map(|&c| v.iter().map(move |x| c * x))
            .collect();
        let rg = self.requires_grad(vector);
        self.push(
            Tensor::new(&[coeffs.len(), d], data)?,
            Op::OuterConst {
                vector,
                coeffs: coeffs.to_vec(),
            },
            rg,
        )
    }

    /// `[B×n×d]` → `[B×n×n×d]` with `out[b,i,j] = x[b,i] ⊙ x[b,j]`.
    pub fn pairwise_product(&mut self, x: Var) -> Result<Var> {
        let (b, n, d) = self.dims3("pairwise_product", x)?;
        let src = self.value(x).data();
        let mut data = vec![0.0; b * n * n * d];
        for bb in 0..b {
            let e = &src[bb * n * d..(bb + 1) * n * d];
            for i in 0..n {
                let ei = &e[i * d..(i + 1) * d];
                for j in 0..n {
                    let ej = &e[j * d..(j + 1) * d];
                    let off = ((bb * n + i) * n + j) * d;
                    for ((o, a), c) in data[off..off + d].iter_mut().zip(ei).zip(ej) {
                        *o = a * c;
                    }
                }
            }
        }
        let rg = self.requires_grad(x);
        self.push(
            Tensor::new(&[b, n, n, d], data)?,
            Op::PairwiseProduct(x),
            rg,
        )
    }

    /// `[B×n×d]` → `[B×n×n×d]` with `out[b,i,j] = x[b,j]`.
    pub fn broadcast_neighbors(&mut self, x: Var) -> Result<Var> {
        let (b, n, d) = self.dims3("broadcast_neighbors", x)?;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(b * n * n * d);
        for bb in 0..b {
            let e = &src[bb * n * d..(bb + 1) * n * d];
            for _ in 0..n {
                data.extend_from_slice(e);
            }
        }
        let rg = self.requires_grad(x);
        self.push(
            Tensor::new(&[b, n, n, d], data)?,
            Op::BroadcastNeighbors(x),
            rg,
        )
    }

    /// Softmax over the last axis restricted to `mask == true`; masked
    /// positions are exactly zero.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let src = self.value(x).data();
        if mask.len() != src.len() || shape.is_empty() {
            return Err(Error::dim(
                "masked_softmax",
                format!("mask of {} for {shape:?}", mask.len()),
            ));
        }
        let n = shape[shape.len() - 1];
        let mut data = vec![0.0; src.len()];
        for ((row, m), out) in src
            .chunks(n)
            .zip(mask.chunks(n))
            .zip(data.chunks_mut(n))
        {
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &keep)| keep)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::EmptyNeighborhood);
            }
            let mut total = 0.0;
            for ((o, v), &keep) in out.iter_mut().zip(row).zip(m) {
                if keep {
                    *o = (v - max).exp();
                    total += *o;
                }
            }
            for o in out.iter_mut() {
                *o /= total;
            }
        }
        let rg = self.requires_grad(x);
        self.push(
            Tensor::new(&shape, data)?,
            Op::MaskedSoftmax {
                input: x,
                mask: mask.to_vec(),
            },
            rg,
        )
    }

    /// `weights[R×m]`, `values[R×m×d]` → `[R×d]`, summing `w[r,j]·v[r,j,:]`
    /// over `j`. Leading dims of `weights` are flattened into `R`.
    pub fn weighted_sum(&mut self, weights: Var, values: Var) -> Result<Var> {
        let sw = self.shape(weights).to_vec();
        let sv = self.shape(values).to_vec();
        if sw.is_empty() || sv.len() != sw.len() + 1 || sv[..sw.len()] != sw[..] {
            return Err(Error::dim("weighted_sum", format!("{sw:?} with {sv:?}")));
        }
        let m = sw[sw.len() - 1];
        let d = sv[sv.len() - 1];
        let rows = self.value(weights).len() / m.max(1);
        let w = self.value(weights).data();
        let v = self.value(values).data();
        let mut data = vec![0.0; rows * d];
        for r in 0..rows {
            let out = &mut data[r * d..(r + 1) * d];
            for j in 0..m {
                let wj = w[r * m + j];
                if wj == 0.0 {
                    continue;
                }
                let vj = &v[(r * m + j) * d..(r * m + j + 1) * d];
                for (o, x) in out.iter_mut().zip(vj) {
                    *o += wj * x;
                }
            }
        }
        let mut shape = sw[..sw.len() - 1].to_vec();
        shape.push(d);
        let rg = self.requires_grad(weights) || self.requires_grad(values);
        self.push(
            Tensor::new(&shape, data)?,
            Op::WeightedSum { weights, values },
            rg,
        )
    }

    /// Mean binary cross-entropy on logits, in the overflow-free form.
    pub fn logloss(&mut self, logits: Var, labels: &[f64]) -> Result<Var> {
        let z = self.value(logits).data();
        if z.len() != labels.len() || z.is_empty() {
            return Err(Error::dim(
                "logloss",
                format!("{} logits vs {} labels", z.len(), labels.len()),
            ));
        }
        let total: f64 = z
            .iter()
            .zip(labels)
            .map(|(&z, &y)| kernels::logistic_loss(z, y))
            .sum();
        let rg = self.requires_grad(logits);
        self.push(
            Tensor::scalar(total / z.len() as f64),
            Op::LogLoss {
                logits,
                labels: labels.to_vec(),
            },
            rg,
        )
    }

    fn dims3(&self, op: &'static str, x: Var) -> Result<(usize, usize, usize)> {
        match *self.shape(x) {
            [b, n, d] => Ok((b, n, d)),
            ref s => Err(Error::dim(op, format!("expected [B, n, d], got {s:?}"))),
        }
    }

    /// Runs the reverse sweep from a scalar `loss`. A tape can be swept once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Contract(
                "backward already ran on this tape; run a new forward first".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.shape(loss)));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf | Op::Param(_)) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g, &mut grads)?;
        }

        let mut leaves = HashMap::new();
        let mut params = vec![None; self.params.len()];
        for (idx, node) in self.nodes.iter().enumerate() {
            match node.op {
                Op::Leaf if node.requires_grad => {
                    let g = grads[idx]
                        .take()
                        .unwrap_or_else(|| Tensor::zeros(self.value(Var(idx)).shape()));
                    leaves.insert(idx, g);
                }
                Op::Param(id) => params[id.0] = grads[idx].take(),
                _ => {}
            }
        }
        Ok(Gradients { leaves, params })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: Var, contribution: Tensor) {
        if !self.requires_grad(target) {
            return;
        }
        match &mut grads[target.0] {
            Some(existing) => existing.add_assign(&contribution),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn like(&self, var: Var, data: Vec<f64>) -> Tensor {
        Tensor::new(self.shape(var), data).expect("gradient shape mirrors its node")
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let out = self.nodes[idx].value.as_ref().expect("interior node value");
        let gd = g.data();
        match &self.nodes[idx].op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.requires_grad(*a) {
                    let da = kernels::matmul_bt(gd, self.value(*b).data(), m, k, n);
                    self.accumulate(grads, *a, self.like(*a, da));
                }
                if self.requires_grad(*b) {
                    let db = kernels::matmul_at(self.value(*a).data(), gd, m, k, n);
                    self.accumulate(grads, *b, self.like(*b, db));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                let neg = gd.iter().map(|v| -v).collect();
                self.accumulate(grads, *b, self.like(*b, neg));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let da = gd.iter().zip(vb).map(|(g, y)| g * y).collect();
                let db = gd.iter().zip(va).map(|(g, x)| g * x).collect();
                self.accumulate(grads, *a, self.like(*a, da));
                self.accumulate(grads, *b, self.like(*b, db));
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                if self.requires_grad(*bias) {
                    let n = self.shape(*bias)[0];
                    let mut db = vec![0.0; n];
                    for row in gd.chunks(n) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, *bias, self.like(*bias, db));
                }
            }
            Op::Scale(x, c) => {
                let dx = gd.iter().map(|v| v * c).collect();
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::MulConst(x, c) => {
                let dx = gd.iter().zip(c.data()).map(|(g, c)| g * c).collect();
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::Relu(x) => {
                let vx = self.value(*x).data();
                let dx = gd
                    .iter()
                    .zip(vx)
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::LeakyRelu(x, slope) => {
                let vx = self.value(*x).data();
                let dx = gd
                    .iter()
                    .zip(vx)
                    .map(|(g, &v)| if v > 0.0 { *g } else { g * slope })
                    .collect();
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::Sigmoid(x) => {
                let dx = gd
                    .iter()
                    .zip(out.data())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::Elu(x) => {
                let vx = self.value(*x).data();
                let dx = gd
                    .iter()
                    .zip(vx)
                    .zip(out.data())
                    .map(|((g, &v), y)| if v > 0.0 { *g } else { g * (y + 1.0) })
                    .collect();
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, self.like(*x, vec![gd[0]; n]));
            }
            Op::SumAxis(x, axis) => {
                let (outer, len, inner) = split_axis(self.shape(*x), *axis);
                let mut dx = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    let row = &gd[o * inner..(o + 1) * inner];
                    for _ in 0..len {
                        dx.extend_from_slice(row);
                    }
                }
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::Reshape(x) => {
                self.accumulate(grads, *x, self.like(*x, gd.to_vec()));
            }
            Op::Concat(xs, axis) => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                for &x in xs {
                    let len = self.shape(x)[*axis];
                    if self.requires_grad(x) {
                        let mut dx = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            dx.extend_from_slice(&gd[start..start + len * inner]);
                        }
                        self.accumulate(grads, x, self.like(x, dx));
                    }
                    offset += len;
                }
            }
            Op::Gather { table, indices } => {
                let d = self.shape(*table)[1];
                let mut dt = vec![0.0; self.value(*table).len()];
                for (row, &i) in gd.chunks(d).zip(indices) {
                    for (t, v) in dt[i * d..(i + 1) * d].iter_mut().zip(row) {
                        *t += v;
                    }
                }
                self.accumulate(grads, *table, self.like(*table, dt));
            }
            Op::OuterConst { vector, coeffs } => {
                let d = self.shape(*vector)[0];
                let mut dv = vec![0.0; d];
                for (row, c) in gd.chunks(d).zip(coeffs) {
                    for (t, v) in dv.iter_mut().zip(row) {
                        *t += c * v;
                    }
                }
                self.accumulate(grads, *vector, self.like(*vector, dv));
            }
            Op::PairwiseProduct(x) => {
                let (b, n, d) = self.dims3("pairwise_product", *x)?;
                let src = self.value(*x).data();
                let mut dx = vec![0.0; src.len()];
                for bb in 0..b {
                    let e = &src[bb * n * d..(bb + 1) * n * d];
                    let de = &mut dx[bb * n * d..(bb + 1) * n * d];
                    for i in 0..n {
                        for j in 0..n {
                            let off = ((bb * n + i) * n + j) * d;
                            let gz = &gd[off..off + d];
                            for f in 0..d {
                                de[i * d + f] += gz[f] * e[j * d + f];
                                de[j * d + f] += gz[f] * e[i * d + f];
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::BroadcastNeighbors(x) => {
                let (b, n, d) = self.dims3("broadcast_neighbors", *x)?;
                let mut dx = vec![0.0; b * n * d];
                for bb in 0..b {
                    let de = &mut dx[bb * n * d..(bb + 1) * n * d];
                    for i in 0..n {
                        let off = (bb * n + i) * n * d;
                        for (t, v) in de.iter_mut().zip(&gd[off..off + n * d]) {
                            *t += v;
                        }
                    }
                }
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::MaskedSoftmax { input, mask } => {
                let n = *out.shape().last().expect("softmax rank >= 1");
                let mut dx = vec![0.0; out.len()];
                for (((y, gr), m), d) in out
                    .data()
                    .chunks(n)
                    .zip(gd.chunks(n))
                    .zip(mask.chunks(n))
                    .zip(dx.chunks_mut(n))
                {
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for k in 0..n {
                        if m[k] {
                            d[k] = y[k] * (gr[k] - dot);
                        }
                    }
                }
                self.accumulate(grads, *input, self.like(*input, dx));
            }
            Op::WeightedSum { weights, values } => {
                let sw = self.shape(*weights);
                let m = sw[sw.len() - 1];
                let d = *self.shape(*values).last().expect("values rank");
                let w = self.value(*weights).data();
                let v = self.value(*values).data();
                let rows = w.len() / m.max(1);
                if self.requires_grad(*weights) {
                    let mut dw = vec![0.0; w.len()];
                    for r in 0..rows {
                        let gr = &gd[r * d..(r + 1) * d];
                        for j in 0..m {
                            let vj = &v[(r * m + j) * d..(r * m + j + 1) * d];
                            dw[r * m + j] = gr.iter().zip(vj).map(|(a, b)| a * b).sum();
                        }
                    }
                    self.accumulate(grads, *weights, self.like(*weights, dw));
                }
                if self.requires_grad(*values) {
                    let mut dv = vec![0.0; v.len()];
                    for r in 0..rows {
                        let gr = &gd[r * d..(r + 1) * d];
                        for j in 0..m {
                            let wj = w[r * m + j];
                            let slot = &mut dv[(r * m + j) * d..(r * m + j + 1) * d];
                            for (s, x) in slot.iter_mut().zip(gr) {
                                *s = wj * x;
                            }
                        }
                    }
                    self.accumulate(grads, *values, self.like(*values, dv));
                }
            }
            Op::LogLoss { logits, labels } => {
                let z = self.value(*logits).data();
                let scale = gd[0] / z.len() as f64;
                let dz = z
                    .iter()
                    .zip(labels)
                    .map(|(&z, &y)| (kernels::sigmoid(z) - y) * scale)
                    .collect();
                self.accumulate(grads, *logits, self.like(*logits, dz));
            }
        }
        Ok(())
    }
}
