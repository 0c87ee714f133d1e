//! The GraphFM layer: edge scoring, fixed-degree neighbour sampling and
//! attentional aggregation of pairwise interactions.

use super::{Activation, AttentionHead, ForwardOutput, HeadMerge, Model, ModelConfig, SelectionMlp};
use crate::data::{Batch, FieldKind};
use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Per-row neighbour sets of a `[B, n, n]` edge matrix, stored as a flat
/// keep-mask in the same layout.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborMask {
    pub batch: usize,
    pub n: usize,
    pub keep: Vec<bool>,
}

impl NeighborMask {
    /// Every pair kept.
    pub fn dense(batch: usize, n: usize) -> Self {
        Self {
            batch,
            n,
            keep: vec![true; batch * n * n],
        }
    }

    pub fn row(&self, b: usize, i: usize) -> &[bool] {
        let start = (b * self.n + i) * self.n;
        &self.keep[start..start + self.n]
    }

    pub fn neighbors(&self, b: usize, i: usize) -> Vec<usize> {
        self.row(b, i)
            .iter()
            .enumerate()
            .filter_map(|(j, &k)| k.then_some(j))
            .collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = self.keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect();
        Tensor::new(&[self.batch, self.n, self.n], data).expect("mask shape")
    }
}

/// What one layer saw and produced, captured from the live forward pass.
#[derive(Clone, Debug)]
pub struct LayerTrace {
    /// Edge probabilities before masking (`None` when selection is disabled).
    pub scores: Option<Tensor>,
    /// Edge weights after masking; all ones when selection is disabled.
    pub masked: Tensor,
    pub mask: NeighborMask,
    /// Attention coefficients per head, `[B, n, n]`.
    pub attention: Vec<Tensor>,
}

/// Field embeddings `[B, n, d]`: a table row for categorical fields, the
/// field vector scaled by the value for numeric ones.
pub fn embed(tape: &mut Tape<'_>, batch: &Batch, model: &Model) -> Result<Var> {
    let schema = model.schema();
    let slots = schema.slots();
    let mut rows = Vec::with_capacity(schema.n_fields());
    for ((field, &slot), &id) in schema.fields.iter().zip(&slots).zip(&model.layout().embeddings) {
        let table = tape.param(id);
        let e = match field.kind {
            FieldKind::Categorical => tape.gather(table, &batch.categorical[slot])?,
            FieldKind::Numeric => tape.outer_const(&batch.numeric[slot], table)?,
        };
        rows.push(e);
    }
    tape.stack(&rows, 1)
}

/// Index maps between the `n(n+1)/2` unordered field pairs of each row and
/// the full `n × n` grid. Everything computed from `e_i ⊙ e_j` is symmetric,
/// so it is evaluated once per unordered pair and then expanded.
struct Pairs {
    left: Vec<usize>,
    right: Vec<usize>,
    /// For each `(b, i, j)`, the row of its unordered pair.
    expand: Vec<usize>,
}

impl Pairs {
    fn new(b: usize, n: usize) -> Self {
        let per_row = n * (n + 1) / 2;
        let mut slot = vec![0; n * n];
        let mut upper = Vec::with_capacity(per_row);
        for i in 0..n {
            for j in i..n {
                slot[i * n + j] = upper.len();
                slot[j * n + i] = upper.len();
                upper.push((i, j));
            }
        }
        let mut left = Vec::with_capacity(b * per_row);
        let mut right = Vec::with_capacity(b * per_row);
        let mut expand = Vec::with_capacity(b * n * n);
        for bb in 0..b {
            for &(i, j) in &upper {
                left.push(bb * n + i);
                right.push(bb * n + j);
            }
            expand.extend(slot.iter().map(|s| bb * per_row + s));
        }
        Self { left, right, expand }
    }
}

/// `e_i ⊙ e_j` for every unordered pair, as rows of a `[B·n(n+1)/2, d]` matrix.
fn pair_products(tape: &mut Tape<'_>, e: Var, pairs: &Pairs) -> Result<Var> {
    let (b, n, d) = dims(tape, e)?;
    let flat = tape.reshape(e, &[b * n, d])?;
    let l = tape.gather(flat, &pairs.left)?;
    let r = tape.gather(flat, &pairs.right)?;
    tape.hadamard(l, r)
}

/// Edge probabilities `[B, n, n]`:
/// `sigmoid(w2 · relu(w1 · (e_i ⊙ e_j) + b1) + b2)` for every ordered pair,
/// including `i == j`.
pub fn edge_scores(tape: &mut Tape<'_>, e: Var, mlp: &SelectionMlp) -> Result<Var> {
    let (b, n, _) = dims(tape, e)?;
    let pairs = Pairs::new(b, n);
    let z = pair_products(tape, e, &pairs)?;
    let (w1, b1, w2, b2) = (
        tape.param(mlp.w1),
        tape.param(mlp.b1),
        tape.param(mlp.w2),
        tape.param(mlp.b2),
    );
    let h = tape.matmul(z, w1)?;
    let h = tape.add_bias(h, b1)?;
    let h = tape.relu(h)?;
    let s = tape.matmul(h, w2)?;
    let s = tape.add_bias(s, b2)?;
    let p = tape.sigmoid(s)?;
    let p = tape.gather(p, &pairs.expand)?;
    tape.reshape(p, &[b, n, n])
}

/// Keeps the `m` largest entries of every row of `p: [B, n, n]`; equal
/// values go to the lower column index.
pub fn sample_neighbors(p: &Tensor, m: usize) -> Result<NeighborMask> {
    let [b, n, n2] = *p.shape() else {
        return Err(Error::dim("sample_neighbors", format!("{:?}", p.shape())));
    };
    if n != n2 {
        return Err(Error::dim("sample_neighbors", format!("{:?}", p.shape())));
    }
    if m == 0 || m > n {
        return Err(Error::Config(format!(
            "neighbourhood size {m} outside 1..={n}"
        )));
    }
    if m == n {
        return Ok(NeighborMask::dense(b, n));
    }
    let mut keep = vec![false; b * n * n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for (row, out) in p.data().chunks(n).zip(keep.chunks_mut(n)) {
        order.clear();
        order.extend(0..n);
        order.sort_by(|&x, &y| row[y].total_cmp(&row[x]).then(x.cmp(&y)));
        for &j in &order[..m] {
            out[j] = true;
        }
    }
    Ok(NeighborMask { batch: b, n, keep })
}

fn activate(tape: &mut Tape<'_>, x: Var, act: Activation) -> Result<Var> {
    match act {
        Activation::Relu => tape.relu(x),
        Activation::Sigmoid => tape.sigmoid(x),
        Activation::Elu => tape.elu(x),
    }
}

/// Attention-weighted aggregation over each field's neighbourhood.
///
/// For each head the message from `j` to `i` is `W (e_i ⊙ e_j)` (or `W e_j`
/// when `config.interact` is off), its score is `LeakyReLU(aᵀ·message)`,
/// the scores are softmax-normalised over the neighbourhood, and messages
/// are summed with weight `α_ij · p_ij` (`α_ij` alone when `edge_weights` is
/// `None`). Returns the new `[B, n, d]` embeddings and the per-head `α`.
pub fn aggregate_layer(
    tape: &mut Tape<'_>,
    e: Var,
    edge_weights: Option<Var>,
    mask: &NeighborMask,
    heads: &[AttentionHead],
    config: &ModelConfig,
) -> Result<(Var, Vec<Var>)> {
    let (b, n, d) = dims(tape, e)?;
    if mask.batch != b || mask.n != n {
        return Err(Error::dim(
            "aggregate_layer",
            format!("mask [{}, {n}, {n}] for embeddings [{b}, {n}, {d}]", mask.batch, n = mask.n),
        ));
    }
    if mask.keep.chunks(n).any(|row| !row.contains(&true)) {
        return Err(Error::EmptyNeighborhood);
    }
    // message rows and, per (b, i, j), which row holds the message j → i
    let (source, expand) = if config.interact {
        let pairs = Pairs::new(b, n);
        (pair_products(tape, e, &pairs)?, pairs.expand)
    } else {
        let flat = tape.reshape(e, &[b * n, d])?;
        let idx = (0..b)
            .flat_map(|bb| (0..n * n).map(move |ij| bb * n + ij % n))
            .collect();
        (flat, idx)
    };

    let mut aggregated = Vec::with_capacity(heads.len());
    let mut alphas = Vec::with_capacity(heads.len());
    for head in heads {
        let w = tape.param(head.transform);
        let a = tape.param(head.attention);
        let width = tape.shape(w)[1];
        let msg = tape.matmul(source, w)?;
        let score = tape.matmul(msg, a)?;
        let score = tape.leaky_relu(score, config.leaky_slope)?;
        let score = tape.gather(score, &expand)?;
        let score = tape.reshape(score, &[b, n, n])?;
        let alpha = tape.masked_softmax(score, &mask.keep)?;
        let coef = match edge_weights {
            Some(p) => tape.hadamard(alpha, p)?,
            None => alpha,
        };
        let msg = tape.gather(msg, &expand)?;
        let msg = tape.reshape(msg, &[b, n, n, width])?;
        aggregated.push(tape.weighted_sum(coef, msg)?);
        alphas.push(alpha);
    }

    let out = match config.head_merge {
        HeadMerge::Concat => {
            let outs = aggregated
                .into_iter()
                .map(|h| activate(tape, h, config.activation))
                .collect::<Result<Vec<_>>>()?;
            tape.concat(&outs, 2)?
        }
        HeadMerge::Mean => {
            let mut total = aggregated[0];
            for &h in &aggregated[1..] {
                total = tape.add(total, h)?;
            }
            let mean = tape.scale(total, 1.0 / heads.len() as f64)?;
            activate(tape, mean, config.activation)?
        }
    };
    Ok((out, alphas))
}

/// Embeddings → K × (score, sample, aggregate) → concatenate layer outputs
/// per field → average over fields → project to one logit per row.
pub fn graphfm_forward<'p>(tape: &mut Tape<'p>, batch: &Batch, model: &'p Model) -> Result<ForwardOutput> {
    let config = model.config();
    let layout = model.layout();
    let mut current = embed(tape, batch, model)?;
    let (b, n, _) = dims(tape, current)?;

    let mut outputs = Vec::with_capacity(config.layers);
    let mut traces = Vec::with_capacity(config.layers);
    for (layer, &m) in layout.layers.iter().zip(&config.neighbors) {
        let (weights, mask, scores) = if config.select {
            let p = edge_scores(tape, current, &layer.selection)?;
            let scores = tape.value(p).clone();
            let mask = sample_neighbors(&scores, m)?;
            let masked = tape.mul_const(p, mask.to_tensor())?;
            (Some(masked), mask, Some(scores))
        } else {
            (None, NeighborMask::dense(b, n), None)
        };
        let (out, alphas) = aggregate_layer(tape, current, weights, &mask, &layer.heads, config)?;
        traces.push(LayerTrace {
            scores,
            masked: match weights {
                Some(w) => tape.value(w).clone(),
                None => Tensor::ones(&[b, n, n]),
            },
            mask,
            attention: alphas.iter().map(|&a| tape.value(a).clone()).collect(),
        });
        outputs.push(out);
        current = out;
    }

    let all = tape.concat(&outputs, 2)?;
    let pooled = tape.mean_axis(all, 1)?;
    let proj = tape.param(layout.projection.expect("graphfm has a projection"));
    let logits = tape.matmul(pooled, proj)?;
    let logits = tape.reshape(logits, &[b])?;
    Ok(ForwardOutput {
        logits,
        layers: traces,
    })
}

fn dims(tape: &Tape<'_>, x: Var) -> Result<(usize, usize, usize)> {
    match *tape.shape(x) {
        [b, n, d] => Ok((b, n, d)),
        ref s => Err(Error::dim("graphfm", format!("expected [B, n, d], got {s:?}"))),
    }
}
