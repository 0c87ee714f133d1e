//! Feature embeddings, the GraphFM layer stack, and the LR/FM baselines.

mod baselines;
pub mod checkpoint;
mod config;
mod graphfm;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use baselines::{fm_forward, linear_forward};
pub use config::{make_variant, Activation, HeadMerge, ModelConfig, ModelKind, Variant};
pub use graphfm::{
    aggregate_layer, edge_scores, embed, graphfm_forward, sample_neighbors, LayerTrace,
    NeighborMask,
};

use crate::data::{Batch, DatasetSchema, FieldKind};
use crate::diffcore::{gradcheck, Gradients, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;

/// Edge-scoring MLP of one layer. Weights are stored input-major:
/// `w1: [d, hidden]`, `w2: [hidden, 1]`.
#[derive(Clone, Debug)]
pub struct SelectionMlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// One attention head: `transform: [d, width]`, `attention: [width, 1]`.
#[derive(Clone, Debug)]
pub struct AttentionHead {
    pub transform: ParamId,
    pub attention: ParamId,
}

#[derive(Clone, Debug)]
pub struct LayerParams {
    pub selection: SelectionMlp,
    pub heads: Vec<AttentionHead>,
}

/// Handles into the parameter store, grouped by role.
#[derive(Clone, Debug, Default)]
pub struct Layout {
    /// Per field: `[vocab, d]` table (categorical) or `[d]` vector (numeric).
    pub embeddings: Vec<ParamId>,
    pub layers: Vec<LayerParams>,
    /// Final projection `[K·d, 1]`.
    pub projection: Option<ParamId>,
    /// Per field: `[vocab, 1]` (categorical) or `[1]` (numeric).
    pub linear: Vec<ParamId>,
    pub bias: Option<ParamId>,
}

/// A model instance: configuration, the schema it was built for, and its
/// parameters.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    schema: DatasetSchema,
    params: ParamStore,
    layout: Layout,
}

/// Result of one forward pass.
pub struct ForwardOutput {
    pub logits: Var,
    /// One entry per GraphFM layer (empty for the baselines).
    pub layers: Vec<LayerTrace>,
}

fn glorot(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-limit..limit)).collect())
        .expect("shape matches")
}

impl Model {
    pub fn new(config: ModelConfig, schema: DatasetSchema) -> Result<Self> {
        let n = schema.n_fields();
        config.validate(n)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut params = ParamStore::new();
        let mut layout = Layout::default();
        let d = config.dim;

        if config.kind != ModelKind::Lr {
            let normal = Normal::new(0.0, config.embed_init_std).expect("std > 0");
            for (i, f) in schema.fields.iter().enumerate() {
                let shape = match f.kind {
                    FieldKind::Categorical => vec![f.vocab_size.unwrap_or(1), d],
                    FieldKind::Numeric => vec![d],
                };
                let len = shape.iter().product();
                let t = Tensor::new(&shape, (0..len).map(|_| normal.sample(&mut rng)).collect())?;
                layout.embeddings.push(params.insert(format!("emb.{i}"), t)?);
            }
        }

        if config.kind == ModelKind::GraphFm {
            let hidden = config.hidden();
            let width = config.head_width();
            for k in 0..config.layers {
                let selection = SelectionMlp {
                    w1: params.insert(format!("layer{k}.sel.w1"), glorot(&mut rng, &[d, hidden], d, hidden))?,
                    b1: params.insert(format!("layer{k}.sel.b1"), Tensor::zeros(&[hidden]))?,
                    w2: params.insert(format!("layer{k}.sel.w2"), glorot(&mut rng, &[hidden, 1], hidden, 1))?,
                    b2: params.insert(format!("layer{k}.sel.b2"), Tensor::zeros(&[1]))?,
                };
                let mut heads = Vec::with_capacity(config.heads);
                for h in 0..config.heads {
                    heads.push(AttentionHead {
                        transform: params.insert(
                            format!("layer{k}.head{h}.w"),
                            glorot(&mut rng, &[d, width], d, width),
                        )?,
                        attention: params.insert(
                            format!("layer{k}.head{h}.a"),
                            glorot(&mut rng, &[width, 1], width, 1),
                        )?,
                    });
                }
                layout.layers.push(LayerParams { selection, heads });
            }
            let total = config.layers * d;
            layout.projection = Some(params.insert("proj", glorot(&mut rng, &[total, 1], total, 1))?);
        } else {
            for (i, f) in schema.fields.iter().enumerate() {
                let shape = match f.kind {
                    FieldKind::Categorical => vec![f.vocab_size.unwrap_or(1), 1],
                    FieldKind::Numeric => vec![1],
                };
                layout.linear.push(params.insert(format!("lin.{i}"), Tensor::zeros(&shape))?);
            }
            layout.bias = Some(params.insert("lin.bias", Tensor::zeros(&[1]))?);
        }

        Ok(Self {
            config,
            schema,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Records the forward pass for `batch` on `tape`.
    pub fn forward<'p>(&'p self, tape: &mut Tape<'p>, batch: &Batch) -> Result<ForwardOutput> {
        match self.config.kind {
            ModelKind::GraphFm => graphfm_forward(tape, batch, self),
            ModelKind::Fm => Ok(ForwardOutput {
                logits: fm_forward(tape, batch, self)?,
                layers: Vec::new(),
            }),
            ModelKind::Lr => Ok(ForwardOutput {
                logits: linear_forward(tape, batch, self)?,
                layers: Vec::new(),
            }),
        }
    }

    pub fn logits(&self, batch: &Batch) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.params);
        let out = self.forward(&mut tape, batch)?;
        Ok(tape.value(out.logits).data().to_vec())
    }

    /// Mean log loss on `batch` and its parameter gradients.
    pub fn loss_and_grads(&self, batch: &Batch) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new(&self.params);
        let out = self.forward(&mut tape, batch)?;
        let loss = tape.logloss(out.logits, &batch.labels)?;
        let value = tape.value(loss).item()?;
        let grads = tape.backward(loss)?;
        Ok((value, grads))
    }

    /// Central-difference check of every parameter entry against the tape
    /// gradient of the mean log loss on `batch`.
    ///
    /// An entry that disagrees at the default step is retried with smaller
    /// steps and scored by its best agreement: a ReLU input lying within one
    /// step of zero makes the wide stencil straddle the kink, while a wrong
    /// gradient disagrees at every step.
    pub fn gradient_check(&mut self, batch: &Batch) -> Result<GradientCheck> {
        const STEPS: [f64; 3] = [gradcheck::EPS, 1e-6, 1e-7];
        const RETRY_ABOVE: f64 = 1e-6;
        let (_, grads) = self.loss_and_grads(batch)?;
        let loss = |m: &Model| -> Result<f64> {
            let mut tape = Tape::new(m.params());
            let out = m.forward(&mut tape, batch)?;
            let l = tape.logloss(out.logits, &batch.labels)?;
            tape.value(l).item()
        };
        let mut report = GradientCheck {
            entries: 0,
            refined: 0,
            worst: 0.0,
            worst_at: String::new(),
        };
        let ids: Vec<_> = self.params.ids().collect();
        for id in ids {
            let analytic = grads.param_or_zeros(id, &self.params);
            for i in 0..analytic.len() {
                let orig = self.params.get(id).data()[i];
                let mut err = f64::INFINITY;
                for (k, step) in STEPS.into_iter().enumerate() {
                    if err <= RETRY_ABOVE {
                        break;
                    }
                    if k == 1 {
                        report.refined += 1;
                    }
                    self.params.get_mut(id).data_mut()[i] = orig + step;
                    let plus = loss(self);
                    self.params.get_mut(id).data_mut()[i] = orig - step;
                    let minus = loss(self);
                    self.params.get_mut(id).data_mut()[i] = orig;
                    let numeric = (plus? - minus?) / (2.0 * step);
                    err = err.min(gradcheck::rel_err(analytic.data()[i], numeric));
                }
                report.entries += 1;
                if err > report.worst || report.worst_at.is_empty() {
                    report.worst = err.max(report.worst);
                    report.worst_at = format!("{}[{i}]", self.params.name(id));
                }
            }
        }
        Ok(report)
    }
}

/// Outcome of [`Model::gradient_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    /// Parameter entries checked.
    pub entries: usize,
    /// Entries that needed a smaller step than the default.
    pub refined: usize,
    /// Worst relative error.
    pub worst: f64,
    /// `name[index]` of the worst entry.
    pub worst_at: String,
}
