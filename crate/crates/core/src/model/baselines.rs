use super::{embed, Model};
use crate::data::{Batch, FieldKind};
use crate::diffcore::{Tape, Var};
use crate::error::Result;

/// `⟨w, x⟩ + bias` over one-hot categorical indices and raw numeric values.
pub fn linear_forward(tape: &mut Tape<'_>, batch: &Batch, model: &Model) -> Result<Var> {
    let schema = model.schema();
    let slots = schema.slots();
    let layout = model.layout();
    let mut terms = Vec::with_capacity(schema.n_fields());
    for ((field, &slot), &id) in schema.fields.iter().zip(&slots).zip(&layout.linear) {
        let w = tape.param(id);
        terms.push(match field.kind {
            FieldKind::Categorical => tape.gather(w, &batch.categorical[slot])?,
            FieldKind::Numeric => tape.outer_const(&batch.numeric[slot], w)?,
        });
    }
    let b = batch.len();
    let all = tape.concat(&terms, 1)?;
    let total = tape.sum_axis(all, 1)?;
    let total = tape.reshape(total, &[b, 1])?;
    let bias = tape.param(layout.bias.expect("linear model has a bias"));
    let total = tape.add_bias(total, bias)?;
    tape.reshape(total, &[b])
}

/// Linear part plus all pairwise embedding inner products, via
/// `½ Σ_f [(Σ_i e_if)² − Σ_i e_if²]`.
pub fn fm_forward(tape: &mut Tape<'_>, batch: &Batch, model: &Model) -> Result<Var> {
    let linear = linear_forward(tape, batch, model)?;
    let e = embed(tape, batch, model)?;
    let sum = tape.sum_axis(e, 1)?;
    let sum_sq = tape.hadamard(sum, sum)?;
    let sq = tape.hadamard(e, e)?;
    let sq_sum = tape.sum_axis(sq, 1)?;
    let diff = tape.sub(sum_sq, sq_sum)?;
    let pairwise = tape.sum_axis(diff, 1)?;
    let pairwise = tape.scale(pairwise, 0.5)?;
    tape.add(linear, pairwise)
}
