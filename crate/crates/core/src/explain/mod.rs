//! Per-instance edge-weight matrices captured from the forward pass, and
//! selection statistics aggregated over a dataset.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::diffcore::{sigmoid, Tape, Tensor};
use crate::error::{Error, Result};
use crate::model::{LayerTrace, Model, ModelKind};

const BATCH: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    /// 1-based layer number.
    pub layer: usize,
    /// Neighbourhood size of this layer.
    pub m: usize,
    /// Edge weights after masking, `n × n`; row `i` holds field `i`'s neighbours.
    pub weights: Vec<Vec<f64>>,
    /// Attention coefficients per head, when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<Vec<Vec<Vec<f64>>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainRecord {
    /// Row position in the dataset the record was taken from.
    pub instance: usize,
    pub fields: Vec<String>,
    pub logit: f64,
    pub prediction: f64,
    pub label: u8,
    pub layers: Vec<LayerWeights>,
}

fn check(model: &Model, data: &Dataset) -> Result<()> {
    if model.config().kind != ModelKind::GraphFm {
        return Err(Error::Config("edge weights exist only for GraphFM models".into()));
    }
    if model.schema() != data.schema() {
        return Err(Error::SchemaMismatch(format!(
            "data schema {} differs from checkpoint schema {}",
            &data.schema().hash()[..12],
            &model.schema().hash()[..12]
        )));
    }
    Ok(())
}

fn matrix(t: &Tensor, b: usize, n: usize) -> Vec<Vec<f64>> {
    t.data()[b * n * n..(b + 1) * n * n]
        .chunks(n)
        .map(<[f64]>::to_vec)
        .collect()
}

/// Runs the forward pass over `rows` of `data` and records, for each, the
/// masked edge weights every layer actually used.
pub fn explain_rows(
    model: &Model,
    data: &Dataset,
    rows: &[usize],
    with_attention: bool,
) -> Result<Vec<ExplainRecord>> {
    check(model, data)?;
    if let Some(&bad) = rows.iter().find(|&&r| r >= data.len()) {
        return Err(Error::Config(format!("instance {bad} out of range (dataset has {} rows)", data.len())));
    }
    let n = model.schema().n_fields();
    let fields = model.schema().field_names();
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(BATCH) {
        let batch = data.batch(chunk);
        let mut tape = Tape::new(model.params());
        let fwd = model.forward(&mut tape, &batch)?;
        let logits = tape.value(fwd.logits).data().to_vec();
        for (b, &row) in chunk.iter().enumerate() {
            let layers = fwd
                .layers
                .iter()
                .zip(&model.config().neighbors)
                .enumerate()
                .map(|(k, (trace, &m))| LayerWeights {
                    layer: k + 1,
                    m,
                    weights: matrix(&trace.masked, b, n),
                    attention: with_attention
                        .then(|| trace.attention.iter().map(|a| matrix(a, b, n)).collect()),
                })
                .collect();
            out.push(ExplainRecord {
                instance: row,
                fields: fields.clone(),
                logit: logits[b],
                prediction: sigmoid(logits[b]),
                label: data.labels()[row],
                layers,
            });
        }
    }
    Ok(out)
}

pub fn explain_instance(model: &Model, data: &Dataset, row: usize, with_attention: bool) -> Result<ExplainRecord> {
    Ok(explain_rows(model, data, &[row], with_attention)?.remove(0))
}

/// How often each directed edge survives the top-m mask at one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionFrequency {
    pub layer: usize,
    pub m: usize,
    pub instances: usize,
    pub counts: Vec<Vec<u64>>,
    pub rates: Vec<Vec<f64>>,
}

impl SelectionFrequency {
    /// Off-diagonal unordered pairs `(i, j)`, `i < j`, ranked by the mean of
    /// the two directed rates, highest first; equal rates keep index order.
    pub fn ranked_pairs(&self) -> Vec<((usize, usize), f64)> {
        let n = self.rates.len();
        let mut pairs: Vec<_> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| ((i, j), (self.rates[i][j] + self.rates[j][i]) / 2.0))
            .collect();
        pairs.sort_by(|a, b| b.1.total_cmp(&a.1));
        pairs
    }
}

pub fn selection_frequency(model: &Model, data: &Dataset) -> Result<Vec<SelectionFrequency>> {
    check(model, data)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = model.schema().n_fields();
    let layers = model.config().layers;
    let mut counts = vec![vec![vec![0u64; n]; n]; layers];
    for batch in data.batches(BATCH, None) {
        let mut tape = Tape::new(model.params());
        let fwd = model.forward(&mut tape, &batch)?;
        for (trace, c) in fwd.layers.iter().zip(counts.iter_mut()) {
            count_mask(trace, c);
        }
    }
    let total = data.len() as f64;
    Ok(counts
        .into_iter()
        .zip(&model.config().neighbors)
        .enumerate()
        .map(|(k, (counts, &m))| SelectionFrequency {
            layer: k + 1,
            m,
            instances: data.len(),
            rates: counts
                .iter()
                .map(|row| row.iter().map(|&c| c as f64 / total).collect())
                .collect(),
            counts,
        })
        .collect())
}

fn count_mask(trace: &LayerTrace, counts: &mut [Vec<u64>]) {
    let n = trace.mask.n;
    for (idx, &kept) in trace.mask.keep.iter().enumerate() {
        if kept {
            counts[(idx / n) % n][idx % n] += 1;
        }
    }
}

/// Mean diagonal versus mean off-diagonal edge weight of one layer, over a
/// set of records. Masked-out entries count as zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalReport {
    pub layer: usize,
    pub mean_diagonal: f64,
    pub mean_off_diagonal: f64,
}

pub fn diagonal_report(records: &[ExplainRecord]) -> Vec<DiagonalReport> {
    let Some(first) = records.first() else {
        return Vec::new();
    };
    (0..first.layers.len())
        .map(|k| {
            let (mut diag, mut off, mut nd, mut no) = (0.0, 0.0, 0usize, 0usize);
            for r in records {
                for (i, row) in r.layers[k].weights.iter().enumerate() {
                    for (j, &w) in row.iter().enumerate() {
                        if i == j {
                            diag += w;
                            nd += 1;
                        } else {
                            off += w;
                            no += 1;
                        }
                    }
                }
            }
            DiagonalReport {
                layer: k + 1,
                mean_diagonal: diag / nd.max(1) as f64,
                mean_off_diagonal: off / no.max(1) as f64,
            }
        })
        .collect()
}

fn csv_matrix(fields: &[String], m: &[Vec<f64>]) -> String {
    let mut s = String::from("field");
    for f in fields {
        let _ = write!(s, ",{f}");
    }
    s.push('\n');
    for (f, row) in fields.iter().zip(m) {
        s.push_str(f);
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

/// Writes `instance<id>_layer<k>.csv` per record and layer, and
/// `explain.json` holding the records, the diagonal report and (if given)
/// the selection frequencies.
pub fn write_exports(
    dir: &Path,
    records: &[ExplainRecord],
    frequency: Option<&[SelectionFrequency]>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for r in records {
        for l in &r.layers {
            let path = dir.join(format!("instance{}_layer{}.csv", r.instance, l.layer));
            std::fs::write(&path, csv_matrix(&r.fields, &l.weights)).map_err(|e| Error::io(&path, e))?;
        }
    }
    let json = serde_json::json!({
        "records": records,
        "diagonal": diagonal_report(records),
        "selection_frequency": frequency,
    });
    let path = dir.join("explain.json");
    let text = serde_json::to_string_pretty(&json).map_err(|e| Error::json(&path, e))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests;
