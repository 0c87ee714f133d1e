//! Vocabulary construction and row encoding.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::schema::{ColumnSpec, DatasetSchema, FieldKind, FieldSpec};
use super::transform::transform_numeric;
use super::{Dataset, Instance};
use crate::error::{Error, Result};

/// Index reserved in every categorical vocabulary for rare and unseen values.
pub const UNKNOWN: u32 = 0;

/// Frequency counts for one categorical column, in first-seen order.
#[derive(Debug, Default)]
struct Counter {
    order: Vec<String>,
    counts: HashMap<String, usize>,
}

impl Counter {
    fn observe(&mut self, value: &str) {
        match self.counts.get_mut(value) {
            Some(c) => *c += 1,
            None => {
                self.counts.insert(value.to_string(), 1);
                self.order.push(value.to_string());
            }
        }
    }
}

/// Streams raw rows and counts categorical values; [`VocabBuilder::finish`]
/// applies the frequency thresholds.
#[derive(Debug)]
pub struct VocabBuilder {
    columns: Vec<ColumnSpec>,
    counters: Vec<Option<Counter>>,
    rows: usize,
}

impl VocabBuilder {
    pub fn new(columns: &[ColumnSpec]) -> Self {
        let counters = columns
            .iter()
            .map(|c| (c.kind == FieldKind::Categorical).then(Counter::default))
            .collect();
        Self {
            columns: columns.to_vec(),
            counters,
            rows: 0,
        }
    }

    /// `row` holds one raw value per declared column, in schema order.
    pub fn observe<S: AsRef<str>>(&mut self, row: &[S]) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::Parse(format!(
                "row has {} values, schema has {} fields",
                row.len(),
                self.columns.len()
            )));
        }
        for (counter, value) in self.counters.iter_mut().zip(row) {
            if let Some(c) = counter {
                c.observe(value.as_ref());
            }
        }
        self.rows += 1;
        Ok(())
    }

    /// Values seen fewer than `min_count` times (per-column override, else
    /// `default_min_count`) collapse into [`UNKNOWN`]; the rest get dense
    /// indices `1..` in first-seen order.
    pub fn finish(self, default_min_count: usize) -> Result<Encoder> {
        if self.rows == 0 {
            return Err(Error::EmptyDataset);
        }
        if default_min_count == 0 {
            return Err(Error::Config("min_count must be >= 1".into()));
        }
        let mut vocabs = Vec::with_capacity(self.columns.len());
        for (col, counter) in self.columns.iter().zip(self.counters) {
            vocabs.push(counter.map(|c| {
                let threshold = col.min_count.unwrap_or(default_min_count);
                c.order
                    .into_iter()
                    .filter(|v| c.counts[v] >= threshold)
                    .collect::<Vec<_>>()
            }));
        }
        Encoder::from_vocabularies(&self.columns, vocabs)
    }
}

/// Builds an [`Encoder`] from in-memory rows.
pub fn build_vocab<S: AsRef<str>>(
    raw_rows: &[Vec<S>],
    columns: &[ColumnSpec],
    min_count: usize,
) -> Result<Encoder> {
    let mut builder = VocabBuilder::new(columns);
    for row in raw_rows {
        builder.observe(row)?;
    }
    builder.finish(min_count)
}

/// Maps raw string rows to [`Instance`]s under a fixed vocabulary.
#[derive(Clone, Debug)]
pub struct Encoder {
    schema: DatasetSchema,
    // kept values per categorical field; value at position k has index k + 1
    vocabularies: Vec<Option<Vec<String>>>,
    lookup: Vec<Option<HashMap<String, u32>>>,
}

/// Serializable form of an [`Encoder`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderState {
    pub schema: DatasetSchema,
    pub vocabularies: Vec<Option<Vec<String>>>,
}

impl Encoder {
    fn from_vocabularies(columns: &[ColumnSpec], vocabs: Vec<Option<Vec<String>>>) -> Result<Self> {
        let fields = columns
            .iter()
            .zip(&vocabs)
            .map(|(c, v)| FieldSpec {
                name: c.name.clone(),
                kind: c.kind,
                vocab_size: v.as_ref().map(|v| v.len() + 1),
            })
            .collect();
        Self::from_state(EncoderState {
            schema: DatasetSchema::new(fields)?,
            vocabularies: vocabs,
        })
    }

    pub fn from_state(state: EncoderState) -> Result<Self> {
        if state.vocabularies.len() != state.schema.n_fields() {
            return Err(Error::SchemaMismatch("vocabulary count != field count".into()));
        }
        let lookup = state
            .vocabularies
            .iter()
            .map(|v| {
                v.as_ref().map(|vals| {
                    vals.iter()
                        .enumerate()
                        .map(|(i, s)| (s.clone(), i as u32 + 1))
                        .collect()
                })
            })
            .collect();
        Ok(Self {
            schema: state.schema,
            vocabularies: state.vocabularies,
            lookup,
        })
    }

    pub fn state(&self) -> EncoderState {
        EncoderState {
            schema: self.schema.clone(),
            vocabularies: self.vocabularies.clone(),
        }
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    /// Index of a raw categorical value; unseen or rare values give [`UNKNOWN`].
    pub fn index_of(&self, field: usize, value: &str) -> Option<u32> {
        self.lookup[field]
            .as_ref()
            .map(|m| m.get(value).copied().unwrap_or(UNKNOWN))
    }

    /// Raw value behind a categorical index (`None` for the unknown bucket).
    pub fn value_of(&self, field: usize, index: u32) -> Option<&str> {
        let vocab = self.vocabularies[field].as_ref()?;
        index
            .checked_sub(1)
            .and_then(|k| vocab.get(k as usize))
            .map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, row: &[S], label: u8) -> Result<Instance> {
        if row.len() != self.schema.n_fields() {
            return Err(Error::Parse(format!(
                "row has {} values, schema has {} fields",
                row.len(),
                self.schema.n_fields()
            )));
        }
        let mut categorical = Vec::with_capacity(self.schema.n_categorical());
        let mut numeric = Vec::with_capacity(self.schema.n_numeric());
        for (i, (field, raw)) in self.schema.fields.iter().zip(row).enumerate() {
            let raw = raw.as_ref();
            match field.kind {
                FieldKind::Categorical => {
                    categorical.push(self.index_of(i, raw).unwrap_or(UNKNOWN));
                }
                FieldKind::Numeric => numeric.push(parse_numeric(&field.name, raw)?),
            }
        }
        Ok(Instance {
            categorical,
            numeric,
            label,
        })
    }

    pub fn encode_all<S: AsRef<str>>(&self, rows: &[Vec<S>], labels: &[u8]) -> Result<Dataset> {
        let mut ds = Dataset::new(self.schema.clone());
        for (row, &y) in rows.iter().zip(labels) {
            ds.push(self.encode(row, y)?)?;
        }
        Ok(ds)
    }
}

fn parse_numeric(field: &str, raw: &str) -> Result<f64> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(transform_numeric(None));
    }
    let z: f64 = raw
        .parse()
        .map_err(|_| Error::Parse(format!("field `{field}`: `{raw}` is not a number")))?;
    if !z.is_finite() {
        return Err(Error::Parse(format!("field `{field}`: non-finite value `{raw}`")));
    }
    Ok(transform_numeric(Some(z)))
}
