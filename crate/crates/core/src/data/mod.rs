//! Multi-field tabular data: schema, vocabulary, encoding, splits and batches.

mod batch;
mod encode;
pub mod movielens;
mod schema;
mod split;
mod transform;

use std::path::Path;

pub use batch::{Batch, BatchIter};
pub use encode::{build_vocab, Encoder, EncoderState, VocabBuilder, UNKNOWN};
pub use schema::{ColumnSpec, DatasetSchema, FieldKind, FieldSpec, SchemaFile};
pub use split::{split, SplitManifest, SplitSpec, Splits};
pub use transform::{binarize_movielens, transform_numeric};

use crate::error::{Error, Result};

/// One encoded row.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    /// Vocabulary index per categorical field, in schema order.
    pub categorical: Vec<u32>,
    /// Transformed value per numeric field, in schema order.
    pub numeric: Vec<f64>,
    pub label: u8,
}

/// Encoded rows stored flat, one stride per kind.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    schema: DatasetSchema,
    categorical: Vec<u32>,
    numeric: Vec<f64>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(schema: DatasetSchema) -> Self {
        Self {
            schema,
            categorical: Vec::new(),
            numeric: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn push(&mut self, inst: Instance) -> Result<()> {
        let n_cat = self.schema.n_categorical();
        let n_num = self.schema.n_numeric();
        if inst.categorical.len() != n_cat || inst.numeric.len() != n_num {
            return Err(Error::SchemaMismatch(format!(
                "instance has {}+{} values, schema expects {n_cat}+{n_num}",
                inst.categorical.len(),
                inst.numeric.len()
            )));
        }
        let vocab_sizes = self
            .schema
            .fields
            .iter()
            .filter_map(|f| f.vocab_size);
        for (&idx, size) in inst.categorical.iter().zip(vocab_sizes) {
            if idx as usize >= size {
                return Err(Error::SchemaMismatch(format!(
                    "categorical index {idx} >= vocab size {size}"
                )));
            }
        }
        if inst.numeric.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse("non-finite numeric value".into()));
        }
        if inst.label > 1 {
            return Err(Error::Parse(format!("label {} is not binary", inst.label)));
        }
        self.categorical.extend_from_slice(&inst.categorical);
        self.numeric.extend_from_slice(&inst.numeric);
        self.labels.push(inst.label);
        Ok(())
    }

    pub fn instance(&self, i: usize) -> Instance {
        let (nc, nn) = (self.schema.n_categorical(), self.schema.n_numeric());
        Instance {
            categorical: self.categorical[i * nc..(i + 1) * nc].to_vec(),
            numeric: self.numeric[i * nn..(i + 1) * nn].to_vec(),
            label: self.labels[i],
        }
    }

    pub fn categorical_row(&self, i: usize) -> &[u32] {
        let nc = self.schema.n_categorical();
        &self.categorical[i * nc..(i + 1) * nc]
    }

    pub fn numeric_row(&self, i: usize) -> &[f64] {
        let nn = self.schema.n_numeric();
        &self.numeric[i * nn..(i + 1) * nn]
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut out = Dataset::new(self.schema.clone());
        for &i in indices {
            out.categorical.extend_from_slice(self.categorical_row(i));
            out.numeric.extend_from_slice(self.numeric_row(i));
            out.labels.push(self.labels[i]);
        }
        out
    }

    /// Packs the rows at `indices` into a column-wise batch.
    pub fn batch(&self, indices: &[usize]) -> Batch {
        Batch::gather(self, indices)
    }

    pub fn full_batch(&self) -> Batch {
        let all: Vec<usize> = (0..self.len()).collect();
        self.batch(&all)
    }

    /// Mini-batches over all rows; see [`BatchIter`].
    pub fn batches(&self, batch_size: usize, shuffle: Option<(u64, u64)>) -> BatchIter<'_> {
        BatchIter::new(self, batch_size, shuffle)
    }
}

/// Result of ingesting a CSV with a freshly built vocabulary.
#[derive(Debug)]
pub struct Loaded {
    pub encoder: Encoder,
    pub dataset: Dataset,
}

struct CsvColumns {
    label: usize,
    fields: Vec<usize>,
}

fn open_csv(path: &Path, schema: &SchemaFile) -> Result<(csv::Reader<std::fs::File>, CsvColumns)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: path.into(),
            source: e,
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: path.into(),
            source: e,
        })?
        .clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::SchemaMismatch(format!("{}: no column named `{name}`", path.display()))
        })
    };
    let label = find(&schema.label)?;
    let fields = schema
        .fields
        .iter()
        .map(|f| find(&f.name))
        .collect::<Result<Vec<_>>>()?;
    Ok((reader, CsvColumns { label, fields }))
}

fn parse_label(raw: &str, line: usize) -> Result<u8> {
    match raw.trim().parse::<f64>() {
        Ok(v) if v == 0.0 => Ok(0),
        Ok(v) if v == 1.0 => Ok(1),
        _ => Err(Error::Parse(format!("line {line}: label `{raw}` is not 0 or 1"))),
    }
}

fn for_each_row(
    path: &Path,
    schema: &SchemaFile,
    mut f: impl FnMut(&[&str], u8) -> Result<()>,
) -> Result<()> {
    let (mut reader, cols) = open_csv(path, schema)?;
    let mut record = csv::StringRecord::new();
    let mut line = 1;
    loop {
        let more = reader.read_record(&mut record).map_err(|e| Error::Csv {
            path: path.into(),
            source: e,
        })?;
        if !more {
            break;
        }
        line += 1;
        let label = parse_label(record.get(cols.label).unwrap_or(""), line)?;
        let values: Vec<&str> = cols
            .fields
            .iter()
            .map(|&c| record.get(c).unwrap_or(""))
            .collect();
        f(&values, label)?;
    }
    Ok(())
}

/// Two passes over `path`: count categorical values, then encode.
pub fn load_csv(path: &Path, schema: &SchemaFile, default_min_count: usize) -> Result<Loaded> {
    schema.validate()?;
    let mut builder = VocabBuilder::new(&schema.fields);
    for_each_row(path, schema, |row, _| builder.observe(row))?;
    let encoder = builder.finish(default_min_count)?;
    let dataset = encode_csv(path, schema, &encoder)?;
    Ok(Loaded { encoder, dataset })
}

/// Encodes `path` with an existing vocabulary (unseen values → unknown).
pub fn encode_csv(path: &Path, schema: &SchemaFile, encoder: &Encoder) -> Result<Dataset> {
    let names: Vec<&str> = schema.fields.iter().map(|f| f.name.as_str()).collect();
    let expected: Vec<&str> = encoder
        .schema()
        .fields
        .iter()
        .map(|f| f.name.as_str())
        .collect();
    if names != expected {
        return Err(Error::SchemaMismatch(format!(
            "schema fields {names:?} do not match encoder fields {expected:?}"
        )));
    }
    let mut dataset = Dataset::new(encoder.schema().clone());
    for_each_row(path, schema, |row, label| {
        dataset.push(encoder.encode(row, label)?)
    })?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(dataset)
}
