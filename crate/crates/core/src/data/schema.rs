use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Categorical,
    Numeric,
}

/// One column declaration in the schema sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: FieldKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_count: Option<usize>,
}

/// The schema sidecar: `{"label": <col>, "fields": [{"name", "kind", "min_count"?}]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemaFile {
    pub label: String,
    pub fields: Vec<ColumnSpec>,
}

impl SchemaFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: SchemaFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.fields.is_empty() {
            return Err(Error::Config("schema declares no fields".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for f in &self.fields {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Config(format!("duplicate field `{}`", f.name)));
            }
            if f.name == self.label {
                return Err(Error::Config(format!("label `{}` is also a field", f.name)));
            }
            if f.min_count == Some(0) {
                return Err(Error::Config(format!("field `{}`: min_count must be >= 1", f.name)));
            }
        }
        Ok(())
    }
}

/// An encoded field: categorical fields carry their vocabulary size
/// (index 0 is the shared "unknown" bucket).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub fields: Vec<FieldSpec>,
}

impl DatasetSchema {
    pub fn new(fields: Vec<FieldSpec>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for f in &fields {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Config(format!("duplicate field `{}`", f.name)));
            }
            match (f.kind, f.vocab_size) {
                (FieldKind::Categorical, Some(v)) if v >= 1 => {}
                (FieldKind::Numeric, None) => {}
                _ => {
                    return Err(Error::Config(format!(
                        "field `{}`: bad vocab_size {:?} for {:?}",
                        f.name, f.vocab_size, f.kind
                    )))
                }
            }
        }
        Ok(Self { fields })
    }

    pub fn n_fields(&self) -> usize {
        self.fields.len()
    }

    pub fn n_categorical(&self) -> usize {
        self.fields
            .iter()
            .filter(|f| f.kind == FieldKind::Categorical)
            .count()
    }

    pub fn n_numeric(&self) -> usize {
        self.n_fields() - self.n_categorical()
    }

    /// For each field, its position among fields of the same kind.
    pub fn slots(&self) -> Vec<usize> {
        let (mut c, mut n) = (0, 0);
        self.fields
            .iter()
            .map(|f| match f.kind {
                FieldKind::Categorical => {
                    c += 1;
                    c - 1
                }
                FieldKind::Numeric => {
                    n += 1;
                    n - 1
                }
            })
            .collect()
    }

    /// Total one-hot width: every categorical index plus one slot per numeric field.
    pub fn total_features(&self) -> usize {
        self.fields.iter().map(|f| f.vocab_size.unwrap_or(1)).sum()
    }

    pub fn field_names(&self) -> Vec<String> {
        self.fields.iter().map(|f| f.name.clone()).collect()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("schema serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
