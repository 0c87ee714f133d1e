//! Run configuration shared by `train` and `ablate`.
//!
//! A config file is a JSON object with flat dotted keys:
//!
//! ```json
//! { "data.path": "ml1m/data.csv", "data.schema": "ml1m/schema.json",
//!   "model.preset": "movielens", "train.epochs": 20, "seed": 3 }
//! ```
//!
//! Values are applied in three layers, later ones winning: built-in defaults,
//! then the file, then command-line flags. The fully resolved result is
//! written back in the same format as `config.json` in every run directory,
//! so `--config out/config.json` replays a run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::model::{make_variant, Activation, HeadMerge, ModelConfig, ModelKind, Variant};
use crate::train::{AdamConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub min_count: usize,
    pub kind: ModelKind,
    pub variant: Variant,
    pub preset: Option<String>,
    pub layers: Option<usize>,
    pub heads: Option<usize>,
    pub dim: Option<usize>,
    pub mk: Option<Vec<usize>>,
    pub activation: Activation,
    pub head_merge: HeadMerge,
    pub batch: usize,
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            data: None,
            schema: None,
            out: None,
            seed: 0,
            min_count: 1,
            kind: ModelKind::GraphFm,
            variant: Variant::Full,
            preset: None,
            layers: None,
            heads: None,
            dim: None,
            mk: None,
            activation: Activation::Relu,
            head_merge: HeadMerge::Concat,
            batch: t.batch_size,
            lr: t.adam.lr,
            epochs: t.max_epochs,
            patience: t.patience,
        }
    }
}

/// Neighbourhood sizes published for the three benchmark datasets.
pub fn preset_neighbors(name: &str) -> Result<Vec<usize>> {
    match name.to_ascii_lowercase().as_str() {
        "criteo" => Ok(vec![39, 20, 5]),
        "avazu" => Ok(vec![23, 10, 2]),
        "movielens" | "ml1m" | "ml-1m" => Ok(vec![7, 4, 2]),
        other => Err(Error::Config(format!(
            "unknown preset `{other}` (expected criteo, avazu or movielens)"
        ))),
    }
}

/// Parses `"7,4,2"` into neighbourhood sizes.
pub fn parse_mk(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad neighbourhood size `{p}` in `{s}`")))
        })
        .collect()
}

fn kind_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::GraphFm => "graphfm",
        ModelKind::Fm => "fm",
        ModelKind::Lr => "lr",
    }
}

pub fn parse_kind(s: &str) -> Result<ModelKind> {
    match s.to_ascii_lowercase().as_str() {
        "graphfm" => Ok(ModelKind::GraphFm),
        "fm" => Ok(ModelKind::Fm),
        "lr" => Ok(ModelKind::Lr),
        other => Err(Error::Config(format!("unknown model `{other}` (expected graphfm, fm or lr)"))),
    }
}

pub fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Full => "full",
        Variant::NoSelect => "no_select",
        Variant::NoInteract => "no_interact",
        Variant::SingleHead => "single_head",
    }
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Relu => "relu",
        Activation::Sigmoid => "sigmoid",
        Activation::Elu => "elu",
    }
}

fn parse_head_merge(s: &str) -> Result<HeadMerge> {
    match s.to_ascii_lowercase().as_str() {
        "concat" => Ok(HeadMerge::Concat),
        "mean" => Ok(HeadMerge::Mean),
        other => Err(Error::Config(format!("unknown head merge `{other}` (expected concat or mean)"))),
    }
}

impl RunConfig {
    /// Reads a dotted-key config file and applies it over the defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let Value::Object(map) = value else {
            return Err(Error::Config(format!("{}: config must be a JSON object", path.display())));
        };
        let mut config = Self::default();
        for (key, v) in &map {
            config.set(key, v).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
                other => other,
            })?;
        }
        Ok(config)
    }

    /// Sets one dotted key. Numbers may also be given as strings.
    pub fn set(&mut self, key: &str, value: &Value) -> Result<()> {
        let text = || match value {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            _ => Err(Error::Config(format!("`{key}`: expected a string or number, got {value}"))),
        };
        let uint = || {
            text()?
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("`{key}`: expected a non-negative integer, got {value}")))
        };
        let opt_uint = || if value.is_null() { Ok(None) } else { uint().map(Some) };
        let opt_path = || if value.is_null() { Ok(None) } else { text().map(|s| Some(s.into())) };
        match key {
            "data.path" => self.data = opt_path()?,
            "data.schema" => self.schema = opt_path()?,
            "data.min_count" => self.min_count = uint()?,
            "out" => self.out = opt_path()?,
            "seed" => self.seed = uint()? as u64,
            "model.kind" => self.kind = parse_kind(&text()?)?,
            "model.variant" => self.variant = text()?.parse()?,
            "model.preset" => {
                self.preset = match value {
                    Value::Null => None,
                    _ => Some(text()?),
                }
            }
            "model.layers" => self.layers = opt_uint()?,
            "model.heads" => self.heads = opt_uint()?,
            "model.dim" => self.dim = opt_uint()?,
            "model.mk" => {
                self.mk = match value {
                    Value::Null => None,
                    Value::Array(items) => Some(
                        items
                            .iter()
                            .map(|v| {
                                v.as_u64().map(|m| m as usize).ok_or_else(|| {
                                    Error::Config(format!("`{key}`: {v} is not a non-negative integer"))
                                })
                            })
                            .collect::<Result<_>>()?,
                    ),
                    _ => Some(parse_mk(&text()?)?),
                }
            }
            "model.activation" => self.activation = text()?.parse()?,
            "model.head_merge" => self.head_merge = parse_head_merge(&text()?)?,
            "train.batch" => self.batch = uint()?,
            "train.lr" => {
                self.lr = text()?
                    .parse()
                    .map_err(|_| Error::Config(format!("`{key}`: expected a number, got {value}")))?
            }
            "train.epochs" => self.epochs = uint()?,
            "train.patience" => self.patience = uint()?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// The resolved configuration as dotted keys, in the format
    /// [`RunConfig::from_file`] reads.
    pub fn to_flat(&self) -> BTreeMap<String, Value> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        BTreeMap::from([
            ("data.path".into(), json!(path(&self.data))),
            ("data.schema".into(), json!(path(&self.schema))),
            ("data.min_count".into(), json!(self.min_count)),
            ("out".into(), json!(path(&self.out))),
            ("seed".into(), json!(self.seed)),
            ("model.kind".into(), json!(kind_name(self.kind))),
            ("model.variant".into(), json!(variant_name(self.variant))),
            ("model.preset".into(), json!(self.preset)),
            ("model.layers".into(), json!(self.layers)),
            ("model.heads".into(), json!(self.heads)),
            ("model.dim".into(), json!(self.dim)),
            ("model.mk".into(), json!(self.mk)),
            ("model.activation".into(), json!(activation_name(self.activation))),
            (
                "model.head_merge".into(),
                json!(match self.head_merge {
                    HeadMerge::Concat => "concat",
                    HeadMerge::Mean => "mean",
                }),
            ),
            ("train.batch".into(), json!(self.batch)),
            ("train.lr".into(), json!(self.lr)),
            ("train.epochs".into(), json!(self.epochs)),
            ("train.patience".into(), json!(self.patience)),
        ])
    }

    /// Model configuration for `n_fields` fields with `variant` applied.
    ///
    /// Neighbourhood sizes come from `mk`, else the preset, else
    /// `m_k = ⌈n / 2^(k-1)⌉` for `k = 1..=K`.
    pub fn model_config(&self, n_fields: usize, variant: Variant) -> Result<ModelConfig> {
        let mut config = match self.kind {
            ModelKind::Lr => return Ok(ModelConfig::lr()),
            ModelKind::Fm => ModelConfig::fm(self.dim.unwrap_or(16)),
            ModelKind::GraphFm => {
                let mut c = ModelConfig::graphfm(n_fields);
                if let Some(dim) = self.dim {
                    c.dim = dim;
                }
                if let Some(heads) = self.heads {
                    c.heads = heads;
                }
                let mk = match (&self.mk, &self.preset) {
                    (Some(mk), _) => Some(mk.clone()),
                    (None, Some(p)) => Some(preset_neighbors(p)?),
                    (None, None) => None,
                };
                c.layers = self.layers.or(mk.as_ref().map(Vec::len)).unwrap_or(c.layers);
                c.neighbors = mk.unwrap_or_else(|| {
                    (0..c.layers).map(|k| n_fields.div_ceil(1 << k.min(63))).collect()
                });
                c.activation = self.activation;
                c.head_merge = self.head_merge;
                make_variant(variant, &c)
            }
        };
        config.init_seed = self.seed;
        config.validate(n_fields)?;
        Ok(config)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            max_epochs: self.epochs,
            patience: self.patience,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_round_trip() {
        let mut c = RunConfig {
            data: Some("a.csv".into()),
            mk: Some(vec![5, 3]),
            layers: Some(2),
            lr: 0.01,
            kind: ModelKind::Fm,
            variant: Variant::NoInteract,
            ..RunConfig::default()
        };
        c.preset = Some("avazu".into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, serde_json::to_string(&c.to_flat()).unwrap()).unwrap();
        assert_eq!(RunConfig::from_file(&path).unwrap(), c);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut c = RunConfig::default();
        assert!(c.set("train.lrate", &json!(0.1)).is_err());
        assert!(c.set("train.epochs", &json!(-1)).is_err());
        assert!(c.set("model.mk", &json!("4,x")).is_err());
        c.set("model.mk", &json!("4, 2")).unwrap();
        c.set("train.epochs", &json!("7")).unwrap();
        assert_eq!((c.mk.clone(), c.epochs), (Some(vec![4, 2]), 7));
    }

    #[test]
    fn neighbourhood_defaults_presets_and_overrides() {
        let mut c = RunConfig::default();
        assert_eq!(c.model_config(7, Variant::Full).unwrap().neighbors, vec![7, 4, 2]);
        c.layers = Some(4);
        assert_eq!(c.model_config(9, Variant::Full).unwrap().neighbors, vec![9, 5, 3, 2]);
        c.layers = None;
        c.preset = Some("criteo".into());
        assert_eq!(c.model_config(39, Variant::Full).unwrap().neighbors, vec![39, 20, 5]);
        assert!(c.model_config(7, Variant::Full).is_err(), "preset larger than field count");
        c.mk = Some(vec![7, 1]);
        let m = c.model_config(7, Variant::SingleHead).unwrap();
        assert_eq!((m.layers, m.neighbors.clone(), m.heads), (2, vec![7, 1], 1));
        c.dim = Some(15);
        assert!(c.model_config(7, Variant::Full).is_err(), "two heads do not divide 15");
    }

    #[test]
    fn file_errors_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.json");
        let msg = RunConfig::from_file(&missing).unwrap_err().to_string();
        assert!(msg.contains("nope.json"), "{msg}");
        let bad = dir.path().join("bad.json");
        std::fs::write(&bad, r#"{"train.bogus": 1}"#).unwrap();
        let msg = RunConfig::from_file(&bad).unwrap_err().to_string();
        assert!(msg.contains("bad.json") && msg.contains("train.bogus"), "{msg}");
    }
}
