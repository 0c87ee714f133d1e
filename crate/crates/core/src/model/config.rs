use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    GraphFm,
    Fm,
    Lr,
}

/// Ablations of the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// No edge selection: every pair is kept and `p ≡ 1`.
    NoSelect,
    /// Aggregate transformed neighbour embeddings instead of interactions.
    NoInteract,
    /// One attention head of full width.
    SingleHead,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoSelect,
        Variant::NoInteract,
        Variant::SingleHead,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "GraphFM",
            Variant::NoSelect => "GraphFM(-S)",
            Variant::NoInteract => "GraphFM(-I)",
            Variant::SingleHead => "GraphFM(-M)",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "full" => Ok(Variant::Full),
            "no_select" | "s" => Ok(Variant::NoSelect),
            "no_interact" | "i" => Ok(Variant::NoInteract),
            "single_head" | "m" => Ok(Variant::SingleHead),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

/// Nonlinearity applied to each aggregated head output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Elu,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "elu" => Ok(Activation::Elu),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// How head outputs combine: concatenation of `d/H`-wide heads, or the mean
/// of `d`-wide heads taken before the nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMerge {
    Concat,
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Embedding size `d`.
    pub dim: usize,
    /// Number of select+aggregate layers `K`.
    pub layers: usize,
    pub heads: usize,
    /// Neighbourhood size per layer; `neighbors[0]` is normally the field count.
    pub neighbors: Vec<usize>,
    /// Hidden width of the edge-scoring MLP; defaults to `dim`.
    pub selection_hidden: Option<usize>,
    pub select: bool,
    pub interact: bool,
    pub activation: Activation,
    pub head_merge: HeadMerge,
    pub leaky_slope: f64,
    pub embed_init_std: f64,
    pub init_seed: u64,
}

impl ModelConfig {
    /// Full GraphFM with `d = 16`, `K = 3`, `H = 2` and neighbourhood sizes
    /// `[n, ⌈n/2⌉, ⌈n/4⌉]`.
    pub fn graphfm(n_fields: usize) -> Self {
        Self {
            kind: ModelKind::GraphFm,
            dim: 16,
            layers: 3,
            heads: 2,
            neighbors: vec![n_fields, n_fields.div_ceil(2), n_fields.div_ceil(4)],
            selection_hidden: None,
            select: true,
            interact: true,
            activation: Activation::Relu,
            head_merge: HeadMerge::Concat,
            leaky_slope: 0.2,
            embed_init_std: 0.01,
            init_seed: 0,
        }
    }

    pub fn fm(dim: usize) -> Self {
        Self {
            kind: ModelKind::Fm,
            dim,
            layers: 0,
            heads: 1,
            neighbors: Vec::new(),
            ..Self::graphfm(1)
        }
    }

    pub fn lr() -> Self {
        Self {
            kind: ModelKind::Lr,
            dim: 0,
            ..Self::fm(0)
        }
    }

    pub fn hidden(&self) -> usize {
        self.selection_hidden.unwrap_or(self.dim)
    }

    /// Output width of one attention head.
    pub fn head_width(&self) -> usize {
        match self.head_merge {
            HeadMerge::Concat => self.dim / self.heads,
            HeadMerge::Mean => self.dim,
        }
    }

    pub fn validate(&self, n_fields: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if n_fields == 0 {
            return bad("model needs at least one field".into());
        }
        match self.kind {
            ModelKind::Lr => return Ok(()),
            ModelKind::Fm => {
                return if self.dim == 0 {
                    bad("embedding dim must be >= 1".into())
                } else {
                    Ok(())
                };
            }
            ModelKind::GraphFm => {}
        }
        if self.dim == 0 {
            return bad("embedding dim must be >= 1".into());
        }
        if self.layers == 0 {
            return bad("need at least one layer".into());
        }
        if self.heads == 0 {
            return bad("need at least one attention head".into());
        }
        if self.head_merge == HeadMerge::Concat && self.dim % self.heads != 0 {
            return bad(format!(
                "dim {} is not divisible by {} heads",
                self.dim, self.heads
            ));
        }
        if self.hidden() == 0 {
            return bad("selection hidden width must be >= 1".into());
        }
        if self.neighbors.len() != self.layers {
            return bad(format!(
                "{} neighbourhood sizes given for {} layers",
                self.neighbors.len(),
                self.layers
            ));
        }
        for (k, &m) in self.neighbors.iter().enumerate() {
            if m == 0 || m > n_fields {
                return bad(format!(
                    "layer {}: neighbourhood size {m} outside 1..={n_fields}",
                    k + 1
                ));
            }
        }
        if !(self.leaky_slope >= 0.0) || !(self.embed_init_std > 0.0) {
            return bad("leaky slope must be >= 0 and init std > 0".into());
        }
        Ok(())
    }
}

/// Applies an ablation to a full-model configuration.
pub fn make_variant(variant: Variant, config: &ModelConfig) -> ModelConfig {
    let mut out = config.clone();
    match variant {
        Variant::Full => {}
        Variant::NoSelect => out.select = false,
        Variant::NoInteract => out.interact = false,
        Variant::SingleHead => out.heads = 1,
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_for_seven_fields() {
        let c = ModelConfig::graphfm(7);
        assert_eq!(c.neighbors, vec![7, 4, 2]);
        assert_eq!((c.dim, c.layers, c.heads), (16, 3, 2));
        c.validate(7).unwrap();
    }

    #[test]
    fn validation_errors() {
        let mut c = ModelConfig::graphfm(5);
        c.neighbors = vec![5, 6, 1];
        assert!(c.validate(5).is_err());
        let mut c = ModelConfig::graphfm(5);
        c.heads = 3;
        assert!(c.validate(5).is_err());
        c.head_merge = HeadMerge::Mean;
        assert!(c.validate(5).is_ok());
        let mut c = ModelConfig::graphfm(5);
        c.neighbors.pop();
        assert!(c.validate(5).is_err());
    }

    #[test]
    fn variants() {
        let base = ModelConfig::graphfm(8);
        assert!(!make_variant(Variant::NoSelect, &base).select);
        assert!(!make_variant(Variant::NoInteract, &base).interact);
        let single = make_variant(Variant::SingleHead, &base);
        assert_eq!(single.heads, 1);
        assert_eq!(single.head_width(), single.dim);
        assert_eq!(make_variant(Variant::Full, &base), base);
        assert_eq!("no-select".parse::<Variant>().unwrap(), Variant::NoSelect);
    }
}
