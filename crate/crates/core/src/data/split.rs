use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(ratios: [f64; 3], seed: u64) -> Result<Self> {
        let spec = Self { ratios, seed };
        spec.validate()?;
        Ok(spec)
    }

    /// 8:1:1 train/validation/test.
    pub fn standard(seed: u64) -> Self {
        Self {
            ratios: [0.8, 0.1, 0.1],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.ratios.iter().sum();
        if self.ratios.iter().any(|&r| !(r > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios {:?} must be positive and sum to 1",
                self.ratios
            )));
        }
        Ok(())
    }

    fn sizes(&self, n: usize) -> Result<[usize; 3]> {
        let train = (n as f64 * self.ratios[0]).round() as usize;
        let val = (n as f64 * self.ratios[1]).round() as usize;
        let test = n.saturating_sub(train + val);
        for (size, name) in [(train, "train"), (val, "val"), (test, "test")] {
            if size == 0 {
                return Err(Error::EmptySplit(name));
            }
        }
        Ok([train, val, test])
    }
}

/// Reproducibility record: the seed plus the index ranges into the seeded
/// permutation of `0..n_rows` that make up each partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub n_rows: usize,
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// Source row index for every row of train, val and test (in that order).
    pub permutation: Vec<usize>,
    pub manifest: SplitManifest,
}

/// Seeded uniform shuffle followed by a contiguous partition.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    let n = dataset.len();
    let [train, val, _] = spec.sizes(n)?;
    let mut permutation: Vec<usize> = (0..n).collect();
    permutation.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let manifest = SplitManifest {
        seed: spec.seed,
        ratios: spec.ratios,
        n_rows: n,
        train: 0..train,
        val: train..train + val,
        test: train + val..n,
    };
    Ok(Splits {
        train: dataset.subset(&permutation[manifest.train.clone()]),
        val: dataset.subset(&permutation[manifest.val.clone()]),
        test: dataset.subset(&permutation[manifest.test.clone()]),
        permutation,
        manifest,
    })
}
