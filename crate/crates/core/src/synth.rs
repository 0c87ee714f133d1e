//! Synthetic multi-field data whose labels depend only on planted pairwise
//! interactions, for checking that edge selection finds them.
//!
//! Every field draws its value uniformly from `vocab` symbols, half of which
//! are marked active. A planted pair `(i, j)` fires when both fields hold an
//! active value, and the label is drawn from
//! `sigmoid(weight · Σ fired − weight · |planted| / 4 + N(0, noise²))`.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnSpec, FieldKind, SchemaFile};
use crate::diffcore::sigmoid;
use crate::error::{Error, Result};

pub const LABEL: &str = "label";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_fields: usize,
    pub vocab: usize,
    pub planted: Vec<(usize, usize)>,
    pub rows: usize,
    pub seed: u64,
    pub weight: f64,
    /// Standard deviation of the Gaussian noise added to the logit.
    pub noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_fields: 8,
            vocab: 10,
            planted: vec![(0, 1)],
            rows: 50_000,
            seed: 0,
            weight: 4.0,
            noise: 0.5,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_fields < 2 {
            return bad("need at least two fields".into());
        }
        if self.vocab < 2 {
            return bad("vocabulary needs at least two values".into());
        }
        if self.rows == 0 {
            return bad("rows must be >= 1".into());
        }
        if self.planted.is_empty() {
            return bad("plant at least one pair".into());
        }
        for &(i, j) in &self.planted {
            if i == j || i >= self.n_fields || j >= self.n_fields {
                return bad(format!("planted pair ({i}, {j}) invalid for {} fields", self.n_fields));
            }
        }
        if !(self.noise >= 0.0) || !self.weight.is_finite() {
            return bad("noise must be >= 0 and weight finite".into());
        }
        Ok(())
    }
}

/// Everything needed to recompute the labelling rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SynthSpec,
    /// Active value indices per field.
    pub active: Vec<Vec<usize>>,
    pub bias: f64,
    pub positive_rate: f64,
}

#[derive(Clone, Debug)]
pub struct Synthetic {
    /// Value index per row and field; the CSV spells index `k` as `v{k}`.
    pub codes: Vec<Vec<u32>>,
    pub labels: Vec<u8>,
    pub truth: GroundTruth,
}

pub fn field_name(i: usize) -> String {
    format!("f{i}")
}

pub fn generate(spec: &SynthSpec) -> Result<Synthetic> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let active: Vec<Vec<usize>> = (0..spec.n_fields)
        .map(|_| {
            let mut values: Vec<usize> = (0..spec.vocab).collect();
            values.shuffle(&mut rng);
            let mut half = values[..spec.vocab / 2].to_vec();
            half.sort_unstable();
            half
        })
        .collect();
    let is_active: Vec<Vec<bool>> = active
        .iter()
        .map(|a| (0..spec.vocab).map(|v| a.contains(&v)).collect())
        .collect();
    let bias = -spec.weight * spec.planted.len() as f64 / 4.0;
    let noise = Normal::new(0.0, spec.noise).expect("noise >= 0");

    let mut codes = Vec::with_capacity(spec.rows);
    let mut labels = Vec::with_capacity(spec.rows);
    for _ in 0..spec.rows {
        let row: Vec<u32> = (0..spec.n_fields)
            .map(|_| rng.random_range(0..spec.vocab) as u32)
            .collect();
        let fired = spec
            .planted
            .iter()
            .filter(|&&(i, j)| is_active[i][row[i] as usize] && is_active[j][row[j] as usize])
            .count();
        let logit = spec.weight * fired as f64 + bias + noise.sample(&mut rng);
        labels.push(u8::from(rng.random::<f64>() < sigmoid(logit)));
        codes.push(row);
    }
    let positive_rate = labels.iter().map(|&y| f64::from(y)).sum::<f64>() / spec.rows as f64;
    Ok(Synthetic {
        codes,
        labels,
        truth: GroundTruth {
            spec: spec.clone(),
            active,
            bias,
            positive_rate,
        },
    })
}

/// Paths written by [`Synthetic::write`].
#[derive(Clone, Debug)]
pub struct SynthFiles {
    pub data: PathBuf,
    pub schema: PathBuf,
    pub truth: PathBuf,
}

impl Synthetic {
    pub fn schema_file(&self) -> SchemaFile {
        SchemaFile {
            label: LABEL.into(),
            fields: (0..self.truth.spec.n_fields)
                .map(|i| ColumnSpec {
                    name: field_name(i),
                    kind: FieldKind::Categorical,
                    min_count: None,
                })
                .collect(),
        }
    }

    /// Writes `data.csv`, `schema.json` and `truth.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<SynthFiles> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = SynthFiles {
            data: dir.join("data.csv"),
            schema: dir.join("schema.json"),
            truth: dir.join("truth.json"),
        };
        let csv_err = |e| Error::Csv {
            path: files.data.clone(),
            source: e,
        };
        let mut w = csv::Writer::from_path(&files.data).map_err(csv_err)?;
        let mut header: Vec<String> = (0..self.truth.spec.n_fields).map(field_name).collect();
        header.push(LABEL.into());
        w.write_record(&header).map_err(csv_err)?;
        for (row, &y) in self.codes.iter().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| format!("v{v}")).collect();
            rec.push(y.to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(&files.data, e))?;
        self.schema_file().save(&files.schema)?;
        let text = serde_json::to_string_pretty(&self.truth).map_err(|e| Error::json(&files.truth, e))?;
        std::fs::write(&files.truth, text + "\n").map_err(|e| Error::io(&files.truth, e))?;
        Ok(files)
    }

    /// Empirical mutual information (nats) between the label and the joint
    /// value of fields `i` and `j`.
    pub fn pair_mutual_information(&self, i: usize, j: usize) -> f64 {
        let v = self.truth.spec.vocab;
        let mut joint = vec![[0usize; 2]; v * v];
        for (row, &y) in self.codes.iter().zip(&self.labels) {
            joint[row[i] as usize * v + row[j] as usize][y as usize] += 1;
        }
        let n = self.labels.len() as f64;
        let pos = self.labels.iter().filter(|&&y| y == 1).count() as f64 / n;
        let py = [1.0 - pos, pos];
        let mut mi = 0.0;
        for cell in &joint {
            let px = (cell[0] + cell[1]) as f64 / n;
            for y in 0..2 {
                let pxy = cell[y] as f64 / n;
                if pxy > 0.0 {
                    mi += pxy * (pxy / (px * py[y])).ln();
                }
            }
        }
        mi
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_csv;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            rows: 20_000,
            seed,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn planted_pair_carries_the_most_information() {
        let s = generate(&small(3)).unwrap();
        let planted = s.pair_mutual_information(0, 1);
        for i in 0..8 {
            for j in i + 1..8 {
                if (i, j) != (0, 1) {
                    assert!(planted > s.pair_mutual_information(i, j), "({i}, {j})");
                }
            }
        }
        assert!(s.truth.positive_rate > 0.2 && s.truth.positive_rate < 0.8);
    }

    #[test]
    fn seeded_and_shaped_as_requested() {
        let spec = SynthSpec {
            n_fields: 5,
            vocab: 4,
            rows: 300,
            planted: vec![(1, 3), (0, 4)],
            ..SynthSpec::default()
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.codes, b.codes);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.codes.len(), 300);
        assert!(a.codes.iter().all(|r| r.len() == 5 && r.iter().all(|&v| v < 4)));
        assert!(a.truth.active.iter().all(|act| act.len() == 2));
        let c = generate(&SynthSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.labels, c.labels);
    }

    #[test]
    fn files_round_trip_through_ingestion() {
        let spec = SynthSpec {
            rows: 200,
            ..SynthSpec::default()
        };
        let s = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = s.write(dir.path()).unwrap();
        let text = std::fs::read_to_string(&files.data).unwrap();
        assert_eq!(text.lines().count(), 201);
        assert!(text.starts_with("f0,f1,f2,f3,f4,f5,f6,f7,label\n"));
        let schema = SchemaFile::load(&files.schema).unwrap();
        let loaded = load_csv(&files.data, &schema, 1).unwrap();
        assert_eq!(loaded.dataset.len(), 200);
        assert_eq!(loaded.dataset.labels(), &s.labels[..]);
        let truth: GroundTruth =
            serde_json::from_str(&std::fs::read_to_string(&files.truth).unwrap()).unwrap();
        assert_eq!(truth, s.truth);
    }

    #[test]
    fn invalid_specs() {
        for spec in [
            SynthSpec { planted: vec![(2, 2)], ..SynthSpec::default() },
            SynthSpec { planted: vec![(0, 8)], ..SynthSpec::default() },
            SynthSpec { planted: vec![], ..SynthSpec::default() },
            SynthSpec { rows: 0, ..SynthSpec::default() },
            SynthSpec { vocab: 1, ..SynthSpec::default() },
        ] {
            assert!(generate(&spec).is_err(), "{spec:?}");
        }
    }
}
