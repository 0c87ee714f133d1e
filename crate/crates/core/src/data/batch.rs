use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;

/// Rows packed column-wise: one index column per categorical field and one
/// value column per numeric field, in schema order within each kind.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub categorical: Vec<Vec<usize>>,
    pub numeric: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    /// Row positions in the source dataset.
    pub rows: Vec<usize>,
}

impl Batch {
    pub(crate) fn gather(ds: &Dataset, indices: &[usize]) -> Self {
        let (nc, nn) = (ds.schema().n_categorical(), ds.schema().n_numeric());
        let mut categorical = vec![Vec::with_capacity(indices.len()); nc];
        let mut numeric = vec![Vec::with_capacity(indices.len()); nn];
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            for (col, &v) in categorical.iter_mut().zip(ds.categorical_row(i)) {
                col.push(v as usize);
            }
            for (col, &v) in numeric.iter_mut().zip(ds.numeric_row(i)) {
                col.push(v);
            }
            labels.push(f64::from(ds.labels()[i]));
        }
        Self {
            categorical,
            numeric,
            labels,
            rows: indices.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    /// Rows `range` of this batch.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Batch {
        Batch {
            categorical: self.categorical.iter().map(|c| c[range.clone()].to_vec()).collect(),
            numeric: self.numeric.iter().map(|c| c[range.clone()].to_vec()).collect(),
            labels: self.labels[range.clone()].to_vec(),
            rows: self.rows[range].to_vec(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// One pass over a dataset in fixed-size batches (the last may be short).
///
/// With `shuffle = Some((seed, epoch))` the row order is a permutation drawn
/// from a generator keyed on both, so each epoch reshuffles reproducibly.
pub struct BatchIter<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl<'a> BatchIter<'a> {
    pub fn new(dataset: &'a Dataset, batch_size: usize, shuffle: Option<(u64, u64)>) -> Self {
        assert!(batch_size >= 1, "batch_size must be >= 1");
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        if let Some((seed, epoch)) = shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(epoch);
            order.shuffle(&mut rng);
        }
        Self {
            dataset,
            order,
            batch_size,
            pos: 0,
        }
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.dataset.batch(&self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetSchema, FieldKind, FieldSpec, Instance};

    fn toy(n: usize) -> Dataset {
        let schema = DatasetSchema::new(vec![
            FieldSpec { name: "c".into(), kind: FieldKind::Categorical, vocab_size: Some(n + 1) },
            FieldSpec { name: "x".into(), kind: FieldKind::Numeric, vocab_size: None },
        ])
        .unwrap();
        let mut ds = Dataset::new(schema);
        for i in 0..n {
            ds.push(Instance {
                categorical: vec![i as u32 + 1],
                numeric: vec![i as f64],
                label: (i % 2) as u8,
            })
            .unwrap();
        }
        ds
    }

    #[test]
    fn sizes_and_order_without_shuffle() {
        let ds = toy(5);
        let sizes: Vec<usize> = ds.batches(2, None).map(|b| b.len()).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
        let rows: Vec<usize> = ds.batches(2, None).flat_map(|b| b.rows).collect();
        assert_eq!(rows, vec![0, 1, 2, 3, 4]);
        let first = ds.batches(2, None).next().unwrap();
        assert_eq!(first.categorical, vec![vec![1, 2]]);
        assert_eq!(first.numeric, vec![vec![0.0, 1.0]]);
    }

    #[test]
    fn shuffled_epoch_is_a_permutation_and_reproducible() {
        let ds = toy(37);
        let run = |epoch| -> Vec<usize> { ds.batches(8, Some((42, epoch))).flat_map(|b| b.rows).collect() };
        let e0 = run(0);
        let mut sorted = e0.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..37).collect::<Vec<_>>());
        assert_eq!(e0, run(0));
        assert_ne!(e0, run(1));

        let mut labels: Vec<f64> = ds.batches(8, Some((42, 3))).flat_map(|b| b.labels).collect();
        let mut orig: Vec<f64> = ds.labels().iter().map(|&l| f64::from(l)).collect();
        labels.sort_by(f64::total_cmp);
        orig.sort_by(f64::total_cmp);
        assert_eq!(labels, orig);
    }
}
