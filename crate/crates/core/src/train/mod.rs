//! Log-loss training with Adam, validation-AUC early stopping, and the
//! evaluation metrics.

mod adam;
mod metrics;

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use adam::{AdamConfig, AdamState};
pub use metrics::{auc, logloss};

use crate::data::{Batch, Dataset, Encoder};
use crate::diffcore::Gradients;
use crate::error::{Error, Result};
use crate::model::{checkpoint, Model};

const EVAL_BATCH: usize = 4096;
pub const HISTORY_FILE: &str = "history.jsonl";
pub const BEST_DIR: &str = "best";
pub const LAST_DIR: &str = "last";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub max_epochs: usize,
    /// Consecutive epochs without a validation-AUC improvement tolerated
    /// before stopping; 0 stops at the first such epoch.
    pub patience: usize,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            adam: AdamConfig::default(),
            max_epochs: 30,
            patience: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max epochs must be >= 1".into()));
        }
        let a = &self.adam;
        if !(a.lr > 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::Config(format!("invalid Adam settings {a:?}")));
        }
        Ok(())
    }
}

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_logloss: f64,
    pub val_auc: f64,
    pub val_logloss: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auc: f64,
    pub logloss: f64,
}

/// Logits for every row of `data`, in row order.
pub fn predict(model: &Model, data: &Dataset) -> Result<Vec<f64>> {
    if model.schema() != data.schema() {
        return Err(Error::SchemaMismatch("dataset schema differs from the model's".into()));
    }
    let mut out = Vec::with_capacity(data.len());
    for batch in data.batches(EVAL_BATCH, None) {
        out.extend(model.logits(&batch)?);
    }
    Ok(out)
}

pub fn evaluate(model: &Model, data: &Dataset) -> Result<Metrics> {
    let logits = predict(model, data)?;
    let labels: Vec<f64> = data.labels().iter().map(|&y| f64::from(y)).collect();
    Ok(Metrics {
        auc: auc(&logits, &labels)?,
        logloss: logloss(&logits, &labels)?,
    })
}

/// Batches are cut into this many contiguous shards, each differentiated on
/// its own tape, possibly on its own thread. The shard count is fixed so the
/// summation order, and hence every bit of the result, does not depend on
/// how many cores the machine has.
pub const GRAD_SHARDS: usize = 8;

/// Mean log loss over `batch` and its gradients, computed shard by shard and
/// reduced in shard order.
pub fn loss_and_grads(model: &Model, batch: &Batch) -> Result<(f64, Gradients)> {
    let b = batch.len();
    let shards = GRAD_SHARDS.min(b).max(1);
    let bounds: Vec<_> = (0..shards).map(|s| s * b / shards..(s + 1) * b / shards).collect();
    let threads = std::thread::available_parallelism().map_or(1, |t| t.get()).min(shards);

    let work = |range: std::ops::Range<usize>| model.loss_and_grads(&batch.slice(range));
    let results: Vec<Result<(f64, Gradients)>> = if threads <= 1 {
        bounds.iter().cloned().map(work).collect()
    } else {
        std::thread::scope(|scope| {
            let per = shards.div_ceil(threads);
            let handles: Vec<_> = bounds
                .chunks(per)
                .map(|group| scope.spawn(move || group.iter().cloned().map(work).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("gradient worker panicked"))
                .collect()
        })
    };

    let mut loss = 0.0;
    let mut total: Option<Gradients> = None;
    for (range, result) in bounds.iter().zip(results) {
        let (l, mut g) = result?;
        let w = range.len() as f64 / b as f64;
        loss += w * l;
        g.scale_params(w);
        match total.as_mut() {
            Some(t) => t.accumulate_params(&g),
            None => total = Some(g),
        }
    }
    Ok((loss, total.ok_or(Error::EmptyDataset)?))
}

/// What [`Trainer::fit`] hands back.
#[derive(Debug)]
pub struct FitOutput {
    /// Parameters from the epoch with the highest validation AUC.
    pub best: Model,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Progress {
    epochs_done: usize,
    best_epoch: Option<usize>,
    best_val_auc: Option<f64>,
    since_best: usize,
    train_config: TrainConfig,
    history: Vec<EpochRecord>,
}

/// The epoch loop, with enough state to stop and resume bit-exactly.
pub struct Trainer {
    model: Model,
    encoder: Encoder,
    adam: AdamState,
    best: Option<Model>,
    progress: Progress,
}

impl Trainer {
    pub fn new(model: Model, encoder: Encoder, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if encoder.schema() != model.schema() {
            return Err(Error::SchemaMismatch("encoder and model schemas differ".into()));
        }
        let adam = AdamState::new(config.adam, model.params());
        Ok(Self {
            model,
            encoder,
            adam,
            best: None,
            progress: Progress {
                epochs_done: 0,
                best_epoch: None,
                best_val_auc: None,
                since_best: 0,
                train_config: config,
                history: Vec::new(),
            },
        })
    }

    /// Restores a run from the `last/` and `best/` checkpoints under `out`.
    pub fn resume(out: &Path) -> Result<Self> {
        let last = checkpoint::load(&out.join(LAST_DIR))?;
        let progress: Progress = serde_json::from_value(last.meta.clone())
            .map_err(|e| Error::json(out.join(LAST_DIR), e))?;
        let adam = AdamState::from_arrays(progress.train_config.adam, last.model.params(), &last.aux)?;
        let best = match progress.best_epoch {
            Some(_) => Some(checkpoint::load(&out.join(BEST_DIR))?.model),
            None => None,
        };
        Ok(Self {
            model: last.model,
            encoder: last.encoder,
            adam,
            best,
            progress,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.progress.train_config
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.progress.history
    }

    pub fn epochs_done(&self) -> usize {
        self.progress.epochs_done
    }

    pub fn should_stop(&self) -> bool {
        let p = &self.progress;
        let patience = p.train_config.patience;
        p.epochs_done >= p.train_config.max_epochs || (p.since_best > 0 && p.since_best >= patience)
    }

    /// One pass over `train` followed by validation. Non-finite values
    /// anywhere in the step become [`Error::Diverged`].
    pub fn run_epoch(&mut self, train: &Dataset, val: &Dataset) -> Result<EpochRecord> {
        let epoch = self.progress.epochs_done + 1;
        let start = Instant::now();
        let diverged = |e: Error, last: Option<usize>| match e {
            Error::NonFinite(_) => Error::Diverged {
                epoch,
                last_finite: last,
            },
            other => other,
        };
        let last_finite = (self.progress.epochs_done > 0).then_some(self.progress.epochs_done);

        let config = &self.progress.train_config;
        let mut total = 0.0;
        for batch in train.batches(config.batch_size, Some((config.seed, epoch as u64))) {
            let (loss, grads) = loss_and_grads(&self.model, &batch)
                .map_err(|e| diverged(e, last_finite))?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    last_finite,
                });
            }
            self.adam
                .step(self.model.params_mut(), &grads)
                .map_err(|e| diverged(e, last_finite))?;
            total += loss * batch.len() as f64;
        }
        let metrics = evaluate(&self.model, val).map_err(|e| diverged(e, last_finite))?;

        let record = EpochRecord {
            epoch,
            train_logloss: total / train.len() as f64,
            val_auc: metrics.auc,
            val_logloss: metrics.logloss,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        let p = &mut self.progress;
        p.epochs_done = epoch;
        if p.best_val_auc.is_none_or(|best| metrics.auc > best) {
            p.best_val_auc = Some(metrics.auc);
            p.best_epoch = Some(epoch);
            p.since_best = 0;
            self.best = Some(self.model.clone());
        } else {
            p.since_best += 1;
        }
        p.history.push(record.clone());
        Ok(record)
    }

    /// Writes `history.jsonl`, the `last/` checkpoint with optimizer state,
    /// and the `best/` checkpoint.
    pub fn save(&self, out: &Path) -> Result<()> {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let mut lines = String::new();
        for r in &self.progress.history {
            lines.push_str(&serde_json::to_string(r).map_err(|e| Error::json(out, e))?);
            lines.push('\n');
        }
        let history = out.join(HISTORY_FILE);
        std::fs::write(&history, lines).map_err(|e| Error::io(&history, e))?;
        let meta = serde_json::to_value(&self.progress).map_err(|e| Error::json(out, e))?;
        checkpoint::save(
            &out.join(LAST_DIR),
            &self.model,
            &self.encoder,
            &self.adam.to_arrays(self.model.params()),
            meta,
        )?;
        if let Some(best) = &self.best {
            let meta = serde_json::json!({
                "epoch": self.progress.best_epoch,
                "val_auc": self.progress.best_val_auc,
            });
            checkpoint::save(&out.join(BEST_DIR), best, &self.encoder, &Default::default(), meta)?;
        }
        Ok(())
    }

    /// Runs epochs until early stopping or the epoch limit, saving after each
    /// epoch when `out` is given.
    pub fn fit(self, train: &Dataset, val: &Dataset, out: Option<&Path>) -> Result<FitOutput> {
        self.fit_with(train, val, out, |_| {})
    }

    /// [`Trainer::fit`], calling `on_epoch` after every completed epoch.
    pub fn fit_with(
        mut self,
        train: &Dataset,
        val: &Dataset,
        out: Option<&Path>,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<FitOutput> {
        if train.is_empty() {
            return Err(Error::EmptySplit("train"));
        }
        let labels: Vec<f64> = val.labels().iter().map(|&y| f64::from(y)).collect();
        auc(&vec![0.0; labels.len()], &labels)?;
        while !self.should_stop() {
            let record = self.run_epoch(train, val)?;
            if let Some(dir) = out {
                self.save(dir)?;
            }
            on_epoch(&record);
        }
        let p = self.progress;
        Ok(FitOutput {
            best: self.best.expect("at least one epoch ran"),
            best_epoch: p.best_epoch.expect("at least one epoch ran"),
            best_val_auc: p.best_val_auc.expect("at least one epoch ran"),
            stopped_early: p.epochs_done < p.train_config.max_epochs,
            history: p.history,
        })
    }
}

/// Trains `model` from scratch; see [`Trainer::fit`].
pub fn fit(
    model: Model,
    encoder: Encoder,
    train: &Dataset,
    val: &Dataset,
    config: TrainConfig,
    out: Option<&Path>,
) -> Result<FitOutput> {
    Trainer::new(model, encoder, config)?.fit(train, val, out)
}
