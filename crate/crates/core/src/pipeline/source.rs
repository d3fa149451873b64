use std::time::Instant;

use satl_tensor::{Graph, Prng};

use super::log::{EpochRecord, TrainingLog};
use super::optimizer::{ParamGroup, Sgd};
use crate::data::{batches, stratified_split, DatasetIndex};
use crate::error::{Error, Result};
use crate::losses::cross_entropy;
use crate::metrics::DEFAULT_THRESHOLD;
use crate::models::{ClassifierModel, EncoderConfig, TrainingMeta};

const EVAL_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct SourceTrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: u32,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SourceTrainConfig {
    /// Published settings; see [`SourceTrainConfig::desk`] for small runs.
    fn default() -> Self {
        SourceTrainConfig {
            learning_rate: 1e-6,
            weight_decay: 5e-4,
            batch_size: 16,
            epochs: 50,
            train_fraction: 0.7,
            seed: 0,
        }
    }
}

impl SourceTrainConfig {
    /// Learning rate raised to 1e-3 for from-scratch training on 64×64 images.
    pub fn desk() -> Self {
        SourceTrainConfig {
            learning_rate: 1e-3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            problems.push(format!("source learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            problems.push(format!("source weight_decay {} must be >= 0", self.weight_decay));
        }
        if self.batch_size == 0 {
            problems.push("source batch_size must be at least 1".into());
        }
        if self.epochs == 0 {
            problems.push("source epochs must be at least 1".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            problems.push(format!("train_fraction {} outside (0, 1)", self.train_fraction));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

#[derive(Clone, Debug)]
pub struct SourceRun {
    /// Parameters from the epoch with the best validation accuracy.
    pub model: ClassifierModel,
    pub log: TrainingLog,
    pub meta: TrainingMeta,
}

/// Fraction of `ds` classified correctly at the 0.5 threshold.
pub fn accuracy(model: &ClassifierModel, ds: &DatasetIndex) -> Result<f64> {
    let mut correct = 0usize;
    for batch in batches(ds, EVAL_BATCH, None)? {
        let labels = batch
            .labels
            .ok_or_else(|| Error::Contract("accuracy needs labels".into()))?;
        let scores = model.positive_scores(&batch.images)?;
        correct += scores
            .iter()
            .zip(&labels)
            .filter(|(&s, &l)| (s >= DEFAULT_THRESHOLD) == (l == 1))
            .count();
    }
    Ok(correct as f64 / ds.len().max(1) as f64)
}

/// Trains a classifier on a stratified split of `ds` with cross entropy,
/// keeping the parameters of the epoch with the highest validation accuracy
/// (the earliest such epoch on ties).
pub fn train_source(ds: &DatasetIndex, encoder: &EncoderConfig, cfg: &SourceTrainConfig) -> Result<SourceRun> {
    cfg.validate()?;
    encoder.validate()?;
    let root = Prng::new(cfg.seed);
    let (train, val) = stratified_split(ds, cfg.train_fraction, &root.derive_named("split"))?;
    let mut model = ClassifierModel::build(encoder, &mut root.derive_named("init"))?;
    let mut sgd = Sgd::new(vec![ParamGroup::new("", cfg.learning_rate, cfg.weight_decay)]);
    let mut log = TrainingLog::default();
    let mut best: Option<(ClassifierModel, TrainingMeta)> = None;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        for batch in batches(&train, cfg.batch_size, Some(root.derive_named("batches").derive(epoch as u64)))? {
            let labels = batch.labels.expect("split keeps labels");
            let mut g = Graph::<f32>::new();
            let p = model.params().bind(&mut g, true);
            let x = g.constant(batch.images);
            let logits = model.logits(&mut g, &p, x)?;
            let loss = cross_entropy(&mut g, logits, &labels)?;
            loss_sum += g.value(loss).item()? as f64 * labels.len() as f64;
            let grads = g.backward(loss)?;
            sgd.step(model.params_mut(), &p.collect_grads(&grads))?;
        }
        let val_accuracy = accuracy(&model, &val)?;
        log.records.push(EpochRecord {
            epoch,
            total_loss: loss_sum / train.len() as f64,
            kl: None,
            pixel: None,
            gram: None,
            val_accuracy: Some(val_accuracy),
            seconds: started.elapsed().as_secs_f64(),
        });
        if best.as_ref().is_none_or(|(_, m)| val_accuracy > m.best_val_accuracy) {
            let meta = TrainingMeta {
                epoch,
                best_val_accuracy: val_accuracy,
                seed: cfg.seed,
            };
            best = Some((model.clone(), meta));
        }
    }
    let (model, meta) = best.expect("at least one epoch ran");
    Ok(SourceRun { model, log, meta })
}
