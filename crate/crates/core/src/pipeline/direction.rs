use super::adapt::{adapt_target, AdaptConfig, AdaptRun};
use super::source::{train_source, SourceRun, SourceTrainConfig};
use super::{STRATEGY_WITH, STRATEGY_WITHOUT};
use crate::data::{batches, DatasetIndex};
use crate::error::{Error, Result};
use crate::metrics::{MetricsReport, RocCurve, DEFAULT_THRESHOLD};
use crate::models::{compose_adapted, ClassifierModel, EncoderConfig};

const EVAL_BATCH: usize = 64;

/// Positive-class probabilities for every item, in dataset order.
pub fn score_dataset(model: &ClassifierModel, ds: &DatasetIndex) -> Result<Vec<f64>> {
    let mut scores = Vec::with_capacity(ds.len());
    for batch in batches(ds, EVAL_BATCH, None)? {
        scores.extend(model.positive_scores(&batch.images)?);
    }
    Ok(scores)
}

pub fn evaluate(
    model: &ClassifierModel,
    ds: &DatasetIndex,
    direction: &str,
    strategy: &str,
    threshold: f64,
) -> Result<(MetricsReport, RocCurve)> {
    let labels = ds
        .labels()
        .ok_or_else(|| Error::Contract("evaluation needs a fully labeled dataset".into()))?;
    let scores = score_dataset(model, ds)?;
    MetricsReport::evaluate(direction, strategy, &scores, &labels, threshold)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DirectionConfig {
    pub name: String,
    pub encoder: EncoderConfig,
    pub source: SourceTrainConfig,
    pub adapt: AdaptConfig,
    pub threshold: f64,
}

impl Default for DirectionConfig {
    fn default() -> Self {
        DirectionConfig {
            name: "source->target".into(),
            encoder: EncoderConfig::default(),
            source: SourceTrainConfig::default(),
            adapt: AdaptConfig::default(),
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

/// A source model and its adapted counterpart, both scored on the target.
#[derive(Clone, Debug)]
pub struct Comparison {
    pub adapt: AdaptRun,
    pub adapted: ClassifierModel,
    pub without: (MetricsReport, RocCurve),
    pub with: (MetricsReport, RocCurve),
}

/// Adapts `source` to the images of `target` and evaluates the source model
/// and the recomposed model against the target labels. Adaptation only sees
/// an unlabeled copy of `target`.
pub fn adapt_and_compare(
    source: &ClassifierModel,
    target: &DatasetIndex,
    adapt: &AdaptConfig,
    direction: &str,
    threshold: f64,
) -> Result<Comparison> {
    let without = evaluate(source, target, direction, STRATEGY_WITHOUT, threshold)?;
    let adapt = adapt_target(source, &target.without_labels(), adapt)?;
    let adapted = compose_adapted(source, &adapt.vae)?;
    let with = evaluate(&adapted, target, direction, STRATEGY_WITH, threshold)?;
    Ok(Comparison {
        adapt,
        adapted,
        without,
        with,
    })
}

#[derive(Clone, Debug)]
pub struct DirectionOutcome {
    pub source: SourceRun,
    pub comparison: Comparison,
    /// Head digest right after source training and of the final model.
    pub head_digests: ([u8; 32], [u8; 32]),
}

/// Trains on `source_ds`, then adapts to and evaluates on `target_ds`.
pub fn run_direction(source_ds: &DatasetIndex, target_ds: &DatasetIndex, cfg: &DirectionConfig) -> Result<DirectionOutcome> {
    if !target_ds.is_labeled() {
        return Err(Error::Contract("target data needs labels for evaluation".into()));
    }
    let source = train_source(source_ds, &cfg.encoder, &cfg.source)?;
    let before = source.model.head_digest();
    let comparison = adapt_and_compare(&source.model, target_ds, &cfg.adapt, &cfg.name, cfg.threshold)?;
    let after = comparison.adapted.head_digest();
    Ok(DirectionOutcome {
        source,
        comparison,
        head_digests: (before, after),
    })
}

