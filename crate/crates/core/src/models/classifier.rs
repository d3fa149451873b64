use satl_tensor::{Graph, Prng, Scalar, Tensor, Var};

use super::checkpoint::{Checkpoint, ModelKind, TrainingMeta};
use super::config::EncoderConfig;
use super::params::{BoundParams, ParamStore};
use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 2;

/// Source classifier: VGG-style encoder followed by a single dense head that
/// maps flattened features to two logits.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    config: EncoderConfig,
    params: ParamStore,
}

pub(crate) fn check_batch(config: &EncoderConfig, shape: &[usize]) -> Result<()> {
    let (c, h, w) = config.input_shape;
    if shape.len() != 4 || shape[1..] != [c, h, w] {
        return Err(Error::Shape(format!(
            "batch {shape:?} does not match model input [N, {c}, {h}, {w}]"
        )));
    }
    Ok(())
}

/// Runs the encoder stages on `x` (`[N,C,H,W]`).
pub fn encode<T: Scalar>(
    config: &EncoderConfig,
    g: &mut Graph<T>,
    p: &BoundParams,
    mut x: Var,
) -> Result<Var> {
    for (s, stage) in config.stages.iter().enumerate() {
        for c in 0..stage.convs {
            let w = p.var(&format!("enc.s{s}.c{c}.w"))?;
            let b = p.var(&format!("enc.s{s}.c{c}.b"))?;
            x = g.conv2d(x, w, b, 1, 1)?;
            x = g.relu(x)?;
        }
        x = g.maxpool2(x)?;
    }
    Ok(x)
}

impl ClassifierModel {
    pub fn layout(config: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
        let mut shapes = config.param_shapes();
        shapes.push(("head.w".into(), vec![config.flat_features(), NUM_CLASSES]));
        shapes.push(("head.b".into(), vec![NUM_CLASSES]));
        shapes
    }

    /// Fresh model with He-initialized weights and zero biases.
    pub fn build(config: &EncoderConfig, prng: &mut Prng) -> Result<Self> {
        config.validate()?;
        Ok(ClassifierModel {
            config: config.clone(),
            params: ParamStore::init_he(&Self::layout(config), prng),
        })
    }

    pub(crate) fn from_parts(config: EncoderConfig, params: ParamStore) -> Result<Self> {
        params
            .check_layout(&Self::layout(&config))
            .map_err(Error::Composition)?;
        Ok(ClassifierModel { config, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn head_input_width(&self) -> usize {
        self.config.flat_features()
    }

    /// Logits `[N, 2]` for input `x` already on the graph.
    pub fn logits<T: Scalar>(&self, g: &mut Graph<T>, p: &BoundParams, x: Var) -> Result<Var> {
        check_batch(&self.config, g.shape(x))?;
        let n = g.shape(x)[0];
        let f = encode(&self.config, g, p, x)?;
        let flat = g.reshape(f, &[n, self.config.flat_features()])?;
        Ok(g.dense(flat, p.var("head.w")?, p.var("head.b")?)?)
    }

    /// Deterministic inference.
    pub fn forward(&self, batch: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::<f32>::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(batch.clone());
        let y = self.logits(&mut g, &p, x)?;
        Ok(g.value(y).clone())
    }

    /// Positive-class probabilities (softmax of the logits).
    pub fn positive_scores(&self, batch: &Tensor<f32>) -> Result<Vec<f64>> {
        let logits = self.forward(batch)?;
        Ok(logits
            .data()
            .chunks(NUM_CLASSES)
            .map(|row| {
                let (a, b) = (row[0] as f64, row[1] as f64);
                1.0 / (1.0 + (a - b).exp())
            })
            .collect())
    }

    pub fn head_digest(&self) -> [u8; 32] {
        self.params.digest("head.")
    }

    pub fn encoder_digest(&self) -> [u8; 32] {
        self.params.digest("enc.")
    }

    pub fn to_checkpoint(&self, meta: TrainingMeta) -> Checkpoint {
        Checkpoint::new(
            ModelKind::Classifier,
            self.config.descriptor(),
            self.params.entries().to_vec(),
            meta,
        )
    }

    /// Rebuilds a model from a checkpoint. When `expected` is given, the
    /// checkpoint must describe exactly that architecture.
    pub fn from_checkpoint(ckpt: &Checkpoint, expected: Option<&EncoderConfig>) -> Result<Self> {
        if ckpt.kind != ModelKind::Classifier {
            return Err(Error::Composition(format!(
                "checkpoint holds a {:?} model, not a classifier",
                ckpt.kind
            )));
        }
        let config = ckpt.encoder_config()?;
        if let Some(exp) = expected {
            if exp != &config {
                return Err(Error::Fingerprint {
                    expected: exp.fingerprint(),
                    found: config.fingerprint(),
                });
            }
        }
        Self::from_parts(config, ParamStore::from_entries(ckpt.blocks.clone()))
    }
}
