use std::time::Instant;

use satl_tensor::{Graph, Prng, Tensor};

use super::log::{EpochRecord, TrainingLog};
use super::optimizer::{ParamGroup, Sgd};
use crate::data::{batches, DatasetIndex};
use crate::error::{Error, Result};
use crate::losses::{satl_loss, LossWeights};
use crate::models::{ClassifierModel, TrainingMeta, VaeModel, DEFAULT_LATENT_CHANNELS};

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptConfig {
    pub encoder_lr: f64,
    /// Learning rate of the latent heads and the decoder.
    pub other_lr: f64,
    pub epochs: u32,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub latent_channels: usize,
    pub seed: u64,
    /// Permits `encoder_lr > other_lr`, which is rejected by default.
    pub allow_fast_encoder: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            encoder_lr: 1e-7,
            other_lr: 1e-3,
            epochs: 20,
            batch_size: 16,
            weights: LossWeights::default(),
            latent_channels: DEFAULT_LATENT_CHANNELS,
            seed: 0,
            allow_fast_encoder: false,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, lr) in [("encoder_lr", self.encoder_lr), ("other_lr", self.other_lr)] {
            if !(lr.is_finite() && lr >= 0.0) {
                problems.push(format!("adapt {name} {lr} must be finite and >= 0"));
            }
        }
        if self.encoder_lr > self.other_lr && !self.allow_fast_encoder {
            problems.push(format!(
                "encoder_lr {} exceeds other_lr {}; set allow_fast_encoder to permit it",
                self.encoder_lr, self.other_lr
            ));
        }
        if self.batch_size == 0 {
            problems.push("adapt batch_size must be at least 1".into());
        }
        if self.latent_channels == 0 {
            problems.push("latent_channels must be at least 1".into());
        }
        if let Err(Error::Config(w)) = self.weights.validate() {
            problems.extend(w);
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdaptRun {
    pub vae: VaeModel,
    pub log: TrainingLog,
    pub meta: TrainingMeta,
}

/// Transplants the encoder of `source` into a VAE and trains it on the images
/// of `target` alone. Labels in `target` are never read. The encoder and the
/// remaining parameters form two groups with their own learning rates and no
/// weight decay.
pub fn adapt_target(source: &ClassifierModel, target: &DatasetIndex, cfg: &AdaptConfig) -> Result<AdaptRun> {
    cfg.validate()?;
    if target.is_empty() {
        return Err(Error::DegenerateData("target dataset is empty".into()));
    }
    let root = Prng::new(cfg.seed);
    let mut vae = VaeModel::from_encoder(source, cfg.latent_channels, &mut root.derive_named("vae-init"))?;
    let mut sgd = Sgd::new(vec![
        ParamGroup::new("enc.", cfg.encoder_lr, 0.0),
        ParamGroup::new("", cfg.other_lr, 0.0),
    ]);
    let noise = root.derive_named("noise");
    let mut step = 0u64;
    let mut log = TrainingLog::default();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut sums = [0.0f64; 4];
        for batch in batches(target, cfg.batch_size, Some(root.derive_named("batches").derive(epoch as u64)))? {
            let n = batch.images.shape()[0];
            let eps = Tensor::randn(&vae.latent_shape(n), 1.0, &mut noise.derive(step));
            step += 1;
            let mut g = Graph::<f32>::new();
            let p = vae.params().bind(&mut g, true);
            let x = g.constant(batch.images);
            let vars = vae.forward_graph(&mut g, &p, x, Some(eps))?;
            let loss = satl_loss(&mut g, &vars, x, &cfg.weights)?;
            for (sum, v) in sums.iter_mut().zip([loss.total, loss.kl, loss.pixel, loss.gram]) {
                *sum += g.value(v).item()? as f64 * n as f64;
            }
            let grads = g.backward(loss.total)?;
            sgd.step(vae.params_mut(), &p.collect_grads(&grads))?;
        }
        let m = target.len() as f64;
        log.records.push(EpochRecord {
            epoch,
            total_loss: sums[0] / m,
            kl: Some(sums[1] / m),
            pixel: Some(sums[2] / m),
            gram: Some(sums[3] / m),
            val_accuracy: None,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    let meta = TrainingMeta {
        epoch: cfg.epochs,
        best_val_accuracy: 0.0,
        seed: cfg.seed,
    };
    Ok(AdaptRun { vae, log, meta })
}
