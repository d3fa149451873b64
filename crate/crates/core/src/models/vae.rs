use satl_tensor::{Graph, Prng, Scalar, Tensor, Var};

use super::checkpoint::{Checkpoint, ModelKind, TrainingMeta};
use super::classifier::{check_batch, encode, ClassifierModel};
use super::config::EncoderConfig;
use super::params::{BoundParams, ParamStore};
use crate::error::{Error, Result};

pub const DEFAULT_LATENT_CHANNELS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// `z = mu + exp(logvar / 2) · eps`, `eps ~ N(0, 1)`.
    Train,
    /// `z = mu`.
    Eval,
}

/// Reconstruction model: transplanted encoder, 1×1 convolutional `mu` and
/// `logvar` heads giving a spatial latent map, and a decoder mirroring the
/// encoder (upsample + 3×3 conv + relu per stage, then a 3×3 conv and a
/// sigmoid back to pixel space).
#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel {
    encoder: EncoderConfig,
    latent_channels: usize,
    params: ParamStore,
}

/// Graph nodes of one VAE forward pass.
#[derive(Clone, Copy, Debug)]
pub struct VaeVars {
    pub reconstruction: Var,
    pub mu: Var,
    pub logvar: Var,
    pub z: Var,
}

#[derive(Clone, Debug)]
pub struct VaeOutput {
    pub reconstruction: Tensor<f32>,
    pub mu: Tensor<f32>,
    pub logvar: Tensor<f32>,
    pub z: Tensor<f32>,
}

impl VaeModel {
    fn head_and_decoder_layout(encoder: &EncoderConfig, latent: usize) -> Vec<(String, Vec<usize>)> {
        let (feat_ch, _, _) = encoder.feature_shape();
        let mut shapes = vec![
            ("mu.w".to_string(), vec![latent, feat_ch, 1, 1]),
            ("mu.b".to_string(), vec![latent]),
            ("logvar.w".to_string(), vec![latent, feat_ch, 1, 1]),
            ("logvar.b".to_string(), vec![latent]),
        ];
        let chans: Vec<usize> = encoder.stages.iter().map(|s| s.channels).collect();
        let mut in_ch = latent;
        for k in 0..chans.len() {
            let out_ch = chans[chans.len() - 1 - k];
            shapes.push((format!("dec.s{k}.w"), vec![out_ch, in_ch, 3, 3]));
            shapes.push((format!("dec.s{k}.b"), vec![out_ch]));
            in_ch = out_ch;
        }
        shapes.push(("dec.out.w".into(), vec![encoder.input_shape.0, in_ch, 3, 3]));
        shapes.push(("dec.out.b".into(), vec![encoder.input_shape.0]));
        shapes
    }

    pub fn layout(encoder: &EncoderConfig, latent: usize) -> Vec<(String, Vec<usize>)> {
        let mut shapes = encoder.param_shapes();
        shapes.extend(Self::head_and_decoder_layout(encoder, latent));
        shapes
    }

    /// Reconstruction model whose encoder is a copy of `source`'s encoder;
    /// latent heads and decoder are freshly initialized from `prng`.
    pub fn from_encoder(source: &ClassifierModel, latent_channels: usize, prng: &mut Prng) -> Result<Self> {
        if latent_channels == 0 {
            return Err(Error::config("latent channel count must be positive"));
        }
        let encoder = source.config().clone();
        let mut entries = source.params().with_prefix("enc.");
        let fresh = ParamStore::init_he(
            &Self::head_and_decoder_layout(&encoder, latent_channels),
            prng,
        );
        entries.extend(fresh.entries().iter().cloned());
        Ok(VaeModel {
            encoder,
            latent_channels,
            params: ParamStore::from_entries(entries),
        })
    }

    pub fn encoder_config(&self) -> &EncoderConfig {
        &self.encoder
    }

    pub fn latent_channels(&self) -> usize {
        self.latent_channels
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn encoder_digest(&self) -> [u8; 32] {
        self.params.digest("enc.")
    }

    /// Builds the forward pass on `g`. `eps` (shaped like `mu`) selects
    /// train-mode sampling; `None` gives `z = mu`.
    pub fn forward_graph<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        x: Var,
        eps: Option<Tensor<T>>,
    ) -> Result<VaeVars> {
        check_batch(&self.encoder, g.shape(x))?;
        let feat = encode(&self.encoder, g, p, x)?;
        let mu = g.conv2d(feat, p.var("mu.w")?, p.var("mu.b")?, 1, 0)?;
        let logvar = g.conv2d(feat, p.var("logvar.w")?, p.var("logvar.b")?, 1, 0)?;
        let z = match eps {
            None => mu,
            Some(eps) => {
                if eps.shape() != g.shape(mu) {
                    return Err(Error::Shape(format!(
                        "noise {:?} for latent {:?}",
                        eps.shape(),
                        g.shape(mu)
                    )));
                }
                let half = g.scale(logvar, 0.5)?;
                let sigma = g.exp(half)?;
                let eps = g.constant(eps);
                let noise = g.mul(sigma, eps)?;
                g.add(mu, noise)?
            }
        };
        let mut h = z;
        for k in 0..self.encoder.stages.len() {
            h = g.upsample2(h)?;
            h = g.conv2d(h, p.var(&format!("dec.s{k}.w"))?, p.var(&format!("dec.s{k}.b"))?, 1, 1)?;
            h = g.relu(h)?;
        }
        let out = g.conv2d(h, p.var("dec.out.w")?, p.var("dec.out.b")?, 1, 1)?;
        let reconstruction = g.sigmoid(out)?;
        Ok(VaeVars {
            reconstruction,
            mu,
            logvar,
            z,
        })
    }

    /// Shape of the latent map for a batch of `n` images.
    pub fn latent_shape(&self, n: usize) -> Vec<usize> {
        let (_, h, w) = self.encoder.feature_shape();
        vec![n, self.latent_channels, h, w]
    }

    /// Standalone forward pass. Train mode draws `eps` from `prng`.
    pub fn forward(&self, batch: &Tensor<f32>, prng: &mut Prng, mode: Mode) -> Result<VaeOutput> {
        check_batch(&self.encoder, batch.shape())?;
        let mut g = Graph::<f32>::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(batch.clone());
        let eps = match mode {
            Mode::Train => Some(Tensor::randn(&self.latent_shape(batch.shape()[0]), 1.0, prng)),
            Mode::Eval => None,
        };
        let v = self.forward_graph(&mut g, &p, x, eps)?;
        Ok(VaeOutput {
            reconstruction: g.value(v.reconstruction).clone(),
            mu: g.value(v.mu).clone(),
            logvar: g.value(v.logvar).clone(),
            z: g.value(v.z).clone(),
        })
    }

    pub(crate) fn descriptor(&self) -> String {
        format!("{};latent={}", self.encoder.descriptor(), self.latent_channels)
    }

    pub fn to_checkpoint(&self, meta: TrainingMeta) -> Checkpoint {
        Checkpoint::new(
            ModelKind::Vae,
            self.descriptor(),
            self.params.entries().to_vec(),
            meta,
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, expected: Option<&EncoderConfig>) -> Result<Self> {
        if ckpt.kind != ModelKind::Vae {
            return Err(Error::Composition(format!(
                "checkpoint holds a {:?} model, not a reconstruction model",
                ckpt.kind
            )));
        }
        let encoder = ckpt.encoder_config()?;
        if let Some(exp) = expected {
            if exp != &encoder {
                return Err(Error::Fingerprint {
                    expected: exp.fingerprint(),
                    found: encoder.fingerprint(),
                });
            }
        }
        let latent_channels = ckpt
            .descriptor_field("latent")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Composition("checkpoint lacks a latent channel count".into()))?;
        let params = ParamStore::from_entries(ckpt.blocks.clone());
        params
            .check_layout(&Self::layout(&encoder, latent_channels))
            .map_err(Error::Composition)?;
        Ok(VaeModel {
            encoder,
            latent_channels,
            params,
        })
    }
}

/// Classifier made of the adapted encoder and the untouched source head.
pub fn compose_adapted(source: &ClassifierModel, adapted: &VaeModel) -> Result<ClassifierModel> {
    let (src, dst) = (source.config().fingerprint(), adapted.encoder_config().fingerprint());
    if src != dst {
        return Err(Error::Composition(format!(
            "encoder fingerprints differ: source {src:016x}, adapted {dst:016x}"
        )));
    }
    let mut entries = adapted.params().with_prefix("enc.");
    entries.extend(source.params().with_prefix("head."));
    ClassifierModel::from_parts(source.config().clone(), ParamStore::from_entries(entries))
}
