//! Cross entropy for source training and the adaptation objective
//! `alpha·KL + beta1·pixel + beta2·gram`.

use satl_tensor::{Graph, Scalar, Var};

use crate::error::{Error, Result};
use crate::models::VaeVars;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    /// Mean over elements (resolution-independent weights).
    Mean,
    /// Sum over elements of each sample, averaged over the batch.
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub reduction: Reduction,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.3,
            beta1: 0.2,
            beta2: 0.5,
            reduction: Reduction::Mean,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let bad: Vec<String> = [("alpha", self.alpha), ("beta1", self.beta1), ("beta2", self.beta2)]
            .iter()
            .filter(|(_, v)| !(v.is_finite() && *v >= 0.0))
            .map(|(k, v)| format!("loss weight {k} = {v} must be finite and >= 0"))
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

fn batch_len<T: Scalar>(g: &Graph<T>, v: Var) -> usize {
    g.shape(v).first().copied().unwrap_or(1)
}

fn reduce<T: Scalar>(g: &mut Graph<T>, v: Var, reduction: Reduction, batch: usize) -> Result<Var> {
    Ok(match reduction {
        Reduction::Mean => g.mean(v)?,
        Reduction::Sum => {
            let s = g.sum(v)?;
            g.scale(s, 1.0 / batch as f64)?
        }
    })
}

/// Batch mean of `-log softmax(logits)[label]`.
pub fn cross_entropy<T: Scalar>(g: &mut Graph<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    Ok(g.cross_entropy(logits, labels)?)
}

/// `KL(N(mu, exp(logvar)) ‖ N(0, I)) = ½ Σ (mu² + exp(logvar) − logvar − 1)`.
/// The leading axis is treated as the batch.
pub fn kl_divergence<T: Scalar>(
    g: &mut Graph<T>,
    mu: Var,
    logvar: Var,
    reduction: Reduction,
) -> Result<Var> {
    if g.shape(mu) != g.shape(logvar) {
        return Err(Error::Shape(format!(
            "mu {:?} vs logvar {:?}",
            g.shape(mu),
            g.shape(logvar)
        )));
    }
    let mu2 = g.square(mu)?;
    let var = g.exp(logvar)?;
    let t = g.add(mu2, var)?;
    let t = g.sub(t, logvar)?;
    let t = g.add_scalar(t, -1.0)?;
    let t = g.scale(t, 0.5)?;
    let n = batch_len(g, mu);
    reduce(g, t, reduction, n)
}

/// Normalized Gram matrix `V·Vᵀ / (C·H·W)` of one `[C,H,W]` map, where `V`
/// is the `C×(H·W)` matrix of per-channel flattened values.
pub fn gram_matrix<T: Scalar>(g: &mut Graph<T>, b: Var) -> Result<Var> {
    let s = g.shape(b).to_vec();
    if s.len() != 3 {
        return Err(Error::Shape(format!("gram matrix needs [C,H,W], got {s:?}")));
    }
    let (c, hw) = (s[0], s[1] * s[2]);
    let v = g.reshape(b, &[c, hw])?;
    let vt = g.transpose(v)?;
    let gram = g.matmul(v, vt)?;
    Ok(g.scale(gram, 1.0 / (c * hw) as f64)?)
}

/// Unweighted reconstruction terms.
#[derive(Clone, Copy, Debug)]
pub struct ReconstructionTerms {
    pub pixel: Var,
    pub gram: Var,
    /// `beta1·pixel + beta2·gram`.
    pub total: Var,
}

/// Pixel and Gram-matrix squared errors between `output` and `input`
/// (`[N,C,H,W]`), reduced per sample and averaged over the batch.
pub fn reconstruction_loss<T: Scalar>(
    g: &mut Graph<T>,
    output: Var,
    input: Var,
    w: &LossWeights,
) -> Result<ReconstructionTerms> {
    let shape = g.shape(output).to_vec();
    if shape != g.shape(input) || shape.len() != 4 {
        return Err(Error::Shape(format!(
            "reconstruction {:?} vs input {:?}",
            shape,
            g.shape(input)
        )));
    }
    let n = shape[0];
    let diff = g.sub(output, input)?;
    let sq = g.square(diff)?;
    let pixel = reduce(g, sq, w.reduction, n)?;

    let mut gram_total: Option<Var> = None;
    for i in 0..n {
        let out_i = g.select(output, i)?;
        let in_i = g.select(input, i)?;
        let go = gram_matrix(g, out_i)?;
        let gi = gram_matrix(g, in_i)?;
        let d = g.sub(go, gi)?;
        let d2 = g.square(d)?;
        let per_sample = match w.reduction {
            Reduction::Mean => g.mean(d2)?,
            Reduction::Sum => g.sum(d2)?,
        };
        gram_total = Some(match gram_total {
            None => per_sample,
            Some(acc) => g.add(acc, per_sample)?,
        });
    }
    let gram_sum = gram_total.expect("batch is non-empty");
    let gram = g.scale(gram_sum, 1.0 / n as f64)?;

    let wp = g.scale(pixel, w.beta1)?;
    let wg = g.scale(gram, w.beta2)?;
    let total = g.add(wp, wg)?;
    Ok(ReconstructionTerms { pixel, gram, total })
}

/// Adaptation objective and its unweighted parts.
#[derive(Clone, Copy, Debug)]
pub struct SatlLoss {
    pub total: Var,
    pub kl: Var,
    pub pixel: Var,
    pub gram: Var,
}

/// `alpha·KL + beta1·pixel + beta2·gram` for one VAE forward pass over
/// `input`.
pub fn satl_loss<T: Scalar>(
    g: &mut Graph<T>,
    vae: &VaeVars,
    input: Var,
    w: &LossWeights,
) -> Result<SatlLoss> {
    let kl = kl_divergence(g, vae.mu, vae.logvar, w.reduction)?;
    let rec = reconstruction_loss(g, vae.reconstruction, input, w)?;
    let wkl = g.scale(kl, w.alpha)?;
    let total = g.add(wkl, rec.total)?;
    Ok(SatlLoss {
        total,
        kl,
        pixel: rec.pixel,
        gram: rec.gram,
    })
}
