//! Finite-difference checks of the losses and of whole models in 64-bit
//! arithmetic, complementing the per-op checks of the tensor crate.

use satl_tensor::gradcheck::{grad_check_many, GradCheckOptions, GradCheckReport};
use satl_tensor::{Graph, Prng, Tensor, Var};

use crate::error::Result;
use crate::losses::{cross_entropy, kl_divergence, reconstruction_loss, satl_loss, LossWeights, Reduction};
use crate::models::{ClassifierModel, EncoderConfig, ParamStore, VaeModel, VaeVars};

/// Scope of a gradient-check run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Ops,
    Losses,
    Model,
}

impl Scope {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ops" => Some(Scope::Ops),
            "losses" => Some(Scope::Losses),
            "model" => Some(Scope::Model),
            _ => None,
        }
    }
}

/// Small architecture for model-level checks: every parameter of a full
/// network is perturbed, so it has to stay tiny.
pub fn check_config() -> EncoderConfig {
    EncoderConfig::new((3, 8, 8), &[(1, 3), (2, 4)])
}

fn uniform(shape: &[usize], lo: f64, hi: f64, prng: &mut Prng) -> Tensor<f64> {
    Tensor::rand_uniform(shape, lo, hi, prng)
}

/// Parameters as check points, with biases moved off zero: a zero bias
/// behind a dead relu puts the next pre-activation exactly on the kink.
fn check_points(params: &ParamStore, prng: &mut Prng) -> Vec<Tensor<f64>> {
    params
        .entries()
        .iter()
        .map(|(name, t)| {
            let t: Tensor<f64> = t.cast();
            if name.ends_with(".b") {
                Tensor::rand_uniform(t.shape(), -0.2, 0.2, prng)
            } else {
                t
            }
        })
        .collect()
}

/// Redraws check points until the function is at least `10 * step` away
/// from every relu kink and pooling tie, so a central difference never
/// straddles one.
fn smooth_points(
    f: &dyn Fn(&mut Graph<f64>, &[Var]) -> satl_tensor::Result<Var>,
    opts: &GradCheckOptions,
    mut draw: impl FnMut(u64) -> Vec<Tensor<f64>>,
) -> Result<Vec<Tensor<f64>>> {
    const ATTEMPTS: u64 = 200;
    for attempt in 0..ATTEMPTS {
        let points = draw(attempt);
        let mut g = Graph::new();
        let vars: Vec<Var> = points.iter().map(|p| g.constant(p.clone())).collect();
        f(&mut g, &vars)?;
        if g.kink_margin() > 10.0 * opts.step {
            return Ok(points);
        }
    }
    Err(crate::Error::Contract(format!(
        "no check point clear of relu kinks and pooling ties after {ATTEMPTS} draws"
    )))
}

fn loss_check(
    name: &str,
    points: Vec<Tensor<f64>>,
    opts: &GradCheckOptions,
    fault: Option<&str>,
    f: impl Fn(&mut Graph<f64>, &[Var]) -> satl_tensor::Result<Var>,
) -> Result<GradCheckReport> {
    Ok(grad_check_many(name, &f, &points, opts, fault)?)
}

// The closures below hand back tensor-crate results, so loss errors are
// converted into contract errors at that boundary.
fn lift<T>(r: Result<T>) -> satl_tensor::Result<T> {
    r.map_err(|e| satl_tensor::TensorError::Contract(e.to_string()))
}

/// Cross entropy, KL (both reductions), pixel, Gram and the combined
/// adaptation objective.
pub fn check_losses(seed: u64, opts: &GradCheckOptions, fault: Option<&str>) -> Result<Vec<GradCheckReport>> {
    let root = Prng::new(seed);
    let mut reports = Vec::new();
    let mut rng = root.derive_named("cross_entropy");
    reports.push(loss_check(
        "cross_entropy",
        vec![uniform(&[4, 2], -2.0, 2.0, &mut rng)],
        opts,
        fault,
        |g, v| lift(cross_entropy(g, v[0], &[1, 0, 0, 1])),
    )?);
    for (name, reduction) in [("kl_mean", Reduction::Mean), ("kl_sum", Reduction::Sum)] {
        let mut rng = root.derive_named(name);
        let mu = uniform(&[2, 3, 2, 2], -1.5, 1.5, &mut rng);
        let logvar = uniform(&[2, 3, 2, 2], -1.5, 1.0, &mut rng);
        reports.push(loss_check(name, vec![mu, logvar], opts, fault, move |g, v| {
            lift(kl_divergence(g, v[0], v[1], reduction))
        })?);
    }
    let mut rng = root.derive_named("reconstruction");
    let input = uniform(&[2, 3, 4, 4], 0.0, 1.0, &mut rng);
    for reduction in [Reduction::Mean, Reduction::Sum] {
        let w = LossWeights {
            reduction,
            ..LossWeights::default()
        };
        let suffix = if reduction == Reduction::Mean { "mean" } else { "sum" };
        for part in ["pixel", "gram"] {
            let output = uniform(&[2, 3, 4, 4], 0.05, 0.95, &mut rng);
            let input = input.clone();
            reports.push(loss_check(&format!("{part}_{suffix}"), vec![output], opts, fault, move |g, v| {
                let x = g.constant(input.clone());
                let terms = lift(reconstruction_loss(g, v[0], x, &w))?;
                Ok(if part == "pixel" { terms.pixel } else { terms.gram })
            })?);
        }
    }
    let mut rng = root.derive_named("satl");
    let points = vec![
        uniform(&[2, 3, 4, 4], 0.05, 0.95, &mut rng),
        uniform(&[2, 4, 1, 1], -1.0, 1.0, &mut rng),
        uniform(&[2, 4, 1, 1], -1.0, 0.5, &mut rng),
    ];
    reports.push(loss_check("satl_total", points, opts, fault, move |g, v| {
        let x = g.constant(input.clone());
        let vars = VaeVars {
            reconstruction: v[0],
            mu: v[1],
            logvar: v[2],
            z: v[1],
        };
        Ok(lift(satl_loss(g, &vars, x, &LossWeights::default()))?.total)
    })?);
    Ok(reports)
}

/// Cross entropy through a whole classifier, and the adaptation objective
/// through a whole VAE with fixed sampling noise, both with respect to every
/// parameter and the input batch.
pub fn check_model(seed: u64, opts: &GradCheckOptions, fault: Option<&str>) -> Result<Vec<GradCheckReport>> {
    let root = Prng::new(seed);
    let cfg = check_config();
    let (c, h, w) = cfg.input_shape;
    let classifier = ClassifierModel::build(&cfg, &mut root.derive_named("classifier"))?;
    let draw = |params: &ParamStore, label: &str, attempt: u64| {
        let mut rng = root.derive_named(label).derive(attempt);
        let mut points = check_points(params, &mut rng);
        points.push(uniform(&[2, c, h, w], 0.0, 1.0, &mut rng));
        points
    };

    let model = classifier.clone();
    let classify = move |g: &mut Graph<f64>, v: &[Var]| {
        let (x, params) = v.split_last().expect("batch is the last input");
        let p = lift(model.params().bind_existing(params))?;
        let logits = lift(model.logits(g, &p, *x))?;
        g.cross_entropy(logits, &[0, 1])
    };
    let points = smooth_points(&classify, opts, |a| draw(classifier.params(), "classifier-point", a))?;
    let mut reports = vec![grad_check_many("classifier_cross_entropy", &classify, &points, opts, fault)?];

    let vae = VaeModel::from_encoder(&classifier, 2, &mut root.derive_named("vae"))?;
    let eps = uniform(&vae.latent_shape(2), -1.0, 1.0, &mut root.derive_named("eps"));
    let reconstruct = {
        let vae = vae.clone();
        move |g: &mut Graph<f64>, v: &[Var]| {
            let (x, params) = v.split_last().expect("batch is the last input");
            let p = lift(vae.params().bind_existing(params))?;
            let vars = lift(vae.forward_graph(g, &p, *x, Some(eps.clone())))?;
            Ok(lift(satl_loss(g, &vars, *x, &LossWeights::default()))?.total)
        }
    };
    let points = smooth_points(&reconstruct, opts, |a| draw(vae.params(), "vae-point", a))?;
    reports.push(grad_check_many("vae_satl_total", &reconstruct, &points, opts, fault)?);
    Ok(reports)
}

/// Runs one scope at one seed.
pub fn check_scope(scope: Scope, seed: u64, opts: &GradCheckOptions, fault: Option<&str>) -> Result<Vec<GradCheckReport>> {
    match scope {
        Scope::Ops => Ok(satl_tensor::gradcheck::check_ops(seed, opts, fault)?),
        Scope::Losses => check_losses(seed, opts, fault),
        Scope::Model => check_model(seed, opts, fault),
    }
}
