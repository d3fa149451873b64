//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::prng::Prng;
use crate::tensor::Tensor;

/// Scalar-valued function of one or more tensors, built on a fresh graph.
pub trait CheckFn: Fn(&mut Graph<f64>, &[Var]) -> Result<Var> {}
impl<F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>> CheckFn for F {}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Maximum allowed relative error.
    pub tolerance: f64,
    /// Relative errors are taken against `max(|analytic|, |numeric|, floor)`
    /// so that near-zero gradients are compared absolutely.
    pub floor: f64,
    /// Check at most this many randomly chosen elements per input.
    pub max_elements_per_input: Option<usize>,
    pub sample_seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-4,
            tolerance: 1e-4,
            floor: 1e-3,
            max_elements_per_input: None,
            sample_seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ElementError {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub elements: Vec<ElementError>,
    pub max_relative_error: f64,
    pub passed: bool,
}

fn evaluate(f: &dyn CheckFn, points: &[Tensor<f64>]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = points.iter().map(|p| g.constant(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.value(out).item()
}

/// Compares the analytic gradient of `f` against central differences at
/// `points`, with respect to every input tensor.
pub fn grad_check_many(
    name: &str,
    f: &dyn CheckFn,
    points: &[Tensor<f64>],
    opts: &GradCheckOptions,
    fault: Option<&str>,
) -> Result<GradCheckReport> {
    let mut g = Graph::new();
    if let Some(op) = fault {
        g.inject_fault(op);
    }
    let vars: Vec<Var> = points.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let mut sampler = Prng::new(opts.sample_seed);
    let mut elements = Vec::new();
    let mut work: Vec<Tensor<f64>> = points.to_vec();
    for (input, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        let mut indices: Vec<usize> = (0..points[input].len()).collect();
        if let Some(cap) = opts.max_elements_per_input {
            if cap < indices.len() {
                sampler.shuffle(&mut indices);
                indices.truncate(cap);
                indices.sort_unstable();
            }
        }
        for index in indices {
            let original = work[input].data()[index];
            work[input].data_mut()[index] = original + opts.step;
            let plus = evaluate(f, &work)?;
            work[input].data_mut()[index] = original - opts.step;
            let minus = evaluate(f, &work)?;
            work[input].data_mut()[index] = original;

            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic.data()[index];
            let denom = a.abs().max(numeric.abs()).max(opts.floor);
            elements.push(ElementError {
                input,
                index,
                analytic: a,
                numeric,
                relative_error: (a - numeric).abs() / denom,
            });
        }
    }
    let max_relative_error = elements
        .iter()
        .map(|e| e.relative_error)
        .fold(0.0, f64::max);
    Ok(GradCheckReport {
        name: name.to_string(),
        passed: max_relative_error <= opts.tolerance,
        elements,
        max_relative_error,
    })
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check(
    f: impl Fn(&mut Graph<f64>, Var) -> Result<Var>,
    point: &Tensor<f64>,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let opts = GradCheckOptions {
        step,
        tolerance,
        ..Default::default()
    };
    let wrapped = move |g: &mut Graph<f64>, v: &[Var]| f(g, v[0]);
    grad_check_many("f", &wrapped, std::slice::from_ref(point), &opts, None)
}

/// A registered differentiable operation and a generator of well-conditioned
/// inputs for it (away from relu kinks and max-pool ties).
pub struct OpCase {
    pub name: &'static str,
    pub inputs: fn(&mut Prng) -> Vec<Tensor<f64>>,
    pub apply: fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
}

fn away_from_zero(shape: &[usize], prng: &mut Prng) -> Tensor<f64> {
    let mut t: Tensor<f64> = Tensor::rand_uniform(shape, 0.1, 1.0, prng);
    for v in t.data_mut() {
        if prng.uniform() < 0.5 {
            *v = -*v;
        }
    }
    t
}

/// Distinct values with gaps far larger than the finite-difference step.
fn spread(shape: &[usize], prng: &mut Prng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut ranks: Vec<usize> = (0..n).collect();
    prng.shuffle(&mut ranks);
    let data = ranks
        .into_iter()
        .map(|r| -1.0 + 2.0 * r as f64 / n as f64 + 0.1 * prng.uniform() / n as f64)
        .collect();
    Tensor::new(shape, data).expect("spread shape")
}

/// Projects an arbitrary output onto a scalar with fixed random weights so
/// every output element contributes a distinct gradient.
fn project(g: &mut Graph<f64>, y: Var) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let seed = shape.iter().fold(17u64, |h, &d| h.wrapping_mul(31).wrapping_add(d as u64));
    let w = Tensor::rand_uniform(&shape, -1.0, 1.0, &mut Prng::new(seed));
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    g.sum(p)
}

/// Every differentiable tensor operation, each exactly once.
pub fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "add",
            inputs: |p| vec![away_from_zero(&[3, 4], p), away_from_zero(&[3, 4], p)],
            apply: |g, v| {
                let y = g.add(v[0], v[1])?;
                project(g, y)
            },
        },
        OpCase {
            name: "sub",
            inputs: |p| vec![away_from_zero(&[3, 4], p), away_from_zero(&[3, 4], p)],
            apply: |g, v| {
                let y = g.sub(v[0], v[1])?;
                project(g, y)
            },
        },
        OpCase {
            name: "mul",
            inputs: |p| vec![away_from_zero(&[3, 4], p), away_from_zero(&[3, 4], p)],
            apply: |g, v| {
                let y = g.mul(v[0], v[1])?;
                project(g, y)
            },
        },
        OpCase {
            name: "scale",
            inputs: |p| vec![away_from_zero(&[5], p)],
            apply: |g, v| {
                let y = g.scale(v[0], -2.5)?;
                project(g, y)
            },
        },
        OpCase {
            name: "add_scalar",
            inputs: |p| vec![away_from_zero(&[5], p)],
            apply: |g, v| {
                let y = g.add_scalar(v[0], 0.75)?;
                let y = g.square(y)?;
                project(g, y)
            },
        },
        OpCase {
            name: "relu",
            inputs: |p| vec![away_from_zero(&[2, 3, 4], p)],
            apply: |g, v| {
                let y = g.relu(v[0])?;
                project(g, y)
            },
        },
        OpCase {
            name: "sigmoid",
            inputs: |p| vec![Tensor::rand_uniform(&[2, 5], -3.0, 3.0, p)],
            apply: |g, v| {
                let y = g.sigmoid(v[0])?;
                project(g, y)
            },
        },
        OpCase {
            name: "exp",
            inputs: |p| vec![Tensor::rand_uniform(&[6], -2.0, 2.0, p)],
            apply: |g, v| {
                let y = g.exp(v[0])?;
                project(g, y)
            },
        },
        OpCase {
            name: "log",
            inputs: |p| vec![Tensor::rand_uniform(&[6], 0.5, 2.0, p)],
            apply: |g, v| {
                let y = g.log(v[0])?;
                project(g, y)
            },
        },
        OpCase {
            name: "square",
            inputs: |p| vec![away_from_zero(&[6], p)],
            apply: |g, v| {
                let y = g.square(v[0])?;
                project(g, y)
            },
        },
        OpCase {
            name: "sum",
            inputs: |p| vec![away_from_zero(&[2, 3, 4], p)],
            apply: |g, v| {
                let y = g.reduce(crate::graph::Reduce::Sum, v[0], &[0, 2])?;
                project(g, y)
            },
        },
        OpCase {
            name: "mean",
            inputs: |p| vec![away_from_zero(&[2, 3, 4], p)],
            apply: |g, v| {
                let y = g.reduce(crate::graph::Reduce::Mean, v[0], &[1])?;
                project(g, y)
            },
        },
        OpCase {
            name: "matmul",
            inputs: |p| vec![away_from_zero(&[3, 4], p), away_from_zero(&[4, 2], p)],
            apply: |g, v| {
                let y = g.matmul(v[0], v[1])?;
                project(g, y)
            },
        },
        OpCase {
            name: "transpose",
            inputs: |p| vec![away_from_zero(&[3, 4], p)],
            apply: |g, v| {
                let y = g.transpose(v[0])?;
                project(g, y)
            },
        },
        OpCase {
            name: "reshape",
            inputs: |p| vec![away_from_zero(&[3, 4], p)],
            apply: |g, v| {
                let y = g.reshape(v[0], &[2, 6])?;
                project(g, y)
            },
        },
        OpCase {
            name: "select",
            inputs: |p| vec![away_from_zero(&[3, 2, 2], p)],
            apply: |g, v| {
                let y = g.select(v[0], 1)?;
                project(g, y)
            },
        },
        OpCase {
            name: "dense",
            inputs: |p| {
                vec![
                    away_from_zero(&[3, 4], p),
                    away_from_zero(&[4, 2], p),
                    away_from_zero(&[2], p),
                ]
            },
            apply: |g, v| {
                let y = g.dense(v[0], v[1], v[2])?;
                project(g, y)
            },
        },
        OpCase {
            name: "conv2d",
            inputs: |p| {
                vec![
                    away_from_zero(&[2, 2, 5, 5], p),
                    away_from_zero(&[3, 2, 3, 3], p),
                    away_from_zero(&[3], p),
                ]
            },
            apply: |g, v| {
                let y = g.conv2d(v[0], v[1], v[2], 2, 1)?;
                project(g, y)
            },
        },
        OpCase {
            name: "maxpool2",
            inputs: |p| vec![spread(&[2, 2, 4, 4], p)],
            apply: |g, v| {
                let y = g.maxpool2(v[0])?;
                project(g, y)
            },
        },
        OpCase {
            name: "upsample2",
            inputs: |p| vec![away_from_zero(&[1, 2, 2, 3], p)],
            apply: |g, v| {
                let y = g.upsample2(v[0])?;
                project(g, y)
            },
        },
        OpCase {
            name: "cross_entropy",
            inputs: |p| vec![Tensor::rand_uniform(&[4, 2], -2.0, 2.0, p)],
            apply: |g, v| g.cross_entropy(v[0], &[0, 1, 1, 0]),
        },
    ]
}

/// Runs every registered op case at one seed.
pub fn check_ops(seed: u64, opts: &GradCheckOptions, fault: Option<&str>) -> Result<Vec<GradCheckReport>> {
    op_cases()
        .iter()
        .enumerate()
        .map(|(i, case)| {
            let mut prng = Prng::new(seed).derive(i as u64);
            let points = (case.inputs)(&mut prng);
            grad_check_many(case.name, &case.apply, &points, opts, fault)
        })
        .collect()
}
