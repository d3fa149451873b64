use std::collections::HashMap;

use satl_tensor::{Gradients, Graph, Prng, Scalar, Tensor, Var};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor<f32>)>,
}

/// Parameters of a [`ParamStore`] placed on a graph.
#[derive(Debug)]
pub struct BoundParams {
    vars: HashMap<String, Var>,
    order: Vec<String>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("parameter {name} is not bound")))
    }

    /// Gradients for every bound parameter, in store order.
    pub fn collect_grads<T: Scalar>(&self, grads: &Gradients<T>) -> Vec<(String, Tensor<T>)> {
        self.order
            .iter()
            .map(|n| (n.clone(), grads.wrt(self.vars[n])))
            .collect()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// He-normal weights (`std = sqrt(2 / fan_in)`, fan-in = product of all
    /// but the leading dimension) and zero biases, drawn in order from `prng`.
    pub fn init_he(shapes: &[(String, Vec<usize>)], prng: &mut Prng) -> Self {
        let entries = shapes
            .iter()
            .map(|(name, shape)| {
                let t = if shape.len() == 1 {
                    Tensor::zeros(shape)
                } else {
                    let fan_in: usize = if shape.len() == 2 {
                        shape[0]
                    } else {
                        shape[1..].iter().product()
                    };
                    Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), prng)
                };
                (name.clone(), t)
            })
            .collect();
        ParamStore { entries }
    }

    pub fn from_entries(entries: Vec<(String, Tensor<f32>)>) -> Self {
        ParamStore { entries }
    }

    pub fn entries(&self) -> &[(String, Tensor<f32>)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<f32>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    /// Entries whose name starts with `prefix`, cloned.
    pub fn with_prefix(&self, prefix: &str) -> Vec<(String, Tensor<f32>)> {
        self.entries
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .cloned()
            .collect()
    }

    /// Places every parameter on `g`, as trainable leaves or as constants.
    pub fn bind<T: Scalar>(&self, g: &mut Graph<T>, trainable: bool) -> BoundParams {
        let mut vars = HashMap::with_capacity(self.entries.len());
        for (name, t) in &self.entries {
            let t = t.cast::<T>();
            let v = if trainable { g.param(t) } else { g.constant(t) };
            vars.insert(name.clone(), v);
        }
        BoundParams {
            vars,
            order: self.entries.iter().map(|(n, _)| n.clone()).collect(),
        }
    }

    /// Binds parameters that are already on a graph, `vars[i]` holding the
    /// `i`-th entry.
    pub fn bind_existing(&self, vars: &[Var]) -> Result<BoundParams> {
        if vars.len() != self.entries.len() {
            return Err(Error::Contract(format!(
                "{} vars for {} parameters",
                vars.len(),
                self.entries.len()
            )));
        }
        Ok(BoundParams {
            vars: self.entries.iter().map(|(n, _)| n.clone()).zip(vars.iter().copied()).collect(),
            order: self.entries.iter().map(|(n, _)| n.clone()).collect(),
        })
    }

    /// SHA-256 over names, shapes and raw bytes of entries matching `prefix`.
    pub fn digest(&self, prefix: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        for (name, t) in self.entries.iter().filter(|(n, _)| n.starts_with(prefix)) {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// Checks that names and shapes match `expected` exactly, in order.
    pub(crate) fn check_layout(&self, expected: &[(String, Vec<usize>)]) -> std::result::Result<(), String> {
        if self.entries.len() != expected.len() {
            return Err(format!(
                "expected {} parameter blocks, found {}",
                expected.len(),
                self.entries.len()
            ));
        }
        for ((name, t), (en, es)) in self.entries.iter().zip(expected) {
            if name != en || t.shape() != es.as_slice() {
                return Err(format!(
                    "block {name} {:?} where {en} {es:?} was expected",
                    t.shape()
                ));
            }
        }
        Ok(())
    }
}
