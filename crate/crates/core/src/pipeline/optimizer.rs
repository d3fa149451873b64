use std::collections::HashMap;

use satl_tensor::Tensor;

use crate::error::{Error, Result};
use crate::models::ParamStore;

/// Parameters whose names start with `prefix` share a learning rate and
/// weight decay. The empty prefix matches everything.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup {
    pub prefix: String,
    pub lr: f64,
    pub weight_decay: f64,
}

impl ParamGroup {
    pub fn new(prefix: &str, lr: f64, weight_decay: f64) -> Self {
        ParamGroup {
            prefix: prefix.into(),
            lr,
            weight_decay,
        }
    }
}

/// SGD with momentum: `v <- m·v + g + wd·p`, `p <- p - lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    momentum: f64,
    groups: Vec<ParamGroup>,
    velocity: HashMap<String, Vec<f32>>,
}

impl Sgd {
    pub const MOMENTUM: f64 = 0.9;

    /// Groups are matched in order; the first matching prefix wins.
    pub fn new(groups: Vec<ParamGroup>) -> Self {
        Sgd {
            momentum: Self::MOMENTUM,
            groups,
            velocity: HashMap::new(),
        }
    }

    fn group(&self, name: &str) -> Option<&ParamGroup> {
        self.groups.iter().find(|g| name.starts_with(&g.prefix))
    }

    /// Updates every parameter of `params` covered by a group. Each covered
    /// parameter needs a gradient of its own shape.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[(String, Tensor<f32>)]) -> Result<()> {
        let by_name: HashMap<&str, &Tensor<f32>> = grads.iter().map(|(n, g)| (n.as_str(), g)).collect();
        let mut updates = Vec::new();
        for (name, p) in params.entries() {
            let Some(group) = self.group(name) else { continue };
            let grad = by_name
                .get(name.as_str())
                .ok_or_else(|| Error::Contract(format!("no gradient for trainable parameter {name}")))?;
            if grad.shape() != p.shape() {
                return Err(Error::Contract(format!(
                    "gradient for {name} is {:?}, parameter is {:?}",
                    grad.shape(),
                    p.shape()
                )));
            }
            updates.push((name.clone(), group.lr as f32, group.weight_decay as f32));
        }
        let m = self.momentum as f32;
        for (name, lr, wd) in updates {
            let g = by_name[name.as_str()].data();
            let p = params.get_mut(&name).expect("name taken from the store").data_mut();
            let v = self.velocity.entry(name).or_insert_with(|| vec![0.0; p.len()]);
            for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *vi = m * *vi + gi + wd * *pi;
                *pi -= lr * *vi;
            }
        }
        Ok(())
    }
}
