use satl_tensor::{Prng, Tensor};

use super::DatasetIndex;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Batch {
    /// `[N,C,H,W]`.
    pub images: Tensor<f32>,
    pub labels: Option<Vec<usize>>,
    pub ids: Vec<String>,
}

pub struct Batches<'a> {
    ds: &'a DatasetIndex,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

/// Batches in dataset order, or in an order shuffled by `shuffle`. The last
/// batch may be short.
pub fn batches(ds: &DatasetIndex, batch_size: usize, shuffle: Option<Prng>) -> Result<Batches<'_>> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    if let Some(first) = ds.items.first() {
        if let Some(odd) = ds.items.iter().find(|i| i.pixels.shape() != first.pixels.shape()) {
            return Err(Error::Shape(format!(
                "item {} is {:?} but {} is {:?}",
                odd.id,
                odd.pixels.shape(),
                first.id,
                first.pixels.shape()
            )));
        }
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    if let Some(mut prng) = shuffle {
        prng.shuffle(&mut order);
    }
    Ok(Batches {
        ds,
        order,
        batch_size,
        next: 0,
    })
}

impl Batches<'_> {
    pub fn len(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.next >= self.order.len() {
            return None;
        }
        let end = (self.next + self.batch_size).min(self.order.len());
        let picked: Vec<_> = self.order[self.next..end].iter().map(|&i| &self.ds.items[i]).collect();
        self.next = end;
        let pixels: Vec<&Tensor<f32>> = picked.iter().map(|i| &i.pixels).collect();
        let images = Tensor::stack(&pixels).expect("shapes checked when the iterator was built");
        let labels = picked.iter().map(|i| i.label.map(usize::from)).collect();
        Some(Batch {
            images,
            labels,
            ids: picked.iter().map(|i| i.id.clone()).collect(),
        })
    }
}
