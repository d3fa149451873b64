//! Labeled image collections: synthetic two-domain generation, domain
//! shifts, ingestion, stratified splitting and batching.

mod batch;
mod ingest;
mod pack;
mod split;
mod style;
mod synth;

pub use batch::{batches, Batch, Batches};
pub use ingest::{load_directory, resize_bilinear};
pub use pack::{decode_pack, encode_pack, read_pack, write_pack, Manifest, ManifestEntry, PACK_MAGIC};
pub use split::stratified_split;
pub use style::{apply_domain_shift, apply_style, DomainStyle, StylePreset};
pub use synth::{generate_synthetic, render_fundus, FundusGeometry, Rendered, SynthConfig};

use satl_tensor::Tensor;

pub const NEGATIVE: u8 = 0;
pub const POSITIVE: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub id: String,
    /// `[C,H,W]`, values in `[0,1]`.
    pub pixels: Tensor<f32>,
    /// `Some(0)` negative, `Some(1)` positive, `None` unlabeled.
    pub label: Option<u8>,
    /// Cup-to-disc ratio the image was rendered with, when synthetic.
    pub cdr: Option<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetIndex {
    pub items: Vec<LabeledImage>,
    pub domain_tag: String,
}

impl DatasetIndex {
    pub fn new(domain_tag: impl Into<String>, items: Vec<LabeledImage>) -> Self {
        DatasetIndex {
            items,
            domain_tag: domain_tag.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// `(negatives, positives)`, or `None` if any item is unlabeled.
    pub fn class_counts(&self) -> Option<(usize, usize)> {
        let mut counts = (0, 0);
        for item in &self.items {
            match item.label? {
                POSITIVE => counts.1 += 1,
                _ => counts.0 += 1,
            }
        }
        Some(counts)
    }

    pub fn is_labeled(&self) -> bool {
        !self.items.is_empty() && self.class_counts().is_some()
    }

    /// `(C, H, W)` of the first item.
    pub fn image_shape(&self) -> Option<(usize, usize, usize)> {
        self.items.first().map(|i| {
            let s = i.pixels.shape();
            (s[0], s[1], s[2])
        })
    }

    pub fn labels(&self) -> Option<Vec<u8>> {
        self.items.iter().map(|i| i.label).collect()
    }

    /// Copy with every label removed.
    pub fn without_labels(&self) -> DatasetIndex {
        DatasetIndex {
            domain_tag: self.domain_tag.clone(),
            items: self
                .items
                .iter()
                .map(|i| LabeledImage {
                    label: None,
                    ..i.clone()
                })
                .collect(),
        }
    }
}
