use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One VGG stage: `convs` 3×3 convolutions (padding 1, relu) producing
/// `channels` maps, followed by a 2×2 max pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stage {
    pub convs: usize,
    pub channels: usize,
}

/// Architecture of the shared feature encoder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    /// `(channels, height, width)` of input images.
    pub input_shape: (usize, usize, usize),
    pub stages: Vec<Stage>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::new(
            (3, 64, 64),
            &[(2, 16), (2, 32), (2, 64)],
        )
    }
}

impl EncoderConfig {
    pub fn new(input_shape: (usize, usize, usize), stages: &[(usize, usize)]) -> Self {
        EncoderConfig {
            input_shape,
            stages: stages
                .iter()
                .map(|&(convs, channels)| Stage { convs, channels })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (c, h, w) = self.input_shape;
        let mut problems = Vec::new();
        if c == 0 || h == 0 || w == 0 {
            problems.push(format!("input shape {:?} has a zero dimension", self.input_shape));
        }
        if self.stages.is_empty() {
            problems.push("encoder needs at least one stage".to_string());
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.convs == 0 || s.channels == 0 {
                problems.push(format!("stage {i} has zero convolutions or channels"));
            }
        }
        let div = 1usize << self.stages.len().min(30);
        if h % div != 0 || w % div != 0 {
            problems.push(format!(
                "input {h}x{w} is not divisible by 2^{} = {div}",
                self.stages.len()
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// `(channels, height, width)` of the encoder output.
    pub fn feature_shape(&self) -> (usize, usize, usize) {
        let down = 1 << self.stages.len();
        (
            self.stages.last().map_or(self.input_shape.0, |s| s.channels),
            self.input_shape.1 / down,
            self.input_shape.2 / down,
        )
    }

    pub fn flat_features(&self) -> usize {
        let (c, h, w) = self.feature_shape();
        c * h * w
    }

    /// Canonical text form; hashed into fingerprints and stored in checkpoints.
    pub fn descriptor(&self) -> String {
        let (c, h, w) = self.input_shape;
        let stages: Vec<String> = self
            .stages
            .iter()
            .map(|s| format!("{}x{}", s.convs, s.channels))
            .collect();
        format!("in={c}x{h}x{w};stages={}", stages.join(","))
    }

    pub fn fingerprint(&self) -> u64 {
        fingerprint(&format!("encoder;{}", self.descriptor()))
    }

    pub(crate) fn parse_fields(input: &str, stages: &str) -> Option<Self> {
        let dims: Vec<usize> = input.split('x').map(|d| d.parse().ok()).collect::<Option<_>>()?;
        let [c, h, w] = dims[..] else { return None };
        let stages = stages
            .split(',')
            .map(|s| {
                let (a, b) = s.split_once('x')?;
                Some(Stage {
                    convs: a.parse().ok()?,
                    channels: b.parse().ok()?,
                })
            })
            .collect::<Option<Vec<_>>>()?;
        Some(EncoderConfig {
            input_shape: (c, h, w),
            stages,
        })
    }

    /// Names and shapes of encoder parameters, in initialization order.
    pub(crate) fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut in_ch = self.input_shape.0;
        for (s, stage) in self.stages.iter().enumerate() {
            for c in 0..stage.convs {
                out.push((format!("enc.s{s}.c{c}.w"), vec![stage.channels, in_ch, 3, 3]));
                out.push((format!("enc.s{s}.c{c}.b"), vec![stage.channels]));
                in_ch = stage.channels;
            }
        }
        out
    }
}

/// First eight bytes (little-endian) of the SHA-256 of `text`.
pub fn fingerprint(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest length"))
}
