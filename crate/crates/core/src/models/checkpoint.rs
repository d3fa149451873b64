//! Binary checkpoint format.
//!
//! ```text
//! "SATL" | u32 version | u64 fingerprint | u32 block count
//! per block: u32 name length, UTF-8 name, u32 rank, rank × u32 dims,
//!            numel × f32 payload
//! metadata:  u8 kind, u32 descriptor length, UTF-8 descriptor,
//!            u32 epoch, f64 best validation accuracy, u64 seed
//! ```
//!
//! All integers and floats are little-endian. The fingerprint is derived from
//! the model kind and architecture descriptor and is verified on load.

use std::path::Path;

use satl_tensor::Tensor;

use super::config::{fingerprint, EncoderConfig};
use crate::error::{Error, Result};
use crate::io;

pub const MAGIC: &[u8; 4] = b"SATL";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Classifier,
    Vae,
}

impl ModelKind {
    fn tag(self) -> u8 {
        match self {
            ModelKind::Classifier => 0,
            ModelKind::Vae => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ModelKind::Classifier => "classifier",
            ModelKind::Vae => "vae",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrainingMeta {
    pub epoch: u32,
    pub best_val_accuracy: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub descriptor: String,
    pub fingerprint: u64,
    pub blocks: Vec<(String, Tensor<f32>)>,
    pub meta: TrainingMeta,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.buf.len() - self.pos < n {
            return Err(format!("truncated at byte {}", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "name is not UTF-8".to_string())
    }
}

impl Checkpoint {
    pub fn new(
        kind: ModelKind,
        descriptor: String,
        blocks: Vec<(String, Tensor<f32>)>,
        meta: TrainingMeta,
    ) -> Self {
        Checkpoint {
            kind,
            fingerprint: Self::fingerprint_for(kind, &descriptor),
            descriptor,
            blocks,
            meta,
        }
    }

    pub fn fingerprint_for(kind: ModelKind, descriptor: &str) -> u64 {
        fingerprint(&format!("{};{descriptor}", kind.name()))
    }

    pub(crate) fn descriptor_field(&self, key: &str) -> Option<&str> {
        self.descriptor
            .split(';')
            .find_map(|kv| kv.strip_prefix(key)?.strip_prefix('='))
    }

    /// Encoder architecture recorded in the descriptor.
    pub fn encoder_config(&self) -> Result<EncoderConfig> {
        let parsed = self
            .descriptor_field("in")
            .zip(self.descriptor_field("stages"))
            .and_then(|(i, s)| EncoderConfig::parse_fields(i, s));
        let config = parsed.ok_or_else(|| {
            Error::Composition(format!("unreadable architecture descriptor {:?}", self.descriptor))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.fingerprint.to_le_bytes());
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for (name, t) in &self.blocks {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.push(self.kind.tag());
        out.extend_from_slice(&(self.descriptor.len() as u32).to_le_bytes());
        out.extend_from_slice(self.descriptor.as_bytes());
        out.extend_from_slice(&self.meta.epoch.to_le_bytes());
        out.extend_from_slice(&self.meta.best_val_accuracy.to_le_bytes());
        out.extend_from_slice(&self.meta.seed.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err("bad magic".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let stored_fp = r.u64()?;
        let count = r.u32()? as usize;
        let mut blocks = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(format!("block {name} has implausible rank {rank}"));
            }
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let payload = r.take(n.checked_mul(4).ok_or("block too large")?)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(&shape, data).map_err(|e| format!("block {name}: {e}"))?;
            blocks.push((name, t));
        }
        let kind = match r.u8()? {
            0 => ModelKind::Classifier,
            1 => ModelKind::Vae,
            k => return Err(format!("unknown model kind {k}")),
        };
        let descriptor = r.string()?;
        let meta = TrainingMeta {
            epoch: r.u32()?,
            best_val_accuracy: r.f64()?,
            seed: r.u64()?,
        };
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        let expected_fp = Self::fingerprint_for(kind, &descriptor);
        if stored_fp != expected_fp {
            return Err(format!(
                "fingerprint {stored_fp:016x} does not match descriptor ({expected_fp:016x})"
            ));
        }
        Ok(Checkpoint {
            kind,
            descriptor,
            fingerprint: stored_fp,
            blocks,
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = io::read(path)?;
        Self::from_bytes(&bytes).map_err(|reason| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        })
    }
}
