use std::path::Path;

use satl_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::{DatasetIndex, LabeledImage, NEGATIVE, POSITIVE};
use crate::error::{Error, Result};
use crate::io;

pub const PACK_MAGIC: &[u8; 4] = b"SATD";
const UNLABELED: u8 = 255;

/// Sidecar listing the ratio each synthetic item was rendered with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub domain_tag: String,
    pub items: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub label: Option<u8>,
    pub cdr: Option<f32>,
}

impl Manifest {
    pub fn of(ds: &DatasetIndex) -> Self {
        Manifest {
            domain_tag: ds.domain_tag.clone(),
            items: ds
                .items
                .iter()
                .map(|i| ManifestEntry {
                    id: i.id.clone(),
                    label: i.label,
                    cdr: i.cdr,
                })
                .collect(),
        }
    }
}

pub fn encode_pack(ds: &DatasetIndex) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(PACK_MAGIC);
    out.extend_from_slice(&(ds.items.len() as u32).to_le_bytes());
    for item in &ds.items {
        out.extend_from_slice(&(item.id.len() as u32).to_le_bytes());
        out.extend_from_slice(item.id.as_bytes());
        out.push(item.label.unwrap_or(UNLABELED));
        let s = item.pixels.shape();
        for dim in [s[1], s[2], s[0]] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in item.pixels.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated while reading {what} at byte {}", self.pos))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Items of a pack, pixels as `[C,H,W]`.
pub fn decode_pack(bytes: &[u8]) -> std::result::Result<Vec<LabeledImage>, String> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != PACK_MAGIC {
        return Err("not a dataset pack (bad magic)".into());
    }
    let count = cur.u32("item count")? as usize;
    let mut items = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let id_len = cur.u32("id length")? as usize;
        let id = std::str::from_utf8(cur.take(id_len, "id")?)
            .map_err(|_| format!("item {i}: id is not UTF-8"))?
            .to_string();
        let label = match cur.take(1, "label")?[0] {
            NEGATIVE => Some(NEGATIVE),
            POSITIVE => Some(POSITIVE),
            UNLABELED => None,
            other => return Err(format!("item {id}: invalid label byte {other}")),
        };
        let (h, w, c) = (cur.u32("height")?, cur.u32("width")?, cur.u32("channels")?);
        let n = [h, w, c]
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .filter(|&n| n > 0)
            .ok_or_else(|| format!("item {id}: invalid dimensions {h}x{w}x{c}"))?;
        let payload = cur.take(n * 4, "pixels")?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let pixels = Tensor::new(&[c as usize, h as usize, w as usize], data).map_err(|e| e.to_string())?;
        items.push(LabeledImage {
            id,
            pixels,
            label,
            cdr: None,
        });
    }
    if cur.pos != bytes.len() {
        return Err(format!("{} trailing bytes after the last item", bytes.len() - cur.pos));
    }
    Ok(items)
}

pub fn write_pack(path: &Path, ds: &DatasetIndex) -> Result<()> {
    io::write(path, &encode_pack(ds))
}

/// Reads a pack; the domain tag is the file stem.
pub fn read_pack(path: &Path) -> Result<DatasetIndex> {
    let bytes = io::read(path)?;
    let items = decode_pack(&bytes).map_err(|reason| Error::Ingestion {
        path: path.to_path_buf(),
        reason,
    })?;
    let tag = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(DatasetIndex::new(tag, items))
}
