use std::path::{Path, PathBuf};

use image::ImageFormat;
use satl_tensor::Tensor;

use super::{DatasetIndex, LabeledImage, NEGATIVE, POSITIVE};
use crate::error::{Error, Result};
use crate::io;

fn ingestion(path: &Path, reason: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Bilinear resize of a `[C,H,W]` image with half-pixel centers and edge
/// clamping.
pub fn resize_bilinear(img: &Tensor<f32>, out_h: usize, out_w: usize) -> Tensor<f32> {
    let s = img.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    if (h, w) == (out_h, out_w) {
        return img.clone();
    }
    let src = img.data();
    let axis = |dst: usize, n_in: usize, n_out: usize| -> (usize, usize, f32) {
        let pos = ((dst as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, (pos - lo as f64) as f32)
    };
    let mut out = vec![0.0f32; c * out_h * out_w];
    for y in 0..out_h {
        let (y0, y1, fy) = axis(y, h, out_h);
        for x in 0..out_w {
            let (x0, x1, fx) = axis(x, w, out_w);
            for ch in 0..c {
                let p = |yy: usize, xx: usize| src[ch * h * w + yy * w + xx];
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out[ch * out_h * out_w + y * out_w + x] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out).expect("resize buffer matches shape")
}

fn load_ppm(path: &Path, size: (usize, usize)) -> Result<Tensor<f32>> {
    let bytes = io::read(path)?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Pnm)
        .map_err(|e| ingestion(path, format!("cannot decode image: {e}")))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[c * h * w + y as usize * w + x as usize] = px.0[c] as f32 / 255.0;
        }
    }
    let full = Tensor::new(&[3, h, w], data).map_err(|e| ingestion(path, e.to_string()))?;
    Ok(resize_bilinear(&full, size.0, size.1))
}

fn read_labels(csv_path: &Path) -> Result<Vec<(String, u8)>> {
    let text = io::read_to_string(csv_path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| ingestion(csv_path, e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["filename", "label"] {
        return Err(ingestion(csv_path, "header must be \"filename,label\""));
    }
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| ingestion(csv_path, format!("row {}: {e}", line + 2)))?;
        let label = match &record[1] {
            "0" => NEGATIVE,
            "1" => POSITIVE,
            other => {
                return Err(ingestion(
                    csv_path,
                    format!("row {}: label {other:?} for {} is not 0 or 1", line + 2, &record[0]),
                ))
            }
        };
        rows.push((record[0].to_string(), label));
    }
    Ok(rows)
}

/// Loads PPM images from `dir`, resized to `size` = `(H, W)`. With a labels
/// CSV exactly the listed files are loaded, in CSV order; without one every
/// `.ppm` file is loaded unlabeled, in name order.
pub fn load_directory(dir: &Path, labels_csv: Option<&Path>, size: (usize, usize)) -> Result<DatasetIndex> {
    let listing: Vec<(PathBuf, Option<u8>)> = match labels_csv {
        Some(csv_path) => read_labels(csv_path)?
            .into_iter()
            .map(|(name, label)| (dir.join(name), Some(label)))
            .collect(),
        None => io::list_dir(dir)?
            .into_iter()
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")))
            .map(|p| (p, None))
            .collect(),
    };
    let mut items = Vec::with_capacity(listing.len());
    for (path, label) in listing {
        if !path.is_file() {
            return Err(ingestion(&path, "listed in the labels CSV but missing"));
        }
        let id = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        items.push(LabeledImage {
            id,
            pixels: load_ppm(&path, size)?,
            label,
            cdr: None,
        });
    }
    let tag = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(DatasetIndex::new(tag, items))
}
