use satl_tensor::{Prng, Tensor};

use super::DatasetIndex;
use crate::error::{Error, Result};

/// Acquisition style of one simulated site: the marginal image distribution
/// shifts while labels (geometry) are untouched.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainStyle {
    /// Per-channel additive tint, applied in proportion to how dark a pixel
    /// is, so backgrounds shift most.
    pub background_tint: [f32; 3],
    /// Scaling of deviations around mid-gray.
    pub contrast: f32,
    pub noise_std: f32,
    /// Box-blur radius in pixels.
    pub blur_radius: usize,
    pub brightness_offset: f32,
}

impl DomainStyle {
    pub const IDENTITY: DomainStyle = DomainStyle {
        background_tint: [0.0; 3],
        contrast: 1.0,
        noise_std: 0.0,
        blur_radius: 0,
        brightness_offset: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.contrast > 0.0 && self.contrast <= 4.0) {
            problems.push(format!("contrast {} outside (0, 4]", self.contrast));
        }
        if !(self.noise_std >= 0.0 && self.noise_std <= 0.5) {
            problems.push(format!("noise_std {} outside [0, 0.5]", self.noise_std));
        }
        if self.background_tint.iter().any(|t| t.abs() > 1.0) {
            problems.push("background tint components must lie in [-1, 1]".into());
        }
        if self.brightness_offset.abs() > 1.0 {
            problems.push(format!("brightness offset {} outside [-1, 1]", self.brightness_offset));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

/// Named site styles with class-ratio presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StylePreset {
    /// Reference site, balanced classes.
    Source,
    /// Cooler color cast with reduced contrast.
    ShiftA,
    /// Darker, higher-contrast, blurred and noisier acquisition.
    ShiftB,
    /// Warm, slightly blurred site with a 1:9 positive:negative ratio.
    Skewed,
}

impl StylePreset {
    pub const ALL: [StylePreset; 4] = [
        StylePreset::Source,
        StylePreset::ShiftA,
        StylePreset::ShiftB,
        StylePreset::Skewed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StylePreset::Source => "source",
            StylePreset::ShiftA => "shiftA",
            StylePreset::ShiftB => "shiftB",
            StylePreset::Skewed => "skewed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }

    pub fn style(self) -> DomainStyle {
        match self {
            StylePreset::Source => DomainStyle {
                noise_std: 0.01,
                ..DomainStyle::IDENTITY
            },
            StylePreset::ShiftA => DomainStyle {
                background_tint: [-0.10, 0.06, 0.14],
                contrast: 0.7,
                noise_std: 0.02,
                blur_radius: 0,
                brightness_offset: 0.05,
            },
            StylePreset::ShiftB => DomainStyle {
                background_tint: [0.04, 0.0, -0.04],
                contrast: 1.25,
                noise_std: 0.05,
                blur_radius: 1,
                brightness_offset: -0.10,
            },
            StylePreset::Skewed => DomainStyle {
                background_tint: [0.08, -0.03, 0.0],
                contrast: 0.85,
                noise_std: 0.03,
                blur_radius: 1,
                brightness_offset: 0.06,
            },
        }
    }

    /// Fraction of positives: 0.5, or 0.1 for the skewed site (40:360).
    pub fn default_pos_ratio(self) -> f64 {
        match self {
            StylePreset::Skewed => 0.1,
            _ => 0.5,
        }
    }
}

fn box_blur(pixels: &mut [f32], h: usize, w: usize, r: usize) {
    let mut tmp = vec![0.0f32; h * w];
    // Horizontal then vertical pass, clamping at the border.
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            let s: f32 = pixels[y * w + lo..=y * w + hi].iter().sum();
            tmp[y * w + x] = s / (hi - lo + 1) as f32;
        }
    }
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for x in 0..w {
            let s: f32 = (lo..=hi).map(|yy| tmp[yy * w + x]).sum();
            pixels[y * w + x] = s / (hi - lo + 1) as f32;
        }
    }
}

/// Blur, contrast, tint, brightness, noise, then clamp to `[0,1]`.
pub fn apply_style(pixels: &Tensor<f32>, style: &DomainStyle, prng: &mut Prng) -> Tensor<f32> {
    if style.is_identity() {
        return pixels.clone();
    }
    let s = pixels.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut out = pixels.clone();
    for ch in 0..c {
        let plane = &mut out.data_mut()[ch * h * w..(ch + 1) * h * w];
        if style.blur_radius > 0 {
            box_blur(plane, h, w, style.blur_radius);
        }
        let tint = style.background_tint.get(ch).copied().unwrap_or(0.0);
        for v in plane.iter_mut() {
            let mut p = style.contrast * (*v - 0.5) + 0.5;
            p += tint * (1.0 - p.clamp(0.0, 1.0));
            p += style.brightness_offset;
            if style.noise_std > 0.0 {
                p += style.noise_std * prng.normal() as f32;
            }
            *v = p.clamp(0.0, 1.0);
        }
    }
    out
}

/// Restyles every image; labels, ids and count are preserved. Item `i` draws
/// its noise from `prng.derive(i)`.
pub fn apply_domain_shift(ds: &DatasetIndex, style: &DomainStyle, prng: &Prng) -> Result<DatasetIndex> {
    style.validate()?;
    let mut out = ds.clone();
    for (i, item) in out.items.iter_mut().enumerate() {
        item.pixels = apply_style(&item.pixels, style, &mut prng.derive(i as u64));
    }
    Ok(out)
}
