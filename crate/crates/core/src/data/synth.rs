use satl_tensor::{Prng, Tensor};

use super::style::{apply_style, DomainStyle};
use super::{DatasetIndex, LabeledImage, NEGATIVE, POSITIVE};
use crate::error::{Error, Result};

/// Half-width of the band around the threshold from which no ratio is drawn.
const CDR_MARGIN: f64 = 0.05;
const CDR_MIN: f64 = 0.2;
const CDR_MAX: f64 = 0.95;
const MAX_ATTEMPTS: usize = 100;

const BACKGROUND: [f32; 3] = [0.55, 0.24, 0.12];
const DISC: [f32; 3] = [0.92, 0.66, 0.38];
const CUP: [f32; 3] = [0.99, 0.93, 0.78];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub pos_ratio: f64,
    pub style: DomainStyle,
    /// `(H, W)`; images always have 3 channels.
    pub image_size: (usize, usize),
    pub cdr_threshold: f64,
    pub domain_tag: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 600,
            pos_ratio: 0.5,
            style: DomainStyle::IDENTITY,
            image_size: (64, 64),
            cdr_threshold: 0.5,
            domain_tag: "synthetic".into(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n == 0 {
            problems.push("n must be positive".to_string());
        }
        if !(self.pos_ratio > 0.0 && self.pos_ratio < 1.0) {
            problems.push(format!("pos_ratio {} outside (0, 1)", self.pos_ratio));
        }
        let t = self.cdr_threshold;
        if !(t - CDR_MARGIN > CDR_MIN && t + CDR_MARGIN < CDR_MAX) {
            problems.push(format!(
                "cdr_threshold {t} leaves an empty ratio range; it must lie in ({}, {})",
                CDR_MIN + CDR_MARGIN,
                CDR_MAX - CDR_MARGIN
            ));
        }
        let (h, w) = self.image_size;
        if h < 8 || w < 8 {
            problems.push(format!("image size {h}x{w} is below the 8x8 minimum"));
        }
        if let Err(Error::Config(style)) = self.style.validate() {
            problems.extend(style);
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Ellipse geometry in pixel units; a pixel belongs to a region when its
/// center `(y + 0.5, x + 0.5)` lies inside the ellipse.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FundusGeometry {
    pub disc_center: (f64, f64),
    /// `(vertical, horizontal)` semi-axes.
    pub disc_axes: (f64, f64),
    pub cup_center: (f64, f64),
    pub cup_axes: (f64, f64),
    /// Vertical cup semi-axis over vertical disc semi-axis.
    pub cdr: f64,
}

/// A rendered image with its region masks, before any style is applied.
#[derive(Clone, Debug)]
pub struct Rendered {
    pub pixels: Tensor<f32>,
    pub disc_mask: Vec<bool>,
    pub cup_mask: Vec<bool>,
}

fn inside(center: (f64, f64), axes: (f64, f64), y: f64, x: f64) -> bool {
    let dy = (y - center.0) / axes.0;
    let dx = (x - center.1) / axes.1;
    dy * dy + dx * dx <= 1.0
}

fn sample_geometry(h: usize, w: usize, cdr: f64, prng: &mut Prng) -> Result<FundusGeometry> {
    let (hf, wf) = (h as f64, w as f64);
    for _ in 0..MAX_ATTEMPTS {
        let disc_v = prng.uniform_range(0.16, 0.24) * hf;
        let disc_h = disc_v * prng.uniform_range(0.8, 1.1);
        let center = (prng.uniform_range(0.3, 0.7) * hf, prng.uniform_range(0.3, 0.7) * wf);
        let fits = center.0 - disc_v >= 1.0
            && center.0 + disc_v <= hf - 1.0
            && center.1 - disc_h >= 1.0
            && center.1 + disc_h <= wf - 1.0;
        if !fits {
            continue;
        }
        let cup_v = cdr * disc_v;
        let cup_h = (cup_v * prng.uniform_range(0.85, 1.15)).min(0.95 * disc_h);
        // Horizontal drift of the cup, kept inside the disc.
        let slack = (disc_h - cup_h).max(0.0) * 0.5;
        let cup_center = (center.0, center.1 + prng.uniform_range(-slack, slack));
        return Ok(FundusGeometry {
            disc_center: center,
            disc_axes: (disc_v, disc_h),
            cup_center,
            cup_axes: (cup_v, cup_h),
            cdr,
        });
    }
    Err(Error::DegenerateData(format!(
        "no disc placement fit a {h}x{w} frame after {MAX_ATTEMPTS} attempts"
    )))
}

/// Renders a fundus-like image: a dark circular field of view with a
/// radial illumination falloff, a bright disc and a brighter cup.
pub fn render_fundus(h: usize, w: usize, geom: &FundusGeometry, prng: &mut Prng) -> Rendered {
    let illumination = prng.uniform_range(-0.04, 0.04) as f32;
    let fov_center = (h as f64 / 2.0, w as f64 / 2.0);
    let fov_radius = 0.5 * h.min(w) as f64;
    let mut pixels = vec![0.0f32; 3 * h * w];
    let mut disc_mask = vec![false; h * w];
    let mut cup_mask = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let r = ((py - fov_center.0).powi(2) + (px - fov_center.1).powi(2)).sqrt() / fov_radius;
            let i = y * w + x;
            let in_disc = inside(geom.disc_center, geom.disc_axes, py, px);
            let in_cup = in_disc && inside(geom.cup_center, geom.cup_axes, py, px);
            disc_mask[i] = in_disc;
            cup_mask[i] = in_cup;
            let (color, shade) = if in_cup {
                (CUP, 1.0)
            } else if in_disc {
                (DISC, 1.0)
            } else if r <= 1.0 {
                (BACKGROUND, 1.0 - 0.35 * r as f32 * r as f32)
            } else {
                ([0.0; 3], 0.0)
            };
            for c in 0..3 {
                let v = if shade == 0.0 { 0.0 } else { color[c] * shade + illumination };
                pixels[c * h * w + i] = v.clamp(0.0, 1.0);
            }
        }
    }
    Rendered {
        pixels: Tensor::new(&[3, h, w], pixels).expect("rendered buffer matches shape"),
        disc_mask,
        cup_mask,
    }
}

/// Exactly `round(n * pos_ratio)` positives at shuffled positions. Positive
/// ratios are drawn from `(t + 0.05, 0.95]`, negative ones from `[0.2, t - 0.05)`.
pub fn generate_synthetic(cfg: &SynthConfig, prng: &Prng) -> Result<DatasetIndex> {
    cfg.validate()?;
    let n_pos = (cfg.n as f64 * cfg.pos_ratio).round() as usize;
    let mut labels: Vec<u8> = (0..cfg.n).map(|i| if i < n_pos { POSITIVE } else { NEGATIVE }).collect();
    prng.derive_named("labels").shuffle(&mut labels);

    let geometry = prng.derive_named("geometry");
    let style = prng.derive_named("style");
    let (h, w) = cfg.image_size;
    let t = cfg.cdr_threshold;
    let mut items = Vec::with_capacity(cfg.n);
    for (i, &label) in labels.iter().enumerate() {
        let mut rng = geometry.derive(i as u64);
        let cdr = if label == POSITIVE {
            // Uniform on the half-open interval (lo, hi].
            let (lo, hi) = (t + CDR_MARGIN, CDR_MAX);
            hi - rng.uniform() * (hi - lo)
        } else {
            rng.uniform_range(CDR_MIN, t - CDR_MARGIN)
        };
        let geom = sample_geometry(h, w, cdr, &mut rng)?;
        let rendered = render_fundus(h, w, &geom, &mut rng);
        let pixels = apply_style(&rendered.pixels, &cfg.style, &mut style.derive(i as u64));
        items.push(LabeledImage {
            id: format!("{}-{i:05}", cfg.domain_tag),
            pixels,
            label: Some(label),
            cdr: Some(cdr as f32),
        });
    }
    Ok(DatasetIndex::new(cfg.domain_tag.clone(), items))
}
