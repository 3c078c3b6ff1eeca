use serde::{Deserialize, Serialize};

use super::{EngineConstants, FeatureError, ImageRaster};

// Rec.709 weights scaled to integers so that white maps to exactly 1.0.
const WR: u64 = 2126;
const WG: u64 = 7152;
const WB: u64 = 722;
const LUMA_SCALE: u64 = 10_000 * 255;

fn luma_numerator([r, g, b]: [u8; 3]) -> u64 {
    WR * r as u64 + WG * g as u64 + WB * b as u64
}

/// Rec.709 relative luminance in `[0, 1]`.
pub fn luminance(rgb: [u8; 3]) -> f64 {
    luma_numerator(rgb) as f64 / LUMA_SCALE as f64
}

/// HSV saturation in `[0, 1]`.
pub fn saturation([r, g, b]: [u8; 3]) -> f64 {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    if max == 0 {
        0.0
    } else {
        (max - min) as f64 / max as f64
    }
}

fn luminance_plane(img: &ImageRaster) -> Vec<f64> {
    img.pixels().iter().map(|&p| luminance(p)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LuminanceStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

pub fn luminance_stats(img: &ImageRaster) -> LuminanceStats {
    let n = img.pixels().len();
    let total: u64 = img.pixels().iter().map(|&p| luma_numerator(p)).sum();
    let mean = total as f64 / (n as u64 * LUMA_SCALE) as f64;
    let var = img
        .pixels()
        .iter()
        .map(|&p| {
            let d = luminance(p) - mean;
            d * d
        })
        .sum::<f64>()
        / n as f64;
    LuminanceStats { mean, std: var.sqrt() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TonalKey {
    Low,
    Full,
    High,
}

impl TonalKey {
    /// Numeric encoding used in feature vectors: low 0, full 1, high 2.
    pub fn class_value(self) -> f64 {
        match self {
            TonalKey::Low => 0.0,
            TonalKey::Full => 1.0,
            TonalKey::High => 2.0,
        }
    }
}

pub fn tonal_key(img: &ImageRaster) -> TonalKey {
    tonal_key_with(img, &EngineConstants::default())
}

pub fn tonal_key_with(img: &ImageRaster, constants: &EngineConstants) -> TonalKey {
    let mean = luminance_stats(img).mean;
    if mean >= constants.high_key_min {
        TonalKey::High
    } else if mean <= constants.low_key_max {
        TonalKey::Low
    } else {
        TonalKey::Full
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MirrorAxis {
    /// Mirror across the horizontal midline (top against bottom).
    Horizontal,
    /// Mirror across the vertical midline (left against right).
    Vertical,
}

/// Index of the pixel mirrored across `axis`.
pub fn mirror_axis(img: &ImageRaster, axis: MirrorAxis, x: u32, y: u32) -> (u32, u32) {
    match axis {
        MirrorAxis::Horizontal => (x, img.height() - 1 - y),
        MirrorAxis::Vertical => (img.width() - 1 - x, y),
    }
}

/// `1 - mean |L(p) - L(mirror(p))|` over all pixels.
pub fn symmetry_score(img: &ImageRaster, axis: MirrorAxis) -> f64 {
    let mut total: u64 = 0;
    for y in 0..img.height() {
        for x in 0..img.width() {
            let (mx, my) = mirror_axis(img, axis, x, y);
            total += luma_numerator(img.get(x, y)).abs_diff(luma_numerator(img.get(mx, my)));
        }
    }
    let n = img.pixels().len() as u64;
    1.0 - total as f64 / (n * LUMA_SCALE) as f64
}

fn flat_mask(img: &ImageRaster, luma: &[f64], flat_std_max: f64) -> Vec<bool> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut mask = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            let mut count = 0.0;
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let v = luma[ny * w + nx];
                    sum += v;
                    sum_sq += v * v;
                    count += 1.0;
                }
            }
            let mean = sum / count;
            let var = (sum_sq / count - mean * mean).max(0.0);
            mask[y * w + x] = var.sqrt() < flat_std_max;
        }
    }
    mask
}

pub fn negative_space_ratio(img: &ImageRaster) -> f64 {
    negative_space_ratio_with(img, &EngineConstants::default())
}

/// Fraction of pixels in 4-connected flat components covering at least
/// `min_component_fraction` of the image.
pub fn negative_space_ratio_with(img: &ImageRaster, constants: &EngineConstants) -> f64 {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let total = w * h;
    let luma = luminance_plane(img);
    let mask = flat_mask(img, &luma, constants.flat_std_max);
    let min_area = constants.min_component_fraction * total as f64;
    let mut visited = vec![false; total];
    let mut kept = 0usize;
    let mut stack = Vec::new();
    for start in 0..total {
        if !mask[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let mut area = 0usize;
        while let Some(i) = stack.pop() {
            area += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if mask[j] && !visited[j] {
                    visited[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if area as f64 >= min_area {
            kept += area;
        }
    }
    kept as f64 / total as f64
}

pub fn saturation_stats(img: &ImageRaster) -> f64 {
    img.pixels().iter().map(|&p| saturation(p)).sum::<f64>() / img.pixels().len() as f64
}

/// Warm-to-cold trend from the bottom band to the top band, in `[-1, 1]`.
///
/// Rows are split into `bands` horizontal bands numbered from the bottom. With
/// `m_b` the mean of `(R - B) / 255` in band `b` and `d_b = b - mean(b)`, the
/// result is `sum(d_b * m_b) / sum(|d_b|)`: the least-squares slope rescaled so
/// that a fully warm-to-fully cold split scores -1. Negative values mean the
/// image cools toward the top.
pub fn warm_cold_gradient(img: &ImageRaster, bands: usize) -> Result<f64, FeatureError> {
    if bands < 2 {
        return Err(FeatureError::TooFewBands(bands));
    }
    let h = img.height() as usize;
    if bands > h {
        return Err(FeatureError::BandsExceedHeight { bands, height: img.height() });
    }
    let mut sums = vec![0i64; bands];
    let mut counts = vec![0u64; bands];
    for y in 0..h {
        let band = (h - 1 - y) * bands / h;
        for x in 0..img.width() {
            let [r, _, b] = img.get(x, y as u32);
            sums[band] += r as i64 - b as i64;
            counts[band] += 1;
        }
    }
    let centre = (bands - 1) as f64 / 2.0;
    let mut num = 0.0;
    let mut den = 0.0;
    for band in 0..bands {
        let mean = sums[band] as f64 / (counts[band] as f64 * 255.0);
        let d = band as f64 - centre;
        num += d * mean;
        den += d.abs();
    }
    Ok((num / den).clamp(-1.0, 1.0))
}

pub fn hard_edge_fraction(img: &ImageRaster) -> Result<f64, FeatureError> {
    hard_edge_fraction_with(img, &EngineConstants::default())
}

/// Among interior pixels whose central-difference gradient exceeds
/// `edge_gradient_min`, the fraction whose transition is at most
/// `hard_edge_max_width` pixels wide.
///
/// The transition width at a pixel is the number of steps luminance keeps strictly
/// rising along the gradient direction (quantized to the 8-neighbourhood) plus the
/// number of steps it keeps strictly falling in the opposite direction. Returns 0
/// when no pixel is on an edge.
pub fn hard_edge_fraction_with(img: &ImageRaster, constants: &EngineConstants) -> Result<f64, FeatureError> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w < 3 || h < 3 {
        return Err(FeatureError::ImageTooSmall { width: img.width(), height: img.height() });
    }
    let luma = luminance_plane(img);
    let at = |x: isize, y: isize| luma[y as usize * w + x as usize];
    let inside = |x: isize, y: isize| x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h;
    let mut edges = 0usize;
    let mut hard = 0usize;
    for y in 1..h as isize - 1 {
        for x in 1..w as isize - 1 {
            let gx = (at(x + 1, y) - at(x - 1, y)) / 2.0;
            let gy = (at(x, y + 1) - at(x, y - 1)) / 2.0;
            if gx.hypot(gy) <= constants.edge_gradient_min {
                continue;
            }
            edges += 1;
            let octant = (gy.atan2(gx) / std::f64::consts::FRAC_PI_4).round();
            let angle = octant * std::f64::consts::FRAC_PI_4;
            let (dx, dy) = (angle.cos().round() as isize, angle.sin().round() as isize);
            let mut width = 0usize;
            let (mut cx, mut cy) = (x, y);
            while inside(cx + dx, cy + dy) && at(cx + dx, cy + dy) > at(cx, cy) {
                cx += dx;
                cy += dy;
                width += 1;
            }
            let (mut cx, mut cy) = (x, y);
            while inside(cx - dx, cy - dy) && at(cx - dx, cy - dy) < at(cx, cy) {
                cx -= dx;
                cy -= dy;
                width += 1;
            }
            if width <= constants.hard_edge_max_width {
                hard += 1;
            }
        }
    }
    Ok(if edges == 0 { 0.0 } else { hard as f64 / edges as f64 })
}

/// Centroid of the image weighted by each pixel's luminance distance from the
/// mean, in normalized coordinates. A featureless image yields the centre.
pub(crate) fn contrast_centroid(img: &ImageRaster) -> [f64; 2] {
    let mean = luminance_stats(img).mean;
    let (w, h) = (img.width() as f64, img.height() as f64);
    let mut total = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for y in 0..img.height() {
        for x in 0..img.width() {
            let weight = (luminance(img.get(x, y)) - mean).abs();
            total += weight;
            cx += weight * (x as f64 + 0.5) / w;
            cy += weight * (y as f64 + 0.5) / h;
        }
    }
    if total > 0.0 {
        [(cx / total).clamp(0.0, 1.0), (cy / total).clamp(0.0, 1.0)]
    } else {
        [0.5, 0.5]
    }
}
