//! Measurable visual proxies computed from rasters and annotator-supplied geometry.

mod geometry;
mod metrics;
mod raster;
mod suggest;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use geometry::{
    golden_point_min_distance, s_curve_coverage, vanishing_point, vanishing_point_with, Axis, LineSegment,
    PathPolyline, VanishingPoint, GOLDEN_POINTS,
};
pub use metrics::{
    hard_edge_fraction, hard_edge_fraction_with, luminance, luminance_stats, mirror_axis, negative_space_ratio,
    negative_space_ratio_with, saturation, saturation_stats, symmetry_score, tonal_key, tonal_key_with,
    warm_cold_gradient, LuminanceStats, MirrorAxis, TonalKey,
};
pub use raster::ImageRaster;
pub use suggest::{suggest_labels, Suggestion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKey {
    MeanLuminance,
    LuminanceStd,
    TonalKeyClass,
    SymmetryH,
    SymmetryV,
    NegativeSpaceRatio,
    FillRatio,
    MeanSaturation,
    WarmColdGradient,
    HardEdgeFraction,
    SCurveCoverage,
    VanishingConvergence,
    GoldenPointMinDistance,
}

impl FeatureKey {
    pub const ALL: [FeatureKey; 13] = [
        FeatureKey::MeanLuminance,
        FeatureKey::LuminanceStd,
        FeatureKey::TonalKeyClass,
        FeatureKey::SymmetryH,
        FeatureKey::SymmetryV,
        FeatureKey::NegativeSpaceRatio,
        FeatureKey::FillRatio,
        FeatureKey::MeanSaturation,
        FeatureKey::WarmColdGradient,
        FeatureKey::HardEdgeFraction,
        FeatureKey::SCurveCoverage,
        FeatureKey::VanishingConvergence,
        FeatureKey::GoldenPointMinDistance,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKey::MeanLuminance => "mean_luminance",
            FeatureKey::LuminanceStd => "luminance_std",
            FeatureKey::TonalKeyClass => "tonal_key_class",
            FeatureKey::SymmetryH => "symmetry_h",
            FeatureKey::SymmetryV => "symmetry_v",
            FeatureKey::NegativeSpaceRatio => "negative_space_ratio",
            FeatureKey::FillRatio => "fill_ratio",
            FeatureKey::MeanSaturation => "mean_saturation",
            FeatureKey::WarmColdGradient => "warm_cold_gradient",
            FeatureKey::HardEdgeFraction => "hard_edge_fraction",
            FeatureKey::SCurveCoverage => "s_curve_coverage",
            FeatureKey::VanishingConvergence => "vanishing_convergence",
            FeatureKey::GoldenPointMinDistance => "golden_point_min_distance",
        }
    }

    /// Closed interval of values the extractor can produce.
    pub fn value_range(self) -> (f64, f64) {
        match self {
            FeatureKey::TonalKeyClass => (0.0, 2.0),
            FeatureKey::WarmColdGradient => (-1.0, 1.0),
            FeatureKey::VanishingConvergence => (0.0, f64::INFINITY),
            _ => (0.0, 1.0),
        }
    }
}

impl PartialOrd for FeatureKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Alphabetical by key spelling, so serialized vectors have sorted keys.
impl Ord for FeatureKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.as_str().cmp(other.as_str())
    }
}

impl fmt::Display for FeatureKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown feature key `{0}`")]
pub struct UnknownFeatureKey(pub String);

impl FromStr for FeatureKey {
    type Err = UnknownFeatureKey;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FeatureKey::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| UnknownFeatureKey(s.to_string()))
    }
}

/// Feature values keyed by [`FeatureKey`]; serializes as a JSON object with sorted keys.
pub type FeatureVector = BTreeMap<FeatureKey, f64>;

/// Tunable constants used by the extractors.
///
/// None of these values come from the taxonomy itself; each is an engine design
/// decision. Schema criteria carry their own thresholds and can override the
/// effect of the tonal bounds on suggestions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConstants {
    pub version: String,
    /// Mean luminance at or below which an image is low key.
    pub low_key_max: f64,
    /// Mean luminance at or above which an image is high key.
    pub high_key_min: f64,
    /// 3x3 luminance standard deviation below which a pixel is flat.
    pub flat_std_max: f64,
    /// Smallest flat component counted as negative space, as a fraction of the image.
    pub min_component_fraction: f64,
    /// Gradient magnitude above which a pixel lies on an edge.
    pub edge_gradient_min: f64,
    /// Widest transition, in pixels, still counted as a hard edge.
    pub hard_edge_max_width: usize,
    pub warm_cold_bands: usize,
    /// Relative determinant below which line normals are treated as parallel.
    pub parallel_tolerance: f64,
}

pub const ENGINE_CONSTANTS_VERSION: &str = "1.0.0";

impl Default for EngineConstants {
    fn default() -> Self {
        EngineConstants {
            version: ENGINE_CONSTANTS_VERSION.to_string(),
            low_key_max: 0.40,
            high_key_min: 0.60,
            flat_std_max: 0.02,
            min_component_fraction: 0.01,
            edge_gradient_min: 0.05,
            hard_edge_max_width: 2,
            warm_cold_bands: 5,
            parallel_tolerance: 1e-9,
        }
    }
}

impl EngineConstants {
    /// Stable text form used when keying cached feature vectors.
    pub fn fingerprint(&self) -> String {
        serde_json::to_string(self).expect("constants serialize")
    }
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("warm/cold gradient needs at least 2 bands, got {0}")]
    TooFewBands(usize),
    #[error("{bands} bands exceed image height {height}")]
    BandsExceedHeight { bands: usize, height: u32 },
    #[error("image {width}x{height} is smaller than 3x3")]
    ImageTooSmall { width: u32, height: u32 },
    #[error("path needs at least 2 points, got {0}")]
    DegeneratePath(usize),
    #[error("coordinate ({0}, {1}) lies outside the unit square")]
    OutOfBounds(f64, f64),
    #[error("vanishing point needs at least 2 lines, got {0}")]
    TooFewLines(usize),
    #[error("line {0} has zero length")]
    DegenerateLine(usize),
    #[error("all lines are parallel; no finite vanishing point")]
    AllParallel,
}

/// Computes every feature whose inputs are available.
///
/// `s_curve_coverage` needs `path` and is measured along the longer side of the
/// frame. `vanishing_convergence` needs `lines`. The golden-point distance is
/// taken from the vanishing point when one exists inside the frame, otherwise
/// from the luminance-contrast centroid of the image.
pub fn extract_all(
    img: &ImageRaster,
    path: Option<&PathPolyline>,
    lines: Option<&[LineSegment]>,
    constants: &EngineConstants,
) -> Result<FeatureVector, FeatureError> {
    let mut fv = FeatureVector::new();
    let stats = luminance_stats(img);
    fv.insert(FeatureKey::MeanLuminance, stats.mean);
    fv.insert(FeatureKey::LuminanceStd, stats.std);
    fv.insert(FeatureKey::TonalKeyClass, tonal_key_with(img, constants).class_value());
    fv.insert(FeatureKey::SymmetryH, symmetry_score(img, MirrorAxis::Horizontal));
    fv.insert(FeatureKey::SymmetryV, symmetry_score(img, MirrorAxis::Vertical));
    let negative = negative_space_ratio_with(img, constants);
    fv.insert(FeatureKey::NegativeSpaceRatio, negative);
    fv.insert(FeatureKey::FillRatio, 1.0 - negative);
    fv.insert(FeatureKey::MeanSaturation, saturation_stats(img));
    let bands = constants.warm_cold_bands.min(img.height() as usize).max(2);
    if img.height() >= 2 {
        fv.insert(FeatureKey::WarmColdGradient, warm_cold_gradient(img, bands)?);
    }
    fv.insert(FeatureKey::HardEdgeFraction, hard_edge_fraction_with(img, constants)?);

    if let Some(path) = path {
        let axis = if img.height() >= img.width() { Axis::Height } else { Axis::Width };
        fv.insert(FeatureKey::SCurveCoverage, s_curve_coverage(path, axis)?);
    }
    let mut center = None;
    if let Some(lines) = lines {
        let vp = vanishing_point_with(lines, constants.parallel_tolerance)?;
        fv.insert(FeatureKey::VanishingConvergence, vp.convergence_rms);
        let [x, y] = vp.point;
        if (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y) {
            center = Some(vp.point);
        }
    }
    let center = center.unwrap_or_else(|| metrics::contrast_centroid(img));
    fv.insert(FeatureKey::GoldenPointMinDistance, golden_point_min_distance(center)?);
    Ok(fv)
}
