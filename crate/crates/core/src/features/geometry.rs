use serde::{Deserialize, Serialize};

use super::FeatureError;

pub const GOLDEN_POINTS: [[f64; 2]; 4] = [[0.382, 0.382], [0.382, 0.618], [0.618, 0.382], [0.618, 0.618]];

/// Ordered points in normalized image coordinates; serialized as `[[x, y], ...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPolyline(pub Vec<[f64; 2]>);

/// A segment between two normalized points; serialized as `[[x1, y1], [x2, y2]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSegment(pub [f64; 2], pub [f64; 2]);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Height,
    Width,
}

fn check_point([x, y]: [f64; 2]) -> Result<(), FeatureError> {
    if (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y) {
        Ok(())
    } else {
        Err(FeatureError::OutOfBounds(x, y))
    }
}

/// Extent of the path along `axis`: `max - min` of the matching coordinate.
pub fn s_curve_coverage(path: &PathPolyline, axis: Axis) -> Result<f64, FeatureError> {
    if path.0.len() < 2 {
        return Err(FeatureError::DegeneratePath(path.0.len()));
    }
    for &p in &path.0 {
        check_point(p)?;
    }
    let coord = match axis {
        Axis::Width => 0,
        Axis::Height => 1,
    };
    let (min, max) =
        path.0.iter().map(|p| p[coord]).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    Ok(max - min)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VanishingPoint {
    pub point: [f64; 2],
    /// Root-mean-square perpendicular distance from the point to the lines.
    pub convergence_rms: f64,
}

pub fn vanishing_point(lines: &[LineSegment]) -> Result<VanishingPoint, FeatureError> {
    vanishing_point_with(lines, 1e-9)
}

/// Least-squares intersection of the infinite extensions of `lines`.
///
/// Each line is written `n . p = c` with unit normal `n`; the point solves
/// `(sum n n^T) p = sum c n`. The system counts as singular when
/// `det <= tolerance * trace^2`.
pub fn vanishing_point_with(lines: &[LineSegment], tolerance: f64) -> Result<VanishingPoint, FeatureError> {
    if lines.len() < 2 {
        return Err(FeatureError::TooFewLines(lines.len()));
    }
    let mut normals = Vec::with_capacity(lines.len());
    for (i, LineSegment(a, b)) in lines.iter().enumerate() {
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len = dx.hypot(dy);
        if !len.is_finite() || len <= 0.0 {
            return Err(FeatureError::DegenerateLine(i));
        }
        let n = [-dy / len, dx / len];
        normals.push((n, n[0] * a[0] + n[1] * a[1]));
    }
    let (mut sxx, mut sxy, mut syy, mut bx, mut by) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &([nx, ny], c) in &normals {
        sxx += nx * nx;
        sxy += nx * ny;
        syy += ny * ny;
        bx += c * nx;
        by += c * ny;
    }
    let det = sxx * syy - sxy * sxy;
    let trace = sxx + syy;
    if det <= tolerance * trace * trace {
        return Err(FeatureError::AllParallel);
    }
    let x = (syy * bx - sxy * by) / det;
    let y = (sxx * by - sxy * bx) / det;
    let sum_sq: f64 = normals
        .iter()
        .map(|&([nx, ny], c)| {
            let r = nx * x + ny * y - c;
            r * r
        })
        .sum();
    Ok(VanishingPoint { point: [x, y], convergence_rms: (sum_sq / normals.len() as f64).sqrt() })
}

/// Distance from `center` to the nearest golden-section point.
pub fn golden_point_min_distance(center: [f64; 2]) -> Result<f64, FeatureError> {
    check_point(center)?;
    Ok(GOLDEN_POINTS.iter().map(|g| (center[0] - g[0]).hypot(center[1] - g[1])).fold(f64::INFINITY, f64::min))
}
