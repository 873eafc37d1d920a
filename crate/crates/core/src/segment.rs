//! Spine-segmentation geometry on abstract 2D grids: dominant-orientation
//! estimation by Hough voting, bilinear rotation, saliency-profile spine
//! splitting under non-max suppression, and the upside-down decision schema.
//! Classifier outputs (saliency values, flip probabilities) are injected as
//! data; no vision model lives here.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mat::Mat;

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("edge map has no set pixels")]
    EmptyEdgeMap,
    #[error("angle resolution must be positive, got {0}")]
    BadAngleResolution(f64),
    #[error("window probabilities must be nonempty")]
    EmptyWindowProbs,
    #[error("saliency value at ({row}, {col}) is {value}, outside [0, 1]")]
    SaliencyOutOfRange { row: usize, col: usize, value: f64 },
}

/// Per-pixel text-likelihood grid with values in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct SaliencyMap {
    grid: Mat,
}

impl SaliencyMap {
    pub fn new(grid: Mat) -> Result<Self, SegmentError> {
        for r in 0..grid.rows() {
            for (c, &v) in grid.row(r).iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(SegmentError::SaliencyOutOfRange { row: r, col: c, value: v });
                }
            }
        }
        Ok(SaliencyMap { grid })
    }

    pub fn grid(&self) -> &Mat {
        &self.grid
    }

    pub fn height(&self) -> usize {
        self.grid.rows()
    }

    pub fn width(&self) -> usize {
        self.grid.cols()
    }
}

/// Spine boundaries (column indices, strictly increasing) and the spine
/// intervals they induce; the intervals tile `[0, W]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpineSegmentation {
    pub boundaries: Vec<usize>,
    pub spines: Vec<(usize, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlipVerdict {
    Keep,
    Flip,
    Both,
}

/// Orientation decision for a text line: means above 0.7 flip, below 0.3
/// keep, anything else keeps both orientations to limit the damage of a
/// wrong call.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipDecision {
    pub verdict: FlipVerdict,
    pub mean_probability: f64,
}

/// Dominant line direction of a binary edge map, in degrees from the
/// vertical axis, range `[-90, 90)`.
///
/// Votes are accumulated over (angle, offset) bins with unit offset
/// resolution; each pixel's offset for a direction `phi` is its projection
/// on the direction's normal, `x cos(phi) - y sin(phi)`. Because the total
/// number of votes per angle is the same for every angle, the returned
/// angle maximizes the concentration of its offset histogram (sum of
/// squared bin counts); lines parallel to a direction pile their votes into
/// few bins. Ties go to the smaller angle.
pub fn hough_dominant_orientation(
    edges: &Mat,
    angle_resolution_deg: f64,
) -> Result<f64, SegmentError> {
    if angle_resolution_deg <= 0.0 {
        return Err(SegmentError::BadAngleResolution(angle_resolution_deg));
    }
    let height = edges.rows();
    let width = edges.cols();
    let mut pixels = Vec::new();
    for r in 0..height {
        for (c, &v) in edges.row(r).iter().enumerate() {
            if v != 0.0 {
                pixels.push((c as f64, r as f64));
            }
        }
    }
    if pixels.is_empty() {
        return Err(SegmentError::EmptyEdgeMap);
    }

    let n_angles = (180.0 / angle_resolution_deg).round() as usize;
    let diag = ((height * height + width * width) as f64).sqrt();
    let rho_offset = diag.ceil() as i64;
    let n_rho = 2 * rho_offset as usize + 1;

    let mut best_angle = -90.0;
    let mut best_score = -1.0f64;
    let mut bins = vec![0u32; n_rho];
    for a in 0..n_angles {
        let angle = -90.0 + a as f64 * angle_resolution_deg;
        let (sin, cos) = angle.to_radians().sin_cos();
        bins.fill(0);
        for &(x, y) in &pixels {
            let rho = x * cos - y * sin;
            let bin = (rho.round() as i64 + rho_offset) as usize;
            bins[bin] += 1;
        }
        let score: f64 = bins.iter().map(|&v| (v as f64) * (v as f64)).sum();
        if score > best_score {
            best_score = score;
            best_angle = angle;
        }
    }
    Ok(best_angle)
}

/// Rotates grid content by `angle` degrees about the center, inverse-mapped
/// with bilinear interpolation; out-of-bounds samples are 0. A source point
/// `p` maps to `c + R(angle) (p - c)` with `R` the standard rotation in
/// (x=col, y=row) coordinates.
pub fn rotate(grid: &Mat, angle_deg: f64) -> Mat {
    let height = grid.rows();
    let width = grid.cols();
    let cy = (height as f64 - 1.0) / 2.0;
    let cx = (width as f64 - 1.0) / 2.0;
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    Mat::from_fn(height, width, |r, c| {
        let dx = c as f64 - cx;
        let dy = r as f64 - cy;
        // inverse rotation of the destination coordinate
        let sx = cx + dx * cos + dy * sin;
        let sy = cy - dx * sin + dy * cos;
        bilinear(grid, sx, sy)
    })
}

fn bilinear(grid: &Mat, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let sample = |xi: f64, yi: f64| -> f64 {
        if xi < 0.0 || yi < 0.0 || xi >= grid.cols() as f64 || yi >= grid.rows() as f64 {
            0.0
        } else {
            grid.get(yi as usize, xi as usize)
        }
    };
    let v00 = sample(x0, y0);
    let v10 = sample(x0 + 1.0, y0);
    let v01 = sample(x0, y0 + 1.0);
    let v11 = sample(x0 + 1.0, y0 + 1.0);
    v00 * (1.0 - fx) * (1.0 - fy) + v10 * fx * (1.0 - fy) + v01 * (1.0 - fx) * fy + v11 * fx * fy
}

/// Splits a saliency map into spine intervals along the horizontal axis.
///
/// The column profile `g(x) = 1 - mean saliency of column x` peaks in the
/// low-saliency gaps between books. Plateaus of equal profile value are
/// collapsed to their center column, candidate peaks must exceed
/// `min_gap_score`, and greedy non-max suppression enforces a separation of
/// at least `nms_window` columns between accepted boundaries. No accepted
/// boundary means the whole width is one spine.
pub fn split_spines(
    saliency: &SaliencyMap,
    nms_window: usize,
    min_gap_score: f64,
) -> SpineSegmentation {
    let width = saliency.width();
    let height = saliency.height();
    let nms_window = nms_window.max(1);

    let profile: Vec<f64> = (0..width)
        .map(|x| {
            let sum: f64 = (0..height).map(|y| saliency.grid.get(y, x)).sum();
            1.0 - sum / height as f64
        })
        .collect();

    // collapse runs of equal value to their center, keep local-max runs
    let mut candidates: Vec<(f64, usize)> = Vec::new();
    let mut start = 0usize;
    while start < width {
        let mut end = start;
        while end + 1 < width && profile[end + 1] == profile[start] {
            end += 1;
        }
        let value = profile[start];
        let left_lower = start == 0 || profile[start - 1] < value;
        let right_lower = end + 1 == width || profile[end + 1] < value;
        if left_lower && right_lower && value > min_gap_score {
            candidates.push((value, (start + end) / 2));
        }
        start = end + 1;
    }

    // greedy NMS: score descending, then column ascending
    candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut boundaries: Vec<usize> = Vec::new();
    for (_, col) in candidates {
        if boundaries.iter().all(|&b| col.abs_diff(b) >= nms_window) {
            boundaries.push(col);
        }
    }
    boundaries.sort_unstable();

    let mut spines = Vec::with_capacity(boundaries.len() + 1);
    let mut left = 0usize;
    for &b in &boundaries {
        spines.push((left, b));
        left = b;
    }
    spines.push((left, width));
    SpineSegmentation { boundaries, spines }
}

/// Applies the 0.3/0.7 threshold schema to the mean of the sliding-window
/// upside-down probabilities. Both thresholds are strict; boundary means
/// fall into `Both`.
pub fn decide_flip(window_probs: &[f64]) -> Result<FlipDecision, SegmentError> {
    if window_probs.is_empty() {
        return Err(SegmentError::EmptyWindowProbs);
    }
    let mean = window_probs.iter().sum::<f64>() / window_probs.len() as f64;
    let verdict = if mean > 0.7 {
        FlipVerdict::Flip
    } else if mean < 0.3 {
        FlipVerdict::Keep
    } else {
        FlipVerdict::Both
    };
    Ok(FlipDecision { verdict, mean_probability: mean })
}
