//! Gradient operators, Laplacian-of-Gaussian zero crossings and the
//! adaptive Canny detector, plus a harness that scores them against a
//! ground-truth boundary.

use std::collections::VecDeque;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::raster::{
    convolve, ensure_same_dims, gaussian_blur, mean_variance, morphology, Connectivity, Field, GrayImage, Kernel,
    Mask, MorphOp,
};

/// Pre-smoothing applied before the Canny gradient.
pub const CANNY_SMOOTHING_SIGMA: f64 = 1.4;
pub const DEFAULT_CANNY_K: f64 = 0.33;

/// Default LoG smoothing scale and zero-crossing contrast.
pub const DEFAULT_LOG_SIGMA: f64 = 2.0;
pub const DEFAULT_LOG_CONTRAST: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientOperator {
    Sobel,
    Prewitt,
    Roberts,
}

impl GradientOperator {
    pub fn kernels(self) -> (Kernel, Kernel) {
        match self {
            GradientOperator::Sobel => {
                let kx = Kernel::from_3x3([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]);
                (kx.clone(), kx.transposed())
            }
            GradientOperator::Prewitt => {
                let kx = Kernel::from_3x3([[-1.0, 0.0, 1.0], [-1.0, 0.0, 1.0], [-1.0, 0.0, 1.0]]);
                (kx.clone(), kx.transposed())
            }
            // 2x2 cross embedded at the centre of a 3x3 support
            GradientOperator::Roberts => (
                Kernel::from_3x3([[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]]),
                Kernel::from_3x3([[0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]]),
            ),
        }
    }

    /// Magnitude threshold used by the comparison harness: the operator's
    /// peak response to an ideal 40-level step.
    pub fn default_threshold(self) -> f64 {
        match self {
            GradientOperator::Sobel => 160.0,
            GradientOperator::Prewitt => 120.0,
            GradientOperator::Roberts => 40.0 * std::f64::consts::SQRT_2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GradientOperator::Sobel => "sobel",
            GradientOperator::Prewitt => "prewitt",
            GradientOperator::Roberts => "roberts",
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradientField {
    pub gx: Field,
    pub gy: Field,
    pub magnitude: Field,
    /// `atan2(gy, gx)`, radians in (-pi, pi].
    pub direction: Field,
}

pub fn gradient(img: &GrayImage, op: GradientOperator) -> GradientField {
    gradient_of(img.field(), op)
}

pub fn gradient_of(src: &Field, op: GradientOperator) -> GradientField {
    let (kx, ky) = op.kernels();
    let gx = convolve(src, &kx);
    let gy = convolve(src, &ky);
    let magnitude = Field::from_fn(src.width(), src.height(), |x, y| gx.get(x, y).hypot(gy.get(x, y)))
        .expect("same dims as source");
    let direction = Field::from_fn(src.width(), src.height(), |x, y| gy.get(x, y).atan2(gx.get(x, y)))
        .expect("same dims as source");
    GradientField { gx, gy, magnitude, direction }
}

/// Binarize a gradient magnitude at a fixed threshold.
pub fn threshold_magnitude(g: &GradientField, threshold: f64) -> Mask {
    let bits: Vec<bool> = g.magnitude.data().iter().map(|&m| m > threshold).collect();
    Mask::from_bools(g.magnitude.width(), g.magnitude.height(), &bits).expect("valid dims")
}

/// Laplacian-of-Gaussian edges: zero crossings of the smoothed Laplacian
/// whose contrast across the crossing exceeds `contrast`.
pub fn log_edges(img: &GrayImage, sigma: f64, contrast: f64) -> Result<Mask> {
    if !(sigma > 0.0) {
        return Err(Error::param(format!("LoG sigma must be > 0, got {sigma}")));
    }
    let smooth = gaussian_blur(img.field(), sigma)?;
    let lap = convolve(&smooth, &Kernel::from_3x3([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]]));
    let (w, h) = (img.width(), img.height());
    let mut out = Mask::new(w, h)?;
    for y in 0..h {
        for x in 0..w {
            let a = lap.get(x, y);
            for (nx, ny) in [(x + 1, y), (x, y + 1)] {
                if nx >= w || ny >= h {
                    continue;
                }
                let b = lap.get(nx, ny);
                if a * b < 0.0 && (a - b).abs() > contrast {
                    if a.abs() <= b.abs() {
                        out.set(x, y, true);
                    } else {
                        out.set(nx, ny, true);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CannyThresholds {
    pub t_low: f64,
    pub t_high: f64,
    /// Image mean intensity.
    pub mu: f64,
    /// Image intensity standard deviation.
    pub sigma: f64,
    pub k: f64,
}

impl CannyThresholds {
    /// `t_high = clip(mu + k*sigma, 1, 255)`, `t_low = t_high / 2`.
    pub fn from_image(img: &GrayImage, k: f64) -> Self {
        let (mu, var) = mean_variance(img);
        let sigma = var.sqrt();
        let t_high = (mu + k * sigma).clamp(1.0, 255.0);
        Self { t_low: 0.5 * t_high, t_high, mu, sigma, k }
    }
}

#[derive(Clone, Debug)]
pub struct EdgeMap {
    pub mask: Mask,
    pub thresholds: CannyThresholds,
}

/// Canny with image-adaptive hysteresis thresholds.
pub fn adaptive_canny(img: &GrayImage, k: f64) -> EdgeMap {
    let thresholds = CannyThresholds::from_image(img, k);
    let smooth = gaussian_blur(img.field(), CANNY_SMOOTHING_SIGMA).expect("fixed positive sigma");
    let grad = gradient_of(&smooth, GradientOperator::Sobel);
    let thin = non_maximum_suppression(&grad);
    let mask = hysteresis(&thin, thresholds.t_low, thresholds.t_high);
    EdgeMap { mask, thresholds }
}

/// Neighbour offset along the gradient direction quantized to 0/45/90/135 degrees.
pub(crate) fn quantized_normal(direction: f64) -> (isize, isize) {
    let mut deg = direction.to_degrees() % 180.0;
    if deg < 0.0 {
        deg += 180.0;
    }
    if !(22.5..157.5).contains(&deg) {
        (1, 0)
    } else if deg < 67.5 {
        (1, 1)
    } else if deg < 112.5 {
        (0, 1)
    } else {
        (-1, 1)
    }
}

/// Keeps pixels that are maximal along their quantized normal. Of two equal
/// neighbours only the one on the negative side survives, so plateaus thin
/// to one pixel.
pub fn non_maximum_suppression(grad: &GradientField) -> Field {
    let m = &grad.magnitude;
    let (w, h) = (m.width() as isize, m.height() as isize);
    let at = |x: isize, y: isize| if x < 0 || y < 0 || x >= w || y >= h { 0.0 } else { m.get(x as usize, y as usize) };
    Field::from_fn(m.width(), m.height(), |x, y| {
        let v = m.get(x, y);
        if v <= 0.0 {
            return 0.0;
        }
        let (dx, dy) = quantized_normal(grad.direction.get(x, y));
        let (x, y) = (x as isize, y as isize);
        let ahead = at(x + dx, y + dy);
        let behind = at(x - dx, y - dy);
        if v >= ahead && v > behind {
            v
        } else {
            0.0
        }
    })
    .expect("valid dims")
}

/// Strong pixels (>= high) seed edges; weak pixels in [low, high) join when
/// 8-connected to an edge.
pub fn hysteresis(thin: &Field, low: f64, high: f64) -> Mask {
    let (w, h) = (thin.width(), thin.height());
    let mut out = Mask::new(w, h).expect("valid dims");
    let mut queue = VecDeque::new();
    for (i, &v) in thin.data().iter().enumerate() {
        if v >= high {
            out.set_index(i, true);
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for &(dx, dy) in Connectivity::Eight.offsets() {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            if !out.get_index(j) && thin.data()[j] >= low && thin.data()[j] > 0.0 {
                out.set_index(j, true);
                queue.push_back(j);
            }
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct DetectorScore {
    pub detector: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision and recall of `pred` against `truth` where a pixel matches if
/// the other set has a pixel within Chebyshev distance `tol`. An empty
/// prediction has precision 1; an empty truth has recall 1.
pub fn boundary_precision_recall(pred: &Mask, truth: &Mask, tol: usize) -> Result<(f64, f64)> {
    ensure_same_dims(pred, truth)?;
    let size = 2 * tol + 1;
    let truth_zone = morphology(truth, MorphOp::Dilate, size)?;
    let pred_zone = morphology(pred, MorphOp::Dilate, size)?;
    let precision = ratio(pred.intersection(&truth_zone)?.count(), pred.count());
    let recall = ratio(truth.intersection(&pred_zone)?.count(), truth.count());
    Ok((precision, recall))
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Names in the order [`compare_edge_detectors`] reports them.
pub const DETECTORS: [&str; 5] = ["sobel", "prewitt", "roberts", "log", "adaptive_canny"];

/// Binary output of every detector at its default parameters.
pub fn detector_outputs(img: &GrayImage, canny_k: f64) -> Result<Vec<(&'static str, Mask)>> {
    let mut out = Vec::with_capacity(5);
    for op in [GradientOperator::Sobel, GradientOperator::Prewitt, GradientOperator::Roberts] {
        out.push((op.name(), threshold_magnitude(&gradient(img, op), op.default_threshold())));
    }
    out.push(("log", log_edges(img, DEFAULT_LOG_SIGMA, DEFAULT_LOG_CONTRAST)?));
    out.push(("adaptive_canny", adaptive_canny(img, canny_k).mask));
    Ok(out)
}

/// Boundary precision/recall/F1 (1-px tolerance) of every detector.
pub fn compare_edge_detectors(img: &GrayImage, truth: &Mask) -> Result<Vec<DetectorScore>> {
    ensure_same_dims(img, truth)?;
    detector_outputs(img, DEFAULT_CANNY_K)?
        .into_iter()
        .map(|(name, mask)| {
            let (precision, recall) = boundary_precision_recall(&mask, truth, 1)?;
            Ok(DetectorScore { detector: name.to_string(), precision, recall, f1: f1_score(precision, recall) })
        })
        .collect()
}
