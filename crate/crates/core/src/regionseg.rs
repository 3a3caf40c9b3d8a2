//! Region evolution: marker-based watershed and gradient-vector-flow snakes.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::edges::{adaptive_canny, gradient_of, GradientOperator, DEFAULT_CANNY_K};
use crate::error::{Error, Result};
use crate::geometry::Contour;
use crate::raster::{
    bilateral_filter, connected_components, distance_transform, gaussian_blur, morphology, otsu_binarize,
    Connectivity, DistanceMetric, Field, GrayImage, Mask, MorphOp,
};

pub const LABEL_LINE: u32 = 0;
pub const LABEL_BACKGROUND: u32 = 1;

/// Per-pixel labels: 0 watershed line or unknown, 1 background, 2.. objects.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
}

impl LabelMap {
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Distinct object labels (>= 2) in ascending order.
    pub fn object_labels(&self) -> Vec<u32> {
        let mut ls: Vec<u32> = self.labels.iter().copied().filter(|&l| l >= 2).collect();
        ls.sort_unstable();
        ls.dedup();
        ls
    }

    pub fn object_count(&self) -> usize {
        self.object_labels().len()
    }

    pub fn region(&self, label: u32) -> Mask {
        Mask::from_fn(self.width, self.height, |x, y| self.get(x, y) == label).expect("valid dims")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WatershedParams {
    /// Sure foreground is `distance > fg_fraction * max distance`.
    pub fg_fraction: f64,
    pub smoothing_sigma: f64,
}

impl Default for WatershedParams {
    fn default() -> Self {
        Self { fg_fraction: 0.5, smoothing_sigma: 1.0 }
    }
}

pub fn watershed_segment(img: &GrayImage) -> Result<LabelMap> {
    watershed_segment_with(img, &WatershedParams::default())
}

/// Markers from Otsu + opening + distance transform, then priority flooding
/// over the gradient magnitude of the smoothed image.
pub fn watershed_segment_with(img: &GrayImage, p: &WatershedParams) -> Result<LabelMap> {
    if !(p.fg_fraction >= 0.0 && p.fg_fraction < 1.0) {
        return Err(Error::param("foreground fraction must lie in [0, 1)"));
    }
    let (w, h) = (img.width(), img.height());
    let fg = morphology(&otsu_binarize(img), MorphOp::Open, 3)?;
    let mut sure_bg = fg.clone();
    for _ in 0..3 {
        sure_bg = morphology(&sure_bg, MorphOp::Dilate, 3)?;
    }
    let dist = distance_transform(&fg, DistanceMetric::Exact);
    let dmax = dist.max();
    // an image Otsu cannot split (every pixel above the threshold) has no markers
    let sure_fg = if dmax.is_infinite() {
        Mask::new(w, h)?
    } else {
        Mask::from_fn(w, h, |x, y| dmax > 0.0 && dist.get(x, y) > p.fg_fraction * dmax)?
    };

    let mut labels = vec![LABEL_LINE; w * h];
    let (markers, _) = connected_components(&sure_fg, Connectivity::Four);
    for i in 0..w * h {
        if markers[i] != 0 {
            labels[i] = markers[i] + 1;
        } else if !sure_bg.get_index(i) {
            labels[i] = LABEL_BACKGROUND;
        }
    }

    let smooth = gaussian_blur(img.field(), p.smoothing_sigma)?;
    let grad = gradient_of(&smooth, GradientOperator::Sobel).magnitude;
    flood(&mut labels, &grad, w, h);
    Ok(LabelMap { width: w, height: h, labels })
}

const N4: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

/// Meyer flooding. Unlabelled pixels are taken in ascending priority with
/// FIFO order among equal priorities; a pixel touching two different labels
/// becomes a line pixel.
fn flood(labels: &mut [u32], priority: &Field, w: usize, h: usize) {
    let mut queued = vec![false; w * h];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let neighbours = |i: usize| {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        N4.iter().filter_map(move |&(dx, dy)| {
            let (nx, ny) = (x + dx, y + dy);
            (nx >= 0 && ny >= 0 && nx < w as isize && ny < h as isize).then(|| ny as usize * w + nx as usize)
        })
    };
    let mut push = |heap: &mut BinaryHeap<_>, queued: &mut [bool], j: usize| {
        queued[j] = true;
        // priorities are non-negative, so the bit pattern orders like the value
        heap.push(Reverse((priority.data()[j].max(0.0).to_bits(), seq, j)));
        seq += 1;
    };
    for i in 0..w * h {
        if labels[i] != LABEL_LINE {
            queued[i] = true;
        }
    }
    for i in 0..w * h {
        if labels[i] != LABEL_LINE {
            for j in neighbours(i) {
                if !queued[j] {
                    push(&mut heap, &mut queued, j);
                }
            }
        }
    }
    while let Some(Reverse((_, _, i))) = heap.pop() {
        let mut found = LABEL_LINE;
        let mut conflict = false;
        for j in neighbours(i) {
            let l = labels[j];
            if l == LABEL_LINE {
                continue;
            }
            if found == LABEL_LINE {
                found = l;
            } else if found != l {
                conflict = true;
            }
        }
        if conflict || found == LABEL_LINE {
            continue;
        }
        labels[i] = found;
        for j in neighbours(i) {
            if !queued[j] {
                push(&mut heap, &mut queued, j);
            }
        }
    }
}

pub const DEFAULT_GVF_MU: f64 = 0.2;
pub const DEFAULT_GVF_ITERS: usize = 200;

/// Gradient vector flow of an edge map.
#[derive(Clone, Debug, PartialEq)]
pub struct GvfField {
    pub u: Field,
    pub v: Field,
    pub mu: f64,
    pub iterations_run: usize,
}

/// The edge map scaled to `[0, 1]` by its maximum (unchanged when all zero).
pub fn normalize_edge_map(f: &Field) -> Field {
    let m = f.max();
    if m > 0.0 {
        f.map(|v| v / m)
    } else {
        f.clone()
    }
}

/// Central-difference gradient with replicated borders.
pub fn edge_gradient(f: &Field) -> (Field, Field) {
    let (w, h) = (f.width(), f.height());
    let fx = Field::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        0.5 * (f.get_clamped(x + 1, y) - f.get_clamped(x - 1, y))
    })
    .expect("valid dims");
    let fy = Field::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        0.5 * (f.get_clamped(x, y + 1) - f.get_clamped(x, y - 1))
    })
    .expect("valid dims");
    (fx, fy)
}

fn laplacian_at(u: &Field, x: usize, y: usize) -> f64 {
    let (xi, yi) = (x as isize, y as isize);
    u.get_clamped(xi + 1, yi) + u.get_clamped(xi - 1, yi) + u.get_clamped(xi, yi + 1) + u.get_clamped(xi, yi - 1)
        - 4.0 * u.get(x, y)
}

/// One explicit step (dt = 1) of
/// `u_t = mu lap(u) - (u - fx)(fx^2 + fy^2)`, likewise for `v` with `fy`.
pub fn gvf_step(u: &Field, v: &Field, fx: &Field, fy: &Field, mu: f64) -> (Field, Field) {
    let (w, h) = (u.width(), u.height());
    let step = |cur: &Field, target: &Field| {
        let mut out = vec![0.0; w * h];
        out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            for (x, o) in row.iter_mut().enumerate() {
                let (gx, gy) = (fx.get(x, y), fy.get(x, y));
                let c = cur.get(x, y);
                *o = c + mu * laplacian_at(cur, x, y) - (c - target.get(x, y)) * (gx * gx + gy * gy);
            }
        });
        Field::from_vec(w, h, out).expect("valid dims")
    };
    (step(u, fx), step(v, fy))
}

/// Iterate GVF from `u = fx, v = fy` on the max-normalized edge map.
pub fn compute_gvf(edge_map: &Field, mu: f64, iters: usize) -> Result<GvfField> {
    if !(mu > 0.0) {
        return Err(Error::param(format!("GVF mu must be > 0, got {mu}")));
    }
    if mu > 0.25 {
        return Err(Error::Stability(format!("GVF mu = {mu} exceeds 0.25 (explicit step with dt = 1)")));
    }
    let f = normalize_edge_map(edge_map);
    let (fx, fy) = edge_gradient(&f);
    let (mut u, mut v) = (fx.clone(), fy.clone());
    for _ in 0..iters {
        (u, v) = gvf_step(&u, &v, &fx, &fy, mu);
    }
    Ok(GvfField { u, v, mu, iterations_run: iters })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snake {
    pub points: Vec<(f64, f64)>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_BETA: f64 = 0.05;
pub const DEFAULT_GAMMA: f64 = 1.0;
pub const RESAMPLE_EVERY: usize = 20;

impl Snake {
    pub fn new(points: Vec<(f64, f64)>, alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        if points.len() < 8 {
            return Err(Error::param(format!("snake needs at least 8 points, got {}", points.len())));
        }
        if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return Err(Error::param("snake points must be finite"));
        }
        Ok(Snake { points, alpha, beta, gamma })
    }

    pub fn circle(cx: f64, cy: f64, r: f64, n: usize) -> Result<Self> {
        let pts = (0..n)
            .map(|i| {
                let t = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                (cx + r * t.cos(), cy + r * t.sin())
            })
            .collect();
        Snake::new(pts, DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_GAMMA)
    }

    /// `n` points spaced evenly along the rectangle outline, clockwise.
    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64, n: usize) -> Result<Self> {
        let corners = vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)];
        Snake::new(resample_closed(&corners, n), DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_GAMMA)
    }

    pub fn with_weights(mut self, alpha: f64, beta: f64, gamma: f64) -> Self {
        self.alpha = alpha;
        self.beta = beta;
        self.gamma = gamma;
        self
    }

    pub fn perimeter(&self) -> f64 {
        perimeter(&self.points)
    }
}

fn perimeter(pts: &[(f64, f64)]) -> f64 {
    (0..pts.len())
        .map(|i| {
            let (a, b) = (pts[i], pts[(i + 1) % pts.len()]);
            (b.0 - a.0).hypot(b.1 - a.1)
        })
        .sum()
}

/// `n` points at uniform arc length along the closed polyline, starting at
/// its first vertex.
pub fn resample_closed(pts: &[(f64, f64)], n: usize) -> Vec<(f64, f64)> {
    let total = perimeter(pts);
    if total <= 1e-12 {
        return vec![pts[0]; n];
    }
    let step = total / n as f64;
    let mut out = Vec::with_capacity(n);
    let (mut seg, mut seg_start) = (0usize, 0.0f64);
    for i in 0..n {
        let target = i as f64 * step;
        loop {
            let (a, b) = (pts[seg], pts[(seg + 1) % pts.len()]);
            let len = (b.0 - a.0).hypot(b.1 - a.1);
            if target <= seg_start + len || seg + 1 == pts.len() {
                let t = if len > 0.0 { ((target - seg_start) / len).clamp(0.0, 1.0) } else { 0.0 };
                out.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
                break;
            }
            seg_start += len;
            seg += 1;
        }
    }
    out
}

/// `(I + gamma (alpha A + beta B))^-1` for the circulant second- and
/// fourth-difference matrices.
fn internal_inverse(n: usize, alpha: f64, beta: f64, gamma: f64) -> Result<DMatrix<f64>> {
    if !(gamma > 0.0) || !(alpha >= 0.0) || !(beta >= 0.0) || !(alpha + beta).is_finite() {
        return Err(Error::param(format!(
            "snake weights must satisfy gamma > 0, alpha >= 0, beta >= 0 (got {alpha}, {beta}, {gamma})"
        )));
    }
    let a = [2.0, -1.0, 0.0];
    let b = [6.0, -4.0, 1.0];
    let m = DMatrix::from_fn(n, n, |i, j| {
        let d = (i as isize - j as isize).rem_euclid(n as isize) as usize;
        let d = d.min(n - d);
        let (ad, bd) = (a.get(d).copied().unwrap_or(0.0), b.get(d).copied().unwrap_or(0.0));
        let id = if i == j { 1.0 } else { 0.0 };
        id + gamma * (alpha * ad + beta * bd)
    });
    m.try_inverse()
        .filter(|inv| inv.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::param("snake internal-energy system is singular"))
}

/// External force used by the snake: the GVF direction, normalized per
/// pixel (zero where the field vanishes).
pub fn snake_force(field: &GvfField) -> (Field, Field) {
    let (w, h) = (field.u.width(), field.u.height());
    let mut un = field.u.clone();
    let mut vn = field.v.clone();
    for i in 0..w * h {
        let (a, b) = (field.u.data()[i], field.v.data()[i]);
        let m = a.hypot(b);
        let (x, y) = if m > 1e-9 { (a / m, b / m) } else { (0.0, 0.0) };
        un.data_mut()[i] = x;
        vn.data_mut()[i] = y;
    }
    (un, vn)
}

/// Semi-implicit snake evolution; `observe` sees the points after every
/// iteration (after resampling on resampling iterations).
pub fn evolve_snake_with(
    init: &Snake,
    field: &GvfField,
    iters: usize,
    mut observe: impl FnMut(usize, &[(f64, f64)]),
) -> Result<Snake> {
    let n = init.points.len();
    if n < 8 {
        return Err(Error::param("snake needs at least 8 points"));
    }
    let inv = internal_inverse(n, init.alpha, init.beta, init.gamma)?;
    let (fu, fv) = snake_force(field);
    let (xmax, ymax) = ((fu.width() - 1) as f64, (fu.height() - 1) as f64);
    let mut xs = nalgebra::DVector::from_iterator(n, init.points.iter().map(|p| p.0));
    let mut ys = nalgebra::DVector::from_iterator(n, init.points.iter().map(|p| p.1));
    for it in 1..=iters {
        let bx = nalgebra::DVector::from_fn(n, |i, _| xs[i] + init.gamma * fu.sample_bilinear(xs[i], ys[i]));
        let by = nalgebra::DVector::from_fn(n, |i, _| ys[i] + init.gamma * fv.sample_bilinear(xs[i], ys[i]));
        xs = &inv * bx;
        ys = &inv * by;
        xs.iter_mut().for_each(|v| *v = v.clamp(0.0, xmax));
        ys.iter_mut().for_each(|v| *v = v.clamp(0.0, ymax));
        let mut pts: Vec<(f64, f64)> = xs.iter().zip(ys.iter()).map(|(&x, &y)| (x, y)).collect();
        if it % RESAMPLE_EVERY == 0 {
            pts = resample_closed(&pts, n);
            for (i, p) in pts.iter().enumerate() {
                xs[i] = p.0;
                ys[i] = p.1;
            }
        }
        observe(it, &pts);
    }
    let pts = xs.iter().zip(ys.iter()).map(|(&x, &y)| (x, y)).collect();
    Ok(Snake { points: pts, ..init.clone() })
}

pub fn evolve_snake_points(init: &Snake, field: &GvfField, iters: usize) -> Result<Snake> {
    evolve_snake_with(init, field, iters, |_, _| {})
}

/// Evolve and rasterize to an integer contour.
pub fn evolve_snake(init: &Snake, field: &GvfField, iters: usize) -> Result<Contour> {
    rasterize_snake(&evolve_snake_points(init, field, iters)?)
}

fn bresenham(a: (i64, i64), b: (i64, i64), out: &mut Vec<(i64, i64)>) {
    let (dx, dy) = ((b.0 - a.0).abs(), -(b.1 - a.1).abs());
    let (sx, sy) = (if a.0 < b.0 { 1 } else { -1 }, if a.1 < b.1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (a.0, a.1, dx + dy);
    loop {
        out.push((x, y));
        if (x, y) == b {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Round the points, join them with 8-connected segments and orient the
/// result clockwise as displayed.
pub fn rasterize_snake(s: &Snake) -> Result<Contour> {
    let ip: Vec<(i64, i64)> = s.points.iter().map(|p| (p.0.round() as i64, p.1.round() as i64)).collect();
    let mut chain = Vec::new();
    for i in 0..ip.len() {
        bresenham(ip[i], ip[(i + 1) % ip.len()], &mut chain);
        chain.pop();
    }
    chain.dedup();
    while chain.len() > 1 && chain.first() == chain.last() {
        chain.pop();
    }
    let c = Contour::new(chain.clone())?;
    if c.signed_area2() < 0 {
        chain.reverse();
        return Contour::new(chain);
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnakeParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub points: usize,
    pub iters: usize,
    pub gvf_mu: f64,
    pub gvf_iters: usize,
    pub canny_k: f64,
    /// Blur applied to the binary edge map before GVF.
    pub edge_sigma: f64,
    /// Enclosed area below this fraction of the image means no roof.
    pub min_area_fraction: f64,
}

impl Default for SnakeParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            gamma: DEFAULT_GAMMA,
            points: 24,
            iters: 400,
            gvf_mu: DEFAULT_GVF_MU,
            gvf_iters: DEFAULT_GVF_ITERS,
            canny_k: DEFAULT_CANNY_K,
            edge_sigma: 2.0,
            min_area_fraction: 0.01,
        }
    }
}

pub fn snake_roof_segment(img: &GrayImage) -> Result<Contour> {
    snake_roof_segment_with(img, &SnakeParams::default())
}

/// Bilateral smoothing, adaptive Canny, blurred edge map, GVF, then a snake
/// started from a rectangle at 90% of the image bounds.
pub fn snake_roof_segment_with(img: &GrayImage, p: &SnakeParams) -> Result<Contour> {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let smooth = bilateral_filter(img, 3.0, 30.0, 3)?;
    let edges = adaptive_canny(&smooth, p.canny_k);
    let edge_map = gaussian_blur(edges.mask.to_gray().field(), p.edge_sigma)?;
    let gvf = compute_gvf(&edge_map, p.gvf_mu, p.gvf_iters)?;
    let init = Snake::rectangle(0.05 * (w - 1.0), 0.05 * (h - 1.0), 0.95 * (w - 1.0), 0.95 * (h - 1.0), p.points)?
        .with_weights(p.alpha, p.beta, p.gamma);
    let contour = match evolve_snake(&init, &gvf, p.iters) {
        Ok(c) => c,
        Err(Error::Degenerate(_)) => return Err(Error::NoRoofFound("snake collapsed".into())),
        Err(e) => return Err(e),
    };
    let enclosed = if contour.is_collinear() { 0 } else { contour.area() };
    if (enclosed as f64) < p.min_area_fraction * w * h {
        return Err(Error::NoRoofFound(format!("snake collapsed to {enclosed} px")));
    }
    Ok(contour)
}
