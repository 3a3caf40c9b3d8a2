//! Contours, Hough lines, line clustering, polygon filling and the final
//! roof mask.
//!
//! Coordinates are `(x, y)` with `y` growing downwards. Contours run
//! clockwise as displayed, which makes the raw shoelace sum
//! `sum(x_i * y_{i+1} - x_{i+1} * y_i)` non-negative.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::edges::adaptive_canny;
use crate::error::{Error, Result};
use crate::raster::{
    bilateral_filter, connected_components, morphology, otsu_binarize, Connectivity, GrayImage, Mask, MorphOp,
};

pub const DEFAULT_MIN_AREA: usize = 100;
pub const DEFAULT_MIN_POINTS: usize = 12;

/// Closed pixel contour. `area` is the number of lattice points inside or on
/// the polygon through the points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    points: Vec<(i64, i64)>,
    area: usize,
}

impl Contour {
    pub fn new(points: Vec<(i64, i64)>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::Degenerate(format!("contour needs at least 3 points, got {}", points.len())));
        }
        let area = polygon_lattice_count(&points);
        Ok(Contour { points, area })
    }

    pub fn points(&self) -> &[(i64, i64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn area(&self) -> usize {
        self.area
    }

    /// Twice the shoelace sum in image coordinates; `>= 0` for clockwise.
    pub fn signed_area2(&self) -> i64 {
        shoelace2(&self.points)
    }

    pub fn is_collinear(&self) -> bool {
        let p0 = self.points[0];
        let Some(&p1) = self.points.iter().find(|&&p| p != p0) else {
            return true;
        };
        self.points.iter().all(|&q| cross(p0, p1, q) == 0)
    }

    pub fn bounds(&self) -> (i64, i64, i64, i64) {
        let xs = self.points.iter().map(|p| p.0);
        let ys = self.points.iter().map(|p| p.1);
        (xs.clone().min().unwrap(), ys.clone().min().unwrap(), xs.max().unwrap(), ys.max().unwrap())
    }
}

fn shoelace2(pts: &[(i64, i64)]) -> i64 {
    (0..pts.len())
        .map(|i| {
            let (a, b) = (pts[i], pts[(i + 1) % pts.len()]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum()
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Calls `visit` once for every lattice point inside or on the polygon
/// (even-odd interior), restricted to the bounding box.
fn for_each_lattice_point(pts: &[(i64, i64)], mut visit: impl FnMut(i64, i64)) {
    if pts.is_empty() {
        return;
    }
    let x0 = pts.iter().map(|p| p.0).min().unwrap();
    let x1 = pts.iter().map(|p| p.0).max().unwrap();
    let y0 = pts.iter().map(|p| p.1).min().unwrap();
    let y1 = pts.iter().map(|p| p.1).max().unwrap();
    let bw = (x1 - x0 + 1) as usize;
    let bh = (y1 - y0 + 1) as usize;
    let mut hit = vec![false; bw * bh];
    let n = pts.len();
    let mut xs: Vec<(i64, i64)> = Vec::new();
    for y in y0..=y1 {
        xs.clear();
        for i in 0..n {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            if a.1 == b.1 || y < a.1.min(b.1) || y >= a.1.max(b.1) {
                continue;
            }
            // x = a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y) as num / den, den > 0
            let (mut num, mut den) = (a.0 * (b.1 - a.1) + (y - a.1) * (b.0 - a.0), b.1 - a.1);
            if den < 0 {
                num = -num;
                den = -den;
            }
            xs.push((num, den));
        }
        xs.sort_by(|p, q| (p.0 as i128 * q.1 as i128).cmp(&(q.0 as i128 * p.1 as i128)));
        for pair in xs.chunks_exact(2) {
            let lo = -(-pair[0].0).div_euclid(pair[0].1);
            let hi = pair[1].0.div_euclid(pair[1].1);
            for x in lo..=hi {
                hit[(y - y0) as usize * bw + (x - x0) as usize] = true;
            }
        }
    }
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let g = gcd(dx, dy).max(1);
        for s in 0..=g {
            let (x, y) = (a.0 + s * dx / g, a.1 + s * dy / g);
            hit[(y - y0) as usize * bw + (x - x0) as usize] = true;
        }
    }
    for (i, &h) in hit.iter().enumerate() {
        if h {
            visit(x0 + (i % bw) as i64, y0 + (i / bw) as i64);
        }
    }
}

fn polygon_lattice_count(pts: &[(i64, i64)]) -> usize {
    let mut n = 0;
    for_each_lattice_point(pts, |_, _| n += 1);
    n
}

/// Scanline fill of a polygon, clipped to a `width x height` mask.
pub fn fill_polygon(points: &[(i64, i64)], width: usize, height: usize) -> Result<Mask> {
    let mut m = Mask::new(width, height)?;
    for_each_lattice_point(points, |x, y| {
        if x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height {
            m.set(x as usize, y as usize, true);
        }
    });
    Ok(m)
}

/// Contour interior plus a one-pixel ring of surrounding pixels.
pub fn pixel_fill(contour: &Contour, width: usize, height: usize) -> Result<Mask> {
    if contour.len() < 3 || contour.is_collinear() {
        return Err(Error::Degenerate("contour encloses no area".into()));
    }
    morphology(&fill_polygon(contour.points(), width, height)?, MorphOp::Dilate, 3)
}

// Clockwise as displayed, starting west.
const MOORE: [(i64, i64); 8] = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)];

fn moore_index(d: (i64, i64)) -> usize {
    MOORE.iter().position(|&m| m == d).expect("unit offset")
}

fn trace_component(labels: &[u32], w: usize, h: usize, label: u32, start: (i64, i64)) -> Vec<(i64, i64)> {
    let inside = |p: (i64, i64)| {
        p.0 >= 0 && p.1 >= 0 && (p.0 as usize) < w && (p.1 as usize) < h && labels[p.1 as usize * w + p.0 as usize] == label
    };
    let mut out = vec![start];
    let mut cur = start;
    let mut back = 0usize; // the west neighbour of the first pixel is background
    let mut first_move: Option<((i64, i64), (i64, i64))> = None;
    // generous bound: each boundary pixel is entered at most 4 times
    for _ in 0..(8 * w * h + 8) {
        let mut next = None;
        for i in 1..=8 {
            let d = (back + i) % 8;
            let cand = (cur.0 + MOORE[d].0, cur.1 + MOORE[d].1);
            if inside(cand) {
                let prev = (back + i - 1) % 8;
                let pp = (cur.0 + MOORE[prev].0, cur.1 + MOORE[prev].1);
                next = Some((cand, moore_index((pp.0 - cand.0, pp.1 - cand.1))));
                break;
            }
        }
        let Some((n, nb)) = next else {
            return out;
        };
        match first_move {
            None => first_move = Some((cur, n)),
            Some(fm) if fm == (cur, n) => {
                out.pop();
                return out;
            }
            _ => {}
        }
        out.push(n);
        cur = n;
        back = nb;
    }
    out
}

/// Outer boundaries of 8-connected foreground components, in raster order
/// of their first pixel, keeping those with `area >= min_area` and at least
/// `min_points` boundary points.
pub fn trace_contours(mask: &Mask, min_area: usize, min_points: usize) -> Vec<Contour> {
    let (w, h) = (mask.width(), mask.height());
    let (labels, n) = connected_components(mask, Connectivity::Eight);
    let mut starts = vec![None; n + 1];
    for (i, &l) in labels.iter().enumerate() {
        if l != 0 && starts[l as usize].is_none() {
            starts[l as usize] = Some(((i % w) as i64, (i / w) as i64));
        }
    }
    starts
        .par_iter()
        .enumerate()
        .skip(1)
        .filter_map(|(l, s)| {
            let pts = trace_component(&labels, w, h, l as u32, s.expect("every label has a pixel"));
            if pts.len() < min_points.max(3) {
                return None;
            }
            Contour::new(pts).ok().filter(|c| c.area() >= min_area)
        })
        .collect()
}

/// A line `rho = x cos(theta) + y sin(theta)` with `theta` in `[0, pi)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoughLine {
    pub rho: f64,
    pub theta: f64,
    pub votes: u32,
}

impl HoughLine {
    pub fn theta_degrees(&self) -> f64 {
        self.theta.to_degrees()
    }

    /// Signed offset of a point from the line.
    pub fn side(&self, x: f64, y: f64) -> f64 {
        x * self.theta.cos() + y * self.theta.sin() - self.rho
    }
}

/// Vote accumulator with 1 px rho bins and 1 degree theta bins.
#[derive(Clone, Debug, PartialEq)]
pub struct HoughAccumulator {
    /// Rho bin `r` holds `rho = r - offset`.
    pub offset: i64,
    pub n_rho: usize,
    pub n_theta: usize,
    /// `votes[t * n_rho + r]`
    pub votes: Vec<u32>,
}

impl HoughAccumulator {
    pub fn at(&self, t: usize, r: usize) -> u32 {
        self.votes[t * self.n_rho + r]
    }
}

pub const HOUGH_THETA_BINS: usize = 180;

pub(crate) fn rho_bin(rho: f64, offset: i64) -> usize {
    ((rho + 0.5).floor() as i64 + offset) as usize
}

pub fn hough_accumulator(edges: &Mask) -> HoughAccumulator {
    let (w, h) = (edges.width(), edges.height());
    let offset = ((w as f64).hypot(h as f64)).ceil() as i64 + 1;
    let n_rho = 2 * offset as usize + 1;
    let pixels: Vec<(f64, f64)> = (0..w * h)
        .filter(|&i| edges.get_index(i))
        .map(|i| ((i % w) as f64, (i / w) as f64))
        .collect();
    let mut votes = vec![0u32; HOUGH_THETA_BINS * n_rho];
    votes.par_chunks_mut(n_rho).enumerate().for_each(|(t, row)| {
        let (s, c) = (t as f64 * PI / HOUGH_THETA_BINS as f64).sin_cos();
        for &(x, y) in &pixels {
            row[rho_bin(x * c + y * s, offset)] += 1;
        }
    });
    HoughAccumulator { offset, n_rho, n_theta: HOUGH_THETA_BINS, votes }
}

/// Local maxima of the accumulator with at least `votes_min` votes, sorted
/// by votes descending. The theta axis wraps (theta = pi is theta = 0 with
/// rho negated).
pub fn hough_lines(edges: &Mask, votes_min: u32) -> Vec<HoughLine> {
    let acc = hough_accumulator(edges);
    hough_peaks(&acc, votes_min)
}

pub fn hough_peaks(acc: &HoughAccumulator, votes_min: u32) -> Vec<HoughLine> {
    let (nt, nr) = (acc.n_theta as i64, acc.n_rho as i64);
    let neighbour = |t: i64, r: i64| -> Option<(usize, u32)> {
        let (t, r) = if t < 0 {
            (t + nt, nr - 1 - r)
        } else if t >= nt {
            (t - nt, nr - 1 - r)
        } else {
            (t, r)
        };
        (0..nr).contains(&r).then(|| {
            let idx = (t * nr + r) as usize;
            (idx, acc.votes[idx])
        })
    };
    let mut out: Vec<HoughLine> = (0..nt)
        .into_par_iter()
        .flat_map_iter(|t| {
            let neighbour = &neighbour;
            (0..nr).filter_map(move |r| {
                let idx = (t * nr + r) as usize;
                let v = acc.votes[idx];
                if v == 0 || v < votes_min {
                    return None;
                }
                for dt in -1..=1 {
                    for dr in -1..=1 {
                        if (dt, dr) == (0, 0) {
                            continue;
                        }
                        if let Some((j, u)) = neighbour(t + dt, r + dr) {
                            // plateaus: the first cell in index order wins
                            if u > v || (u == v && j < idx) {
                                return None;
                            }
                        }
                    }
                }
                Some(HoughLine {
                    rho: (r - acc.offset) as f64,
                    theta: t as f64 * PI / nt as f64,
                    votes: v,
                })
            })
        })
        .collect();
    out.sort_by(|a, b| {
        b.votes.cmp(&a.votes).then(a.theta.total_cmp(&b.theta)).then(a.rho.total_cmp(&b.rho))
    });
    out
}

/// Result of [`cluster_lines`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineClusters {
    pub lines: Vec<HoughLine>,
    /// Cluster index of each input line.
    pub assignment: Vec<usize>,
    /// Set when fewer input lines than requested clusters were available.
    pub reduced_k: bool,
}

pub(crate) fn line_feature(l: &HoughLine, rho_max: f64) -> [f64; 3] {
    [l.rho / rho_max, (2.0 * l.theta).cos(), (2.0 * l.theta).sin()]
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

const SEED_SEPARATION2: f64 = 0.01;

/// Vote-weighted K-means in the `(rho / rho_max, cos 2theta, sin 2theta)`
/// embedding. Seeds are the highest-vote lines, skipping any line within
/// 0.1 (embedding distance) of an earlier seed while enough remain.
pub fn cluster_lines(lines: &[HoughLine], k: usize) -> Result<LineClusters> {
    if k == 0 {
        return Err(Error::param("cluster count must be at least 1"));
    }
    if lines.is_empty() {
        return Ok(LineClusters { lines: vec![], assignment: vec![], reduced_k: true });
    }
    let reduced_k = lines.len() < k;
    let k = k.min(lines.len());
    let rho_max = lines.iter().map(|l| l.rho.abs()).fold(1.0, f64::max);
    let feats: Vec<[f64; 3]> = lines.iter().map(|l| line_feature(l, rho_max)).collect();
    let weight = |l: &HoughLine| if l.votes == 0 { 1.0 } else { l.votes as f64 };

    let mut order: Vec<usize> = (0..lines.len()).collect();
    order.sort_by(|&a, &b| lines[b].votes.cmp(&lines[a].votes).then(a.cmp(&b)));
    // seeds in vote order, passing over near-duplicates of earlier seeds
    let mut seeds: Vec<usize> = Vec::with_capacity(k);
    for &i in &order {
        if seeds.len() < k && seeds.iter().all(|&s| dist2(&feats[s], &feats[i]) >= SEED_SEPARATION2) {
            seeds.push(i);
        }
    }
    for &i in &order {
        if seeds.len() < k && !seeds.contains(&i) {
            seeds.push(i);
        }
    }
    let mut centroids: Vec<[f64; 3]> = seeds.iter().map(|&i| feats[i]).collect();
    let mut assignment = vec![usize::MAX; lines.len()];

    for _ in 0..100 {
        let next: Vec<usize> = feats
            .iter()
            .map(|f| {
                (0..k).fold(0, |best, c| if dist2(f, &centroids[c]) < dist2(f, &centroids[best]) { c } else { best })
            })
            .collect();
        if next == assignment {
            break;
        }
        assignment = next;
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let mut acc = [0.0; 3];
            let mut wsum = 0.0;
            for (i, f) in feats.iter().enumerate() {
                if assignment[i] == c {
                    let w = weight(&lines[i]);
                    (0..3).for_each(|d| acc[d] += w * f[d]);
                    wsum += w;
                }
            }
            if wsum > 0.0 {
                *centroid = acc.map(|v| v / wsum);
            }
        }
    }

    let out = (0..k)
        .map(|c| {
            let members: Vec<usize> = (0..lines.len()).filter(|&i| assignment[i] == c).collect();
            if members.len() == 1 {
                return lines[members[0]];
            }
            let [r, cc, ss] = centroids[c];
            let mut theta = 0.5 * ss.atan2(cc);
            if theta < 0.0 {
                theta += PI;
            }
            if theta >= PI {
                theta -= PI;
            }
            HoughLine { rho: r * rho_max, theta, votes: members.iter().map(|&i| lines[i].votes).sum() }
        })
        .collect();
    Ok(LineClusters { lines: out, assignment, reduced_k })
}

/// Partition of the image into the cells cut out by a set of lines.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionGrid {
    pub width: usize,
    pub height: usize,
    /// Cell id per pixel, numbered in raster order of first appearance.
    pub cells: Vec<u32>,
    pub means: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Cells are the classes of pixels sharing the same side of every line (a
/// pixel exactly on a line goes with the non-positive side).
pub fn region_grid(img: &GrayImage, lines: &[HoughLine]) -> Result<RegionGrid> {
    if lines.len() > 64 {
        return Err(Error::param("at most 64 lines are supported"));
    }
    let (w, h) = (img.width(), img.height());
    let mut ids = std::collections::HashMap::new();
    let mut cells = Vec::with_capacity(w * h);
    let mut sums: Vec<f64> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let key = lines.iter().enumerate().fold(0u64, |acc, (i, l)| {
                if l.side(x as f64, y as f64) > 0.0 {
                    acc | (1 << i)
                } else {
                    acc
                }
            });
            let next = ids.len() as u32;
            let id = *ids.entry(key).or_insert(next);
            if id as usize == sums.len() {
                sums.push(0.0);
                counts.push(0);
            }
            sums[id as usize] += img.get(x, y);
            counts[id as usize] += 1;
            cells.push(id);
        }
    }
    let means = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    Ok(RegionGrid { width: w, height: h, cells, means, counts })
}

/// Cells whose mean intensity exceeds `t` become foreground.
pub fn region_fill(img: &GrayImage, lines: &[HoughLine], t: f64) -> Result<Mask> {
    if lines.len() < 2 {
        return Err(Error::param(format!("region fill needs at least 2 lines, got {}", lines.len())));
    }
    let grid = region_grid(img, lines)?;
    let bits: Vec<bool> = grid.cells.iter().map(|&c| grid.means[c as usize] > t).collect();
    Mask::from_bools(grid.width, grid.height, &bits)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoofMaskParams {
    pub bilateral_sigma_spatial: f64,
    pub bilateral_sigma_range: f64,
    pub bilateral_radius: usize,
    pub canny_k: f64,
    pub min_area: usize,
    pub min_points: usize,
    /// Obstacle fills larger than this fraction of the roof are rejected.
    pub obstacle_max_fraction: f64,
}

impl Default for RoofMaskParams {
    fn default() -> Self {
        Self {
            bilateral_sigma_spatial: 3.0,
            bilateral_sigma_range: 30.0,
            bilateral_radius: 3,
            canny_k: crate::edges::DEFAULT_CANNY_K,
            min_area: DEFAULT_MIN_AREA,
            min_points: DEFAULT_MIN_POINTS,
            obstacle_max_fraction: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoofSegmentation {
    pub mask: Mask,
    pub boundary: Contour,
    pub obstacles: Vec<Contour>,
}

pub fn roof_mask(img: &GrayImage) -> Result<Mask> {
    roof_segmentation(img, &RoofMaskParams::default()).map(|s| s.mask)
}

/// Roof boundary from thresholded contours minus obstacles found as closed
/// Canny contours inside it, then closed and reduced to one component.
pub fn roof_segmentation(img: &GrayImage, p: &RoofMaskParams) -> Result<RoofSegmentation> {
    let (w, h) = (img.width(), img.height());
    let smooth = bilateral_filter(img, p.bilateral_sigma_spatial, p.bilateral_sigma_range, p.bilateral_radius)?;

    let binary = morphology(&otsu_binarize(&smooth), MorphOp::Open, 3)?;
    if binary.count() == w * h {
        return Err(Error::NoRoofFound("threshold left no background".into()));
    }
    let boundary = trace_contours(&binary, p.min_area, p.min_points)
        .into_iter()
        .filter(|c| !c.is_collinear())
        .fold(None::<Contour>, |best, c| match best {
            Some(b) if b.area() >= c.area() => Some(b),
            _ => Some(c),
        })
        .ok_or_else(|| Error::NoRoofFound("no contour passed the area and point thresholds".into()))?;
    let roof = pixel_fill(&boundary, w, h)?;
    let roof_area = roof.count();

    let edges = adaptive_canny(&smooth, p.canny_k);
    let mut obstacles = Vec::new();
    let mut blocked = Mask::new(w, h)?;
    for c in trace_contours(&edges.mask, p.min_area, p.min_points) {
        let Ok(fill) = pixel_fill(&c, w, h) else { continue };
        let n = fill.count();
        let inside = fill.intersection(&roof)?.count();
        if n as f64 <= p.obstacle_max_fraction * roof_area as f64 && inside as f64 >= 0.9 * n as f64 {
            blocked = blocked.union(&fill)?;
            obstacles.push(c);
        }
    }

    let usable = morphology(&roof.difference(&blocked)?, MorphOp::Close, 3)?.largest_component();
    if usable.is_blank() {
        return Err(Error::NoRoofFound("usable area is empty after obstacle removal".into()));
    }
    Ok(RoofSegmentation { mask: usable, boundary, obstacles })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn on_segment(a: (i64, i64), b: (i64, i64), p: (i64, i64)) -> bool {
        cross(a, b, p) == 0
            && p.0 >= a.0.min(b.0)
            && p.0 <= a.0.max(b.0)
            && p.1 >= a.1.min(b.1)
            && p.1 <= a.1.max(b.1)
    }

    // Independent route: crossing-number test on every lattice point.
    fn brute_inside(pts: &[(i64, i64)], p: (i64, i64)) -> bool {
        let n = pts.len();
        if (0..n).any(|i| on_segment(pts[i], pts[(i + 1) % n], p)) {
            return true;
        }
        let mut inside = false;
        for i in 0..n {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            if (a.1 > p.1) != (b.1 > p.1) {
                // x of the crossing compared to p.x without division
                let lhs = (p.0 - a.0) as i128 * (b.1 - a.1) as i128;
                let rhs = (p.1 - a.1) as i128 * (b.0 - a.0) as i128;
                let right_of = if b.1 > a.1 { lhs < rhs } else { lhs > rhs };
                if right_of {
                    inside = !inside;
                }
            }
        }
        inside
    }

    fn brute_fill(pts: &[(i64, i64)], w: usize, h: usize) -> Mask {
        Mask::from_fn(w, h, |x, y| brute_inside(pts, (x as i64, y as i64))).unwrap()
    }

    fn square_mask(w: usize, h: usize, x0: usize, y0: usize, side: usize) -> Mask {
        Mask::from_fn(w, h, |x, y| x >= x0 && x < x0 + side && y >= y0 && y < y0 + side).unwrap()
    }

    #[test]
    fn square_contour() {
        let cs = trace_contours(&square_mask(20, 20, 5, 5, 10), DEFAULT_MIN_AREA, DEFAULT_MIN_POINTS);
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].len(), 36);
        assert_eq!(cs[0].area(), 100);
        assert!(cs[0].signed_area2() > 0);
        assert_eq!(cs[0].points()[0], (5, 5));
        assert_eq!(cs[0].points()[1], (6, 5));
    }

    #[test]
    fn contour_thresholds() {
        assert!(trace_contours(&Mask::new(10, 10).unwrap(), 0, 0).is_empty());
        assert!(trace_contours(&square_mask(20, 20, 2, 2, 8), 100, 12).is_empty());
        assert_eq!(trace_contours(&square_mask(20, 20, 2, 2, 8), 64, 12).len(), 1);
    }

    #[test]
    fn contour_of_irregular_blob_traces_its_boundary() {
        let m = Mask::from_fn(30, 30, |x, y| {
            let (dx, dy) = (x as f64 - 14.0, y as f64 - 15.0);
            dx * dx + dy * dy < 100.0 && !(x > 14 && y > 12 && y < 18)
        })
        .unwrap();
        let cs = trace_contours(&m, 0, 0);
        assert_eq!(cs.len(), 1);
        let boundary = m.inner_boundary();
        let traced = Mask::from_fn(30, 30, |x, y| cs[0].points().contains(&(x as i64, y as i64))).unwrap();
        assert!(traced.is_subset_of(&boundary));
        assert!(cs[0].signed_area2() > 0);
        assert_eq!(cs[0].area(), m.fill_holes().count());
    }

    #[test]
    fn fill_examples() {
        let square = Contour::new(vec![(5, 5), (14, 5), (14, 14), (5, 14)]).unwrap();
        assert_eq!(square.area(), 100);
        let f = pixel_fill(&square, 30, 30).unwrap();
        assert!((100..=144).contains(&f.count()));
        assert_eq!(f.count(), 144);

        let tri = [(0, 0), (10, 0), (0, 10)];
        assert_eq!(polygon_lattice_count(&tri), 66);
        assert_eq!(fill_polygon(&tri, 20, 20).unwrap(), brute_fill(&tri, 20, 20));

        let line = Contour::new(vec![(0, 0), (3, 3), (6, 6)]).unwrap();
        assert!(pixel_fill(&line, 10, 10).is_err());
        assert!(Contour::new(vec![(0, 0), (1, 1)]).is_err());
    }

    fn random_convex(rng: &mut ChaCha8Rng, size: i64) -> Vec<(i64, i64)> {
        let n = rng.random_range(3..9);
        let pts: Vec<(i64, i64)> = (0..n).map(|_| (rng.random_range(0..size), rng.random_range(0..size))).collect();
        let mut pts = pts;
        pts.sort();
        pts.dedup();
        // monotone chain hull
        let mut hull: Vec<(i64, i64)> = Vec::new();
        for pass in 0..2 {
            let start = hull.len();
            let iter: Box<dyn Iterator<Item = &(i64, i64)>> =
                if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
            for &p in iter {
                while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
                    hull.pop();
                }
                hull.push(p);
            }
            hull.pop();
        }
        hull
    }

    #[test]
    fn fill_matches_point_in_polygon_on_convex_fixtures() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut checked = 0;
        while checked < 300 {
            let hull = random_convex(&mut rng, 32);
            if hull.len() < 3 {
                continue;
            }
            assert_eq!(fill_polygon(&hull, 32, 32).unwrap(), brute_fill(&hull, 32, 32), "{hull:?}");
            let mut rev = hull.clone();
            rev.reverse();
            assert_eq!(fill_polygon(&rev, 32, 32).unwrap(), brute_fill(&hull, 32, 32));
            checked += 1;
        }
    }

    proptest! {
        #[test]
        fn fill_matches_oracle_on_arbitrary_polygons(pts in prop::collection::vec((0i64..24, 0i64..24), 3..8)) {
            prop_assert_eq!(fill_polygon(&pts, 24, 24).unwrap(), brute_fill(&pts, 24, 24));
        }

        #[test]
        fn traced_contours_are_clockwise_and_inside_their_fill(
            bits in prop::collection::vec(any::<bool>(), 16 * 16)
        ) {
            let m = Mask::from_bools(16, 16, &bits).unwrap();
            for c in trace_contours(&m, 0, 3) {
                prop_assert!(c.signed_area2() >= 0);
                if !c.is_collinear() {
                    let f = pixel_fill(&c, 16, 16).unwrap();
                    for &(x, y) in c.points() {
                        prop_assert!(f.get(x as usize, y as usize));
                    }
                }
            }
        }
    }

    fn brute_accumulator(edges: &Mask) -> HoughAccumulator {
        let (w, h) = (edges.width(), edges.height());
        let offset = ((w as f64).hypot(h as f64)).ceil() as i64 + 1;
        let n_rho = 2 * offset as usize + 1;
        let mut votes = vec![0u32; 180 * n_rho];
        for y in 0..h {
            for x in 0..w {
                if !edges.get(x, y) {
                    continue;
                }
                for t in 0..180 {
                    let th = (t as f64).to_radians();
                    let rho = (x as f64 * th.cos() + y as f64 * th.sin() + 0.5).floor();
                    votes[t * n_rho + (rho as i64 + offset) as usize] += 1;
                }
            }
        }
        HoughAccumulator { offset, n_rho, n_theta: 180, votes }
    }

    #[test]
    fn accumulator_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let (w, h) = (rng.random_range(1..=32), rng.random_range(1..=32));
            let bits: Vec<bool> = (0..w * h).map(|_| rng.random_bool(0.2)).collect();
            let m = Mask::from_bools(w, h, &bits).unwrap();
            assert_eq!(hough_accumulator(&m), brute_accumulator(&m));
        }
    }

    #[test]
    fn hough_examples() {
        let row = Mask::from_fn(60, 40, |_, y| y == 20).unwrap();
        let lines = hough_lines(&row, 10);
        assert!((lines[0].rho - 20.0).abs() <= 1.0);
        assert!((lines[0].theta_degrees() - 90.0).abs() <= 1.0);
        assert_eq!(lines[0].votes, 60);
        assert!(hough_lines(&Mask::new(20, 20).unwrap(), 1).is_empty());

        let rect = Mask::from_fn(64, 64, |x, y| {
            ((8..=55).contains(&x) && (y == 10 || y == 49)) || ((10..=49).contains(&y) && (x == 8 || x == 55))
        })
        .unwrap();
        let top: Vec<(i64, i64)> = hough_lines(&rect, 20)
            .iter()
            .take(4)
            .map(|l| (l.theta_degrees().round() as i64, l.rho.round() as i64))
            .collect();
        for want in [(0, 8), (0, 55), (90, 10), (90, 49)] {
            assert!(
                top.iter().any(|&(t, r)| t == want.0 && (r - want.1).abs() <= 1),
                "missing {want:?} in {top:?}"
            );
        }
    }

    fn line(rho: f64, deg: f64, votes: u32) -> HoughLine {
        HoughLine { rho, theta: deg.to_radians(), votes }
    }

    #[test]
    fn clustering_examples() {
        let four = vec![line(10.0, 0.0, 50), line(50.0, 0.0, 40), line(12.0, 90.0, 30), line(40.0, 90.0, 20)];
        let c = cluster_lines(&four, 4).unwrap();
        assert_eq!(c.lines, four);
        assert!(!c.reduced_k);

        let c = cluster_lines(&four[..3], 4).unwrap();
        assert!(c.reduced_k);
        assert_eq!(c.lines.len(), 3);

        let wrap = vec![line(30.0, 1.0, 10), line(30.0, 179.0, 10), line(-5.0, 90.0, 10)];
        let c = cluster_lines(&wrap, 2).unwrap();
        assert_eq!(c.assignment[0], c.assignment[1]);
        assert_ne!(c.assignment[0], c.assignment[2]);
        assert!(cluster_lines(&wrap, 0).is_err());
    }

    fn partition_cost(feats: &[[f64; 3]], weights: &[f64], assign: &[usize], k: usize) -> f64 {
        (0..k)
            .map(|c| {
                let idx: Vec<usize> = (0..feats.len()).filter(|&i| assign[i] == c).collect();
                let wsum: f64 = idx.iter().map(|&i| weights[i]).sum();
                if wsum == 0.0 {
                    return 0.0;
                }
                let mut m = [0.0; 3];
                for &i in &idx {
                    (0..3).for_each(|d| m[d] += weights[i] * feats[i][d] / wsum);
                }
                idx.iter().map(|&i| weights[i] * dist2(&feats[i], &m)).sum::<f64>()
            })
            .sum()
    }

    #[test]
    fn tight_pairs_match_exhaustive_four_means() {
        let lines = vec![
            line(10.0, 0.0, 40),
            line(11.0, 1.0, 35),
            line(60.0, 2.0, 38),
            line(61.0, 0.0, 30),
            line(15.0, 90.0, 36),
            line(16.0, 89.0, 33),
            line(70.0, 91.0, 31),
            line(69.0, 90.0, 29),
        ];
        let got = cluster_lines(&lines, 4).unwrap();
        let rho_max = 70.0;
        let feats: Vec<[f64; 3]> = lines.iter().map(|l| line_feature(l, rho_max)).collect();
        let weights: Vec<f64> = lines.iter().map(|l| l.votes as f64).collect();
        let mut best = (f64::INFINITY, vec![]);
        for code in 0..4usize.pow(8) {
            let assign: Vec<usize> = (0..8).map(|i| (code / 4usize.pow(i)) % 4).collect();
            let cost = partition_cost(&feats, &weights, &assign, 4);
            if cost < best.0 - 1e-12 {
                best = (cost, assign);
            }
        }
        let same = |a: &[usize], i: usize, j: usize| a[i] == a[j];
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(same(&got.assignment, i, j), same(&best.1, i, j));
            }
        }
        for (pair, c) in [(0, 1), (2, 3), (4, 5), (6, 7)].iter().map(|&(a, b)| ((a, b), got.assignment[a])) {
            let l = got.lines[c];
            let (a, b) = (lines[pair.0], lines[pair.1]);
            assert!(l.rho >= a.rho.min(b.rho) - 1e-9 && l.rho <= a.rho.max(b.rho) + 1e-9);
            assert!(l.theta >= a.theta.min(b.theta) - 1e-9 && l.theta <= a.theta.max(b.theta) + 1e-9);
        }
    }

    proptest! {
        #[test]
        fn kmeans_partition_property(
            raw in prop::collection::vec((-80.0f64..80.0, 0.0f64..180.0, 1u32..100), 1..20),
            k in 1usize..7,
        ) {
            let lines: Vec<HoughLine> = raw.iter().map(|&(r, t, v)| line(r, t % 180.0, v)).collect();
            let c = cluster_lines(&lines, k).unwrap();
            prop_assert_eq!(c.lines.len(), k.min(lines.len()));
            let rho_max = lines.iter().map(|l| l.rho.abs()).fold(1.0, f64::max);
            // recompute centroids from the final partition
            let feats: Vec<[f64; 3]> = lines.iter().map(|l| line_feature(l, rho_max)).collect();
            let n = c.lines.len();
            let mut cents = vec![[0.0; 3]; n];
            let mut ws = vec![0.0; n];
            for (i, f) in feats.iter().enumerate() {
                let w = lines[i].votes as f64;
                (0..3).for_each(|d| cents[c.assignment[i]][d] += w * f[d]);
                ws[c.assignment[i]] += w;
            }
            for j in 0..n {
                if ws[j] > 0.0 {
                    cents[j] = cents[j].map(|v| v / ws[j]);
                }
            }
            for (i, f) in feats.iter().enumerate() {
                let own = dist2(f, &cents[c.assignment[i]]);
                for (j, cent) in cents.iter().enumerate() {
                    if ws[j] > 0.0 {
                        prop_assert!(own <= dist2(f, cent) + 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn region_fill_examples() {
        let img = GrayImage::from_fn(80, 60, |x, y| {
            if (20..60).contains(&x) && (15..45).contains(&y) { 200.0 } else { 50.0 }
        })
        .unwrap();
        let lines = vec![line(19.5, 0.0, 1), line(59.5, 0.0, 1), line(14.5, 90.0, 1), line(44.5, 90.0, 1)];
        let t = crate::raster::otsu_threshold(&img) as f64;
        let m = region_fill(&img, &lines, t).unwrap();
        let truth = Mask::from_fn(80, 60, |x, y| (20..60).contains(&x) && (15..45).contains(&y)).unwrap();
        assert_eq!(m, truth);
        assert!(region_fill(&img, &lines, 255.0).unwrap().is_blank());
        assert_eq!(region_fill(&img, &lines, -1.0).unwrap().count(), 80 * 60);
        assert!(region_fill(&img, &lines[..1], 0.0).is_err());

        let grid = region_grid(&img, &lines).unwrap();
        assert_eq!(grid.counts.iter().sum::<usize>(), 80 * 60);
        assert_eq!(grid.means.len(), 9);
    }

    proptest! {
        #[test]
        fn region_fill_is_monotone_in_threshold(t1 in 0.0f64..255.0, t2 in 0.0f64..255.0, seed in 0u64..50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = GrayImage::from_vec(24, 24, (0..576).map(|_| rng.random_range(0.0..255.0)).collect()).unwrap();
            let lines = vec![line(8.0, 10.0, 1), line(15.0, 95.0, 1), line(3.0, 45.0, 1)];
            let (lo, hi) = (t1.min(t2), t1.max(t2));
            let a = region_fill(&img, &lines, lo).unwrap();
            let b = region_fill(&img, &lines, hi).unwrap();
            prop_assert!(b.is_subset_of(&a));
        }
    }

    fn scene(obstacle: bool) -> (GrayImage, Mask, Mask) {
        let roof = Mask::from_fn(160, 160, |x, y| (30..130).contains(&x) && (40..120).contains(&y)).unwrap();
        let obs = Mask::from_fn(160, 160, |x, y| obstacle && (60..80).contains(&x) && (60..80).contains(&y)).unwrap();
        let img = GrayImage::from_fn(160, 160, |x, y| {
            if obs.get(x, y) {
                90.0
            } else if roof.get(x, y) {
                190.0
            } else {
                70.0
            }
        })
        .unwrap();
        (img, roof, obs)
    }

    #[test]
    fn roof_mask_on_plain_rectangle() {
        let (img, roof, _) = scene(false);
        let m = roof_mask(&img).unwrap();
        assert!(m.iou(&roof).unwrap() >= 0.9);
    }

    #[test]
    fn roof_mask_excludes_obstacle() {
        let (img, roof, obs) = scene(true);
        let seg = roof_segmentation(&img, &RoofMaskParams::default()).unwrap();
        let overlap = seg.mask.intersection(&obs).unwrap().count();
        assert!(overlap as f64 <= 0.05 * obs.count() as f64, "overlap {overlap}");
        assert!(seg.mask.iou(&roof.difference(&obs).unwrap()).unwrap() >= 0.85);
        let (_, n) = connected_components(&seg.mask, Connectivity::Eight);
        assert_eq!(n, 1);
    }

    #[test]
    fn roof_mask_rejects_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let img = GrayImage::from_vec(200, 200, (0..40_000).map(|_| rng.random_range(0.0..255.0)).collect()).unwrap();
        assert!(matches!(roof_mask(&img), Err(Error::NoRoofFound(_))));
    }
}
