use std::collections::VecDeque;

use super::{Field, Mask};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MorphOp {
    Erode,
    Dilate,
    /// Erode then dilate.
    Open,
    /// Dilate then erode.
    Close,
}

/// Binary morphology with a `size`x`size` square structuring element.
pub fn morphology(mask: &Mask, op: MorphOp, size: usize) -> Result<Mask> {
    if size == 0 || size % 2 == 0 {
        return Err(Error::param(format!("structuring element size must be odd, got {size}")));
    }
    let r = size / 2;
    Ok(match op {
        MorphOp::Erode => rank_filter(mask, r, true),
        MorphOp::Dilate => rank_filter(mask, r, false),
        MorphOp::Open => rank_filter(&rank_filter(mask, r, true), r, false),
        MorphOp::Close => rank_filter(&rank_filter(mask, r, false), r, true),
    })
}

/// Separable min (erode) / max (dilate) over a square window, border replicated.
fn rank_filter(mask: &Mask, r: usize, erode: bool) -> Mask {
    if r == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width, mask.height);
    let bits: Vec<bool> = mask.data.iter().map(|&v| v != 0).collect();
    let mut tmp = vec![false; w * h];
    for y in 0..h {
        window_pass(&bits[y * w..(y + 1) * w], &mut tmp[y * w..(y + 1) * w], r, erode);
    }
    let mut out = vec![0u8; w * h];
    let (mut col, mut res) = (vec![false; h], vec![false; h]);
    for x in 0..w {
        for y in 0..h {
            col[y] = tmp[y * w + x];
        }
        window_pass(&col, &mut res, r, erode);
        for y in 0..h {
            out[y * w + x] = if res[y] { 255 } else { 0 };
        }
    }
    Mask { width: w, height: h, data: out }
}

/// 1-D window of radius `r` over a replicated-border line using a running count.
fn window_pass(src: &[bool], dst: &mut [bool], r: usize, erode: bool) {
    let n = src.len() as isize;
    let r = r as isize;
    let at = |i: isize| src[i.clamp(0, n - 1) as usize] as usize;
    let full = (2 * r + 1) as usize;
    let mut count: usize = (-r..=r).map(at).sum();
    for i in 0..n {
        dst[i as usize] = if erode { count == full } else { count > 0 };
        count = count + at(i + r + 1) - at(i - r);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DistanceMetric {
    /// Two-pass 3-4 chamfer, max relative error about 6%.
    #[default]
    Chamfer34,
    /// Exact Euclidean (separable lower-envelope algorithm).
    Exact,
}

/// Distance of every pixel to the nearest 0-pixel of `mask`. Outside the
/// image is not treated as background; a mask without any 0-pixel yields
/// `f64::INFINITY` everywhere.
pub fn distance_transform(mask: &Mask, metric: DistanceMetric) -> Field {
    match metric {
        DistanceMetric::Chamfer34 => chamfer34(mask),
        DistanceMetric::Exact => exact_edt(mask),
    }
}

fn chamfer34(mask: &Mask) -> Field {
    let (w, h) = (mask.width as isize, mask.height as isize);
    let inf = f64::INFINITY;
    let mut d: Vec<f64> = mask.data.iter().map(|&v| if v == 0 { 0.0 } else { inf }).collect();
    let idx = |x: isize, y: isize| (y * w + x) as usize;
    let fwd = [(-1, 0, 3.0), (-1, -1, 4.0), (0, -1, 3.0), (1, -1, 4.0)];
    for y in 0..h {
        for x in 0..w {
            let mut best = d[idx(x, y)];
            for &(dx, dy, c) in &fwd {
                let (nx, ny) = (x + dx, y + dy);
                if nx >= 0 && nx < w && ny >= 0 {
                    best = best.min(d[idx(nx, ny)] + c);
                }
            }
            d[idx(x, y)] = best;
        }
    }
    for y in (0..h).rev() {
        for x in (0..w).rev() {
            let mut best = d[idx(x, y)];
            for &(dx, dy, c) in &fwd {
                let (nx, ny) = (x - dx, y - dy);
                if nx >= 0 && nx < w && ny < h {
                    best = best.min(d[idx(nx, ny)] + c);
                }
            }
            d[idx(x, y)] = best;
        }
    }
    d.iter_mut().for_each(|v| *v /= 3.0);
    Field { width: mask.width, height: mask.height, data: d }
}

/// 1-D squared distance transform of a sampled function (lower envelope of
/// parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let parabola_cut = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    for q in 1..n {
        let mut s = parabola_cut(q, v[k]);
        // z[0] is -inf, so this stops at k == 0
        while s <= z[k] {
            k -= 1;
            s = parabola_cut(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *o = dq * dq + f[p];
    }
}

fn exact_edt(mask: &Mask) -> Field {
    let (w, h) = (mask.width, mask.height);
    if mask.data.iter().all(|&v| v != 0) {
        return Field { width: w, height: h, data: vec![f64::INFINITY; w * h] };
    }
    const BIG: f64 = 1e20;
    let n = w.max(h);
    let mut f = vec![0.0; n];
    let mut o = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    let mut sq: Vec<f64> = mask.data.iter().map(|&m| if m == 0 { 0.0 } else { BIG }).collect();
    for x in 0..w {
        for y in 0..h {
            f[y] = sq[y * w + x];
        }
        edt_1d(&f[..h], &mut o[..h], &mut v, &mut z);
        for y in 0..h {
            sq[y * w + x] = o[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&sq[y * w..(y + 1) * w]);
        edt_1d(&f[..w], &mut o[..w], &mut v, &mut z);
        sq[y * w..(y + 1) * w].copy_from_slice(&o[..w]);
    }
    Field { width: w, height: h, data: sq.into_iter().map(f64::sqrt).collect() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    pub(crate) fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
            Connectivity::Eight => &[(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)],
        }
    }
}

/// Label foreground components in raster order of their first pixel.
/// Returns per-pixel labels (0 = background, 1..=n) and `n`.
pub fn connected_components(mask: &Mask, conn: Connectivity) -> (Vec<u32>, usize) {
    let (w, h) = (mask.width as isize, mask.height as isize);
    let mut labels = vec![0u32; mask.data.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..mask.data.len() {
        if mask.data[start] == 0 || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            let (px, py) = ((p as isize) % w, (p as isize) / w);
            for &(dx, dy) in conn.offsets() {
                let (nx, ny) = (px + dx, py + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                let q = (ny * w + nx) as usize;
                if mask.data[q] != 0 && labels[q] == 0 {
                    labels[q] = next;
                    queue.push_back(q);
                }
            }
        }
    }
    (labels, next as usize)
}

impl Mask {
    /// Keep only the largest 8-connected component (ties: first in raster order).
    pub fn largest_component(&self) -> Mask {
        let (labels, n) = connected_components(self, Connectivity::Eight);
        if n <= 1 {
            return self.clone();
        }
        let mut sizes = vec![0usize; n + 1];
        for &l in &labels {
            sizes[l as usize] += 1;
        }
        let best = (1..=n).fold(1, |b, l| if sizes[l] > sizes[b] { l } else { b }) as u32;
        let data = labels.iter().map(|&l| if l == best { 255 } else { 0 }).collect();
        Mask { width: self.width, height: self.height, data }
    }

    /// Fill background regions that do not reach the image border (4-connected).
    pub fn fill_holes(&self) -> Mask {
        let outside = self.inverted();
        let (labels, n) = connected_components(&outside, Connectivity::Four);
        let mut touches = vec![false; n + 1];
        let (w, h) = (self.width, self.height);
        for y in 0..h {
            for x in 0..w {
                if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                    touches[labels[y * w + x] as usize] = true;
                }
            }
        }
        let data = labels
            .iter()
            .zip(&self.data)
            .map(|(&l, &m)| if m != 0 || (l != 0 && !touches[l as usize]) { 255 } else { 0 })
            .collect();
        Mask { width: w, height: h, data }
    }

    /// Number of 4-connected background regions fully enclosed by foreground.
    pub fn hole_count(&self) -> usize {
        let outside = self.inverted();
        let (labels, n) = connected_components(&outside, Connectivity::Four);
        let mut touches = vec![false; n + 1];
        let (w, h) = (self.width, self.height);
        for y in 0..h {
            for x in 0..w {
                if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                    touches[labels[y * w + x] as usize] = true;
                }
            }
        }
        (1..=n).filter(|&l| !touches[l]).count()
    }
}
