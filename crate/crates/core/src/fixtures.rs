//! Synthetic rooftop scenes with exact ground truth.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::fill_polygon;
use crate::raster::{morphology, GrayImage, Mask, MorphOp};

pub const SCENE_SIZE: usize = 640;
pub const NOISE_SIGMA: f64 = 12.0;
pub const LOW_CONTRAST_GAP: f64 = 25.0;
pub const MIN_OBSTACLE_CONTRAST: f64 = 40.0;
pub const MAX_OBSTACLES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Clean,
    Noisy,
    LowContrast,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Clean, Difficulty::Noisy, Difficulty::LowContrast];
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Difficulty::Clean => "clean",
            Difficulty::Noisy => "noisy",
            Difficulty::LowContrast => "low_contrast",
        })
    }
}

impl FromStr for Difficulty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(Difficulty::Clean),
            "noisy" => Ok(Difficulty::Noisy),
            "low_contrast" | "low-contrast" => Ok(Difficulty::LowContrast),
            _ => Err(Error::param(format!("unknown difficulty `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObstacleShape {
    /// Inclusive pixel bounds.
    Rect { x0: i64, y0: i64, x1: i64, y1: i64 },
    Disc { cx: f64, cy: f64, r: f64 },
}

impl ObstacleShape {
    fn contains(&self, x: usize, y: usize) -> bool {
        let (x, y) = (x as i64, y as i64);
        match *self {
            ObstacleShape::Rect { x0, y0, x1, y1 } => x >= x0 && x <= x1 && y >= y0 && y <= y1,
            ObstacleShape::Disc { cx, cy, r } => {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                dx * dx + dy * dy <= r * r
            }
        }
    }

    /// Inclusive bounding box, unclipped.
    pub fn bounds(&self) -> (i64, i64, i64, i64) {
        match *self {
            ObstacleShape::Rect { x0, y0, x1, y1 } => (x0, y0, x1, y1),
            ObstacleShape::Disc { cx, cy, r } => {
                ((cx - r).floor() as i64, (cy - r).floor() as i64, (cx + r).ceil() as i64, (cy + r).ceil() as i64)
            }
        }
    }

    /// Covered pixels inside a `width`×`height` canvas, row-major.
    pub fn pixels(&self, width: usize, height: usize) -> Vec<(usize, usize)> {
        let (x0, y0, x1, y1) = self.bounds();
        let (x0, y0) = (x0.max(0) as usize, y0.max(0) as usize);
        let (x1, y1) = (x1.min(width as i64 - 1), y1.min(height as i64 - 1));
        if x1 < 0 || y1 < 0 {
            return Vec::new();
        }
        let mut out = Vec::new();
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                if self.contains(x, y) {
                    out.push((x, y));
                }
            }
        }
        out
    }

    pub fn rasterize(&self, width: usize, height: usize) -> Mask {
        let mut m = Mask::new(width, height).expect("non-empty canvas");
        for (x, y) in self.pixels(width, height) {
            m.set(x, y, true);
        }
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub shape: ObstacleShape,
    /// Added to the roof intensity; |offset| ≥ 40.
    pub offset: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoofScene {
    pub seed: u64,
    pub difficulty: Difficulty,
    pub roof: Vec<(i64, i64)>,
    pub obstacles: Vec<Obstacle>,
    pub roof_intensity: f64,
    pub background_intensity: f64,
    pub noise_sigma: f64,
    /// Background ramp as (gx, gy): total change across the canvas in each axis.
    pub gradient: (f64, f64),
    pub image: GrayImage,
    pub truth: Mask,
}

impl RoofScene {
    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn arity(&self) -> usize {
        self.roof.len()
    }

    /// Roof polygon fill without obstacles removed.
    pub fn roof_mask(&self) -> Mask {
        fill_polygon(&self.roof, self.width(), self.height()).expect("non-empty canvas")
    }
}

/// Scene with arity 4, 5 or 6 chosen from the seed.
pub fn generate(seed: u64, difficulty: Difficulty) -> RoofScene {
    generate_with(seed, difficulty, 4 + (seed % 3) as usize, SCENE_SIZE)
}

/// Fully specified scene. `arity` is clamped to 4..=6, `size` to at least 64.
pub fn generate_with(seed: u64, difficulty: Difficulty, arity: usize, size: usize) -> RoofScene {
    let arity = arity.clamp(4, 6);
    let size = size.max(64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;

    let background = rng.random_range(40.0..=110.0);
    let roof_intensity = match difficulty {
        Difficulty::LowContrast => background + LOW_CONTRAST_GAP,
        _ => rng.random_range(150.0..=220.0),
    };
    let gradient = (rng.random_range(-10.0..=10.0), rng.random_range(-10.0..=10.0));

    let roof = roof_polygon(&mut rng, arity, s);
    let roof_fill = fill_polygon(&roof, size, size).expect("non-empty canvas");
    let obstacles = place_obstacles(&mut rng, &roof_fill, roof_intensity, s);

    let mut obstacle_union = Mask::new(size, size).expect("non-empty canvas");
    let mut offsets = vec![0.0; size * size];
    for ob in &obstacles {
        for (x, y) in ob.shape.pixels(size, size) {
            offsets[y * size + x] = ob.offset;
            obstacle_union.set(x, y, true);
        }
    }
    let truth = roof_fill.difference(&obstacle_union).expect("same dims");

    let noise_sigma = if difficulty == Difficulty::Noisy { NOISE_SIGMA } else { 0.0 };
    let normal = Normal::new(0.0, NOISE_SIGMA).expect("positive sigma");
    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let i = y * size + x;
            let mut v = if roof_fill.get_index(i) {
                roof_intensity + offsets[i]
            } else {
                background + gradient.0 * (x as f64 / (s - 1.0) - 0.5) + gradient.1 * (y as f64 / (s - 1.0) - 0.5)
            };
            if noise_sigma > 0.0 {
                v += normal.sample(&mut rng);
            }
            data.push(v.round().clamp(0.0, 255.0));
        }
    }
    let image = GrayImage::from_vec(size, size, data).expect("sized buffer");

    RoofScene { seed, difficulty, roof, obstacles, roof_intensity, background_intensity: background, noise_sigma, gradient, image, truth }
}

/// Convex polygon: vertices on an ellipse at jittered, ordered angles.
fn roof_polygon(rng: &mut ChaCha8Rng, arity: usize, s: f64) -> Vec<(i64, i64)> {
    loop {
        let cx = s / 2.0 + rng.random_range(-0.06..=0.06) * s;
        let cy = s / 2.0 + rng.random_range(-0.06..=0.06) * s;
        let rx = rng.random_range(0.25..=0.36) * s;
        let ry = rng.random_range(0.25..=0.36) * s;
        let phase = rng.random_range(0.0..TAU);
        let step = TAU / arity as f64;
        // Clockwise on screen: angle increases with y pointing down.
        let pts: Vec<(i64, i64)> = (0..arity)
            .map(|i| {
                let a = phase + step * (i as f64 + rng.random_range(-0.2..=0.2));
                ((cx + rx * a.cos()).round() as i64, (cy + ry * a.sin()).round() as i64)
            })
            .collect();
        if is_strictly_convex(&pts) {
            return pts;
        }
    }
}

fn is_strictly_convex(pts: &[(i64, i64)]) -> bool {
    let n = pts.len();
    (0..n).all(|i| {
        let (a, b, c) = (pts[i], pts[(i + 1) % n], pts[(i + 2) % n]);
        (b.0 - a.0) * (c.1 - b.1) - (b.1 - a.1) * (c.0 - b.0) > 0
    })
}

/// Up to three disjoint obstacles kept at least 12 px inside the roof and
/// at least 8 px apart, so each one is a separate hole in the truth mask.
fn place_obstacles(rng: &mut ChaCha8Rng, roof_fill: &Mask, roof_intensity: f64, s: f64) -> Vec<Obstacle> {
    let (w, h) = (roof_fill.width(), roof_fill.height());
    let interior = morphology(roof_fill, MorphOp::Erode, 25).expect("odd size");
    let want = rng.random_range(0..=MAX_OBSTACLES);
    let mut placed: Vec<Obstacle> = Vec::new();
    let mut keep_out = vec![false; w * h];
    let mut attempts = 0;
    while placed.len() < want && attempts < 200 {
        attempts += 1;
        let cx = rng.random_range(0.0..s);
        let cy = rng.random_range(0.0..s);
        let shape = if rng.random_bool(0.5) {
            let hw = rng.random_range(0.015..=0.04) * s;
            let hh = rng.random_range(0.015..=0.04) * s;
            ObstacleShape::Rect {
                x0: (cx - hw).round() as i64,
                y0: (cy - hh).round() as i64,
                x1: (cx + hw).round() as i64,
                y1: (cy + hh).round() as i64,
            }
        } else {
            ObstacleShape::Disc { cx, cy, r: rng.random_range(0.015..=0.035) * s }
        };
        let px = shape.pixels(w, h);
        if px.is_empty() || px.iter().any(|&(x, y)| !interior.get(x, y) || keep_out[y * w + x]) {
            continue;
        }
        let magnitude = rng.random_range(45.0..=75.0);
        let lighter = rng.random_bool(0.5) && roof_intensity + magnitude <= 255.0;
        let offset = if lighter || roof_intensity - magnitude < 0.0 { magnitude } else { -magnitude };
        let (bx0, by0, bx1, by1) = shape.bounds();
        for y in (by0 - 8).max(0)..=(by1 + 8).min(h as i64 - 1) {
            for x in (bx0 - 8).max(0)..=(bx1 + 8).min(w as i64 - 1) {
                keep_out[y as usize * w + x as usize] = true;
            }
        }
        placed.push(Obstacle { shape, offset });
    }
    placed
}

/// `n` scenes, round-robin over difficulty then arity, seeds `seed0..seed0+n`.
pub fn corpus(n: usize, seed0: u64) -> Result<Vec<RoofScene>> {
    if n == 0 {
        return Err(Error::param("corpus size must be at least 1"));
    }
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let difficulty = Difficulty::ALL[i % 3];
            let arity = 4 + (i / 3) % 3;
            generate_with(seed0 + i as u64, difficulty, arity, SCENE_SIZE)
        })
        .collect())
}
