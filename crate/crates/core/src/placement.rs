//! Panel placement on the usable roof mask.
//!
//! A patch is a rigid row of cells. Its footprint is the set of pixels whose
//! centres fall inside the patch rectangle after rotating it
//! counter-clockwise (as displayed) about its anchor corner.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Mask;

/// Web-Mercator equatorial ground resolution at zoom 0 (m/px).
pub const EQUATOR_MPP_Z0: f64 = 2.0 * std::f64::consts::PI * 6_378_137.0 / 256.0;

pub fn ground_resolution(lat: f64, zoom: u32) -> Result<f64> {
    if !(lat.abs() < 85.05) {
        return Err(Error::param(format!("latitude {lat} outside (-85.05, 85.05)")));
    }
    if zoom > 22 {
        return Err(Error::param(format!("zoom {zoom} outside [0, 22]")));
    }
    Ok(EQUATOR_MPP_Z0 * lat.to_radians().cos() / 2f64.powi(zoom as i32))
}

/// Patch of `cells_x` cells along the patch rows by `cells_y` across; "5x1"
/// is five cells side by side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchShape {
    pub cells_x: usize,
    pub cells_y: usize,
}

impl PatchShape {
    pub const fn new(cells_x: usize, cells_y: usize) -> Self {
        Self { cells_x, cells_y }
    }

    pub fn cells(&self) -> usize {
        self.cells_x * self.cells_y
    }
}

impl std::fmt::Display for PatchShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.cells_x, self.cells_y)
    }
}

impl std::str::FromStr for PatchShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| Error::param(format!("bad patch shape `{s}`")))?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| Error::param(format!("bad patch shape `{s}`")));
        let shape = PatchShape::new(parse(a)?, parse(b)?);
        if shape.cells() == 0 {
            return Err(Error::param(format!("patch shape `{s}` has no cells")));
        }
        Ok(shape)
    }
}

pub const DEFAULT_SHAPES: [PatchShape; 3] = [PatchShape::new(5, 1), PatchShape::new(4, 1), PatchShape::new(3, 1)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelSpec {
    pub cell_width_m: f64,
    pub cell_height_m: f64,
    /// Sorted by cell count, largest first.
    pub patch_shapes: Vec<PatchShape>,
    pub rated_watts: f64,
}

impl Default for PanelSpec {
    fn default() -> Self {
        Self { cell_width_m: 1.65, cell_height_m: 0.99, patch_shapes: DEFAULT_SHAPES.to_vec(), rated_watts: 330.0 }
    }
}

impl PanelSpec {
    /// Validates dimensions and sorts the shapes largest first (stable).
    pub fn new(cell_width_m: f64, cell_height_m: f64, mut patch_shapes: Vec<PatchShape>, rated_watts: f64) -> Result<Self> {
        patch_shapes.sort_by_key(|s| std::cmp::Reverse(s.cells()));
        let spec = Self { cell_width_m, cell_height_m, patch_shapes, rated_watts };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_width_m > 0.0 && self.cell_height_m > 0.0) || !self.cell_width_m.is_finite() || !self.cell_height_m.is_finite() {
            return Err(Error::param("panel cell dimensions must be positive"));
        }
        if !(self.rated_watts >= 0.0) {
            return Err(Error::param("rated watts must be non-negative"));
        }
        if self.patch_shapes.is_empty() || self.patch_shapes.iter().any(|s| s.cells() == 0) {
            return Err(Error::param("at least one non-empty patch shape is required"));
        }
        if self.patch_shapes.windows(2).any(|p| p[0].cells() < p[1].cells()) {
            return Err(Error::param("patch shapes must be sorted by cell count, largest first"));
        }
        Ok(())
    }
}

/// Cell size in pixels plus the unrounded values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellPixels {
    pub w_px: usize,
    pub h_px: usize,
    pub w_real: f64,
    pub h_real: f64,
}

pub fn panel_footprint_px(spec: &PanelSpec, mpp: f64) -> Result<CellPixels> {
    if !(mpp > 0.0) || !mpp.is_finite() {
        return Err(Error::param(format!("metres per pixel must be > 0, got {mpp}")));
    }
    let (w_real, h_real) = (spec.cell_width_m / mpp, spec.cell_height_m / mpp);
    let px = |v: f64| if v.is_finite() { (v.round() as usize).max(1) } else { usize::MAX };
    Ok(CellPixels { w_px: px(w_real), h_px: px(h_real), w_real, h_real })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Orientation {
    pub angle_deg: f64,
    /// "south" or "north".
    pub facing: String,
    pub tilt_deg: f64,
}

/// Rows run east-west on north-up tiles (angle 0) unless overridden; the
/// panels face the equator with tilt |lat|.
pub fn orientation_angle(lat: f64, azimuth_override: Option<f64>) -> Result<Orientation> {
    if !(lat.abs() <= 90.0) {
        return Err(Error::param(format!("latitude {lat} outside [-90, 90]")));
    }
    let facing = if lat < 0.0 { "north" } else { "south" };
    Ok(Orientation { angle_deg: azimuth_override.unwrap_or(0.0), facing: facing.into(), tilt_deg: lat.abs() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacedPatch {
    /// Pixel of the patch origin corner before rotation.
    pub anchor: (i64, i64),
    pub shape: PatchShape,
    pub angle_deg: f64,
    /// Covered pixels `(x, y)` in raster order.
    #[serde(skip)]
    pub footprint: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelLayout {
    pub width: usize,
    pub height: usize,
    pub cell: CellPixels,
    pub angle_deg: f64,
    pub gap_px: usize,
    pub patches: Vec<PlacedPatch>,
    pub total_cells: usize,
    pub covered_px: usize,
    pub usable_px: usize,
}

impl PanelLayout {
    pub fn coverage_ratio(&self) -> f64 {
        if self.usable_px == 0 {
            0.0
        } else {
            self.covered_px as f64 / self.usable_px as f64
        }
    }

    pub fn covered_m2(&self, mpp: f64) -> f64 {
        self.covered_px as f64 * mpp * mpp
    }

    pub fn usable_m2(&self, mpp: f64) -> f64 {
        self.usable_px as f64 * mpp * mpp
    }

    /// Union of all footprints.
    pub fn coverage_mask(&self) -> Mask {
        let mut m = Mask::new(self.width.max(1), self.height.max(1)).expect("non-zero dims");
        for p in &self.patches {
            for &(x, y) in &p.footprint {
                m.set(x, y, true);
            }
        }
        m
    }

    /// Recompute every footprint from anchor, shape and angle.
    pub fn recompute_footprints(&mut self) {
        for p in &mut self.patches {
            let offs = footprint_offsets(p.shape, &self.cell, p.angle_deg);
            p.footprint = offs
                .iter()
                .map(|&(dx, dy)| ((p.anchor.0 + dx) as usize, (p.anchor.1 + dy) as usize))
                .collect();
            p.footprint.sort_by_key(|&(x, y)| (y, x));
        }
    }
}

fn rotation(angle_deg: f64) -> (f64, f64) {
    let a = angle_deg.rem_euclid(360.0);
    // exact values at right angles keep pixel-centre tests on the boundary stable
    match a {
        0.0 => (1.0, 0.0),
        90.0 => (0.0, 1.0),
        180.0 => (-1.0, 0.0),
        270.0 => (0.0, -1.0),
        _ => {
            let (s, c) = a.to_radians().sin_cos();
            (c, s)
        }
    }
}

/// Footprint offsets relative to the anchor pixel. The patch occupies local
/// `[0, W) x [0, H)` from the anchor pixel's top-left corner; local x maps to
/// `(cos a, -sin a)` and local y to `(sin a, cos a)` in image coordinates.
pub fn footprint_offsets(shape: PatchShape, cell: &CellPixels, angle_deg: f64) -> Vec<(i64, i64)> {
    let (wl, hl) = ((shape.cells_x * cell.w_px) as f64, (shape.cells_y * cell.h_px) as f64);
    let (c, s) = rotation(angle_deg);
    let corners = [(0.0, 0.0), (wl, 0.0), (0.0, hl), (wl, hl)];
    let to_img = |(u, v): (f64, f64)| (u * c + v * s - 0.5, -u * s + v * c - 0.5);
    let img_corners: Vec<(f64, f64)> = corners.iter().map(|&p| to_img(p)).collect();
    let xmin = img_corners.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).floor() as i64;
    let xmax = img_corners.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).ceil() as i64;
    let ymin = img_corners.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).floor() as i64;
    let ymax = img_corners.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil() as i64;
    let mut out = Vec::new();
    for y in ymin..=ymax {
        for x in xmin..=xmax {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let u = px * c - py * s;
            let v = px * s + py * c;
            if u >= 0.0 && u < wl && v >= 0.0 && v < hl {
                out.push((x, y));
            }
        }
    }
    out
}

/// Greedy placement: for each shape (largest first) scan anchors in raster
/// order and accept a patch when every footprint pixel is still free roof;
/// accepted footprints, grown by `gap` pixels, are removed from the free area.
pub fn place_panels(mask: &Mask, shapes: &[PatchShape], cell: CellPixels, angle_deg: f64, gap: usize) -> PanelLayout {
    let (w, h) = (mask.width(), mask.height());
    let mut free = mask.clone();
    let mut patches = Vec::new();
    let usable_px = mask.count();
    for &shape in shapes {
        if shape.cells() == 0 || cell.w_px.saturating_mul(shape.cells_x) > w + h || cell.h_px.saturating_mul(shape.cells_y) > w + h {
            continue;
        }
        let mut offs = footprint_offsets(shape, &cell, angle_deg);
        if offs.is_empty() {
            continue;
        }
        let (dxmin, dxmax) = (offs.iter().map(|o| o.0).min().unwrap(), offs.iter().map(|o| o.0).max().unwrap());
        let (dymin, dymax) = (offs.iter().map(|o| o.1).min().unwrap(), offs.iter().map(|o| o.1).max().unwrap());
        // pixels on the bounding-box extremes first: they fail most often
        offs.sort_by_key(|&(x, y)| {
            let edge = x == dxmin || x == dxmax || y == dymin || y == dymax;
            (!edge, y, x)
        });
        let stamp_offs: Vec<(i64, i64)> = if gap == 0 {
            offs.clone()
        } else {
            let g = gap as i64;
            let mut set = std::collections::BTreeSet::new();
            for &(x, y) in &offs {
                for dy in -g..=g {
                    for dx in -g..=g {
                        set.insert((x + dx, y + dy));
                    }
                }
            }
            set.into_iter().collect()
        };
        for ay in -dymin..(h as i64 - dymax) {
            for ax in -dxmin..(w as i64 - dxmax) {
                let fits = offs.iter().all(|&(dx, dy)| free.get((ax + dx) as usize, (ay + dy) as usize));
                if !fits {
                    continue;
                }
                for &(dx, dy) in &stamp_offs {
                    let (x, y) = (ax + dx, ay + dy);
                    if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                        free.set(x as usize, y as usize, false);
                    }
                }
                let mut footprint: Vec<(usize, usize)> =
                    offs.iter().map(|&(dx, dy)| ((ax + dx) as usize, (ay + dy) as usize)).collect();
                footprint.sort_by_key(|&(x, y)| (y, x));
                patches.push(PlacedPatch { anchor: (ax, ay), shape, angle_deg, footprint });
            }
        }
    }
    let total_cells = patches.iter().map(|p| p.shape.cells()).sum();
    let covered_px = patches.iter().map(|p| p.footprint.len()).sum();
    PanelLayout { width: w, height: h, cell, angle_deg, gap_px: gap, patches, total_cells, covered_px, usable_px }
}

/// [`place_panels`] with the cell size derived from a panel spec.
pub fn place_panels_for(mask: &Mask, spec: &PanelSpec, mpp: f64, angle_deg: f64, gap: usize) -> Result<PanelLayout> {
    spec.validate()?;
    let cell = panel_footprint_px(spec, mpp)?;
    Ok(place_panels(mask, &spec.patch_shapes, cell, angle_deg, gap))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    pub insolation_hours: f64,
    pub performance_ratio: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self { insolation_hours: 5.0, performance_ratio: 0.75 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutStats {
    pub cells: usize,
    pub usable_px: usize,
    pub usable_m2: f64,
    pub covered_px: usize,
    pub covered_m2: f64,
    pub coverage_ratio: f64,
    pub capacity_kw: f64,
    pub annual_kwh: f64,
}

pub fn layout_stats(layout: &PanelLayout, mpp: f64, spec: &PanelSpec, energy: &EnergyModel) -> LayoutStats {
    let watts = layout.total_cells as f64 * spec.rated_watts;
    LayoutStats {
        cells: layout.total_cells,
        usable_px: layout.usable_px,
        usable_m2: layout.usable_m2(mpp),
        covered_px: layout.covered_px,
        covered_m2: layout.covered_m2(mpp),
        coverage_ratio: layout.coverage_ratio(),
        capacity_kw: watts / 1000.0,
        annual_kwh: watts * energy.insolation_hours * 365.0 * energy.performance_ratio / 1000.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cell(w: usize, h: usize) -> CellPixels {
        CellPixels { w_px: w, h_px: h, w_real: w as f64, h_real: h as f64 }
    }

    #[test]
    fn ground_resolution_examples() {
        assert!((ground_resolution(0.0, 0).unwrap() - 156_543.033_92).abs() < 1e-5);
        assert!((ground_resolution(0.0, 20).unwrap() - 0.14929).abs() < 1e-4);
        let half = ground_resolution(60.0, 0).unwrap() / ground_resolution(0.0, 0).unwrap();
        assert!((half - 0.5).abs() < 1e-12);
        assert!(ground_resolution(85.1, 10).is_err());
        assert!(ground_resolution(10.0, 23).is_err());
    }

    #[test]
    fn footprint_examples() {
        let spec = PanelSpec::default();
        let c = panel_footprint_px(&spec, 0.149).unwrap();
        assert_eq!((c.w_px, c.h_px), (11, 7));
        let c = panel_footprint_px(&spec, 1.65).unwrap();
        assert_eq!((c.w_px, c.h_px), (1, 1));
        assert!(panel_footprint_px(&spec, 0.0).is_err());

        let tiny = panel_footprint_px(&spec, 1e-6).unwrap();
        let layout = place_panels(&Mask::full(50, 50).unwrap(), &spec.patch_shapes, tiny, 0.0, 1);
        assert!(layout.patches.is_empty());
    }

    #[test]
    fn orientation_examples() {
        let o = orientation_angle(28.6, None).unwrap();
        assert_eq!((o.angle_deg, o.facing.as_str(), o.tilt_deg), (0.0, "south", 28.6));
        assert_eq!(orientation_angle(-40.0, Some(15.0)).unwrap().angle_deg, 15.0);
        let o = orientation_angle(-30.0, None).unwrap();
        assert_eq!((o.facing.as_str(), o.tilt_deg), ("north", 30.0));
    }

    #[test]
    fn spec_validation() {
        let s = PanelSpec::new(1.0, 1.0, vec![PatchShape::new(3, 1), PatchShape::new(5, 1)], 300.0).unwrap();
        assert_eq!(s.patch_shapes[0], PatchShape::new(5, 1));
        assert!(PanelSpec::new(0.0, 1.0, DEFAULT_SHAPES.to_vec(), 1.0).is_err());
        assert!(PanelSpec::new(1.0, 1.0, vec![], 1.0).is_err());
        assert_eq!("4x1".parse::<PatchShape>().unwrap(), PatchShape::new(4, 1));
        assert!("4by1".parse::<PatchShape>().is_err());
    }

    #[test]
    fn axis_aligned_footprint_is_the_rectangle() {
        let offs = footprint_offsets(PatchShape::new(5, 1), &cell(11, 7), 0.0);
        assert_eq!(offs.len(), 55 * 7);
        assert!(offs.iter().all(|&(x, y)| (0..55).contains(&x) && (0..7).contains(&y)));
        let r90 = footprint_offsets(PatchShape::new(5, 1), &cell(11, 7), 90.0);
        assert_eq!(r90.len(), 55 * 7);
        // counter-clockwise as displayed: the patch row points up
        assert!(r90.iter().all(|&(x, y)| (0..7).contains(&x) && (-55..=-1).contains(&y)));
    }

    #[test]
    fn placement_examples() {
        assert!(place_panels(&Mask::new(30, 30).unwrap(), &DEFAULT_SHAPES, cell(3, 2), 0.0, 1).patches.is_empty());

        let strip = Mask::full(55, 7).unwrap();
        let l = place_panels(&strip, &[PatchShape::new(5, 1)], cell(11, 7), 0.0, 0);
        assert_eq!(l.patches.len(), 1);
        assert_eq!(l.total_cells, 5);
        assert_eq!(l.covered_px, 55 * 7);
    }

    // Independent route: greedy simulation on the cell grid for axis-aligned
    // placement on a full rectangle whose sides are cell multiples.
    fn grid_greedy(cols: usize, rows: usize, shapes: &[usize]) -> usize {
        let mut free = vec![vec![true; cols]; rows];
        let mut cells = 0;
        for &len in shapes {
            for r in 0..rows {
                for c in 0..cols {
                    if c + len <= cols && (c..c + len).all(|i| free[r][i]) {
                        (c..c + len).for_each(|i| free[r][i] = false);
                        cells += len;
                    }
                }
            }
        }
        cells
    }

    #[test]
    fn square_tiling_matches_grid_oracle() {
        let m = Mask::full(100, 100).unwrap();
        let l = place_panels(&m, &DEFAULT_SHAPES, cell(10, 10), 0.0, 0);
        assert_eq!(l.total_cells, grid_greedy(10, 10, &[5, 4, 3]));
        assert!((90..=100).contains(&l.total_cells));
        assert_eq!(l.total_cells, 100);
    }

    fn assert_sound(mask: &Mask, l: &PanelLayout) {
        let mut seen = vec![false; mask.width() * mask.height()];
        for p in &l.patches {
            assert_eq!(p.footprint.len(), footprint_offsets(p.shape, &l.cell, p.angle_deg).len());
            for &(x, y) in &p.footprint {
                assert!(mask.get(x, y), "outlier pixel ({x}, {y})");
                let i = y * mask.width() + x;
                assert!(!seen[i], "overlap at ({x}, {y})");
                seen[i] = true;
            }
        }
        assert_eq!(seen.iter().filter(|&&s| s).count(), l.covered_px);
        assert!(l.covered_px <= l.usable_px);
        assert!((0.0..=1.0).contains(&l.coverage_ratio()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn random_masks_have_no_outliers_or_overlaps(
            bits in prop::collection::vec(prop::bool::weighted(0.85), 40 * 40),
            angle in 0.0f64..180.0,
            gap in 0usize..2,
        ) {
            let m = Mask::from_bools(40, 40, &bits).unwrap();
            let l = place_panels(&m, &DEFAULT_SHAPES, cell(3, 2), angle, gap);
            assert_sound(&m, &l);
        }

        #[test]
        fn blob_masks_have_no_outliers(cx in 10.0f64..50.0, cy in 10.0f64..50.0, r in 5.0f64..40.0, angle in 0.0f64..90.0) {
            let m = Mask::from_fn(60, 60, |x, y| (x as f64 - cx).hypot(y as f64 - cy) < r).unwrap();
            let l = place_panels(&m, &DEFAULT_SHAPES, cell(4, 3), angle, 1);
            assert_sound(&m, &l);
        }
    }

    #[test]
    fn nested_masks_are_monotone() {
        for angle in [0.0, 15.0, 28.6, 45.0] {
            let mut last = 0;
            for half in (6..=30).step_by(2) {
                let m = Mask::from_fn(64, 64, |x, y| {
                    (x as i64 - 32).abs() < half && (y as i64 - 32).abs() < half
                })
                .unwrap();
                let cells = place_panels(&m, &DEFAULT_SHAPES, cell(3, 2), angle, 1).total_cells;
                assert!(cells >= last, "angle {angle} half {half}: {cells} < {last}");
                last = cells;
            }
        }
    }

    fn rotate90(m: &Mask) -> Mask {
        // counter-clockwise as displayed: (x, y) -> (y, n - 1 - x)
        let n = m.width();
        Mask::from_fn(n, n, |x, y| m.get(n - 1 - y, x)).unwrap()
    }

    #[test]
    fn quarter_turn_consistency() {
        let fixtures = [
            Mask::from_fn(64, 64, |x, y| (8..50).contains(&x) && (12..40).contains(&y)).unwrap(),
            Mask::from_fn(64, 64, |x, y| (5..60).contains(&x) && (5..60).contains(&y)).unwrap(),
            Mask::from_fn(64, 64, |x, y| {
                ((4..60).contains(&x) && (4..24).contains(&y)) || ((4..24).contains(&x) && (4..60).contains(&y))
            })
            .unwrap(),
        ];
        for m in &fixtures {
            let base = place_panels(m, &DEFAULT_SHAPES, cell(3, 2), 0.0, 1).total_cells;
            let turned = place_panels(&rotate90(m), &DEFAULT_SHAPES, cell(3, 2), 90.0, 1).total_cells;
            assert_eq!(base, turned);
        }
    }

    #[test]
    fn placement_is_deterministic() {
        let m = Mask::from_fn(80, 80, |x, y| (x as f64 - 40.0).hypot(y as f64 - 40.0) < 35.0).unwrap();
        let a = place_panels(&m, &DEFAULT_SHAPES, cell(4, 3), 28.6, 1);
        let b = place_panels(&m, &DEFAULT_SHAPES, cell(4, 3), 28.6, 1);
        assert_eq!(a, b);
        let mut c = a.clone();
        c.recompute_footprints();
        assert_eq!(a, c);
    }

    #[test]
    fn stats_examples() {
        let spec = PanelSpec::default();
        let e = EnergyModel::default();
        let empty = place_panels(&Mask::new(10, 10).unwrap(), &spec.patch_shapes, cell(2, 2), 0.0, 1);
        let s = layout_stats(&empty, 0.149, &spec, &e);
        assert_eq!((s.capacity_kw, s.annual_kwh), (0.0, 0.0));

        let mut ten = empty.clone();
        ten.total_cells = 10;
        let s = layout_stats(&ten, 0.149, &spec, &e);
        assert_eq!(s.capacity_kw, 3.3);
        assert_eq!(s.annual_kwh, 4516.875);

        let roof = place_panels(&Mask::full(100, 100).unwrap(), &spec.patch_shapes, cell(200, 200), 0.0, 1);
        assert_eq!(layout_stats(&roof, 0.149, &spec, &e).usable_m2, 222.01);
    }
}
