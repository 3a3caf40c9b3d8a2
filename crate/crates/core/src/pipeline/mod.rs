//! End-to-end analysis: tile or image in, mask, panel layout, overlay and
//! report out.

mod config;
mod report;

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::roof_segmentation;
use crate::placement::{
    ground_resolution, layout_stats, orientation_angle, place_panels_for, PanelLayout,
};
use crate::raster::io::{read_rgb, write_mask, write_rgb};
use crate::raster::{to_grayscale, Mask};
use crate::tiles::{TileCache, TileFetcher, TileRequest, UreqHttp};

pub use config::PipelineConfig;
pub use report::{
    report_read, report_write, round_sig6, to_canonical_json, verify, Check, ReportArtifacts, ReportInputs,
    SolarReport, Verification, CONFIG_FILE, LAYOUT_FILE, MASK_FILE, OVERLAY_FILE, REPORT_FILE, SCHEMA_VERSION,
};

pub const METHOD_CONTOURS: &str = "adaptive_canny_contours";
pub const PROVIDER_IMAGE_FILE: &str = "image_file";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_NO_ROOF: i32 = 2;
pub const EXIT_PROVIDER: i32 = 3;
pub const EXIT_PARAMS: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NoRoofFound(_) => EXIT_NO_ROOF,
        Error::Provider { .. } | Error::Timeout(_) | Error::NotFound(_) => EXIT_PROVIDER,
        Error::Parameter(_) | Error::Stability(_) | Error::Config(_) | Error::Dimension(_) | Error::Degenerate(_) => {
            EXIT_PARAMS
        }
        Error::Io(_) | Error::Image(_) | Error::Json(_) => EXIT_FAILURE,
    }
}

pub const GREEN: Rgb<u8> = Rgb([0, 255, 0]);
pub const BLUE: Rgb<u8> = Rgb([0, 0, 255]);
pub const PANEL_OPACITY: f64 = 0.6;

pub fn is_blue(p: &Rgb<u8>) -> bool {
    p[2] > p[0] && p[2] > p[1]
}

/// Base image with the mask boundary in green, then each patch filled blue at
/// 60% opacity with a solid blue outline.
pub fn render_overlay(base: &RgbImage, mask: &Mask, layout: &PanelLayout) -> Result<RgbImage> {
    let (w, h) = (base.width() as usize, base.height() as usize);
    if mask.width() != w || mask.height() != h || layout.width != w || layout.height != h {
        return Err(Error::dims(format!(
            "overlay base {w}x{h}, mask {}x{}, layout {}x{}",
            mask.width(),
            mask.height(),
            layout.width,
            layout.height
        )));
    }
    let mut out = base.clone();
    let boundary = mask.inner_boundary();
    for y in 0..h {
        for x in 0..w {
            if boundary.get(x, y) {
                out.put_pixel(x as u32, y as u32, GREEN);
            }
        }
    }
    let mut own = Mask::new(w, h)?;
    for p in &layout.patches {
        for &(x, y) in &p.footprint {
            own.set(x, y, true);
        }
        for &(x, y) in &p.footprint {
            let (xi, yi) = (x as isize, y as isize);
            let edge = [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().any(|&(dx, dy)| !own.get_or_false(xi + dx, yi + dy));
            let px = if edge {
                BLUE
            } else {
                let b = base.get_pixel(x as u32, y as u32);
                let mix = |c: u8, t: u8| ((1.0 - PANEL_OPACITY) * f64::from(c) + PANEL_OPACITY * f64::from(t)).round() as u8;
                Rgb([mix(b[0], 0), mix(b[1], 0), mix(b[2], 255)])
            };
            out.put_pixel(x as u32, y as u32, px);
        }
        for &(x, y) in &p.footprint {
            own.set(x, y, false);
        }
    }
    Ok(out)
}

/// Where a tile or image sits on the globe.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Location {
    pub lat: f64,
    pub lng: f64,
    pub zoom: u32,
}

/// Location encoded in a canonical tile file name, if it is one.
pub fn location_from_tile_name(name: &str) -> Option<Location> {
    let stem = name.strip_suffix(".png")?;
    let parts: Vec<&str> = stem.split('_').collect();
    let [lat, lng, zoom, size] = parts.as_slice() else { return None };
    let loc = Location { lat: lat.parse().ok()?, lng: lng.parse().ok()?, zoom: zoom.strip_prefix('z')?.parse().ok()? };
    size.strip_prefix('s')?.parse::<u32>().ok()?;
    Some(loc)
}

#[derive(Clone, Debug, PartialEq)]
pub enum AnalysisInput {
    /// Image file; the location comes from `location`, else the file name,
    /// else the config defaults.
    Image { path: PathBuf, location: Option<(f64, f64)> },
    Coordinates { lat: f64, lng: f64 },
}

#[derive(Clone, Debug)]
pub struct Analysis {
    pub report: SolarReport,
    pub mask: Mask,
    pub layout: PanelLayout,
    pub overlay: RgbImage,
    pub config: PipelineConfig,
}

/// Segment, place and report on an RGB image at a known location.
pub fn analyze_rgb(rgb: &RgbImage, loc: Location, provider: &str, source: &str, cfg: &PipelineConfig) -> Result<Analysis> {
    cfg.validate()?;
    let gray = to_grayscale(rgb)?;
    let seg = roof_segmentation(&gray, &cfg.roof_params())?;
    let mpp = ground_resolution(loc.lat, loc.zoom)?;
    let orientation = orientation_angle(loc.lat, cfg.angle_override)?;
    let spec = cfg.panel_spec()?;
    let layout = place_panels_for(&seg.mask, &spec, mpp, orientation.angle_deg, cfg.gap_px)?;
    let stats = layout_stats(&layout, mpp, &spec, &cfg.energy_model());
    let overlay = render_overlay(rgb, &seg.mask, &layout)?;
    let inputs = ReportInputs {
        lat: loc.lat,
        lng: loc.lng,
        zoom: loc.zoom,
        provider: provider.into(),
        source: source.into(),
        config_hash: cfg.hash(),
    };
    let report = SolarReport::from_stats(inputs, METHOD_CONTOURS, mpp, orientation, seg.obstacles.len(), &layout, &stats);
    Ok(Analysis { report, mask: seg.mask, layout, overlay, config: cfg.clone() })
}

/// Run the pipeline. Coordinates go through `fetcher`, or one built from the
/// config provider and `$ROOFSOLAR_CACHE` when none is given.
pub fn analyze(input: &AnalysisInput, cfg: &PipelineConfig, fetcher: Option<&TileFetcher>) -> Result<Analysis> {
    cfg.validate()?;
    match input {
        AnalysisInput::Image { path, location } => {
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let loc = match *location {
                Some((lat, lng)) => Location { lat, lng, zoom: cfg.zoom },
                None => location_from_tile_name(&name)
                    .unwrap_or(Location { lat: cfg.default_lat, lng: cfg.default_lng, zoom: cfg.zoom }),
            };
            TileRequest::new(loc.lat, loc.lng, loc.zoom, cfg.size)?;
            let rgb = read_rgb(path)?;
            analyze_rgb(&rgb, loc, PROVIDER_IMAGE_FILE, &name, cfg)
        }
        AnalysisInput::Coordinates { lat, lng } => {
            let req = TileRequest::new(*lat, *lng, cfg.zoom, cfg.size)?;
            let owned;
            let fetcher = match fetcher {
                Some(f) => f,
                None => {
                    let source = cfg.tile_provider()?.into_source(Box::new(UreqHttp))?;
                    owned = TileFetcher::new(source, TileCache::from_env());
                    &owned
                }
            };
            let rgb = fetcher.fetch(&req)?;
            let loc = Location { lat: *lat, lng: *lng, zoom: cfg.zoom };
            analyze_rgb(&rgb, loc, &fetcher.source_id(), &req.canonical_name(), cfg)
        }
    }
}

/// Write report, mask, overlay, layout and config into `dir`.
pub fn write_outputs(a: &Analysis, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let art = &a.report.artifacts;
    write_mask(dir.join(&art.mask), &a.mask)?;
    write_rgb(dir.join(&art.overlay), &a.overlay)?;
    std::fs::write(dir.join(&art.layout), to_canonical_json(&a.layout)?)?;
    a.config.save(dir.join(&art.config))?;
    let path = dir.join(REPORT_FILE);
    report_write(&a.report, &path)?;
    Ok(path)
}

fn is_image_file(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
}

/// Analyze every image in `input_dir` into `out_dir/<stem>/`, in parallel.
/// Results come back sorted by file name; one failure does not stop others.
pub fn analyze_batch(input_dir: &Path, cfg: &PipelineConfig, out_dir: &Path) -> Result<Vec<(PathBuf, Result<SolarReport>)>> {
    cfg.validate()?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(input_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    files.sort();
    Ok(files
        .into_par_iter()
        .map(|path| {
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let res = analyze(&AnalysisInput::Image { path: path.clone(), location: None }, cfg, None)
                .and_then(|a| write_outputs(&a, out_dir.join(&stem)).map(|_| a.report));
            (path, res)
        })
        .collect())
}
