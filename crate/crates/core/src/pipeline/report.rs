//! Solar report: canonical JSON, read/write, and the audit that re-derives it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::placement::{ground_resolution, layout_stats, LayoutStats, Orientation, PanelLayout};
use crate::raster::io::read_mask;

use super::config::PipelineConfig;

pub const SCHEMA_VERSION: &str = "1";
pub const REPORT_FILE: &str = "report.json";
pub const MASK_FILE: &str = "mask.png";
pub const OVERLAY_FILE: &str = "overlay.png";
pub const LAYOUT_FILE: &str = "layout.json";
pub const CONFIG_FILE: &str = "config.txt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportInputs {
    pub lat: f64,
    pub lng: f64,
    pub zoom: u32,
    pub provider: String,
    /// Image file name or canonical tile name.
    pub source: String,
    pub config_hash: String,
}

/// Paths relative to the report's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportArtifacts {
    pub mask: String,
    pub overlay: String,
    pub layout: String,
    pub config: String,
}

impl Default for ReportArtifacts {
    fn default() -> Self {
        Self { mask: MASK_FILE.into(), overlay: OVERLAY_FILE.into(), layout: LAYOUT_FILE.into(), config: CONFIG_FILE.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolarReport {
    pub schema: String,
    pub inputs: ReportInputs,
    /// Segmentation path that produced the mask.
    pub method: String,
    pub meters_per_pixel: f64,
    pub orientation: Orientation,
    pub obstacles_detected: usize,
    pub usable_area_px: usize,
    pub usable_area_m2: f64,
    pub covered_area_m2: f64,
    pub panel_cells: usize,
    pub patches: usize,
    pub capacity_kw: f64,
    pub annual_kwh: f64,
    pub coverage_ratio: f64,
    pub artifacts: ReportArtifacts,
}

/// Round to 6 significant digits.
pub fn round_sig6(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.5e}").parse().unwrap_or(v)
}

fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(round_sig6).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_floats),
        Value::Object(o) => o.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// Sorted keys, floats at 6 significant digits, trailing newline.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    round_floats(&mut v);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

impl SolarReport {
    pub fn from_stats(
        inputs: ReportInputs,
        method: &str,
        mpp: f64,
        orientation: Orientation,
        obstacles_detected: usize,
        layout: &PanelLayout,
        stats: &LayoutStats,
    ) -> Self {
        let r = SolarReport {
            schema: SCHEMA_VERSION.into(),
            inputs,
            method: method.into(),
            meters_per_pixel: mpp,
            orientation,
            obstacles_detected,
            usable_area_px: stats.usable_px,
            usable_area_m2: stats.usable_m2,
            covered_area_m2: stats.covered_m2,
            panel_cells: stats.cells,
            patches: layout.patches.len(),
            capacity_kw: stats.capacity_kw,
            annual_kwh: stats.annual_kwh,
            coverage_ratio: stats.coverage_ratio,
            artifacts: ReportArtifacts::default(),
        };
        r.canonical()
    }

    /// The report as it reads back from its canonical JSON.
    pub fn canonical(&self) -> Self {
        to_canonical_json(self).and_then(|s| Ok(serde_json::from_str(&s)?)).unwrap_or_else(|_| self.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        to_canonical_json(self)
    }
}

pub fn report_write(r: &SolarReport, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, r.to_json()?)?;
    Ok(())
}

pub fn report_read(path: impl AsRef<Path>) -> Result<SolarReport> {
    let r: SolarReport = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if r.schema != SCHEMA_VERSION {
        return Err(Error::Config(format!("unsupported report schema `{}`", r.schema)));
    }
    Ok(r)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub ok: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Verification {
    pub checks: Vec<Check>,
}

impl Verification {
    pub fn ok(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }
}

fn num_check(name: &'static str, reported: f64, derived: f64) -> Check {
    let expect = round_sig6(derived);
    Check { name, ok: reported == expect, detail: format!("reported {reported}, derived {expect}") }
}

/// Recompute every number in the report from the mask, layout and config
/// files next to it.
pub fn verify(dir: impl AsRef<Path>) -> Result<Verification> {
    let dir = dir.as_ref();
    let report = report_read(dir.join(REPORT_FILE))?;
    let cfg = PipelineConfig::load(dir.join(&report.artifacts.config))?;
    let mask = read_mask(dir.join(&report.artifacts.mask))?;
    let mut layout: PanelLayout = serde_json::from_str(&std::fs::read_to_string(dir.join(&report.artifacts.layout))?)?;
    layout.recompute_footprints();

    let mut checks = Vec::new();
    checks.push(Check {
        name: "config_hash",
        ok: cfg.hash() == report.inputs.config_hash,
        detail: format!("file {}, report {}", cfg.hash(), report.inputs.config_hash),
    });
    let dims_ok = mask.width() == layout.width && mask.height() == layout.height;
    checks.push(Check {
        name: "dimensions",
        ok: dims_ok,
        detail: format!("mask {}x{}, layout {}x{}", mask.width(), mask.height(), layout.width, layout.height),
    });

    let in_bounds = layout
        .patches
        .iter()
        .flat_map(|p| p.footprint.iter())
        .all(|&(x, y)| x < mask.width() && y < mask.height());
    let outliers = if in_bounds && dims_ok {
        layout.patches.iter().flat_map(|p| p.footprint.iter()).filter(|&&(x, y)| !mask.get(x, y)).count()
    } else {
        usize::MAX
    };
    checks.push(Check { name: "zero_outliers", ok: outliers == 0, detail: format!("{outliers} footprint pixels outside the mask") });

    let footprint_sum: usize = layout.patches.iter().map(|p| p.footprint.len()).sum();
    let stamped = if in_bounds { layout.coverage_mask().count() } else { 0 };
    checks.push(Check {
        name: "disjoint_patches",
        ok: in_bounds && footprint_sum == stamped && stamped == layout.covered_px,
        detail: format!("sum of footprints {footprint_sum}, union {stamped}, layout {}", layout.covered_px),
    });
    let cells: usize = layout.patches.iter().map(|p| p.shape.cells()).sum();
    checks.push(Check {
        name: "cell_count",
        ok: cells == layout.total_cells && cells == report.panel_cells && layout.patches.len() == report.patches,
        detail: format!("patches hold {cells} cells, layout {}, report {}", layout.total_cells, report.panel_cells),
    });
    checks.push(Check {
        name: "usable_area_px",
        ok: mask.count() == layout.usable_px && mask.count() == report.usable_area_px,
        detail: format!("mask {}, layout {}, report {}", mask.count(), layout.usable_px, report.usable_area_px),
    });

    let mpp = ground_resolution(report.inputs.lat, report.inputs.zoom)?;
    checks.push(num_check("meters_per_pixel", report.meters_per_pixel, mpp));
    let stats = layout_stats(&layout, mpp, &cfg.panel_spec()?, &cfg.energy_model());
    checks.push(num_check("usable_area_m2", report.usable_area_m2, stats.usable_m2));
    checks.push(num_check("covered_area_m2", report.covered_area_m2, stats.covered_m2));
    checks.push(num_check("capacity_kw", report.capacity_kw, stats.capacity_kw));
    checks.push(num_check("annual_kwh", report.annual_kwh, stats.annual_kwh));
    checks.push(num_check("coverage_ratio", report.coverage_ratio, stats.coverage_ratio));
    Ok(Verification { checks })
}
