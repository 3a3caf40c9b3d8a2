//! Flat `key = value` configuration covering every tunable stage.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::RoofMaskParams;
use crate::placement::{EnergyModel, PanelSpec, PatchShape, DEFAULT_SHAPES};
use crate::regionseg::{SnakeParams, WatershedParams};
use crate::texture::GaborParams;
use crate::tiles::{Provider, DEFAULT_TIMEOUT, ENV_TILE_KEY, ENV_TILE_URL};

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub zoom: u32,
    pub size: u32,
    /// Location assumed for image input that carries none.
    pub default_lat: f64,
    pub default_lng: f64,

    pub bilateral_sigma_spatial: f64,
    pub bilateral_sigma_range: f64,
    pub bilateral_radius: usize,
    pub canny_k: f64,
    pub min_contour_area: usize,
    pub min_contour_points: usize,
    pub obstacle_max_fraction: f64,

    pub watershed_fg_fraction: f64,
    pub watershed_smoothing: f64,

    pub snake_alpha: f64,
    pub snake_beta: f64,
    pub snake_gamma: f64,
    pub snake_points: usize,
    pub snake_iters: usize,
    pub gvf_mu: f64,
    pub gvf_iters: usize,

    pub gabor_f: f64,
    pub gabor_theta: f64,
    pub gabor_delta_x: f64,
    pub gabor_delta_y: f64,
    pub gabor_size: usize,

    pub k_lines: usize,
    pub hough_votes_min: u32,
    /// `None` means the Otsu threshold of the input.
    pub region_threshold: Option<f64>,

    pub panel_width_m: f64,
    pub panel_height_m: f64,
    pub panel_watts: f64,
    pub patch_shapes: Vec<PatchShape>,
    pub gap_px: usize,
    /// `None` means the latitude-derived default.
    pub angle_override: Option<f64>,
    pub insolation_hours: f64,
    pub performance_ratio: f64,

    /// `fixture_directory` or `url_template`.
    pub provider: String,
    pub provider_dir: String,
    /// Empty means `ROOFSOLAR_TILE_URL`.
    pub provider_url: String,
    pub provider_timeout_s: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let roof = RoofMaskParams::default();
        let snake = SnakeParams::default();
        let ws = WatershedParams::default();
        let gabor = GaborParams::default();
        let spec = PanelSpec::default();
        let energy = EnergyModel::default();
        Self {
            zoom: 20,
            size: 640,
            default_lat: 0.0,
            default_lng: 0.0,
            bilateral_sigma_spatial: roof.bilateral_sigma_spatial,
            bilateral_sigma_range: roof.bilateral_sigma_range,
            bilateral_radius: roof.bilateral_radius,
            canny_k: roof.canny_k,
            min_contour_area: roof.min_area,
            min_contour_points: roof.min_points,
            obstacle_max_fraction: roof.obstacle_max_fraction,
            watershed_fg_fraction: ws.fg_fraction,
            watershed_smoothing: ws.smoothing_sigma,
            snake_alpha: snake.alpha,
            snake_beta: snake.beta,
            snake_gamma: snake.gamma,
            snake_points: snake.points,
            snake_iters: snake.iters,
            gvf_mu: snake.gvf_mu,
            gvf_iters: snake.gvf_iters,
            gabor_f: gabor.f,
            gabor_theta: gabor.theta,
            gabor_delta_x: gabor.delta_x,
            gabor_delta_y: gabor.delta_y,
            gabor_size: gabor.size,
            k_lines: 4,
            hough_votes_min: 30,
            region_threshold: None,
            panel_width_m: spec.cell_width_m,
            panel_height_m: spec.cell_height_m,
            panel_watts: spec.rated_watts,
            patch_shapes: DEFAULT_SHAPES.to_vec(),
            gap_px: 1,
            angle_override: None,
            insolation_hours: energy.insolation_hours,
            performance_ratio: energy.performance_ratio,
            provider: "fixture_directory".into(),
            provider_dir: String::new(),
            provider_url: String::new(),
            provider_timeout_s: DEFAULT_TIMEOUT.as_secs_f64(),
        }
    }
}

fn opt_text(v: Option<f64>, none: &str) -> String {
    v.map_or_else(|| none.to_string(), |x| x.to_string())
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::param(format!("{key}: cannot parse `{v}`")))
}

fn opt_num(key: &str, v: &str, none: &str) -> Result<Option<f64>> {
    if v == none {
        Ok(None)
    } else {
        num(key, v).map(Some)
    }
}

impl PipelineConfig {
    /// Every key in file order with its textual value.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let shapes = self.patch_shapes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("zoom", self.zoom.to_string()),
            ("size", self.size.to_string()),
            ("default_lat", self.default_lat.to_string()),
            ("default_lng", self.default_lng.to_string()),
            ("bilateral_sigma_spatial", self.bilateral_sigma_spatial.to_string()),
            ("bilateral_sigma_range", self.bilateral_sigma_range.to_string()),
            ("bilateral_radius", self.bilateral_radius.to_string()),
            ("canny_k", self.canny_k.to_string()),
            ("min_contour_area", self.min_contour_area.to_string()),
            ("min_contour_points", self.min_contour_points.to_string()),
            ("obstacle_max_fraction", self.obstacle_max_fraction.to_string()),
            ("watershed_fg_fraction", self.watershed_fg_fraction.to_string()),
            ("watershed_smoothing", self.watershed_smoothing.to_string()),
            ("snake_alpha", self.snake_alpha.to_string()),
            ("snake_beta", self.snake_beta.to_string()),
            ("snake_gamma", self.snake_gamma.to_string()),
            ("snake_points", self.snake_points.to_string()),
            ("snake_iters", self.snake_iters.to_string()),
            ("gvf_mu", self.gvf_mu.to_string()),
            ("gvf_iters", self.gvf_iters.to_string()),
            ("gabor_f", self.gabor_f.to_string()),
            ("gabor_theta", self.gabor_theta.to_string()),
            ("gabor_delta_x", self.gabor_delta_x.to_string()),
            ("gabor_delta_y", self.gabor_delta_y.to_string()),
            ("gabor_size", self.gabor_size.to_string()),
            ("k_lines", self.k_lines.to_string()),
            ("hough_votes_min", self.hough_votes_min.to_string()),
            ("region_threshold", opt_text(self.region_threshold, "otsu")),
            ("panel_width_m", self.panel_width_m.to_string()),
            ("panel_height_m", self.panel_height_m.to_string()),
            ("panel_watts", self.panel_watts.to_string()),
            ("patch_shapes", shapes),
            ("gap_px", self.gap_px.to_string()),
            ("angle", opt_text(self.angle_override, "auto")),
            ("insolation_hours", self.insolation_hours.to_string()),
            ("performance_ratio", self.performance_ratio.to_string()),
            ("provider", self.provider.clone()),
            ("provider_dir", self.provider_dir.clone()),
            ("provider_url", self.provider_url.clone()),
            ("provider_timeout_s", self.provider_timeout_s.to_string()),
        ]
    }

    /// Set one key from its textual value. Unknown keys are config errors.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key {
            "zoom" => self.zoom = num(key, v)?,
            "size" => self.size = num(key, v)?,
            "default_lat" => self.default_lat = num(key, v)?,
            "default_lng" => self.default_lng = num(key, v)?,
            "bilateral_sigma_spatial" => self.bilateral_sigma_spatial = num(key, v)?,
            "bilateral_sigma_range" => self.bilateral_sigma_range = num(key, v)?,
            "bilateral_radius" => self.bilateral_radius = num(key, v)?,
            "canny_k" => self.canny_k = num(key, v)?,
            "min_contour_area" => self.min_contour_area = num(key, v)?,
            "min_contour_points" => self.min_contour_points = num(key, v)?,
            "obstacle_max_fraction" => self.obstacle_max_fraction = num(key, v)?,
            "watershed_fg_fraction" => self.watershed_fg_fraction = num(key, v)?,
            "watershed_smoothing" => self.watershed_smoothing = num(key, v)?,
            "snake_alpha" => self.snake_alpha = num(key, v)?,
            "snake_beta" => self.snake_beta = num(key, v)?,
            "snake_gamma" => self.snake_gamma = num(key, v)?,
            "snake_points" => self.snake_points = num(key, v)?,
            "snake_iters" => self.snake_iters = num(key, v)?,
            "gvf_mu" => self.gvf_mu = num(key, v)?,
            "gvf_iters" => self.gvf_iters = num(key, v)?,
            "gabor_f" => self.gabor_f = num(key, v)?,
            "gabor_theta" => self.gabor_theta = num(key, v)?,
            "gabor_delta_x" => self.gabor_delta_x = num(key, v)?,
            "gabor_delta_y" => self.gabor_delta_y = num(key, v)?,
            "gabor_size" => self.gabor_size = num(key, v)?,
            "k_lines" => self.k_lines = num(key, v)?,
            "hough_votes_min" => self.hough_votes_min = num(key, v)?,
            "region_threshold" => self.region_threshold = opt_num(key, v, "otsu")?,
            "panel_width_m" => self.panel_width_m = num(key, v)?,
            "panel_height_m" => self.panel_height_m = num(key, v)?,
            "panel_watts" => self.panel_watts = num(key, v)?,
            "patch_shapes" => {
                self.patch_shapes = v.split(',').map(|s| s.trim().parse()).collect::<Result<Vec<PatchShape>>>()?
            }
            "gap_px" => self.gap_px = num(key, v)?,
            "angle" => self.angle_override = opt_num(key, v, "auto")?,
            "insolation_hours" => self.insolation_hours = num(key, v)?,
            "performance_ratio" => self.performance_ratio = num(key, v)?,
            "provider" => self.provider = v.to_string(),
            "provider_dir" => self.provider_dir = v.to_string(),
            "provider_url" => self.provider_url = v.to_string(),
            "provider_timeout_s" => self.provider_timeout_s = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# roofsolar pipeline configuration\n");
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Parse text over the defaults. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// SHA-256 of the canonical text, lowercase hex.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes()).iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.zoom > 21 {
            return Err(Error::param(format!("zoom {} outside [0, 21]", self.zoom)));
        }
        if !(64..=2048).contains(&self.size) {
            return Err(Error::param(format!("size {} outside [64, 2048]", self.size)));
        }
        if !(self.default_lat.abs() < 85.05) || !(-180.0..=180.0).contains(&self.default_lng) {
            return Err(Error::param("default location out of range"));
        }
        let pos = [
            ("bilateral_sigma_spatial", self.bilateral_sigma_spatial),
            ("bilateral_sigma_range", self.bilateral_sigma_range),
            ("watershed_smoothing", self.watershed_smoothing),
            ("snake_gamma", self.snake_gamma),
            ("insolation_hours", self.insolation_hours),
            ("provider_timeout_s", self.provider_timeout_s),
        ];
        for (k, v) in pos {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::param(format!("{k} must be > 0, got {v}")));
            }
        }
        if !(self.canny_k >= 0.0) || !self.canny_k.is_finite() {
            return Err(Error::param(format!("canny_k must be >= 0, got {}", self.canny_k)));
        }
        if !(self.snake_alpha >= 0.0 && self.snake_beta >= 0.0) {
            return Err(Error::param("snake_alpha and snake_beta must be >= 0"));
        }
        if self.snake_points < 8 {
            return Err(Error::param("snake_points must be at least 8"));
        }
        if !(self.gvf_mu > 0.0 && self.gvf_mu <= 0.25) {
            return Err(Error::param(format!("gvf_mu must lie in (0, 0.25], got {}", self.gvf_mu)));
        }
        for (k, v) in [("obstacle_max_fraction", self.obstacle_max_fraction), ("watershed_fg_fraction", self.watershed_fg_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param(format!("{k} must lie in [0, 1], got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.performance_ratio) {
            return Err(Error::param(format!("performance_ratio must lie in [0, 1], got {}", self.performance_ratio)));
        }
        if self.k_lines == 0 {
            return Err(Error::param("k_lines must be at least 1"));
        }
        if let Some(t) = self.region_threshold {
            if !(0.0..=255.0).contains(&t) {
                return Err(Error::param(format!("region_threshold must lie in [0, 255], got {t}")));
            }
        }
        if let Some(a) = self.angle_override {
            if !a.is_finite() {
                return Err(Error::param("angle must be finite"));
            }
        }
        self.gabor_params().validate()?;
        self.panel_spec()?;
        match self.provider.as_str() {
            "fixture_directory" | "url_template" => Ok(()),
            other => Err(Error::Config(format!("unknown provider `{other}`"))),
        }
    }

    pub fn roof_params(&self) -> RoofMaskParams {
        RoofMaskParams {
            bilateral_sigma_spatial: self.bilateral_sigma_spatial,
            bilateral_sigma_range: self.bilateral_sigma_range,
            bilateral_radius: self.bilateral_radius,
            canny_k: self.canny_k,
            min_area: self.min_contour_area,
            min_points: self.min_contour_points,
            obstacle_max_fraction: self.obstacle_max_fraction,
        }
    }

    pub fn watershed_params(&self) -> WatershedParams {
        WatershedParams { fg_fraction: self.watershed_fg_fraction, smoothing_sigma: self.watershed_smoothing }
    }

    pub fn snake_params(&self) -> SnakeParams {
        SnakeParams {
            alpha: self.snake_alpha,
            beta: self.snake_beta,
            gamma: self.snake_gamma,
            points: self.snake_points,
            iters: self.snake_iters,
            gvf_mu: self.gvf_mu,
            gvf_iters: self.gvf_iters,
            canny_k: self.canny_k,
            ..SnakeParams::default()
        }
    }

    pub fn gabor_params(&self) -> GaborParams {
        GaborParams {
            f: self.gabor_f,
            theta: self.gabor_theta,
            delta_x: self.gabor_delta_x,
            delta_y: self.gabor_delta_y,
            size: self.gabor_size,
        }
    }

    pub fn panel_spec(&self) -> Result<PanelSpec> {
        PanelSpec::new(self.panel_width_m, self.panel_height_m, self.patch_shapes.clone(), self.panel_watts)
    }

    pub fn energy_model(&self) -> EnergyModel {
        EnergyModel { insolation_hours: self.insolation_hours, performance_ratio: self.performance_ratio }
    }

    /// Provider settings; the URL template falls back to the environment.
    pub fn tile_provider(&self) -> Result<Provider> {
        let timeout = Duration::from_secs_f64(self.provider_timeout_s);
        match self.provider.as_str() {
            "fixture_directory" => {
                if self.provider_dir.is_empty() {
                    return Err(Error::Config("provider_dir is required for the fixture_directory provider".into()));
                }
                Ok(Provider::FixtureDirectory(PathBuf::from(&self.provider_dir)))
            }
            "url_template" => {
                let template = if self.provider_url.is_empty() {
                    std::env::var(ENV_TILE_URL)
                        .map_err(|_| Error::Config(format!("no provider_url and {ENV_TILE_URL} is unset")))?
                } else {
                    self.provider_url.clone()
                };
                Ok(Provider::UrlTemplate { template, key: std::env::var(ENV_TILE_KEY).ok(), timeout })
            }
            other => Err(Error::Config(format!("unknown provider `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_lossless() {
        let mut c = PipelineConfig::default();
        c.canny_k = 0.1 + 0.2;
        c.angle_override = Some(28.6);
        c.region_threshold = Some(101.5);
        c.patch_shapes = vec![PatchShape::new(4, 2), PatchShape::new(3, 1)];
        c.provider_dir = "/tmp/tiles dir".into();
        let back = PipelineConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(PipelineConfig::parse(&PipelineConfig::default().to_text()).unwrap(), PipelineConfig::default());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.txt");
        let mut c = PipelineConfig::default();
        c.gap_px = 0;
        c.save(&p).unwrap();
        assert_eq!(PipelineConfig::load(&p).unwrap(), c);
    }

    #[test]
    fn hash_tracks_content() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        b.gap_px = 2;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn partial_files_and_comments() {
        let c = PipelineConfig::parse("# comment\n\nzoom = 19\n  angle = 15\n").unwrap();
        assert_eq!(c.zoom, 19);
        assert_eq!(c.angle_override, Some(15.0));
        assert_eq!(c.gap_px, 1);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(PipelineConfig::parse("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::parse("zoom 20"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::parse("zoom = 25"), Err(Error::Parameter(_))));
        assert!(matches!(PipelineConfig::parse("gvf_mu = 0.3"), Err(Error::Parameter(_))));
        assert!(matches!(PipelineConfig::parse("canny_k = abc"), Err(Error::Parameter(_))));
        assert!(matches!(PipelineConfig::parse("patch_shapes = 5x0"), Err(Error::Parameter(_))));
        assert!(matches!(PipelineConfig::parse("gabor_size = 4"), Err(Error::Parameter(_))));
        assert!(matches!(PipelineConfig::parse("provider = carrier_pigeon"), Err(Error::Config(_))));
    }

    #[test]
    fn provider_settings() {
        let mut c = PipelineConfig::default();
        assert!(c.tile_provider().is_err());
        c.provider_dir = "/data/tiles".into();
        assert_eq!(c.tile_provider().unwrap(), Provider::FixtureDirectory("/data/tiles".into()));
        c.provider = "url_template".into();
        c.provider_url = "http://t/{lat}/{lng}/{zoom}/{size}".into();
        assert!(matches!(c.tile_provider().unwrap(), Provider::UrlTemplate { .. }));
    }
}
