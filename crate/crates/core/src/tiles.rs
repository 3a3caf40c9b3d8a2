//! Satellite tile acquisition with a pluggable source and an on-disk cache.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use image::RgbImage;

use crate::error::{Error, Result};
use crate::raster::io::{decode_rgb, encode_png_rgb};

pub const ENV_TILE_URL: &str = "ROOFSOLAR_TILE_URL";
pub const ENV_TILE_KEY: &str = "ROOFSOLAR_TILE_KEY";
pub const ENV_CACHE: &str = "ROOFSOLAR_CACHE";
pub const DEFAULT_CACHE_DIR: &str = ".roofsolar-cache";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TileRequest {
    pub lat: f64,
    pub lng: f64,
    pub zoom: u32,
    pub size: u32,
}

impl TileRequest {
    pub fn new(lat: f64, lng: f64, zoom: u32, size: u32) -> Result<Self> {
        if !(lat.abs() < 85.05) {
            return Err(Error::param(format!("latitude {lat} outside (-85.05, 85.05)")));
        }
        if !(-180.0..=180.0).contains(&lng) {
            return Err(Error::param(format!("longitude {lng} outside [-180, 180]")));
        }
        if zoom > 21 {
            return Err(Error::param(format!("zoom {zoom} outside [0, 21]")));
        }
        if !(64..=2048).contains(&size) {
            return Err(Error::param(format!("tile size {size} outside [64, 2048]")));
        }
        Ok(Self { lat, lng, zoom, size })
    }

    /// `{lat:.5}_{lng:.5}_z{zoom}_s{size}.png`
    pub fn canonical_name(&self) -> String {
        format!("{:.5}_{:.5}_z{}_s{}.png", self.lat, self.lng, self.zoom, self.size)
    }
}

/// Raw tile bytes (PNG or JPEG) for a request.
pub trait TileSource: Send + Sync {
    fn id(&self) -> String;
    fn load(&self, req: &TileRequest) -> Result<Vec<u8>>;
}

/// Minimal blocking HTTP GET; returns status and body.
pub trait HttpGet: Send + Sync {
    fn get(&self, url: &str, timeout: Duration) -> Result<(u16, Vec<u8>)>;
}

pub struct UreqHttp;

impl HttpGet for UreqHttp {
    fn get(&self, url: &str, timeout: Duration) -> Result<(u16, Vec<u8>)> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let map_err = |e: ureq::Error| match e {
            ureq::Error::Timeout(_) => Error::Timeout(timeout),
            other => Error::Provider { status: None, message: other.to_string() },
        };
        let mut resp = agent.get(url).call().map_err(map_err)?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().with_config().limit(64 << 20).read_to_vec().map_err(map_err)?;
        Ok((status, body))
    }
}

pub struct FixtureDirectory {
    dir: PathBuf,
}

impl FixtureDirectory {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(Error::Config(format!("fixture directory `{}` does not exist", dir.display())));
        }
        Ok(Self { dir })
    }
}

impl TileSource for FixtureDirectory {
    fn id(&self) -> String {
        "fixture_directory".into()
    }

    fn load(&self, req: &TileRequest) -> Result<Vec<u8>> {
        let name = req.canonical_name();
        match std::fs::read(self.dir.join(&name)) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::NotFound(name)),
            Err(e) => Err(e.into()),
        }
    }
}

pub struct UrlTemplate {
    template: String,
    key: Option<String>,
    timeout: Duration,
    http: Box<dyn HttpGet>,
}

impl UrlTemplate {
    pub fn new(template: impl Into<String>, key: Option<String>, timeout: Duration, http: Box<dyn HttpGet>) -> Result<Self> {
        let template = template.into();
        for p in ["{lat}", "{lng}", "{zoom}", "{size}"] {
            if !template.contains(p) {
                return Err(Error::Config(format!("tile URL template is missing the {p} placeholder")));
            }
        }
        Ok(Self { template, key, timeout, http })
    }

    pub fn url_for(&self, req: &TileRequest) -> String {
        self.template
            .replace("{lat}", &format!("{:.6}", req.lat))
            .replace("{lng}", &format!("{:.6}", req.lng))
            .replace("{zoom}", &req.zoom.to_string())
            .replace("{size}", &req.size.to_string())
            .replace("{key}", self.key.as_deref().unwrap_or(""))
    }
}

impl TileSource for UrlTemplate {
    fn id(&self) -> String {
        "url_template".into()
    }

    fn load(&self, req: &TileRequest) -> Result<Vec<u8>> {
        let (status, body) = self.http.get(&self.url_for(req), self.timeout)?;
        if status != 200 {
            return Err(Error::Provider { status: Some(status), message: "unexpected HTTP status".into() });
        }
        Ok(body)
    }
}

/// Provider settings as they appear in configuration.
#[derive(Clone, Debug, PartialEq)]
pub enum Provider {
    FixtureDirectory(PathBuf),
    UrlTemplate { template: String, key: Option<String>, timeout: Duration },
}

impl Provider {
    /// URL provider from `ROOFSOLAR_TILE_URL` / `ROOFSOLAR_TILE_KEY`.
    pub fn from_env() -> Option<Self> {
        let template = std::env::var(ENV_TILE_URL).ok()?;
        Some(Provider::UrlTemplate { template, key: std::env::var(ENV_TILE_KEY).ok(), timeout: DEFAULT_TIMEOUT })
    }

    pub fn id(&self) -> &'static str {
        match self {
            Provider::FixtureDirectory(_) => "fixture_directory",
            Provider::UrlTemplate { .. } => "url_template",
        }
    }

    pub fn into_source(self, http: Box<dyn HttpGet>) -> Result<Box<dyn TileSource>> {
        Ok(match self {
            Provider::FixtureDirectory(dir) => Box::new(FixtureDirectory::new(dir)?),
            Provider::UrlTemplate { template, key, timeout } => Box::new(UrlTemplate::new(template, key, timeout, http)?),
        })
    }
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Disk cache of canonical PNG bytes keyed by the canonical tile name.
#[derive(Clone, Debug)]
pub struct TileCache {
    dir: Option<PathBuf>,
}

impl TileCache {
    /// Cache under `dir`; disabled with a warning when it cannot be created.
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        let dir = dir.into();
        match std::fs::create_dir_all(&dir) {
            Ok(()) => Self { dir: Some(dir) },
            Err(e) => {
                log::warn!("tile cache disabled: cannot create `{}`: {e}", dir.display());
                Self { dir: None }
            }
        }
    }

    pub fn from_env() -> Self {
        Self::new(std::env::var_os(ENV_CACHE).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR)))
    }

    pub fn disabled() -> Self {
        Self { dir: None }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn get(&self, req: &TileRequest) -> Option<Vec<u8>> {
        std::fs::read(self.dir.as_ref()?.join(req.canonical_name())).ok()
    }

    /// Atomic write: temp file in the cache directory, then rename.
    pub fn put(&self, req: &TileRequest, png: &[u8]) {
        let Some(dir) = &self.dir else { return };
        let target = dir.join(req.canonical_name());
        let tmp = dir.join(format!(
            ".{}.{}.{}.tmp",
            req.canonical_name(),
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let res = std::fs::write(&tmp, png).and_then(|_| std::fs::rename(&tmp, &target));
        if let Err(e) = res {
            let _ = std::fs::remove_file(&tmp);
            log::warn!("tile cache write failed for `{}`: {e}", target.display());
        }
    }
}

pub struct TileFetcher {
    source: Box<dyn TileSource>,
    cache: TileCache,
}

impl TileFetcher {
    pub fn new(source: Box<dyn TileSource>, cache: TileCache) -> Self {
        Self { source, cache }
    }

    pub fn source_id(&self) -> String {
        self.source.id()
    }

    /// Cached tile if present, otherwise load, decode, cache as PNG, return.
    pub fn fetch(&self, req: &TileRequest) -> Result<RgbImage> {
        if let Some(bytes) = self.cache.get(req) {
            match decode_rgb(&bytes) {
                Ok(img) => return Ok(img),
                Err(e) => log::warn!("ignoring unreadable cache entry {}: {e}", req.canonical_name()),
            }
        }
        let raw = self.source.load(req)?;
        let img = decode_rgb(&raw).map_err(|e| Error::Provider { status: None, message: format!("cannot decode tile: {e}") })?;
        self.cache.put(req, &encode_png_rgb(&img)?);
        Ok(img)
    }
}
