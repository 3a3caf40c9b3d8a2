use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use roofsolar::edges::{adaptive_canny, compare_edge_detectors, detector_outputs};
use roofsolar::fixtures::corpus;
use roofsolar::geometry::{cluster_lines, hough_lines, region_fill};
use roofsolar::pipeline::{
    analyze, analyze_batch, exit_code, render_overlay, to_canonical_json, verify, write_outputs, AnalysisInput,
    PipelineConfig, EXIT_FAILURE, EXIT_PARAMS, REPORT_FILE,
};
use roofsolar::placement::{ground_resolution, layout_stats, orientation_angle, place_panels_for, PatchShape};
use roofsolar::raster::io::{gray_to_rgb, read_gray, read_mask, read_rgb, write_gray, write_indexed_labels, write_mask, write_rgb};
use roofsolar::raster::{bilateral_filter, histogram, otsu_threshold};
use roofsolar::regionseg::{snake_roof_segment_with, watershed_segment_with};
use roofsolar::texture::{fit_gmm2, gabor_response, gmm_segment};
use roofsolar::tiles::{TileCache, TileFetcher, TileRequest, UreqHttp};
use roofsolar::{Error, Result};

#[derive(Parser)]
#[command(name = "roofsolar", version, about = "Rooftop segmentation and solar panel placement")]
struct Cli {
    /// Pipeline configuration file (flat `key = value`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: segment, place panels, write report and overlay.
    Analyze(AnalyzeArgs),
    /// Download or resolve one tile.
    Fetch(FetchArgs),
    /// Region segmentation by watershed, snake or two-Gaussian mixture.
    Segment(SegmentArgs),
    /// Run every edge detector; score them against a truth mask if given.
    Edges(EdgesArgs),
    /// Gabor response and two-Gaussian histogram fit.
    Texture(ImageOut),
    /// Hough lines reduced by K-means, then region-based polygon fill.
    Polygon(PolygonArgs),
    /// Place panels on an existing mask.
    Place(PlaceArgs),
    /// Write synthetic scenes with ground truth.
    Fixtures(FixturesArgs),
    /// Recompute a report from its mask, layout and config files.
    Verify { dir: PathBuf },
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long, conflicts_with = "batch")]
    image: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    lat: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    lng: Option<f64>,
    #[arg(long)]
    zoom: Option<u32>,
    /// Analyze every image in a directory, one output folder each.
    #[arg(long)]
    batch: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FetchArgs {
    #[arg(long, allow_negative_numbers = true)]
    lat: f64,
    #[arg(long, allow_negative_numbers = true)]
    lng: f64,
    #[arg(long)]
    zoom: Option<u32>,
    #[arg(long)]
    size: Option<u32>,
    /// Resolve tiles from this directory instead of the configured provider.
    #[arg(long)]
    fixture_dir: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Watershed,
    Snake,
    Gmm,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long, value_enum, default_value = "watershed")]
    method: Method,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ImageOut {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EdgesArgs {
    #[arg(long)]
    image: PathBuf,
    /// Boundary truth mask; enables the precision/recall CSV.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PolygonArgs {
    #[arg(long)]
    image: PathBuf,
    /// Number of clustered lines.
    #[arg(long)]
    lines: Option<usize>,
    /// Region mean threshold; defaults to Otsu of the input.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlaceArgs {
    #[arg(long)]
    mask: PathBuf,
    /// Overlay base; the mask itself when omitted.
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    lat: Option<f64>,
    #[arg(long)]
    zoom: Option<u32>,
    #[arg(long, allow_negative_numbers = true)]
    angle: Option<f64>,
    #[arg(long)]
    gap: Option<usize>,
    #[arg(long)]
    panel_w_m: Option<f64>,
    #[arg(long)]
    panel_h_m: Option<f64>,
    #[arg(long)]
    watts: Option<f64>,
    /// Comma-separated shapes such as `5x1,4x1,3x1`.
    #[arg(long)]
    shapes: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FixturesArgs {
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_canonical_json(value)?)?;
    Ok(())
}

fn run_analyze(a: AnalyzeArgs, mut cfg: PipelineConfig) -> Result<()> {
    if let Some(z) = a.zoom {
        cfg.zoom = z;
    }
    if let Some(dir) = a.batch {
        let results = analyze_batch(&dir, &cfg, &a.out)?;
        let mut failed = 0;
        for (path, res) in &results {
            match res {
                Ok(r) => println!("{}: {} cells, {:.3} kW", path.display(), r.panel_cells, r.capacity_kw),
                Err(e) => {
                    failed += 1;
                    eprintln!("{}: {e}", path.display());
                }
            }
        }
        info!("batch finished: {} ok, {failed} failed", results.len() - failed);
        return Ok(());
    }
    let input = match (a.image, a.lat, a.lng) {
        (Some(path), lat, lng) => {
            let location = match (lat, lng) {
                (Some(lat), Some(lng)) => Some((lat, lng)),
                (None, None) => None,
                _ => return Err(Error::Parameter("--lat and --lng must be given together".into())),
            };
            AnalysisInput::Image { path, location }
        }
        (None, Some(lat), Some(lng)) => AnalysisInput::Coordinates { lat, lng },
        _ => return Err(Error::Parameter("give --image, --lat with --lng, or --batch".into())),
    };
    let analysis = analyze(&input, &cfg, None)?;
    let path = write_outputs(&analysis, &a.out)?;
    let r = &analysis.report;
    println!(
        "usable {:.1} m2, {} cells in {} patches, {:.3} kW, {:.0} kWh/yr, coverage {:.3}",
        r.usable_area_m2, r.panel_cells, r.patches, r.capacity_kw, r.annual_kwh, r.coverage_ratio
    );
    println!("report: {}", path.display());
    Ok(())
}

fn run_fetch(a: FetchArgs, cfg: PipelineConfig) -> Result<()> {
    let req = TileRequest::new(a.lat, a.lng, a.zoom.unwrap_or(cfg.zoom), a.size.unwrap_or(cfg.size))?;
    let provider = match a.fixture_dir {
        Some(dir) => roofsolar::tiles::Provider::FixtureDirectory(dir),
        None => cfg.tile_provider()?,
    };
    let fetcher = TileFetcher::new(provider.into_source(Box::new(UreqHttp))?, TileCache::from_env());
    let img = fetcher.fetch(&req)?;
    write_rgb(&a.out, &img)?;
    println!("{} -> {}", req.canonical_name(), a.out.display());
    Ok(())
}

fn run_segment(a: SegmentArgs, cfg: PipelineConfig) -> Result<()> {
    let img = read_gray(&a.image)?;
    std::fs::create_dir_all(&a.out)?;
    match a.method {
        Method::Watershed => {
            let labels = watershed_segment_with(&img, &cfg.watershed_params())?;
            write_indexed_labels(a.out.join("labels.png"), labels.width, labels.height, &labels.labels)?;
            println!("{} objects", labels.object_count());
        }
        Method::Snake => {
            let contour = snake_roof_segment_with(&img, &cfg.snake_params())?;
            let fill = roofsolar::geometry::pixel_fill(&contour, img.width(), img.height())?;
            write_json(&a.out.join("contour.json"), &contour.points())?;
            write_mask(a.out.join("mask.png"), &fill)?;
            println!("{} contour points, area {}", contour.len(), contour.area());
        }
        Method::Gmm => {
            let model = fit_gmm2(&histogram(&img), 200, 1e-6)?;
            write_mask(a.out.join("mask.png"), &gmm_segment(&img, &model, false))?;
            write_json(&a.out.join("model.json"), &model.to_flat_json())?;
            println!("threshold {:.2}", model.decision_threshold());
        }
    }
    Ok(())
}

fn run_edges(a: EdgesArgs, cfg: PipelineConfig) -> Result<()> {
    let img = read_gray(&a.image)?;
    std::fs::create_dir_all(&a.out)?;
    for (name, mask) in detector_outputs(&img, cfg.canny_k)? {
        write_mask(a.out.join(format!("edges_{name}.png")), &mask)?;
    }
    if let Some(t) = a.truth {
        let truth = read_mask(t)?;
        let mut csv = String::from("detector,precision,recall,f1\n");
        for s in compare_edge_detectors(&img, &truth)? {
            csv.push_str(&format!("{},{:.6},{:.6},{:.6}\n", s.detector, s.precision, s.recall, s.f1));
        }
        std::fs::write(a.out.join("scores.csv"), &csv)?;
        print!("{csv}");
    }
    Ok(())
}

fn run_texture(a: ImageOut, cfg: PipelineConfig) -> Result<()> {
    let img = read_gray(&a.image)?;
    std::fs::create_dir_all(&a.out)?;
    let resp = gabor_response(&img, &cfg.gabor_params())?;
    let max = resp.max();
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    write_gray(a.out.join("response.png"), &resp.map(|v| v * scale).to_gray_clipped())?;
    let model = fit_gmm2(&histogram(&img), 200, 1e-6)?;
    write_json(&a.out.join("model.json"), &model.to_flat_json())?;
    println!("{}", model.to_flat_json());
    Ok(())
}

fn run_polygon(a: PolygonArgs, cfg: PipelineConfig) -> Result<()> {
    let img = read_gray(&a.image)?;
    std::fs::create_dir_all(&a.out)?;
    let smooth = bilateral_filter(&img, cfg.bilateral_sigma_spatial, cfg.bilateral_sigma_range, cfg.bilateral_radius)?;
    let edges = adaptive_canny(&smooth, cfg.canny_k);
    let lines = hough_lines(&edges.mask, cfg.hough_votes_min);
    if lines.len() < 2 {
        return Err(Error::NoRoofFound(format!("only {} Hough lines above {} votes", lines.len(), cfg.hough_votes_min)));
    }
    let clusters = cluster_lines(&lines, a.lines.unwrap_or(cfg.k_lines))?;
    let t = a.threshold.or(cfg.region_threshold).unwrap_or_else(|| f64::from(otsu_threshold(&smooth)));
    let mask = region_fill(&smooth, &clusters.lines, t)?;
    write_mask(a.out.join("mask.png"), &mask)?;
    write_json(&a.out.join("lines.json"), &clusters.lines)?;
    println!("{} lines, threshold {t:.1}, {} px filled", clusters.lines.len(), mask.count());
    Ok(())
}

fn run_place(a: PlaceArgs, mut cfg: PipelineConfig) -> Result<()> {
    let mask = read_mask(&a.mask)?;
    if let Some(v) = a.panel_w_m {
        cfg.panel_width_m = v;
    }
    if let Some(v) = a.panel_h_m {
        cfg.panel_height_m = v;
    }
    if let Some(v) = a.watts {
        cfg.panel_watts = v;
    }
    if let Some(v) = a.gap {
        cfg.gap_px = v;
    }
    if let Some(s) = &a.shapes {
        cfg.patch_shapes = s.split(',').map(|v| v.trim().parse()).collect::<Result<Vec<PatchShape>>>()?;
    }
    if a.angle.is_some() {
        cfg.angle_override = a.angle;
    }
    cfg.validate()?;
    let lat = a.lat.unwrap_or(cfg.default_lat);
    let mpp = ground_resolution(lat, a.zoom.unwrap_or(cfg.zoom))?;
    let orientation = orientation_angle(lat, cfg.angle_override)?;
    let spec = cfg.panel_spec()?;
    let layout = place_panels_for(&mask, &spec, mpp, orientation.angle_deg, cfg.gap_px)?;
    let stats = layout_stats(&layout, mpp, &spec, &cfg.energy_model());
    let base = match &a.image {
        Some(p) => read_rgb(p)?,
        None => gray_to_rgb(&mask.to_gray()),
    };
    std::fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("layout.json"), &layout)?;
    write_json(&a.out.join("stats.json"), &stats)?;
    write_rgb(a.out.join("overlay.png"), &render_overlay(&base, &mask, &layout)?)?;
    println!("{} cells in {} patches, {:.3} kW", stats.cells, layout.patches.len(), stats.capacity_kw);
    Ok(())
}

fn run_fixtures(a: FixturesArgs) -> Result<()> {
    std::fs::create_dir_all(&a.out)?;
    for scene in corpus(a.n, a.seed)? {
        write_gray(a.out.join(format!("scene_{}.png", scene.seed)), &scene.image)?;
        write_mask(a.out.join(format!("truth_{}.png", scene.seed)), &scene.truth)?;
    }
    println!("{} scenes written to {}", a.n, a.out.display());
    Ok(())
}

fn run_verify(dir: &Path) -> Result<bool> {
    let v = verify(dir)?;
    for c in &v.checks {
        println!("{} {}: {}", if c.ok { "ok  " } else { "FAIL" }, c.name, c.detail);
    }
    if !v.ok() {
        warn!("{} does not match its artifacts", dir.join(REPORT_FILE).display());
    }
    Ok(v.ok())
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Analyze(a) => run_analyze(a, cfg)?,
        Command::Fetch(a) => run_fetch(a, cfg)?,
        Command::Segment(a) => run_segment(a, cfg)?,
        Command::Edges(a) => run_edges(a, cfg)?,
        Command::Texture(a) => run_texture(a, cfg)?,
        Command::Polygon(a) => run_polygon(a, cfg)?,
        Command::Place(a) => run_place(a, cfg)?,
        Command::Fixtures(a) => run_fixtures(a)?,
        Command::Verify { dir } => return run_verify(&dir),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_PARAMS as u8) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAILURE as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
