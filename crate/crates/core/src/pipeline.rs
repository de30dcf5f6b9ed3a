//! Stage orchestration behind the command line tool.
//!
//! A run directory holds one subdirectory per stage:
//!
//! ```text
//! <out>/plan/          plan.txt, plan.csv
//! <out>/phantom/       truth.raw + truth.json
//! <out>/projections/   viewVVV_moduleMM.raw + .json, projections.json
//! <out>/recon/         volume.raw + volume.json, optional halfmax mask and slices
//! <out>/analysis/      profile_<axis>.csv, fit_<axis>.json, mtf_<axis>.csv, report.json
//! ```
//!
//! Every stage directory also gets `manifest.json` and `config.toml`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, AnalysisError, Axis, GaussianFit};
use crate::config::{ConfigError, ExperimentConfig};
use crate::geometry::{pinhole_fov, Fingerprint, ScanPlan, Vec3};
use crate::io::{self, IoError, Manifest, SlicePlane, VOLUME_STEM};
use crate::projector::{self, ProjectionError, ProjectionSet, RayStats};
use crate::recon::{self, ReconError, VoxelVolume};
use crate::siddon::{self, RaySegment, VoxelGrid};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PRECONDITION: i32 = 3;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{stage}: {source}")]
    Precondition { stage: Stage, source: IoError },
    #[error("{stage}: input was produced by plan {found} but the config describes plan {expected}")]
    FingerprintMismatch { stage: Stage, expected: Fingerprint, found: Fingerprint },
    #[error("--workers must be at least 1")]
    Workers,
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Recon(#[from] ReconError),
    #[error("{axis:?} profile: {source}")]
    Analysis { axis: Axis, source: AnalysisError },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Workers => EXIT_CONFIG,
            PipelineError::Precondition { .. } | PipelineError::FingerprintMismatch { .. } => EXIT_PRECONDITION,
            _ => EXIT_FAILURE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Plan,
    Simulate,
    Reconstruct,
    Analyze,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Plan, Stage::Simulate, Stage::Reconstruct, Stage::Analyze];

    pub fn dir_name(self) -> &'static str {
        match self {
            Stage::Plan => "plan",
            Stage::Simulate => "projections",
            Stage::Reconstruct => "recon",
            Stage::Analyze => "analysis",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Plan => "plan",
            Stage::Simulate => "simulate",
            Stage::Reconstruct => "reconstruct",
            Stage::Analyze => "analyze",
        })
    }
}

/// Replace the seed and/or center shift and re-validate.
pub fn apply_overrides(
    mut cfg: ExperimentConfig,
    seed: Option<u64>,
    shift: Option<f64>,
) -> Result<ExperimentConfig, ConfigError> {
    if let Some(seed) = seed {
        cfg.phantom.seed = seed;
    }
    if let Some(shift) = shift {
        cfg.geometry.center_shift = shift;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Run `f` on a pool of `workers` threads, or on the global pool.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, PipelineError> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(PipelineError::Workers),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().expect("thread pool construction");
            Ok(pool.install(f))
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub workers: Option<usize>,
    pub previews: bool,
    pub threshold_halfmax: bool,
    pub slices: bool,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        RunOptions { out_dir: out_dir.into(), workers: None, previews: false, threshold_halfmax: false, slices: false }
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.out_dir.join(stage.dir_name())
    }
}

/// The closed-form quantities of a configured system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub coverage_deg: f64,
    pub num_views: usize,
    pub step_deg: f64,
    pub detector_gap_mm: f64,
    pub min_detector_gap_mm: f64,
    pub fov_deg: f64,
    pub num_modules: usize,
    pub pinholes_per_module: usize,
    pub detector_shape: (usize, usize),
    pub fingerprint: Fingerprint,
}

impl PlanReport {
    pub fn new(plan: &ScanPlan) -> Self {
        let p = &plan.module.pinholes;
        PlanReport {
            coverage_deg: plan.coverage(),
            num_views: plan.num_views(),
            step_deg: plan.step_angle(),
            detector_gap_mm: plan.module.detector_gap,
            min_detector_gap_mm: p.min_detector_gap(),
            fov_deg: pinhole_fov(p.diameter, p.plate_thickness).unwrap_or(f64::NAN),
            num_modules: plan.num_modules(),
            pinholes_per_module: plan.module.pinhole_count(),
            detector_shape: plan.module.detector_shape(),
            fingerprint: plan.fingerprint(),
        }
    }

    fn rows(&self) -> [(&'static str, &'static str, String, &'static str); 5] {
        [
            ("coverage angle", "phi", format!("{:.6}", self.coverage_deg), "deg"),
            ("view angles", "n", self.num_views.to_string(), "-"),
            ("module step angle", "theta", format!("{:.6}", self.step_deg), "deg"),
            ("pinhole-detector gap", "h", format!("{:.6}", self.min_detector_gap_mm), "mm"),
            ("pinhole field of view", "alpha", format!("{:.6}", self.fov_deg), "deg"),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:<24}{:<8}{:>14}  {}\n", "quantity", "symbol", "value", "unit");
        for (name, sym, val, unit) in self.rows() {
            s += &format!("{name:<24}{sym:<8}{val:>14}  {unit}\n");
        }
        s += &format!(
            "\n{} modules x {} pinholes, detector {}x{} px, detector gap {:.6} mm\nplan fingerprint {}\n",
            self.num_modules,
            self.pinholes_per_module,
            self.detector_shape.0,
            self.detector_shape.1,
            self.detector_gap_mm,
            self.fingerprint
        );
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("quantity,symbol,value,unit\n");
        for (name, sym, val, unit) in self.rows() {
            s += &format!("{name},{sym},{val},{unit}\n");
        }
        s
    }
}

pub fn run_plan(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<PlanReport, PipelineError> {
    let plan = cfg.plan()?;
    let report = PlanReport::new(&plan);
    let dir = opts.stage_dir(Stage::Plan);
    io::write_bytes(&dir.join("plan.txt"), report.to_text().as_bytes())?;
    io::write_bytes(&dir.join("plan.csv"), report.to_csv().as_bytes())?;
    Manifest::new("plan", cfg, &plan, vec!["plan.txt".into(), "plan.csv".into()]).write(&dir)?;
    Ok(report)
}

/// Ground-truth occupancy of the configured phantom, written in the
/// reconstruction volume format.
pub fn run_voxelize(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<usize, PipelineError> {
    let plan = cfg.plan()?;
    let grid = cfg.grid()?;
    let truth = cfg.phantom()?.voxelize(&grid);
    let volume = VoxelVolume { grid, values: truth.iter().map(|&b| f64::from(u8::from(b))).collect() };
    let dir = opts.out_dir.join("phantom");
    let files = io::write_volume(&dir, "truth", &volume, &plan.fingerprint())?;
    Manifest::new("phantom voxelize", cfg, &plan, files).write(&dir)?;
    Ok(truth.iter().filter(|&&b| b).count())
}

/// Forward projection of the configured phantom, in memory.
pub fn simulate(cfg: &ExperimentConfig) -> Result<(ScanPlan, ProjectionSet, RayStats), PipelineError> {
    let plan = cfg.plan()?;
    let phantom = cfg.phantom()?;
    let (set, stats) = projector::simulate_all_with(&plan, &phantom, cfg.phantom.seed, Default::default())?;
    Ok((plan, set, stats))
}

pub fn run_simulate(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RayStats, PipelineError> {
    let (plan, set, stats) = with_workers(opts.workers, || simulate(cfg))??;
    let dir = opts.stage_dir(Stage::Simulate);
    let mut files = io::write_projection_set(&dir, &set, &plan, opts.previews)?;
    io::write_json(&dir.join("ray_stats.json"), &stats)?;
    files.push("ray_stats.json".into());
    Manifest::new("simulate", cfg, &plan, files).write(&dir)?;
    Ok(stats)
}

fn precondition(stage: Stage) -> impl Fn(IoError) -> PipelineError {
    move |e| match e {
        e @ IoError::Missing(_) => PipelineError::Precondition { stage, source: e },
        e => PipelineError::Io(e),
    }
}

pub fn run_reconstruct(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<VoxelVolume, PipelineError> {
    let plan = cfg.plan()?;
    let grid = cfg.grid()?;
    let set = io::read_projection_set(&opts.stage_dir(Stage::Simulate)).map_err(precondition(Stage::Reconstruct))?;
    let expected = plan.fingerprint();
    if set.plan_fingerprint != expected {
        return Err(PipelineError::FingerprintMismatch {
            stage: Stage::Reconstruct,
            expected,
            found: set.plan_fingerprint,
        });
    }
    let volume = with_workers(opts.workers, || recon::reconstruct(&set, &plan, grid))??;
    let dir = opts.stage_dir(Stage::Reconstruct);
    let mut files = io::write_volume(&dir, VOLUME_STEM, &volume, &expected)?;
    if opts.threshold_halfmax {
        let mask = recon::threshold_half_max(&volume)?;
        files.extend(io::write_mask(&dir, "halfmax", &grid, &mask, &expected)?);
    }
    if opts.slices {
        for (name, plane) in [("slice_xy.pgm", SlicePlane::Xy), ("slice_xz.pgm", SlicePlane::Xz)] {
            io::write_bytes(&dir.join(name), &io::slice_pgm(&volume, plane))?;
            files.push(name.into());
        }
    }
    Manifest::new("reconstruct", cfg, &plan, files).write(&dir)?;
    Ok(volume)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisReport {
    pub axis: Axis,
    pub fit: GaussianFit,
    pub fwhm_mm: f64,
    pub mtf_high_band_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub argmax: [usize; 3],
    pub argmax_mm: [f64; 3],
    pub axes: Vec<AxisReport>,
}

/// Profile, fit and MTF of `volume` along `axis`.
pub fn analyze_axis(
    volume: &VoxelVolume,
    axis: Axis,
) -> Result<(analysis::ProfileCurve, GaussianFit, analysis::MtfCurve), AnalysisError> {
    let profile = analysis::extract_profile(volume, axis)?;
    let fit = analysis::fit_gaussian(&profile)?;
    let mtf = analysis::mtf(&profile, fit.baseline)?;
    Ok((profile, fit, mtf))
}

pub fn analyze_volume(volume: &VoxelVolume, axes: &[Axis]) -> Result<AnalysisReport, PipelineError> {
    let argmax = volume.argmax();
    let mut out = Vec::new();
    for &axis in axes {
        let (_, fit, mtf) = analyze_axis(volume, axis).map_err(|source| PipelineError::Analysis { axis, source })?;
        out.push(AxisReport { axis, fwhm_mm: analysis::fwhm(&fit), mtf_high_band_mean: mtf.high_band_mean(), fit });
    }
    Ok(AnalysisReport { argmax, argmax_mm: volume.grid.voxel_center(argmax).into(), axes: out })
}

fn axis_name(axis: Axis) -> &'static str {
    match axis {
        Axis::X => "x",
        Axis::Y => "y",
        Axis::Z => "z",
    }
}

pub fn run_analyze(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<AnalysisReport, PipelineError> {
    let plan = cfg.plan()?;
    let (volume, found) =
        io::read_volume(&opts.stage_dir(Stage::Reconstruct), VOLUME_STEM).map_err(precondition(Stage::Analyze))?;
    let expected = plan.fingerprint();
    if found != expected {
        return Err(PipelineError::FingerprintMismatch { stage: Stage::Analyze, expected, found });
    }
    let dir = opts.stage_dir(Stage::Analyze);
    let mut files = Vec::new();
    for &axis in &cfg.analysis.axes {
        let (profile, fit, mtf) =
            analyze_axis(&volume, axis).map_err(|source| PipelineError::Analysis { axis, source })?;
        let a = axis_name(axis);

        let mut csv = String::from("position_mm,count\n");
        for (x, y) in profile.positions.iter().zip(&profile.counts) {
            csv += &format!("{x},{y}\n");
        }
        io::write_bytes(&dir.join(format!("profile_{a}.csv")), csv.as_bytes())?;

        #[derive(Serialize)]
        struct FitFile<'a> {
            axis: Axis,
            fit: &'a GaussianFit,
            fwhm_mm: f64,
        }
        io::write_json(
            &dir.join(format!("fit_{a}.json")),
            &FitFile { axis, fit: &fit, fwhm_mm: analysis::fwhm(&fit) },
        )?;

        let mut csv = String::from("freq_cyc_per_mm,magnitude\n");
        for (f, m) in mtf.frequencies.iter().zip(&mtf.magnitude) {
            csv += &format!("{f},{m}\n");
        }
        io::write_bytes(&dir.join(format!("mtf_{a}.csv")), csv.as_bytes())?;

        let model = analysis::gaussian_mtf(&fit, &mtf.frequencies);
        let mut csv = String::from("freq_cyc_per_mm,magnitude\n");
        for (f, m) in model.frequencies.iter().zip(&model.magnitude) {
            csv += &format!("{f},{m}\n");
        }
        io::write_bytes(&dir.join(format!("mtf_fit_{a}.csv")), csv.as_bytes())?;
        for kind in ["profile", "fit", "mtf", "mtf_fit"] {
            let ext = if kind == "fit" { "json" } else { "csv" };
            files.push(format!("{kind}_{a}.{ext}"));
        }
    }
    let report = analyze_volume(&volume, &cfg.analysis.axes)?;
    io::write_json(&dir.join("report.json"), &report)?;
    files.push("report.json".into());
    Manifest::new("analyze", cfg, &plan, files).write(&dir)?;
    Ok(report)
}

/// What [`run_pipeline`] produced.
#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub plan: Option<PlanReport>,
    pub ray_stats: Option<RayStats>,
    pub volume_max: Option<f64>,
    pub analysis: Option<AnalysisReport>,
}

/// Execute the requested stages in pipeline order. A later stage run
/// without its predecessor reads the predecessor's files from `out_dir`.
pub fn run_pipeline(cfg: &ExperimentConfig, stages: &[Stage], opts: &RunOptions) -> Result<RunSummary, PipelineError> {
    let mut stages = stages.to_vec();
    stages.sort();
    stages.dedup();
    let mut summary = RunSummary::default();
    for stage in stages {
        match stage {
            Stage::Plan => summary.plan = Some(run_plan(cfg, opts)?),
            Stage::Simulate => summary.ray_stats = Some(run_simulate(cfg, opts)?),
            Stage::Reconstruct => summary.volume_max = Some(run_reconstruct(cfg, opts)?.max()),
            Stage::Analyze => summary.analysis = Some(run_analyze(cfg, opts)?),
        }
    }
    Ok(summary)
}

/// Simulate and reconstruct without touching the disk.
pub fn simulate_and_reconstruct(cfg: &ExperimentConfig) -> Result<(ProjectionSet, VoxelVolume), PipelineError> {
    let (plan, set, _) = simulate(cfg)?;
    let volume = recon::reconstruct(&set, &plan, cfg.grid()?)?;
    Ok((set, volume))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rays: usize,
    pub grid: usize,
    pub segments: u64,
    pub seconds: f64,
    pub rays_per_second: f64,
}

/// Trace `rays` random chords of a sphere enclosing an `n^3` grid.
pub fn trace_bench(rays: usize, n: usize, seed: u64) -> BenchReport {
    let grid = VoxelGrid::cube(n, n as f64);
    let radius = n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let on_sphere = |rng: &mut ChaCha8Rng| loop {
        let p = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let r2 = p.norm_squared();
        if r2 > 1e-6 && r2 <= 1.0 {
            return p / r2.sqrt() * radius;
        }
    };
    let batch: Vec<RaySegment> = (0..rays).map(|_| RaySegment::new(on_sphere(&mut rng), on_sphere(&mut rng))).collect();
    let start = Instant::now();
    let mut segments = 0u64;
    for ray in &batch {
        let _ = siddon::trace_with(ray, &grid, |_, _| segments += 1);
    }
    let seconds = start.elapsed().as_secs_f64();
    BenchReport { rays, grid: n, segments, seconds, rays_per_second: rays as f64 / seconds.max(1e-12) }
}

/// Stage directory path helper for callers outside the crate.
pub fn stage_dir(out: &Path, stage: Stage) -> PathBuf {
    out.join(stage.dir_name())
}
