//! Monte Carlo forward projection through the pinhole modules.
//!
//! Emission indices `0..total_emissions` are split evenly over the views
//! (equal acquisition time per view). Each emission in a view sends one ray
//! toward a uniformly chosen pinhole of that view, through a uniform point
//! of the pinhole's aperture disk. Rays steeper than half the pinhole
//! acceptance angle are absorbed by the channel walls, rays landing in a
//! neighbouring pinhole's detector cell are absorbed by the septum, and the
//! rest increment the pixel they hit.

use std::f64::consts::TAU;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Fingerprint, ModulePose, ModuleSpec, ScanPlan, Vec3};
use crate::phantom::{EmissionSampler, Phantom, PhantomError};
use crate::rng::{self, BLOCK, DOMAIN_RAY};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectionError {
    #[error("view index {view} out of range ({views} views)")]
    ViewOutOfRange { view: usize, views: usize },
    #[error(transparent)]
    Phantom(#[from] PhantomError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionImage {
    pub view_index: usize,
    pub module_index: usize,
    pub rows: usize,
    pub cols: usize,
    /// Row-major, row 0 lowest.
    pub counts: Vec<u32>,
    pub pixel_pitch: f64,
}

impl ProjectionImage {
    pub fn zeros(view_index: usize, module_index: usize, module: &ModuleSpec) -> Self {
        let (rows, cols) = module.detector_shape();
        ProjectionImage {
            view_index,
            module_index,
            rows,
            cols,
            counts: vec![0; rows * cols],
            pixel_pitch: module.pixel_pitch(),
        }
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.counts[row * self.cols + col]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }
}

/// Every (view, module) image of one acquisition, view-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    pub plan_fingerprint: Fingerprint,
    pub seed: u64,
    pub total_emissions: u64,
    pub num_views: usize,
    pub num_modules: usize,
    pub images: Vec<ProjectionImage>,
}

impl ProjectionSet {
    /// Digest of the producing plan together with the seed.
    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint::of_bytes(&[
            b"projection-set/v1",
            self.plan_fingerprint.0.as_bytes(),
            &self.seed.to_le_bytes(),
            &self.total_emissions.to_le_bytes(),
        ])
    }

    pub fn view_images(&self, view: usize) -> &[ProjectionImage] {
        &self.images[view * self.num_modules..(view + 1) * self.num_modules]
    }

    pub fn total_counts(&self) -> u64 {
        self.images.iter().map(ProjectionImage::total).sum()
    }

    /// Same set with every count multiplied by `factor`.
    pub fn scaled(&self, factor: u32) -> Self {
        let mut out = self.clone();
        for img in &mut out.images {
            for c in &mut img.counts {
                *c *= factor;
            }
        }
        out
    }
}

/// Where the rays of one view ended up.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RayStats {
    pub emitted: u64,
    pub culled: u64,
    pub outside_fov: u64,
    pub septal: u64,
    pub off_detector: u64,
    pub counted: u64,
}

impl RayStats {
    fn merge(mut self, o: RayStats) -> RayStats {
        self.emitted += o.emitted;
        self.culled += o.culled;
        self.outside_fov += o.outside_fov;
        self.septal += o.septal;
        self.off_detector += o.off_detector;
        self.counted += o.counted;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimulateOptions {
    /// Skip emissions no pinhole of the view can see before tracing.
    pub cull: bool,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        SimulateOptions { cull: true }
    }
}

/// Half-open emission index range assigned to `view`.
pub fn view_emission_range(total: u64, views: usize, view: usize) -> (u64, u64) {
    let n = views as u128;
    let t = total as u128;
    let lo = (t * view as u128 / n) as u64;
    let hi = (t * (view as u128 + 1) / n) as u64;
    (lo, hi)
}

struct ViewFrame<'a> {
    poses: &'a [ModulePose],
    module: &'a ModuleSpec,
    pinholes: Vec<(f64, f64)>,
    tan_half_fov: f64,
    aperture_radius: f64,
    /// Half extents of the pinhole-center rectangle.
    lattice_half: (f64, f64),
    shape: (usize, usize),
}

impl<'a> ViewFrame<'a> {
    fn new(plan: &'a ScanPlan, view: usize) -> Self {
        let module = &plan.module;
        let pinholes = module.pinhole_offsets();
        let pitch = module.pinholes.pitch;
        ViewFrame {
            poses: plan.view_poses(view),
            module,
            tan_half_fov: module.pinholes.half_fov_tan(),
            aperture_radius: module.pinholes.radius(),
            lattice_half: (
                0.5 * (module.pinhole_columns() as f64 - 1.0) * pitch,
                0.5 * (module.pinholes.rows() as f64 - 1.0) * pitch,
            ),
            shape: module.detector_shape(),
            pinholes,
        }
    }

    fn retains(&self, p: &Vec3) -> bool {
        self.poses.iter().any(|pose| {
            let q = pose.to_plate(p);
            if q.z <= 0.0 {
                return false;
            }
            let dx = (q.x.abs() - self.lattice_half.0).max(0.0);
            let dy = (q.y.abs() - self.lattice_half.1).max(0.0);
            let reach = q.z * self.tan_half_fov + self.aperture_radius;
            dx * dx + dy * dy <= reach * reach * (1.0 + 1e-12)
        })
    }
}

enum Fate {
    Culled,
    Lost(RayOutcome),
    Hit(usize),
}

/// Fate of a single ray through one pinhole.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RayOutcome {
    /// Steeper than half the pinhole's field of view, or not in front of the plate.
    OutsideFov,
    /// Lands behind a different pinhole.
    Septal,
    OffDetector,
    Hit {
        row: usize,
        col: usize,
    },
}

/// Where the ray from `source` (plate frame, see [`ModulePose::to_plate`])
/// through the aperture point `aperture` of pinhole `pinhole` lands.
///
/// [`ModulePose::to_plate`]: crate::geometry::ModulePose::to_plate
pub fn pinhole_ray_hit(module: &ModuleSpec, pinhole: usize, aperture: (f64, f64), source: &Vec3) -> RayOutcome {
    land(module, module.pinholes.half_fov_tan(), pinhole, aperture, source)
}

fn land(module: &ModuleSpec, tan_half_fov: f64, pin: usize, (au, av): (f64, f64), q: &Vec3) -> RayOutcome {
    if q.z <= 0.0 {
        return RayOutcome::OutsideFov;
    }
    let (du, dv) = (au - q.x, av - q.y);
    if (du * du + dv * dv).sqrt() > q.z * tan_half_fov {
        return RayOutcome::OutsideFov;
    }
    let scale = module.detector_gap / q.z;
    let (hu, hv) = (au + du * scale, av + dv * scale);
    if module.nearest_pinhole(hu, hv) != pin {
        return RayOutcome::Septal;
    }
    match module.pixel_at(hu, hv) {
        Some((row, col)) => RayOutcome::Hit { row, col },
        None => RayOutcome::OffDetector,
    }
}

impl ViewFrame<'_> {
    fn cast(&self, p: &Vec3, draws: [f64; 3], cull: bool) -> Fate {
        if cull && !self.retains(p) {
            return Fate::Culled;
        }
        let per_module = self.pinholes.len();
        let pick =
            ((draws[0] * (self.poses.len() * per_module) as f64) as usize).min(self.poses.len() * per_module - 1);
        let (m, pin) = (pick / per_module, pick % per_module);
        let pose = &self.poses[m];
        let q = pose.to_plate(p);
        let r = self.aperture_radius * draws[1].sqrt();
        let phi = TAU * draws[2];
        let (pu, pv) = self.pinholes[pin];
        match land(self.module, self.tan_half_fov, pin, (pu + r * phi.cos(), pv + r * phi.sin()), &q) {
            RayOutcome::Hit { row, col } => Fate::Hit(m * self.shape.0 * self.shape.1 + row * self.shape.1 + col),
            lost => Fate::Lost(lost),
        }
    }
}

/// Keep the emission points that at least one pinhole of the view could
/// accept. Conservative: nothing that can produce a count is removed.
pub fn cull_emissions(points: &[Vec3], plan: &ScanPlan, view: usize) -> Vec<Vec3> {
    let frame = ViewFrame::new(plan, view);
    points.iter().copied().filter(|p| frame.retains(p)).collect()
}

pub fn simulate_view(
    plan: &ScanPlan,
    phantom: &Phantom,
    view: usize,
    seed: u64,
) -> Result<Vec<ProjectionImage>, ProjectionError> {
    simulate_view_with(plan, phantom, view, seed, SimulateOptions::default()).map(|(imgs, _)| imgs)
}

pub fn simulate_view_with(
    plan: &ScanPlan,
    phantom: &Phantom,
    view: usize,
    seed: u64,
    options: SimulateOptions,
) -> Result<(Vec<ProjectionImage>, RayStats), ProjectionError> {
    let views = plan.num_views();
    if view >= views {
        return Err(ProjectionError::ViewOutOfRange { view, views });
    }
    let sampler = EmissionSampler::new(phantom, seed)?;
    let frame = ViewFrame::new(plan, view);
    let (lo, hi) = view_emission_range(phantom.total_emissions, views, view);
    let b = BLOCK as u64;

    let blocks: Vec<u64> = if hi > lo { (lo / b..=(hi - 1) / b).collect() } else { Vec::new() };
    let partials: Vec<(Vec<usize>, RayStats)> = blocks
        .par_iter()
        .map(|&blk| {
            let start = lo.max(blk * b);
            let end = hi.min((blk + 1) * b);
            let points = sampler.range(start, end);
            let mut rng = rng::stream(seed, &[DOMAIN_RAY, view as u64, blk]);
            // the stream is indexed from the block start, so skip what
            // belongs to the neighbouring view
            for _ in blk * b..start {
                let _: [f64; 3] = rng.gen();
            }
            let mut hits = Vec::new();
            let mut stats = RayStats::default();
            for p in &points {
                let draws: [f64; 3] = rng.gen();
                stats.emitted += 1;
                match frame.cast(p, draws, options.cull) {
                    Fate::Culled => stats.culled += 1,
                    Fate::Lost(RayOutcome::OutsideFov) => stats.outside_fov += 1,
                    Fate::Lost(RayOutcome::Septal) => stats.septal += 1,
                    Fate::Lost(_) => stats.off_detector += 1,
                    Fate::Hit(i) => {
                        stats.counted += 1;
                        hits.push(i);
                    }
                }
            }
            (hits, stats)
        })
        .collect();

    let n_mod = plan.num_modules();
    let mut images: Vec<ProjectionImage> = (0..n_mod).map(|m| ProjectionImage::zeros(view, m, &plan.module)).collect();
    let per_image = frame.shape.0 * frame.shape.1;
    let mut stats = RayStats::default();
    for (hits, s) in partials {
        stats = stats.merge(s);
        for i in hits {
            images[i / per_image].counts[i % per_image] += 1;
        }
    }
    Ok((images, stats))
}

/// Simulate every view of the plan.
pub fn simulate_all(plan: &ScanPlan, phantom: &Phantom, seed: u64) -> Result<ProjectionSet, ProjectionError> {
    simulate_all_with(plan, phantom, seed, SimulateOptions::default()).map(|(set, _)| set)
}

pub fn simulate_all_with(
    plan: &ScanPlan,
    phantom: &Phantom,
    seed: u64,
    options: SimulateOptions,
) -> Result<(ProjectionSet, RayStats), ProjectionError> {
    phantom.validate()?;
    let per_view: Vec<_> = (0..plan.num_views())
        .into_par_iter()
        .map(|v| simulate_view_with(plan, phantom, v, seed, options))
        .collect::<Result<_, _>>()?;
    let mut images = Vec::with_capacity(plan.poses.len());
    let mut stats = RayStats::default();
    for (imgs, s) in per_view {
        images.extend(imgs);
        stats = stats.merge(s);
    }
    Ok((
        ProjectionSet {
            plan_fingerprint: plan.fingerprint(),
            seed,
            total_emissions: phantom.total_emissions,
            num_views: plan.num_views(),
            num_modules: plan.num_modules(),
            images,
        },
        stats,
    ))
}
