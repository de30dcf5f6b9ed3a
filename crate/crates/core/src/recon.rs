//! Unfiltered additive backprojection into a voxel cube.

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{Fingerprint, ScanPlan, Vec3};
use crate::projector::{ProjectionImage, ProjectionSet};
use crate::siddon::{self, RaySegment, TraceError, VoxelGrid};

/// Views backprojected concurrently before their partials are folded in.
const VIEW_BATCH: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReconError {
    #[error("projection set was produced by plan {found}, expected {expected}")]
    FingerprintMismatch { expected: Fingerprint, found: Fingerprint },
    #[error("missing projection image for view {view}, module {module}")]
    MissingImage { view: usize, module: usize },
    #[error("image for view {view}, module {module} does not match the plan: {reason}")]
    ImageMismatch { view: usize, module: usize, reason: String },
    #[error("volume has no positive value")]
    ZeroVolume,
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelVolume {
    pub grid: VoxelGrid,
    /// x-fastest, see [`VoxelGrid::linear`].
    pub values: Vec<f64>,
}

impl VoxelVolume {
    pub fn zeros(grid: VoxelGrid) -> Self {
        VoxelVolume { values: vec![0.0; grid.len()], grid }
    }

    pub fn get(&self, idx: [usize; 3]) -> f64 {
        self.values[self.grid.linear(idx)]
    }

    pub fn add_assign(&mut self, other: &VoxelVolume) {
        debug_assert_eq!(self.grid.dims, other.grid.dims);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the largest value; the first one wins on ties.
    pub fn argmax(&self) -> [usize; 3] {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        self.grid.unlinear(best)
    }
}

/// Owning pinhole of every detector pixel, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelGridAssignment {
    pub owner: Vec<usize>,
}

impl PixelGridAssignment {
    pub fn for_plan(plan: &ScanPlan) -> Self {
        let m = &plan.module;
        let (rows, cols) = m.detector_shape();
        let mut owner = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let (u, v) = m.pixel_offset(r, c);
                owner.push(m.nearest_pinhole(u, v));
            }
        }
        PixelGridAssignment { owner }
    }
}

fn check_image(img: &ProjectionImage, plan: &ScanPlan, view: usize, module: usize) -> Result<(), ReconError> {
    let (rows, cols) = plan.module.detector_shape();
    let mismatch = |reason: String| ReconError::ImageMismatch { view, module, reason };
    if img.view_index != view || img.module_index != module {
        return Err(mismatch(format!("image is labelled view {}, module {}", img.view_index, img.module_index)));
    }
    if img.rows != rows || img.cols != cols || img.counts.len() != rows * cols {
        return Err(mismatch(format!("grid {}x{} but module has {rows}x{cols}", img.rows, img.cols)));
    }
    Ok(())
}

/// Add the backprojection of one view's images to `volume`.
///
/// Every non-zero pixel defines a ray from its center through the center
/// of the pinhole that owns it. From the pinhole on, the ray is continued
/// past the far side of the cube and each crossed voxel gains
/// `length * count`.
pub fn backproject_view(
    images: &[ProjectionImage],
    plan: &ScanPlan,
    view: usize,
    volume: &mut VoxelVolume,
) -> Result<(), ReconError> {
    let assignment = PixelGridAssignment::for_plan(plan);
    backproject_view_with(images, plan, view, volume, &assignment)
}

fn backproject_view_with(
    images: &[ProjectionImage],
    plan: &ScanPlan,
    view: usize,
    volume: &mut VoxelVolume,
    assignment: &PixelGridAssignment,
) -> Result<(), ReconError> {
    let poses = plan.view_poses(view);
    if images.len() != poses.len() {
        let module = images.len().min(poses.len());
        return Err(ReconError::MissingImage { view, module });
    }
    let module = &plan.module;
    let pinholes = module.pinhole_offsets();
    let grid = volume.grid;
    let center = grid.center();
    let half_diag = 0.5 * (grid.max_corner() - grid.origin).norm();
    let cols = module.detector_shape().1;

    for (m, (img, pose)) in images.iter().zip(poses).enumerate() {
        check_image(img, plan, view, m)?;
        let reach = (pose.plate_origin - center).norm() + half_diag;
        for (i, &count) in img.counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let (u, v) = module.pixel_offset(i / cols, i % cols);
            let (pu, pv) = pinholes[assignment.owner[i]];
            let start = pose.detector_point(module.detector_gap, u, v);
            let through = pose.plate_point(pu, pv);
            let dir: Vec3 = (through - start).normalize();
            // only the object side of the pinhole is traced
            let ray = RaySegment::new(through, through + dir * reach);
            let w = f64::from(count);
            siddon::trace_with(&ray, &grid, |lin, len| volume.values[lin] += len * w)?;
        }
    }
    Ok(())
}

/// Sum of the backprojections of every view, folded in view order so the
/// result does not depend on how many threads ran.
pub fn reconstruct(proj: &ProjectionSet, plan: &ScanPlan, grid: VoxelGrid) -> Result<VoxelVolume, ReconError> {
    grid.validate()?;
    let expected = plan.fingerprint();
    if proj.plan_fingerprint != expected {
        return Err(ReconError::FingerprintMismatch { expected, found: proj.plan_fingerprint.clone() });
    }
    let n_mod = plan.num_modules();
    let views = plan.num_views();
    if proj.num_modules != n_mod || proj.images.len() != views * n_mod {
        let have = proj.images.len();
        return Err(ReconError::MissingImage { view: have / n_mod.max(1), module: have % n_mod.max(1) });
    }
    let assignment = PixelGridAssignment::for_plan(plan);
    let mut total = VoxelVolume::zeros(grid);
    let view_ids: Vec<usize> = (0..views).collect();
    for batch in view_ids.chunks(VIEW_BATCH) {
        let partials: Vec<VoxelVolume> = batch
            .par_iter()
            .map(|&v| {
                let mut part = VoxelVolume::zeros(grid);
                backproject_view_with(proj.view_images(v), plan, v, &mut part, &assignment)?;
                Ok(part)
            })
            .collect::<Result<_, ReconError>>()?;
        for p in &partials {
            total.add_assign(p);
        }
    }
    Ok(total)
}

/// Voxels at or above half the volume maximum.
pub fn threshold_half_max(volume: &VoxelVolume) -> Result<Vec<bool>, ReconError> {
    let max = volume.max();
    if !(max > 0.0) {
        return Err(ReconError::ZeroVolume);
    }
    let half = 0.5 * max;
    Ok(volume.values.iter().map(|&v| v >= half).collect())
}
