//! Exact ray / voxel-grid intersection lengths.
//!
//! Parametric traversal in the spirit of Siddon (1985): the ray is written
//! as `start + a (end - start)` and the sorted union of plane-crossing
//! parameters along the three axes is walked incrementally, so the merged
//! list is never materialised. Each interval between consecutive crossings
//! lies in exactly one voxel, identified from its midpoint.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;

/// Parameter-space tolerance, relative to the segment length.
const ALPHA_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("degenerate ray: start and end coincide")]
    Degenerate,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    /// Minimum corner.
    pub origin: Vec3,
    pub voxel_size: Vec3,
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], origin: Vec3, voxel_size: Vec3) -> Result<Self, TraceError> {
        let g = VoxelGrid { dims, origin, voxel_size };
        g.validate()?;
        Ok(g)
    }

    /// `n^3` cube of side `extent` centered on the origin.
    pub fn cube(n: usize, extent: f64) -> Self {
        let size = extent / n as f64;
        VoxelGrid { dims: [n; 3], origin: Vec3::repeat(-0.5 * extent), voxel_size: Vec3::repeat(size) }
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        if self.dims.contains(&0) {
            return Err(TraceError::InvalidGrid("every dimension needs at least one voxel".into()));
        }
        if self.voxel_size.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(TraceError::InvalidGrid("voxel sizes must be positive".into()));
        }
        if self.origin.iter().any(|c| !c.is_finite()) {
            return Err(TraceError::InvalidGrid("origin must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn max_corner(&self) -> Vec3 {
        self.origin + self.voxel_size.component_mul(&self.extent_voxels())
    }

    fn extent_voxels(&self) -> Vec3 {
        Vec3::new(self.dims[0] as f64, self.dims[1] as f64, self.dims[2] as f64)
    }

    pub fn center(&self) -> Vec3 {
        self.origin + 0.5 * self.voxel_size.component_mul(&self.extent_voxels())
    }

    /// x-fastest linear index.
    #[inline]
    pub fn linear(&self, [i, j, k]: [usize; 3]) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn unlinear(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    pub fn voxel_center(&self, [i, j, k]: [usize; 3]) -> Vec3 {
        self.origin
            + Vec3::new(
                (i as f64 + 0.5) * self.voxel_size.x,
                (j as f64 + 0.5) * self.voxel_size.y,
                (k as f64 + 0.5) * self.voxel_size.z,
            )
    }

    /// Voxel containing `p`; points on a shared face go to the higher index,
    /// points on the outer max face to the last voxel.
    pub fn voxel_of(&self, p: &Vec3) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.voxel_size[a]).floor();
            if f < 0.0 {
                if p[a] < self.origin[a] {
                    return None;
                }
                out[a] = 0;
            } else if f >= self.dims[a] as f64 {
                if p[a] > self.max_corner()[a] {
                    return None;
                }
                out[a] = self.dims[a] - 1;
            } else {
                out[a] = f as usize;
            }
        }
        Some(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySegment {
    pub start: Vec3,
    pub end: Vec3,
}

impl RaySegment {
    pub fn new(start: Vec3, end: Vec3) -> Self {
        RaySegment { start, end }
    }

    pub fn length(&self) -> f64 {
        (self.end - self.start).norm()
    }

    pub fn reversed(&self) -> Self {
        RaySegment { start: self.end, end: self.start }
    }
}

/// Parameter interval `[a0, a1]` of the segment inside the closed grid box.
pub fn clip(ray: &RaySegment, grid: &VoxelGrid) -> Option<(f64, f64)> {
    let d = ray.end - ray.start;
    let lo = grid.origin;
    let hi = grid.max_corner();
    let (mut a0, mut a1) = (0.0f64, 1.0f64);
    for a in 0..3 {
        if d[a] == 0.0 {
            if ray.start[a] < lo[a] || ray.start[a] > hi[a] {
                return None;
            }
        } else {
            let t0 = (lo[a] - ray.start[a]) / d[a];
            let t1 = (hi[a] - ray.start[a]) / d[a];
            a0 = a0.max(t0.min(t1));
            a1 = a1.min(t0.max(t1));
        }
    }
    (a1 - a0 > ALPHA_EPS).then_some((a0, a1))
}

/// Visit every voxel the segment crosses, in traversal order, with its
/// intersection length in mm. `visit` receives the linear voxel index.
pub fn trace_with<F: FnMut(usize, f64)>(ray: &RaySegment, grid: &VoxelGrid, mut visit: F) -> Result<(), TraceError> {
    let d = ray.end - ray.start;
    let length = d.norm();
    if !(length > 0.0) {
        return Err(TraceError::Degenerate);
    }
    let Some((a_min, a_max)) = clip(ray, grid) else {
        return Ok(());
    };

    // Per axis: index of the next plane to cross and its parameter.
    let mut plane = [0i64; 3];
    let mut next = [f64::INFINITY; 3];
    let mut step = [0i64; 3];
    let s = ray.start;
    let alpha_of = |a: usize, idx: i64| (grid.origin[a] + idx as f64 * grid.voxel_size[a] - s[a]) / d[a];
    for a in 0..3 {
        if d[a] == 0.0 {
            continue;
        }
        let pos = (s[a] + a_min * d[a] - grid.origin[a]) / grid.voxel_size[a];
        if d[a] > 0.0 {
            step[a] = 1;
            plane[a] = pos.floor() as i64 + 1;
        } else {
            step[a] = -1;
            plane[a] = pos.ceil() as i64 - 1;
        }
        let mut al = alpha_of(a, plane[a]);
        // an entry exactly on a plane would otherwise yield a zero interval
        while al <= a_min + ALPHA_EPS {
            plane[a] += step[a];
            al = alpha_of(a, plane[a]);
        }
        next[a] = al;
    }

    let dims = grid.dims;
    let mut current = a_min;
    let mut pending: Option<(usize, f64)> = None;
    while current < a_max - ALPHA_EPS {
        let upcoming = next[0].min(next[1]).min(next[2]).min(a_max);
        let seg = (upcoming - current) * length;
        if upcoming - current > ALPHA_EPS {
            let mid = 0.5 * (current + upcoming);
            let mut idx = [0usize; 3];
            for a in 0..3 {
                let f = ((s[a] + mid * d[a] - grid.origin[a]) / grid.voxel_size[a]).floor();
                idx[a] = f.clamp(0.0, dims[a] as f64 - 1.0) as usize;
            }
            let lin = grid.linear(idx);
            pending = match pending {
                Some((v, l)) if v == lin => Some((v, l + seg)),
                Some((v, l)) => {
                    visit(v, l);
                    Some((lin, seg))
                }
                None => Some((lin, seg)),
            };
        }
        for a in 0..3 {
            if next[a] <= upcoming + ALPHA_EPS {
                plane[a] += step[a];
                next[a] = alpha_of(a, plane[a]);
            }
        }
        current = upcoming;
    }
    if let Some((v, l)) = pending {
        visit(v, l);
    }
    Ok(())
}

/// Intersected voxels with their lengths, in traversal order.
pub fn trace(ray: &RaySegment, grid: &VoxelGrid) -> Result<Vec<([usize; 3], f64)>, TraceError> {
    let mut out = Vec::with_capacity(grid.dims.iter().sum());
    trace_with(ray, grid, |lin, len| out.push((grid.unlinear(lin), len)))?;
    Ok(out)
}

/// Length of the segment inside the grid's bounding box.
pub fn clipped_length(ray: &RaySegment, grid: &VoxelGrid) -> f64 {
    clip(ray, grid).map_or(0.0, |(a0, a1)| (a1 - a0) * ray.length())
}
