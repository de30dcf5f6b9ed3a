//! Analytic emission phantoms and Monte Carlo emission sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::rng::{self, BLOCK, DOMAIN_EMISSION};
use crate::siddon::VoxelGrid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhantomError {
    #[error("phantom has no shapes")]
    Empty,
    #[error("invalid shape {index}: {reason}")]
    InvalidShape { index: usize, reason: String },
    #[error("shape {index} extends outside the reconstruction cube")]
    OutsideGrid { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Sphere,
    /// Right circular cylinder with its axis along lab z.
    Cylinder,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shape {
    pub kind: ShapeKind,
    pub center: [f64; 3],
    pub radius: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub half_height: f64,
    #[serde(default = "unit_weight")]
    pub activity_weight: f64,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

fn unit_weight() -> f64 {
    1.0
}

impl Shape {
    pub fn sphere(center: [f64; 3], radius: f64) -> Self {
        Shape { kind: ShapeKind::Sphere, center, radius, half_height: 0.0, activity_weight: 1.0 }
    }

    pub fn cylinder(center: [f64; 3], radius: f64, half_height: f64) -> Self {
        Shape { kind: ShapeKind::Cylinder, center, radius, half_height, activity_weight: 1.0 }
    }

    pub fn with_weight(self, activity_weight: f64) -> Self {
        Shape { activity_weight, ..self }
    }

    pub fn center(&self) -> Vec3 {
        Vec3::from(self.center)
    }

    fn validate(&self) -> Result<(), String> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err("radius must be positive".into());
        }
        if self.kind == ShapeKind::Cylinder && !(self.half_height > 0.0 && self.half_height.is_finite()) {
            return Err("cylinder half height must be positive".into());
        }
        if !(self.activity_weight > 0.0 && self.activity_weight.is_finite()) {
            return Err("activity weight must be positive".into());
        }
        if self.center.iter().any(|c| !c.is_finite()) {
            return Err("center must be finite".into());
        }
        Ok(())
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let d = p - self.center();
        match self.kind {
            ShapeKind::Sphere => d.norm_squared() <= self.radius * self.radius,
            ShapeKind::Cylinder => d.x * d.x + d.y * d.y <= self.radius * self.radius && d.z.abs() <= self.half_height,
        }
    }

    pub fn volume(&self) -> f64 {
        use std::f64::consts::PI;
        match self.kind {
            ShapeKind::Sphere => 4.0 / 3.0 * PI * self.radius.powi(3),
            ShapeKind::Cylinder => PI * self.radius * self.radius * 2.0 * self.half_height,
        }
    }

    /// Half extents of the axis-aligned bounding box.
    pub fn half_extents(&self) -> Vec3 {
        match self.kind {
            ShapeKind::Sphere => Vec3::repeat(self.radius),
            ShapeKind::Cylinder => Vec3::new(self.radius, self.radius, self.half_height),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Vec3 {
        let c = self.center();
        let h = self.half_extents();
        loop {
            let p = Vec3::new(
                c.x + h.x * (2.0 * rng.gen::<f64>() - 1.0),
                c.y + h.y * (2.0 * rng.gen::<f64>() - 1.0),
                c.z + h.z * (2.0 * rng.gen::<f64>() - 1.0),
            );
            if self.contains(&p) {
                return p;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    pub shapes: Vec<Shape>,
    pub total_emissions: u64,
}

impl Phantom {
    pub fn new(shapes: Vec<Shape>, total_emissions: u64) -> Result<Self, PhantomError> {
        let p = Phantom { shapes, total_emissions };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        if self.shapes.is_empty() {
            return Err(PhantomError::Empty);
        }
        for (index, s) in self.shapes.iter().enumerate() {
            s.validate().map_err(|reason| PhantomError::InvalidShape { index, reason })?;
        }
        Ok(())
    }

    /// Every shape's bounding box must lie within the grid.
    pub fn check_inside(&self, grid: &VoxelGrid) -> Result<(), PhantomError> {
        let lo = grid.origin;
        let hi = grid.max_corner();
        for (index, s) in self.shapes.iter().enumerate() {
            let c = s.center();
            let h = s.half_extents();
            let inside = (0..3).all(|a| c[a] - h[a] >= lo[a] && c[a] + h[a] <= hi[a]);
            if !inside {
                return Err(PhantomError::OutsideGrid { index });
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.shapes.iter().any(|s| s.contains(p))
    }

    /// Ground-truth occupancy: a voxel is inside when its center is.
    pub fn voxelize(&self, grid: &VoxelGrid) -> Vec<bool> {
        let [nx, ny, nz] = grid.dims;
        let mut out = vec![false; nx * ny * nz];
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    out[grid.linear([i, j, k])] = self.contains(&grid.voxel_center([i, j, k]));
                }
            }
        }
        out
    }
}

/// A 0.2 mm sphere is the reference point source.
pub const POINT_SOURCE_RADIUS: f64 = 0.2;

/// Single sphere of the given radius at the origin.
pub fn point_source(radius: f64, total_emissions: u64) -> Result<Phantom, PhantomError> {
    Phantom::new(vec![Shape::sphere([0.0; 3], radius)], total_emissions)
}

/// Three 3 mm spheres along x at -8, 0 and +8 mm.
pub fn three_spheres(total_emissions: u64) -> Phantom {
    Phantom {
        shapes: vec![
            Shape::sphere([0.0, 0.0, 0.0], 3.0),
            Shape::sphere([8.0, 0.0, 0.0], 3.0),
            Shape::sphere([-8.0, 0.0, 0.0], 3.0),
        ],
        total_emissions,
    }
}

/// Draws emission points by global index.
///
/// Point `i` lives in block `i / BLOCK`; each block has its own stream, so
/// any index range can be produced without generating what precedes it.
#[derive(Debug, Clone)]
pub struct EmissionSampler<'a> {
    phantom: &'a Phantom,
    cumulative: Vec<f64>,
    seed: u64,
}

impl<'a> EmissionSampler<'a> {
    pub fn new(phantom: &'a Phantom, seed: u64) -> Result<Self, PhantomError> {
        phantom.validate()?;
        let mut acc = 0.0;
        let cumulative = phantom
            .shapes
            .iter()
            .map(|s| {
                acc += s.activity_weight * s.volume();
                acc
            })
            .collect();
        Ok(EmissionSampler { phantom, cumulative, seed })
    }

    fn pick<R: Rng>(&self, rng: &mut R) -> &Shape {
        let total = *self.cumulative.last().expect("validated non-empty");
        let u = rng.gen::<f64>() * total;
        let idx = self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1);
        &self.phantom.shapes[idx]
    }

    /// All `BLOCK` points of one block.
    pub fn block(&self, block: u64) -> Vec<Vec3> {
        let mut rng = rng::stream(self.seed, &[DOMAIN_EMISSION, block]);
        (0..BLOCK)
            .map(|_| {
                let shape = self.pick(&mut rng);
                shape.sample(&mut rng)
            })
            .collect()
    }

    /// Points with global indices in `start..end`.
    pub fn range(&self, start: u64, end: u64) -> Vec<Vec3> {
        let mut out = Vec::with_capacity(end.saturating_sub(start) as usize);
        if end <= start {
            return out;
        }
        let b = BLOCK as u64;
        for blk in start / b..=(end - 1) / b {
            let lo = start.max(blk * b) - blk * b;
            let hi = end.min((blk + 1) * b) - blk * b;
            out.extend_from_slice(&self.block(blk)[lo as usize..hi as usize]);
        }
        out
    }
}

/// The first `count` emission points of the phantom's stream for `seed`.
pub fn sample_emission_points(phantom: &Phantom, count: u64, seed: u64) -> Result<Vec<Vec3>, PhantomError> {
    Ok(EmissionSampler::new(phantom, seed)?.range(0, count))
}
