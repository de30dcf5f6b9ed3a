//! Pinhole plates, detector modules and the partial-ring scan orbit.
//!
//! Angles crossing the public surface are in degrees; lengths are in mm.
//! Lab frame: the gantry rotates about +z, view 0 puts the middle of the
//! partial ring on the -x side of the scanning center.

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid geometry: {0}")]
    Invalid(String),
}

fn domain(msg: impl Into<String>) -> GeometryError {
    GeometryError::Domain(msg.into())
}

fn invalid(msg: impl Into<String>) -> GeometryError {
    GeometryError::Invalid(msg.into())
}

/// Total angle subtended by `n_modules` flat modules of width `width`
/// tangent to a circle of radius `gap`: `2N atan(P / 2g)`.
pub fn coverage_angle(n_modules: u32, width: f64, gap: f64) -> Result<f64, GeometryError> {
    if n_modules == 0 {
        return Err(domain("module count must be at least 1"));
    }
    Ok(f64::from(n_modules) * module_step_angle(width, gap)?)
}

/// Scan positions needed to cover a full turn with coverage `phi` per
/// position. Rounded up; a ratio within 1e-9 of an integer counts as exact.
pub fn num_view_angles(phi: f64) -> Result<usize, GeometryError> {
    if !(phi > 0.0 && phi <= 360.0 + 1e-9) {
        return Err(domain(format!("coverage angle {phi} outside (0, 360]")));
    }
    let ratio = 360.0 / phi;
    Ok(((ratio - 1e-9).ceil() as usize).max(1))
}

/// Minimum pinhole-plate to detector distance `L t / 2d` at which the
/// projections of neighbouring pinholes stop overlapping.
pub fn pinhole_detector_gap(pitch: f64, thickness: f64, diameter: f64) -> Result<f64, GeometryError> {
    if !(pitch > 0.0 && thickness > 0.0) {
        return Err(domain("pitch and plate thickness must be positive"));
    }
    if !(diameter > 0.0) {
        return Err(domain("pinhole diameter must be positive"));
    }
    Ok(pitch * thickness / (2.0 * diameter))
}

/// Full acceptance angle `2 atan(d / t)` of a single pinhole channel.
pub fn pinhole_fov(diameter: f64, thickness: f64) -> Result<f64, GeometryError> {
    if !(diameter >= 0.0) {
        return Err(domain("pinhole diameter must be non-negative"));
    }
    if !(thickness > 0.0) {
        return Err(domain("plate thickness must be positive"));
    }
    Ok(2.0 * (diameter / thickness).atan().to_degrees())
}

/// Angle between neighbouring modules on the ring, `2 atan(P / 2g)`.
pub fn module_step_angle(width: f64, gap: f64) -> Result<f64, GeometryError> {
    if !(width >= 0.0) {
        return Err(domain("module width must be non-negative"));
    }
    if !(gap > 0.0) {
        return Err(domain("object gap must be positive"));
    }
    Ok(2.0 * (width / (2.0 * gap)).atan().to_degrees())
}

/// Square micro-pinhole lattice on one plate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinholeArraySpec {
    pub pitch: f64,
    pub diameter: f64,
    pub plate_thickness: f64,
    pub plate_height: f64,
}

impl PinholeArraySpec {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.diameter > 0.0) {
            return Err(invalid("pinhole diameter must be positive"));
        }
        if !(self.pitch > self.diameter) {
            return Err(invalid(format!(
                "pinhole pitch {} must exceed pinhole diameter {}",
                self.pitch, self.diameter
            )));
        }
        if !(self.plate_thickness > 0.0) {
            return Err(invalid("plate thickness must be positive"));
        }
        if self.rows() < 1 {
            return Err(invalid(format!(
                "plate height {} holds no pinhole row at pitch {}",
                self.plate_height, self.pitch
            )));
        }
        Ok(())
    }

    pub fn radius(&self) -> f64 {
        0.5 * self.diameter
    }

    pub fn rows(&self) -> usize {
        if self.plate_height.is_finite() && self.plate_height > 0.0 {
            (self.plate_height / self.pitch + 1e-9).floor() as usize
        } else {
            0
        }
    }

    /// Full acceptance angle in degrees.
    pub fn fov(&self) -> f64 {
        2.0 * (self.diameter / self.plate_thickness).atan().to_degrees()
    }

    /// Tangent of the half acceptance angle, `d / t`.
    pub fn half_fov_tan(&self) -> f64 {
        self.diameter / self.plate_thickness
    }

    pub fn min_detector_gap(&self) -> f64 {
        self.pitch * self.plate_thickness / (2.0 * self.diameter)
    }
}

/// One tile of the partial ring: a pinhole plate of width `m * L` with a
/// pixelated detector strip `detector_gap` behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModuleSpec {
    pub width_multiplier: u32,
    pub pinholes: PinholeArraySpec,
    pub detector_gap: f64,
    pub sensor_pitch: f64,
    /// Integer pixel binning applied to the native sensor grid.
    pub binning: u32,
}

impl ModuleSpec {
    pub fn validate(&self) -> Result<(), GeometryError> {
        self.pinholes.validate()?;
        if self.width_multiplier == 0 {
            return Err(invalid("module width multiplier must be a positive integer"));
        }
        let min_gap = self.pinholes.min_detector_gap();
        if !(self.detector_gap >= min_gap * (1.0 - 1e-12)) {
            return Err(invalid(format!("detector gap {} below the non-overlap minimum {min_gap}", self.detector_gap)));
        }
        if !(self.sensor_pitch > 0.0) {
            return Err(invalid("sensor pitch must be positive"));
        }
        if self.binning == 0 {
            return Err(invalid("binning must be a positive integer"));
        }
        let (raw_rows, raw_cols) = self.native_pixels();
        if raw_cols < 1 || raw_rows < 1 {
            return Err(invalid("module is narrower than one sensor pixel"));
        }
        let b = self.binning as usize;
        if raw_cols % b != 0 || raw_rows % b != 0 {
            return Err(invalid(format!("binning {b} does not divide the {raw_rows}x{raw_cols} sensor grid")));
        }
        Ok(())
    }

    /// Module width P.
    pub fn width(&self) -> f64 {
        f64::from(self.width_multiplier) * self.pinholes.pitch
    }

    fn native_pixels(&self) -> (usize, usize) {
        let rows = (self.pinholes.plate_height / self.sensor_pitch).round();
        let cols = (self.width() / self.sensor_pitch).round();
        (rows.max(0.0) as usize, cols.max(0.0) as usize)
    }

    /// Detector grid shape `(rows, cols)` after binning.
    pub fn detector_shape(&self) -> (usize, usize) {
        let (r, c) = self.native_pixels();
        let b = self.binning.max(1) as usize;
        (r / b, c / b)
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.sensor_pitch * f64::from(self.binning)
    }

    pub fn pinhole_columns(&self) -> usize {
        self.width_multiplier as usize
    }

    pub fn pinhole_count(&self) -> usize {
        self.pinholes.rows() * self.pinhole_columns()
    }

    /// In-plate offsets `(lateral, vertical)` of every pinhole center,
    /// row-major from the bottom row, centered on the plate origin.
    pub fn pinhole_offsets(&self) -> Vec<(f64, f64)> {
        let rows = self.pinholes.rows();
        let cols = self.pinhole_columns();
        let pitch = self.pinholes.pitch;
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let v = (r as f64 - 0.5 * (rows as f64 - 1.0)) * pitch;
            for c in 0..cols {
                let u = (c as f64 - 0.5 * (cols as f64 - 1.0)) * pitch;
                out.push((u, v));
            }
        }
        out
    }

    /// In-plane offset of the center of pixel `(row, col)`; row 0 is lowest.
    pub fn pixel_offset(&self, row: usize, col: usize) -> (f64, f64) {
        let (rows, cols) = self.detector_shape();
        let p = self.pixel_pitch();
        ((col as f64 + 0.5 - 0.5 * cols as f64) * p, (row as f64 + 0.5 - 0.5 * rows as f64) * p)
    }

    /// Pixel containing the in-plane offset, if it lies on the strip.
    pub fn pixel_at(&self, lateral: f64, vertical: f64) -> Option<(usize, usize)> {
        let (rows, cols) = self.detector_shape();
        let p = self.pixel_pitch();
        let c = (lateral / p + 0.5 * cols as f64).floor();
        let r = (vertical / p + 0.5 * rows as f64).floor();
        if c < 0.0 || r < 0.0 || c >= cols as f64 || r >= rows as f64 {
            return None;
        }
        Some((r as usize, c as usize))
    }

    /// Index of the pinhole whose axis is nearest to the in-plane offset.
    pub fn nearest_pinhole(&self, lateral: f64, vertical: f64) -> usize {
        let rows = self.pinholes.rows();
        let cols = self.pinhole_columns();
        let pitch = self.pinholes.pitch;
        let nearest = |x: f64, n: usize| -> usize {
            let idx = (x / pitch + 0.5 * (n as f64 - 1.0)).round();
            idx.clamp(0.0, n as f64 - 1.0) as usize
        };
        nearest(vertical, rows) * cols + nearest(lateral, cols)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingSpec {
    pub num_modules: u32,
    /// Perpendicular distance scanning center to pinhole plate.
    pub object_gap: f64,
    pub center_shift: f64,
}

impl RingSpec {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.num_modules == 0 {
            return Err(invalid("ring needs at least one module"));
        }
        if !(self.object_gap > 0.0) {
            return Err(invalid("object gap must be positive"));
        }
        if !(self.center_shift >= 0.0) || !self.center_shift.is_finite() {
            return Err(invalid("center shift must be a non-negative finite length"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftPolicy {
    None,
    FixedOffset,
}

/// Placement of one module for one view, in the lab frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulePose {
    pub view_index: usize,
    pub module_index: usize,
    /// Center of the pinhole plate mid-plane.
    pub plate_origin: Vec3,
    /// Unit normal pointing from the plate toward the scanning center.
    pub plate_normal: Vec3,
    pub plate_up: Vec3,
}

impl ModulePose {
    /// In-plate lateral axis, `up x normal`.
    pub fn plate_right(&self) -> Vec3 {
        self.plate_up.cross(&self.plate_normal)
    }

    pub fn plate_point(&self, lateral: f64, vertical: f64) -> Vec3 {
        self.plate_origin + self.plate_right() * lateral + self.plate_up * vertical
    }

    /// Point on the detector plane, `gap` behind the plate.
    pub fn detector_point(&self, gap: f64, lateral: f64, vertical: f64) -> Vec3 {
        self.plate_point(lateral, vertical) - self.plate_normal * gap
    }

    /// Express a lab point in plate coordinates `(lateral, vertical, depth)`
    /// where depth is measured along the normal, positive in front.
    pub fn to_plate(&self, p: &Vec3) -> Vec3 {
        let d = p - self.plate_origin;
        Vec3::new(d.dot(&self.plate_right()), d.dot(&self.plate_up), d.dot(&self.plate_normal))
    }

    fn rotated(&self, rot: &Rotation3<f64>) -> ModulePose {
        ModulePose {
            plate_origin: rot * self.plate_origin,
            plate_normal: rot * self.plate_normal,
            plate_up: rot * self.plate_up,
            ..*self
        }
    }
}

/// Opaque digest of every parameter that shapes the scan geometry.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fingerprint(pub String);

impl Fingerprint {
    pub fn of_bytes(parts: &[&[u8]]) -> Self {
        let mut h = Sha256::new();
        for p in parts {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p);
        }
        let digest = h.finalize();
        Fingerprint(digest[..16].iter().map(|b| format!("{b:02x}")).collect())
    }
}

impl std::fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanPlan {
    pub ring: RingSpec,
    pub module: ModuleSpec,
    pub shift_policy: ShiftPolicy,
    /// Gantry angle of each view, degrees.
    pub view_angles: Vec<f64>,
    /// `view_angles.len() * num_modules` poses, grouped by view.
    pub poses: Vec<ModulePose>,
}

impl ScanPlan {
    pub fn num_views(&self) -> usize {
        self.view_angles.len()
    }

    pub fn num_modules(&self) -> usize {
        self.ring.num_modules as usize
    }

    pub fn coverage(&self) -> f64 {
        f64::from(self.ring.num_modules) * self.step_angle()
    }

    pub fn step_angle(&self) -> f64 {
        2.0 * (self.module.width() / (2.0 * self.ring.object_gap)).atan().to_degrees()
    }

    pub fn view_poses(&self, view: usize) -> &[ModulePose] {
        let n = self.num_modules();
        &self.poses[view * n..(view + 1) * n]
    }

    /// Rotation center used for `view`.
    pub fn scanning_center(&self, view: usize) -> Vec3 {
        scanning_center(self.shift_policy, self.ring.center_shift, self.view_angles[view])
    }

    pub fn fingerprint(&self) -> Fingerprint {
        let desc = serde_json::json!({
            "ring": self.ring,
            "module": self.module,
            "shift_policy": self.shift_policy,
            "views": self.view_angles.len(),
        });
        Fingerprint::of_bytes(&[b"scan-plan/v1", desc.to_string().as_bytes()])
    }
}

fn scanning_center(policy: ShiftPolicy, shift: f64, view_angle_deg: f64) -> Vec3 {
    match policy {
        ShiftPolicy::None => Vec3::zeros(),
        ShiftPolicy::FixedOffset => {
            let rot = Rotation3::from_axis_angle(&Vec3::z_axis(), view_angle_deg.to_radians());
            rot * Vec3::new(shift, 0.0, 0.0)
        }
    }
}

/// Lay out every view of the orbit.
///
/// View `k` sits at gantry angle `k * phi`. With a nonzero shift the
/// rotation center is the object center displaced by `s` along +x and then
/// rotated with the gantry, so the offset is fixed in the gantry frame. The
/// arc of modules faces the rotation center from the opposite side of the
/// object, so shifting brings the object `s` closer to the middle module.
/// Module `j` of a view sits at `(j - (N-1)/2) * theta` from the view axis.
pub fn build_scan_plan(ring: RingSpec, module: ModuleSpec) -> Result<ScanPlan, GeometryError> {
    ring.validate()?;
    module.validate()?;
    let theta = module_step_angle(module.width(), ring.object_gap)?;
    let phi = f64::from(ring.num_modules) * theta;
    if phi > 360.0 + 1e-9 {
        return Err(invalid(format!(
            "{} modules of width {} at gap {} overlap: coverage {phi:.3} deg exceeds a full turn",
            ring.num_modules,
            module.width(),
            ring.object_gap
        )));
    }
    let n_views = num_view_angles(phi)?;
    let shift_policy = if ring.center_shift > 0.0 { ShiftPolicy::FixedOffset } else { ShiftPolicy::None };

    let view_angles: Vec<f64> = (0..n_views).map(|k| k as f64 * phi).collect();
    let n_mod = ring.num_modules as usize;
    let mut poses = Vec::with_capacity(n_views * n_mod);
    for (k, &psi) in view_angles.iter().enumerate() {
        let center = scanning_center(shift_policy, ring.center_shift, psi);
        for j in 0..n_mod {
            let beta = (psi + 180.0 + (j as f64 - 0.5 * (n_mod as f64 - 1.0)) * theta).to_radians();
            let outward = Vec3::new(beta.cos(), beta.sin(), 0.0);
            poses.push(ModulePose {
                view_index: k,
                module_index: j,
                plate_origin: center + outward * ring.object_gap,
                plate_normal: -outward,
                plate_up: Vec3::z(),
            });
        }
    }
    Ok(ScanPlan { ring, module, shift_policy, view_angles, poses })
}

/// Rotate a pose about the lab z axis; used to compare views.
pub fn rotate_pose(pose: &ModulePose, angle_deg: f64) -> ModulePose {
    pose.rotated(&Rotation3::from_axis_angle(&Vec3::z_axis(), angle_deg.to_radians()))
}
