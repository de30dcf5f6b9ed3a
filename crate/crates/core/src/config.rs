//! Experiment configuration.
//!
//! The file is a small TOML document:
//!
//! ```toml
//! [geometry]
//! pinhole_pitch = 0.96
//! pinhole_diameter = 0.192
//! num_modules = 8
//! object_gap = 25.0
//! center_shift = 10.0
//!
//! [phantom]
//! emissions = 1000000
//! seed = 42
//!
//! [[shape]]
//! kind = "sphere"
//! center = [0.0, 0.0, 0.0]
//! radius = 0.2
//!
//! [recon]
//! dims = [64, 64, 64]
//! extent = 32.0
//! ```
//!
//! Omitted keys take the defaults below and are written back out in full
//! by [`ExperimentConfig::to_toml`], so a run's manifest records them.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::Axis;
use crate::geometry::{build_scan_plan, GeometryError, ModuleSpec, PinholeArraySpec, RingSpec, ScanPlan};
use crate::phantom::{Phantom, PhantomError, Shape};
use crate::siddon::VoxelGrid;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("invalid config: {0}")]
    Geometry(#[from] GeometryError),
    #[error("invalid config: {0}")]
    Phantom(#[from] PhantomError),
}

fn d_thickness() -> f64 {
    1.0
}
fn d_plate_height() -> f64 {
    49.152
}
fn d_sensor_pitch() -> f64 {
    0.048
}
fn d_one() -> u32 {
    1
}
fn d_axes() -> Vec<Axis> {
    vec![Axis::X]
}
fn d_dims() -> [usize; 3] {
    [64, 64, 64]
}
fn d_extent() -> f64 {
    32.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub pinhole_pitch: f64,
    pub pinhole_diameter: f64,
    #[serde(default = "d_thickness")]
    pub plate_thickness: f64,
    #[serde(default = "d_plate_height")]
    pub plate_height: f64,
    /// Module width in pinhole pitches.
    #[serde(default = "d_one")]
    pub module_width: u32,
    pub num_modules: u32,
    pub object_gap: f64,
    #[serde(default)]
    pub center_shift: f64,
    #[serde(default = "d_sensor_pitch")]
    pub sensor_pitch: f64,
    #[serde(default = "d_one")]
    pub binning: u32,
    /// Plate to detector distance; the non-overlap minimum when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomConfig {
    pub emissions: u64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconConfig {
    #[serde(default = "d_dims")]
    pub dims: [usize; 3],
    /// Side of the cube of interest, mm; voxels are `extent / dims`.
    #[serde(default = "d_extent")]
    pub extent: f64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig { dims: d_dims(), extent: d_extent() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "d_axes")]
    pub axes: Vec<Axis>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig { axes: d_axes() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometry: GeometryConfig,
    pub phantom: PhantomConfig,
    #[serde(default)]
    pub recon: ReconConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(rename = "shape")]
    pub shapes: Vec<Shape>,
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

impl ExperimentConfig {
    /// Parse, resolve defaults and validate.
    pub fn from_toml(src: &str) -> Result<Self, ConfigError> {
        let mut cfg: ExperimentConfig = toml::from_str(src).map_err(|e| ConfigError::Parse {
            line: e.span().map_or(0, |s| line_of(src, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("validated configs are representable as TOML")
    }

    fn resolve(&mut self) {
        if self.geometry.detector_gap.is_none() {
            self.geometry.detector_gap = Some(self.pinholes().min_detector_gap());
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.plan()?;
        let grid = self.grid()?;
        let phantom = self.phantom()?;
        phantom.check_inside(&grid)?;
        // TOML integers are signed 64-bit
        let limit = i64::MAX as u64;
        if self.phantom.seed > limit || self.phantom.emissions > limit {
            return Err(ConfigError::Invalid(format!("phantom.seed and phantom.emissions must not exceed {limit}")));
        }
        if self.analysis.axes.is_empty() {
            return Err(ConfigError::Invalid("analysis.axes must name at least one axis".into()));
        }
        Ok(())
    }

    fn pinholes(&self) -> PinholeArraySpec {
        let g = &self.geometry;
        PinholeArraySpec {
            pitch: g.pinhole_pitch,
            diameter: g.pinhole_diameter,
            plate_thickness: g.plate_thickness,
            plate_height: g.plate_height,
        }
    }

    pub fn module_spec(&self) -> ModuleSpec {
        let g = &self.geometry;
        let pinholes = self.pinholes();
        ModuleSpec {
            width_multiplier: g.module_width,
            pinholes,
            detector_gap: g.detector_gap.unwrap_or_else(|| pinholes.min_detector_gap()),
            sensor_pitch: g.sensor_pitch,
            binning: g.binning,
        }
    }

    pub fn ring_spec(&self) -> RingSpec {
        RingSpec {
            num_modules: self.geometry.num_modules,
            object_gap: self.geometry.object_gap,
            center_shift: self.geometry.center_shift,
        }
    }

    pub fn plan(&self) -> Result<ScanPlan, ConfigError> {
        Ok(build_scan_plan(self.ring_spec(), self.module_spec())?)
    }

    pub fn phantom(&self) -> Result<Phantom, ConfigError> {
        Ok(Phantom::new(self.shapes.clone(), self.phantom.emissions)?)
    }

    pub fn grid(&self) -> Result<VoxelGrid, ConfigError> {
        let r = &self.recon;
        if r.dims.contains(&0) || !(r.extent > 0.0) {
            return Err(ConfigError::Invalid("recon grid needs positive dims and extent".into()));
        }
        let size = crate::geometry::Vec3::new(
            r.extent / r.dims[0] as f64,
            r.extent / r.dims[1] as f64,
            r.extent / r.dims[2] as f64,
        );
        VoxelGrid::new(r.dims, crate::geometry::Vec3::repeat(-0.5 * r.extent), size)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let src =
        std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    ExperimentConfig::from_toml(&src)
}

pub fn write_config(cfg: &ExperimentConfig, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, cfg.to_toml())
}

/// Point-source configuration matching the reference system: 0.96 mm pitch,
/// 0.096 mm pinhole radius, 25 mm object gap, 128^3 cube.
pub const REFERENCE_POINT_SOURCE: &str = r#"
[geometry]
pinhole_pitch = 0.96
pinhole_diameter = 0.192
num_modules = 8
object_gap = 25.0
center_shift = 0.0

[phantom]
emissions = 1000000
seed = 42

[[shape]]
kind = "sphere"
center = [0.0, 0.0, 0.0]
radius = 0.2

[recon]
dims = [128, 128, 128]
extent = 32.0

[analysis]
axes = ["x", "y", "z"]
"#;
