//! On-disk artifacts: raw little-endian payloads with JSON sidecars, PGM
//! previews and per-directory manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ExperimentConfig;
use crate::geometry::{Fingerprint, ModulePose, ScanPlan, Vec3};
use crate::projector::{ProjectionImage, ProjectionSet};
use crate::recon::VoxelVolume;
use crate::siddon::VoxelGrid;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PROJECTION_INDEX: &str = "projections.json";
pub const VOLUME_STEM: &str = "volume";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("required file {0} does not exist")]
    Missing(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("view {view}, module {module}: count {count} does not fit in 16 bits")]
    Overflow { view: usize, module: usize, count: u32 },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            IoError::Missing(path.to_path_buf())
        } else {
            IoError::Io { path: path.to_path_buf(), source }
        }
    }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(io_err(path))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|source| IoError::Json { path: path.to_path_buf(), source })?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|source| IoError::Json { path: path.to_path_buf(), source })
}

/// Everything needed to reproduce the files of one output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub stage: String,
    pub seed: u64,
    pub plan_fingerprint: Fingerprint,
    /// Fully resolved configuration, defaults included.
    pub config: ExperimentConfig,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(stage: &str, config: &ExperimentConfig, plan: &ScanPlan, files: Vec<String>) -> Self {
        Manifest {
            tool: "lspect".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            stage: stage.into(),
            seed: config.phantom.seed,
            plan_fingerprint: plan.fingerprint(),
            config: config.clone(),
            files,
        }
    }

    /// Write `manifest.json` plus a `config.toml` echo that can be fed back
    /// to `--config`.
    pub fn write(&self, dir: &Path) -> Result<(), IoError> {
        write_bytes(&dir.join("config.toml"), self.config.to_toml().as_bytes())?;
        write_json(&dir.join(MANIFEST_FILE), self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionIndex {
    pub plan_fingerprint: Fingerprint,
    pub set_fingerprint: Fingerprint,
    pub seed: u64,
    pub total_emissions: u64,
    pub num_views: usize,
    pub num_modules: usize,
    pub dtype: String,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSidecar {
    pub view_index: usize,
    pub module_index: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixel_pitch_mm: f64,
    pub dtype: String,
    pub plan_fingerprint: Fingerprint,
    pub seed: u64,
    pub pose: ModulePose,
}

fn image_stem(view: usize, module: usize) -> String {
    format!("view{view:03}_module{module:02}")
}

/// Store every image as `viewVVV_moduleMM.raw` (u16 LE, row-major, row 0
/// lowest) with a `.json` sidecar, plus a `projections.json` index.
/// Returns the written file names. With `previews`, PGM renderings go to
/// `previews/`.
pub fn write_projection_set(
    dir: &Path,
    set: &ProjectionSet,
    plan: &ScanPlan,
    previews: bool,
) -> Result<Vec<String>, IoError> {
    let mut files = Vec::new();
    for img in &set.images {
        let mut raw = Vec::with_capacity(img.counts.len() * 2);
        for &c in &img.counts {
            let c16 = u16::try_from(c).map_err(|_| IoError::Overflow {
                view: img.view_index,
                module: img.module_index,
                count: c,
            })?;
            raw.extend_from_slice(&c16.to_le_bytes());
        }
        let stem = image_stem(img.view_index, img.module_index);
        write_bytes(&dir.join(format!("{stem}.raw")), &raw)?;
        let sidecar = ImageSidecar {
            view_index: img.view_index,
            module_index: img.module_index,
            rows: img.rows,
            cols: img.cols,
            pixel_pitch_mm: img.pixel_pitch,
            dtype: "u16le".into(),
            plan_fingerprint: set.plan_fingerprint.clone(),
            seed: set.seed,
            pose: plan.view_poses(img.view_index)[img.module_index],
        };
        write_json(&dir.join(format!("{stem}.json")), &sidecar)?;
        files.push(format!("{stem}.raw"));
        files.push(format!("{stem}.json"));
        if previews {
            let values: Vec<f64> = img.counts.iter().map(|&c| f64::from(c)).collect();
            // stored bottom row first, PGM wants the top row first
            let pgm = pgm_bytes(img.cols, img.rows, |x, y| values[(img.rows - 1 - y) * img.cols + x]);
            let name = format!("previews/{stem}.pgm");
            write_bytes(&dir.join(&name), &pgm)?;
            files.push(name);
        }
    }
    let index = ProjectionIndex {
        plan_fingerprint: set.plan_fingerprint.clone(),
        set_fingerprint: set.fingerprint(),
        seed: set.seed,
        total_emissions: set.total_emissions,
        num_views: set.num_views,
        num_modules: set.num_modules,
        dtype: "u16le".into(),
        files: files.iter().filter(|f| f.ends_with(".raw")).cloned().collect(),
    };
    write_json(&dir.join(PROJECTION_INDEX), &index)?;
    files.push(PROJECTION_INDEX.into());
    Ok(files)
}

pub fn read_projection_set(dir: &Path) -> Result<ProjectionSet, IoError> {
    let index: ProjectionIndex = read_json(&dir.join(PROJECTION_INDEX))?;
    let mut images = Vec::with_capacity(index.num_views * index.num_modules);
    for v in 0..index.num_views {
        for m in 0..index.num_modules {
            let stem = image_stem(v, m);
            let side_path = dir.join(format!("{stem}.json"));
            let side: ImageSidecar = read_json(&side_path)?;
            let raw_path = dir.join(format!("{stem}.raw"));
            let raw = read_bytes(&raw_path)?;
            if raw.len() != side.rows * side.cols * 2 {
                return Err(IoError::Format {
                    path: raw_path,
                    reason: format!("{} bytes, expected {}x{} u16", raw.len(), side.rows, side.cols),
                });
            }
            if side.plan_fingerprint != index.plan_fingerprint {
                return Err(IoError::Format {
                    path: side_path,
                    reason: format!(
                        "plan fingerprint {} differs from index {}",
                        side.plan_fingerprint, index.plan_fingerprint
                    ),
                });
            }
            images.push(ProjectionImage {
                view_index: v,
                module_index: m,
                rows: side.rows,
                cols: side.cols,
                counts: raw.chunks_exact(2).map(|b| u32::from(u16::from_le_bytes([b[0], b[1]]))).collect(),
                pixel_pitch: side.pixel_pitch_mm,
            });
        }
    }
    Ok(ProjectionSet {
        plan_fingerprint: index.plan_fingerprint,
        seed: index.seed,
        total_emissions: index.total_emissions,
        num_views: index.num_views,
        num_modules: index.num_modules,
        images,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeSidecar {
    pub dims: [usize; 3],
    pub voxel_size_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub dtype: String,
    /// Axis that varies fastest in the payload.
    pub order: String,
    pub plan_fingerprint: Fingerprint,
}

impl VolumeSidecar {
    fn new(grid: &VoxelGrid, dtype: &str, plan_fingerprint: &Fingerprint) -> Self {
        VolumeSidecar {
            dims: grid.dims,
            voxel_size_mm: grid.voxel_size.into(),
            origin_mm: grid.origin.into(),
            dtype: dtype.into(),
            order: "x-fastest".into(),
            plan_fingerprint: plan_fingerprint.clone(),
        }
    }

    pub fn grid(&self) -> VoxelGrid {
        VoxelGrid { dims: self.dims, origin: Vec3::from(self.origin_mm), voxel_size: Vec3::from(self.voxel_size_mm) }
    }
}

/// `<stem>.raw` as f32 LE plus `<stem>.json`.
pub fn write_volume(
    dir: &Path,
    stem: &str,
    volume: &VoxelVolume,
    plan_fingerprint: &Fingerprint,
) -> Result<Vec<String>, IoError> {
    let mut raw = Vec::with_capacity(volume.values.len() * 4);
    for &v in &volume.values {
        raw.extend_from_slice(&(v as f32).to_le_bytes());
    }
    write_bytes(&dir.join(format!("{stem}.raw")), &raw)?;
    write_json(&dir.join(format!("{stem}.json")), &VolumeSidecar::new(&volume.grid, "f32le", plan_fingerprint))?;
    Ok(vec![format!("{stem}.raw"), format!("{stem}.json")])
}

pub fn read_volume(dir: &Path, stem: &str) -> Result<(VoxelVolume, Fingerprint), IoError> {
    let side_path = dir.join(format!("{stem}.json"));
    let side: VolumeSidecar = read_json(&side_path)?;
    if side.dtype != "f32le" {
        return Err(IoError::Format { path: side_path, reason: format!("unsupported dtype {}", side.dtype) });
    }
    let grid = side.grid();
    grid.validate().map_err(|e| IoError::Format { path: side_path.clone(), reason: e.to_string() })?;
    let raw_path = dir.join(format!("{stem}.raw"));
    let raw = read_bytes(&raw_path)?;
    if raw.len() != grid.len() * 4 {
        return Err(IoError::Format {
            path: raw_path,
            reason: format!("{} bytes, expected {} f32 values", raw.len(), grid.len()),
        });
    }
    let values = raw.chunks_exact(4).map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))).collect();
    Ok((VoxelVolume { grid, values }, side.plan_fingerprint))
}

/// Binary mask as one byte per voxel (0 or 1) with a sidecar.
pub fn write_mask(
    dir: &Path,
    stem: &str,
    grid: &VoxelGrid,
    mask: &[bool],
    plan_fingerprint: &Fingerprint,
) -> Result<Vec<String>, IoError> {
    let raw: Vec<u8> = mask.iter().map(|&b| u8::from(b)).collect();
    write_bytes(&dir.join(format!("{stem}.raw")), &raw)?;
    write_json(&dir.join(format!("{stem}.json")), &VolumeSidecar::new(grid, "u8", plan_fingerprint))?;
    Ok(vec![format!("{stem}.raw"), format!("{stem}.json")])
}

/// 8-bit binary PGM of a `width x height` image, scaled to its maximum.
pub fn pgm_bytes(width: usize, height: usize, value: impl Fn(usize, usize) -> f64) -> Vec<u8> {
    let mut max = 0.0f64;
    for y in 0..height {
        for x in 0..width {
            max = max.max(value(x, y));
        }
    }
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    for y in 0..height {
        for x in 0..width {
            out.push((value(x, y).max(0.0) * scale).round().min(255.0) as u8);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlicePlane {
    /// Constant z through the grid center.
    Xy,
    /// Constant y through the grid center.
    Xz,
}

/// Central slice of `volume`, top row at the largest y (or z).
pub fn slice_pgm(volume: &VoxelVolume, plane: SlicePlane) -> Vec<u8> {
    let [nx, ny, nz] = volume.grid.dims;
    match plane {
        SlicePlane::Xy => pgm_bytes(nx, ny, |x, y| volume.get([x, ny - 1 - y, nz / 2])),
        SlicePlane::Xz => pgm_bytes(nx, nz, |x, z| volume.get([x, ny / 2, nz - 1 - z])),
    }
}
