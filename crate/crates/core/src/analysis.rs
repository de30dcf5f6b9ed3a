//! Point-source response, Gaussian fitting, FWHM and MTF, plus the
//! central-axis artefact measures used to compare scan orbits.

use std::collections::VecDeque;

use nalgebra::{Matrix4, Vector4};
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::recon::VoxelVolume;
use crate::siddon::VoxelGrid;

/// `2 sqrt(2 ln 2)`.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

const MAX_ITERATIONS: usize = 200;
const CONVERGENCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("volume has no positive value")]
    ZeroVolume,
    #[error("profile needs at least 5 samples, got {0}")]
    TooShort(usize),
    #[error("profile samples must be uniformly spaced and increasing")]
    NonUniform,
    #[error("gaussian fit did not converge after {iterations} iterations")]
    NotConverged { iterations: usize, best: GaussianFit },
    #[error("profile carries no signal above its baseline")]
    ZeroEnergy,
    #[error("{0}")]
    Mask(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            other => Err(format!("unknown axis `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileCurve {
    /// Voxel centers along the line, mm.
    pub positions: Vec<f64>,
    pub counts: Vec<f64>,
}

impl ProfileCurve {
    pub fn new(positions: Vec<f64>, counts: Vec<f64>) -> Self {
        ProfileCurve { positions, counts }
    }

    /// Samples of `f` at `n` points `start + i * step`.
    pub fn sampled(n: usize, start: f64, step: f64, f: impl Fn(f64) -> f64) -> Self {
        let positions: Vec<f64> = (0..n).map(|i| start + i as f64 * step).collect();
        let counts = positions.iter().map(|&x| f(x)).collect();
        ProfileCurve { positions, counts }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn spacing(&self) -> Result<f64, AnalysisError> {
        if self.positions.len() < 2 || self.positions.len() != self.counts.len() {
            return Err(AnalysisError::NonUniform);
        }
        let n = self.positions.len();
        let step = (self.positions[n - 1] - self.positions[0]) / (n - 1) as f64;
        if !(step > 0.0) {
            return Err(AnalysisError::NonUniform);
        }
        let uniform = self.positions.windows(2).all(|w| ((w[1] - w[0]) - step).abs() <= 1e-9 * step.max(1.0));
        if uniform {
            Ok(step)
        } else {
            Err(AnalysisError::NonUniform)
        }
    }
}

/// Line of voxel values through the volume maximum along `axis`.
pub fn extract_profile(volume: &VoxelVolume, axis: Axis) -> Result<ProfileCurve, AnalysisError> {
    if !(volume.max() > 0.0) {
        return Err(AnalysisError::ZeroVolume);
    }
    let grid = &volume.grid;
    let peak = volume.argmax();
    let a = axis.index();
    let n = grid.dims[a];
    let mut positions = Vec::with_capacity(n);
    let mut counts = Vec::with_capacity(n);
    for i in 0..n {
        let mut idx = peak;
        idx[a] = i;
        positions.push(grid.voxel_center(idx)[a]);
        counts.push(volume.get(idx));
    }
    Ok(ProfileCurve { positions, counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub mean: f64,
    pub sigma: f64,
    pub baseline: f64,
    pub rmse: f64,
    pub iterations: usize,
}

impl GaussianFit {
    pub fn eval(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.sigma;
        self.baseline + self.amplitude * (-0.5 * z * z).exp()
    }
}

fn residual_sse(p: &Vector4<f64>, xs: &[f64], ys: &[f64]) -> f64 {
    let (amp, mu, sigma, base) = (p[0], p[1], p[2], p[3]);
    xs.iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let z = (x - mu) / sigma;
            let r = y - (base + amp * (-0.5 * z * z).exp());
            r * r
        })
        .sum()
}

fn moments_start(profile: &ProfileCurve) -> Vector4<f64> {
    let ys = &profile.counts;
    let xs = &profile.positions;
    let min = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let (imax, max) =
        ys.iter().copied().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, y)| if y > acc.1 { (i, y) } else { acc });
    let w: f64 = ys.iter().map(|y| y - min).sum();
    let mean = xs.iter().zip(ys).map(|(x, y)| x * (y - min)).sum::<f64>() / w;
    let var = xs.iter().zip(ys).map(|(x, y)| (x - mean).powi(2) * (y - min)).sum::<f64>() / w;
    let step = (xs[xs.len() - 1] - xs[0]) / (xs.len() - 1) as f64;
    Vector4::new(max - min, xs[imax], var.sqrt().max(0.5 * step), min)
}

/// Damped least-squares fit of `a + A exp(-(x - mu)^2 / 2 sigma^2)`.
///
/// Starts from the profile moments and iterates Levenberg-Marquardt steps
/// until the largest relative parameter change drops below 1e-10.
pub fn fit_gaussian(profile: &ProfileCurve) -> Result<GaussianFit, AnalysisError> {
    let n = profile.len();
    if n < 5 {
        return Err(AnalysisError::TooShort(n));
    }
    profile.spacing()?;
    let xs = &profile.positions;
    let ys = &profile.counts;

    let mut p = moments_start(profile);
    let mut sse = residual_sse(&p, xs, ys);
    let finish = |p: &Vector4<f64>, sse: f64, iterations: usize| GaussianFit {
        amplitude: p[0],
        mean: p[1],
        sigma: p[2].abs(),
        baseline: p[3],
        rmse: (sse / n as f64).sqrt(),
        iterations,
    };
    if !(p[0] > 0.0) || !sse.is_finite() {
        return Err(AnalysisError::NotConverged { iterations: 0, best: finish(&p, sse, 0) });
    }

    let mut lambda = 1e-3;
    for iter in 1..=MAX_ITERATIONS {
        let (amp, mu, sigma) = (p[0], p[1], p[2]);
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        for (&x, &y) in xs.iter().zip(ys) {
            let dx = x - mu;
            let e = (-0.5 * dx * dx / (sigma * sigma)).exp();
            let r = y - (p[3] + amp * e);
            let j = Vector4::new(e, amp * e * dx / (sigma * sigma), amp * e * dx * dx / sigma.powi(3), 1.0);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let scale = Vector4::new(amp.abs(), sigma.abs(), sigma.abs(), amp.abs()).map(|s| s.max(f64::MIN_POSITIVE));

        // A few damping attempts per iteration before giving up on progress.
        let mut stepped = false;
        for _ in 0..16 {
            let mut a = jtj;
            for d in 0..4 {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-300);
            }
            let Some(delta) = a.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let rel = delta.component_div(&scale).amax();
            let trial = p + delta;
            let trial_sse = residual_sse(&trial, xs, ys);
            if trial_sse.is_finite() && trial_sse <= sse {
                p = trial;
                sse = trial_sse;
                lambda = (lambda * 0.1).max(1e-12);
                stepped = true;
                if rel < CONVERGENCE {
                    return Ok(finish(&p, sse, iter));
                }
                break;
            }
            if rel < CONVERGENCE {
                // the proposed move is negligible: already at the minimum
                return Ok(finish(&p, sse, iter));
            }
            lambda *= 10.0;
        }
        if !stepped && lambda > 1e16 {
            return Err(AnalysisError::NotConverged { iterations: iter, best: finish(&p, sse, iter) });
        }
    }
    Err(AnalysisError::NotConverged { iterations: MAX_ITERATIONS, best: finish(&p, sse, MAX_ITERATIONS) })
}

/// Full width at half maximum of the fitted Gaussian.
pub fn fwhm(fit: &GaussianFit) -> f64 {
    FWHM_PER_SIGMA * fit.sigma
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtfCurve {
    /// Cycles per mm, from zero up to Nyquist.
    pub frequencies: Vec<f64>,
    pub magnitude: Vec<f64>,
}

impl MtfCurve {
    pub fn nyquist(&self) -> f64 {
        self.frequencies.last().copied().unwrap_or(0.0)
    }

    /// Mean magnitude over the upper half of the band, `(f_N / 2, f_N]`.
    pub fn high_band_mean(&self) -> f64 {
        let cut = 0.5 * self.nyquist();
        let vals: Vec<f64> =
            self.frequencies.iter().zip(&self.magnitude).filter(|(f, _)| **f > cut).map(|(_, m)| *m).collect();
        if vals.is_empty() {
            return 0.0;
        }
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

/// Normalised DFT magnitude of `profile - baseline`.
pub fn mtf(profile: &ProfileCurve, baseline: f64) -> Result<MtfCurve, AnalysisError> {
    let n = profile.len();
    if n == 0 {
        return Err(AnalysisError::ZeroEnergy);
    }
    let step = if n == 1 { 1.0 } else { profile.spacing()? };
    let mut buf: Vec<Complex64> = profile.counts.iter().map(|&y| Complex64::new(y - baseline, 0.0)).collect();
    if buf.iter().all(|c| c.re == 0.0) {
        return Err(AnalysisError::ZeroEnergy);
    }
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let dc = buf[0].norm();
    if !(dc > 0.0) {
        return Err(AnalysisError::ZeroEnergy);
    }
    let half = n / 2;
    Ok(MtfCurve {
        frequencies: (0..=half).map(|k| k as f64 / (n as f64 * step)).collect(),
        magnitude: (0..=half).map(|k| buf[k].norm() / dc).collect(),
    })
}

/// Analytic MTF of a fitted Gaussian at the given frequencies.
pub fn gaussian_mtf(fit: &GaussianFit, frequencies: &[f64]) -> MtfCurve {
    let s = fit.sigma;
    MtfCurve {
        frequencies: frequencies.to_vec(),
        magnitude: frequencies.iter().map(|f| (-2.0 * std::f64::consts::PI.powi(2) * s * s * f * f).exp()).collect(),
    }
}

/// Normalised in-plane distance of every voxel column from the grid's
/// central z axis, in voxels.
fn axial_distance(grid: &VoxelGrid, i: usize, j: usize) -> f64 {
    let dx = i as f64 + 0.5 - 0.5 * grid.dims[0] as f64;
    let dy = j as f64 + 0.5 - 0.5 * grid.dims[1] as f64;
    (dx * dx + dy * dy).sqrt()
}

/// Mean value in the central cylinder (radius in voxels, full height)
/// outside the true object, divided by the mean value inside the object.
pub fn artefact_ratio(volume: &VoxelVolume, truth: &[bool], radius_voxels: f64) -> Result<f64, AnalysisError> {
    let grid = &volume.grid;
    if truth.len() != grid.len() {
        return Err(AnalysisError::Mask("truth mask does not match the volume".into()));
    }
    let (mut bg_sum, mut bg_n, mut obj_sum, mut obj_n) = (0.0, 0usize, 0.0, 0usize);
    for (lin, &v) in volume.values.iter().enumerate() {
        if truth[lin] {
            obj_sum += v;
            obj_n += 1;
        } else {
            let [i, j, _] = grid.unlinear(lin);
            if axial_distance(grid, i, j) <= radius_voxels {
                bg_sum += v;
                bg_n += 1;
            }
        }
    }
    if obj_n == 0 || bg_n == 0 {
        return Err(AnalysisError::Mask("central cylinder or object region is empty".into()));
    }
    let obj = obj_sum / obj_n as f64;
    if !(obj > 0.0) {
        return Err(AnalysisError::ZeroVolume);
    }
    Ok((bg_sum / bg_n as f64) / obj)
}

/// A 6-connected region of a binary volume.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub voxels: usize,
    pub touches_axis: bool,
    pub overlaps_truth: bool,
}

/// Label the 6-connected components of `mask`.
pub fn components(mask: &[bool], truth: &[bool], grid: &VoxelGrid) -> Vec<Component> {
    let [nx, ny, nz] = grid.dims;
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for seed in 0..mask.len() {
        if !mask[seed] || seen[seed] {
            continue;
        }
        seen[seed] = true;
        queue.push_back(seed);
        let mut comp = Component { voxels: 0, touches_axis: false, overlaps_truth: false };
        while let Some(lin) = queue.pop_front() {
            comp.voxels += 1;
            comp.overlaps_truth |= truth[lin];
            let [i, j, k] = grid.unlinear(lin);
            comp.touches_axis |= axial_distance(grid, i, j) <= 0.75;
            let mut push = |ii: usize, jj: usize, kk: usize| {
                let l = grid.linear([ii, jj, kk]);
                if mask[l] && !seen[l] {
                    seen[l] = true;
                    queue.push_back(l);
                }
            };
            if i > 0 {
                push(i - 1, j, k);
            }
            if i + 1 < nx {
                push(i + 1, j, k);
            }
            if j > 0 {
                push(i, j - 1, k);
            }
            if j + 1 < ny {
                push(i, j + 1, k);
            }
            if k > 0 {
                push(i, j, k - 1);
            }
            if k + 1 < nz {
                push(i, j, k + 1);
            }
        }
        out.push(comp);
    }
    out
}

/// Components that reach the central axis without overlapping the object.
pub fn spurious_axial_components(mask: &[bool], truth: &[bool], grid: &VoxelGrid) -> Vec<Component> {
    components(mask, truth, grid).into_iter().filter(|c| c.touches_axis && !c.overlaps_truth).collect()
}
