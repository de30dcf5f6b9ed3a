use lspect::analysis::*;
use lspect::recon::VoxelVolume;
use lspect::siddon::VoxelGrid;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn gauss(amp: f64, mu: f64, sigma: f64, base: f64) -> impl Fn(f64) -> f64 {
    move |x| base + amp * (-(x - mu).powi(2) / (2.0 * sigma * sigma)).exp()
}

/// 64 samples at 0.5 mm, centered on zero.
fn desk_profile(f: impl Fn(f64) -> f64) -> ProfileCurve {
    ProfileCurve::sampled(64, -15.75, 0.5, f)
}

#[test]
fn noiseless_fit_is_exact() {
    let fit = fit_gaussian(&desk_profile(gauss(1.0, 0.0, 2.0, 0.0))).unwrap();
    assert!((fit.amplitude - 1.0).abs() < 1e-6);
    assert!(fit.mean.abs() < 1e-6);
    assert!((fit.sigma - 2.0).abs() < 1e-6);
    assert!(fit.baseline.abs() < 1e-6);
    assert!(fit.rmse >= 0.0 && fit.rmse < 1e-6);
}

#[test]
fn one_percent_noise_keeps_sigma_within_two_percent() {
    let clean = desk_profile(gauss(1.0, 0.0, 2.0, 0.0));
    let noise = Normal::new(0.0, 0.01).unwrap();
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = clean.clone();
        for c in &mut p.counts {
            *c += noise.sample(&mut rng);
        }
        let fit = fit_gaussian(&p).unwrap();
        worst = worst.max((fit.sigma - 2.0).abs() / 2.0);
    }
    assert!(worst < 0.02, "worst relative sigma error {worst}");
}

#[test]
fn constant_profile_does_not_converge() {
    let err = fit_gaussian(&desk_profile(|_| 3.0)).unwrap_err();
    assert!(matches!(err, AnalysisError::NotConverged { .. }), "{err:?}");
}

#[test]
fn short_profile_rejected() {
    let p = ProfileCurve::sampled(4, 0.0, 1.0, gauss(1.0, 1.5, 1.0, 0.0));
    assert!(matches!(fit_gaussian(&p), Err(AnalysisError::TooShort(4))));
}

fn fit_with_sigma(sigma: f64) -> GaussianFit {
    GaussianFit { amplitude: 1.0, mean: 0.0, sigma, baseline: 0.0, rmse: 0.0, iterations: 0 }
}

#[test]
fn fwhm_examples() {
    assert!((fwhm(&fit_with_sigma(1.0)) - 2.3548).abs() < 1e-4);
    // 9.48 mm and 5.01 mm widths
    assert!((fwhm(&fit_with_sigma(4.026)) - 9.48).abs() < 0.005);
    assert!((fwhm(&fit_with_sigma(2.127)) - 5.01).abs() < 0.005);
}

#[test]
fn impulse_has_flat_mtf() {
    let single = ProfileCurve::new(vec![0.0], vec![5.0]);
    assert_eq!(mtf(&single, 0.0).unwrap().magnitude, vec![1.0]);
    let mut counts = vec![0.0; 32];
    counts[11] = 4.0;
    let spike = ProfileCurve::sampled(32, 0.0, 0.5, |x| counts[(x / 0.5).round() as usize]);
    let m = mtf(&spike, 0.0).unwrap();
    assert!(m.magnitude.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    assert!((m.nyquist() - 1.0).abs() < 1e-12);
}

#[test]
fn gaussian_mtf_matches_analytic_pair() {
    for sigma in [1.0, 1.5, 2.0] {
        let p = ProfileCurve::sampled(256, -63.75, 0.5, gauss(1.0, 0.25, sigma, 0.0));
        let m = mtf(&p, 0.0).unwrap();
        let half = 0.5 * m.nyquist();
        for (f, v) in m.frequencies.iter().zip(&m.magnitude) {
            if *f < half {
                let want = (-2.0 * std::f64::consts::PI.powi(2) * sigma * sigma * f * f).exp();
                assert!((v - want).abs() <= 0.02 * want, "sigma {sigma} f {f}: {v} vs {want}");
            }
        }
    }
}

#[test]
fn mirrored_profile_same_mtf() {
    let p = desk_profile(gauss(2.0, 1.3, 1.7, 0.1));
    let mut rev = p.clone();
    rev.counts.reverse();
    let (a, b) = (mtf(&p, 0.1).unwrap(), mtf(&rev, 0.1).unwrap());
    for (x, y) in a.magnitude.iter().zip(&b.magnitude) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn zero_energy_profile() {
    assert!(matches!(mtf(&desk_profile(|_| 2.0), 2.0), Err(AnalysisError::ZeroEnergy)));
}

#[test]
fn high_band_is_upper_half() {
    let m = MtfCurve { frequencies: vec![0.0, 0.25, 0.5, 0.75, 1.0], magnitude: vec![1.0, 0.8, 0.6, 0.4, 0.2] };
    assert!((m.high_band_mean() - 0.3).abs() < 1e-12);
}

fn separable_volume(n: usize, center: [f64; 3], sigma: [f64; 3]) -> VoxelVolume {
    let grid = VoxelGrid::cube(n, n as f64 * 0.5);
    let mut vol = VoxelVolume::zeros(grid);
    for (i, v) in vol.values.iter_mut().enumerate() {
        let c = grid.voxel_center(grid.unlinear(i));
        *v = (0..3).map(|a| (-(c[a] - center[a]).powi(2) / (2.0 * sigma[a].powi(2))).exp()).product();
    }
    vol
}

#[test]
fn profiles_through_the_peak() {
    let vol = separable_volume(24, [0.25, -0.75, 1.25], [1.5, 2.0, 1.0]);
    let peak = vol.argmax();
    let along = |a: usize| gauss(1.0, [0.25, -0.75, 1.25][a], [1.5, 2.0, 1.0][a], 0.0);
    for (a, axis) in [Axis::X, Axis::Y, Axis::Z].into_iter().enumerate() {
        let p = extract_profile(&vol, axis).unwrap();
        assert_eq!(p.len(), 24);
        assert!((p.spacing().unwrap() - 0.5).abs() < 1e-12);
        // the off-axis factors are exactly 1 at the grid-aligned peak
        let scale: f64 = (0..3).filter(|&b| b != a).map(|b| along(b)(vol.grid.voxel_center(peak)[b])).product();
        for (x, y) in p.positions.iter().zip(&p.counts) {
            let want = along(a)(*x) * scale;
            assert!((y - want).abs() <= 1e-12 * want.max(1e-300), "{axis:?} {x}");
        }
    }

    let mut hot = VoxelVolume::zeros(VoxelGrid::cube(8, 8.0));
    hot.values[hot.grid.linear([3, 5, 2])] = 9.0;
    let p = extract_profile(&hot, Axis::Y).unwrap();
    assert_eq!(p.counts.iter().filter(|&&c| c != 0.0).count(), 1);
    assert_eq!(p.counts[5], 9.0);
    assert!(matches!(extract_profile(&VoxelVolume::zeros(hot.grid), Axis::X), Err(AnalysisError::ZeroVolume)));
}

#[test]
fn artefact_ratio_and_axial_components() {
    let grid = VoxelGrid::cube(16, 16.0);
    let mut vol = VoxelVolume::zeros(grid);
    let mut truth = vec![false; grid.len()];
    // object: a 2x2x2 block away from the axis
    for k in 2..4 {
        for j in 2..4 {
            for i in 2..4 {
                truth[grid.linear([i, j, k])] = true;
                vol.values[grid.linear([i, j, k])] = 10.0;
            }
        }
    }
    assert_eq!(artefact_ratio(&vol, &truth, 3.0).unwrap(), 0.0);
    // a column of half the object's intensity on the central axis
    for k in 0..16 {
        vol.values[grid.linear([8, 8, k])] = 5.0;
    }
    let a = artefact_ratio(&vol, &truth, 0.75).unwrap();
    // the 0.75-voxel cylinder holds the four columns around the axis
    assert!((a - (5.0 / 4.0) / 10.0).abs() < 1e-12, "{a}");

    let mask: Vec<bool> = vol.values.iter().map(|&v| v >= 5.0).collect();
    let spurious = spurious_axial_components(&mask, &truth, &grid);
    assert_eq!(spurious.len(), 1);
    assert_eq!(spurious[0].voxels, 16);
    assert_eq!(components(&mask, &truth, &grid).len(), 2);
}

proptest! {
    #[test]
    fn fwhm_from_fit_tracks_sigma(sigma in 1.0f64..4.0, mu in -2.0f64..2.0, amp in 0.5f64..50.0, base in 0.0f64..5.0) {
        // sigma >= 2 voxel pitches of 0.5 mm
        let fit = fit_gaussian(&desk_profile(gauss(amp, mu, sigma, base))).unwrap();
        let want = 2.0 * (2.0 * 2f64.ln()).sqrt() * sigma;
        prop_assert!((fwhm(&fit) - want).abs() <= 1e-3 * want);
    }

    #[test]
    fn mtf_is_normalised(counts in prop::collection::vec(0.0f64..100.0, 2..80)) {
        prop_assume!(counts.iter().any(|&c| c > 0.0));
        let p = ProfileCurve::sampled(counts.len(), 0.0, 0.5, |x| counts[(x / 0.5).round() as usize]);
        let m = mtf(&p, 0.0).unwrap();
        prop_assert_eq!(m.magnitude[0], 1.0);
        prop_assert!(m.magnitude.iter().all(|&v| v <= 1.0 + 1e-9));
    }
}
