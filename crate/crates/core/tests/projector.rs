use lspect::geometry::*;
use lspect::phantom::*;
use lspect::projector::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn module(pitch: f64, diameter: f64, thickness: f64, gap_factor: f64) -> ModuleSpec {
    let pinholes = PinholeArraySpec { pitch, diameter, plate_thickness: thickness, plate_height: 16.0 * pitch };
    ModuleSpec {
        width_multiplier: 1,
        pinholes,
        detector_gap: pinholes.min_detector_gap() * gap_factor,
        sensor_pitch: pitch / 20.0,
        binning: 1,
    }
}

fn plan(n: u32, s: f64) -> ScanPlan {
    build_scan_plan(RingSpec { num_modules: n, object_gap: 25.0, center_shift: s }, module(0.96, 0.192, 1.0, 1.0))
        .unwrap()
}

fn pool(n: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap()
}

#[test]
fn same_seed_same_projections() {
    let p = plan(4, 10.0);
    let ph = three_spheres(200_000);
    let a = simulate_all(&p, &ph, 3).unwrap();
    let b = simulate_all(&p, &ph, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.images.len(), p.num_views() * 4);
    assert_ne!(a, simulate_all(&p, &ph, 4).unwrap());
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let p = plan(4, 5.0);
    let ph = three_spheres(150_000);
    let one = pool(1).install(|| simulate_all(&p, &ph, 8).unwrap());
    let three = pool(3).install(|| simulate_all(&p, &ph, 8).unwrap());
    assert_eq!(one, three);
}

#[test]
fn single_view_single_module_plan_gives_one_image() {
    let mut p = plan(1, 0.0);
    p.view_angles.truncate(1);
    p.poses.truncate(1);
    let set = simulate_all(&p, &point_source(0.2, 10_000).unwrap(), 1).unwrap();
    assert_eq!(set.images.len(), 1);
}

#[test]
fn counts_never_exceed_emissions() {
    let p = plan(8, 10.0);
    let ph = three_spheres(300_000);
    let (set, stats) = simulate_all_with(&p, &ph, 21, SimulateOptions::default()).unwrap();
    assert_eq!(stats.emitted, 300_000);
    assert_eq!(stats.emitted, stats.culled + stats.outside_fov + stats.septal + stats.off_detector + stats.counted);
    assert_eq!(set.total_counts(), stats.counted);
    assert!(set.total_counts() <= ph.total_emissions);
    assert!(set.total_counts() > 0);
}

#[test]
fn culling_does_not_change_images() {
    let p = plan(3, 10.0);
    let shapes = vec![
        Shape::sphere([0.0, 0.0, 0.0], 3.0),
        Shape::cylinder([6.0, -4.0, 2.0], 2.0, 5.0),
        Shape::sphere([-9.0, 7.0, -10.0], 4.0),
    ];
    let ph = Phantom::new(shapes, 200_000).unwrap();
    let (with, s1) = simulate_all_with(&p, &ph, 6, SimulateOptions { cull: true }).unwrap();
    let (without, s2) = simulate_all_with(&p, &ph, 6, SimulateOptions { cull: false }).unwrap();
    assert_eq!(with, without);
    assert!(s1.culled > 0);
    assert_eq!(s2.culled, 0);
}

#[test]
fn cull_examples() {
    let p = plan(8, 0.0);
    let pose = p.view_poses(0)[3];
    let behind_detector = pose.detector_point(p.module.detector_gap, 0.0, 0.0) - pose.plate_normal;
    let on_axis = pose.plate_origin + pose.plate_normal * 25.0;
    let kept = cull_emissions(&[behind_detector, on_axis], &p, 0);
    assert_eq!(kept, vec![on_axis]);
}

#[test]
fn shift_changes_view_zero() {
    let ph = three_spheres(200_000);
    let a = simulate_view(&plan(8, 0.0), &ph, 0, 1).unwrap();
    let b = simulate_view(&plan(8, 10.0), &ph, 0, 1).unwrap();
    assert_ne!(a, b);
}

#[test]
fn out_of_range_view() {
    let p = plan(8, 0.0);
    let err = simulate_view(&p, &point_source(0.2, 10).unwrap(), p.num_views(), 0).unwrap_err();
    assert!(matches!(err, ProjectionError::ViewOutOfRange { .. }));
}

#[test]
fn zero_emissions_zero_images() {
    let p = plan(8, 0.0);
    let set = simulate_all(&p, &point_source(0.2, 0).unwrap(), 0).unwrap();
    assert_eq!(set.total_counts(), 0);
    assert_eq!(set.images.len(), p.poses.len());
}

fn random_source(rng: &mut ChaCha8Rng, m: &ModuleSpec) -> Vec3 {
    let half_w = 0.5 * m.width() + 3.0;
    let half_h = 0.5 * m.pinholes.plate_height + 3.0;
    Vec3::new(rng.gen_range(-half_w..half_w), rng.gen_range(-half_h..half_h), rng.gen_range(0.5..40.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// No detector pixel can be reached through two different pinholes.
    #[test]
    fn pinhole_footprints_are_disjoint(
        pitch in 0.5f64..3.0,
        frac in 0.05f64..0.6,
        thickness in 0.3f64..2.5,
        gap_factor in 1.0f64..1.5,
        seed in 0u64..10_000,
    ) {
        let m = module(pitch, pitch * frac, thickness, gap_factor);
        let offsets = m.pinhole_offsets();
        let (rows, cols) = m.detector_shape();
        let mut owner = vec![usize::MAX; rows * cols];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = m.pinholes.radius();
        let mut hits = 0;
        for _ in 0..20_000 {
            let src = random_source(&mut rng, &m);
            let k = rng.gen_range(0..offsets.len());
            let rho = r * rng.gen::<f64>().sqrt();
            let ang = rng.gen_range(0.0..std::f64::consts::TAU);
            let ap = (offsets[k].0 + rho * ang.cos(), offsets[k].1 + rho * ang.sin());
            if let RayOutcome::Hit { row, col } = pinhole_ray_hit(&m, k, ap, &src) {
                let o = &mut owner[row * cols + col];
                prop_assert!(*o == usize::MAX || *o == k, "pixel ({row},{col}) reached from {} and {k}", *o);
                *o = k;
                hits += 1;
            }
        }
        prop_assert!(hits > 0);
    }

    /// At the minimum gap the field-of-view cones of neighbouring pinholes
    /// just touch, so a ray through a pinhole center never reaches another
    /// pinhole's cell at or below that gap.
    #[test]
    fn chief_rays_stay_in_their_cell(
        pitch in 0.5f64..3.0,
        frac in 0.05f64..0.6,
        thickness in 0.3f64..2.5,
        gap_factor in 0.5f64..0.999_999,
        seed in 0u64..10_000,
    ) {
        let m = module(pitch, pitch * frac, thickness, gap_factor);
        let offsets = m.pinhole_offsets();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..5_000 {
            let src = random_source(&mut rng, &m);
            let k = rng.gen_range(0..offsets.len());
            let out = pinhole_ray_hit(&m, k, offsets[k], &src);
            prop_assert!(out != RayOutcome::Septal, "{out:?}");
        }
    }
}
