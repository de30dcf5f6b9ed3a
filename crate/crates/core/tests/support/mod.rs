//! Oracles shared by the integration tests and the acceptance gate.
#![allow(dead_code)]

use std::collections::HashMap;

use lspect::geometry::Vec3;
use lspect::siddon::{RaySegment, VoxelGrid};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// (N, P, g, L, t, d, phi, n, h, alpha, theta)
pub type OracleRow = (u32, f64, f64, f64, f64, f64, f64, usize, f64, f64, f64);

/// Evaluated independently in double precision. `n = 0` marks coverage
/// beyond a full turn.
#[rustfmt::skip]
pub const ORACLE: [OracleRow; 50] = [
    (7, 1.92, 15.914101036000622, 0.96, 0.7434741904622253, 0.04444094278933286, 48.329669404827946, 8, 8.03015393065709, 6.8415349106345005, 6.904238486403992),
    (14, 8.840530665458672, 53.8230739292945, 2.946843555152891, 2.028731940105493, 1.6957886921972907, 131.4579812869702, 3, 1.7627065419000807, 79.7835590325535, 9.389855806212157),
    (13, 5.493866919827766, 50.68478474620271, 2.746933459913883, 1.7449715920084374, 2.4452355655094298, 80.65695884889482, 5, 0.9801347813474475, 108.97509316957509, 6.204381449914987),
    (2, 5.76, 59.49329630442787, 2.88, 0.9561015347558806, 2.4149415989977965, 11.085829105607438, 33, 0.5701115963300462, 136.80170170872296, 5.542914552803719),
    (13, 0.96, 14.68849343525807, 0.96, 1.390574482579855, 0.47340373010760634, 48.66373542902519, 8, 1.409950342990772, 37.60100151756405, 3.743364263771168),
    (1, 1.36569054071754, 40.528147917652824, 0.45523018023917994, 2.604436127346179, 0.29811068532261803, 1.9305323601468303, 187, 1.988553222086197, 13.05961809752879, 1.9305323601468303),
    (18, 4.717763350167327, 7.044484411609048, 2.3588816750836634, 1.512190996448931, 1.0298119777703238, 666.4818865661601, 0, 1.7319082064247675, 68.51023938868907, 37.02677147589779),
    (18, 5.877980256120616, 15.155706606960617, 2.938990128060308, 1.263337319896445, 2.6302153004090973, 395.0844434081328, 0, 0.7058235709845347, 128.68846166743845, 21.94913574489627),
    (23, 0.3887828695825927, 50.38246767467387, 0.3887828695825927, 1.1866440116268628, 0.1836749102373143, 10.16894736489883, 36, 1.2558788334705466, 17.597426480801786, 0.4421281462999492),
    (8, 6.771046791899044, 27.722249431051914, 2.2570155972996813, 0.30973089828966494, 0.6315108245655262, 111.40245695808504, 4, 0.5534881123267895, 127.74777884355014, 13.92530711976063),
    (24, 2.88, 37.019769039670116, 2.88, 1.6256241229064494, 1.8223262561497702, 106.92364660421087, 4, 1.28456621260079, 96.53025595739466, 4.45515194184212),
    (13, 2.6500311426221543, 19.675627239250886, 2.6500311426221543, 2.7160954592571924, 1.3955599406222652, 100.16895500261563, 4, 2.5787991414244766, 54.38920211873183, 7.705304230970433),
    (22, 1.4391447687788816, 58.970956744235046, 1.4391447687788816, 2.8019153468703593, 1.2365377000180815, 30.7602648017059, 12, 1.6305050035881554, 47.62553131418426, 1.3981938546229955),
    (16, 1.92, 35.60430020927498, 1.92, 2.0258543948324887, 1.4110367566601087, 49.423805042797476, 8, 1.3782916779875625, 69.71553379650157, 3.088987815174842),
    (2, 2.919652938953333, 9.739026663487474, 2.919652938953333, 1.7788955435179328, 0.11319111688621414, 34.09941386336031, 11, 22.94242580424472, 7.281643817530642, 17.049706931680156),
    (6, 1.92, 21.345632676008304, 0.96, 2.770818609179879, 0.14452350364792738, 30.90107051870198, 12, 9.202606488466595, 5.971585210062878, 5.150178419783663),
    (22, 0.986875206790274, 51.66381088992282, 0.986875206790274, 1.3018729246735314, 0.29076957946812887, 24.07730690684509, 15, 2.2092856379645367, 25.180424779671643, 1.0944230412202314),
    (11, 5.76, 36.18851560496757, 2.88, 2.6765765714187713, 2.2575663417049054, 100.10428566473739, 4, 1.7072677739925466, 80.29211091506795, 9.100389605885217),
    (11, 5.76, 50.802701725354225, 2.88, 0.6009027242487652, 2.3509326562096065, 71.38162023468745, 6, 0.36806665670863553, 151.32415002794446, 6.489238203153405),
    (20, 1.92, 13.735768442659312, 0.96, 2.7449023077665307, 0.46772116427063476, 159.91722966656246, 3, 2.8169627726436746, 19.34022348153033, 7.995861483328123),
    (2, 6.618692596775416, 13.009651252399927, 2.2062308655918055, 0.3604885655271511, 0.7368344218032502, 57.08796234645042, 7, 0.5396877347372906, 127.86057946422243, 28.54398117322521),
    (19, 3.869208526899091, 14.780913327807951, 1.2897361756330303, 1.3724279735096068, 0.459274839933661, 283.3579208869075, 2, 1.927026969452261, 37.00502064953229, 14.913574783521447),
    (22, 5.76, 26.65122742033462, 2.88, 2.104742957237488, 0.1423166449310678, 271.3742156093834, 2, 21.29638356700995, 7.736574145640377, 12.335191618608336),
    (3, 2.88, 27.07752696492329, 2.88, 0.36826881293229136, 0.3186173947148117, 18.264948745750353, 20, 1.664400937987605, 81.73115620102446, 6.0883162485834506),
    (4, 1.6631290195136024, 7.079584326185584, 0.8315645097568012, 2.0827404493413337, 0.6472861029240671, 53.59390040985888, 7, 1.3378419781324724, 34.52900272124199, 13.39847510246472),
    (4, 1.92, 52.68977422459196, 0.96, 1.5803032784408806, 0.13994276155031238, 8.350442024419577, 44, 5.4203987776738956, 10.121182085309504, 2.087610506104894),
    (8, 1.5514956822857013, 14.330346843212544, 0.5171652274285671, 2.277375096969468, 0.251961014513387, 49.57729264970316, 8, 2.337225090633601, 12.626667689373058, 6.197161581212895),
    (10, 3.84, 5.509139324626339, 1.92, 2.5644297950525474, 1.4801103710523127, 384.280964219657, 0, 1.663289881213483, 59.98445304422983, 38.428096421965705),
    (5, 5.76, 19.27633295652464, 2.88, 2.605443539074257, 1.2510505152190623, 84.97478504203045, 5, 2.998950602414302, 51.297653560403475, 16.99495700840609),
    (3, 5.76, 58.536094900282755, 1.92, 1.0050356477433509, 0.6896750370233433, 16.900227936957684, 22, 1.39896932618856, 68.91734530888594, 5.633409312319229),
    (14, 7.0525159227062195, 38.36170548493626, 2.350838640902073, 2.3802365961860525, 1.8412388976785008, 147.0544252512517, 3, 1.519507374045396, 75.44769484332275, 10.50388751794655),
    (19, 5.636317647812065, 50.50327262926653, 1.8787725492706886, 0.7169803828153007, 1.5648203158774627, 121.36738924075703, 3, 0.43041461308087353, 130.76672528404166, 6.387757328460896),
    (8, 0.9172392962972022, 49.03485266119534, 0.9172392962972022, 1.1181052346939147, 0.4348620140277209, 8.573886577960964, 42, 1.1791902092780722, 42.50486673116736, 1.0717358222451205),
    (22, 1.2534710164761003, 15.183863911403357, 1.2534710164761003, 2.3327139008935514, 0.0797954720619043, 103.999403141846, 4, 18.321774337224145, 3.9183217185329173, 4.727245597356636),
    (6, 0.6445862252999084, 7.455881380332533, 0.3222931126499542, 1.9027981639795135, 0.10829708057413844, 29.701995787425297, 13, 2.831372460653491, 6.5149093502983275, 4.95033263123755),
    (13, 2.767454485989553, 26.562579817955182, 2.767454485989553, 2.261618835045029, 0.9832731566224373, 77.53250816330436, 5, 3.1827001217766235, 46.99545324115407, 5.96403908948495),
    (3, 1.9039311451371672, 42.49435573172329, 0.9519655725685836, 1.818976540778574, 0.6660658297254622, 7.7000091414418765, 47, 1.2998738013964968, 40.2230515125382, 2.5666697138139587),
    (10, 4.584556182093233, 11.185739088978831, 2.2922780910466165, 0.3733878298630578, 1.1547785020888808, 231.62402832059487, 2, 0.3705943348920482, 144.1636528056279, 23.162402832059488),
    (7, 5.365364515414189, 27.393982985203074, 2.6826822577070946, 2.556935157175651, 1.3539798433466628, 78.30367302802212, 5, 2.533067465505238, 55.805333173380255, 11.18623900400316),
    (17, 7.679880246789434, 37.606782439231885, 2.5599600822631445, 2.0008328346373956, 0.08645377013475082, 198.22447938893234, 2, 29.623070110011874, 4.9482963418458334, 11.660263493466609),
    (6, 0.96, 41.98606601658087, 0.96, 2.716037480857786, 0.032927531152322206, 7.859972236398491, 46, 39.59294684988231, 1.3891679753671884, 1.309995372733082),
    (17, 8.64, 5.942579514692987, 2.88, 1.9274544963856022, 2.2578630944376563, 1224.5284037268123, 0, 1.229274920004192, 99.02767184616107, 72.03108257216543),
    (8, 2.8471825904801293, 29.334297092911857, 2.8471825904801293, 0.6368527361659433, 1.9134445452116675, 44.454083071455166, 9, 0.47381462599709845, 143.18196688845765, 5.556760383931896),
    (16, 4.58197466801047, 56.51820023136374, 2.290987334005235, 2.9464380144446745, 0.6300311042727557, 74.27955250668938, 5, 5.357078504335189, 24.139367773162284, 4.6424720316680865),
    (5, 5.2701013437922315, 29.02368087016299, 1.7567004479307438, 2.282349926566316, 1.1868674567810733, 51.87643121101337, 7, 1.6890702982149894, 54.950661252686515, 10.375286242202673),
    (6, 5.76799546848039, 34.56728250815503, 1.92266515616013, 1.462640501671228, 1.0923636663075802, 57.23067938401537, 7, 1.2871940065791294, 73.50795682538396, 9.538446564002562),
    (24, 3.84, 46.96119662889977, 1.92, 0.2645304919329826, 1.047897764794705, 112.37873381687976, 4, 0.24234164895409893, 151.66459265566465, 4.68244724236999),
    (14, 2.0818524068047846, 18.974517823868755, 2.0818524068047846, 0.9034761003633323, 0.8647946631886582, 87.92143136457355, 5, 1.0874858357108514, 87.49367605385453, 6.2801022403266815),
    (3, 3.949404431344695, 11.357816732201519, 1.9747022156723475, 0.7603555074800337, 1.541516514812977, 59.17808781709622, 7, 0.48701252659030375, 127.49021259802336, 19.726029272365405),
    (18, 1.1695244865655998, 28.26053627641941, 0.5847622432827999, 2.915991081948675, 0.21867600467888873, 42.673875712103715, 9, 3.898830804451689, 8.577395109506512, 2.370770872894651),
];

pub fn rel(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        a.abs()
    } else {
        ((a - b) / b).abs()
    }
}

pub const SAMPLES: usize = 100_000;

/// Voxel containing `p` by direct division, `None` outside the box.
pub fn classify(grid: &VoxelGrid, p: &Vec3) -> Option<[usize; 3]> {
    let mut idx = [0usize; 3];
    for a in 0..3 {
        let u = (p[a] - grid.origin[a]) / grid.voxel_size[a];
        if !(0.0..grid.dims[a] as f64).contains(&u) {
            return None;
        }
        idx[a] = u as usize;
    }
    Some(idx)
}

/// Lengths per voxel from equidistant samples. Wherever two neighbouring
/// samples fall in different voxels the boundary between them is located
/// by bisection, so lengths are exact up to float resolution for every
/// voxel the sampling sees.
pub fn sampling_oracle(ray: &RaySegment, grid: &VoxelGrid) -> (HashMap<[usize; 3], f64>, f64) {
    let d = ray.end - ray.start;
    let len = d.norm();
    let at = |t: f64| classify(grid, &(ray.start + d * t));

    fn refine(
        at: &dyn Fn(f64) -> Option<[usize; 3]>,
        (ta, va): (f64, Option<[usize; 3]>),
        (tb, vb): (f64, Option<[usize; 3]>),
        out: &mut Vec<(f64, Option<[usize; 3]>)>,
    ) {
        if va == vb {
            return;
        }
        if tb - ta <= 1e-15 {
            out.push((tb, vb));
            return;
        }
        let tm = 0.5 * (ta + tb);
        let vm = at(tm);
        refine(at, (ta, va), (tm, vm), out);
        refine(at, (tm, vm), (tb, vb), out);
    }

    let mut changes = vec![(0.0, at(0.0))];
    let mut prev = changes[0];
    for i in 1..=SAMPLES {
        let t = i as f64 / SAMPLES as f64;
        let cur = (t, at(t));
        refine(&at, prev, cur, &mut changes);
        prev = cur;
    }
    changes.push((1.0, None));
    let mut lengths = HashMap::new();
    let mut inside = 0.0;
    for w in changes.windows(2) {
        if let (t0, Some(v)) = w[0] {
            let l = (w[1].0 - t0) * len;
            *lengths.entry(v).or_insert(0.0) += l;
            inside += l;
        }
    }
    (lengths, inside)
}

pub fn test_grid() -> VoxelGrid {
    VoxelGrid::new([32, 32, 32], Vec3::new(-15.0, -12.5, -20.0), Vec3::new(1.0, 0.8, 1.25)).unwrap()
}

pub fn random_ray(rng: &mut ChaCha8Rng, grid: &VoxelGrid) -> RaySegment {
    let lo = grid.origin;
    let hi = grid.max_corner();
    let mut p = || {
        Vec3::from_fn(|a, _| {
            let pad = 0.3 * (hi[a] - lo[a]);
            rng.gen_range(lo[a] - pad..hi[a] + pad)
        })
    };
    RaySegment::new(p(), p())
}

pub fn as_map(hits: &[([usize; 3], f64)]) -> HashMap<[usize; 3], f64> {
    hits.iter().copied().collect()
}
