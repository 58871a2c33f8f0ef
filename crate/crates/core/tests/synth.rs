use std::f64::consts::PI;

use latentfuse::image::{BinaryMask, Image};
use latentfuse::sample::View;
use latentfuse::synth::geometry::{project_building, NEAR_PLANE};
use latentfuse::synth::{
    generate_dataset, generate_scene, project_footprint_mask, read_dataset, split_dataset, visibility_filter,
    write_dataset, Building, Camera, DatasetConfig, SceneConfig, SceneSpec, Visibility, DEFAULT_VISIBILITY_THRESHOLD,
};
use latentfuse::taxonomy::NUM_CLASSES;
use latentfuse::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

/// Per-pixel ray test against the extruded footprint, written as a 1-D
/// interval intersection along the ray parameter.
fn oracle_hits(b: &Building, cam: &Camera, u: f64, v: f64) -> bool {
    let (s, c) = cam.yaw.sin_cos();
    let (right, fwd) = ([s, -c], [c, s]);
    let (a, d) = ((u - cam.cx) / cam.focal, (v - cam.cy) / cam.focal);
    // Depth t along the optical axis; the ray rises by −d per unit depth.
    let dir = [fwd[0] + a * right[0], fwd[1] + a * right[1], -d];
    let o = cam.position;
    let mut lo = NEAR_PLANE;
    let mut hi = f64::INFINITY;
    let mut keep = |p0: f64, dp: f64, max: f64| {
        // 0 ≤ p0 + t·dp ≤ max
        if dp == 0.0 {
            if p0 < 0.0 || p0 > max {
                hi = f64::NEG_INFINITY;
            }
            return;
        }
        let (t0, t1) = ((0.0 - p0) / dp, (max - p0) / dp);
        lo = lo.max(t0.min(t1));
        hi = hi.min(t0.max(t1));
    };
    keep(o[2], dir[2], b.height);
    let n = b.footprint.len();
    for i in 0..n {
        let (p, q) = (b.footprint[i], b.footprint[(i + 1) % n]);
        let edge = [q[0] - p[0], q[1] - p[1]];
        // Inside a CCW polygon: cross(edge, x − p) ≥ 0.
        let c0 = edge[0] * (o[1] - p[1]) - edge[1] * (o[0] - p[0]);
        let dc = edge[0] * dir[1] - edge[1] * dir[0];
        keep(c0, dc, f64::INFINITY);
    }
    lo <= hi
}

fn oracle_mask(b: &Building, cam: &Camera, size: usize) -> BinaryMask {
    let mut m = BinaryMask::empty(size, size);
    for r in 0..size {
        for c in 0..size {
            m.set(r, c, oracle_hits(b, cam, c as f64 + 0.5, r as f64 + 0.5));
        }
    }
    m
}

fn agreement(a: &BinaryMask, b: &BinaryMask) -> (usize, usize) {
    (a.values().iter().zip(b.values()).filter(|(x, y)| x == y).count(), a.values().len())
}

fn scene(seed: u64) -> (SceneSpec, latentfuse::BuildingSample) {
    generate_scene(seed, &[0.3; NUM_CLASSES], &SceneConfig::default()).unwrap()
}

#[test]
fn same_seed_gives_identical_samples() {
    for seed in [0, 1, 77, u64::MAX] {
        assert_eq!(scene(seed), scene(seed));
    }
    assert_ne!(scene(1).1, scene(2).1);
}

#[test]
fn zero_priors_give_empty_labels() {
    for seed in 0..50 {
        let (spec, s) = generate_scene(seed, &[0.0; NUM_CLASSES], &SceneConfig::default()).unwrap();
        assert!(s.labels.flat().iter().all(|&f| !f));
        assert_eq!(spec.attributes, s.labels);
    }
}

#[test]
fn out_of_range_prior_is_rejected() {
    let mut p = [0.3; NUM_CLASSES];
    p[4] = 1.5;
    assert!(matches!(generate_scene(0, &p, &SceneConfig::default()), Err(Error::Validation(_))));
}

#[test]
fn label_frequencies_follow_priors() {
    let mut priors = [0.3; NUM_CLASSES];
    priors[3] = 0.7;
    priors[10] = 0.05;
    let config = DatasetConfig { size: 10_000, seed: 9, priors, scene: SceneConfig { max_views: 0, ..SceneConfig::default() } };
    let data = generate_dataset(&config).unwrap();
    for k in 0..NUM_CLASSES {
        let freq = data.iter().filter(|s| s.labels.get(k)).count() as f64 / data.len() as f64;
        assert!((freq - priors[k]).abs() <= 0.02, "class {k}: {freq} vs {}", priors[k]);
    }
}

#[test]
fn street_counts_average_near_four_and_a_half() {
    let data = generate_dataset(&DatasetConfig { size: 2000, seed: 3, ..DatasetConfig::default() }).unwrap();
    let mean = data.iter().map(|s| s.street.len()).sum::<usize>() as f64 / data.len() as f64;
    assert!((mean - 4.5).abs() < 0.3, "mean street count {mean}");
    assert!(data.iter().all(|s| s.street.len() <= 8 && s.street.len() == s.cameras.len()));
    assert!(data.iter().flat_map(|s| &s.street).all(|v| v.mask.coverage() >= DEFAULT_VISIBILITY_THRESHOLD));
}

#[test]
fn projection_matches_ray_oracle_on_random_scenes() {
    let size = 32;
    let mut rng = SplitMix64::seed_from_u64(42);
    let (mut agree, mut total, mut worst) = (0, 0, 1.0f64);
    for seed in 0..200 {
        let (mut spec, _) = scene(seed);
        // Cameras close to or inside the solid exercise near-plane clipping.
        let phi = rng.gen_range(0.0..2.0 * PI);
        let dist = rng.gen_range(0.0..spec.building.radius() + 4.0);
        spec.cameras.push(Camera {
            position: [dist * phi.cos(), dist * phi.sin(), rng.gen_range(0.5..3.0)],
            yaw: rng.gen_range(0.0..2.0 * PI),
            focal: rng.gen_range(15.0..40.0),
            cx: 16.0,
            cy: rng.gen_range(10.0..24.0),
        });
        for (i, cam) in spec.cameras.iter().enumerate() {
            let got = project_footprint_mask(&spec, i, size).unwrap();
            let (a, t) = agreement(&got, &oracle_mask(&spec.building, cam, size));
            agree += a;
            total += t;
            worst = worst.min(a as f64 / t as f64);
        }
    }
    let rate = agree as f64 / total as f64;
    assert!(rate >= 0.995, "pixel agreement {rate}, worst mask {worst}");
}

#[test]
fn camera_turned_away_gives_empty_mask() {
    for seed in 0..20 {
        let (mut spec, _) = scene(seed);
        spec.cameras.iter_mut().for_each(|c| c.yaw += PI);
        for i in 0..spec.cameras.len() {
            assert_eq!(project_footprint_mask(&spec, i, 32).unwrap().count(), 0);
        }
    }
}

#[test]
fn missing_camera_is_contract_error() {
    let (spec, _) = scene(0);
    let i = spec.cameras.len();
    assert!(matches!(project_footprint_mask(&spec, i, 32), Err(Error::Contract(_))));
}

#[test]
fn doubling_distance_halves_mask_width() {
    let facade = Building { footprint: vec![[0.0, -2.0], [2.0, -2.0], [2.0, 2.0], [0.0, 2.0]], height: 4.0 };
    let width = |d: f64| {
        let cam = Camera { position: [-d, 0.0, 2.0], yaw: 0.0, focal: 48.0, cx: 32.0, cy: 32.0 };
        let m = project_building(&facade, &cam, 64);
        (0..64).filter(|&c| m.get(32, c)).count() as f64
    };
    for d in [4.0, 6.0, 9.0] {
        let (near, far) = (width(d), width(2.0 * d));
        assert!((far - near / 2.0).abs() <= 1.0, "d={d}: {near} then {far}");
    }
}

fn view_with_coverage(on: usize) -> View {
    let mut values = vec![0u8; 100];
    values[..on].iter_mut().for_each(|v| *v = 1);
    View { image: Image::filled(10, 10, [0.5; 3]), mask: BinaryMask::new(10, 10, values).unwrap() }
}

#[test]
fn visibility_ladder_keeps_views_at_or_above_threshold() {
    let ladder: Vec<View> = [5, 19, 20, 90].into_iter().map(view_with_coverage).collect();
    let kept = visibility_filter(ladder.clone(), 0.20).unwrap();
    assert_eq!(kept, ladder[2..].to_vec());
    assert!(visibility_filter(vec![view_with_coverage(0)], 0.01).unwrap().is_empty());
    assert!(matches!(visibility_filter(ladder, 1.5), Err(Error::Validation(_))));
}

#[test]
fn thousand_segments_split_eighty_five_seven_seven() {
    let ids: Vec<u32> = (0..1000).collect();
    let (tr, va, te) = split_dataset(&ids, (0.85, 0.075, 0.075), 1).unwrap();
    assert_eq!((tr.len(), va.len(), te.len()), (850, 75, 75));
    let (tr, va, te) = split_dataset(&ids, (1.0, 0.0, 0.0), 1).unwrap();
    assert_eq!((tr.len(), va.len(), te.len()), (1000, 0, 0));
    assert!(matches!(split_dataset(&ids, (0.8, 0.1, 0.2), 1), Err(Error::Validation(_))));
}

proptest! {
    #[test]
    fn splits_partition_the_input(n in 0usize..400, a in 0.0f64..1.0, b in 0.0f64..1.0, seed in any::<u64>()) {
        let (train, val) = (a, (1.0 - a) * b);
        let test = 1.0 - train - val;
        let ids: Vec<usize> = (0..n).collect();
        let (x, y, z) = split_dataset(&ids, (train, val, test), seed).unwrap();
        let mut all: Vec<usize> = x.iter().chain(&y).chain(&z).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, ids);
    }
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn satellite_intensity_carries_no_street_only_signal() {
    let config = DatasetConfig { size: 5000, seed: 17, ..DatasetConfig::default() };
    let data = generate_dataset(&config).unwrap();
    let intensity: Vec<f64> = data.iter().map(|s| s.satellite.image.mean_intensity()).collect();
    let street_only = config.scene.classes_with(Visibility::StreetOnly);
    assert!(!street_only.is_empty());
    for k in street_only {
        let y: Vec<f64> = data.iter().map(|s| s.labels.get(k) as u8 as f64).collect();
        let r = pearson(&intensity, &y);
        assert!(r.abs() < 0.05, "class {k}: correlation {r}");
    }
}

#[test]
fn dataset_survives_disk_roundtrip() {
    let data = generate_dataset(&DatasetConfig { size: 12, seed: 5, ..DatasetConfig::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &data).unwrap();
    assert_eq!(read_dataset(dir.path()).unwrap(), data);
    let sat = std::fs::read(dir.path().join("000000_sat.lft")).unwrap();
    assert_eq!(&sat[..4], b"LFT0");
}
