mod common;

use std::collections::BTreeSet;
use std::f64::consts::PI;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vtrack::codec::{iou, sigma0, sigma0_inv, Bbox2D, Codec, PredictionTensor};
use vtrack::fusion::{associate, fuse, WorldDetection};
use vtrack::geometry::{
    chordal_cost, geodesic_distance, rotation_to_euler, so3_mean, CameraIntrinsics, EulerAngles, Pose,
    RotationMatrix, SphericalParams, Vec3,
};
use vtrack::loss::{total_loss, LossConfig, Scene};
use vtrack::priors::default_region_table;

fn euler() -> impl Strategy<Value = EulerAngles> {
    (-PI..PI, -PI / 2.0..PI / 2.0, -PI..PI).prop_map(|(y, p, r)| EulerAngles::new(y, p, r))
}

fn rotation() -> impl Strategy<Value = RotationMatrix> {
    euler().prop_map(|e| e.to_matrix())
}

fn bbox() -> impl Strategy<Value = Bbox2D> {
    (0.0..500.0, 0.0..500.0, 0.1..200.0, 0.1..200.0).prop_map(|(u, v, w, h)| Bbox2D::new(u, v, u + w, v + h))
}

fn detection(id: usize, p: [f64; 3], d: f64) -> WorldDetection {
    WorldDetection {
        world_position: Vec3::new(p[0], p[1], p[2]),
        world_orientation: EulerAngles::ZERO,
        source_camera: format!("cam{id}"),
        camera_distance: d,
        timestamp: 0.0,
    }
}

/// Flood fill over the explicit gate graph.
fn components_oracle(points: &[Vec3], gate: f64) -> BTreeSet<BTreeSet<usize>> {
    let mut seen = vec![false; points.len()];
    let mut out = BTreeSet::new();
    for start in 0..points.len() {
        if seen[start] {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            comp.insert(i);
            for j in 0..points.len() {
                if !seen[j] && (points[i] - points[j]).norm() < gate {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        out.insert(comp);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn sigma0_inverse_round_trips(t in -30.0..30.0f64, lo in -100.0..100.0f64, span in 0.01..100.0f64) {
        let v = sigma0(t, lo, lo + span).unwrap();
        prop_assume!(v > lo && v < lo + span);
        let back = sigma0(sigma0_inv(v, lo, lo + span).unwrap(), lo, lo + span).unwrap();
        prop_assert!((back - v).abs() <= 1e-9 * span.max(1.0));
    }

    #[test]
    fn euler_extraction_reproduces_the_matrix(e in euler()) {
        let m = e.to_matrix();
        let back = rotation_to_euler(&m).to_matrix();
        prop_assert!(geodesic_distance(&m, &back) < 1e-7);
    }

    #[test]
    fn pose_inverse_undoes_transform(e in euler(), t in prop::array::uniform3(-50.0..50.0f64), p in prop::array::uniform3(-50.0..50.0f64)) {
        let pose = Pose::from_rotation(&e.to_matrix(), Vec3::from(t));
        let p = Vec3::from(p);
        let back = pose.inverse().transform_point(&pose.transform_point(&p));
        prop_assert!((back - p).norm() < 1e-9);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let (ab, ba) = (iou(&a, &b), iou(&b, &a));
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn every_covered_point_gets_the_region_that_contains_it(
        // lateral bands end at 100 m
        r in 0.0..100.0f64, theta in -PI..PI, phi in 0.0..PI / 2.0
    ) {
        let t = default_region_table();
        let s = SphericalParams { r, theta, phi };
        let id = t.assign_region(&s).unwrap();
        let b = t.get(id).unwrap().bounds;
        prop_assert!(r >= b.r_min && r < b.r_max);
        let off = vtrack::geometry::wrap_angle(theta - b.theta_center);
        prop_assert!(off.abs() <= b.theta_halfwidth + 1e-12);
    }

    #[test]
    fn associate_matches_flood_fill(
        points in prop::collection::vec(prop::array::uniform3(-3.0..3.0f64), 0..12),
        gate in 0.1..2.0f64,
    ) {
        let dets: Vec<_> = points.iter().enumerate().map(|(i, p)| detection(i, *p, 1.0)).collect();
        let got: BTreeSet<BTreeSet<usize>> =
            associate(&dets, gate).into_iter().map(|g| g.into_iter().collect()).collect();
        let vecs: Vec<Vec3> = dets.iter().map(|d| d.world_position).collect();
        prop_assert_eq!(got, components_oracle(&vecs, gate));
    }

    #[test]
    fn fuse_ignores_arrival_order(
        members in prop::collection::vec((prop::array::uniform3(-1.0..1.0f64), 1.0..40.0f64), 1..6),
        seed in any::<u64>(),
    ) {
        let group: Vec<_> = members.iter().enumerate().map(|(i, (p, d))| detection(i, *p, *d)).collect();
        let mut shuffled = group.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (a, b) = (fuse(&group).unwrap(), fuse(&shuffled).unwrap());
        prop_assert_eq!(&a, &b);
        let min = members.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
        let chosen = group.iter().find(|d| d.source_camera == a.chosen_camera).unwrap();
        prop_assert_eq!(chosen.camera_distance, min);
    }

    #[test]
    fn so3_mean_is_left_equivariant(q in rotation(), center in rotation(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        let set: Vec<_> = (0..8)
            .map(|_| center * common::random_axis_rotation(rng.random_range(0.0..0.6), &mut rng))
            .collect();
        let moved: Vec<_> = set.iter().map(|r| q * r).collect();
        let (m, mq) = (so3_mean(&set).unwrap(), so3_mean(&moved).unwrap());
        prop_assert!(geodesic_distance(&(q * m), &mq) < 1e-8);
        // no single member beats the mean
        let cost = chordal_cost(&m, &set);
        prop_assert!(set.iter().all(|r| chordal_cost(r, &set) >= cost - 1e-9));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn loss_is_nonnegative_and_vanishes_at_the_perfect_tensor(seed in any::<u64>(), scale in 0.0..6.0f64) {
        let codec = Codec::with_defaults(CameraIntrinsics::new(1.4, 256, 128).unwrap(), common::car()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        let mut gts = Vec::new();
        for _ in 0..200 {
            let prior = codec.priors.priors[rng.random_range(0..18)];
            if let Some(gt) = common::ground_truth_in(&codec, &prior, &mut rng) {
                if Scene::new(&codec, &[gt]).is_ok() {
                    gts.push(gt);
                    break;
                }
            }
        }
        prop_assume!(!gts.is_empty());
        let scene = Scene::new(&codec, &gts).unwrap();
        let cfg = LossConfig::default();
        let perfect = scene.perfect_tensor(&codec);
        let mut noisy: PredictionTensor = perfect.clone();
        for x in noisy.data.iter_mut() {
            *x += rng.random_range(-scale..=scale);
        }
        let l0 = total_loss(&codec, &perfect, &scene, &cfg).unwrap().total;
        let l1 = total_loss(&codec, &noisy, &scene, &cfg).unwrap().total;
        prop_assert!(l0 >= 0.0 && l1 >= 0.0);
        prop_assert!(l0 < 1e-6, "perfect tensor loss {}", l0);
    }
}
