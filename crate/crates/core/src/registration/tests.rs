use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::geometry::TriangleMesh;
use crate::transform::testutil::random_transform;

/// Lumpy closed surface with no rotational symmetry, about 200 mm across.
pub(crate) fn lumpy_mesh(frame: FrameId) -> TriangleMesh {
    let (nu, nv) = (48, 24);
    let mut verts = Vec::new();
    for j in 0..=nv {
        let phi = std::f64::consts::PI * j as f64 / nv as f64;
        for i in 0..nu {
            let th = 2.0 * std::f64::consts::PI * i as f64 / nu as f64;
            let r =
                100.0 + 18.0 * (3.0 * th).sin() * phi.sin() + 12.0 * (2.0 * phi + th).cos() + 9.0 * (5.0 * phi).sin();
            verts.push(Point3::new(
                1.3 * r * phi.sin() * th.cos(),
                r * phi.sin() * th.sin(),
                0.8 * r * phi.cos(),
            ));
        }
    }
    let mut tris = Vec::new();
    for j in 0..nv {
        for i in 0..nu {
            let a = (j * nu + i) as u32;
            let b = (j * nu + (i + 1) % nu) as u32;
            let c = a + nu as u32;
            let d = b + nu as u32;
            tris.push([a, b, d]);
            tris.push([a, d, c]);
        }
    }
    TriangleMesh::new(verts, tris, frame).unwrap().0
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, half: f64) -> PointCloud {
    let pts = (0..n)
        .map(|_| {
            Point3::new(
                rng.random_range(-half..half),
                rng.random_range(-half..half),
                rng.random_range(-half..half),
            )
        })
        .collect();
    PointCloud::new(pts, FrameId::RobotBase)
}

#[test]
fn box_filter_keeps_inside_points_in_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cloud = random_cloud(&mut rng, 5000, 100.0);
    let all = Aabb::new(Point3::new(-100.0, -100.0, -100.0), Point3::new(100.0, 100.0, 100.0)).unwrap();
    assert_eq!(filter_by_box(&cloud, &all), cloud);

    let b = Aabb::new(Point3::new(-20.0, -50.0, 0.0), Point3::new(30.0, 10.0, 70.0)).unwrap();
    let got = filter_by_box(&cloud, &b);
    let expected: Vec<Point3> = cloud
        .points
        .iter()
        .copied()
        .filter(|p| (-20.0..=30.0).contains(&p.x) && (-50.0..=10.0).contains(&p.y) && (0.0..=70.0).contains(&p.z))
        .collect();
    assert_eq!(got.points, expected);

    let pin = Aabb::new(Point3::new(1e3, 1e3, 1e3), Point3::new(1e3, 1e3, 1e3)).unwrap();
    assert!(filter_by_box(&cloud, &pin).is_empty());
}

#[test]
fn accumulate_matches_hash_grid_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let frames: Vec<PointCloud> = (0..3).map(|_| random_cloud(&mut rng, 2000, 50.0)).collect();
    let voxel = 7.5;
    let got = accumulate(&frames, voxel).unwrap();

    let mut grid: HashMap<(i64, i64, i64), Vec<Point3>> = HashMap::new();
    for p in frames.iter().flat_map(|f| &f.points) {
        let k = (
            (p.x / voxel).floor() as i64,
            (p.y / voxel).floor() as i64,
            (p.z / voxel).floor() as i64,
        );
        grid.entry(k).or_default().push(*p);
    }
    assert_eq!(got.len(), grid.len());
    for p in &got.points {
        let k = (
            (p.x / voxel).floor() as i64,
            (p.y / voxel).floor() as i64,
            (p.z / voxel).floor() as i64,
        );
        let members = &grid[&k];
        let mean = members.iter().fold(Vec3::zeros(), |a, q| a + q.coords) / members.len() as f64;
        assert!((p.coords - mean).norm() < 1e-9);
    }
}

#[test]
fn accumulate_small_voxel_and_duplicates() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f = random_cloud(&mut rng, 300, 100.0);
    let one = accumulate(std::slice::from_ref(&f), 1e-3).unwrap();
    let mut a: Vec<_> = one.points.iter().map(|p| [p.x, p.y, p.z]).collect();
    let mut b: Vec<_> = f.points.iter().map(|p| [p.x, p.y, p.z]).collect();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    for (x, y) in a.iter().zip(&b) {
        for k in 0..3 {
            assert!((x[k] - y[k]).abs() < 1e-12);
        }
    }
    let twice = accumulate(&[f.clone(), f.clone()], 5.0).unwrap();
    let once = accumulate(std::slice::from_ref(&f), 5.0).unwrap();
    assert_eq!(twice.len(), once.len());
    for (p, q) in twice.points.iter().zip(&once.points) {
        assert!((p - q).norm() < 1e-12);
    }
}

#[test]
fn accumulate_rejects_mixed_frames_and_bad_voxel() {
    let a = PointCloud::new(vec![Point3::origin()], FrameId::RobotBase);
    let b = PointCloud::new(vec![Point3::origin()], FrameId::Cbct);
    assert_eq!(
        accumulate(&[a.clone(), b], 1.0),
        Err(RegistrationError::MixedFrames(FrameId::RobotBase, FrameId::Cbct))
    );
    assert_eq!(accumulate(&[a], 0.0), Err(RegistrationError::BadVoxel));
}

fn lumpy_cloud(n: usize, seed: u64) -> PointCloud {
    let mut c = sample_surface(&lumpy_mesh(FrameId::RobotBase), n, seed).unwrap();
    c.normals = None;
    c
}

#[test]
fn global_on_identical_clouds_is_identity() {
    let real = lumpy_cloud(3000, 5);
    let mut virt = real.clone();
    virt.frame = FrameId::VirtualWorld;
    let r = global_register(&real, &virt, &GlobalParams::default()).unwrap();
    assert!(r.transform.approx_eq(&RigidTransform::identity(), 1e-6, 1e-6));
    assert_eq!(r.inlier_count, real.len());
}

#[test]
fn global_recovers_known_transform_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let real = lumpy_cloud(3000, 6);
    for _ in 0..3 {
        let t = random_transform(&mut rng, 500.0);
        let virt = real.transformed(&t, FrameId::VirtualWorld);
        let r = global_register(&real, &virt, &GlobalParams::default()).unwrap();
        assert!(r.transform.approx_eq(&t, 1e-4, 1e-6), "{:?} vs {:?}", r.transform, t);
    }
}

/// Real side: independent surface samples with Gaussian noise and uniform outliers.
fn noisy_scan(rng: &mut ChaCha8Rng, n: usize, sigma: f64, outlier_fraction: f64) -> PointCloud {
    let clean = lumpy_cloud(n, rng.random());
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut pts: Vec<Point3> = clean
        .points
        .iter()
        .map(|p| p + Vec3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng)))
        .collect();
    let outliers = (n as f64 * outlier_fraction / (1.0 - outlier_fraction)).round() as usize;
    let mesh = lumpy_mesh(FrameId::RobotBase);
    let bounds = mesh.bounds().padded(60.0);
    while pts.len() < n + outliers {
        let p = Point3::new(
            rng.random_range(bounds.min.x..bounds.max.x),
            rng.random_range(bounds.min.y..bounds.max.y),
            rng.random_range(bounds.min.z..bounds.max.z),
        );
        if mesh.distance_to(&p) > 10.0 {
            pts.push(p);
        }
    }
    PointCloud::new(pts, FrameId::RobotBase)
}

#[test]
fn global_tolerates_noise_and_outliers() {
    let virt0 = sample_surface(&lumpy_mesh(FrameId::RobotBase), 6000, 99).unwrap();
    let mut worst_t: f64 = 0.0;
    let mut worst_r: f64 = 0.0;
    for seed in 0..16 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let t = random_transform(&mut rng, 500.0);
        let real = noisy_scan(&mut rng, 3000, 1.0, 0.3);
        let virt = virt0.transformed(&t, FrameId::VirtualWorld);
        let r = global_register(&real, &virt, &GlobalParams::default()).unwrap();
        worst_t = worst_t.max(r.transform.translation_distance(&t));
        worst_r = worst_r.max(r.transform.angle_to(&t).to_degrees());
    }
    assert!(worst_t < 5.0 && worst_r < 2.0, "worst {worst_t} mm, {worst_r} deg");
}

#[test]
fn emitted_cliques_are_pairwise_compatible() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let t = random_transform(&mut rng, 300.0);
    let real = noisy_scan(&mut rng, 2000, 1.0, 0.3);
    let virt = lumpy_cloud(4000, 9).transformed(&t, FrameId::VirtualWorld);
    let params = GlobalParams::default();
    let (_, trace) = global_register_traced(&real, &virt, &params).unwrap();
    assert!(!trace.cliques.is_empty());
    for clique in trace.cliques.iter().filter(|c| c.len() <= 10) {
        for (a, &i) in clique.iter().enumerate() {
            for &j in &clique[a + 1..] {
                let (ci, cj) = (trace.correspondences[i], trace.correspondences[j]);
                let dp = (real.points[ci.real_index] - real.points[cj.real_index]).norm();
                let dq = (virt.points[ci.virtual_index] - virt.points[cj.virtual_index]).norm();
                assert!((dp - dq).abs() < params.rigidity_tol);
            }
        }
    }
}

#[test]
fn cliques_of_small_graphs_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..40 {
        let n = rng.random_range(3..14);
        let mut adj = vec![BitSet::new(n); n];
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(0.5) {
                    adj[i].insert(j);
                    adj[j].insert(i);
                }
            }
        }
        let mut got = maximal_cliques(&adj, 3, usize::MAX);
        got.sort();
        // Every subset that is a clique and cannot be extended.
        let is_clique =
            |m: u32| (0..n).all(|i| m >> i & 1 == 0 || (0..n).all(|j| j == i || m >> j & 1 == 0 || adj[i].contains(j)));
        let mut expected: Vec<Vec<usize>> = (1u32..1 << n)
            .filter(|&m| m.count_ones() >= 3 && is_clique(m))
            .filter(|&m| (0..n).all(|k| m >> k & 1 == 1 || !is_clique(m | 1 << k)))
            .map(|m| (0..n).filter(|&i| m >> i & 1 == 1).collect())
            .collect();
        expected.sort();
        assert_eq!(got, expected);
    }
}

#[test]
fn clique_cap_is_respected() {
    let n = 30;
    let mut adj = vec![BitSet::new(n); n];
    for i in 0..n {
        for j in 0..n {
            // Complete multipartite graph: many maximal cliques.
            if i % 3 != j % 3 && i != j {
                adj[i].insert(j);
            }
        }
    }
    assert_eq!(maximal_cliques(&adj, 3, 17).len(), 17);
}

#[test]
fn disjoint_clouds_have_no_cliques() {
    let real = PointCloud::new(
        vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0)],
        FrameId::RobotBase,
    );
    let virt = PointCloud::new(
        vec![Point3::new(0.0, 0.0, 0.0), Point3::new(5.0, 0.0, 0.0)],
        FrameId::VirtualWorld,
    );
    assert_eq!(
        global_register(&real, &virt, &GlobalParams::default()),
        Err(RegistrationError::NoCliques)
    );
}

#[test]
fn icp_identity_converges_immediately() {
    let real = lumpy_cloud(2000, 11);
    let r = icp_refine(&real, &real, &RigidTransform::identity(), &IcpParams::default());
    assert!(r.converged && r.iterations <= 2);
    assert!(r.rmse < 1e-9);
    assert!(r.transform.approx_eq(&RigidTransform::identity(), 1e-9, 1e-9));
}

#[test]
fn icp_recovers_small_offsets() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let real = lumpy_cloud(4000, 12);
    for _ in 0..10 {
        let axis = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let dir = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let t = RigidTransform::from_axis_angle(
            &axis,
            rng.random_range(0.0..5f64.to_radians()),
            dir.normalize() * rng.random_range(0.0..5.0),
        );
        let virt = real.transformed(&t, FrameId::VirtualWorld);
        let params = IcpParams {
            trim_fraction: 0.0,
            ..IcpParams::default()
        };
        let r = icp_refine(&real, &virt, &RigidTransform::identity(), &params);
        assert!(r.transform.approx_eq(&t, 1e-3, 1e-3), "{:?}", r);
    }
}

#[test]
fn icp_objective_never_increases_and_rmse_is_self_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let virt = lumpy_cloud(4000, 13);
    for _ in 0..20 {
        let real = noisy_scan(&mut rng, 2000, 2.0, 0.2);
        let init = RigidTransform::from_axis_angle(
            &Vec3::z(),
            rng.random_range(-0.2..0.2),
            Vec3::new(rng.random_range(-15.0..15.0), 0.0, 0.0),
        );
        let params = IcpParams::default();
        let r = icp_refine(&real, &virt, &init, &params);
        assert!(r.objective_history.windows(2).all(|w| w[1] <= w[0]));
        assert!(r.iterations <= params.max_iterations);

        // Brute-force recomputation of the reported rmse.
        let mut d2: Vec<f64> = real
            .points
            .iter()
            .map(|p| {
                let q = r.transform.apply_point(p);
                virt.points
                    .iter()
                    .map(|v| (v - q).norm_squared())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        d2.sort_by(f64::total_cmp);
        let keep = retained_count(real.len(), params.trim_fraction);
        let rmse = (d2[..keep].iter().sum::<f64>() / keep as f64).sqrt();
        assert!((rmse - r.rmse).abs() < 1e-9);
        assert_eq!(r.inlier_count, keep);
    }
}

#[test]
fn icp_improves_on_global_result() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let t = random_transform(&mut rng, 400.0);
    let real = noisy_scan(&mut rng, 3000, 1.0, 0.3);
    let virt = lumpy_cloud(6000, 15).transformed(&t, FrameId::VirtualWorld);
    let g = global_register(&real, &virt, &GlobalParams::default()).unwrap();
    let f = icp_refine(&real, &virt, &g.transform, &IcpParams::default());
    let start = icp_refine(
        &real,
        &virt,
        &g.transform,
        &IcpParams {
            max_iterations: 0,
            ..IcpParams::default()
        },
    );
    assert!(f.rmse <= start.rmse);
}

#[test]
fn results_are_bit_identical_across_thread_pools() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let t = random_transform(&mut rng, 300.0);
    let real = noisy_scan(&mut rng, 2000, 1.0, 0.3);
    let virt = lumpy_cloud(4000, 17).transformed(&t, FrameId::VirtualWorld);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let g = global_register(&real, &virt, &GlobalParams::default()).unwrap();
            icp_refine(&real, &virt, &g.transform, &IcpParams::default())
        })
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

struct Fixed(TriangleMesh);

impl PosedModel for Fixed {
    fn posed_mesh(&self, _: &[f64]) -> Result<TriangleMesh, RegistrationError> {
        Ok(self.0.clone())
    }
}

#[test]
fn pipeline_publishes_edge_and_names_failing_stage() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let truth = random_transform(&mut rng, 300.0);
    let model = Fixed(lumpy_mesh(FrameId::RobotBase).transformed(&truth, FrameId::VirtualWorld));
    let scan = lumpy_cloud(8000, 19);
    let bounds = scan.bounds().padded(5.0);
    let params = RegistrationParams::default();
    let mut graph = TransformGraph::new();
    let r = register_robot(
        std::slice::from_ref(&scan),
        &bounds,
        &model,
        &[],
        &params,
        &mut graph,
        3,
    )
    .unwrap();
    assert!(r.transform.approx_eq(&truth, 0.5, 0.2f64.to_radians()), "{:?}", r);
    assert_eq!(
        graph.query(FrameId::VirtualWorld, FrameId::RobotBase).unwrap(),
        r.transform
    );

    let empty = Aabb::new(Point3::new(1e4, 1e4, 1e4), Point3::new(1e4 + 1.0, 1e4 + 1.0, 1e4 + 1.0)).unwrap();
    let err = register_robot(&[scan], &empty, &model, &[], &params, &mut graph, 4).unwrap_err();
    assert!(matches!(err, RegistrationError::Stage { stage: "filter", .. }));
}
