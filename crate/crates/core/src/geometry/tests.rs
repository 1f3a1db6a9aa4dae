use std::collections::HashMap;

use approx::assert_relative_eq;
use nalgebra::{Matrix3, Rotation3, Unit};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::{Error, Vec3};

fn wavy_grid(rows: usize, cols: usize) -> TriangleMesh {
    let pts = (0..rows)
        .flat_map(|i| {
            (0..cols).map(move |j| {
                let (x, y) = (i as f64 * 10.0, j as f64 * 10.0);
                Vec3::new(x, y, 5.0 * (0.05 * x).sin() * (0.07 * y).cos())
            })
        })
        .collect();
    TriangleMesh::from_grid(pts, rows, cols).unwrap()
}

fn brute_force(mesh: &TriangleMesh, q: &Vec3) -> ClosestPoint {
    (0..mesh.triangles().len())
        .map(|t| {
            let [a, b, c] = mesh.triangle(t);
            let point = closest_point_on_triangle(q, &a, &b, &c);
            ClosestPoint {
                point,
                distance: (q - point).norm(),
                triangle: t,
            }
        })
        .min_by(|x, y| x.distance.total_cmp(&y.distance))
        .unwrap()
}

fn icosphere(levels: usize, radius: f64) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vec3::from(*p).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..levels {
        let mut mid = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) / 2.0).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    TriangleMesh::new(verts.into_iter().map(|v| v * radius).collect(), faces).unwrap()
}

fn uv_sphere(rings: usize, segments: usize, radius: f64) -> TriangleMesh {
    let mut verts = vec![Vec3::z() * radius];
    for i in 1..rings {
        let theta = std::f64::consts::PI * i as f64 / rings as f64;
        for j in 0..segments {
            let phi = std::f64::consts::TAU * j as f64 / segments as f64;
            verts.push(radius * Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()));
        }
    }
    verts.push(-Vec3::z() * radius);
    let south = verts.len() - 1;
    let at = |i: usize, j: usize| 1 + (i - 1) * segments + j % segments;
    let mut faces = Vec::new();
    for j in 0..segments {
        faces.push([0, at(1, j), at(1, j + 1)]);
        faces.push([south, at(rings - 1, j + 1), at(rings - 1, j)]);
    }
    for i in 1..rings - 1 {
        for j in 0..segments {
            faces.push([at(i, j), at(i + 1, j), at(i + 1, j + 1)]);
            faces.push([at(i, j), at(i + 1, j + 1), at(i, j + 1)]);
        }
    }
    TriangleMesh::new(verts, faces).unwrap()
}

fn random_transform(rng: &mut ChaCha8Rng, max_angle: f64, max_shift: f64) -> RigidTransform {
    let axis = Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let t = Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    RigidTransform::from_axis_angle(&axis, rng.random_range(0.0..max_angle), t * max_shift)
}

#[test]
fn mesh_rejects_bad_topology() {
    let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
    assert!(matches!(
        TriangleMesh::new(v.clone(), vec![[0, 1, 3]]),
        Err(Error::InvalidMesh(_))
    ));
    assert!(matches!(
        TriangleMesh::new(v.clone(), vec![[0, 1, 1]]),
        Err(Error::InvalidMesh(_))
    ));
    let flat = vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0];
    assert!(matches!(
        TriangleMesh::new(flat, vec![[0, 1, 2]]),
        Err(Error::InvalidMesh(_))
    ));
    assert!(TriangleMesh::new(v, vec![[0, 1, 2]]).is_ok());
}

#[test]
fn closest_point_on_empty_mesh_fails() {
    let mesh = TriangleMesh::new(vec![], vec![]).unwrap();
    assert!(matches!(closest_point(&Vec3::zeros(), &mesh), Err(Error::EmptyMesh)));
}

#[test]
fn vertex_query_returns_vertex() {
    let mesh = wavy_grid(8, 9);
    for v in mesh.vertices() {
        let cp = closest_point(v, &mesh).unwrap();
        assert!(cp.distance < 1e-12);
        assert!((cp.point - v).norm() < 1e-12);
    }
}

#[test]
fn centroid_height_gives_foot_point() {
    let a = Vec3::new(0.0, 0.0, 0.0);
    let b = Vec3::new(30.0, 0.0, 0.0);
    let c = Vec3::new(0.0, 20.0, 0.0);
    let mesh = TriangleMesh::new(vec![a, b, c], vec![[0, 1, 2]]).unwrap();
    let centroid = (a + b + c) / 3.0;
    for h in [0.5, 3.0, 17.0] {
        let cp = closest_point(&(centroid + Vec3::z() * h), &mesh).unwrap();
        assert_relative_eq!(cp.distance, h, epsilon = 1e-12);
        assert!((cp.point - centroid).norm() < 1e-12);
        assert_eq!(cp.triangle, 0);
    }
}

#[test]
fn closest_point_matches_exhaustive_scan() {
    // 11 × 11 grid gives 200 triangles
    let mesh = wavy_grid(11, 11);
    assert_eq!(mesh.triangles().len(), 200);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..2000 {
        let q = Vec3::new(
            rng.random_range(-30.0..130.0),
            rng.random_range(-30.0..130.0),
            rng.random_range(-40.0..40.0),
        );
        let fast = closest_point(&q, &mesh).unwrap();
        let slow = brute_force(&mesh, &q);
        assert!((fast.distance - slow.distance).abs() <= 1e-9);
        assert!(((q - fast.point).norm() - fast.distance).abs() < 1e-12);
        // the returned point lies on the returned triangle
        let [a, b, c] = mesh.triangle(fast.triangle);
        assert!((closest_point_on_triangle(&fast.point, &a, &b, &c) - fast.point).norm() < 1e-9);
    }
}

#[test]
fn obj_round_trip() {
    let mesh = wavy_grid(4, 5);
    let back = TriangleMesh::from_obj(&mesh.to_obj()).unwrap();
    assert_eq!(back.triangles(), mesh.triangles());
    for (p, q) in back.vertices().iter().zip(mesh.vertices()) {
        assert_eq!(p, q);
    }
    let text = "# comment\nv 0 0 0\nv 1 0 0\nvn 0 0 1\nv 0 1 0\nf 1//1 2//1 3//1\n";
    let tri = TriangleMesh::from_obj(text).unwrap();
    assert_eq!(tri.triangles(), &[[0, 1, 2]]);
    assert!(matches!(TriangleMesh::from_obj("v 1 2\n"), Err(Error::Parse(_))));
}

#[test]
fn sampled_surface_validation_and_json() {
    assert!(SampledSurface::new(vec![[0.5, 0.5]], vec![]).is_err());
    assert!(SampledSurface::new(vec![[1.5, 0.5]], vec![Vec3::zeros()]).is_err());
    let s = SampledSurface::new(grid_params(3, 2), vec![Vec3::new(1.0, 2.0, 3.0); 6]).unwrap();
    assert_eq!(SampledSurface::from_json(&s.to_json().unwrap()).unwrap(), s);
    assert!(SampledSurface::from_json(r#"{"params":[[0.5,2.0]],"points":[[0,0,0]]}"#).is_err());
    assert_eq!(grid_params(2, 3)[4], [1.0, 0.5]);
}

#[test]
fn transform_rejects_non_rotations() {
    let shear = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
    assert!(RigidTransform::new(shear, Vec3::zeros()).is_err());
    let reflection = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
    assert!(RigidTransform::new(reflection, Vec3::zeros()).is_err());
}

#[test]
fn transform_json_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = random_transform(&mut rng, 1.0, 20.0);
    let back: RigidTransform = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
    assert!((back.rotation() - t.rotation()).norm() < 1e-15);
    assert_eq!(back.translation(), t.translation());
}

#[test]
fn apply_transform_basics() {
    let pts = vec![Vec3::new(1.0, -2.0, 3.0), Vec3::zeros()];
    assert_eq!(apply_transform(&RigidTransform::identity(), &pts), pts);
    let shift = RigidTransform::translation_only(Vec3::new(0.0, 0.0, 10.0));
    assert_eq!(apply_transform(&shift, &[Vec3::zeros()])[0], Vec3::new(0.0, 0.0, 10.0));
}

#[test]
fn icp_identity_when_source_on_target() {
    let mesh = wavy_grid(12, 12);
    let source: Vec<Vec3> = mesh.vertices().iter().step_by(3).copied().collect();
    let r = icp_register(&source, &mesh, &RigidTransform::identity(), 50, 1e-12).unwrap();
    assert!(r.transform.angle() < 1e-6);
    assert!(r.transform.translation().norm() < 1e-6);
}

#[test]
fn icp_recovers_synthetic_displacement() {
    let mesh = icosphere(3, 60.0);
    // squash into an ellipsoid so the rotation is observable
    let scaled: Vec<Vec3> = mesh
        .vertices()
        .iter()
        .map(|v| Vec3::new(v.x * 1.6, v.y, v.z * 0.6) + Vec3::new(0.0, 0.1 * v.x * v.x / 60.0, 0.0))
        .collect();
    let target = TriangleMesh::new(scaled, mesh.triangles().to_vec()).unwrap();
    let source: Vec<Vec3> = target.vertices().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let truth = random_transform(&mut rng, 10f64.to_radians(), 5.0);
        // target displaced by the inverse; registering it back recovers `truth`
        let displaced = target.transformed(&truth.inverse()).unwrap();
        let r = icp_register(&source, &displaced, &RigidTransform::identity(), 200, 1e-12).unwrap();
        let err = r.transform.compose(&truth.inverse());
        assert!(err.angle() < 1e-3, "angle {}", err.angle());
        assert!((r.transform.translation() - truth.translation()).norm() < 1e-2);
    }
}

#[test]
fn icp_rejects_degenerate_sources() {
    let mesh = wavy_grid(4, 4);
    let id = RigidTransform::identity();
    let two = [Vec3::zeros(), Vec3::x()];
    assert!(matches!(
        icp_register(&two, &mesh, &id, 10, 1e-9),
        Err(Error::RankDeficientCorrespondence)
    ));
    let line: Vec<Vec3> = (0..10).map(|k| Vec3::x() * k as f64).collect();
    assert!(matches!(
        icp_register(&line, &mesh, &id, 10, 1e-9),
        Err(Error::RankDeficientCorrespondence)
    ));
    let empty = TriangleMesh::new(vec![], vec![]).unwrap();
    let tri = [Vec3::zeros(), Vec3::x(), Vec3::y()];
    assert!(matches!(
        icp_register(&tri, &empty, &id, 10, 1e-9),
        Err(Error::EmptyMesh)
    ));
}

#[test]
fn fit_rigid_recovers_exact_transform() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let from: Vec<Vec3> = (0..20)
        .map(|_| {
            Vec3::new(
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
            )
        })
        .collect();
    let t = random_transform(&mut rng, 3.0, 100.0);
    let fitted = fit_rigid(&from, &t.apply_all(&from)).unwrap();
    assert!((fitted.rotation() - t.rotation()).norm() < 1e-10);
    assert!((fitted.translation() - t.translation()).norm() < 1e-9);
}

#[test]
fn planar_grid_is_smooth() {
    let pts = grid_params(9, 9)
        .iter()
        .map(|p| Vec3::new(p[0] * 80.0, p[1] * 80.0, 3.0))
        .collect();
    let mesh = TriangleMesh::from_grid(pts, 9, 9).unwrap();
    let s = laplacian_smoothness(&mesh).unwrap();
    let rings = mesh.vertex_neighbors();
    for i in 0..81 {
        let (r, c) = (i / 9, i % 9);
        // one ring away from the border, where the umbrella is balanced
        if (2..7).contains(&r) && (2..7).contains(&c) {
            assert!(s[i] < 1e-12, "vertex {i}: {}", s[i]);
            assert_eq!(rings[i].len(), 6);
        }
    }
}

#[test]
fn sphere_roughness_is_uniform() {
    for (rings, segments, radius) in [(32, 64, 100.0), (60, 120, 250.0)] {
        let mesh = uv_sphere(rings, segments, radius);
        let s = laplacian_smoothness(&mesh).unwrap();
        let delta: Vec<f64> = umbrella_laplacian(&mesh).unwrap().iter().map(|d| d.norm()).collect();
        let ring = |i: usize| 1 + (i - 1) * segments..1 + i * segments;
        // every vertex of a latitude ring is equivalent under rotation about z
        let s_max = s.iter().copied().fold(0.0, f64::max);
        for i in 1..rings {
            let first = s[ring(i).start];
            for k in ring(i) {
                assert!((s[k] - first).abs() <= 1e-9 * s_max, "ring {i}");
            }
        }
        // away from the pole fans, roughness stays within 10% of the
        // curvature signal's own scale (mean ‖δ‖ per mean edge length)
        let interior: Vec<usize> = (3..rings - 2).flat_map(ring).collect();
        let mean_delta = interior.iter().map(|&k| delta[k]).sum::<f64>() / interior.len() as f64;
        let edge = radius * std::f64::consts::PI / rings as f64;
        let scale = mean_delta / edge;
        let lo = interior.iter().map(|&k| s[k]).fold(f64::INFINITY, f64::min);
        let hi = interior.iter().map(|&k| s[k]).fold(0.0, f64::max);
        assert!(hi - lo <= 0.1 * scale, "spread {} vs scale {scale}", hi - lo);
    }
}

#[test]
fn spike_maximises_roughness() {
    let rows = 11;
    let mut pts: Vec<Vec3> = grid_params(rows, rows)
        .iter()
        .map(|p| Vec3::new(p[0] * 100.0, p[1] * 100.0, 0.0))
        .collect();
    let spike = 5 * rows + 5;
    pts[spike].z = 15.0;
    let mesh = TriangleMesh::from_grid(pts, rows, rows).unwrap();
    let s = laplacian_smoothness(&mesh).unwrap();
    let argmax = (0..s.len()).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
    assert!(argmax == spike || mesh.vertex_neighbors()[spike].contains(&argmax));
}

#[test]
fn isolated_vertex_is_reported() {
    let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z() * 5.0];
    let mesh = TriangleMesh::new(v, vec![[0, 1, 2]]).unwrap();
    assert!(matches!(laplacian_smoothness(&mesh), Err(Error::IsolatedVertex(3))));
}

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn transform() -> impl Strategy<Value = RigidTransform> {
    (vec3(1.0), 0.0..std::f64::consts::PI, vec3(100.0)).prop_filter_map("zero axis", |(axis, angle, t)| {
        let axis = Unit::try_new(axis, 1e-3)?;
        let r = Rotation3::from_axis_angle(&axis, angle);
        RigidTransform::new(*r.matrix(), t).ok()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distance_is_one_lipschitz(p in vec3(150.0), q in vec3(150.0)) {
        let mesh = wavy_grid(6, 7);
        let dp = closest_point(&p, &mesh).unwrap().distance;
        let dq = closest_point(&q, &mesh).unwrap().distance;
        prop_assert!((dp - dq).abs() <= (p - q).norm() + 1e-9);
    }

    #[test]
    fn composition_matches_sequential(a in transform(), b in transform(), p in vec3(200.0)) {
        let once = a.compose(&b).apply(&p);
        let twice = a.apply(&b.apply(&p));
        prop_assert!((once - twice).norm() <= 1e-12 * (1.0 + twice.norm()));
        let back = a.inverse().apply(&a.apply(&p));
        prop_assert!((back - p).norm() <= 1e-12 * (1.0 + p.norm()));
    }

    #[test]
    fn transforms_preserve_distances(t in transform(), p in vec3(200.0), q in vec3(200.0)) {
        let out = apply_transform(&t, &[p, q]);
        let d = (p - q).norm();
        prop_assert!(((out[0] - out[1]).norm() - d).abs() <= 1e-12 * d.max(1.0));
    }

    #[test]
    fn icp_rms_never_increases(seed in 0u64..1000) {
        let mesh = wavy_grid(10, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let small = random_transform(&mut rng, 0.3, 10.0);
        let source = small.apply_all(mesh.vertices());
        let r = icp_register(&source, &mesh, &RigidTransform::identity(), 40, 1e-12).unwrap();
        for w in r.rms_history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn smoothness_is_rigid_invariant(t in transform()) {
        let mesh = wavy_grid(7, 8);
        let s0 = laplacian_smoothness(&mesh).unwrap();
        let s1 = laplacian_smoothness(&mesh.transformed(&t).unwrap()).unwrap();
        let scale = s0.iter().copied().fold(0.0, f64::max);
        for (a, b) in s0.iter().zip(&s1) {
            prop_assert!((a - b).abs() <= 1e-9 * scale.max(1e-12));
        }
    }
}
