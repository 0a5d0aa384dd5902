mod common;

use avatarforge_core::bodymodel::capsule::{capsule_person, LEFT_SHOULDER, LEFT_WRIST, RIGHT_SHOULDER, RIGHT_WRIST};
use avatarforge_core::bodymodel::{apply_affine, BodyModelAsset, PoseShapeParams};
use avatarforge_core::{Error, Vec3};
use nalgebra::UnitQuaternion;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::lbs::{oracle, random_params};

#[test]
fn pose_body_matches_dense_oracle() {
    let asset = capsule_person();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let p = random_params(&mut rng, asset, 1.0);
        let posed = asset.pose_body(&p).unwrap();
        let want = oracle(asset, &p);
        let err = posed.vertices.iter().zip(&want).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-6, "max deviation {err}");
    }
}

#[test]
fn shape_blend_basics() {
    let asset = capsule_person();
    let a = PoseShapeParams::a_pose(asset, &vec![0.0; asset.n_shape]);
    assert_eq!(asset.shape_blend(&a).unwrap(), asset.template_vertices);
    let mut e1 = a.clone();
    e1.beta[0] = 1.0;
    let shaped = asset.shape_blend(&e1).unwrap();
    for (i, v) in shaped.iter().enumerate() {
        for c in 0..3 {
            let want = asset.template_vertices[i][c] + asset.shape_basis[(i * 3 + c) * asset.n_shape];
            assert!((v[c] - want).abs() < 1e-12);
        }
    }
    let mut bad = a.clone();
    bad.beta.pop();
    assert!(matches!(asset.shape_blend(&bad), Err(Error::DimensionMismatch(_))));
}

#[test]
fn rest_pose_transforms_are_identity() {
    let asset = capsule_person();
    let posed = asset.pose_body(&PoseShapeParams::rest(asset)).unwrap();
    for (g, (v, s)) in posed.per_vertex_transform.iter().zip(posed.vertices.iter().zip(&posed.shaped_vertices)) {
        assert!((g - nalgebra::Matrix4::identity()).abs().max() < 1e-12);
        assert!((v - s).norm() < 1e-12);
    }
}

#[test]
fn a_pose_is_symmetric_and_abducted() {
    let asset = capsule_person();
    let body = asset.canonical_a_pose();
    assert_eq!(body, asset.canonical_a_pose());
    let mirror = |p: &Vec3| Vec3::new(-p.x, p.y, p.z);
    for (l, r) in [(13, 14), (16, 17), (18, 19), (20, 21), (22, 23), (1, 2), (4, 5), (7, 8), (10, 11)] {
        assert!((body.joints[l] - mirror(&body.joints[r])).norm() < 1e-6, "{l}/{r}");
    }
    for (s, w) in [(LEFT_SHOULDER, LEFT_WRIST), (RIGHT_SHOULDER, RIGHT_WRIST)] {
        assert!(body.joints[w].x.abs() > body.joints[s].x.abs());
        assert!(body.joints[w].y < body.joints[s].y);
    }
}

#[test]
fn elbow_rotation_moves_rigidly_bound_offset() {
    // bind one vertex rigidly to the left elbow, 0.1 along +x from it
    let mut asset = capsule_person().clone();
    let (v, nv, nf) = (100, asset.num_vertices(), asset.pose_features());
    for k in 0..asset.num_joints() {
        asset.joint_regressor[k * nv + v] = 0.0;
    }
    asset.pose_basis[v * 3 * nf..(v + 1) * 3 * nf].fill(0.0);
    asset.skin_weights[v] = [1.0, 0.0, 0.0, 0.0];
    asset.skin_indices[v] = [18, 0, 0, 0];
    let rest = PoseShapeParams::rest(&asset);
    let elbow = asset.pose_body(&rest).unwrap().joints[18];
    asset.template_vertices[v] = elbow + Vec3::new(0.1, 0.0, 0.0);

    let mut p = rest.clone();
    p.xi[18] = [0.0, 0.0, std::f64::consts::FRAC_PI_2];
    let posed = asset.pose_body(&p).unwrap();
    assert!((posed.joints[18] - elbow).norm() < 1e-12);
    let off = posed.vertices[v] - posed.joints[18];
    assert!((off - Vec3::new(0.0, 0.1, 0.0)).norm() < 1e-12, "{off:?}");
}

#[test]
fn per_vertex_transforms_invertible_for_test_poses() {
    let asset = capsule_person();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..20 {
        let posed = asset.pose_body(&random_params(&mut rng, asset, 0.8)).unwrap();
        for g in &posed.per_vertex_transform {
            assert!(g.fixed_view::<3, 3>(0, 0).determinant().abs() > 1e-8);
        }
    }
}

#[test]
fn invalid_assets_are_rejected() {
    let mut a = capsule_person().clone();
    let w = &mut a.skin_weights[5];
    let s: f64 = w.iter().sum();
    for x in w.iter_mut() {
        *x *= 0.9 / s;
    }
    let err = a.validate().unwrap_err().to_string();
    assert!(err.starts_with("weights not normalized"), "{err}");

    let mut b = capsule_person().clone();
    b.parents[3] = Some(6);
    let err = b.validate().unwrap_err().to_string();
    assert!(err.starts_with("skeleton not a tree"), "{err}");
}

#[test]
fn missing_asset_file_is_reported() {
    let err = BodyModelAsset::load(std::path::Path::new("/nonexistent/capsule.avbm")).unwrap_err();
    assert!(matches!(err, Error::NotFound(_)));
}

#[test]
fn save_load_round_trip_with_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("capsule.avbm");
    capsule_person().save(&path).unwrap();
    assert!(dir.path().join("capsule.avbm.json").exists());
    assert_eq!(&BodyModelAsset::load(&path).unwrap(), capsule_person());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn per_vertex_transform_reproduces_posed_vertices(seed in any::<u64>()) {
        let asset = capsule_person();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let posed = asset.pose_body(&random_params(&mut rng, asset, 1.5)).unwrap();
        for (g, (v, s)) in posed.per_vertex_transform.iter().zip(posed.vertices.iter().zip(&posed.shaped_vertices)) {
            prop_assert!((apply_affine(g, s) - v).norm() < 1e-6);
        }
    }

    #[test]
    fn root_rotation_is_equivariant(seed in any::<u64>(), axis in prop::array::uniform3(-1.0f64..1.0), angle in -3.0f64..3.0) {
        let asset = capsule_person();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = random_params(&mut rng, asset, 0.7);
        p.global_translation = [0.0; 3];
        let axis = Vec3::from(axis);
        prop_assume!(axis.norm() > 1e-3);
        let r = UnitQuaternion::from_scaled_axis(axis.normalize() * angle);
        let base = asset.pose_body(&p).unwrap();
        // rotation about the root joint: R (x − j0) + j0
        let j0 = asset.pose_body(&PoseShapeParams { xi: vec![[0.0; 3]; asset.num_joints()], ..p.clone() }).unwrap().joints[0];
        let mut q = p.clone();
        q.xi[0] = (r * UnitQuaternion::from_scaled_axis(Vec3::from(p.xi[0]))).scaled_axis().into();
        let rotated = asset.pose_body(&q).unwrap();
        for (a, b) in base.vertices.iter().zip(&rotated.vertices) {
            prop_assert!(((r * (a - j0) + j0) - b).norm() < 1e-5);
        }
    }

    #[test]
    fn shape_blend_is_linear_in_beta(seed in any::<u64>()) {
        let asset = capsule_person();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p1 = random_params(&mut rng, asset, 0.5);
        let mut p2 = p1.clone();
        p2.beta = (0..asset.n_shape).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut p12 = p1.clone();
        p12.beta = p1.beta.iter().zip(&p2.beta).map(|(a, b)| a + b).collect();
        let mut p0 = p1.clone();
        p0.beta = vec![0.0; asset.n_shape];
        let (s0, s1, s2, s12) = [&p0, &p1, &p2, &p12].map(|p| asset.shape_blend(p).unwrap()).into();
        for i in 0..s0.len() {
            prop_assert!(((s12[i] - s0[i]) - ((s1[i] - s0[i]) + (s2[i] - s0[i]))).norm() < 1e-6);
        }
    }
}
