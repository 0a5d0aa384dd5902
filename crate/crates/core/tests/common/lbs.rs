//! Dense straight-line skinning oracle.

use avatarforge_core::bodymodel::{BodyModelAsset, PoseShapeParams};
use avatarforge_core::Vec3;
use nalgebra::{DMatrix, DVector, Isometry3, Matrix3, Translation3, UnitQuaternion};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_params(rng: &mut ChaCha8Rng, asset: &BodyModelAsset, pose_scale: f64) -> PoseShapeParams {
    PoseShapeParams {
        beta: (0..asset.n_shape).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        xi: (0..asset.num_joints())
            .map(|_| [0; 3].map(|_| rng.gen_range(-pose_scale..pose_scale)))
            .collect(),
        global_translation: [0; 3].map(|_| rng.gen_range(-0.1..0.1)),
    }
}

fn rot(r: &[f64; 3]) -> Matrix3<f64> {
    UnitQuaternion::from_scaled_axis(Vec3::from(*r)).to_rotation_matrix().into_inner()
}

/// Straight-line evaluation with dense matrices, quaternion rotations and
/// rigid isometries, sharing no code with the library.
pub fn oracle(asset: &BodyModelAsset, p: &PoseShapeParams) -> Vec<Vec3> {
    let v = asset.num_vertices();
    let j = asset.num_joints();
    let ns = asset.n_shape;
    let nf = 9 * (j - 1);
    let t_bar = DVector::from_iterator(3 * v, asset.template_vertices.iter().flat_map(|x| [x.x, x.y, x.z]));
    let s = DMatrix::from_row_slice(3 * v, ns, &asset.shape_basis);
    let pm = DMatrix::from_row_slice(3 * v, nf, &asset.pose_basis);
    let beta = DVector::from_column_slice(&p.beta);
    let mut feat = DVector::zeros(nf);
    for k in 1..j {
        let d = rot(&p.xi[k]) - rot(&asset.a_pose[k]);
        for a in 0..3 {
            for b in 0..3 {
                feat[9 * (k - 1) + 3 * a + b] = d[(a, b)];
            }
        }
    }
    let shaped = &t_bar + &s * &beta;
    let posed_rest = &shaped + &pm * &feat;
    let reg = DMatrix::from_row_slice(j, v, &asset.joint_regressor);
    let sx = DVector::from_iterator(v, (0..v).map(|i| shaped[3 * i]));
    let sy = DVector::from_iterator(v, (0..v).map(|i| shaped[3 * i + 1]));
    let sz = DVector::from_iterator(v, (0..v).map(|i| shaped[3 * i + 2]));
    let (jx, jy, jz) = (&reg * sx, &reg * sy, &reg * sz);
    let joints: Vec<Vec3> = (0..j).map(|k| Vec3::new(jx[k], jy[k], jz[k])).collect();

    fn world(asset: &BodyModelAsset, p: &PoseShapeParams, joints: &[Vec3], k: usize) -> Isometry3<f64> {
        let q = UnitQuaternion::from_scaled_axis(Vec3::from(p.xi[k]));
        match asset.parents[k] {
            None => Isometry3::from_parts(Translation3::from(joints[k] + Vec3::from(p.global_translation)), q),
            Some(par) => world(asset, p, joints, par) * Isometry3::from_parts(Translation3::from(joints[k] - joints[par]), q),
        }
    }
    let skin: Vec<nalgebra::Matrix4<f64>> = (0..j)
        .map(|k| (world(asset, p, &joints, k) * Translation3::from(-joints[k])).to_homogeneous())
        .collect();
    (0..v)
        .map(|i| {
            let mut g = nalgebra::Matrix4::zeros();
            for (w, &k) in asset.skin_weights[i].iter().zip(&asset.skin_indices[i]) {
                g += skin[k as usize] * *w;
            }
            let x = nalgebra::Vector4::new(posed_rest[3 * i], posed_rest[3 * i + 1], posed_rest[3 * i + 2], 1.0);
            (g * x).xyz()
        })
        .collect()
}
