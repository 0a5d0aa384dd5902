//! Parametric body model: shape/pose blend shapes, kinematic tree and
//! linear blend skinning.
//!
//! Conventions: y is up, the body faces +z and its left side is +x. Joint
//! rotations are axis-angle vectors measured from the template rest pose
//! (arms horizontal). Pose blend-shape features are taken relative to the
//! asset's canonical A-pose, so the canonical body carries no pose correctives.

mod asset;
pub mod capsule;

use nalgebra::{Matrix3, Matrix4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

pub use asset::{ASSET_MAGIC, ASSET_VERSION};

/// Skinning influences stored per vertex (SMPL convention).
pub const MAX_INFLUENCES: usize = 4;
/// Tolerance on the per-vertex skin weight sum.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct BodyModelAsset {
    pub template_vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    /// Dense `[J, V]` regressor, row-major.
    pub joint_regressor: Vec<f64>,
    pub skin_weights: Vec<[f64; MAX_INFLUENCES]>,
    pub skin_indices: Vec<[u32; MAX_INFLUENCES]>,
    /// `[V, 3, n_shape]`, row-major.
    pub shape_basis: Vec<f64>,
    pub n_shape: usize,
    /// `[V, 3, 9 * (J - 1)]`, row-major.
    pub pose_basis: Vec<f64>,
    /// Parent joint per joint; `None` for the root.
    pub parents: Vec<Option<usize>>,
    /// Canonical A-pose axis-angle rotations, one per joint.
    pub a_pose: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseShapeParams {
    pub beta: Vec<f64>,
    pub xi: Vec<[f64; 3]>,
    #[serde(default)]
    pub global_translation: [f64; 3],
}

impl PoseShapeParams {
    /// Rest pose: zero shape, zero rotations.
    pub fn rest(asset: &BodyModelAsset) -> Self {
        Self {
            beta: vec![0.0; asset.n_shape],
            xi: vec![[0.0; 3]; asset.num_joints()],
            global_translation: [0.0; 3],
        }
    }

    /// The asset's canonical A-pose with the given shape coefficients.
    pub fn a_pose(asset: &BodyModelAsset, beta: &[f64]) -> Self {
        Self {
            beta: beta.to_vec(),
            xi: asset.a_pose.clone(),
            global_translation: [0.0; 3],
        }
    }

    pub fn validate(&self, asset: &BodyModelAsset) -> Result<()> {
        if self.beta.len() != asset.n_shape {
            return Err(Error::DimensionMismatch(format!(
                "beta has {} coefficients, asset has {} shape components",
                self.beta.len(),
                asset.n_shape
            )));
        }
        if self.xi.len() != asset.num_joints() {
            return Err(Error::DimensionMismatch(format!(
                "xi has {} joints, asset has {}",
                self.xi.len(),
                asset.num_joints()
            )));
        }
        let finite = self.beta.iter().all(|v| v.is_finite())
            && self.xi.iter().flatten().all(|v| v.is_finite())
            && self.global_translation.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("pose/shape parameters must be finite".into()));
        }
        for (j, r) in self.xi.iter().enumerate() {
            if Vec3::from(*r).norm() >= std::f64::consts::TAU {
                return Err(Error::InvalidArgument(format!(
                    "axis-angle magnitude of joint {j} must be below 2π"
                )));
            }
        }
        Ok(())
    }
}

/// A body posed by linear blend skinning.
#[derive(Debug, Clone, PartialEq)]
pub struct PosedBody {
    pub vertices: Vec<Vec3>,
    /// Shaped canonical vertices `T_P(β, ξ)` the transforms act on.
    pub shaped_vertices: Vec<Vec3>,
    /// Blended skinning transform `G = Σ w_k G_k` per vertex.
    pub per_vertex_transform: Vec<Matrix4<f64>>,
    pub joints: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub source: PoseShapeParams,
}

impl BodyModelAsset {
    pub fn num_vertices(&self) -> usize {
        self.template_vertices.len()
    }

    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    pub fn pose_features(&self) -> usize {
        9 * (self.num_joints() - 1)
    }

    /// Checks every structural invariant of the asset.
    pub fn validate(&self) -> Result<()> {
        let v = self.num_vertices();
        let j = self.num_joints();
        if v == 0 {
            return Err(Error::EmptyMesh);
        }
        if j == 0 {
            return Err(Error::SkeletonNotTree("no joints".into()));
        }
        validate_tree(&self.parents)?;
        for (fi, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&i| i as usize >= v) {
                return Err(Error::malformed("asset", format!("face {fi} indexes a missing vertex")));
            }
        }
        let sizes = [
            ("joint_regressor", self.joint_regressor.len(), j * v),
            ("skin_weights", self.skin_weights.len(), v),
            ("skin_indices", self.skin_indices.len(), v),
            ("shape_basis", self.shape_basis.len(), v * 3 * self.n_shape),
            ("pose_basis", self.pose_basis.len(), v * 3 * self.pose_features()),
            ("a_pose", self.a_pose.len(), j),
        ];
        for (name, got, want) in sizes {
            if got != want {
                return Err(Error::malformed("asset", format!("{name} has {got} entries, expected {want}")));
            }
        }
        for (vi, (w, idx)) in self.skin_weights.iter().zip(&self.skin_indices).enumerate() {
            if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::malformed("asset", format!("negative skin weight at vertex {vi}")));
            }
            if idx.iter().any(|&k| k as usize >= j) {
                return Err(Error::malformed("asset", format!("skin index out of range at vertex {vi}")));
            }
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
                return Err(Error::WeightsNotNormalized { vertex: vi, sum });
            }
        }
        Ok(())
    }

    /// `T_P(β, ξ) = T̄ + B_S(β; S) + B_P(ξ; P)`.
    pub fn shape_blend(&self, params: &PoseShapeParams) -> Result<Vec<Vec3>> {
        params.validate(self)?;
        let features = self.pose_feature_vector(&params.xi);
        let mut out = self.shaped_without_pose(&params.beta);
        let pf = features.len();
        if features.iter().any(|&f| f != 0.0) {
            for (vi, v) in out.iter_mut().enumerate() {
                for c in 0..3 {
                    let row = &self.pose_basis[(vi * 3 + c) * pf..(vi * 3 + c + 1) * pf];
                    v[c] += dot(row, &features);
                }
            }
        }
        Ok(out)
    }

    /// `T̄ + B_S(β; S)`: the vertices joint locations are regressed from.
    fn shaped_without_pose(&self, beta: &[f64]) -> Vec<Vec3> {
        let ns = self.n_shape;
        self.template_vertices
            .iter()
            .enumerate()
            .map(|(vi, t)| {
                let mut v = *t;
                if beta.iter().any(|&b| b != 0.0) {
                    for c in 0..3 {
                        v[c] += dot(&self.shape_basis[(vi * 3 + c) * ns..(vi * 3 + c + 1) * ns], beta);
                    }
                }
                v
            })
            .collect()
    }

    /// Flattened `R(ξ_j) − R(ξ^A_j)` for every non-root joint.
    pub fn pose_feature_vector(&self, xi: &[[f64; 3]]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.pose_features());
        for (r, rest) in xi.iter().zip(&self.a_pose).skip(1) {
            let d = rodrigues(Vec3::from(*r)) - rodrigues(Vec3::from(*rest));
            for a in 0..3 {
                for b in 0..3 {
                    out.push(d[(a, b)]);
                }
            }
        }
        out
    }

    /// Regressed joint locations `J(β)`.
    pub fn regress_joints(&self, shaped: &[Vec3]) -> Vec<Vec3> {
        let v = self.num_vertices();
        (0..self.num_joints())
            .map(|j| {
                let row = &self.joint_regressor[j * v..(j + 1) * v];
                row.iter()
                    .zip(shaped)
                    .filter(|(w, _)| **w != 0.0)
                    .fold(Vec3::zeros(), |acc, (w, p)| acc + *w * p)
            })
            .collect()
    }

    /// Poses the body by linear blend skinning.
    pub fn pose_body(&self, params: &PoseShapeParams) -> Result<PosedBody> {
        let shaped = self.shape_blend(params)?;
        let rest_joints = self.regress_joints(&self.shaped_without_pose(&params.beta));
        let skinning = joint_transforms(&self.parents, &rest_joints, &params.xi, params.global_translation);

        let per_vertex_transform: Vec<Matrix4<f64>> = self
            .skin_weights
            .iter()
            .zip(&self.skin_indices)
            .map(|(w, idx)| blend_transforms(&skinning, w, idx))
            .collect();
        let vertices = per_vertex_transform
            .iter()
            .zip(&shaped)
            .map(|(g, v)| apply_affine(g, v))
            .collect();
        let joints = skinning
            .iter()
            .zip(&rest_joints)
            .map(|(g, j)| apply_affine(g, j))
            .collect();
        Ok(PosedBody {
            vertices,
            shaped_vertices: shaped,
            per_vertex_transform,
            joints,
            faces: self.faces.clone(),
            source: params.clone(),
        })
    }

    /// The canonical-space body: the asset posed in its A-pose at zero shape.
    pub fn canonical_a_pose(&self) -> PosedBody {
        self.canonical_a_pose_with_shape(&vec![0.0; self.n_shape])
            .expect("stored A-pose is valid for its own asset")
    }

    pub fn canonical_a_pose_with_shape(&self, beta: &[f64]) -> Result<PosedBody> {
        self.pose_body(&PoseShapeParams::a_pose(self, beta))
    }
}

fn validate_tree(parents: &[Option<usize>]) -> Result<()> {
    let j = parents.len();
    let roots: Vec<_> = (0..j).filter(|&k| parents[k].is_none()).collect();
    if roots != [0] {
        return Err(Error::SkeletonNotTree(format!(
            "expected joint 0 as the only root, found roots {roots:?}"
        )));
    }
    for start in 0..j {
        let mut cur = start;
        let mut steps = 0;
        while let Some(p) = parents[cur] {
            if p >= j {
                return Err(Error::SkeletonNotTree(format!("joint {cur} has parent {p} out of range")));
            }
            cur = p;
            steps += 1;
            if steps > j {
                return Err(Error::SkeletonNotTree(format!("cycle through joint {start}")));
            }
        }
    }
    Ok(())
}

/// Rodrigues' rotation formula for an axis-angle vector.
pub fn rodrigues(r: Vec3) -> Matrix3<f64> {
    let theta = r.norm();
    let k = skew(&r);
    if theta < 1e-8 {
        // second-order expansion; exact identity at zero
        return Matrix3::identity() + k + 0.5 * k * k;
    }
    let k = k / theta;
    Matrix3::identity() + theta.sin() * k + (1.0 - theta.cos()) * k * k
}

fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Per-joint skinning transforms `G_k = A_k · [I | −j_k]`, where `A_k` is the
/// world transform of joint `k` composed along the kinematic tree.
pub fn joint_transforms(
    parents: &[Option<usize>],
    rest_joints: &[Vec3],
    xi: &[[f64; 3]],
    translation: [f64; 3],
) -> Vec<Matrix4<f64>> {
    let j = parents.len();
    let mut world: Vec<Matrix4<f64>> = Vec::with_capacity(j);
    for k in 0..j {
        let local_t = match parents[k] {
            Some(p) => rest_joints[k] - rest_joints[p],
            None => rest_joints[k] + Vec3::from(translation),
        };
        let local = affine(&rodrigues(Vec3::from(xi[k])), &local_t);
        let w = match parents[k] {
            Some(p) => {
                assert!(p < k, "joints must be topologically ordered (parent {p} of {k})");
                world[p] * local
            }
            None => local,
        };
        world.push(w);
    }
    world
        .into_iter()
        .zip(rest_joints)
        .map(|(a, rj)| {
            let lin = a.fixed_view::<3, 3>(0, 0).into_owned();
            let t = a.fixed_view::<3, 1>(0, 3).into_owned() - lin * rj;
            affine(&lin, &t)
        })
        .collect()
}

/// Affine combination of joint transforms. Weights are renormalized in f64 so
/// the result keeps a unit homogeneous row even when stored weights carry f32
/// rounding.
fn blend_transforms(
    joints: &[Matrix4<f64>],
    w: &[f64; MAX_INFLUENCES],
    idx: &[u32; MAX_INFLUENCES],
) -> Matrix4<f64> {
    let sum: f64 = w.iter().sum();
    let mut g = Matrix4::zeros();
    for (wk, &k) in w.iter().zip(idx) {
        if *wk != 0.0 {
            g += joints[k as usize] * (*wk / sum);
        }
    }
    g[(3, 0)] = 0.0;
    g[(3, 1)] = 0.0;
    g[(3, 2)] = 0.0;
    g[(3, 3)] = 1.0;
    g
}

pub fn affine(lin: &Matrix3<f64>, t: &Vec3) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(lin);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
    m
}

pub fn apply_affine(m: &Matrix4<f64>, p: &Vec3) -> Vec3 {
    let lin = m.fixed_view::<3, 3>(0, 0);
    lin * p + m.fixed_view::<3, 1>(0, 3)
}

pub fn linear_part(m: &Matrix4<f64>) -> Matrix3<f64> {
    m.fixed_view::<3, 3>(0, 0).into_owned()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Two-joint chain: root at origin, child "elbow" at (0.5, 0, 0).
    fn chain_asset() -> BodyModelAsset {
        let verts = vec![
            Vec3::new(0.1, 0.0, 0.0),
            Vec3::new(0.6, 0.0, 0.0),
            Vec3::new(0.5, 0.1, 0.0),
            Vec3::new(0.0, 0.0, 0.1),
        ];
        let v = verts.len();
        // joint 0 regressed from vertex 3 shifted; make it exact by hand
        let mut reg = vec![0.0; 2 * v];
        reg[3] = 1.0; // joint 0 at (0,0,0.1)
        reg[v + 1] = 0.5; // joint 1 at midpoint of v1 and v2
        reg[v + 2] = 0.5;
        BodyModelAsset {
            template_vertices: verts,
            faces: vec![[0, 1, 2], [0, 2, 3], [0, 3, 1], [1, 3, 2]],
            joint_regressor: reg,
            skin_weights: vec![[1.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], [0.5, 0.5, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]],
            skin_indices: vec![[0, 0, 0, 0], [1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 0]],
            shape_basis: vec![0.0; v * 3],
            n_shape: 1,
            pose_basis: vec![0.0; v * 3 * 9],
            parents: vec![None, Some(0)],
            a_pose: vec![[0.0; 3]; 2],
        }
    }

    #[test]
    fn rodrigues_matches_known_rotation() {
        let r = rodrigues(Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let p = r * Vec3::new(1.0, 0.0, 0.0);
        assert_relative_eq!(p, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
        assert_eq!(rodrigues(Vec3::zeros()), Matrix3::identity());
        let small = rodrigues(Vec3::new(1e-10, 0.0, 0.0));
        assert!((small.determinant() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn elbow_rotation_maps_offset() {
        let asset = chain_asset();
        let mut params = PoseShapeParams::rest(&asset);
        params.xi[1] = [0.0, 0.0, std::f64::consts::FRAC_PI_2];
        let posed = asset.pose_body(&params).unwrap();
        let elbow = posed.joints[1];
        // vertex 1 is skinned fully to the elbow at offset (0.1, -0.05, 0)
        let rest_elbow = asset.regress_joints(&asset.template_vertices)[1];
        let offset = asset.template_vertices[1] - rest_elbow;
        let rotated = posed.vertices[1] - elbow;
        assert_relative_eq!(rotated, Vec3::new(-offset.y, offset.x, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn cyclic_parents_rejected() {
        let mut asset = chain_asset();
        asset.parents = vec![Some(1), Some(0)];
        assert!(matches!(asset.validate(), Err(Error::SkeletonNotTree(_))));
        asset.parents = vec![None, Some(1)];
        assert!(matches!(asset.validate(), Err(Error::SkeletonNotTree(_))));
    }

    #[test]
    fn unnormalized_weights_rejected() {
        let mut asset = chain_asset();
        asset.skin_weights[2] = [0.45, 0.45, 0.0, 0.0];
        let err = asset.validate().unwrap_err();
        assert!(err.to_string().contains("weights not normalized"), "{err}");
    }

    #[test]
    fn dimension_mismatch_reported() {
        let asset = chain_asset();
        let mut params = PoseShapeParams::rest(&asset);
        params.beta = vec![0.0; 3];
        assert!(matches!(asset.shape_blend(&params), Err(Error::DimensionMismatch(_))));
        let mut params = PoseShapeParams::rest(&asset);
        params.xi[0] = [7.0, 0.0, 0.0];
        assert!(asset.pose_body(&params).is_err());
    }
}
