//! Procedural "capsule-person": a 24-joint SMPL-topology body built from
//! smoothly blended tapered capsules, polygonised by marching cubes.

use std::sync::OnceLock;

use super::{BodyModelAsset, MAX_INFLUENCES};
use crate::meshexport::{marching_cubes, SampleGrid};
use crate::Vec3;

pub const NUM_JOINTS: usize = 24;
pub const NUM_SHAPE: usize = 10;
pub const BODY_HEIGHT: f64 = 1.7;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hand",
    "right_hand",
];

pub const PARENTS: [i32; NUM_JOINTS] = [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21];

pub const LEFT_SHOULDER: usize = 16;
pub const RIGHT_SHOULDER: usize = 17;
pub const LEFT_WRIST: usize = 20;
pub const RIGHT_WRIST: usize = 21;

/// Shoulder abduction of the canonical A-pose.
pub const A_POSE_ANGLE: f64 = std::f64::consts::FRAC_PI_4;

/// Designed joint locations (before the final rescale). +x is the body's left.
fn design_joints() -> [Vec3; NUM_JOINTS] {
    let v = Vec3::new;
    [
        v(0.0, 0.08, 0.0),
        v(0.09, 0.05, 0.0),
        v(-0.09, 0.05, 0.0),
        v(0.0, 0.18, 0.0),
        v(0.09, -0.37, 0.0),
        v(-0.09, -0.37, 0.0),
        v(0.0, 0.30, 0.0),
        v(0.09, -0.78, 0.0),
        v(-0.09, -0.78, 0.0),
        v(0.0, 0.42, 0.0),
        v(0.09, -0.83, 0.10),
        v(-0.09, -0.83, 0.10),
        v(0.0, 0.58, 0.0),
        v(0.07, 0.52, 0.0),
        v(-0.07, 0.52, 0.0),
        v(0.0, 0.68, 0.0),
        v(0.17, 0.53, 0.0),
        v(-0.17, 0.53, 0.0),
        v(0.43, 0.53, 0.0),
        v(-0.43, 0.53, 0.0),
        v(0.67, 0.53, 0.0),
        v(-0.67, 0.53, 0.0),
        v(0.75, 0.53, 0.0),
        v(-0.75, 0.53, 0.0),
    ]
}

/// Bone segment driven by each joint's rotation.
fn bone_segments(j: &[Vec3; NUM_JOINTS]) -> [(Vec3, Vec3); NUM_JOINTS] {
    let v = Vec3::new;
    std::array::from_fn(|k| match k {
        0 => (v(0.0, -0.02, 0.0), j[0]),
        1 | 2 => (j[k], j[k + 3]),
        3 => (j[3], j[6]),
        4 | 5 => (j[k], j[k + 3]),
        6 => (j[6], j[9]),
        7 | 8 => (j[k], j[k + 3]),
        9 => (j[9], v(0.0, 0.52, 0.0)),
        10 => (j[10], v(0.09, -0.82, 0.16)),
        11 => (j[11], v(-0.09, -0.82, 0.16)),
        12 => (j[12], j[15]),
        13 | 14 => (j[k], j[k + 3]),
        15 => (j[15], v(0.0, 0.80, 0.0)),
        16..=21 => (j[k], j[k + 2]),
        22 => (j[22], v(0.80, 0.53, 0.0)),
        23 => (j[23], v(-0.80, 0.53, 0.0)),
        _ => unreachable!(),
    })
}

struct Capsule {
    a: Vec3,
    b: Vec3,
    ra: f64,
    rb: f64,
}

impl Capsule {
    fn sdf(&self, p: &Vec3) -> f64 {
        let ab = self.b - self.a;
        let t = ((p - self.a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
        (p - (self.a + t * ab)).norm() - (self.ra + t * (self.rb - self.ra))
    }
}

/// Central parts, then the left limbs. Right limbs come from mirroring.
fn capsules(j: &[Vec3; NUM_JOINTS]) -> Vec<Capsule> {
    let v = Vec3::new;
    let c = |a: Vec3, b: Vec3, ra: f64, rb: f64| Capsule { a, b, ra, rb };
    vec![
        c(v(0.0, 0.0, 0.0), v(0.0, 0.46, 0.0), 0.12, 0.12),
        c(v(0.0, 0.48, 0.0), j[15], 0.05, 0.05),
        c(v(0.0, 0.73, 0.0), v(0.0, 0.73, 0.0001), 0.1, 0.1),
        c(j[1], j[4], 0.075, 0.06),
        c(j[4], j[7], 0.06, 0.05),
        c(j[7], v(0.09, -0.80, 0.12), 0.045, 0.04),
        c(j[13], j[16], 0.06, 0.055),
        c(j[16], j[18], 0.05, 0.046),
        c(j[18], j[20], 0.046, 0.042),
        c(j[20], v(0.80, 0.53, 0.0), 0.04, 0.035),
    ]
}

/// Polynomial smooth minimum.
fn smin(a: f64, b: f64, k: f64) -> f64 {
    let h = (k - (a - b).abs()).max(0.0) / k;
    a.min(b) - h * h * k * 0.25
}

/// Evaluated on the left half-space so the body is exactly mirror-symmetric.
fn body_sdf(caps: &[Capsule], p: &Vec3) -> f64 {
    let p = &Vec3::new(p.x.abs(), p.y, p.z);
    caps.iter().map(|c| c.sdf(p)).fold(f64::INFINITY, |acc, d| smin(acc, d, 0.03))
}

fn segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + t * ab)).norm()
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn gauss(x: f64, mu: f64, s: f64) -> f64 {
    (-(x - mu) * (x - mu) / (2.0 * s * s)).exp()
}

fn q(x: f64) -> f64 {
    x as f32 as f64
}

/// Marching-cubes samples per axis for the generator.
const GRID: usize = 62;

/// Builds the capsule-person asset. Deterministic; all stored values are
/// exactly representable in f32 so a saved asset reloads unchanged.
pub fn generate() -> BodyModelAsset {
    let joints = design_joints();
    let caps = capsules(&joints);

    let half = 0.95;
    let h = 2.0 * half / (GRID - 1) as f64;
    let coord = |i: usize| h * (i as f64 - (GRID - 1) as f64 * 0.5);
    let mut values = vec![0.0; GRID * GRID * GRID];
    for i in 0..GRID {
        for j in 0..GRID {
            for k in 0..GRID {
                values[(i * GRID + j) * GRID + k] = -body_sdf(&caps, &Vec3::new(coord(i), coord(j), coord(k)));
            }
        }
    }
    let grid = SampleGrid {
        n: GRID,
        lo: coord(0),
        hi: coord(GRID - 1),
        values: &values,
    };
    let mesh = marching_cubes(&grid, 0.0);

    let (ymin, ymax) = mesh
        .vertices
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v.y), hi.max(v.y)));
    let scale = BODY_HEIGHT / (ymax - ymin);
    let shift = -(ymin + ymax) * 0.5;
    let rescale = |p: &Vec3| Vec3::new(p.x * scale, (p.y + shift) * scale, p.z * scale);
    let verts: Vec<Vec3> = mesh.vertices.iter().map(|p| rescale(p).map(q)).collect();
    let joints: [Vec3; NUM_JOINTS] = std::array::from_fn(|k| rescale(&joints[k]));
    let bones = bone_segments(&joints);
    let nv = verts.len();

    let mut skin_weights = Vec::with_capacity(nv);
    let mut skin_indices = Vec::with_capacity(nv);
    for p in &verts {
        let mut cand: Vec<(f64, usize)> = bones
            .iter()
            .enumerate()
            .map(|(k, (a, b))| (segment_distance(p, a, b), k))
            .collect();
        cand.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let raw: Vec<f64> = cand[..MAX_INFLUENCES].iter().map(|(d, _)| (d + 0.01).powi(-4)).collect();
        let total: f64 = raw.iter().sum();
        let mut w = [0.0; MAX_INFLUENCES];
        let mut idx = [0u32; MAX_INFLUENCES];
        for s in 0..MAX_INFLUENCES {
            w[s] = q(raw[s] / total);
            idx[s] = cand[s].1 as u32;
        }
        skin_weights.push(w);
        skin_indices.push(idx);
    }

    let weight_on = |v: usize, ks: &[usize]| -> f64 {
        skin_weights[v]
            .iter()
            .zip(&skin_indices[v])
            .filter(|(_, &k)| ks.contains(&(k as usize)))
            .map(|(w, _)| *w)
            .sum()
    };
    let arms = [13, 14, 16, 17, 18, 19, 20, 21, 22, 23];
    let legs = [1, 2, 4, 5, 7, 8, 10, 11];
    let torso = [0, 3, 6, 9];
    let head = [12, 15];
    let mut shape_basis = vec![0.0; nv * 3 * NUM_SHAPE];
    for (vi, p) in verts.iter().enumerate() {
        let (arm, leg, tor, hd) = (weight_on(vi, &arms), weight_on(vi, &legs), weight_on(vi, &torso), weight_on(vi, &head));
        let sx = p.x.signum() * smoothstep(0.0, 0.1, p.x.abs());
        let head_c = joints[15] + Vec3::new(0.0, 0.05, 0.0);
        let comps: [Vec3; NUM_SHAPE] = [
            0.05 * p,
            Vec3::new(0.0, 0.05 * p.y, 0.0),
            0.25 * tor * Vec3::new(p.x, 0.0, p.z),
            Vec3::new(0.0, 0.0, 0.04 * p.z.max(0.0) * gauss(p.y, 0.2, 0.1) * tor),
            Vec3::new(0.03 * sx * smoothstep(0.35, 0.5, p.y), 0.0, 0.0),
            Vec3::new(0.0, 0.05 * p.y.min(0.0) * leg, 0.0),
            0.2 * arm * Vec3::new(0.0, p.y - joints[16].y, p.z),
            0.2 * leg * Vec3::new(p.x - sx * joints[1].x.abs() * smoothstep(0.0, 0.04, p.x.abs()), 0.0, p.z),
            0.1 * hd * (p - head_c),
            Vec3::new(0.03 * sx * gauss(p.y, 0.05, 0.08), 0.0, 0.0),
        ];
        for (c, d) in comps.iter().enumerate() {
            for a in 0..3 {
                shape_basis[(vi * 3 + a) * NUM_SHAPE + c] = q(d[a]);
            }
        }
    }

    let nf = 9 * (NUM_JOINTS - 1);
    let mut pose_basis = vec![0.0; nv * 3 * nf];
    for (vi, p) in verts.iter().enumerate() {
        for (w, &k) in skin_weights[vi].iter().zip(&skin_indices[vi]) {
            let k = k as usize;
            if k == 0 {
                continue;
            }
            let rel = p - joints[k];
            for c in 0..3 {
                for b in 0..3 {
                    pose_basis[(vi * 3 + c) * nf + 9 * (k - 1) + 3 * c + b] = q(0.02 * w * rel[b]);
                }
            }
        }
    }

    let mut joint_regressor = vec![0.0; NUM_JOINTS * nv];
    for (k, jk) in joints.iter().enumerate() {
        let row = &mut joint_regressor[k * nv..(k + 1) * nv];
        for (r, p) in row.iter_mut().zip(&verts) {
            *r = gauss((p - jk).norm(), 0.0, 0.04);
        }
        let total: f64 = row.iter().sum();
        assert!(total > 0.0, "joint {} has no nearby vertices", JOINT_NAMES[k]);
        row.iter_mut().for_each(|r| *r = q(*r / total));
    }

    let mut a_pose = vec![[0.0; 3]; NUM_JOINTS];
    a_pose[LEFT_SHOULDER] = [0.0, 0.0, q(-A_POSE_ANGLE)];
    a_pose[RIGHT_SHOULDER] = [0.0, 0.0, q(A_POSE_ANGLE)];

    BodyModelAsset {
        template_vertices: verts,
        faces: mesh.faces,
        joint_regressor,
        skin_weights,
        skin_indices,
        shape_basis,
        n_shape: NUM_SHAPE,
        pose_basis,
        parents: PARENTS.iter().map(|&p| usize::try_from(p).ok()).collect(),
        a_pose,
    }
}

/// Shared instance of [`generate`].
pub fn capsule_person() -> &'static BodyModelAsset {
    static ASSET: OnceLock<BodyModelAsset> = OnceLock::new();
    ASSET.get_or_init(generate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geoquery::is_closed;

    #[test]
    fn asset_is_valid_closed_and_sized() {
        let a = capsule_person();
        a.validate().unwrap();
        assert_eq!(a.num_joints(), 24);
        assert!(is_closed(&a.faces));
        let nv = a.num_vertices();
        assert!((1500..3000).contains(&nv), "{nv} vertices");
        let (lo, hi) = a
            .template_vertices
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v.y), hi.max(v.y)));
        assert!((hi - lo - BODY_HEIGHT).abs() < 1e-6);
        assert!(a.template_vertices.iter().all(|v| v.abs().max() < 1.0));
    }

    #[test]
    fn single_component_sphere_topology() {
        let a = capsule_person();
        let mesh = crate::meshexport::TriangleMesh {
            vertices: a.template_vertices.clone(),
            faces: a.faces.clone(),
        };
        assert_eq!(mesh.euler_characteristic(), 2);
        assert!(mesh.signed_volume() > 0.0);
    }

    #[test]
    fn saved_asset_reloads_identically() {
        let a = capsule_person();
        let c = a.to_container();
        let back = BodyModelAsset::from_container(&crate::container::Container::from_bytes(&c.to_bytes(), crate::bodymodel::ASSET_MAGIC).unwrap()).unwrap();
        assert_eq!(&back, a);
    }
}
