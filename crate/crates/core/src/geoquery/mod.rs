//! Signed-distance and nearest-vertex queries against triangle meshes, and the
//! body-derived density prior.

mod bvh;
mod kdtree;
mod prior;
mod triangle;

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::Vec3;

pub use prior::{density_from_distance, density_from_distance_derivative, DensityPrior, PriorSample};
pub use triangle::{closest_point_on_triangle, Feature};

use bvh::Bvh;
use kdtree::KdTree;

/// Result of a signed-distance query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedDistance {
    /// Negative strictly inside the mesh.
    pub d: f64,
    pub closest_point: Vec3,
    /// Vertex of the closest triangle nearest to `closest_point`.
    pub closest_vertex_index: usize,
    pub triangle: usize,
}

/// Exact spatial index over one mesh: a triangle BVH for distances and a
/// k-d tree over vertices for nearest-vertex lookups.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    bvh: Bvh,
    kd: KdTree,
    closed: bool,
    face_normals: Vec<Vec3>,
    vertex_normals: Vec<Vec3>,
    /// Pseudonormal per (face, local edge), summed over both adjacent faces.
    edge_normals: Vec<[Vec3; 3]>,
}

impl SpatialIndex {
    /// Builds the index. Open meshes are accepted with a warning; their
    /// distances are unsigned.
    pub fn build(vertices: &[Vec3], faces: &[[u32; 3]]) -> Result<Self> {
        if vertices.is_empty() || faces.is_empty() {
            return Err(Error::EmptyMesh);
        }
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i as usize >= vertices.len())) {
            return Err(Error::InvalidArgument(format!("face {f:?} indexes a missing vertex")));
        }
        let closed = is_closed(faces);
        if !closed {
            log::warn!("mesh not closed: signed distance degrades to unsigned distance");
        }
        let face_normals: Vec<Vec3> = faces
            .iter()
            .map(|f| {
                let [a, b, c] = tri(vertices, f);
                let n = (b - a).cross(&(c - a));
                let len = n.norm();
                if len > 0.0 {
                    n / len
                } else {
                    Vec3::zeros()
                }
            })
            .collect();

        let mut vertex_normals = vec![Vec3::zeros(); vertices.len()];
        for (f, n) in faces.iter().zip(&face_normals) {
            let p = tri(vertices, f);
            for k in 0..3 {
                let e1 = p[(k + 1) % 3] - p[k];
                let e2 = p[(k + 2) % 3] - p[k];
                let denom = e1.norm() * e2.norm();
                if denom > 0.0 {
                    let angle = (e1.dot(&e2) / denom).clamp(-1.0, 1.0).acos();
                    vertex_normals[f[k] as usize] += angle * n;
                }
            }
        }

        let mut edge_sum: HashMap<(u32, u32), Vec3> = HashMap::new();
        for (f, n) in faces.iter().zip(&face_normals) {
            for k in 0..3 {
                *edge_sum.entry(edge_key(f[k], f[(k + 1) % 3])).or_insert_with(Vec3::zeros) += n;
            }
        }
        let edge_normals = faces
            .iter()
            .map(|f| std::array::from_fn(|k| edge_sum[&edge_key(f[k], f[(k + 1) % 3])]))
            .collect();

        Ok(Self {
            bvh: Bvh::build(vertices, faces),
            kd: KdTree::build(vertices),
            vertices: vertices.to_vec(),
            faces: faces.to_vec(),
            closed,
            face_normals,
            vertex_normals,
            edge_normals,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn num_triangles(&self) -> usize {
        self.faces.len()
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        self.bvh.bounds()
    }

    /// Signed distance with the sign from the angle-weighted pseudonormal of the
    /// closest feature, which is exact for closed, consistently oriented meshes.
    pub fn signed_distance(&self, x: &Vec3) -> SignedDistance {
        let hit = self
            .bvh
            .closest(&self.vertices, &self.faces, x, f64::INFINITY)
            .expect("unbounded query on a non-empty mesh always hits");
        self.finish(x, hit)
    }

    /// Like [`signed_distance`](Self::signed_distance) but gives up when every
    /// triangle is farther than `max_distance`.
    pub fn signed_distance_within(&self, x: &Vec3, max_distance: f64) -> Option<SignedDistance> {
        self.bvh
            .closest(&self.vertices, &self.faces, x, max_distance * max_distance)
            .map(|hit| self.finish(x, hit))
    }

    fn finish(&self, x: &Vec3, hit: bvh::Hit) -> SignedDistance {
        let f = &self.faces[hit.triangle];
        let dist = hit.dist2.sqrt();
        let sign = if self.closed {
            let n = match hit.feature {
                Feature::Face => self.face_normals[hit.triangle],
                Feature::Edge(k) => self.edge_normals[hit.triangle][k],
                Feature::Vertex(k) => self.vertex_normals[f[k] as usize],
            };
            if (x - hit.point).dot(&n) < 0.0 {
                -1.0
            } else {
                1.0
            }
        } else {
            1.0
        };
        let closest_vertex_index = f
            .iter()
            .map(|&i| i as usize)
            .min_by(|&a, &b| {
                let da = (self.vertices[a] - hit.point).norm_squared();
                let db = (self.vertices[b] - hit.point).norm_squared();
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .unwrap();
        SignedDistance {
            d: sign * dist,
            closest_point: hit.point,
            closest_vertex_index,
            triangle: hit.triangle,
        }
    }

    /// Exact generalized winding number, summed over every triangle.
    pub fn winding_number(&self, x: &Vec3) -> f64 {
        winding_number(&self.vertices, &self.faces, x)
    }

    /// Signed distance whose sign comes from the generalized winding number
    /// (inside when `w > 0.5`). O(F) per query; used to cross-check the
    /// pseudonormal sign and for meshes with dubious orientation.
    pub fn signed_distance_winding(&self, x: &Vec3) -> SignedDistance {
        let mut sd = self.signed_distance(x);
        let inside = self.winding_number(x) > 0.5;
        sd.d = if inside { -sd.d.abs() } else { sd.d.abs() };
        sd
    }

    /// Nearest mesh vertex; ties go to the lowest index.
    pub fn nearest_vertex(&self, x: &Vec3) -> (usize, f64) {
        let (i, d2) = self.kd.nearest(&self.vertices, x);
        (i, d2.sqrt())
    }
}

fn tri(vertices: &[Vec3], f: &[u32; 3]) -> [Vec3; 3] {
    [vertices[f[0] as usize], vertices[f[1] as usize], vertices[f[2] as usize]]
}

fn edge_key(a: u32, b: u32) -> (u32, u32) {
    (a.min(b), a.max(b))
}

/// A mesh is closed when every directed edge is matched by exactly one
/// opposite edge.
pub fn is_closed(faces: &[[u32; 3]]) -> bool {
    let mut count: HashMap<(u32, u32), i32> = HashMap::new();
    for f in faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            *count.entry((a, b)).or_default() += 1;
        }
    }
    !faces.is_empty()
        && count
            .iter()
            .all(|(&(a, b), &n)| n == 1 && count.get(&(b, a)) == Some(&1))
}

/// Generalized winding number by summing signed solid angles
/// (Van Oosterom–Strackee).
pub fn winding_number(vertices: &[Vec3], faces: &[[u32; 3]], x: &Vec3) -> f64 {
    let mut total = 0.0;
    for f in faces {
        let [a, b, c] = tri(vertices, f).map(|p| p - x);
        let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
        let num = a.dot(&b.cross(&c));
        let den = la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
        total += 2.0 * num.atan2(den);
    }
    total / (4.0 * std::f64::consts::PI)
}
