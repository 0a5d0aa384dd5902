use std::collections::HashMap;

use super::table::TRI_TABLE;
use super::TriangleMesh;
use crate::Vec3;

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Corner pair per edge, ordered so the first corner has the lower grid coordinate.
const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [3, 2],
    [0, 3],
    [4, 5],
    [5, 6],
    [7, 6],
    [4, 7],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Regular sample grid of `n` points per axis spanning `[lo, hi]` on every axis.
pub struct SampleGrid<'a> {
    pub n: usize,
    pub lo: f64,
    pub hi: f64,
    /// Indexed `(i * n + j) * n + k` for point `(x_i, y_j, z_k)`.
    pub values: &'a [f64],
}

impl SampleGrid<'_> {
    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let h = (self.hi - self.lo) / (self.n - 1) as f64;
        Vec3::new(self.lo + i as f64 * h, self.lo + j as f64 * h, self.lo + k as f64 * h)
    }

    fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(i * self.n + j) * self.n + k]
    }
}

/// Triangulates `{value >= iso}`. Vertices on shared cell edges are welded, so
/// surfaces that avoid the grid boundary come out closed. Triangles wind
/// counter-clockwise seen from the low-value side.
pub fn marching_cubes(grid: &SampleGrid, iso: f64) -> TriangleMesh {
    let n = grid.n;
    assert_eq!(grid.values.len(), n * n * n);
    let mut mesh = TriangleMesh::default();
    let mut welded: HashMap<(usize, usize), u32> = HashMap::new();
    for i in 0..n - 1 {
        for j in 0..n - 1 {
            for k in 0..n - 1 {
                let mut vals = [0.0; 8];
                let mut case = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    vals[c] = grid.value(i + off[0], j + off[1], k + off[2]);
                    if vals[c] < iso {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &TRI_TABLE[case];
                let mut t = 0;
                while t < 16 && row[t] >= 0 {
                    let mut tri = [0u32; 3];
                    for (slot, &e) in tri.iter_mut().zip(&row[t..t + 3]) {
                        let [c0, c1] = EDGES[e as usize];
                        let (a, b) = (CORNERS[c0], CORNERS[c1]);
                        let pa = (i + a[0], j + a[1], k + a[2]);
                        let axis = (0..3).find(|&d| a[d] != b[d]).unwrap();
                        let key = ((pa.0 * n + pa.1) * n + pa.2, axis);
                        *slot = *welded.entry(key).or_insert_with(|| {
                            let (va, vb) = (vals[c0], vals[c1]);
                            let s = if vb != va { ((iso - va) / (vb - va)).clamp(0.0, 1.0) } else { 0.5 };
                            let p0 = grid.point(pa.0, pa.1, pa.2);
                            let p1 = grid.point(i + b[0], j + b[1], k + b[2]);
                            mesh.vertices.push(p0 + (p1 - p0) * s);
                            (mesh.vertices.len() - 1) as u32
                        });
                    }
                    mesh.faces.push(tri);
                    t += 3;
                }
            }
        }
    }
    mesh
}
