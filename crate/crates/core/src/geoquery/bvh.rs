use super::triangle::{closest_point_on_triangle, Feature};
use crate::Vec3;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Vec3,
    max: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    fn union(&mut self, o: &Aabb) {
        self.min = self.min.inf(&o.min);
        self.max = self.max.sup(&o.max);
    }

    fn dist2(&self, p: &Vec3) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let e = (self.min[k] - p[k]).max(0.0).max(p[k] - self.max[k]);
            d += e * e;
        }
        d
    }
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    /// Leaf: `count > 0`, triangles `order[start..start + count]`.
    /// Interior: children at `start` and `start + 1`.
    start: usize,
    count: usize,
}

#[derive(Debug, Clone)]
pub(super) struct Bvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub(super) struct Hit {
    pub dist2: f64,
    pub point: Vec3,
    pub triangle: usize,
    pub feature: Feature,
}

impl Bvh {
    pub fn build(vertices: &[Vec3], faces: &[[u32; 3]]) -> Self {
        let boxes: Vec<Aabb> = faces
            .iter()
            .map(|f| {
                let mut b = Aabb::empty();
                for &i in f {
                    b.grow(&vertices[i as usize]);
                }
                b
            })
            .collect();
        let centroids: Vec<Vec3> = boxes.iter().map(|b| (b.min + b.max) * 0.5).collect();
        let mut order: Vec<usize> = (0..faces.len()).collect();
        let mut nodes = vec![Node {
            bounds: Aabb::empty(),
            start: 0,
            count: 0,
        }];
        // (node index, range start, range end)
        let mut stack = vec![(0usize, 0usize, faces.len())];
        while let Some((ni, lo, hi)) = stack.pop() {
            let mut bounds = Aabb::empty();
            let mut cbounds = Aabb::empty();
            for &t in &order[lo..hi] {
                bounds.union(&boxes[t]);
                cbounds.grow(&centroids[t]);
            }
            nodes[ni].bounds = bounds;
            let extent = cbounds.max - cbounds.min;
            if hi - lo <= LEAF_SIZE || extent.max() <= 0.0 {
                nodes[ni].start = lo;
                nodes[ni].count = hi - lo;
                continue;
            }
            let axis = extent.imax();
            let mid = (lo + hi) / 2;
            order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
                centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b))
            });
            let left = nodes.len();
            for _ in 0..2 {
                nodes.push(Node {
                    bounds: Aabb::empty(),
                    start: 0,
                    count: 0,
                });
            }
            nodes[ni].start = left;
            nodes[ni].count = 0;
            stack.push((left, lo, mid));
            stack.push((left + 1, mid, hi));
        }
        Self { nodes, order }
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        (self.nodes[0].bounds.min, self.nodes[0].bounds.max)
    }

    /// Closest triangle with squared distance `<= max_dist2`. Ties go to the
    /// lowest triangle index, matching a linear scan.
    pub fn closest(&self, vertices: &[Vec3], faces: &[[u32; 3]], p: &Vec3, max_dist2: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut best_d2 = max_dist2;
        let mut stack: Vec<(usize, f64)> = Vec::with_capacity(64);
        stack.push((0, self.nodes[0].bounds.dist2(p)));
        while let Some((ni, bd)) = stack.pop() {
            if bd > best_d2 {
                continue;
            }
            let node = &self.nodes[ni];
            if node.count > 0 {
                for &t in &self.order[node.start..node.start + node.count] {
                    let f = faces[t];
                    let (q, feature) = closest_point_on_triangle(
                        p,
                        &vertices[f[0] as usize],
                        &vertices[f[1] as usize],
                        &vertices[f[2] as usize],
                    );
                    let d2 = (q - p).norm_squared();
                    let better = match &best {
                        None => d2 <= best_d2,
                        Some(b) => d2 < b.dist2 || (d2 == b.dist2 && t < b.triangle),
                    };
                    if better {
                        best_d2 = d2;
                        best = Some(Hit {
                            dist2: d2,
                            point: q,
                            triangle: t,
                            feature,
                        });
                    }
                }
            } else {
                let (a, b) = (node.start, node.start + 1);
                let (da, db) = (self.nodes[a].bounds.dist2(p), self.nodes[b].bounds.dist2(p));
                // push the farther child first so the nearer one is visited next
                if da <= db {
                    stack.push((b, db));
                    stack.push((a, da));
                } else {
                    stack.push((a, da));
                    stack.push((b, db));
                }
            }
        }
        best
    }
}
