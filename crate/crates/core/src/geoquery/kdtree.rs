use crate::Vec3;

/// Static k-d tree over points stored implicitly: the median of each range is
/// the node, left half below, right half above.
#[derive(Debug, Clone)]
pub(super) struct KdTree {
    /// Point indices in tree order.
    idx: Vec<usize>,
    axes: Vec<u8>,
    /// Bounds of the subtree rooted at each node.
    lo: Vec<Vec3>,
    hi: Vec<Vec3>,
}

impl KdTree {
    pub fn build(points: &[Vec3]) -> Self {
        let mut idx: Vec<usize> = (0..points.len()).collect();
        let mut axes = vec![0u8; points.len()];
        let mut blo = vec![Vec3::zeros(); points.len()];
        let mut bhi = vec![Vec3::zeros(); points.len()];
        let mut stack = vec![(0usize, points.len())];
        while let Some((lo, hi)) = stack.pop() {
            if hi <= lo {
                continue;
            }
            let mut mn = Vec3::repeat(f64::INFINITY);
            let mut mx = Vec3::repeat(f64::NEG_INFINITY);
            for &i in &idx[lo..hi] {
                mn = mn.inf(&points[i]);
                mx = mx.sup(&points[i]);
            }
            let axis = (mx - mn).imax();
            let mid = (lo + hi) / 2;
            idx[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
                points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
            });
            axes[mid] = axis as u8;
            blo[mid] = mn;
            bhi[mid] = mx;
            stack.push((lo, mid));
            stack.push((mid + 1, hi));
        }
        Self {
            idx,
            axes,
            lo: blo,
            hi: bhi,
        }
    }

    /// Nearest point and squared distance; ties go to the lowest index.
    pub fn nearest(&self, points: &[Vec3], q: &Vec3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(points, q, 0, self.idx.len(), &mut best);
        best
    }

    fn search(&self, points: &[Vec3], q: &Vec3, lo: usize, hi: usize, best: &mut (usize, f64)) {
        if hi <= lo {
            return;
        }
        let mid = (lo + hi) / 2;
        let gap = (self.lo[mid] - q).sup(&(q - self.hi[mid])).sup(&Vec3::zeros());
        if gap.norm_squared() > best.1 {
            return;
        }
        let i = self.idx[mid];
        let d2 = (points[i] - q).norm_squared();
        if d2 < best.1 || (d2 == best.1 && i < best.0) {
            *best = (i, d2);
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - points[i][axis];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(points, q, near.0, near.1, best);
        self.search(points, q, far.0, far.1, best);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec3> = (0..500)
            .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let tree = KdTree::build(&pts);
        for _ in 0..500 {
            let q = Vec3::new(rng.gen_range(-1.2..1.2), rng.gen_range(-1.2..1.2), rng.gen_range(-1.2..1.2));
            let brute = (0..pts.len())
                .map(|i| (i, (pts[i] - q).norm_squared()))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .unwrap();
            assert_eq!(tree.nearest(&pts, &q), brute);
        }
    }

    #[test]
    fn duplicate_points_prefer_lowest_index() {
        let p = Vec3::new(0.3, 0.1, 0.2);
        let pts = vec![Vec3::zeros(), p, Vec3::x(), p, p];
        let tree = KdTree::build(&pts);
        assert_eq!(tree.nearest(&pts, &p), (1, 0.0));
    }
}
