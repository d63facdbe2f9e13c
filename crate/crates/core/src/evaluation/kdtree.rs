use crate::scene_io::Vec3;

/// Static 3-d tree for exact nearest-neighbor queries.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    /// Implicit balanced tree: the median of each range is its node.
    axes: Vec<u8>,
}

impl KdTree {
    pub fn build(points: &[Vec3]) -> Self {
        let mut points = points.to_vec();
        let mut axes = vec![0u8; points.len()];
        build_range(&mut points, &mut axes);
        Self { points, axes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Distance to the nearest stored point, `None` for an empty tree.
    pub fn nearest_distance(&self, q: &Vec3) -> Option<f64> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = f64::INFINITY;
        self.search(0, self.points.len(), q, &mut best);
        Some(best.sqrt())
    }

    fn search(&self, lo: usize, hi: usize, q: &Vec3, best: &mut f64) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let p = &self.points[mid];
        let d2 = (p - q).norm_squared();
        if d2 < *best {
            *best = d2;
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(near.0, near.1, q, best);
        if diff * diff < *best {
            self.search(far.0, far.1, q, best);
        }
    }
}

fn build_range(points: &mut [Vec3], axes: &mut [u8]) {
    if points.len() <= 1 {
        return;
    }
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points.iter() {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let axis = (hi - lo).imax();
    let mid = points.len() / 2;
    points.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
    axes[mid] = axis as u8;
    let (left, rest) = points.split_at_mut(mid);
    let (left_axes, rest_axes) = axes.split_at_mut(mid);
    build_range(left, left_axes);
    build_range(&mut rest[1..], &mut rest_axes[1..]);
}
