//! Static 3-d tree over a point slice. Ties in distance resolve to the lower
//! point index so every query is deterministic.

use crate::transform::Point3;

#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Point3>,
    // Implicit balanced tree: the node of range [lo, hi) sits at (lo + hi) / 2
    // and splits on `axes[mid]`.
    order: Vec<u32>,
    axes: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbour {
    pub index: usize,
    pub dist2: f64,
}

fn better(a: &Neighbour, b: &Neighbour) -> bool {
    a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index)
}

impl KdTree {
    pub fn new(points: &[Point3]) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut axes = vec![0u8; points.len()];
        build(points, &mut order, &mut axes, 0);
        Self {
            points: points.to_vec(),
            order,
            axes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn nearest(&self, q: &Point3) -> Option<Neighbour> {
        let mut best = None;
        self.nearest_in(q, f64::INFINITY, 0, self.order.len(), &mut best);
        best
    }

    /// Nearest point strictly closer than `max_dist`. Far queries stay cheap
    /// because whole subtrees beyond the bound are skipped.
    pub fn nearest_within(&self, q: &Point3, max_dist: f64) -> Option<Neighbour> {
        let mut best = None;
        self.nearest_in(q, max_dist * max_dist, 0, self.order.len(), &mut best);
        best
    }

    fn nearest_in(&self, q: &Point3, bound: f64, lo: usize, hi: usize, best: &mut Option<Neighbour>) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid] as usize;
        let p = &self.points[idx];
        let cand = Neighbour {
            index: idx,
            dist2: (p - q).norm_squared(),
        };
        if cand.dist2 < bound && best.as_ref().is_none_or(|b| better(&cand, b)) {
            *best = Some(cand);
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        let (first, second) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.nearest_in(q, bound, first.0, first.1, best);
        if diff * diff < bound && best.as_ref().is_none_or(|b| diff * diff <= b.dist2) {
            self.nearest_in(q, bound, second.0, second.1, best);
        }
    }

    /// The `k` nearest points, closest first.
    pub fn knn(&self, q: &Point3, k: usize) -> Vec<Neighbour> {
        let mut heap: Vec<Neighbour> = Vec::with_capacity(k + 1);
        if k > 0 {
            self.knn_in(q, k, 0, self.order.len(), &mut heap);
        }
        heap
    }

    fn knn_in(&self, q: &Point3, k: usize, lo: usize, hi: usize, out: &mut Vec<Neighbour>) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid] as usize;
        let p = &self.points[idx];
        let cand = Neighbour {
            index: idx,
            dist2: (p - q).norm_squared(),
        };
        if out.len() < k || better(&cand, out.last().unwrap()) {
            let pos = out.partition_point(|n| better(n, &cand));
            out.insert(pos, cand);
            out.truncate(k);
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        let (first, second) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.knn_in(q, k, first.0, first.1, out);
        if out.len() < k || diff * diff <= out.last().unwrap().dist2 {
            self.knn_in(q, k, second.0, second.1, out);
        }
    }

    /// Indices of all points within `radius` (inclusive), ascending index order.
    pub fn within(&self, q: &Point3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.within_in(q, radius * radius, 0, self.order.len(), &mut out);
        out.sort_unstable();
        out
    }

    fn within_in(&self, q: &Point3, r2: f64, lo: usize, hi: usize, out: &mut Vec<usize>) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid] as usize;
        let p = &self.points[idx];
        if (p - q).norm_squared() <= r2 {
            out.push(idx);
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        if diff < 0.0 || diff * diff <= r2 {
            self.within_in(q, r2, lo, mid, out);
        }
        if diff >= 0.0 || diff * diff <= r2 {
            self.within_in(q, r2, mid + 1, hi, out);
        }
    }
}

fn build(points: &[Point3], order: &mut [u32], axes: &mut [u8], offset: usize) {
    let n = order.len();
    if n == 0 {
        return;
    }
    let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = -lo;
    for &i in order.iter() {
        lo = lo.inf(&points[i as usize]);
        hi = hi.sup(&points[i as usize]);
    }
    let ext = hi - lo;
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    let mid = n / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis]
            .total_cmp(&points[b as usize][axis])
            .then(a.cmp(&b))
    });
    axes[offset + mid] = axis as u8;
    let (left, rest) = order.split_at_mut(mid);
    build(points, left, axes, offset);
    build(points, &mut rest[1..], axes, offset + mid + 1);
}
