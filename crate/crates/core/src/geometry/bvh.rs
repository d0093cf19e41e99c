//! Binary bounding-volume hierarchy over triangles, built with a binned
//! surface-area heuristic.

use crate::transform::{Point3, Vec3};

use super::Aabb;

const BINS: usize = 12;
const MAX_LEAF: usize = 4;

#[derive(Clone, Copy, Debug)]
pub struct BvhNode {
    pub bounds: Aabb,
    /// Leaf: first slot in `Bvh::items`. Interior: index of the left child;
    /// the right child follows it.
    pub first: u32,
    /// Zero for interior nodes.
    pub count: u32,
}

impl BvhNode {
    pub fn is_leaf(&self) -> bool {
        self.count > 0
    }
}

#[derive(Clone, Debug, Default)]
pub struct Bvh {
    nodes: Vec<BvhNode>,
    items: Vec<u32>,
}

impl Bvh {
    pub fn build(item_bounds: &[Aabb]) -> Self {
        let mut bvh = Bvh {
            nodes: Vec::with_capacity(item_bounds.len().max(1) * 2),
            items: (0..item_bounds.len() as u32).collect(),
        };
        if item_bounds.is_empty() {
            return bvh;
        }
        let centroids: Vec<Point3> = item_bounds.iter().map(Aabb::center).collect();
        bvh.nodes.push(BvhNode {
            bounds: Aabb::empty(),
            first: 0,
            count: item_bounds.len() as u32,
        });
        bvh.subdivide(0, item_bounds, &centroids);
        bvh
    }

    pub fn nodes(&self) -> &[BvhNode] {
        &self.nodes
    }

    /// Items referenced by a leaf.
    pub fn leaf_items(&self, node: &BvhNode) -> &[u32] {
        &self.items[node.first as usize..(node.first + node.count) as usize]
    }

    fn subdivide(&mut self, node_idx: usize, bounds: &[Aabb], centroids: &[Point3]) {
        let first = self.nodes[node_idx].first as usize;
        let count = self.nodes[node_idx].count as usize;
        let slice = &self.items[first..first + count];
        let node_box = slice.iter().fold(Aabb::empty(), |b, &i| b.union(&bounds[i as usize]));
        self.nodes[node_idx].bounds = node_box;
        if count <= 2 {
            return;
        }
        let cbox = Aabb::from_points(slice.iter().map(|&i| &centroids[i as usize]));
        let Some((axis, split_pos, cost)) = best_split(slice, bounds, centroids, &cbox) else {
            return;
        };
        let leaf_cost = count as f64;
        if cost >= leaf_cost && count <= MAX_LEAF {
            return;
        }

        // Partition in place, stable on item index within each side.
        let items = &mut self.items[first..first + count];
        let (mut left, mut right): (Vec<u32>, Vec<u32>) =
            items.iter().partition(|&&i| centroids[i as usize][axis] < split_pos);
        if left.is_empty() || right.is_empty() {
            // Centroids coincide along the chosen axis: median split by index.
            let mut all: Vec<u32> = items.to_vec();
            all.sort_unstable();
            right = all.split_off(all.len() / 2);
            left = all;
        }
        let n_left = left.len();
        items[..n_left].copy_from_slice(&left);
        items[n_left..].copy_from_slice(&right);

        let left_idx = self.nodes.len();
        self.nodes.push(BvhNode {
            bounds: Aabb::empty(),
            first: first as u32,
            count: n_left as u32,
        });
        self.nodes.push(BvhNode {
            bounds: Aabb::empty(),
            first: (first + n_left) as u32,
            count: (count - n_left) as u32,
        });
        self.nodes[node_idx].first = left_idx as u32;
        self.nodes[node_idx].count = 0;
        self.subdivide(left_idx, bounds, centroids);
        self.subdivide(left_idx + 1, bounds, centroids);
    }

    /// Visits every leaf item whose node box the ray enters before `*cutoff`.
    /// The visitor may lower `*cutoff` to prune the rest of the traversal.
    pub fn traverse(
        &self,
        origin: &Point3,
        dir: &Vec3,
        t_min: f64,
        cutoff: &mut f64,
        mut visit: impl FnMut(usize, &mut f64),
    ) {
        if self.nodes.is_empty() {
            return;
        }
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut stack: Vec<(usize, f64)> = Vec::with_capacity(64);
        if let Some(t) = self.nodes[0].bounds.ray_entry(origin, &inv, t_min, *cutoff) {
            stack.push((0, t));
        }
        while let Some((idx, entry)) = stack.pop() {
            if entry > *cutoff {
                continue;
            }
            let node = &self.nodes[idx];
            if node.is_leaf() {
                for &item in self.leaf_items(node) {
                    visit(item as usize, cutoff);
                }
                continue;
            }
            let l = node.first as usize;
            let hits: Vec<(usize, f64)> = [l, l + 1]
                .into_iter()
                .filter_map(|c| {
                    self.nodes[c]
                        .bounds
                        .ray_entry(origin, &inv, t_min, *cutoff)
                        .map(|t| (c, t))
                })
                .collect();
            // Push the farther child first so the nearer one is popped next.
            match hits.as_slice() {
                [a, b] if a.1 <= b.1 => {
                    stack.push(*b);
                    stack.push(*a);
                }
                [a, b] => {
                    stack.push(*a);
                    stack.push(*b);
                }
                [a] => stack.push(*a),
                _ => {}
            }
        }
    }

    /// Checks that every node box encloses all items below it.
    pub fn is_consistent(&self, item_bounds: &[Aabb]) -> bool {
        fn items_under(bvh: &Bvh, idx: usize, out: &mut Vec<u32>) {
            let n = &bvh.nodes[idx];
            if n.is_leaf() {
                out.extend_from_slice(bvh.leaf_items(n));
            } else {
                items_under(bvh, n.first as usize, out);
                items_under(bvh, n.first as usize + 1, out);
            }
        }
        let mut seen = 0;
        for (idx, node) in self.nodes.iter().enumerate() {
            let mut items = Vec::new();
            items_under(self, idx, &mut items);
            if !items
                .iter()
                .all(|&i| node.bounds.contains_box(&item_bounds[i as usize]))
            {
                return false;
            }
            if node.is_leaf() {
                seen += node.count as usize;
            }
        }
        seen == item_bounds.len()
    }
}

fn best_split(slice: &[u32], bounds: &[Aabb], centroids: &[Point3], cbox: &Aabb) -> Option<(usize, f64, f64)> {
    let parent_area = slice
        .iter()
        .fold(Aabb::empty(), |b, &i| b.union(&bounds[i as usize]))
        .surface_area()
        .max(f64::MIN_POSITIVE);
    let mut best: Option<(usize, f64, f64)> = None;
    for axis in 0..3 {
        let lo = cbox.min[axis];
        let extent = cbox.max[axis] - lo;
        if extent <= 0.0 {
            continue;
        }
        let scale = BINS as f64 / extent;
        let mut bin_box = [Aabb::empty(); BINS];
        let mut bin_count = [0usize; BINS];
        for &i in slice {
            let b = (((centroids[i as usize][axis] - lo) * scale) as usize).min(BINS - 1);
            bin_count[b] += 1;
            bin_box[b] = bin_box[b].union(&bounds[i as usize]);
        }
        for split in 1..BINS {
            let (lb, lc) = (0..split).fold((Aabb::empty(), 0), |(b, c), k| (b.union(&bin_box[k]), c + bin_count[k]));
            let (rb, rc) = (split..BINS).fold((Aabb::empty(), 0), |(b, c), k| (b.union(&bin_box[k]), c + bin_count[k]));
            if lc == 0 || rc == 0 {
                continue;
            }
            let cost = 1.0 + (lb.surface_area() * lc as f64 + rb.surface_area() * rc as f64) / parent_area;
            if best.is_none_or(|(_, _, c)| cost < c) {
                best = Some((axis, lo + split as f64 / scale, cost));
            }
        }
    }
    best
}
