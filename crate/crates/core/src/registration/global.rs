//! Correspondence-graph global registration: descriptor matches, pairwise
//! rigidity compatibility, maximal cliques, one rigid hypothesis per clique.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::Serialize;

use crate::geometry::{KdTree, PointCloud};
use crate::transform::{Point3, RigidTransform};

use super::features::{describe, descriptor_distance, estimate_normals, Descriptor};
use super::kabsch::fit_rigid;
use super::{GlobalParams, RegistrationError, RegistrationResult};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Correspondence {
    pub real_index: usize,
    pub virtual_index: usize,
    pub descriptor_distance: f64,
}

/// Fixed-size bit set over vertex ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitSet {
    words: Vec<u64>,
}

impl BitSet {
    pub fn new(n: usize) -> Self {
        Self {
            words: vec![0; n.div_ceil(64)],
        }
    }

    pub fn insert(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn remove(&mut self, i: usize) {
        self.words[i / 64] &= !(1 << (i % 64));
    }

    pub fn contains(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn and(&self, other: &BitSet) -> BitSet {
        BitSet {
            words: self.words.iter().zip(&other.words).map(|(a, b)| a & b).collect(),
        }
    }

    fn and_not(&self, other: &BitSet) -> BitSet {
        BitSet {
            words: self.words.iter().zip(&other.words).map(|(a, b)| a & !b).collect(),
        }
    }

    fn and_count(&self, other: &BitSet) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + b)
            })
        })
    }
}

/// Indices `0, s, 2s, ..` with the stride chosen so at most `max` survive.
/// Depends only on point order, so it commutes with rigid motion.
pub fn stride_keypoints(n: usize, max: usize) -> Vec<usize> {
    let stride = n.div_ceil(max.max(1)).max(1);
    (0..n).step_by(stride).collect()
}

fn nearest_descriptor(q: &Descriptor, pool: &[Descriptor]) -> Option<(usize, f32)> {
    let mut best: Option<(usize, f32)> = None;
    for (i, d) in pool.iter().enumerate() {
        let dist = descriptor_distance(q, d);
        if best.is_none_or(|(_, b)| dist < b) {
            best = Some((i, dist));
        }
    }
    best
}

/// Mutual nearest neighbours in descriptor space. Indices refer to positions
/// within the two descriptor slices.
pub fn mutual_matches(real: &[Descriptor], virt: &[Descriptor]) -> Vec<(usize, usize, f64)> {
    let fwd: Vec<Option<(usize, f32)>> = real.par_iter().map(|d| nearest_descriptor(d, virt)).collect();
    let back: Vec<Option<(usize, f32)>> = virt.par_iter().map(|d| nearest_descriptor(d, real)).collect();
    fwd.iter()
        .enumerate()
        .filter_map(|(i, m)| {
            let (j, dist) = (*m)?;
            (back[j].map(|b| b.0) == Some(i)).then_some((i, j, dist as f64))
        })
        .collect()
}

/// Edge between two correspondences when they preserve pairwise distance to
/// within `tol`.
pub fn compatibility_graph(real: &[Point3], virt: &[Point3], corr: &[Correspondence], tol: f64) -> Vec<BitSet> {
    let n = corr.len();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = BitSet::new(n);
            let (pi, qi) = (real[corr[i].real_index], virt[corr[i].virtual_index]);
            for (j, c) in corr.iter().enumerate() {
                if j == i {
                    continue;
                }
                let dp = (real[c.real_index] - pi).norm();
                let dq = (virt[c.virtual_index] - qi).norm();
                if (dp - dq).abs() < tol {
                    row.insert(j);
                }
            }
            row
        })
        .collect()
}

/// Core number of every vertex (k-core peeling).
pub fn core_numbers(adj: &[BitSet]) -> Vec<usize> {
    let n = adj.len();
    let mut degree: Vec<usize> = adj.iter().map(BitSet::len).collect();
    let mut removed = vec![false; n];
    let mut core = vec![0; n];
    let mut k = 0;
    for _ in 0..n {
        let v = (0..n)
            .filter(|&v| !removed[v])
            .min_by_key(|&v| (degree[v], v))
            .expect("vertices remain");
        k = k.max(degree[v]);
        core[v] = k;
        removed[v] = true;
        for u in adj[v].iter() {
            if !removed[u] {
                degree[u] -= 1;
            }
        }
    }
    core
}

/// Maximal cliques of size at least `min_size`, at most `cap` of them.
///
/// Vertices are visited from the densest core outward so that large cliques
/// surface before the cap can cut enumeration short. Each start vertex only
/// extends into later vertices, so every maximal clique is reported once.
pub fn maximal_cliques(adj: &[BitSet], min_size: usize, cap: usize) -> Vec<Vec<usize>> {
    let n = adj.len();
    let core = core_numbers(adj);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        core[b]
            .cmp(&core[a])
            .then(adj[b].len().cmp(&adj[a].len()))
            .then(a.cmp(&b))
    });
    let mut out = Vec::new();
    let mut earlier = BitSet::new(n);
    for &v in &order {
        if out.len() >= cap {
            break;
        }
        if core[v] + 1 >= min_size {
            let mut later = adj[v].and_not(&earlier);
            later.remove(v);
            let x = adj[v].and(&earlier);
            let mut r = vec![v];
            expand(adj, &mut r, later, x, min_size, cap, &mut out);
        }
        earlier.insert(v);
    }
    out
}

fn expand(
    adj: &[BitSet],
    r: &mut Vec<usize>,
    mut p: BitSet,
    mut x: BitSet,
    min_size: usize,
    cap: usize,
    out: &mut Vec<Vec<usize>>,
) {
    if out.len() >= cap {
        return;
    }
    if p.is_empty() {
        if x.is_empty() && r.len() >= min_size {
            let mut c = r.clone();
            c.sort_unstable();
            out.push(c);
        }
        return;
    }
    if r.len() + p.len() < min_size {
        return;
    }
    // Tomita pivot: the vertex covering most of P.
    let pivot = p
        .iter()
        .chain(x.iter())
        .max_by(|&a, &b| p.and_count(&adj[a]).cmp(&p.and_count(&adj[b])).then(b.cmp(&a)))
        .expect("P is non-empty");
    let candidates: Vec<usize> = p.and_not(&adj[pivot]).iter().collect();
    for w in candidates {
        r.push(w);
        expand(adj, r, p.and(&adj[w]), x.and(&adj[w]), min_size, cap, out);
        r.pop();
        p.remove(w);
        x.insert(w);
        if out.len() >= cap {
            return;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Score {
    inliers: usize,
    rmse: f64,
}

impl Score {
    /// Higher inlier count first, then lower rmse.
    fn rank(&self, other: &Score) -> Ordering {
        other.inliers.cmp(&self.inliers).then(self.rmse.total_cmp(&other.rmse))
    }
}

fn score_pairs(t: &RigidTransform, pairs: impl Iterator<Item = (Point3, Point3)>, tol: f64) -> Score {
    let mut inliers = 0;
    let mut sum = 0.0;
    for (p, q) in pairs {
        let d2 = (t.apply_point(&p) - q).norm_squared();
        if d2 < tol * tol {
            inliers += 1;
            sum += d2;
        }
    }
    Score {
        inliers,
        rmse: if inliers > 0 {
            (sum / inliers as f64).sqrt()
        } else {
            f64::INFINITY
        },
    }
}

fn score_cloud(t: &RigidTransform, real: &[Point3], subset: &[usize], tree: &KdTree, tol: f64) -> Score {
    let d2: Vec<f64> = subset
        .par_iter()
        .map(|&i| {
            tree.nearest_within(&t.apply_point(&real[i]), tol)
                .map_or(f64::INFINITY, |n| n.dist2)
        })
        .collect();
    let mut inliers = 0;
    let mut sum = 0.0;
    for d in d2 {
        if d < tol * tol {
            inliers += 1;
            sum += d;
        }
    }
    Score {
        inliers,
        rmse: if inliers > 0 {
            (sum / inliers as f64).sqrt()
        } else {
            f64::INFINITY
        },
    }
}

/// Intermediate products, exposed for inspection and testing.
#[derive(Clone, Debug)]
pub struct GlobalTrace {
    pub correspondences: Vec<Correspondence>,
    pub compatibility: Vec<BitSet>,
    pub cliques: Vec<Vec<usize>>,
    pub hypotheses: usize,
}

pub fn global_register(
    real: &PointCloud,
    virt: &PointCloud,
    params: &GlobalParams,
) -> Result<RegistrationResult, RegistrationError> {
    global_register_traced(real, virt, params).map(|(r, _)| r)
}

pub fn global_register_traced(
    real: &PointCloud,
    virt: &PointCloud,
    params: &GlobalParams,
) -> Result<(RegistrationResult, GlobalTrace), RegistrationError> {
    if real.is_empty() || virt.is_empty() {
        return Err(RegistrationError::EmptyCloud("global registration input"));
    }
    let real_tree = KdTree::new(&real.points);
    let virt_tree = KdTree::new(&virt.points);
    let normals_for = |c: &PointCloud, tree: &KdTree| match (&c.normals, params.recompute_normals) {
        (Some(n), false) => n.clone(),
        _ => estimate_normals(&c.points, tree, params.normal_k),
    };
    let real_normals = normals_for(real, &real_tree);
    let virt_normals = normals_for(virt, &virt_tree);

    let real_kp = stride_keypoints(real.len(), params.max_keypoints);
    let virt_kp = stride_keypoints(virt.len(), params.max_virtual_keypoints);
    let real_desc = describe(
        &real_kp,
        &real.points,
        &real_normals,
        &real_tree,
        params.descriptor_radius,
    );
    let virt_desc = describe(
        &virt_kp,
        &virt.points,
        &virt_normals,
        &virt_tree,
        params.descriptor_radius,
    );

    let mut correspondences: Vec<Correspondence> = mutual_matches(&real_desc, &virt_desc)
        .into_iter()
        .map(|(i, j, d)| Correspondence {
            real_index: real_kp[i],
            virtual_index: virt_kp[j],
            descriptor_distance: d,
        })
        .collect();
    if correspondences.len() > params.max_correspondences {
        correspondences.sort_by(|a, b| {
            a.descriptor_distance
                .total_cmp(&b.descriptor_distance)
                .then(a.real_index.cmp(&b.real_index))
        });
        correspondences.truncate(params.max_correspondences);
        correspondences.sort_by_key(|c| c.real_index);
    }

    let compatibility = compatibility_graph(&real.points, &virt.points, &correspondences, params.rigidity_tol);
    let cliques = maximal_cliques(&compatibility, params.min_clique.max(3), params.max_cliques);

    let corr_pairs = |t: &RigidTransform| {
        score_pairs(
            t,
            correspondences
                .iter()
                .map(|c| (real.points[c.real_index], virt.points[c.virtual_index])),
            params.inlier_tol,
        )
    };

    let mut hypotheses: Vec<(usize, RigidTransform, Score)> = cliques
        .par_iter()
        .enumerate()
        .filter_map(|(ci, clique)| {
            let src: Vec<Point3> = clique
                .iter()
                .map(|&k| real.points[correspondences[k].real_index])
                .collect();
            let dst: Vec<Point3> = clique
                .iter()
                .map(|&k| virt.points[correspondences[k].virtual_index])
                .collect();
            let t = fit_rigid(&src, &dst)?;
            Some((ci, t, corr_pairs(&t)))
        })
        .collect();
    if hypotheses.is_empty() {
        return Err(RegistrationError::NoCliques);
    }
    let hypothesis_count = hypotheses.len();
    hypotheses.sort_by(|a, b| a.2.rank(&b.2).then(a.0.cmp(&b.0)));
    hypotheses.truncate(params.rescore_top.max(1));

    let cloud_score = |t: &RigidTransform| score_cloud(t, &real.points, &real_kp, &virt_tree, params.inlier_tol);
    let (_, mut best_t, best_score) = hypotheses
        .iter()
        .map(|(ci, t, _)| (*ci, *t, cloud_score(t)))
        .min_by(|a, b| a.2.rank(&b.2).then(a.0.cmp(&b.0)))
        .expect("at least one hypothesis");

    // Refit on every correspondence the winner agrees with.
    let (src, dst): (Vec<Point3>, Vec<Point3>) = correspondences
        .iter()
        .map(|c| (real.points[c.real_index], virt.points[c.virtual_index]))
        .filter(|(p, q)| (best_t.apply_point(p) - q).norm() < params.inlier_tol)
        .unzip();
    if let Some(refit) = fit_rigid(&src, &dst) {
        if cloud_score(&refit).rank(&best_score) != Ordering::Greater {
            best_t = refit;
        }
    }

    // Polish against the cloud itself: pair keypoints with their nearest
    // virtual point and refit on the pairs within tolerance.
    for _ in 0..params.polish_steps {
        let (src, dst): (Vec<Point3>, Vec<Point3>) = real_kp
            .iter()
            .filter_map(|&i| {
                let p = real.points[i];
                let n = virt_tree.nearest_within(&best_t.apply_point(&p), params.inlier_tol)?;
                Some((p, virt.points[n.index]))
            })
            .unzip();
        let Some(next) = fit_rigid(&src, &dst) else {
            break;
        };
        let settled = next.approx_eq(&best_t, 1e-6, 1e-9);
        best_t = next;
        if settled {
            break;
        }
    }

    let all: Vec<usize> = (0..real.len()).collect();
    let final_score = score_cloud(&best_t, &real.points, &all, &virt_tree, params.inlier_tol);
    let result = RegistrationResult {
        transform: best_t,
        rmse: if final_score.inliers > 0 { final_score.rmse } else { 0.0 },
        inlier_count: final_score.inliers,
        iterations: 0,
        converged: true,
        objective_history: Vec::new(),
    };
    Ok((
        result,
        GlobalTrace {
            correspondences,
            compatibility,
            cliques,
            hypotheses: hypothesis_count,
        },
    ))
}
