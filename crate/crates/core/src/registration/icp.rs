use rayon::prelude::*;

use crate::geometry::{KdTree, PointCloud};
use crate::transform::{Point3, RigidTransform};

use super::kabsch::fit_rigid;
use super::{IcpParams, RegistrationResult};

/// Nearest-neighbour pairs for the current pose, trimmed to the `keep` closest.
/// Returns `(real_index, virtual_index, dist2)` in ascending distance order
/// (ties by real index) and the mean squared distance of the kept set.
pub fn trimmed_matches(
    real: &[Point3],
    tree: &KdTree,
    v_t_r: &RigidTransform,
    keep: usize,
) -> (Vec<(usize, usize, f64)>, f64) {
    let mut m: Vec<(usize, usize, f64)> = real
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let n = tree.nearest(&v_t_r.apply_point(p)).expect("target cloud is non-empty");
            (i, n.index, n.dist2)
        })
        .collect();
    m.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
    m.truncate(keep);
    let objective = m.iter().map(|x| x.2).sum::<f64>() / m.len().max(1) as f64;
    (m, objective)
}

/// Size of the retained set for `n` pairs.
pub fn retained_count(n: usize, trim_fraction: f64) -> usize {
    let keep = ((1.0 - trim_fraction.clamp(0.0, 1.0)) * n as f64).ceil() as usize;
    keep.clamp(n.min(3), n)
}

/// Point-to-point ICP. The objective is the mean squared distance over the
/// retained pairs; because the retained count is fixed, each accepted step
/// can only lower it. A step that would raise it (rounding at a minimum) is
/// discarded and the loop stops.
pub fn icp_refine(
    real: &PointCloud,
    virt: &PointCloud,
    init: &RigidTransform,
    params: &IcpParams,
) -> RegistrationResult {
    if real.is_empty() || virt.is_empty() {
        return RegistrationResult {
            transform: *init,
            rmse: 0.0,
            inlier_count: 0,
            iterations: 0,
            converged: false,
            objective_history: Vec::new(),
        };
    }
    let tree = KdTree::new(&virt.points);
    let keep = retained_count(real.len(), params.trim_fraction);
    let mut t = *init;
    let (mut matches, mut objective) = trimmed_matches(&real.points, &tree, &t, keep);
    let mut history = vec![objective];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < params.max_iterations {
        if objective == 0.0 {
            converged = true;
            break;
        }
        let (src, dst): (Vec<Point3>, Vec<Point3>) = matches
            .iter()
            .map(|&(i, j, _)| (real.points[i], virt.points[j]))
            .unzip();
        let Some(next) = fit_rigid(&src, &dst) else {
            break;
        };
        let (next_matches, next_objective) = trimmed_matches(&real.points, &tree, &next, keep);
        if next_objective > objective {
            converged = true;
            break;
        }
        iterations += 1;
        let improvement = (objective - next_objective) / objective;
        t = next;
        matches = next_matches;
        objective = next_objective;
        history.push(objective);
        if improvement < params.rel_tol {
            converged = true;
            break;
        }
    }

    RegistrationResult {
        transform: t,
        rmse: objective.sqrt(),
        inlier_count: matches.len(),
        iterations,
        converged,
        objective_history: history,
    }
}
