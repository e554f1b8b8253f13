//! Object-aware point-cloud regularizer.
//!
//! For each object and each grouping level, `n_g` centers are picked by
//! farthest-point sampling among the object's Gaussian means and each center
//! gathers its `n_n` nearest neighbors. Two population variances are penalized:
//! the spread of each center's distance to its closest other center, and the
//! spread of the per-group sums of neighbor distances. Grouping is recomputed
//! on every call and treated as constant when differentiating.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::scene::SceneSnapshot;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupLevelConfig {
    /// Number of groups (`n_g`).
    pub groups: usize,
    /// Neighbors per group (`n_n`).
    pub neighbors: usize,
}

impl GroupLevelConfig {
    pub const fn new(groups: usize, neighbors: usize) -> Self {
        Self { groups, neighbors }
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups >= 2 && self.neighbors >= 1 {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "grouping level needs n_g >= 2 and n_n >= 1, got ({}, {})",
                self.groups, self.neighbors
            )))
        }
    }

    /// Fewest points for which this level contributes.
    pub fn min_points(&self) -> usize {
        self.groups + self.neighbors
    }
}

pub const DEFAULT_LEVELS: [GroupLevelConfig; 3] = [
    GroupLevelConfig::new(16, 16),
    GroupLevelConfig::new(32, 16),
    GroupLevelConfig::new(64, 32),
];

/// Centers and neighborhoods of one object at one level. Indices refer to the
/// point list the grouping was built from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObjectGrouping {
    pub object: usize,
    pub centers: Vec<usize>,
    pub neighbors: Vec<Vec<usize>>,
}

/// Greedy farthest-point sampling. The seed is the point farthest from the
/// centroid; each following center maximizes its distance to the chosen set.
/// Ties resolve to the lowest index.
pub fn farthest_point_sample(points: &[Vector3<f64>], count: usize) -> Result<Vec<usize>> {
    if points.len() < count {
        return Err(Error::InsufficientPoints {
            needed: count,
            got: points.len(),
        });
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let centroid = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let mut seed = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d = (p - centroid).norm_squared();
        if d > best {
            best = d;
            seed = i;
        }
    }
    let mut chosen = Vec::with_capacity(count);
    chosen.push(seed);
    let mut min_d2: Vec<f64> = points.iter().map(|p| (p - points[seed]).norm_squared()).collect();
    while chosen.len() < count {
        let mut next = 0;
        let mut far = f64::NEG_INFINITY;
        for (i, &d) in min_d2.iter().enumerate() {
            if d > far {
                far = d;
                next = i;
            }
        }
        chosen.push(next);
        let c = points[next];
        for (d, p) in min_d2.iter_mut().zip(points) {
            *d = d.min((p - c).norm_squared());
        }
    }
    Ok(chosen)
}

/// The `k` nearest points to `points[center]`, excluding the center itself,
/// closest first (ties to the lowest index).
pub fn nearest_neighbors(points: &[Vector3<f64>], center: usize, k: usize) -> Vec<usize> {
    let c = points[center];
    let mut cand: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != center)
        .map(|(i, p)| ((p - c).norm_squared(), i))
        .collect();
    let k = k.min(cand.len());
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < cand.len() && k > 0 {
        cand.select_nth_unstable_by(k - 1, cmp);
        cand.truncate(k);
    } else {
        cand.truncate(k);
    }
    cand.sort_by(cmp);
    cand.into_iter().map(|(_, i)| i).collect()
}

pub fn group_points(object: usize, points: &[Vector3<f64>], level: GroupLevelConfig) -> Result<ObjectGrouping> {
    let centers = farthest_point_sample(points, level.groups)?;
    let neighbors = centers
        .iter()
        .map(|&c| nearest_neighbors(points, c, level.neighbors))
        .collect();
    Ok(ObjectGrouping {
        object,
        centers,
        neighbors,
    })
}

fn population_variance_grad(values: &[f64]) -> (f64, Vec<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let grad = values.iter().map(|v| 2.0 * (v - mean) / n).collect();
    (var, grad)
}

#[inline]
fn add_distance_grad(grads: &mut [Vector3<f64>], points: &[Vector3<f64>], a: usize, b: usize, g: f64) {
    let d = points[a] - points[b];
    let len = d.norm();
    if len > 0.0 {
        let dir = d * (g / len);
        grads[a] += dir;
        grads[b] -= dir;
    }
}

/// Variance of each center's distance to its nearest other center, with the
/// gradient with respect to every center.
pub fn distance_variance_loss_with_grad(centers: &[Vector3<f64>]) -> (f64, Vec<Vector3<f64>>) {
    let n = centers.len();
    let mut grads = vec![Vector3::zeros(); n];
    if n < 2 {
        return (0.0, grads);
    }
    let mut nearest = vec![0; n];
    let mut dist = vec![0.0; n];
    for i in 0..n {
        let mut best = f64::INFINITY;
        for j in 0..n {
            if j != i {
                let d = (centers[j] - centers[i]).norm();
                if d < best {
                    best = d;
                    nearest[i] = j;
                }
            }
        }
        dist[i] = best;
    }
    let (var, g) = population_variance_grad(&dist);
    for i in 0..n {
        add_distance_grad(&mut grads, centers, i, nearest[i], g[i]);
    }
    (var, grads)
}

pub fn distance_variance_loss(centers: &[Vector3<f64>]) -> f64 {
    distance_variance_loss_with_grad(centers).0
}

/// Variance of the per-group sums of center-to-neighbor distances.
/// Gradients are accumulated into `grads` (indexed like `points`) scaled by `weight`.
pub fn neighbor_sum_loss_accumulate(
    grouping: &ObjectGrouping,
    points: &[Vector3<f64>],
    weight: f64,
    grads: Option<&mut [Vector3<f64>]>,
) -> f64 {
    let sums: Vec<f64> = grouping
        .centers
        .iter()
        .zip(&grouping.neighbors)
        .map(|(&c, nn)| nn.iter().map(|&j| (points[j] - points[c]).norm()).sum())
        .collect();
    if sums.is_empty() {
        return 0.0;
    }
    let (var, g) = population_variance_grad(&sums);
    if let Some(grads) = grads {
        for ((&c, nn), gi) in grouping.centers.iter().zip(&grouping.neighbors).zip(&g) {
            for &j in nn {
                add_distance_grad(grads, points, j, c, weight * gi);
            }
        }
    }
    var
}

pub fn neighbor_sum_loss(grouping: &ObjectGrouping, points: &[Vector3<f64>]) -> f64 {
    neighbor_sum_loss_accumulate(grouping, points, 1.0, None)
}

/// Per-term totals of one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ObjectLossTerms {
    /// Σ over levels and objects of the neighbor-sum variance (unweighted).
    pub neighbor_sum: f64,
    /// Σ over levels and objects of the center-distance variance (unweighted).
    pub distance: f64,
    /// Number of (object, level) pairs that contributed.
    pub active_groups: usize,
}

impl ObjectLossTerms {
    pub fn weighted(&self, weights: &LossWeights) -> f64 {
        weights.a_s * self.neighbor_sum + weights.a_d * self.distance
    }
}

/// Evaluates the regularizer over all objects and levels; when `grads` is given,
/// adds the weighted gradient for every Gaussian mean of the scene.
pub fn object_aware_terms(
    scene: &SceneSnapshot,
    weights: &LossWeights,
    levels: &[GroupLevelConfig],
    mut grads: Option<&mut [Vector3<f64>]>,
) -> ObjectLossTerms {
    let mut terms = ObjectLossTerms::default();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); scene.object_count];
    for (i, g) in scene.gaussians.iter().enumerate() {
        let id = g.object_id();
        if id < scene.object_count {
            members[id].push(i);
        }
    }
    for level in levels {
        for (object, idx) in members.iter().enumerate() {
            if idx.len() < level.min_points() || level.validate().is_err() {
                continue;
            }
            let points: Vec<Vector3<f64>> = idx.iter().map(|&i| scene.gaussians[i].mean).collect();
            let grouping = match group_points(object, &points, *level) {
                Ok(g) => g,
                Err(_) => continue,
            };
            let mut local = vec![Vector3::zeros(); points.len()];
            let want_grad = grads.is_some();
            let ls = neighbor_sum_loss_accumulate(
                &grouping,
                &points,
                weights.a_s,
                want_grad.then_some(local.as_mut_slice()),
            );
            let centers: Vec<Vector3<f64>> = grouping.centers.iter().map(|&c| points[c]).collect();
            let (ld, center_grads) = distance_variance_loss_with_grad(&centers);
            terms.neighbor_sum += ls;
            terms.distance += ld;
            terms.active_groups += 1;
            if let Some(g) = grads.as_deref_mut() {
                for (&c, cg) in grouping.centers.iter().zip(&center_grads) {
                    local[c] += cg * weights.a_d;
                }
                for (&i, lg) in idx.iter().zip(&local) {
                    g[i] += lg;
                }
            }
        }
    }
    terms
}

/// Weighted object-aware loss of the scene at the given levels.
pub fn object_aware_loss(scene: &SceneSnapshot, weights: &LossWeights, levels: &[GroupLevelConfig]) -> f64 {
    object_aware_terms(scene, weights, levels, None).weighted(weights)
}
