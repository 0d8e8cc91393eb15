//! Radius-constrained iterative mean shift plus baseline clusterers
//! (plain mean shift, DBSCAN, k-means, outlier-trimmed k-means) and the
//! clustering-quality metrics IAD and outlier rate.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Clusterer, EvalMatrix};
use crate::error::{Error, Result};

/// Cap on the outer relabeling loop. Hitting it is an error, never silent.
pub const OUTER_ITERATION_CAP: usize = 50;
/// Cap on a single mode-seeking trajectory.
const SHIFT_ITERATION_CAP: usize = 300;
/// A mode has converged when it moves less than this between shifts.
const SHIFT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// One label per matrix task; -1 marks outliers.
    pub labels: Vec<i32>,
    /// Difficulty-space center per cluster, indexed by label.
    pub centers: Vec<Vec<f64>>,
    pub radius_used: f64,
    pub method: Clusterer,
}

impl ClusterAssignment {
    pub fn cluster_count(&self) -> usize {
        self.centers.len()
    }

    pub fn members(&self, label: i32) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterQuality {
    /// Mean distance of clustered samples to their center; absent when
    /// nothing was clustered.
    pub iad: Option<f64>,
    pub outlier_rate: f64,
}

/// Method-specific parameters for [`baseline_cluster`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineParams {
    pub bandwidth: f64,
    pub eps: f64,
    pub min_pts: usize,
    pub k: usize,
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

struct ModeSeek {
    /// Per input point, the index of its merged mode.
    assign: Vec<usize>,
    modes: Vec<Vec<f64>>,
}

/// Flat-kernel mean shift: every point seeds a trajectory; converged
/// modes closer than `merge_tol` are merged (first occurrence kept).
fn flat_mean_shift(points: &[&[f64]], bandwidth: f64, merge_tol: f64) -> ModeSeek {
    let dim = points[0].len();
    let mut modes: Vec<Vec<f64>> = Vec::new();
    let mut assign = Vec::with_capacity(points.len());

    for seed in points {
        let mut pos: Vec<f64> = seed.to_vec();
        for _ in 0..SHIFT_ITERATION_CAP {
            let mut mean = vec![0.0; dim];
            let mut count = 0usize;
            for p in points {
                if euclidean(&pos, p) <= bandwidth {
                    for (m, &x) in mean.iter_mut().zip(p.iter()) {
                        *m += x;
                    }
                    count += 1;
                }
            }
            // the seed itself is always within bandwidth, so count >= 1
            for m in &mut mean {
                *m /= count as f64;
            }
            let moved = euclidean(&pos, &mean);
            pos = mean;
            if moved < SHIFT_TOLERANCE {
                break;
            }
        }
        let merged = modes.iter().position(|m| euclidean(m, &pos) < merge_tol);
        match merged {
            Some(idx) => assign.push(idx),
            None => {
                modes.push(pos);
                assign.push(modes.len() - 1);
            }
        }
    }

    // assign each point to its nearest mode (ties to the lower index)
    for (i, p) in points.iter().enumerate() {
        let mut best = assign[i];
        let mut best_d = euclidean(p, &modes[best]);
        for (j, m) in modes.iter().enumerate() {
            let d = euclidean(p, m);
            if d < best_d - 1e-15 {
                best = j;
                best_d = d;
            }
        }
        assign[i] = best;
    }

    ModeSeek { assign, modes }
}

/// Iterative radius-constrained mean shift: repeatedly cluster the
/// unlabeled samples, relabel members farther than `radius` from their
/// center back to -1, dissolve clusters smaller than `min_size`, and
/// stop once labels no longer change.
pub fn improved_meanshift(
    matrix: &EvalMatrix,
    radius: f64,
    min_size: usize,
    _seed: u64,
) -> Result<ClusterAssignment> {
    if matrix.tasks.is_empty() {
        return Err(Error::InputFormat("cannot cluster an empty matrix".into()));
    }
    if radius <= 0.0 {
        return Err(Error::Parameter("radius must be positive".into()));
    }
    if min_size < 1 {
        return Err(Error::Parameter("min cluster size must be >= 1".into()));
    }

    let points: Vec<&[f64]> = matrix.tasks.iter().map(|t| t.values.as_slice()).collect();
    let n = points.len();
    let mut labels = vec![-1i32; n];
    let mut centers: Vec<Vec<f64>> = Vec::new();
    let mut converged = false;

    for _ in 0..OUTER_ITERATION_CAP {
        let prev = labels.clone();
        let unlabeled: Vec<usize> = (0..n).filter(|&i| labels[i] == -1).collect();
        if !unlabeled.is_empty() {
            let subset: Vec<&[f64]> = unlabeled.iter().map(|&i| points[i]).collect();
            let seek = flat_mean_shift(&subset, radius, radius / 2.0);
            let mut members: Vec<Vec<usize>> = vec![Vec::new(); seek.modes.len()];
            for (j, &i) in unlabeled.iter().enumerate() {
                let mode = seek.assign[j];
                // radius check: anything farther than R stays unlabeled
                if euclidean(points[i], &seek.modes[mode]) <= radius {
                    members[mode].push(i);
                }
            }
            for (mode, group) in members.iter().enumerate() {
                // min-size check: undersized clusters dissolve entirely
                if group.len() >= min_size {
                    let label = centers.len() as i32;
                    centers.push(seek.modes[mode].clone());
                    for &i in group {
                        labels[i] = label;
                    }
                }
            }
        }
        if labels == prev {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::IterationCap(OUTER_ITERATION_CAP));
    }

    let (labels, centers) = renumber(labels, centers);
    Ok(ClusterAssignment {
        labels,
        centers,
        radius_used: radius,
        method: Clusterer::ImprovedMeanshift,
    })
}

/// Compact labels to 0..m-1 ordered by each cluster's first member.
fn renumber(labels: Vec<i32>, centers: Vec<Vec<f64>>) -> (Vec<i32>, Vec<Vec<f64>>) {
    let mut order: Vec<i32> = Vec::new();
    for &l in &labels {
        if l >= 0 && !order.contains(&l) {
            order.push(l);
        }
    }
    let mut new_labels = labels.clone();
    let mut new_centers = Vec::with_capacity(order.len());
    for (new, &old) in order.iter().enumerate() {
        for (i, &l) in labels.iter().enumerate() {
            if l == old {
                new_labels[i] = new as i32;
            }
        }
        new_centers.push(centers[old as usize].clone());
    }
    (new_labels, new_centers)
}

/// Run one of the classic clusterers for comparison.
pub fn baseline_cluster(
    matrix: &EvalMatrix,
    method: Clusterer,
    params: &BaselineParams,
    seed: u64,
) -> Result<ClusterAssignment> {
    if matrix.tasks.is_empty() {
        return Err(Error::InputFormat("cannot cluster an empty matrix".into()));
    }
    let points: Vec<&[f64]> = matrix.tasks.iter().map(|t| t.values.as_slice()).collect();
    match method {
        Clusterer::Meanshift => plain_meanshift(&points, params.bandwidth),
        Clusterer::Dbscan => dbscan(&points, params.eps, params.min_pts),
        Clusterer::Kmeans => kmeans(&points, params.k, seed),
        Clusterer::ImprovedKmeans => improved_kmeans(&points, seed),
        other => Err(Error::Parameter(format!(
            "{} is not a baseline clusterer",
            other.name()
        ))),
    }
}

fn plain_meanshift(points: &[&[f64]], bandwidth: f64) -> Result<ClusterAssignment> {
    if bandwidth <= 0.0 {
        return Err(Error::Parameter("bandwidth must be positive".into()));
    }
    let seek = flat_mean_shift(points, bandwidth, bandwidth);
    let labels: Vec<i32> = seek.assign.iter().map(|&m| m as i32).collect();
    let (labels, centers) = renumber(labels, seek.modes);
    Ok(ClusterAssignment {
        labels,
        centers,
        radius_used: bandwidth,
        method: Clusterer::Meanshift,
    })
}

fn dbscan(points: &[&[f64]], eps: f64, min_pts: usize) -> Result<ClusterAssignment> {
    if eps <= 0.0 {
        return Err(Error::Parameter("dbscan eps must be positive".into()));
    }
    if min_pts < 1 {
        return Err(Error::Parameter("dbscan min_pts must be >= 1".into()));
    }
    let n = points.len();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| euclidean(points[i], points[j]) <= eps)
                .collect()
        })
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|ns| ns.len() >= min_pts).collect();

    let mut labels = vec![-1i32; n];
    let mut next = 0i32;
    for i in 0..n {
        if labels[i] != -1 || !core[i] {
            continue;
        }
        let label = next;
        next += 1;
        let mut queue = vec![i];
        labels[i] = label;
        while let Some(p) = queue.pop() {
            for &q in &neighbors[p] {
                if labels[q] == -1 {
                    labels[q] = label;
                    if core[q] {
                        queue.push(q);
                    }
                }
            }
        }
    }

    let centers = centroids(points, &labels, next as usize);
    Ok(ClusterAssignment {
        labels,
        centers,
        radius_used: eps,
        method: Clusterer::Dbscan,
    })
}

fn centroids(points: &[&[f64]], labels: &[i32], clusters: usize) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; clusters];
    let mut counts = vec![0usize; clusters];
    for (p, &l) in points.iter().zip(labels) {
        if l >= 0 {
            counts[l as usize] += 1;
            for (s, &x) in sums[l as usize].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
    }
    for (sum, &count) in sums.iter_mut().zip(&counts) {
        if count > 0 {
            for s in sum.iter_mut() {
                *s /= count as f64;
            }
        }
    }
    sums
}

fn kmeans(points: &[&[f64]], k: usize, seed: u64) -> Result<ClusterAssignment> {
    if k < 1 {
        return Err(Error::Parameter("kmeans k must be >= 1".into()));
    }
    if k > points.len() {
        return Err(Error::Parameter(format!(
            "kmeans k = {k} exceeds task count {}",
            points.len()
        )));
    }
    let (labels, centers) = lloyd(points, k, seed);
    Ok(ClusterAssignment {
        labels,
        centers,
        radius_used: f64::NAN,
        method: Clusterer::Kmeans,
    })
}

/// k-means++ seeding followed by Lloyd iterations.
fn lloyd(points: &[&[f64]], k: usize, seed: u64) -> (Vec<i32>, Vec<Vec<f64>>) {
    let n = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..n)].to_vec());
    while centers.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| {
                centers
                    .iter()
                    .map(|c| euclidean(p, c).powi(2))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut draw = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if draw < d {
                    chosen = i;
                    break;
                }
                draw -= d;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centers.push(points[next].to_vec());
    }

    let mut labels = vec![0i32; n];
    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (j, c) in centers.iter().enumerate() {
                let d = euclidean(p, c);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            if labels[i] != best as i32 {
                labels[i] = best as i32;
                changed = true;
            }
        }
        let new_centers = centroids(points, &labels, k);
        for (j, c) in new_centers.iter().enumerate() {
            let count = labels.iter().filter(|&&l| l == j as i32).count();
            if count > 0 {
                centers[j] = c.clone();
            }
        }
        if !changed {
            break;
        }
    }
    (labels, centers)
}

/// k-means tuned toward the radius-constrained goal: search for the
/// largest k keeping every cluster at >= 10 members, then trim points
/// beyond twice the mean intra-cluster distance without letting any
/// cluster fall below 10.
fn improved_kmeans(points: &[&[f64]], seed: u64) -> Result<ClusterAssignment> {
    const FLOOR: usize = 10;
    let n = points.len();
    let mut best: Option<(Vec<i32>, Vec<Vec<f64>>)> = None;
    let mut k = 2usize;
    while k <= n / FLOOR.max(1) {
        let (labels, centers) = lloyd(points, k, seed);
        let min_size = (0..k)
            .map(|j| labels.iter().filter(|&&l| l == j as i32).count())
            .min()
            .unwrap_or(0);
        if min_size < FLOOR {
            break;
        }
        best = Some((labels, centers));
        k += 1;
    }
    let (mut labels, centers) = match best {
        Some(b) => b,
        None => lloyd(points, 1, seed),
    };

    let dists: Vec<f64> = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| euclidean(p, &centers[l as usize]))
        .collect();
    let mean_dist = dists.iter().sum::<f64>() / n as f64;
    let threshold = 2.0 * mean_dist;

    for j in 0..centers.len() {
        let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == j as i32).collect();
        members.sort_by(|&a, &b| dists[b].partial_cmp(&dists[a]).unwrap());
        let mut size = members.len();
        for &i in &members {
            // outlier if farther than the threshold from every center
            let min_to_any = centers
                .iter()
                .map(|c| euclidean(points[i], c))
                .fold(f64::INFINITY, f64::min);
            if min_to_any > threshold && size > FLOOR {
                labels[i] = -1;
                size -= 1;
            }
        }
    }

    let (labels, centers) = renumber(labels, centers);
    Ok(ClusterAssignment {
        labels,
        centers,
        radius_used: threshold,
        method: Clusterer::ImprovedKmeans,
    })
}

/// IAD (mean member-to-center distance) and outlier rate.
pub fn cluster_quality(assignment: &ClusterAssignment, matrix: &EvalMatrix) -> ClusterQuality {
    let mut total = 0.0;
    let mut clustered = 0usize;
    let mut outliers = 0usize;
    for (task, &label) in matrix.tasks.iter().zip(&assignment.labels) {
        if label < 0 {
            outliers += 1;
        } else {
            total += euclidean(&task.values, &assignment.centers[label as usize]);
            clustered += 1;
        }
    }
    ClusterQuality {
        iad: (clustered > 0).then(|| total / clustered as f64),
        outlier_rate: outliers as f64 / assignment.labels.len() as f64,
    }
}
