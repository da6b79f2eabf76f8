//! Two-stage comparator: density clustering (DBSCAN with eps-neighborhoods
//! and core-point expansion) over sigmoid-space embedding samples, followed
//! by per-pixel nearest-centroid label assignment. This is the post-hoc
//! clustering stage the direct decoder replaces; it shares the evaluation
//! code with the single-stage path so comparisons are apples to apples.

use crate::model::{EmbeddingMap, LabelKind, LabelMap, BACKGROUND};
use crate::parallel::map_rows;
use crate::sigmoid;
use crate::{Error, Result};

/// Fitted cluster model: centroids in sigmoid space.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub centroids: Vec<Vec<f64>>,
    /// The eps used during fitting; informational.
    pub assignment_radius: f64,
}

const NOISE: u32 = u32::MAX;
const UNVISITED: u32 = u32::MAX - 1;

// Exact eps-range query accelerated by a grid over the first three
// coordinates (samples live in [0,1]^d, so low-d cells prune well).
struct SampleGrid<'a> {
    samples: &'a [Vec<f64>],
    cell: f64,
    dims: usize,
    buckets: std::collections::HashMap<(i64, i64, i64), Vec<u32>>,
}

impl<'a> SampleGrid<'a> {
    fn new(samples: &'a [Vec<f64>], eps: f64) -> SampleGrid<'a> {
        let dims = samples.first().map(|s| s.len().min(3)).unwrap_or(0);
        let cell = eps.max(1e-12);
        let mut buckets: std::collections::HashMap<(i64, i64, i64), Vec<u32>> =
            std::collections::HashMap::new();
        for (i, s) in samples.iter().enumerate() {
            buckets.entry(Self::key_of(s, cell, dims)).or_default().push(i as u32);
        }
        SampleGrid {
            samples,
            cell,
            dims,
            buckets,
        }
    }

    fn key_of(s: &[f64], cell: f64, dims: usize) -> (i64, i64, i64) {
        let mut k = [0i64; 3];
        for (i, ki) in k.iter_mut().enumerate().take(dims) {
            *ki = (s[i] / cell).floor() as i64;
        }
        (k[0], k[1], k[2])
    }

    /// Indices within eps (Euclidean, inclusive), ascending, excluding self.
    fn neighbors(&self, i: usize, eps: f64) -> Vec<u32> {
        let s = &self.samples[i];
        let key = Self::key_of(s, self.cell, self.dims);
        let eps2 = eps * eps;
        let mut out = Vec::new();
        let range = |d: usize, k: i64| -> std::ops::RangeInclusive<i64> {
            if d < self.dims {
                (k - 1)..=(k + 1)
            } else {
                k..=k
            }
        };
        for kx in range(0, key.0) {
            for ky in range(1, key.1) {
                for kz in range(2, key.2) {
                    let Some(bucket) = self.buckets.get(&(kx, ky, kz)) else {
                        continue;
                    };
                    for &j in bucket {
                        if j as usize == i {
                            continue;
                        }
                        let mut dist = 0.0;
                        for (a, b) in s.iter().zip(self.samples[j as usize].iter()) {
                            dist += (a - b) * (a - b);
                            if dist > eps2 {
                                break;
                            }
                        }
                        if dist <= eps2 {
                            out.push(j);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// DBSCAN over the samples: points with at least `min_pts` neighbors within
/// `eps` (themselves included) seed clusters that expand through density-
/// reachable points; everything else is noise. Expansion order is fixed
/// (ascending indices), so the result is deterministic for a given input
/// order. Centroids are the means of each cluster's members; noise points
/// are excluded. Errors if no cluster forms.
pub fn fit_density_clusters(
    samples: &[Vec<f64>],
    eps: f64,
    min_pts: usize,
) -> Result<ClusterModel> {
    if !(eps > 0.0) {
        return Err(Error::config("eps must be > 0"));
    }
    if samples.len() < min_pts {
        return Err(Error::config(format!(
            "need at least min_pts = {min_pts} samples, got {}",
            samples.len()
        )));
    }
    let grid = SampleGrid::new(samples, eps);
    let mut label = vec![UNVISITED; samples.len()];
    let mut num_clusters = 0u32;
    for i in 0..samples.len() {
        if label[i] != UNVISITED {
            continue;
        }
        let neighbors = grid.neighbors(i, eps);
        if neighbors.len() + 1 < min_pts {
            label[i] = NOISE;
            continue;
        }
        let cluster = num_clusters;
        num_clusters += 1;
        label[i] = cluster;
        let mut queue: std::collections::VecDeque<u32> = neighbors.into();
        while let Some(j) = queue.pop_front() {
            let j = j as usize;
            if label[j] == NOISE {
                label[j] = cluster; // border point
            }
            if label[j] != UNVISITED {
                continue;
            }
            label[j] = cluster;
            let jn = grid.neighbors(j, eps);
            if jn.len() + 1 >= min_pts {
                queue.extend(jn); // j is core; expand through it
            }
        }
    }
    if num_clusters == 0 {
        return Err(Error::config(
            "density clustering found no clusters; increase eps or lower min_pts",
        ));
    }
    let dim = samples[0].len();
    let mut centroids = vec![vec![0.0; dim]; num_clusters as usize];
    let mut counts = vec![0usize; num_clusters as usize];
    for (s, &l) in samples.iter().zip(label.iter()) {
        if l == NOISE {
            continue;
        }
        counts[l as usize] += 1;
        for (acc, v) in centroids[l as usize].iter_mut().zip(s.iter()) {
            *acc += v;
        }
    }
    for (c, &n) in centroids.iter_mut().zip(counts.iter()) {
        for v in c.iter_mut() {
            *v /= n as f64;
        }
    }
    Ok(ClusterModel {
        centroids,
        assignment_radius: eps,
    })
}

/// Cluster memberships as returned by a plain DBSCAN run; used by tests to
/// compare against a brute-force reference.
pub fn dbscan_labels(samples: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<Option<u32>> {
    let grid = SampleGrid::new(samples, eps);
    let mut label = vec![UNVISITED; samples.len()];
    let mut num_clusters = 0u32;
    for i in 0..samples.len() {
        if label[i] != UNVISITED {
            continue;
        }
        let neighbors = grid.neighbors(i, eps);
        if neighbors.len() + 1 < min_pts {
            label[i] = NOISE;
            continue;
        }
        let cluster = num_clusters;
        num_clusters += 1;
        label[i] = cluster;
        let mut queue: std::collections::VecDeque<u32> = neighbors.into();
        while let Some(j) = queue.pop_front() {
            let j = j as usize;
            if label[j] == NOISE {
                label[j] = cluster;
            }
            if label[j] != UNVISITED {
                continue;
            }
            label[j] = cluster;
            let jn = grid.neighbors(j, eps);
            if jn.len() + 1 >= min_pts {
                queue.extend(jn);
            }
        }
    }
    label
        .into_iter()
        .map(|l| if l == NOISE { None } else { Some(l) })
        .collect()
}

/// Label every covered pixel with its nearest centroid (index + 1) in
/// sigmoid space; ties go to the lower index, uncovered pixels stay
/// background.
pub fn assign_labels(map: &EmbeddingMap, model: &ClusterModel) -> LabelMap {
    assert!(!model.centroids.is_empty(), "model must have centroids");
    let w = map.width;
    let rows = map_rows(map.height, |r| {
        let mut row = Vec::with_capacity(w);
        for c in 0..w {
            let idx = r * w + c;
            if map.coverage[idx] < crate::codec::COVERAGE_GATE {
                row.push(BACKGROUND);
                continue;
            }
            let v: Vec<f64> = map.pixel(idx).iter().map(|&x| sigmoid(x)).collect();
            let mut best = 0usize;
            let mut best_dist = f64::INFINITY;
            for (ci, centroid) in model.centroids.iter().enumerate() {
                let mut dist = 0.0;
                for (a, b) in v.iter().zip(centroid.iter()) {
                    dist += (a - b) * (a - b);
                }
                if dist < best_dist {
                    best_dist = dist;
                    best = ci;
                }
            }
            row.push(best as u32 + 1);
        }
        row
    });
    let mut labels = Vec::with_capacity(w * map.height);
    for row in rows {
        labels.extend_from_slice(&row);
    }
    LabelMap::new(w, map.height, LabelKind::Instance, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_tight_blobs_two_centroids() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut samples = Vec::new();
        let centers = [[0.2, 0.2], [0.8, 0.8]];
        for center in centers {
            for _ in 0..40 {
                samples.push(vec![
                    center[0] + rng.random_range(-0.01..0.01),
                    center[1] + rng.random_range(-0.01..0.01),
                ]);
            }
        }
        let model = fit_density_clusters(&samples, 0.05, 5).unwrap();
        assert_eq!(model.centroids.len(), 2);
        for (centroid, center) in model.centroids.iter().zip(centers.iter()) {
            // blob means, not exact centers
            let mean: Vec<f64> = (0..2)
                .map(|k| {
                    samples
                        .iter()
                        .filter(|s| (s[0] - center[0]).abs() < 0.1)
                        .map(|s| s[k])
                        .sum::<f64>()
                        / 40.0
                })
                .collect();
            assert_relative_eq!(centroid[0], mean[0], epsilon = 1e-6);
            assert_relative_eq!(centroid[1], mean[1], epsilon = 1e-6);
        }
    }

    #[test]
    fn identical_points_single_centroid() {
        let samples = vec![vec![0.3, 0.7]; 20];
        let model = fit_density_clusters(&samples, 0.1, 16).unwrap();
        assert_eq!(model.centroids.len(), 1);
        assert_relative_eq!(model.centroids[0][0], 0.3);
        assert_relative_eq!(model.centroids[0][1], 0.7);
    }

    #[test]
    fn no_clusters_is_an_error() {
        // spread-out points, high min_pts
        let samples: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, 0.0]).collect();
        let err = fit_density_clusters(&samples, 0.1, 5).unwrap_err();
        assert!(err.to_string().contains("eps"));
    }

    /// Brute-force DBSCAN with the same semantics, no grid.
    fn dbscan_reference(samples: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<Option<u32>> {
        let n = samples.len();
        let dist2 = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
        };
        let neighbors = |i: usize| -> Vec<u32> {
            (0..n)
                .filter(|&j| j != i && dist2(&samples[i], &samples[j]) <= eps * eps)
                .map(|j| j as u32)
                .collect()
        };
        let mut label: Vec<Option<u32>> = vec![None; n];
        let mut visited = vec![false; n];
        let mut cluster = 0u32;
        for i in 0..n {
            if visited[i] {
                continue;
            }
            visited[i] = true;
            let ns = neighbors(i);
            if ns.len() + 1 < min_pts {
                continue;
            }
            label[i] = Some(cluster);
            let mut queue: std::collections::VecDeque<u32> = ns.into();
            while let Some(j) = queue.pop_front() {
                let j = j as usize;
                if label[j].is_none() {
                    label[j] = Some(cluster);
                }
                if visited[j] {
                    continue;
                }
                visited[j] = true;
                let jn = neighbors(j);
                if jn.len() + 1 >= min_pts {
                    queue.extend(jn);
                }
            }
            cluster += 1;
        }
        label
    }

    #[test]
    fn memberships_match_brute_force_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let samples: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let ours = dbscan_labels(&samples, 0.12, 4);
        let reference = dbscan_reference(&samples, 0.12, 4);
        // same noise set and same partition (cluster ids may differ)
        let mut id_map = std::collections::HashMap::new();
        for (a, b) in ours.iter().zip(reference.iter()) {
            match (a, b) {
                (None, None) => {}
                (Some(x), Some(y)) => {
                    let mapped = id_map.entry(*x).or_insert(*y);
                    assert_eq!(mapped, y, "partition mismatch");
                }
                _ => panic!("noise set mismatch: {a:?} vs {b:?}"),
            }
        }
    }

    fn map_with(values: Vec<f64>, coverage: Vec<f64>, w: usize, h: usize, d: usize) -> EmbeddingMap {
        let mut m = EmbeddingMap::zeros(w, h, d, 0);
        m.values = values;
        m.coverage = coverage;
        m
    }

    #[test]
    fn assign_single_centroid_labels_everything_covered() {
        let map = map_with(vec![0.0; 8], vec![1.0, 1.0, 0.0, 1.0], 2, 2, 2);
        let model = ClusterModel {
            centroids: vec![vec![0.5, 0.5]],
            assignment_radius: 0.2,
        };
        let out = assign_labels(&map, &model);
        assert_eq!(out.labels, vec![1, 1, 0, 1]);
    }

    #[test]
    fn assign_tie_goes_to_lower_index() {
        // sigmoid(0) = 0.5 exactly equidistant from the two centroids
        let map = map_with(vec![0.0, 0.0], vec![1.0], 1, 1, 2);
        let model = ClusterModel {
            centroids: vec![vec![0.4, 0.5], vec![0.6, 0.5]],
            assignment_radius: 0.2,
        };
        assert_eq!(assign_labels(&map, &model).labels, vec![1]);
    }

    #[test]
    fn assign_matches_brute_force_nearest() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (w, h, d) = (9, 7, 3);
        let values: Vec<f64> = (0..w * h * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let map = map_with(values, vec![1.0; w * h], w, h, d);
        let centroids: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
            .collect();
        let model = ClusterModel {
            centroids: centroids.clone(),
            assignment_radius: 0.2,
        };
        let out = assign_labels(&map, &model);
        for idx in 0..w * h {
            let v: Vec<f64> = map.pixel(idx).iter().map(|&x| sigmoid(x)).collect();
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (ci, c) in centroids.iter().enumerate() {
                let d2: f64 = v.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                if d2 < best_d {
                    best_d = d2;
                    best = ci;
                }
            }
            assert_eq!(out.labels[idx], best as u32 + 1);
        }
    }
}
