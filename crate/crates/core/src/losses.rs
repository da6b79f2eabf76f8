//! Segmentation losses over rendered embedding maps and scene primitives:
//! the contrastive cluster loss, the boundary-mined triplet loss behind a
//! learnable linear projection, and the 3D neighborhood regularizer. Each
//! returns both the value and its analytic gradient.
//!
//! Everything here depends on masks only through the [`Partition`], whose
//! segment order is canonical under relabeling, and all accumulation orders
//! are fixed; loss values and gradients are therefore bit-identical under
//! any bijective relabeling of the input mask values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{EmbeddingMap, Partition, Scene};
use crate::raster::Channel;
use crate::sigmoid;
use crate::{Error, Result};

/// Learnable d x d projection applied to sigmoid-squashed embeddings before
/// the triplet hinge.
#[derive(Debug, Clone)]
pub struct LinearProjection {
    pub dim: usize,
    /// Row-major d x d.
    pub matrix: Vec<f64>,
}

impl LinearProjection {
    pub fn identity(dim: usize) -> LinearProjection {
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = 1.0;
        }
        LinearProjection { dim, matrix }
    }

    /// Identity plus N(0, 0.01^2) noise, so early triplet geometry matches
    /// sigmoid space while still breaking symmetry.
    pub fn identity_with_noise(dim: usize, rng: &mut impl Rng) -> LinearProjection {
        let mut proj = LinearProjection::identity(dim);
        for v in proj.matrix.iter_mut() {
            let noise: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
            *v += 0.01 * noise;
        }
        proj
    }

    #[inline]
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let row = &self.matrix[i * d..(i + 1) * d];
            let mut acc = 0.0;
            for k in 0..d {
                acc += row[k] * x[k];
            }
            out[i] = acc;
        }
    }

    /// Accumulate W^T g into `out`.
    #[inline]
    fn transpose_apply_add(&self, g: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let gi = g[i];
            let row = &self.matrix[i * d..(i + 1) * d];
            for k in 0..d {
                out[k] += row[k] * gi;
            }
        }
    }
}

/// Mined (anchor, positive, negative) pixel triples plus the hinge margin.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    /// Pixel indices into the owning map: [anchor, positive, negative].
    pub triplets: Vec<[u32; 3]>,
    pub margin: f64,
}

impl TripletBatch {
    pub fn empty() -> TripletBatch {
        TripletBatch {
            triplets: Vec::new(),
            margin: 1.0,
        }
    }
}

/// Symmetric tau-ball adjacency over primitive centers (squared distances,
/// inclusive threshold).
#[derive(Debug, Clone)]
pub struct NeighborGraph {
    pub adjacency: Vec<Vec<u32>>,
    pub threshold: f64,
}

impl NeighborGraph {
    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(|a| a.len()).sum::<usize>() / 2
    }
}

/// Contrastive cluster loss on sigmoid-squashed embeddings: mean squared
/// distance of each segment pixel to its segment centroid, minus the mean
/// squared distance between distinct centroids. Centroids are differentiated
/// as functions of the pixels (full gradient).
///
/// Returns the loss and the H*W*d gradient w.r.t. the raw map values
/// (background pixels get zero gradient). A single-segment partition simply
/// has a zero repulsion term.
pub fn cluster_loss(map: &EmbeddingMap, partition: &Partition) -> (f64, Vec<f64>) {
    let d = map.dim;
    let mut pixel_grad = vec![0.0f64; map.values.len()];
    let k = partition.segments.len();
    let n_total = partition.total_pixels();
    if k == 0 || n_total == 0 {
        return (0.0, pixel_grad);
    }

    // per-segment centroids of sigma(V)
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(k);
    for seg in &partition.segments {
        let mut mean = vec![0.0f64; d];
        for &p in &seg.pixels {
            let v = map.pixel(p as usize);
            for j in 0..d {
                mean[j] += sigmoid(v[j]);
            }
        }
        let inv = 1.0 / seg.pixels.len() as f64;
        for m in mean.iter_mut() {
            *m *= inv;
        }
        means.push(mean);
    }

    // attraction: (1/N) sum over segment pixels of ||sigma(V) - mean||^2
    let inv_n = 1.0 / n_total as f64;
    let mut attract = 0.0f64;
    for (seg, mean) in partition.segments.iter().zip(means.iter()) {
        for &p in &seg.pixels {
            let v = map.pixel(p as usize);
            for j in 0..d {
                let diff = sigmoid(v[j]) - mean[j];
                attract += diff * diff;
            }
        }
    }
    attract *= inv_n;

    // repulsion: mean over ordered centroid pairs of ||m_i - m_j||^2
    let mut repel = 0.0f64;
    let pair_norm = if k >= 2 {
        1.0 / (k * (k - 1)) as f64
    } else {
        0.0
    };
    for i in 0..k {
        for j in (i + 1)..k {
            let mut dist = 0.0;
            for t in 0..d {
                let diff = means[i][t] - means[j][t];
                dist += diff * diff;
            }
            repel += 2.0 * dist; // both ordered pairs
        }
    }
    repel *= pair_norm;
    let loss = attract - repel;

    // d(repel)/d(mean_i) = (4 / (k (k-1))) * sum_{j != i} (m_i - m_j)
    //                    = (4 / (k (k-1))) * (k m_i - S)
    let mut mean_sum = vec![0.0f64; d];
    for mean in &means {
        for j in 0..d {
            mean_sum[j] += mean[j];
        }
    }
    let mut repel_grad_mean: Vec<Vec<f64>> = Vec::with_capacity(k);
    for mean in &means {
        let mut g = vec![0.0f64; d];
        if k >= 2 {
            for j in 0..d {
                g[j] = -4.0 * pair_norm * (k as f64 * mean[j] - mean_sum[j]);
            }
        }
        repel_grad_mean.push(g);
    }

    for (si, seg) in partition.segments.iter().enumerate() {
        let inv_seg = 1.0 / seg.pixels.len() as f64;
        for &p in &seg.pixels {
            let v = map.pixel(p as usize);
            let dst = &mut pixel_grad[p as usize * d..(p as usize + 1) * d];
            for j in 0..d {
                let s = sigmoid(v[j]);
                // the attract term's centroid chain cancels exactly
                let g_s = 2.0 * inv_n * (s - means[si][j]) + inv_seg * repel_grad_mean[si][j];
                dst[j] = g_s * s * (1.0 - s);
            }
        }
    }

    (loss, pixel_grad)
}

/// Sample triplets: anchors uniformly from segment pixels, positives from the
/// anchor segment's boundary, negatives from the union of the other segments'
/// boundaries. Deterministic given the seed. Yields min(max_triplets, number
/// of segment pixels) triplets, or an empty batch with fewer than 2 segments.
pub fn mine_triplets(
    _map: &EmbeddingMap,
    partition: &Partition,
    max_triplets: usize,
    rng_seed: u64,
) -> TripletBatch {
    let k = partition.segments.len();
    if k < 2 || max_triplets == 0 {
        return TripletBatch::empty();
    }
    let boundary_sizes: Vec<usize> = partition.segments.iter().map(|s| s.boundary.len()).collect();
    let total_boundary: usize = boundary_sizes.iter().sum();

    // anchor pool over all segment pixels, in canonical partition order
    let mut pool: Vec<(u32, u32)> = Vec::with_capacity(partition.total_pixels());
    for (si, seg) in partition.segments.iter().enumerate() {
        for &p in &seg.pixels {
            pool.push((si as u32, p));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let count = max_triplets.min(pool.len());
    if count < pool.len() {
        // partial Fisher-Yates: the first `count` entries become the sample
        for i in 0..count {
            let j = rng.random_range(i..pool.len());
            pool.swap(i, j);
        }
        pool.truncate(count);
    }

    let mut triplets = Vec::with_capacity(count);
    for &(si, anchor) in &pool {
        let si = si as usize;
        let own = &partition.segments[si].boundary;
        let others = total_boundary - boundary_sizes[si];
        if own.is_empty() || others == 0 {
            continue;
        }
        let positive = own[rng.random_range(0..own.len())];
        // index into the union of the other segments' boundaries
        let mut pick = rng.random_range(0..others);
        let mut negative = 0u32;
        for (sj, seg) in partition.segments.iter().enumerate() {
            if sj == si {
                continue;
            }
            if pick < seg.boundary.len() {
                negative = seg.boundary[pick];
                break;
            }
            pick -= seg.boundary.len();
        }
        triplets.push([anchor, positive, negative]);
    }
    TripletBatch {
        triplets,
        margin: 1.0,
    }
}

/// Triplet hinge loss over projected, sigmoid-squashed pixel embeddings:
/// mean over triplets of max(0, ||a-p||^2 - ||a-n||^2 + margin) with
/// a = W sigma(V(anchor)) etc. Returns (loss, gradient w.r.t. raw map
/// values, gradient w.r.t. W).
pub fn triplet_loss(
    map: &EmbeddingMap,
    batch: &TripletBatch,
    proj: &LinearProjection,
) -> (f64, Vec<f64>, Vec<f64>) {
    let d = map.dim;
    assert_eq!(proj.dim, d, "projection dim must match map dim");
    let mut pixel_grad = vec![0.0f64; map.values.len()];
    let mut proj_grad = vec![0.0f64; d * d];
    if batch.triplets.is_empty() {
        return (0.0, pixel_grad, proj_grad);
    }
    let inv_count = 1.0 / batch.triplets.len() as f64;

    let mut s_buf = vec![0.0f64; 3 * d];
    let mut z_buf = vec![0.0f64; 3 * d];
    let mut g_z = vec![0.0f64; 3 * d];
    let mut loss = 0.0f64;
    for t in &batch.triplets {
        for (slot, &p) in t.iter().enumerate() {
            let v = map.pixel(p as usize);
            for j in 0..d {
                s_buf[slot * d + j] = sigmoid(v[j]);
            }
            let (s, z) = (&s_buf[slot * d..(slot + 1) * d], &mut z_buf[slot * d..(slot + 1) * d]);
            proj.apply(s, z);
        }
        let (a, p, n) = (&z_buf[0..d], &z_buf[d..2 * d], &z_buf[2 * d..3 * d]);
        let mut dist_ap = 0.0;
        let mut dist_an = 0.0;
        for j in 0..d {
            let dp = a[j] - p[j];
            let dn = a[j] - n[j];
            dist_ap += dp * dp;
            dist_an += dn * dn;
        }
        let hinge = dist_ap - dist_an + batch.margin;
        if hinge <= 0.0 {
            continue;
        }
        loss += hinge;

        // d hinge / d a = 2 (n - p); / d p = -2 (a - p); / d n = 2 (a - n)
        for j in 0..d {
            g_z[j] = 2.0 * (n[j] - p[j]) * inv_count;
            g_z[d + j] = -2.0 * (a[j] - p[j]) * inv_count;
            g_z[2 * d + j] = 2.0 * (a[j] - n[j]) * inv_count;
        }
        for (slot, &px) in t.iter().enumerate() {
            let gz = &g_z[slot * d..(slot + 1) * d];
            let s = &s_buf[slot * d..(slot + 1) * d];
            // dL/dW += gz s^T
            for i in 0..d {
                let gi = gz[i];
                let row = &mut proj_grad[i * d..(i + 1) * d];
                for k in 0..d {
                    row[k] += gi * s[k];
                }
            }
            // dL/ds = W^T gz, then through the sigmoid
            let mut g_s = vec![0.0f64; d];
            proj.transpose_apply_add(gz, &mut g_s);
            let dst = &mut pixel_grad[px as usize * d..(px as usize + 1) * d];
            for j in 0..d {
                dst[j] += g_s[j] * s[j] * (1.0 - s[j]);
            }
        }
    }
    (loss * inv_count, pixel_grad, proj_grad)
}

/// Exact tau-ball neighbor graph on squared center distances (inclusive),
/// built with a uniform grid of cell size sqrt(threshold).
pub fn build_neighbor_graph(scene: &Scene, threshold: f64) -> Result<NeighborGraph> {
    if !(threshold > 0.0) {
        return Err(Error::config("neighbor threshold must be > 0"));
    }
    let cell = threshold.sqrt();
    let key = |p: &nalgebra::Vector3<f64>| {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    };
    let mut grid: std::collections::HashMap<(i64, i64, i64), Vec<u32>> =
        std::collections::HashMap::new();
    for (i, prim) in scene.primitives.iter().enumerate() {
        grid.entry(key(&prim.position)).or_default().push(i as u32);
    }
    let mut adjacency = vec![Vec::new(); scene.primitives.len()];
    for (i, prim) in scene.primitives.iter().enumerate() {
        let (kx, ky, kz) = key(&prim.position);
        let mut neighbors = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(cellmates) = grid.get(&(kx + dx, ky + dy, kz + dz)) else {
                        continue;
                    };
                    for &j in cellmates {
                        if j as usize == i {
                            continue;
                        }
                        let diff = prim.position - scene.primitives[j as usize].position;
                        if diff.norm_squared() <= threshold {
                            neighbors.push(j);
                        }
                    }
                }
            }
        }
        neighbors.sort_unstable();
        adjacency[i] = neighbors;
    }
    Ok(NeighborGraph {
        adjacency,
        threshold,
    })
}

/// Smoothness penalty sum_i sum_{j in N(i)} ||v_i - v_j||^2 on raw
/// (pre-sigmoid) embeddings, with the symmetric gradient. Returns the loss
/// and a per-primitive gradient (n * d).
pub fn regularization_3d(
    scene: &Scene,
    graph: &NeighborGraph,
    channel: Channel,
) -> (f64, Vec<f64>) {
    assert_eq!(
        graph.adjacency.len(),
        scene.primitives.len(),
        "graph built on a different scene"
    );
    let d = match channel {
        Channel::Instance => scene.embedding_dim,
        Channel::Semantic => scene.semantic_dim,
        Channel::Color => 3,
    };
    let get = |i: usize| -> &[f64] {
        match channel {
            Channel::Instance => &scene.primitives[i].instance_embedding,
            Channel::Semantic => &scene.primitives[i].semantic_embedding,
            Channel::Color => &scene.primitives[i].color,
        }
    };
    let mut loss = 0.0f64;
    let mut grad = vec![0.0f64; scene.primitives.len() * d];
    for (i, neighbors) in graph.adjacency.iter().enumerate() {
        let vi = get(i);
        for &j in neighbors {
            let vj = get(j as usize);
            let dst = &mut grad[i * d..(i + 1) * d];
            for t in 0..d {
                let diff = vi[t] - vj[t];
                loss += diff * diff;
                // d/dv_i of the (i,j) plus (j,i) terms; the j side is added
                // when the loop reaches j
                dst[t] += 4.0 * diff;
            }
        }
    }
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LabelKind, LabelMap, partition_from_mask};
    use approx::assert_relative_eq;

    /// Map with raw values chosen directly (blend info unused by losses).
    fn raw_map(width: usize, height: usize, dim: usize, values: Vec<f64>) -> EmbeddingMap {
        let mut map = EmbeddingMap::zeros(width, height, dim, 0);
        assert_eq!(values.len(), width * height * dim);
        map.values = values;
        map
    }

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    #[test]
    fn cluster_loss_two_saturated_segments() {
        // segment 1 pixels at sigma = (0, 0), segment 2 at (1, 1):
        // attraction 0, repulsion mean ||(1,1)||^2 = 2, loss = -2
        let mask = LabelMap::new(2, 2, LabelKind::Instance, vec![1, 1, 2, 2]);
        let part = partition_from_mask(&mask);
        let big = 60.0;
        let values = vec![
            -big, -big, -big, -big, // segment 1
            big, big, big, big, // segment 2
        ];
        let map = raw_map(2, 2, 2, values);
        let (loss, _) = cluster_loss(&map, &part);
        assert_relative_eq!(loss, -2.0, epsilon = 1e-9);
    }

    #[test]
    fn cluster_loss_single_uniform_segment_is_zero() {
        let mask = LabelMap::filled(3, 3, LabelKind::Instance, 1);
        let part = partition_from_mask(&mask);
        let map = raw_map(3, 3, 2, vec![0.7; 18]);
        let (loss, grad) = cluster_loss(&map, &part);
        assert_relative_eq!(loss, 0.0, epsilon = 1e-12);
        assert!(grad.iter().all(|&g| g.abs() < 1e-12));
    }

    #[test]
    fn cluster_loss_background_pixels_get_zero_gradient() {
        let mask = LabelMap::new(2, 2, LabelKind::Instance, vec![1, 0, 2, 0]);
        let part = partition_from_mask(&mask);
        let map = raw_map(2, 2, 2, vec![0.3; 8]);
        let (_, grad) = cluster_loss(&map, &part);
        assert_eq!(&grad[2..4], &[0.0, 0.0]);
        assert_eq!(&grad[6..8], &[0.0, 0.0]);
    }

    fn fd_check_map_gradient(
        map: &EmbeddingMap,
        analytic: &[f64],
        mut eval: impl FnMut(&EmbeddingMap) -> f64,
    ) {
        let step = 1e-3;
        let mut probe = map.clone();
        for i in 0..map.values.len() {
            let orig = probe.values[i];
            probe.values[i] = orig + step;
            let plus = eval(&probe);
            probe.values[i] = orig - step;
            let minus = eval(&probe);
            probe.values[i] = orig;
            let fd = (plus - minus) / (2.0 * step);
            let an = analytic[i];
            let denom = fd.abs().max(an.abs()).max(1e-8);
            assert!(
                (fd - an).abs() / denom <= 1e-4,
                "value {i}: fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn cluster_loss_gradient_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let labels: Vec<u32> = (0..16).map(|_| rng.random_range(0..3)).collect();
        let mask = LabelMap::new(4, 4, LabelKind::Instance, labels);
        let part = partition_from_mask(&mask);
        let values: Vec<f64> = (0..16 * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let map = raw_map(4, 4, 3, values);
        let (_, grad) = cluster_loss(&map, &part);
        fd_check_map_gradient(&map, &grad, |m| cluster_loss(m, &part).0);
    }

    fn two_segment_partition() -> (LabelMap, Partition) {
        let mask = LabelMap::new(4, 4, LabelKind::Instance, vec![
            1, 1, 2, 2, //
            1, 1, 2, 2, //
            1, 1, 2, 2, //
            1, 1, 2, 2,
        ]);
        let part = partition_from_mask(&mask);
        (mask, part)
    }

    #[test]
    fn mine_triplets_respects_invariants() {
        let (_, part) = two_segment_partition();
        let map = raw_map(4, 4, 2, vec![0.0; 32]);
        let batch = mine_triplets(&map, &part, 3000, 7);
        // 16 segment pixels -> 16 triplets
        assert_eq!(batch.triplets.len(), 16);
        let seg_of = |p: u32| part.segments.iter().position(|s| s.pixels.contains(&p));
        for t in &batch.triplets {
            let sa = seg_of(t[0]).unwrap();
            let sp = seg_of(t[1]).unwrap();
            let sn = seg_of(t[2]).unwrap();
            assert_eq!(sa, sp, "anchor and positive share a segment");
            assert_ne!(sa, sn, "negative from a different segment");
            assert!(part.segments[sp].boundary.contains(&t[1]));
            assert!(part.segments[sn].boundary.contains(&t[2]));
        }
    }

    #[test]
    fn mine_triplets_caps_at_max() {
        let (_, part) = two_segment_partition();
        let map = raw_map(4, 4, 2, vec![0.0; 32]);
        let batch = mine_triplets(&map, &part, 5, 7);
        assert_eq!(batch.triplets.len(), 5);
    }

    #[test]
    fn mine_triplets_single_segment_is_empty() {
        let mask = LabelMap::filled(4, 4, LabelKind::Instance, 3);
        let part = partition_from_mask(&mask);
        let map = raw_map(4, 4, 2, vec![0.0; 32]);
        assert!(mine_triplets(&map, &part, 100, 1).triplets.is_empty());
    }

    #[test]
    fn mine_triplets_deterministic_for_seed() {
        let (_, part) = two_segment_partition();
        let map = raw_map(4, 4, 2, vec![0.0; 32]);
        let a = mine_triplets(&map, &part, 8, 123);
        let b = mine_triplets(&map, &part, 8, 123);
        assert_eq!(a, b);
        let c = mine_triplets(&map, &part, 8, 124);
        assert_ne!(a, c);
    }

    #[test]
    fn triplet_loss_at_margin_when_degenerate() {
        // all pixels identical: a = p = n, hinge = margin = 1
        let (_, part) = two_segment_partition();
        let map = raw_map(4, 4, 2, vec![0.4; 32]);
        let batch = mine_triplets(&map, &part, 3000, 11);
        let proj = LinearProjection::identity(2);
        let (loss, _, _) = triplet_loss(&map, &batch, &proj);
        assert_relative_eq!(loss, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn triplet_loss_inactive_hinge_is_zero() {
        // segment 2 saturated far from segment 1: ||a-p||^2 = 0, ||a-n||^2 ~ 2 > 1 = margin
        let mut values = vec![0.0; 32];
        for idx in 0..16 {
            let col = idx % 4;
            let v = if col < 2 { logit(0.01) } else { logit(0.99) };
            values[idx * 2] = v;
            values[idx * 2 + 1] = v;
        }
        let (_, part) = two_segment_partition();
        let map = raw_map(4, 4, 2, values);
        let batch = mine_triplets(&map, &part, 3000, 3);
        let proj = LinearProjection::identity(2);
        let (loss, map_grad, proj_grad) = triplet_loss(&map, &batch, &proj);
        assert_eq!(loss, 0.0);
        assert!(map_grad.iter().all(|&g| g == 0.0));
        assert!(proj_grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn triplet_loss_gradients_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (_, part) = two_segment_partition();
        let values: Vec<f64> = (0..32).map(|_| rng.random_range(-1.5..1.5)).collect();
        let map = raw_map(4, 4, 2, values);
        let mut proj = LinearProjection::identity_with_noise(2, &mut rng);
        // make the projection non-trivial
        proj.matrix[1] += 0.3;
        let batch = mine_triplets(&map, &part, 10, 17);
        assert!(!batch.triplets.is_empty());

        let (_, map_grad, proj_grad) = triplet_loss(&map, &batch, &proj);
        fd_check_map_gradient(&map, &map_grad, |m| triplet_loss(m, &batch, &proj).0);

        let step = 1e-3;
        let mut probe = proj.clone();
        for i in 0..4 {
            let orig = probe.matrix[i];
            probe.matrix[i] = orig + step;
            let plus = triplet_loss(&map, &batch, &probe).0;
            probe.matrix[i] = orig - step;
            let minus = triplet_loss(&map, &batch, &probe).0;
            probe.matrix[i] = orig;
            let fd = (plus - minus) / (2.0 * step);
            let an = proj_grad[i];
            let denom = fd.abs().max(an.abs()).max(1e-8);
            assert!(
                (fd - an).abs() / denom <= 1e-4,
                "W[{i}]: fd {fd} vs analytic {an}"
            );
        }
    }

    fn line_scene(positions: &[f64], embeddings: Vec<Vec<f64>>) -> Scene {
        use nalgebra::{Quaternion, Vector3};
        let d = embeddings[0].len();
        Scene {
            primitives: positions
                .iter()
                .zip(embeddings)
                .map(|(&x, e)| crate::model::GaussianPrimitive {
                    position: Vector3::new(x, 0.0, 0.0),
                    scale: Vector3::new(0.01, 0.01, 0.01),
                    rotation: Quaternion::new(1.0, 0.0, 0.0, 0.0),
                    opacity: 1.0,
                    color: [0.0, 0.0, 0.0],
                    instance_embedding: e,
                    semantic_embedding: vec![0.0; d],
                })
                .collect(),
            embedding_dim: d,
            semantic_dim: d,
            bound: crate::model::Aabb {
                min: Vector3::new(-10.0, -10.0, -10.0),
                max: Vector3::new(10.0, 10.0, 10.0),
            },
        }
    }

    #[test]
    fn neighbor_graph_threshold_is_inclusive() {
        // squared distance exactly equal to the threshold keeps the edge
        let scene = line_scene(&[0.0, 0.1], vec![vec![0.0], vec![0.0]]);
        let graph = build_neighbor_graph(&scene, 0.010000000000000002).unwrap();
        assert_eq!(graph.adjacency[0], vec![1]);
        assert_eq!(graph.adjacency[1], vec![0]);
    }

    #[test]
    fn neighbor_graph_single_primitive_empty() {
        let scene = line_scene(&[0.0], vec![vec![0.0]]);
        let graph = build_neighbor_graph(&scene, 1e-2).unwrap();
        assert!(graph.adjacency[0].is_empty());
    }

    #[test]
    fn neighbor_graph_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        use nalgebra::Vector3;
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let positions: Vec<f64> = (0..100).map(|_| rng.random_range(-0.3..0.3)).collect();
        let mut scene = line_scene(&positions, vec![vec![0.0]; 100]);
        for p in scene.primitives.iter_mut() {
            p.position.y = rng.random_range(-0.3..0.3);
            p.position.z = rng.random_range(-0.3..0.3);
        }
        let tau = 1e-2;
        let graph = build_neighbor_graph(&scene, tau).unwrap();
        for i in 0..100 {
            let mut brute: Vec<u32> = (0..100u32)
                .filter(|&j| {
                    j as usize != i && {
                        let d: Vector3<f64> =
                            scene.primitives[i].position - scene.primitives[j as usize].position;
                        d.norm_squared() <= tau
                    }
                })
                .collect();
            brute.sort_unstable();
            assert_eq!(graph.adjacency[i], brute, "adjacency mismatch at {i}");
        }
    }

    #[test]
    fn regularization_zero_for_equal_embeddings() {
        let scene = line_scene(&[0.0, 0.05], vec![vec![0.7, -0.2], vec![0.7, -0.2]]);
        let graph = build_neighbor_graph(&scene, 1e-2).unwrap();
        let (loss, grad) = regularization_3d(&scene, &graph, Channel::Instance);
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn regularization_two_neighbors_hand_value() {
        // v1 - v2 = (1, 0): both ordered pairs -> loss 2, gradients +-(4, 0)
        let scene = line_scene(&[0.0, 0.05], vec![vec![1.0, 0.0], vec![0.0, 0.0]]);
        let graph = build_neighbor_graph(&scene, 1e-2).unwrap();
        let (loss, grad) = regularization_3d(&scene, &graph, Channel::Instance);
        assert_relative_eq!(loss, 2.0, epsilon = 1e-12);
        assert_relative_eq!(grad[0], 4.0, epsilon = 1e-12);
        assert_relative_eq!(grad[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(grad[2], -4.0, epsilon = 1e-12);
        assert_relative_eq!(grad[3], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn regularization_gradient_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let positions: Vec<f64> = (0..50).map(|_| rng.random_range(-0.2..0.2)).collect();
        let embeddings: Vec<Vec<f64>> = (0..50)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let mut scene = line_scene(&positions, embeddings);
        for p in scene.primitives.iter_mut() {
            p.position.y = rng.random_range(-0.2..0.2);
        }
        let graph = build_neighbor_graph(&scene, 1e-2).unwrap();
        assert!(graph.num_edges() > 0);
        let (_, grad) = regularization_3d(&scene, &graph, Channel::Instance);

        let step = 1e-3;
        for i in 0..50 {
            for k in 0..2 {
                let orig = scene.primitives[i].instance_embedding[k];
                scene.primitives[i].instance_embedding[k] = orig + step;
                let plus = regularization_3d(&scene, &graph, Channel::Instance).0;
                scene.primitives[i].instance_embedding[k] = orig - step;
                let minus = regularization_3d(&scene, &graph, Channel::Instance).0;
                scene.primitives[i].instance_embedding[k] = orig;
                let fd = (plus - minus) / (2.0 * step);
                let an = grad[i * 2 + k];
                let denom = fd.abs().max(an.abs()).max(1e-8);
                assert!(
                    (fd - an).abs() / denom <= 1e-4,
                    "prim {i} coord {k}: fd {fd} vs analytic {an}"
                );
            }
        }
    }

    #[test]
    fn losses_bit_identical_under_relabeling() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let labels: Vec<u32> = (0..64).map(|_| rng.random_range(0..4)).collect();
        // bijective relabeling 1->9, 2->4, 3->1000000
        let relabel = |l: u32| match l {
            0 => 0,
            1 => 9,
            2 => 4,
            3 => 1_000_000,
            _ => unreachable!(),
        };
        let mask_a = LabelMap::new(8, 8, LabelKind::Instance, labels.clone());
        let mask_b = LabelMap::new(
            8,
            8,
            LabelKind::Instance,
            labels.iter().map(|&l| relabel(l)).collect(),
        );
        let part_a = partition_from_mask(&mask_a);
        let part_b = partition_from_mask(&mask_b);
        let values: Vec<f64> = (0..64 * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let map = raw_map(8, 8, 3, values);

        let (la, ga) = cluster_loss(&map, &part_a);
        let (lb, gb) = cluster_loss(&map, &part_b);
        assert_eq!(la.to_bits(), lb.to_bits());
        assert_eq!(ga, gb);

        let batch_a = mine_triplets(&map, &part_a, 40, 5);
        let batch_b = mine_triplets(&map, &part_b, 40, 5);
        assert_eq!(batch_a, batch_b);
        let proj = LinearProjection::identity(3);
        let (ta, tga, twa) = triplet_loss(&map, &batch_a, &proj);
        let (tb, tgb, twb) = triplet_loss(&map, &batch_b, &proj);
        assert_eq!(ta.to_bits(), tb.to_bits());
        assert_eq!(tga, tgb);
        assert_eq!(twa, twb);
    }
}
