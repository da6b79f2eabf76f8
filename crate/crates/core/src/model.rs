//! Shared domain types: scenes of Gaussian primitives with learnable
//! embeddings, cameras, label maps, rendered embedding maps, and mask
//! partitions.
//!
//! All types are immutable value types once constructed; the trainer is the
//! only mutator and owns its state exclusively.

use nalgebra::{Matrix3, Matrix4, Quaternion, Vector2, Vector3};

/// Reserved background label; excluded from losses and metric matching.
pub const BACKGROUND: u32 = 0;

/// Largest allowed label value (must fit a signed 32-bit range).
pub const MAX_LABEL: u32 = i32::MAX as u32;

/// One 3D Gaussian: fixed geometry/appearance plus learnable instance and
/// semantic embedding vectors.
#[derive(Debug, Clone)]
pub struct GaussianPrimitive {
    /// World-space mean.
    pub position: Vector3<f64>,
    /// Per-axis standard deviations, strictly positive.
    pub scale: Vector3<f64>,
    /// Unit quaternion (w, i, j, k).
    pub rotation: Quaternion<f64>,
    /// Base opacity in [0, 1].
    pub opacity: f64,
    /// RGB in [0, 1].
    pub color: [f64; 3],
    /// Learnable instance embedding, length = scene embedding_dim.
    pub instance_embedding: Vec<f64>,
    /// Learnable semantic embedding, length = scene semantic_dim.
    pub semantic_embedding: Vec<f64>,
}

/// Axis-aligned bounding box in world units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub primitives: Vec<GaussianPrimitive>,
    pub embedding_dim: usize,
    pub semantic_dim: usize,
    pub bound: Aabb,
}

/// Pose plus pinhole intrinsics. Pixel (row r, col c) samples the image plane
/// at (x = c, y = r); x = fx * X/Z + cx with X right, Y down, Z forward.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub world_to_camera: Matrix4<f64>,
    pub focal: Vector2<f64>,
    pub principal_point: Vector2<f64>,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn rotation(&self) -> Matrix3<f64> {
        self.world_to_camera.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.world_to_camera.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Rigid camera looking from `eye` toward `target` with `up` roughly up.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: Vector2<f64>,
        principal_point: Vector2<f64>,
        width: usize,
        height: usize,
    ) -> Camera {
        let z = (target - eye).normalize();
        let x = z.cross(&up).normalize();
        let y = z.cross(&x);
        let mut m = Matrix4::identity();
        for i in 0..3 {
            m[(0, i)] = x[i];
            m[(1, i)] = y[i];
            m[(2, i)] = z[i];
        }
        let t = Vector3::new(-x.dot(&eye), -y.dot(&eye), -z.dot(&eye));
        for i in 0..3 {
            m[(i, 3)] = t[i];
        }
        Camera {
            world_to_camera: m,
            focal,
            principal_point,
            width,
            height,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(crate::Error::config("camera has zero-area image"));
        }
        let r = self.rotation();
        let err = (r.transpose() * r - Matrix3::identity()).norm();
        if err > 1e-6 {
            return Err(crate::Error::config(format!(
                "camera rotation block not orthonormal (deviation {err:.2e})"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    Instance,
    Semantic,
}

/// Per-view H x W integer segmentation mask. Label 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub kind: LabelKind,
    pub labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, kind: LabelKind, labels: Vec<u32>) -> LabelMap {
        assert_eq!(labels.len(), width * height, "label buffer size mismatch");
        LabelMap {
            width,
            height,
            kind,
            labels,
        }
    }

    pub fn filled(width: usize, height: usize, kind: LabelKind, label: u32) -> LabelMap {
        LabelMap::new(width, height, kind, vec![label; width * height])
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    /// Nearest-neighbor resample to a new size.
    pub fn resample(&self, width: usize, height: usize) -> LabelMap {
        let mut labels = Vec::with_capacity(width * height);
        for r in 0..height {
            let sr = r * self.height / height;
            for c in 0..width {
                let sc = c * self.width / width;
                labels.push(self.get(sr, sc));
            }
        }
        LabelMap::new(width, height, self.kind, labels)
    }
}

/// Rendered H x W x d embedding field plus the per-pixel blend weights
/// needed by the backward pass. Blend entries are stored CSR-style in
/// row-major pixel order.
#[derive(Debug, Clone)]
pub struct EmbeddingMap {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub num_primitives: usize,
    /// H*W*d values, row-major, d fastest.
    pub values: Vec<f64>,
    /// H*W accumulated opacity in [0, 1]; equals the sum of blend weights.
    pub coverage: Vec<f64>,
    /// Offsets into `blend_primitives` / `blend_weights`, length H*W + 1.
    pub blend_offsets: Vec<usize>,
    pub blend_primitives: Vec<u32>,
    pub blend_weights: Vec<f64>,
}

impl EmbeddingMap {
    pub fn zeros(width: usize, height: usize, dim: usize, num_primitives: usize) -> EmbeddingMap {
        EmbeddingMap {
            width,
            height,
            dim,
            num_primitives,
            values: vec![0.0; width * height * dim],
            coverage: vec![0.0; width * height],
            blend_offsets: vec![0; width * height + 1],
            blend_primitives: Vec::new(),
            blend_weights: Vec::new(),
        }
    }

    #[inline]
    pub fn pixel(&self, idx: usize) -> &[f64] {
        &self.values[idx * self.dim..(idx + 1) * self.dim]
    }

    #[inline]
    pub fn blend(&self, idx: usize) -> impl Iterator<Item = (u32, f64)> + '_ {
        let lo = self.blend_offsets[idx];
        let hi = self.blend_offsets[idx + 1];
        self.blend_primitives[lo..hi]
            .iter()
            .copied()
            .zip(self.blend_weights[lo..hi].iter().copied())
    }

    /// Max |sum of blend weights - coverage| over pixels; the render contract
    /// keeps this at 0 exactly, and 1e-6 is the documented tolerance.
    pub fn blend_consistency_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for idx in 0..self.width * self.height {
            let sum: f64 = self.blend(idx).map(|(_, w)| w).sum();
            worst = worst.max((sum - self.coverage[idx]).abs());
        }
        worst
    }
}

/// One segment of a mask partition: its pixels and the subset lying on the
/// segment boundary (4-connectivity), both in row-major scan order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub label: u32,
    pub pixels: Vec<u32>,
    pub boundary: Vec<u32>,
}

/// Disjoint segments of non-background pixels. Segments are ordered by first
/// occurrence in scan order, which makes the partition identical under any
/// bijective relabeling of the mask values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub width: usize,
    pub height: usize,
    pub segments: Vec<Segment>,
}

impl Partition {
    pub fn total_pixels(&self) -> usize {
        self.segments.iter().map(|s| s.pixels.len()).sum()
    }

    /// Reconstruct the label map this partition was built from (background 0
    /// everywhere outside the segments).
    pub fn to_mask(&self, kind: LabelKind) -> LabelMap {
        let mut labels = vec![BACKGROUND; self.width * self.height];
        for seg in &self.segments {
            for &p in &seg.pixels {
                labels[p as usize] = seg.label;
            }
        }
        LabelMap::new(self.width, self.height, kind, labels)
    }
}

/// Check every scene invariant, returning one human-readable violation per
/// failure (empty list means the scene is valid). Diagnostics, never panics.
pub fn validate_scene(scene: &Scene) -> Vec<String> {
    let mut out = Vec::new();
    if scene.primitives.is_empty() {
        out.push("scene has no primitives".to_string());
    }
    if scene.embedding_dim == 0 {
        out.push("embedding_dim must be positive".to_string());
    }
    if scene.semantic_dim == 0 {
        out.push("semantic_dim must be positive".to_string());
    }
    for i in 0..3 {
        if scene.bound.min[i] > scene.bound.max[i] {
            out.push(format!("bound min exceeds max on axis {i}"));
        }
    }
    for (i, p) in scene.primitives.iter().enumerate() {
        if !scene.bound.contains(&p.position) {
            out.push(format!("primitive {i}: position outside scene bound"));
        }
        let norm = p.rotation.norm();
        if (norm - 1.0).abs() > 1e-6 {
            out.push(format!(
                "primitive {i}: rotation norm {norm} not unit within 1e-6"
            ));
        }
        if !(p.scale.x > 0.0 && p.scale.y > 0.0 && p.scale.z > 0.0) {
            out.push(format!("primitive {i}: scale components must be > 0"));
        }
        if !(0.0..=1.0).contains(&p.opacity) {
            out.push(format!(
                "primitive {i}: opacity {} outside [0, 1]",
                p.opacity
            ));
        }
        if p.instance_embedding.len() != scene.embedding_dim {
            out.push(format!(
                "primitive {i}: instance embedding length {} != embedding_dim {}",
                p.instance_embedding.len(),
                scene.embedding_dim
            ));
        }
        if p.semantic_embedding.len() != scene.semantic_dim {
            out.push(format!(
                "primitive {i}: semantic embedding length {} != semantic_dim {}",
                p.semantic_embedding.len(),
                scene.semantic_dim
            ));
        }
    }
    out
}

/// Split a mask into one segment per distinct non-background label, with
/// boundary pixels detected by 4-connectivity (a pixel is boundary iff some
/// 4-neighbor inside the image carries a different label).
pub fn partition_from_mask(mask: &LabelMap) -> Partition {
    let (w, h) = (mask.width, mask.height);
    let mut index_of = std::collections::HashMap::new();
    let mut segments: Vec<Segment> = Vec::new();
    for (idx, &label) in mask.labels.iter().enumerate() {
        if label == BACKGROUND {
            continue;
        }
        let seg = *index_of.entry(label).or_insert_with(|| {
            segments.push(Segment {
                label,
                pixels: Vec::new(),
                boundary: Vec::new(),
            });
            segments.len() - 1
        });
        segments[seg].pixels.push(idx as u32);
    }
    for seg in &mut segments {
        for &p in &seg.pixels {
            let idx = p as usize;
            let (r, c) = (idx / w, idx % w);
            let label = mask.labels[idx];
            let differs = (r > 0 && mask.get(r - 1, c) != label)
                || (r + 1 < h && mask.get(r + 1, c) != label)
                || (c > 0 && mask.get(r, c - 1) != label)
                || (c + 1 < w && mask.get(r, c + 1) != label);
            if differs {
                seg.boundary.push(p);
            }
        }
    }
    Partition {
        width: w,
        height: h,
        segments,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_scene() -> Scene {
        Scene {
            primitives: vec![GaussianPrimitive {
                position: Vector3::new(0.0, 0.0, 0.0),
                scale: Vector3::new(0.1, 0.1, 0.1),
                rotation: Quaternion::new(1.0, 0.0, 0.0, 0.0),
                opacity: 0.5,
                color: [0.2, 0.4, 0.6],
                instance_embedding: vec![0.0; 4],
                semantic_embedding: vec![0.0; 4],
            }],
            embedding_dim: 4,
            semantic_dim: 4,
            bound: Aabb {
                min: Vector3::new(-1.0, -1.0, -1.0),
                max: Vector3::new(1.0, 1.0, 1.0),
            },
        }
    }

    #[test]
    fn validate_accepts_well_formed_scene() {
        assert!(validate_scene(&unit_scene()).is_empty());
    }

    #[test]
    fn validate_flags_opacity_out_of_range() {
        let mut scene = unit_scene();
        scene.primitives[0].opacity = 1.5;
        let violations = validate_scene(&scene);
        assert_eq!(violations.len(), 1);
        assert!(violations[0].contains("primitive 0"));
        assert!(violations[0].contains("opacity"));
    }

    #[test]
    fn validate_flags_non_unit_rotation() {
        let mut scene = unit_scene();
        scene.primitives[0].rotation = Quaternion::new(0.9, 0.0, 0.0, 0.0);
        let violations = validate_scene(&scene);
        assert_eq!(violations.len(), 1);
        assert!(violations[0].contains("rotation norm"));
    }

    #[test]
    fn partition_two_by_two_two_segments() {
        let mask = LabelMap::new(2, 2, LabelKind::Instance, vec![1, 1, 2, 2]);
        let part = partition_from_mask(&mask);
        assert_eq!(part.segments.len(), 2);
        assert_eq!(part.segments[0].pixels, vec![0, 1]);
        assert_eq!(part.segments[1].pixels, vec![2, 3]);
        // every pixel touches the other row's label, so all four are boundary
        assert_eq!(part.segments[0].boundary, vec![0, 1]);
        assert_eq!(part.segments[1].boundary, vec![2, 3]);
    }

    #[test]
    fn partition_uniform_mask_has_empty_boundary() {
        let mask = LabelMap::filled(4, 3, LabelKind::Instance, 1);
        let part = partition_from_mask(&mask);
        assert_eq!(part.segments.len(), 1);
        assert_eq!(part.segments[0].pixels.len(), 12);
        assert!(part.segments[0].boundary.is_empty());
    }

    #[test]
    fn partition_background_only_is_empty() {
        let mask = LabelMap::filled(3, 3, LabelKind::Instance, BACKGROUND);
        let part = partition_from_mask(&mask);
        assert!(part.segments.is_empty());
    }

    proptest! {
        #[test]
        fn partition_round_trips_mask(labels in proptest::collection::vec(0u32..5, 36)) {
            let mask = LabelMap::new(6, 6, LabelKind::Instance, labels);
            let part = partition_from_mask(&mask);
            prop_assert_eq!(part.to_mask(LabelKind::Instance), mask);
        }

        #[test]
        fn boundary_invariant_under_relabeling(labels in proptest::collection::vec(0u32..5, 36)) {
            let mask = LabelMap::new(6, 6, LabelKind::Instance, labels.clone());
            // bijective relabeling of non-background values
            let relabeled: Vec<u32> = labels.iter().map(|&l| if l == 0 { 0 } else { 6 - l }).collect();
            let mask2 = LabelMap::new(6, 6, LabelKind::Instance, relabeled);
            let p1 = partition_from_mask(&mask);
            let p2 = partition_from_mask(&mask2);
            prop_assert_eq!(p1.segments.len(), p2.segments.len());
            for (a, b) in p1.segments.iter().zip(p2.segments.iter()) {
                prop_assert_eq!(&a.pixels, &b.pixels);
                prop_assert_eq!(&a.boundary, &b.boundary);
            }
        }
    }
}
