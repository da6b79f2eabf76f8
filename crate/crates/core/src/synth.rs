//! Synthetic scene generator: compact Gaussian blob objects, a camera ring,
//! exact per-view ground-truth masks rasterized from per-object blend-weight
//! mass, and simulated label inconsistency via per-view random permutation
//! of instance ids.
//!
//! Objects use many strongly overlapping low-opacity primitives so that each
//! covered pixel blends a wide set of the object's primitives; that is what
//! real 3DGS reconstructions look like after densification, and it keeps GT
//! masks and decoded labels comparable at object rims.

use nalgebra::{Quaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::codec::COVERAGE_GATE;
use crate::model::{
    Aabb, Camera, GaussianPrimitive, LabelKind, LabelMap, Scene, BACKGROUND,
};
use crate::raster::{render, Channel};
use crate::{Error, Result};

/// How instance masks are corrupted across views.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Inconsistency {
    /// Masks keep the consistent ground-truth ids.
    None,
    /// Each view's instance ids go through an independent random permutation.
    PermutePerView,
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub num_objects: usize,
    pub primitives_per_object: usize,
    pub num_classes: usize,
    pub num_views: usize,
    /// (height, width)
    pub image_size: (usize, usize),
    pub camera_radius: f64,
    pub rng_seed: u64,
    pub inconsistency: Inconsistency,
    pub embedding_dim: usize,
    pub semantic_dim: usize,
}

impl Default for SynthSpec {
    fn default() -> SynthSpec {
        SynthSpec {
            num_objects: 8,
            primitives_per_object: 48,
            num_classes: 3,
            num_views: 25,
            image_size: (128, 128),
            camera_radius: 4.0,
            rng_seed: 7,
            inconsistency: Inconsistency::PermutePerView,
            embedding_dim: 12,
            semantic_dim: 8,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_objects == 0 {
            return Err(Error::config("need at least one object"));
        }
        if self.num_classes == 0 || self.num_classes > self.num_objects {
            return Err(Error::config(
                "num_classes must be in 1..=num_objects",
            ));
        }
        if self.num_views == 0 {
            return Err(Error::config("need at least one view"));
        }
        if self.primitives_per_object == 0 {
            return Err(Error::config("need at least one primitive per object"));
        }
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return Err(Error::config("image size must be positive"));
        }
        let d = self.embedding_dim;
        if d == 0 || d > crate::codec::MAX_DECODE_DIM {
            return Err(Error::config(format!(
                "embedding dim {d} outside 1..={}",
                crate::codec::MAX_DECODE_DIM
            )));
        }
        if self.semantic_dim == 0 || self.semantic_dim > crate::codec::MAX_DECODE_DIM {
            return Err(Error::config("semantic dim outside decodable range"));
        }
        // decoder capacity: n distinct non-zero codes require n < 2^d
        let capacity = 1u64 << d.min(63);
        if self.num_objects as u64 >= capacity {
            return Err(Error::config(format!(
                "{} objects exceed decoder capacity 2^{d} = {capacity} codes",
                self.num_objects
            )));
        }
        let class_capacity = 1u64 << self.semantic_dim.min(63);
        if self.num_classes as u64 >= class_capacity {
            return Err(Error::config("num_classes exceeds semantic decoder capacity"));
        }
        Ok(())
    }
}

/// Generated scene plus per-view ground truth.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub scene: Scene,
    pub cameras: Vec<Camera>,
    /// Consistent ground-truth instance masks (ids 1..=num_objects).
    pub gt_instance: Vec<LabelMap>,
    /// Ground-truth semantic masks derived through the object->class table.
    pub gt_semantic: Vec<LabelMap>,
    /// Training instance masks; equal to gt_instance unless permuted.
    pub train_instance: Vec<LabelMap>,
    /// Per-view permutation tables (diagnostics only), one entry per object.
    pub permutations: Vec<Vec<u32>>,
    /// Class id (1..=num_classes) per object index.
    pub object_class: Vec<u32>,
    /// Index of the primitive range per object: object i owns
    /// primitives [i * primitives_per_object, (i+1) * primitives_per_object).
    pub primitives_per_object: usize,
}

// Blob geometry: primitive centers cluster tightly while the splat footprint
// is broad, so every covered pixel averages most of the object's primitives.
// Blob geometry: primitive centers cluster far inside the shared splat
// footprint and opacity is low, so every covered pixel blends the whole
// object with a nearly identical weight profile. Pixel-to-pixel profile
// variation is what turns embedding spread into decode noise; keeping the
// profile uniform is what makes the low-rate training budget sufficient.
const BLOB_SIGMA: f64 = 0.008;
const SPLAT_SCALE: f64 = 0.20;
// Per-primitive opacity is chosen so the whole object reaches this optical
// depth: the coverage gate then lands where the object's own Gaussian still
// dominates, and every covered pixel blends all of its primitives.
const OBJECT_OPTICAL_DEPTH: f64 = 0.816;
const CENTER_MIN_SEPARATION: f64 = 1.05;
const CENTER_BOX: f64 = 1.3;
const CENTER_BOX_Z: f64 = 0.05;
const MAX_REJECTION_ATTEMPTS: usize = 10_000;

#[inline]
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn sample_centers(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Vector3<f64>>> {
    let mut centers: Vec<Vector3<f64>> = Vec::with_capacity(spec.num_objects);
    let mut attempts = 0;
    let mut since_progress = 0;
    while centers.len() < spec.num_objects {
        attempts += 1;
        if attempts > MAX_REJECTION_ATTEMPTS {
            return Err(Error::config(format!(
                "could not place {} objects with separation {CENTER_MIN_SEPARATION} after {MAX_REJECTION_ATTEMPTS} attempts",
                spec.num_objects
            )));
        }
        // a bad partial layout can leave no room; restart it
        since_progress += 1;
        if since_progress > 150 {
            centers.clear();
            since_progress = 0;
        }
        let candidate = Vector3::new(
            rng.random_range(-CENTER_BOX..CENTER_BOX),
            rng.random_range(-CENTER_BOX..CENTER_BOX),
            rng.random_range(-CENTER_BOX_Z..CENTER_BOX_Z),
        );
        if centers
            .iter()
            .all(|c| (c - candidate).norm() >= CENTER_MIN_SEPARATION)
        {
            centers.push(candidate);
            since_progress = 0;
        }
    }
    Ok(centers)
}

fn class_palette(class: u32) -> [f64; 3] {
    // distinct hues per class; exact values are cosmetic
    let golden = 0.618_033_988_749_895;
    let h = (class as f64 * golden) % 1.0;
    let f = |shift: f64| 0.5 + 0.45 * (std::f64::consts::TAU * (h + shift)).sin();
    [f(0.0), f(1.0 / 3.0), f(2.0 / 3.0)]
}

/// Build the scene, camera ring, and exact GT masks. Deterministic in the
/// spec seed; errors if object placement is infeasible or an object ends up
/// invisible in every view.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let centers = sample_centers(spec, &mut rng)?;
    let object_class: Vec<u32> = (0..spec.num_objects)
        .map(|i| (i % spec.num_classes) as u32 + 1)
        .collect();

    let opacity = (OBJECT_OPTICAL_DEPTH / spec.primitives_per_object as f64).min(0.9);
    let mut primitives = Vec::with_capacity(spec.num_objects * spec.primitives_per_object);
    for (obj, center) in centers.iter().enumerate() {
        let color = class_palette(object_class[obj]);
        for _ in 0..spec.primitives_per_object {
            let offset = Vector3::new(
                BLOB_SIGMA * normal(&mut rng),
                BLOB_SIGMA * normal(&mut rng),
                BLOB_SIGMA * normal(&mut rng),
            );
            let scale_jitter: f64 = rng.random_range(0.99..1.01);
            let q = Quaternion::new(
                normal(&mut rng),
                normal(&mut rng),
                normal(&mut rng),
                normal(&mut rng),
            );
            let q = q / q.norm();
            primitives.push(GaussianPrimitive {
                position: center + offset,
                scale: Vector3::new(
                    SPLAT_SCALE * scale_jitter,
                    SPLAT_SCALE * scale_jitter,
                    SPLAT_SCALE * scale_jitter,
                ),
                rotation: q,
                opacity,
                color: [
                    (color[0] + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0),
                    (color[1] + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0),
                    (color[2] + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0),
                ],
                instance_embedding: (0..spec.embedding_dim)
                    .map(|_| normal(&mut rng))
                    .collect(),
                semantic_embedding: (0..spec.semantic_dim)
                    .map(|_| normal(&mut rng))
                    .collect(),
            });
        }
    }
    let pad = 4.0 * (BLOB_SIGMA + SPLAT_SCALE);
    let mut bound = Aabb {
        min: Vector3::new(f64::MAX, f64::MAX, f64::MAX),
        max: Vector3::new(f64::MIN, f64::MIN, f64::MIN),
    };
    for p in &primitives {
        for i in 0..3 {
            bound.min[i] = bound.min[i].min(p.position[i] - pad);
            bound.max[i] = bound.max[i].max(p.position[i] + pad);
        }
    }
    let scene = Scene {
        primitives,
        embedding_dim: spec.embedding_dim,
        semantic_dim: spec.semantic_dim,
        bound,
    };

    let (h, w) = spec.image_size;
    // cover the center-placement box with margin at ring distance
    let focal = 0.5 * w.min(h) as f64 * spec.camera_radius / (CENTER_BOX + 0.45);
    let cameras: Vec<Camera> = (0..spec.num_views)
        .map(|i| {
            let angle = std::f64::consts::TAU * i as f64 / spec.num_views as f64;
            let height = 4.0 + 0.25 * (2.0 * angle).sin();
            let eye = Vector3::new(
                spec.camera_radius * angle.cos(),
                spec.camera_radius * angle.sin(),
                height,
            );
            Camera::look_at(
                eye,
                Vector3::zeros(),
                Vector3::new(0.0, 0.0, 1.0),
                Vector2::new(focal, focal),
                Vector2::new(w as f64 / 2.0, h as f64 / 2.0),
                w,
                h,
            )
        })
        .collect();

    // GT mask: per-pixel argmax of per-object accumulated blend weight,
    // via a one-hot object-indicator rendered like any other embedding.
    let mut indicator = scene.clone();
    indicator.embedding_dim = spec.num_objects;
    for (i, p) in indicator.primitives.iter_mut().enumerate() {
        let mut hot = vec![0.0; spec.num_objects];
        hot[i / spec.primitives_per_object] = 1.0;
        p.instance_embedding = hot;
    }
    let mut gt_instance = Vec::with_capacity(spec.num_views);
    let mut gt_semantic = Vec::with_capacity(spec.num_views);
    for cam in &cameras {
        let map = render(&indicator, cam, Channel::Instance);
        let mut instance = Vec::with_capacity(w * h);
        let mut semantic = Vec::with_capacity(w * h);
        for idx in 0..w * h {
            if map.coverage[idx] < COVERAGE_GATE {
                instance.push(BACKGROUND);
                semantic.push(BACKGROUND);
                continue;
            }
            let masses = map.pixel(idx);
            let mut best = 0usize;
            for (obj, &m) in masses.iter().enumerate() {
                if m > masses[best] {
                    best = obj;
                }
            }
            instance.push(best as u32 + 1);
            semantic.push(object_class[best]);
        }
        gt_instance.push(LabelMap::new(w, h, LabelKind::Instance, instance));
        gt_semantic.push(LabelMap::new(w, h, LabelKind::Semantic, semantic));
    }

    // visibility check over the union of GT masks
    let mut seen = vec![false; spec.num_objects];
    for mask in &gt_instance {
        for &l in &mask.labels {
            if l != BACKGROUND {
                seen[(l - 1) as usize] = true;
            }
        }
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::config(format!(
            "object {missing} is not visible in any view; adjust the spec"
        )));
    }

    let (train_instance, permutations) = match spec.inconsistency {
        Inconsistency::None => (
            gt_instance.clone(),
            vec![(1..=spec.num_objects as u32).collect(); spec.num_views],
        ),
        Inconsistency::PermutePerView => make_inconsistent(&gt_instance, spec.rng_seed ^ 0x9e37_79b9),
    };

    Ok(SynthOutput {
        scene,
        cameras,
        gt_instance,
        gt_semantic,
        train_instance,
        permutations,
        object_class,
        primitives_per_object: spec.primitives_per_object,
    })
}

/// Remap each view's non-background labels through an independent uniform
/// random permutation of {1..n}; background stays fixed. Returns the permuted
/// masks and the per-view tables (table[i] is the new id of original id i+1).
/// The tables are diagnostics only and never feed training.
pub fn make_inconsistent(masks: &[LabelMap], rng_seed: u64) -> (Vec<LabelMap>, Vec<Vec<u32>>) {
    let n = masks
        .iter()
        .flat_map(|m| m.labels.iter().copied())
        .max()
        .unwrap_or(0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = Vec::with_capacity(masks.len());
    let mut tables = Vec::with_capacity(masks.len());
    for mask in masks {
        let mut table: Vec<u32> = (1..=n as u32).collect();
        // Fisher-Yates
        for i in (1..table.len()).rev() {
            let j = rng.random_range(0..=i);
            table.swap(i, j);
        }
        let labels = mask
            .labels
            .iter()
            .map(|&l| if l == BACKGROUND { BACKGROUND } else { table[(l - 1) as usize] })
            .collect();
        out.push(LabelMap::new(mask.width, mask.height, mask.kind, labels));
        tables.push(table);
    }
    (out, tables)
}
