//! Perspective projection of 3D Gaussians to screen-space splats and
//! front-to-back alpha blending of colors and embeddings, with the analytic
//! backward pass for the embedding channel.
//!
//! The blend is linear in the per-primitive vectors, so the backward pass is
//! a weighted scatter of pixel gradients using the blend weights recorded
//! during the forward pass. Geometry, opacity, and color receive no
//! gradients; they are fixed inputs here.

use nalgebra::{Matrix2, Matrix3, UnitQuaternion, Vector2};

use crate::model::{Camera, EmbeddingMap, Scene};
use crate::parallel::{map_rows, map_rows_seq};
use crate::{Error, Result};

/// Splats closer than this camera-space depth are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Diagonal 2D covariance regularizer, px^2.
const COV_REGULARIZER: f64 = 0.3;
/// Elliptical footprint cutoff in standard deviations.
const FOOTPRINT_SIGMA: f64 = 3.0;
/// Blending stops once transmittance falls below this.
const MIN_TRANSMITTANCE: f64 = 1e-4;

/// Which per-primitive vector gets blended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    /// RGB, treated as a d = 3 embedding.
    Color,
    Instance,
    Semantic,
}

/// One projected Gaussian.
#[derive(Debug, Clone)]
pub struct Splat2D {
    /// Projected center in pixel coordinates.
    pub center: Vector2<f64>,
    /// 2D covariance (regularized, positive definite), px^2.
    pub cov2d: Matrix2<f64>,
    /// Camera-space depth.
    pub depth: f64,
    pub primitive_index: usize,
    pub base_opacity: f64,
}

/// Project all primitives in front of the near plane into screen-space
/// splats, sorted ascending by depth (ties broken by primitive index).
/// Splats whose 3-sigma footprint misses the image entirely are dropped.
pub fn project(scene: &Scene, camera: &Camera) -> Vec<Splat2D> {
    let rot_wc = camera.rotation();
    let t_wc = camera.translation();
    let (fx, fy) = (camera.focal.x, camera.focal.y);
    let (cx, cy) = (camera.principal_point.x, camera.principal_point.y);

    let mut splats = Vec::with_capacity(scene.primitives.len());
    for (i, prim) in scene.primitives.iter().enumerate() {
        let p_cam = rot_wc * prim.position + t_wc;
        let z = p_cam.z;
        if z <= NEAR_PLANE {
            continue;
        }
        let center = Vector2::new(fx * p_cam.x / z + cx, fy * p_cam.y / z + cy);

        let rot = UnitQuaternion::from_quaternion(prim.rotation)
            .to_rotation_matrix()
            .into_inner();
        let scaled = rot * Matrix3::from_diagonal(&prim.scale);
        let sigma = scaled * scaled.transpose();

        // 2x3 perspective Jacobian times the camera rotation.
        let z2 = z * z;
        let j = nalgebra::Matrix2x3::new(
            fx / z,
            0.0,
            -fx * p_cam.x / z2,
            0.0,
            fy / z,
            -fy * p_cam.y / z2,
        );
        let a = j * rot_wc;
        let mut cov2d = a * sigma * a.transpose();
        cov2d[(0, 0)] += COV_REGULARIZER;
        cov2d[(1, 1)] += COV_REGULARIZER;

        let rx = FOOTPRINT_SIGMA * cov2d[(0, 0)].sqrt();
        let ry = FOOTPRINT_SIGMA * cov2d[(1, 1)].sqrt();
        let w = camera.width as f64;
        let h = camera.height as f64;
        if center.x + rx < 0.0 || center.x - rx > w - 1.0 || center.y + ry < 0.0 || center.y - ry > h - 1.0
        {
            continue;
        }

        splats.push(Splat2D {
            center,
            cov2d,
            depth: z,
            primitive_index: i,
            base_opacity: prim.opacity,
        });
    }
    splats.sort_by(|a, b| {
        a.depth
            .total_cmp(&b.depth)
            .then(a.primitive_index.cmp(&b.primitive_index))
    });
    splats
}

// Precomputed per-splat state for the pixel loop.
struct PreparedSplat {
    cx: f64,
    cy: f64,
    // inverse covariance entries (symmetric)
    ia: f64,
    ib: f64,
    ic: f64,
    alpha: f64,
    prim: u32,
    col_lo: usize,
    col_hi: usize,
}

struct RowOutput {
    values: Vec<f64>,
    coverage: Vec<f64>,
    counts: Vec<u32>,
    prims: Vec<u32>,
    weights: Vec<f64>,
}

fn prepare(splats: &[Splat2D], width: usize, height: usize) -> (Vec<PreparedSplat>, Vec<Vec<u32>>) {
    let mut prepared = Vec::with_capacity(splats.len());
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); height];
    for splat in splats {
        let det = splat.cov2d[(0, 0)] * splat.cov2d[(1, 1)] - splat.cov2d[(0, 1)] * splat.cov2d[(1, 0)];
        debug_assert!(det > 0.0, "regularized cov2d must be positive definite");
        let inv_det = 1.0 / det;
        let rx = FOOTPRINT_SIGMA * splat.cov2d[(0, 0)].sqrt();
        let ry = FOOTPRINT_SIGMA * splat.cov2d[(1, 1)].sqrt();
        let col_lo = (splat.center.x - rx).ceil().max(0.0) as usize;
        let col_hi = ((splat.center.x + rx).floor().min(width as f64 - 1.0)) as usize;
        let row_lo = (splat.center.y - ry).ceil().max(0.0) as usize;
        let row_hi = ((splat.center.y + ry).floor().min(height as f64 - 1.0)) as usize;
        if col_lo > col_hi || row_lo > row_hi {
            continue;
        }
        let idx = prepared.len() as u32;
        // splats were depth-sorted, so each row list stays depth-ordered
        for r in row_lo..=row_hi {
            rows[r].push(idx);
        }
        prepared.push(PreparedSplat {
            cx: splat.center.x,
            cy: splat.center.y,
            ia: splat.cov2d[(1, 1)] * inv_det,
            ib: -splat.cov2d[(0, 1)] * inv_det,
            ic: splat.cov2d[(0, 0)] * inv_det,
            alpha: splat.base_opacity,
            prim: splat.primitive_index as u32,
            col_lo,
            col_hi,
        });
    }
    (prepared, rows)
}

fn render_row(
    r: usize,
    width: usize,
    dim: usize,
    prepared: &[PreparedSplat],
    row_splats: &[u32],
    flat: &[f64],
) -> RowOutput {
    let mut out = RowOutput {
        values: vec![0.0; width * dim],
        coverage: vec![0.0; width],
        counts: vec![0; width],
        prims: Vec::new(),
        weights: Vec::new(),
    };
    let y = r as f64;
    for c in 0..width {
        let x = c as f64;
        let mut transmittance = 1.0f64;
        let mut covered = 0.0f64;
        let mut count = 0u32;
        for &si in row_splats {
            let s = &prepared[si as usize];
            if c < s.col_lo || c > s.col_hi {
                continue;
            }
            let dx = x - s.cx;
            let dy = y - s.cy;
            let power = 0.5 * (s.ia * dx * dx + 2.0 * s.ib * dx * dy + s.ic * dy * dy);
            if power > 0.5 * FOOTPRINT_SIGMA * FOOTPRINT_SIGMA {
                continue;
            }
            let alpha = s.alpha * (-power).exp();
            let weight = alpha * transmittance;
            if weight > 0.0 {
                let base = s.prim as usize * dim;
                let v = &flat[base..base + dim];
                let dst = &mut out.values[c * dim..(c + 1) * dim];
                for k in 0..dim {
                    dst[k] += weight * v[k];
                }
                covered += weight;
                out.prims.push(s.prim);
                out.weights.push(weight);
                count += 1;
            }
            transmittance *= 1.0 - alpha;
            if transmittance < MIN_TRANSMITTANCE {
                break;
            }
        }
        out.coverage[c] = covered;
        out.counts[c] = count;
    }
    out
}

fn assemble(
    scene: &Scene,
    camera: &Camera,
    dim: usize,
    rows_out: Vec<RowOutput>,
) -> EmbeddingMap {
    let (w, h) = (camera.width, camera.height);
    let mut map = EmbeddingMap::zeros(w, h, dim, scene.primitives.len());
    map.values.clear();
    map.coverage.clear();
    let mut offset = 0usize;
    let mut offsets = Vec::with_capacity(w * h + 1);
    let mut prims = Vec::new();
    let mut weights = Vec::new();
    for row in rows_out {
        map.values.extend_from_slice(&row.values);
        map.coverage.extend_from_slice(&row.coverage);
        for &n in &row.counts {
            offsets.push(offset);
            offset += n as usize;
        }
        prims.extend_from_slice(&row.prims);
        weights.extend_from_slice(&row.weights);
    }
    offsets.push(offset);
    map.blend_offsets = offsets;
    map.blend_primitives = prims;
    map.blend_weights = weights;
    map
}

fn channel_data(scene: &Scene, channel: Channel) -> (usize, Vec<f64>) {
    match channel {
        Channel::Color => {
            let mut flat = Vec::with_capacity(scene.primitives.len() * 3);
            for p in &scene.primitives {
                flat.extend_from_slice(&p.color);
            }
            (3, flat)
        }
        Channel::Instance => {
            let d = scene.embedding_dim;
            let mut flat = Vec::with_capacity(scene.primitives.len() * d);
            for p in &scene.primitives {
                flat.extend_from_slice(&p.instance_embedding);
            }
            (d, flat)
        }
        Channel::Semantic => {
            let d = scene.semantic_dim;
            let mut flat = Vec::with_capacity(scene.primitives.len() * d);
            for p in &scene.primitives {
                flat.extend_from_slice(&p.semantic_embedding);
            }
            (d, flat)
        }
    }
}

fn render_impl(scene: &Scene, camera: &Camera, channel: Channel, sequential: bool) -> EmbeddingMap {
    let (dim, flat) = channel_data(scene, channel);
    let splats = project(scene, camera);
    let (prepared, rows) = prepare(&splats, camera.width, camera.height);
    let flat_ref = &flat;
    let prepared_ref = &prepared;
    let rows_ref = &rows;
    let run =
        |r: usize| render_row(r, camera.width, dim, prepared_ref, &rows_ref[r], flat_ref);
    let rows_out = if sequential {
        map_rows_seq(camera.height, run)
    } else {
        map_rows(camera.height, run)
    };
    assemble(scene, camera, dim, rows_out)
}

/// Render one channel of the scene: per pixel, front-to-back blending
/// `sum_i v_i a'_i prod_{j<i} (1 - a'_j)` with
/// `a'_i = opacity_i * exp(-0.5 d^T cov2d^-1 d)`. Pixels covered by no splat
/// get zero values and zero coverage.
pub fn render(scene: &Scene, camera: &Camera, channel: Channel) -> EmbeddingMap {
    render_impl(scene, camera, channel, false)
}

/// Sequential render path (same output bit-for-bit; kept for benchmarks).
pub fn render_sequential(scene: &Scene, camera: &Camera, channel: Channel) -> EmbeddingMap {
    render_impl(scene, camera, channel, true)
}

fn backward_impl(map: &EmbeddingMap, pixel_grad: &[f64], sequential: bool) -> Result<Vec<f64>> {
    let d = map.dim;
    let expected = map.width * map.height * d;
    if pixel_grad.len() != expected {
        return Err(Error::Shape(format!(
            "pixel gradient has {} values, map needs {}",
            pixel_grad.len(),
            expected
        )));
    }
    let n = map.num_primitives;
    let run = |r: usize| {
        let mut partial = vec![0.0f64; n * d];
        for c in 0..map.width {
            let idx = r * map.width + c;
            let g = &pixel_grad[idx * d..(idx + 1) * d];
            for (prim, w) in map.blend(idx) {
                let dst = &mut partial[prim as usize * d..(prim as usize + 1) * d];
                for k in 0..d {
                    dst[k] += w * g[k];
                }
            }
        }
        partial
    };
    let partials = if sequential {
        map_rows_seq(map.height, run)
    } else {
        map_rows(map.height, run)
    };
    let mut grad = vec![0.0f64; n * d];
    for partial in partials {
        for (dst, src) in grad.iter_mut().zip(partial.iter()) {
            *dst += src;
        }
    }
    Ok(grad)
}

/// Gradient of a scalar loss w.r.t. each primitive's blended vector, given
/// the per-pixel loss gradient: the blend is linear, so each primitive
/// accumulates `weight * pixel_grad` over the pixels it contributed to.
/// Primitives with no coverage get a zero gradient.
pub fn backward_embeddings(map: &EmbeddingMap, pixel_grad: &[f64]) -> Result<Vec<f64>> {
    backward_impl(map, pixel_grad, false)
}

/// Sequential backward path (same output bit-for-bit; kept for benchmarks).
pub fn backward_embeddings_sequential(map: &EmbeddingMap, pixel_grad: &[f64]) -> Result<Vec<f64>> {
    backward_impl(map, pixel_grad, true)
}
