//! End-to-end training loop: renders embedding maps per view, evaluates the
//! weighted sum of cluster, triplet, and 3D-smoothness losses with the late
//! activation schedule, and updates embeddings and the projection matrices
//! with Adam.
//!
//! Only embeddings and the projections are learnable; geometry, opacity and
//! color are frozen inputs. Runs are fully deterministic given the seed: per
//! iteration the RNG streams are derived from (seed, iteration, channel) and
//! all reductions merge in fixed order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::losses::{
    build_neighbor_graph, cluster_loss, mine_triplets, regularization_3d, triplet_loss,
    LinearProjection, NeighborGraph,
};
use crate::model::{partition_from_mask, Camera, LabelMap, Partition, Scene};
use crate::raster::{backward_embeddings, render, Channel};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub lambda_cluster: f64,
    pub lambda_triplet: f64,
    pub lambda_3d: f64,
    /// Triplet hinge margin (delta).
    pub margin: f64,
    /// Squared-distance threshold for the 3D neighbor graph.
    pub neighbor_threshold: f64,
    /// Iteration at which triplet and 3D losses activate; None = iterations/2.
    pub late_loss_start: Option<usize>,
    pub max_triplets: usize,
    /// Instance embedding dimension; embeddings are re-initialized to this.
    pub embedding_dim: usize,
    pub rng_seed: u64,
    /// Fraction of views that contribute segmentation losses.
    pub mask_fraction: f64,
    /// Mask resolution ablation: masks are resampled down by this factor and
    /// back up before the loss; rendering stays at full resolution.
    pub mask_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            iterations: 3000,
            learning_rate: 1e-4,
            lambda_cluster: 0.1,
            lambda_triplet: 0.1,
            lambda_3d: 0.1,
            margin: 1.0,
            neighbor_threshold: 1e-2,
            late_loss_start: None,
            max_triplets: 3000,
            embedding_dim: 12,
            rng_seed: 7,
            mask_fraction: 1.0,
            mask_scale: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn resolved_late_start(&self) -> usize {
        self.late_loss_start.unwrap_or(self.iterations / 2)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be > 0"));
        }
        if self.lambda_cluster < 0.0 || self.lambda_triplet < 0.0 || self.lambda_3d < 0.0 {
            return Err(Error::config("loss weights must be >= 0"));
        }
        if !(self.neighbor_threshold > 0.0) {
            return Err(Error::config("neighbor threshold must be > 0"));
        }
        if self.iterations > 0 && self.resolved_late_start() >= self.iterations {
            return Err(Error::config(
                "late_loss_start must be smaller than iterations",
            ));
        }
        if !(self.mask_fraction > 0.0 && self.mask_fraction <= 1.0) {
            return Err(Error::config("mask fraction must be in (0, 1]"));
        }
        if ![0.25, 0.5, 1.0].contains(&self.mask_scale) {
            return Err(Error::config("mask scale must be one of 0.25, 0.5, 1"));
        }
        if self.embedding_dim == 0 || self.embedding_dim > crate::codec::MAX_DECODE_DIM {
            return Err(Error::config("embedding dim outside decodable range"));
        }
        Ok(())
    }
}

/// One training view: camera plus instance and semantic masks.
#[derive(Debug, Clone)]
pub struct TrainView {
    pub camera: Camera,
    pub instance_mask: LabelMap,
    pub semantic_mask: LabelMap,
}

/// Per-iteration loss record (raw term values; `total` is the weighted sum
/// actually optimized).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub cluster: f64,
    pub triplet: f64,
    pub reg3d: f64,
    pub total: f64,
}

/// Adam first/second moments for one tensor.
#[derive(Debug, Clone)]
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    fn new(len: usize) -> AdamState {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, t: usize) {
        const BETA1: f64 = 0.9;
        const BETA2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        debug_assert_eq!(params.len(), grad.len());
        debug_assert_eq!(params.len(), self.m.len());
        let bc1 = 1.0 - BETA1.powi(t as i32);
        let bc2 = 1.0 - BETA2.powi(t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
    }
}

/// Mutable training state: the scene with current embeddings, the two
/// projection matrices, Adam accumulators, and the loss history.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub scene: Scene,
    pub proj_instance: LinearProjection,
    pub proj_semantic: LinearProjection,
    pub iteration: usize,
    pub history: Vec<LossRecord>,
    graph: Option<NeighborGraph>,
    adam_instance: AdamState,
    adam_semantic: AdamState,
    adam_proj_instance: AdamState,
    adam_proj_semantic: AdamState,
}

impl TrainState {
    /// Initialize from a scene: instance embeddings are re-drawn from a
    /// standard normal at cfg.embedding_dim (semantic embeddings likewise at
    /// the scene's semantic_dim), and the projections start at identity plus
    /// small noise.
    pub fn new(mut scene: Scene, cfg: &TrainConfig) -> TrainState {
        let d = cfg.embedding_dim;
        let ds = scene.semantic_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed.wrapping_add(1));
        for prim in scene.primitives.iter_mut() {
            prim.instance_embedding = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            prim.semantic_embedding = (0..ds)
                .map(|_| {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    SEMANTIC_INIT_STD * x
                })
                .collect();
        }
        scene.embedding_dim = d;
        let n = scene.primitives.len();
        let mut rng_wi = ChaCha8Rng::seed_from_u64(cfg.rng_seed.wrapping_add(2));
        let mut rng_ws = ChaCha8Rng::seed_from_u64(cfg.rng_seed.wrapping_add(3));
        TrainState {
            proj_instance: LinearProjection::identity_with_noise(d, &mut rng_wi),
            proj_semantic: LinearProjection::identity_with_noise(ds, &mut rng_ws),
            iteration: 0,
            history: Vec::new(),
            graph: None,
            adam_instance: AdamState::new(n * d),
            adam_semantic: AdamState::new(n * ds),
            adam_proj_instance: AdamState::new(d * d),
            adam_proj_semantic: AdamState::new(ds * ds),
            scene,
        }
    }
}

fn check_finite(term: &str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::numerical(term, format!("loss value {value}")))
    }
}

struct ChannelPass {
    cluster: f64,
    triplet: f64,
    reg3d: f64,
    /// Per-primitive gradient, n * d.
    prim_grad: Vec<f64>,
    proj_grad: Vec<f64>,
}

fn channel_pass(
    state: &TrainState,
    camera: &Camera,
    partition: &Partition,
    channel: Channel,
    cfg: &TrainConfig,
    late_active: bool,
    mining_seed: u64,
) -> Result<ChannelPass> {
    let (proj, term_prefix) = match channel {
        Channel::Instance => (&state.proj_instance, "instance"),
        Channel::Semantic => (&state.proj_semantic, "semantic"),
        Channel::Color => unreachable!("color channel is not trained"),
    };
    let map = render(&state.scene, camera, channel);
    let (l_cluster, mut pixel_grad) = cluster_loss(&map, partition);
    check_finite(&format!("{term_prefix} cluster"), l_cluster)?;

    let mut l_triplet = 0.0;
    let mut l_reg = 0.0;
    let mut proj_grad = vec![0.0; proj.dim * proj.dim];
    let mut reg_grad: Option<Vec<f64>> = None;
    if late_active {
        if cfg.lambda_triplet > 0.0 {
            let mut batch = mine_triplets(&map, partition, cfg.max_triplets, mining_seed);
            batch.margin = cfg.margin;
            let (lt, t_pixel_grad, t_proj_grad) = triplet_loss(&map, &batch, proj);
            l_triplet = check_finite(&format!("{term_prefix} triplet"), lt)?;
            for (dst, g) in pixel_grad.iter_mut().zip(t_pixel_grad.iter()) {
                *dst = cfg.lambda_cluster * *dst + cfg.lambda_triplet * g;
            }
            proj_grad = t_proj_grad;
        } else {
            for g in pixel_grad.iter_mut() {
                *g *= cfg.lambda_cluster;
            }
        }
        if cfg.lambda_3d > 0.0 {
            let graph = state
                .graph
                .as_ref()
                .expect("neighbor graph built at late_loss_start");
            let (lr3, g3) = regularization_3d(&state.scene, graph, channel);
            l_reg = check_finite(&format!("{term_prefix} 3d regularization"), lr3)?;
            reg_grad = Some(g3);
        }
    } else {
        for g in pixel_grad.iter_mut() {
            *g *= cfg.lambda_cluster;
        }
    }

    let mut prim_grad = backward_embeddings(&map, &pixel_grad)?;
    if let Some(g3) = reg_grad {
        for (dst, g) in prim_grad.iter_mut().zip(g3.iter()) {
            *dst += cfg.lambda_3d * g;
        }
    }
    for g in proj_grad.iter_mut() {
        *g *= cfg.lambda_triplet;
    }
    Ok(ChannelPass {
        cluster: l_cluster,
        triplet: l_triplet,
        reg3d: l_reg,
        prim_grad,
        proj_grad,
    })
}

/// One optimization step on a single view. Renders both channels, evaluates
/// the scheduled losses, backpropagates through the blend, and applies Adam.
pub fn train_step(state: &mut TrainState, view: &TrainView, cfg: &TrainConfig) -> Result<()> {
    let late_active = state.iteration >= cfg.resolved_late_start();
    if late_active && state.graph.is_none() {
        state.graph = Some(build_neighbor_graph(&state.scene, cfg.neighbor_threshold)?);
    }
    let part_instance = partition_from_mask(&view.instance_mask);
    let part_semantic = partition_from_mask(&view.semantic_mask);

    let seed_base = cfg
        .rng_seed
        .wrapping_mul(0x100_0003)
        .wrapping_add(state.iteration as u64 * 2);
    let pass_i = channel_pass(
        state,
        &view.camera,
        &part_instance,
        Channel::Instance,
        cfg,
        late_active,
        seed_base,
    )?;
    let pass_s = channel_pass(
        state,
        &view.camera,
        &part_semantic,
        Channel::Semantic,
        cfg,
        late_active,
        seed_base.wrapping_add(1),
    )?;

    let t = state.iteration + 1;
    let n = state.scene.primitives.len();
    let d = state.scene.embedding_dim;
    let ds = state.scene.semantic_dim;

    // gather-update-scatter keeps the per-tensor Adam layout flat
    let mut flat_i = vec![0.0; n * d];
    let mut flat_s = vec![0.0; n * ds];
    for (i, prim) in state.scene.primitives.iter().enumerate() {
        flat_i[i * d..(i + 1) * d].copy_from_slice(&prim.instance_embedding);
        flat_s[i * ds..(i + 1) * ds].copy_from_slice(&prim.semantic_embedding);
    }
    state
        .adam_instance
        .step(&mut flat_i, &pass_i.prim_grad, cfg.learning_rate, t);
    state
        .adam_semantic
        .step(&mut flat_s, &pass_s.prim_grad, cfg.learning_rate, t);
    for (i, prim) in state.scene.primitives.iter_mut().enumerate() {
        prim.instance_embedding
            .copy_from_slice(&flat_i[i * d..(i + 1) * d]);
        prim.semantic_embedding
            .copy_from_slice(&flat_s[i * ds..(i + 1) * ds]);
    }
    state.adam_proj_instance.step(
        &mut state.proj_instance.matrix,
        &pass_i.proj_grad,
        cfg.learning_rate,
        t,
    );
    state.adam_proj_semantic.step(
        &mut state.proj_semantic.matrix,
        &pass_s.proj_grad,
        cfg.learning_rate,
        t,
    );

    let cluster = pass_i.cluster + pass_s.cluster;
    let triplet = pass_i.triplet + pass_s.triplet;
    let reg3d = pass_i.reg3d + pass_s.reg3d;
    let total =
        cfg.lambda_cluster * cluster + cfg.lambda_triplet * triplet + cfg.lambda_3d * reg3d;
    check_finite("total", total)?;
    state.history.push(LossRecord {
        iteration: state.iteration,
        cluster,
        triplet,
        reg3d,
        total,
    });
    state.iteration += 1;
    Ok(())
}

/// Output of a full training run.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub scene: Scene,
    pub proj_instance: LinearProjection,
    pub proj_semantic: LinearProjection,
    pub history: Vec<LossRecord>,
    /// Indices of the views that contributed losses (after mask_fraction).
    pub used_views: Vec<usize>,
}

/// Train embeddings against the given mask-bearing views: round-robin with a
/// seeded shuffle each epoch, one view per step.
pub fn train(scene: Scene, views: &[TrainView], cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    if views.is_empty() {
        return Err(Error::config("no view has a mask; nothing to train on"));
    }
    for view in views {
        let (w, h) = (view.camera.width, view.camera.height);
        if view.instance_mask.width != w
            || view.instance_mask.height != h
            || view.semantic_mask.width != w
            || view.semantic_mask.height != h
        {
            return Err(Error::Shape(
                "mask dimensions do not match the camera".into(),
            ));
        }
    }

    // mask_fraction subset, deterministic in the seed
    let mut used_views: Vec<usize> = (0..views.len()).collect();
    if cfg.mask_fraction < 1.0 {
        let keep = ((views.len() as f64 * cfg.mask_fraction).ceil() as usize).max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed.wrapping_add(5));
        for i in 0..keep.min(used_views.len()) {
            let j = rng.random_range(i..used_views.len());
            used_views.swap(i, j);
        }
        used_views.truncate(keep);
        used_views.sort_unstable();
    }

    // mask_scale ablation: degrade label resolution, keep rendering full-res
    let prepared: Vec<TrainView> = used_views
        .iter()
        .map(|&i| {
            let v = &views[i];
            if cfg.mask_scale < 1.0 {
                let (w, h) = (v.camera.width, v.camera.height);
                let sw = ((w as f64 * cfg.mask_scale) as usize).max(1);
                let sh = ((h as f64 * cfg.mask_scale) as usize).max(1);
                TrainView {
                    camera: v.camera.clone(),
                    instance_mask: v.instance_mask.resample(sw, sh).resample(w, h),
                    semantic_mask: v.semantic_mask.resample(sw, sh).resample(w, h),
                }
            } else {
                v.clone()
            }
        })
        .collect();

    let mut state = TrainState::new(scene, cfg);
    let mut epoch_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed.wrapping_add(4));
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    for iter in 0..cfg.iterations {
        let pos = iter % prepared.len();
        if pos == 0 {
            for i in (1..order.len()).rev() {
                let j = epoch_rng.random_range(0..=i);
                order.swap(i, j);
            }
        }
        train_step(&mut state, &prepared[order[pos]], cfg)?;
    }
    Ok(TrainOutput {
        scene: state.scene,
        proj_instance: state.proj_instance,
        proj_semantic: state.proj_semantic,
        history: state.history,
        used_views,
    })
}

/// Result of the 2D corner-convergence experiment: free sigmoid-space points
/// optimized with the cluster loss alone.
#[derive(Debug, Clone)]
pub struct ToyResult {
    /// Group index per point.
    pub labels: Vec<usize>,
    /// trajectory[step][point] = sigmoid-space position; step 0 is the
    /// initial state, so the length is steps + 1.
    pub trajectory: Vec<Vec<[f64; 2]>>,
    /// Final per-group means in sigmoid space.
    pub group_means: Vec<[f64; 2]>,
}

/// Internal Adam rate for the toy experiment (the real trainer's 1e-4 is far
/// too slow for a few thousand free 2D points).
const TOY_LEARNING_RATE: f64 = 0.05;

/// Scale of the semantic embedding init. Instance embeddings start standard
/// normal; semantic embeddings start tighter because same-class objects must
/// merge onto one code, and the merge distance has to fit the optimizer's
/// total step budget.
const SEMANTIC_INIT_STD: f64 = 0.3;

/// Optimize `num_points` free 2D embeddings, grouped round-robin into
/// `num_groups` fixed labels, with the cluster loss alone. With >= 2 groups
/// the sigmoid-space means migrate to distinct corners of [0, 1]^2.
pub fn toy_corner_experiment(
    num_points: usize,
    num_groups: usize,
    steps: usize,
    rng_seed: u64,
) -> Result<ToyResult> {
    if num_points == 0 {
        return Err(Error::config("need at least one point"));
    }
    if !(1..=4).contains(&num_groups) {
        return Err(Error::config(
            "2D embeddings support at most 4 groups (one per corner)",
        ));
    }
    if num_groups > num_points {
        return Err(Error::config("more groups than points"));
    }
    let labels: Vec<usize> = (0..num_points).map(|i| i % num_groups).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut params: Vec<f64> = (0..num_points * 2)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();

    // the cluster loss consumes an embedding map; a 1 x N map of free values
    // with a fixed group partition reuses it unchanged
    let mut map = crate::model::EmbeddingMap::zeros(num_points, 1, 2, 0);
    let partition = Partition {
        width: num_points,
        height: 1,
        segments: (0..num_groups)
            .map(|g| crate::model::Segment {
                label: g as u32 + 1,
                pixels: (0..num_points as u32).filter(|&p| labels[p as usize] == g).collect(),
                boundary: Vec::new(),
            })
            .collect(),
    };

    let positions = |params: &[f64]| -> Vec<[f64; 2]> {
        (0..num_points)
            .map(|i| [crate::sigmoid(params[i * 2]), crate::sigmoid(params[i * 2 + 1])])
            .collect()
    };

    let mut adam = AdamState::new(num_points * 2);
    let mut trajectory = Vec::with_capacity(steps + 1);
    trajectory.push(positions(&params));
    for step in 0..steps {
        map.values.copy_from_slice(&params);
        let (loss, grad) = cluster_loss(&map, &partition);
        check_finite("toy cluster", loss)?;
        adam.step(&mut params, &grad, TOY_LEARNING_RATE, step + 1);
        trajectory.push(positions(&params));
    }

    let last = trajectory.last().expect("non-empty trajectory");
    let mut group_means = vec![[0.0f64; 2]; num_groups];
    let mut counts = vec![0usize; num_groups];
    for (i, pos) in last.iter().enumerate() {
        group_means[labels[i]][0] += pos[0];
        group_means[labels[i]][1] += pos[1];
        counts[labels[i]] += 1;
    }
    for (mean, &c) in group_means.iter_mut().zip(counts.iter()) {
        mean[0] /= c as f64;
        mean[1] /= c as f64;
    }
    Ok(ToyResult {
        labels,
        trajectory,
        group_means,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, Inconsistency, SynthSpec};

    fn tiny_setup() -> (Scene, Vec<TrainView>) {
        let spec = SynthSpec {
            num_objects: 3,
            primitives_per_object: 16,
            num_classes: 2,
            num_views: 4,
            image_size: (64, 64),
            camera_radius: 4.0,
            rng_seed: 11,
            inconsistency: Inconsistency::PermutePerView,
            embedding_dim: 4,
            semantic_dim: 4,
        };
        let out = generate(&spec).unwrap();
        let views = out
            .cameras
            .iter()
            .zip(out.train_instance.iter().zip(out.gt_semantic.iter()))
            .map(|(camera, (inst, sem))| TrainView {
                camera: camera.clone(),
                instance_mask: inst.clone(),
                semantic_mask: sem.clone(),
            })
            .collect();
        (out.scene, views)
    }

    fn tiny_config(iterations: usize) -> TrainConfig {
        TrainConfig {
            iterations,
            embedding_dim: 4,
            max_triplets: 50,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_weights_leave_embeddings_unchanged() {
        let (scene, views) = tiny_setup();
        let cfg = TrainConfig {
            lambda_cluster: 0.0,
            lambda_triplet: 0.0,
            lambda_3d: 0.0,
            ..tiny_config(4)
        };
        let init = TrainState::new(scene.clone(), &cfg).scene;
        let out = train(scene, &views, &cfg).unwrap();
        for (a, b) in init.primitives.iter().zip(out.scene.primitives.iter()) {
            assert_eq!(a.instance_embedding, b.instance_embedding);
            assert_eq!(a.semantic_embedding, b.semantic_embedding);
        }
    }

    #[test]
    fn late_terms_are_exactly_zero_before_start() {
        let (scene, views) = tiny_setup();
        let cfg = TrainConfig {
            late_loss_start: Some(3),
            ..tiny_config(6)
        };
        let out = train(scene, &views, &cfg).unwrap();
        for record in &out.history {
            if record.iteration < 3 {
                assert_eq!(record.triplet, 0.0);
                assert_eq!(record.reg3d, 0.0);
            } else {
                assert!(record.triplet != 0.0 || record.reg3d != 0.0);
            }
        }
    }

    #[test]
    fn single_step_updates_history_and_counter() {
        let (scene, views) = tiny_setup();
        let cfg = tiny_config(10);
        let mut state = TrainState::new(scene, &cfg);
        train_step(&mut state, &views[0], &cfg).unwrap();
        assert_eq!(state.iteration, 1);
        assert_eq!(state.history.len(), 1);
        assert!(state.history[0].total.is_finite());
    }

    #[test]
    fn zero_iterations_returns_initial_embeddings() {
        let (scene, views) = tiny_setup();
        let cfg = tiny_config(0);
        let expected = TrainState::new(scene.clone(), &cfg).scene;
        let out = train(scene, &views, &cfg).unwrap();
        assert!(out.history.is_empty());
        for (a, b) in expected.primitives.iter().zip(out.scene.primitives.iter()) {
            assert_eq!(a.instance_embedding, b.instance_embedding);
        }
    }

    #[test]
    fn training_is_deterministic_and_freezes_geometry() {
        let (scene, views) = tiny_setup();
        let cfg = tiny_config(8);
        let a = train(scene.clone(), &views, &cfg).unwrap();
        let b = train(scene.clone(), &views, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        for (pa, pb) in a.scene.primitives.iter().zip(b.scene.primitives.iter()) {
            assert_eq!(pa.instance_embedding, pb.instance_embedding);
        }
        for (orig, trained) in scene.primitives.iter().zip(a.scene.primitives.iter()) {
            assert_eq!(orig.position, trained.position);
            assert_eq!(orig.scale, trained.scale);
            assert_eq!(orig.rotation, trained.rotation);
            assert_eq!(orig.opacity, trained.opacity);
            assert_eq!(orig.color, trained.color);
        }
    }

    #[test]
    fn mask_fraction_limits_contributing_views() {
        let (scene, views) = tiny_setup();
        let cfg = TrainConfig {
            mask_fraction: 0.5,
            ..tiny_config(4)
        };
        let out = train(scene, &views, &cfg).unwrap();
        assert_eq!(out.used_views.len(), 2);
    }

    #[test]
    fn no_views_is_a_config_error() {
        let (scene, _) = tiny_setup();
        assert!(matches!(
            train(scene, &[], &tiny_config(4)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn toy_single_group_variance_shrinks() {
        let result = toy_corner_experiment(40, 1, 400, 3).unwrap();
        let spread = |points: &Vec<[f64; 2]>| {
            let mean = points.iter().fold([0.0, 0.0], |acc, p| {
                [acc[0] + p[0] / points.len() as f64, acc[1] + p[1] / points.len() as f64]
            });
            points
                .iter()
                .map(|p| (p[0] - mean[0]).powi(2) + (p[1] - mean[1]).powi(2))
                .sum::<f64>()
                / points.len() as f64
        };
        let initial = spread(&result.trajectory[0]);
        let last = spread(result.trajectory.last().unwrap());
        assert!(last < initial / 10.0, "variance {initial} -> {last}");
    }

    #[test]
    fn toy_trajectories_deterministic() {
        let a = toy_corner_experiment(30, 4, 50, 9).unwrap();
        let b = toy_corner_experiment(30, 4, 50, 9).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
    }

    #[test]
    fn toy_rejects_too_many_groups() {
        assert!(toy_corner_experiment(10, 5, 10, 1).is_err());
    }
}
