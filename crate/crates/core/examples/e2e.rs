//! Scratch end-to-end check: synth -> train -> evaluate, printing PQ/mIoU.

use splatlift::pipeline::{evaluate, holdout_indices, EvalConfig};
use splatlift::synth::{generate, SynthSpec};
use splatlift::train::{train, TrainConfig, TrainView};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let mask_fraction: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let mask_scale: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1.0);

    let spec = SynthSpec { rng_seed: seed, ..SynthSpec::default() };
    let out = generate(&spec).unwrap();
    let eval_idx = holdout_indices(spec.num_views, 5);
    let train_views: Vec<TrainView> = (0..spec.num_views)
        .filter(|i| !eval_idx.contains(i))
        .map(|i| TrainView {
            camera: out.cameras[i].clone(),
            instance_mask: out.train_instance[i].clone(),
            semantic_mask: out.gt_semantic[i].clone(),
        })
        .collect();
    let cfg = TrainConfig {
        iterations: 3000,
        late_loss_start: Some(1500),
        rng_seed: seed,
        mask_fraction,
        mask_scale,
        ..TrainConfig::default()
    };
    let t0 = std::time::Instant::now();
    let trained = train(out.scene.clone(), &train_views, &cfg).unwrap();
    eprintln!("trained in {:.1?}", t0.elapsed());

    let eval_views: Vec<_> = eval_idx
        .iter()
        .map(|&i| (out.cameras[i].clone(), out.gt_instance[i].clone(), out.gt_semantic[i].clone()))
        .collect();
    for eps in [0.2, 0.1, 0.05, 0.02] {
        let ecfg = EvalConfig {
            compare_baseline: true,
            rng_seed: seed,
            baseline_eps: eps,
            ..EvalConfig::default()
        };
        match evaluate(&trained.scene, &eval_views, &eval_idx, &ecfg) {
            Ok(r) => eprintln!(
                "eps {eps}: baseline PQ {:.4}",
                r.baseline_pq.as_ref().map(|b| b.pq).unwrap_or(-1.0)
            ),
            Err(e) => eprintln!("eps {eps}: {e}"),
        }
    }
    let ecfg = EvalConfig { compare_baseline: true, rng_seed: seed, ..EvalConfig::default() };
    let report = evaluate(&trained.scene, &eval_views, &eval_idx, &ecfg).unwrap();
    eprintln!(
        "PQ {:.4} mIoU {:.4} collisions {} baseline PQ {:.4}",
        report.pq.pq,
        report.miou.miou,
        report.collisions,
        report.baseline_pq.as_ref().map(|b| b.pq).unwrap_or(-1.0)
    );
    for (class, c) in &report.pq.per_class {
        eprintln!(
            "  class {class}: pq {:.4} tp {} fp {} fn {}",
            c.pq, c.tp, c.fp, c.fn_
        );
    }
    eprintln!("per-object majorities: {:?}", report.per_object);
}
