//! Segmentation quality metrics: pooled per-class mIoU and scene-level
//! Panoptic Quality, where predicted and ground-truth segments of the same
//! class are merged across views before matching with IoU > 0.5. Also the
//! wall-time comparison harness between the direct decode path and the
//! two-stage cluster+assign baseline.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::baseline::{assign_labels, fit_density_clusters};
use crate::codec::{decode_map, DecodeConfig};
use crate::model::{EmbeddingMap, LabelKind, LabelMap, BACKGROUND};
use crate::sigmoid;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MiouReport {
    pub miou: f64,
    /// IoU per ground-truth class, pooled over all views.
    pub per_class: BTreeMap<u32, f64>,
}

/// Pooled mean IoU over classes present in the ground truth; background is
/// excluded. Errors if the ground truth has no non-background class.
pub fn miou(pred: &[LabelMap], gt: &[LabelMap]) -> Result<MiouReport> {
    if pred.len() != gt.len() {
        return Err(Error::Shape("view counts differ".into()));
    }
    let mut tp: BTreeMap<u32, u64> = BTreeMap::new();
    let mut fp: BTreeMap<u32, u64> = BTreeMap::new();
    let mut fn_: BTreeMap<u32, u64> = BTreeMap::new();
    let mut gt_classes: std::collections::BTreeSet<u32> = Default::default();
    for (p, g) in pred.iter().zip(gt.iter()) {
        if p.width != g.width || p.height != g.height {
            return Err(Error::Shape("mask dimensions differ".into()));
        }
        for (&pl, &gl) in p.labels.iter().zip(g.labels.iter()) {
            if gl != BACKGROUND {
                gt_classes.insert(gl);
            }
            if pl == gl {
                if pl != BACKGROUND {
                    *tp.entry(pl).or_insert(0) += 1;
                }
            } else {
                if pl != BACKGROUND {
                    *fp.entry(pl).or_insert(0) += 1;
                }
                if gl != BACKGROUND {
                    *fn_.entry(gl).or_insert(0) += 1;
                }
            }
        }
    }
    if gt_classes.is_empty() {
        return Err(Error::config(
            "ground truth has no non-background class; mIoU undefined",
        ));
    }
    let mut per_class = BTreeMap::new();
    let mut sum = 0.0;
    for &c in &gt_classes {
        let t = *tp.get(&c).unwrap_or(&0) as f64;
        let denom = t + *fp.get(&c).unwrap_or(&0) as f64 + *fn_.get(&c).unwrap_or(&0) as f64;
        let iou = if denom > 0.0 { t / denom } else { 0.0 };
        per_class.insert(c, iou);
        sum += iou;
    }
    Ok(MiouReport {
        miou: sum / gt_classes.len() as f64,
        per_class,
    })
}

/// A (class, instance) segment merged across views; pixels are (view, index)
/// pairs flattened as view * pixels_per_view + index.
#[derive(Debug, Clone)]
pub struct SceneSegment {
    pub class_id: u32,
    pub instance_id: u32,
    pub pixels: Vec<u64>,
}

fn build_scene_segments(views: &[(LabelMap, LabelMap)]) -> Vec<SceneSegment> {
    // instance id -> (pixels, semantic label counts)
    let mut acc: BTreeMap<u32, (Vec<u64>, BTreeMap<u32, usize>)> = BTreeMap::new();
    for (view, (instance, semantic)) in views.iter().enumerate() {
        let per_view = (instance.width * instance.height) as u64;
        for (idx, (&il, &sl)) in instance
            .labels
            .iter()
            .zip(semantic.labels.iter())
            .enumerate()
        {
            if il == BACKGROUND {
                continue;
            }
            let entry = acc.entry(il).or_default();
            entry.0.push(view as u64 * per_view + idx as u64);
            *entry.1.entry(sl).or_insert(0) += 1;
        }
    }
    acc.into_iter()
        .map(|(instance_id, (pixels, sem_counts))| {
            // majority semantic label over merged pixels, ties to smaller id
            let class_id = sem_counts
                .iter()
                .map(|(&c, &n)| (c, n))
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|(c, _)| c)
                .unwrap_or(BACKGROUND);
            SceneSegment {
                class_id,
                instance_id,
                pixels,
            }
        })
        .collect()
}

fn iou(a: &[u64], b: &[u64]) -> f64 {
    // pixel lists are sorted by construction
    let mut i = 0;
    let mut j = 0;
    let mut inter = 0usize;
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    inter as f64 / (a.len() + b.len() - inter) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct PqClass {
    pub pq: f64,
    pub iou_sum: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PqReport {
    /// Mean PQ over ground-truth classes, in [0, 1].
    pub pq: f64,
    pub per_class: BTreeMap<u32, PqClass>,
    /// (class, pred instance, gt instance, IoU) for each matched pair.
    pub matches: Vec<(u32, u32, u32, f64)>,
    /// Predicted segments whose class does not exist in the ground truth;
    /// they do not enter the per-class mean.
    pub fp_other_classes: usize,
}

/// Scene-level Panoptic Quality: merge (class, instance) segments across
/// views on both sides, match within each class at IoU > 0.5 (such matches
/// are unique), and average per-class PQ = sum IoU / (TP + FP/2 + FN/2)
/// over ground-truth classes.
pub fn pq_scene(pred: &[(LabelMap, LabelMap)], gt: &[(LabelMap, LabelMap)]) -> Result<PqReport> {
    if pred.len() != gt.len() {
        return Err(Error::Shape("view counts differ".into()));
    }
    let pred_segments = build_scene_segments(pred);
    let gt_segments = build_scene_segments(gt);

    let gt_classes: std::collections::BTreeSet<u32> =
        gt_segments.iter().map(|s| s.class_id).collect();

    let mut per_class: BTreeMap<u32, PqClass> = BTreeMap::new();
    let mut matches = Vec::new();
    let mut fp_other_classes = 0usize;
    for &class in &gt_classes {
        let preds: Vec<&SceneSegment> =
            pred_segments.iter().filter(|s| s.class_id == class).collect();
        let gts: Vec<&SceneSegment> =
            gt_segments.iter().filter(|s| s.class_id == class).collect();
        let mut gt_matched = vec![false; gts.len()];
        let mut tp = 0usize;
        let mut iou_sum = 0.0;
        for p in &preds {
            for (gi, g) in gts.iter().enumerate() {
                let overlap = iou(&p.pixels, &g.pixels);
                if overlap > 0.5 {
                    debug_assert!(!gt_matched[gi], "IoU > 0.5 matches are unique");
                    gt_matched[gi] = true;
                    tp += 1;
                    iou_sum += overlap;
                    matches.push((class, p.instance_id, g.instance_id, overlap));
                    break;
                }
            }
        }
        let fp = preds.len() - tp;
        let fn_ = gt_matched.iter().filter(|&&m| !m).count();
        let denom = tp as f64 + 0.5 * fp as f64 + 0.5 * fn_ as f64;
        let pq = if denom > 0.0 { iou_sum / denom } else { 0.0 };
        per_class.insert(
            class,
            PqClass {
                pq,
                iou_sum,
                tp,
                fp,
                fn_,
            },
        );
    }
    for s in &pred_segments {
        if !gt_classes.contains(&s.class_id) {
            fp_other_classes += 1;
        }
    }
    let pq = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().map(|c| c.pq).sum::<f64>() / per_class.len() as f64
    };
    Ok(PqReport {
        pq,
        per_class,
        matches,
        fp_other_classes,
    })
}

/// One-to-one greedy mapping from predicted semantic codes to ground-truth
/// class ids by descending pixel overlap (ties to smaller code, then class).
/// Codes left unmapped keep out-of-vocabulary ids so they can never shadow a
/// real class.
pub fn align_semantic_codes(pred: &[LabelMap], gt: &[LabelMap]) -> BTreeMap<u32, u32> {
    let mut overlap: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    for (p, g) in pred.iter().zip(gt.iter()) {
        for (&pl, &gl) in p.labels.iter().zip(g.labels.iter()) {
            if pl != BACKGROUND && gl != BACKGROUND {
                *overlap.entry((pl, gl)).or_insert(0) += 1;
            }
        }
    }
    let mut pairs: Vec<((u32, u32), u64)> = overlap.into_iter().collect();
    // descending count, then ascending (code, class); BTreeMap iteration
    // already orders the key part
    pairs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut mapping = BTreeMap::new();
    let mut class_taken: std::collections::BTreeSet<u32> = Default::default();
    for ((code, class), _) in pairs {
        if mapping.contains_key(&code) || class_taken.contains(&class) {
            continue;
        }
        mapping.insert(code, class);
        class_taken.insert(class);
    }
    mapping
}

/// Apply a code -> class mapping; unmapped non-background codes are moved
/// above the ground-truth class range to keep them distinct.
pub fn apply_code_mapping(map: &LabelMap, mapping: &BTreeMap<u32, u32>) -> LabelMap {
    let spill_base = mapping.values().copied().max().unwrap_or(0) + 1;
    let mut spill: BTreeMap<u32, u32> = BTreeMap::new();
    let labels = map
        .labels
        .iter()
        .map(|&l| {
            if l == BACKGROUND {
                BACKGROUND
            } else if let Some(&c) = mapping.get(&l) {
                c
            } else {
                let next = spill_base + spill.len() as u32;
                *spill.entry(l).or_insert(next)
            }
        })
        .collect();
    LabelMap::new(map.width, map.height, map.kind, labels)
}

#[derive(Debug, Clone, Copy)]
pub struct TimingConfig {
    pub decode: DecodeConfig,
    pub eps: f64,
    pub min_pts: usize,
    /// Cluster fitting samples at most this many covered pixels.
    pub sample_cap: usize,
    pub rng_seed: u64,
    /// Timed repetitions; the median is reported.
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    pub pixels: usize,
    pub decode_seconds: f64,
    pub baseline_fit_seconds: f64,
    pub baseline_assign_seconds: f64,
    pub decode_pixels_per_second: f64,
    pub baseline_pixels_per_second: f64,
    /// baseline total time / decode time.
    pub speedup: f64,
    pub num_clusters: usize,
}

fn median_time<T>(repeats: usize, mut f: impl FnMut() -> T) -> (f64, T) {
    assert!(repeats >= 1);
    let mut times = Vec::with_capacity(repeats);
    let mut out = None;
    for _ in 0..repeats {
        let start = Instant::now();
        let value = f();
        times.push(start.elapsed().as_secs_f64());
        out = Some(value);
    }
    times.sort_by(f64::total_cmp);
    (times[times.len() / 2], out.expect("repeats >= 1"))
}

/// Collect sigmoid-space samples from covered pixels, deterministically
/// subsampled to the cap.
pub fn sample_covered(maps: &[&EmbeddingMap], cap: usize, rng_seed: u64) -> Vec<Vec<f64>> {
    use rand::{Rng, SeedableRng};
    let mut samples = Vec::new();
    for map in maps {
        for idx in 0..map.width * map.height {
            if map.coverage[idx] >= crate::codec::COVERAGE_GATE {
                samples.push(map.pixel(idx).iter().map(|&v| sigmoid(v)).collect());
            }
        }
    }
    if samples.len() > cap {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng_seed);
        for i in 0..cap {
            let j = rng.random_range(i..samples.len());
            samples.swap(i, j);
        }
        samples.truncate(cap);
    }
    samples
}

/// Median-of-N wall times for the direct decode path versus the two-stage
/// baseline (density-cluster fit plus nearest-centroid assignment) on the
/// same rendered maps.
pub fn timing_compare(maps: &[&EmbeddingMap], cfg: &TimingConfig) -> Result<TimingReport> {
    if maps.is_empty() {
        return Err(Error::config("no maps to time"));
    }
    let pixels: usize = maps.iter().map(|m| m.width * m.height).sum();

    let (decode_seconds, _) = median_time(cfg.repeats, || {
        for map in maps {
            decode_map(map, &cfg.decode, LabelKind::Instance).expect("maps validated");
        }
    });

    let samples = sample_covered(maps, cfg.sample_cap, cfg.rng_seed);
    let (baseline_fit_seconds, model) = {
        let mut result = None;
        let (t, _) = median_time(cfg.repeats, || {
            result = Some(fit_density_clusters(&samples, cfg.eps, cfg.min_pts));
        });
        (t, result.expect("ran at least once"))
    };
    let model = model?;
    let (baseline_assign_seconds, _) = median_time(cfg.repeats, || {
        for map in maps {
            assign_labels(map, &model);
        }
    });

    let baseline_total = baseline_fit_seconds + baseline_assign_seconds;
    Ok(TimingReport {
        pixels,
        decode_seconds,
        baseline_fit_seconds,
        baseline_assign_seconds,
        decode_pixels_per_second: pixels as f64 / decode_seconds.max(1e-12),
        baseline_pixels_per_second: pixels as f64 / baseline_total.max(1e-12),
        speedup: baseline_total / decode_seconds.max(1e-12),
        num_clusters: model.centroids.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn lm(kind: LabelKind, w: usize, labels: Vec<u32>) -> LabelMap {
        let h = labels.len() / w;
        LabelMap::new(w, h, kind, labels)
    }

    #[test]
    fn miou_perfect_prediction() {
        let gt = vec![lm(LabelKind::Semantic, 2, vec![1, 1, 2, 0])];
        let report = miou(&gt, &gt).unwrap();
        assert_relative_eq!(report.miou, 1.0);
    }

    #[test]
    fn miou_all_background_prediction() {
        let gt = vec![lm(LabelKind::Semantic, 2, vec![1, 1, 1, 1])];
        let pred = vec![lm(LabelKind::Semantic, 2, vec![0, 0, 0, 0])];
        assert_relative_eq!(miou(&pred, &gt).unwrap().miou, 0.0);
    }

    #[test]
    fn miou_half_overlap_is_one_third() {
        // TP 1, FP 1, FN 1 -> 1/3
        let gt = vec![lm(LabelKind::Semantic, 2, vec![1, 1, 0, 0])];
        let pred = vec![lm(LabelKind::Semantic, 2, vec![0, 1, 1, 0])];
        assert_relative_eq!(miou(&pred, &gt).unwrap().miou, 1.0 / 3.0);
    }

    #[test]
    fn miou_requires_gt_classes() {
        let gt = vec![lm(LabelKind::Semantic, 2, vec![0, 0, 0, 0])];
        assert!(miou(&gt, &gt).is_err());
    }

    fn paired(inst: LabelMap, sem: LabelMap) -> (LabelMap, LabelMap) {
        (inst, sem)
    }

    #[test]
    fn pq_perfect_prediction() {
        let views = vec![paired(
            lm(LabelKind::Instance, 2, vec![1, 1, 2, 0]),
            lm(LabelKind::Semantic, 2, vec![1, 1, 1, 0]),
        )];
        let report = pq_scene(&views, &views).unwrap();
        assert_relative_eq!(report.pq, 1.0);
        assert_eq!(report.per_class[&1].tp, 2);
        assert_eq!(report.per_class[&1].fp, 0);
        assert_eq!(report.per_class[&1].fn_, 0);
    }

    #[test]
    fn pq_per_view_permuted_ids_fragment() {
        // two views, two objects; consistent gt
        let gt = vec![
            paired(
                lm(LabelKind::Instance, 2, vec![1, 1, 2, 2]),
                lm(LabelKind::Semantic, 2, vec![1, 1, 1, 1]),
            ),
            paired(
                lm(LabelKind::Instance, 2, vec![1, 1, 2, 2]),
                lm(LabelKind::Semantic, 2, vec![1, 1, 1, 1]),
            ),
        ];
        // prediction swaps ids in the second view: merged segments are half
        // object A, half object B -> IoU 1/3 each -> no matches at > 0.5
        let pred = vec![
            gt[0].clone(),
            paired(
                lm(LabelKind::Instance, 2, vec![2, 2, 1, 1]),
                lm(LabelKind::Semantic, 2, vec![1, 1, 1, 1]),
            ),
        ];
        let perfect = pq_scene(&gt, &gt).unwrap();
        let fragmented = pq_scene(&pred, &gt).unwrap();
        assert_relative_eq!(perfect.pq, 1.0);
        assert!(fragmented.pq < perfect.pq);
        assert_eq!(fragmented.per_class[&1].tp, 0);
    }

    #[test]
    fn pq_globally_consistent_relabeling_invariant() {
        let gt = vec![paired(
            lm(LabelKind::Instance, 3, vec![1, 1, 2, 2, 3, 0]),
            lm(LabelKind::Semantic, 3, vec![1, 1, 1, 1, 2, 0]),
        )];
        let relabel = |l: u32| match l {
            0 => 0,
            l => 100 - l,
        };
        let pred = vec![paired(
            lm(
                LabelKind::Instance,
                3,
                gt[0].0.labels.iter().map(|&l| relabel(l)).collect(),
            ),
            gt[0].1.clone(),
        )];
        let a = pq_scene(&gt, &gt).unwrap();
        let b = pq_scene(&pred, &gt).unwrap();
        assert_relative_eq!(a.pq, b.pq);
        assert_eq!(a.per_class, b.per_class);
    }

    #[test]
    fn pq_empty_prediction_all_fn() {
        let gt = vec![paired(
            lm(LabelKind::Instance, 2, vec![1, 1, 2, 2]),
            lm(LabelKind::Semantic, 2, vec![1, 1, 1, 1]),
        )];
        let pred = vec![paired(
            lm(LabelKind::Instance, 2, vec![0, 0, 0, 0]),
            lm(LabelKind::Semantic, 2, vec![0, 0, 0, 0]),
        )];
        let report = pq_scene(&pred, &gt).unwrap();
        assert_relative_eq!(report.pq, 0.0);
        assert_eq!(report.per_class[&1].fn_, 2);
    }

    #[test]
    fn alignment_maps_codes_one_to_one() {
        let gt = vec![lm(LabelKind::Semantic, 3, vec![1, 1, 1, 2, 2, 0])];
        let pred = vec![lm(LabelKind::Semantic, 3, vec![9, 9, 9, 4, 4, 0])];
        let mapping = align_semantic_codes(&pred, &gt);
        assert_eq!(mapping[&9], 1);
        assert_eq!(mapping[&4], 2);
        let applied = apply_code_mapping(&pred[0], &mapping);
        assert_eq!(applied.labels, vec![1, 1, 1, 2, 2, 0]);
    }

    #[test]
    fn alignment_spills_unmapped_codes_out_of_vocabulary() {
        let gt = vec![lm(LabelKind::Semantic, 2, vec![1, 1, 1, 1])];
        let pred = vec![lm(LabelKind::Semantic, 2, vec![9, 9, 5, 5])];
        let mapping = align_semantic_codes(&pred, &gt);
        // 9 and 5 tie on... 9 has 2 pixels, 5 has 2 pixels; smaller code wins
        assert_eq!(mapping.len(), 1);
        assert_eq!(mapping[&5], 1);
        let applied = apply_code_mapping(&pred[0], &mapping);
        assert_eq!(applied.labels[0], 2); // spilled past class 1
        assert_eq!(applied.labels[2], 1);
    }
}
