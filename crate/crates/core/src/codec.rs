//! Embedding-to-label decoding: sigmoid, threshold, binary code. Coordinate k
//! (0-based) contributes 2^k when sigmoid(v_k) exceeds the threshold, so the
//! first coordinate is the least significant bit. This is the single-stage
//! replacement for a clustering post-pass: one linear scan over pixels.

use crate::model::{EmbeddingMap, LabelKind, LabelMap, Partition, BACKGROUND};
use crate::parallel::{map_rows, map_rows_seq};
use crate::sigmoid;
use crate::{Error, Result};

/// Widest decodable embedding: labels must fit a signed 32-bit range.
pub const MAX_DECODE_DIM: usize = 31;

/// Pixels with accumulated opacity below this decode to background.
pub const COVERAGE_GATE: f64 = 0.5;

#[derive(Debug, Clone, Copy)]
pub struct DecodeConfig {
    /// Sigmoid-space bit threshold, strict comparison. Default 0.5.
    pub decode_threshold: f64,
    pub embedding_dim: usize,
}

impl DecodeConfig {
    pub fn new(decode_threshold: f64, embedding_dim: usize) -> Result<DecodeConfig> {
        if !(decode_threshold > 0.0 && decode_threshold < 1.0) {
            return Err(Error::config(format!(
                "decode threshold {decode_threshold} outside (0, 1)"
            )));
        }
        if embedding_dim == 0 || embedding_dim > MAX_DECODE_DIM {
            return Err(Error::config(format!(
                "embedding dim {embedding_dim} outside 1..={MAX_DECODE_DIM}"
            )));
        }
        Ok(DecodeConfig {
            decode_threshold,
            embedding_dim,
        })
    }

    pub fn with_dim(embedding_dim: usize) -> Result<DecodeConfig> {
        DecodeConfig::new(0.5, embedding_dim)
    }
}

/// Decode one raw embedding into its integer code in [0, 2^d):
/// bit k set iff sigmoid(v_k) > threshold.
#[inline]
pub fn decode_pixel(embedding: &[f64], cfg: &DecodeConfig) -> u32 {
    debug_assert_eq!(embedding.len(), cfg.embedding_dim);
    let mut label = 0u32;
    for (k, &v) in embedding.iter().enumerate() {
        if sigmoid(v) > cfg.decode_threshold {
            label |= 1 << k;
        }
    }
    label
}

fn decode_impl(map: &EmbeddingMap, cfg: &DecodeConfig, kind: LabelKind, sequential: bool) -> Result<LabelMap> {
    if map.dim != cfg.embedding_dim {
        return Err(Error::Shape(format!(
            "map dim {} != decode dim {}",
            map.dim, cfg.embedding_dim
        )));
    }
    let w = map.width;
    let run = |r: usize| {
        let mut row = Vec::with_capacity(w);
        for c in 0..w {
            let idx = r * w + c;
            let label = if map.coverage[idx] < COVERAGE_GATE {
                BACKGROUND
            } else {
                decode_pixel(map.pixel(idx), cfg)
            };
            row.push(label);
        }
        row
    };
    let rows = if sequential {
        map_rows_seq(map.height, run)
    } else {
        map_rows(map.height, run)
    };
    let mut labels = Vec::with_capacity(w * map.height);
    for row in rows {
        labels.extend_from_slice(&row);
    }
    Ok(LabelMap::new(w, map.height, kind, labels))
}

/// Decode a whole rendered map in one pass (work linear in the pixel count).
/// Pixels with coverage below [`COVERAGE_GATE`] become background.
pub fn decode_map(map: &EmbeddingMap, cfg: &DecodeConfig, kind: LabelKind) -> Result<LabelMap> {
    decode_impl(map, cfg, kind, false)
}

/// Sequential decode path (same output bit-for-bit; kept for benchmarks).
pub fn decode_map_sequential(
    map: &EmbeddingMap,
    cfg: &DecodeConfig,
    kind: LabelKind,
) -> Result<LabelMap> {
    decode_impl(map, cfg, kind, true)
}

/// Per reference segment: the decoded label holding the majority of its
/// pixels and the fraction of pixels carrying it.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPurity {
    pub reference_label: u32,
    pub majority_code: u32,
    pub purity: f64,
}

/// Collision diagnostics between a decoded map and a reference partition.
/// `collision_pairs` of 0 means the segment -> code assignment is injective.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionReport {
    pub per_segment: Vec<SegmentPurity>,
    pub collision_pairs: usize,
}

/// Tally, per reference segment, the majority decoded label and purity, and
/// count reference-segment pairs sharing a majority label. Ties inside a
/// segment resolve to the smallest code.
pub fn collision_report(decoded: &LabelMap, reference: &Partition) -> Result<CollisionReport> {
    if decoded.width != reference.width || decoded.height != reference.height {
        return Err(Error::Shape(
            "decoded map and reference partition differ in size".into(),
        ));
    }
    let mut per_segment = Vec::with_capacity(reference.segments.len());
    for seg in &reference.segments {
        let mut counts: std::collections::BTreeMap<u32, usize> = std::collections::BTreeMap::new();
        for &p in &seg.pixels {
            *counts.entry(decoded.labels[p as usize]).or_insert(0) += 1;
        }
        // BTreeMap iteration is ascending by code, so ties pick the smallest
        let (majority_code, majority_count) = counts
            .iter()
            .map(|(&code, &n)| (code, n))
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .expect("segments are non-empty");
        per_segment.push(SegmentPurity {
            reference_label: seg.label,
            majority_code,
            purity: majority_count as f64 / seg.pixels.len() as f64,
        });
    }
    let mut collision_pairs = 0;
    for i in 0..per_segment.len() {
        for j in (i + 1)..per_segment.len() {
            if per_segment[i].majority_code == per_segment[j].majority_code {
                collision_pairs += 1;
            }
        }
    }
    Ok(CollisionReport {
        per_segment,
        collision_pairs,
    })
}
