//! Segmentation metrics: per-object IoU and precision/recall/F-measure with
//! an exact one-to-one object assignment.

use crate::model::BoundingBox;
use crate::motion::PixelMask;
use crate::seg::LabelMap;
use crate::tube::Tube;
use crate::{Error, Result};

/// Counted as successfully segmented at or above this F-measure.
pub const F_MEASURE_SUCCESS: f64 = 0.75;

/// Per-object masks over a video; `None` marks frames without annotation
/// (ground truth) or without a prediction.
pub type MaskSequence = Vec<Option<PixelMask>>;

#[derive(Debug, Clone)]
pub struct IouReport {
    /// IoU per object; `None` when the object has no annotated frames (or
    /// both masks are empty everywhere).
    pub per_object: Vec<Option<f64>>,
    pub average: Option<f64>,
}

/// Intersection over union per object, aggregated over the object's
/// annotated frames, plus the average over defined objects. `pred[i]` is
/// compared against `gt[i]`.
pub fn eval_iou(pred: &[MaskSequence], gt: &[MaskSequence]) -> Result<IouReport> {
    if pred.len() != gt.len() {
        return Err(Error::Misaligned {
            what: "predicted vs ground-truth objects".into(),
            expected: gt.len(),
            actual: pred.len(),
        });
    }
    let mut per_object = Vec::with_capacity(gt.len());
    for (p_seq, g_seq) in pred.iter().zip(gt) {
        let mut inter = 0u64;
        let mut union = 0u64;
        let mut annotated = false;
        for (f, g) in g_seq.iter().enumerate() {
            let Some(g_mask) = g else { continue };
            annotated = true;
            match p_seq.get(f).and_then(|p| p.as_ref()) {
                Some(p_mask) => {
                    let (i, u) = p_mask.overlap_counts(g_mask);
                    inter += i;
                    union += u;
                }
                None => {
                    union += g_mask.values().iter().filter(|&&v| v >= 0.5).count() as u64;
                }
            }
        }
        if !annotated || union == 0 {
            per_object.push(None);
        } else {
            per_object.push(Some(inter as f64 / union as f64));
        }
    }
    let defined: Vec<f64> = per_object.iter().flatten().copied().collect();
    let average = if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    };
    Ok(IouReport {
        per_object,
        average,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScore {
    pub pred: usize,
    pub gt: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

#[derive(Debug, Clone)]
pub struct FMeasureReport {
    /// Assigned (prediction, ground truth) pairs in ground-truth order.
    pub pairs: Vec<PairScore>,
    /// Averages over all ground-truth objects (unassigned ones contribute 0).
    pub avg_precision: f64,
    pub avg_recall: f64,
    pub avg_f: f64,
    /// Objects with F at or above [`F_MEASURE_SUCCESS`]; the background is
    /// never among the objects, so no correction applies here.
    pub matched: usize,
    pub gt_objects: usize,
}

struct PixelCounts {
    pred_total: Vec<u64>,
    gt_total: Vec<u64>,
    inter: Vec<Vec<u64>>,
}

/// Pixel tallies over the evaluation frames (frames where at least one
/// ground-truth object is annotated).
fn pixel_counts(pred: &[MaskSequence], gt: &[MaskSequence]) -> PixelCounts {
    let frames = gt.iter().map(Vec::len).max().unwrap_or(0);
    let eval_frames: Vec<usize> = (0..frames)
        .filter(|&f| gt.iter().any(|seq| seq.get(f).is_some_and(Option::is_some)))
        .collect();
    let count = |m: &PixelMask| m.values().iter().filter(|&&v| v >= 0.5).count() as u64;
    let mut pred_total = vec![0u64; pred.len()];
    let mut gt_total = vec![0u64; gt.len()];
    let mut inter = vec![vec![0u64; gt.len()]; pred.len()];
    for &f in &eval_frames {
        for (i, p_seq) in pred.iter().enumerate() {
            if let Some(Some(p)) = p_seq.get(f) {
                pred_total[i] += count(p);
                for (j, g_seq) in gt.iter().enumerate() {
                    if let Some(Some(g)) = g_seq.get(f) {
                        inter[i][j] += p.overlap_counts(g).0;
                    }
                }
            }
        }
        for (j, g_seq) in gt.iter().enumerate() {
            if let Some(Some(g)) = g_seq.get(f) {
                gt_total[j] += count(g);
            }
        }
    }
    PixelCounts {
        pred_total,
        gt_total,
        inter,
    }
}

fn pair_score(counts: &PixelCounts, i: usize, j: usize) -> PairScore {
    let inter = counts.inter[i][j];
    let s = counts.pred_total[i];
    let g = counts.gt_total[j];
    let precision = if s > 0 { inter as f64 / s as f64 } else { 0.0 };
    let recall = if g > 0 { inter as f64 / g as f64 } else { 0.0 };
    // Dice form of the harmonic mean: exact on integer counts, so the
    // inclusive threshold test is not disturbed by rounding.
    let f_measure = if s + g > 0 {
        2.0 * inter as f64 / (s + g) as f64
    } else {
        0.0
    };
    PairScore {
        pred: i,
        gt: j,
        precision,
        recall,
        f_measure,
    }
}

/// Exact assignment maximizing the total F-measure over one-to-one
/// (prediction, ground truth) pairs, by dynamic programming over ground-truth
/// subsets. Bounded at 20 ground-truth objects.
fn best_assignment(f: &[Vec<f64>]) -> Result<Vec<Option<usize>>> {
    let n_pred = f.len();
    let n_gt = f.first().map_or(0, Vec::len);
    if n_gt > 20 {
        return Err(Error::TooManyObjects(n_gt));
    }
    if n_pred == 0 || n_gt == 0 {
        return Ok(vec![None; n_pred]);
    }
    let full = 1usize << n_gt;
    let mut dp = vec![0.0f64; full];
    let mut choice = vec![0u8; n_pred * full];
    for i in 0..n_pred {
        let prev = dp.clone();
        for mask in 0..full {
            // Skip prediction i.
            let mut best = prev[mask];
            let mut pick = 0u8;
            for j in 0..n_gt {
                if mask & (1 << j) != 0 {
                    let cand = prev[mask ^ (1 << j)] + f[i][j];
                    if cand > best {
                        best = cand;
                        pick = j as u8 + 1;
                    }
                }
            }
            dp[mask] = best;
            choice[i * full + mask] = pick;
        }
    }
    let mut assignment = vec![None; n_pred];
    let mut mask = full - 1;
    for i in (0..n_pred).rev() {
        let pick = choice[i * full + mask];
        if pick > 0 {
            let j = (pick - 1) as usize;
            assignment[i] = Some(j);
            mask ^= 1 << j;
        }
    }
    Ok(assignment)
}

/// Precision, recall and F per assigned object pair, with the one-to-one
/// assignment chosen to maximize the total F-measure, plus the count of
/// objects with F at or above the success threshold.
pub fn eval_fmeasure(pred: &[MaskSequence], gt: &[MaskSequence]) -> Result<FMeasureReport> {
    let counts = pixel_counts(pred, gt);
    let f_matrix: Vec<Vec<f64>> = (0..pred.len())
        .map(|i| (0..gt.len()).map(|j| pair_score(&counts, i, j).f_measure).collect())
        .collect();
    let assignment = best_assignment(&f_matrix)?;
    let mut pairs: Vec<PairScore> = assignment
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| pair_score(&counts, i, j)))
        .collect();
    pairs.sort_by_key(|p| p.gt);
    let matched = pairs.iter().filter(|p| p.f_measure >= F_MEASURE_SUCCESS).count();
    let n_gt = gt.len().max(1) as f64;
    Ok(FMeasureReport {
        avg_precision: pairs.iter().map(|p| p.precision).sum::<f64>() / n_gt,
        avg_recall: pairs.iter().map(|p| p.recall).sum::<f64>() / n_gt,
        avg_f: pairs.iter().map(|p| p.f_measure).sum::<f64>() / n_gt,
        matched,
        gt_objects: gt.len(),
        pairs,
    })
}

/// Splits per-frame label maps into one binary mask sequence per label
/// `1..=num_objects`.
pub fn label_maps_to_object_masks(maps: &[LabelMap], num_objects: usize) -> Vec<MaskSequence> {
    (1..=num_objects as u32)
        .map(|label| {
            maps.iter()
                .map(|m| {
                    let mut mask = PixelMask::zero(m.width(), m.height());
                    for y in 0..m.height() {
                        for x in 0..m.width() {
                            if m.get(x, y) == label {
                                mask.set(x, y, 1.0);
                            }
                        }
                    }
                    Some(mask)
                })
                .collect()
        })
        .collect()
}

/// Tube quality against ground-truth boxes: for each object, the best
/// same-category tube by mean per-frame box IoU; averaged over objects.
/// Frames where the tube has no box count as IoU 0.
pub fn tube_box_iou(
    tubes: &[Tube],
    gt_boxes: &[Vec<Option<BoundingBox>>],
    gt_categories: &[String],
) -> f64 {
    if gt_boxes.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for (obj, frames) in gt_boxes.iter().enumerate() {
        let mut best = 0.0f64;
        for tube in tubes {
            if tube.category != gt_categories[obj] {
                continue;
            }
            let mut sum = 0.0;
            let mut n = 0usize;
            for (f, gt_box) in frames.iter().enumerate() {
                let Some(gt_box) = gt_box else { continue };
                n += 1;
                if let Some(tb) = tube.box_at(f) {
                    sum += crate::model::iou(&tb.bbox, gt_box);
                }
            }
            if n > 0 {
                best = best.max(sum / n as f64);
            }
        }
        total += best;
    }
    total / gt_boxes.len() as f64
}
