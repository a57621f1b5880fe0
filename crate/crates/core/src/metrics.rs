//! Detection AP and the IoFF/mIOFF desensitization metric family.
//!
//! IoFF scores a predicted face mask as a weighted sum of per-region IoUs
//! over the three annotated face regions (weights default to 25/50/25); for
//! plates it is the plain mask IoU. mIOFF averages IoFF over sensitive
//! ground-truth instances, with missed instances contributing 0. IOFF_50 and
//! IOFF_75 are AP-style thresholded variants.
//!
//! Because a predicted mask is not tri-partitioned by the model, the
//! per-region IoU intersects the prediction with the horizontal band that
//! region spans across the ground-truth face box: region i scores
//! `|pred ∩ gt_i| / |(pred ∩ band_i) ∪ gt_i|`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annot::{BBox, Category, ObjectInstance, PredictionSet, SequenceAnnotation};
use crate::geometry::{self, GeometryError, Ratio};
use crate::mask::PixelMask;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no ground-truth instances to evaluate")]
    EmptyGtSet,
    #[error("no sensitive ground-truth instances")]
    NoSensitiveGt,
    #[error("category {0} is not sensitive")]
    NotSensitive(Category),
    #[error("{0} ground truth lacks the masks required for IoFF")]
    MissingGtMask(Category),
    #[error("ground-truth region is empty")]
    EmptyGtRegion,
    #[error("region weights must be non-negative and sum to 1, got ({0}, {1}, {2})")]
    BadWeights(f64, f64, f64),
    #[error("prediction missing confidence")]
    MissingConfidence,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl From<crate::mask::MaskError> for MetricsError {
    fn from(e: crate::mask::MaskError) -> Self {
        MetricsError::Geometry(GeometryError::Mask(e))
    }
}

/// Importance weights of the three face regions. Must be non-negative and
/// sum to 1; the default is the 1:2:1 importance ratio (0.25, 0.50, 0.25).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionWeights {
    pub above: f64,
    pub mid: f64,
    pub below: f64,
}

impl RegionWeights {
    pub fn new(above: f64, mid: f64, below: f64) -> Result<Self, MetricsError> {
        let sum = above + mid + below;
        if above < 0.0 || mid < 0.0 || below < 0.0 || (sum - 1.0).abs() > 1e-9 {
            return Err(MetricsError::BadWeights(above, mid, below));
        }
        Ok(RegionWeights { above, mid, below })
    }
}

impl Default for RegionWeights {
    fn default() -> Self {
        RegionWeights {
            above: 0.25,
            mid: 0.50,
            below: 0.25,
        }
    }
}

/// A scored prediction instance, the unit consumed by the metric ops.
#[derive(Debug, Clone)]
pub struct PredInstance {
    pub frame_index: u32,
    pub category: Category,
    pub bbox: BBox,
    pub mask: Option<PixelMask>,
    pub confidence: f64,
}

/// A ground-truth instance pinned to its frame.
#[derive(Debug, Clone)]
pub struct GtInstance {
    pub frame_index: u32,
    pub object: ObjectInstance,
}

/// IoFF of a predicted mask against one sensitive ground-truth instance.
///
/// Faces: weighted sum of per-region band IoUs (empty occluded regions are
/// skipped and the remaining weights renormalized). Plates: plain mask IoU.
pub fn ioff(
    pred_mask: &PixelMask,
    gt: &ObjectInstance,
    weights: &RegionWeights,
) -> Result<Ratio, MetricsError> {
    match gt.category {
        Category::Face => {
            let tri = gt
                .tri
                .as_ref()
                .ok_or(MetricsError::MissingGtMask(Category::Face))?;
            let ws = [weights.above, weights.mid, weights.below];
            let mut total = 0.0;
            let mut weight_used = 0.0;
            for (region, w) in tri.regions().into_iter().zip(ws) {
                let Some((_, y0, _, y1)) = region.bounds() else {
                    continue; // occluded region: renormalize below
                };
                let band = band_mask(pred_mask.width(), pred_mask.height(), &gt.bbox, y0, y1);
                let inter = pred_mask.intersection_count(region)?;
                let denom = pred_mask.intersect(&band)?.union_count(region)?;
                debug_assert!(denom > 0, "nonempty gt region implies nonzero denominator");
                total += w * (inter as f64 / denom as f64);
                weight_used += w;
            }
            if weight_used == 0.0 {
                return Err(MetricsError::EmptyGtRegion);
            }
            Ok(total / weight_used)
        }
        Category::Plate => {
            let mask = gt
                .mask
                .as_ref()
                .ok_or(MetricsError::MissingGtMask(Category::Plate))?;
            if mask.is_empty() {
                return Err(MetricsError::EmptyGtRegion);
            }
            Ok(geometry::mask_iou(pred_mask, mask)?)
        }
        other => Err(MetricsError::NotSensitive(other)),
    }
}

/// The horizontal band spanned by rows `[y0, y1]` across the face box.
fn band_mask(width: u32, height: u32, face_box: &BBox, y0: u32, y1: u32) -> PixelMask {
    PixelMask::from_rect(
        width,
        height,
        face_box.x_min.floor() as i64,
        y0 as i64,
        face_box.x_max.ceil() as i64,
        y1 as i64 + 1,
    )
}

/// Fraction of a ground-truth region covered by an applied redaction mask.
pub fn coverage_ratio(applied: &PixelMask, gt_region: &PixelMask) -> Result<Ratio, MetricsError> {
    let total = gt_region.count_ones();
    if total == 0 {
        return Err(MetricsError::EmptyGtRegion);
    }
    Ok(applied.intersection_count(gt_region)? as f64 / total as f64)
}

/// How predictions are scored against ground truth during matching.
#[derive(Debug, Clone)]
pub enum MatchMeasure {
    BoxIou,
    Ioff(RegionWeights),
}

impl MatchMeasure {
    fn score(&self, pred: &PredInstance, gt: &GtInstance) -> Result<f64, MetricsError> {
        match self {
            MatchMeasure::BoxIou => Ok(geometry::box_iou(&pred.bbox, &gt.object.bbox)),
            MatchMeasure::Ioff(w) => {
                if !gt.object.category.is_sensitive() {
                    return Ok(0.0);
                }
                match &pred.mask {
                    Some(mask) => ioff(mask, &gt.object, w),
                    None => Ok(0.0),
                }
            }
        }
    }
}

/// One matched (prediction, ground truth) pair and its measure score.
#[derive(Debug, Clone, Copy)]
pub struct MatchPair {
    pub pred: usize,
    pub gt: usize,
    pub score: f64,
}

/// Greedy one-to-one matching, formed in descending prediction confidence.
#[derive(Debug, Clone)]
pub struct MatchResult {
    pub pairs: Vec<MatchPair>,
    pub unmatched_preds: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
}

/// Matches predictions to ground truth greedily by descending confidence.
///
/// Each prediction takes the unused same-frame, same-category ground truth
/// with the highest measure score, provided the score exceeds `min_score`
/// (strictly). Ties break deterministically on index order.
pub fn match_instances(
    preds: &[PredInstance],
    gts: &[GtInstance],
    measure: &MatchMeasure,
    min_score: f64,
) -> Result<MatchResult, MetricsError> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .confidence
            .partial_cmp(&preds[a].confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut gt_used = vec![false; gts.len()];
    let mut pairs = Vec::new();
    let mut unmatched_preds = Vec::new();
    for &pi in &order {
        let pred = &preds[pi];
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if gt_used[gi]
                || gt.frame_index != pred.frame_index
                || gt.object.category != pred.category
            {
                continue;
            }
            let s = measure.score(pred, gt)?;
            if s > best.map_or(f64::NEG_INFINITY, |(_, bs)| bs) {
                best = Some((gi, s));
            }
        }
        match best {
            Some((gi, s)) if s > min_score => {
                gt_used[gi] = true;
                pairs.push(MatchPair {
                    pred: pi,
                    gt: gi,
                    score: s,
                });
            }
            _ => unmatched_preds.push(pi),
        }
    }
    unmatched_preds.sort_unstable();
    let unmatched_gts = (0..gts.len()).filter(|&g| !gt_used[g]).collect();
    Ok(MatchResult {
        pairs,
        unmatched_preds,
        unmatched_gts,
    })
}

/// Per-category mIOFF scores.
#[derive(Debug, Clone)]
pub struct MioffScores {
    /// Unweighted mean of the face and plate means (whichever are present).
    pub combined: f64,
    pub face: Option<f64>,
    pub plate: Option<f64>,
    /// IoFF per ground-truth instance, aligned with the input order;
    /// unmatched instances score 0.
    pub per_gt: Vec<f64>,
}

/// mIOFF from an existing match result over sensitive instances.
pub fn mioff_from_matches(
    matches: &MatchResult,
    gts: &[GtInstance],
) -> Result<MioffScores, MetricsError> {
    let mut per_gt = vec![0.0; gts.len()];
    for pair in &matches.pairs {
        per_gt[pair.gt] = pair.score;
    }
    let mean_for = |cat: Category| -> Option<f64> {
        let scores: Vec<f64> = gts
            .iter()
            .zip(&per_gt)
            .filter(|(g, _)| g.object.category == cat)
            .map(|(_, &s)| s)
            .collect();
        if scores.is_empty() {
            None
        } else {
            Some(scores.iter().sum::<f64>() / scores.len() as f64)
        }
    };
    let face = mean_for(Category::Face);
    let plate = mean_for(Category::Plate);
    let combined = match (face, plate) {
        (Some(f), Some(p)) => (f + p) / 2.0,
        (Some(f), None) => f,
        (None, Some(p)) => p,
        (None, None) => return Err(MetricsError::NoSensitiveGt),
    };
    Ok(MioffScores {
        combined,
        face,
        plate,
        per_gt,
    })
}

/// mIOFF of predictions against sensitive ground truth: mean per-instance
/// IoFF with unmatched ground truth contributing 0.
pub fn mioff(
    preds: &[PredInstance],
    gts: &[GtInstance],
    weights: &RegionWeights,
) -> Result<MioffScores, MetricsError> {
    let sensitive: Vec<GtInstance> = gts
        .iter()
        .filter(|g| g.object.category.is_sensitive())
        .cloned()
        .collect();
    if sensitive.is_empty() {
        return Err(MetricsError::NoSensitiveGt);
    }
    let matches = match_instances(preds, &sensitive, &MatchMeasure::Ioff(*weights), 0.0)?;
    mioff_from_matches(&matches, &sensitive)
}

/// All-point interpolated average precision.
///
/// Predictions are ranked by descending confidence and matched greedily to
/// unused same-frame, same-category ground truth; a best score at or above
/// `threshold` is a true positive, anything else a false positive. The
/// result is the area under the interpolated precision/recall curve.
pub fn average_precision(
    preds: &[PredInstance],
    gts: &[GtInstance],
    measure: &MatchMeasure,
    threshold: Ratio,
) -> Result<Ratio, MetricsError> {
    if gts.is_empty() {
        return Err(MetricsError::EmptyGtSet);
    }
    if preds.is_empty() {
        return Ok(0.0);
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .confidence
            .partial_cmp(&preds[a].confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut gt_used = vec![false; gts.len()];
    let mut tp_flags = Vec::with_capacity(order.len());
    for &pi in &order {
        let pred = &preds[pi];
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if gt_used[gi]
                || gt.frame_index != pred.frame_index
                || gt.object.category != pred.category
            {
                continue;
            }
            let s = measure.score(pred, gt)?;
            if s > best.map_or(f64::NEG_INFINITY, |(_, bs)| bs) {
                best = Some((gi, s));
            }
        }
        match best {
            Some((gi, s)) if s >= threshold => {
                gt_used[gi] = true;
                tp_flags.push(true);
            }
            _ => tp_flags.push(false),
        }
    }
    Ok(ap_from_flags(&tp_flags, gts.len()))
}

/// Area under the interpolated PR curve given ranked TP/FP flags.
fn ap_from_flags(tp_flags: &[bool], n_gt: usize) -> f64 {
    let n = tp_flags.len();
    let mut precision = Vec::with_capacity(n);
    let mut recall = Vec::with_capacity(n);
    let mut tp = 0usize;
    for (i, &is_tp) in tp_flags.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    // interpolate: precision envelope, monotone non-increasing from the right
    for i in (0..n.saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..n {
        if recall[i] > prev_recall {
            ap += (recall[i] - prev_recall) * precision[i];
            prev_recall = recall[i];
        }
    }
    ap
}

/// AP-style thresholded IoFF: `average_precision` with the IoFF measure at
/// threshold `tau`, averaged over the sensitive categories present in the
/// ground truth (IOFF_50 is `tau` = 0.5, IOFF_75 is `tau` = 0.75).
pub fn ioff_at(
    preds: &[PredInstance],
    gts: &[GtInstance],
    tau: Ratio,
    weights: &RegionWeights,
) -> Result<Ratio, MetricsError> {
    let measure = MatchMeasure::Ioff(*weights);
    let mut aps = Vec::new();
    for cat in [Category::Face, Category::Plate] {
        let cat_gts: Vec<GtInstance> = gts
            .iter()
            .filter(|g| g.object.category == cat)
            .cloned()
            .collect();
        if cat_gts.is_empty() {
            continue;
        }
        let cat_preds: Vec<PredInstance> = preds
            .iter()
            .filter(|p| p.category == cat)
            .cloned()
            .collect();
        aps.push(average_precision(&cat_preds, &cat_gts, &measure, tau)?);
    }
    if aps.is_empty() {
        return Err(MetricsError::NoSensitiveGt);
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

// ---------------------------------------------------------------------------
// Whole-sequence evaluation report
// ---------------------------------------------------------------------------

/// Detection AP rows for one category. `ap` is the mean over IoU thresholds
/// 0.50:0.05:0.95; `ap50`/`ap75` are the single-threshold values.
#[derive(Debug, Clone, Serialize)]
pub struct CategoryAp {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FrameScore {
    pub frame_index: u32,
    pub mioff: f64,
    pub sensitive_gt: usize,
    pub matched: usize,
}

/// The full evaluation report for one (ground truth, prediction) pair.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub per_category: BTreeMap<String, CategoryAp>,
    pub mean_ap: f64,
    pub mean_ap50: f64,
    pub mean_ap75: f64,
    pub mioff: f64,
    pub face_mioff: Option<f64>,
    pub plate_mioff: Option<f64>,
    pub ioff50: f64,
    pub ioff75: f64,
    pub per_frame: Vec<FrameScore>,
    /// Mean annotated objects per frame (derived statistic).
    pub density: f64,
    pub weights: RegionWeights,
}

/// Flattens a ground-truth sequence into instances.
pub fn gt_instances(gt: &SequenceAnnotation) -> Vec<GtInstance> {
    gt.frames
        .iter()
        .flat_map(|f| {
            f.objects.iter().map(move |o| GtInstance {
                frame_index: f.frame_index,
                object: o.clone(),
            })
        })
        .collect()
}

/// Flattens a prediction set into scored instances. Sensitive predictions
/// without their own mask fall back to the segmentation label map clipped
/// to the detection box.
pub fn pred_instances(pred: &PredictionSet) -> Result<Vec<PredInstance>, MetricsError> {
    let mut out = Vec::new();
    for frame in &pred.frames {
        for obj in &frame.objects {
            let confidence = obj.confidence.ok_or(MetricsError::MissingConfidence)?;
            let mask = match (&obj.mask, obj.category.is_sensitive()) {
                (Some(m), _) => Some(m.clone()),
                (None, true) => {
                    let label = frame
                        .seg
                        .by_category(obj.category)
                        .expect("sensitive category has a label map");
                    let clipped = label
                        .intersect(&obj.bbox.rasterize(pred.width, pred.height))
                        .map_err(GeometryError::from)?;
                    Some(clipped)
                }
                (None, false) => None,
            };
            out.push(PredInstance {
                frame_index: frame.frame_index,
                category: obj.category,
                bbox: obj.bbox,
                mask,
                confidence,
            });
        }
    }
    Ok(out)
}

/// Evaluates a prediction set against ground truth: per-category detection
/// AP plus the mIOFF/IOFF family over sensitive instances.
pub fn evaluate(
    gt: &SequenceAnnotation,
    pred: &PredictionSet,
    weights: &RegionWeights,
) -> Result<EvalReport, MetricsError> {
    let gts = gt_instances(gt);
    if gts.is_empty() {
        return Err(MetricsError::EmptyGtSet);
    }
    let preds = pred_instances(pred)?;
    evaluate_instances(gt, &preds, &gts, weights)
}

/// Evaluation core shared by document-level and pipeline-level scoring.
pub fn evaluate_instances(
    gt: &SequenceAnnotation,
    preds: &[PredInstance],
    gts: &[GtInstance],
    weights: &RegionWeights,
) -> Result<EvalReport, MetricsError> {
    let mut per_category = BTreeMap::new();
    let coco_thresholds: Vec<f64> = (0..10).map(|i| 0.5 + 0.05 * i as f64).collect();
    for cat in Category::ALL {
        let cat_gts: Vec<GtInstance> = gts
            .iter()
            .filter(|g| g.object.category == cat)
            .cloned()
            .collect();
        if cat_gts.is_empty() {
            continue;
        }
        let cat_preds: Vec<PredInstance> = preds
            .iter()
            .filter(|p| p.category == cat)
            .cloned()
            .collect();
        let ap_at = |t: f64| average_precision(&cat_preds, &cat_gts, &MatchMeasure::BoxIou, t);
        let mut sum = 0.0;
        for &t in &coco_thresholds {
            sum += ap_at(t)?;
        }
        per_category.insert(
            cat.name().to_string(),
            CategoryAp {
                ap: sum / coco_thresholds.len() as f64,
                ap50: ap_at(0.5)?,
                ap75: ap_at(0.75)?,
            },
        );
    }
    let n_cat = per_category.len().max(1) as f64;
    let mean_ap = per_category.values().map(|c| c.ap).sum::<f64>() / n_cat;
    let mean_ap50 = per_category.values().map(|c| c.ap50).sum::<f64>() / n_cat;
    let mean_ap75 = per_category.values().map(|c| c.ap75).sum::<f64>() / n_cat;

    let scores = mioff(preds, gts, weights)?;
    let ioff50 = ioff_at(preds, gts, 0.5, weights)?;
    let ioff75 = ioff_at(preds, gts, 0.75, weights)?;

    // per-frame breakdown of the sensitive scores
    let sensitive: Vec<&GtInstance> = gts
        .iter()
        .filter(|g| g.object.category.is_sensitive())
        .collect();
    let mut per_frame = Vec::new();
    for frame in &gt.frames {
        let idx_scores: Vec<f64> = sensitive
            .iter()
            .zip(&scores.per_gt)
            .filter(|(g, _)| g.frame_index == frame.frame_index)
            .map(|(_, &s)| s)
            .collect();
        if idx_scores.is_empty() {
            continue;
        }
        per_frame.push(FrameScore {
            frame_index: frame.frame_index,
            mioff: idx_scores.iter().sum::<f64>() / idx_scores.len() as f64,
            sensitive_gt: idx_scores.len(),
            matched: idx_scores.iter().filter(|&&s| s > 0.0).count(),
        });
    }

    let density = gts.len() as f64 / gt.frames.len().max(1) as f64;

    Ok(EvalReport {
        per_category,
        mean_ap,
        mean_ap50,
        mean_ap75,
        mioff: scores.combined,
        face_mioff: scores.face,
        plate_mioff: scores.plate,
        ioff50,
        ioff75,
        per_frame,
        density,
        weights: *weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annot::FaceTriMask;
    use proptest::prelude::*;

    /// Face fixture: 20-wide box over rows y0..y0+3, one tri region per row.
    fn row_face(w: u32, h: u32, x0: i64, y0: i64) -> ObjectInstance {
        let above = PixelMask::from_rect(w, h, x0, y0, x0 + 20, y0 + 1);
        let mid = PixelMask::from_rect(w, h, x0, y0 + 1, x0 + 20, y0 + 2);
        let below = PixelMask::from_rect(w, h, x0, y0 + 2, x0 + 20, y0 + 3);
        let full = PixelMask::from_rect(w, h, x0, y0, x0 + 20, y0 + 3);
        let mut obj = ObjectInstance::new(
            Category::Face,
            BBox::new(x0 as f64, y0 as f64, x0 as f64 + 20.0, y0 as f64 + 3.0).unwrap(),
        );
        obj.mask = Some(full);
        obj.tri = Some(FaceTriMask { above, mid, below });
        obj
    }

    /// Pixel-count oracle for the face IoFF: raw loops, no mask ops.
    fn ioff_face_oracle(pred: &PixelMask, gt: &ObjectInstance, w: &RegionWeights) -> f64 {
        let tri = gt.tri.as_ref().unwrap();
        let weights = [w.above, w.mid, w.below];
        let bx0 = gt.bbox.x_min.floor() as i64;
        let bx1 = gt.bbox.x_max.ceil() as i64;
        let mut total = 0.0;
        let mut used = 0.0;
        for (region, wi) in tri.regions().into_iter().zip(weights) {
            let Some((_, ry0, _, ry1)) = region.bounds() else { continue };
            let (mut inter, mut denom) = (0u64, 0u64);
            for y in 0..pred.height() {
                for x in 0..pred.width() {
                    let in_gt = region.get(x, y);
                    let in_pred = pred.get(x, y);
                    let in_band = (x as i64) >= bx0 && (x as i64) < bx1 && y >= ry0 && y <= ry1;
                    if in_pred && in_gt {
                        inter += 1;
                    }
                    if (in_pred && in_band) || in_gt {
                        denom += 1;
                    }
                }
            }
            total += wi * (inter as f64 / denom as f64);
            used += wi;
        }
        total / used
    }

    #[test]
    fn ioff_perfect_face_is_one() {
        let gt = row_face(32, 16, 4, 4);
        let pred = gt.mask.clone().unwrap();
        let v = ioff(&pred, &gt, &RegionWeights::default()).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn ioff_constructed_region_ious_weight_to_0_6() {
        // region IoUs 16/20, 12/20, 8/20 = (0.8, 0.6, 0.4); weighted 0.6
        let gt = row_face(32, 16, 4, 4);
        let mut pred = PixelMask::new(32, 16);
        for x in 0..16 {
            pred.set(4 + x, 4, true);
        }
        for x in 0..12 {
            pred.set(4 + x, 5, true);
        }
        for x in 0..8 {
            pred.set(4 + x, 6, true);
        }
        let w = RegionWeights::default();
        let v = ioff(&pred, &gt, &w).unwrap();
        let oracle = ioff_face_oracle(&pred, &gt, &w);
        assert!((v - oracle).abs() < 1e-12, "impl {v} vs oracle {oracle}");
        assert!((v - 0.6).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn ioff_plate_branch_is_plain_iou() {
        // inter 7, union 10
        let mut gt =
            ObjectInstance::new(Category::Plate, BBox::new(0.0, 0.0, 10.0, 1.0).unwrap());
        gt.mask = Some(PixelMask::from_rect(16, 4, 0, 0, 10, 1));
        let pred = PixelMask::from_rect(16, 4, 0, 0, 7, 1);
        let v = ioff(&pred, &gt, &RegionWeights::default()).unwrap();
        assert!((v - 0.7).abs() < 1e-12);
    }

    #[test]
    fn ioff_weight_degeneracy_mid_only() {
        let gt = row_face(32, 16, 4, 4);
        let mut pred = PixelMask::new(32, 16);
        for x in 0..10 {
            pred.set(4 + x, 5, true); // half of mid row only
        }
        let w = RegionWeights::new(0.0, 1.0, 0.0).unwrap();
        let v = ioff(&pred, &gt, &w).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ioff_rejects_carrier() {
        let gt = ObjectInstance::new(Category::Car, BBox::new(0.0, 0.0, 4.0, 4.0).unwrap());
        let pred = PixelMask::new(8, 8);
        assert!(matches!(
            ioff(&pred, &gt, &RegionWeights::default()),
            Err(MetricsError::NotSensitive(Category::Car))
        ));
    }

    #[test]
    fn coverage_ratio_cases() {
        let gt = PixelMask::from_rect(8, 8, 0, 0, 4, 4);
        assert_eq!(coverage_ratio(&gt, &gt).unwrap(), 1.0);
        assert_eq!(coverage_ratio(&PixelMask::new(8, 8), &gt).unwrap(), 0.0);
        let half = PixelMask::from_rect(8, 8, 0, 0, 4, 2);
        assert_eq!(coverage_ratio(&half, &gt).unwrap(), 0.5);
        assert!(matches!(
            coverage_ratio(&gt, &PixelMask::new(8, 8)),
            Err(MetricsError::EmptyGtRegion)
        ));
    }

    fn gt_box(frame: u32, x: f64) -> GtInstance {
        GtInstance {
            frame_index: frame,
            object: ObjectInstance::new(
                Category::Face,
                BBox::new(x, 0.0, x + 10.0, 10.0).unwrap(),
            ),
        }
    }

    fn pred_box(frame: u32, x: f64, conf: f64) -> PredInstance {
        PredInstance {
            frame_index: frame,
            category: Category::Face,
            bbox: BBox::new(x, 0.0, x + 10.0, 10.0).unwrap(),
            mask: None,
            confidence: conf,
        }
    }

    /// Brute-force PR enumeration oracle: recompute the greedy matching for
    /// every rank prefix from scratch, then integrate the interpolated curve.
    fn ap_oracle(preds: &[PredInstance], gts: &[GtInstance], threshold: f64) -> f64 {
        let mut order: Vec<usize> = (0..preds.len()).collect();
        order.sort_by(|&a, &b| {
            preds[b]
                .confidence
                .partial_cmp(&preds[a].confidence)
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut points = Vec::new(); // (recall, precision) per prefix
        for k in 1..=order.len() {
            let mut used = vec![false; gts.len()];
            let mut tp = 0;
            for &pi in &order[..k] {
                let mut best: Option<(usize, f64)> = None;
                for (gi, gt) in gts.iter().enumerate() {
                    if used[gi]
                        || gt.frame_index != preds[pi].frame_index
                        || gt.object.category != preds[pi].category
                    {
                        continue;
                    }
                    let s = crate::geometry::box_iou(&preds[pi].bbox, &gt.object.bbox);
                    if s > best.map_or(f64::NEG_INFINITY, |(_, b)| b) {
                        best = Some((gi, s));
                    }
                }
                if let Some((gi, s)) = best {
                    if s >= threshold {
                        used[gi] = true;
                        tp += 1;
                    }
                }
            }
            points.push((tp as f64 / gts.len() as f64, tp as f64 / k as f64));
        }
        let mut ap = 0.0;
        let mut prev_r = 0.0;
        for i in 0..points.len() {
            let (r, _) = points[i];
            if r > prev_r {
                let p_interp = points[i..]
                    .iter()
                    .filter(|(r2, _)| *r2 >= r)
                    .map(|(_, p)| *p)
                    .fold(0.0f64, f64::max);
                ap += (r - prev_r) * p_interp;
                prev_r = r;
            }
        }
        ap
    }

    #[test]
    fn ap_perfect_and_empty() {
        let gts = vec![gt_box(0, 0.0), gt_box(0, 20.0)];
        let preds = vec![pred_box(0, 0.0, 0.9), pred_box(0, 20.0, 0.8)];
        let ap = average_precision(&preds, &gts, &MatchMeasure::BoxIou, 0.5).unwrap();
        assert_eq!(ap, 1.0);
        let none: Vec<PredInstance> = vec![];
        assert_eq!(
            average_precision(&none, &gts, &MatchMeasure::BoxIou, 0.5).unwrap(),
            0.0
        );
        let no_gt: Vec<GtInstance> = vec![];
        assert!(matches!(
            average_precision(&preds, &no_gt, &MatchMeasure::BoxIou, 0.5),
            Err(MetricsError::EmptyGtSet)
        ));
    }

    #[test]
    fn ap_tp_fp_tp_matches_oracle() {
        // TP(0.9), FP(0.8), TP(0.7) over 2 GT.
        let gts = vec![gt_box(0, 0.0), gt_box(0, 30.0)];
        let preds = vec![
            pred_box(0, 0.0, 0.9),  // TP
            pred_box(0, 60.0, 0.8), // FP (no gt nearby)
            pred_box(0, 30.0, 0.7), // TP
        ];
        let expected = ap_oracle(&preds, &gts, 0.5);
        assert!((expected - 5.0 / 6.0).abs() < 1e-12, "oracle {expected}");
        let ap = average_precision(&preds, &gts, &MatchMeasure::BoxIou, 0.5).unwrap();
        assert!((ap - expected).abs() < 1e-12, "ap {ap} oracle {expected}");
    }

    #[test]
    fn mioff_perfect_half_and_none() {
        let w = RegionWeights::default();
        let mk_gt = |frame: u32, x: i64| GtInstance {
            frame_index: frame,
            object: row_face(64, 16, x, 4),
        };
        let mk_pred = |frame: u32, x: i64, conf: f64| PredInstance {
            frame_index: frame,
            category: Category::Face,
            bbox: BBox::new(x as f64, 4.0, x as f64 + 20.0, 7.0).unwrap(),
            mask: Some(PixelMask::from_rect(64, 16, x, 4, x + 20, 7)),
            confidence: conf,
        };
        let gts = vec![mk_gt(0, 0), mk_gt(0, 30)];
        let perfect = vec![mk_pred(0, 0, 0.9), mk_pred(0, 30, 0.8)];
        assert_eq!(mioff(&perfect, &gts, &w).unwrap().combined, 1.0);

        let half = vec![mk_pred(0, 0, 0.9)];
        assert_eq!(mioff(&half, &gts, &w).unwrap().combined, 0.5);

        let none: Vec<PredInstance> = vec![];
        assert_eq!(mioff(&none, &gts, &w).unwrap().combined, 0.0);
    }

    #[test]
    fn ioff_at_thresholding() {
        // all masks with IoFF exactly 0.6 -> 1.0 at tau 0.5, 0.0 at tau 0.75
        let gt = row_face(32, 16, 4, 4);
        let mut pred = PixelMask::new(32, 16);
        for x in 0..16 {
            pred.set(4 + x, 4, true);
        }
        for x in 0..12 {
            pred.set(4 + x, 5, true);
        }
        for x in 0..8 {
            pred.set(4 + x, 6, true);
        }
        let gts = vec![GtInstance {
            frame_index: 0,
            object: gt,
        }];
        let preds = vec![PredInstance {
            frame_index: 0,
            category: Category::Face,
            bbox: BBox::new(4.0, 4.0, 24.0, 7.0).unwrap(),
            mask: Some(pred),
            confidence: 0.9,
        }];
        let w = RegionWeights::default();
        assert_eq!(ioff_at(&preds, &gts, 0.5, &w).unwrap(), 1.0);
        assert_eq!(ioff_at(&preds, &gts, 0.75, &w).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn ioff_monotone_in_correct_pixels(seed in 0u64..200) {
            // adding correctly-overlapping pixels never decreases IoFF
            let gt = row_face(32, 16, 4, 4);
            let w = RegionWeights::default();
            let mut state = seed.wrapping_mul(2654435761).wrapping_add(1);
            let mut rnd = move || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 33) as u32
            };
            let full = gt.mask.clone().unwrap();
            let mut pred = PixelMask::from_fn(32, 16, |x, y| full.get(x, y) && rnd() % 2 == 0);
            let mut prev = ioff(&pred, &gt, &w).unwrap();
            // add missing gt pixels one at a time
            let missing: Vec<(u32, u32)> = full.iter_set().filter(|&(x, y)| !pred.get(x, y)).collect();
            for (x, y) in missing {
                pred.set(x, y, true);
                let next = ioff(&pred, &gt, &w).unwrap();
                prop_assert!(next + 1e-12 >= prev, "IoFF decreased: {prev} -> {next}");
                prev = next;
            }
            prop_assert!((prev - 1.0).abs() < 1e-12);
        }

        #[test]
        fn ap_invariant_under_monotone_confidence_transform(seed in 0u64..200) {
            let mut state = seed.wrapping_mul(97).wrapping_add(13);
            let mut rnd = move || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 33) as f64) / (u32::MAX as f64)
            };
            let n_gt = 2 + (rnd() * 4.0) as u32;
            let gts: Vec<GtInstance> = (0..n_gt).map(|i| gt_box(0, i as f64 * 25.0)).collect();
            let n_pred = 1 + (rnd() * 6.0) as usize;
            let preds: Vec<PredInstance> = (0..n_pred)
                .map(|_| {
                    let x = rnd() * 100.0;
                    pred_box(0, x, 0.1 + rnd() * 0.8)
                })
                .collect();
            let base = average_precision(&preds, &gts, &MatchMeasure::BoxIou, 0.5).unwrap();
            // strictly monotone transform: c -> 0.2 + c^3 * 0.7
            let transformed: Vec<PredInstance> = preds
                .iter()
                .map(|p| PredInstance { confidence: 0.2 + p.confidence.powi(3) * 0.7, ..p.clone() })
                .collect();
            let after = average_precision(&transformed, &gts, &MatchMeasure::BoxIou, 0.5).unwrap();
            prop_assert!((base - after).abs() < 1e-12);
        }

        #[test]
        fn ioff_at_non_increasing_in_tau(seed in 0u64..100) {
            let mut state = seed.wrapping_mul(31).wrapping_add(7);
            let mut rnd = move || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 33) as f64) / (u32::MAX as f64)
            };
            let gt = row_face(64, 16, 4, 4);
            let gts = vec![GtInstance { frame_index: 0, object: gt.clone() }];
            // randomly degraded prediction mask
            let full = gt.mask.clone().unwrap();
            let keep = 0.3 + rnd() * 0.7;
            let pred_mask = PixelMask::from_fn(64, 16, |x, y| full.get(x, y) && rnd() < keep);
            let preds = vec![PredInstance {
                frame_index: 0,
                category: Category::Face,
                bbox: gt.bbox,
                mask: Some(pred_mask),
                confidence: 0.9,
            }];
            let w = RegionWeights::default();
            let mut prev = f64::INFINITY;
            for tau in [0.1, 0.3, 0.5, 0.7, 0.9] {
                let v = ioff_at(&preds, &gts, tau, &w).unwrap();
                prop_assert!(v <= prev + 1e-12);
                prev = v;
            }
        }
    }
}
