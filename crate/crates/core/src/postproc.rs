//! Joint desensitization post-processing.
//!
//! DJ (detection join) keeps a sensitive detection when its confidence is
//! high or when it sits inside a carrier detection of the matching category
//! (face in pedestrian, plate in car). DSJ (detection-segmentation join)
//! fuses the surviving detections with the segmentation label map: a
//! connected component is accepted when the IoU between its minimum
//! bounding box and a detection box is strictly greater than the threshold.
//! Everything rejected lands in an audit list with a reason code.

use serde::{Deserialize, Serialize};

use crate::annot::{BBox, Category, PredictionFrame, SegLabelMap};
use crate::geometry::{self, Ratio};
use crate::mask::PixelMask;

/// Which overlap measure DJ uses for the carrier check. Containment is the
/// default: a face box inside a person box has near-zero symmetric IoU, so
/// the literal IoU reading would reject virtually all true pairs. The
/// symmetric variant is kept for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DjMeasure {
    Containment,
    SymmetricIou,
}

/// DSJ fusion rule. `MinBboxIou` is the default; `DualConfidence` accepts a
/// (component, detection) pair when both the detection confidence and the
/// component-vs-box mask IoU are high.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DsjMethod {
    MinBboxIou,
    DualConfidence,
}

/// Thresholds of the joint desensitization stages.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JointConfig {
    /// Containment (or IoU) above which a carrier rescues a sensitive box.
    pub dj_containment_threshold: Ratio,
    /// Confidence at or above which a sensitive detection passes DJ alone.
    pub dj_high_confidence: Ratio,
    pub dj_measure: DjMeasure,
    pub dsj_method: DsjMethod,
    /// The fusion gate: min-bbox IoU must be strictly greater than this.
    pub dsj_iou_threshold: Ratio,
    pub dual_det_conf: Ratio,
    pub dual_seg_iou: Ratio,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            dj_containment_threshold: 0.5,
            dj_high_confidence: 0.7,
            dj_measure: DjMeasure::Containment,
            dsj_method: DsjMethod::MinBboxIou,
            dsj_iou_threshold: 0.5,
            dual_det_conf: 0.7,
            dual_seg_iou: 0.7,
        }
    }
}

/// A scored box detection, the input unit of the joint filters.
#[derive(Debug, Clone)]
pub struct Detection {
    pub category: Category,
    pub bbox: BBox,
    pub confidence: f64,
}

/// An accepted desensitization region: the pixels to redact, the detection
/// box that vouched for them, and its confidence.
#[derive(Debug, Clone)]
pub struct DesensRegion {
    pub category: Category,
    pub mask: PixelMask,
    pub source_box: BBox,
    pub confidence: f64,
}

/// Why a detection or component was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RejectReason {
    #[serde(rename = "no-carrier")]
    NoCarrier,
    #[serde(rename = "low-iou")]
    LowIou,
    #[serde(rename = "unpaired-component")]
    UnpairedComponent,
    #[serde(rename = "low-confidence")]
    LowConfidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RejectKind {
    #[serde(rename = "detection")]
    Detection,
    #[serde(rename = "component")]
    Component,
}

/// One audit entry for a rejected detection or segmentation component.
#[derive(Debug, Clone, Serialize)]
pub struct Rejection {
    pub kind: RejectKind,
    pub category: Category,
    #[serde(serialize_with = "ser_bbox")]
    pub bbox: BBox,
    pub reason: RejectReason,
}

fn ser_bbox<S: serde::Serializer>(b: &BBox, s: S) -> Result<S::Ok, S::Error> {
    [b.x_min, b.y_min, b.x_max, b.y_max].serialize(s)
}

impl Serialize for Category {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

/// DJ: filters sensitive detections by the local-global rule.
///
/// A sensitive detection is kept iff its confidence is at least
/// `dj_high_confidence`, or some carrier box of the matching category
/// overlaps it above `dj_containment_threshold`. Carriers pass through
/// untouched and are never rejected.
pub fn dj_filter(detections: &[Detection], cfg: &JointConfig) -> (Vec<Detection>, Vec<Rejection>) {
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for det in detections {
        if !det.category.is_sensitive() {
            continue;
        }
        if det.confidence >= cfg.dj_high_confidence {
            kept.push(det.clone());
            continue;
        }
        let carrier_cat = det.category.carrier().expect("sensitive has a carrier");
        let rescued = detections
            .iter()
            .filter(|c| c.category == carrier_cat)
            .any(|c| {
                let overlap = match cfg.dj_measure {
                    DjMeasure::Containment => geometry::containment(&det.bbox, &c.bbox),
                    DjMeasure::SymmetricIou => geometry::box_iou(&det.bbox, &c.bbox),
                };
                overlap > cfg.dj_containment_threshold
            });
        if rescued {
            kept.push(det.clone());
        } else {
            rejected.push(Rejection {
                kind: RejectKind::Detection,
                category: det.category,
                bbox: det.bbox,
                reason: RejectReason::NoCarrier,
            });
        }
    }
    (kept, rejected)
}

/// DSJ: fuses DJ-filtered sensitive detections with the segmentation label
/// map, per category.
///
/// With `MinBboxIou`, components pair one-to-one with detections greedily
/// by descending min-bbox IoU; a pair is accepted only when the IoU is
/// strictly above `dsj_iou_threshold`. With `DualConfidence`, a pair is
/// accepted when the detection confidence exceeds `dual_det_conf` and the
/// component-vs-box mask IoU exceeds `dual_seg_iou`. Unpaired components
/// and detections are rejected into the audit list.
pub fn dsj_fuse(
    detections: &[Detection],
    seg: &SegLabelMap,
    cfg: &JointConfig,
) -> (Vec<DesensRegion>, Vec<Rejection>) {
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for category in [Category::Face, Category::Plate] {
        let label = seg.by_category(category).expect("sensitive label map");
        let comps = geometry::connected_components(label);
        let comp_boxes: Vec<BBox> = comps
            .iter()
            .map(|c| geometry::min_bbox(c).expect("components are nonempty"))
            .collect();
        let dets: Vec<&Detection> = detections
            .iter()
            .filter(|d| d.category == category)
            .collect();

        // score every overlapping (component, detection) pair
        let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
        for (ci, cb) in comp_boxes.iter().enumerate() {
            for (di, det) in dets.iter().enumerate() {
                let score = match cfg.dsj_method {
                    DsjMethod::MinBboxIou => geometry::box_iou(cb, &det.bbox),
                    DsjMethod::DualConfidence => {
                        let box_mask = det.bbox.rasterize(label.width(), label.height());
                        if box_mask.is_empty() {
                            0.0
                        } else {
                            geometry::mask_iou(&comps[ci], &box_mask).unwrap_or(0.0)
                        }
                    }
                };
                if score > 0.0 {
                    pairs.push((ci, di, score));
                }
            }
        }
        pairs.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| (a.0, a.1).cmp(&(b.0, b.1)))
        });

        let mut comp_used = vec![false; comps.len()];
        let mut det_used = vec![false; dets.len()];
        // best overlap seen per entity, for audit reasons
        let mut comp_best = vec![0.0f64; comps.len()];
        let mut det_best = vec![0.0f64; dets.len()];
        for &(ci, di, score) in &pairs {
            comp_best[ci] = comp_best[ci].max(score);
            det_best[di] = det_best[di].max(score);
            if comp_used[ci] || det_used[di] {
                continue;
            }
            let ok = match cfg.dsj_method {
                DsjMethod::MinBboxIou => score > cfg.dsj_iou_threshold,
                DsjMethod::DualConfidence => {
                    score > cfg.dual_seg_iou && dets[di].confidence > cfg.dual_det_conf
                }
            };
            if ok {
                comp_used[ci] = true;
                det_used[di] = true;
                accepted.push(DesensRegion {
                    category,
                    mask: comps[ci].clone(),
                    source_box: dets[di].bbox,
                    confidence: dets[di].confidence,
                });
            }
        }

        for (ci, used) in comp_used.iter().enumerate() {
            if *used {
                continue;
            }
            let reason = reject_reason(cfg, comp_best[ci], None);
            rejected.push(Rejection {
                kind: RejectKind::Component,
                category,
                bbox: comp_boxes[ci],
                reason,
            });
        }
        for (di, used) in det_used.iter().enumerate() {
            if *used {
                continue;
            }
            let reason = reject_reason(cfg, det_best[di], Some(dets[di].confidence));
            rejected.push(Rejection {
                kind: RejectKind::Detection,
                category,
                bbox: dets[di].bbox,
                reason,
            });
        }
    }
    (accepted, rejected)
}

fn reject_reason(cfg: &JointConfig, best_overlap: f64, confidence: Option<f64>) -> RejectReason {
    if best_overlap == 0.0 {
        return RejectReason::UnpairedComponent;
    }
    match cfg.dsj_method {
        DsjMethod::MinBboxIou => RejectReason::LowIou,
        DsjMethod::DualConfidence => {
            if best_overlap <= cfg.dual_seg_iou {
                RejectReason::LowIou
            } else if confidence.is_some_and(|c| c <= cfg.dual_det_conf) {
                RejectReason::LowConfidence
            } else {
                RejectReason::LowIou
            }
        }
    }
}

/// Accepted regions and the audit list for one frame.
#[derive(Debug, Clone)]
pub struct FrameOutcome {
    pub accepted: Vec<DesensRegion>,
    pub rejected: Vec<Rejection>,
}

/// Runs the DJ → DSJ composition over one prediction frame.
pub fn desensitize_frame(frame: &PredictionFrame, cfg: &JointConfig) -> FrameOutcome {
    let detections: Vec<Detection> = frame
        .objects
        .iter()
        .map(|o| Detection {
            category: o.category,
            bbox: o.bbox,
            confidence: o.confidence.unwrap_or(0.0),
        })
        .collect();
    let (kept, mut rejected) = dj_filter(&detections, cfg);
    let (accepted, dsj_rejected) = dsj_fuse(&kept, &frame.seg, cfg);
    rejected.extend(dsj_rejected);
    FrameOutcome { accepted, rejected }
}
