//! The DJ → DSJ → KFJ composition over a prediction sequence.
//!
//! Each stage can be toggled for ablation runs. With DJ off, sensitive
//! detections pass only the plain confidence threshold. With DSJ off, a
//! region's mask is the label map clipped to the detection box (the box
//! itself when the clip is empty). With KFJ off, regions pass through
//! untracked.

use serde::{Deserialize, Serialize};

use crate::annot::{Category, PredictionFrame, PredictionSet};
use crate::metrics::PredInstance;
use crate::postproc::{
    self, Detection, DesensRegion, JointConfig, RejectKind, RejectReason, Rejection,
};
use crate::tracker::{SmoothedRegion, TrackError, Tracker, TrackerConfig};

/// Which joint stages run, and their thresholds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub use_dj: bool,
    pub use_dsj: bool,
    pub use_kfj: bool,
    pub joint: JointConfig,
    pub tracker: TrackerConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            use_dj: true,
            use_dsj: true,
            use_kfj: true,
            joint: JointConfig::default(),
            tracker: TrackerConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Baseline: no joint stages at all.
    pub fn baseline() -> Self {
        PipelineConfig {
            use_dj: false,
            use_dsj: false,
            use_kfj: false,
            ..PipelineConfig::default()
        }
    }

    /// Enables stages by short ablation name: any of "dj", "dsj", "kfj".
    pub fn with_stages(dj: bool, dsj: bool, kfj: bool) -> Self {
        PipelineConfig {
            use_dj: dj,
            use_dsj: dsj,
            use_kfj: kfj,
            ..PipelineConfig::default()
        }
    }

    pub fn stage_label(&self) -> String {
        let mut parts = Vec::new();
        if self.use_dj {
            parts.push("DJ");
        }
        if self.use_dsj {
            parts.push("DSJ");
        }
        if self.use_kfj {
            parts.push("KFJ");
        }
        if parts.is_empty() {
            "baseline".to_string()
        } else {
            parts.join("&")
        }
    }
}

/// Regions accepted for one frame.
#[derive(Debug, Clone)]
pub struct FrameRegions {
    pub frame_index: u32,
    pub regions: Vec<SmoothedRegion>,
}

/// One audit entry: a rejection pinned to its frame.
#[derive(Debug, Clone, Serialize)]
pub struct AuditEntry {
    pub frame_index: u32,
    #[serde(flatten)]
    pub rejection: Rejection,
}

/// Output of a pipeline run over a whole sequence.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub frames: Vec<FrameRegions>,
    pub audit: Vec<AuditEntry>,
}

/// Runs the configured stages over every frame of a prediction set.
pub fn run_pipeline(pred: &PredictionSet, cfg: &PipelineConfig) -> Result<PipelineRun, TrackError> {
    let mut tracker = Tracker::new(cfg.tracker, pred.width, pred.height);
    let mut frames = Vec::with_capacity(pred.frames.len());
    let mut audit = Vec::new();
    let mut next_region_id = 0u32;

    for frame in &pred.frames {
        let (regions, rejections) = frame_regions(frame, pred.width, pred.height, cfg);
        for rejection in rejections {
            audit.push(AuditEntry {
                frame_index: frame.frame_index,
                rejection,
            });
        }
        let smoothed = if cfg.use_kfj {
            tracker.step_frame(frame.frame_index, &regions)?
        } else {
            regions
                .into_iter()
                .map(|region| {
                    let id = next_region_id;
                    next_region_id += 1;
                    SmoothedRegion {
                        region,
                        track_id: id,
                        coasted: false,
                    }
                })
                .collect()
        };
        frames.push(FrameRegions {
            frame_index: frame.frame_index,
            regions: smoothed,
        });
    }
    Ok(PipelineRun { frames, audit })
}

/// DJ/DSJ stage for one frame, before tracking.
fn frame_regions(
    frame: &PredictionFrame,
    width: u32,
    height: u32,
    cfg: &PipelineConfig,
) -> (Vec<DesensRegion>, Vec<Rejection>) {
    let detections: Vec<Detection> = frame
        .objects
        .iter()
        .map(|o| Detection {
            category: o.category,
            bbox: o.bbox,
            confidence: o.confidence.unwrap_or(0.0),
        })
        .collect();

    let (kept, mut rejected) = if cfg.use_dj {
        postproc::dj_filter(&detections, &cfg.joint)
    } else {
        // plain detector threshold
        let mut kept = Vec::new();
        let mut rejected = Vec::new();
        for det in &detections {
            if !det.category.is_sensitive() {
                continue;
            }
            if det.confidence >= cfg.joint.dj_high_confidence {
                kept.push(det.clone());
            } else {
                rejected.push(Rejection {
                    kind: RejectKind::Detection,
                    category: det.category,
                    bbox: det.bbox,
                    reason: RejectReason::LowConfidence,
                });
            }
        }
        (kept, rejected)
    };

    let regions = if cfg.use_dsj {
        let (accepted, dsj_rejected) = postproc::dsj_fuse(&kept, &frame.seg, &cfg.joint);
        rejected.extend(dsj_rejected);
        accepted
    } else {
        // detector-driven regions: label map clipped to the box, the box
        // itself when the clip is empty
        let mut regions = Vec::new();
        for det in &kept {
            let box_mask = det.bbox.rasterize(width, height);
            if box_mask.is_empty() {
                continue;
            }
            let label = frame
                .seg
                .by_category(det.category)
                .expect("sensitive label map");
            let clipped = label.intersect(&box_mask).expect("frame-sized masks");
            let mask = if clipped.is_empty() { box_mask } else { clipped };
            regions.push(DesensRegion {
                category: det.category,
                mask,
                source_box: det.bbox,
                confidence: det.confidence,
            });
        }
        regions
    };
    (regions, rejected)
}

/// Flattens a run into scored instances for the metric ops.
pub fn run_instances(run: &PipelineRun) -> Vec<PredInstance> {
    run.frames
        .iter()
        .flat_map(|f| {
            f.regions.iter().map(move |r| PredInstance {
                frame_index: f.frame_index,
                category: r.region.category,
                bbox: r.region.source_box,
                mask: Some(r.region.mask.clone()),
                confidence: r.region.confidence,
            })
        })
        .collect()
}

/// Serializable view of a run (regions as RLE, audit inline), used by the
/// CLI report writer.
pub fn run_report(run: &PipelineRun) -> serde_json::Value {
    #[derive(Serialize)]
    struct RegionDoc {
        category: Category,
        bbox: [f64; 4],
        confidence: f64,
        track_id: u32,
        coasted: bool,
        mask_rle: Vec<u64>,
    }
    #[derive(Serialize)]
    struct FrameDoc {
        frame_index: u32,
        regions: Vec<RegionDoc>,
    }
    let frames: Vec<FrameDoc> = run
        .frames
        .iter()
        .map(|f| FrameDoc {
            frame_index: f.frame_index,
            regions: f
                .regions
                .iter()
                .map(|r| RegionDoc {
                    category: r.region.category,
                    bbox: [
                        r.region.source_box.x_min,
                        r.region.source_box.y_min,
                        r.region.source_box.x_max,
                        r.region.source_box.y_max,
                    ],
                    confidence: r.region.confidence,
                    track_id: r.track_id,
                    coasted: r.coasted,
                    mask_rle: r.region.mask.to_runs(),
                })
                .collect(),
        })
        .collect();
    serde_json::json!({
        "frames": frames,
        "audit": run.audit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annot::{BBox, ObjectInstance, SegLabelMap};
    use crate::mask::PixelMask;

    fn frame_with_face(frame_index: u32, x: i64, conf: f64) -> PredictionFrame {
        let bbox = BBox::new(x as f64, 10.0, x as f64 + 10.0, 20.0).unwrap();
        let mut face = ObjectInstance::new(Category::Face, bbox);
        face.confidence = Some(conf);
        let mut person = ObjectInstance::new(
            Category::Pedestrian,
            BBox::new(x as f64 - 2.0, 8.0, x as f64 + 12.0, 40.0).unwrap(),
        );
        person.confidence = Some(0.9);
        let seg_face = PixelMask::from_rect(64, 48, x, 10, x + 10, 20);
        PredictionFrame {
            frame_index,
            image_path: None,
            objects: vec![face, person],
            seg: SegLabelMap {
                face: seg_face,
                plate: PixelMask::new(64, 48),
            },
        }
    }

    fn pred_set(frames: Vec<PredictionFrame>) -> PredictionSet {
        PredictionSet {
            sequence_id: "t".into(),
            width: 64,
            height: 48,
            frames,
        }
    }

    #[test]
    fn full_pipeline_accepts_supported_detection() {
        let pred = pred_set(vec![frame_with_face(0, 20, 0.9)]);
        let run = run_pipeline(&pred, &PipelineConfig::default()).unwrap();
        assert_eq!(run.frames[0].regions.len(), 1);
        assert!(!run.frames[0].regions[0].coasted);
    }

    #[test]
    fn baseline_drops_low_confidence_dj_rescues_it() {
        let pred = pred_set(vec![frame_with_face(0, 20, 0.5)]);
        let baseline = run_pipeline(&pred, &PipelineConfig::baseline()).unwrap();
        assert!(baseline.frames[0].regions.is_empty());
        assert_eq!(
            baseline.audit[0].rejection.reason,
            RejectReason::LowConfidence
        );

        let dj = run_pipeline(&pred, &PipelineConfig::with_stages(true, false, false)).unwrap();
        assert_eq!(dj.frames[0].regions.len(), 1);
    }

    #[test]
    fn dsj_off_clips_label_map_to_box() {
        // label map wider than the detection: clip without DSJ
        let mut frame = frame_with_face(0, 20, 0.9);
        frame.seg.face = PixelMask::from_rect(64, 48, 15, 10, 35, 20);
        let pred = pred_set(vec![frame]);
        let no_dsj = run_pipeline(&pred, &PipelineConfig::with_stages(true, false, true)).unwrap();
        let clipped = &no_dsj.frames[0].regions[0].region.mask;
        assert_eq!(clipped.count_ones(), 100); // 10x10 box clip

        let with_dsj = run_pipeline(&pred, &PipelineConfig::default()).unwrap();
        // min-bbox IoU of the wide component vs the 10x10 box is 0.5 < strict
        assert!(with_dsj.frames[0].regions.is_empty());
    }

    #[test]
    fn kfj_coasts_the_gap() {
        let mut frames = vec![
            frame_with_face(0, 20, 0.9),
            frame_with_face(1, 22, 0.9),
            frame_with_face(2, 24, 0.9),
        ];
        // frame 3: nothing detected
        frames.push(PredictionFrame {
            frame_index: 3,
            image_path: None,
            objects: vec![],
            seg: SegLabelMap::empty(64, 48),
        });
        let pred = pred_set(frames);
        let run = run_pipeline(&pred, &PipelineConfig::default()).unwrap();
        assert_eq!(run.frames[3].regions.len(), 1);
        assert!(run.frames[3].regions[0].coasted);

        let no_kfj = run_pipeline(&pred, &PipelineConfig::with_stages(true, true, false)).unwrap();
        assert!(no_kfj.frames[3].regions.is_empty());
    }

    #[test]
    fn run_report_is_deterministic() {
        let pred = pred_set(vec![frame_with_face(0, 20, 0.9), frame_with_face(1, 22, 0.9)]);
        let cfg = PipelineConfig::default();
        let a = crate::annot::canonical_json(&run_report(&run_pipeline(&pred, &cfg).unwrap()));
        let b = crate::annot::canonical_json(&run_report(&run_pipeline(&pred, &cfg).unwrap()));
        assert_eq!(a, b);
    }
}
