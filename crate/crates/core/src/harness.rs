//! Synthetic scenario harness: deterministic scene generation, a noisy
//! detector/segmenter simulator, and the ablation runner.
//!
//! Scenes contain moving pedestrians (with an embedded elliptical face) and
//! vehicles (with an embedded plate), bouncing inside the frame. Raising
//! the object counts plays the role of copy-paste density augmentation.
//! Sensitive masks of the same category are kept non-adjacent in every
//! frame so that a perfect prediction set passes the full pipeline
//! losslessly.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annot::{
    BBox, Category, FaceTriMask, FrameAnnotation, ObjectInstance, PredictionFrame, PredictionSet,
    SegLabelMap, SequenceAnnotation,
};
use crate::mask::PixelMask;
use crate::metrics::{self, GtInstance, MetricsError, RegionWeights};
use crate::pipeline::{self, PipelineConfig};
use crate::renderer::Image;
use crate::tracker::TrackError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scene infeasible: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Parameters of a synthetic scene.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub n_pedestrians: u32,
    pub n_vehicles: u32,
    /// Per-axis speed range in pixels/frame.
    pub velocity_min: f64,
    pub velocity_max: f64,
    pub frames: u32,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 192,
            height: 144,
            n_pedestrians: 3,
            n_vehicles: 2,
            velocity_min: 1.0,
            velocity_max: 3.0,
            frames: 40,
            seed: 1,
        }
    }
}

/// Detector/segmenter error model. Everything is deterministic per seed.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Independent per-object miss probability.
    pub drop_prob: f64,
    pub center_jitter_sigma: f64,
    pub size_jitter_sigma: f64,
    /// Per-frame probability of one spurious sensitive detection, and of
    /// one orphan segmentation blob.
    pub false_positive_rate: f64,
    /// Masks get up to this many random dilation (+) or erosion (-) steps.
    pub mask_morph_radius: u32,
    /// Confidence range sampled for true detections.
    pub tp_confidence: (f64, f64),
    /// Confidence range sampled for false positives.
    pub fp_confidence: (f64, f64),
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            drop_prob: 0.1,
            center_jitter_sigma: 1.5,
            size_jitter_sigma: 0.5,
            false_positive_rate: 0.5,
            mask_morph_radius: 1,
            tp_confidence: (0.6, 1.0),
            fp_confidence: (0.1, 0.7),
            seed: 7,
        }
    }
}

impl NoiseSpec {
    /// A perfect detector: nothing dropped, nothing perturbed, confidence 1.
    pub fn noiseless() -> Self {
        NoiseSpec {
            drop_prob: 0.0,
            center_jitter_sigma: 0.0,
            size_jitter_sigma: 0.0,
            false_positive_rate: 0.0,
            mask_morph_radius: 0,
            tp_confidence: (1.0, 1.0),
            fp_confidence: (0.1, 0.7),
            seed: 0,
        }
    }
}

/// One generated scene: ground truth plus rendered frames.
#[derive(Debug, Clone)]
pub struct Scene {
    pub annotation: SequenceAnnotation,
    pub images: Vec<Image>,
}

struct Body {
    carrier: Category,
    w: f64,
    h: f64,
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    track_id: u32,
}

fn sample_bodies(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Body>, HarnessError> {
    let mut bodies = Vec::new();
    let mut next_id = 0u32;
    for i in 0..spec.n_pedestrians + spec.n_vehicles {
        let carrier = if i < spec.n_pedestrians {
            Category::Pedestrian
        } else {
            Category::Car
        };
        let (w, h) = match carrier {
            Category::Pedestrian => (
                rng.random_range(14.0..20.0f64).round(),
                rng.random_range(32.0..44.0f64).round(),
            ),
            _ => (
                rng.random_range(40.0..56.0f64).round(),
                rng.random_range(22.0..30.0f64).round(),
            ),
        };
        if w + 2.0 > spec.width as f64 || h + 2.0 > spec.height as f64 {
            return Err(HarnessError::Infeasible(format!(
                "object {w}x{h} does not fit a {}x{} frame",
                spec.width, spec.height
            )));
        }
        let speed = |rng: &mut ChaCha8Rng| {
            let v = rng.random_range(spec.velocity_min..=spec.velocity_max);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        };
        bodies.push(Body {
            carrier,
            w,
            h,
            x: rng.random_range(0.0..=(spec.width as f64 - w)),
            y: rng.random_range(0.0..=(spec.height as f64 - h)),
            vx: speed(rng),
            vy: speed(rng),
            track_id: {
                let id = next_id;
                next_id += 2; // even: carrier, odd: its sensitive object
                id
            },
        });
    }
    Ok(bodies)
}

fn step_body(body: &mut Body, width: f64, height: f64) {
    body.x += body.vx;
    body.y += body.vy;
    let max_x = width - body.w;
    let max_y = height - body.h;
    if body.x < 0.0 {
        body.x = -body.x;
        body.vx = -body.vx;
    }
    if body.x > max_x {
        body.x = 2.0 * max_x - body.x;
        body.vx = -body.vx;
    }
    if body.y < 0.0 {
        body.y = -body.y;
        body.vy = -body.vy;
    }
    if body.y > max_y {
        body.y = 2.0 * max_y - body.y;
        body.vy = -body.vy;
    }
}

/// Elliptical raster of the continuous rect `[x0, x0+w] × [y0, y0+h]`.
fn ellipse_mask(frame_w: u32, frame_h: u32, x0: f64, y0: f64, w: f64, h: f64) -> PixelMask {
    let (cx, cy) = (x0 + w / 2.0, y0 + h / 2.0);
    let (a, b) = (w / 2.0, h / 2.0);
    let px0 = x0.floor().max(0.0) as u32;
    let py0 = y0.floor().max(0.0) as u32;
    let px1 = ((x0 + w).ceil() as u32).min(frame_w);
    let py1 = ((y0 + h).ceil() as u32).min(frame_h);
    let mut m = PixelMask::new(frame_w, frame_h);
    for y in py0..py1 {
        for x in px0..px1 {
            let dx = (x as f64 + 0.5 - cx) / a;
            let dy = (y as f64 + 0.5 - cy) / b;
            if dx * dx + dy * dy <= 1.0 {
                m.set(x, y, true);
            }
        }
    }
    m
}

fn rect_mask(frame_w: u32, frame_h: u32, x0: f64, y0: f64, w: f64, h: f64) -> PixelMask {
    PixelMask::from_fn(frame_w, frame_h, |x, y| {
        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
        fx > x0 && fx < x0 + w && fy > y0 && fy < y0 + h
    })
}

/// Splits mask rows into top quarter / middle half / bottom quarter bands.
fn tri_split(mask: &PixelMask) -> Option<FaceTriMask> {
    let (_, y0, _, y1) = mask.bounds()?;
    let h = y1 - y0 + 1;
    if h < 3 {
        return None;
    }
    let quarter = ((h as f64) * 0.25).round().max(1.0) as u32;
    let t1 = y0 + quarter;
    let t2 = (y1 + 1).saturating_sub(quarter);
    if t1 >= t2 {
        return None;
    }
    let select = |lo: u32, hi: u32| {
        PixelMask::from_fn(mask.width(), mask.height(), |x, y| {
            y >= lo && y < hi && mask.get(x, y)
        })
    };
    Some(FaceTriMask {
        above: select(0, t1),
        mid: select(t1, t2),
        below: select(t2, mask.height()),
    })
}

fn sensitive_geometry(body: &Body) -> (Category, f64, f64, f64, f64) {
    match body.carrier {
        Category::Pedestrian => {
            let fw = (body.w * 0.68).max(10.0);
            let fh = (body.h * 0.28).max(11.0);
            let fx = body.x + (body.w - fw) / 2.0;
            let fy = body.y + body.h * 0.02;
            (Category::Face, fx, fy, fw, fh)
        }
        _ => {
            let pw = (body.w * 0.45).max(16.0);
            let ph = (body.h * 0.26).max(7.0);
            let px = body.x + (body.w - pw) / 2.0;
            let py = body.y + body.h * 0.66;
            (Category::Plate, px, py, pw, ph)
        }
    }
}

fn build_frame(
    spec: &SceneSpec,
    bodies: &[Body],
    frame_index: u32,
) -> Result<FrameAnnotation, HarnessError> {
    let mut objects = Vec::new();
    for body in bodies {
        let carrier_box = BBox::new(body.x, body.y, body.x + body.w, body.y + body.h)
            .and_then(|b| b.clamped(spec.width, spec.height))
            .map_err(HarnessError::Infeasible)?;
        let mut carrier = ObjectInstance::new(body.carrier, carrier_box);
        carrier.track_id = Some(body.track_id);
        objects.push(carrier);

        let (category, sx, sy, sw, sh) = sensitive_geometry(body);
        let mask = match category {
            Category::Face => ellipse_mask(spec.width, spec.height, sx, sy, sw, sh),
            _ => rect_mask(spec.width, spec.height, sx, sy, sw, sh),
        };
        let bbox = crate::geometry::min_bbox(&mask)
            .map_err(|_| HarnessError::Infeasible("sensitive mask rasterized empty".into()))?;
        let mut obj = ObjectInstance::new(category, bbox);
        obj.track_id = Some(body.track_id + 1);
        if category == Category::Face {
            let tri = tri_split(&mask)
                .ok_or_else(|| HarnessError::Infeasible("face too small for tri regions".into()))?;
            obj.tri = Some(tri);
        }
        obj.mask = Some(mask);
        objects.push(obj);
    }
    Ok(FrameAnnotation {
        frame_index,
        image_path: Some(format!("frame_{frame_index:06}.ppm")),
        objects,
    })
}

/// Same-category sensitive boxes must not touch: merged segmentation
/// components or a foreign mask inside a detection box would make even a
/// perfect prediction set lossy.
fn sensitive_masks_separated(frame: &FrameAnnotation) -> bool {
    let (w, h) = frame
        .objects
        .iter()
        .find_map(|o| o.mask.as_ref().map(|m| (m.width(), m.height())))
        .unwrap_or((1, 1));
    for cat in [Category::Face, Category::Plate] {
        let boxes: Vec<PixelMask> = frame
            .objects
            .iter()
            .filter(|o| o.category == cat && o.mask.is_some())
            .map(|o| o.bbox.rasterize(w, h))
            .collect();
        for i in 0..boxes.len() {
            for j in i + 1..boxes.len() {
                let grown = boxes[i].dilate();
                if grown.intersection_count(&boxes[j]).unwrap_or(1) > 0 {
                    return false;
                }
            }
        }
    }
    true
}

/// Generates the ground-truth sequence for a spec (no frame rendering).
///
/// Deterministic per seed. Re-rolls the whole layout when sensitive masks
/// would touch, up to a fixed attempt budget.
pub fn generate_gt(spec: &SceneSpec) -> Result<SequenceAnnotation, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    'attempt: for _ in 0..64 {
        let mut bodies = sample_bodies(spec, &mut rng)?;
        let mut frames = Vec::with_capacity(spec.frames as usize);
        for f in 0..spec.frames {
            if f > 0 {
                for body in &mut bodies {
                    step_body(body, spec.width as f64, spec.height as f64);
                }
            }
            let frame = build_frame(spec, &bodies, f)?;
            if !sensitive_masks_separated(&frame) {
                continue 'attempt;
            }
            frames.push(frame);
        }
        return Ok(SequenceAnnotation {
            sequence_id: format!("synthetic-{:016x}", spec.seed),
            width: spec.width,
            height: spec.height,
            frames,
        });
    }
    Err(HarnessError::Infeasible(
        "could not place objects without sensitive-mask contact".into(),
    ))
}

fn track_color(id: u32) -> [u8; 3] {
    let h = (id as u64)
        .wrapping_mul(0x9E3779B97F4A7C15)
        .wrapping_add(0x632BE59BD9B4E019);
    [
        (64 + (h >> 16) % 128) as u8,
        (64 + (h >> 32) % 128) as u8,
        (64 + (h >> 48) % 128) as u8,
    ]
}

/// Renders the frames of a generated sequence (background gradient,
/// carriers in per-track colors, faces and plates in fixed colors).
pub fn render_frames(annotation: &SequenceAnnotation) -> Vec<Image> {
    let (w, h) = (annotation.width, annotation.height);
    annotation
        .frames
        .iter()
        .map(|frame| {
            let mut img = Image::filled(w, h, [0, 0, 0]);
            for y in 0..h {
                for x in 0..w {
                    img.set(x, y, [(x * 255 / w.max(1)) as u8, (y * 255 / h.max(1)) as u8, 72]);
                }
            }
            for obj in &frame.objects {
                if obj.category.is_carrier() {
                    let color = track_color(obj.track_id.unwrap_or(0));
                    let m = obj.bbox.rasterize(w, h);
                    for (x, y) in m.iter_set() {
                        img.set(x, y, color);
                    }
                }
            }
            for obj in &frame.objects {
                let color = match obj.category {
                    Category::Face => [224, 172, 140],
                    Category::Plate => [235, 235, 250],
                    _ => continue,
                };
                if let Some(mask) = &obj.mask {
                    for (x, y) in mask.iter_set() {
                        img.set(x, y, color);
                    }
                }
            }
            img
        })
        .collect()
}

/// Generates ground truth and rendered frames.
pub fn generate(spec: &SceneSpec) -> Result<Scene, HarnessError> {
    let annotation = generate_gt(spec)?;
    let images = render_frames(&annotation);
    Ok(Scene { annotation, images })
}

/// A persistent duplicate-detection site: the detector intermittently
/// fires a second, offset detection for the same object.
struct GhostSite {
    offset: (f64, f64),
    seg_support: bool,
}

/// Simulates detector/segmenter output from ground truth: drops, jitter,
/// sampled confidences, mask morphology, and false positives.
///
/// False positives come in three forms, all governed by
/// `false_positive_rate`: a per-frame random background detection, a
/// per-frame orphan segmentation blob, and per-object duplicate "ghost"
/// detections at a fixed offset that ride along with the object (the
/// dominant false-detection mode of real detectors on textured clutter).
pub fn corrupt(gt: &SequenceAnnotation, noise: &NoiseSpec) -> PredictionSet {
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let center_jitter = Normal::new(0.0, noise.center_jitter_sigma).expect("finite sigma");
    let size_jitter = Normal::new(0.0, noise.size_jitter_sigma).expect("finite sigma");
    let (w, h) = (gt.width, gt.height);

    // fixed ghost geometry per sensitive track, in first-seen order
    let mut ghosts: std::collections::HashMap<u32, GhostSite> = std::collections::HashMap::new();
    if noise.false_positive_rate > 0.0 {
        for frame in &gt.frames {
            for obj in &frame.objects {
                let Some(id) = obj.track_id else { continue };
                if !obj.category.is_sensitive() || ghosts.contains_key(&id) {
                    continue;
                }
                let magnitude = rng.random_range(1.2..1.8) * obj.bbox.diagonal();
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                ghosts.insert(
                    id,
                    GhostSite {
                        offset: (magnitude * angle.cos(), magnitude * angle.sin()),
                        seg_support: rng.random_bool(0.5),
                    },
                );
            }
        }
    }

    let mut frames = Vec::with_capacity(gt.frames.len());
    for frame in &gt.frames {
        let mut objects = Vec::new();
        let mut seg = SegLabelMap::empty(w, h);
        for obj in &frame.objects {
            if rng.random::<f64>() < noise.drop_prob {
                continue;
            }
            // detector and segmenter errors are independent heads; the
            // segmenter localizes at a third of the detector's jitter
            let (dx, dy) = (center_jitter.sample(&mut rng), center_jitter.sample(&mut rng));
            let (dw, dh) = (size_jitter.sample(&mut rng), size_jitter.sample(&mut rng));
            let (mx, my) = (
                center_jitter.sample(&mut rng) / 3.0,
                center_jitter.sample(&mut rng) / 3.0,
            );
            let confidence = sample_range(&mut rng, noise.tp_confidence);

            let bbox = if dx == 0.0 && dy == 0.0 && dw == 0.0 && dh == 0.0 {
                Ok(obj.bbox) // bit-exact when unperturbed
            } else {
                let bw = (obj.bbox.width() + dw).max(2.0);
                let bh = (obj.bbox.height() + dh).max(2.0);
                let (cx, cy) = obj.bbox.center();
                BBox::new(
                    cx + dx - bw / 2.0,
                    cy + dy - bh / 2.0,
                    cx + dx + bw / 2.0,
                    cy + dy + bh / 2.0,
                )
                .and_then(|b| b.clamped(w, h))
            };
            let Ok(bbox) = bbox else {
                continue; // jittered fully out of frame
            };

            let mut pred = ObjectInstance::new(obj.category, bbox);
            pred.confidence = Some(confidence);
            pred.track_id = obj.track_id;
            if let Some(mask) = &obj.mask {
                let mut m = mask.translate(mx.round() as i64, my.round() as i64);
                if noise.mask_morph_radius > 0 {
                    let steps = rng.random_range(
                        -(noise.mask_morph_radius as i64)..=noise.mask_morph_radius as i64,
                    );
                    for _ in 0..steps.abs() {
                        let next = if steps > 0 { m.dilate() } else { m.erode() };
                        if next.is_empty() {
                            break;
                        }
                        m = next;
                    }
                }
                if !m.is_empty() {
                    if let Some(label) = match obj.category {
                        Category::Face => Some(&mut seg.face),
                        Category::Plate => Some(&mut seg.plate),
                        _ => None,
                    } {
                        label.union_with(&m).expect("frame-sized mask");
                    }
                    pred.mask = Some(m);
                }
            }
            objects.push(pred);
        }

        // duplicate ghost detections riding along with their objects
        for obj in &frame.objects {
            let Some(site) = obj.track_id.and_then(|id| ghosts.get(&id)) else {
                continue;
            };
            if rng.random::<f64>() >= noise.false_positive_rate {
                continue;
            }
            let (cx, cy) = obj.bbox.center();
            let (gx, gy) = (cx + site.offset.0, cy + site.offset.1);
            let (bw, bh) = (obj.bbox.width(), obj.bbox.height());
            let bbox = BBox::new(gx - bw / 2.0, gy - bh / 2.0, gx + bw / 2.0, gy + bh / 2.0)
                .and_then(|b| b.clamped(w, h));
            let confidence = sample_range(&mut rng, noise.tp_confidence);
            let Ok(bbox) = bbox else { continue };
            let mut dup = ObjectInstance::new(obj.category, bbox);
            dup.confidence = Some(confidence);
            if site.seg_support {
                if let Some(mask) = &obj.mask {
                    let m = mask.translate(site.offset.0.round() as i64, site.offset.1.round() as i64);
                    if !m.is_empty() {
                        if let Some(label) = match obj.category {
                            Category::Face => Some(&mut seg.face),
                            Category::Plate => Some(&mut seg.plate),
                            _ => None,
                        } {
                            label.union_with(&m).expect("frame-sized mask");
                        }
                        dup.mask = Some(m);
                    }
                }
            }
            objects.push(dup);
        }

        // spurious detection without segmentation support
        if rng.random::<f64>() < noise.false_positive_rate {
            let category = if rng.random_bool(0.5) {
                Category::Face
            } else {
                Category::Plate
            };
            let (fw, fh) = match category {
                Category::Face => (rng.random_range(8.0..14.0), rng.random_range(9.0..16.0)),
                _ => (rng.random_range(12.0..20.0), rng.random_range(4.0..8.0)),
            };
            let x = rng.random_range(0.0..(w as f64 - fw));
            let y = rng.random_range(0.0..(h as f64 - fh));
            if let Ok(bbox) = BBox::new(x, y, x + fw, y + fh) {
                let mut fp = ObjectInstance::new(category, bbox);
                fp.confidence = Some(sample_range(&mut rng, noise.fp_confidence));
                objects.push(fp);
            }
        }
        // orphan segmentation blob without a detection
        if rng.random::<f64>() < noise.false_positive_rate {
            let (bw, bh) = (rng.random_range(6.0..14.0), rng.random_range(5.0..10.0));
            let x = rng.random_range(0.0..(w as f64 - bw));
            let y = rng.random_range(0.0..(h as f64 - bh));
            let blob = rect_mask(w, h, x, y, bw, bh);
            let label = if rng.random_bool(0.5) {
                &mut seg.face
            } else {
                &mut seg.plate
            };
            label.union_with(&blob).expect("frame-sized mask");
        }

        frames.push(PredictionFrame {
            frame_index: frame.frame_index,
            image_path: frame.image_path.clone(),
            objects,
            seg,
        });
    }
    PredictionSet {
        sequence_id: gt.sequence_id.clone(),
        width: w,
        height: h,
        frames,
    }
}

fn sample_range(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.1 <= range.0 {
        return range.0;
    }
    rng.random_range(range.0..range.1)
}

// ---------------------------------------------------------------------------
// Ablation runner
// ---------------------------------------------------------------------------

/// Scores of one pipeline run.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AblationCell {
    pub mioff: f64,
    pub ioff50: f64,
    pub ioff75: f64,
}

/// One (config, window, seed) result row.
#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub config: String,
    pub window: u32,
    pub seed: u64,
    #[serde(flatten)]
    pub scores: AblationCell,
}

/// Seed-aggregated scores for one (config, window).
#[derive(Debug, Clone, Serialize)]
pub struct AblationAggregate {
    pub config: String,
    pub window: u32,
    pub seeds: u32,
    pub mean_mioff: f64,
    pub std_mioff: f64,
    /// Standard error of the mean.
    pub sem_mioff: f64,
    pub mean_ioff50: f64,
    pub mean_ioff75: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub aggregates: Vec<AblationAggregate>,
    /// DSJ&KFJ re-run across the window sweep.
    pub window_sweep: Vec<AblationAggregate>,
}

/// The six stage combinations of the ablation.
pub fn ablation_configs() -> Vec<(String, PipelineConfig)> {
    [
        ("baseline", (false, false, false)),
        ("DJ", (true, false, false)),
        ("DSJ", (false, true, false)),
        ("KFJ", (false, false, true)),
        ("DJ&KFJ", (true, false, true)),
        ("DSJ&KFJ", (false, true, true)),
    ]
    .into_iter()
    .map(|(name, (dj, dsj, kfj))| (name.to_string(), PipelineConfig::with_stages(dj, dsj, kfj)))
    .collect()
}

/// Scores one generated scene under one pipeline config.
pub fn score_pipeline(
    gt: &SequenceAnnotation,
    pred: &PredictionSet,
    cfg: &PipelineConfig,
    weights: &RegionWeights,
) -> Result<AblationCell, HarnessError> {
    let run = pipeline::run_pipeline(pred, cfg)?;
    let instances = pipeline::run_instances(&run);
    let gts: Vec<GtInstance> = metrics::gt_instances(gt)
        .into_iter()
        .filter(|g| g.object.category.is_sensitive())
        .collect();
    let scores = metrics::mioff(&instances, &gts, weights)?;
    let ioff50 = metrics::ioff_at(&instances, &gts, 0.5, weights)?;
    let ioff75 = metrics::ioff_at(&instances, &gts, 0.75, weights)?;
    Ok(AblationCell {
        mioff: scores.combined,
        ioff50,
        ioff75,
    })
}

/// Runs the six-config ablation plus the window sweep, seed-averaged.
///
/// Seed i uses scene seed `spec.seed + i` and noise seed `noise.seed + i`,
/// so all configs see identical inputs per seed. Seeds fan out in
/// parallel; the report is reduced in seed order and is byte-stable.
pub fn run_ablation(
    spec: &SceneSpec,
    noise: &NoiseSpec,
    n_seeds: u32,
    windows: &[u32],
    weights: &RegionWeights,
) -> Result<AblationReport, HarnessError> {
    let configs = ablation_configs();
    let per_seed: Result<Vec<Vec<AblationRow>>, HarnessError> = (0..n_seeds)
        .into_par_iter()
        .map(|i| {
            let mut scene_spec = *spec;
            scene_spec.seed = spec.seed + i as u64;
            let mut noise_spec = *noise;
            noise_spec.seed = noise.seed + i as u64;
            let gt = generate_gt(&scene_spec)?;
            let pred = corrupt(&gt, &noise_spec);
            let mut rows = Vec::new();
            for (name, cfg) in &configs {
                let cell = score_pipeline(&gt, &pred, cfg, weights)?;
                rows.push(AblationRow {
                    config: name.clone(),
                    window: cfg.tracker.window,
                    seed: scene_spec.seed,
                    scores: cell,
                });
            }
            for &window in windows {
                let mut cfg = PipelineConfig::with_stages(false, true, true);
                cfg.tracker.window = window;
                let cell = score_pipeline(&gt, &pred, &cfg, weights)?;
                rows.push(AblationRow {
                    config: format!("DSJ&KFJ@w{window}"),
                    window,
                    seed: scene_spec.seed,
                    scores: cell,
                });
            }
            Ok(rows)
        })
        .collect();
    let rows: Vec<AblationRow> = per_seed?.into_iter().flatten().collect();

    let aggregate = |name: &str, window: u32| -> AblationAggregate {
        let cells: Vec<&AblationCell> = rows
            .iter()
            .filter(|r| r.config == name && r.window == window)
            .map(|r| &r.scores)
            .collect();
        let n = cells.len() as f64;
        let mean = |f: &dyn Fn(&AblationCell) -> f64| cells.iter().map(|c| f(c)).sum::<f64>() / n;
        let mean_mioff = mean(&|c| c.mioff);
        let var = cells
            .iter()
            .map(|c| (c.mioff - mean_mioff).powi(2))
            .sum::<f64>()
            / (n - 1.0).max(1.0);
        AblationAggregate {
            config: name.to_string(),
            window,
            seeds: cells.len() as u32,
            mean_mioff,
            std_mioff: var.sqrt(),
            sem_mioff: var.sqrt() / n.sqrt(),
            mean_ioff50: mean(&|c| c.ioff50),
            mean_ioff75: mean(&|c| c.ioff75),
        }
    };

    let aggregates = configs
        .iter()
        .map(|(name, cfg)| aggregate(name, cfg.tracker.window))
        .collect();
    let window_sweep = windows
        .iter()
        .map(|&w| aggregate(&format!("DSJ&KFJ@w{w}"), w))
        .collect();
    Ok(AblationReport {
        rows,
        aggregates,
        window_sweep,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annot::validate_sequence;

    #[test]
    fn empty_scene_generates_blank_annotations() {
        let spec = SceneSpec {
            n_pedestrians: 0,
            n_vehicles: 0,
            frames: 3,
            ..SceneSpec::default()
        };
        let scene = generate(&spec).unwrap();
        assert_eq!(scene.annotation.frames.len(), 3);
        assert!(scene.annotation.frames.iter().all(|f| f.objects.is_empty()));
        assert_eq!(scene.images.len(), 3);
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let spec = SceneSpec::default();
        let a = crate::annot::serialize_sequence(&generate_gt(&spec).unwrap());
        let b = crate::annot::serialize_sequence(&generate_gt(&spec).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn generated_sequences_satisfy_all_invariants() {
        for seed in [1u64, 2, 3, 10, 99] {
            let spec = SceneSpec {
                seed,
                frames: 12,
                ..SceneSpec::default()
            };
            let gt = generate_gt(&spec).unwrap();
            validate_sequence(&gt).expect("generated gt must validate");
            // tri regions present and well-formed on every face
            for frame in &gt.frames {
                for obj in &frame.objects {
                    if obj.category == Category::Face {
                        let tri = obj.tri.as_ref().unwrap();
                        assert!(tri.disjoint().unwrap());
                        assert_eq!(&tri.union().unwrap(), obj.mask.as_ref().unwrap());
                        for region in tri.regions() {
                            assert!(!region.is_empty());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn infeasible_spec_errors() {
        let spec = SceneSpec {
            width: 16,
            height: 16,
            n_pedestrians: 1,
            ..SceneSpec::default()
        };
        assert!(matches!(
            generate_gt(&spec),
            Err(HarnessError::Infeasible(_))
        ));
    }

    #[test]
    fn noiseless_corrupt_preserves_everything() {
        let gt = generate_gt(&SceneSpec {
            frames: 6,
            ..SceneSpec::default()
        })
        .unwrap();
        let pred = corrupt(&gt, &NoiseSpec::noiseless());
        let gt_objects: usize = gt.frames.iter().map(|f| f.objects.len()).sum();
        let pred_objects: usize = pred.frames.iter().map(|f| f.objects.len()).sum();
        assert_eq!(gt_objects, pred_objects);
        for (gf, pf) in gt.frames.iter().zip(&pred.frames) {
            for (go, po) in gf.objects.iter().zip(&pf.objects) {
                assert_eq!(go.bbox, po.bbox);
                assert_eq!(go.mask, po.mask);
                assert_eq!(po.confidence, Some(1.0));
            }
        }
    }

    #[test]
    fn full_drop_leaves_no_predictions() {
        let gt = generate_gt(&SceneSpec {
            frames: 4,
            ..SceneSpec::default()
        })
        .unwrap();
        let noise = NoiseSpec {
            drop_prob: 1.0,
            false_positive_rate: 0.0,
            ..NoiseSpec::default()
        };
        let pred = corrupt(&gt, &noise);
        assert!(pred.frames.iter().all(|f| f.objects.is_empty()));
        assert!(pred.frames.iter().all(|f| f.seg.face.is_empty() && f.seg.plate.is_empty()));
    }

    #[test]
    fn drop_fraction_within_binomial_bounds() {
        let spec = SceneSpec {
            frames: 40,
            ..SceneSpec::default()
        };
        let noise = NoiseSpec {
            drop_prob: 0.1,
            false_positive_rate: 0.0,
            ..NoiseSpec::default()
        };
        let mut total = 0u64;
        let mut kept = 0u64;
        for i in 0..10u64 {
            let gt = generate_gt(&SceneSpec {
                seed: spec.seed + i,
                ..spec
            })
            .unwrap();
            let pred = corrupt(
                &gt,
                &NoiseSpec {
                    seed: noise.seed + i,
                    ..noise
                },
            );
            total += gt.frames.iter().map(|f| f.objects.len() as u64).sum::<u64>();
            // true predictions keep their gt track id; FPs are disabled
            kept += pred.frames.iter().map(|f| f.objects.len() as u64).sum::<u64>();
        }
        let dropped = (total - kept) as f64;
        let expect = total as f64 * noise.drop_prob;
        let sigma = (total as f64 * noise.drop_prob * (1.0 - noise.drop_prob)).sqrt();
        assert!(
            (dropped - expect).abs() <= 3.0 * sigma,
            "dropped {dropped} of {total}, expected {expect} ± {}",
            3.0 * sigma
        );
    }

    #[test]
    fn corrupt_is_deterministic_per_seed() {
        let gt = generate_gt(&SceneSpec::default()).unwrap();
        let noise = NoiseSpec::default();
        let a = crate::annot::serialize_predictions(&corrupt(&gt, &noise));
        let b = crate::annot::serialize_predictions(&corrupt(&gt, &noise));
        assert_eq!(a, b);
    }

    #[test]
    fn noiseless_pipeline_is_lossless() {
        let spec = SceneSpec {
            frames: 10,
            ..SceneSpec::default()
        };
        let gt = generate_gt(&spec).unwrap();
        let pred = corrupt(&gt, &NoiseSpec::noiseless());
        let w = RegionWeights::default();
        for (_, cfg) in ablation_configs() {
            let cell = score_pipeline(&gt, &pred, &cfg, &w).unwrap();
            assert_eq!(cell.mioff, 1.0, "config must be lossless on perfect input");
            assert_eq!(cell.ioff50, 1.0);
            assert_eq!(cell.ioff75, 1.0);
        }
    }
}
