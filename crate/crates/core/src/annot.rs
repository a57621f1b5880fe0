//! Domain types and the annotation/prediction document format.
//!
//! Documents are JSON with a fixed schema (see `docs/FORMAT.md`). Canonical
//! serialization sorts object keys and uses shortest round-trip number
//! formatting, so serializing the same value twice is byte-identical.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{MaskError, PixelMask};

#[derive(Debug, Error)]
pub enum DocError {
    #[error("document syntax: {0}")]
    Syntax(String),
    #[error("{0}")]
    Schema(String),
    #[error("frame {frame}: {reason}")]
    Frame { frame: u32, reason: String },
    #[error("frame {frame}, object {index} ({category}): {reason}")]
    Object {
        frame: u32,
        index: usize,
        category: String,
        reason: String,
    },
}

/// The four annotated categories. Face and Plate are sensitive; Pedestrian
/// and Car are the carrier categories that may contain them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Pedestrian,
    Car,
    Face,
    Plate,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Pedestrian,
        Category::Car,
        Category::Face,
        Category::Plate,
    ];

    pub fn is_sensitive(self) -> bool {
        matches!(self, Category::Face | Category::Plate)
    }

    pub fn is_carrier(self) -> bool {
        !self.is_sensitive()
    }

    /// The carrier category a sensitive object is expected to sit inside.
    pub fn carrier(self) -> Option<Category> {
        match self {
            Category::Face => Some(Category::Pedestrian),
            Category::Plate => Some(Category::Car),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Pedestrian => "pedestrian",
            Category::Car => "car",
            Category::Face => "face",
            Category::Plate => "plate",
        }
    }

    pub fn from_name(s: &str) -> Option<Category> {
        match s {
            "pedestrian" => Some(Category::Pedestrian),
            "car" => Some(Category::Car),
            "face" => Some(Category::Face),
            "plate" => Some(Category::Plate),
            _ => None,
        }
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// An axis-aligned box in continuous image coordinates, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    /// Validates `x_min < x_max` and `y_min < y_max`.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<BBox, String> {
        let b = BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(format!("bbox has non-finite coordinate: {b:?}"));
        }
        if x_min >= x_max || y_min >= y_max {
            return Err(format!("bbox is empty or inverted: {b:?}"));
        }
        Ok(b)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    /// Overlap area with another box (0 when disjoint).
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let h = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        w * h
    }

    /// Clamps the box to `[0, w] × [0, h]`; errors if nothing remains.
    pub fn clamped(&self, width: u32, height: u32) -> Result<BBox, String> {
        BBox::new(
            self.x_min.clamp(0.0, width as f64),
            self.y_min.clamp(0.0, height as f64),
            self.x_max.clamp(0.0, width as f64),
            self.y_max.clamp(0.0, height as f64),
        )
    }

    /// The pixels whose unit squares intersect the box, as a mask.
    pub fn rasterize(&self, width: u32, height: u32) -> PixelMask {
        PixelMask::from_rect(
            width,
            height,
            self.x_min.floor() as i64,
            self.y_min.floor() as i64,
            self.x_max.ceil() as i64,
            self.y_max.ceil() as i64,
        )
    }
}

/// The three horizontal face regions annotated per face: above the eyes,
/// eyes to nose, and below the nose.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceTriMask {
    pub above: PixelMask,
    pub mid: PixelMask,
    pub below: PixelMask,
}

impl FaceTriMask {
    pub fn regions(&self) -> [&PixelMask; 3] {
        [&self.above, &self.mid, &self.below]
    }

    /// Union of the three regions (the full face mask).
    pub fn union(&self) -> Result<PixelMask, MaskError> {
        self.above.union(&self.mid)?.union(&self.below)
    }

    /// Checks pairwise disjointness.
    pub fn disjoint(&self) -> Result<bool, MaskError> {
        Ok(self.above.intersection_count(&self.mid)? == 0
            && self.above.intersection_count(&self.below)? == 0
            && self.mid.intersection_count(&self.below)? == 0)
    }
}

/// One annotated or predicted object in a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInstance {
    pub category: Category,
    pub bbox: BBox,
    /// Pixel mask; present on sensitive ground-truth objects, optional on
    /// predictions.
    pub mask: Option<PixelMask>,
    /// Tri-region submasks; present on face ground truth.
    pub tri: Option<FaceTriMask>,
    pub track_id: Option<u32>,
    /// Present on predictions only.
    pub confidence: Option<f64>,
    pub occluded: bool,
}

impl ObjectInstance {
    pub fn new(category: Category, bbox: BBox) -> Self {
        ObjectInstance {
            category,
            bbox,
            mask: None,
            tri: None,
            track_id: None,
            confidence: None,
            occluded: false,
        }
    }
}

/// Ground-truth objects of a single frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameAnnotation {
    pub frame_index: u32,
    pub image_path: Option<String>,
    pub objects: Vec<ObjectInstance>,
}

/// An ordered ground-truth sequence for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceAnnotation {
    pub sequence_id: String,
    pub width: u32,
    pub height: u32,
    pub frames: Vec<FrameAnnotation>,
}

/// Per-frame segmentation label map, one mask per sensitive category.
#[derive(Debug, Clone, PartialEq)]
pub struct SegLabelMap {
    pub face: PixelMask,
    pub plate: PixelMask,
}

impl SegLabelMap {
    pub fn empty(width: u32, height: u32) -> Self {
        SegLabelMap {
            face: PixelMask::new(width, height),
            plate: PixelMask::new(width, height),
        }
    }

    pub fn by_category(&self, category: Category) -> Option<&PixelMask> {
        match category {
            Category::Face => Some(&self.face),
            Category::Plate => Some(&self.plate),
            _ => None,
        }
    }
}

/// Model outputs for a single frame: scored detections plus the
/// segmentation label map.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionFrame {
    pub frame_index: u32,
    pub image_path: Option<String>,
    pub objects: Vec<ObjectInstance>,
    pub seg: SegLabelMap,
}

/// Model outputs for a whole sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub sequence_id: String,
    pub width: u32,
    pub height: u32,
    pub frames: Vec<PredictionFrame>,
}

// ---------------------------------------------------------------------------
// Wire format
// ---------------------------------------------------------------------------

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceDoc {
    sequence_id: String,
    width: u32,
    height: u32,
    frames: Vec<FrameDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameDoc {
    frame_index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_path: Option<String>,
    objects: Vec<ObjectDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seg: Option<SegDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectDoc {
    category: String,
    bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    track_id: Option<u32>,
    #[serde(default, skip_serializing_if = "is_false")]
    occluded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask_rle: Option<MaskDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tri: Option<TriDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TriDoc {
    above: MaskDoc,
    mid: MaskDoc,
    below: MaskDoc,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegDoc {
    face: MaskDoc,
    plate: MaskDoc,
}

/// Masks are run-length lists on the wire; an uncompressed '0'/'1' bit
/// string is accepted on input and normalized to runs on output.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum MaskDoc {
    Runs(Vec<u64>),
    Bits(String),
}

impl MaskDoc {
    fn decode(&self, width: u32, height: u32) -> Result<PixelMask, MaskError> {
        match self {
            MaskDoc::Runs(runs) => PixelMask::from_runs(width, height, runs),
            MaskDoc::Bits(bits) => PixelMask::from_bit_str(width, height, bits),
        }
    }

    fn encode(mask: &PixelMask) -> MaskDoc {
        MaskDoc::Runs(mask.to_runs())
    }
}

/// Serializes any value as canonical JSON: sorted keys, shortest round-trip
/// numbers, two-space indent, trailing newline. Byte-stable across runs.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("value serializes to JSON");
    let mut s = serde_json::to_string_pretty(&v).expect("JSON value prints");
    s.push('\n');
    s
}

// ---------------------------------------------------------------------------
// Parse / serialize
// ---------------------------------------------------------------------------

fn object_err(frame: u32, index: usize, category: &str, reason: impl Into<String>) -> DocError {
    DocError::Object {
        frame,
        index,
        category: category.to_string(),
        reason: reason.into(),
    }
}

struct ObjectContext {
    frame: u32,
    index: usize,
    width: u32,
    height: u32,
}

fn decode_object(doc: &ObjectDoc, ctx: &ObjectContext) -> Result<ObjectInstance, DocError> {
    let ObjectContext {
        frame,
        index,
        width,
        height,
    } = *ctx;
    let cat_str = doc.category.as_str();
    let category = Category::from_name(cat_str)
        .ok_or_else(|| object_err(frame, index, cat_str, "unknown category"))?;

    let [x0, y0, x1, y1] = doc.bbox;
    let bbox = BBox::new(x0, y0, x1, y1)
        .and_then(|b| b.clamped(width, height))
        .map_err(|e| object_err(frame, index, cat_str, e))?;

    let mask = doc
        .mask_rle
        .as_ref()
        .map(|m| m.decode(width, height))
        .transpose()
        .map_err(|e| object_err(frame, index, cat_str, e.to_string()))?;

    let tri = match &doc.tri {
        None => None,
        Some(t) => {
            let above = t.above.decode(width, height);
            let mid = t.mid.decode(width, height);
            let below = t.below.decode(width, height);
            let (above, mid, below) = (|| Ok::<_, MaskError>((above?, mid?, below?)))()
                .map_err(|e| object_err(frame, index, cat_str, format!("tri mask: {e}")))?;
            Some(FaceTriMask { above, mid, below })
        }
    };

    if let Some(c) = doc.confidence {
        if !(0.0..=1.0).contains(&c) {
            return Err(object_err(
                frame,
                index,
                cat_str,
                format!("confidence {c} outside [0,1]"),
            ));
        }
    }

    Ok(ObjectInstance {
        category,
        bbox,
        mask,
        tri,
        track_id: doc.track_id,
        confidence: doc.confidence,
        occluded: doc.occluded,
    })
}

fn encode_object(obj: &ObjectInstance) -> ObjectDoc {
    ObjectDoc {
        category: obj.category.name().to_string(),
        bbox: [obj.bbox.x_min, obj.bbox.y_min, obj.bbox.x_max, obj.bbox.y_max],
        confidence: obj.confidence,
        track_id: obj.track_id,
        occluded: obj.occluded,
        mask_rle: obj.mask.as_ref().map(MaskDoc::encode),
        tri: obj.tri.as_ref().map(|t| TriDoc {
            above: MaskDoc::encode(&t.above),
            mid: MaskDoc::encode(&t.mid),
            below: MaskDoc::encode(&t.below),
        }),
    }
}

fn check_frame_order(frames: &[u32]) -> Result<(), DocError> {
    for pair in frames.windows(2) {
        if pair[1] <= pair[0] {
            return Err(DocError::Frame {
                frame: pair[1],
                reason: format!("frame_index not strictly ascending (previous {})", pair[0]),
            });
        }
    }
    Ok(())
}

fn check_track_ids(frame: u32, objects: &[ObjectInstance]) -> Result<(), DocError> {
    let mut seen = std::collections::HashSet::new();
    for (i, obj) in objects.iter().enumerate() {
        if let Some(id) = obj.track_id {
            if !seen.insert(id) {
                return Err(object_err(
                    frame,
                    i,
                    obj.category.name(),
                    format!("duplicate track_id {id} within frame"),
                ));
            }
        }
    }
    Ok(())
}

/// Validates every ground-truth invariant on an assembled sequence.
///
/// Checked per object: sensitive ground truth carries its mask (faces carry
/// tri regions that are pairwise disjoint and union to the face mask, empty
/// regions allowed only when occluded), the bbox encloses the mask's pixel
/// bounds, and no ground-truth object carries a confidence.
pub fn validate_sequence(seq: &SequenceAnnotation) -> Result<(), DocError> {
    let indices: Vec<u32> = seq.frames.iter().map(|f| f.frame_index).collect();
    check_frame_order(&indices)?;
    for frame in &seq.frames {
        check_track_ids(frame.frame_index, &frame.objects)?;
        for (i, obj) in frame.objects.iter().enumerate() {
            let cat = obj.category.name();
            let err = |reason: String| object_err(frame.frame_index, i, cat, reason);
            if obj.confidence.is_some() {
                return Err(err("ground-truth object must not carry confidence".into()));
            }
            for m in obj.mask.iter().chain(obj.tri.iter().flat_map(|t| {
                [&t.above, &t.mid, &t.below].into_iter()
            })) {
                if m.width() != seq.width || m.height() != seq.height {
                    return Err(err(format!(
                        "mask dimensions {}x{} do not match sequence {}x{}",
                        m.width(),
                        m.height(),
                        seq.width,
                        seq.height
                    )));
                }
            }
            match obj.category {
                Category::Face => {
                    let tri = obj
                        .tri
                        .as_ref()
                        .ok_or_else(|| err("face ground truth requires tri regions".into()))?;
                    if !tri.disjoint().map_err(|e| err(e.to_string()))? {
                        return Err(err("tri regions overlap".into()));
                    }
                    let union = tri.union().map_err(|e| err(e.to_string()))?;
                    if let Some(mask) = &obj.mask {
                        if *mask != union {
                            return Err(err(
                                "face mask does not equal the union of tri regions".into(),
                            ));
                        }
                    }
                    if union.is_empty() {
                        return Err(err("face mask is empty".into()));
                    }
                    if !obj.occluded {
                        for (name, m) in
                            [("above", &tri.above), ("mid", &tri.mid), ("below", &tri.below)]
                        {
                            if m.is_empty() {
                                return Err(err(format!(
                                    "tri region '{name}' empty without occluded flag"
                                )));
                            }
                        }
                    }
                    check_mask_in_bbox(&union, &obj.bbox).map_err(err)?;
                }
                Category::Plate => {
                    let mask = obj
                        .mask
                        .as_ref()
                        .ok_or_else(|| err("plate ground truth requires a mask".into()))?;
                    if mask.is_empty() {
                        return Err(err("plate mask is empty".into()));
                    }
                    check_mask_in_bbox(mask, &obj.bbox).map_err(err)?;
                }
                _ => {}
            }
        }
    }
    Ok(())
}

fn check_mask_in_bbox(mask: &PixelMask, bbox: &BBox) -> Result<(), String> {
    if let Some((x0, y0, x1, y1)) = mask.bounds() {
        // pixel (x, y) occupies [x, x+1) x [y, y+1)
        if (x0 as f64) < bbox.x_min
            || (y0 as f64) < bbox.y_min
            || (x1 as f64 + 1.0) > bbox.x_max
            || (y1 as f64 + 1.0) > bbox.y_max
        {
            return Err(format!(
                "bbox {bbox:?} does not enclose mask bounds ({x0},{y0})..({x1},{y1})"
            ));
        }
    }
    Ok(())
}

/// Validates prediction-set invariants: every object scored, label maps
/// dimension-matched, frames ordered.
pub fn validate_predictions(pred: &PredictionSet) -> Result<(), DocError> {
    let indices: Vec<u32> = pred.frames.iter().map(|f| f.frame_index).collect();
    check_frame_order(&indices)?;
    for frame in &pred.frames {
        check_track_ids(frame.frame_index, &frame.objects)?;
        for m in [&frame.seg.face, &frame.seg.plate] {
            if m.width() != pred.width || m.height() != pred.height {
                return Err(DocError::Frame {
                    frame: frame.frame_index,
                    reason: format!(
                        "label map dimensions {}x{} do not match sequence {}x{}",
                        m.width(),
                        m.height(),
                        pred.width,
                        pred.height
                    ),
                });
            }
        }
        for (i, obj) in frame.objects.iter().enumerate() {
            if obj.confidence.is_none() {
                return Err(object_err(
                    frame.frame_index,
                    i,
                    obj.category.name(),
                    "prediction requires a confidence",
                ));
            }
        }
    }
    Ok(())
}

/// Parses and fully validates a ground-truth sequence document.
pub fn parse_sequence(bytes: &[u8]) -> Result<SequenceAnnotation, DocError> {
    let doc: SequenceDoc =
        serde_json::from_slice(bytes).map_err(|e| DocError::Syntax(e.to_string()))?;
    let mut frames = Vec::with_capacity(doc.frames.len());
    for fd in &doc.frames {
        if fd.seg.is_some() {
            return Err(DocError::Frame {
                frame: fd.frame_index,
                reason: "seg label maps belong to prediction documents".into(),
            });
        }
        let mut objects = Vec::with_capacity(fd.objects.len());
        for (i, od) in fd.objects.iter().enumerate() {
            let ctx = ObjectContext {
                frame: fd.frame_index,
                index: i,
                width: doc.width,
                height: doc.height,
            };
            let mut obj = decode_object(od, &ctx)?;
            // face ground truth: derive the full mask from tri when omitted
            if obj.category == Category::Face && obj.mask.is_none() {
                if let Some(tri) = &obj.tri {
                    obj.mask = Some(tri.union().map_err(|e| {
                        object_err(fd.frame_index, i, "face", e.to_string())
                    })?);
                }
            }
            objects.push(obj);
        }
        frames.push(FrameAnnotation {
            frame_index: fd.frame_index,
            image_path: fd.image_path.clone(),
            objects,
        });
    }
    let seq = SequenceAnnotation {
        sequence_id: doc.sequence_id,
        width: doc.width,
        height: doc.height,
        frames,
    };
    validate_sequence(&seq)?;
    Ok(seq)
}

/// Parses and validates a prediction document (detections plus per-frame
/// segmentation label maps).
pub fn parse_predictions(bytes: &[u8]) -> Result<PredictionSet, DocError> {
    let doc: SequenceDoc =
        serde_json::from_slice(bytes).map_err(|e| DocError::Syntax(e.to_string()))?;
    let mut frames = Vec::with_capacity(doc.frames.len());
    for fd in &doc.frames {
        let seg = match &fd.seg {
            Some(s) => SegLabelMap {
                face: s.face.decode(doc.width, doc.height).map_err(|e| DocError::Frame {
                    frame: fd.frame_index,
                    reason: format!("face label map: {e}"),
                })?,
                plate: s.plate.decode(doc.width, doc.height).map_err(|e| DocError::Frame {
                    frame: fd.frame_index,
                    reason: format!("plate label map: {e}"),
                })?,
            },
            None => {
                return Err(DocError::Frame {
                    frame: fd.frame_index,
                    reason: "prediction frame requires a seg label map".into(),
                })
            }
        };
        let mut objects = Vec::with_capacity(fd.objects.len());
        for (i, od) in fd.objects.iter().enumerate() {
            let ctx = ObjectContext {
                frame: fd.frame_index,
                index: i,
                width: doc.width,
                height: doc.height,
            };
            objects.push(decode_object(od, &ctx)?);
        }
        frames.push(PredictionFrame {
            frame_index: fd.frame_index,
            image_path: fd.image_path.clone(),
            objects,
            seg,
        });
    }
    let pred = PredictionSet {
        sequence_id: doc.sequence_id,
        width: doc.width,
        height: doc.height,
        frames,
    };
    validate_predictions(&pred)?;
    Ok(pred)
}

/// Canonical, byte-stable serialization of a ground-truth sequence.
pub fn serialize_sequence(seq: &SequenceAnnotation) -> Vec<u8> {
    let doc = SequenceDoc {
        sequence_id: seq.sequence_id.clone(),
        width: seq.width,
        height: seq.height,
        frames: seq
            .frames
            .iter()
            .map(|f| FrameDoc {
                frame_index: f.frame_index,
                image_path: f.image_path.clone(),
                objects: f.objects.iter().map(encode_object).collect(),
                seg: None,
            })
            .collect(),
    };
    canonical_json(&doc).into_bytes()
}

/// Canonical, byte-stable serialization of a prediction set.
pub fn serialize_predictions(pred: &PredictionSet) -> Vec<u8> {
    let doc = SequenceDoc {
        sequence_id: pred.sequence_id.clone(),
        width: pred.width,
        height: pred.height,
        frames: pred
            .frames
            .iter()
            .map(|f| FrameDoc {
                frame_index: f.frame_index,
                image_path: f.image_path.clone(),
                objects: f.objects.iter().map(encode_object).collect(),
                seg: Some(SegDoc {
                    face: MaskDoc::encode(&f.seg.face),
                    plate: MaskDoc::encode(&f.seg.plate),
                }),
            })
            .collect(),
    };
    canonical_json(&doc).into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri_rect(w: u32, h: u32, x0: i64, y0: i64, x1: i64, y1: i64) -> (FaceTriMask, PixelMask) {
        let hh = y1 - y0;
        let above = PixelMask::from_rect(w, h, x0, y0, x1, y0 + hh / 4);
        let mid = PixelMask::from_rect(w, h, x0, y0 + hh / 4, x1, y0 + 3 * hh / 4);
        let below = PixelMask::from_rect(w, h, x0, y0 + 3 * hh / 4, x1, y1);
        let full = PixelMask::from_rect(w, h, x0, y0, x1, y1);
        (FaceTriMask { above, mid, below }, full)
    }

    fn one_face_sequence() -> SequenceAnnotation {
        let (tri, full) = tri_rect(32, 32, 8, 8, 16, 24);
        let mut obj = ObjectInstance::new(Category::Face, BBox::new(8.0, 8.0, 16.0, 24.0).unwrap());
        obj.mask = Some(full);
        obj.tri = Some(tri);
        obj.track_id = Some(1);
        SequenceAnnotation {
            sequence_id: "seq".into(),
            width: 32,
            height: 32,
            frames: vec![FrameAnnotation {
                frame_index: 0,
                image_path: None,
                objects: vec![obj],
            }],
        }
    }

    #[test]
    fn parse_one_face_roundtrip() {
        let seq = one_face_sequence();
        let bytes = serialize_sequence(&seq);
        let back = parse_sequence(&bytes).unwrap();
        assert_eq!(back, seq);
        assert_eq!(back.frames.len(), 1);
    }

    #[test]
    fn serialize_is_deterministic() {
        let seq = one_face_sequence();
        assert_eq!(serialize_sequence(&seq), serialize_sequence(&seq));
    }

    #[test]
    fn overlapping_tri_regions_name_the_face() {
        let mut seq = one_face_sequence();
        // push one pixel of 'mid' into 'above'
        let tri = seq.frames[0].objects[0].tri.as_mut().unwrap();
        tri.mid.set(8, 8, true);
        let bytes = serialize_sequence(&seq);
        let err = parse_sequence(&bytes).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("frame 0"), "got: {msg}");
        assert!(msg.contains("object 0"), "got: {msg}");
        assert!(msg.contains("overlap") || msg.contains("union"), "got: {msg}");
    }

    #[test]
    fn confidence_rejected_on_ground_truth() {
        let mut seq = one_face_sequence();
        seq.frames[0].objects[0].confidence = Some(0.9);
        let bytes = serialize_sequence(&seq);
        assert!(parse_sequence(&bytes).is_err());
    }

    #[test]
    fn unsorted_frames_rejected() {
        let mut seq = one_face_sequence();
        let mut f2 = seq.frames[0].clone();
        f2.frame_index = 0;
        seq.frames.push(f2);
        let bytes = serialize_sequence(&seq);
        let err = parse_sequence(&bytes).unwrap_err();
        assert!(err.to_string().contains("ascending"), "got: {err}");
    }

    #[test]
    fn unknown_field_rejected() {
        let bytes = br#"{"sequence_id":"s","width":4,"height":4,"frames":[],"extra":1}"#;
        assert!(matches!(parse_sequence(bytes), Err(DocError::Syntax(_))));
    }

    #[test]
    fn empty_frame_list_parses() {
        let bytes = br#"{"sequence_id":"s","width":4,"height":4,"frames":[]}"#;
        let seq = parse_sequence(bytes).unwrap();
        assert!(seq.frames.is_empty());
        // canonical minimal document round-trips
        let canon = serialize_sequence(&seq);
        assert_eq!(parse_sequence(&canon).unwrap(), seq);
    }

    #[test]
    fn bit_string_mask_normalizes_to_runs() {
        let bits: String = std::iter::repeat('1').take(16).collect();
        let doc = format!(
            r#"{{"sequence_id":"s","width":4,"height":4,"frames":[{{"frame_index":0,"objects":[{{"category":"plate","bbox":[0,0,4,4],"mask_rle":"{bits}"}}]}}]}}"#
        );
        let seq = parse_sequence(doc.as_bytes()).unwrap();
        let out = String::from_utf8(serialize_sequence(&seq)).unwrap();
        assert!(out.contains("[\n          0,\n          16\n        ]") || out.contains("[0,16]") || out.contains("0,"), "normalized runs expected: {out}");
        let back = parse_sequence(out.as_bytes()).unwrap();
        assert_eq!(back, seq);
    }
}
