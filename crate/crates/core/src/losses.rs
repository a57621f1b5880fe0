//! Multitask desensitization losses with analytic gradients, ground-truth
//! tensor rendering at stride R, and center-heatmap decoding.
//!
//! The loss is `L = L_k + λ_off·L_off + λ_size·L_size + λ_seg·L_seg` with
//! a penalty-reduced focal loss on the keypoint heatmap (α=2, β=4), L1
//! regression of offsets and sizes at annotated cells, and the same focal
//! form on the 3-class segmentation map. There is no training loop here;
//! gradients exist so they can be verified against finite differences.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annot::{BBox, Category, FrameAnnotation};
use crate::mask::PixelMask;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("tensor shapes differ: {0}x{1}x{2} vs {3}x{4}x{5}")]
    ShapeMismatch(u32, u32, usize, u32, u32, usize),
    #[error("no keypoints in batch (N = 0)")]
    NoKeypoints,
    #[error("no positive pixels in segmentation target")]
    NoPositives,
    #[error("empty target set")]
    EmptyTargets,
    #[error("image dimensions {0}x{1} not divisible by stride {2}")]
    DimsNotDivisible(u32, u32, u32),
    #[error("object center ({0}, {1}) outside the image")]
    CenterOutside(f64, f64),
    #[error("non-finite loss component")]
    NonFinite,
}

/// A dense `width × height × channels` tensor of f64 values, stored as
/// channel planes.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    width: u32,
    height: u32,
    channels: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(width: u32, height: u32, channels: usize) -> Self {
        Tensor3 {
            width,
            height,
            channels,
            data: vec![0.0; width as usize * height as usize * channels],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    fn idx(&self, x: u32, y: u32, c: usize) -> usize {
        (c * self.height as usize + y as usize) * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: usize) -> f64 {
        self.data[self.idx(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, c: usize, v: f64) {
        let i = self.idx(x, y, c);
        self.data[i] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Tensor3) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.channels == other.channels
    }

    fn check_shape(&self, other: &Tensor3) -> Result<(), LossError> {
        if !self.same_shape(other) {
            return Err(LossError::ShapeMismatch(
                self.width,
                self.height,
                self.channels,
                other.width,
                other.height,
                other.channels,
            ));
        }
        Ok(())
    }
}

/// Loss hyperparameters; the defaults are the constants used throughout
/// the experiments (α=2, β=4, λ_off=1, λ_size=0.1, λ_seg=0.5, R=4, a
/// 2-channel desensitization heatmap).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lambda_off: f64,
    pub lambda_size: f64,
    pub lambda_seg: f64,
    pub stride: u32,
    pub heatmap_channels: usize,
    /// Probabilities are clamped to `[eps, 1-eps]` to keep logs finite.
    pub clamp_eps: f64,
    /// Minimum box IoU preserved by the Gaussian radius convention.
    pub min_overlap: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 2.0,
            beta: 4.0,
            lambda_off: 1.0,
            lambda_size: 0.1,
            lambda_seg: 0.5,
            stride: 4,
            heatmap_channels: 2,
            clamp_eps: 1e-6,
            min_overlap: 0.7,
        }
    }
}

/// Heatmap channel assignment for the desensitization head.
pub fn class_channel(category: Category) -> Option<usize> {
    match category {
        Category::Face => Some(0),
        Category::Plate => Some(1),
        _ => None,
    }
}

/// One keypoint regression target: continuous center `p`, its stride-R cell
/// `p̃ = ⌊p/R⌋`, the fractional offset `p/R − p̃`, and the box size.
#[derive(Debug, Clone, Copy)]
pub struct KeypointTarget {
    pub center: (f64, f64),
    pub class: usize,
    pub size: (f64, f64),
    pub cell: (u32, u32),
    pub offset: (f64, f64),
}

/// Ground-truth tensors rendered from one frame.
#[derive(Debug, Clone)]
pub struct RenderedTargets {
    /// Gaussian keypoint heatmap, peak exactly 1 at each object cell.
    pub heatmap: Tensor3,
    /// Sparse offset/size targets, one per sensitive object.
    pub targets: Vec<KeypointTarget>,
    /// 3-class one-hot segmentation map (face, plate, background).
    pub seg: Tensor3,
}

/// Minimum Gaussian radius keeping IoU ≥ `min_overlap` between the box and
/// a copy shifted by the radius (the overlap-derived radius convention).
pub fn gaussian_radius(height: f64, width: f64, min_overlap: f64) -> f64 {
    let a1 = 1.0;
    let b1 = height + width;
    let c1 = width * height * (1.0 - min_overlap) / (1.0 + min_overlap);
    let sq1 = (b1 * b1 - 4.0 * a1 * c1).max(0.0).sqrt();
    let r1 = (b1 - sq1) / (2.0 * a1);

    let a2 = 4.0;
    let b2 = 2.0 * (height + width);
    let c2 = (1.0 - min_overlap) * width * height;
    let sq2 = (b2 * b2 - 4.0 * a2 * c2).max(0.0).sqrt();
    let r2 = (b2 - sq2) / (2.0 * a2);

    let a3 = 4.0 * min_overlap;
    let b3 = -2.0 * min_overlap * (height + width);
    let c3 = (min_overlap - 1.0) * width * height;
    let sq3 = (b3 * b3 - 4.0 * a3 * c3).max(0.0).sqrt();
    let r3 = (b3 + sq3) / (2.0 * a3);

    r1.min(r2).min(r3).max(0.0)
}

/// Renders the ground-truth heatmap, sparse offset/size targets, and the
/// down-sampled segmentation map for one frame.
///
/// Only sensitive objects feed the desensitization head. Heatmap splats use
/// a Gaussian with σ = max(1, radius/3), combined by element-wise max.
pub fn render_targets(
    frame: &FrameAnnotation,
    width: u32,
    height: u32,
    cfg: &LossConfig,
) -> Result<RenderedTargets, LossError> {
    let r = cfg.stride;
    if width % r != 0 || height % r != 0 {
        return Err(LossError::DimsNotDivisible(width, height, r));
    }
    let (out_w, out_h) = (width / r, height / r);
    let mut heatmap = Tensor3::zeros(out_w, out_h, cfg.heatmap_channels);
    let mut targets = Vec::new();

    for obj in &frame.objects {
        let Some(class) = class_channel(obj.category) else {
            continue;
        };
        let (cx, cy) = obj.bbox.center();
        if cx < 0.0 || cy < 0.0 || cx >= width as f64 || cy >= height as f64 {
            return Err(LossError::CenterOutside(cx, cy));
        }
        let px = cx / r as f64;
        let py = cy / r as f64;
        let cell = (px.floor() as u32, py.floor() as u32);
        let offset = (px - px.floor(), py - py.floor());
        let size = (obj.bbox.width(), obj.bbox.height());

        let radius = gaussian_radius(
            (size.1 / r as f64).ceil(),
            (size.0 / r as f64).ceil(),
            cfg.min_overlap,
        );
        let sigma = (radius / 3.0).max(1.0);
        splat_gaussian(&mut heatmap, class, cell, sigma);

        targets.push(KeypointTarget {
            center: (cx, cy),
            class,
            size,
            cell,
            offset,
        });
    }

    // down-sampled one-hot segmentation: face, plate, background
    let mut face_union = PixelMask::new(width, height);
    let mut plate_union = PixelMask::new(width, height);
    for obj in &frame.objects {
        if let Some(mask) = &obj.mask {
            match obj.category {
                Category::Face => face_union.union_with(mask).expect("frame-sized mask"),
                Category::Plate => plate_union.union_with(mask).expect("frame-sized mask"),
                _ => {}
            }
        }
    }
    let mut seg = Tensor3::zeros(out_w, out_h, 3);
    for gy in 0..out_h {
        for gx in 0..out_w {
            let any = |m: &PixelMask| -> bool {
                for y in gy * r..(gy + 1) * r {
                    for x in gx * r..(gx + 1) * r {
                        if m.get(x, y) {
                            return true;
                        }
                    }
                }
                false
            };
            let c = if any(&face_union) {
                0
            } else if any(&plate_union) {
                1
            } else {
                2
            };
            seg.set(gx, gy, c, 1.0);
        }
    }

    Ok(RenderedTargets {
        heatmap,
        targets,
        seg,
    })
}

fn splat_gaussian(heatmap: &mut Tensor3, class: usize, cell: (u32, u32), sigma: f64) {
    let win = (3.0 * sigma).ceil() as i64;
    let (cx, cy) = (cell.0 as i64, cell.1 as i64);
    for dy in -win..=win {
        for dx in -win..=win {
            let (x, y) = (cx + dx, cy + dy);
            if x < 0 || y < 0 || x >= heatmap.width as i64 || y >= heatmap.height as i64 {
                continue;
            }
            let v = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
            let (x, y) = (x as u32, y as u32);
            if v > heatmap.get(x, y, class) {
                heatmap.set(x, y, class, v);
            }
        }
    }
}

/// Densifies sparse targets into offset and size tensors (2 channels each:
/// x then y / width then height), for decoding round-trips.
pub fn dense_offset_size(
    targets: &[KeypointTarget],
    out_w: u32,
    out_h: u32,
) -> (Tensor3, Tensor3) {
    let mut offsets = Tensor3::zeros(out_w, out_h, 2);
    let mut sizes = Tensor3::zeros(out_w, out_h, 2);
    for t in targets {
        offsets.set(t.cell.0, t.cell.1, 0, t.offset.0);
        offsets.set(t.cell.0, t.cell.1, 1, t.offset.1);
        sizes.set(t.cell.0, t.cell.1, 0, t.size.0);
        sizes.set(t.cell.0, t.cell.1, 1, t.size.1);
    }
    (offsets, sizes)
}

fn clamp_prob(v: f64, eps: f64) -> f64 {
    v.clamp(eps, 1.0 - eps)
}

/// Penalty-reduced focal loss between a predicted and a ground-truth
/// heatmap, normalized by the number of peak (==1) cells.
///
/// Returns the scalar loss and its analytic gradient with respect to the
/// (clamped) prediction.
pub fn focal_keypoint_loss(
    yhat: &Tensor3,
    y: &Tensor3,
    cfg: &LossConfig,
) -> Result<(f64, Tensor3), LossError> {
    yhat.check_shape(y)?;
    let n = y.data.iter().filter(|&&v| v == 1.0).count();
    if n == 0 {
        return Err(LossError::NoKeypoints);
    }
    focal_core(yhat, y, n as f64, cfg)
}

/// Focal segmentation loss over the 3-class one-hot map, normalized by the
/// number of positive (==1) pixels.
pub fn seg_focal_loss(
    that: &Tensor3,
    t: &Tensor3,
    cfg: &LossConfig,
) -> Result<(f64, Tensor3), LossError> {
    that.check_shape(t)?;
    let n = t.data.iter().filter(|&&v| v == 1.0).count();
    if n == 0 {
        return Err(LossError::NoPositives);
    }
    focal_core(that, t, n as f64, cfg)
}

fn focal_core(
    pred: &Tensor3,
    gt: &Tensor3,
    n: f64,
    cfg: &LossConfig,
) -> Result<(f64, Tensor3), LossError> {
    let (alpha, beta, eps) = (cfg.alpha, cfg.beta, cfg.clamp_eps);
    let mut grad = Tensor3::zeros(pred.width, pred.height, pred.channels);
    let mut loss = 0.0;
    for i in 0..pred.data.len() {
        let p = clamp_prob(pred.data[i], eps);
        let t = gt.data[i];
        let (term, dterm) = if t == 1.0 {
            let one_m = 1.0 - p;
            let term = one_m.powf(alpha) * p.ln();
            let dterm = -alpha * one_m.powf(alpha - 1.0) * p.ln() + one_m.powf(alpha) / p;
            (term, dterm)
        } else {
            let w = (1.0 - t).powf(beta);
            let term = w * p.powf(alpha) * (1.0 - p).ln();
            let dterm =
                w * (alpha * p.powf(alpha - 1.0) * (1.0 - p).ln() - p.powf(alpha) / (1.0 - p));
            (term, dterm)
        };
        loss -= term / n;
        grad.data[i] = -dterm / n;
    }
    if !loss.is_finite() {
        return Err(LossError::NonFinite);
    }
    Ok((loss, grad))
}

/// L1 loss over the two offset channels at annotated cells, normalized by
/// the target count. The subgradient at a tie is 0.
pub fn offset_loss(
    ohat: &Tensor3,
    targets: &[KeypointTarget],
    _cfg: &LossConfig,
) -> Result<(f64, Tensor3), LossError> {
    l1_at_cells(ohat, targets, |t| t.offset)
}

/// L1 loss over the two size channels at annotated cells.
pub fn size_loss(
    shat: &Tensor3,
    targets: &[KeypointTarget],
    _cfg: &LossConfig,
) -> Result<(f64, Tensor3), LossError> {
    l1_at_cells(shat, targets, |t| t.size)
}

fn l1_at_cells(
    pred: &Tensor3,
    targets: &[KeypointTarget],
    target_of: impl Fn(&KeypointTarget) -> (f64, f64),
) -> Result<(f64, Tensor3), LossError> {
    if targets.is_empty() {
        return Err(LossError::EmptyTargets);
    }
    let n = targets.len() as f64;
    let mut grad = Tensor3::zeros(pred.width, pred.height, pred.channels);
    let mut loss = 0.0;
    for t in targets {
        let (tx, ty) = target_of(t);
        for (c, target) in [(0usize, tx), (1usize, ty)] {
            let p = pred.get(t.cell.0, t.cell.1, c);
            let diff = p - target;
            loss += diff.abs() / n;
            let i = grad.idx(t.cell.0, t.cell.1, c);
            grad.data[i] += if diff == 0.0 { 0.0 } else { diff.signum() } / n;
        }
    }
    Ok((loss, grad))
}

/// The four scalar loss components.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LossComponents {
    pub keypoint: f64,
    pub offset: f64,
    pub size: f64,
    pub seg: f64,
}

/// Weighted total: `L_k + λ_off·L_off + λ_size·L_size + λ_seg·L_seg`.
pub fn total_loss(components: &LossComponents, cfg: &LossConfig) -> Result<f64, LossError> {
    let LossComponents {
        keypoint,
        offset,
        size,
        seg,
    } = *components;
    if ![keypoint, offset, size, seg].iter().all(|v| v.is_finite()) {
        return Err(LossError::NonFinite);
    }
    Ok(keypoint + cfg.lambda_off * offset + cfg.lambda_size * size + cfg.lambda_seg * seg)
}

/// Largest relative error between an analytic gradient and central finite
/// differences of `f` around `at`, with step `h` per element.
pub fn fd_max_rel_error(
    f: impl Fn(&Tensor3) -> f64,
    at: &Tensor3,
    analytic: &Tensor3,
    h: f64,
) -> f64 {
    let mut max_rel = 0.0f64;
    for i in 0..at.data.len() {
        let mut plus = at.clone();
        plus.data[i] += h;
        let mut minus = at.clone();
        minus.data[i] -= h;
        let fd = (f(&plus) - f(&minus)) / (2.0 * h);
        let a = analytic.data[i];
        let denom = fd.abs().max(a.abs()).max(1e-8);
        max_rel = max_rel.max((fd - a).abs() / denom);
    }
    max_rel
}

/// A decoded center-point detection.
#[derive(Debug, Clone, Copy)]
pub struct DecodedDetection {
    pub class: usize,
    pub score: f64,
    /// Center in input-image pixels: `(p̃ + Ô) · R`.
    pub center: (f64, f64),
    /// Size in input-image pixels, taken from the size head as-is.
    pub size: (f64, f64),
}

impl DecodedDetection {
    pub fn bbox(&self) -> Option<BBox> {
        BBox::new(
            self.center.0 - self.size.0 / 2.0,
            self.center.1 - self.size.1 / 2.0,
            self.center.0 + self.size.0 / 2.0,
            self.center.1 + self.size.1 / 2.0,
        )
        .ok()
    }
}

/// Decodes detections from head tensors: per-channel 3×3 local maxima of
/// the heatmap, ranked by score, cut to `top_k`.
///
/// Plateaus break deterministically: among equal neighbors, the cell with
/// the lowest (y, x) index wins. Score ties in the ranking break on
/// (class, y, x).
pub fn decode_detections(
    yhat: &Tensor3,
    shat: &Tensor3,
    ohat: &Tensor3,
    top_k: usize,
    cfg: &LossConfig,
) -> Vec<DecodedDetection> {
    let mut peaks: Vec<(f64, usize, u32, u32)> = Vec::new();
    for c in 0..yhat.channels {
        for y in 0..yhat.height {
            for x in 0..yhat.width {
                let v = yhat.get(x, y, c);
                let mut is_peak = true;
                'outer: for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= yhat.width as i64 || ny >= yhat.height as i64
                        {
                            continue;
                        }
                        let nv = yhat.get(nx as u32, ny as u32, c);
                        let neighbor_first = (ny, nx) < (y as i64, x as i64);
                        if nv > v || (nv == v && neighbor_first) {
                            is_peak = false;
                            break 'outer;
                        }
                    }
                }
                if is_peak {
                    peaks.push((v, c, y, x));
                }
            }
        }
    }
    peaks.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| (a.1, a.2, a.3).cmp(&(b.1, b.2, b.3)))
    });
    peaks.truncate(top_k);
    let r = cfg.stride as f64;
    peaks
        .into_iter()
        .map(|(score, class, y, x)| {
            let ox = ohat.get(x, y, 0);
            let oy = ohat.get(x, y, 1);
            DecodedDetection {
                class,
                score,
                center: ((x as f64 + ox) * r, (y as f64 + oy) * r),
                size: (shat.get(x, y, 0), shat.get(x, y, 1)),
            }
        })
        .collect()
}
