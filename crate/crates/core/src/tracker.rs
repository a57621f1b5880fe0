//! KFJ: Kalman smoothing and gap coasting of sensitive detections.
//!
//! Each track filters the detection-box center with a constant-velocity
//! Kalman filter; sizes are smoothed separately by an EMA. Matched frames
//! emit the measured mask inside a box centered on the filtered state.
//! When a track is unmatched it coasts: a synthetic detection is emitted
//! at the predicted center, carrying the last observed mask translated to
//! it, until the miss count reaches the window (default 4), at which point
//! the track is dropped. Tracks need at least two updates before they may
//! coast.

use thiserror::Error;

use crate::annot::{BBox, Category};
use crate::mask::PixelMask;
use crate::postproc::DesensRegion;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("frame {got} presented after frame {last} (ascending order required)")]
    OutOfOrderFrame { got: u32, last: u32 },
    #[error("non-finite measurement ({0}, {1})")]
    NonFiniteMeasurement(f64, f64),
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Maximum consecutive misses before a track is dropped; misses below
    /// the window are coasted.
    pub window: u32,
    pub process_noise: f64,
    pub measurement_noise: f64,
    pub init_covariance: f64,
    /// Association gate in pixels; `None` gates at 2x the smoothed box
    /// diagonal of each track.
    pub gate_distance: Option<f64>,
    /// EMA factor for the smoothed size (weight of the new measurement).
    pub size_smoothing: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            window: 4,
            process_noise: 1e-2,
            measurement_noise: 1e-1,
            init_covariance: 10.0,
            gate_distance: None,
            size_smoothing: 0.5,
        }
    }
}

/// One tracked sensitive object: constant-velocity state over the box
/// center plus an EMA-smoothed size.
#[derive(Debug, Clone)]
pub struct KalmanTrack {
    /// (cx, cy, vx, vy) in pixels and pixels/frame.
    pub state: [f64; 4],
    /// Symmetric positive-definite 4x4 covariance.
    pub covariance: [[f64; 4]; 4],
    pub smoothed_size: (f64, f64),
    /// Number of measurement updates absorbed.
    pub age: u32,
    /// Consecutive unobserved frames.
    pub misses: u32,
    pub category: Category,
    pub track_id: u32,
    last_confidence: f64,
    last_mask: PixelMask,
    last_measured_center: (f64, f64),
}

impl KalmanTrack {
    /// Spawns a track from a detection; velocity starts at zero.
    pub fn from_region(region: &DesensRegion, track_id: u32, cfg: &TrackerConfig) -> Self {
        let (cx, cy) = region.source_box.center();
        let mut covariance = [[0.0; 4]; 4];
        for (i, row) in covariance.iter_mut().enumerate() {
            row[i] = cfg.init_covariance;
        }
        KalmanTrack {
            state: [cx, cy, 0.0, 0.0],
            covariance,
            smoothed_size: (region.source_box.width(), region.source_box.height()),
            age: 1,
            misses: 0,
            category: region.category,
            track_id,
            last_confidence: region.confidence,
            last_mask: region.mask.clone(),
            last_measured_center: (cx, cy),
        }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.state[0], self.state[1])
    }

    /// Constant-velocity propagation: `x' = F·x`, `P' = F·P·Fᵀ + Q`.
    pub fn predict(&mut self, cfg: &TrackerConfig) {
        self.state[0] += self.state[2];
        self.state[1] += self.state[3];
        let p = &self.covariance;
        // F·P·Fᵀ for F = [[I, I], [0, I]] done blockwise
        let mut next = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                // (F·P)[i][j]
                let fp = p[i][j] + if i < 2 { p[i + 2][j] } else { 0.0 };
                next[i][j] = fp;
            }
        }
        let mut out = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                out[i][j] = next[i][j] + if j < 2 { next[i][j + 2] } else { 0.0 };
            }
        }
        for (i, row) in out.iter_mut().enumerate() {
            row[i] += cfg.process_noise;
        }
        self.covariance = *out_sym(&mut out);
    }

    /// Standard Kalman correction on the center; size updated by EMA;
    /// misses reset to 0.
    pub fn update(
        &mut self,
        measured_center: (f64, f64),
        measured_size: (f64, f64),
        cfg: &TrackerConfig,
    ) -> Result<(), TrackError> {
        let (zx, zy) = measured_center;
        if !zx.is_finite() || !zy.is_finite() {
            return Err(TrackError::NonFiniteMeasurement(zx, zy));
        }
        let p = &self.covariance;
        let r = cfg.measurement_noise;
        // S = H·P·Hᵀ + R (2x2), H picks the position block
        let s = [[p[0][0] + r, p[0][1]], [p[1][0], p[1][1] + r]];
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        let s_inv = [
            [s[1][1] / det, -s[0][1] / det],
            [-s[1][0] / det, s[0][0] / det],
        ];
        // K = P·Hᵀ·S⁻¹ (4x2); P·Hᵀ is the first two columns of P
        let mut k = [[0.0; 2]; 4];
        for i in 0..4 {
            for m in 0..2 {
                k[i][m] = p[i][0] * s_inv[0][m] + p[i][1] * s_inv[1][m];
            }
        }
        let innov = [zx - self.state[0], zy - self.state[1]];
        for i in 0..4 {
            self.state[i] += k[i][0] * innov[0] + k[i][1] * innov[1];
        }
        // P = (I - K·H)·P
        let mut next = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                next[i][j] = p[i][j] - (k[i][0] * p[0][j] + k[i][1] * p[1][j]);
            }
        }
        self.covariance = *out_sym(&mut next);

        let a = cfg.size_smoothing;
        self.smoothed_size = (
            a * measured_size.0 + (1.0 - a) * self.smoothed_size.0,
            a * measured_size.1 + (1.0 - a) * self.smoothed_size.1,
        );
        self.age += 1;
        self.misses = 0;
        Ok(())
    }

    pub fn covariance_trace(&self) -> f64 {
        (0..4).map(|i| self.covariance[i][i]).sum()
    }

    fn gate(&self, cfg: &TrackerConfig) -> f64 {
        cfg.gate_distance
            .unwrap_or_else(|| 2.0 * self.smoothed_size.0.hypot(self.smoothed_size.1))
    }

    /// Box of the smoothed size centered on the current state.
    fn smoothed_box(&self, frame_w: u32, frame_h: u32) -> Option<BBox> {
        let (cx, cy) = self.center();
        let (w, h) = self.smoothed_size;
        BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
            .ok()?
            .clamped(frame_w, frame_h)
            .ok()
    }

    /// Coast emission at the given center: the last observed mask
    /// translated to it and dilated once per missed frame to cover the
    /// growing position uncertainty, inside a box of the smoothed size.
    fn emit_at(&self, center: (f64, f64), frame_w: u32, frame_h: u32) -> Option<DesensRegion> {
        let dx = (center.0 - self.last_measured_center.0).round() as i64;
        let dy = (center.1 - self.last_measured_center.1).round() as i64;
        let mut mask = if dx == 0 && dy == 0 {
            self.last_mask.clone()
        } else {
            self.last_mask.translate(dx, dy)
        };
        for _ in 0..self.misses {
            mask = mask.dilate();
        }
        if mask.is_empty() {
            return None; // translated fully out of frame
        }
        let (w, h) = self.smoothed_size;
        let bbox = BBox::new(
            center.0 - w / 2.0,
            center.1 - h / 2.0,
            center.0 + w / 2.0,
            center.1 + h / 2.0,
        )
        .ok()?
        .clamped(frame_w, frame_h)
        .ok()?;
        Some(DesensRegion {
            category: self.category,
            mask,
            source_box: bbox,
            confidence: self.last_confidence,
        })
    }
}

fn out_sym(m: &mut [[f64; 4]; 4]) -> &[[f64; 4]; 4] {
    for i in 0..4 {
        for j in i + 1..4 {
            let v = (m[i][j] + m[j][i]) / 2.0;
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}

/// A region emitted by the tracker; `coasted` marks synthetic detections
/// filled in for missed frames.
#[derive(Debug, Clone)]
pub struct SmoothedRegion {
    pub region: DesensRegion,
    pub track_id: u32,
    pub coasted: bool,
}

/// Per-sequence tracker state. Frames must be stepped in ascending order.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    frame_w: u32,
    frame_h: u32,
    tracks: Vec<KalmanTrack>,
    next_id: u32,
    last_frame: Option<u32>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig, frame_w: u32, frame_h: u32) -> Self {
        Tracker {
            cfg,
            frame_w,
            frame_h,
            tracks: Vec::new(),
            next_id: 0,
            last_frame: None,
        }
    }

    pub fn tracks(&self) -> &[KalmanTrack] {
        &self.tracks
    }

    /// Advances one frame: predict, associate, update, spawn, coast, drop.
    ///
    /// Returns the smoothed detections for this frame, sorted by track id.
    pub fn step_frame(
        &mut self,
        frame_index: u32,
        detections: &[DesensRegion],
    ) -> Result<Vec<SmoothedRegion>, TrackError> {
        if let Some(last) = self.last_frame {
            if frame_index <= last {
                return Err(TrackError::OutOfOrderFrame {
                    got: frame_index,
                    last,
                });
            }
        }
        self.last_frame = Some(frame_index);

        for track in &mut self.tracks {
            track.predict(&self.cfg);
        }

        // greedy nearest-center association, one-to-one, same category,
        // within the gate
        let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
        for (ti, track) in self.tracks.iter().enumerate() {
            for (di, det) in detections.iter().enumerate() {
                if det.category != track.category {
                    continue;
                }
                let (cx, cy) = det.source_box.center();
                let (tx, ty) = track.center();
                let dist = (cx - tx).hypot(cy - ty);
                if dist <= track.gate(&self.cfg) {
                    candidates.push((ti, di, dist));
                }
            }
        }
        candidates.sort_by(|a, b| {
            a.2.partial_cmp(&b.2)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| (a.0, a.1).cmp(&(b.0, b.1)))
        });
        let mut track_matched = vec![false; self.tracks.len()];
        let mut det_matched = vec![false; detections.len()];
        let mut assignments: Vec<(usize, usize)> = Vec::new();
        for &(ti, di, _) in &candidates {
            if track_matched[ti] || det_matched[di] {
                continue;
            }
            track_matched[ti] = true;
            det_matched[di] = true;
            assignments.push((ti, di));
        }

        let mut emitted: Vec<SmoothedRegion> = Vec::new();

        for &(ti, di) in &assignments {
            let det = &detections[di];
            let track = &mut self.tracks[ti];
            let center = det.source_box.center();
            let size = (det.source_box.width(), det.source_box.height());
            track.last_mask = det.mask.clone();
            track.last_measured_center = center;
            track.last_confidence = det.confidence;
            track.update(center, size, &self.cfg)?;
            // measured mask, smoothed box: the observed pixels are what get
            // redacted, while the emitted center carries the filtered state
            let bbox = track
                .smoothed_box(self.frame_w, self.frame_h)
                .unwrap_or(det.source_box);
            emitted.push(SmoothedRegion {
                region: DesensRegion {
                    category: det.category,
                    mask: det.mask.clone(),
                    source_box: bbox,
                    confidence: det.confidence,
                },
                track_id: track.track_id,
                coasted: false,
            });
        }

        // unmatched detections spawn fresh tracks and pass through
        for (di, det) in detections.iter().enumerate() {
            if det_matched[di] {
                continue;
            }
            let track = KalmanTrack::from_region(det, self.next_id, &self.cfg);
            self.next_id += 1;
            emitted.push(SmoothedRegion {
                region: det.clone(),
                track_id: track.track_id,
                coasted: false,
            });
            self.tracks.push(track);
        }

        // unmatched tracks coast while misses < window and the track is
        // mature (>= 2 updates)
        for (ti, track) in self.tracks.iter_mut().enumerate() {
            if ti < track_matched.len() && track_matched[ti] {
                continue;
            }
            if ti >= track_matched.len() {
                continue; // spawned this frame
            }
            track.misses += 1;
            if track.misses < self.cfg.window && track.age >= 2 {
                if let Some(region) = track.emit_at(track.center(), self.frame_w, self.frame_h) {
                    emitted.push(SmoothedRegion {
                        region,
                        track_id: track.track_id,
                        coasted: true,
                    });
                }
            }
        }
        let window = self.cfg.window;
        self.tracks.retain(|t| t.misses < window);

        emitted.sort_by_key(|r| r.track_id);
        Ok(emitted)
    }
}
