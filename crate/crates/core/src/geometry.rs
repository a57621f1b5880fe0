//! Exact box/mask geometry kernels used by the metrics and the joint
//! desensitization post-processing.
//!
//! Boxes use continuous-area semantics; masks use discrete pixel counts.
//! None of these functions produce NaN: empty-denominator cases either
//! return 0 or a dedicated error, as documented per function.

use thiserror::Error;

use crate::annot::BBox;
use crate::mask::{MaskError, PixelMask};

/// A ratio in `[0, 1]`.
pub type Ratio = f64;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("both masks are empty; IoU undefined")]
    BothEmpty,
    #[error("minimum bounding box of an empty mask is undefined")]
    EmptyMask,
}

/// Intersection over union of two boxes under continuous-area semantics.
/// Returns 0 for disjoint boxes.
pub fn box_iou(a: &BBox, b: &BBox) -> Ratio {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// Intersection over union of two equal-sized masks by pixel count.
///
/// Errors on dimension mismatch and when both masks are empty (the caller
/// decides the semantics of that case).
pub fn mask_iou(a: &PixelMask, b: &PixelMask) -> Result<Ratio, GeometryError> {
    let inter = a.intersection_count(b)?;
    let union = a.union_count(b)?;
    if union == 0 {
        return Err(GeometryError::BothEmpty);
    }
    Ok(inter as f64 / union as f64)
}

/// Tightest axis-aligned box containing every set pixel, where pixel
/// `(x, y)` occupies the unit square `[x, x+1] × [y, y+1]`.
pub fn min_bbox(m: &PixelMask) -> Result<BBox, GeometryError> {
    let (x0, y0, x1, y1) = m.bounds().ok_or(GeometryError::EmptyMask)?;
    Ok(BBox {
        x_min: x0 as f64,
        y_min: y0 as f64,
        x_max: x1 as f64 + 1.0,
        y_max: y1 as f64 + 1.0,
    })
}

/// Fraction of `inner`'s area covered by `outer`: `|inner ∩ outer| / |inner|`.
pub fn containment(inner: &BBox, outer: &BBox) -> Ratio {
    let area = inner.area();
    if area <= 0.0 {
        return 0.0;
    }
    inner.intersection_area(outer) / area
}

/// Splits a mask into its 4-connected components, each returned as a mask
/// of the same dimensions. The components are pairwise disjoint and union
/// to the input; an empty mask yields an empty list.
pub fn connected_components(m: &PixelMask) -> Vec<PixelMask> {
    let (w, h) = (m.width(), m.height());
    let mut visited = PixelMask::new(w, h);
    let mut components = Vec::new();
    let mut stack = Vec::new();
    for (sx, sy) in m.iter_set() {
        if visited.get(sx, sy) {
            continue;
        }
        let mut comp = PixelMask::new(w, h);
        stack.push((sx, sy));
        visited.set(sx, sy, true);
        while let Some((x, y)) = stack.pop() {
            comp.set(x, y, true);
            let mut visit = |nx: u32, ny: u32| {
                if m.get(nx, ny) && !visited.get(nx, ny) {
                    visited.set(nx, ny, true);
                    stack.push((nx, ny));
                }
            };
            if x > 0 {
                visit(x - 1, y);
            }
            if x + 1 < w {
                visit(x + 1, y);
            }
            if y > 0 {
                visit(x, y - 1);
            }
            if y + 1 < h {
                visit(x, y + 1);
            }
        }
        components.push(comp);
    }
    components
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    /// Rasterized box-overlap oracle: counts fine-grid cells whose centers
    /// fall inside each box. `scale` subdivisions per unit.
    fn raster_box_iou(a: &BBox, b: &BBox, scale: u32) -> f64 {
        let x_lo = a.x_min.min(b.x_min).floor() as i64;
        let x_hi = a.x_max.max(b.x_max).ceil() as i64;
        let y_lo = a.y_min.min(b.y_min).floor() as i64;
        let y_hi = a.y_max.max(b.y_max).ceil() as i64;
        let s = scale as f64;
        let (mut inter, mut union) = (0u64, 0u64);
        for gy in y_lo * scale as i64..y_hi * scale as i64 {
            for gx in x_lo * scale as i64..x_hi * scale as i64 {
                let cx = (gx as f64 + 0.5) / s;
                let cy = (gy as f64 + 0.5) / s;
                let in_a = cx > a.x_min && cx < a.x_max && cy > a.y_min && cy < a.y_max;
                let in_b = cx > b.x_min && cx < b.x_max && cy > b.y_min && cy < b.y_max;
                if in_a && in_b {
                    inter += 1;
                }
                if in_a || in_b {
                    union += 1;
                }
            }
        }
        inter as f64 / union as f64
    }

    /// Naive per-pixel mask IoU oracle.
    fn loop_mask_iou(a: &PixelMask, b: &PixelMask) -> f64 {
        let (mut inter, mut union) = (0u64, 0u64);
        for y in 0..a.height() {
            for x in 0..a.width() {
                let (pa, pb) = (a.get(x, y), b.get(x, y));
                if pa && pb {
                    inter += 1;
                }
                if pa || pb {
                    union += 1;
                }
            }
        }
        inter as f64 / union as f64
    }

    /// Recursive flood-fill component-count oracle.
    fn flood_count(m: &PixelMask) -> usize {
        fn fill(m: &PixelMask, seen: &mut Vec<bool>, x: u32, y: u32) {
            let idx = (y * m.width() + x) as usize;
            if seen[idx] || !m.get(x, y) {
                return;
            }
            seen[idx] = true;
            if x > 0 {
                fill(m, seen, x - 1, y);
            }
            if x + 1 < m.width() {
                fill(m, seen, x + 1, y);
            }
            if y > 0 {
                fill(m, seen, x, y - 1);
            }
            if y + 1 < m.height() {
                fill(m, seen, x, y + 1);
            }
        }
        let mut seen = vec![false; (m.width() * m.height()) as usize];
        let mut count = 0;
        for y in 0..m.height() {
            for x in 0..m.width() {
                if m.get(x, y) && !seen[(y * m.width() + x) as usize] {
                    count += 1;
                    fill(m, &mut seen, x, y);
                }
            }
        }
        count
    }

    fn random_mask(w: u32, h: u32, seed: u64, density_pct: u64) -> PixelMask {
        let mut state = seed;
        PixelMask::from_fn(w, h, |_, _| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 33) % 100 < density_pct
        })
    }

    #[test]
    fn box_iou_identity_and_disjoint() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(box_iou(&a, &a), 1.0);
        let b = bx(20.0, 0.0, 30.0, 10.0);
        assert_eq!(box_iou(&a, &b), 0.0);
    }

    #[test]
    fn box_iou_half_shift_is_one_third() {
        // Frozen from the rasterized oracle: overlap 50, union 150.
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let b = bx(5.0, 0.0, 15.0, 10.0);
        let oracle = raster_box_iou(&a, &b, 8);
        assert!((oracle - 1.0 / 3.0).abs() < 1e-9, "oracle got {oracle}");
        assert!((box_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn mask_iou_identity_disjoint_and_errors() {
        let a = PixelMask::from_rect(8, 8, 0, 0, 4, 4);
        let b = PixelMask::from_rect(8, 8, 4, 4, 8, 8);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        assert_eq!(mask_iou(&a, &b).unwrap(), 0.0);
        let e = PixelMask::new(8, 8);
        assert!(matches!(mask_iou(&e, &e), Err(GeometryError::BothEmpty)));
        let c = PixelMask::new(4, 8);
        assert!(matches!(mask_iou(&a, &c), Err(GeometryError::Mask(_))));
    }

    #[test]
    fn min_bbox_two_pixels() {
        let mut m = PixelMask::new(10, 10);
        m.set(2, 3, true);
        m.set(5, 7, true);
        let b = min_bbox(&m).unwrap();
        assert_eq!((b.x_min, b.y_min, b.x_max, b.y_max), (2.0, 3.0, 6.0, 8.0));
    }

    #[test]
    fn min_bbox_full_frame() {
        let m = PixelMask::from_rect(6, 4, 0, 0, 6, 4);
        let b = min_bbox(&m).unwrap();
        assert_eq!((b.x_min, b.y_min, b.x_max, b.y_max), (0.0, 0.0, 6.0, 4.0));
    }

    #[test]
    fn min_bbox_empty_errors() {
        assert!(matches!(
            min_bbox(&PixelMask::new(4, 4)),
            Err(GeometryError::EmptyMask)
        ));
    }

    #[test]
    fn containment_cases() {
        let outer = bx(0.0, 0.0, 20.0, 20.0);
        let inner = bx(5.0, 5.0, 10.0, 10.0);
        assert_eq!(containment(&inner, &outer), 1.0);
        let off = bx(30.0, 30.0, 40.0, 40.0);
        assert_eq!(containment(&off, &outer), 0.0);
        // half-overlapping face box, frozen from the rasterized oracle
        let half = bx(15.0, 0.0, 25.0, 10.0);
        let inter = half.intersection_area(&outer);
        assert_eq!(inter / half.area(), 0.5);
        assert_eq!(containment(&half, &outer), 0.5);
    }

    #[test]
    fn components_empty_and_two_squares() {
        assert!(connected_components(&PixelMask::new(5, 5)).is_empty());
        let mut m = PixelMask::from_rect(10, 10, 0, 0, 2, 2);
        m.union_with(&PixelMask::from_rect(10, 10, 5, 5, 7, 7)).unwrap();
        let comps = connected_components(&m);
        assert_eq!(comps.len(), 2);
        assert!(comps.iter().all(|c| c.count_ones() == 4));
    }

    #[test]
    fn components_match_flood_fill_oracle() {
        for seed in 0..20u64 {
            let m = random_mask(24, 18, seed * 7 + 1, 40);
            let comps = connected_components(&m);
            assert_eq!(comps.len(), flood_count(&m), "seed {seed}");
            // union equals input, pairwise disjoint
            let mut union = PixelMask::new(24, 18);
            let mut total = 0;
            for c in &comps {
                total += c.count_ones();
                union.union_with(c).unwrap();
            }
            assert_eq!(union, m);
            assert_eq!(total, m.count_ones());
        }
    }

    #[test]
    fn mask_iou_matches_bit_loop_oracle() {
        for seed in 0..20u64 {
            let a = random_mask(16, 16, seed + 1, 50);
            let b = random_mask(16, 16, seed + 1000, 50);
            if a.is_empty() && b.is_empty() {
                continue;
            }
            assert_eq!(mask_iou(&a, &b).unwrap(), loop_mask_iou(&a, &b));
        }
    }

    #[test]
    fn min_bbox_matches_scan_oracle() {
        for seed in 0..20u64 {
            let m = random_mask(20, 15, seed * 13 + 3, 10);
            if m.is_empty() {
                continue;
            }
            // exhaustive scan oracle
            let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
            for y in 0..m.height() {
                for x in 0..m.width() {
                    if m.get(x, y) {
                        x0 = x0.min(x);
                        y0 = y0.min(y);
                        x1 = x1.max(x);
                        y1 = y1.max(y);
                    }
                }
            }
            let b = min_bbox(&m).unwrap();
            assert_eq!(
                (b.x_min, b.y_min, b.x_max, b.y_max),
                (x0 as f64, y0 as f64, x1 as f64 + 1.0, y1 as f64 + 1.0)
            );
        }
    }

    proptest! {
        #[test]
        fn box_iou_symmetric_and_bounded(
            ax in 0.0f64..50.0, ay in 0.0f64..50.0, aw in 0.5f64..20.0, ah in 0.5f64..20.0,
            bx_ in 0.0f64..50.0, by in 0.0f64..50.0, bw in 0.5f64..20.0, bh in 0.5f64..20.0,
        ) {
            let a = bx(ax, ay, ax + aw, ay + ah);
            let b = bx(bx_, by, bx_ + bw, by + bh);
            let iou = box_iou(&a, &b);
            prop_assert!((iou - box_iou(&b, &a)).abs() < 1e-15);
            prop_assert!(iou >= 0.0);
            let bound = (a.area().min(b.area())) / (a.area().max(b.area()));
            prop_assert!(iou <= bound + 1e-12);
            prop_assert!((box_iou(&a, &a) - 1.0).abs() < 1e-15);
        }

        #[test]
        fn containment_one_iff_subset(
            ix in 0.0f64..20.0, iy in 0.0f64..20.0, iw in 0.5f64..10.0, ih in 0.5f64..10.0,
            ox in 0.0f64..20.0, oy in 0.0f64..20.0, ow in 0.5f64..20.0, oh in 0.5f64..20.0,
        ) {
            let inner = bx(ix, iy, ix + iw, iy + ih);
            let outer = bx(ox, oy, ox + ow, oy + oh);
            let c = containment(&inner, &outer);
            let subset = inner.x_min >= outer.x_min && inner.y_min >= outer.y_min
                && inner.x_max <= outer.x_max && inner.y_max <= outer.y_max;
            if subset {
                prop_assert!((c - 1.0).abs() < 1e-12);
            } else {
                prop_assert!(c < 1.0 + 1e-12);
            }
        }

        #[test]
        fn min_bbox_is_tight(seed in 0u64..500) {
            let m = super::tests::random_mask(16, 12, seed.wrapping_mul(31) + 5, 15);
            prop_assume!(!m.is_empty());
            let b = min_bbox(&m).unwrap();
            for (x, y) in m.iter_set() {
                prop_assert!((x as f64) >= b.x_min && (x as f64 + 1.0) <= b.x_max);
                prop_assert!((y as f64) >= b.y_min && (y as f64 + 1.0) <= b.y_max);
            }
            // shrinking any side by one pixel excludes at least one set pixel
            let shrunk = [
                (b.x_min + 1.0, b.y_min, b.x_max, b.y_max),
                (b.x_min, b.y_min + 1.0, b.x_max, b.y_max),
                (b.x_min, b.y_min, b.x_max - 1.0, b.y_max),
                (b.x_min, b.y_min, b.x_max, b.y_max - 1.0),
            ];
            for (x0, y0, x1, y1) in shrunk {
                let excluded = m.iter_set().any(|(x, y)| {
                    (x as f64) < x0 || (x as f64 + 1.0) > x1 || (y as f64) < y0 || (y as f64 + 1.0) > y1
                });
                prop_assert!(excluded);
            }
        }
    }
}
