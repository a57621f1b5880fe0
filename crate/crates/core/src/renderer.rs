//! Frame redaction (mosaic, solid fill, icon overlay) and binary portable
//! pixmap (P6) I/O.
//!
//! All redaction modes leave pixels outside the target region bit-identical
//! to the input. Written files are byte-deterministic with the exact header
//! `P6\n<w> <h>\n255\n`.

use thiserror::Error;

use crate::geometry;
use crate::mask::PixelMask;
use crate::metrics;
use crate::postproc::DesensRegion;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("mask dimensions {0}x{1} do not match image {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("mosaic block must be at least 2, got {0}")]
    BlockTooSmall(u32),
    #[error("icon covers only {covered:.3} of the region mask (floor 0.5)")]
    InsufficientCoverage { covered: f64 },
    #[error("region mask is empty")]
    EmptyRegion,
}

#[derive(Debug, Error)]
pub enum PpmError {
    #[error("not a P6 pixmap (bad magic)")]
    BadMagic,
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("maxval {0} unsupported (must be 255)")]
    BadMaxval(u32),
    #[error("payload truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
}

/// An 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl Image {
    /// A solid-color image.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            pixels.extend_from_slice(&rgb);
        }
        Image {
            width,
            height,
            pixels,
        }
    }

    pub fn from_pixels(width: u32, height: u32, pixels: Vec<u8>) -> Option<Self> {
        if pixels.len() != width as usize * height as usize * 3 {
            return None;
        }
        Some(Image {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }
}

/// Where an icon anchors inside the target box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IconAnchor {
    /// Scaled to fit inside the box preserving aspect ratio, centered.
    Center,
    /// Scaled to fit, pinned to the box origin.
    TopLeft,
    /// Stretched over the whole box.
    Stretch,
}

/// How a region is redacted.
#[derive(Debug, Clone)]
pub enum RedactStyle {
    /// Grid-aligned pixelation; every masked pixel takes the mean color of
    /// its block cell restricted to the mask. Block must be >= 2.
    Mosaic { block: u32 },
    Solid { rgb: [u8; 3] },
    /// Icon drawn over the mask's minimum bounding box, blended at
    /// `opacity` in [0, 1].
    Icon {
        icon: Image,
        anchor: IconAnchor,
        opacity: f64,
    },
}

/// Applies one redaction region to an image, returning the redacted copy.
///
/// Mosaic and Solid touch exactly the masked pixels (coverage 1.0). Icon
/// covers the icon rectangle inside the mask's bounding box and fails with
/// `InsufficientCoverage` below the 50% regulation floor.
pub fn apply(img: &Image, region: &DesensRegion, style: &RedactStyle) -> Result<Image, RenderError> {
    let mut out = img.clone();
    apply_mut(&mut out, region, style)?;
    Ok(out)
}

/// In-place variant of [`apply`], used when stacking several regions.
pub fn apply_mut(
    img: &mut Image,
    region: &DesensRegion,
    style: &RedactStyle,
) -> Result<(), RenderError> {
    let mask = &region.mask;
    if mask.width() != img.width || mask.height() != img.height {
        return Err(RenderError::DimensionMismatch(
            mask.width(),
            mask.height(),
            img.width,
            img.height,
        ));
    }
    if mask.is_empty() {
        return Err(RenderError::EmptyRegion);
    }
    match style {
        RedactStyle::Solid { rgb } => {
            for (x, y) in mask.iter_set() {
                img.set(x, y, *rgb);
            }
        }
        RedactStyle::Mosaic { block } => {
            if *block < 2 {
                return Err(RenderError::BlockTooSmall(*block));
            }
            apply_mosaic(img, mask, *block);
        }
        RedactStyle::Icon {
            icon,
            anchor,
            opacity,
        } => {
            apply_icon(img, region, icon, *anchor, *opacity)?;
        }
    }
    Ok(())
}

/// Cells are aligned to the image grid (not the region box), so output is
/// stable under box jitter. The mean is over masked pixels of the cell,
/// rounded half up per channel.
fn apply_mosaic(img: &mut Image, mask: &PixelMask, block: u32) {
    let Some((x0, y0, x1, y1)) = mask.bounds() else {
        return;
    };
    for cy in (y0 / block)..=(y1 / block) {
        for cx in (x0 / block)..=(x1 / block) {
            let mut sum = [0u64; 3];
            let mut count = 0u64;
            let px0 = cx * block;
            let py0 = cy * block;
            for y in py0..(py0 + block).min(img.height) {
                for x in px0..(px0 + block).min(img.width) {
                    if mask.get(x, y) {
                        let p = img.get(x, y);
                        for c in 0..3 {
                            sum[c] += p[c] as u64;
                        }
                        count += 1;
                    }
                }
            }
            if count == 0 {
                continue;
            }
            let mean = [
                ((sum[0] + count / 2) / count) as u8,
                ((sum[1] + count / 2) / count) as u8,
                ((sum[2] + count / 2) / count) as u8,
            ];
            for y in py0..(py0 + block).min(img.height) {
                for x in px0..(px0 + block).min(img.width) {
                    if mask.get(x, y) {
                        img.set(x, y, mean);
                    }
                }
            }
        }
    }
}

fn apply_icon(
    img: &mut Image,
    region: &DesensRegion,
    icon: &Image,
    anchor: IconAnchor,
    opacity: f64,
) -> Result<(), RenderError> {
    let bb = geometry::min_bbox(&region.mask).expect("region mask is nonempty");
    let bx = bb.x_min as u32;
    let by = bb.y_min as u32;
    let bw = (bb.x_max - bb.x_min) as u32;
    let bh = (bb.y_max - bb.y_min) as u32;

    // target rectangle inside the bounding box
    let (tw, th, tx, ty) = match anchor {
        IconAnchor::Stretch => (bw, bh, bx, by),
        IconAnchor::Center | IconAnchor::TopLeft => {
            let scale = (bw as f64 / icon.width as f64).min(bh as f64 / icon.height as f64);
            let tw = ((icon.width as f64 * scale).floor() as u32).clamp(1, bw);
            let th = ((icon.height as f64 * scale).floor() as u32).clamp(1, bh);
            let (tx, ty) = match anchor {
                IconAnchor::Center => (bx + (bw - tw) / 2, by + (bh - th) / 2),
                _ => (bx, by),
            };
            (tw, th, tx, ty)
        }
    };

    let mut covered = PixelMask::new(img.width, img.height);
    for y in 0..th {
        for x in 0..tw {
            // nearest-neighbor sample
            let sx = (x as u64 * icon.width as u64 / tw as u64) as u32;
            let sy = (y as u64 * icon.height as u64 / th as u64) as u32;
            let src = icon.get(sx.min(icon.width - 1), sy.min(icon.height - 1));
            let (px, py) = (tx + x, ty + y);
            if px >= img.width || py >= img.height {
                continue;
            }
            let dst = img.get(px, py);
            let blend = |s: u8, d: u8| -> u8 {
                (opacity * s as f64 + (1.0 - opacity) * d as f64).round() as u8
            };
            img.set(
                px,
                py,
                [
                    blend(src[0], dst[0]),
                    blend(src[1], dst[1]),
                    blend(src[2], dst[2]),
                ],
            );
            covered.set(px, py, true);
        }
    }
    let ratio = metrics::coverage_ratio(&covered, &region.mask)
        .expect("region mask is nonempty");
    if ratio < 0.5 {
        return Err(RenderError::InsufficientCoverage { covered: ratio });
    }
    Ok(())
}

/// Applies a list of regions in order, in place.
pub fn apply_all(
    img: &mut Image,
    regions: &[DesensRegion],
    style: &RedactStyle,
) -> Result<(), RenderError> {
    for region in regions {
        apply_mut(img, region, style)?;
    }
    Ok(())
}

/// Reads a binary portable pixmap (P6, maxval 255). Header whitespace and
/// `#` comments are accepted.
pub fn read_image(bytes: &[u8]) -> Result<Image, PpmError> {
    let mut pos = 0usize;
    if bytes.len() < 2 || &bytes[0..2] != b"P6" {
        return Err(PpmError::BadMagic);
    }
    pos += 2;
    let mut fields = [0u32; 3];
    for field in &mut fields {
        *field = read_header_int(bytes, &mut pos)?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(PpmError::BadMaxval(maxval));
    }
    // exactly one whitespace byte separates the header from the payload
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(PpmError::MalformedHeader("missing payload separator".into())),
    }
    let need = width as usize * height as usize * 3;
    let have = bytes.len() - pos;
    if have < need {
        return Err(PpmError::Truncated { need, have });
    }
    Ok(Image {
        width,
        height,
        pixels: bytes[pos..pos + need].to_vec(),
    })
}

fn read_header_int(bytes: &[u8], pos: &mut usize) -> Result<u32, PpmError> {
    // skip whitespace and comments
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            _ => break,
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| b.is_ascii_digit()) {
        *pos += 1;
    }
    if *pos == start {
        return Err(PpmError::MalformedHeader("expected integer".into()));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| PpmError::MalformedHeader("integer out of range".into()))
}

/// Writes the canonical P6 form: `P6\n<w> <h>\n255\n` then the payload.
pub fn write_image(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annot::Category;

    fn region_from_mask(mask: PixelMask) -> DesensRegion {
        let bb = geometry::min_bbox(&mask).unwrap();
        DesensRegion {
            category: Category::Face,
            mask,
            source_box: bb,
            confidence: 0.9,
        }
    }

    fn checker(w: u32, h: u32) -> Image {
        let mut img = Image::filled(w, h, [0, 0, 0]);
        for y in 0..h {
            for x in 0..w {
                if (x + y) % 2 == 0 {
                    img.set(x, y, [200, 100, 40]);
                }
            }
        }
        img
    }

    #[test]
    fn solid_fills_exactly_the_mask() {
        let img = checker(16, 16);
        let mask = PixelMask::from_rect(16, 16, 4, 4, 10, 12);
        let region = region_from_mask(mask.clone());
        let out = apply(&img, &region, &RedactStyle::Solid { rgb: [128; 3] }).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                if mask.get(x, y) {
                    assert_eq!(out.get(x, y), [128, 128, 128]);
                } else {
                    assert_eq!(out.get(x, y), img.get(x, y), "({x},{y}) must be untouched");
                }
            }
        }
    }

    #[test]
    fn solid_full_frame_is_uniform() {
        let img = checker(8, 8);
        let region = region_from_mask(PixelMask::from_rect(8, 8, 0, 0, 8, 8));
        let out = apply(&img, &region, &RedactStyle::Solid { rgb: [90, 90, 90] }).unwrap();
        assert!(out.pixels().chunks(3).all(|p| p == [90, 90, 90]));
    }

    #[test]
    fn mosaic_matches_block_mean_oracle() {
        let img = checker(8, 8);
        let mask = PixelMask::from_rect(8, 8, 0, 0, 8, 8);
        let region = region_from_mask(mask.clone());
        let out = apply(&img, &region, &RedactStyle::Mosaic { block: 4 }).unwrap();
        // naive per-pixel block-mean oracle
        for y in 0..8u32 {
            for x in 0..8u32 {
                let (bx, by) = (x / 4 * 4, y / 4 * 4);
                let mut sum = [0u64; 3];
                let mut n = 0u64;
                for yy in by..by + 4 {
                    for xx in bx..bx + 4 {
                        if mask.get(xx, yy) {
                            let p = img.get(xx, yy);
                            for c in 0..3 {
                                sum[c] += p[c] as u64;
                            }
                            n += 1;
                        }
                    }
                }
                let mean = [
                    ((sum[0] + n / 2) / n) as u8,
                    ((sum[1] + n / 2) / n) as u8,
                    ((sum[2] + n / 2) / n) as u8,
                ];
                assert_eq!(out.get(x, y), mean, "cell mean mismatch at ({x},{y})");
            }
        }
    }

    #[test]
    fn mosaic_rejects_tiny_block() {
        let img = checker(8, 8);
        let region = region_from_mask(PixelMask::from_rect(8, 8, 0, 0, 4, 4));
        assert!(matches!(
            apply(&img, &region, &RedactStyle::Mosaic { block: 1 }),
            Err(RenderError::BlockTooSmall(1))
        ));
    }

    #[test]
    fn mosaic_and_solid_are_idempotent() {
        let img = checker(16, 16);
        let mask = PixelMask::from_rect(16, 16, 2, 3, 13, 11);
        let region = region_from_mask(mask);
        for style in [
            RedactStyle::Mosaic { block: 4 },
            RedactStyle::Solid { rgb: [10, 20, 30] },
        ] {
            let once = apply(&img, &region, &style).unwrap();
            let twice = apply(&once, &region, &style).unwrap();
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn icon_covers_and_blends() {
        let img = checker(32, 32);
        let mask = PixelMask::from_rect(32, 32, 8, 8, 24, 24);
        let region = region_from_mask(mask.clone());
        let icon = Image::filled(4, 4, [255, 0, 0]);
        let out = apply(
            &img,
            &region,
            &RedactStyle::Icon {
                icon,
                anchor: IconAnchor::Stretch,
                opacity: 1.0,
            },
        )
        .unwrap();
        for (x, y) in mask.iter_set() {
            assert_eq!(out.get(x, y), [255, 0, 0]);
        }
        // outside the box: untouched
        assert_eq!(out.get(0, 0), img.get(0, 0));
    }

    #[test]
    fn icon_fails_below_coverage_floor() {
        // a wide icon fit into a tall region covers only a thin band
        let mask = PixelMask::from_rect(64, 64, 8, 8, 28, 48);
        let region = region_from_mask(mask);
        let icon = Image::filled(10, 1, [255, 0, 0]);
        let err = apply(
            &checker(64, 64),
            &region,
            &RedactStyle::Icon {
                icon,
                anchor: IconAnchor::Center,
                opacity: 1.0,
            },
        )
        .unwrap_err();
        assert!(matches!(err, RenderError::InsufficientCoverage { .. }));
    }

    #[test]
    fn empty_region_list_is_identity() {
        let img = checker(8, 8);
        let mut out = img.clone();
        apply_all(&mut out, &[], &RedactStyle::Solid { rgb: [0; 3] }).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let img = checker(8, 8);
        let region = region_from_mask(PixelMask::from_rect(16, 16, 0, 0, 4, 4));
        assert!(matches!(
            apply(&img, &region, &RedactStyle::Solid { rgb: [0; 3] }),
            Err(RenderError::DimensionMismatch(16, 16, 8, 8))
        ));
    }

    #[test]
    fn ppm_roundtrip_canonical() {
        let img = checker(5, 3);
        let bytes = write_image(&img);
        assert!(bytes.starts_with(b"P6\n5 3\n255\n"));
        let back = read_image(&bytes).unwrap();
        assert_eq!(back, img);
        assert_eq!(write_image(&back), bytes);
    }

    #[test]
    fn ppm_single_pixel_roundtrip() {
        let img = Image::filled(1, 1, [1, 2, 3]);
        assert_eq!(read_image(&write_image(&img)).unwrap(), img);
    }

    #[test]
    fn ppm_accepts_comments_and_whitespace() {
        let bytes = b"P6 # comment\n# another\n 2\t1 \n255\n\x01\x02\x03\x04\x05\x06";
        let img = read_image(bytes).unwrap();
        assert_eq!((img.width(), img.height()), (2, 1));
        assert_eq!(img.get(1, 0), [4, 5, 6]);
    }

    #[test]
    fn ppm_rejects_bad_inputs() {
        assert!(matches!(read_image(b"P5\n1 1\n255\nxxx"), Err(PpmError::BadMagic)));
        assert!(matches!(
            read_image(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00"),
            Err(PpmError::BadMaxval(65535))
        ));
        assert!(matches!(
            read_image(b"P6\n2 2\n255\n\x00\x00\x00"),
            Err(PpmError::Truncated { .. })
        ));
    }
}
