//! FAST-9 corners with unrotated BRIEF-256 descriptors.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::{GrayImage, RgbImage};
use crate::rng;

pub const MIN_IMAGE_DIM: usize = 32;
const PATCH_RADIUS: i32 = 15;
const BLUR_RADIUS: usize = 2;
const BORDER: usize = (PATCH_RADIUS as usize) + 1;
const BRIEF_PATTERN_SEED: u64 = 0x0b71_ef25_6000_0001;

const CIRCLE: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

pub type Descriptor = [u64; 4];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureParams {
    pub max_features: usize,
    pub fast_threshold: u8,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            max_features: 1000,
            fast_threshold: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureSet {
    /// `(x, y)` pixel positions.
    pub keypoints: Vec<[f64; 2]>,
    pub descriptors: Vec<Descriptor>,
    pub responses: Vec<u32>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }
}

pub fn hamming(a: &Descriptor, b: &Descriptor) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// The fixed test-pair pattern shared by every image.
pub fn brief_pattern() -> Vec<[(i32, i32); 2]> {
    let mut r = rng::seeded(BRIEF_PATTERN_SEED);
    let sigma = (2 * PATCH_RADIUS + 1) as f64 / 5.0;
    let mut sample = || -> (i32, i32) {
        let mut c = || {
            let v = libm::round(rng::standard_normal(&mut r) * sigma) as i32;
            v.clamp(-PATCH_RADIUS, PATCH_RADIUS)
        };
        (c(), c())
    };
    (0..256).map(|_| [sample(), sample()]).collect()
}

pub fn detect_features(img: &RgbImage, params: &FeatureParams) -> Result<FeatureSet> {
    if img.width().min(img.height()) < MIN_IMAGE_DIM {
        return Err(Error::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            min: MIN_IMAGE_DIM,
        });
    }
    let gray = img.to_gray();
    let mut corners = fast_corners(&gray, params.fast_threshold);
    corners.sort_by(|a, b| b.2.cmp(&a.2).then(a.1.cmp(&b.1)).then(a.0.cmp(&b.0)));
    corners.truncate(params.max_features);

    let smooth = gray.box_blur(BLUR_RADIUS);
    let pattern = brief_pattern();
    let mut out = FeatureSet::default();
    for (x, y, score) in corners {
        out.keypoints.push([x as f64, y as f64]);
        out.descriptors.push(brief(&smooth, x, y, &pattern));
        out.responses.push(score);
    }
    Ok(out)
}

fn brief(img: &GrayImage, x: usize, y: usize, pattern: &[[(i32, i32); 2]]) -> Descriptor {
    let mut d = [0u64; 4];
    let at = |(dx, dy): (i32, i32)| img.get((x as i32 + dx) as usize, (y as i32 + dy) as usize);
    for (bit, pair) in pattern.iter().enumerate() {
        if at(pair[0]) < at(pair[1]) {
            d[bit / 64] |= 1u64 << (bit % 64);
        }
    }
    d
}

/// FAST-9 with 3×3 non-maximum suppression. Returns `(x, y, score)` with the
/// sum-of-absolute-differences response.
pub fn fast_corners(img: &GrayImage, threshold: u8) -> Vec<(usize, usize, u32)> {
    let (w, h) = (img.width, img.height);
    if w <= 2 * BORDER || h <= 2 * BORDER {
        return Vec::new();
    }
    let mut scores = alloc::vec![0u32; w * h];
    let t = threshold as i32;
    for y in BORDER..h - BORDER {
        for x in BORDER..w - BORDER {
            let p = img.get(x, y) as i32;
            let mut ring = [0i32; 16];
            for (k, (dx, dy)) in CIRCLE.iter().enumerate() {
                ring[k] = img.get((x as i32 + dx) as usize, (y as i32 + dy) as usize) as i32;
            }
            let bright = |v: i32| v > p + t;
            let dark = |v: i32| v < p - t;
            if has_arc(&ring, bright) || has_arc(&ring, dark) {
                let sb: i32 = ring.iter().filter(|&&v| bright(v)).map(|&v| v - p - t).sum();
                let sd: i32 = ring.iter().filter(|&&v| dark(v)).map(|&v| p - v - t).sum();
                scores[y * w + x] = sb.max(sd).max(1) as u32;
            }
        }
    }
    let mut out = Vec::new();
    for y in BORDER..h - BORDER {
        for x in BORDER..w - BORDER {
            let s = scores[y * w + x];
            if s == 0 {
                continue;
            }
            let mut keep = true;
            'nb: for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let n = scores[(y as i32 + dy) as usize * w + (x as i32 + dx) as usize];
                    // equal neighbors: the first in raster order wins
                    let before = dy < 0 || (dy == 0 && dx < 0);
                    if n > s || (n == s && before) {
                        keep = false;
                        break 'nb;
                    }
                }
            }
            if keep {
                out.push((x, y, s));
            }
        }
    }
    out
}

fn has_arc(ring: &[i32; 16], pred: impl Fn(i32) -> bool) -> bool {
    let mut run = 0;
    for k in 0..16 + 8 {
        if pred(ring[k % 16]) {
            run += 1;
            if run >= 9 {
                return true;
            }
        } else {
            run = 0;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_image() -> RgbImage {
        RgbImage::from_fn(96, 96, |x, y| {
            if (32..64).contains(&x) && (32..64).contains(&y) {
                [230, 230, 230]
            } else {
                [20, 20, 20]
            }
        })
    }

    #[test]
    fn constant_image_has_no_features() {
        let f = detect_features(&RgbImage::filled(64, 64, [90, 90, 90]), &FeatureParams::default()).unwrap();
        assert!(f.is_empty());
    }

    #[test]
    fn too_small() {
        assert!(matches!(
            detect_features(&RgbImage::new(31, 64), &FeatureParams::default()),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn square_corners_detected() {
        let f = detect_features(&square_image(), &FeatureParams::default()).unwrap();
        // brute-force oracle: FAST-9 fires only near the four square corners
        let corners = [(32.0, 32.0), (63.0, 32.0), (32.0, 63.0), (63.0, 63.0)];
        for c in corners {
            assert!(
                f.keypoints
                    .iter()
                    .any(|k| (k[0] - c.0).abs() <= 3.0 && (k[1] - c.1).abs() <= 3.0),
                "no keypoint near {c:?}: {:?}",
                f.keypoints
            );
        }
        for k in &f.keypoints {
            assert!(corners
                .iter()
                .any(|c| (k[0] - c.0).abs() <= 3.0 && (k[1] - c.1).abs() <= 3.0));
        }
    }

    #[test]
    fn deterministic() {
        let a = detect_features(&square_image(), &FeatureParams::default()).unwrap();
        let b = detect_features(&square_image(), &FeatureParams::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(brief_pattern(), brief_pattern());
    }

    #[test]
    fn max_features_respected() {
        let noise = RgbImage::from_fn(128, 128, |x, y| {
            let v = (rng::mix64((y * 128 + x) as u64) & 0xff) as u8;
            [v, v, v]
        });
        let f = detect_features(&noise, &FeatureParams { max_features: 50, fast_threshold: 20 }).unwrap();
        assert_eq!(f.len(), 50);
        assert!(f.responses.windows(2).all(|w| w[0] >= w[1]));
    }
}
