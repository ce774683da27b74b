//! Tissue masking on a downsampled level, mapped back to level-0 queries.

use std::path::Path;

use image::{GrayImage, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{write_json, Error, Result};
use crate::slide_io::{RegionRequest, RegionSource};

pub const DEFAULT_MASK_LEVEL: usize = 5;

/// Rounded luma, `0.299 R + 0.587 G + 0.114 B`.
pub fn luma(rgb: [u8; 3]) -> u8 {
    ((299 * rgb[0] as u32 + 587 * rgb[1] as u32 + 114 * rgb[2] as u32 + 500) / 1000) as u8
}

pub fn gray_histogram(img: &RgbImage) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for p in img.pixels() {
        hist[luma(p.0) as usize] += 1;
    }
    hist
}

/// Unsigned 128x64 -> 192-bit product as `(high, low)` limbs.
fn mul_wide(a: u128, b: u64) -> (u128, u128) {
    let b = b as u128;
    let lo = (a & u64::MAX as u128) * b;
    let mid = (a >> 64) * b;
    let (low, carry) = lo.overflowing_add(mid << 64);
    ((mid >> 64) + carry as u128, low)
}

/// Between-class variance of the split `[0, t) | [t, 256)`, kept as the exact
/// fraction `(s0 * N - S * n0)² / (n0 * n1)` (proportional to `w0 w1 (μ0 - μ1)²`).
#[derive(Debug, Clone, Copy)]
struct SplitScore {
    num: u128,
    den: u64,
}

impl SplitScore {
    fn new(n0: u64, s0: u64, total: u64, sum: u64) -> Self {
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            return SplitScore { num: 0, den: 1 };
        }
        let d = (s0 as i128 * total as i128 - sum as i128 * n0 as i128).unsigned_abs();
        SplitScore {
            num: d * d,
            den: n0 * n1,
        }
    }

    fn gt(&self, other: &SplitScore) -> bool {
        mul_wide(self.num, other.den) > mul_wide(other.num, self.den)
    }
}

/// Largest histogram total for which the split scores are compared exactly.
const EXACT_LIMIT: u64 = 1 << 28;

/// Otsu threshold `t`: pixels with value `< t` form the dark class.
///
/// Maximizes between-class variance over all 256 candidates; ties go to the
/// smallest `t`. Comparisons are exact for histograms of up to 2^28 samples;
/// larger histograms are rescaled first.
pub fn otsu_threshold(hist: &[u64; 256]) -> Result<u8> {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return Err(Error::EmptyHistogram);
    }
    let occupied: Vec<usize> = (0..256).filter(|&b| hist[b] > 0).collect();
    if occupied.len() == 1 {
        return Err(Error::DegenerateHistogram(occupied[0]));
    }
    if total >= EXACT_LIMIT {
        let shift = 64 - (total / EXACT_LIMIT).leading_zeros();
        let mut scaled = [0u64; 256];
        for b in 0..256 {
            // keep occupied bins occupied
            scaled[b] = (hist[b] >> shift).max((hist[b] > 0) as u64);
        }
        return otsu_threshold(&scaled);
    }
    let sum: u64 = hist.iter().enumerate().map(|(b, &c)| b as u64 * c).sum();

    let (mut n0, mut s0) = (0u64, 0u64);
    let mut best = (SplitScore::new(0, 0, total, sum), 0u8);
    for t in 1..256usize {
        n0 += hist[t - 1];
        s0 += (t - 1) as u64 * hist[t - 1];
        let score = SplitScore::new(n0, s0, total, sum);
        if score.gt(&best.0) {
            best = (score, t as u8);
        }
    }
    Ok(best.1)
}

/// Boolean tissue grid at one pyramid level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TissueMask {
    pub level: usize,
    pub height: usize,
    pub width: usize,
    pub cells: Vec<bool>,
    /// Otsu threshold used, `None` when the level was uniform.
    pub threshold: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSidecar {
    pub mask_level: usize,
}

impl TissueMask {
    /// Level-0 pixels per mask cell along each axis.
    pub fn scale(&self) -> usize {
        1 << self.level
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.width + col]
    }

    pub fn tissue_fraction(&self) -> f64 {
        if self.cells.is_empty() {
            return 0.0;
        }
        self.cells.iter().filter(|&&c| c).count() as f64 / self.cells.len() as f64
    }

    pub fn is_empty(&self) -> bool {
        !self.cells.iter().any(|&c| c)
    }

    /// Mask that marks every cell as tissue.
    pub fn full(level: usize, height: usize, width: usize) -> Self {
        TissueMask {
            level,
            height,
            width,
            cells: vec![true; height * width],
            threshold: None,
        }
    }

    pub fn predicate(&self) -> MaskPredicate<'_> {
        MaskPredicate { mask: self }
    }

    /// Writes `mask.png` (0/255) and `mask.json` into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let img = GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if self.get(y as usize, x as usize) { 255 } else { 0 }])
        });
        let path = dir.join("mask.png");
        img.save_with_format(&path, image::ImageFormat::Png)
            .map_err(|source| Error::Image { path, source })?;
        write_json(
            &dir.join("mask.json"),
            &MaskSidecar {
                mask_level: self.level,
            },
        )
    }
}

/// Otsu tissue mask of `slide` at `mask_level`, clamped to the top level.
///
/// A uniform level yields an empty mask and a warning.
pub fn tissue_mask<S: RegionSource + ?Sized>(slide: &S, mask_level: usize) -> Result<TissueMask> {
    let level = mask_level.min(slide.level_count() - 1);
    let (h, w) = slide.level_dims(level).expect("clamped level exists");
    let region = slide.fetch_region(RegionRequest {
        level,
        y: 0,
        x: 0,
        side: h.max(w),
    })?;
    let img = image::imageops::crop_imm(&region, 0, 0, w as u32, h as u32).to_image();
    let threshold = match otsu_threshold(&gray_histogram(&img)) {
        Ok(t) => Some(t),
        Err(Error::DegenerateHistogram(bin)) => {
            log::warn!(
                "slide {} is uniform at level {level} (gray {bin}); mask is empty",
                slide.slide_id()
            );
            None
        }
        Err(e) => return Err(e),
    };
    let cells = match threshold {
        Some(t) => img.pixels().map(|p| luma(p.0) < t).collect(),
        None => vec![false; h * w],
    };
    Ok(TissueMask {
        level,
        height: h,
        width: w,
        cells,
        threshold,
    })
}

/// Level-0 query against a mask: does a square intersect any tissue cell?
#[derive(Debug, Clone, Copy)]
pub struct MaskPredicate<'a> {
    mask: &'a TissueMask,
}

impl MaskPredicate<'_> {
    /// True when any mask cell covering `[y, y+side) x [x, x+side)` is tissue.
    pub fn intersects(&self, y: usize, x: usize, side: usize) -> bool {
        if side == 0 {
            return false;
        }
        let m = self.mask;
        let s = m.scale();
        let (r0, c0) = (y / s, x / s);
        if r0 >= m.height || c0 >= m.width {
            return false;
        }
        let r1 = ((y + side - 1) / s).min(m.height - 1);
        let c1 = ((x + side - 1) / s).min(m.width - 1);
        (r0..=r1).any(|r| (c0..=c1).any(|c| m.get(r, c)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slide_io::MemorySlide;
    use image::Rgb;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Recomputes both class statistics from scratch for every candidate and
    /// compares `n0 n1 (μ0 - μ1)²` as exact fractions.
    pub(crate) fn brute_force_otsu(hist: &[u64; 256]) -> u8 {
        let mut best: (i128, i128, u8) = (0, 1, 0);
        for t in 0..256usize {
            let n0: i128 = hist[..t].iter().map(|&c| c as i128).sum();
            let n1: i128 = hist[t..].iter().map(|&c| c as i128).sum();
            if n0 == 0 || n1 == 0 {
                continue;
            }
            let s0: i128 = (0..t).map(|b| b as i128 * hist[b] as i128).sum();
            let s1: i128 = (t..256).map(|b| b as i128 * hist[b] as i128).sum();
            // (s0/n0 - s1/n1)² n0 n1 = (s0 n1 - s1 n0)² / (n0 n1)
            let num = (s0 * n1 - s1 * n0).pow(2);
            let den = n0 * n1;
            if num * best.1 > best.0 * den {
                best = (num, den, t as u8);
            }
        }
        best.2
    }

    #[test]
    fn two_peaks() {
        let mut hist = [0u64; 256];
        hist[10] = 500;
        hist[200] = 500;
        let t = otsu_threshold(&hist).unwrap();
        assert_eq!(t, brute_force_otsu(&hist));
        assert!(t > 10 && t < 200);
        assert_eq!(t, 11);
    }

    #[test]
    fn degenerate_and_empty() {
        let mut hist = [0u64; 256];
        assert!(matches!(otsu_threshold(&hist), Err(Error::EmptyHistogram)));
        hist[128] = 77;
        assert!(matches!(otsu_threshold(&hist), Err(Error::DegenerateHistogram(128))));
    }

    #[test]
    fn matches_brute_force_on_random_histograms() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let mut hist = [0u64; 256];
            for _ in 0..1000 {
                hist[rng.gen_range(0..256)] += 1;
            }
            assert_eq!(otsu_threshold(&hist).unwrap(), brute_force_otsu(&hist));
        }
    }

    #[test]
    fn half_white_half_gray() {
        let img = RgbImage::from_fn(64, 64, |x, _| {
            if x < 32 {
                Rgb([255, 255, 255])
            } else {
                Rgb([100, 100, 100])
            }
        });
        let slide = MemorySlide::new("hw", img, 3);
        let mask = tissue_mask(&slide, 2).unwrap();
        assert_eq!((mask.height, mask.width), (16, 16));
        for r in 0..16 {
            for c in 0..16 {
                assert_eq!(mask.get(r, c), c >= 8);
            }
        }
    }

    #[test]
    fn all_white_slide_gives_empty_mask() {
        let slide = MemorySlide::new("w", RgbImage::from_pixel(64, 64, Rgb([255, 255, 255])), 3);
        let mask = tissue_mask(&slide, 5).unwrap();
        assert_eq!(mask.level, 2);
        assert!(mask.is_empty());
        assert_eq!(mask.threshold, None);
    }

    #[test]
    fn predicate_rules() {
        // 8x8 mask at level 2 (4 px cells); tissue in cells rows 2..4, cols 2..4
        let mut mask = TissueMask {
            level: 2,
            height: 8,
            width: 8,
            cells: vec![false; 64],
            threshold: Some(128),
        };
        for r in 2..4 {
            for c in 2..4 {
                mask.cells[r * 8 + c] = true;
            }
        }
        let p = mask.predicate();
        assert!(p.intersects(9, 9, 4));
        assert!(!p.intersects(20, 20, 8));
        // straddles into the tissue cell at row 2 by one pixel
        assert!(p.intersects(0, 8, 9));
        assert!(!p.intersects(0, 8, 8));
        assert!(!p.intersects(100, 100, 10));
    }

    #[test]
    fn export_writes_png_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let mask = TissueMask::full(3, 4, 5);
        mask.export(dir.path()).unwrap();
        let png = image::open(dir.path().join("mask.png")).unwrap().to_luma8();
        assert_eq!(png.dimensions(), (5, 4));
        assert!(png.pixels().all(|p| p[0] == 255));
        let side: MaskSidecar =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("mask.json")).unwrap())
                .unwrap();
        assert_eq!(side.mask_level, 3);
    }

    proptest! {
        #[test]
        fn predicate_never_rejects_tissue(
            cells in proptest::collection::vec(any::<bool>(), 64),
            y in 0usize..40, x in 0usize..40, side in 1usize..20,
        ) {
            let mask = TissueMask { level: 2, height: 8, width: 8, cells, threshold: Some(1) };
            let p = mask.predicate();
            let hit = (y..y + side).any(|py| (x..x + side).any(|px| {
                py < 32 && px < 32 && mask.get(py / 4, px / 4)
            }));
            if hit {
                prop_assert!(p.intersects(y, x, side));
            }
        }
    }
}
