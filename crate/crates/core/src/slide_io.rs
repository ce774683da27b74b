//! Tiled multi-resolution slide storage.
//!
//! A slide is a directory holding `manifest.json` and one PNG per tile,
//! named `L{level}_r{row}_c{col}.png`. Level `l` has dimensions
//! `ceil(dim0 / 2^l)` and is built from level `l - 1` by 2x2 box averaging.
//! Tiles are decoded lazily and kept in a small shared cache, so an opened
//! slide never materializes in full.

use std::collections::{HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{read_json, write_json, Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_TILE_SIDE: usize = 512;
pub const WHITE: Rgb<u8> = Rgb([255, 255, 255]);

/// Square region at a pyramid level, top-left in that level's coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionRequest {
    pub level: usize,
    pub y: usize,
    pub x: usize,
    pub side: usize,
}

impl RegionRequest {
    pub fn level0(y: usize, x: usize, side: usize) -> Self {
        RegionRequest {
            level: 0,
            y,
            x,
            side,
        }
    }
}

/// Anything that can serve square regions of a slide pyramid.
pub trait RegionSource: Sync {
    fn slide_id(&self) -> &str;

    fn level_count(&self) -> usize;

    /// `(height, width)` of a level.
    fn level_dims(&self, level: usize) -> Option<(usize, usize)>;

    /// `side x side` RGB buffer; pixels outside the level are white.
    fn fetch_region(&self, req: RegionRequest) -> Result<RgbImage>;

    fn dims(&self) -> (usize, usize) {
        self.level_dims(0).expect("level 0 always exists")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub slide_id: String,
    pub width0: usize,
    pub height0: usize,
    pub levels: usize,
    pub tile_side: usize,
    /// Informational `[height, width]` per level; checked against the halving rule on open.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_dims: Option<Vec<[usize; 2]>>,
}

/// Dimensions of every level under the halving rule.
pub fn pyramid_dims(height0: usize, width0: usize, levels: usize) -> Vec<(usize, usize)> {
    (0..levels)
        .map(|l| (height0.div_ceil(1 << l), width0.div_ceil(1 << l)))
        .collect()
}

/// Levels needed to bring the larger side down to 64 px or less.
pub fn default_levels(height0: usize, width0: usize) -> usize {
    let mut side = height0.max(width0);
    let mut levels = 1;
    while side > 64 {
        side = side.div_ceil(2);
        levels += 1;
    }
    levels
}

pub fn tile_file_name(level: usize, row: usize, col: usize) -> String {
    format!("L{level}_r{row}_c{col}.png")
}

/// 2x2 box mean, rounding half up. Edge blocks average whatever pixels exist.
pub fn downsample(img: &RgbImage) -> RgbImage {
    let (w, h) = (img.width(), img.height());
    let (ow, oh) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = RgbImage::new(ow, oh);
    for oy in 0..oh {
        for ox in 0..ow {
            let mut sum = [0u32; 3];
            let mut n = 0u32;
            for y in 2 * oy..(2 * oy + 2).min(h) {
                for x in 2 * ox..(2 * ox + 2).min(w) {
                    let p = img.get_pixel(x, y);
                    for c in 0..3 {
                        sum[c] += p[c] as u32;
                    }
                    n += 1;
                }
            }
            let px = sum.map(|s| ((s + n / 2) / n) as u8);
            out.put_pixel(ox, oy, Rgb(px));
        }
    }
    out
}

/// Copies the part of `src` (placed at `(src_y, src_x)` in level space) that
/// overlaps the request into `dst`.
fn blit(dst: &mut RgbImage, req: &RegionRequest, src: &RgbImage, src_y: usize, src_x: usize) {
    let y0 = req.y.max(src_y);
    let x0 = req.x.max(src_x);
    let y1 = (req.y + req.side).min(src_y + src.height() as usize);
    let x1 = (req.x + req.side).min(src_x + src.width() as usize);
    if y0 >= y1 || x0 >= x1 {
        return;
    }
    let n = (x1 - x0) * 3;
    let sw = src.width() as usize * 3;
    let dw = req.side * 3;
    let s = src.as_raw();
    let d: &mut [u8] = dst;
    for y in y0..y1 {
        let so = (y - src_y) * sw + (x0 - src_x) * 3;
        let doff = (y - req.y) * dw + (x0 - req.x) * 3;
        d[doff..doff + n].copy_from_slice(&s[so..so + n]);
    }
}

fn white_buffer(side: usize) -> RgbImage {
    RgbImage::from_pixel(side as u32, side as u32, WHITE)
}

/// Whole pyramid held in memory. Used by the generator and by tests.
#[derive(Debug, Clone)]
pub struct MemorySlide {
    id: String,
    levels: Vec<RgbImage>,
}

impl MemorySlide {
    pub fn new(id: impl Into<String>, level0: RgbImage, levels: usize) -> Self {
        let mut pyramid = vec![level0];
        while pyramid.len() < levels.max(1) {
            let next = downsample(pyramid.last().unwrap());
            pyramid.push(next);
        }
        MemorySlide {
            id: id.into(),
            levels: pyramid,
        }
    }

    pub fn level(&self, level: usize) -> &RgbImage {
        &self.levels[level]
    }
}

impl RegionSource for MemorySlide {
    fn slide_id(&self) -> &str {
        &self.id
    }

    fn level_count(&self) -> usize {
        self.levels.len()
    }

    fn level_dims(&self, level: usize) -> Option<(usize, usize)> {
        self.levels
            .get(level)
            .map(|img| (img.height() as usize, img.width() as usize))
    }

    fn fetch_region(&self, req: RegionRequest) -> Result<RgbImage> {
        let img = self.levels.get(req.level).ok_or(Error::Level {
            level: req.level,
            levels: self.levels.len(),
        })?;
        let mut out = white_buffer(req.side);
        blit(&mut out, &req, img, 0, 0);
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct WriteOptions {
    pub tile_side: usize,
    /// `None` picks [`default_levels`].
    pub levels: Option<usize>,
}

impl Default for WriteOptions {
    fn default() -> Self {
        WriteOptions {
            tile_side: DEFAULT_TILE_SIDE,
            levels: None,
        }
    }
}

/// Writes `level0` and its downsampled levels as a tiled slide directory.
pub fn write_slide(
    level0: &RgbImage,
    slide_id: &str,
    dir: &Path,
    opts: WriteOptions,
) -> Result<Manifest> {
    if opts.tile_side == 0 {
        return Err(Error::Config("tile_side must be positive".into()));
    }
    let (h0, w0) = (level0.height() as usize, level0.width() as usize);
    let levels = opts.levels.unwrap_or_else(|| default_levels(h0, w0)).max(1);
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let t = opts.tile_side;
    let mut current: Option<RgbImage> = None;
    for level in 0..levels {
        let img = match current.take() {
            None => level0.clone(),
            Some(prev) => downsample(&prev),
        };
        let (h, w) = (img.height() as usize, img.width() as usize);
        for row in 0..h.div_ceil(t) {
            for col in 0..w.div_ceil(t) {
                let th = t.min(h - row * t) as u32;
                let tw = t.min(w - col * t) as u32;
                let tile =
                    image::imageops::crop_imm(&img, (col * t) as u32, (row * t) as u32, tw, th)
                        .to_image();
                let path = dir.join(tile_file_name(level, row, col));
                tile.save_with_format(&path, image::ImageFormat::Png)
                    .map_err(|source| Error::Image { path, source })?;
            }
        }
        current = Some(img);
    }

    let manifest = Manifest {
        slide_id: slide_id.to_string(),
        width0: w0,
        height0: h0,
        levels,
        tile_side: t,
        level_dims: Some(
            pyramid_dims(h0, w0, levels)
                .into_iter()
                .map(|(h, w)| [h, w])
                .collect(),
        ),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

type TileKey = (usize, usize, usize);

#[derive(Debug, Default)]
struct TileCache {
    tiles: HashMap<TileKey, Arc<RgbImage>>,
    order: VecDeque<TileKey>,
}

/// Opened on-disk slide. Read-only; `fetch_region` may be called concurrently.
#[derive(Debug)]
pub struct SlidePyramid {
    dir: PathBuf,
    manifest: Manifest,
    dims: Vec<(usize, usize)>,
    cache: Mutex<TileCache>,
    cache_capacity: usize,
}

impl SlidePyramid {
    /// Opens a slide from its directory or its `manifest.json` path.
    pub fn open(path: &Path) -> Result<Self> {
        let (dir, manifest_path) = if path.is_dir() {
            (path.to_path_buf(), path.join(MANIFEST_FILE))
        } else {
            let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
            (dir, path.to_path_buf())
        };
        let manifest: Manifest = read_json(&manifest_path)?;
        let format_err = |msg: String| Error::Format {
            path: manifest_path.clone(),
            msg,
        };
        if manifest.levels == 0 || manifest.tile_side == 0 {
            return Err(format_err("levels and tile_side must be positive".into()));
        }
        if manifest.width0 == 0 || manifest.height0 == 0 {
            return Err(format_err("level-0 dimensions must be positive".into()));
        }
        let dims = pyramid_dims(manifest.height0, manifest.width0, manifest.levels);
        if let Some(declared) = &manifest.level_dims {
            let expected: Vec<[usize; 2]> = dims.iter().map(|&(h, w)| [h, w]).collect();
            if declared != &expected {
                return Err(format_err(format!(
                    "level_dims {declared:?} violate the halving rule, expected {expected:?}"
                )));
            }
        }
        let t = manifest.tile_side;
        for (level, &(h, w)) in dims.iter().enumerate() {
            for row in 0..h.div_ceil(t) {
                for col in 0..w.div_ceil(t) {
                    let p = dir.join(tile_file_name(level, row, col));
                    if !p.is_file() {
                        return Err(Error::MissingTile(p));
                    }
                }
            }
        }
        Ok(SlidePyramid {
            dir,
            manifest,
            dims,
            cache: Mutex::new(TileCache::default()),
            cache_capacity: 96,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn tile(&self, level: usize, row: usize, col: usize) -> Result<Arc<RgbImage>> {
        let key = (level, row, col);
        if let Some(t) = self.cache.lock().unwrap().tiles.get(&key) {
            return Ok(Arc::clone(t));
        }
        let path = self.dir.join(tile_file_name(level, row, col));
        let img = image::open(&path)
            .map_err(|source| match source {
                image::ImageError::IoError(e) => Error::io(&path, e),
                other => Error::Image {
                    path: path.clone(),
                    source: other,
                },
            })?
            .to_rgb8();
        let t = self.manifest.tile_side;
        let (h, w) = self.dims[level];
        let (eh, ew) = (t.min(h - row * t), t.min(w - col * t));
        if img.height() as usize != eh || img.width() as usize != ew {
            return Err(Error::Format {
                path,
                msg: format!(
                    "tile is {}x{}, expected {ew}x{eh}",
                    img.width(),
                    img.height()
                ),
            });
        }
        let img = Arc::new(img);
        let mut cache = self.cache.lock().unwrap();
        if !cache.tiles.contains_key(&key) {
            while cache.order.len() >= self.cache_capacity {
                if let Some(old) = cache.order.pop_front() {
                    cache.tiles.remove(&old);
                }
            }
            cache.order.push_back(key);
            cache.tiles.insert(key, Arc::clone(&img));
        }
        Ok(img)
    }
}

impl RegionSource for SlidePyramid {
    fn slide_id(&self) -> &str {
        &self.manifest.slide_id
    }

    fn level_count(&self) -> usize {
        self.manifest.levels
    }

    fn level_dims(&self, level: usize) -> Option<(usize, usize)> {
        self.dims.get(level).copied()
    }

    fn fetch_region(&self, req: RegionRequest) -> Result<RgbImage> {
        let &(h, w) = self.dims.get(req.level).ok_or(Error::Level {
            level: req.level,
            levels: self.manifest.levels,
        })?;
        let mut out = white_buffer(req.side);
        if req.y >= h || req.x >= w || req.side == 0 {
            return Ok(out);
        }
        let t = self.manifest.tile_side;
        let y_end = (req.y + req.side).min(h);
        let x_end = (req.x + req.side).min(w);
        for row in req.y / t..=(y_end - 1) / t {
            for col in req.x / t..=(x_end - 1) / t {
                let tile = self.tile(req.level, row, col)?;
                blit(&mut out, &req, &tile, row * t, col * t);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(h: u32, w: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            Rgb([(x * 7 + y) as u8, (y * 3) as u8, ((x ^ y) * 5) as u8])
        })
    }

    #[test]
    fn write_open_fetch_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = pattern(300, 410);
        let opts = WriteOptions {
            tile_side: 128,
            levels: Some(3),
        };
        write_slide(&img, "s1", dir.path(), opts).unwrap();
        let slide = SlidePyramid::open(dir.path()).unwrap();
        assert_eq!(slide.slide_id(), "s1");
        assert_eq!(slide.level_dims(0), Some((300, 410)));
        assert_eq!(slide.level_dims(2), Some((75, 103)));
        let full = slide.fetch_region(RegionRequest::level0(0, 0, 410)).unwrap();
        for y in 0..300 {
            for x in 0..410 {
                assert_eq!(full.get_pixel(x, y), img.get_pixel(x, y));
            }
        }
        for y in 300..410 {
            assert_eq!(*full.get_pixel(5, y), WHITE);
        }
    }

    #[test]
    fn manifest_path_also_opens() {
        let dir = tempfile::tempdir().unwrap();
        write_slide(&pattern(64, 64), "m", dir.path(), WriteOptions::default()).unwrap();
        let slide = SlidePyramid::open(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(slide.level_count(), 1);
    }

    #[test]
    fn four_level_halving() {
        let dims = pyramid_dims(4096, 4096, 4);
        assert_eq!(dims, vec![(4096, 4096), (2048, 2048), (1024, 1024), (512, 512)]);
        assert_eq!(pyramid_dims(5, 7, 3), vec![(5, 7), (3, 4), (2, 2)]);
        assert_eq!(default_levels(4096, 4096), 7);
    }

    #[test]
    fn constant_gray_survives_downsampling() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::from_pixel(1024, 1024, Rgb([128, 128, 128]));
        write_slide(&img, "g", dir.path(), WriteOptions { tile_side: 512, levels: Some(3) }).unwrap();
        let slide = SlidePyramid::open(dir.path()).unwrap();
        let r = slide
            .fetch_region(RegionRequest { level: 2, y: 0, x: 0, side: 256 })
            .unwrap();
        assert!(r.pixels().all(|p| *p == Rgb([128, 128, 128])));
    }

    #[test]
    fn right_edge_is_white_filled() {
        let slide = MemorySlide::new("e", pattern(50, 50), 1);
        let r = slide.fetch_region(RegionRequest::level0(10, 40, 20)).unwrap();
        assert_eq!(r.get_pixel(9, 0), pattern(50, 50).get_pixel(49, 10));
        assert_eq!(*r.get_pixel(10, 0), WHITE);
        assert_eq!(*r.get_pixel(19, 19), WHITE);
    }

    #[test]
    fn level_out_of_range() {
        let slide = MemorySlide::new("e", pattern(50, 50), 2);
        let err = slide
            .fetch_region(RegionRequest { level: 2, y: 0, x: 0, side: 4 })
            .unwrap_err();
        assert!(matches!(err, Error::Level { level: 2, levels: 2 }));
    }

    #[test]
    fn missing_tile_and_bad_dims_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_slide(&pattern(200, 200), "x", dir.path(), WriteOptions { tile_side: 128, levels: Some(2) })
            .unwrap();
        std::fs::remove_file(dir.path().join("L1_r0_c0.png")).unwrap();
        assert!(matches!(
            SlidePyramid::open(dir.path()),
            Err(Error::MissingTile(_))
        ));

        let dir = tempfile::tempdir().unwrap();
        write_slide(&pattern(200, 200), "x", dir.path(), WriteOptions { tile_side: 128, levels: Some(2) })
            .unwrap();
        let mpath = dir.path().join(MANIFEST_FILE);
        let mut m: Manifest = read_json(&mpath).unwrap();
        m.level_dims = Some(vec![[200, 200], [99, 100]]);
        write_json(&mpath, &m).unwrap();
        assert!(matches!(SlidePyramid::open(dir.path()), Err(Error::Format { .. })));

        std::fs::write(&mpath, "{not json").unwrap();
        assert!(matches!(SlidePyramid::open(dir.path()), Err(Error::Json { .. })));
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, b"x").unwrap();
        let err = write_slide(&pattern(8, 8), "x", &blocker.join("sub"), WriteOptions::default())
            .unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn downsampling_conserves_mean() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let h = rng.gen_range(2..40u32) * 2;
            let w = rng.gen_range(2..40u32) * 2;
            let img = RgbImage::from_fn(w, h, |_, _| Rgb([rng.gen(), rng.gen(), rng.gen()]));
            let small = downsample(&img);
            for c in 0..3 {
                let mean = |im: &RgbImage| {
                    im.pixels().map(|p| p[c] as f64).sum::<f64>() / (im.width() * im.height()) as f64
                };
                assert!((mean(&img) - mean(&small)).abs() <= 1.0);
            }
        }
    }
}
