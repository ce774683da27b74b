//! Deterministic synthetic slides with known ground truth.
//!
//! A slide is white background plus a few tissue lobes. Tumor slides carry
//! lesions (micro or macro); every slide may carry mimics, which share the
//! lesion color but carry blotchy low-frequency noise instead of fine grain.
//! Shapes are noisy discs drawn as polygons, and the same polygons are
//! written as annotations.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{read_json, write_json, Error, Result};
use crate::eval::{point_in_polygon, polygon_area, LesionAnnotation, Polygon, SlideLabel};
use crate::pipeline::{item_seed, run_pipeline, PipelineConfig};
use crate::slide_io::{write_slide, WriteOptions, DEFAULT_TILE_SIDE};

pub const BENCHMARK_FILE: &str = "benchmark.json";
pub const DEFAULT_SLIDE_SIDE: usize = 4096;
pub const LARGE_SLIDE_SIDE: usize = 16384;

/// Disc with a radius modulated by a few cosine harmonics:
/// `r(θ) = radius · (1 + Σ amp_k cos(k θ + phase_k))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    #[serde(default)]
    pub harmonics: Vec<Harmonic>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub k: u32,
    pub amp: f64,
    pub phase: f64,
}

impl Blob {
    pub fn disc(cx: f64, cy: f64, radius: f64) -> Self {
        Blob { cx, cy, radius, harmonics: Vec::new() }
    }

    fn wobble(&self) -> f64 {
        self.harmonics.iter().map(|h| h.amp.abs()).sum()
    }

    pub fn max_radius(&self) -> f64 {
        self.radius * (1.0 + self.wobble())
    }

    pub fn min_radius(&self) -> f64 {
        self.radius * (1.0 - self.wobble())
    }

    pub fn polygon(&self, vertices: usize) -> Polygon {
        (0..vertices)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / vertices as f64;
                let m: f64 = self
                    .harmonics
                    .iter()
                    .map(|h| h.amp * (h.k as f64 * t + h.phase).cos())
                    .sum();
                let r = self.radius * (1.0 + m);
                [self.cx + r * t.cos(), self.cy + r * t.sin()]
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LesionKind {
    Micro,
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionSpec {
    pub shape: Blob,
    pub kind: LesionKind,
    /// Blend from tissue (0) to full lesion appearance (1).
    #[serde(default = "full_strength")]
    pub strength: f64,
}

fn full_strength() -> f64 {
    1.0
}

/// Colors and noise amplitudes, in 8-bit levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureParams {
    pub tissue_rgb: [f64; 3],
    pub lesion_rgb: [f64; 3],
    pub mimic_rgb: [f64; 3],
    /// Period of the smooth noise, pixels.
    pub smooth_scale: f64,
    pub smooth_amp: f64,
    /// Per-pixel noise amplitude in tissue.
    pub tissue_grain: f64,
    /// Per-pixel noise amplitude in lesions.
    pub lesion_grain: f64,
    /// Amplitude of the mimic noise.
    pub mimic_grain: f64,
    /// Period of the mimic noise, pixels.
    pub mimic_grain_scale: f64,
    /// Per-slide color shift, uniform in `±stain_shift` per channel.
    pub stain_shift: f64,
}

impl Default for TextureParams {
    fn default() -> Self {
        TextureParams {
            tissue_rgb: [226.0, 158.0, 196.0],
            lesion_rgb: [158.0, 90.0, 180.0],
            mimic_rgb: [158.0, 90.0, 180.0],
            smooth_scale: 24.0,
            smooth_amp: 18.0,
            tissue_grain: 10.0,
            lesion_grain: 42.0,
            mimic_grain: 60.0,
            mimic_grain_scale: 3.0,
            stain_shift: 8.0,
        }
    }
}

/// Everything needed to render one slide bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideRecipe {
    pub slide_id: String,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Informational: the white fraction the lobes were sized for.
    pub white_fraction: f64,
    pub lobes: Vec<Blob>,
    #[serde(default)]
    pub lesions: Vec<LesionSpec>,
    #[serde(default)]
    pub mimics: Vec<Blob>,
    #[serde(default)]
    pub texture: TextureParams,
    /// Micro lesions have `radius < micro_max_radius`, macro ones `>=`.
    pub micro_max_radius: f64,
    pub polygon_vertices: usize,
    #[serde(default = "default_tile_side")]
    pub tile_side: usize,
}

fn default_tile_side() -> usize {
    DEFAULT_TILE_SIDE
}

/// Knobs for random recipes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecipeConfig {
    pub side: usize,
    pub white_fraction: f64,
    pub max_lobes: usize,
    pub max_lesions: usize,
    /// Probability that a lesion is micro.
    pub micro_probability: f64,
    pub micro_radius: [f64; 2],
    pub macro_radius: [f64; 2],
    /// Range of per-lesion appearance strength.
    pub lesion_strength: [f64; 2],
    pub max_mimics: usize,
    pub min_mimics: usize,
    pub mimic_radius: [f64; 2],
    /// Clearance kept between lesions, mimics and lobe borders, pixels.
    pub clearance: f64,
    pub texture: TextureParams,
    pub polygon_vertices: usize,
    pub tile_side: usize,
}

impl Default for RecipeConfig {
    fn default() -> Self {
        RecipeConfig {
            side: DEFAULT_SLIDE_SIDE,
            white_fraction: 0.75,
            max_lobes: 3,
            max_lesions: 4,
            micro_probability: 0.5,
            micro_radius: [7.0, 14.0],
            macro_radius: [40.0, 100.0],
            lesion_strength: [1.0, 1.0],
            min_mimics: 2,
            max_mimics: 5,
            mimic_radius: [14.0, 45.0],
            clearance: 24.0,
            texture: TextureParams::default(),
            polygon_vertices: 96,
            tile_side: DEFAULT_TILE_SIDE,
        }
    }
}

impl RecipeConfig {
    /// Preset for throughput runs.
    pub fn large() -> Self {
        RecipeConfig {
            side: LARGE_SLIDE_SIDE,
            ..Default::default()
        }
    }

    fn micro_max_radius(&self) -> f64 {
        (self.micro_radius[1] + self.macro_radius[0]) / 2.0
    }
}

fn wobbly<R: Rng>(rng: &mut R, cx: f64, cy: f64, radius: f64, amp: f64) -> Blob {
    let harmonics = (2..=4)
        .map(|k| Harmonic {
            k,
            amp: rng.gen_range(0.0..amp) / (k - 1) as f64,
            phase: rng.gen_range(0.0..2.0 * PI),
        })
        .collect();
    Blob { cx, cy, radius, harmonics }
}

fn circles_clear(a: &Blob, b: &Blob, gap: f64) -> bool {
    let d = ((a.cx - b.cx).powi(2) + (a.cy - b.cy).powi(2)).sqrt();
    d >= a.max_radius() + b.max_radius() + gap
}

impl SlideRecipe {
    /// Random recipe; `tumor` slides get at least one lesion.
    pub fn random(slide_id: &str, seed: u64, tumor: bool, cfg: &RecipeConfig) -> Result<Self> {
        if !(0.0..1.0).contains(&cfg.white_fraction) || cfg.side < 64 {
            return Err(Error::Recipe(
                "need white_fraction in [0, 1) and side >= 64".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let side = cfg.side as f64;
        let tissue_area = (1.0 - cfg.white_fraction) * side * side;

        let mut lobes: Vec<Blob> = Vec::new();
        'outer: for n_lobes in (1..=cfg.max_lobes.max(1)).rev() {
            let n_lobes = rng.gen_range(1..=n_lobes);
            let weights: Vec<f64> = (0..n_lobes).map(|_| rng.gen_range(0.6..1.0)).collect();
            let total: f64 = weights.iter().sum();
            lobes.clear();
            for w in &weights {
                let area = tissue_area * w / total;
                let mut placed = false;
                for _ in 0..500 {
                    let mut blob = wobbly(&mut rng, 0.0, 0.0, 1.0, 0.12);
                    let gain: f64 = blob.harmonics.iter().map(|h| h.amp * h.amp / 2.0).sum();
                    blob.radius = (area / (PI * (1.0 + gain))).sqrt();
                    let m = blob.max_radius() + 4.0;
                    if 2.0 * m >= side {
                        break;
                    }
                    blob.cx = rng.gen_range(m..side - m);
                    blob.cy = rng.gen_range(m..side - m);
                    if lobes.iter().all(|l| circles_clear(l, &blob, 16.0)) {
                        lobes.push(blob);
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    continue 'outer;
                }
            }
            break;
        }
        if lobes.is_empty() {
            return Err(Error::Recipe("could not place tissue lobes".into()));
        }

        // Lesions and mimics sit in the inner disc of a lobe.
        let mut placed: Vec<Blob> = Vec::new();
        let place = |rng: &mut ChaCha8Rng, radius: f64, placed: &mut Vec<Blob>| {
            for _ in 0..400 {
                let lobe = &lobes[rng.gen_range(0..lobes.len())];
                let blob = wobbly(rng, 0.0, 0.0, radius, 0.15);
                let room = lobe.min_radius() - blob.max_radius() - cfg.clearance;
                if room <= 0.0 {
                    continue;
                }
                let (t, u): (f64, f64) = (rng.gen_range(0.0..2.0 * PI), rng.gen());
                let rr = room * u.sqrt();
                let blob = Blob { cx: lobe.cx + rr * t.cos(), cy: lobe.cy + rr * t.sin(), ..blob };
                if placed.iter().all(|p| circles_clear(p, &blob, cfg.clearance)) {
                    placed.push(blob.clone());
                    return Some(blob);
                }
            }
            None
        };

        let mut lesions = Vec::new();
        if tumor {
            let n = rng.gen_range(1..=cfg.max_lesions.max(1));
            for i in 0..n {
                let micro = rng.gen_bool(cfg.micro_probability);
                let (kind, range) = if micro {
                    (LesionKind::Micro, cfg.micro_radius)
                } else {
                    (LesionKind::Macro, cfg.macro_radius)
                };
                let r = rng.gen_range(range[0]..range[1]);
                let [s0, s1] = cfg.lesion_strength;
                let strength = if s0 < s1 { rng.gen_range(s0..=s1) } else { s0 };
                match place(&mut rng, r, &mut placed) {
                    Some(shape) => lesions.push(LesionSpec { shape, kind, strength }),
                    None if i == 0 => {
                        // fall back to a micro lesion, which always fits more easily
                        let r = cfg.micro_radius[0];
                        let shape = place(&mut rng, r, &mut placed).ok_or_else(|| {
                            Error::Recipe(format!("{slide_id}: no room for a lesion"))
                        })?;
                        lesions.push(LesionSpec { shape, kind: LesionKind::Micro, strength });
                    }
                    None => {}
                }
            }
        }
        let mut mimics = Vec::new();
        let n = rng.gen_range(cfg.min_mimics..=cfg.max_mimics.max(cfg.min_mimics));
        for _ in 0..n {
            let r = rng.gen_range(cfg.mimic_radius[0]..cfg.mimic_radius[1]);
            if let Some(b) = place(&mut rng, r, &mut placed) {
                mimics.push(b);
            }
        }

        let recipe = SlideRecipe {
            slide_id: slide_id.to_string(),
            seed,
            width: cfg.side,
            height: cfg.side,
            white_fraction: cfg.white_fraction,
            lobes,
            lesions,
            mimics,
            texture: cfg.texture.clone(),
            micro_max_radius: cfg.micro_max_radius(),
            polygon_vertices: cfg.polygon_vertices,
            tile_side: cfg.tile_side,
        };
        recipe.validate()?;
        Ok(recipe)
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.slide_id;
        if self.width == 0 || self.height == 0 || self.polygon_vertices < 3 || self.tile_side == 0 {
            return Err(Error::Recipe(format!("{id}: empty dimensions or polygon")));
        }
        let lobe_polys: Vec<Polygon> =
            self.lobes.iter().map(|b| b.polygon(self.polygon_vertices)).collect();
        let inside_tissue = |poly: &Polygon| {
            poly.iter()
                .all(|p| lobe_polys.iter().any(|l| point_in_polygon(l, p[0], p[1])))
        };
        for (k, l) in self.lesions.iter().enumerate() {
            let micro = l.shape.radius < self.micro_max_radius;
            if micro != (l.kind == LesionKind::Micro) {
                return Err(Error::Recipe(format!(
                    "{id}: lesion {k} radius {} contradicts kind {:?} (micro below {})",
                    l.shape.radius, l.kind, self.micro_max_radius
                )));
            }
            if !(0.0..=1.0).contains(&l.strength) {
                return Err(Error::Recipe(format!("{id}: lesion {k} strength outside [0, 1]")));
            }
            if !inside_tissue(&l.shape.polygon(self.polygon_vertices)) {
                return Err(Error::Recipe(format!("{id}: lesion {k} leaves the tissue")));
            }
        }
        for (k, m) in self.mimics.iter().enumerate() {
            if !inside_tissue(&m.polygon(self.polygon_vertices)) {
                return Err(Error::Recipe(format!("{id}: mimic {k} leaves the tissue")));
            }
        }
        let shapes: Vec<&Blob> = self
            .lesions
            .iter()
            .map(|l| &l.shape)
            .chain(self.mimics.iter())
            .collect();
        for i in 0..shapes.len() {
            for j in i + 1..shapes.len() {
                if !circles_clear(shapes[i], shapes[j], 0.0) {
                    return Err(Error::Recipe(format!(
                        "{id}: lesion/mimic shapes {i} and {j} overlap"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn label(&self) -> SlideLabel {
        if self.lesions.is_empty() {
            SlideLabel::Normal
        } else {
            SlideLabel::Tumor
        }
    }

    pub fn annotation(&self) -> LesionAnnotation {
        LesionAnnotation::new(
            self.slide_id.clone(),
            self.lesions
                .iter()
                .map(|l| l.shape.polygon(self.polygon_vertices))
                .collect(),
        )
    }
}

/// Ground truth beyond the annotation: tissue and mimic footprints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideTruth {
    pub slide_id: String,
    pub width: usize,
    pub height: usize,
    pub tissue: Vec<Polygon>,
    pub mimics: Vec<Polygon>,
    pub lesion_kinds: Vec<LesionKind>,
    pub lesion_pixels: Vec<usize>,
    pub white_fraction: f64,
}

impl SlideTruth {
    pub fn in_tissue(&self, x: f64, y: f64) -> bool {
        self.tissue.iter().any(|p| point_in_polygon(p, x, y))
    }

    pub fn in_mimic(&self, x: f64, y: f64) -> bool {
        self.mimics.iter().any(|p| point_in_polygon(p, x, y))
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform in `[-1, 1)`.
fn lattice(seed: u64, a: i64, b: i64) -> f64 {
    let h = splitmix(seed ^ splitmix((a as u64).wrapping_mul(0x9e37_79b1) ^ (b as u64) << 32));
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

fn smooth_noise(seed: u64, x: f64, y: f64, scale: f64) -> f64 {
    let (gx, gy) = (x / scale, y / scale);
    let (ix, iy) = (gx.floor(), gy.floor());
    let s = |t: f64| t * t * (3.0 - 2.0 * t);
    let (fx, fy) = (s(gx - ix), s(gy - iy));
    let (ix, iy) = (ix as i64, iy as i64);
    let v00 = lattice(seed, ix, iy);
    let v10 = lattice(seed, ix + 1, iy);
    let v01 = lattice(seed, ix, iy + 1);
    let v11 = lattice(seed, ix + 1, iy + 1);
    let top = v00 + (v10 - v00) * fx;
    let bottom = v01 + (v11 - v01) * fx;
    top + (bottom - top) * fy
}

/// Calls `f(x)` for every pixel of row `y` whose center lies in the polygon
/// (edges included), using the same crossing rule as [`point_in_polygon`].
fn scan_row(poly: &[[f64; 2]], y: usize, width: usize, mut f: impl FnMut(usize)) {
    let yc = y as f64 + 0.5;
    let mut xs: Vec<f64> = Vec::new();
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a[1] > yc) != (b[1] > yc) {
            xs.push(a[0] + (yc - a[1]) * (b[0] - a[0]) / (b[1] - a[1]));
        }
    }
    xs.sort_by(f64::total_cmp);
    for pair in xs.chunks_exact(2) {
        let lo = (pair[0] - 0.5).ceil().max(0.0);
        let hi = (pair[1] - 0.5).floor().min(width as f64 - 1.0);
        if lo <= hi {
            for x in lo as usize..=hi as usize {
                f(x);
            }
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Region {
    Background,
    Tissue,
    Mimic,
    Lesion(usize),
}

/// Renders level 0 and the ground truth.
pub fn render(recipe: &SlideRecipe) -> Result<(RgbImage, LesionAnnotation, SlideTruth)> {
    recipe.validate()?;
    let (w, h) = (recipe.width, recipe.height);
    let nv = recipe.polygon_vertices;
    let mut region = vec![Region::Background; w * h];
    let paint = |poly: &Polygon, r: Region, region: &mut Vec<Region>| -> usize {
        let (y0, y1) = poly
            .iter()
            .fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p[1]), b.max(p[1])));
        let mut count = 0;
        let y0 = (y0.floor().max(0.0)) as usize;
        let y1 = (y1.ceil().min(h as f64 - 1.0)).max(0.0) as usize;
        for y in y0..=y1.min(h - 1) {
            scan_row(poly, y, w, |x| {
                region[y * w + x] = r;
                count += 1;
            });
        }
        count
    };
    let tissue: Vec<Polygon> = recipe.lobes.iter().map(|b| b.polygon(nv)).collect();
    for p in &tissue {
        paint(p, Region::Tissue, &mut region);
    }
    let mimics: Vec<Polygon> = recipe.mimics.iter().map(|b| b.polygon(nv)).collect();
    for p in &mimics {
        paint(p, Region::Mimic, &mut region);
    }
    let annotation = recipe.annotation();
    let lesion_pixels: Vec<usize> = annotation
        .polygons
        .iter()
        .enumerate()
        .map(|(k, p)| paint(p, Region::Lesion(k), &mut region))
        .collect();

    let t = &recipe.texture;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(recipe.seed));
    let shift: [f64; 3] = std::array::from_fn(|_| {
        if t.stain_shift > 0.0 {
            rng.gen_range(-t.stain_shift..t.stain_shift)
        } else {
            0.0
        }
    });
    let lesion_look: Vec<([f64; 3], f64)> = recipe
        .lesions
        .iter()
        .map(|l| {
            let mix = |a: f64, b: f64| a + l.strength * (b - a);
            (
                std::array::from_fn(|c| mix(t.tissue_rgb[c], t.lesion_rgb[c])),
                mix(t.tissue_grain, t.lesion_grain),
            )
        })
        .collect();
    let (smooth_seed, grain_seed) = (splitmix(recipe.seed ^ 1), splitmix(recipe.seed ^ 2));
    let mut img = RgbImage::from_pixel(w as u32, h as u32, Rgb([255, 255, 255]));
    let mut white = 0usize;
    for y in 0..h {
        for x in 0..w {
            let r = region[y * w + x];
            if r == Region::Background {
                white += 1;
                continue;
            }
            let (xf, yf) = (x as f64, y as f64);
            let smooth = smooth_noise(smooth_seed, xf, yf, t.smooth_scale) * t.smooth_amp;
            let (base, grain) = match r {
                Region::Tissue => (t.tissue_rgb, t.tissue_grain),
                Region::Mimic => (t.mimic_rgb, 0.0),
                Region::Lesion(k) => lesion_look[k],
                Region::Background => unreachable!(),
            };
            let g = if r == Region::Mimic {
                smooth_noise(grain_seed, xf, yf, t.mimic_grain_scale) * t.mimic_grain
            } else {
                lattice(grain_seed, x as i64, y as i64) * grain
            };
            let px: [u8; 3] =
                std::array::from_fn(|c| (base[c] + shift[c] + smooth + g).round().clamp(0.0, 250.0) as u8);
            img.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    let truth = SlideTruth {
        slide_id: recipe.slide_id.clone(),
        width: w,
        height: h,
        tissue,
        mimics,
        lesion_kinds: recipe.lesions.iter().map(|l| l.kind).collect(),
        lesion_pixels,
        white_fraction: white as f64 / (w * h) as f64,
    };
    Ok((img, annotation, truth))
}

/// Paths written by [`generate_slide`], relative to its output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideEntry {
    pub slide_id: String,
    pub label: SlideLabel,
    pub slide_dir: PathBuf,
    pub annotation: PathBuf,
    pub truth: PathBuf,
}

/// Renders a recipe and writes `{id}/` (pyramid), `{id}.annotation.json`
/// and `{id}.truth.json` under `out`.
pub fn generate_slide(recipe: &SlideRecipe, out: &Path) -> Result<SlideEntry> {
    let (img, annotation, truth) = render(recipe)?;
    let id = &recipe.slide_id;
    let entry = SlideEntry {
        slide_id: id.clone(),
        label: recipe.label(),
        slide_dir: PathBuf::from(id),
        annotation: PathBuf::from(format!("{id}.annotation.json")),
        truth: PathBuf::from(format!("{id}.truth.json")),
    };
    write_slide(
        &img,
        id,
        &out.join(&entry.slide_dir),
        WriteOptions { tile_side: recipe.tile_side, levels: None },
    )?;
    annotation.save(&out.join(&entry.annotation))?;
    write_json(&out.join(&entry.truth), &truth)?;
    Ok(entry)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub recipe: RecipeConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            n_train: 27,
            n_test: 13,
            seed: 0,
            recipe: RecipeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub seed: u64,
    pub config: BenchmarkConfig,
    pub train: Vec<SlideEntry>,
    pub test: Vec<SlideEntry>,
}

impl BenchmarkManifest {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Tumor count for a split of `n` slides, keeping both classes when `n >= 2`.
fn tumor_count(n: usize, ratio: f64) -> usize {
    let t = (n as f64 * ratio).round() as usize;
    if n >= 2 {
        t.clamp(1, n - 1)
    } else {
        t.min(n)
    }
}

/// Recipes for the whole benchmark, train first.
pub fn benchmark_recipes(cfg: &BenchmarkConfig) -> Result<Vec<(bool, SlideRecipe)>> {
    if cfg.n_train == 0 {
        return Err(Error::Manifest("training set must not be empty".into()));
    }
    if cfg.n_test == 0 {
        return Err(Error::Manifest("test set must not be empty".into()));
    }
    let train_tumor = tumor_count(cfg.n_train, 11.0 / 27.0);
    let test_tumor = tumor_count(cfg.n_test, 5.0 / 13.0);
    let mut out = Vec::with_capacity(cfg.n_train + cfg.n_test);
    let specs = (0..cfg.n_train)
        .map(|i| (true, format!("train_{i:03}"), i >= cfg.n_train - train_tumor))
        .chain((0..cfg.n_test).map(|i| (false, format!("test_{i:03}"), i >= cfg.n_test - test_tumor)));
    for (k, (train, id, tumor)) in specs.enumerate() {
        let seed = item_seed(cfg.seed, k as u64);
        out.push((train, SlideRecipe::random(&id, seed, tumor, &cfg.recipe)?));
    }
    Ok(out)
}

/// Generates every slide and writes `benchmark.json` under `out`.
pub fn generate_benchmark(
    cfg: &BenchmarkConfig,
    out: &Path,
    pipeline: &PipelineConfig,
) -> Result<BenchmarkManifest> {
    let recipes = benchmark_recipes(cfg)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let (entries, _) = run_pipeline(
        &recipes,
        |_, (_, recipe)| generate_slide(recipe, out),
        |_, entry| Ok(entry),
        pipeline,
    )?;
    let mut manifest = BenchmarkManifest {
        seed: cfg.seed,
        config: cfg.clone(),
        train: Vec::new(),
        test: Vec::new(),
    };
    for ((train, _), entry) in recipes.iter().zip(entries) {
        if *train {
            manifest.train.push(entry);
        } else {
            manifest.test.push(entry);
        }
    }
    write_json(&out.join(BENCHMARK_FILE), &manifest)?;
    Ok(manifest)
}

/// Painted-versus-polygon area error, as a fraction of the polygon area.
pub fn area_error(polygon: &[[f64; 2]], painted: usize) -> f64 {
    let a = polygon_area(polygon);
    (painted as f64 - a).abs() / a
}
