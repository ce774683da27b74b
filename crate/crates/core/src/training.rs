//! Patch sampling, augmentation, SGD training and hard negative mining.

use std::collections::HashSet;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{LesionAnnotation, SlideLabel};
use crate::geometry::ScanGeometry;
use crate::pipeline::{item_seed, run_pipeline, PipelineConfig};
use crate::preproc::TissueMask;
use crate::reconstruct::{scan_slide, ProbabilityMap};
use crate::scorer::{ConvNetSpec, ConvParams, Network, OpCounter, Scorer, Tensor};
use crate::slide_io::{RegionRequest, RegionSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleRound {
    Initial,
    Hnm,
}

/// A training patch by reference: the `L_i x L_i` square centered on
/// `(x, y)` of slide `slide`. Pixels are fetched when a batch is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSample {
    pub slide: usize,
    pub slide_id: String,
    pub x: usize,
    pub y: usize,
    pub label: SlideLabel,
    pub round: SampleRound,
    /// Scorer output that got the patch mined, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f32>,
}

/// A slide prepared for sampling.
pub struct TrainingSlide<'a> {
    pub source: &'a dyn RegionSource,
    pub annotation: LesionAnnotation,
    pub mask: TissueMask,
}

impl TrainingSlide<'_> {
    pub fn slide_id(&self) -> &str {
        self.source.slide_id()
    }

    fn distance_to_lesions(&self, x: f64, y: f64) -> f64 {
        let mut best = f64::INFINITY;
        for poly in &self.annotation.polygons {
            if crate::eval::point_in_polygon(poly, x, y) {
                return 0.0;
            }
            for i in 0..poly.len() {
                best = best.min(segment_distance(poly[i], poly[(i + 1) % poly.len()], x, y));
            }
        }
        best
    }
}

fn segment_distance(a: [f64; 2], b: [f64; 2], x: f64, y: f64) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((x - a[0]) * dx + (y - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    let (px, py) = (a[0] + t * dx, a[1] + t * dy);
    ((x - px).powi(2) + (y - py).powi(2)).sqrt()
}

const ATTEMPTS_PER_SAMPLE: usize = 2000;

fn sample_positives(
    slide: &TrainingSlide,
    index: usize,
    n: usize,
    half: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PatchSample>> {
    let polys = &slide.annotation.polygons;
    if n == 0 {
        return Ok(Vec::new());
    }
    if polys.is_empty() {
        return Err(Error::InsufficientRegion {
            slide: slide.slide_id().to_string(),
            msg: format!("{n} tumor patches requested from a slide without lesions"),
        });
    }
    let boxes: Vec<[f64; 4]> = polys
        .iter()
        .map(|p| {
            p.iter().fold([f64::MAX, f64::MAX, f64::MIN, f64::MIN], |b, v| {
                [b[0].min(v[0]), b[1].min(v[1]), b[2].max(v[0]), b[3].max(v[1])]
            })
        })
        .collect();
    let areas: Vec<f64> = polys.iter().map(|p| crate::eval::polygon_area(p)).collect();
    let total: f64 = areas.iter().sum();
    let (h, w) = slide.source.dims();
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        if attempts > ATTEMPTS_PER_SAMPLE * n {
            return Err(Error::InsufficientRegion {
                slide: slide.slide_id().to_string(),
                msg: format!("found {} of {n} tumor patch centers", out.len()),
            });
        }
        // lesion chosen proportionally to its area
        let mut pick = rng.gen_range(0.0..total);
        let mut k = 0;
        while k + 1 < areas.len() && pick >= areas[k] {
            pick -= areas[k];
            k += 1;
        }
        let b = boxes[k];
        let x = rng.gen_range(b[0].floor()..=b[2].ceil()).round();
        let y = rng.gen_range(b[1].floor()..=b[3].ceil()).round();
        if x < half as f64 || y < half as f64 || x >= w as f64 || y >= h as f64 {
            continue;
        }
        if crate::eval::point_in_polygon(&polys[k], x, y) {
            out.push(PatchSample {
                slide: index,
                slide_id: slide.slide_id().to_string(),
                x: x as usize,
                y: y as usize,
                label: SlideLabel::Tumor,
                round: SampleRound::Initial,
                score: None,
            });
        }
    }
    Ok(out)
}

fn sample_negatives(
    slide: &TrainingSlide,
    index: usize,
    n: usize,
    half: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PatchSample>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let m = &slide.mask;
    let tissue: Vec<usize> = (0..m.cells.len()).filter(|&i| m.cells[i]).collect();
    let fail = |found: usize| Error::InsufficientRegion {
        slide: slide.slide_id().to_string(),
        msg: format!("found {found} of {n} normal tissue patch centers"),
    };
    if tissue.is_empty() {
        return Err(fail(0));
    }
    let scale = m.scale();
    let (h, w) = slide.source.dims();
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        if attempts > ATTEMPTS_PER_SAMPLE * n {
            return Err(fail(out.len()));
        }
        let cell = tissue[rng.gen_range(0..tissue.len())];
        let (r, c) = (cell / m.width, cell % m.width);
        let y = r * scale + rng.gen_range(0..scale);
        let x = c * scale + rng.gen_range(0..scale);
        if x < half || y < half || x >= w || y >= h {
            continue;
        }
        if slide.distance_to_lesions(x as f64, y as f64) < half as f64 {
            continue;
        }
        out.push(PatchSample {
            slide: index,
            slide_id: slide.slide_id().to_string(),
            x,
            y,
            label: SlideLabel::Normal,
            round: SampleRound::Initial,
            score: None,
        });
    }
    Ok(out)
}

/// Draws `n_pos` tumor and `n_neg` normal patch centers from every slide.
///
/// Tumor centers fall inside lesion polygons; normal centers fall in mask
/// tissue at least `patch_side / 2` away from every lesion.
pub fn sample_patches(
    slides: &[TrainingSlide],
    n_pos: usize,
    n_neg: usize,
    patch_side: usize,
    seed: u64,
) -> Result<Vec<PatchSample>> {
    sample_patches_per_slide(slides, &vec![(n_pos, n_neg); slides.len()], patch_side, seed)
}

/// [`sample_patches`] with `(n_pos, n_neg)` given per slide.
pub fn sample_patches_per_slide(
    slides: &[TrainingSlide],
    counts: &[(usize, usize)],
    patch_side: usize,
    seed: u64,
) -> Result<Vec<PatchSample>> {
    if counts.len() != slides.len() {
        return Err(Error::Config(format!(
            "{} sample counts for {} slides",
            counts.len(),
            slides.len()
        )));
    }
    let half = patch_side / 2;
    let mut out = Vec::new();
    for (i, (slide, &(n_pos, n_neg))) in slides.iter().zip(counts).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(item_seed(seed, i as u64));
        out.extend(sample_positives(slide, i, n_pos, half, &mut rng)?);
        out.extend(sample_negatives(slide, i, n_neg, half, &mut rng)?);
    }
    Ok(out)
}

/// Ranges random augmentations are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Maximum shift in pixels, each axis.
    pub translate: u32,
    pub rotate: bool,
    pub flip: bool,
    pub scale: [f64; 2],
    /// Maximum additive shift per channel.
    pub color: i16,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            translate: 2,
            rotate: true,
            flip: true,
            scale: [0.9, 1.1],
            color: 10,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            translate: 0,
            rotate: false,
            flip: false,
            scale: [1.0, 1.0],
            color: 0,
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> AugmentParams {
        let t = self.translate as i32;
        AugmentParams {
            dx: rng.gen_range(-t..=t),
            dy: rng.gen_range(-t..=t),
            rot90: if self.rotate { rng.gen_range(0..4) } else { 0 },
            scale: if self.scale[0] < self.scale[1] {
                rng.gen_range(self.scale[0]..=self.scale[1])
            } else {
                self.scale[0]
            },
            flip_h: self.flip && rng.gen(),
            flip_v: self.flip && rng.gen(),
            color: std::array::from_fn(|_| rng.gen_range(-self.color..=self.color)),
        }
    }

    /// Context border needed so that every transform stays inside the
    /// fetched window.
    pub fn context_pad(&self, patch_side: usize) -> usize {
        let s = self.scale[0].min(1.0);
        let grow = (patch_side as f64 * (std::f64::consts::SQRT_2 / s - 1.0) / 2.0).ceil();
        self.translate as usize + grow.max(0.0) as usize + 1
    }
}

/// One concrete augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub dx: i32,
    pub dy: i32,
    /// Counter-clockwise quarter turns.
    pub rot90: u8,
    pub scale: f64,
    pub flip_h: bool,
    pub flip_v: bool,
    pub color: [i16; 3],
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        dx: 0,
        dy: 0,
        rot90: 0,
        scale: 1.0,
        flip_h: false,
        flip_v: false,
        color: [0; 3],
    };
}

fn bilinear(img: &RgbImage, x: f64, y: f64) -> [f64; 3] {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let px = |xi: i64, yi: i64| img.get_pixel(xi.clamp(0, w - 1) as u32, yi.clamp(0, h - 1) as u32).0;
    let (xi, yi) = (x0 as i64, y0 as i64);
    let (a, b, c, d) = (px(xi, yi), px(xi + 1, yi), px(xi, yi + 1), px(xi + 1, yi + 1));
    std::array::from_fn(|k| {
        let top = a[k] as f64 * (1.0 - fx) + b[k] as f64 * fx;
        let bottom = c[k] as f64 * (1.0 - fx) + d[k] as f64 * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// Transforms `context` about its center and crops the central
/// `out_side x out_side` square.
pub fn augment(context: &RgbImage, params: &AugmentParams, out_side: usize) -> RgbImage {
    let (cw, ch) = (context.width() as f64, context.height() as f64);
    let half = out_side as f64 / 2.0;
    let mut out = RgbImage::new(out_side as u32, out_side as u32);
    for v in 0..out_side {
        for u in 0..out_side {
            // output offset from the patch center, undone step by step
            let (mut px, mut py) = (u as f64 + 0.5 - half, v as f64 + 0.5 - half);
            if params.flip_h {
                px = -px;
            }
            if params.flip_v {
                py = -py;
            }
            for _ in 0..params.rot90 % 4 {
                (px, py) = (-py, px);
            }
            px /= params.scale;
            py /= params.scale;
            let sx = cw / 2.0 + px + params.dx as f64 - 0.5;
            let sy = ch / 2.0 + py + params.dy as f64 - 0.5;
            let rgb = bilinear(context, sx, sy);
            let px: [u8; 3] = std::array::from_fn(|k| {
                (rgb[k].round() + params.color[k] as f64).clamp(0.0, 255.0) as u8
            });
            out.put_pixel(u as u32, v as u32, Rgb(px));
        }
    }
    out
}

/// `side x side` window centered on `(x, y)`, white beyond the slide.
pub fn fetch_centered<S: RegionSource + ?Sized>(
    slide: &S,
    x: usize,
    y: usize,
    side: usize,
) -> Result<RgbImage> {
    let half = side / 2;
    if x >= half && y >= half {
        return slide.fetch_region(RegionRequest::level0(y - half, x - half, side));
    }
    let (y0, x0) = (y.saturating_sub(half), x.saturating_sub(half));
    let (sy, sx) = (half - (y - y0), half - (x - x0));
    let region = slide.fetch_region(RegionRequest::level0(y0, x0, side))?;
    let mut out = RgbImage::from_pixel(side as u32, side as u32, Rgb([255, 255, 255]));
    for yy in 0..side - sy {
        for xx in 0..side - sx {
            out.put_pixel((xx + sx) as u32, (yy + sy) as u32, *region.get_pixel(xx as u32, yy as u32));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// L2 penalty on weights (not biases).
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub hnm_rounds: usize,
    /// Epochs of fine-tuning after each mining round.
    pub hnm_epochs: usize,
    pub hnm_threshold: f32,
    pub hnm_cap: usize,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 5e-3,
            batch_size: 32,
            epochs: 10,
            seed: 0,
            hnm_rounds: 1,
            hnm_epochs: 5,
            hnm_threshold: 0.5,
            hnm_cap: 200,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be finite and non-negative");
        }
        if self.batch_size < 2 || self.epochs == 0 {
            return bad("batch_size must be >= 2 and epochs >= 1");
        }
        if !(self.hnm_threshold > 0.0 && self.hnm_threshold < 1.0) {
            return bad("hnm_threshold must lie in (0, 1)");
        }
        if self.augment.scale[0] <= 0.0 || self.augment.scale[0] > self.augment.scale[1] {
            return bad("augment.scale must be an increasing positive range");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss per epoch.
    pub loss_curve: Vec<f64>,
    /// Fraction of correctly classified patches per epoch.
    pub accuracy_curve: Vec<f64>,
    pub samples: usize,
    pub seconds: f64,
}

/// Where training patches come from; slides by index.
pub trait PatchProvider: Sync {
    fn fetch(&self, sample: &PatchSample, side: usize) -> Result<RgbImage>;
}

impl PatchProvider for [TrainingSlide<'_>] {
    fn fetch(&self, s: &PatchSample, side: usize) -> Result<RgbImage> {
        let slide = self.get(s.slide).ok_or_else(|| Error::UnknownSlide(s.slide_id.clone()))?;
        fetch_centered(slide.source, s.x, s.y, side)
    }
}

impl PatchProvider for [&dyn RegionSource] {
    fn fetch(&self, s: &PatchSample, side: usize) -> Result<RgbImage> {
        let slide = self.get(s.slide).ok_or_else(|| Error::UnknownSlide(s.slide_id.clone()))?;
        fetch_centered(*slide, s.x, s.y, side)
    }
}

type Batch = Vec<(Tensor<f32>, usize)>;

fn build_batch<P: PatchProvider + ?Sized>(
    provider: &P,
    pos: &[&PatchSample],
    neg: &[&PatchSample],
    cfg: &TrainConfig,
    patch_side: usize,
    seed: u64,
) -> Result<Batch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pad = cfg.augment.context_pad(patch_side);
    let n_pos = cfg.batch_size / 2;
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for k in 0..cfg.batch_size {
        let (pool, label) = if k < n_pos { (pos, 1) } else { (neg, 0) };
        let sample = pool[rng.gen_range(0..pool.len())];
        let params = cfg.augment.sample(&mut rng);
        let context = provider.fetch(sample, patch_side + 2 * pad)?;
        let patch = augment(&context, &params, patch_side);
        batch.push((Tensor::from_rgb(&patch), label));
    }
    Ok(batch)
}

fn add_scaled(acc: &mut [ConvParams<f32>], g: &[ConvParams<f32>]) {
    for (a, b) in acc.iter_mut().zip(g) {
        for (x, y) in a.weights.iter_mut().zip(&b.weights) {
            *x += *y;
        }
        for (x, y) in a.bias.iter_mut().zip(&b.bias) {
            *x += *y;
        }
    }
}

/// Mini-batch SGD (with optional momentum) on class-balanced batches,
/// continuing from `net`. `epoch_offset` keeps batch seeds distinct across
/// successive calls.
pub fn train_from<P: PatchProvider + ?Sized>(
    net: &mut Network<f32>,
    provider: &P,
    samples: &[PatchSample],
    cfg: &TrainConfig,
    epochs: usize,
    epoch_offset: usize,
    pipeline: &PipelineConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    let patch_side = net.receptive_field();
    let pos: Vec<&PatchSample> = samples.iter().filter(|s| s.label == SlideLabel::Tumor).collect();
    let neg: Vec<&PatchSample> = samples.iter().filter(|s| s.label == SlideLabel::Normal).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Config(format!(
            "training needs both classes, got {} tumor and {} normal samples",
            pos.len(),
            neg.len()
        )));
    }
    let start = std::time::Instant::now();
    let batches_per_epoch = samples.len().div_ceil(cfg.batch_size);
    let lr = cfg.learning_rate as f32;
    let mu = cfg.momentum as f32;
    let wd = cfg.weight_decay as f32;
    let mut velocity: Vec<ConvParams<f32>> = net
        .params()
        .iter()
        .map(|p| ConvParams { weights: vec![0.0; p.weights.len()], bias: vec![0.0; p.bias.len()], ..*p })
        .collect();
    let ops = OpCounter::new();
    let mut report = TrainReport {
        loss_curve: Vec::with_capacity(epochs),
        accuracy_curve: Vec::with_capacity(epochs),
        samples: samples.len(),
        seconds: 0.0,
    };
    for epoch in 0..epochs {
        let global_epoch = epoch_offset + epoch;
        let ids: Vec<u64> = (0..batches_per_epoch)
            .map(|b| (global_epoch * batches_per_epoch + b) as u64)
            .collect();
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        let mut seen = 0usize;
        run_pipeline(
            &ids,
            |_, &id| build_batch(provider, &pos, &neg, cfg, patch_side, item_seed(cfg.seed, id)),
            |_, batch: Batch| {
                let mut grad: Vec<ConvParams<f32>> = velocity
                    .iter()
                    .map(|v| ConvParams { weights: vec![0.0; v.weights.len()], bias: vec![0.0; v.bias.len()], ..*v })
                    .collect();
                let mut batch_loss = 0.0f64;
                for (x, label) in &batch {
                    let (loss, g) = net.loss_and_grad(x, &[*label], &ops)?;
                    if !loss.is_finite() {
                        return Err(Error::Divergence { epoch: global_epoch });
                    }
                    batch_loss += loss as f64;
                    // p(correct) > 1/2 exactly when the loss is below ln 2
                    if (loss as f64) < std::f64::consts::LN_2 {
                        correct += 1;
                    }
                    add_scaled(&mut grad, &g);
                }
                seen += batch.len();
                loss_sum += batch_loss / batch.len() as f64;
                let inv = 1.0 / batch.len() as f32;
                for ((p, v), g) in net.params_mut().iter_mut().zip(&mut velocity).zip(&grad) {
                    for ((w, vv), gg) in p.weights.iter_mut().zip(&mut v.weights).zip(&g.weights) {
                        *vv = mu * *vv - lr * (*gg * inv + wd * *w);
                        *w += *vv;
                    }
                    for ((w, vv), gg) in p.bias.iter_mut().zip(&mut v.bias).zip(&g.bias) {
                        *vv = mu * *vv - lr * (*gg * inv);
                        *w += *vv;
                    }
                }
                if net.params().iter().any(|p| p.weights.iter().any(|w| !w.is_finite())) {
                    return Err(Error::Divergence { epoch: global_epoch });
                }
                Ok(())
            },
            pipeline,
        )
        .map_err(|e| match e {
            Error::Pipeline { source, .. } if matches!(*source, Error::Divergence { .. }) => *source,
            e => e,
        })?;
        let mean = loss_sum / batches_per_epoch as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence { epoch: global_epoch });
        }
        log::debug!("epoch {global_epoch}: loss {mean:.4}, accuracy {:.3}", correct as f64 / seen as f64);
        report.loss_curve.push(mean);
        report.accuracy_curve.push(correct as f64 / seen as f64);
    }
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Trains a freshly initialized network of shape `spec`.
pub fn train_scorer<P: PatchProvider + ?Sized>(
    provider: &P,
    samples: &[PatchSample],
    spec: &ConvNetSpec,
    cfg: &TrainConfig,
    pipeline: &PipelineConfig,
) -> Result<(Network<f32>, TrainReport)> {
    let mut net = Network::<f32>::random(spec.clone(), item_seed(cfg.seed, u64::MAX))?;
    let report = train_from(&mut net, provider, samples, cfg, cfg.epochs, 0, pipeline)?;
    Ok((net, report))
}

/// Map cells scoring at least `threshold`, highest first, at most `cap`,
/// skipping cells whose center lies in a lesion polygon.
pub fn harvest(
    map: &ProbabilityMap,
    slide: usize,
    annotation: Option<&LesionAnnotation>,
    threshold: f32,
    cap: usize,
) -> Vec<PatchSample> {
    let mut cells: Vec<(f32, usize)> = (0..map.values.len())
        .filter(|&i| map.coverage[i] && map.values[i] >= threshold)
        .map(|i| (map.values[i], i))
        .collect();
    cells.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut out = Vec::new();
    for (score, i) in cells {
        if out.len() == cap {
            break;
        }
        let (x, y) = (map.to_slide(i % map.width), map.to_slide(i / map.width));
        if annotation.is_some_and(|a| a.lesion_at(x as f64, y as f64).is_some()) {
            continue;
        }
        out.push(PatchSample {
            slide,
            slide_id: map.slide_id.clone(),
            x,
            y,
            label: SlideLabel::Normal,
            round: SampleRound::Hnm,
            score: Some(score),
        });
    }
    out
}

/// Scans each listed slide and returns its false positives as new normal
/// samples.
pub fn mine_hard_negatives<F: Scorer + ?Sized>(
    scorer: &F,
    slides: &[TrainingSlide],
    which: &[usize],
    geometry: &ScanGeometry,
    threshold: f32,
    cap: usize,
    pipeline: &PipelineConfig,
) -> Result<Vec<PatchSample>> {
    let mut out = Vec::new();
    for &i in which {
        let slide = &slides[i];
        let (map, _) = scan_slide(slide.source, geometry, scorer, Some(&slide.mask), pipeline)?;
        out.extend(harvest(&map, i, Some(&slide.annotation), threshold, cap));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub samples: usize,
    pub mined: usize,
    pub train: Option<TrainReport>,
    pub validation_froc: Option<f64>,
}

/// Initial training followed by `cfg.hnm_rounds` rounds of mining on the
/// normal slides and fine-tuning on the grown sample set. `validate` is
/// called after every round.
#[allow(clippy::too_many_arguments)]
pub fn hnm_rounds(
    initial: Vec<PatchSample>,
    slides: &[TrainingSlide],
    spec: &ConvNetSpec,
    geometry: &ScanGeometry,
    cfg: &TrainConfig,
    pipeline: &PipelineConfig,
    mut validate: impl FnMut(usize, &Network<f32>) -> Result<Option<f64>>,
) -> Result<(Network<f32>, Vec<RoundReport>)> {
    let mut samples = initial;
    let (mut net, report) = train_scorer(slides, &samples, spec, cfg, pipeline)?;
    let mut reports = vec![RoundReport {
        round: 0,
        samples: samples.len(),
        mined: 0,
        train: Some(report),
        validation_froc: validate(0, &net)?,
    }];
    let normal: Vec<usize> = (0..slides.len())
        .filter(|&i| slides[i].annotation.polygons.is_empty())
        .collect();
    let mut seen: HashSet<(usize, usize, usize)> = samples.iter().map(|s| (s.slide, s.x, s.y)).collect();
    let mut epochs_done = cfg.epochs;
    for round in 1..=cfg.hnm_rounds {
        let mined: Vec<PatchSample> = mine_hard_negatives(
            &net,
            slides,
            &normal,
            geometry,
            cfg.hnm_threshold,
            cfg.hnm_cap,
            pipeline,
        )?
        .into_iter()
        .filter(|s| seen.insert((s.slide, s.x, s.y)))
        .collect();
        let n_mined = mined.len();
        samples.extend(mined);
        let train = if n_mined > 0 && cfg.hnm_epochs > 0 {
            let r = train_from(&mut net, slides, &samples, cfg, cfg.hnm_epochs, epochs_done, pipeline)?;
            epochs_done += cfg.hnm_epochs;
            Some(r)
        } else {
            None
        };
        reports.push(RoundReport {
            round,
            samples: samples.len(),
            mined: n_mined,
            train,
            validation_froc: validate(round, &net)?,
        });
    }
    Ok((net, reports))
}
