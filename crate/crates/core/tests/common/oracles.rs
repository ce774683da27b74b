use std::collections::BTreeMap;

use densescan::eval::{FrocPoint, LesionAnnotation};
use densescan::postproc::{BinaryMap, Detection};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Otsu by exhaustive search over all 256 thresholds; class 0 is `< t`.
/// Between-class variance is `(n1 s0 - n0 s1)^2 / (n0 n1)` up to a constant
/// factor, compared by exact cross-multiplication. Ties keep the smallest `t`.
pub fn otsu_oracle(hist: &[u64; 256]) -> u8 {
    let curve: Vec<(u128, u128)> = (0..256usize)
        .map(|t| {
            let n0: u64 = hist[..t].iter().sum();
            let n1: u64 = hist[t..].iter().sum();
            if n0 == 0 || n1 == 0 {
                return (0, 1);
            }
            let s0: u64 = (0..t).map(|b| b as u64 * hist[b]).sum();
            let s1: u64 = (t..256).map(|b| b as u64 * hist[b]).sum();
            let d = (n1 as i128 * s0 as i128 - n0 as i128 * s1 as i128).unsigned_abs();
            (d * d, n0 as u128 * n1 as u128)
        })
        .collect();
    let mut best = 0;
    for t in 1..256 {
        let ((a, b), (c, d)) = (curve[t], curve[best]);
        if a * d > c * b {
            best = t;
        }
    }
    best as u8
}

/// Histogram of 1000 samples from a random two-mode mixture, at least two
/// bins occupied.
pub fn random_histogram(seed: u64) -> [u64; 256] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut h = [0u64; 256];
        let modes: [(f64, f64); 2] = std::array::from_fn(|_| (rng.gen_range(0.0..255.0), rng.gen_range(0.5..40.0)));
        let w = rng.gen_range(0.05..0.95);
        for _ in 0..1000 {
            let (mu, sd) = if rng.gen_bool(w) { modes[0] } else { modes[1] };
            // sum of uniforms, roughly normal
            let z: f64 = (0..4).map(|_| rng.gen_range(-1.0..1.0)).sum::<f64>() * 0.866;
            h[(mu + sd * z).round().clamp(0.0, 255.0) as usize] += 1;
        }
        if h.iter().filter(|&&c| c > 0).count() >= 2 {
            return h;
        }
    }
}

/// Axis-aligned rectangle as a closed polygon.
pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<[f64; 2]> {
    vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
}

fn in_rect(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in poly {
        x0 = x0.min(p[0]);
        y0 = y0.min(p[1]);
        x1 = x1.max(p[0]);
        y1 = y1.max(p[1]);
    }
    x0 <= x && x <= x1 && y0 <= y && y <= y1
}

/// A random FROC instance: disjoint rectangles on a few slides and at most
/// 20 detections with tie-prone scores, some on rectangle edges.
pub fn random_froc_instance(seed: u64) -> (BTreeMap<String, Vec<Detection>>, Vec<LesionAnnotation>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_slides = rng.gen_range(1..=4);
    let mut anns = Vec::new();
    for s in 0..n_slides {
        let n = rng.gen_range(0..=3);
        // one rectangle per 100-px column, so they never overlap
        let polys = (0..n)
            .map(|k| {
                let x0 = (k * 100 + rng.gen_range(0..40)) as f64;
                let y0 = rng.gen_range(0..60) as f64;
                rect(x0, y0, x0 + rng.gen_range(4..50) as f64, y0 + rng.gen_range(4..50) as f64)
            })
            .collect();
        anns.push(LesionAnnotation::new(format!("slide{s}"), polys));
    }
    let mut dets: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for k in 0..rng.gen_range(0..=20) {
        let s = rng.gen_range(0..n_slides);
        let ann = &anns[s];
        let (x, y) = if !ann.polygons.is_empty() && rng.gen_bool(0.6) {
            let p = &ann.polygons[rng.gen_range(0..ann.polygons.len())];
            // sometimes exactly on a corner
            if rng.gen_bool(0.2) {
                (p[2][0] as usize, p[2][1] as usize)
            } else {
                (rng.gen_range(p[0][0] as usize..=p[2][0] as usize), rng.gen_range(p[0][1] as usize..=p[2][1] as usize))
            }
        } else {
            (rng.gen_range(0..400), rng.gen_range(0..120))
        };
        let score = rng.gen_range(1..=8) as f32 / 8.0;
        dets.entry(format!("slide{s}")).or_default().push(Detection { x, y, score, component: k + 1 });
    }
    (dets, anns)
}

/// FROC recomputed from scratch at every distinct score.
pub fn froc_oracle(
    dets: &BTreeMap<String, Vec<Detection>>,
    anns: &[LesionAnnotation],
) -> (Vec<FrocPoint>, Vec<f64>, f64) {
    let all: Vec<(usize, &Detection)> = dets
        .iter()
        .flat_map(|(id, ds)| {
            let s = anns.iter().position(|a| &a.slide_id == id).unwrap();
            ds.iter().map(move |d| (s, d))
        })
        .collect();
    let mut thresholds: Vec<f32> = all.iter().map(|(_, d)| d.score).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let total: usize = anns.iter().map(|a| a.polygons.len()).sum();
    let points: Vec<FrocPoint> = thresholds
        .iter()
        .map(|&t| {
            let kept: Vec<&(usize, &Detection)> = all.iter().filter(|(_, d)| d.score >= t).collect();
            let mut hits = 0;
            for (s, a) in anns.iter().enumerate() {
                for p in &a.polygons {
                    if kept.iter().any(|(ks, d)| *ks == s && in_rect(p, d.x as f64, d.y as f64)) {
                        hits += 1;
                    }
                }
            }
            let fps = kept
                .iter()
                .filter(|(s, d)| !anns[*s].polygons.iter().any(|p| in_rect(p, d.x as f64, d.y as f64)))
                .count();
            FrocPoint {
                threshold: t,
                avg_fp: fps as f64 / anns.len() as f64,
                sensitivity: if total == 0 { 0.0 } else { hits as f64 / total as f64 },
            }
        })
        .collect();
    let rates = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];
    let per_rate: Vec<f64> = rates
        .iter()
        .map(|&r| points.iter().filter(|p| p.avg_fp <= r).map(|p| p.sensitivity).fold(0.0, f64::max))
        .collect();
    let score = per_rate.iter().sum::<f64>() / 6.0;
    (points, per_rate, score)
}

/// Mann-Whitney U over all positive/negative pairs, ties as one half.
pub fn mann_whitney(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / pairs
}

/// Erosion with a `(2r+1)^2` square, cell by cell; out-of-grid cells are background.
pub fn erode_oracle(b: &BinaryMap, r: usize) -> BinaryMap {
    window_oracle(b, r, true)
}

pub fn dilate_oracle(b: &BinaryMap, r: usize) -> BinaryMap {
    window_oracle(b, r, false)
}

fn window_oracle(b: &BinaryMap, r: usize, all: bool) -> BinaryMap {
    let mut out = BinaryMap::new(b.height, b.width);
    let r = r as i64;
    for y in 0..b.height as i64 {
        for x in 0..b.width as i64 {
            let mut vals = Vec::new();
            for dy in -r..=r {
                for dx in -r..=r {
                    let (yy, xx) = (y + dy, x + dx);
                    let inside = yy >= 0 && xx >= 0 && yy < b.height as i64 && xx < b.width as i64;
                    vals.push(inside && b.get(yy as usize, xx as usize));
                }
            }
            out.cells[y as usize * b.width + x as usize] =
                if all { vals.iter().all(|&v| v) } else { vals.iter().any(|&v| v) };
        }
    }
    out
}

/// Recursive 8-connected flood fill; components numbered in raster order.
pub fn flood_fill_labels(b: &BinaryMap) -> (Vec<u32>, usize) {
    fn fill(b: &BinaryMap, labels: &mut [u32], y: usize, x: usize, id: u32) {
        labels[y * b.width + x] = id;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                if yy < 0 || xx < 0 || yy >= b.height as i64 || xx >= b.width as i64 {
                    continue;
                }
                let (yy, xx) = (yy as usize, xx as usize);
                if b.get(yy, xx) && labels[yy * b.width + xx] == 0 {
                    fill(b, labels, yy, xx, id);
                }
            }
        }
    }
    let mut labels = vec![0u32; b.cells.len()];
    let mut count = 0;
    for y in 0..b.height {
        for x in 0..b.width {
            if b.get(y, x) && labels[y * b.width + x] == 0 {
                count += 1;
                fill(b, &mut labels, y, x, count);
            }
        }
    }
    (labels, count as usize)
}

pub fn random_binary(seed: u64, h: usize, w: usize, density: f64) -> BinaryMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = BinaryMap::new(h, w);
    b.cells.iter_mut().for_each(|c| *c = rng.gen_bool(density));
    b
}
