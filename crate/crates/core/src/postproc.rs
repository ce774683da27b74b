//! Map post-processing: binarize, open, label, and score detections.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reconstruct::ProbabilityMap;

pub const DEFAULT_THRESHOLD: f32 = 0.5;
pub const DEFAULT_OPEN_RADIUS: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMap {
    pub height: usize,
    pub width: usize,
    pub cells: Vec<bool>,
}

impl BinaryMap {
    pub fn new(height: usize, width: usize) -> Self {
        BinaryMap {
            height,
            width,
            cells: vec![false; height * width],
        }
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize) -> bool {
        self.cells[h * self.width + w]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }
}

/// Covered cells with probability `>= threshold`.
pub fn binarize(map: &ProbabilityMap, threshold: f32) -> BinaryMap {
    BinaryMap {
        height: map.height,
        width: map.width,
        cells: map
            .values
            .iter()
            .zip(&map.coverage)
            .map(|(&v, &c)| c && v >= threshold)
            .collect(),
    }
}

/// Square min/max filter of radius `r`, separable. Cells outside the grid are
/// ignored, so erosion treats the border as background-free and dilation
/// cannot grow past the edge.
fn square_filter(b: &BinaryMap, r: usize, erode: bool) -> BinaryMap {
    let (h, w) = (b.height, b.width);
    let pass = |src: &[bool], rows: usize, cols: usize, along_rows: bool| -> Vec<bool> {
        let mut out = vec![false; rows * cols];
        for y in 0..rows {
            for x in 0..cols {
                let (pos, len) = if along_rows { (x, cols) } else { (y, rows) };
                let lo = pos.saturating_sub(r);
                let hi = (pos + r).min(len - 1);
                let mut acc = erode;
                for k in lo..=hi {
                    let v = if along_rows { src[y * cols + k] } else { src[k * cols + x] };
                    if erode {
                        acc &= v;
                    } else {
                        acc |= v;
                    }
                }
                // a window reaching past the edge cannot fit inside the set
                if erode && (pos < r || pos + r >= len) {
                    acc = false;
                }
                out[y * cols + x] = acc;
            }
        }
        out
    };
    if h == 0 || w == 0 {
        return b.clone();
    }
    let tmp = pass(&b.cells, h, w, true);
    BinaryMap {
        height: h,
        width: w,
        cells: pass(&tmp, h, w, false),
    }
}

pub fn erode(b: &BinaryMap, r: usize) -> BinaryMap {
    if r == 0 {
        return b.clone();
    }
    square_filter(b, r, true)
}

pub fn dilate(b: &BinaryMap, r: usize) -> BinaryMap {
    if r == 0 {
        return b.clone();
    }
    square_filter(b, r, false)
}

/// Opening with a `(2r+1)²` square: union of all squares that fit in the set.
pub fn morph_open(b: &BinaryMap, r: usize) -> BinaryMap {
    dilate(&erode(b, r), r)
}

/// 8-connected labels; 0 is background, components are numbered from 1 in
/// raster order of their first cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
    pub count: usize,
}

pub fn connected_components(b: &BinaryMap) -> Labels {
    let (h, w) = (b.height, b.width);
    let mut labels = vec![0u32; h * w];
    let mut count = 0u32;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !b.cells[start] || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (y, x) = (i / w, i % w);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if b.cells[j] && labels[j] == 0 {
                        labels[j] = count;
                        stack.push(j);
                    }
                }
            }
        }
    }
    Labels {
        height: h,
        width: w,
        labels,
        count: count as usize,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Level-0 coordinates of the strongest cell.
    pub x: usize,
    pub y: usize,
    pub score: f32,
    pub component: usize,
}

/// One detection per component, placed at its maximum (ties: smallest row,
/// then column).
pub fn extract_detections(map: &ProbabilityMap, regions: &Labels) -> Vec<Detection> {
    let mut best: Vec<Option<(f32, usize)>> = vec![None; regions.count];
    for (i, &l) in regions.labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let slot = &mut best[l as usize - 1];
        let v = map.values[i];
        match slot {
            Some((bv, _)) if v <= *bv => {}
            _ => *slot = Some((v, i)),
        }
    }
    best.into_iter()
        .enumerate()
        .filter_map(|(k, b)| {
            b.map(|(score, i)| Detection {
                x: map.to_slide(i % map.width),
                y: map.to_slide(i / map.width),
                score,
                component: k + 1,
            })
        })
        .collect()
}

/// Maximum over covered cells; 0 when nothing was scanned.
pub fn slide_score(map: &ProbabilityMap) -> f32 {
    map.values
        .iter()
        .zip(&map.coverage)
        .filter(|(_, &c)| c)
        .map(|(&v, _)| v)
        .fold(0.0, f32::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostConfig {
    pub threshold: f32,
    pub open_radius: usize,
}

impl Default for PostConfig {
    fn default() -> Self {
        PostConfig {
            threshold: DEFAULT_THRESHOLD,
            open_radius: DEFAULT_OPEN_RADIUS,
        }
    }
}

/// Binarize, open, label and extract, in one go.
pub fn detect(map: &ProbabilityMap, cfg: &PostConfig) -> Vec<Detection> {
    let opened = morph_open(&binarize(map, cfg.threshold), cfg.open_radius);
    extract_detections(map, &connected_components(&opened))
}

/// `slide_id,x,y,score` rows, score with 6 decimals.
pub fn write_detections_csv<'a, I>(path: &Path, rows: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, &'a Detection)>,
{
    let mut out = String::from("slide_id,x,y,score\n");
    for (id, d) in rows {
        out.push_str(&format!("{id},{},{},{:.6}\n", d.x, d.y, d.score));
    }
    write_text(path, &out)
}

pub fn write_slide_scores_csv<'a, I>(path: &Path, rows: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, f32)>,
{
    let mut out = String::from("slide_id,score\n");
    for (id, s) in rows {
        out.push_str(&format!("{id},{s:.6}\n"));
    }
    write_text(path, &out)
}

/// Reads a detections CSV back into `(slide_id, detection)` pairs.
pub fn read_detections_csv(path: &Path) -> Result<Vec<(String, Detection)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let parse_err = || Error::Format {
            path: path.to_path_buf(),
            msg: format!("line {}: expected slide_id,x,y,score", n + 1),
        };
        if f.len() != 4 {
            return Err(parse_err());
        }
        out.push((
            f[0].to_string(),
            Detection {
                x: f[1].trim().parse().map_err(|_| parse_err())?,
                y: f[2].trim().parse().map_err(|_| parse_err())?,
                score: f[3].trim().parse().map_err(|_| parse_err())?,
                component: 0,
            },
        ));
    }
    Ok(out)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
