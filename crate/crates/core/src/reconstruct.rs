//! Offset tiles, dense tiles and the stitched whole-slide map.
//!
//! For each ROI the scorer runs once per offset `(i * S_d, j * S_d)`, giving
//! `α²` offset tiles of `L_p x L_p` outputs at stride `S_f`. Interleaving them
//! with `p(h', w') = p_{h' mod α, w' mod α}(h' / α, w' / α)` gives a dense tile
//! of `α L_p` cells at stride `S_d`. ROIs sit `S_d * α L_p` apart, so dense
//! tiles never overlap and stitching is a plain copy.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Offset, ScanGeometry};
use crate::pipeline::{run_pipeline, PipelineConfig, RunStats};
use crate::preproc::TissueMask;
use crate::scorer::{OpCounter, Scorer};
use crate::slide_io::{RegionRequest, RegionSource};

#[derive(Debug, Clone, PartialEq)]
pub struct OffsetTile {
    pub offset: Offset,
    pub side: usize,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTile {
    /// ROI index `(row, col)` on the `S_r` grid.
    pub roi: (usize, usize),
    pub side: usize,
    pub values: Vec<f32>,
}

impl DenseTile {
    pub fn get(&self, h: usize, w: usize) -> f32 {
        self.values[h * self.side + w]
    }
}

/// Interleaves `α²` offset tiles into one dense tile.
pub fn interleave(tiles: &[OffsetTile], alpha: usize, roi: (usize, usize)) -> Result<DenseTile> {
    if tiles.len() != alpha * alpha {
        return Err(Error::Arity {
            expected: alpha * alpha,
            got: tiles.len(),
        });
    }
    let side = tiles[0].side;
    let mut slots: Vec<Option<&OffsetTile>> = vec![None; alpha * alpha];
    for t in tiles {
        if t.side != side || t.values.len() != side * side {
            return Err(Error::Shape(format!(
                "offset tile ({}, {}) has side {} but expected {side}",
                t.offset.i, t.offset.j, t.side
            )));
        }
        if t.offset.i >= alpha || t.offset.j >= alpha {
            return Err(Error::Shape(format!(
                "offset ({}, {}) outside [0, {alpha})",
                t.offset.i, t.offset.j
            )));
        }
        let slot = &mut slots[t.offset.i * alpha + t.offset.j];
        if slot.is_some() {
            return Err(Error::Shape(format!(
                "offset ({}, {}) given twice",
                t.offset.i, t.offset.j
            )));
        }
        *slot = Some(t);
    }
    let dense = alpha * side;
    let mut values = vec![0.0f32; dense * dense];
    for hp in 0..dense {
        for wp in 0..dense {
            let tile = slots[(hp % alpha) * alpha + wp % alpha].expect("all slots filled");
            values[hp * dense + wp] = tile.values[(hp / alpha) * side + wp / alpha];
        }
    }
    Ok(DenseTile {
        roi,
        side: dense,
        values,
    })
}

/// Scores one ROI at every offset and interleaves the results.
pub fn scan_roi<S, F>(
    slide: &S,
    roi: (usize, usize),
    geometry: &ScanGeometry,
    scorer: &F,
    ops: &OpCounter,
) -> Result<DenseTile>
where
    S: RegionSource + ?Sized,
    F: Scorer + ?Sized,
{
    let oy = roi.0 * geometry.roi_stride;
    let ox = roi.1 * geometry.roi_stride;
    let mut tiles = Vec::with_capacity(geometry.dense_coeff * geometry.dense_coeff);
    for offset in geometry.offsets() {
        let window = slide.fetch_region(RegionRequest::level0(
            oy + offset.dy,
            ox + offset.dx,
            geometry.infer_side,
        ))?;
        let grid = scorer.score_window(&window, ops)?;
        if grid.height != geometry.tile_side || grid.width != geometry.tile_side {
            return Err(Error::Shape(format!(
                "scorer returned {}x{} for a {} px window, geometry expects {}",
                grid.height, grid.width, geometry.infer_side, geometry.tile_side
            )));
        }
        tiles.push(OffsetTile {
            offset,
            side: grid.height,
            values: grid.values,
        });
    }
    interleave(&tiles, geometry.dense_coeff, roi)
}

/// Whole-slide probability map at stride `S_d`, anchored at `L_i / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub slide_id: String,
    pub height: usize,
    pub width: usize,
    pub dense_stride: usize,
    pub patch_side: usize,
    pub values: Vec<f32>,
    /// False for cells of ROIs skipped as background; those hold 0.
    pub coverage: Vec<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MapHeader {
    slide_id: String,
    height: usize,
    width: usize,
    dense_stride: usize,
    patch_side: usize,
}

const PMAP_MAGIC: &[u8; 4] = b"PMAP";

impl ProbabilityMap {
    pub fn empty(slide_id: &str, height: usize, width: usize, geometry: &ScanGeometry) -> Self {
        ProbabilityMap {
            slide_id: slide_id.to_string(),
            height,
            width,
            dense_stride: geometry.dense_stride,
            patch_side: geometry.patch_side,
            values: vec![0.0; height * width],
            coverage: vec![false; height * width],
        }
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize) -> f32 {
        self.values[h * self.width + w]
    }

    #[inline]
    pub fn covered(&self, h: usize, w: usize) -> bool {
        self.coverage[h * self.width + w]
    }

    pub fn covered_count(&self) -> usize {
        self.coverage.iter().filter(|&&c| c).count()
    }

    /// Level-0 coordinate of a map index.
    pub fn to_slide(&self, index: usize) -> usize {
        index * self.dense_stride + self.patch_side / 2
    }

    /// `.pmap` layout: `b"PMAP"`, u32 LE header length, JSON header
    /// `{slide_id, height, width, dense_stride, patch_side}`, `height * width`
    /// LE f32 values row-major, then the coverage bitmap packed LSB-first.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&MapHeader {
            slide_id: self.slide_id.clone(),
            height: self.height,
            width: self.width,
            dense_stride: self.dense_stride,
            patch_side: self.patch_side,
        })
        .expect("header serializes");
        let n = self.values.len();
        let mut out = Vec::with_capacity(8 + header.len() + 4 * n + n.div_ceil(8));
        out.extend_from_slice(PMAP_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let mut bits = vec![0u8; n.div_ceil(8)];
        for (i, &c) in self.coverage.iter().enumerate() {
            if c {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        out.extend_from_slice(&bits);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Shape(format!("probability map file: {msg}"));
        if bytes.len() < 8 || &bytes[..4] != PMAP_MAGIC {
            return Err(bad("bad magic"));
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let rest = &bytes[8..];
        if rest.len() < hlen {
            return Err(bad("truncated header"));
        }
        let h: MapHeader = serde_json::from_slice(&rest[..hlen]).map_err(|e| bad(&e.to_string()))?;
        let n = h.height * h.width;
        let body = &rest[hlen..];
        if body.len() != 4 * n + n.div_ceil(8) {
            return Err(bad("body size does not match header"));
        }
        let values = body[..4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let bits = &body[4 * n..];
        let coverage = (0..n).map(|i| bits[i / 8] & (1 << (i % 8)) != 0).collect();
        Ok(ProbabilityMap {
            slide_id: h.slide_id,
            height: h.height,
            width: h.width,
            dense_stride: h.dense_stride,
            patch_side: h.patch_side,
            values,
            coverage,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Copies dense tiles into a map of `height x width` cells.
pub fn stitch(
    tiles: &[DenseTile],
    slide_id: &str,
    height: usize,
    width: usize,
    geometry: &ScanGeometry,
) -> Result<ProbabilityMap> {
    let mut map = ProbabilityMap::empty(slide_id, height, width, geometry);
    let side = geometry.dense_side();
    let mut seen = HashSet::new();
    for tile in tiles {
        if !seen.insert(tile.roi) {
            return Err(Error::DuplicateTile(tile.roi.0, tile.roi.1));
        }
        if tile.side != side {
            return Err(Error::Shape(format!(
                "dense tile side {} but geometry gives {side}",
                tile.side
            )));
        }
        let (h0, w0) = (tile.roi.0 * side, tile.roi.1 * side);
        for dh in 0..side.min(height.saturating_sub(h0)) {
            for dw in 0..side.min(width.saturating_sub(w0)) {
                let idx = (h0 + dh) * width + w0 + dw;
                if map.coverage[idx] {
                    return Err(Error::Shape(format!(
                        "map cell ({}, {}) written twice",
                        h0 + dh,
                        w0 + dw
                    )));
                }
                map.values[idx] = tile.get(dh, dw);
                map.coverage[idx] = true;
            }
        }
    }
    Ok(map)
}

/// ROI indices covering every patch position of the slide.
pub fn roi_grid(dims: (usize, usize), geometry: &ScanGeometry) -> Vec<(usize, usize)> {
    let (rows, cols) = (geometry.roi_count(dims.0), geometry.roi_count(dims.1));
    (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct ScanStats {
    pub rois_total: usize,
    pub rois_scanned: usize,
    pub forward_passes: u64,
    /// Convolution multiply-accumulates spent by the scorer.
    pub conv_macs: u64,
    pub elapsed: Duration,
    pub pipeline: RunStats,
}

/// Scans every ROI whose footprint touches tissue and stitches the result.
///
/// Without a mask every ROI is scanned. The output does not depend on the
/// order or parallelism of ROI evaluation.
pub fn scan_slide<S, F>(
    slide: &S,
    geometry: &ScanGeometry,
    scorer: &F,
    mask: Option<&TissueMask>,
    config: &PipelineConfig,
) -> Result<(ProbabilityMap, ScanStats)>
where
    S: RegionSource + ?Sized,
    F: Scorer + ?Sized,
{
    if scorer.receptive_field() != geometry.patch_side || scorer.total_stride() != geometry.net_stride
    {
        return Err(Error::Config(format!(
            "scorer has receptive field {} and stride {}, geometry expects {} and {}",
            scorer.receptive_field(),
            scorer.total_stride(),
            geometry.patch_side,
            geometry.net_stride
        )));
    }
    let start = std::time::Instant::now();
    let dims = slide.dims();
    let all = roi_grid(dims, geometry);
    let rois: Vec<(usize, usize)> = match mask {
        None => all.clone(),
        Some(m) => {
            let pred = m.predicate();
            all.iter()
                .copied()
                .filter(|&(r, c)| {
                    let (y, x, side) = geometry.roi_footprint(r, c);
                    pred.intersects(y, x, side)
                })
                .collect()
        }
    };
    let ops = OpCounter::new();
    let (tiles, run) = run_pipeline(
        &rois,
        |_, &roi| scan_roi(slide, roi, geometry, scorer, &ops),
        |_, tile| Ok(tile),
        config,
    )?;
    let map = stitch(
        &tiles,
        slide.slide_id(),
        geometry.map_cells(dims.0),
        geometry.map_cells(dims.1),
        geometry,
    )?;
    let stats = ScanStats {
        rois_total: all.len(),
        rois_scanned: rois.len(),
        forward_passes: ops.passes(),
        conv_macs: ops.macs(),
        elapsed: start.elapsed(),
        pipeline: run,
    };
    Ok((map, stats))
}
