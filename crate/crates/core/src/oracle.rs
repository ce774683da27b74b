//! Brute-force patch scanning, the reference for dense reconstruction.
//!
//! Each map cell is recomputed by fetching its own `L_i x L_i` patch from the
//! slide and scoring it alone. Nothing here goes through offsets,
//! interleaving or stitching.

use serde::Serialize;

use crate::error::Result;
use crate::geometry::ScanGeometry;
use crate::reconstruct::ProbabilityMap;
use crate::scorer::{OpCounter, Scorer};
use crate::slide_io::{RegionRequest, RegionSource};

/// Patch score for map cell `(h, w)`: the patch with level-0 top-left
/// `(h * S_d, w * S_d)`.
pub fn patchwise_cell<S, F>(
    slide: &S,
    geometry: &ScanGeometry,
    scorer: &F,
    h: usize,
    w: usize,
    ops: &OpCounter,
) -> Result<f32>
where
    S: RegionSource + ?Sized,
    F: Scorer + ?Sized,
{
    let patch = slide.fetch_region(RegionRequest::level0(
        h * geometry.dense_stride,
        w * geometry.dense_stride,
        geometry.patch_side,
    ))?;
    scorer.patch_score(&patch, ops)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeviationReport {
    pub cells_checked: usize,
    pub max_abs_deviation: f64,
    /// Worst cell, if any was checked.
    pub worst_cell: Option<(usize, usize)>,
    /// Convolution multiply-accumulates spent by the brute-force scan.
    pub patch_macs: u64,
}

/// Compares every covered cell (or every `step`-th covered cell in scan order)
/// of `map` against brute-force patch scoring.
pub fn compare_with_patchwise<S, F>(
    map: &ProbabilityMap,
    slide: &S,
    geometry: &ScanGeometry,
    scorer: &F,
    step: usize,
) -> Result<DeviationReport>
where
    S: RegionSource + ?Sized,
    F: Scorer + ?Sized,
{
    let ops = OpCounter::new();
    let mut report = DeviationReport {
        cells_checked: 0,
        max_abs_deviation: 0.0,
        worst_cell: None,
        patch_macs: 0,
    };
    let step = step.max(1);
    let mut seen = 0usize;
    for h in 0..map.height {
        for w in 0..map.width {
            if !map.covered(h, w) {
                continue;
            }
            seen += 1;
            if (seen - 1) % step != 0 {
                continue;
            }
            let reference = patchwise_cell(slide, geometry, scorer, h, w, &ops)?;
            let dev = (reference as f64 - map.get(h, w) as f64).abs();
            report.cells_checked += 1;
            if report.worst_cell.is_none() || dev > report.max_abs_deviation || dev.is_nan() {
                report.max_abs_deviation = if dev.is_nan() { f64::INFINITY } else { dev };
                report.worst_cell = Some((h, w));
            }
        }
    }
    report.patch_macs = ops.macs();
    Ok(report)
}
