//! Stride and size bookkeeping for dense scanning.
//!
//! All sizes are in level-0 pixels except `tile_side`, which counts output
//! positions of one scorer pass. The probability map is anchored at the centre
//! of the first patch: map index `h` sits at slide coordinate
//! `h * dense_stride + patch_side / 2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// On-disk form of a geometry. Derived fields are never stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub patch_side: usize,
    pub net_stride: usize,
    pub dense_coeff: usize,
    pub infer_side: usize,
}

impl GeometryConfig {
    /// Toy default: 20 px patches, stride 4, 36 px inference windows.
    pub const TOY: GeometryConfig = GeometryConfig {
        patch_side: 20,
        net_stride: 4,
        dense_coeff: 1,
        infer_side: 36,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GeometryConfig", into = "GeometryConfig")]
pub struct ScanGeometry {
    /// Training patch side `L_i`; also the scorer's receptive field.
    pub patch_side: usize,
    /// Scorer output stride `S_f`.
    pub net_stride: usize,
    /// Dense coefficient `α`.
    pub dense_coeff: usize,
    /// Stride of the dense map, `S_f / α`.
    pub dense_stride: usize,
    /// Side of one offset tile in output positions, `(L_in - L_i) / S_f + 1`.
    pub tile_side: usize,
    /// Stride between ROI origins. Dense tiles are `α * tile_side` cells wide
    /// at `dense_stride`, so adjacent ROIs sit `tile_side * net_stride` apart.
    pub roi_stride: usize,
    /// Side of one scorer input window `L_in`.
    pub infer_side: usize,
}

/// One of the `α²` sub-stride shifts, in units of `dense_stride`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Offset {
    pub i: usize,
    pub j: usize,
    /// Pixel shift `(i * S_d, j * S_d)`.
    pub dy: usize,
    pub dx: usize,
}

impl ScanGeometry {
    pub fn derive(
        patch_side: usize,
        net_stride: usize,
        dense_coeff: usize,
        infer_side: usize,
    ) -> Result<Self> {
        if patch_side == 0 || net_stride == 0 || dense_coeff == 0 || infer_side == 0 {
            return Err(Error::Range(format!(
                "geometry parameters must be positive (patch_side={patch_side}, \
                 net_stride={net_stride}, dense_coeff={dense_coeff}, infer_side={infer_side})"
            )));
        }
        if patch_side % 2 != 0 {
            return Err(Error::Range(format!(
                "patch_side must be even so the map anchor is integral, got {patch_side}"
            )));
        }
        if infer_side < patch_side {
            return Err(Error::Range(format!(
                "infer_side {infer_side} is smaller than patch_side {patch_side}"
            )));
        }
        if net_stride % dense_coeff != 0 {
            return Err(Error::Divisibility(format!(
                "net_stride {net_stride} is not divisible by dense_coeff {dense_coeff}"
            )));
        }
        if (infer_side - patch_side) % net_stride != 0 {
            return Err(Error::Divisibility(format!(
                "infer_side - patch_side = {} is not a multiple of net_stride {net_stride}",
                infer_side - patch_side
            )));
        }
        let dense_stride = net_stride / dense_coeff;
        let tile_side = (infer_side - patch_side) / net_stride + 1;
        Ok(ScanGeometry {
            patch_side,
            net_stride,
            dense_coeff,
            dense_stride,
            tile_side,
            roi_stride: dense_stride * dense_coeff * tile_side,
            infer_side,
        })
    }

    pub fn from_config(cfg: GeometryConfig) -> Result<Self> {
        Self::derive(cfg.patch_side, cfg.net_stride, cfg.dense_coeff, cfg.infer_side)
    }

    pub fn config(&self) -> GeometryConfig {
        GeometryConfig {
            patch_side: self.patch_side,
            net_stride: self.net_stride,
            dense_coeff: self.dense_coeff,
            infer_side: self.infer_side,
        }
    }

    /// Same scorer and window, different dense coefficient.
    pub fn with_dense_coeff(&self, dense_coeff: usize) -> Result<Self> {
        Self::derive(self.patch_side, self.net_stride, dense_coeff, self.infer_side)
    }

    /// Side of a dense tile in map cells.
    pub fn dense_side(&self) -> usize {
        self.dense_coeff * self.tile_side
    }

    pub fn anchor(&self) -> usize {
        self.patch_side / 2
    }

    /// Row-major list of offsets, `i` outer.
    pub fn offsets(&self) -> Vec<Offset> {
        let a = self.dense_coeff;
        (0..a)
            .flat_map(|i| {
                (0..a).map(move |j| Offset {
                    i,
                    j,
                    dy: i * self.dense_stride,
                    dx: j * self.dense_stride,
                })
            })
            .collect()
    }

    /// Map index to slide coordinate (same rule on both axes).
    pub fn prob_to_slide(&self, index: usize) -> usize {
        index * self.dense_stride + self.anchor()
    }

    /// Nearest map index for a slide coordinate, rounding halves away from zero.
    pub fn slide_to_prob(&self, coord: usize) -> Result<usize> {
        let anchor = self.anchor();
        if coord < anchor {
            return Err(Error::OutOfFrame { coord, anchor });
        }
        let d = coord - anchor;
        Ok((2 * d + self.dense_stride) / (2 * self.dense_stride))
    }

    /// Number of map cells along an axis of `dim` pixels: one per patch
    /// position that fits entirely inside the slide.
    pub fn map_cells(&self, dim: usize) -> usize {
        if dim < self.patch_side {
            0
        } else {
            (dim - self.patch_side) / self.dense_stride + 1
        }
    }

    /// Number of ROIs along an axis of `dim` pixels.
    pub fn roi_count(&self, dim: usize) -> usize {
        self.map_cells(dim).div_ceil(self.dense_side())
    }

    /// Level-0 square touched by every patch whose top-left falls in ROI
    /// `(row, col)`: origin and side.
    pub fn roi_footprint(&self, row: usize, col: usize) -> (usize, usize, usize) {
        let side = (self.dense_side() - 1) * self.dense_stride + self.patch_side;
        (row * self.roi_stride, col * self.roi_stride, side)
    }
}

impl TryFrom<GeometryConfig> for ScanGeometry {
    type Error = Error;

    fn try_from(cfg: GeometryConfig) -> Result<Self> {
        Self::from_config(cfg)
    }
}

impl From<ScanGeometry> for GeometryConfig {
    fn from(g: ScanGeometry) -> Self {
        g.config()
    }
}
