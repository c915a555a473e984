//! Histogram-of-oriented-gradients descriptors.
//!
//! The stages mirror the classic recipe: centered-difference gradients,
//! per-cell orientation histograms with linear angular interpolation, and
//! overlapping block L2 normalization. Every stage is a pure function, so
//! extraction over an image set parallelizes without ordering effects.

use crate::error::{Error, Result};
use crate::imageio::GrayImage;
use crate::matrix::DenseMatrix;

/// Descriptor extraction parameters.
///
/// The defaults (8-pixel cells, 9 unsigned bins, 2x2-cell blocks sliding by
/// one cell, epsilon 1e-6) give a 324-entry descriptor on 32x32 input.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct HogConfig {
    /// Cell side length in pixels.
    pub cell_size: usize,
    /// Number of orientation bins.
    pub bins: usize,
    /// Block side length in cells.
    pub block_size: usize,
    /// Block stride in cells.
    pub block_stride: usize,
    /// When false, orientations fold into [0, 180) degrees.
    pub signed: bool,
    /// Epsilon in the block normalization `v / sqrt(||v||^2 + eps^2)`.
    pub norm_epsilon: f64,
}

impl Default for HogConfig {
    fn default() -> Self {
        Self {
            cell_size: 8,
            bins: 9,
            block_size: 2,
            block_stride: 1,
            signed: false,
            norm_epsilon: 1e-6,
        }
    }
}

impl HogConfig {
    /// Orientation span in degrees: 180 unsigned, 360 signed.
    pub fn span_degrees(&self) -> f64 {
        if self.signed {
            360.0
        } else {
            180.0
        }
    }

    /// Validates the parameters against an image geometry.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.cell_size == 0 || self.bins == 0 || self.block_size == 0 || self.block_stride == 0
        {
            return Err(Error::InvalidConfig(
                "cell_size, bins, block_size, and block_stride must be positive".into(),
            ));
        }
        if !self.norm_epsilon.is_finite() || self.norm_epsilon <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "norm_epsilon must be a positive real, got {}",
                self.norm_epsilon
            )));
        }
        if width % self.cell_size != 0 || height % self.cell_size != 0 {
            return Err(Error::InvalidConfig(format!(
                "image {width}x{height} is not divisible into {}x{} cells",
                self.cell_size, self.cell_size
            )));
        }
        let cells_x = width / self.cell_size;
        let cells_y = height / self.cell_size;
        if self.block_size > cells_x || self.block_size > cells_y {
            return Err(Error::InvalidConfig(format!(
                "block of {} cells exceeds the {cells_x}x{cells_y} cell grid",
                self.block_size
            )));
        }
        Ok(())
    }

    /// Block grid dimensions `(blocks_y, blocks_x)` for an image geometry.
    pub fn block_grid(&self, width: usize, height: usize) -> (usize, usize) {
        let cells_x = width / self.cell_size;
        let cells_y = height / self.cell_size;
        (
            (cells_y - self.block_size) / self.block_stride + 1,
            (cells_x - self.block_size) / self.block_stride + 1,
        )
    }

    /// Descriptor length for an image geometry.
    pub fn descriptor_len(&self, width: usize, height: usize) -> usize {
        let (by, bx) = self.block_grid(width, height);
        by * bx * self.block_size * self.block_size * self.bins
    }
}

/// Per-pixel gradient magnitudes and orientations.
#[derive(Debug, Clone)]
pub struct GradientField {
    /// Gradient magnitude, nonnegative, (row, col) indexed.
    pub magnitude: DenseMatrix,
    /// Orientation in degrees, in `[0, span_degrees)`.
    pub orientation: DenseMatrix,
    /// 180 for unsigned orientations, 360 for signed.
    pub span_degrees: f64,
}

/// Computes centered-difference gradients with replicated borders.
///
/// Each derivative is the averaged two-sided difference
/// `(I(x+1) - I(x-1)) / 2`, so a unit step edge produces magnitude 0.5 on
/// the two pixels flanking it. Columns increase to the right and rows
/// increase downward; unsigned orientations fold modulo 180 degrees.
pub fn gradients(img: &GrayImage, signed: bool) -> GradientField {
    let (w, h) = (img.width(), img.height());
    let span = if signed { 360.0 } else { 180.0 };
    let mut magnitude = DenseMatrix::zeros(h, w);
    let mut orientation = DenseMatrix::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            let left = img.get(r, c.saturating_sub(1));
            let right = img.get(r, (c + 1).min(w - 1));
            let up = img.get(r.saturating_sub(1), c);
            let down = img.get((r + 1).min(h - 1), c);
            let gx = (right - left) / 2.0;
            let gy = (down - up) / 2.0;
            magnitude[(r, c)] = (gx * gx + gy * gy).sqrt();
            orientation[(r, c)] = gy.atan2(gx).to_degrees().rem_euclid(span);
        }
    }
    GradientField {
        magnitude,
        orientation,
        span_degrees: span,
    }
}

/// Per-cell orientation histograms on the cell grid.
#[derive(Debug, Clone)]
pub struct CellGrid {
    cells_y: usize,
    cells_x: usize,
    bins: usize,
    data: Vec<f64>,
}

impl CellGrid {
    /// Grid dimensions `(cells_y, cells_x)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.cells_y, self.cells_x)
    }

    /// The histogram of one cell.
    pub fn histogram(&self, cy: usize, cx: usize) -> &[f64] {
        let start = (cy * self.cells_x + cx) * self.bins;
        &self.data[start..start + self.bins]
    }
}

/// Accumulates magnitude-weighted orientation votes per cell.
///
/// Each pixel votes into the two bins whose centers bracket its angle,
/// weighted linearly by angular distance; the bracketing wraps around the
/// orientation span. Bin centers sit at `(i + 0.5) * span / bins` degrees.
pub fn cell_histograms(field: &GradientField, config: &HogConfig) -> Result<CellGrid> {
    let (h, w) = field.magnitude.shape();
    config.validate(w, h)?;
    let cells_y = h / config.cell_size;
    let cells_x = w / config.cell_size;
    let bins = config.bins;
    let bin_width = field.span_degrees / bins as f64;
    let mut data = vec![0.0; cells_y * cells_x * bins];
    for r in 0..h {
        let cy = r / config.cell_size;
        for c in 0..w {
            let cx = c / config.cell_size;
            let mag = field.magnitude[(r, c)];
            if mag == 0.0 {
                continue;
            }
            let t = field.orientation[(r, c)] / bin_width - 0.5;
            let lower = t.floor();
            let frac = t - lower;
            let lo = (lower as isize).rem_euclid(bins as isize) as usize;
            let hi = (lo + 1) % bins;
            let base = (cy * cells_x + cx) * bins;
            data[base + lo] += (1.0 - frac) * mag;
            data[base + hi] += frac * mag;
        }
    }
    Ok(CellGrid {
        cells_y,
        cells_x,
        bins,
        data,
    })
}

/// A flattened block-normalized descriptor.
///
/// Layout: `(blocks_y, blocks_x, block cell index, bin)` flattened in that
/// order, with cells inside a block in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct HogDescriptor {
    /// Flattened descriptor entries, each in [0, 1].
    pub values: Vec<f64>,
    /// Number of block rows.
    pub blocks_y: usize,
    /// Number of block columns.
    pub blocks_x: usize,
    /// Block side length in cells.
    pub block_size: usize,
    /// Orientation bins per histogram.
    pub bins: usize,
}

impl HogDescriptor {
    /// Total number of entries.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// True when the descriptor has no entries.
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// True when every entry is zero (a constant image produces this).
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Extracts the HOG descriptor of an image.
///
/// Blocks of `block_size` x `block_size` cells slide by `block_stride`;
/// each block's concatenated histograms are normalized as
/// `v / sqrt(||v||^2 + eps^2)` and the blocks concatenate in row-major
/// order. The default config on 32x32 input yields 3*3*4*9 = 324 entries.
pub fn hog_descriptor(img: &GrayImage, config: &HogConfig) -> Result<HogDescriptor> {
    config.validate(img.width(), img.height())?;
    let field = gradients(img, config.signed);
    let cells = cell_histograms(&field, config)?;
    let (blocks_y, blocks_x) = config.block_grid(img.width(), img.height());
    let block_len = config.block_size * config.block_size * config.bins;
    let mut values = Vec::with_capacity(blocks_y * blocks_x * block_len);
    let mut block = vec![0.0; block_len];
    for by in 0..blocks_y {
        for bx in 0..blocks_x {
            let mut k = 0;
            for dy in 0..config.block_size {
                for dx in 0..config.block_size {
                    let cy = by * config.block_stride + dy;
                    let cx = bx * config.block_stride + dx;
                    let hist = cells.histogram(cy, cx);
                    block[k..k + config.bins].copy_from_slice(hist);
                    k += config.bins;
                }
            }
            let norm_sq: f64 = block.iter().map(|v| v * v).sum();
            let scale = 1.0 / (norm_sq + config.norm_epsilon * config.norm_epsilon).sqrt();
            values.extend(block.iter().map(|v| v * scale));
        }
    }
    Ok(HogDescriptor {
        values,
        blocks_y,
        blocks_x,
        block_size: config.block_size,
        bins: config.bins,
    })
}
