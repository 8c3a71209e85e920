//! Grid arithmetic shared by scoring and focus adjustment.
//!
//! Grids are stored row-major. Every normalization here runs over the
//! flattened `H * W` cells, never per row.

use std::collections::BTreeSet;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Stabilizer added to the descriptive map before dividing.
pub const DEFAULT_EPSILON: f64 = 1e-10;

/// Share of cells that count as "high attention" for IoU.
pub const DEFAULT_IOU_FRACTION: f64 = 0.3;

/// A non-negative `height x width` attention map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct AttentionGrid {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawGrid {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl TryFrom<RawGrid> for AttentionGrid {
    type Error = Error;

    fn try_from(raw: RawGrid) -> Result<Self> {
        AttentionGrid::new(raw.height, raw.width, raw.values)
    }
}

impl AttentionGrid {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid(format!("empty grid {height}x{width}")));
        }
        if values.len() != height * width {
            return Err(invalid(format!(
                "grid {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(invalid(format!("grid value {bad} is not finite and non-negative")));
        }
        Ok(Self { height, width, values })
    }

    /// Builds a grid from nested rows; all rows must have equal length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != width) {
            return Err(invalid("ragged grid rows"));
        }
        let values = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::new(height, width, values)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.width)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Row-major index of the largest cell, first occurrence on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.values)
    }

    pub(crate) fn ensure_same_shape(&self, other: &AttentionGrid) -> Result<()> {
        if self.shape() == other.shape() {
            Ok(())
        } else {
            Err(Error::Dimension {
                expected: self.shape(),
                actual: other.shape(),
            })
        }
    }

    pub(crate) fn map_with(&self, other: &AttentionGrid, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.ensure_same_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::new(self.height, self.width, values)
    }
}

/// Softmax output over a grid: sums to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NormalizedGrid(AttentionGrid);

impl NormalizedGrid {
    pub fn into_inner(self) -> AttentionGrid {
        self.0
    }

    pub fn as_grid(&self) -> &AttentionGrid {
        &self.0
    }
}

impl Deref for NormalizedGrid {
    type Target = AttentionGrid;

    fn deref(&self) -> &AttentionGrid {
        &self.0
    }
}

impl AsRef<AttentionGrid> for NormalizedGrid {
    fn as_ref(&self) -> &AttentionGrid {
        &self.0
    }
}

impl AsRef<AttentionGrid> for AttentionGrid {
    fn as_ref(&self) -> &AttentionGrid {
        self
    }
}

/// A set of grid cells, ordered by `(row, col)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellMask {
    pub height: usize,
    pub width: usize,
    pub cells: BTreeSet<(usize, usize)>,
}

impl CellMask {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.cells.contains(&(row, col))
    }
}

/// Max-subtracted softmax over a slice of finite reals.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn softmax_grid(grid: &AttentionGrid) -> Result<NormalizedGrid> {
    if grid.is_empty() {
        return Err(invalid("softmax of empty grid"));
    }
    let values = softmax(grid.values());
    Ok(NormalizedGrid(AttentionGrid::new(grid.height, grid.width, values)?))
}

/// Question (or any text) attention relative to the descriptive baseline:
/// `softmax(a_text / (a_desc + epsilon))`, element-wise division.
///
/// `epsilon = 0` is accepted; a zero descriptive cell then fails as a
/// non-finite ratio.
pub fn relative_attention(
    a_text: &AttentionGrid,
    a_desc: &AttentionGrid,
    epsilon: f64,
) -> Result<NormalizedGrid> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(invalid(format!("epsilon must be finite and >= 0, got {epsilon}")));
    }
    let ratio = a_text.map_with(a_desc, |t, d| t / (d + epsilon))?;
    softmax_grid(&ratio)
}

/// Cosine similarity of the flattened grids, clamped into `[0, 1]`.
pub fn cosine_sim(a: &AttentionGrid, b: &AttentionGrid) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.values().iter().zip(b.values()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine of an all-zero grid".into()));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).min(1.0))
}

/// Number of cells kept by a top-`fraction` mask: `ceil(fraction * n)`.
///
/// The product is nudged down by 1e-9 before the ceiling so that
/// `0.3 * 10` (which is `3.0000000000000004` in binary) keeps 3 cells.
pub fn top_fraction_count(n: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(invalid(format!("fraction must be in (0, 1], got {fraction}")));
    }
    let k = (fraction * n as f64 - 1e-9).ceil() as usize;
    Ok(k.clamp(1, n))
}

/// The `ceil(fraction * H * W)` highest cells; equal values go to the
/// smaller row-major index.
pub fn top_fraction_mask(grid: &AttentionGrid, fraction: f64) -> Result<CellMask> {
    let k = top_fraction_count(grid.len(), fraction)?;
    let mut order: Vec<usize> = (0..grid.len()).collect();
    let v = grid.values();
    order.sort_by(|&i, &j| v[j].total_cmp(&v[i]).then(i.cmp(&j)));
    let cells = order[..k]
        .iter()
        .map(|&i| (i / grid.width, i % grid.width))
        .collect();
    Ok(CellMask {
        height: grid.height,
        width: grid.width,
        cells,
    })
}

pub fn iou_top_fraction(a: &AttentionGrid, b: &AttentionGrid, fraction: f64) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let ma = top_fraction_mask(a, fraction)?;
    let mb = top_fraction_mask(b, fraction)?;
    let inter = ma.cells.intersection(&mb.cells).count();
    let union = ma.cells.union(&mb.cells).count();
    Ok(inter as f64 / union as f64)
}
