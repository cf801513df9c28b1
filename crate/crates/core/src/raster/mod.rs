//! Grid value types: soft prediction fields, binary masks and thresholds.
//!
//! Storage is dense and row-major: pixel `(r, c)` lives at `r * width + c`,
//! the same order as raster files. All types are immutable once built.

mod pgm;

pub use pgm::{read_pgm, write_mask_pgm, write_pgm, PgmError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RasterError {
    #[error("grid dimensions must be positive, got {height}x{width}")]
    EmptyGrid { height: usize, width: usize },
    #[error("expected {expected} values for the grid, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("value {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("threshold must lie strictly inside (0, 1), got {0}")]
    InvalidThreshold(f64),
    #[error("grid shapes differ: {left} vs {right}")]
    ShapeMismatch { left: GridShape, right: GridShape },
}

/// Pixel dimensions of the image domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    height: usize,
    width: usize,
}

impl std::fmt::Display for GridShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

impl GridShape {
    pub fn new(height: usize, width: usize) -> Result<Self, RasterError> {
        if height == 0 || width == 0 {
            return Err(RasterError::EmptyGrid { height, width });
        }
        Ok(Self { height, width })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of pixels.
    #[inline]
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.height && col < self.width);
        row * self.width + col
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index / self.width, index % self.width)
    }

    /// Index of `(row, col)` if it lies on the grid.
    #[inline]
    pub fn checked_index(&self, row: isize, col: isize) -> Option<usize> {
        if row < 0 || col < 0 || row as usize >= self.height || col as usize >= self.width {
            None
        } else {
            Some(row as usize * self.width + col as usize)
        }
    }

    pub(crate) fn ensure_same(&self, other: &GridShape) -> Result<(), RasterError> {
        if self == other {
            Ok(())
        } else {
            Err(RasterError::ShapeMismatch {
                left: *self,
                right: *other,
            })
        }
    }
}

/// Thresholding level `lambda` in the open interval (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Threshold(f64);

impl Threshold {
    pub fn new(lambda: f64) -> Result<Self, RasterError> {
        if lambda > 0.0 && lambda < 1.0 {
            Ok(Self(lambda))
        } else {
            Err(RasterError::InvalidThreshold(lambda))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Threshold {
    fn default() -> Self {
        Self(0.5)
    }
}

/// Soft segmentation prediction with every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionField {
    shape: GridShape,
    values: Vec<f64>,
}

impl PredictionField {
    pub fn new(shape: GridShape, values: Vec<f64>) -> Result<Self, RasterError> {
        if values.len() != shape.len() {
            return Err(RasterError::LengthMismatch {
                expected: shape.len(),
                found: values.len(),
            });
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(RasterError::OutOfRange { index, value });
        }
        Ok(Self { shape, values })
    }

    /// Builds a field by clamping arbitrary reals into `[0, 1]`.
    ///
    /// NaN maps to 0.
    pub fn from_clamped(shape: GridShape, mut values: Vec<f64>) -> Result<Self, RasterError> {
        for v in values.iter_mut() {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(shape, values)
    }

    pub fn uniform(shape: GridShape, value: f64) -> Result<Self, RasterError> {
        Self::new(shape, vec![value; shape.len()])
    }

    pub fn from_fn(
        shape: GridShape,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self, RasterError> {
        let mut values = Vec::with_capacity(shape.len());
        for r in 0..shape.height {
            for c in 0..shape.width {
                values.push(f(r, c));
            }
        }
        Self::new(shape, values)
    }

    #[inline]
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[self.shape.index(row, col)]
    }

    /// Thresholds at `t`; see [`threshold_field`].
    pub fn threshold(&self, t: Threshold) -> BinaryMask {
        threshold_field(self, t)
    }
}

/// Binary indicator of a segmented region.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    shape: GridShape,
    values: Vec<bool>,
}

impl BinaryMask {
    pub fn new(shape: GridShape, values: Vec<bool>) -> Result<Self, RasterError> {
        if values.len() != shape.len() {
            return Err(RasterError::LengthMismatch {
                expected: shape.len(),
                found: values.len(),
            });
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: GridShape) -> Self {
        Self {
            shape,
            values: vec![false; shape.len()],
        }
    }

    pub fn ones(shape: GridShape) -> Self {
        Self {
            shape,
            values: vec![true; shape.len()],
        }
    }

    pub fn from_fn(shape: GridShape, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut values = Vec::with_capacity(shape.len());
        for r in 0..shape.height {
            for c in 0..shape.width {
                values.push(f(r, c));
            }
        }
        Self { shape, values }
    }

    /// Parses rows of `0`/`1` characters; any other character is ignored.
    /// Handy for hand-written test fixtures.
    pub fn from_rows(rows: &[&str]) -> Result<Self, RasterError> {
        let grid: Vec<Vec<bool>> = rows
            .iter()
            .map(|row| {
                row.chars()
                    .filter_map(|c| match c {
                        '0' | '.' => Some(false),
                        '1' | '#' => Some(true),
                        _ => None,
                    })
                    .collect()
            })
            .collect();
        let height = grid.len();
        let width = grid.first().map_or(0, Vec::len);
        let shape = GridShape::new(height, width)?;
        let values: Vec<bool> = grid.into_iter().flatten().collect();
        Self::new(shape, values)
    }

    #[inline]
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    #[inline]
    pub fn values(&self) -> &[bool] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.values[self.shape.index(row, col)]
    }

    /// Value at signed coordinates; off-grid pixels read as background.
    #[inline]
    pub fn get_or_background(&self, row: isize, col: isize) -> bool {
        self.shape
            .checked_index(row, col)
            .is_some_and(|i| self.values[i])
    }

    /// Number of foreground pixels.
    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.values.iter().any(|&v| v)
    }

    /// Indices of foreground pixels in scan order.
    pub fn foreground(&self) -> impl Iterator<Item = usize> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| v.then_some(i))
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample(&self, factor: usize) -> BinaryMask {
        assert!(factor >= 1, "upsampling factor must be positive");
        let shape = GridShape {
            height: self.shape.height * factor,
            width: self.shape.width * factor,
        };
        BinaryMask::from_fn(shape, |r, c| self.get(r / factor, c / factor))
    }

    /// Integer translation; pixels shifted off the grid are dropped.
    pub fn shifted(&self, drow: isize, dcol: isize) -> BinaryMask {
        BinaryMask::from_fn(self.shape, |r, c| {
            self.get_or_background(r as isize - drow, c as isize - dcol)
        })
    }

    /// Pixelwise `self ⊆ other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.shape == other.shape
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(&a, &b)| !a || b)
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask, RasterError> {
        self.shape.ensure_same(&other.shape)?;
        Ok(BinaryMask {
            shape: self.shape,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| a || b)
                .collect(),
        })
    }

    pub fn to_field(&self) -> PredictionField {
        mask_to_field(self)
    }
}

/// Pixel is foreground iff its value strictly exceeds `lambda`; ties go to
/// the background.
pub fn threshold_field(field: &PredictionField, t: Threshold) -> BinaryMask {
    let lambda = t.value();
    BinaryMask {
        shape: field.shape,
        values: field.values.iter().map(|&v| v > lambda).collect(),
    }
}

pub fn mask_to_field(mask: &BinaryMask) -> PredictionField {
    PredictionField {
        shape: mask.shape,
        values: mask
            .values
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect(),
    }
}
