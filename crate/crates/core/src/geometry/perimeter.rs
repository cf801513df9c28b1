//! Area and boundary-length estimators on binary masks.

use serde::{Deserialize, Serialize};

use crate::raster::BinaryMask;

/// Boundary-length estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// Count of exposed pixel sides; off-grid counts as background.
    Edge,
    /// Sum of `|forward-difference gradient|` of the indicator.
    Isotropic,
    /// Cauchy-Crofton intersection count over four line directions.
    #[default]
    Crofton,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Edge => "edge",
            Estimator::Isotropic => "isotropic",
            Estimator::Crofton => "crofton",
        }
    }
}

/// Foreground pixel count, in px².
pub fn area(mask: &BinaryMask) -> f64 {
    mask.count() as f64
}

pub fn perimeter(mask: &BinaryMask, estimator: Estimator) -> f64 {
    match estimator {
        Estimator::Edge => edge_perimeter(mask),
        Estimator::Isotropic => isotropic_perimeter(mask),
        Estimator::Crofton => crofton_perimeter(mask),
    }
}

pub(crate) fn edge_perimeter(mask: &BinaryMask) -> f64 {
    let shape = mask.shape();
    let mut sides = 0usize;
    for i in mask.foreground() {
        let (r, c) = shape.coords(i);
        let (r, c) = (r as isize, c as isize);
        sides += usize::from(!mask.get_or_background(r - 1, c));
        sides += usize::from(!mask.get_or_background(r + 1, c));
        sides += usize::from(!mask.get_or_background(r, c - 1));
        sides += usize::from(!mask.get_or_background(r, c + 1));
    }
    sides as f64
}

/// Forward differences along rows and columns. The difference leaving the
/// last row or column is zero, so the estimator agrees with the soft
/// perimeter in [`crate::relax`] on saturated fields.
pub(crate) fn isotropic_perimeter(mask: &BinaryMask) -> f64 {
    let shape = mask.shape();
    let (h, w) = (shape.height(), shape.width());
    let v = mask.values();
    let chi = |i: usize| if v[i] { 1.0f64 } else { 0.0 };
    let mut total = 0.0;
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let dx = if c + 1 < w { chi(i + 1) - chi(i) } else { 0.0 };
            let dy = if r + 1 < h { chi(i + w) - chi(i) } else { 0.0 };
            if dx != 0.0 || dy != 0.0 {
                total += (dx * dx + dy * dy).sqrt();
            }
        }
    }
    total
}

/// Discrete Cauchy-Crofton length. Lines along the four grid directions
/// (0, 45, 90 and 135 degrees) are sampled at their natural spacing (1 for
/// the axes, `1/sqrt(2)` for the diagonals); each foreground/background
/// transition between neighbouring pixel centres along a line is one
/// intersection with the boundary. The mask is padded with background.
/// `L = (1/2) * (pi/4) * sum over directions of spacing * crossings`.
pub(crate) fn crofton_perimeter(mask: &BinaryMask) -> f64 {
    let shape = mask.shape();
    let (h, w) = (shape.height() as isize, shape.width() as isize);
    let mut axial = 0usize;
    let mut diagonal = 0usize;
    for r in -1..=h {
        for c in -1..=w {
            let p = mask.get_or_background(r, c);
            axial += usize::from(p != mask.get_or_background(r, c + 1));
            axial += usize::from(p != mask.get_or_background(r + 1, c));
            diagonal += usize::from(p != mask.get_or_background(r + 1, c + 1));
            diagonal += usize::from(p != mask.get_or_background(r + 1, c - 1));
        }
    }
    std::f64::consts::PI / 8.0 * (axial as f64 + diagonal as f64 * std::f64::consts::FRAC_1_SQRT_2)
}
