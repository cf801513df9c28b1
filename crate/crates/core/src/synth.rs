//! Parametric test shapes with closed-form compactness.
//!
//! Coordinates are continuous `(row, col)` positions; pixel `(r, c)` covers
//! the unit square whose centre is `(r + 0.5, c + 0.5)`. A pixel is
//! foreground iff its centre lies inside the shape. Angles are in degrees,
//! measured from the `+col` axis towards `+row` (clockwise on screen).

use std::f64::consts::PI;
use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::fmt::real;
use crate::geometry::FillMode;
use crate::raster::{BinaryMask, GridShape, RasterError};

/// Clearance between a shape's bounding box and the grid border.
pub const MARGIN_PX: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error(transparent)]
    Grid(#[from] RasterError),
    #[error("invalid shape parameters: {0}")]
    InvalidParameters(String),
    #[error("shape does not fit inside the {height}x{width} grid with a {MARGIN_PX} px margin")]
    ExceedsGrid { height: usize, width: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeKind {
    Disk {
        center: (f64, f64),
        radius: f64,
    },
    /// Axis-aligned; `semi_axis_col` runs along columns.
    Ellipse {
        center: (f64, f64),
        semi_axis_col: f64,
        semi_axis_row: f64,
    },
    Annulus {
        center: (f64, f64),
        outer: f64,
        inner: f64,
    },
    /// Annulus minus the angular sector `[gap_orientation, gap_orientation + gap_angle)`.
    BrokenAnnulus {
        center: (f64, f64),
        outer: f64,
        inner: f64,
        gap_angle: f64,
        gap_orientation: f64,
    },
    MultiDisk {
        disks: Vec<((f64, f64), f64)>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    #[serde(flatten)]
    pub kind: ShapeKind,
    pub height: usize,
    pub width: usize,
}

fn invalid(msg: impl Into<String>) -> SynthError {
    SynthError::InvalidParameters(msg.into())
}

fn positive(name: &str, v: f64) -> Result<(), SynthError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive, got {v}")))
    }
}

impl ShapeSpec {
    pub fn new(height: usize, width: usize, kind: ShapeKind) -> Result<Self, SynthError> {
        let spec = Self {
            kind,
            height,
            width,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn disk(h: usize, w: usize, center: (f64, f64), radius: f64) -> Result<Self, SynthError> {
        Self::new(h, w, ShapeKind::Disk { center, radius })
    }

    pub fn ellipse(
        h: usize,
        w: usize,
        center: (f64, f64),
        semi_axis_col: f64,
        semi_axis_row: f64,
    ) -> Result<Self, SynthError> {
        Self::new(
            h,
            w,
            ShapeKind::Ellipse {
                center,
                semi_axis_col,
                semi_axis_row,
            },
        )
    }

    pub fn annulus(
        h: usize,
        w: usize,
        center: (f64, f64),
        outer: f64,
        inner: f64,
    ) -> Result<Self, SynthError> {
        Self::new(h, w, ShapeKind::Annulus { center, outer, inner })
    }

    pub fn broken_annulus(
        h: usize,
        w: usize,
        center: (f64, f64),
        outer: f64,
        inner: f64,
        gap_angle: f64,
        gap_orientation: f64,
    ) -> Result<Self, SynthError> {
        Self::new(
            h,
            w,
            ShapeKind::BrokenAnnulus {
                center,
                outer,
                inner,
                gap_angle,
                gap_orientation,
            },
        )
    }

    pub fn multi_disk(h: usize, w: usize, disks: &[((f64, f64), f64)]) -> Result<Self, SynthError> {
        Self::new(
            h,
            w,
            ShapeKind::MultiDisk {
                disks: disks.to_vec(),
            },
        )
    }

    pub fn grid(&self) -> Result<GridShape, SynthError> {
        Ok(GridShape::new(self.height, self.width)?)
    }

    /// Checks parameter ranges and that the shape fits with the margin.
    pub fn validate(&self) -> Result<(), SynthError> {
        self.grid()?;
        let fits = |center: (f64, f64), half_rows: f64, half_cols: f64| {
            center.0 - half_rows >= MARGIN_PX
                && center.0 + half_rows <= self.height as f64 - MARGIN_PX
                && center.1 - half_cols >= MARGIN_PX
                && center.1 + half_cols <= self.width as f64 - MARGIN_PX
        };
        let exceeds = SynthError::ExceedsGrid {
            height: self.height,
            width: self.width,
        };
        match &self.kind {
            ShapeKind::Disk { center, radius } => {
                positive("radius", *radius)?;
                if !fits(*center, *radius, *radius) {
                    return Err(exceeds);
                }
            }
            ShapeKind::Ellipse {
                center,
                semi_axis_col,
                semi_axis_row,
            } => {
                positive("semi_axis_col", *semi_axis_col)?;
                positive("semi_axis_row", *semi_axis_row)?;
                if !fits(*center, *semi_axis_row, *semi_axis_col) {
                    return Err(exceeds);
                }
            }
            ShapeKind::Annulus {
                center,
                outer,
                inner,
            }
            | ShapeKind::BrokenAnnulus {
                center,
                outer,
                inner,
                ..
            } => {
                positive("inner radius", *inner)?;
                if inner >= outer {
                    return Err(invalid(format!(
                        "inner radius {inner} must be smaller than outer radius {outer}"
                    )));
                }
                if let ShapeKind::BrokenAnnulus {
                    gap_angle,
                    gap_orientation,
                    ..
                } = &self.kind
                {
                    if !(*gap_angle > 0.0 && *gap_angle < 360.0) {
                        return Err(invalid(format!("gap angle {gap_angle} must lie in (0, 360)")));
                    }
                    if !gap_orientation.is_finite() {
                        return Err(invalid("gap orientation must be finite"));
                    }
                }
                if !fits(*center, *outer, *outer) {
                    return Err(exceeds);
                }
            }
            ShapeKind::MultiDisk { disks } => {
                if disks.is_empty() {
                    return Err(invalid("multi_disk needs at least one disk"));
                }
                for &(center, radius) in disks {
                    positive("radius", radius)?;
                    if !fits(center, radius, radius) {
                        return Err(exceeds);
                    }
                }
                for (i, &(ci, ri)) in disks.iter().enumerate() {
                    for &(cj, rj) in &disks[i + 1..] {
                        let d = ((ci.0 - cj.0).powi(2) + (ci.1 - cj.1).powi(2)).sqrt();
                        if d < ri + rj + MARGIN_PX {
                            return Err(invalid("multi_disk disks must be separated by at least 2 px"));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Whether the continuous shape contains the point `(y, x)`.
    pub fn contains(&self, y: f64, x: f64) -> bool {
        match &self.kind {
            ShapeKind::Disk { center, radius } => dist2(center, y, x) <= radius * radius,
            ShapeKind::Ellipse {
                center,
                semi_axis_col,
                semi_axis_row,
            } => {
                let u = (x - center.1) / semi_axis_col;
                let v = (y - center.0) / semi_axis_row;
                u * u + v * v <= 1.0
            }
            ShapeKind::Annulus {
                center,
                outer,
                inner,
            } => {
                let d2 = dist2(center, y, x);
                d2 <= outer * outer && d2 >= inner * inner
            }
            ShapeKind::BrokenAnnulus {
                center,
                outer,
                inner,
                gap_angle,
                gap_orientation,
            } => {
                let d2 = dist2(center, y, x);
                if d2 > outer * outer || d2 < inner * inner {
                    return false;
                }
                let theta = (y - center.0).atan2(x - center.1).to_degrees();
                let rel = (theta - gap_orientation).rem_euclid(360.0);
                rel >= *gap_angle
            }
            ShapeKind::MultiDisk { disks } => disks
                .iter()
                .any(|(c, r)| dist2(c, y, x) <= r * r),
        }
    }

    /// Smallest feature size: radius, semi-axis, wall thickness, hole radius
    /// or the gap's opening at the inner rim.
    pub fn feature_size(&self) -> f64 {
        match &self.kind {
            ShapeKind::Disk { radius, .. } => *radius,
            ShapeKind::Ellipse {
                semi_axis_col,
                semi_axis_row,
                ..
            } => semi_axis_col.min(*semi_axis_row),
            ShapeKind::Annulus { outer, inner, .. } => (outer - inner).min(*inner),
            ShapeKind::BrokenAnnulus {
                outer,
                inner,
                gap_angle,
                ..
            } => {
                let opening = 2.0 * inner * (gap_angle.min(180.0).to_radians() / 2.0).sin();
                (outer - inner).min(*inner).min(opening)
            }
            ShapeKind::MultiDisk { disks } => {
                disks.iter().map(|d| d.1).fold(f64::INFINITY, f64::min)
            }
        }
    }

    /// The same shape on a grid `factor` times larger in each direction.
    pub fn scaled(&self, factor: f64) -> Result<Self, SynthError> {
        let s = |c: (f64, f64)| (c.0 * factor, c.1 * factor);
        let kind = match &self.kind {
            ShapeKind::Disk { center, radius } => ShapeKind::Disk {
                center: s(*center),
                radius: radius * factor,
            },
            ShapeKind::Ellipse {
                center,
                semi_axis_col,
                semi_axis_row,
            } => ShapeKind::Ellipse {
                center: s(*center),
                semi_axis_col: semi_axis_col * factor,
                semi_axis_row: semi_axis_row * factor,
            },
            ShapeKind::Annulus {
                center,
                outer,
                inner,
            } => ShapeKind::Annulus {
                center: s(*center),
                outer: outer * factor,
                inner: inner * factor,
            },
            ShapeKind::BrokenAnnulus {
                center,
                outer,
                inner,
                gap_angle,
                gap_orientation,
            } => ShapeKind::BrokenAnnulus {
                center: s(*center),
                outer: outer * factor,
                inner: inner * factor,
                gap_angle: *gap_angle,
                gap_orientation: *gap_orientation,
            },
            ShapeKind::MultiDisk { disks } => ShapeKind::MultiDisk {
                disks: disks.iter().map(|&(c, r)| (s(c), r * factor)).collect(),
            },
        };
        let h = (self.height as f64 * factor).round() as usize;
        let w = (self.width as f64 * factor).round() as usize;
        Self::new(h, w, kind)
    }

    /// Sidecar JSON: the shape parameters plus their closed-form ratios.
    pub fn sidecar_json(&self) -> String {
        let spec = serde_json::to_string(self).expect("spec serializes");
        let mut s = String::new();
        let _ = write!(
            s,
            "{{\"spec\":{},\"analytic_mu_raw\":{},\"analytic_mu_filled\":{},\"analytic_mu_single_region\":{}}}",
            spec,
            real(analytic_mu(self, FillMode::Raw)),
            real(analytic_mu(self, FillMode::Filled)),
            real(analytic_single_region_mu(self)),
        );
        s
    }
}

fn dist2(center: &(f64, f64), y: f64, x: f64) -> f64 {
    let dy = y - center.0;
    let dx = x - center.1;
    dy * dy + dx * dx
}

/// Pixel-centre rasterization.
pub fn rasterize(spec: &ShapeSpec) -> Result<BinaryMask, SynthError> {
    spec.validate()?;
    let shape = spec.grid()?;
    Ok(BinaryMask::from_fn(shape, |r, c| {
        spec.contains(r as f64 + 0.5, c as f64 + 0.5)
    }))
}

pub fn rasterize_all(specs: &[ShapeSpec], exec: Execution) -> Vec<Result<BinaryMask, SynthError>> {
    exec::map_slice(exec, specs, rasterize)
}

/// Complete elliptic integral of the second kind `E(m)`, `m = k^2 < 1`,
/// by the arithmetic-geometric mean.
pub fn elliptic_e(m: f64) -> f64 {
    assert!((0.0..1.0).contains(&m), "parameter must lie in [0, 1)");
    let mut a = 1.0f64;
    let mut b = (1.0 - m).sqrt();
    let mut c2 = m;
    let mut weight = 0.5;
    let mut sum = weight * c2;
    for _ in 0..64 {
        let an = 0.5 * (a + b);
        let bn = (a * b).sqrt();
        let c = 0.5 * (a - b);
        c2 = c * c;
        weight *= 2.0;
        sum += weight * c2;
        a = an;
        b = bn;
        if c2 < 1e-32 {
            break;
        }
    }
    PI / (2.0 * a) * (1.0 - sum)
}

/// Exact ellipse perimeter `4a E(1 - b^2/a^2)` with `a >= b`.
pub fn ellipse_perimeter(a: f64, b: f64) -> f64 {
    let (a, b) = if a >= b { (a, b) } else { (b, a) };
    4.0 * a * elliptic_e(1.0 - (b / a) * (b / a))
}

fn ratio(area: f64, length: f64) -> f64 {
    4.0 * PI * area / (length * length)
}

/// Continuum compactness of the shape.
///
/// Per-component values are combined by area-weighted mean, matching the
/// default aggregation of [`crate::geometry::region_report`]. Filling only
/// changes the closed annulus; the broken annulus has no enclosed hole.
pub fn analytic_mu(spec: &ShapeSpec, mode: FillMode) -> f64 {
    match &spec.kind {
        ShapeKind::Disk { .. } | ShapeKind::MultiDisk { .. } => 1.0,
        ShapeKind::Ellipse {
            semi_axis_col,
            semi_axis_row,
            ..
        } => ratio(
            PI * semi_axis_col * semi_axis_row,
            ellipse_perimeter(*semi_axis_col, *semi_axis_row),
        ),
        ShapeKind::Annulus { outer, inner, .. } => match mode {
            FillMode::Raw => (outer - inner) / (outer + inner),
            FillMode::Filled => 1.0,
        },
        ShapeKind::BrokenAnnulus {
            outer,
            inner,
            gap_angle,
            ..
        } => {
            let kept = 1.0 - gap_angle / 360.0;
            let area = kept * PI * (outer * outer - inner * inner);
            let length = kept * 2.0 * PI * (outer + inner) + 2.0 * (outer - inner);
            ratio(area, length)
        }
    }
}

/// Compactness of the whole shape read as a single region (total area over
/// squared total boundary). Differs from [`analytic_mu`] only for
/// multi-disks: two equal disks give exactly 1/2.
pub fn analytic_single_region_mu(spec: &ShapeSpec) -> f64 {
    match &spec.kind {
        ShapeKind::MultiDisk { disks } => {
            let area: f64 = disks.iter().map(|d| PI * d.1 * d.1).sum();
            let length: f64 = disks.iter().map(|d| 2.0 * PI * d.1).sum();
            ratio(area, length)
        }
        _ => analytic_mu(spec, FillMode::Raw),
    }
}
