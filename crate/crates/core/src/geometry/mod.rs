//! Discrete geometry of binary masks and the compactness prior.
//!
//! A region's compactness is `mu = 4*pi*A / L^2`, which the isoperimetric
//! inequality bounds by 1 with equality for disks. A region is admissible
//! when `mu > tau`; the penalty is the hinge `max(0, tau - mu)`.
//!
//! [`region_report`] measures every 8-connected component separately and
//! combines the per-component ratios, so a union of well-separated disks
//! still scores close to 1. In [`FillMode::Filled`] holes are filled first,
//! so `L` is the length of the external contour and `A` the area it
//! encloses: a closed ring then measures like a disk while a ring broken
//! open by a gap stays a thin, strongly concave band.

mod components;
mod perimeter;

pub use components::{connected_components, fill_holes, label_components, Component};
pub use perimeter::{area, perimeter, Estimator};

pub(crate) use components::N4;

use std::f64::consts::PI;
use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::fmt::{json_string, real};
use crate::raster::{BinaryMask, GridShape};

/// Default admissibility threshold.
pub const DEFAULT_TAU: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("tau must lie strictly inside (0, 1), got {0}")]
    InvalidTau(f64),
}

/// Whether holes are filled before measuring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillMode {
    /// Measure the mask as given: `L` includes inner boundaries.
    Raw,
    /// Measure the external contour: holes are filled first.
    #[default]
    Filled,
}

impl FillMode {
    pub fn name(self) -> &'static str {
        match self {
            FillMode::Raw => "raw",
            FillMode::Filled => "filled",
        }
    }
}

/// How per-component ratios combine into one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    #[default]
    AreaWeightedMean,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    tau: f64,
    pub mode: FillMode,
    pub estimator: Estimator,
    pub aggregate: Aggregate,
}

impl PenaltyConfig {
    pub fn new(
        tau: f64,
        mode: FillMode,
        estimator: Estimator,
        aggregate: Aggregate,
    ) -> Result<Self, GeometryError> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(GeometryError::InvalidTau(tau));
        }
        Ok(Self {
            tau,
            mode,
            estimator,
            aggregate,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn with_mode(mut self, mode: FillMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_estimator(mut self, estimator: Estimator) -> Self {
        self.estimator = estimator;
        self
    }

    pub fn with_aggregate(mut self, aggregate: Aggregate) -> Self {
        self.aggregate = aggregate;
        self
    }
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            mode: FillMode::default(),
            estimator: Estimator::default(),
            aggregate: Aggregate::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub label: u32,
    pub area: f64,
    pub perimeter: f64,
    /// Clamped to `[0, 1]`.
    pub mu: f64,
}

/// Geometry of every component plus the aggregate verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub mode: FillMode,
    pub estimator: Estimator,
    pub tau: f64,
    pub aggregate_mu: f64,
    pub penalty: f64,
    pub admissible: bool,
    pub components: Vec<ComponentRecord>,
}

impl RegionReport {
    /// JSON with a fixed key order and six decimals for every real.
    pub fn to_json(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{{\"mode\":{},\"estimator\":{},\"tau\":{},\"aggregate_mu\":{},\"penalty\":{},\"admissible\":{},\"components\":[",
            json_string(self.mode.name()),
            json_string(self.estimator.name()),
            real(self.tau),
            real(self.aggregate_mu),
            real(self.penalty),
            self.admissible,
        );
        for (k, c) in self.components.iter().enumerate() {
            if k > 0 {
                s.push(',');
            }
            let _ = write!(
                s,
                "{{\"label\":{},\"area\":{},\"perimeter\":{},\"mu\":{}}}",
                c.label,
                real(c.area),
                real(c.perimeter),
                real(c.mu)
            );
        }
        s.push_str("]}");
        s
    }
}

/// Unclamped `4*pi*A / L^2`. A region without measurable boundary (for
/// example a full grid under the isotropic estimator) counts as a disk.
pub fn compactness(area: f64, perimeter: f64) -> f64 {
    if area <= 0.0 {
        0.0
    } else if perimeter <= 0.0 {
        1.0
    } else {
        4.0 * PI * area / (perimeter * perimeter)
    }
}

/// Hinge penalty `max(0, tau - mu)`.
pub fn penalty(mu: f64, tau: f64) -> f64 {
    (tau - mu).max(0.0)
}

/// Boundary length of one component, measured on a crop around it so other
/// components do not interfere.
fn component_perimeter(shape: GridShape, comp: &Component, estimator: Estimator) -> f64 {
    let (r0, c0, r1, c1) = comp.bounding_box(shape);
    let r0 = r0.saturating_sub(1);
    let c0 = c0.saturating_sub(1);
    let r1 = (r1 + 1).min(shape.height() - 1);
    let c1 = (c1 + 1).min(shape.width() - 1);
    let crop_shape = GridShape::new(r1 - r0 + 1, c1 - c0 + 1).expect("non-empty crop");
    let mut values = vec![false; crop_shape.len()];
    for &i in &comp.pixels {
        let (r, c) = shape.coords(i);
        values[crop_shape.index(r - r0, c - c0)] = true;
    }
    let crop = BinaryMask::new(crop_shape, values).expect("crop shape");
    perimeter(&crop, estimator)
}

/// Measures `mask` under `config`.
///
/// In filled mode the mask is hole-filled before labelling, so a component
/// nested inside another's hole merges into the enclosing region. The empty
/// mask scores `mu = 0`, the maximal penalty `tau`, and is inadmissible.
pub fn region_report(mask: &BinaryMask, config: &PenaltyConfig) -> RegionReport {
    let measured = match config.mode {
        FillMode::Raw => mask.clone(),
        FillMode::Filled => fill_holes(mask),
    };
    let shape = measured.shape();
    let components: Vec<ComponentRecord> = connected_components(&measured)
        .iter()
        .map(|comp| {
            let area = comp.area_px as f64;
            let perimeter = component_perimeter(shape, comp, config.estimator);
            ComponentRecord {
                label: comp.label,
                area,
                perimeter,
                mu: compactness(area, perimeter).clamp(0.0, 1.0),
            }
        })
        .collect();

    let aggregate_mu = if components.is_empty() {
        0.0
    } else {
        match config.aggregate {
            Aggregate::AreaWeightedMean => {
                let total: f64 = components.iter().map(|c| c.area).sum();
                components.iter().map(|c| c.area * c.mu).sum::<f64>() / total
            }
            Aggregate::Min => components
                .iter()
                .map(|c| c.mu)
                .fold(f64::INFINITY, f64::min),
        }
    };
    RegionReport {
        mode: config.mode,
        estimator: config.estimator,
        tau: config.tau,
        aggregate_mu,
        penalty: penalty(aggregate_mu, config.tau),
        admissible: aggregate_mu > config.tau,
        components,
    }
}

/// Reports for many masks, in input order.
pub fn region_reports(
    masks: &[BinaryMask],
    config: &PenaltyConfig,
    exec: Execution,
) -> Vec<RegionReport> {
    exec::map_slice(exec, masks, |m| region_report(m, config))
}

/// Ratio of the whole foreground read as one region: total area over the
/// squared total boundary length, without clamping. Two equal disjoint
/// disks score about 1/2 here, which is why [`region_report`] works per
/// component.
pub fn single_region_mu(mask: &BinaryMask, mode: FillMode, estimator: Estimator) -> f64 {
    let measured = match mode {
        FillMode::Raw => mask.clone(),
        FillMode::Filled => fill_holes(mask),
    };
    compactness(area(&measured), perimeter(&measured, estimator))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{rasterize, ShapeSpec};

    fn cfg() -> PenaltyConfig {
        PenaltyConfig::default()
    }

    #[test]
    fn penalty_hinge_cases() {
        assert_eq!(penalty(0.8, 0.6), 0.0);
        assert!((penalty(0.4, 0.6) - 0.2).abs() < 1e-15);
        assert_eq!(penalty(0.6, 0.6), 0.0);
    }

    #[test]
    fn config_rejects_bad_tau() {
        for tau in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(PenaltyConfig::new(tau, FillMode::Filled, Estimator::Crofton, Aggregate::Min).is_err());
        }
    }

    #[test]
    fn empty_mask_convention() {
        let r = region_report(&BinaryMask::zeros(GridShape::new(8, 8).unwrap()), &cfg());
        assert_eq!(r.aggregate_mu, 0.0);
        assert_eq!(r.penalty, 0.6);
        assert!(!r.admissible);
        assert!(r.components.is_empty());
    }

    #[test]
    fn disk_is_admissible() {
        let disk = rasterize(&ShapeSpec::disk(64, 64, (32.0, 32.0), 20.0).unwrap()).unwrap();
        let r = region_report(&disk, &cfg());
        assert!((0.95..=1.0).contains(&r.aggregate_mu), "{}", r.aggregate_mu);
        assert_eq!(r.penalty, 0.0);
        assert!(r.admissible);
    }

    #[test]
    fn edge_estimator_biases_disk_towards_tau() {
        // pi^2/16 ~ 0.617 for the staircase length 8R.
        let disk = rasterize(&ShapeSpec::disk(64, 64, (32.0, 32.0), 20.0).unwrap()).unwrap();
        let r = region_report(&disk, &cfg().with_estimator(Estimator::Edge));
        assert!((r.aggregate_mu - PI * PI / 16.0).abs() < 0.03, "{}", r.aggregate_mu);
    }

    #[test]
    fn annulus_raw_and_filled() {
        let ring = rasterize(&ShapeSpec::annulus(72, 72, (36.0, 36.0), 30.0, 22.0).unwrap()).unwrap();
        let filled = region_report(&ring, &cfg());
        assert!(filled.aggregate_mu >= 0.95, "{}", filled.aggregate_mu);
        let raw = region_report(&ring, &cfg().with_mode(FillMode::Raw));
        assert!((raw.aggregate_mu - 8.0 / 52.0).abs() <= 0.05, "{}", raw.aggregate_mu);
    }

    #[test]
    fn broken_annulus_is_inadmissible() {
        let spec = ShapeSpec::broken_annulus(72, 72, (36.0, 36.0), 30.0, 24.0, 60.0, 0.0).unwrap();
        let r = region_report(&rasterize(&spec).unwrap(), &cfg());
        assert!(r.aggregate_mu < 0.5);
        assert!(r.penalty > 0.1);
        assert!(!r.admissible);
    }

    #[test]
    fn two_disks_per_component_vs_single_region() {
        let spec = ShapeSpec::multi_disk(64, 128, &[((32.0, 32.0), 20.0), ((32.0, 96.0), 20.0)]).unwrap();
        let m = rasterize(&spec).unwrap();
        let r = region_report(&m, &cfg());
        assert_eq!(r.components.len(), 2);
        assert!(r.aggregate_mu >= 0.95);
        let single = single_region_mu(&m, FillMode::Filled, Estimator::Crofton);
        assert!((single - 0.5).abs() < 0.05, "{single}");
    }

    #[test]
    fn min_aggregate_picks_worst_component() {
        let mut m = rasterize(&ShapeSpec::disk(64, 128, (32.0, 32.0), 20.0).unwrap()).unwrap();
        let bar = BinaryMask::from_fn(m.shape(), |r, c| r == 32 && (70..120).contains(&c));
        m = m.union(&bar).unwrap();
        let mean = region_report(&m, &cfg());
        let min = region_report(&m, &cfg().with_aggregate(Aggregate::Min));
        assert!(min.aggregate_mu < 0.2);
        assert!(mean.aggregate_mu > min.aggregate_mu);
        let bar_mu = mean.components[1].mu;
        assert_eq!(min.aggregate_mu, bar_mu);
    }

    #[test]
    fn nested_blob_merges_into_filled_ring() {
        let ring = rasterize(&ShapeSpec::annulus(72, 72, (36.0, 36.0), 30.0, 22.0).unwrap()).unwrap();
        let blob = rasterize(&ShapeSpec::disk(72, 72, (36.0, 36.0), 5.0).unwrap()).unwrap();
        let m = ring.union(&blob).unwrap();
        assert_eq!(region_report(&m, &cfg()).components.len(), 1);
        assert_eq!(region_report(&m, &cfg().with_mode(FillMode::Raw)).components.len(), 2);
    }

    #[test]
    fn raw_equals_filled_on_simply_connected_component() {
        let e = rasterize(&ShapeSpec::ellipse(64, 64, (32.0, 32.0), 24.0, 12.0).unwrap()).unwrap();
        for est in [Estimator::Edge, Estimator::Isotropic, Estimator::Crofton] {
            let c = cfg().with_estimator(est);
            assert_eq!(
                region_report(&e, &c.with_mode(FillMode::Raw)).components,
                region_report(&e, &c).components
            );
        }
    }

    #[test]
    fn report_invariants_hold() {
        let spec = ShapeSpec::broken_annulus(72, 72, (36.0, 36.0), 30.0, 22.0, 40.0, 90.0).unwrap();
        let r = region_report(&rasterize(&spec).unwrap(), &cfg());
        assert_eq!(r.penalty, (r.tau - r.aggregate_mu).max(0.0));
        assert_eq!(r.admissible, r.aggregate_mu > r.tau);
        for c in &r.components {
            assert_eq!(c.mu, compactness(c.area, c.perimeter).clamp(0.0, 1.0));
        }
    }

    #[test]
    fn json_key_order_and_round_trip() {
        let m = BinaryMask::from_rows(&["000", "010", "000"]).unwrap();
        let r = region_report(&m, &cfg());
        let json = r.to_json();
        assert!(json.starts_with(
            "{\"mode\":\"filled\",\"estimator\":\"crofton\",\"tau\":0.600000,\"aggregate_mu\":1.000000,\"penalty\":0.000000,\"admissible\":true,\"components\":[{\"label\":1,\"area\":1.000000,\"perimeter\":2.681517,\"mu\":1.000000}]"
        ), "{json}");
        let back: RegionReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.components.len(), 1);
        assert_eq!(back.mode, FillMode::Filled);
        assert_eq!(back.admissible, r.admissible);
    }

    #[test]
    fn batch_matches_single() {
        let masks: Vec<BinaryMask> = (0..6)
            .map(|k| rasterize(&ShapeSpec::disk(40, 40, (20.0, 20.0), 5.0 + k as f64).unwrap()).unwrap())
            .collect();
        let seq = region_reports(&masks, &cfg(), Execution::Sequential);
        let par = region_reports(&masks, &cfg(), Execution::Parallel);
        assert_eq!(seq, par);
        assert_eq!(seq[3], region_report(&masks[3], &cfg()));
    }
}
