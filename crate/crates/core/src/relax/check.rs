//! Central finite-difference verification of analytic gradients.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::exec::{self, Execution};
use crate::fmt::{json_string, sci};
use crate::geometry::FillMode;
use crate::raster::{BinaryMask, GridShape, PredictionField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    count_ce_clamped, cross_entropy_loss, near_perimeter_kink, soft_indicator, soft_area, soft_dice_loss, soft_penalty, soft_perimeter,
    HingeState, LossValueGrad, RelaxError, SoftConfig, SoftFill,
};

/// A differentiable scalar function of a prediction field.
pub trait Objective: Sync {
    fn name(&self) -> &str;

    fn evaluate(&self, field: &PredictionField) -> LossValueGrad;

    /// Identifies the smooth piece the field lies on. Coordinates whose
    /// perturbations change the piece straddle a kink and are not compared.
    fn piece(&self, _field: &PredictionField) -> u64 {
        0
    }

    /// Coordinates where the function is smooth but too sharply curved for
    /// a central difference of size `step` to resolve.
    fn near_kink(&self, _field: &PredictionField, _i: usize, _step: f64) -> bool {
        false
    }
}

pub struct SoftAreaObjective(pub SoftConfig);
pub struct SoftPerimeterObjective(pub SoftConfig);
pub struct SoftPenaltyObjective {
    pub cfg: SoftConfig,
    pub mode: FillMode,
    pub fill: SoftFill,
}
pub struct SoftDiceObjective(pub BinaryMask);
pub struct CrossEntropyObjective(pub BinaryMask);

impl Objective for SoftAreaObjective {
    fn name(&self) -> &str {
        "soft_area"
    }

    fn evaluate(&self, field: &PredictionField) -> LossValueGrad {
        soft_area(field, &self.0)
    }
}

impl Objective for SoftPerimeterObjective {
    fn name(&self) -> &str {
        "soft_perimeter"
    }

    fn evaluate(&self, field: &PredictionField) -> LossValueGrad {
        soft_perimeter(field, &self.0)
    }

    fn near_kink(&self, field: &PredictionField, i: usize, step: f64) -> bool {
        near_perimeter_kink(field.shape(), &soft_indicator(field, &self.0), i, step, self.0.eps())
    }
}

impl Objective for SoftPenaltyObjective {
    fn name(&self) -> &str {
        match self.mode {
            FillMode::Raw => "soft_topology_penalty",
            FillMode::Filled => "soft_topology_penalty_filled",
        }
    }

    fn evaluate(&self, field: &PredictionField) -> LossValueGrad {
        soft_penalty(field, &self.cfg, self.mode, &self.fill).loss
    }

    fn piece(&self, field: &PredictionField) -> u64 {
        match soft_penalty(field, &self.cfg, self.mode, &self.fill).state {
            HingeState::Inactive => 0,
            HingeState::Active => 1,
            HingeState::Boundary => 2,
            HingeState::Degenerate => 3,
        }
    }

    fn near_kink(&self, field: &PredictionField, i: usize, step: f64) -> bool {
        self.mode == FillMode::Raw
            && near_perimeter_kink(field.shape(), &soft_indicator(field, &self.cfg), i, step, self.cfg.eps())
    }
}

impl Objective for SoftDiceObjective {
    fn name(&self) -> &str {
        "soft_dice_loss"
    }

    fn evaluate(&self, field: &PredictionField) -> LossValueGrad {
        soft_dice_loss(field, &self.0).expect("target shape checked at construction")
    }
}

impl Objective for CrossEntropyObjective {
    fn name(&self) -> &str {
        "cross_entropy_loss"
    }

    fn evaluate(&self, field: &PredictionField) -> LossValueGrad {
        cross_entropy_loss(field, &self.0).expect("target shape checked at construction")
    }

    fn piece(&self, field: &PredictionField) -> u64 {
        count_ce_clamped(field)
    }
}

pub const OBJECTIVE_NAMES: [&str; 6] = [
    "soft_area",
    "soft_perimeter",
    "soft_topology_penalty",
    "soft_topology_penalty_filled",
    "soft_dice_loss",
    "cross_entropy_loss",
];

/// Builds an objective from its name. Loss objectives compare against
/// `target`, which must match the field's grid.
pub fn objective_by_name(
    name: &str,
    cfg: SoftConfig,
    fill: SoftFill,
    target: &BinaryMask,
) -> Result<Box<dyn Objective>, RelaxError> {
    Ok(match name {
        "soft_area" => Box::new(SoftAreaObjective(cfg)),
        "soft_perimeter" => Box::new(SoftPerimeterObjective(cfg)),
        "soft_topology_penalty" => Box::new(SoftPenaltyObjective {
            cfg,
            mode: FillMode::Raw,
            fill,
        }),
        "soft_topology_penalty_filled" => Box::new(SoftPenaltyObjective {
            cfg,
            mode: FillMode::Filled,
            fill,
        }),
        "soft_dice_loss" => Box::new(SoftDiceObjective(target.clone())),
        "cross_entropy_loss" => Box::new(CrossEntropyObjective(target.clone())),
        other => return Err(RelaxError::UnknownObjective(other.to_string())),
    })
}

/// Values of [`random_case`] fields lie in this range. Central differences
/// of the logarithm in cross-entropy lose accuracy closer to 0 and 1.
pub const CASE_RANGE: (f64, f64) = (0.01, 0.99);

/// A seeded square test field with uniform values in [`CASE_RANGE`] and a
/// target mask with each pixel set with probability one half.
pub fn random_case(seed: u64, size: usize) -> Result<(PredictionField, BinaryMask), RelaxError> {
    let shape = GridShape::new(size, size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let field = PredictionField::from_fn(shape, |_, _| rng.gen_range(CASE_RANGE.0..CASE_RANGE.1))?;
    let target = BinaryMask::from_fn(shape, |_, _| rng.gen_bool(0.5));
    Ok((field, target))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub op: String,
    /// Coordinates compared.
    pub n: usize,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub pass: bool,
    /// Coordinates skipped because a perturbation crosses or nears a kink or
    /// leaves `[0, 1]`.
    pub excluded: usize,
}

impl GradCheckReport {
    pub fn to_json(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{{\"op\":{},\"n\":{},\"max_abs_err\":{},\"max_rel_err\":{},\"pass\":{},\"excluded\":{}}}",
            json_string(&self.op),
            self.n,
            sci(self.max_abs_err),
            sci(self.max_rel_err),
            self.pass,
            self.excluded
        );
        s
    }
}

/// Relative errors use `max(|analytic|, |numeric|, REL_FLOOR)` as the scale.
pub const REL_FLOOR: f64 = 1e-5;

/// Compares the analytic gradient with `(f(x + h e_i) - f(x - h e_i)) / 2h`
/// at every coordinate; passes when the largest relative error is below
/// `tol`.
pub fn check_gradient(
    objective: &dyn Objective,
    field: &PredictionField,
    step: f64,
    tol: f64,
    exec: Execution,
) -> Result<GradCheckReport, RelaxError> {
    if !(step.is_finite() && step > 0.0) {
        return Err(RelaxError::InvalidStep(step));
    }
    let analytic = objective.evaluate(field).grad;
    let piece = objective.piece(field);
    let shape = field.shape();
    let base = field.values();
    let errors = exec::map_range(exec, shape.len(), |i| {
        let x = base[i];
        if x - step < 0.0 || x + step > 1.0 || objective.near_kink(field, i, step) {
            return None;
        }
        let perturbed = |v: f64| {
            let mut values = base.to_vec();
            values[i] = v;
            PredictionField::new(shape, values).expect("perturbation stays in range")
        };
        let plus = perturbed(x + step);
        let minus = perturbed(x - step);
        if objective.piece(&plus) != piece || objective.piece(&minus) != piece {
            return None;
        }
        let numeric = (objective.evaluate(&plus).value - objective.evaluate(&minus).value) / (2.0 * step);
        let abs = (analytic[i] - numeric).abs();
        let rel = abs / analytic[i].abs().max(numeric.abs()).max(REL_FLOOR);
        Some((abs, rel))
    });
    let mut report = GradCheckReport {
        op: objective.name().to_string(),
        n: 0,
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        pass: true,
        excluded: 0,
    };
    for e in errors {
        match e {
            Some((abs, rel)) => {
                report.n += 1;
                report.max_abs_err = report.max_abs_err.max(abs);
                report.max_rel_err = report.max_rel_err.max(rel);
            }
            None => report.excluded += 1,
        }
    }
    report.pass = report.max_rel_err < tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_field(seed: u64, n: usize) -> PredictionField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PredictionField::from_fn(GridShape::new(n, n).unwrap(), |_, _| rng.gen::<f64>()).unwrap()
    }

    #[test]
    fn flat_field_at_threshold_is_all_kink() {
        let f = PredictionField::uniform(GridShape::new(6, 6).unwrap(), 0.5).unwrap();
        let r = check_gradient(&SoftPerimeterObjective(SoftConfig::default()), &f, 1e-4, 1e-4, Execution::Sequential)
            .unwrap();
        assert_eq!((r.n, r.excluded), (0, 36));
        let saturated = PredictionField::uniform(GridShape::new(6, 6).unwrap(), 0.05).unwrap();
        let r = check_gradient(
            &SoftPerimeterObjective(SoftConfig::default()),
            &saturated,
            1e-4,
            1e-4,
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!((r.n, r.excluded), (36, 0));
    }

    #[test]
    fn soft_area_passes() {
        let f = random_field(1, 8);
        let r = check_gradient(&SoftAreaObjective(SoftConfig::default()), &f, 1e-4, 1e-5, Execution::Sequential)
            .unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.n + r.excluded, 64);
    }

    #[test]
    fn soft_perimeter_passes() {
        let f = random_field(2, 16);
        let r = check_gradient(&SoftPerimeterObjective(SoftConfig::default()), &f, 1e-4, 1e-4, Execution::Parallel)
            .unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn wrong_gradient_fails() {
        struct Wrong;
        impl Objective for Wrong {
            fn name(&self) -> &str {
                "wrong"
            }
            fn evaluate(&self, field: &PredictionField) -> LossValueGrad {
                LossValueGrad {
                    value: field.values().iter().map(|v| v * v).sum(),
                    grad: field.values().to_vec(),
                }
            }
        }
        let r = check_gradient(&Wrong, &random_field(3, 4), 1e-4, 1e-4, Execution::Sequential).unwrap();
        assert!(!r.pass);
        assert!(r.max_rel_err > 0.4);
    }

    #[test]
    fn hinge_point_is_excluded() {
        // Tune tau to the field's own soft ratio so it sits exactly on the
        // hinge; every perturbation then leaves the boundary piece.
        let f = random_field(5, 8);
        let base = SoftConfig::default().with_beta(5.0).unwrap();
        let mu = super::super::soft_topology_penalty(&f, &base).mu;
        let cfg = base.with_tau(mu).unwrap();
        let obj = SoftPenaltyObjective {
            cfg,
            mode: FillMode::Raw,
            fill: SoftFill::default(),
        };
        assert_eq!(obj.piece(&f), 2);
        let r = check_gradient(&obj, &f, 1e-4, 1e-4, Execution::Sequential).unwrap();
        assert!(r.excluded > 0);
        assert!(r.pass);
    }

    #[test]
    fn random_cases_are_seeded() {
        let (f, t) = random_case(7, 16).unwrap();
        assert_eq!(random_case(7, 16).unwrap(), (f.clone(), t.clone()));
        assert_ne!(random_case(8, 16).unwrap().0, f);
        assert!(f.values().iter().all(|v| (CASE_RANGE.0..CASE_RANGE.1).contains(v)));
        assert!(t.count() > 0 && t.count() < 256);
        assert!(random_case(1, 0).is_err());
    }

    #[test]
    fn report_json() {
        let r = GradCheckReport {
            op: "soft_area".into(),
            n: 64,
            max_abs_err: 1.5e-9,
            max_rel_err: 2e-7,
            pass: true,
            excluded: 0,
        };
        let json = r.to_json();
        assert_eq!(
            json,
            "{\"op\":\"soft_area\",\"n\":64,\"max_abs_err\":1.50000e-9,\"max_rel_err\":2.00000e-7,\"pass\":true,\"excluded\":0}"
        );
        let back: GradCheckReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.n, 64);
    }

    #[test]
    fn rejects_bad_step_and_name() {
        let f = random_field(1, 4);
        assert!(check_gradient(&SoftAreaObjective(SoftConfig::default()), &f, 0.0, 1e-4, Execution::Sequential).is_err());
        let t = BinaryMask::zeros(f.shape());
        assert!(objective_by_name("nope", SoftConfig::default(), SoftFill::default(), &t).is_err());
        for name in OBJECTIVE_NAMES {
            assert_eq!(objective_by_name(name, SoftConfig::default(), SoftFill::default(), &t).unwrap().name(), name);
        }
    }
}
