//! Mask repair by projected gradient descent on
//! `E = w_dice * Dice + w_ce * CE + w_topo * penalty`.
//!
//! Fidelity terms pull the field towards a reference mask; the compactness
//! penalty pulls it towards an admissible region. On a ring broken by a gap
//! the filled penalty rewards a thin bridge across the gap, because closing
//! the ring fills its interior. Each step halves the step size until the
//! energy does not increase, so accepted energies are monotone.

use std::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::fmt::sci;
use crate::geometry::{FillMode, DEFAULT_TAU};
use crate::raster::{BinaryMask, PredictionField, Threshold};
use crate::relax::{cross_entropy_loss, soft_dice_loss, soft_penalty, RelaxError, SoftConfig, SoftFill};
use crate::synth::{rasterize, ShapeSpec, SynthError};

/// Halvings tried per step before declaring a stationary point.
pub const MAX_HALVINGS: usize = 20;
/// Energy changes below this count towards convergence.
pub const CONVERGENCE_DELTA: f64 = 1e-9;
/// Consecutive small accepted changes that end the run.
pub const CONVERGENCE_RUN: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RepairError {
    #[error("loss weights must be finite and non-negative with at least one positive")]
    InvalidWeights,
    #[error("step budget must be at least 1")]
    NoSteps,
    #[error("step size must be positive and finite, got {0}")]
    InvalidStepSize(f64),
    #[error(transparent)]
    Relax(#[from] RelaxError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub dice: f64,
    pub ce: f64,
    pub topo: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            dice: 1.0,
            ce: 1.0,
            topo: 5.0,
        }
    }
}

impl LossWeights {
    pub fn new(dice: f64, ce: f64, topo: f64) -> Result<Self, RepairError> {
        let w = Self { dice, ce, topo };
        let all = [dice, ce, topo];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) || all.iter().all(|v| *v == 0.0) {
            return Err(RepairError::InvalidWeights);
        }
        Ok(w)
    }
}

/// Logistic steepness used by repair. Lower than the relaxation default so
/// background pixels inside a gap still receive gradient.
pub const REPAIR_BETA: f64 = 8.0;
/// Smoothing of the perimeter's gradient norm. Larger than the relaxation
/// default so that noisy pixels do not force tiny steps.
pub const REPAIR_EPS: f64 = 1e-2;
pub const DEFAULT_STEPS: usize = 300;
pub const DEFAULT_STEP_SIZE: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RepairProblem {
    pub init_field: PredictionField,
    pub reference: BinaryMask,
    pub weights: LossWeights,
    pub steps: usize,
    pub step_size: f64,
    pub soft: SoftConfig,
    pub fill: SoftFill,
    /// Whether the penalty is taken on the hole-filled indicator.
    pub penalty_mode: FillMode,
    /// Seed the input was generated from; recorded for provenance.
    pub seed: u64,
}

impl RepairProblem {
    /// A problem with the default optimizer settings.
    pub fn new(
        init_field: PredictionField,
        reference: BinaryMask,
        weights: LossWeights,
        seed: u64,
    ) -> Result<Self, RepairError> {
        init_field.shape().ensure_same(&reference.shape()).map_err(RelaxError::from)?;
        let p = Self {
            init_field,
            reference,
            weights,
            steps: DEFAULT_STEPS,
            step_size: DEFAULT_STEP_SIZE,
            soft: SoftConfig::new(REPAIR_BETA, REPAIR_EPS, Threshold::default(), DEFAULT_TAU)?,
            fill: SoftFill::default(),
            penalty_mode: FillMode::Filled,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), RepairError> {
        LossWeights::new(self.weights.dice, self.weights.ce, self.weights.topo)?;
        if self.steps == 0 {
            return Err(RepairError::NoSteps);
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(RepairError::InvalidStepSize(self.step_size));
        }
        self.init_field
            .shape()
            .ensure_same(&self.reference.shape())
            .map_err(RelaxError::from)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    /// Step index at which the iterate was accepted (0 for the input).
    pub iter: usize,
    pub total: f64,
    pub dice: f64,
    pub ce: f64,
    pub penalty: f64,
    /// Soft compactness of the iterate.
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepairTrace {
    pub records: Vec<TraceRecord>,
    pub final_field: PredictionField,
    /// `final_field` thresholded at the configured lambda.
    pub final_mask: BinaryMask,
    /// True when the run stopped before exhausting the step budget.
    pub converged: bool,
}

impl RepairTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,total,dice,ce,penalty,mu\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.iter,
                sci(r.total),
                sci(r.dice),
                sci(r.ce),
                sci(r.penalty),
                sci(r.mu)
            );
        }
        s
    }
}

/// True iff total energy never increases along the accepted iterates.
pub fn accepted_loss_monotone(trace: &RepairTrace) -> bool {
    records_monotone(&trace.records)
}

pub fn records_monotone(records: &[TraceRecord]) -> bool {
    records.windows(2).all(|w| w[1].total <= w[0].total)
}

struct Energy {
    record: TraceRecord,
    grad: Vec<f64>,
}

fn energy(problem: &RepairProblem, field: &PredictionField) -> Energy {
    let w = problem.weights;
    let n = field.shape().len();
    let mut grad = vec![0.0; n];
    let mut add = |weight: f64, g: &[f64]| {
        if weight != 0.0 {
            for (a, b) in grad.iter_mut().zip(g) {
                *a += weight * b;
            }
        }
    };
    let dice = soft_dice_loss(field, &problem.reference).expect("validated shape");
    add(w.dice, &dice.grad);
    let ce = cross_entropy_loss(field, &problem.reference).expect("validated shape");
    add(w.ce, &ce.grad);
    let pen = soft_penalty(field, &problem.soft, problem.penalty_mode, &problem.fill);
    add(w.topo, &pen.loss.grad);
    Energy {
        record: TraceRecord {
            iter: 0,
            total: w.dice * dice.value + w.ce * ce.value + w.topo * pen.loss.value,
            dice: dice.value,
            ce: ce.value,
            penalty: pen.loss.value,
            mu: pen.mu,
        },
        grad,
    }
}

fn projected_step(field: &PredictionField, grad: &[f64], eta: f64) -> PredictionField {
    let values = field
        .values()
        .iter()
        .zip(grad)
        .map(|(v, g)| (v - eta * g).clamp(0.0, 1.0))
        .collect();
    PredictionField::new(field.shape(), values).expect("clamped values are valid")
}

pub fn repair(problem: &RepairProblem) -> RepairTrace {
    let mut field = problem.init_field.clone();
    let mut current = energy(problem, &field);
    let mut records = vec![current.record];
    let mut small_changes = 0;
    let mut converged = false;
    let mut eta = problem.step_size;
    for step in 1..=problem.steps {
        let mut accepted = None;
        for halvings in 0..=MAX_HALVINGS {
            let candidate = projected_step(&field, &current.grad, eta);
            let e = energy(problem, &candidate);
            if e.record.total <= current.record.total {
                accepted = Some((candidate, e));
                if halvings == 0 {
                    eta = (2.0 * eta).min(problem.step_size);
                }
                break;
            }
            eta *= 0.5;
        }
        let Some((candidate, mut e)) = accepted else {
            converged = true;
            break;
        };
        let delta = (current.record.total - e.record.total).abs();
        e.record.iter = step;
        records.push(e.record);
        field = candidate;
        current = e;
        if delta < CONVERGENCE_DELTA {
            small_changes += 1;
            if small_changes >= CONVERGENCE_RUN {
                converged = true;
                break;
            }
        } else {
            small_changes = 0;
        }
    }
    let final_mask = field.threshold(problem.soft.lambda());
    RepairTrace {
        records,
        final_field: field,
        final_mask,
        converged,
    }
}

/// Runs independent problems, results in input order.
pub fn repair_batch(problems: &[RepairProblem], exec: Execution) -> Vec<RepairTrace> {
    exec::map_slice(exec, problems, repair)
}

/// A seeded broken-ring instance: outer radius 30 on a 68x68 grid, wall
/// 5 to 8 px, gap 20 to 60 degrees at a random orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct BrokenRingCase {
    pub seed: u64,
    pub broken: ShapeSpec,
    /// The same ring without the gap.
    pub closed: ShapeSpec,
    pub observation: BinaryMask,
    /// Observation plus uniform noise in `[-0.1, 0.1]`, clamped.
    pub noisy: PredictionField,
}

pub const DEMO_SIZE: usize = 68;
pub const DEMO_OUTER: f64 = 30.0;
pub const DEMO_NOISE: f64 = 0.1;

impl BrokenRingCase {
    pub fn generate(seed: u64) -> Result<Self, RepairError> {
        Self::with_gap_range(seed, 20.0, 60.0)
    }

    pub fn with_gap_range(seed: u64, min_gap: f64, max_gap: f64) -> Result<Self, RepairError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wall = rng.gen_range(5.0..=8.0);
        let gap = if max_gap > min_gap {
            rng.gen_range(min_gap..=max_gap)
        } else {
            min_gap
        };
        let orientation = rng.gen_range(0.0..360.0);
        let centre = (DEMO_SIZE as f64 / 2.0, DEMO_SIZE as f64 / 2.0);
        let inner = DEMO_OUTER - wall;
        let broken = ShapeSpec::broken_annulus(
            DEMO_SIZE,
            DEMO_SIZE,
            centre,
            DEMO_OUTER,
            inner,
            gap,
            orientation,
        )?;
        let closed = ShapeSpec::annulus(DEMO_SIZE, DEMO_SIZE, centre, DEMO_OUTER, inner)?;
        let observation = rasterize(&broken)?;
        let noisy = PredictionField::from_fn(observation.shape(), |r, c| {
            let base = if observation.get(r, c) { 1.0 } else { 0.0 };
            (base + rng.gen_range(-DEMO_NOISE..=DEMO_NOISE)).clamp(0.0, 1.0)
        })
        .expect("clamped values are valid");
        Ok(Self {
            seed,
            broken,
            closed,
            observation,
            noisy,
        })
    }

    /// Repair problem starting from the noisy field with the observation as
    /// fidelity reference.
    pub fn problem(&self, weights: LossWeights) -> Result<RepairProblem, RepairError> {
        RepairProblem::new(self.noisy.clone(), self.observation.clone(), weights, self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{region_report, PenaltyConfig};

    fn record(total: f64) -> TraceRecord {
        TraceRecord {
            iter: 0,
            total,
            dice: 0.0,
            ce: 0.0,
            penalty: 0.0,
            mu: 0.0,
        }
    }

    #[test]
    fn monotone_checker() {
        assert!(records_monotone(&[]));
        assert!(records_monotone(&[record(1.0)]));
        assert!(records_monotone(&[record(2.0), record(1.0), record(1.0)]));
        assert!(!records_monotone(&[record(1.0), record(1.5)]));
    }

    #[test]
    fn fidelity_only_at_optimum_converges_immediately() {
        let case = BrokenRingCase::generate(1).unwrap();
        let mut p = case.problem(LossWeights::new(1.0, 1.0, 0.0).unwrap()).unwrap();
        p.init_field = case.observation.to_field();
        let t = repair(&p);
        assert!(t.records[0].total < 1e-6);
        assert!(t.converged);
        assert!(t.records.len() <= 1 + CONVERGENCE_RUN);
        assert_eq!(t.final_mask, case.observation);
    }

    #[test]
    fn validation() {
        assert!(LossWeights::new(0.0, 0.0, 0.0).is_err());
        assert!(LossWeights::new(-1.0, 1.0, 0.0).is_err());
        let case = BrokenRingCase::generate(2).unwrap();
        let mut p = case.problem(LossWeights::default()).unwrap();
        p.steps = 0;
        assert_eq!(p.validate(), Err(RepairError::NoSteps));
        p.steps = 1;
        p.step_size = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn demo_cases_are_seeded_and_broken() {
        let a = BrokenRingCase::generate(9).unwrap();
        let b = BrokenRingCase::generate(9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.noisy, BrokenRingCase::generate(10).unwrap().noisy);
        let r = region_report(&a.observation, &PenaltyConfig::default());
        assert!(!r.admissible && r.penalty > 0.1);
        assert!(a.noisy.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn trace_csv_layout() {
        let case = BrokenRingCase::generate(3).unwrap();
        let mut p = case.problem(LossWeights::default()).unwrap();
        p.steps = 3;
        let t = repair(&p);
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "iter,total,dice,ce,penalty,mu");
        assert_eq!(lines.len(), t.records.len() + 1);
        assert!(t.records.len() <= 4);
        assert!(accepted_loss_monotone(&t));
        assert_eq!(repair(&p), t);
    }
}
