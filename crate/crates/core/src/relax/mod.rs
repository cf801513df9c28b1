//! Differentiable relaxations of the compactness prior and of the
//! segmentation losses, each returning a value and its exact gradient with
//! respect to the prediction field.
//!
//! The hard indicator `v > lambda` is replaced by the logistic
//! `s(v) = 1 / (1 + exp(-beta (v - lambda)))`. Area is `sum s`, perimeter is
//! the sum of smoothed forward-difference gradient norms of `s`, and the
//! penalty is the hinge `max(0, tau - 4 pi A / L^2)`. [`soft_fill`] adds a
//! differentiable hole filling so the penalty can also be taken on the
//! external contour, mirroring [`crate::geometry::FillMode::Filled`].

mod check;
mod fill;

pub use check::{
    check_gradient, objective_by_name, random_case, GradCheckReport, Objective, CASE_RANGE, OBJECTIVE_NAMES,
    REL_FLOOR,
};
pub use fill::{soft_fill, SoftFill, SoftFillOutput};

use std::f64::consts::PI;

use thiserror::Error;

use crate::geometry::{FillMode, DEFAULT_TAU};
use crate::raster::{BinaryMask, GridShape, PredictionField, RasterError, Threshold};

/// Perimeters at or below this are treated as a constant field.
pub const DEGENERATE_PERIMETER: f64 = 1e-8;
/// Dice smoothing constant.
pub const DICE_SMOOTHING: f64 = 1.0;
/// Cross-entropy probability clamp `[CE_CLAMP, 1 - CE_CLAMP]`.
pub const CE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RelaxError {
    #[error("beta must be positive and finite, got {0}")]
    InvalidBeta(f64),
    #[error("eps must be positive and finite, got {0}")]
    InvalidEps(f64),
    #[error("tau must lie strictly inside (0, 1), got {0}")]
    InvalidTau(f64),
    #[error("fill temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("gradient-check step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("unknown objective {0:?}")]
    UnknownObjective(String),
    #[error(transparent)]
    Shape(#[from] RasterError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftConfig {
    beta: f64,
    eps: f64,
    lambda: Threshold,
    tau: f64,
}

impl Default for SoftConfig {
    fn default() -> Self {
        Self {
            beta: 50.0,
            eps: 1e-6,
            lambda: Threshold::default(),
            tau: DEFAULT_TAU,
        }
    }
}

impl SoftConfig {
    pub fn new(beta: f64, eps: f64, lambda: Threshold, tau: f64) -> Result<Self, RelaxError> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(RelaxError::InvalidBeta(beta));
        }
        if !(eps.is_finite() && eps > 0.0) {
            return Err(RelaxError::InvalidEps(eps));
        }
        if !(tau > 0.0 && tau < 1.0) {
            return Err(RelaxError::InvalidTau(tau));
        }
        Ok(Self {
            beta,
            eps,
            lambda,
            tau,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn lambda(&self) -> Threshold {
        self.lambda
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn with_beta(self, beta: f64) -> Result<Self, RelaxError> {
        Self::new(beta, self.eps, self.lambda, self.tau)
    }

    pub fn with_tau(self, tau: f64) -> Result<Self, RelaxError> {
        Self::new(self.beta, self.eps, self.lambda, tau)
    }

    pub fn with_lambda(self, lambda: Threshold) -> Self {
        Self { lambda, ..self }
    }
}

/// A scalar loss and its gradient with respect to every field value.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValueGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl LossValueGrad {
    fn zero(n: usize) -> Self {
        Self {
            value: 0.0,
            grad: vec![0.0; n],
        }
    }
}

/// Logistic indicator values `s` and their derivatives `ds/dv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftIndicator {
    pub values: Vec<f64>,
    pub derivative: Vec<f64>,
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn indicator_of(values: &[f64], cfg: &SoftConfig) -> SoftIndicator {
    let lambda = cfg.lambda.value();
    let (s, ds) = values
        .iter()
        .map(|&v| {
            let s = logistic(cfg.beta * (v - lambda));
            (s, cfg.beta * s * (1.0 - s))
        })
        .unzip();
    SoftIndicator {
        values: s,
        derivative: ds,
    }
}

pub fn soft_indicator(field: &PredictionField, cfg: &SoftConfig) -> SoftIndicator {
    indicator_of(field.values(), cfg)
}

fn area_of(ind: &SoftIndicator) -> LossValueGrad {
    LossValueGrad {
        value: ind.values.iter().sum(),
        grad: ind.derivative.clone(),
    }
}

pub fn soft_area(field: &PredictionField, cfg: &SoftConfig) -> LossValueGrad {
    area_of(&soft_indicator(field, cfg))
}

/// Smoothed total variation of `s` and its gradient with respect to `s`.
/// Differences leaving the last row or column are zero.
pub(crate) fn perimeter_wrt_indicator(shape: GridShape, s: &[f64], eps: f64) -> LossValueGrad {
    let (h, w) = (shape.height(), shape.width());
    let mut out = LossValueGrad::zero(s.len());
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let dx = if c + 1 < w { s[i + 1] - s[i] } else { 0.0 };
            let dy = if r + 1 < h { s[i + w] - s[i] } else { 0.0 };
            let norm = (dx * dx + dy * dy + eps * eps).sqrt();
            out.value += norm - eps;
            let (gx, gy) = (dx / norm, dy / norm);
            if c + 1 < w {
                out.grad[i + 1] += gx;
                out.grad[i] -= gx;
            }
            if r + 1 < h {
                out.grad[i + w] += gy;
                out.grad[i] -= gy;
            }
        }
    }
    out
}

/// Largest ratio of a perturbation to a smoothed-norm term it feeds for which
/// central differences still resolve the term.
pub const KINK_RATIO: f64 = 1e-2;

/// True when moving pixel `i` by `step` shifts the indicator by more than
/// [`KINK_RATIO`] of the norm of some perimeter term that depends on it.
pub(crate) fn near_perimeter_kink(shape: GridShape, ind: &SoftIndicator, i: usize, step: f64, eps: f64) -> bool {
    let (h, w) = (shape.height(), shape.width());
    let s = &ind.values;
    let norm_at = |j: usize| {
        let (r, c) = (j / w, j % w);
        let dx = if c + 1 < w { s[j + 1] - s[j] } else { 0.0 };
        let dy = if r + 1 < h { s[j + w] - s[j] } else { 0.0 };
        (dx * dx + dy * dy + eps * eps).sqrt()
    };
    let (r, c) = (i / w, i % w);
    let mut terms = Vec::with_capacity(3);
    if c + 1 < w || r + 1 < h {
        terms.push(i);
    }
    if c > 0 {
        terms.push(i - 1);
    }
    if r > 0 {
        terms.push(i - w);
    }
    let shift = step * ind.derivative[i].abs();
    terms.into_iter().any(|j| shift > KINK_RATIO * norm_at(j))
}

fn chain(mut outer: LossValueGrad, inner_derivative: &[f64]) -> LossValueGrad {
    for (g, d) in outer.grad.iter_mut().zip(inner_derivative) {
        *g *= d;
    }
    outer
}

pub fn soft_perimeter(field: &PredictionField, cfg: &SoftConfig) -> LossValueGrad {
    let ind = soft_indicator(field, cfg);
    chain(
        perimeter_wrt_indicator(field.shape(), &ind.values, cfg.eps),
        &ind.derivative,
    )
}

/// Which smooth piece of the hinge a field falls on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HingeState {
    /// `mu_s > tau`: value and gradient are zero.
    Inactive,
    /// `mu_s < tau`.
    Active,
    /// `mu_s == tau` exactly; the zero subgradient is used.
    Boundary,
    /// Near-constant field (`L_s <= 1e-8`): value `tau`, zero gradient.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftPenalty {
    pub loss: LossValueGrad,
    pub area: f64,
    pub perimeter: f64,
    /// `4 pi A_s / L_s^2`, or 0 for a degenerate field.
    pub mu: f64,
    pub state: HingeState,
}

/// Hinge penalty on an arbitrary soft indicator `s`, with the gradient taken
/// with respect to `s`.
pub(crate) fn penalty_wrt_indicator(shape: GridShape, s: &[f64], cfg: &SoftConfig) -> SoftPenalty {
    let n = s.len();
    let area: f64 = s.iter().sum();
    let per = perimeter_wrt_indicator(shape, s, cfg.eps);
    let l = per.value;
    if l <= DEGENERATE_PERIMETER {
        return SoftPenalty {
            loss: LossValueGrad {
                value: cfg.tau,
                grad: vec![0.0; n],
            },
            area,
            perimeter: l,
            mu: 0.0,
            state: HingeState::Degenerate,
        };
    }
    let mu = 4.0 * PI * area / (l * l);
    let state = if mu > cfg.tau {
        HingeState::Inactive
    } else if mu < cfg.tau {
        HingeState::Active
    } else {
        HingeState::Boundary
    };
    let mut loss = LossValueGrad {
        value: (cfg.tau - mu).max(0.0),
        grad: vec![0.0; n],
    };
    if state == HingeState::Active {
        // d(-mu) = -4 pi (dA / L^2 - 2 A dL / L^3)
        let ga = -4.0 * PI / (l * l);
        let gl = 8.0 * PI * area / (l * l * l);
        for (g, dl) in loss.grad.iter_mut().zip(&per.grad) {
            *g = ga + gl * dl;
        }
    }
    SoftPenalty {
        loss,
        area,
        perimeter: l,
        mu,
        state,
    }
}

/// `max(0, tau - 4 pi A_s / L_s^2)` on the logistic indicator.
pub fn soft_topology_penalty(field: &PredictionField, cfg: &SoftConfig) -> SoftPenalty {
    let ind = soft_indicator(field, cfg);
    let mut p = penalty_wrt_indicator(field.shape(), &ind.values, cfg);
    p.loss = chain(p.loss, &ind.derivative);
    p
}

/// The same hinge on the hole-filled indicator, so that closing a ring
/// (which fills its interior) lowers the penalty. Fill rays are blocked by
/// the field itself rather than by `s`, which makes barrier strength grow
/// linearly from a clean background instead of through the flat tail of the
/// logistic.
pub fn soft_topology_penalty_filled(
    field: &PredictionField,
    cfg: &SoftConfig,
    fill: &SoftFill,
) -> SoftPenalty {
    let shape = field.shape();
    let ind = soft_indicator(field, cfg);
    let filled = soft_fill(shape, &ind.values, field.values(), fill);
    let mut p = penalty_wrt_indicator(shape, &filled.values, cfg);
    if p.state == HingeState::Active {
        let (gs, ga) = filled.backward(&p.loss.grad);
        p.loss.grad = gs;
        p.loss = chain(p.loss, &ind.derivative);
        for (g, a) in p.loss.grad.iter_mut().zip(ga) {
            *g += a;
        }
    }
    p
}

/// Penalty in the requested mode.
pub fn soft_penalty(
    field: &PredictionField,
    cfg: &SoftConfig,
    mode: FillMode,
    fill: &SoftFill,
) -> SoftPenalty {
    match mode {
        FillMode::Raw => soft_topology_penalty(field, cfg),
        FillMode::Filled => soft_topology_penalty_filled(field, cfg, fill),
    }
}

/// `1 - (2 sum p t + 1) / (sum p + sum t + 1)`.
pub fn soft_dice_loss(pred: &PredictionField, target: &BinaryMask) -> Result<LossValueGrad, RelaxError> {
    pred.shape().ensure_same(&target.shape())?;
    let p = pred.values();
    let t = target.values();
    let mut inter = 0.0;
    let mut sp = 0.0;
    let mut st = 0.0;
    for (&pi, &ti) in p.iter().zip(t) {
        let ti = if ti { 1.0 } else { 0.0 };
        inter += pi * ti;
        sp += pi;
        st += ti;
    }
    let num = 2.0 * inter + DICE_SMOOTHING;
    let den = sp + st + DICE_SMOOTHING;
    let grad = t
        .iter()
        .map(|&ti| {
            let ti = if ti { 1.0 } else { 0.0 };
            -(2.0 * ti * den - num) / (den * den)
        })
        .collect();
    Ok(LossValueGrad {
        value: 1.0 - num / den,
        grad,
    })
}

fn ce_clamped(p: f64) -> bool {
    !(CE_CLAMP..=1.0 - CE_CLAMP).contains(&p)
}

/// Mean binary cross-entropy with probabilities clamped to
/// `[1e-7, 1 - 1e-7]`; the gradient is zero where the clamp is active.
pub fn cross_entropy_loss(
    pred: &PredictionField,
    target: &BinaryMask,
) -> Result<LossValueGrad, RelaxError> {
    pred.shape().ensure_same(&target.shape())?;
    let n = pred.shape().len() as f64;
    let mut out = LossValueGrad::zero(pred.shape().len());
    for ((&p, &t), g) in pred.values().iter().zip(target.values()).zip(&mut out.grad) {
        let q = p.clamp(CE_CLAMP, 1.0 - CE_CLAMP);
        if t {
            out.value -= q.ln();
            if !ce_clamped(p) {
                *g = -1.0 / (q * n);
            }
        } else {
            out.value -= (1.0 - q).ln();
            if !ce_clamped(p) {
                *g = 1.0 / ((1.0 - q) * n);
            }
        }
    }
    out.value /= n;
    Ok(out)
}

pub(crate) fn count_ce_clamped(pred: &PredictionField) -> u64 {
    pred.values().iter().filter(|&&p| ce_clamped(p)).count() as u64
}
