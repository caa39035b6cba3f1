//! The SGD / Oja iteration `w_t = (I + η Ã_t) w_{t-1}`.
//!
//! Two forms are provided. The projected form renormalizes after every step.
//! The deferred form runs the unnormalized linear recursion and projects once
//! at the end; it is stored as a unit direction plus `ln ‖w_t‖`, so the
//! magnitude, which grows like `(1 + η)^t`, never overflows.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::streams::{SampleStream, SampleUpdate};

/// Iterate of the Oja recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct OjaState {
    pub direction: DVector<f64>,
    /// `ln ‖w_t‖` in the deferred form, always 0 in the projected form.
    pub log_magnitude: f64,
    pub t: u64,
}

impl OjaState {
    /// Starts from `w0`, which must be a unit vector.
    pub fn new(w0: DVector<f64>) -> Result<Self> {
        let norm = w0.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroVector);
        }
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "initial vector must have unit norm, has {norm}"
            )));
        }
        Ok(Self {
            direction: w0,
            log_magnitude: 0.0,
            t: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.direction.len()
    }

    /// `u = (I + ηÃ) w`, normalized in place; returns ‖u‖.
    fn apply(&mut self, update: &SampleUpdate, eta: f64) -> f64 {
        let w = &mut self.direction;
        match update {
            SampleUpdate::RankOne(x) => {
                let c = x.dot(w);
                w.axpy(eta * c, x, 1.0);
            }
            SampleUpdate::Dense(m) => {
                let mw = m * &*w;
                w.axpy(eta, &mw, 1.0);
            }
        }
        // <w, u> = 1 + η wᵀÃw >= 1 for PSD Ã, so ‖u‖ >= 1.
        let norm = w.norm();
        assert!(
            norm >= 1.0 - 1e-12 && norm.is_finite(),
            "Oja step shrank the iterate (‖u‖ = {norm}); sample is not PSD"
        );
        *w /= norm;
        self.t += 1;
        norm
    }

    /// Deferred-normalization step: accumulates `ln ‖u‖`.
    pub fn advance_deferred(&mut self, update: &SampleUpdate, eta: f64) {
        let norm = self.apply(update, eta);
        self.log_magnitude += norm.ln();
    }

    /// Per-step projected step.
    pub fn advance_projected(&mut self, update: &SampleUpdate, eta: f64) {
        self.apply(update, eta);
    }

    /// `w_t` itself, `exp(log_magnitude) · direction`. Overflows to
    /// infinity for long runs; meant for short checks.
    pub fn unnormalized(&self) -> DVector<f64> {
        &self.direction * self.log_magnitude.exp()
    }
}

pub fn step_deferred(state: &OjaState, update: &SampleUpdate, eta: f64) -> OjaState {
    let mut next = state.clone();
    next.advance_deferred(update, eta);
    next
}

pub fn step_projected(state: &OjaState, update: &SampleUpdate, eta: f64) -> OjaState {
    let mut next = state.clone();
    next.advance_projected(update, eta);
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `η = m / (b √(pT))`.
    GapFree,
    /// `η = m ln T / (λ T)`.
    Gap,
    /// Fixed `η`.
    Constant,
}

/// A constant step size together with the parameters it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepSchedule {
    pub kind: ScheduleKind,
    pub eta: f64,
    pub multiplier: f64,
    pub b: Option<f64>,
    pub p: Option<f64>,
    pub horizon: Option<u64>,
    pub lambda: Option<f64>,
}

fn check_eta(eta: f64, rule: &'static str) -> Result<f64> {
    if eta.is_nan() || eta <= 0.0 || !eta.is_finite() {
        return Err(Error::InvalidParameter(format!("step size {eta} must be positive")));
    }
    if eta > 1.0 {
        return Err(Error::StepTooLarge { eta, rule });
    }
    Ok(eta)
}

fn check_multiplier(m: f64) -> Result<()> {
    if m > 0.0 && m.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("step multiplier {m} must be positive")))
    }
}

impl StepSchedule {
    /// Gap-free rule `m / (b √(pT))` with `b ≥ 1`, `p ≥ 8`, `T ≥ 1`.
    pub fn gap_free(b: f64, p: f64, horizon: u64, multiplier: f64) -> Result<Self> {
        check_multiplier(multiplier)?;
        if !(b >= 1.0 && b.is_finite()) {
            return Err(Error::InvalidParameter(format!("b = {b} must be >= 1")));
        }
        if !(p >= 8.0 && p.is_finite()) {
            return Err(Error::InvalidParameter(format!("p = {p} must be a finite value >= 8")));
        }
        if horizon == 0 {
            return Err(Error::InvalidParameter("T must be >= 1".into()));
        }
        let eta = multiplier / (b * (p * horizon as f64).sqrt());
        Ok(Self {
            kind: ScheduleKind::GapFree,
            eta: check_eta(eta, "gap-free rule assumes 1/(b sqrt(pT)) <= 1")?,
            multiplier,
            b: Some(b),
            p: Some(p),
            horizon: Some(horizon),
            lambda: None,
        })
    }

    /// Eigengap rule `m ln T / (λ T)` with `λ ∈ (0, 1]`, `T ≥ 2`.
    pub fn gap(lambda: f64, horizon: u64, multiplier: f64) -> Result<Self> {
        check_multiplier(multiplier)?;
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::InvalidParameter(format!("lambda = {lambda} not in (0, 1]")));
        }
        if horizon < 2 {
            return Err(Error::InvalidParameter("gap rule needs T >= 2".into()));
        }
        let t = horizon as f64;
        let eta = multiplier * t.ln() / (lambda * t);
        Ok(Self {
            kind: ScheduleKind::Gap,
            eta: check_eta(eta, "eigengap rule assumes ln(T)/(lambda T) <= 1")?,
            multiplier,
            b: None,
            p: None,
            horizon: Some(horizon),
            lambda: Some(lambda),
        })
    }

    pub fn constant(eta: f64) -> Result<Self> {
        Ok(Self {
            kind: ScheduleKind::Constant,
            eta: check_eta(eta, "step size must be <= 1")?,
            multiplier: 1.0,
            b: None,
            p: None,
            horizon: None,
            lambda: None,
        })
    }
}

pub fn eta_gap_free(b: f64, p: f64, horizon: u64) -> Result<StepSchedule> {
    StepSchedule::gap_free(b, p, horizon, 1.0)
}

pub fn eta_gap(lambda: f64, horizon: u64) -> Result<StepSchedule> {
    StepSchedule::gap(lambda, horizon, 1.0)
}

/// Which normalization form a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Form {
    Deferred,
    Projected,
}

/// Runs `horizon` steps from `w0` over samples pulled from `stream`.
pub fn run_form<S: SampleStream + ?Sized>(
    stream: &mut S,
    w0: DVector<f64>,
    eta: f64,
    horizon: u64,
    form: Form,
) -> Result<OjaState> {
    if w0.len() != stream.dim() {
        return Err(Error::DimensionMismatch {
            expected: stream.dim(),
            actual: w0.len(),
        });
    }
    if horizon == 0 {
        return Err(Error::InvalidParameter("T must be >= 1".into()));
    }
    let mut state = OjaState::new(w0)?;
    for consumed in 0..horizon {
        let Some(update) = stream.next_sample()? else {
            return Err(Error::StreamExhausted {
                consumed,
                requested: horizon,
            });
        };
        match form {
            Form::Deferred => state.advance_deferred(update, eta),
            Form::Projected => state.advance_projected(update, eta),
        }
    }
    Ok(state)
}

/// The algorithm: `horizon` deferred steps, returning `w_T/‖w_T‖` and the
/// final state.
pub fn run<S: SampleStream + ?Sized>(
    stream: &mut S,
    w0: DVector<f64>,
    schedule: &StepSchedule,
    horizon: u64,
) -> Result<(DVector<f64>, OjaState)> {
    let state = run_form(stream, w0, schedule.eta, horizon, Form::Deferred)?;
    Ok((state.direction.clone(), state))
}
