//! Correctness functionals evaluated against a known covariance model.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CovarianceModel;
use crate::oja::OjaState;

/// `1 − wᵀAw/‖A‖` for a unit vector `w`, clamped to `[0, 1]`.
pub fn suboptimality(w: &DVector<f64>, model: &CovarianceModel) -> f64 {
    (1.0 - model.quadratic_form(w) / model.norm()).clamp(0.0, 1.0)
}

/// `V_T = ‖w_T‖² · dᵀ((1−ε)‖A‖ I − A)d` for the state's direction `d`.
///
/// For ‖A‖ = 1 this is `w_Tᵀ((1−ε)I − A)w_T`; the `‖A‖` factor makes the
/// sign test scale-free. When `‖w_T‖²` is out of range the value is kept as a
/// sign and a natural log of the magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VDiagnostic {
    Value(f64),
    LogScale { sign: f64, ln_abs: f64 },
}

impl VDiagnostic {
    /// `-1`, `0` or `1`.
    pub fn sign(&self) -> f64 {
        match *self {
            VDiagnostic::Value(0.0) => 0.0,
            VDiagnostic::Value(v) => v.signum(),
            VDiagnostic::LogScale { sign, .. } => sign,
        }
    }

    /// True when `V_T ≤ 0`, i.e. the direction is ε-suboptimal or better.
    pub fn is_success(&self) -> bool {
        self.sign() <= 0.0
    }

    pub fn value(&self) -> Option<f64> {
        match *self {
            VDiagnostic::Value(v) => Some(v),
            VDiagnostic::LogScale { .. } => None,
        }
    }
}

pub fn v_diagnostic(state: &OjaState, model: &CovarianceModel, epsilon: f64) -> Result<VDiagnostic> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter(format!("epsilon = {epsilon} not in (0, 1)")));
    }
    let q = (1.0 - epsilon) * model.norm() - model.quadratic_form(&state.direction);
    let scale = (2.0 * state.log_magnitude).exp();
    if scale.is_finite() && scale > 0.0 {
        return Ok(VDiagnostic::Value(scale * q));
    }
    if q == 0.0 {
        return Ok(VDiagnostic::Value(0.0));
    }
    Ok(VDiagnostic::LogScale {
        sign: q.signum(),
        ln_abs: 2.0 * state.log_magnitude + q.abs().ln(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    GapFree,
    Gap,
}

/// Target suboptimality `ε` for the gap-free or eigengap rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TargetRate {
    pub regime: Regime,
    pub epsilon: f64,
    pub c: f64,
    pub b: f64,
    pub p: f64,
    pub horizon: u64,
    pub lambda: Option<f64>,
    /// `ε ≤ 1`; above that the guarantee says nothing.
    pub valid: bool,
    /// Eigengap regime only: whether `ln²T b² p/(λT) ≤ ln T b √p/√T`.
    pub side_condition: Option<bool>,
}

/// `c ln T b √p / √T` (gap-free) or `c ln²T b² p / (λT)` (gap), natural log.
pub fn epsilon_target(
    regime: Regime,
    b: f64,
    p: f64,
    horizon: u64,
    lambda: Option<f64>,
    c: f64,
) -> Result<TargetRate> {
    if horizon < 2 {
        return Err(Error::InvalidParameter("target rate needs T >= 2".into()));
    }
    for (name, x) in [("b", b), ("p", p), ("c", c)] {
        if !(x > 0.0 && x.is_finite()) {
            return Err(Error::InvalidParameter(format!("{name} = {x} must be positive")));
        }
    }
    let t = horizon as f64;
    let log_t = t.ln();
    let gap_free = log_t * b * p.sqrt() / t.sqrt();
    let (epsilon, side_condition) = match regime {
        Regime::GapFree => (c * gap_free, None),
        Regime::Gap => {
            let lambda = lambda
                .filter(|l| *l > 0.0 && *l <= 1.0)
                .ok_or_else(|| Error::InvalidParameter("gap regime needs lambda in (0, 1]".into()))?;
            let gap = log_t * log_t * b * b * p / (lambda * t);
            (c * gap, Some(gap <= gap_free))
        }
    };
    Ok(TargetRate {
        regime,
        epsilon,
        c,
        b,
        p,
        horizon,
        lambda: if regime == Regime::Gap { lambda } else { None },
        valid: epsilon <= 1.0,
        side_condition,
    })
}

/// Outcome of checking `max_{s∈[0,1]} (1+ηs)^k (1−ε−s) ≤ 1 + 2(1+η(1−ε))^k / (η(k+1))`.
///
/// Both sides are carried as natural logs; `lhs`/`rhs` are their
/// exponentials and may be infinite for large `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaCheck {
    pub eta: f64,
    pub epsilon: f64,
    pub k: u64,
    pub argmax: f64,
    pub log_lhs: f64,
    pub log_rhs: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `ln f(s)` where `f(s) = (1+ηs)^k (1−ε−s)`, or `None` where `f(s) ≤ 0`.
fn log_f(eta: f64, epsilon: f64, k: u64, s: f64) -> Option<f64> {
    let tail = 1.0 - epsilon - s;
    (tail > 0.0).then(|| k as f64 * (eta * s).ln_1p() + tail.ln())
}

/// ln(e^a + e^b)
fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Evaluates the left side on a uniform grid of `grid_n` points over `[0, 1]`
/// plus the interior critical point `s_c = (k(1−ε) − 1/η)/(k+1)` when it
/// falls in the interval.
pub fn lemma_s_check(eta: f64, epsilon: f64, k: u64, grid_n: usize) -> Result<LemmaCheck> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::InvalidParameter(format!("eta = {eta} not in (0, 1)")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter(format!("epsilon = {epsilon} not in (0, 1)")));
    }
    if grid_n < 1000 {
        return Err(Error::InvalidParameter(format!("grid_n = {grid_n} must be >= 1000")));
    }
    let kf = k as f64;
    let critical = (kf * (1.0 - epsilon) - 1.0 / eta) / (kf + 1.0);
    let grid = (0..grid_n).map(|j| j as f64 / (grid_n - 1) as f64);
    let candidates = grid.chain((0.0..=1.0).contains(&critical).then_some(critical));

    // f(0) = 1 − ε > 0, so the maximum is positive and lives where f > 0.
    let (argmax, log_lhs) = candidates
        .filter_map(|s| log_f(eta, epsilon, k, s).map(|l| (s, l)))
        .fold((0.0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });

    let log_growth = kf * (eta * (1.0 - epsilon)).ln_1p();
    let log_rhs = log_add_exp(0.0, std::f64::consts::LN_2 + log_growth - (eta * (kf + 1.0)).ln());

    Ok(LemmaCheck {
        eta,
        epsilon,
        k,
        argmax,
        log_lhs,
        log_rhs,
        lhs: log_lhs.exp(),
        rhs: log_rhs.exp(),
        holds: log_lhs <= log_rhs,
    })
}

/// Step values used by the lemma acceptance sweep: 0.01, 0.05, 0.10, …, 0.95, 0.99.
pub fn lemma_axis() -> Vec<f64> {
    let mut axis = vec![0.01];
    axis.extend((1..=19).map(|i| i as f64 * 0.05));
    axis.push(0.99);
    axis
}

/// Exponents `k` used by the lemma acceptance sweep.
pub const LEMMA_KS: [u64; 6] = [0, 1, 10, 100, 1_000, 10_000];

/// Runs [`lemma_s_check`] over the full `(η, ε, k)` sweep.
pub fn lemma_sweep(grid_n: usize) -> Result<Vec<LemmaCheck>> {
    let axis = lemma_axis();
    let mut out = Vec::with_capacity(axis.len() * axis.len() * LEMMA_KS.len());
    for &eta in &axis {
        for &epsilon in &axis {
            for &k in &LEMMA_KS {
                out.push(lemma_s_check(eta, epsilon, k, grid_n)?);
            }
        }
    }
    Ok(out)
}
