//! Starting points for the iteration and the alignment parameter `p`.

use std::path::Path;

use nalgebra::DVector;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CovarianceModel;
use crate::streams::{SampleStream, SampleUpdate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    Warm,
    Uniform,
    ApproxPower,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitReport {
    pub w0: DVector<f64>,
    pub method: InitMethod,
    /// Stream samples spent by the initializer (`T₀`).
    pub samples_consumed: u64,
    /// `1/⟨v, w0⟩²` against the ground-truth model, when one is known.
    pub p: Option<f64>,
    /// Set when the approximate power step produced the zero vector and a
    /// uniform draw was used instead.
    pub fell_back: bool,
}

impl InitReport {
    /// Fills in `p` against `model`.
    pub fn measured(mut self, model: &CovarianceModel) -> Self {
        self.p = Some(p_of(&self.w0, model));
        self
    }
}

/// `1/‖P_top w0‖²`, where `P_top` projects onto the top eigenspace of `A`.
///
/// With a simple top eigenvalue this is `1/⟨u₁, w0⟩²`. With a repeated one
/// it is the best `p` over all unit vectors of the top eigenspace. Returns
/// `+∞` when `w0` is orthogonal to that space (or the squared projection
/// underflows).
pub fn p_of(w0: &DVector<f64>, model: &CovarianceModel) -> f64 {
    let m = model.top_multiplicity();
    let c = model.coordinates(w0);
    let mass: f64 = c.iter().take(m).map(|x| x * x).sum();
    1.0 / mass
}

/// Uniform point on the unit sphere: a normalized standard Gaussian vector.
pub fn init_uniform_sphere(dim: usize, rng: &mut impl RngCore) -> Result<InitReport> {
    if dim < 2 {
        return Err(Error::InvalidParameter(format!("uniform init needs d >= 2, got {dim}")));
    }
    Ok(InitReport {
        w0: gaussian_unit(dim, rng),
        method: InitMethod::Uniform,
        samples_consumed: 0,
        p: None,
        fell_back: false,
    })
}

fn gaussian(dim: usize, rng: &mut impl RngCore) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| StandardNormal.sample(rng))
}

fn gaussian_unit(dim: usize, rng: &mut impl RngCore) -> DVector<f64> {
    loop {
        let w = gaussian(dim, rng);
        let n = w.norm();
        if n > 0.0 {
            return w / n;
        }
    }
}

/// One approximate power step: `w0 ∝ (1/T₀) Σ_t Ã_t w` for Gaussian `w`,
/// over `t0` fresh stream samples.
pub fn init_approx_power<S: SampleStream + ?Sized>(
    stream: &mut S,
    t0: u64,
    rng: &mut impl RngCore,
) -> Result<InitReport> {
    if t0 == 0 {
        return Err(Error::InvalidParameter("approximate power init needs T0 >= 1".into()));
    }
    let dim = stream.dim();
    let w = gaussian(dim, rng);
    let mut acc = DVector::<f64>::zeros(dim);
    let scale = 1.0 / t0 as f64;
    for consumed in 0..t0 {
        let Some(update) = stream.next_sample()? else {
            return Err(Error::StreamExhausted {
                consumed,
                requested: t0,
            });
        };
        match update {
            SampleUpdate::RankOne(x) => acc.axpy(scale * x.dot(&w), x, 1.0),
            SampleUpdate::Dense(m) => acc.gemv(scale, m, &w, 1.0),
        }
    }
    let norm = acc.norm();
    let (w0, fell_back) = if norm > 0.0 && norm.is_finite() {
        (acc / norm, false)
    } else {
        (gaussian_unit(dim, rng), true)
    };
    Ok(InitReport {
        w0,
        method: InitMethod::ApproxPower,
        samples_consumed: t0,
        p: None,
        fell_back,
    })
}

/// Wraps a caller-provided start, normalizing it.
pub fn init_warm(w0: DVector<f64>) -> Result<InitReport> {
    let norm = w0.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(InitReport {
        w0: w0 / norm,
        method: InitMethod::Warm,
        samples_consumed: 0,
        p: None,
        fell_back: false,
    })
}

/// Warm start with prescribed `p`: `√(1/p) u₁ + √(1 − 1/p) u_d`.
///
/// The off-top mass sits on the eigenvector of the smallest eigenvalue,
/// which must lie outside the top eigenspace unless `p = 1`.
pub fn warm_start_with_p(model: &CovarianceModel, p: f64) -> Result<DVector<f64>> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::InvalidParameter(format!("target p = {p} must be finite and >= 1")));
    }
    let d = model.dim();
    let mut c = DVector::<f64>::zeros(d);
    c[0] = (1.0 / p).sqrt();
    if p > 1.0 {
        if model.top_multiplicity() == d {
            return Err(Error::InvalidParameter(
                "every direction is a leading eigenvector; only p = 1 is attainable".into(),
            ));
        }
        c[d - 1] = (1.0 - 1.0 / p).sqrt();
    }
    Ok(model.from_coordinates(&c))
}

/// Reads a warm-start vector from a one-row CSV file.
pub fn load_warm_vector(path: impl AsRef<Path>, dim: usize) -> Result<DVector<f64>> {
    let mut stream = crate::streams::FileStream::open(path.as_ref(), dim)?;
    match stream.next_sample()? {
        Some(SampleUpdate::RankOne(x)) => {
            let x = x.clone();
            if stream.next_sample()?.is_some() {
                return Err(Error::Parse {
                    path: path.as_ref().to_path_buf(),
                    line: 2,
                    message: "warm-start file must hold exactly one row".into(),
                });
            }
            Ok(x)
        }
        _ => Err(Error::Parse {
            path: path.as_ref().to_path_buf(),
            line: 1,
            message: "warm-start file is empty".into(),
        }),
    }
}
