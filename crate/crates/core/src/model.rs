//! Covariance models described by spectrum and orthonormal basis.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::eigen::{canonical_sign, check_symmetric, jacobi_eigen, max_abs};
use crate::error::{Error, Result};
use crate::rng::{rng_for, Purpose};

/// Orthonormality tolerance for bases and rotations.
pub const ORTHO_TOL: f64 = 1e-10;

/// A PSD matrix `A = Σ s_i u_i u_iᵀ`, stored spectrally.
///
/// A `None` basis means the standard basis, in which case `A` is diagonal and
/// every basis-dependent operation is O(d).
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceModel {
    spectrum: Vec<f64>,
    basis: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    pub vector: DVector<f64>,
}

fn max_orthonormal_deviation(q: &DMatrix<f64>) -> f64 {
    let n = q.ncols();
    let gram = q.transpose() * q;
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

fn check_orthonormal(q: &DMatrix<f64>, dim: usize) -> Result<()> {
    if q.nrows() != dim || q.ncols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: q.nrows().max(q.ncols()),
        });
    }
    let deviation = max_orthonormal_deviation(q);
    if deviation.is_nan() || deviation > ORTHO_TOL {
        return Err(Error::NotOrthonormal { deviation });
    }
    Ok(())
}

impl CovarianceModel {
    /// Diagonal model in the standard basis.
    pub fn diagonal(spectrum: Vec<f64>) -> Result<Self> {
        Self::validate_spectrum(&spectrum)?;
        Ok(Self {
            spectrum,
            basis: None,
        })
    }

    /// Model with eigenvectors given by the columns of `basis`.
    pub fn with_basis(spectrum: Vec<f64>, basis: DMatrix<f64>) -> Result<Self> {
        Self::validate_spectrum(&spectrum)?;
        check_orthonormal(&basis, spectrum.len())?;
        Ok(Self {
            spectrum,
            basis: Some(basis),
        })
    }

    fn validate_spectrum(s: &[f64]) -> Result<()> {
        if s.is_empty() {
            return Err(Error::InvalidModel("dimension must be positive".into()));
        }
        if s.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidModel(
                "spectrum entries must be finite and non-negative".into(),
            ));
        }
        if s.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidModel(
                "spectrum must be sorted non-increasing".into(),
            ));
        }
        if s[0] <= 0.0 {
            return Err(Error::InvalidModel("leading eigenvalue must be positive".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.spectrum.len()
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    /// Explicit basis, `None` for the standard basis.
    pub fn basis(&self) -> Option<&DMatrix<f64>> {
        self.basis.as_ref()
    }

    /// ‖A‖ = s₁.
    pub fn norm(&self) -> f64 {
        self.spectrum[0]
    }

    pub fn trace(&self) -> f64 {
        self.spectrum.iter().sum()
    }

    /// Eigenvector `u_i` (0-based).
    pub fn eigenvector(&self, i: usize) -> DVector<f64> {
        match &self.basis {
            Some(u) => u.column(i).into_owned(),
            None => {
                let mut e = DVector::zeros(self.dim());
                e[i] = 1.0;
                e
            }
        }
    }

    /// Coordinates `Uᵀw` of `w` in the eigenbasis.
    pub fn coordinates(&self, w: &DVector<f64>) -> DVector<f64> {
        match &self.basis {
            Some(u) => u.tr_mul(w),
            None => w.clone(),
        }
    }

    /// `U·c` for eigenbasis coordinates `c`.
    pub fn from_coordinates(&self, c: &DVector<f64>) -> DVector<f64> {
        match &self.basis {
            Some(u) => u * c,
            None => c.clone(),
        }
    }

    /// `wᵀAw`.
    pub fn quadratic_form(&self, w: &DVector<f64>) -> f64 {
        let c = self.coordinates(w);
        self.spectrum
            .iter()
            .zip(c.iter())
            .map(|(s, ci)| s * ci * ci)
            .sum()
    }

    /// Number of eigenvalues equal to s₁ up to a relative 1e-12.
    pub fn top_multiplicity(&self) -> usize {
        let s1 = self.spectrum[0];
        self.spectrum
            .iter()
            .take_while(|&&s| s1 - s <= 1e-12 * s1)
            .count()
    }

    /// Dense `A = U diag(s) Uᵀ`.
    pub fn dense(&self) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&self.spectrum));
        match &self.basis {
            Some(u) => u * d * u.transpose(),
            None => d,
        }
    }

    /// Same spectrum scaled by `c > 0`, same basis.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!("scale must be positive, got {c}")));
        }
        Ok(Self {
            spectrum: self.spectrum.iter().map(|s| s * c).collect(),
            basis: self.basis.clone(),
        })
    }
}

/// `(s₁, u₁)` straight from the model, with the first nonzero coordinate of
/// `u₁` made positive. For a degenerate top eigenvalue this is the stored
/// `u₁`, one of many valid choices.
pub fn leading_eigenpair(model: &CovarianceModel) -> EigenPair {
    let mut vector = model.eigenvector(0);
    canonical_sign(&mut vector);
    EigenPair {
        value: model.norm(),
        vector,
    }
}

/// Leading eigenpair of a dense symmetric PSD matrix.
pub fn leading_eigenpair_dense(a: &DMatrix<f64>) -> Result<EigenPair> {
    check_symmetric(a, 1e-8)?;
    let eig = jacobi_eigen(a)?;
    let scale = max_abs(a).max(f64::MIN_POSITIVE);
    if let Some(&min) = eig.values.last() {
        if min < -1e-8 * scale {
            return Err(Error::InvalidMatrix(format!(
                "not positive semidefinite: smallest eigenvalue {min:e}"
            )));
        }
    }
    Ok(EigenPair {
        value: eig.values[0],
        vector: eig.vectors.column(0).into_owned(),
    })
}

/// Numerical rank ‖A‖_F² / ‖A‖², in [1, d].
pub fn numerical_rank(model: &CovarianceModel) -> f64 {
    let s1 = model.norm();
    model.spectrum.iter().map(|s| (s / s1) * (s / s1)).sum()
}

/// Relative eigengap (s₁ − s₂)/s₁.
pub fn eigengap(model: &CovarianceModel) -> Result<f64> {
    match model.spectrum.as_slice() {
        [s1, s2, ..] => Ok((s1 - s2) / s1),
        _ => Err(Error::GapUndefined),
    }
}

/// Replaces the basis `U` by `Q·U`; the spectrum is untouched.
pub fn rotate_model(model: &CovarianceModel, q: &DMatrix<f64>) -> Result<CovarianceModel> {
    check_orthonormal(q, model.dim())?;
    let basis = match &model.basis {
        Some(u) => q * u,
        None => q.clone(),
    };
    Ok(CovarianceModel {
        spectrum: model.spectrum.clone(),
        basis: Some(basis),
    })
}

/// Haar-distributed orthogonal matrix from a seed (QR of a Gaussian matrix
/// with the sign of R's diagonal folded into Q).
pub fn random_rotation(dim: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_for(seed, Purpose::Rotation);
    let g = DMatrix::<f64>::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Named spectrum families. Entries are listed largest first; all families
/// have s₁ = 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectrumFamily {
    /// `k` ones followed by zeros.
    Flat(usize),
    /// `s_i = r^(i-1)`.
    Geometric(f64),
    /// `s_i = i^(-alpha)`.
    Power(f64),
    /// `s_1 = 1`, every other eigenvalue `1 - gap`.
    Spiked(f64),
}

impl SpectrumFamily {
    pub fn spectrum(&self, dim: usize) -> Result<Vec<f64>> {
        if dim == 0 {
            return Err(Error::InvalidModel("dimension must be positive".into()));
        }
        let s = match *self {
            SpectrumFamily::Flat(k) => {
                if k == 0 || k > dim {
                    return Err(Error::InvalidModel(format!("flat({k}) needs 1 <= k <= {dim}")));
                }
                (0..dim).map(|i| if i < k { 1.0 } else { 0.0 }).collect()
            }
            SpectrumFamily::Geometric(r) => {
                if !(r > 0.0 && r <= 1.0) {
                    return Err(Error::InvalidModel(format!("geometric ratio {r} not in (0, 1]")));
                }
                (0..dim).map(|i| r.powi(i as i32)).collect()
            }
            SpectrumFamily::Power(alpha) => {
                if !(alpha >= 0.0 && alpha.is_finite()) {
                    return Err(Error::InvalidModel(format!("power exponent {alpha} must be >= 0")));
                }
                (1..=dim).map(|i| (i as f64).powf(-alpha)).collect()
            }
            SpectrumFamily::Spiked(gap) => {
                if !(0.0..=1.0).contains(&gap) {
                    return Err(Error::InvalidModel(format!("spiked gap {gap} not in [0, 1]")));
                }
                (0..dim).map(|i| if i == 0 { 1.0 } else { 1.0 - gap }).collect()
            }
        };
        Ok(s)
    }
}

impl FromStr for SpectrumFamily {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let text = text.trim();
        let bad = || Error::InvalidModel(format!("unrecognized spectrum family '{text}'"));
        let open = text.find('(').ok_or_else(bad)?;
        let arg = text[open + 1..].strip_suffix(')').ok_or_else(bad)?.trim();
        let num = || arg.parse::<f64>().map_err(|_| bad());
        match &text[..open] {
            "flat" => Ok(SpectrumFamily::Flat(arg.parse().map_err(|_| bad())?)),
            "geometric" => Ok(SpectrumFamily::Geometric(num()?)),
            "power" => Ok(SpectrumFamily::Power(num()?)),
            "spiked" => Ok(SpectrumFamily::Spiked(num()?)),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for SpectrumFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpectrumFamily::Flat(k) => write!(f, "flat({k})"),
            SpectrumFamily::Geometric(r) => write!(f, "geometric({r})"),
            SpectrumFamily::Power(a) => write!(f, "power({a})"),
            SpectrumFamily::Spiked(g) => write!(f, "spiked({g})"),
        }
    }
}

/// Spectrum as written in a model file: an explicit list or a family name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpectrumSpec {
    Explicit(Vec<f64>),
    Family(String),
}

/// On-disk model description.
///
/// ```toml
/// dim = 20
/// spectrum = "geometric(0.5)"   # or an explicit list
/// rotation_seed = 7             # omit for the standard basis
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub dim: usize,
    pub spectrum: SpectrumSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_seed: Option<u64>,
}

impl ModelSpec {
    pub fn build(&self) -> Result<CovarianceModel> {
        let spectrum = match &self.spectrum {
            SpectrumSpec::Explicit(values) => {
                if values.len() != self.dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.dim,
                        actual: values.len(),
                    });
                }
                values.clone()
            }
            SpectrumSpec::Family(name) => name.parse::<SpectrumFamily>()?.spectrum(self.dim)?,
        };
        let model = CovarianceModel::diagonal(spectrum)?;
        match self.rotation_seed {
            Some(seed) => rotate_model(&model, &random_rotation(self.dim, seed)),
            None => Ok(model),
        }
    }
}
