//! Streaming PCA by stochastic gradient descent (Oja's method).
//!
//! The crate estimates the leading eigenvector of a covariance matrix `A`
//! from an i.i.d. stream of PSD samples `Ã_t` with `E[Ã_t] = A`, and carries
//! the machinery to check the method's convergence rates empirically:
//!
//! * [`model`]: covariance models stored by spectrum and basis, with the
//!   ground-truth quantities (leading eigenpair, eigengap, numerical rank);
//! * [`streams`]: bounded unbiased sample generators and a CSV reader;
//! * [`oja`]: the iteration in projected and deferred-normalization forms,
//!   and the gap-free and eigengap step-size rules;
//! * [`init`]: warm, uniform-sphere and approximate-power-iteration starts;
//! * [`metrics`]: suboptimality, the `V_T` diagnostic, target rates and the
//!   deterministic `(1+ηs)^k(1−ε−s)` bound check;
//! * [`experiments`]: the seeded trial harness (sweeps, rate fits,
//!   repeat-and-select, initialization benchmark).

pub mod eigen;
pub mod error;
pub mod experiments;
pub mod init;
pub mod metrics;
pub mod model;
pub mod oja;
pub mod rng;
pub mod streams;

pub use nalgebra;

pub use error::{Error, Result};
pub use experiments::{RunConfig, TrialRecord};
pub use init::{InitMethod, InitReport};
pub use metrics::{suboptimality, TargetRate};
pub use model::{CovarianceModel, EigenPair, ModelSpec};
pub use oja::{OjaState, StepSchedule};
pub use streams::{SampleStream, SampleUpdate, StreamKind, StreamSpec};
