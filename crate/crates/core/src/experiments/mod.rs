//! Seeded batch harness: single trials, repeat-and-select, `T` sweeps with
//! log-log rate fits, and the initialization benchmark.
//!
//! Every output is a pure function of the [`RunConfig`] (and, for sweeps and
//! benchmarks, the grid), except the optional wall-clock column. Trials run
//! in parallel on the rayon pool and are reduced in trial-index order.

mod config;
pub mod stats;

use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Serialize, Serializer};

pub use config::{InitConfig, RunConfig, ScheduleConfig, TargetConfig};
pub use stats::{fit_rate, success_probability, RateFit, SuccessRate, Summary};

use crate::error::{Error, Result};
use crate::init::{self, InitMethod, InitReport};
use crate::metrics::{self, epsilon_target, Regime, TargetRate};
use crate::model::{eigengap, numerical_rank, CovarianceModel};
use crate::oja::{self, ScheduleKind, StepSchedule};
use crate::rng::{rng_for, trial_seed, Purpose};
use crate::streams::{bound_b, AnyStream, SampleStream, StreamSpec};

/// Trial index reserved for the validation draws of repeat-and-select.
const VALIDATION_INDEX: u64 = u64::MAX;

fn serialize_p<S: Serializer>(p: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if p.is_finite() {
        s.serialize_f64(*p)
    } else {
        s.serialize_str("inf")
    }
}

/// Outcome of one seeded run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial_index: u64,
    pub sub_seed: u64,
    /// `1/⟨v, w0⟩²`; serialized as `"inf"` for a start orthogonal to the
    /// top eigenspace.
    #[serde(serialize_with = "serialize_p")]
    pub init_p: f64,
    pub suboptimality: f64,
    /// `V_T ≤ 0` at the target `ε` (true whenever `ε ≥ 1`).
    pub v_nonpositive: bool,
    pub epsilon: f64,
    pub eta: f64,
    /// `T₀ + T`.
    pub samples_consumed: u64,
    pub init_fell_back: bool,
    /// Zero when timing is disabled.
    pub wall_clock_ns: u64,
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub record: TrialRecord,
    pub direction: DVector<f64>,
}

/// A config resolved against its model: noise bound, step schedule and
/// target rate are fixed before any sample is drawn.
#[derive(Debug, Clone)]
pub struct Experiment {
    config: RunConfig,
    model: CovarianceModel,
    b: f64,
    p: f64,
    warm: Option<DVector<f64>>,
    schedule: StepSchedule,
    target: TargetRate,
}

fn resolve_lambda(config: &RunConfig, model: &CovarianceModel) -> Result<f64> {
    match config.schedule.lambda {
        Some(l) => Ok(l),
        None => eigengap(model),
    }
}

impl Experiment {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let model = config.model.build()?;
        Self::with_model(config, model)
    }

    /// Uses an already built model in place of `config.model`, which must
    /// still describe the same dimension.
    pub fn with_model(config: RunConfig, model: CovarianceModel) -> Result<Self> {
        if model.dim() != config.model.dim {
            return Err(Error::DimensionMismatch {
                expected: config.model.dim,
                actual: model.dim(),
            });
        }
        let b = bound_b(&config.stream, &model)?;
        let warm = match config.init.method {
            InitMethod::Warm => Some(match (&config.init.vector, config.init.target_p) {
                (Some(path), _) => init::load_warm_vector(path, model.dim())?,
                (None, Some(p)) => init::warm_start_with_p(&model, p)?,
                (None, None) => unreachable!("validated"),
            }),
            _ => None,
        };
        let warm = match warm {
            Some(w) => Some(init::init_warm(w)?.w0),
            None => None,
        };
        let d = model.dim() as f64;
        let p = match (config.schedule.p, &warm, config.init.method) {
            (Some(p), _, _) => p,
            (None, Some(w), _) => init::p_of(w, &model).max(8.0),
            (None, None, InitMethod::Uniform) => d.max(8.0),
            (None, None, _) => (d.ln() * numerical_rank(&model)).max(8.0),
        };
        if !p.is_finite() {
            return Err(Error::Config(
                "warm start is orthogonal to the top eigenspace (p = inf)".into(),
            ));
        }
        let schedule = Self::schedule_for(&config, &model, b, p, config.horizon)?;
        let target = Self::target_for(&config, &model, b, p, config.horizon)?;
        Ok(Self {
            config,
            model,
            b,
            p,
            warm,
            schedule,
            target,
        })
    }

    fn schedule_for(
        config: &RunConfig,
        model: &CovarianceModel,
        b: f64,
        p: f64,
        horizon: u64,
    ) -> Result<StepSchedule> {
        let m = config.schedule.multiplier;
        match config.schedule.kind {
            ScheduleKind::GapFree => StepSchedule::gap_free(b, p, horizon, m),
            ScheduleKind::Gap => StepSchedule::gap(resolve_lambda(config, model)?, horizon, m),
            ScheduleKind::Constant => {
                StepSchedule::constant(config.schedule.eta.expect("validated") * m)
            }
        }
    }

    fn target_for(
        config: &RunConfig,
        model: &CovarianceModel,
        b: f64,
        p: f64,
        horizon: u64,
    ) -> Result<TargetRate> {
        let regime = config.regime();
        let lambda = match regime {
            Regime::Gap => Some(resolve_lambda(config, model)?),
            Regime::GapFree => None,
        };
        // ln(1) = 0 leaves no target at T = 1; evaluate at T = 2 instead.
        epsilon_target(regime, b, p, horizon.max(2), lambda, config.target.c)
    }

    /// Same experiment at another horizon `T`.
    pub fn with_horizon(&self, horizon: u64) -> Result<Self> {
        let mut config = self.config.clone();
        config.horizon = horizon;
        config.validate()?;
        let schedule = Self::schedule_for(&config, &self.model, self.b, self.p, horizon)?;
        let target = Self::target_for(&config, &self.model, self.b, self.p, horizon)?;
        Ok(Self {
            config,
            schedule,
            target,
            ..self.clone()
        })
    }

    /// Same experiment under another master seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut next = self.clone();
        next.config.seed = seed;
        next
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn model(&self) -> &CovarianceModel {
        &self.model
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// `p` fed to the step rule and the target rate.
    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn schedule(&self) -> &StepSchedule {
        &self.schedule
    }

    pub fn target(&self) -> &TargetRate {
        &self.target
    }

    /// Number of repetitions `R` this experiment uses.
    pub fn repetitions(&self) -> u64 {
        self.config.repetitions_for(self.p)
    }

    fn initialize<S: SampleStream>(&self, stream: &mut S, sub_seed: u64) -> Result<InitReport> {
        let mut rng = rng_for(sub_seed, Purpose::Init);
        let report = match self.config.init.method {
            InitMethod::Warm => init::init_warm(self.warm.clone().expect("warm start resolved"))?,
            InitMethod::Uniform => init::init_uniform_sphere(self.model.dim(), &mut rng)?,
            InitMethod::ApproxPower => {
                init::init_approx_power(stream, self.config.init.t0.expect("validated"), &mut rng)?
            }
        };
        Ok(report.measured(&self.model))
    }

    pub fn run_trial(&self, trial_index: u64) -> Result<TrialOutcome> {
        let start = Instant::now();
        let sub_seed = trial_seed(self.config.seed, trial_index);
        let mut stream = AnyStream::open(&self.config.stream, &self.model, sub_seed)?;
        let init = self.initialize(&mut stream, sub_seed)?;
        let horizon = self.config.horizon;
        let (direction, state) = oja::run(&mut stream, init.w0.clone(), &self.schedule, horizon)?;

        let epsilon = self.target.epsilon;
        let v_nonpositive = if epsilon < 1.0 {
            metrics::v_diagnostic(&state, &self.model, epsilon)?.is_success()
        } else {
            true
        };
        let wall_clock_ns = if self.config.record_timing {
            start.elapsed().as_nanos() as u64
        } else {
            0
        };
        Ok(TrialOutcome {
            record: TrialRecord {
                trial_index,
                sub_seed,
                init_p: init.p.unwrap_or(f64::INFINITY),
                suboptimality: metrics::suboptimality(&direction, &self.model),
                v_nonpositive,
                epsilon,
                eta: self.schedule.eta,
                samples_consumed: init.samples_consumed + horizon,
                init_fell_back: init.fell_back,
                wall_clock_ns,
            },
            direction,
        })
    }

    /// Trials `0..count`, in index order.
    pub fn run_trials(&self, count: u64) -> Result<Vec<TrialOutcome>> {
        (0..count)
            .into_par_iter()
            .map(|i| self.run_trial(i))
            .collect()
    }

    /// Runs `R` trials and keeps the output with the highest Rayleigh
    /// quotient on `V` fresh validation samples.
    pub fn repeat_and_select(&self) -> Result<Selection> {
        let outcomes = self.run_trials(self.repetitions())?;
        self.select(outcomes)
    }

    /// Selection step of [`Experiment::repeat_and_select`] over given
    /// outcomes.
    pub fn select(&self, outcomes: Vec<TrialOutcome>) -> Result<Selection> {
        if outcomes.is_empty() {
            return Err(Error::InvalidParameter("nothing to select from".into()));
        }
        let candidates: Vec<&DVector<f64>> = outcomes.iter().map(|o| &o.direction).collect();
        let scores = if candidates.len() == 1 {
            Vec::new()
        } else {
            self.validation_scores(&candidates)?
        };
        let chosen = scores
            .iter()
            .enumerate()
            .fold(0, |best, (i, &s)| if s > scores[best] { i } else { best });
        let direction = outcomes[chosen].direction.clone();
        Ok(Selection {
            chosen,
            direction,
            records: outcomes.into_iter().map(|o| o.record).collect(),
            scores,
        })
    }

    /// Mean of `wᵀÃ_j w` over the validation draws, per candidate.
    pub fn validation_scores(&self, candidates: &[&DVector<f64>]) -> Result<Vec<f64>> {
        let v = self.config.validation_size();
        if v == 0 {
            return Err(Error::Config(
                "selection among several outputs needs validation samples (V >= 1)".into(),
            ));
        }
        let seed = trial_seed(self.config.seed, VALIDATION_INDEX);
        let rng = rng_for(seed, Purpose::Validation);
        let mut stream = AnyStream::open_with(&self.config.stream, &self.model, rng)?;
        let mut sums = vec![0.0; candidates.len()];
        for consumed in 0..v {
            let sample = stream.next_sample()?.ok_or(Error::StreamExhausted {
                consumed,
                requested: v,
            })?;
            for (sum, w) in sums.iter_mut().zip(candidates) {
                *sum += sample.quadratic_form(w);
            }
        }
        Ok(sums.into_iter().map(|s| s / v as f64).collect())
    }
}

/// Result of repeat-and-select.
#[derive(Debug, Clone)]
pub struct Selection {
    /// Index of the chosen trial.
    pub chosen: usize,
    pub direction: DVector<f64>,
    pub records: Vec<TrialRecord>,
    /// Validation Rayleigh quotients per trial; empty when `R = 1`.
    pub scores: Vec<f64>,
}

impl Selection {
    pub fn chosen_record(&self) -> &TrialRecord {
        &self.records[self.chosen]
    }
}

pub fn run_trial(config: &RunConfig, trial_index: u64) -> Result<TrialRecord> {
    Ok(Experiment::new(config.clone())?.run_trial(trial_index)?.record)
}

pub fn repeat_and_select(config: &RunConfig) -> Result<Selection> {
    Experiment::new(config.clone())?.repeat_and_select()
}

/// One grid point of a `T` sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub horizon: u64,
    /// Set when the step rule rejected this `T`; the remaining fields are
    /// then empty.
    pub schedule_error: Option<String>,
    pub eta: Option<f64>,
    pub epsilon: Option<f64>,
    pub epsilon_valid: Option<bool>,
    pub summary: Option<Summary>,
    pub mean: Option<f64>,
    pub success: Option<SuccessRate>,
    pub selected_index: Option<usize>,
    pub selected_suboptimality: Option<f64>,
}

impl SweepRow {
    fn flagged(horizon: u64, err: &Error) -> Self {
        Self {
            horizon,
            schedule_error: Some(err.to_string()),
            eta: None,
            epsilon: None,
            epsilon_valid: None,
            summary: None,
            mean: None,
            success: None,
            selected_index: None,
            selected_suboptimality: None,
        }
    }

    pub fn is_flagged(&self) -> bool {
        self.schedule_error.is_some()
    }
}

fn check_grid(grid: &[u64]) -> Result<()> {
    if grid.len() < 3 {
        return Err(Error::InvalidParameter("T grid needs >= 3 points".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) || grid[0] == 0 {
        return Err(Error::InvalidParameter("T grid must be positive and strictly ascending".into()));
    }
    Ok(())
}

/// For each `T`, rebuilds the schedule, runs `R` trials and aggregates the
/// suboptimality. A `T` whose step size violates the rule's assumption is
/// reported as a flagged row, not an error.
pub fn sweep_t(experiment: &Experiment, grid: &[u64]) -> Result<Vec<SweepRow>> {
    check_grid(grid)?;
    grid.iter()
        .map(|&horizon| {
            let exp = match experiment.with_horizon(horizon) {
                Ok(e) => e,
                Err(e) if e.is_assumption_violation() => return Ok(SweepRow::flagged(horizon, &e)),
                Err(e) => return Err(e),
            };
            let selection = exp.repeat_and_select()?;
            let errors: Vec<f64> = selection.records.iter().map(|r| r.suboptimality).collect();
            Ok(SweepRow {
                horizon,
                schedule_error: None,
                eta: Some(exp.schedule().eta),
                epsilon: Some(exp.target().epsilon),
                epsilon_valid: Some(exp.target().valid),
                summary: Summary::of(&errors),
                mean: Some(errors.iter().sum::<f64>() / errors.len() as f64),
                success: Some(success_probability(&errors, exp.target().epsilon)?),
                selected_index: Some(selection.chosen),
                selected_suboptimality: Some(selection.chosen_record().suboptimality),
            })
        })
        .collect()
}

/// Master seed of meta-repetition `m`.
pub fn meta_seed(seed: u64, m: u64) -> u64 {
    trial_seed(seed, VALIDATION_INDEX - 1 - m)
}

/// Sweeps repeated under independent master seeds, with a log-log fit of the
/// median selected error against `T`.
#[derive(Debug, Clone, Serialize)]
pub struct RateExperiment {
    pub grid: Vec<u64>,
    pub sweeps: Vec<Vec<SweepRow>>,
    /// `(T, median over meta-repetitions of the selected suboptimality)`,
    /// flagged grid points omitted.
    pub selected_medians: Vec<(u64, f64)>,
    pub fit: RateFit,
}

pub fn rate_experiment(experiment: &Experiment, grid: &[u64], meta_reps: u64) -> Result<RateExperiment> {
    if meta_reps == 0 {
        return Err(Error::InvalidParameter("need >= 1 meta-repetition".into()));
    }
    let seed = experiment.config().seed;
    let sweeps: Vec<Vec<SweepRow>> = (0..meta_reps)
        .map(|m| sweep_t(&experiment.with_seed(meta_seed(seed, m)), grid))
        .collect::<Result<_>>()?;
    let mut selected_medians = Vec::new();
    for (j, &horizon) in grid.iter().enumerate() {
        let errs: Vec<f64> = sweeps
            .iter()
            .filter_map(|rows| rows[j].selected_suboptimality)
            .collect();
        if !errs.is_empty() {
            selected_medians.push((horizon, stats::median(&errs)));
        }
    }
    let fit = fit_rate(&selected_medians)?;
    Ok(RateExperiment {
        grid: grid.to_vec(),
        sweeps,
        selected_medians,
        fit,
    })
}

/// Distribution of the measured `p` for one `T₀` (0 = uniform start).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitBenchRow {
    pub t0: u64,
    pub method: InitMethod,
    pub summary: Summary,
    pub threshold: f64,
    /// Fraction of trials with `p ≤ threshold`.
    pub fraction_below: f64,
    pub fell_back: u64,
}

/// Default constant in the `c ln(d) n_A` threshold of the init benchmark.
pub const INIT_THRESHOLD_C: f64 = 30.0;

/// Measures `p` after the approximate power start for each `T₀` in the
/// grid, plus a `T₀ = 0` uniform-sphere baseline row.
pub fn init_bench(
    model: &CovarianceModel,
    stream: &StreamSpec,
    t0_grid: &[u64],
    trials: u64,
    seed: u64,
    threshold_c: f64,
) -> Result<Vec<InitBenchRow>> {
    if trials < 20 {
        return Err(Error::InvalidParameter(format!("init benchmark needs >= 20 trials, got {trials}")));
    }
    let d = model.dim();
    let threshold = threshold_c * (d as f64).ln() * numerical_rank(model);
    let mut grid: Vec<u64> = t0_grid.to_vec();
    if !grid.contains(&0) {
        grid.insert(0, 0);
    }
    grid.sort_unstable();
    grid.dedup();

    grid.into_iter()
        .map(|t0| {
            let reports: Vec<InitReport> = (0..trials)
                .into_par_iter()
                .map(|i| {
                    let sub = trial_seed(seed, i);
                    let mut rng = rng_for(sub, Purpose::Init);
                    let report = if t0 == 0 {
                        init::init_uniform_sphere(d, &mut rng)?
                    } else {
                        let mut s = AnyStream::open(stream, model, sub)?;
                        init::init_approx_power(&mut s, t0, &mut rng)?
                    };
                    Ok(report.measured(model))
                })
                .collect::<Result<_>>()?;
            let ps: Vec<f64> = reports.iter().map(|r| r.p.expect("measured")).collect();
            let below = ps.iter().filter(|&&p| p <= threshold).count();
            Ok(InitBenchRow {
                t0,
                method: if t0 == 0 { InitMethod::Uniform } else { InitMethod::ApproxPower },
                summary: Summary::of(&ps).expect("trials >= 20"),
                threshold,
                fraction_below: below as f64 / trials as f64,
                fell_back: reports.iter().filter(|r| r.fell_back).count() as u64,
            })
        })
        .collect()
}

/// `ceil(c_t0 · d · b² · ln d)`, the approximate-power budget used by the
/// benchmarks.
pub fn approx_power_budget(d: usize, b: f64, c_t0: f64) -> u64 {
    (c_t0 * d as f64 * b * b * (d as f64).ln()).ceil() as u64
}
