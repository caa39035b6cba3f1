//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any failed.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::distribution::{Beta, ContinuousCDF};

use oja_core::experiments::{
    approx_power_budget, init_bench, rate_experiment, stats, success_probability, Experiment,
    RateExperiment,
};
use oja_core::init::{init_uniform_sphere, p_of};
use oja_core::metrics::lemma_sweep;
use oja_core::model::{numerical_rank, random_rotation, rotate_model, CovarianceModel, SpectrumFamily};
use oja_core::oja::{eta_gap_free, run_form, Form};
use oja_core::rng::{rng_for, splitmix64, Purpose};
use oja_core::streams::{
    bound_b, EigenbasisStream, RademacherStream, SampleStream, SampleUpdate, StreamKind,
    StreamSpec,
};
use oja_core::RunConfig;

const RATE_GRID: [u64; 3] = [1_000, 10_000, 100_000];
const META_REPS: u64 = 10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Pass only if `check` passed within `budget`.
fn timed(budget: Option<Duration>, check: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let start = Instant::now();
    let mut out = check();
    let took = start.elapsed();
    if let Some(limit) = budget {
        if took > limit {
            out.pass = false;
            out.detail.push_str(&format!("; over the {:.0} s budget", limit.as_secs_f64()));
        }
    }
    (out, took)
}

/// Angle between the lines spanned by `a` and `b`, from the shorter of the
/// chords between the normalized vectors (stable near zero, unlike acos).
fn angle(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let (a, b) = (a.normalize(), b.normalize());
    let chord = (&a - &b).norm().min((&a + &b).norm());
    2.0 * (chord / 2.0).asin()
}

/// Random spectrum with s₁ = 1 from a seed.
fn random_spectrum(d: usize, seed: u64) -> Vec<f64> {
    let mut z = seed;
    let mut s: Vec<f64> = (0..d)
        .map(|i| {
            if i == 0 {
                return 1.0;
            }
            z = splitmix64(z);
            (z >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect();
    s[1..].sort_by(|a, b| b.total_cmp(a));
    s
}

fn random_model(d: usize, seed: u64) -> CovarianceModel {
    let base = CovarianceModel::diagonal(random_spectrum(d, seed)).unwrap();
    rotate_model(&base, &random_rotation(d, seed)).unwrap()
}

// 1 ------------------------------------------------------------------------

fn criterion_forms() -> Outcome {
    let mut worst_forms = 0.0_f64;
    let mut worst_oracle = 0.0_f64;
    for i in 0..50u64 {
        let d = [2, 10, 50][(i % 3) as usize];
        let horizon = [10, 1_000][((i / 3) % 2) as usize];
        let seed = 1_000 + i;
        let model = random_model(d, seed);
        let b = bound_b(&StreamSpec::new(StreamKind::Rademacher), &model).unwrap();
        let eta = eta_gap_free(b, 8.0, horizon).unwrap().eta;
        let w0 = init_uniform_sphere(d, &mut rng_for(seed, Purpose::Init)).unwrap().w0;

        let run = |form| {
            let mut s = RademacherStream::new(&model, rng_for(seed, Purpose::Samples));
            run_form(&mut s, w0.clone(), eta, horizon, form).unwrap()
        };
        let deferred = run(Form::Deferred);
        let projected = run(Form::Projected);

        // oracle: the raw product (I + ηÃ_T)…(I + ηÃ_1)w0, never normalized
        let mut s = RademacherStream::new(&model, rng_for(seed, Purpose::Samples));
        let mut raw = w0.clone();
        for _ in 0..horizon {
            let SampleUpdate::RankOne(x) = s.next_sample().unwrap().unwrap() else { unreachable!() };
            let c = x.dot(&raw);
            raw += x * (eta * c);
        }
        worst_forms = worst_forms.max(angle(&deferred.direction, &projected.direction));
        worst_oracle = worst_oracle
            .max(angle(&deferred.direction, &raw))
            .max(angle(&projected.direction, &raw));
        let log_norm_gap = (deferred.log_magnitude - raw.norm().ln()).abs();
        if log_norm_gap > 1e-9 {
            return outcome(false, format!("case {i}: ln‖w_T‖ off by {log_norm_gap:e}"));
        }
    }
    outcome(
        worst_forms <= 1e-10 && worst_oracle <= 1e-10,
        format!("50 configs; max angle forms {worst_forms:.1e}, vs raw product {worst_oracle:.1e}"),
    )
}

// 2 ------------------------------------------------------------------------

fn criterion_lemma() -> Outcome {
    let checks = lemma_sweep(4096).unwrap();
    let violations = checks.iter().filter(|c| !c.holds).count();
    let tightest = checks
        .iter()
        .map(|c| c.log_lhs - c.log_rhs)
        .fold(f64::NEG_INFINITY, f64::max);
    outcome(
        violations == 0 && checks.len() == 21 * 21 * 6,
        format!("{} cases, {violations} violations, max ln(lhs/rhs) = {tightest:.4}", checks.len()),
    )
}

// 3, 4, 5 ------------------------------------------------------------------

fn gap_free_spectrum() -> Vec<f64> {
    let mut s = vec![1.0, 1.0];
    s.extend((1..=18).map(|i| 0.5f64.powi(i)));
    s
}

fn rate_config(spectrum: &str, schedule: &str, regime: &str, seed: u64) -> RunConfig {
    RunConfig::from_toml(&format!(
        r#"
seed = {seed}
horizon = 100000
repetitions = 100
validation = 200
record_timing = false

[model]
dim = 20
spectrum = {spectrum}

[stream]
kind = "rademacher"

[init]
method = "warm"
target_p = 8.0

[schedule]
{schedule}

[target]
c = 10.0
regime = "{regime}"
"#
    ))
    .unwrap()
}

fn gap_free_config() -> RunConfig {
    let spectrum = format!("{:?}", gap_free_spectrum());
    rate_config(&spectrum, "kind = \"gap_free\"\np = 8.0", "gap_free", 20_240_301)
}

fn gap_config() -> RunConfig {
    rate_config("\"spiked(0.5)\"", "kind = \"gap\"\nlambda = 0.5", "gap", 20_240_302)
}

fn medians_line(rate: &RateExperiment) -> String {
    rate.selected_medians
        .iter()
        .map(|(t, e)| format!("T={t}: {e:.3e}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn criterion_gap_free_rate(rate: &RateExperiment, exp: &Experiment) -> Outcome {
    let slope = rate.fit.slope;
    let target = exp.target().epsilon;
    let last = rate.selected_medians.last().map(|p| p.1).unwrap_or(f64::INFINITY);
    let in_window = (-0.75..=-0.30).contains(&slope);
    outcome(
        in_window && last <= target && rate.selected_medians.len() == 3,
        format!(
            "slope {slope:.3} (window [-0.75, -0.30]); median selected error {}; at T=1e5 {last:.3e} vs target {target:.3}",
            medians_line(rate)
        ),
    )
}

fn criterion_gap_rate(rate: &RateExperiment, gap_free_slope: f64) -> Outcome {
    let slope = rate.fit.slope;
    let in_window = (-1.3..=-0.7).contains(&slope);
    let steeper = slope < gap_free_slope;
    outcome(
        in_window && steeper && rate.selected_medians.len() == 3,
        format!(
            "slope {slope:.3} (window [-1.3, -0.7]), gap-free slope {gap_free_slope:.3}, steeper: {steeper}; median selected error {}",
            medians_line(rate)
        ),
    )
}

fn criterion_success() -> Outcome {
    let mut cfg = gap_free_config();
    cfg.horizon = 10_000;
    cfg.repetitions = Some(500);
    let exp = Experiment::new(cfg).unwrap();
    let eps = exp.target().epsilon;
    let records: Vec<f64> = exp
        .run_trials(500)
        .unwrap()
        .into_iter()
        .map(|o| o.record.suboptimality)
        .collect();
    let rate = success_probability(&records, eps).unwrap();
    let floor = 1.0 / (100.0 * 8.0);
    outcome(
        rate.lower >= floor,
        format!(
            "eps = {eps:.4} (c=10, valid: {}), {} / {} successes, 95% lower bound {:.4} vs {floor}; median error {:.3e}",
            exp.target().valid,
            rate.successes,
            rate.trials,
            rate.lower,
            stats::median(&records)
        ),
    )
}

// 6 ------------------------------------------------------------------------

fn ks_statistic(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

fn criterion_uniform_init() -> Outcome {
    let d = 100;
    let n = 1_000u64;
    let model = CovarianceModel::diagonal(SpectrumFamily::Power(2.0).spectrum(d).unwrap()).unwrap();
    let overlaps: Vec<f64> = (0..n)
        .map(|i| {
            let mut rng = rng_for(oja_core::rng::trial_seed(606, i), Purpose::Init);
            let w0 = init_uniform_sphere(d, &mut rng).unwrap().w0;
            1.0 / p_of(&w0, &model)
        })
        .collect();
    let scaled: Vec<f64> = overlaps.iter().map(|x| x * d as f64).collect();
    let median = stats::median(&scaled);
    let beta = Beta::new(0.5, (d as f64 - 1.0) / 2.0).unwrap();
    let ks = ks_statistic(&stats::sorted(&overlaps), |x| beta.cdf(x));
    let critical = 1.628 / (n as f64).sqrt();
    outcome(
        (0.2..=5.0).contains(&median) && ks < critical,
        format!("median d<v,w0>^2 = {median:.4} (window [0.2, 5]); KS D = {ks:.4} vs 1% critical {critical:.4}"),
    )
}

// 7 ------------------------------------------------------------------------

fn criterion_approx_power() -> Outcome {
    let d = 100;
    let model = CovarianceModel::diagonal(SpectrumFamily::Power(2.0).spectrum(d).unwrap()).unwrap();
    let spec = StreamSpec::new(StreamKind::Rademacher);
    let b = bound_b(&spec, &model).unwrap();
    let t0 = approx_power_budget(d, b, 20.0);
    let rows = init_bench(&model, &spec, &[t0], 100, 707, 30.0).unwrap();
    let (base, warm) = (&rows[0], &rows[1]);
    let improvement = base.summary.median / warm.summary.median;
    outcome(
        warm.fraction_below >= 0.5 && improvement >= 2.0,
        format!(
            "T0 = {t0} (b = {b:.4}, n_A = {:.4}); {:.0}% of trials with p <= {:.1}; median p {:.2} vs uniform {:.2} (x{improvement:.1})",
            numerical_rank(&model),
            100.0 * warm.fraction_below,
            warm.threshold,
            warm.summary.median,
            base.summary.median
        ),
    )
}

// 8 ------------------------------------------------------------------------

fn contract_models() -> Vec<CovarianceModel> {
    let families = [
        SpectrumFamily::Flat(1),
        SpectrumFamily::Flat(3),
        SpectrumFamily::Geometric(0.5),
        SpectrumFamily::Geometric(0.9),
        SpectrumFamily::Power(1.0),
        SpectrumFamily::Power(2.0),
        SpectrumFamily::Spiked(0.5),
        SpectrumFamily::Spiked(0.1),
    ];
    let mut models: Vec<CovarianceModel> = families
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let d = 2 + i;
            let base = CovarianceModel::diagonal(f.spectrum(d).unwrap()).unwrap();
            if i % 2 == 0 {
                base
            } else {
                rotate_model(&base, &random_rotation(d, 80 + i as u64)).unwrap()
            }
        })
        .collect();
    models.push(random_model(6, 88).scaled(3.5).unwrap());
    models.push(random_model(12, 89).scaled(0.02).unwrap());
    models
}

struct ContractReport {
    violations: u64,
    worst_ratio: f64,
    sigmas: f64,
}

fn check_contract<S: SampleStream>(stream: &mut S, model: &CovarianceModel, n: usize) -> ContractReport {
    let spec = StreamSpec::new(StreamKind::Rademacher);
    let b = bound_b(&spec, model).unwrap();
    let a = model.dense();
    let s1 = model.norm();
    let d = model.dim();
    let mut sum = DMatrix::<f64>::zeros(d, d);
    let mut sq = 0.0;
    let mut violations = 0;
    let mut worst_ratio = 0.0_f64;
    for _ in 0..n {
        let m = stream.next_sample().unwrap().unwrap().to_dense();
        let diff = &m - &a;
        let norm_sample = m.clone().symmetric_eigenvalues().amax();
        let norm_diff = diff.clone().symmetric_eigenvalues().amax();
        let ratio = (norm_sample / s1).max(norm_diff / s1);
        worst_ratio = worst_ratio.max(ratio / b);
        if norm_sample / s1 > b || norm_diff / s1 > b {
            violations += 1;
        }
        sq += diff.norm_squared();
        sum += m;
    }
    let dev = (sum / n as f64 - a).norm();
    ContractReport {
        violations,
        worst_ratio,
        sigmas: dev / (sq / (n * n) as f64).sqrt(),
    }
}

fn criterion_streams() -> Outcome {
    let models = contract_models();
    let n = 100_000;
    let jobs: Vec<(usize, StreamKind)> = (0..models.len())
        .flat_map(|i| [(i, StreamKind::Rademacher), (i, StreamKind::Eigenbasis)])
        .collect();
    let reports: Vec<ContractReport> = jobs
        .par_iter()
        .map(|&(i, kind)| {
            let m = &models[i];
            let rng = rng_for(800 + i as u64, Purpose::Samples);
            match kind {
                StreamKind::Rademacher => check_contract(&mut RademacherStream::new(m, rng), m, n),
                _ => check_contract(&mut EigenbasisStream::new(m, rng), m, n),
            }
        })
        .collect();
    let violations: u64 = reports.iter().map(|r| r.violations).sum();
    let worst_ratio = reports.iter().map(|r| r.worst_ratio).fold(0.0, f64::max);
    let worst_sigma = reports.iter().map(|r| r.sigmas).fold(0.0, f64::max);
    outcome(
        violations == 0 && worst_sigma <= 5.0,
        format!(
            "{} streams x {n} samples: {violations} bound violations (max used fraction of b {worst_ratio:.3}); worst mean deviation {worst_sigma:.2} sigma",
            jobs.len()
        ),
    )
}

// 9 ------------------------------------------------------------------------

fn criterion_determinism() -> Outcome {
    // byte identity of records, selections and sweeps
    let mut cfg = gap_config();
    cfg.horizon = 2_000;
    cfg.repetitions = Some(8);
    let text = cfg.to_toml();
    let serialize = |cfg: &RunConfig| {
        let exp = Experiment::new(cfg.clone()).unwrap();
        let sel = exp.repeat_and_select().unwrap();
        let sweep = oja_core::experiments::sweep_t(&exp, &[100, 500, 2_000]).unwrap();
        let mut bytes = serde_json::to_vec(&sel.records).unwrap();
        bytes.extend(serde_json::to_vec(&sel.scores).unwrap());
        bytes.extend(serde_json::to_vec(&sweep).unwrap());
        bytes.extend(sel.direction.iter().flat_map(|x| x.to_le_bytes()));
        bytes
    };
    let first = serialize(&cfg);
    let again = serialize(&RunConfig::from_toml(&text).unwrap());
    if first != again {
        return outcome(false, "repeated runs of one config differ".into());
    }
    let mut other = cfg.clone();
    other.seed += 1;
    if serialize(&other) == first {
        return outcome(false, "different seeds gave identical output".into());
    }

    // rotation equivariance of full runs
    let mut worst = 0.0_f64;
    for case in 0..20u64 {
        let d = 3 + (case as usize % 13);
        let mut cfg = gap_free_config();
        cfg.seed = 900 + case;
        cfg.horizon = 1_000;
        cfg.model.dim = d;
        cfg.model.spectrum = oja_core::model::SpectrumSpec::Explicit(random_spectrum(d, case));
        let base = cfg.model.build().unwrap();
        let q = random_rotation(d, 950 + case);
        let turned = rotate_model(&base, &q).unwrap();
        let a = Experiment::with_model(cfg.clone(), base).unwrap().run_trial(0).unwrap();
        let b = Experiment::with_model(cfg, turned).unwrap().run_trial(0).unwrap();
        worst = worst
            .max((&q * &a.direction - &b.direction).amax())
            .max((a.record.suboptimality - b.record.suboptimality).abs());
    }
    outcome(
        worst <= 1e-10,
        format!("repeated outputs byte-identical; 20 rotated full runs, max deviation {worst:.1e}"),
    )
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let mut results: Vec<(u32, &str, Outcome, Duration)> = Vec::new();
    let mut record = |id, name, (o, t): (Outcome, Duration)| {
        println!(
            "criterion {id} ({name}): {} - {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.as_secs_f64()
        );
        results.push((id, name, o, t));
    };

    record(1, "form equivalence", timed(Some(secs(10)), criterion_forms));
    record(2, "lemma bound", timed(Some(secs(30)), criterion_lemma));

    let gf_exp = Experiment::new(gap_free_config()).unwrap();
    let start = Instant::now();
    let gf_rate = rate_experiment(&gf_exp, &RATE_GRID, META_REPS).unwrap();
    let gf_time = start.elapsed();
    record(3, "gap-free rate", (criterion_gap_free_rate(&gf_rate, &gf_exp), gf_time));

    let gap_exp = Experiment::new(gap_config()).unwrap();
    record(
        4,
        "eigengap rate",
        timed(None, || {
            let rate = rate_experiment(&gap_exp, &RATE_GRID, META_REPS).unwrap();
            criterion_gap_rate(&rate, gf_rate.fit.slope)
        }),
    );
    record(5, "success probability", timed(None, criterion_success));
    record(6, "uniform initialization", timed(Some(secs(10)), criterion_uniform_init));
    record(7, "approximate power start", timed(Some(secs(60)), criterion_approx_power));
    record(8, "stream contracts", timed(Some(secs(30)), criterion_streams));
    record(9, "determinism and equivariance", timed(Some(secs(10)), criterion_determinism));

    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "{} of {} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {failed:?}");
        ExitCode::FAILURE
    }
}
