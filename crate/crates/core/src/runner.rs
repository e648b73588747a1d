//! Config-driven experiment runs: validation, execution and report files.
//!
//! [`execute`] is pure (no file I/O) and deterministic in the config, so two
//! runs with the same config produce byte-identical reports unless timing is
//! requested.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::gadgets::{exact_catalog, mult_eps};
use crate::harness::{
    address_witness, affine_context_check, affine_context_negative_control, fold_collision_pair, gadget_csv,
    path_witness, prediction_gap, sup_grid_axes, support_hit_audit, sweep_worst_case, task_rng, CheckResult,
    ExperimentReport, GadgetRow, Parameters, TaskSampler, WitnessPair,
};
use crate::learners::{
    grid_ic_learner, make_address_agent, make_path_agent, make_value_agent, uniform_queries, AddressMode, Budget,
    Learner, ValueMode,
};
use crate::net::MlpNetwork;
use crate::tasks::{default_delta, AddressTask, HardFunction, Interval, Task};
use crate::transformer::{conversion_defect, mlp_to_transformer};

/// Tolerance for every "exact" reconstruction check.
pub const EXACT_TOL: f64 = 1e-9;
/// Tolerance for transformer conversion and affinity defects.
pub const TIGHT_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    PathExp,
    ValueExp,
    AddrExp,
    GadgetTest,
    ConvertTransformer,
    Witness,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::PathExp,
        Experiment::ValueExp,
        Experiment::AddrExp,
        Experiment::GadgetTest,
        Experiment::ConvertTransformer,
        Experiment::Witness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::PathExp => "path-exp",
            Experiment::ValueExp => "value-exp",
            Experiment::AddrExp => "addr-exp",
            Experiment::GadgetTest => "gadget-test",
            Experiment::ConvertTransformer => "convert-transformer",
            Experiment::Witness => "witness",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown experiment '{s}'"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WitnessFamily {
    Path,
    Address,
}

impl FromStr for WitnessFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "path" => Ok(WitnessFamily::Path),
            "address" | "addr" => Ok(WitnessFamily::Address),
            _ => Err(format!("unknown witness family '{s}' (expected path or address)")),
        }
    }
}

/// Everything a run needs. `None` fields take family-specific defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub d: Option<usize>,
    /// Path depth `L`.
    pub depth: Option<usize>,
    /// Query budget `N`.
    pub n: Option<usize>,
    /// Weight budget `m` for the realizable learners.
    pub m: Option<usize>,
    pub delta: Option<f64>,
    pub eta: Option<f64>,
    pub eps: Option<f64>,
    pub seed: u64,
    /// Total number of uniform evaluation points; spread as `grid^(1/d)` per
    /// axis before kinks are merged in.
    pub grid: Option<usize>,
    pub tasks: Option<usize>,
    pub family: Option<WitnessFamily>,
    /// MLP JSON read by `convert-transformer`.
    pub input: Option<PathBuf>,
    pub lambda: Option<f64>,
    /// Random inputs for the conversion defect.
    pub samples: Option<usize>,
    pub out_dir: PathBuf,
    pub json: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    /// Where `convert-transformer` writes the converted network.
    pub output: Option<PathBuf>,
    pub timing: bool,
}

impl RunConfig {
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            d: None,
            depth: None,
            n: None,
            m: None,
            delta: None,
            eta: None,
            eps: None,
            seed: 0,
            grid: None,
            tasks: None,
            family: None,
            input: None,
            lambda: None,
            samples: None,
            out_dir: PathBuf::from("reports"),
            json: None,
            csv: None,
            output: None,
            timing: false,
        }
    }

    pub fn json_path(&self) -> PathBuf {
        self.json
            .clone()
            .unwrap_or_else(|| self.out_dir.join(format!("{}.json", self.experiment)))
    }

    pub fn csv_path(&self) -> PathBuf {
        self.csv
            .clone()
            .unwrap_or_else(|| self.out_dir.join(format!("{}.csv", self.experiment)))
    }

    fn transformer_path(&self, input: &Path) -> PathBuf {
        self.output.clone().unwrap_or_else(|| {
            let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("network");
            self.out_dir.join(format!("{stem}.transformer.json"))
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("I/O failure on {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("run failed: {0}")]
    Failed(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Io { .. } => 3,
            RunError::Failed(_) => 1,
        }
    }
}

fn failed(e: impl fmt::Display) -> RunError {
    RunError::Failed(e.to_string())
}

fn config(msg: impl Into<String>) -> RunError {
    RunError::Config(msg.into())
}

/// A file produced by a run, besides the report itself.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub path: PathBuf,
    pub contents: String,
}

#[derive(Clone, Debug)]
pub struct Execution {
    pub report: ExperimentReport,
    pub csv: String,
    pub artifacts: Vec<Artifact>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: ExperimentReport,
    pub lines: Vec<String>,
    pub written: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.report.all_passed() {
            0
        } else {
            1
        }
    }
}

/// Uniform points per axis for a total budget of `grid` points in `d`
/// dimensions (at least 2).
pub fn per_axis(grid: usize, d: usize) -> usize {
    let k = (grid as f64).powf(1.0 / d as f64);
    // Guard against 10^4^(1/2) = 99.999...
    ((k + 1e-9).floor() as usize).max(2)
}

const DEFAULT_GRID: usize = 10_000;
const MAX_D: usize = 6;
const MAX_WITNESS_CUBES: u32 = 20;

/// Parameters after defaults and validation.
#[derive(Clone, Debug)]
struct Resolved {
    d: usize,
    depth: usize,
    n: usize,
    delta: f64,
    eta: f64,
    eps: f64,
    grid: usize,
    tasks: usize,
    family: WitnessFamily,
}

fn check_eta(eta: f64) -> Result<(), RunError> {
    if eta > 0.0 && eta < 0.5 {
        Ok(())
    } else {
        Err(config(format!("eta = {eta} violates eta in (0, 1/2)")))
    }
}

fn check_eps(eps: f64) -> Result<(), RunError> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(config(format!("eps = {eps} violates eps in (0, 1)")))
    }
}

fn check_hat_family(n: usize, delta: f64) -> Result<(), RunError> {
    if n < 3 {
        return Err(config(format!("N = {n} violates N >= 3")));
    }
    if !(delta > 0.0 && delta < 1.0 / (6.0 * n as f64)) {
        return Err(config(format!(
            "delta = {delta} violates 0 < delta < 1/(6N) with N = {n}"
        )));
    }
    Ok(())
}

fn check_d(d: usize) -> Result<(), RunError> {
    if (1..=MAX_D).contains(&d) {
        Ok(())
    } else {
        Err(config(format!("d = {d} violates 1 <= d <= {MAX_D}")))
    }
}

/// Applies defaults and rejects configs that break a family constraint.
fn resolve(cfg: &RunConfig) -> Result<Resolved, RunError> {
    let d = cfg.d.unwrap_or(1);
    let depth = cfg.depth.unwrap_or(3);
    let eta = cfg.eta.unwrap_or(0.25);
    let eps = cfg.eps.unwrap_or(0.01);
    let grid = cfg.grid.unwrap_or(DEFAULT_GRID);
    let family = cfg.family.unwrap_or(WitnessFamily::Path);
    if grid < 2 {
        return Err(config(format!("grid = {grid} violates grid >= 2")));
    }
    if cfg.m == Some(0) {
        return Err(config("m = 0 violates m >= 1"));
    }
    if cfg.tasks == Some(0) {
        return Err(config("tasks = 0 violates tasks >= 1"));
    }
    let hat_defaults = |n: Option<usize>| {
        let n = n.unwrap_or(5);
        (n, cfg.delta.unwrap_or_else(|| default_delta(n.max(1))))
    };
    let mut r = Resolved {
        d,
        depth,
        n: 0,
        delta: 0.0,
        eta,
        eps,
        grid,
        tasks: 0,
        family,
    };
    match cfg.experiment {
        Experiment::PathExp => {
            check_d(d)?;
            check_eta(eta)?;
            if depth == 0 {
                return Err(config("L = 0 violates L >= 1"));
            }
            let need = (1usize << d) * depth;
            r.n = cfg.n.unwrap_or(need);
            if r.n < need {
                return Err(config(format!("N = {} violates N >= 2^d L = {need}", r.n)));
            }
            r.tasks = cfg.tasks.unwrap_or(100);
        }
        Experiment::ValueExp | Experiment::AddrExp => {
            (r.n, r.delta) = hat_defaults(cfg.n);
            check_hat_family(r.n, r.delta)?;
            check_eps(eps)?;
            r.tasks = cfg.tasks.unwrap_or(if cfg.experiment == Experiment::ValueExp {
                200
            } else {
                100
            });
        }
        Experiment::GadgetTest => {
            check_eps(eps)?;
        }
        Experiment::ConvertTransformer => {
            if cfg.input.is_none() {
                return Err(config("input is required: convert-transformer reads an MLP JSON file"));
            }
            let lambda = cfg.lambda.unwrap_or(1.0);
            if !(lambda > 0.0 && lambda.is_finite()) {
                return Err(config(format!("lambda = {lambda} violates lambda > 0")));
            }
            if cfg.samples == Some(0) {
                return Err(config("samples = 0 violates samples >= 1"));
            }
        }
        Experiment::Witness => match family {
            WitnessFamily::Path => {
                check_d(d)?;
                check_eta(eta)?;
                if depth < 2 {
                    return Err(config(format!(
                        "L = {depth} violates L >= 2 (a witness needs an unqueried cube)"
                    )));
                }
                let bits = d * (depth - 1);
                if bits > MAX_WITNESS_CUBES as usize {
                    return Err(config(format!(
                        "d (L - 1) = {bits} violates d (L - 1) <= {MAX_WITNESS_CUBES}"
                    )));
                }
                let cubes = 1usize << bits;
                r.n = cfg.n.unwrap_or(cubes - 1);
                if r.n >= cubes {
                    return Err(config(format!("N = {} violates N < 2^(d (L - 1)) = {cubes}", r.n)));
                }
            }
            WitnessFamily::Address => {
                (r.n, r.delta) = hat_defaults(cfg.n);
                check_hat_family(r.n, r.delta)?;
            }
        },
    }
    Ok(r)
}

/// Checks the config without running anything.
pub fn validate(cfg: &RunConfig) -> Result<(), RunError> {
    resolve(cfg).map(|_| ())
}

fn parameters(cfg: &RunConfig, r: &Resolved) -> Parameters {
    let mut p = Parameters {
        seed: cfg.seed,
        m: cfg.m,
        ..Parameters::default()
    };
    match cfg.experiment {
        Experiment::PathExp => {
            p.d = Some(r.d);
            p.depth = Some(r.depth);
            p.n = Some(r.n);
            p.eta = Some(r.eta);
            p.grid = Some(r.grid);
            p.n_tasks = Some(r.tasks);
        }
        Experiment::ValueExp | Experiment::AddrExp => {
            p.n = Some(r.n);
            p.delta = Some(r.delta);
            p.eps = Some(r.eps);
            p.grid = Some(r.grid);
            p.n_tasks = Some(r.tasks);
        }
        Experiment::GadgetTest => p.eps = Some(r.eps),
        Experiment::ConvertTransformer => {}
        Experiment::Witness => match r.family {
            WitnessFamily::Path => {
                p.d = Some(r.d);
                p.depth = Some(r.depth);
                p.n = Some(r.n);
                p.eta = Some(r.eta);
            }
            WitnessFamily::Address => {
                p.n = Some(r.n);
                p.delta = Some(r.delta);
            }
        },
    }
    p
}

fn bound_check(name: &str, value: f64, bound: f64) -> CheckResult {
    CheckResult::new(name, value <= bound, format!("worst error {value:e} <= {bound:e}"))
}

fn weight_check(name: &str, weights: Option<usize>, m: Option<usize>) -> Option<CheckResult> {
    let m = m?;
    Some(match weights {
        Some(w) => CheckResult::new(name, w <= m, format!("{w} weights <= m = {m}")),
        None => CheckResult::new(name, false, "learner is not realizable".to_string()),
    })
}

fn run_path(cfg: &RunConfig, r: &Resolved, params: Parameters) -> Result<Execution, RunError> {
    let budget = Budget::queries(r.n);
    let general = Learner::Agentic(make_path_agent(r.d, r.depth, r.eta, false, budget).map_err(failed)?);
    let realizable = Learner::Agentic(make_path_agent(r.d, r.depth, r.eta, true, budget).map_err(failed)?);
    let sampler = TaskSampler::Path {
        d: r.d,
        depth: r.depth,
        eta: r.eta,
    };
    let axis = per_axis(r.grid, r.d);
    let mut report =
        sweep_worst_case("path-exp", &realizable, &sampler, axis, r.tasks, params.clone()).map_err(failed)?;
    let general_report = sweep_worst_case("path-exp", &general, &sampler, axis, r.tasks, params).map_err(failed)?;
    let gap = (0..r.tasks)
        .into_par_iter()
        .map(|i| -> Result<f64, RunError> {
            let task = sampler.sample(&mut task_rng(cfg.seed, i)).map_err(failed)?;
            let a = general.run(&task).map_err(failed)?;
            let b = realizable.run(&task).map_err(failed)?;
            if !a.context.bitwise_eq(&b.context) {
                return Ok(f64::INFINITY);
            }
            let axes = sup_grid_axes(&task, axis, &[&a.context]);
            prediction_gap(&a, &b, &axes).map_err(failed)
        })
        .collect::<Result<Vec<f64>, RunError>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let expected = (1usize << r.d) * r.depth;
    let counts_ok = report
        .tasks
        .iter()
        .chain(&general_report.tasks)
        .all(|t| t.n_queries == expected);
    report
        .checks
        .push(bound_check("path realizable exact", report.worst_error, EXACT_TOL));
    report
        .checks
        .push(bound_check("path general exact", general_report.worst_error, EXACT_TOL));
    report.checks.push(CheckResult::new(
        "path query count",
        counts_ok,
        format!("every run issued 2^d L = {expected} queries"),
    ));
    report.checks.push(CheckResult::new(
        "path realizable matches general",
        gap <= EXACT_TOL,
        format!("max pointwise gap {gap:e} <= {EXACT_TOL:e}, transcripts identical"),
    ));
    report
        .checks
        .extend(weight_check("path weight budget", report.max_weights, cfg.m));
    let csv = report.to_csv().map_err(failed)?;
    Ok(Execution {
        report,
        csv,
        artifacts: Vec::new(),
    })
}

fn run_value(cfg: &RunConfig, r: &Resolved, params: Parameters) -> Result<Execution, RunError> {
    let (n, delta, eps) = (r.n, r.delta, r.eps);
    let hard_fn = HardFunction::seeded(cfg.seed, n - 2, Interval::UNIT);
    let sampler = TaskSampler::Value {
        n,
        delta,
        hard_fn: hard_fn.clone(),
    };
    let mult =
        Learner::Agentic(make_value_agent(n, delta, ValueMode::Mult { eps }, Budget::queries(n)).map_err(failed)?);
    let exact = Learner::Agentic(make_value_agent(n, delta, ValueMode::Exact, Budget::queries(n)).map_err(failed)?);
    let axis = per_axis(r.grid, 1);
    let mut report = sweep_worst_case("value-exp", &mult, &sampler, axis, r.tasks, params.clone()).map_err(failed)?;
    let exact_report = sweep_worst_case("value-exp", &exact, &sampler, axis, r.tasks, params).map_err(failed)?;
    let bound = n as f64 * eps;
    report
        .checks
        .push(bound_check("value mult bound N eps", report.worst_error, bound));
    report.checks.push(bound_check(
        "value exact reconstruction",
        exact_report.worst_error,
        EXACT_TOL,
    ));
    report.checks.push(CheckResult::new(
        "value query count",
        report.tasks.iter().all(|t| t.n_queries == n),
        format!("every run issued N = {n} queries"),
    ));
    let affine = affine_context_check(n, delta, &hard_fn, 1000, cfg.seed).map_err(failed)?;
    report.checks.push(CheckResult::new(
        "value affine context",
        affine.max_defect <= TIGHT_TOL && affine.endpoint_defect == 0.0,
        format!(
            "max defect {:e} <= {TIGHT_TOL:e} over {} triples, endpoint defect {:e}",
            affine.max_defect, affine.trials, affine.endpoint_defect
        ),
    ));
    let control = affine_context_negative_control(n, delta, &hard_fn, 1000, cfg.seed).map_err(failed)?;
    report.checks.push(CheckResult::new(
        "value affine negative control",
        control.max_defect > 1e-6,
        format!("defect {:e} > 1e-6 with a sample on the moving hat", control.max_defect),
    ));
    report
        .checks
        .extend(weight_check("value weight budget", report.max_weights, cfg.m));
    let csv = report.to_csv().map_err(failed)?;
    Ok(Execution {
        report,
        csv,
        artifacts: Vec::new(),
    })
}

fn run_address(cfg: &RunConfig, r: &Resolved, params: Parameters) -> Result<Execution, RunError> {
    let (n, delta, eps) = (r.n, r.delta, r.eps);
    let g = HardFunction::invertible_address(n - 1);
    let sampler = TaskSampler::Address {
        n,
        delta,
        address_fn: g.clone(),
    };
    let agent = make_address_agent(
        n,
        delta,
        AddressMode::General { address_fn: g.clone() },
        Budget::queries(n),
    )
    .map_err(failed)?;
    let learner = Learner::Agentic(agent);
    let axis = per_axis(r.grid, 1);
    let mut report = sweep_worst_case("addr-exp", &learner, &sampler, axis, r.tasks, params).map_err(failed)?;
    report.checks.push(bound_check(
        "address exact reconstruction",
        report.worst_error,
        EXACT_TOL,
    ));

    let reads_beta = (0..r.tasks)
        .into_par_iter()
        .map(|i| -> Result<bool, RunError> {
            let task = sampler.sample(&mut task_rng(cfg.seed, i)).map_err(failed)?;
            let Task::Address(a) = &task else {
                unreachable!("address sampler")
            };
            let fit = learner.run(&task).map_err(failed)?;
            Ok(fit.context.response(n - 1) == f64::from(a.beta))
        })
        .collect::<Result<Vec<bool>, RunError>>()?
        .into_iter()
        .all(|b| b);
    report.checks.push(CheckResult::new(
        "address final response is beta",
        reads_beta,
        format!("{} transcripts checked", r.tasks),
    ));

    let queries: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect();
    let witness = address_witness(&queries, n, delta, &g).map_err(failed)?;
    report.checks.push(witness_check("address witness", &witness)?);
    report.witnesses.push(witness);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base = AddressTask::random(n, delta, g.clone(), &mut rng).map_err(failed)?;
    let i = rng.gen_range(0..n - 1);
    let (a, b) = fold_collision_pair(&base, i).map_err(failed)?;
    report.checks.push(CheckResult::new(
        "address fold collision",
        a.q_star() == b.q_star() && a.s != b.s,
        format!("s_{} in {{0, 1}} gives q* = {} for both", i + 1, a.q_star()),
    ));

    // Constant address 2/3 against a task whose q* is near 0.9: off by more than δ.
    let mut s = base.s.clone();
    s[0] = 0.35;
    let audited = AddressTask::new(n, s, base.beta, delta, g).map_err(failed)?;
    let mispredicting = make_address_agent(
        n,
        delta,
        AddressMode::Realizable {
            address_net: MlpNetwork::constant(n - 1, &[2.0 / 3.0]),
            eps,
        },
        Budget::queries(n),
    )
    .map_err(failed)?;
    let audit = support_hit_audit(&mispredicting, &audited, axis).map_err(failed)?;
    let miss = (audited.q_star() - 2.0 / 3.0).abs();
    report.checks.push(CheckResult::new(
        "address support audit",
        miss > delta && !audit.moving_hit && audit.beta_hidden,
        format!(
            "address off by {miss:.6} > delta; moving hat hit: {}; beta hidden: {}",
            audit.moving_hit, audit.beta_hidden
        ),
    ));
    let csv = report.to_csv().map_err(failed)?;
    Ok(Execution {
        report,
        csv,
        artifacts: Vec::new(),
    })
}

fn witness_check(name: &str, w: &WitnessPair) -> Result<CheckResult, RunError> {
    let verified = w.verify().is_ok();
    let equal = w.contexts_bitwise_equal().map_err(failed)?;
    Ok(CheckResult::new(
        name,
        verified && equal && w.separation == 1.0,
        format!(
            "separation {} at {:?}, contexts bitwise equal: {equal}",
            w.separation, w.witness_point
        ),
    ))
}

/// Worst error of `learner` over both tasks of a witness, at the witness point.
fn witness_learner_error(w: &WitnessPair) -> Result<f64, RunError> {
    let learner = grid_ic_learner(w.shared_queries.clone()).map_err(failed)?;
    let learner = Learner::InContext(learner);
    let mut worst = 0.0f64;
    for task in [&w.task_a, &w.task_b] {
        let fit = learner.run(task).map_err(failed)?;
        let err =
            (fit.predict(&w.witness_point).map_err(failed)? - task.evaluate(&w.witness_point).map_err(failed)?).abs();
        worst = worst.max(err);
    }
    Ok(worst)
}

fn run_witness(cfg: &RunConfig, r: &Resolved, params: Parameters) -> Result<Execution, RunError> {
    let pair = match r.family {
        WitnessFamily::Path => path_witness(&uniform_queries(r.d, r.n), r.d, r.depth, r.eta).map_err(failed)?,
        WitnessFamily::Address => {
            let queries: Vec<Vec<f64>> = (0..r.n).map(|i| vec![i as f64 / (r.n - 1) as f64]).collect();
            address_witness(&queries, r.n, r.delta, &HardFunction::invertible_address(r.n - 1)).map_err(failed)?
        }
    };
    let mut report = ExperimentReport::new("witness", params);
    report.n_queries = pair.shared_queries.len();
    report.checks.push(witness_check("witness pair", &pair)?);
    let err = witness_learner_error(&pair)?;
    report.worst_error = err;
    report.checks.push(CheckResult::new(
        "witness forces error",
        err >= 0.5 - EXACT_TOL,
        format!("grid in-context learner error {err} >= 1/2 on the pair"),
    ));
    let contents = pair.to_json().map_err(failed)?;
    report.witnesses.push(pair);
    let csv = report.to_csv().map_err(failed)?;
    let path = cfg.out_dir.join("witness-pair.json");
    Ok(Execution {
        report,
        csv,
        artifacts: vec![Artifact { path, contents }],
    })
}

/// Sup error of `Mult_ε` against `ab` on a `side x side` grid of `[0,1]²`.
pub fn mult_grid_error(net: &MlpNetwork, side: usize) -> f64 {
    let step = 1.0 / (side - 1) as f64;
    let mut worst = 0.0f64;
    for i in 0..side {
        for j in 0..side {
            let (a, b) = (i as f64 * step, j as f64 * step);
            let got = net.evaluate_scalar(&[a, b]).expect("two inputs");
            worst = worst.max((got - a * b).abs());
        }
    }
    worst
}

fn run_gadgets(cfg: &RunConfig, r: &Resolved, params: Parameters) -> Result<Execution, RunError> {
    let mut report = ExperimentReport::new("gadget-test", params);
    for (k, entry) in exact_catalog().iter().enumerate() {
        let (err, inputs) = entry.sup_error(10_000, cfg.seed.wrapping_add(k as u64));
        report.gadgets.push(GadgetRow {
            name: entry.name.to_string(),
            parameter: entry.parameter.clone(),
            sup_error: err,
            weights: entry.net.count_weights(),
            inputs,
        });
    }
    let exact_worst = report.gadgets.iter().map(|g| g.sup_error).fold(0.0, f64::max);
    report.checks.push(bound_check("gadgets exact", exact_worst, EXACT_TOL));
    let mut eps_list = vec![1e-1, 1e-2, 1e-3];
    if !eps_list.contains(&r.eps) {
        eps_list.push(r.eps);
    }
    for eps in eps_list {
        let net = mult_eps(eps).map_err(failed)?;
        let err = mult_grid_error(&net, 201);
        report.checks.push(bound_check(&format!("mult eps={eps}"), err, eps));
        report.gadgets.push(GadgetRow {
            name: "mult".into(),
            parameter: format!("eps={eps}"),
            sup_error: err,
            weights: net.count_weights(),
            inputs: 201 * 201,
        });
    }
    report.worst_error = exact_worst;
    let csv = gadget_csv(&report.gadgets).map_err(failed)?;
    Ok(Execution {
        report,
        csv,
        artifacts: Vec::new(),
    })
}

fn run_convert(cfg: &RunConfig, params: Parameters) -> Result<Execution, RunError> {
    let input = cfg.input.as_ref().expect("validated");
    let text = std::fs::read_to_string(input).map_err(|e| RunError::Io {
        path: input.clone(),
        message: e.to_string(),
    })?;
    let net = MlpNetwork::from_json(&text).map_err(|e| config(format!("input is not a valid MLP JSON: {e}")))?;
    let lambda = cfg.lambda.unwrap_or(1.0);
    let samples = cfg.samples.unwrap_or(1000);
    let t = mlp_to_transformer(&net, lambda).map_err(failed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let inputs: Vec<Vec<f64>> = (0..samples)
        .map(|_| (0..net.input_dim()).map(|_| rng.gen_range(-1.0..=1.0)).collect())
        .collect();
    let defect = conversion_defect(&net, &t, &inputs).map_err(failed)?;
    let mut report = ExperimentReport::new("convert-transformer", params);
    report.worst_error = defect;
    report.max_weights = Some(net.count_weights());
    report.checks.push(CheckResult::new(
        "conversion defect",
        defect <= TIGHT_TOL,
        format!("max |transformer - mlp| {defect:e} <= {TIGHT_TOL:e} over {samples} inputs, lambda {lambda}"),
    ));
    let one_head = t.layers().iter().all(|l| l.heads.len() == 1);
    report.checks.push(CheckResult::new(
        "conversion depth",
        t.depth() == net.depth() && t.layers().len() + 1 == net.depth() && one_head,
        format!(
            "transformer depth {} = MLP depth {}, one head per layer: {one_head}",
            t.depth(),
            net.depth()
        ),
    ));
    let csv = report.to_csv().map_err(failed)?;
    let path = cfg.transformer_path(input);
    Ok(Execution {
        report,
        csv,
        artifacts: vec![Artifact {
            path,
            contents: t.to_json(),
        }],
    })
}

/// Validates and runs the experiment without touching the file system
/// (except for reading the `convert-transformer` input).
pub fn execute(cfg: &RunConfig) -> Result<Execution, RunError> {
    let r = resolve(cfg)?;
    let params = parameters(cfg, &r);
    let start = Instant::now();
    let mut exec = match cfg.experiment {
        Experiment::PathExp => run_path(cfg, &r, params)?,
        Experiment::ValueExp => run_value(cfg, &r, params)?,
        Experiment::AddrExp => run_address(cfg, &r, params)?,
        Experiment::GadgetTest => run_gadgets(cfg, &r, params)?,
        Experiment::ConvertTransformer => run_convert(cfg, params)?,
        Experiment::Witness => run_witness(cfg, &r, params)?,
    };
    if cfg.timing {
        exec.report.wall_time_ms = Some(start.elapsed().as_millis() as u64);
        if cfg.experiment != Experiment::GadgetTest {
            exec.csv = exec.report.to_csv().map_err(failed)?;
        }
    }
    Ok(exec)
}

fn write(path: &Path, contents: &str) -> Result<(), RunError> {
    let io = |e: std::io::Error| RunError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(path, contents).map_err(io)
}

/// Runs the experiment and writes the JSON report, the CSV and any
/// artifacts. The exit status is [`RunOutcome::exit_code`] on success and
/// [`RunError::exit_code`] otherwise.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, RunError> {
    let exec = execute(cfg)?;
    let json = exec.report.to_json().map_err(failed)? + "\n";
    let mut written = Vec::new();
    for (path, contents) in [(cfg.json_path(), json.as_str()), (cfg.csv_path(), exec.csv.as_str())] {
        write(&path, contents)?;
        written.push(path);
    }
    for a in &exec.artifacts {
        write(&a.path, &a.contents)?;
        written.push(a.path.clone());
    }
    Ok(RunOutcome {
        lines: exec.report.checks.iter().map(CheckResult::line).collect(),
        report: exec.report,
        written,
    })
}
