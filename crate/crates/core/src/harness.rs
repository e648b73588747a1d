//! Experiment drivers: worst-case sweeps over sampled tasks, the
//! indistinguishability witnesses behind the lower bounds, and audits of
//! their constructive premises.
//!
//! Sup norms are estimated on a tensor grid that merges a uniform grid with
//! every kink of the task and every query coordinate, so piecewise-linear
//! errors are caught at their extremes.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learners::{AgenticLearner, Context, Fitted, Learner, LearnerDescriptor, LearnerError};
use crate::tasks::{
    cell_of, invert_address, AddressTask, CubeIndex, CubicalPath, HardFunction, HardKind, Interval, PathTask, Task,
    TaskError, ValueTask,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("witness failed verification: {0}")]
    Witness(String),
    #[error("serialization failed: {0}")]
    Serialize(String),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

/// Two tasks that produce the same context on `shared_queries` yet differ by
/// `separation` at `witness_point`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessPair {
    pub task_a: Task,
    pub task_b: Task,
    pub shared_queries: Vec<Vec<f64>>,
    pub shared_context: Context,
    pub witness_point: Vec<f64>,
    pub separation: f64,
}

fn context_on(task: &Task, queries: &[Vec<f64>]) -> Result<Context> {
    let mut ctx = Context::new();
    for q in queries {
        ctx.push(q.clone(), task.evaluate(q)?);
    }
    Ok(ctx)
}

impl WitnessPair {
    /// Re-evaluates both tasks from their descriptors and checks the pair's
    /// invariants: contexts equal to `1e-12`, separation attained.
    pub fn verify(&self) -> Result<()> {
        let a = context_on(&self.task_a, &self.shared_queries)?;
        let b = context_on(&self.task_b, &self.shared_queries)?;
        let gap = a.max_difference(&b);
        if gap > 1e-12 {
            return Err(HarnessError::Witness(format!("contexts differ by {gap}")));
        }
        if a.max_difference(&self.shared_context) > 1e-12 {
            return Err(HarnessError::Witness("stored context is stale".into()));
        }
        let sep = (self.task_a.evaluate(&self.witness_point)? - self.task_b.evaluate(&self.witness_point)?).abs();
        if (sep - self.separation).abs() > 1e-12 {
            return Err(HarnessError::Witness(format!(
                "separation {sep} differs from recorded {}",
                self.separation
            )));
        }
        Ok(())
    }

    /// Whether both tasks give bit-identical responses on the shared queries.
    pub fn contexts_bitwise_equal(&self) -> Result<bool> {
        let a = context_on(&self.task_a, &self.shared_queries)?;
        let b = context_on(&self.task_b, &self.shared_queries)?;
        Ok(a.bitwise_eq(&b))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| HarnessError::Serialize(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HarnessError::Serialize(e.to_string()))
    }
}

/// All cubes of `level` in index order, first axis fastest.
pub fn cubes_at_level(d: usize, level: u32) -> impl Iterator<Item = CubeIndex> {
    let per_axis = 1u64 << level;
    let total = per_axis.pow(d as u32);
    (0..total).map(move |mut flat| {
        let index = (0..d)
            .map(|_| {
                let k = flat % per_axis;
                flat /= per_axis;
                k
            })
            .collect();
        CubeIndex { level, index }
    })
}

/// First level-`(depth - 1)` cube (in index order) that contains no query
/// under the half-open convention, or `None` when all are covered.
pub fn find_uncovered_cube(queries: &[Vec<f64>], d: usize, depth: usize) -> Option<CubeIndex> {
    let level = depth.saturating_sub(1) as u32;
    let covered: HashSet<Vec<u64>> = queries
        .iter()
        .filter(|q| q.len() == d)
        .filter_map(|q| q.iter().map(|x| cell_of(*x, level)).collect::<Option<Vec<u64>>>())
        .collect();
    cubes_at_level(d, level).find(|c| !covered.contains(&c.index))
}

/// Builds the two paths that share every cube up to an uncovered level-`(L-1)`
/// cube `Q` and then branch into its first two children. The tasks agree
/// outside `Q`, so every query sees the same value, yet they differ by 1 at
/// the center of the first child.
pub fn path_witness(queries: &[Vec<f64>], d: usize, depth: usize, eta: f64) -> Result<WitnessPair> {
    if depth < 2 {
        return Err(HarnessError::Precondition("path witness needs L >= 2".into()));
    }
    let cubes = 1usize << (d * (depth - 1));
    if queries.len() >= cubes {
        return Err(HarnessError::Precondition(format!(
            "|queries| = {} must be below 2^(d(L-1)) = {cubes}",
            queries.len()
        )));
    }
    let q = find_uncovered_cube(queries, d, depth)
        .ok_or_else(|| HarnessError::Precondition("every level-(L-1) cube holds a query".into()))?;
    let children = q.children();
    let task_a = Task::Path(PathTask::new(CubicalPath::ending_at(&children[0])?, eta)?);
    let task_b = Task::Path(PathTask::new(CubicalPath::ending_at(&children[1])?, eta)?);
    let witness_point = children[0].center();
    let separation = (task_a.evaluate(&witness_point)? - task_b.evaluate(&witness_point)?).abs();
    let pair = WitnessPair {
        shared_context: context_on(&task_a, queries)?,
        task_a,
        task_b,
        shared_queries: queries.to_vec(),
        witness_point,
        separation,
    };
    pair.verify()?;
    Ok(pair)
}

/// Smallest `y ∈ [2/3, 1]` outside every open interval
/// `(ξ_i - δ - μ, ξ_i + δ + μ)`, where `μ = (1/3 - 2Nδ) / (4N)` keeps the
/// excluded length below `1/3`.
pub fn admissible_address(queries: &[f64], delta: f64) -> Option<f64> {
    let n = queries.len().max(1) as f64;
    let mu = (1.0 / 3.0 - 2.0 * n * delta) / (4.0 * n);
    let reach = delta + mu.max(0.0);
    let blocked = |y: f64| queries.iter().any(|xi| (y - xi).abs() < reach);
    let mut candidates: Vec<f64> = std::iter::once(2.0 / 3.0)
        .chain(queries.iter().map(|xi| xi + reach))
        .filter(|y| Interval::ADDRESS.contains(*y))
        .collect();
    candidates.sort_by(f64::total_cmp);
    candidates.into_iter().find(|y| !blocked(*y))
}

/// Address tasks `(s, β = 0)` and `(s, β = 1)` whose moving hat avoids every
/// query, with `q*(s)` placed at the smallest admissible address.
pub fn address_witness(queries: &[Vec<f64>], n: usize, delta: f64, address_fn: &HardFunction) -> Result<WitnessPair> {
    if queries.len() != n {
        return Err(HarnessError::Precondition(format!(
            "expected N = {n} queries, got {}",
            queries.len()
        )));
    }
    if !(delta > 0.0 && delta < 1.0 / (6.0 * n as f64)) {
        return Err(HarnessError::Precondition(format!(
            "delta = {delta} must satisfy 0 < delta < 1/(6N)"
        )));
    }
    if address_fn.kind != HardKind::InvertibleAddress {
        return Err(HarnessError::Precondition(
            "address function must be invertible-address".into(),
        ));
    }
    if queries.iter().any(|q| q.len() != 1) {
        return Err(HarnessError::Precondition("address queries are scalars".into()));
    }
    let xi: Vec<f64> = queries.iter().map(|q| q[0]).collect();
    let y = admissible_address(&xi, delta)
        .ok_or_else(|| HarnessError::Precondition("no admissible address in [2/3, 1]".into()))?;
    let s = invert_address(address_fn, y)?;
    let a = AddressTask::new(n, s, 0, delta, address_fn.clone())?;
    let b = a.with_beta(1)?;
    let witness_point = vec![a.q_star()];
    let (task_a, task_b) = (Task::Address(a), Task::Address(b));
    let separation = (task_a.evaluate(&witness_point)? - task_b.evaluate(&witness_point)?).abs();
    let pair = WitnessPair {
        shared_context: context_on(&task_a, queries)?,
        task_a,
        task_b,
        shared_queries: queries.to_vec(),
        witness_point,
        separation,
    };
    pair.verify()?;
    Ok(pair)
}

/// `task` with `s_i` set to 0 and to 1. Both fold to the same `ŝ`, so the
/// moving hat sits at the same address.
pub fn fold_collision_pair(task: &AddressTask, i: usize) -> Result<(AddressTask, AddressTask)> {
    if i >= task.s.len() {
        return Err(HarnessError::Precondition(format!("coordinate {i} out of range")));
    }
    let mut s0 = task.s.clone();
    let mut s1 = task.s.clone();
    s0[i] = 0.0;
    s1[i] = 1.0;
    let a = AddressTask::new(task.n_budget, s0, task.beta, task.delta, task.address_fn.clone())?;
    let b = AddressTask::new(task.n_budget, s1, task.beta, task.delta, task.address_fn.clone())?;
    Ok((a, b))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AffineReport {
    pub xi: Vec<f64>,
    pub trials: usize,
    pub max_defect: f64,
    pub endpoint_defect: f64,
}

fn value_context(xi: &[f64], n: usize, delta: f64, hard_fn: &HardFunction, u: &[f64]) -> Result<Vec<f64>> {
    let task = Task::Value(ValueTask::new(n, u[1..].to_vec(), u[0], delta, hard_fn.clone())?);
    xi.iter().map(|x| Ok(task.evaluate(&[*x])?)).collect()
}

fn affinity_defect(
    xi: &[f64],
    n: usize,
    delta: f64,
    hard_fn: &HardFunction,
    fixed_q_star: Option<f64>,
    trials: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let q = fixed_q_star.unwrap_or_else(|| rng.gen_range(2.0 / 3.0..=1.0));
        std::iter::once(q).chain((0..n - 2).map(|_| rng.gen::<f64>())).collect()
    };
    let defect = |u: &[f64], v: &[f64], lambda: f64| -> Result<f64> {
        let w: Vec<f64> = u.iter().zip(v).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
        let (cu, cv, cw) = (
            value_context(xi, n, delta, hard_fn, u)?,
            value_context(xi, n, delta, hard_fn, v)?,
            value_context(xi, n, delta, hard_fn, &w)?,
        );
        Ok(cw
            .iter()
            .zip(cu.iter().zip(&cv))
            .map(|(w, (a, b))| (w - (lambda * a + (1.0 - lambda) * b)).abs())
            .fold(0.0, f64::max))
    };
    let mut max_defect: f64 = 0.0;
    let mut endpoint: f64 = 0.0;
    for _ in 0..trials {
        let (u, v) = (draw(rng), draw(rng));
        max_defect = max_defect.max(defect(&u, &v, rng.gen())?);
        endpoint = endpoint.max(defect(&u, &v, 0.0)?).max(defect(&u, &v, 1.0)?);
    }
    Ok((max_defect, endpoint))
}

/// Samples `N` points `ξ` in `[0, ½]`, which the moving hat never reaches,
/// and measures how far `(q*, s) ↦ (f(ξ_i))_i` is from affine along random
/// segments.
pub fn affine_context_check(
    n: usize,
    delta: f64,
    hard_fn: &HardFunction,
    trials: usize,
    seed: u64,
) -> Result<AffineReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xi: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=0.5)).collect();
    let (max_defect, endpoint_defect) = affinity_defect(&xi, n, delta, hard_fn, None, trials, &mut rng)?;
    Ok(AffineReport {
        xi,
        trials,
        max_defect,
        endpoint_defect,
    })
}

/// Negative control: `q*` is pinned and `ξ_N = q*`, so the context exposes
/// `g(s)` and stops being affine for a nonlinear `g`.
pub fn affine_context_negative_control(
    n: usize,
    delta: f64,
    hard_fn: &HardFunction,
    trials: usize,
    seed: u64,
) -> Result<AffineReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q_star = 0.8;
    let mut xi: Vec<f64> = (0..n - 1).map(|_| rng.gen_range(0.0..=0.5)).collect();
    xi.push(q_star);
    let (max_defect, endpoint_defect) = affinity_defect(&xi, n, delta, hard_fn, Some(q_star), trials, &mut rng)?;
    Ok(AffineReport {
        xi,
        trials,
        max_defect,
        endpoint_defect,
    })
}

/// Which supports the transcript of one run landed in (open intervals).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SupportAudit {
    pub queries: Vec<f64>,
    pub static_hits: Vec<bool>,
    pub moving_hit: bool,
    /// Predictions for `β = 0` and `β = 1` agree bit for bit on the grid.
    pub beta_hidden: bool,
}

pub fn support_hit_audit(agent: &AgenticLearner, task: &AddressTask, grid: usize) -> Result<SupportAudit> {
    let t0 = Task::Address(task.with_beta(0)?);
    let t1 = Task::Address(task.with_beta(1)?);
    let fit = crate::learners::run_agentic(agent, &Task::Address(task.clone()))?;
    let queries: Vec<f64> = fit.context.queries().into_iter().map(|q| q[0]).collect();
    let (statics, moving) = task.supports();
    let inside = |iv: &Interval| queries.iter().any(|x| *x > iv.lo && *x < iv.hi);
    let f0 = crate::learners::run_agentic(agent, &t0)?;
    let f1 = crate::learners::run_agentic(agent, &t1)?;
    let axes = sup_grid_axes(&t0, grid, &[&f0.context, &f1.context]);
    let mut beta_hidden = f0.context.bitwise_eq(&f1.context);
    for_each_point(&axes, |x| {
        if beta_hidden {
            let (a, b) = (f0.predict(x)?, f1.predict(x)?);
            beta_hidden = a.to_bits() == b.to_bits();
        }
        Ok(())
    })?;
    Ok(SupportAudit {
        queries: queries.clone(),
        static_hits: statics.iter().map(inside).collect(),
        moving_hit: inside(&moving),
        beta_hidden,
    })
}

/// Whether `learner` sees bit-identical transcripts on two tasks.
pub fn transcripts_collide(learner: &Learner, a: &Task, b: &Task) -> Result<bool> {
    Ok(learner.run(a)?.context.bitwise_eq(&learner.run(b)?.context))
}

/// Per-axis evaluation coordinates: `per_axis` uniform points (endpoints
/// included), the task's kinks, and the coordinates of any query in the
/// given contexts, all clipped to `[0, 1]`.
pub fn sup_grid_axes(task: &Task, per_axis: usize, contexts: &[&Context]) -> Vec<Vec<f64>> {
    let d = task.dim();
    let mut axes = task.axis_breakpoints();
    for ctx in contexts {
        for q in ctx.queries() {
            for (axis, v) in axes.iter_mut().zip(q) {
                axis.push(v);
            }
        }
    }
    let steps = per_axis.max(2) - 1;
    for axis in axes.iter_mut().take(d) {
        axis.extend((0..=steps).map(|i| i as f64 / steps as f64));
        axis.retain(|v| (0.0..=1.0).contains(v));
        axis.sort_by(f64::total_cmp);
        axis.dedup();
    }
    axes
}

/// Visits the tensor product of `axes` in odometer order.
pub fn for_each_point(axes: &[Vec<f64>], mut f: impl FnMut(&[f64]) -> Result<()>) -> Result<()> {
    if axes.iter().any(Vec::is_empty) {
        return Ok(());
    }
    let mut idx = vec![0usize; axes.len()];
    let mut x: Vec<f64> = axes.iter().map(|a| a[0]).collect();
    loop {
        f(&x)?;
        let mut k = 0;
        loop {
            if k == axes.len() {
                return Ok(());
            }
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                x[k] = axes[k][idx[k]];
                break;
            }
            idx[k] = 0;
            x[k] = axes[k][0];
            k += 1;
        }
    }
}

/// `max |fit(x) - task(x)|` over the grid.
pub fn sup_error(fit: &Fitted, task: &Task, axes: &[Vec<f64>]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for_each_point(axes, |x| {
        let err = (fit.predict(x)? - task.evaluate(x)?).abs();
        worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
        Ok(())
    })?;
    Ok(worst)
}

/// `max |a(x) - b(x)|` over the grid.
pub fn prediction_gap(a: &Fitted, b: &Fitted, axes: &[Vec<f64>]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for_each_point(axes, |x| {
        worst = worst.max((a.predict(x)? - b.predict(x)?).abs());
        Ok(())
    })?;
    Ok(worst)
}

/// Prediction arrays over the grid, in odometer order.
pub fn predictions(fit: &Fitted, axes: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for_each_point(axes, |x| {
        out.push(fit.predict(x)?);
        Ok(())
    })?;
    Ok(out)
}

/// Task distributions used by sweeps. Paths pick children uniformly at every
/// level; coefficients are uniform on their ranges; `β` is a fair coin.
#[derive(Clone, Debug)]
pub enum TaskSampler {
    Path {
        d: usize,
        depth: usize,
        eta: f64,
    },
    Value {
        n: usize,
        delta: f64,
        hard_fn: HardFunction,
    },
    Address {
        n: usize,
        delta: f64,
        address_fn: HardFunction,
    },
}

impl TaskSampler {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Result<Task> {
        Ok(match self {
            TaskSampler::Path { d, depth, eta } => Task::Path(PathTask::random(*d, *depth, *eta, rng)?),
            TaskSampler::Value { n, delta, hard_fn } => {
                Task::Value(ValueTask::random(*n, *delta, hard_fn.clone(), rng)?)
            }
            TaskSampler::Address { n, delta, address_fn } => {
                Task::Address(AddressTask::random(*n, *delta, address_fn.clone(), rng)?)
            }
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            TaskSampler::Path { d, .. } => *d,
            _ => 1,
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            TaskSampler::Path { .. } => "nested paths with independent uniform child choices",
            TaskSampler::Value { .. } => "s uniform on [0,1]^(N-2), q* uniform on [2/3,1]",
            TaskSampler::Address { .. } => "s uniform on [0,1]^(N-1), beta uniform on {0,1}",
        }
    }
}

/// RNG for task `index` of a sweep: one ChaCha stream per task, so results do
/// not depend on scheduling.
pub fn task_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaskRecord {
    pub index: usize,
    pub sup_error: f64,
    pub n_queries: usize,
    pub task: Task,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Parameters {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(rename = "L", skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(rename = "N", skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_tasks: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

/// One measured gadget: sup error against its reference and weight count.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GadgetRow {
    pub name: String,
    pub parameter: String,
    pub sup_error: f64,
    pub weights: usize,
    pub inputs: usize,
}

/// CSV table `name, parameter, sup_error, weights, inputs`.
pub fn gadget_csv(rows: &[GadgetRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let ser = |e: csv::Error| HarnessError::Serialize(e.to_string());
    w.write_record(["name", "parameter", "sup_error", "weights", "inputs"])
        .map_err(ser)?;
    for r in rows {
        w.write_record([
            r.name.clone(),
            r.parameter.clone(),
            r.sup_error.to_string(),
            r.weights.to_string(),
            r.inputs.to_string(),
        ])
        .map_err(ser)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Serialize(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| HarnessError::Serialize(e.to_string()))
}

pub const LOWER_BOUND_NOTE: &str = "Lower bounds quantified over all ReLU networks with at most m weights are not \
checked empirically; only their constructive premises (affine context, fold collisions, support hitting, \
witness pairs) are verified.";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub experiment: String,
    pub parameters: Parameters,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampling: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learner: Option<LearnerDescriptor>,
    pub tasks: Vec<TaskRecord>,
    pub worst_error: f64,
    pub n_queries: usize,
    pub max_weights: Option<usize>,
    pub witnesses: Vec<WitnessPair>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub gadgets: Vec<GadgetRow>,
    pub checks: Vec<CheckResult>,
    pub notes: Vec<String>,
    /// Only filled when timing is requested; otherwise reports are
    /// byte-identical across runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<u64>,
}

impl ExperimentReport {
    pub fn new(experiment: impl Into<String>, parameters: Parameters) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            experiment: experiment.into(),
            parameters,
            sampling: None,
            learner: None,
            tasks: Vec::new(),
            worst_error: 0.0,
            n_queries: 0,
            max_weights: None,
            witnesses: Vec::new(),
            gadgets: Vec::new(),
            checks: Vec::new(),
            notes: vec![LOWER_BOUND_NOTE.to_string()],
            wall_time_ms: None,
        }
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| HarnessError::Serialize(e.to_string()))
    }

    /// Flat single-row table: experiment, parameters, worst error, budgets and
    /// wall time (empty unless recorded).
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let p = &self.parameters;
        let opt = |v: Option<String>| v.unwrap_or_default();
        let ser = |e: csv::Error| HarnessError::Serialize(e.to_string());
        w.write_record([
            "experiment",
            "d",
            "L",
            "N",
            "m",
            "delta",
            "eta",
            "eps",
            "seed",
            "grid",
            "n_tasks",
            "worst_error",
            "n_queries",
            "max_weights",
            "wall_time_ms",
        ])
        .map_err(ser)?;
        w.write_record([
            self.experiment.clone(),
            opt(p.d.map(|v| v.to_string())),
            opt(p.depth.map(|v| v.to_string())),
            opt(p.n.map(|v| v.to_string())),
            opt(p.m.map(|v| v.to_string())),
            opt(p.delta.map(|v| v.to_string())),
            opt(p.eta.map(|v| v.to_string())),
            opt(p.eps.map(|v| v.to_string())),
            p.seed.to_string(),
            opt(p.grid.map(|v| v.to_string())),
            opt(p.n_tasks.map(|v| v.to_string())),
            self.worst_error.to_string(),
            self.n_queries.to_string(),
            opt(self.max_weights.map(|v| v.to_string())),
            opt(self.wall_time_ms.map(|v| v.to_string())),
        ])
        .map_err(ser)?;
        let bytes = w.into_inner().map_err(|e| HarnessError::Serialize(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| HarnessError::Serialize(e.to_string()))
    }
}

/// Runs `learner` on `n_tasks` sampled tasks and records each sup-grid error.
/// Tasks run in parallel; records come back in task order.
pub fn sweep_worst_case(
    experiment: &str,
    learner: &Learner,
    sampler: &TaskSampler,
    grid: usize,
    n_tasks: usize,
    parameters: Parameters,
) -> Result<ExperimentReport> {
    if learner.dim() != sampler.dim() {
        return Err(HarnessError::Precondition(format!(
            "learner dimension {} does not match task dimension {}",
            learner.dim(),
            sampler.dim()
        )));
    }
    let seed = parameters.seed;
    let records: Vec<TaskRecord> = (0..n_tasks)
        .into_par_iter()
        .map(|index| {
            let task = sampler.sample(&mut task_rng(seed, index))?;
            let fit = learner.run(&task)?;
            let axes = sup_grid_axes(&task, grid, &[&fit.context]);
            Ok(TaskRecord {
                index,
                sup_error: sup_error(&fit, &task, &axes)?,
                n_queries: fit.context.len(),
                task,
            })
        })
        .collect::<Result<_>>()?;
    let mut report = ExperimentReport::new(experiment, parameters);
    report.worst_error = records.iter().map(|r| r.sup_error).fold(0.0, f64::max);
    report.n_queries = records.iter().map(|r| r.n_queries).max().unwrap_or(0);
    report.max_weights = learner.max_weights();
    report.learner = Some(learner.descriptor());
    report.sampling = Some(sampler.description().to_string());
    report.tasks = records;
    Ok(report)
}
