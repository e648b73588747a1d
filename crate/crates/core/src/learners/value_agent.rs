//! Pointed-value learners: read `q*` at `q_1`, then query the moving hat.

use crate::gadgets::{hat_gadget, hat_reference, hat_var_gadget, mult_eps, HatSpec};
use crate::net::{InputLayout, MlpNetwork};
use crate::tasks::{fixed_points, HardFunction};

use super::{
    response_offset, sparse_affine, AgenticLearner, Budget, Context, InContextLearner, LearnerError, PointFn,
    Predictor, QueryMap, Result,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ValueMode {
    /// Exact products in a general predictor.
    Exact,
    /// Every product replaced by `Mult_ε`; fully realizable.
    Mult { eps: f64 },
}

fn hat(center: f64, delta: f64, x: f64) -> f64 {
    hat_reference(
        &HatSpec {
            center,
            half_width: delta,
        },
        x,
    )
}

pub(crate) fn check_family(n: usize, delta: f64) -> Result<()> {
    if n < 3 {
        return Err(LearnerError::Config(format!("N = {n} must be at least 3")));
    }
    if !(delta > 0.0 && delta < 1.0 / (6.0 * n as f64)) {
        return Err(LearnerError::Config(format!(
            "delta = {delta} must satisfy 0 < delta < 1/(6N)"
        )));
    }
    Ok(())
}

/// `Σ_{i<N} y_i h_{q_i}(x) + y_N h_{x_N}(x)` with exact products.
pub(crate) fn exact_hat_predictor(n: usize, delta: f64) -> Predictor {
    let q = fixed_points(n);
    Predictor::general(move |ctx: &Context| {
        let mut terms: Vec<(f64, f64)> = (0..n - 1).map(|i| (ctx.response(i), q[i])).collect();
        terms.push((ctx.response(n - 1), ctx.query(n - 1)[0]));
        Ok(Box::new(move |x: &[f64]| terms.iter().map(|(y, c)| y * hat(*c, delta, x[0])).sum()) as PointFn)
    })
}

/// Network form of [`exact_hat_predictor`] with every product computed by
/// `Mult_ε`. Input: flattened `N`-pair context followed by `x`.
pub(crate) fn mult_hat_predictor(n: usize, delta: f64, eps: f64) -> Result<MlpNetwork> {
    let mult = mult_eps(eps).map_err(|e| LearnerError::Config(e.to_string()))?;
    let q = fixed_points(n);
    let input_dim = 2 * n + 1;
    let x = input_dim - 1;
    let mut terms = Vec::with_capacity(n);
    for (i, qi) in q.iter().enumerate().take(n - 1) {
        let y = sparse_affine(input_dim, &[vec![(response_offset(i, 1), 1.0)]], vec![0.0]);
        let h = hat_gadget(&HatSpec::new(*qi, delta).map_err(|e| LearnerError::Config(e.to_string()))?)
            .map_err(|e| LearnerError::Config(e.to_string()))?;
        let h = MlpNetwork::compose(&h, &sparse_affine(input_dim, &[vec![(x, 1.0)]], vec![0.0]))?;
        let pair = MlpNetwork::parallel(&[y, h], &InputLayout::Shared)?;
        terms.push(MlpNetwork::compose(&mult, &pair)?);
    }
    let y = sparse_affine(input_dim, &[vec![(response_offset(n - 1, 1), 1.0)]], vec![0.0]);
    let moving = hat_var_gadget(delta).map_err(|e| LearnerError::Config(e.to_string()))?;
    let read = sparse_affine(input_dim, &[vec![(2 * (n - 1), 1.0)], vec![(x, 1.0)]], vec![0.0; 2]);
    let h = MlpNetwork::compose(&moving, &read)?;
    let pair = MlpNetwork::parallel(&[y, h], &InputLayout::Shared)?;
    terms.push(MlpNetwork::compose(&mult, &pair)?);
    let stacked = MlpNetwork::parallel(&terms, &InputLayout::Shared)?;
    let sum = sparse_affine(n, &[(0..n).map(|i| (i, 1.0)).collect()], vec![0.0]);
    Ok(MlpNetwork::compose(&sum, &stacked)?)
}

/// Queries `q_1, …, q_{N-1}`, then `x_N = y_1 = q*`, and rebuilds the task
/// from the transcript.
pub fn make_value_agent(n: usize, delta: f64, mode: ValueMode, budget: Budget) -> Result<AgenticLearner> {
    check_family(n, delta)?;
    if let Some(cap) = budget.queries {
        if cap < n {
            return Err(LearnerError::Budget(format!(
                "N = {cap} is below the {n} queries issued"
            )));
        }
    }
    let q = fixed_points(n);
    let mut maps: Vec<QueryMap> = q[1..n - 1].iter().map(|v| QueryMap::Constant(vec![*v])).collect();
    // x_N = y_1: an affine read of the transcript.
    maps.push(QueryMap::Network(sparse_affine(
        2 * (n - 1),
        &[vec![(response_offset(0, 1), 1.0)]],
        vec![0.0],
    )));
    let predictor = match mode {
        ValueMode::Exact => exact_hat_predictor(n, delta),
        ValueMode::Mult { eps } => Predictor::Network(mult_hat_predictor(n, delta, eps)?),
    };
    let mut learner = AgenticLearner::new("value-agent", vec![q[0]], maps, predictor)?;
    learner.params = match mode {
        ValueMode::Exact => serde_json::json!({ "N": n, "delta": delta, "mode": "exact" }),
        ValueMode::Mult { eps } => serde_json::json!({ "N": n, "delta": delta, "mode": "mult", "eps": eps }),
    };
    learner.check_budget(&budget)?;
    Ok(learner)
}

/// Unrestricted in-context reader: queries `q_1, …, q_N`, reads `q*` and `s`,
/// and evaluates the hard function itself.
pub fn value_reader_ic(n: usize, delta: f64, hard_fn: HardFunction) -> Result<InContextLearner> {
    check_family(n, delta)?;
    let q = fixed_points(n);
    let queries = q.iter().map(|v| vec![*v]).collect();
    let predictor = Predictor::general(move |ctx: &Context| {
        let q = fixed_points(n);
        let q_star = ctx.response(0);
        let s: Vec<f64> = (1..n - 1).map(|i| ctx.response(i)).collect();
        let g = hard_fn.evaluate(&s)?;
        let mut terms: Vec<(f64, f64)> = vec![(q_star, q[0])];
        terms.extend(s.iter().zip(&q[1..]).map(|(s, c)| (*s, *c)));
        terms.push((g, q_star));
        Ok(Box::new(move |x: &[f64]| terms.iter().map(|(y, c)| y * hat(*c, delta, x[0])).sum()) as PointFn)
    });
    let mut learner = InContextLearner::new("value-reader", queries, predictor)?;
    learner.params = serde_json::json!({ "N": n, "delta": delta });
    Ok(learner)
}
