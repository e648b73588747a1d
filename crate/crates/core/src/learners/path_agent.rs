//! Level-by-level search for cubical paths.
//!
//! Level `n` queries the centers of the `2^d` children of the recovered cube
//! `Q^{(n-1)}`, one at a time. The residual
//! `ρ_j = y_j - Σ_{l<n} Θ_l(c^{(l)}, q_j)` is 1 at the center of `Q^{(n)}` and
//! 0 at its siblings, which identifies `c^{(n)}`.

use crate::gadgets::{bump_reference, bump_var_gadget, selector_gadget, BumpSpec};
use crate::net::{InputLayout, MlpNetwork};
use crate::tasks::sign_vectors;

use super::{
    query_offset, response_offset, sparse_affine, AgenticLearner, Budget, Context, LearnerError, Predictor, QueryMap,
    Result,
};

fn side(level: usize) -> f64 {
    (-(level as f64)).exp2()
}

/// Offset from a parent center to the center of its child `ε` at `level`.
fn step(level: usize) -> f64 {
    (-(level as f64 + 1.0)).exp2()
}

/// Recovers `c^{(1)}, …, c^{(levels)}` from a transcript laid out level by
/// level, `2^d` queries each.
///
/// Fails unless every level has exactly one residual in `(½, 1]` and all
/// others in `[0, ½)`.
pub fn recovered_centers(context: &Context, d: usize, levels: usize, eta: f64) -> Result<Vec<Vec<f64>>> {
    let k = 1usize << d;
    if context.len() < k * levels {
        return Err(LearnerError::Config(format!(
            "transcript of length {} is too short for {levels} levels",
            context.len()
        )));
    }
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(levels);
    for n in 1..=levels {
        let mut residuals = Vec::with_capacity(k);
        for j in 0..k {
            let idx = (n - 1) * k + j;
            let q = context.query(idx);
            let mut rho = context.response(idx);
            for (l, c) in centers.iter().enumerate() {
                let spec = BumpSpec {
                    center: c.clone(),
                    side_length: side(l + 1),
                    eta,
                };
                rho -= bump_reference(&spec, q).expect("matching dimension");
            }
            residuals.push(rho);
        }
        let high: Vec<usize> = (0..k).filter(|&j| residuals[j] > 0.5 && residuals[j] <= 1.0).collect();
        let low = residuals.iter().filter(|r| (0.0..0.5).contains(*r)).count();
        if high.len() != 1 || low != k - 1 {
            return Err(LearnerError::Selection { level: n, residuals });
        }
        centers.push(context.query((n - 1) * k + high[0]).to_vec());
    }
    Ok(centers)
}

/// Input rows reading the `d` coordinates of query `k`.
fn query_rows(k: usize, d: usize) -> Vec<Vec<(usize, f64)>> {
    (0..d).map(|i| vec![(query_offset(k, d) + i, 1.0)]).collect()
}

/// Rows computing `c^{(l)}` (`l ≥ 1`) as the mean of the level-`(l+1)`
/// queries, which are the children centers of `Q^{(l)}`.
fn center_rows(l: usize, d: usize) -> Vec<Vec<(usize, f64)>> {
    let k = 1usize << d;
    let w = 1.0 / k as f64;
    (0..d)
        .map(|i| (0..k).map(|j| (query_offset(l * k + j, d) + i, w)).collect())
        .collect()
}

/// `Θ_l(center, point)` with both arguments read affinely from the input.
fn bump_reading(
    l: usize,
    d: usize,
    eta: f64,
    input_dim: usize,
    center: Vec<Vec<(usize, f64)>>,
    point: Vec<Vec<(usize, f64)>>,
) -> Result<MlpNetwork> {
    let bump = bump_var_gadget(d, side(l), eta).map_err(|e| LearnerError::Config(e.to_string()))?;
    let rows: Vec<Vec<(usize, f64)>> = center.into_iter().chain(point).collect();
    let read = sparse_affine(input_dim, &rows, vec![0.0; 2 * d]);
    Ok(MlpNetwork::compose(&bump, &read)?)
}

/// Network from a transcript covering levels `1..=n` (read from the first
/// columns of an input of width `input_dim`) to `c^{(n)}`.
///
/// Selection is written in displacement form
/// `c^{(n)} = c^{(n-1)} + 2^{-(n+1)} Σ_j χ(2ρ_j - ½) ε^j`; exactly one
/// indicator fires, so this equals the selected child center. The `2ρ - ½`
/// threshold maps `{0, 1}` to `{0, 1}` while absorbing rounding noise.
fn selection_net(n: usize, d: usize, eta: f64, input_dim: usize) -> Result<MlpNetwork> {
    let k = 1usize << d;
    let signs = sign_vectors(d);
    let chi = selector_gadget();
    let mut members = Vec::with_capacity(k + 1);
    for j in 0..k {
        let idx = (n - 1) * k + j;
        let y = sparse_affine(input_dim, &[vec![(response_offset(idx, d), 1.0)]], vec![0.0]);
        let mut parts = vec![y];
        for l in 1..n {
            parts.push(bump_reading(
                l,
                d,
                eta,
                input_dim,
                center_rows(l, d),
                query_rows(idx, d),
            )?);
        }
        let terms = MlpNetwork::parallel(&parts, &InputLayout::Shared)?;
        // 2(y - Σ Θ) - ½
        let mut coeffs = vec![(0, 2.0)];
        coeffs.extend((1..n).map(|p| (p, -2.0)));
        let threshold = sparse_affine(n, &[coeffs], vec![-0.5]);
        let rho = MlpNetwork::compose(&threshold, &terms)?;
        members.push(MlpNetwork::compose(&chi, &rho)?);
    }
    let has_parent = n >= 2;
    if has_parent {
        members.push(sparse_affine(input_dim, &center_rows(n - 1, d), vec![0.0; d]));
    }
    let stacked = MlpNetwork::parallel(&members, &InputLayout::Shared)?;
    let h = step(n);
    let rows: Vec<Vec<(usize, f64)>> = (0..d)
        .map(|i| {
            let mut row: Vec<(usize, f64)> = (0..k).map(|j| (j, h * signs[j][i])).collect();
            if has_parent {
                row.push((k + i, 1.0));
            }
            row
        })
        .collect();
    let bias = if has_parent { vec![0.0; d] } else { vec![0.5; d] };
    let combine = sparse_affine(stacked.output_dim(), &rows, bias);
    Ok(MlpNetwork::compose(&combine, &stacked)?)
}

/// Agent issuing `2^d L` queries that recovers every path task with matching
/// `(d, L, η)` exactly.
///
/// In realizable mode every query map and the predictor are networks
/// assembled from bump, selector and affine pieces. The predictor reads the
/// responses only through the last level's selection; earlier centers are
/// affine in the query coordinates.
pub fn make_path_agent(d: usize, depth: usize, eta: f64, realizable: bool, budget: Budget) -> Result<AgenticLearner> {
    if d == 0 || depth == 0 {
        return Err(LearnerError::Config("d and L must be positive".into()));
    }
    if !(eta > 0.0 && eta < 0.5) {
        return Err(LearnerError::Config(format!("eta = {eta} must lie in (0, 1/2)")));
    }
    let k = 1usize << d;
    let total = k * depth;
    if let Some(n) = budget.queries {
        if n < total {
            return Err(LearnerError::Budget(format!("N = {n} is below 2^d L = {total}")));
        }
    }
    let signs = sign_vectors(d);
    let initial: Vec<f64> = signs[0].iter().map(|e| 0.5 + step(1) * e).collect();

    let mut learner = if realizable {
        let mut maps = Vec::with_capacity(total - 1);
        for idx in 1..total {
            let (n, j) = (idx / k + 1, idx % k);
            let input_dim = idx * (d + 1);
            let map = if j == 0 {
                let sel = selection_net(n - 1, d, eta, input_dim)?;
                let shift: Vec<f64> = signs[0].iter().map(|e| step(n) * e).collect();
                let rows: Vec<Vec<(usize, f64)>> = (0..d).map(|i| vec![(i, 1.0)]).collect();
                MlpNetwork::compose(&sparse_affine(d, &rows, shift), &sel)?
            } else {
                let bias = (0..d).map(|i| step(n) * (signs[j][i] - signs[j - 1][i])).collect();
                sparse_affine(input_dim, &query_rows(idx - 1, d), bias)
            };
            maps.push(QueryMap::Network(map));
        }
        let ctx_dim = total * (d + 1);
        let input_dim = ctx_dim + d;
        let x_rows: Vec<Vec<(usize, f64)>> = (0..d).map(|i| vec![(ctx_dim + i, 1.0)]).collect();
        let mut terms = Vec::with_capacity(depth);
        for l in 1..depth {
            terms.push(bump_reading(l, d, eta, input_dim, center_rows(l, d), x_rows.clone())?);
        }
        let last_center = selection_net(depth, d, eta, input_dim)?;
        let x = sparse_affine(input_dim, &x_rows, vec![0.0; d]);
        let pair = MlpNetwork::parallel(&[last_center, x], &InputLayout::Shared)?;
        let bump = bump_var_gadget(d, side(depth), eta).map_err(|e| LearnerError::Config(e.to_string()))?;
        terms.push(MlpNetwork::compose(&bump, &pair)?);
        let stacked = MlpNetwork::parallel(&terms, &InputLayout::Shared)?;
        let sum = sparse_affine(depth, &[(0..depth).map(|p| (p, 1.0)).collect()], vec![0.0]);
        let predictor = MlpNetwork::compose(&sum, &stacked)?;
        AgenticLearner::new("path-agent", initial, maps, Predictor::Network(predictor))?
    } else {
        let maps = (1..total)
            .map(|idx| {
                let (n, j) = (idx / k + 1, idx % k);
                let eps = signs[j].clone();
                QueryMap::general(move |ctx: &Context| {
                    let centers = recovered_centers(ctx, d, n - 1, eta)?;
                    let parent = centers.last().cloned().unwrap_or_else(|| vec![0.5; d]);
                    Ok(parent.iter().zip(&eps).map(|(c, e)| c + step(n) * e).collect())
                })
            })
            .collect();
        let predictor = Predictor::general(move |ctx: &Context| {
            let specs: Vec<BumpSpec> = recovered_centers(ctx, d, depth, eta)?
                .into_iter()
                .enumerate()
                .map(|(l, center)| BumpSpec {
                    center,
                    side_length: side(l + 1),
                    eta,
                })
                .collect();
            Ok(Box::new(move |x: &[f64]| {
                specs
                    .iter()
                    .map(|s| bump_reference(s, x).expect("matching dimension"))
                    .sum()
            }))
        });
        AgenticLearner::new("path-agent", initial, maps, predictor)?
    };
    learner.params = serde_json::json!({ "d": d, "L": depth, "eta": eta, "realizable": realizable });
    learner.check_budget(&budget)?;
    Ok(learner)
}
