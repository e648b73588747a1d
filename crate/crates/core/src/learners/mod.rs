//! In-context and agentic learners.
//!
//! An in-context learner fixes its queries up front; an agentic learner picks
//! query `n` from the transcript of the first `n - 1` pairs. Either kind is
//! realizable when every query map and the predictor are [`MlpNetwork`]s.
//!
//! Networks that read a transcript see it flattened as
//! `[x_1 (d entries), y_1, x_2, y_2, …]`; predictor networks read the
//! flattened context followed by the evaluation point.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{AffineLayer, Matrix, MlpNetwork, NetError, SparseNetwork};
use crate::tasks::{Task, TaskError};

mod address_agent;
mod path_agent;
mod value_agent;

pub use address_agent::{make_address_agent, AddressMode};
pub use path_agent::{make_path_agent, recovered_centers};
pub use value_agent::{make_value_agent, value_reader_ic, ValueMode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("query {index} = {point:?} lies outside [0,1]^d")]
    QueryOutOfDomain { index: usize, point: Vec<f64> },
    #[error("budget exceeded: {0}")]
    Budget(String),
    #[error("learner works on dimension {learner}, task on {task}")]
    Incompatible { learner: usize, task: usize },
    #[error("level {level}: expected exactly one residual above 1/2, got {residuals:?}")]
    Selection { level: usize, residuals: Vec<f64> },
    #[error("invalid learner parameters: {0}")]
    Config(String),
}

pub type Result<T, E = LearnerError> = std::result::Result<T, E>;

/// Ordered transcript of `(query, response)` pairs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pairs: Vec<(Vec<f64>, f64)>,
}

impl Context {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: Vec<(Vec<f64>, f64)>) -> Self {
        Self { pairs }
    }

    pub fn push(&mut self, query: Vec<f64>, response: f64) {
        self.pairs.push((query, response));
    }

    pub fn pairs(&self) -> &[(Vec<f64>, f64)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn query(&self, i: usize) -> &[f64] {
        &self.pairs[i].0
    }

    pub fn response(&self, i: usize) -> f64 {
        self.pairs[i].1
    }

    pub fn queries(&self) -> Vec<Vec<f64>> {
        self.pairs.iter().map(|(q, _)| q.clone()).collect()
    }

    pub fn responses(&self) -> Vec<f64> {
        self.pairs.iter().map(|(_, y)| *y).collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (q, y) in &self.pairs {
            out.extend_from_slice(q);
            out.push(*y);
        }
        out
    }

    /// Bitwise equality of every query coordinate and response.
    pub fn bitwise_eq(&self, other: &Context) -> bool {
        self.len() == other.len()
            && self.pairs.iter().zip(&other.pairs).all(|((qa, ya), (qb, yb))| {
                ya.to_bits() == yb.to_bits()
                    && qa.len() == qb.len()
                    && qa.iter().zip(qb).all(|(a, b)| a.to_bits() == b.to_bits())
            })
    }

    /// Largest absolute difference between corresponding entries; infinite
    /// when the shapes differ.
    pub fn max_difference(&self, other: &Context) -> f64 {
        let (a, b) = (self.flatten(), other.flatten());
        if self.len() != other.len() || a.len() != b.len() {
            return f64::INFINITY;
        }
        a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }
}

/// Position of pair `k`'s query coordinates and response in a flattened
/// transcript of dimension `d`.
pub(crate) fn query_offset(k: usize, d: usize) -> usize {
    k * (d + 1)
}

pub(crate) fn response_offset(k: usize, d: usize) -> usize {
    k * (d + 1) + d
}

/// Single affine layer with sparse rows given as `(input index, weight)`.
pub(crate) fn sparse_affine(input_dim: usize, rows: &[Vec<(usize, f64)>], bias: Vec<f64>) -> MlpNetwork {
    let mut w = Matrix::zeros(rows.len(), input_dim);
    for (r, row) in rows.iter().enumerate() {
        for &(c, v) in row {
            w[(r, c)] += v;
        }
    }
    MlpNetwork::affine(AffineLayer::new(w, bias).expect("finite affine read"))
}

pub type PointFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GeneralPredictor = Arc<dyn Fn(&Context) -> Result<PointFn> + Send + Sync>;
pub type GeneralQuery = Arc<dyn Fn(&Context) -> Result<Vec<f64>> + Send + Sync>;

/// Final map `(context, x) -> ŷ`.
#[derive(Clone)]
pub enum Predictor {
    /// Curried: digest the context once, then evaluate pointwise.
    General(GeneralPredictor),
    /// Reads `flatten(context) ++ x`.
    Network(MlpNetwork),
}

impl Predictor {
    pub fn general(f: impl Fn(&Context) -> Result<PointFn> + Send + Sync + 'static) -> Self {
        Predictor::General(Arc::new(f))
    }

    pub fn network(&self) -> Option<&MlpNetwork> {
        match self {
            Predictor::Network(n) => Some(n),
            Predictor::General(_) => None,
        }
    }

    fn fit(&self, context: &Context) -> Result<Fitted> {
        let model = match self {
            Predictor::General(f) => FittedModel::Closure(f(context)?),
            Predictor::Network(net) => FittedModel::Network(SparseNetwork::from(&net.bind_prefix(&context.flatten())?)),
        };
        Ok(Fitted {
            context: context.clone(),
            model,
        })
    }
}

impl fmt::Debug for Predictor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predictor::General(_) => f.write_str("Predictor::General"),
            Predictor::Network(n) => write!(f, "Predictor::Network({} weights)", n.count_weights()),
        }
    }
}

/// Query map `q_n`: transcript of length `n - 1` to the next query point.
#[derive(Clone)]
pub enum QueryMap {
    Constant(Vec<f64>),
    General(GeneralQuery),
    /// Reads the flattened transcript.
    Network(MlpNetwork),
}

impl QueryMap {
    pub fn general(f: impl Fn(&Context) -> Result<Vec<f64>> + Send + Sync + 'static) -> Self {
        QueryMap::General(Arc::new(f))
    }

    fn next(&self, context: &Context) -> Result<Vec<f64>> {
        match self {
            QueryMap::Constant(q) => Ok(q.clone()),
            QueryMap::General(f) => f(context),
            QueryMap::Network(net) => Ok(net.evaluate(&context.flatten())?),
        }
    }

    fn is_realizable(&self) -> bool {
        !matches!(self, QueryMap::General(_))
    }

    fn weights(&self) -> usize {
        match self {
            QueryMap::Constant(q) => q.iter().filter(|v| **v != 0.0).count(),
            QueryMap::Network(n) => n.count_weights(),
            QueryMap::General(_) => 0,
        }
    }
}

impl fmt::Debug for QueryMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QueryMap::Constant(q) => write!(f, "QueryMap::Constant({q:?})"),
            QueryMap::General(_) => f.write_str("QueryMap::General"),
            QueryMap::Network(n) => write!(f, "QueryMap::Network({} weights)", n.count_weights()),
        }
    }
}

/// Query budget `N` and optional weight budget `m`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Budget {
    pub queries: Option<usize>,
    pub weights: Option<usize>,
}

impl Budget {
    pub fn unbounded() -> Self {
        Self::default()
    }

    pub fn queries(n: usize) -> Self {
        Self {
            queries: Some(n),
            weights: None,
        }
    }

    pub fn with_weights(mut self, m: usize) -> Self {
        self.weights = Some(m);
        self
    }

    fn check(&self, queries: usize, weights: Option<usize>) -> Result<()> {
        if let Some(n) = self.queries {
            if queries > n {
                return Err(LearnerError::Budget(format!("{queries} queries exceed N = {n}")));
            }
        }
        if let (Some(m), Some(w)) = (self.weights, weights) {
            if w > m {
                return Err(LearnerError::Budget(format!("{w} weights exceed m = {m}")));
            }
        }
        Ok(())
    }
}

/// Predictor after seeing a context.
pub struct Fitted {
    pub context: Context,
    model: FittedModel,
}

enum FittedModel {
    Closure(PointFn),
    /// Predictor network with the context folded in; reads `x` only.
    Network(SparseNetwork),
}

impl Fitted {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        match &self.model {
            FittedModel::Closure(f) => Ok(f(x)),
            FittedModel::Network(n) => Ok(n.evaluate_scalar(x)?),
        }
    }
}

impl fmt::Debug for Fitted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fitted")
            .field("context", &self.context)
            .finish_non_exhaustive()
    }
}

/// Serializable summary of a learner, with embedded networks when realizable.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LearnerDescriptor {
    pub kind: String,
    pub params: serde_json::Value,
    pub realizable: bool,
    pub n_queries: usize,
    pub max_weights: Option<usize>,
    pub networks: Vec<serde_json::Value>,
}

fn network_json(n: &MlpNetwork) -> serde_json::Value {
    serde_json::from_str(&n.to_json()).expect("network JSON is valid")
}

#[derive(Clone, Debug)]
pub struct InContextLearner {
    pub kind: String,
    pub params: serde_json::Value,
    pub dim: usize,
    pub queries: Vec<Vec<f64>>,
    pub predictor: Predictor,
}

impl InContextLearner {
    pub fn new(kind: impl Into<String>, queries: Vec<Vec<f64>>, predictor: Predictor) -> Result<Self> {
        let dim = queries.first().map_or(0, Vec::len);
        if dim == 0 || queries.iter().any(|q| q.len() != dim) {
            return Err(LearnerError::Config("queries must share a positive dimension".into()));
        }
        if let Predictor::Network(n) = &predictor {
            let expect = queries.len() * (dim + 1) + dim;
            if n.input_dim() != expect || n.output_dim() != 1 {
                return Err(LearnerError::Config(format!(
                    "predictor network must map {expect} inputs to 1 output"
                )));
            }
        }
        Ok(Self {
            kind: kind.into(),
            params: serde_json::Value::Null,
            dim,
            queries,
            predictor,
        })
    }

    pub fn n_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn is_realizable(&self) -> bool {
        matches!(self.predictor, Predictor::Network(_))
    }

    pub fn max_weights(&self) -> Option<usize> {
        self.predictor.network().map(MlpNetwork::count_weights)
    }

    pub fn check_budget(&self, budget: &Budget) -> Result<()> {
        budget.check(self.n_queries(), self.max_weights())
    }

    pub fn descriptor(&self) -> LearnerDescriptor {
        LearnerDescriptor {
            kind: self.kind.clone(),
            params: self.params.clone(),
            realizable: self.is_realizable(),
            n_queries: self.n_queries(),
            max_weights: self.max_weights(),
            networks: self.predictor.network().map(network_json).into_iter().collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AgenticLearner {
    pub kind: String,
    pub params: serde_json::Value,
    pub dim: usize,
    pub initial_query: Vec<f64>,
    /// `q_2, …, q_N`.
    pub query_maps: Vec<QueryMap>,
    pub predictor: Predictor,
}

impl AgenticLearner {
    pub fn new(
        kind: impl Into<String>,
        initial_query: Vec<f64>,
        query_maps: Vec<QueryMap>,
        predictor: Predictor,
    ) -> Result<Self> {
        let dim = initial_query.len();
        if dim == 0 {
            return Err(LearnerError::Config("initial query must be nonempty".into()));
        }
        for (k, map) in query_maps.iter().enumerate() {
            let ok = match map {
                QueryMap::Constant(q) => q.len() == dim,
                QueryMap::Network(n) => n.input_dim() == (k + 1) * (dim + 1) && n.output_dim() == dim,
                QueryMap::General(_) => true,
            };
            if !ok {
                return Err(LearnerError::Config(format!("query map {} has the wrong shape", k + 2)));
            }
        }
        if let Predictor::Network(n) = &predictor {
            let expect = (query_maps.len() + 1) * (dim + 1) + dim;
            if n.input_dim() != expect || n.output_dim() != 1 {
                return Err(LearnerError::Config(format!(
                    "predictor network must map {expect} inputs to 1 output"
                )));
            }
        }
        Ok(Self {
            kind: kind.into(),
            params: serde_json::Value::Null,
            dim,
            initial_query,
            query_maps,
            predictor,
        })
    }

    pub fn n_queries(&self) -> usize {
        self.query_maps.len() + 1
    }

    pub fn is_realizable(&self) -> bool {
        matches!(self.predictor, Predictor::Network(_)) && self.query_maps.iter().all(QueryMap::is_realizable)
    }

    /// Largest `count_weights` over the query maps and the predictor, when
    /// realizable.
    pub fn max_weights(&self) -> Option<usize> {
        if !self.is_realizable() {
            return None;
        }
        let maps = self.query_maps.iter().map(QueryMap::weights);
        let pred = self.predictor.network().map(MlpNetwork::count_weights);
        maps.chain(pred).max()
    }

    pub fn check_budget(&self, budget: &Budget) -> Result<()> {
        budget.check(self.n_queries(), self.max_weights())
    }

    pub fn descriptor(&self) -> LearnerDescriptor {
        let mut networks: Vec<serde_json::Value> = self
            .query_maps
            .iter()
            .filter_map(|m| match m {
                QueryMap::Network(n) => Some(network_json(n)),
                _ => None,
            })
            .collect();
        networks.extend(self.predictor.network().map(network_json));
        LearnerDescriptor {
            kind: self.kind.clone(),
            params: self.params.clone(),
            realizable: self.is_realizable(),
            n_queries: self.n_queries(),
            max_weights: self.max_weights(),
            networks,
        }
    }
}

/// Either kind of learner, for drivers that accept both.
#[derive(Clone, Debug)]
pub enum Learner {
    InContext(InContextLearner),
    Agentic(AgenticLearner),
}

impl Learner {
    pub fn run(&self, task: &Task) -> Result<Fitted> {
        match self {
            Learner::InContext(l) => run_in_context(l, task),
            Learner::Agentic(l) => run_agentic(l, task),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Learner::InContext(l) => l.dim,
            Learner::Agentic(l) => l.dim,
        }
    }

    pub fn n_queries(&self) -> usize {
        match self {
            Learner::InContext(l) => l.n_queries(),
            Learner::Agentic(l) => l.n_queries(),
        }
    }

    pub fn max_weights(&self) -> Option<usize> {
        match self {
            Learner::InContext(l) => l.max_weights(),
            Learner::Agentic(l) => l.max_weights(),
        }
    }

    pub fn descriptor(&self) -> LearnerDescriptor {
        match self {
            Learner::InContext(l) => l.descriptor(),
            Learner::Agentic(l) => l.descriptor(),
        }
    }
}

fn check_domain(index: usize, point: &[f64]) -> Result<()> {
    if point.iter().all(|v| (0.0..=1.0).contains(v)) {
        Ok(())
    } else {
        Err(LearnerError::QueryOutOfDomain {
            index,
            point: point.to_vec(),
        })
    }
}

fn check_dim(dim: usize, task: &Task) -> Result<()> {
    if dim != task.dim() {
        return Err(LearnerError::Incompatible {
            learner: dim,
            task: task.dim(),
        });
    }
    Ok(())
}

pub fn run_in_context(learner: &InContextLearner, task: &Task) -> Result<Fitted> {
    check_dim(learner.dim, task)?;
    let mut context = Context::new();
    for (i, q) in learner.queries.iter().enumerate() {
        check_domain(i, q)?;
        context.push(q.clone(), task.evaluate(q)?);
    }
    learner.predictor.fit(&context)
}

pub fn run_agentic(learner: &AgenticLearner, task: &Task) -> Result<Fitted> {
    check_dim(learner.dim, task)?;
    let mut context = Context::new();
    let first = learner.initial_query.clone();
    check_domain(0, &first)?;
    let y = task.evaluate(&first)?;
    context.push(first, y);
    for (k, map) in learner.query_maps.iter().enumerate() {
        let q = map.next(&context)?;
        if q.len() != learner.dim {
            return Err(LearnerError::Config(format!(
                "query map {} returned dimension {}",
                k + 2,
                q.len()
            )));
        }
        check_domain(k + 1, &q)?;
        let y = task.evaluate(&q)?;
        context.push(q, y);
    }
    learner.predictor.fit(&context)
}

/// The in-context learner as an agent with constant query maps and the same
/// predictor.
pub fn embed_ic_as_agent(learner: &InContextLearner) -> AgenticLearner {
    let (first, rest) = learner.queries.split_first().expect("nonempty query set");
    AgenticLearner {
        kind: format!("embedded:{}", learner.kind),
        params: learner.params.clone(),
        dim: learner.dim,
        initial_query: first.clone(),
        query_maps: rest.iter().cloned().map(QueryMap::Constant).collect(),
        predictor: learner.predictor.clone(),
    }
}

/// `n` cell-centered points of the tensor grid with `⌈n^{1/d}⌉` points per
/// axis, in lexicographic order (first axis fastest).
pub fn uniform_queries(d: usize, n: usize) -> Vec<Vec<f64>> {
    let mut k = 1usize;
    while k.pow(d as u32) < n {
        k += 1;
    }
    (0..n)
        .map(|mut flat| {
            (0..d)
                .map(|_| {
                    let i = flat % k;
                    flat /= k;
                    (i as f64 + 0.5) / k as f64
                })
                .collect()
        })
        .collect()
}

/// Piecewise-linear interpolation of the context for `d = 1` (constant beyond
/// the outermost queries); nearest query in Euclidean distance for `d > 1`,
/// ties going to the earlier query.
pub fn grid_ic_learner(queries: Vec<Vec<f64>>) -> Result<InContextLearner> {
    let mut l = InContextLearner::new("grid-interpolant", queries, Predictor::general(interpolant))?;
    l.params = serde_json::json!({ "queries": l.queries });
    Ok(l)
}

fn interpolant(context: &Context) -> Result<PointFn> {
    let pairs = context.pairs().to_vec();
    if pairs.is_empty() {
        return Ok(Box::new(|_| 0.0));
    }
    if pairs[0].0.len() == 1 {
        let mut pts: Vec<(f64, f64)> = pairs.iter().map(|(q, y)| (q[0], *y)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.dedup_by(|b, a| a.0 == b.0);
        return Ok(Box::new(move |x: &[f64]| interpolate_1d(&pts, x[0])));
    }
    Ok(Box::new(move |x: &[f64]| {
        let mut best = (f64::INFINITY, 0.0);
        for (q, y) in &pairs {
            let d2: f64 = q.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < best.0 {
                best = (d2, *y);
            }
        }
        best.1
    }))
}

fn interpolate_1d(pts: &[(f64, f64)], x: f64) -> f64 {
    let i = pts.partition_point(|p| p.0 <= x);
    if i == 0 {
        return pts[0].1;
    }
    if i == pts.len() {
        return pts[i - 1].1;
    }
    let (x0, y0) = pts[i - 1];
    let (x1, y1) = pts[i];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Predicts 0 everywhere.
pub fn zero_ic_learner(queries: Vec<Vec<f64>>) -> Result<InContextLearner> {
    InContextLearner::new("zero", queries, Predictor::general(|_| Ok(Box::new(|_| 0.0))))
}
