//! Task families: cubical paths on `[0,1]^d`, pointed-value tasks and
//! address-spike tasks on `[0,1]`, plus dyadic cube indexing.
//!
//! Tasks are evaluated with the direct reference formulas (never through
//! gadget networks) so they can act as ground truth for the learners.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gadgets::{bump_reference, hat_reference, BumpSpec, HatSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskError {
    #[error("expected a point of dimension {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid cube: {0}")]
    InvalidCube(String),
    #[error("invalid cubical path: {0}")]
    InvalidPath(String),
    #[error("constraint violated: {0}")]
    Constraint(String),
    #[error("entry {index} = {value} lies outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("operation requires an invertible-address hard function")]
    WrongMode,
}

pub type Result<T, E = TaskError> = std::result::Result<T, E>;

/// Closed real interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const UNIT: Interval = Interval { lo: 0.0, hi: 1.0 };
    pub const ADDRESS: Interval = Interval { lo: 2.0 / 3.0, hi: 1.0 };

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi < self.lo
    }
}

/// Dyadic cube `Π [k_i 2^{-n}, (k_i + 1) 2^{-n}]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CubeIndex {
    pub level: u32,
    pub index: Vec<u64>,
}

/// Enumeration `ε^1, …, ε^{2^d}` of `{-1, +1}^d`: bit `i` of `j` set means
/// `ε_i = +1`.
pub fn sign_vectors(d: usize) -> Vec<Vec<f64>> {
    (0..1usize << d)
        .map(|j| (0..d).map(|i| if (j >> i) & 1 == 1 { 1.0 } else { -1.0 }).collect())
        .collect()
}

impl CubeIndex {
    pub fn new(level: u32, index: Vec<u64>) -> Result<Self> {
        if index.is_empty() {
            return Err(TaskError::InvalidCube("zero dimension".into()));
        }
        if level >= 63 {
            return Err(TaskError::InvalidCube(format!("level {level} too deep")));
        }
        let cells = 1u64 << level;
        if let Some(k) = index.iter().find(|k| **k >= cells) {
            return Err(TaskError::InvalidCube(format!(
                "index {k} outside 0..{cells} at level {level}"
            )));
        }
        Ok(Self { level, index })
    }

    pub fn root(d: usize) -> Self {
        Self {
            level: 0,
            index: vec![0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.index.len()
    }

    pub fn side_length(&self) -> f64 {
        (-(self.level as f64)).exp2()
    }

    /// `(c(Q), ℓ(Q))` with `c = (k + ½) 2^{-n}`.
    pub fn geometry(&self) -> (Vec<f64>, f64) {
        let side = self.side_length();
        let center = self.index.iter().map(|&k| (k as f64 + 0.5) * side).collect();
        (center, side)
    }

    pub fn center(&self) -> Vec<f64> {
        self.geometry().0
    }

    /// The `2^d` children in sign-vector order: child `j` has center
    /// `c(Q) + 2^{-(n+2)} ε^j`.
    pub fn children(&self) -> Vec<CubeIndex> {
        sign_vectors(self.dim())
            .into_iter()
            .map(|eps| CubeIndex {
                level: self.level + 1,
                index: self
                    .index
                    .iter()
                    .zip(&eps)
                    .map(|(k, e)| 2 * k + u64::from(*e > 0.0))
                    .collect(),
            })
            .collect()
    }

    pub fn parent(&self) -> Option<CubeIndex> {
        (self.level > 0).then(|| CubeIndex {
            level: self.level - 1,
            index: self.index.iter().map(|k| k / 2).collect(),
        })
    }

    /// Membership under the half-open convention: cells are
    /// `[k 2^{-n}, (k+1) 2^{-n})` per axis except the last one, which is closed.
    pub fn contains_half_open(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(&self.index)
                .all(|(xi, k)| cell_of(*xi, self.level) == Some(*k))
    }

    /// Closed-cube membership.
    pub fn contains_closed(&self, x: &[f64]) -> bool {
        let side = self.side_length();
        x.len() == self.dim()
            && x.iter().zip(&self.index).all(|(xi, k)| {
                let lo = *k as f64 * side;
                *xi >= lo && *xi <= lo + side
            })
    }

    pub fn bump(&self, eta: f64) -> BumpSpec {
        let (center, side) = self.geometry();
        BumpSpec {
            center,
            side_length: side,
            eta,
        }
    }
}

/// Cell index of coordinate `x` at `level` under the half-open convention;
/// `None` outside `[0, 1]`.
pub fn cell_of(x: f64, level: u32) -> Option<u64> {
    if !(0.0..=1.0).contains(&x) {
        return None;
    }
    let cells = 1u64 << level;
    Some(((x * cells as f64).floor() as u64).min(cells - 1))
}

/// Nested dyadic cubes `Q^{(1)} ⊃ … ⊃ Q^{(L)}`, one per level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<CubeIndex>", into = "Vec<CubeIndex>")]
pub struct CubicalPath {
    cubes: Vec<CubeIndex>,
}

impl TryFrom<Vec<CubeIndex>> for CubicalPath {
    type Error = TaskError;
    fn try_from(cubes: Vec<CubeIndex>) -> Result<Self> {
        CubicalPath::new(cubes)
    }
}

impl From<CubicalPath> for Vec<CubeIndex> {
    fn from(p: CubicalPath) -> Self {
        p.cubes
    }
}

impl CubicalPath {
    pub fn new(cubes: Vec<CubeIndex>) -> Result<Self> {
        let first = cubes
            .first()
            .ok_or_else(|| TaskError::InvalidPath("depth must be at least 1".into()))?;
        let d = first.dim();
        for (n, cube) in cubes.iter().enumerate() {
            CubeIndex::new(cube.level, cube.index.clone())?;
            if cube.dim() != d {
                return Err(TaskError::InvalidPath(format!("cube {n} has dimension {}", cube.dim())));
            }
            if cube.level as usize != n + 1 {
                return Err(TaskError::InvalidPath(format!(
                    "cube {n} sits at level {}, expected {}",
                    cube.level,
                    n + 1
                )));
            }
            if n > 0 && cube.parent().as_ref() != Some(&cubes[n - 1]) {
                return Err(TaskError::InvalidPath(format!(
                    "cube at level {} is not a child of its predecessor",
                    cube.level
                )));
            }
        }
        Ok(Self { cubes })
    }

    /// Path through independent uniform child choices.
    pub fn random<R: Rng + ?Sized>(d: usize, depth: usize, rng: &mut R) -> Self {
        let mut cur = CubeIndex::root(d);
        let mut cubes = Vec::with_capacity(depth);
        for _ in 0..depth {
            let children = cur.children();
            cur = children[rng.gen_range(0..children.len())].clone();
            cubes.push(cur.clone());
        }
        Self { cubes }
    }

    /// The path `ancestors(tip) ∪ {tip}`; `tip.level` becomes the depth.
    pub fn ending_at(tip: &CubeIndex) -> Result<Self> {
        let mut cubes = vec![tip.clone()];
        while let Some(p) = cubes.last().and_then(CubeIndex::parent) {
            if p.level == 0 {
                break;
            }
            cubes.push(p);
        }
        cubes.reverse();
        Self::new(cubes)
    }

    pub fn cubes(&self) -> &[CubeIndex] {
        &self.cubes
    }

    pub fn depth(&self) -> usize {
        self.cubes.len()
    }

    pub fn dim(&self) -> usize {
        self.cubes[0].dim()
    }

    pub fn centers(&self) -> Vec<Vec<f64>> {
        self.cubes.iter().map(CubeIndex::center).collect()
    }
}

/// `f^Γ(x) = Σ_n θ_{Q^{(n)}}(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathTask {
    pub path: CubicalPath,
    pub eta: f64,
}

impl PathTask {
    pub fn new(path: CubicalPath, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta < 0.5) {
            return Err(TaskError::Constraint(format!("eta = {eta} must lie in (0, 1/2)")));
        }
        Ok(Self { path, eta })
    }

    pub fn random<R: Rng + ?Sized>(d: usize, depth: usize, eta: f64, rng: &mut R) -> Result<Self> {
        Self::new(CubicalPath::random(d, depth, rng), eta)
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.path.dim() {
            return Err(TaskError::DimensionMismatch {
                expected: self.path.dim(),
                actual: x.len(),
            });
        }
        Ok(self
            .path
            .cubes()
            .iter()
            .map(|q| bump_reference(&q.bump(self.eta), x).expect("dimension checked"))
            .sum())
    }

    /// Per-axis kinks: cube faces and plateau faces of every bump.
    pub fn axis_breakpoints(&self) -> Vec<Vec<f64>> {
        let mut axes = vec![Vec::new(); self.path.dim()];
        for cube in self.path.cubes() {
            let (center, side) = cube.geometry();
            for (axis, c) in axes.iter_mut().zip(center) {
                let p = self.eta * side;
                axis.extend([c - side / 2.0, c - p, c, c + p, c + side / 2.0]);
            }
        }
        axes
    }
}

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Named user-supplied stand-in for a hard function.
#[derive(Clone)]
pub struct CustomFn {
    pub name: String,
    pub f: ScalarFn,
}

impl fmt::Debug for CustomFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomFn({})", self.name)
    }
}

impl PartialEq for CustomFn {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && Arc::ptr_eq(&self.f, &other.f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum HardKind {
    /// Multilinear interpolation of seeded pseudorandom node values on a
    /// uniform grid with `resolution` cells per axis.
    SeededPiecewiseLinear { seed: u64, resolution: u32 },
    /// `g(u) = lo + (hi - lo) u_1`: surjective and invertible in `u_1`.
    InvertibleAddress,
    #[serde(skip)]
    Custom(CustomFn),
}

/// Pluggable continuous stand-in for the non-constructive hard function.
/// No hardness is claimed for any of the modes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardFunction {
    #[serde(flatten)]
    pub kind: HardKind,
    pub input_dim: usize,
    pub codomain: Interval,
}

pub const DEFAULT_RESOLUTION: u32 = 8;

impl HardFunction {
    pub fn seeded(seed: u64, input_dim: usize, codomain: Interval) -> Self {
        Self {
            kind: HardKind::SeededPiecewiseLinear {
                seed,
                resolution: DEFAULT_RESOLUTION,
            },
            input_dim,
            codomain,
        }
    }

    /// `g(u) = 2/3 + u_1 / 3` on `[0,1]^input_dim`.
    pub fn invertible_address(input_dim: usize) -> Self {
        Self {
            kind: HardKind::InvertibleAddress,
            input_dim,
            codomain: Interval::ADDRESS,
        }
    }

    /// The closure must be continuous and map into `codomain`; outputs are
    /// clamped into it.
    pub fn custom(
        name: impl Into<String>,
        input_dim: usize,
        codomain: Interval,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            kind: HardKind::Custom(CustomFn {
                name: name.into(),
                f: Arc::new(f),
            }),
            input_dim,
            codomain,
        }
    }

    pub fn evaluate(&self, u: &[f64]) -> Result<f64> {
        if u.len() != self.input_dim {
            return Err(TaskError::DimensionMismatch {
                expected: self.input_dim,
                actual: u.len(),
            });
        }
        let Interval { lo, hi } = self.codomain;
        Ok(match &self.kind {
            HardKind::InvertibleAddress => lo + (hi - lo) * u[0].clamp(0.0, 1.0),
            HardKind::SeededPiecewiseLinear { seed, resolution } => lo + (hi - lo) * multilinear(*seed, *resolution, u),
            HardKind::Custom(c) => (c.f)(u).clamp(lo, hi),
        })
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Node value in `[0, 1)` for flat grid index `node`.
fn node_value(seed: u64, node: u64) -> f64 {
    let h = splitmix64(splitmix64(seed) ^ node.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn multilinear(seed: u64, resolution: u32, u: &[f64]) -> f64 {
    let r = resolution.max(1) as u64;
    let nodes_per_axis = r + 1;
    let cells: Vec<(u64, f64)> = u
        .iter()
        .map(|v| {
            let t = v.clamp(0.0, 1.0) * r as f64;
            let i = (t.floor() as u64).min(r - 1);
            (i, t - i as f64)
        })
        .collect();
    let mut total = 0.0;
    for corner in 0..1u64 << u.len() {
        let mut weight = 1.0;
        let mut flat = 0u64;
        for (axis, (i, frac)) in cells.iter().enumerate() {
            let up = (corner >> axis) & 1 == 1;
            weight *= if up { *frac } else { 1.0 - frac };
            flat = flat * nodes_per_axis + i + u64::from(up);
        }
        if weight != 0.0 {
            total += weight * node_value(seed, flat);
        }
    }
    total
}

/// `τ(t) = 2 min{t, 1 - t}` componentwise.
pub fn fold_tau(s: &[f64]) -> Result<Vec<f64>> {
    s.iter()
        .enumerate()
        .map(|(index, &value)| {
            if (0.0..=1.0).contains(&value) {
                Ok(2.0 * value.min(1.0 - value))
            } else {
                Err(TaskError::OutOfRange { index, value })
            }
        })
        .collect()
}

/// Some `s ∈ [0,1]^{input_dim}` with `g(τ(s)) = y` for the invertible-address
/// mode: `s_1 = τ^{-1}(g^{-1}(y))` on the increasing branch, other entries 0.
pub fn invert_address(h: &HardFunction, y: f64) -> Result<Vec<f64>> {
    if h.kind != HardKind::InvertibleAddress {
        return Err(TaskError::WrongMode);
    }
    if !h.codomain.contains(y) {
        return Err(TaskError::Constraint(format!(
            "target {y} outside [{}, {}]",
            h.codomain.lo, h.codomain.hi
        )));
    }
    let u1 = (y - h.codomain.lo) / h.codomain.len();
    let mut s = vec![0.0; h.input_dim];
    s[0] = u1 / 2.0;
    Ok(s)
}

/// `q_i = (i - 1) / (2(N - 1))` for `i = 1..N`.
pub fn fixed_points(n_budget: usize) -> Vec<f64> {
    (0..n_budget)
        .map(|i| i as f64 / (2.0 * (n_budget as f64 - 1.0)))
        .collect()
}

pub fn default_delta(n_budget: usize) -> f64 {
    1.0 / (12.0 * n_budget as f64)
}

fn check_family(n_budget: usize, delta: f64) -> Result<()> {
    if n_budget < 3 {
        return Err(TaskError::Constraint(format!("N = {n_budget} must be at least 3")));
    }
    if !(delta > 0.0 && delta < 1.0 / (6.0 * n_budget as f64)) {
        return Err(TaskError::Constraint(format!(
            "delta = {delta} must satisfy 0 < delta < 1/(6N) = {}",
            1.0 / (6.0 * n_budget as f64)
        )));
    }
    Ok(())
}

fn check_unit(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(index) => Err(TaskError::OutOfRange {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
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

fn scalar(x: &[f64]) -> Result<f64> {
    match x {
        [v] => Ok(*v),
        _ => Err(TaskError::DimensionMismatch {
            expected: 1,
            actual: x.len(),
        }),
    }
}

/// `f(x) = q* h_{q_1}(x) + Σ_{i=2}^{N-1} s_i h_{q_i}(x) + g(s) h_{q*}(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueTask {
    pub n_budget: usize,
    pub weight_budget: Option<usize>,
    /// `(s_2, …, s_{N-1})`.
    pub s: Vec<f64>,
    pub q_star: f64,
    pub delta: f64,
    pub hard_fn: HardFunction,
}

impl ValueTask {
    pub fn new(n_budget: usize, s: Vec<f64>, q_star: f64, delta: f64, hard_fn: HardFunction) -> Result<Self> {
        check_family(n_budget, delta)?;
        if s.len() != n_budget - 2 {
            return Err(TaskError::Constraint(format!(
                "s has {} entries, expected N - 2 = {}",
                s.len(),
                n_budget - 2
            )));
        }
        check_unit(&s)?;
        if !Interval::ADDRESS.contains(q_star) {
            return Err(TaskError::Constraint(format!("q* = {q_star} must lie in [2/3, 1]")));
        }
        if hard_fn.input_dim != n_budget - 2 {
            return Err(TaskError::Constraint("hard function must read N - 2 inputs".into()));
        }
        Ok(Self {
            n_budget,
            weight_budget: None,
            s,
            q_star,
            delta,
            hard_fn,
        })
    }

    pub fn random<R: Rng + ?Sized>(n_budget: usize, delta: f64, hard_fn: HardFunction, rng: &mut R) -> Result<Self> {
        let s = (0..n_budget.saturating_sub(2)).map(|_| rng.gen::<f64>()).collect();
        let q_star = rng.gen_range(2.0 / 3.0..=1.0);
        Self::new(n_budget, s, q_star, delta, hard_fn)
    }

    pub fn fixed_points(&self) -> Vec<f64> {
        fixed_points(self.n_budget)
    }

    /// `g(s)`, the height of the moving hat.
    pub fn hidden_value(&self) -> f64 {
        self.hard_fn.evaluate(&self.s).expect("validated dimension")
    }

    pub fn evaluate_at(&self, x: f64) -> f64 {
        let q = self.fixed_points();
        let mut total = self.q_star * hat(q[0], self.delta, x);
        for (i, s) in self.s.iter().enumerate() {
            total += s * hat(q[i + 1], self.delta, x);
        }
        total + self.hidden_value() * hat(self.q_star, self.delta, x)
    }

    /// Static supports `[q_i - δ, q_i + δ]` for `i = 1..N`, then the moving one.
    pub fn supports(&self) -> (Vec<Interval>, Interval) {
        let d = self.delta;
        let statics = self
            .fixed_points()
            .into_iter()
            .map(|q| Interval { lo: q - d, hi: q + d })
            .collect();
        (
            statics,
            Interval {
                lo: self.q_star - d,
                hi: self.q_star + d,
            },
        )
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        let mut centers = self.fixed_points();
        centers.push(self.q_star);
        hat_kinks(&centers, self.delta)
    }
}

fn hat_kinks(centers: &[f64], delta: f64) -> Vec<f64> {
    centers.iter().flat_map(|c| [c - delta, *c, c + delta]).collect()
}

/// `f(x) = Σ_{i=1}^{N-1} s_i h_{q_i}(x) + β h_{q*(s)}(x)` with
/// `q*(s) = g(τ(s))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AddressTask {
    pub n_budget: usize,
    /// `(s_1, …, s_{N-1})`.
    pub s: Vec<f64>,
    pub beta: u8,
    pub delta: f64,
    pub address_fn: HardFunction,
}

impl AddressTask {
    pub fn new(n_budget: usize, s: Vec<f64>, beta: u8, delta: f64, address_fn: HardFunction) -> Result<Self> {
        check_family(n_budget, delta)?;
        if s.len() != n_budget - 1 {
            return Err(TaskError::Constraint(format!(
                "s has {} entries, expected N - 1 = {}",
                s.len(),
                n_budget - 1
            )));
        }
        check_unit(&s)?;
        if beta > 1 {
            return Err(TaskError::Constraint(format!("beta = {beta} must be 0 or 1")));
        }
        if address_fn.input_dim != n_budget - 1 {
            return Err(TaskError::Constraint("address function must read N - 1 inputs".into()));
        }
        if address_fn.codomain != Interval::ADDRESS {
            return Err(TaskError::Constraint("address function must map onto [2/3, 1]".into()));
        }
        Ok(Self {
            n_budget,
            s,
            beta,
            delta,
            address_fn,
        })
    }

    pub fn random<R: Rng + ?Sized>(n_budget: usize, delta: f64, address_fn: HardFunction, rng: &mut R) -> Result<Self> {
        let s = (0..n_budget.saturating_sub(1)).map(|_| rng.gen::<f64>()).collect();
        let beta = u8::from(rng.gen::<bool>());
        Self::new(n_budget, s, beta, delta, address_fn)
    }

    pub fn with_beta(&self, beta: u8) -> Result<Self> {
        Self::new(self.n_budget, self.s.clone(), beta, self.delta, self.address_fn.clone())
    }

    pub fn fixed_points(&self) -> Vec<f64> {
        fixed_points(self.n_budget)
    }

    /// `q*(s) = g(ŝ)`.
    pub fn q_star(&self) -> f64 {
        let folded = fold_tau(&self.s).expect("validated range");
        self.address_fn.evaluate(&folded).expect("validated dimension")
    }

    pub fn evaluate_at(&self, x: f64) -> f64 {
        let q = self.fixed_points();
        let mut total = 0.0;
        for (s, qi) in self.s.iter().zip(&q) {
            total += s * hat(*qi, self.delta, x);
        }
        total + f64::from(self.beta) * hat(self.q_star(), self.delta, x)
    }

    /// Static supports for `i = 1..N-1`, then the moving one.
    pub fn supports(&self) -> (Vec<Interval>, Interval) {
        let d = self.delta;
        let statics = self.fixed_points()[..self.n_budget - 1]
            .iter()
            .map(|q| Interval { lo: q - d, hi: q + d })
            .collect();
        let q = self.q_star();
        (statics, Interval { lo: q - d, hi: q + d })
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        let mut centers = self.fixed_points()[..self.n_budget - 1].to_vec();
        centers.push(self.q_star());
        hat_kinks(&centers, self.delta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Path,
    Value,
    Address,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Path => "path",
            Family::Value => "value",
            Family::Address => "address",
        })
    }
}

/// A member of one of the three families. Serializes as a replayable
/// descriptor tagged by family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Task {
    Path(PathTask),
    Value(ValueTask),
    Address(AddressTask),
}

impl Task {
    pub fn family(&self) -> Family {
        match self {
            Task::Path(_) => Family::Path,
            Task::Value(_) => Family::Value,
            Task::Address(_) => Family::Address,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Task::Path(t) => t.path.dim(),
            Task::Value(_) | Task::Address(_) => 1,
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        match self {
            Task::Path(t) => t.evaluate(x),
            Task::Value(t) => Ok(t.evaluate_at(scalar(x)?)),
            Task::Address(t) => Ok(t.evaluate_at(scalar(x)?)),
        }
    }

    /// Kink coordinates of the piecewise-linear structure, per axis.
    pub fn axis_breakpoints(&self) -> Vec<Vec<f64>> {
        match self {
            Task::Path(t) => t.axis_breakpoints(),
            Task::Value(t) => vec![t.breakpoints()],
            Task::Address(t) => vec![t.breakpoints()],
        }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string(self)
    }

    pub fn from_json(text: &str) -> serde_json::Result<Task> {
        serde_json::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cube(level: u32, index: &[u64]) -> CubeIndex {
        CubeIndex::new(level, index.to_vec()).unwrap()
    }

    #[test]
    fn geometry_examples() {
        assert_eq!(cube(1, &[0]).geometry(), (vec![0.25], 0.5));
        assert_eq!(cube(2, &[3, 0]).geometry(), (vec![0.875, 0.125], 0.25));
        assert_eq!(CubeIndex::root(3).geometry(), (vec![0.5; 3], 1.0));
        assert!(CubeIndex::new(1, vec![2]).is_err());
    }

    #[test]
    fn children_examples() {
        let kids = cube(1, &[0]).children();
        assert_eq!(kids, vec![cube(2, &[0]), cube(2, &[1])]);

        let root = CubeIndex::root(2);
        let centers: Vec<Vec<f64>> = root.children().iter().map(CubeIndex::center).collect();
        assert_eq!(
            centers,
            vec![vec![0.25, 0.25], vec![0.75, 0.25], vec![0.25, 0.75], vec![0.75, 0.75]]
        );
        // Displacement formula c + 2^{-(n+2)} ε^j.
        let parent = cube(2, &[1, 2]);
        let (c, side) = parent.geometry();
        for (child, eps) in parent.children().iter().zip(sign_vectors(2)) {
            let expect: Vec<f64> = c.iter().zip(&eps).map(|(c, e)| c + side / 4.0 * e).collect();
            assert_eq!(child.center(), expect);
            assert_eq!(child.parent().as_ref(), Some(&parent));
        }
    }

    #[test]
    fn children_tile_parent() {
        let parent = cube(1, &[1, 0]);
        let side = parent.side_length();
        let mut corners: Vec<(u64, u64)> = Vec::new();
        for child in parent.children() {
            let (c, s) = child.geometry();
            assert_eq!(s, side / 2.0);
            corners.push((((c[0] - s / 2.0) / s) as u64, ((c[1] - s / 2.0) / s) as u64));
        }
        corners.sort();
        assert_eq!(corners, vec![(2, 0), (2, 1), (3, 0), (3, 1)]);
    }

    #[test]
    fn path_validation() {
        assert!(CubicalPath::new(vec![]).is_err());
        assert!(CubicalPath::new(vec![cube(1, &[0]), cube(2, &[2])]).is_err());
        assert!(CubicalPath::new(vec![cube(2, &[0])]).is_err());
        let ok = CubicalPath::new(vec![cube(1, &[0]), cube(2, &[1])]).unwrap();
        assert_eq!(CubicalPath::ending_at(&cube(2, &[1])).unwrap(), ok);
    }

    #[test]
    fn path_task_examples() {
        let path = CubicalPath::new(vec![cube(1, &[0]), cube(2, &[1])]).unwrap();
        let task = PathTask::new(path, 0.25).unwrap();
        // Level-1 plateau covers 1/4; the level-2 bump vanishes at its
        // sibling centers and at 1/4 itself is the cube corner.
        assert_eq!(task.evaluate(&[0.25]).unwrap(), 1.0);
        assert_eq!(task.evaluate(&[0.375]).unwrap(), 2.0);
        assert_eq!(task.evaluate(&[0.75]).unwrap(), 0.0);
        assert!(task.evaluate(&[0.1, 0.2]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let t = PathTask::random(2, 3, 0.25, &mut rng).unwrap();
            let deepest = t.path.cubes().last().unwrap().center();
            let v = t.evaluate(&deepest).unwrap();
            let oracle: f64 = t
                .path
                .cubes()
                .iter()
                .map(|q| bump_reference(&q.bump(0.25), &deepest).unwrap())
                .sum();
            assert_eq!(v, oracle);
            assert!((0.0..=3.0).contains(&v));
        }
    }

    #[test]
    fn fold_examples() {
        assert_eq!(fold_tau(&[0.0, 1.0, 0.5]).unwrap(), vec![0.0, 0.0, 1.0]);
        assert_eq!(fold_tau(&[0.25, 0.75]).unwrap(), vec![0.5, 0.5]);
        assert!(matches!(
            fold_tau(&[0.2, 1.5]),
            Err(TaskError::OutOfRange { index: 1, .. })
        ));
    }

    #[test]
    fn hard_function_modes() {
        let g = HardFunction::invertible_address(4);
        assert_eq!(g.evaluate(&[0.0, 0.3, 0.2, 0.9]).unwrap(), 2.0 / 3.0);
        assert_eq!(g.evaluate(&[1.0, 0.3, 0.2, 0.9]).unwrap(), 1.0);
        assert!(g.evaluate(&[1.0]).is_err());

        let h = HardFunction::seeded(42, 3, Interval::UNIT);
        let u = [0.1, 0.55, 0.93];
        // Frozen at first computation.
        assert_eq!(
            h.evaluate(&u).unwrap(),
            HardFunction::seeded(42, 3, Interval::UNIT).evaluate(&u).unwrap()
        );
        assert_eq!(h.evaluate(&u).unwrap(), SEEDED_42_FIXTURE);
        assert_ne!(
            h.evaluate(&u).unwrap(),
            HardFunction::seeded(43, 3, Interval::UNIT).evaluate(&u).unwrap()
        );
    }

    const SEEDED_42_FIXTURE: f64 = 0.4948148713110849;

    #[test]
    fn seeded_function_is_continuous_and_in_range() {
        let h = HardFunction::seeded(7, 2, Interval::UNIT);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let u = [rng.gen::<f64>(), rng.gen::<f64>()];
            let v = h.evaluate(&u).unwrap();
            assert!((0.0..=1.0).contains(&v));
            let w = h.evaluate(&[u[0] + 1e-9_f64.min(1.0 - u[0]), u[1]]).unwrap();
            // Lipschitz constant is at most resolution * (range) = 8.
            assert!((v - w).abs() <= 8.0 * 1e-9 + 1e-15);
        }
        // Interpolation hits node values exactly at grid nodes.
        let at_node = h.evaluate(&[0.25, 0.5]).unwrap();
        assert_eq!(at_node, node_value(7, 2 * 9 + 4));
    }

    #[test]
    fn invert_address_examples() {
        let g = HardFunction::invertible_address(3);
        assert_eq!(invert_address(&g, 2.0 / 3.0).unwrap(), vec![0.0, 0.0, 0.0]);
        let s = invert_address(&g, 1.0).unwrap();
        assert_eq!(s[0], 0.5);
        assert_eq!(fold_tau(&s).unwrap()[0], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let y = rng.gen_range(2.0 / 3.0..=1.0);
            let s = invert_address(&g, y).unwrap();
            let back = g.evaluate(&fold_tau(&s).unwrap()).unwrap();
            assert!((back - y).abs() <= 1e-12);
        }
        let seeded = HardFunction::seeded(1, 3, Interval::ADDRESS);
        assert_eq!(invert_address(&seeded, 0.8), Err(TaskError::WrongMode));
    }

    #[test]
    fn value_task_examples() {
        let n = 5;
        let delta = default_delta(n);
        let hard = HardFunction::seeded(3, n - 2, Interval::UNIT);
        let task = ValueTask::new(n, vec![0.2, 0.4, 0.9], 0.8, delta, hard).unwrap();
        let q = task.fixed_points();
        assert_eq!(q, vec![0.0, 0.125, 0.25, 0.375, 0.5]);
        assert_eq!(task.evaluate_at(q[0]), 0.8);
        assert_eq!(task.evaluate_at(q[1]), 0.2);
        assert_eq!(task.evaluate_at(q[4]), 0.0);
        assert_eq!(task.evaluate_at(0.8), task.hidden_value());
    }

    #[test]
    fn value_task_constraints() {
        let hard = HardFunction::seeded(3, 1, Interval::UNIT);
        assert!(ValueTask::new(3, vec![0.5], 0.7, 1.0 / 18.0, hard.clone()).is_err());
        assert!(ValueTask::new(3, vec![0.5], 0.5, 0.01, hard.clone()).is_err());
        assert!(ValueTask::new(3, vec![1.5], 0.7, 0.01, hard.clone()).is_err());
        assert!(ValueTask::new(2, vec![], 0.7, 0.01, hard).is_err());
    }

    #[test]
    fn address_task_examples() {
        let n = 4;
        let g = HardFunction::invertible_address(n - 1);
        let task = AddressTask::new(n, vec![0.3, 0.6, 0.1], 1, default_delta(n), g).unwrap();
        for (qi, si) in task.fixed_points().iter().zip(&task.s) {
            assert_eq!(task.evaluate_at(*qi), *si);
        }
        assert_eq!(task.evaluate_at(task.q_star()), 1.0);
        assert_eq!(task.evaluate_at(0.6), 0.0);
        assert!(task.with_beta(2).is_err());
    }

    #[test]
    fn supports_are_separated() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for n in 3..=9 {
            let delta = default_delta(n);
            for _ in 0..20 {
                let value =
                    ValueTask::random(n, delta, HardFunction::seeded(1, n - 2, Interval::UNIT), &mut rng).unwrap();
                let addr = AddressTask::random(n, delta, HardFunction::invertible_address(n - 1), &mut rng).unwrap();
                for (statics, moving) in [value.supports(), addr.supports()] {
                    for w in statics.windows(2) {
                        assert!(w[0].hi < w[1].lo);
                    }
                    for s in &statics {
                        assert!(moving.lo - s.hi >= 1.0 / 6.0 - 2.0 * delta - 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn range_bounds_on_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 6;
        let delta = default_delta(n);
        for _ in 0..10 {
            let v = ValueTask::random(n, delta, HardFunction::seeded(2, n - 2, Interval::UNIT), &mut rng).unwrap();
            let a = AddressTask::random(n, delta, HardFunction::invertible_address(n - 1), &mut rng).unwrap();
            let p = PathTask::random(1, 4, 0.25, &mut rng).unwrap();
            for i in 0..=2000 {
                let x = i as f64 / 2000.0;
                assert!((0.0..=1.0).contains(&v.evaluate_at(x)));
                assert!((0.0..=1.0).contains(&a.evaluate_at(x)));
                assert!((0.0..=4.0).contains(&p.evaluate(&[x]).unwrap()));
            }
        }
    }

    #[test]
    fn fold_collision_keeps_address() {
        let n = 5;
        let g = HardFunction::invertible_address(n - 1);
        let a = AddressTask::new(n, vec![0.0, 0.3, 0.7, 0.2], 1, default_delta(n), g.clone()).unwrap();
        let b = AddressTask::new(n, vec![1.0, 0.3, 0.7, 0.2], 1, default_delta(n), g).unwrap();
        assert_eq!(a.q_star().to_bits(), b.q_star().to_bits());
    }

    #[test]
    fn descriptors_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let tasks = vec![
            Task::Path(PathTask::random(2, 3, 0.25, &mut rng).unwrap()),
            Task::Value(ValueTask::random(5, 0.01, HardFunction::seeded(9, 3, Interval::UNIT), &mut rng).unwrap()),
            Task::Address(AddressTask::random(5, 0.01, HardFunction::invertible_address(4), &mut rng).unwrap()),
        ];
        for t in tasks {
            let back = Task::from_json(&t.to_json().unwrap()).unwrap();
            assert_eq!(back, t);
        }
        let custom = HardFunction::custom("half", 1, Interval::UNIT, |_| 0.5);
        let task = Task::Value(ValueTask::new(3, vec![0.5], 0.7, 0.01, custom).unwrap());
        assert!(task.to_json().is_err());
        assert!(Task::from_json(r#"{"family":"path","path":[{"level":2,"index":[0]}],"eta":0.25}"#).is_err());
    }
}
