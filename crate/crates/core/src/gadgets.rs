//! Closed-form ReLU constructions.
//!
//! Every gadget except [`mult_eps`] represents its target function exactly;
//! the only deviation from the reference formulas is floating-point rounding.
//! Reference (direct formula) evaluators live next to each gadget and serve as
//! test oracles.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{relu, AffineLayer, InputLayout, Matrix, MlpNetwork};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GadgetError {
    #[error("max gadget needs at least one input")]
    EmptyMax,
    #[error("hat half-width must be positive, got {0}")]
    InvalidHalfWidth(f64),
    #[error("invalid bump: {0}")]
    InvalidBump(String),
    #[error("eps must lie in (0, 1), got {0}")]
    EpsOutOfRange(f64),
    #[error("expected {expected} coordinates, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
}

pub type Result<T, E = GadgetError> = std::result::Result<T, E>;

fn compose(outer: &MlpNetwork, inner: &MlpNetwork) -> MlpNetwork {
    MlpNetwork::compose(outer, inner).expect("gadget dimensions chain")
}

fn layer(rows: &[Vec<f64>], bias: Vec<f64>) -> AffineLayer {
    AffineLayer::from_rows(rows, bias)
}

fn net(layers: Vec<AffineLayer>) -> MlpNetwork {
    MlpNetwork::new(layers).expect("gadget layers chain")
}

/// `|u| = ReLU(u) + ReLU(-u)`.
pub fn abs_gadget() -> MlpNetwork {
    net(vec![
        layer(&[vec![1.0], vec![-1.0]], vec![0.0, 0.0]),
        layer(&[vec![1.0, 1.0]], vec![0.0]),
    ])
}

/// `χ(t) = ReLU(t) - ReLU(t - 1)`: identity on `[0, 1]`, clamped outside.
pub fn selector_gadget() -> MlpNetwork {
    net(vec![
        layer(&[vec![1.0], vec![1.0]], vec![0.0, -1.0]),
        layer(&[vec![1.0, -1.0]], vec![0.0]),
    ])
}

pub fn selector_reference(t: f64) -> f64 {
    relu(t) - relu(t - 1.0)
}

/// One stage of the balanced max tree: pairs `(a, b)` become
/// `ReLU(a - b) + ReLU(b) - ReLU(-b)`, an odd leftover passes through.
fn max_stage(k: usize) -> MlpNetwork {
    let pairs = k / 2;
    let odd = k % 2 == 1;
    let hidden = 3 * pairs + if odd { 2 } else { 0 };
    let out = pairs + usize::from(odd);
    let mut w1 = Matrix::zeros(hidden, k);
    let mut w2 = Matrix::zeros(out, hidden);
    for p in 0..pairs {
        let (a, b) = (2 * p, 2 * p + 1);
        let h = 3 * p;
        w1[(h, a)] = 1.0;
        w1[(h, b)] = -1.0;
        w1[(h + 1, b)] = 1.0;
        w1[(h + 2, b)] = -1.0;
        w2[(p, h)] = 1.0;
        w2[(p, h + 1)] = 1.0;
        w2[(p, h + 2)] = -1.0;
    }
    if odd {
        let h = 3 * pairs;
        w1[(h, k - 1)] = 1.0;
        w1[(h + 1, k - 1)] = -1.0;
        w2[(pairs, h)] = 1.0;
        w2[(pairs, h + 1)] = -1.0;
    }
    net(vec![
        AffineLayer::new(w1, vec![0.0; hidden]).expect("max stage"),
        AffineLayer::new(w2, vec![0.0; out]).expect("max stage"),
    ])
}

/// Exact maximum of `d` reals via a balanced tree of pairwise maxima
/// (`⌈log₂ d⌉` stages, `O(d)` weights).
pub fn max_gadget(d: usize) -> Result<MlpNetwork> {
    if d == 0 {
        return Err(GadgetError::EmptyMax);
    }
    let mut acc = MlpNetwork::identity(d);
    let mut width = d;
    while width > 1 {
        acc = compose(&max_stage(width), &acc);
        width = width.div_ceil(2);
    }
    Ok(acc)
}

/// Tent `h_a(x) = (1 - |x - a| / δ)_+`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HatSpec {
    pub center: f64,
    pub half_width: f64,
}

impl HatSpec {
    pub fn new(center: f64, half_width: f64) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(GadgetError::InvalidHalfWidth(half_width));
        }
        Ok(Self { center, half_width })
    }
}

pub fn hat_reference(spec: &HatSpec, x: f64) -> f64 {
    relu(1.0 - (x - spec.center).abs() / spec.half_width)
}

/// Hat with a variable center: inputs `(a, x)`, output `h_a(x)` for the
/// fixed half-width.
pub fn hat_var_gadget(half_width: f64) -> Result<MlpNetwork> {
    HatSpec::new(0.0, half_width)?;
    let inv = 1.0 / half_width;
    Ok(net(vec![
        layer(&[vec![-1.0, 1.0], vec![1.0, -1.0]], vec![0.0, 0.0]),
        layer(&[vec![-inv, -inv]], vec![1.0]),
        layer(&[vec![1.0]], vec![0.0]),
    ]))
}

/// Exact `h_a` as a scalar network.
pub fn hat_gadget(spec: &HatSpec) -> Result<MlpNetwork> {
    let var = hat_var_gadget(spec.half_width)?;
    let embed = MlpNetwork::affine(layer(&[vec![0.0], vec![1.0]], vec![spec.center, 0.0]));
    Ok(compose(&var, &embed))
}

/// Cube `Q` of side `2^{-n}` with center `c(Q)` and plateau ratio `η`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpSpec {
    pub center: Vec<f64>,
    pub side_length: f64,
    pub eta: f64,
}

impl BumpSpec {
    pub fn new(center: Vec<f64>, side_length: f64, eta: f64) -> Result<Self> {
        let spec = Self {
            center,
            side_length,
            eta,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn validate(&self) -> Result<()> {
        validate_eta(self.eta)?;
        if self.center.is_empty() {
            return Err(GadgetError::InvalidBump("empty center".into()));
        }
        let level = -self.side_length.log2();
        if !(self.side_length > 0.0 && self.side_length <= 1.0)
            || level.fract() != 0.0
            || self.side_length != (-level).exp2()
        {
            return Err(GadgetError::InvalidBump(format!(
                "side length {} is not 2^-n",
                self.side_length
            )));
        }
        let half = self.side_length / 2.0;
        if let Some(c) = self.center.iter().find(|c| !(**c - half >= 0.0 && **c + half <= 1.0)) {
            return Err(GadgetError::InvalidBump(format!(
                "cube around center coordinate {c} leaves [0,1]"
            )));
        }
        Ok(())
    }
}

fn validate_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta < 0.5) {
        return Err(GadgetError::InvalidBump(format!("eta {eta} outside (0, 1/2)")));
    }
    Ok(())
}

/// `θ_Q(x) = (1 - dist_∞(x, Q_η) / ((½ - η) ℓ(Q)))_+`, evaluated directly.
pub fn bump_reference(spec: &BumpSpec, x: &[f64]) -> Result<f64> {
    if x.len() != spec.dim() {
        return Err(GadgetError::DimensionMismatch {
            expected: spec.dim(),
            actual: x.len(),
        });
    }
    let plateau = spec.eta * spec.side_length;
    // Distance to the closed box [c - ηℓ, c + ηℓ] in the sup norm.
    let dist = spec
        .center
        .iter()
        .zip(x)
        .map(|(c, xi)| {
            let lo = c - plateau;
            let hi = c + plateau;
            if *xi < lo {
                lo - xi
            } else if *xi > hi {
                xi - hi
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    Ok(relu(1.0 - dist / ((0.5 - spec.eta) * spec.side_length)))
}

/// Bump with a variable center `Θ(c, x)`: inputs `(c_1..c_d, x_1..x_d)`.
///
/// Built as `(1 - M_d((|x_i - c_i| - ηℓ)_+) / ((½ - η)ℓ))_+`. The weight
/// count depends only on `d`, never on the level or the center.
pub fn bump_var_gadget(d: usize, side_length: f64, eta: f64) -> Result<MlpNetwork> {
    if d == 0 {
        return Err(GadgetError::InvalidBump("zero dimension".into()));
    }
    validate_eta(eta)?;
    let plateau = eta * side_length;

    // (c, x) -> (x_i - c_i)_+, (c_i - x_i)_+ -> (|x_i - c_i| - ηℓ)_+
    let mut w1 = Matrix::zeros(2 * d, 2 * d);
    let mut w2 = Matrix::zeros(d, 2 * d);
    for i in 0..d {
        w1[(2 * i, d + i)] = 1.0;
        w1[(2 * i, i)] = -1.0;
        w1[(2 * i + 1, d + i)] = -1.0;
        w1[(2 * i + 1, i)] = 1.0;
        w2[(i, 2 * i)] = 1.0;
        w2[(i, 2 * i + 1)] = 1.0;
    }
    let excess = net(vec![
        AffineLayer::new(w1, vec![0.0; 2 * d]).expect("bump layer"),
        AffineLayer::new(w2, vec![-plateau; d]).expect("bump layer"),
        AffineLayer::new(Matrix::identity(d), vec![0.0; d]).expect("bump layer"),
    ]);
    let scale = 1.0 / ((0.5 - eta) * side_length);
    let clamp = net(vec![layer(&[vec![-scale]], vec![1.0]), layer(&[vec![1.0]], vec![0.0])]);
    let max = max_gadget(d)?;
    Ok(compose(&clamp, &compose(&max, &excess)))
}

/// Exact `θ_Q` as a network on `[0,1]^d`.
pub fn bump_gadget(spec: &BumpSpec) -> Result<MlpNetwork> {
    spec.validate()?;
    let d = spec.dim();
    let var = bump_var_gadget(d, spec.side_length, spec.eta)?;
    let mut w = Matrix::zeros(2 * d, d);
    for i in 0..d {
        w[(d + i, i)] = 1.0;
    }
    let mut bias = spec.center.clone();
    bias.extend(std::iter::repeat_n(0.0, d));
    let embed = MlpNetwork::affine(AffineLayer::new(w, bias).expect("embedding"));
    Ok(compose(&var, &embed))
}

/// Sawtooth approximation of `x²` on `[0, 1]`:
/// `x - Σ_{s=1}^{stages} g_s(x) / 4^s` with `g_s` the `s`-fold tent map.
/// Sup error `2^{-2·stages-2}`.
pub fn square_gadget(stages: usize) -> MlpNetwork {
    assert!(stages >= 1, "at least one sawtooth stage");
    // Linear read-outs of the current hidden layer for the current tent
    // iterate `g` and the running approximation `acc`.
    let mut layers = vec![layer(&[vec![1.0], vec![1.0]], vec![0.0, -0.5])];
    let mut g = vec![2.0, -4.0];
    // x - g_1(x)/4 read from (ReLU(x), ReLU(x - 1/2)).
    let mut acc = vec![0.5, 1.0];
    let mut scale = 4.0;
    for _ in 2..=stages {
        scale *= 4.0;
        layers.push(layer(&[g.clone(), g.clone(), acc.clone()], vec![0.0, -0.5, 0.0]));
        g = vec![2.0, -4.0, 0.0];
        acc = vec![-2.0 / scale, 4.0 / scale, 1.0];
    }
    layers.push(layer(&[acc], vec![0.0]));
    net(layers)
}

pub fn mult_stages(eps: f64) -> usize {
    (1.0 / eps).log2().ceil() as usize + 2
}

/// `Mult_ε`: approximates `ab` on `[0,1]²` within `eps`, output clamped to
/// `[0, 1]`, with `O(log(1/eps))` weights.
///
/// Uses `ab = 2((a+b)/2)² - a²/2 - b²/2` with three sawtooth squarers of
/// `⌈log₂(1/eps)⌉ + 2` stages each.
pub fn mult_eps(eps: f64) -> Result<MlpNetwork> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(GadgetError::EpsOutOfRange(eps));
    }
    let sq = square_gadget(mult_stages(eps));
    let squares = MlpNetwork::parallel(
        &[sq.clone(), sq.clone(), sq.clone()],
        &InputLayout::stacked(&[sq.clone(), sq.clone(), sq]),
    )
    .expect("stacked squarers");
    let split = MlpNetwork::affine(layer(&[vec![0.5, 0.5], vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0; 3]));
    let combine = MlpNetwork::affine(layer(&[vec![2.0, -0.5, -0.5]], vec![0.0]));
    let raw = compose(&combine, &compose(&squares, &split));
    Ok(compose(&selector_gadget(), &raw))
}

/// Closed-form reference attached to a catalog gadget.
pub type Reference = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// An exact gadget, its reference formula and the breakpoints of that formula.
pub struct CatalogEntry {
    pub name: &'static str,
    pub parameter: String,
    pub net: MlpNetwork,
    pub reference: Reference,
    pub kinks: Vec<Vec<f64>>,
    /// Random inputs are drawn uniformly from `[lo, hi]^dim`.
    pub lo: f64,
    pub hi: f64,
}

impl CatalogEntry {
    pub fn dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Sup error against the reference over the kinks plus `n_random` seeded
    /// uniform inputs. Returns the error and the number of inputs used.
    pub fn sup_error(&self, n_random: usize, seed: u64) -> (f64, usize) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = self.dim();
        let mut worst = 0.0f64;
        let mut check = |x: &[f64]| {
            let got = self.net.evaluate_scalar(x).expect("catalog input width");
            let err = (got - (self.reference)(x)).abs();
            worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
        };
        for k in &self.kinks {
            check(k);
        }
        let mut x = vec![0.0; d];
        for _ in 0..n_random {
            for xi in x.iter_mut() {
                *xi = rng.gen_range(self.lo..=self.hi);
            }
            check(&x);
        }
        (worst, self.kinks.len() + n_random)
    }
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(*v);
                    p
                })
            })
            .collect()
    })
}

fn max_kinks(d: usize) -> Vec<Vec<f64>> {
    // Ties between any two coordinates, all-equal points and zero coordinates
    // (the pairwise stage also bends at b = 0).
    let mut out = vec![vec![0.0; d], vec![0.3; d], vec![-0.7; d]];
    for i in 0..d {
        for j in i + 1..d {
            let mut p: Vec<f64> = (0..d).map(|k| -0.5 + 0.05 * k as f64).collect();
            p[i] = 0.5;
            p[j] = 0.5;
            out.push(p);
        }
        let mut p: Vec<f64> = (0..d).map(|k| 0.1 * k as f64 - 0.4).collect();
        p[i] = 0.0;
        out.push(p);
    }
    out
}

fn bump_entry(center: Vec<f64>, side: f64, eta: f64) -> CatalogEntry {
    let spec = BumpSpec::new(center, side, eta).expect("catalog bump");
    let axes: Vec<Vec<f64>> = spec
        .center
        .iter()
        .map(|c| vec![c - side / 2.0, c - eta * side, *c, c + eta * side, c + side / 2.0])
        .collect();
    let parameter = format!("d={} side={} eta={}", spec.dim(), side, eta);
    let net = bump_gadget(&spec).expect("catalog bump");
    CatalogEntry {
        name: "bump",
        parameter,
        net,
        kinks: cartesian(&axes),
        reference: Box::new(move |x| bump_reference(&spec, x).expect("bump width")),
        lo: 0.0,
        hi: 1.0,
    }
}

fn hat_entry(center: f64, delta: f64) -> CatalogEntry {
    let spec = HatSpec::new(center, delta).expect("catalog hat");
    CatalogEntry {
        name: "hat",
        parameter: format!("center={center} delta={delta}"),
        net: hat_gadget(&spec).expect("catalog hat"),
        reference: Box::new(move |x| hat_reference(&spec, x[0])),
        kinks: [center - delta, center, center + delta]
            .iter()
            .map(|v| vec![*v])
            .collect(),
        lo: 0.0,
        hi: 1.0,
    }
}

/// Every exact gadget family at representative parameters: abs, selector,
/// max for `d = 1..=8`, fixed and variable-center hats and bumps.
pub fn exact_catalog() -> Vec<CatalogEntry> {
    let mut out = vec![
        CatalogEntry {
            name: "abs",
            parameter: String::new(),
            net: abs_gadget(),
            reference: Box::new(|x| x[0].abs()),
            kinks: vec![vec![0.0]],
            lo: -2.0,
            hi: 2.0,
        },
        CatalogEntry {
            name: "selector",
            parameter: String::new(),
            net: selector_gadget(),
            reference: Box::new(|x| x[0].clamp(0.0, 1.0)),
            kinks: vec![vec![0.0], vec![1.0]],
            lo: -1.0,
            hi: 2.0,
        },
    ];
    for d in 1..=8 {
        out.push(CatalogEntry {
            name: "max",
            parameter: format!("d={d}"),
            net: max_gadget(d).expect("d >= 1"),
            reference: Box::new(|x| x.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
            kinks: max_kinks(d),
            lo: -1.0,
            hi: 1.0,
        });
    }
    out.push(hat_entry(0.4, 0.1));
    out.push(hat_entry(0.0, 0.05));
    out.push(hat_entry(5.0 / 6.0, 1.0 / 60.0));
    let delta = 1.0 / 60.0;
    let var_kinks = cartesian(&[vec![0.2, 0.5, 0.9], vec![0.0]])
        .into_iter()
        .flat_map(|p| [-delta, 0.0, delta].map(|o| vec![p[0], p[0] + o]))
        .collect();
    out.push(CatalogEntry {
        name: "hat-var",
        parameter: format!("delta={delta}"),
        net: hat_var_gadget(delta).expect("positive width"),
        reference: Box::new(move |x| (1.0 - (x[1] - x[0]).abs() / delta).max(0.0)),
        kinks: var_kinks,
        lo: 0.0,
        hi: 1.0,
    });
    out.push(bump_entry(vec![0.5], 1.0, 0.25));
    out.push(bump_entry(vec![0.375], 0.25, 0.25));
    out.push(bump_entry(vec![0.25, 0.75], 0.5, 0.25));
    out.push(bump_entry(vec![0.5625, 0.1875], 0.125, 0.1));
    out.push(bump_entry(vec![0.25, 0.75, 0.25], 0.5, 0.25));
    out.push(bump_entry(vec![0.125, 0.375, 0.625], 0.25, 0.4));
    out
}
