//! Fully connected ReLU networks.
//!
//! A network is a chain of affine layers `x -> W x + b`. ReLU is applied
//! componentwise after every layer except the last, so the final map is
//! purely affine. Weights are stored row-major with shape `(out_dim, in_dim)`.
//!
//! Besides evaluation this module provides the algebra used to assemble the
//! gadget constructions: sequential composition with seam merging,
//! block-diagonal stacking with exact depth padding, constant folding of bound
//! inputs, nonzero-parameter counting and a JSON interchange format.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("layer {layer}: expected input of dimension {expected}, got {actual}")]
    DimensionMismatch {
        layer: usize,
        expected: usize,
        actual: usize,
    },
    #[error("layer {layer}: weight rows ({rows}) do not match bias length ({bias})")]
    BiasLength { layer: usize, rows: usize, bias: usize },
    #[error("layer {layer}: row {row} has {actual} columns, expected {expected}")]
    RaggedWeights {
        layer: usize,
        row: usize,
        expected: usize,
        actual: usize,
    },
    #[error("layer {layer}: non-finite parameter")]
    NonFinite { layer: usize },
    #[error("layer {layer}: empty weight matrix")]
    EmptyLayer { layer: usize },
    #[error("network has no layers")]
    NoLayers,
    #[error("parallel stacking needs at least one network")]
    EmptyParallel,
    #[error("inconsistent input slices: {0}")]
    InvalidSlices(String),
    #[error("cannot bind {bound} of {available} inputs")]
    InvalidBinding { bound: usize, available: usize },
    #[error("parse error{}: {message}", layer.map(|l| format!(" in layer {l}")).unwrap_or_default())]
    Parse { layer: Option<usize>, message: String },
}

pub type Result<T, E = NetError> = std::result::Result<T, E>;

#[inline]
pub fn relu(t: f64) -> f64 {
    if t > 0.0 {
        t
    } else {
        0.0
    }
}

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    /// Builds a matrix from nested rows; all rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn mul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "matrix product shape");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs[(k, j)];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.mul_vec_into(x, &mut out);
        out
    }

    fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.row(r).iter().zip(x).map(|(w, v)| w * v).sum();
        }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.to_rows()).finish()
    }
}

/// One affine map `x -> W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineLayer {
    weights: Matrix,
    bias: Vec<f64>,
}

impl AffineLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        Self::checked(weights, bias, 0)
    }

    fn checked(weights: Matrix, bias: Vec<f64>, layer: usize) -> Result<Self> {
        if weights.rows() != bias.len() {
            return Err(NetError::BiasLength {
                layer,
                rows: weights.rows(),
                bias: bias.len(),
            });
        }
        if weights.rows() == 0 || weights.cols() == 0 {
            return Err(NetError::EmptyLayer { layer });
        }
        if !weights.as_slice().iter().chain(&bias).all(|v| v.is_finite()) {
            return Err(NetError::NonFinite { layer });
        }
        Ok(Self { weights, bias })
    }

    /// Convenience constructor from nested rows. Panics on malformed input;
    /// meant for hand-written constant layers.
    pub fn from_rows(rows: &[Vec<f64>], bias: Vec<f64>) -> Self {
        Self::new(Matrix::from_rows(rows), bias).expect("well-formed layer")
    }

    /// Layer selecting input coordinates: output `k` is `x[indices[k]]`.
    pub fn select(input_dim: usize, indices: &[usize]) -> Self {
        let mut w = Matrix::zeros(indices.len(), input_dim);
        for (r, &c) in indices.iter().enumerate() {
            w[(r, c)] = 1.0;
        }
        Self::new(w, vec![0.0; indices.len()]).expect("selection layer")
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.weights.mul_vec(x);
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o += b;
        }
        out
    }

    pub fn nonzeros(&self) -> usize {
        self.weights
            .as_slice()
            .iter()
            .chain(&self.bias)
            .filter(|v| **v != 0.0)
            .count()
    }

    /// `self ∘ inner` as a single affine map.
    fn after(&self, inner: &AffineLayer) -> AffineLayer {
        let weights = self.weights.mul(&inner.weights);
        let mut bias = self.weights.mul_vec(&inner.bias);
        for (b, own) in bias.iter_mut().zip(&self.bias) {
            *b += own;
        }
        AffineLayer { weights, bias }
    }
}

/// How the members of a [`MlpNetwork::parallel`] stack read the input.
#[derive(Clone, Debug, PartialEq)]
pub enum InputLayout {
    /// Every member reads the whole input vector.
    Shared,
    /// Member `k` reads `input[ranges[k]]`; ranges must be pairwise disjoint
    /// and lie inside `0..input_dim`.
    Slices {
        input_dim: usize,
        ranges: Vec<Range<usize>>,
    },
}

impl InputLayout {
    /// Members read consecutive, non-overlapping slices in order.
    pub fn stacked(nets: &[MlpNetwork]) -> Self {
        let mut start = 0;
        let ranges = nets
            .iter()
            .map(|n| {
                let r = start..start + n.input_dim();
                start = r.end;
                r
            })
            .collect();
        InputLayout::Slices {
            input_dim: start,
            ranges,
        }
    }
}

/// A ReLU multilayer perceptron. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpNetwork {
    layers: Vec<AffineLayer>,
}

impl MlpNetwork {
    /// Validates that consecutive layer dimensions chain.
    pub fn new(layers: Vec<AffineLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(NetError::NoLayers);
        }
        for (j, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(NetError::DimensionMismatch {
                    layer: j + 1,
                    expected: pair[1].input_dim(),
                    actual: pair[0].output_dim(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn affine(layer: AffineLayer) -> Self {
        Self { layers: vec![layer] }
    }

    pub fn identity(dim: usize) -> Self {
        Self::affine(AffineLayer::new(Matrix::identity(dim), vec![0.0; dim]).expect("identity"))
    }

    /// Network ignoring its input and returning `value`.
    pub fn constant(input_dim: usize, value: &[f64]) -> Self {
        Self::affine(AffineLayer::new(Matrix::zeros(value.len(), input_dim), value.to_vec()).expect("constant layer"))
    }

    /// Affine network reading `x[indices[k]]` into output `k`.
    pub fn select(input_dim: usize, indices: &[usize]) -> Self {
        Self::affine(AffineLayer::select(input_dim, indices))
    }

    pub fn layers(&self) -> &[AffineLayer] {
        &self.layers
    }

    /// Number of affine layers (the depth `L`).
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// Exact forward pass.
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(NetError::DimensionMismatch {
                layer: 0,
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(self.forward(x))
    }

    /// Scalar-output convenience for single-output networks.
    pub fn evaluate_scalar(&self, x: &[f64]) -> Result<f64> {
        let out = self.evaluate(x)?;
        debug_assert_eq!(out.len(), 1);
        Ok(out[0])
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for (j, layer) in self.layers.iter().enumerate() {
            next.clear();
            next.resize(layer.output_dim(), 0.0);
            layer.weights.mul_vec_into(&cur, &mut next);
            for (o, b) in next.iter_mut().zip(&layer.bias) {
                *o += b;
                if j < last {
                    *o = relu(*o);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Number of nonzero entries over all weight matrices and bias vectors.
    pub fn count_weights(&self) -> usize {
        self.layers.iter().map(AffineLayer::nonzeros).sum()
    }

    /// `outer ∘ inner`. The last (affine) layer of `inner` is multiplied into
    /// the first layer of `outer`, so depth is `depth(inner) + depth(outer) - 1`.
    ///
    /// Seam bound: the merged layer has at most `r * (c + 1)` nonzeros, where
    /// `r` is the output width of `outer`'s first layer and `c` the input width
    /// of `inner`'s last layer, so
    /// `count(compose) <= count(outer) + count(inner) + r * (c + 1)`.
    pub fn compose(outer: &MlpNetwork, inner: &MlpNetwork) -> Result<MlpNetwork> {
        if inner.output_dim() != outer.input_dim() {
            return Err(NetError::DimensionMismatch {
                layer: inner.depth(),
                expected: outer.input_dim(),
                actual: inner.output_dim(),
            });
        }
        let (inner_last, inner_front) = inner.layers.split_last().expect("nonempty");
        let mut layers = inner_front.to_vec();
        layers.push(outer.layers[0].after(inner_last));
        layers.extend_from_slice(&outer.layers[1..]);
        Ok(MlpNetwork { layers })
    }

    /// Stacks networks side by side; the output is the concatenation of the
    /// member outputs. Shallower members are padded to the common depth with
    /// exact two-ReLU passthroughs.
    pub fn parallel(nets: &[MlpNetwork], layout: &InputLayout) -> Result<MlpNetwork> {
        if nets.is_empty() {
            return Err(NetError::EmptyParallel);
        }
        let (input_dim, ranges) = match layout {
            InputLayout::Shared => {
                let dim = nets[0].input_dim();
                if let Some(bad) = nets.iter().position(|n| n.input_dim() != dim) {
                    return Err(NetError::InvalidSlices(format!(
                        "member {bad} reads {} inputs, shared input has {dim}",
                        nets[bad].input_dim()
                    )));
                }
                (dim, vec![0..dim; nets.len()])
            }
            InputLayout::Slices { input_dim, ranges } => {
                validate_slices(nets, *input_dim, ranges)?;
                (*input_dim, ranges.clone())
            }
        };

        let depth = nets.iter().map(MlpNetwork::depth).max().expect("nonempty");
        let padded: Vec<MlpNetwork> = nets.iter().map(|n| n.pad_to_depth(depth)).collect();

        let mut layers = Vec::with_capacity(depth);
        for j in 0..depth {
            let rows: usize = padded.iter().map(|n| n.layers[j].output_dim()).sum();
            let cols = if j == 0 {
                input_dim
            } else {
                padded.iter().map(|n| n.layers[j].input_dim()).sum()
            };
            let mut w = Matrix::zeros(rows, cols);
            let mut bias = Vec::with_capacity(rows);
            let mut row_off = 0;
            let mut col_off = 0;
            for (k, net) in padded.iter().enumerate() {
                let layer = &net.layers[j];
                let col_start = if j == 0 { ranges[k].start } else { col_off };
                for r in 0..layer.output_dim() {
                    for c in 0..layer.input_dim() {
                        w[(row_off + r, col_start + c)] = layer.weights[(r, c)];
                    }
                }
                bias.extend_from_slice(&layer.bias);
                row_off += layer.output_dim();
                col_off += layer.input_dim();
            }
            layers.push(AffineLayer { weights: w, bias });
        }
        Ok(MlpNetwork { layers })
    }

    /// Extends the network to `depth` layers without changing its output.
    ///
    /// The last affine map `z` is split into `(ReLU(z), ReLU(-z))`, carried
    /// through identity layers (exact on nonnegative values) and recombined as
    /// `ReLU(z) - ReLU(-z) = z`.
    pub fn pad_to_depth(&self, depth: usize) -> MlpNetwork {
        let extra = depth.saturating_sub(self.depth());
        if extra == 0 {
            return self.clone();
        }
        let (last, front) = self.layers.split_last().expect("nonempty");
        let out = last.output_dim();
        let mut layers = front.to_vec();

        let mut split = Matrix::zeros(2 * out, last.input_dim());
        let mut split_bias = vec![0.0; 2 * out];
        for r in 0..out {
            for c in 0..last.input_dim() {
                split[(r, c)] = last.weights[(r, c)];
                split[(out + r, c)] = -last.weights[(r, c)];
            }
            split_bias[r] = last.bias[r];
            split_bias[out + r] = -last.bias[r];
        }
        layers.push(AffineLayer {
            weights: split,
            bias: split_bias,
        });
        for _ in 1..extra {
            layers.push(AffineLayer {
                weights: Matrix::identity(2 * out),
                bias: vec![0.0; 2 * out],
            });
        }
        let mut merge = Matrix::zeros(out, 2 * out);
        for r in 0..out {
            merge[(r, r)] = 1.0;
            merge[(r, out + r)] = -1.0;
        }
        layers.push(AffineLayer {
            weights: merge,
            bias: vec![0.0; out],
        });
        MlpNetwork { layers }
    }

    /// Binds the first `prefix.len()` inputs to constants and folds every
    /// neuron that no longer depends on the remaining inputs.
    ///
    /// The returned network reads the remaining `input_dim - prefix.len()`
    /// inputs and agrees with the original up to floating-point reassociation.
    pub fn bind_prefix(&self, prefix: &[f64]) -> Result<MlpNetwork> {
        let n_in = self.input_dim();
        if prefix.len() >= n_in {
            return Err(NetError::InvalidBinding {
                bound: prefix.len(),
                available: n_in,
            });
        }
        let free_inputs = n_in - prefix.len();

        // Each node of the current layer is either a folded constant or a
        // reference to a neuron of the rebuilt network.
        let mut nodes: Vec<Node> = prefix
            .iter()
            .map(|&v| Node::Const(v))
            .chain((0..free_inputs).map(Node::Free))
            .collect();
        let mut width = free_inputs;
        let mut layers = Vec::with_capacity(self.depth());
        let last = self.depth() - 1;

        for (j, layer) in self.layers.iter().enumerate() {
            let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
            let mut next = Vec::with_capacity(layer.output_dim());
            for r in 0..layer.output_dim() {
                let mut constant = layer.bias[r];
                let mut free = vec![0.0; width];
                let mut depends = false;
                for (c, node) in nodes.iter().enumerate() {
                    let w = layer.weights[(r, c)];
                    if w == 0.0 {
                        continue;
                    }
                    match *node {
                        Node::Const(v) => constant += w * v,
                        Node::Free(k) => {
                            free[k] = w;
                            depends = true;
                        }
                    }
                }
                if j == last {
                    // Output rows are always kept so the output dimension survives.
                    next.push(Node::Free(rows.len()));
                    rows.push((free, constant));
                } else if depends {
                    next.push(Node::Free(rows.len()));
                    rows.push((free, constant));
                } else {
                    next.push(Node::Const(relu(constant)));
                }
            }
            if rows.is_empty() {
                // Every neuron of this hidden layer folded away: the network is
                // constant from here on.
                let value = fold_constant(&self.layers[j + 1..], &next);
                return Ok(MlpNetwork::constant(free_inputs, &value));
            }
            let n_rows = rows.len();
            let mut w = Matrix::zeros(n_rows, width);
            let mut bias = Vec::with_capacity(n_rows);
            for (r, (row, b)) in rows.into_iter().enumerate() {
                for (c, v) in row.into_iter().enumerate() {
                    w[(r, c)] = v;
                }
                bias.push(b);
            }
            layers.push(AffineLayer { weights: w, bias });
            width = n_rows;
            nodes = next;
        }
        Ok(MlpNetwork { layers })
    }

    pub fn to_json(&self) -> String {
        let doc = NetworkDoc::from(self);
        let mut buf = Vec::new();
        let mut ser = serde_json::Serializer::with_formatter(&mut buf, PreciseFormatter);
        doc.serialize(&mut ser).expect("in-memory serialization");
        String::from_utf8(buf).expect("utf-8 json")
    }

    pub fn from_json(text: &str) -> Result<MlpNetwork> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| NetError::Parse {
            layer: None,
            message: e.to_string(),
        })?;
        let raw_layers = value
            .get("layers")
            .and_then(serde_json::Value::as_array)
            .ok_or_else(|| NetError::Parse {
                layer: None,
                message: "missing `layers` array".into(),
            })?;
        if raw_layers.is_empty() {
            return Err(NetError::NoLayers);
        }
        let mut layers = Vec::with_capacity(raw_layers.len());
        for (j, raw) in raw_layers.iter().enumerate() {
            let doc: LayerDoc = serde_json::from_value(raw.clone()).map_err(|e| NetError::Parse {
                layer: Some(j),
                message: e.to_string(),
            })?;
            layers.push(doc.into_layer(j)?);
        }
        MlpNetwork::new(layers)
    }
}

/// Row-compressed copy of a network for repeated evaluation.
///
/// Zero weights are dropped, so outputs agree with [`MlpNetwork::evaluate`]
/// except possibly in the sign of a zero.
#[derive(Clone, Debug)]
pub struct SparseNetwork {
    input_dim: usize,
    layers: Vec<SparseLayer>,
}

#[derive(Clone, Debug)]
struct SparseLayer {
    row_start: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    bias: Vec<f64>,
}

impl From<&MlpNetwork> for SparseNetwork {
    fn from(net: &MlpNetwork) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|layer| {
                let w = &layer.weights;
                let mut row_start = Vec::with_capacity(w.rows() + 1);
                let (mut cols, mut vals) = (Vec::new(), Vec::new());
                row_start.push(0);
                for r in 0..w.rows() {
                    for (c, &v) in w.row(r).iter().enumerate() {
                        if v != 0.0 {
                            cols.push(c);
                            vals.push(v);
                        }
                    }
                    row_start.push(cols.len());
                }
                SparseLayer {
                    row_start,
                    cols,
                    vals,
                    bias: layer.bias.clone(),
                }
            })
            .collect();
        Self {
            input_dim: net.input_dim(),
            layers,
        }
    }
}

impl SparseNetwork {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(NetError::DimensionMismatch {
                layer: 0,
                expected: self.input_dim,
                actual: x.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for (j, layer) in self.layers.iter().enumerate() {
            next.clear();
            for (r, b) in layer.bias.iter().enumerate() {
                let span = layer.row_start[r]..layer.row_start[r + 1];
                let z: f64 = layer.cols[span.clone()]
                    .iter()
                    .zip(&layer.vals[span])
                    .map(|(&c, w)| w * cur[c])
                    .sum::<f64>()
                    + b;
                next.push(if j < last { relu(z) } else { z });
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn evaluate_scalar(&self, x: &[f64]) -> Result<f64> {
        let out = self.evaluate(x)?;
        debug_assert_eq!(out.len(), 1);
        Ok(out[0])
    }
}

/// Node of a layer during constant folding in [`MlpNetwork::bind_prefix`].
#[derive(Clone, Copy)]
enum Node {
    Const(f64),
    Free(usize),
}

/// Pushes fully constant activations through the remaining layers.
fn fold_constant(rest: &[AffineLayer], nodes: &[Node]) -> Vec<f64> {
    let mut cur: Vec<f64> = nodes
        .iter()
        .map(|n| match n {
            Node::Const(v) => *v,
            Node::Free(_) => unreachable!("fold_constant on a free node"),
        })
        .collect();
    let last = rest.len().saturating_sub(1);
    for (j, layer) in rest.iter().enumerate() {
        cur = layer.apply(&cur);
        if j < last {
            cur.iter_mut().for_each(|v| *v = relu(*v));
        }
    }
    cur
}

fn validate_slices(nets: &[MlpNetwork], input_dim: usize, ranges: &[Range<usize>]) -> Result<()> {
    if ranges.len() != nets.len() {
        return Err(NetError::InvalidSlices(format!(
            "{} ranges for {} networks",
            ranges.len(),
            nets.len()
        )));
    }
    for (k, (net, r)) in nets.iter().zip(ranges).enumerate() {
        if r.end > input_dim || r.start > r.end {
            return Err(NetError::InvalidSlices(format!(
                "range {r:?} of member {k} exceeds input dimension {input_dim}"
            )));
        }
        if r.len() != net.input_dim() {
            return Err(NetError::InvalidSlices(format!(
                "member {k} reads {} inputs but its range {r:?} has {}",
                net.input_dim(),
                r.len()
            )));
        }
    }
    let mut sorted: Vec<&Range<usize>> = ranges.iter().collect();
    sorted.sort_by_key(|r| r.start);
    if sorted.windows(2).any(|w| w[0].end > w[1].start) {
        return Err(NetError::InvalidSlices("overlapping ranges".into()));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct NetworkDoc {
    layers: Vec<LayerDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct LayerDoc {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl From<&AffineLayer> for LayerDoc {
    fn from(l: &AffineLayer) -> Self {
        LayerDoc {
            weights: l.weights.to_rows(),
            bias: l.bias.clone(),
        }
    }
}

impl LayerDoc {
    pub(crate) fn into_layer(self, layer: usize) -> Result<AffineLayer> {
        let cols = self.weights.first().map_or(0, Vec::len);
        for (row, r) in self.weights.iter().enumerate() {
            if r.len() != cols {
                return Err(NetError::RaggedWeights {
                    layer,
                    row,
                    expected: cols,
                    actual: r.len(),
                });
            }
        }
        AffineLayer::checked(Matrix::from_rows(&self.weights), self.bias, layer)
    }
}

impl From<&MlpNetwork> for NetworkDoc {
    fn from(net: &MlpNetwork) -> Self {
        NetworkDoc {
            layers: net.layers.iter().map(LayerDoc::from).collect(),
        }
    }
}

/// Compact JSON with every float written to 17 significant digits.
pub(crate) struct PreciseFormatter;

impl serde_json::ser::Formatter for PreciseFormatter {
    fn write_f64<W: ?Sized + std::io::Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{}", format_precise(value))
    }
}

/// Scientific notation with 17 significant digits; round-trips every finite f64.
pub fn format_precise(value: f64) -> String {
    format!("{value:.16e}")
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn abs_net() -> MlpNetwork {
        MlpNetwork::new(vec![
            AffineLayer::from_rows(&[vec![1.0], vec![-1.0]], vec![0.0, 0.0]),
            AffineLayer::from_rows(&[vec![1.0, 1.0]], vec![0.0]),
        ])
        .unwrap()
    }

    pub(crate) fn random_net(rng: &mut ChaCha8Rng, dims: &[usize]) -> MlpNetwork {
        let layers = dims
            .windows(2)
            .map(|w| {
                let data = (0..w[0] * w[1]).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let bias = (0..w[1]).map(|_| rng.gen_range(-0.5..0.5)).collect();
                AffineLayer::new(Matrix::from_row_major(w[1], w[0], data), bias).unwrap()
            })
            .collect();
        MlpNetwork::new(layers).unwrap()
    }

    #[test]
    fn identity_is_affine_only() {
        let id = MlpNetwork::identity(2);
        assert_eq!(id.evaluate(&[-1.0, 2.0]).unwrap(), vec![-1.0, 2.0]);
    }

    #[test]
    fn abs_by_hand() {
        assert_eq!(abs_net().evaluate(&[3.0]).unwrap(), vec![3.0]);
        assert_eq!(abs_net().evaluate(&[-3.0]).unwrap(), vec![3.0]);
    }

    #[test]
    fn relu_realization() {
        let net = MlpNetwork::new(vec![
            AffineLayer::from_rows(&[vec![1.0]], vec![0.0]),
            AffineLayer::from_rows(&[vec![1.0]], vec![0.0]),
        ])
        .unwrap();
        assert_eq!(net.evaluate(&[-5.0]).unwrap(), vec![0.0]);
        assert_eq!(net.evaluate(&[5.0]).unwrap(), vec![5.0]);
    }

    #[test]
    fn dimension_mismatch_names_layer() {
        let err = abs_net().evaluate(&[1.0, 2.0]).unwrap_err();
        assert!(matches!(
            err,
            NetError::DimensionMismatch {
                layer: 0,
                expected: 1,
                actual: 2
            }
        ));

        let err = MlpNetwork::new(vec![
            AffineLayer::from_rows(&[vec![1.0]], vec![0.0]),
            AffineLayer::from_rows(&[vec![1.0, 1.0]], vec![0.0]),
        ])
        .unwrap_err();
        assert!(matches!(err, NetError::DimensionMismatch { layer: 1, .. }));
    }

    #[test]
    fn layer_invariants() {
        assert!(matches!(
            AffineLayer::new(Matrix::zeros(2, 1), vec![0.0]),
            Err(NetError::BiasLength { .. })
        ));
        assert!(matches!(
            AffineLayer::new(Matrix::from_rows(&[vec![f64::NAN]]), vec![0.0]),
            Err(NetError::NonFinite { .. })
        ));
    }

    #[test]
    fn count_nonzeros() {
        let net = MlpNetwork::affine(AffineLayer::from_rows(
            &[vec![0.0, 2.0], vec![1.0, 0.0]],
            vec![0.0, 3.0],
        ));
        assert_eq!(net.count_weights(), 3);
        assert_eq!(MlpNetwork::constant(3, &[0.0, 0.0]).count_weights(), 0);
    }

    #[test]
    fn compose_merges_seam() {
        let twice = MlpNetwork::compose(&abs_net(), &abs_net()).unwrap();
        assert_eq!(twice.depth(), 3);
        assert_eq!(twice.evaluate(&[-2.0]).unwrap(), vec![2.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = random_net(&mut rng, &[3, 5, 2]);
        let same = MlpNetwork::compose(&MlpNetwork::identity(2), &net).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            assert_eq!(same.evaluate(&x).unwrap(), net.evaluate(&x).unwrap());
        }
        assert!(MlpNetwork::compose(&net, &net).is_err());
    }

    #[test]
    fn parallel_slices_and_padding() {
        let id = MlpNetwork::identity(1);
        let both = MlpNetwork::parallel(
            &[id.clone(), id.clone()],
            &InputLayout::stacked(&[id.clone(), id.clone()]),
        )
        .unwrap();
        assert_eq!(both.evaluate(&[1.0, -1.0]).unwrap(), vec![1.0, -1.0]);

        // Depth-1 member next to a depth-3 member: the passthrough must keep
        // negative values.
        let deep = MlpNetwork::compose(&abs_net(), &abs_net()).unwrap();
        let stacked = MlpNetwork::parallel(&[id.clone(), deep], &InputLayout::Shared).unwrap();
        assert_eq!(stacked.depth(), 3);
        for x in [-4.5, 0.0, 3.25] {
            assert_eq!(stacked.evaluate(&[x]).unwrap(), vec![x, x.abs()]);
        }

        let single = MlpNetwork::parallel(&[abs_net()], &InputLayout::Shared).unwrap();
        assert_eq!(single, abs_net());
    }

    #[test]
    fn parallel_rejects_bad_layouts() {
        let id = MlpNetwork::identity(1);
        assert_eq!(
            MlpNetwork::parallel(&[], &InputLayout::Shared),
            Err(NetError::EmptyParallel)
        );
        let overlapping = InputLayout::Slices {
            input_dim: 2,
            ranges: vec![0..1, 0..1],
        };
        assert!(matches!(
            MlpNetwork::parallel(&[id.clone(), id.clone()], &overlapping),
            Err(NetError::InvalidSlices(_))
        ));
        let too_wide = InputLayout::Slices {
            input_dim: 1,
            ranges: vec![0..1, 1..2],
        };
        assert!(MlpNetwork::parallel(&[id.clone(), id.clone()], &too_wide).is_err());
        let shared_mismatch = MlpNetwork::parallel(&[id, MlpNetwork::identity(2)], &InputLayout::Shared);
        assert!(shared_mismatch.is_err());
    }

    #[test]
    fn padding_is_exact_for_all_signs() {
        let net = MlpNetwork::affine(AffineLayer::from_rows(&[vec![2.0], vec![-1.0]], vec![0.5, 0.0]));
        let padded = net.pad_to_depth(4);
        assert_eq!(padded.depth(), 4);
        for x in [-7.0, -0.25, 0.0, 0.25, 7.0] {
            assert_eq!(padded.evaluate(&[x]).unwrap(), net.evaluate(&[x]).unwrap());
        }
    }

    #[test]
    fn bind_prefix_folds_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = random_net(&mut rng, &[5, 8, 6, 2]);
        let prefix = [0.3, -0.7, 1.1];
        let bound = net.bind_prefix(&prefix).unwrap();
        assert_eq!(bound.input_dim(), 2);
        for _ in 0..200 {
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let full: Vec<f64> = prefix.iter().copied().chain(x.iter().copied()).collect();
            let a = net.evaluate(&full).unwrap();
            let b = bound.evaluate(&x).unwrap();
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() <= 1e-12, "{u} vs {v}");
            }
        }
        assert!(net.bind_prefix(&[0.0; 5]).is_err());
    }

    #[test]
    fn bind_prefix_constant_tail() {
        // Hidden layer depends only on the bound input.
        let net = MlpNetwork::new(vec![
            AffineLayer::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]], vec![0.0, 0.0]),
            AffineLayer::from_rows(&[vec![1.0, 1.0]], vec![0.5]),
        ])
        .unwrap();
        let bound = net.bind_prefix(&[-2.0]).unwrap();
        assert_eq!(bound.evaluate(&[10.0]).unwrap(), vec![2.5]);
    }

    #[test]
    fn json_round_trip_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = random_net(&mut rng, &[4, 6, 3, 1]);
        let back = MlpNetwork::from_json(&net.to_json()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn json_errors_carry_layer_index() {
        assert_eq!(MlpNetwork::from_json(r#"{"layers":[]}"#), Err(NetError::NoLayers));
        let err = MlpNetwork::from_json(
            r#"{"layers":[{"weights":[[1.0]],"bias":[0.0]},{"weights":[[1.0],"x"],"bias":[0.0,0.0]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, NetError::Parse { layer: Some(1), .. }), "{err:?}");
        let err = MlpNetwork::from_json(r#"{"layers":[{"weights":[[1.0],[1.0,2.0]],"bias":[0.0,0.0]}]}"#).unwrap_err();
        assert!(matches!(err, NetError::RaggedWeights { layer: 0, row: 1, .. }));
        assert!(matches!(
            MlpNetwork::from_json("not json"),
            Err(NetError::Parse { layer: None, .. })
        ));
    }

    #[test]
    fn precise_format_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 123_456_789.123_456_78, 0.0] {
            let s = format_precise(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
    }
}
