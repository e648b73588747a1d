//! Multi-head softmax attention transformers and the exact embedding of an
//! MLP as a transformer with one zero-query/key head per layer.
//!
//! Attention layers apply `X ↦ σ(⊕_h Attn(X | Q_h, K_h, V_h, λ) + b)` row-wise;
//! the network ends with a row-wise affine map `X ↦ X Aᵀ + b`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{relu, AffineLayer, LayerDoc, Matrix, MlpNetwork, NetError, PreciseFormatter};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformerError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("temperature must be positive and finite, got {0}")]
    Lambda(f64),
    #[error("transformer has no layers")]
    Empty,
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = TransformerError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionHead {
    /// `d_key × d_in`.
    pub query: Matrix,
    /// `d_key × d_in`.
    pub key: Matrix,
    /// `d_out × d_in`.
    pub value: Matrix,
    pub lambda: f64,
}

impl AttentionHead {
    pub fn new(query: Matrix, key: Matrix, value: Matrix, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(TransformerError::Lambda(lambda));
        }
        if query.rows() != key.rows() || query.cols() != key.cols() || query.cols() != value.cols() {
            return Err(TransformerError::Shape(format!(
                "Q is {}x{}, K is {}x{}, V is {}x{}",
                query.rows(),
                query.cols(),
                key.rows(),
                key.cols(),
                value.rows(),
                value.cols()
            )));
        }
        if query.rows() == 0 || query.cols() == 0 || value.rows() == 0 {
            return Err(TransformerError::Shape("empty head matrix".into()));
        }
        Ok(Self {
            query,
            key,
            value,
            lambda,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.value.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.value.rows()
    }

    pub fn key_dim(&self) -> usize {
        self.query.rows()
    }
}

/// Softmax weights `w[n][m] ∝ exp(λ⟨Q x_n, K x_m⟩ / √d_key)`, computed with
/// row-max subtraction.
pub fn attention_weights(head: &AttentionHead, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    check_rows(x, head.input_dim())?;
    let qs: Vec<Vec<f64>> = x.iter().map(|r| head.query.mul_vec(r)).collect();
    let ks: Vec<Vec<f64>> = x.iter().map(|r| head.key.mul_vec(r)).collect();
    let scale = head.lambda / (head.key_dim() as f64).sqrt();
    Ok(qs
        .iter()
        .map(|q| {
            let scores: Vec<f64> = ks
                .iter()
                .map(|k| scale * q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
            let total: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / total).collect()
        })
        .collect())
}

/// `Attn(X | Q, K, V, λ)`: row `n` is `Σ_m w[n][m] V x_m`.
pub fn attention(head: &AttentionHead, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let weights = attention_weights(head, x)?;
    let values: Vec<Vec<f64>> = x.iter().map(|r| head.value.mul_vec(r)).collect();
    Ok(weights
        .iter()
        .map(|w| {
            let mut out = vec![0.0; head.output_dim()];
            for (wm, v) in w.iter().zip(&values) {
                for (o, vi) in out.iter_mut().zip(v) {
                    *o += wm * vi;
                }
            }
            out
        })
        .collect())
}

fn check_rows(x: &[Vec<f64>], width: usize) -> Result<()> {
    if x.is_empty() {
        return Err(TransformerError::Shape("input has no rows".into()));
    }
    if let Some(r) = x.iter().position(|r| r.len() != width) {
        return Err(TransformerError::Shape(format!(
            "row {r} has {} entries, expected {width}",
            x[r].len()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerLayer {
    pub heads: Vec<AttentionHead>,
    pub bias: Vec<f64>,
}

impl TransformerLayer {
    pub fn input_dim(&self) -> usize {
        self.heads[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.bias.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerNetwork {
    layers: Vec<TransformerLayer>,
    output: AffineLayer,
}

impl TransformerNetwork {
    pub fn new(layers: Vec<TransformerLayer>, output: AffineLayer) -> Result<Self> {
        let mut width = layers.first().map_or(output.input_dim(), TransformerLayer::input_dim);
        for (j, layer) in layers.iter().enumerate() {
            if layer.heads.is_empty() {
                return Err(TransformerError::Shape(format!("layer {j} has no heads")));
            }
            if let Some(h) = layer.heads.iter().position(|h| h.input_dim() != width) {
                return Err(TransformerError::Shape(format!(
                    "layer {j} head {h} reads {} columns, layer input has {width}",
                    layer.heads[h].input_dim()
                )));
            }
            let concat: usize = layer.heads.iter().map(AttentionHead::output_dim).sum();
            if concat != layer.bias.len() {
                return Err(TransformerError::Shape(format!(
                    "layer {j}: heads produce {concat} columns, bias has {}",
                    layer.bias.len()
                )));
            }
            width = concat;
        }
        if output.input_dim() != width {
            return Err(TransformerError::Shape(format!(
                "final map reads {} columns, last layer produces {width}",
                output.input_dim()
            )));
        }
        Ok(Self { layers, output })
    }

    pub fn layers(&self) -> &[TransformerLayer] {
        &self.layers
    }

    pub fn output(&self) -> &AffineLayer {
        &self.output
    }

    /// Attention layers plus the final affine map.
    pub fn depth(&self) -> usize {
        self.layers.len() + 1
    }

    pub fn input_dim(&self) -> usize {
        self.layers
            .first()
            .map_or(self.output.input_dim(), TransformerLayer::input_dim)
    }

    pub fn evaluate(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        check_rows(x, self.input_dim())?;
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let outs: Vec<Vec<Vec<f64>>> = layer.heads.iter().map(|h| attention(h, &cur)).collect::<Result<_>>()?;
            cur = (0..cur.len())
                .map(|n| {
                    outs.iter()
                        .flat_map(|o| o[n].iter().copied())
                        .zip(&layer.bias)
                        .map(|(z, b)| relu(z + b))
                        .collect()
                })
                .collect();
        }
        Ok(cur.iter().map(|r| self.output.apply(r)).collect())
    }

    /// Evaluates on the single-row matrix whose row is `x`.
    pub fn evaluate_vector(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.evaluate(&[x.to_vec()])?.remove(0))
    }

    pub fn to_json(&self) -> String {
        let doc = TransformerDoc {
            layers: self
                .layers
                .iter()
                .map(|l| TransformerLayerDoc {
                    heads: l
                        .heads
                        .iter()
                        .map(|h| HeadDoc {
                            query: h.query.to_rows(),
                            key: h.key.to_rows(),
                            value: h.value.to_rows(),
                            lambda: h.lambda,
                        })
                        .collect(),
                    bias: l.bias.clone(),
                })
                .collect(),
            output: LayerDoc::from(&self.output),
        };
        let mut buf = Vec::new();
        let mut ser = serde_json::Serializer::with_formatter(&mut buf, PreciseFormatter);
        doc.serialize(&mut ser).expect("in-memory serialization");
        String::from_utf8(buf).expect("utf-8 json")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: TransformerDoc = serde_json::from_str(text).map_err(|e| TransformerError::Parse(e.to_string()))?;
        let depth = doc.layers.len();
        let mut layers = Vec::with_capacity(depth);
        for l in doc.layers {
            let heads = l
                .heads
                .into_iter()
                .map(|h| AttentionHead::new(matrix(&h.query)?, matrix(&h.key)?, matrix(&h.value)?, h.lambda))
                .collect::<Result<_>>()?;
            layers.push(TransformerLayer { heads, bias: l.bias });
        }
        let output = doc.output.into_layer(depth)?;
        Self::new(layers, output)
    }
}

fn matrix(rows: &[Vec<f64>]) -> Result<Matrix> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(TransformerError::Parse(
            "matrices must be nonempty and rectangular".into(),
        ));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(TransformerError::Parse("non-finite matrix entry".into()));
    }
    Ok(Matrix::from_rows(rows))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformerDoc {
    layers: Vec<TransformerLayerDoc>,
    output: LayerDoc,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformerLayerDoc {
    heads: Vec<HeadDoc>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadDoc {
    query: Vec<Vec<f64>>,
    key: Vec<Vec<f64>>,
    value: Vec<Vec<f64>>,
    lambda: f64,
}

/// One head per hidden layer with `Q = K = 0 ∈ R^{1×d_j}` and `V = A^{(j)}`,
/// bias `b^{(j)}`; the MLP's last layer becomes the final affine map. On a
/// single-row input the softmax weight is exactly 1, so the output equals the
/// MLP's for every `λ > 0`.
pub fn mlp_to_transformer(net: &MlpNetwork, lambda: f64) -> Result<TransformerNetwork> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(TransformerError::Lambda(lambda));
    }
    let (last, hidden) = net.layers().split_last().ok_or(TransformerError::Empty)?;
    let layers = hidden
        .iter()
        .map(|l| {
            let zero = Matrix::zeros(1, l.input_dim());
            Ok(TransformerLayer {
                heads: vec![AttentionHead::new(zero.clone(), zero, l.weights().clone(), lambda)?],
                bias: l.bias().to_vec(),
            })
        })
        .collect::<Result<_>>()?;
    TransformerNetwork::new(layers, last.clone())
}

/// Largest `|T(x) - f(x)|` over the given inputs.
pub fn conversion_defect(net: &MlpNetwork, t: &TransformerNetwork, inputs: &[Vec<f64>]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for x in inputs {
        let a = net.evaluate(x)?;
        let b = t.evaluate_vector(x)?;
        for (u, v) in a.iter().zip(&b) {
            worst = worst.max((u - v).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gadgets::{hat_gadget, HatSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_head(lambda: f64) -> AttentionHead {
        let one = Matrix::from_rows(&[vec![1.0]]);
        AttentionHead::new(one.clone(), one.clone(), one, lambda).unwrap()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_row_major(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn zero_query_key_averages() {
        let zero = Matrix::zeros(1, 2);
        let v = Matrix::from_rows(&[vec![1.0, 2.0]]);
        let head = AttentionHead::new(zero.clone(), zero, v, 3.0).unwrap();
        let x = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 2.0]];
        let out = attention(&head, &x).unwrap();
        let mean = (1.0 + 2.0 + 6.0) / 3.0;
        for row in out {
            assert!((row[0] - mean).abs() <= 1e-12);
        }
    }

    #[test]
    fn single_row_is_value_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = AttentionHead::new(
            random_matrix(&mut rng, 2, 3),
            random_matrix(&mut rng, 2, 3),
            random_matrix(&mut rng, 4, 3),
            0.7,
        )
        .unwrap();
        let x = vec![vec![0.3, -1.2, 2.0]];
        assert_eq!(attention(&head, &x).unwrap()[0], head.value.mul_vec(&x[0]));
    }

    #[test]
    fn manual_two_token_softmax() {
        // Scores for row 1 are (1, 2), for row 2 (2, 4); the outputs are
        // (1 + 2e)/(1 + e) and (1 + 2e²)/(1 + e²).
        let out = attention(&scalar_head(1.0), &[vec![1.0], vec![2.0]]).unwrap();
        assert!((out[0][0] - 1.7310585786300048).abs() <= 1e-15);
        assert!((out[1][0] - 1.8807970779778826).abs() <= 1e-15);
    }

    #[test]
    fn softmax_rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let head = AttentionHead::new(
                random_matrix(&mut rng, 3, 4),
                random_matrix(&mut rng, 3, 4),
                random_matrix(&mut rng, 2, 4),
                rng.gen_range(0.1..20.0),
            )
            .unwrap();
            let x: Vec<Vec<f64>> = (0..6)
                .map(|_| (0..4).map(|_| rng.gen_range(-5.0..5.0)).collect())
                .collect();
            for row in attention_weights(&head, &x).unwrap() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                assert!(row.iter().all(|w| *w >= 0.0));
            }
        }
    }

    #[test]
    fn shape_errors() {
        let q = Matrix::zeros(1, 2);
        let k = Matrix::zeros(2, 2);
        assert!(AttentionHead::new(q.clone(), k, Matrix::zeros(1, 2), 1.0).is_err());
        assert!(AttentionHead::new(q.clone(), q.clone(), Matrix::zeros(1, 2), 0.0).is_err());
        let head = AttentionHead::new(q.clone(), q, Matrix::zeros(1, 2), 1.0).unwrap();
        assert!(attention(&head, &[vec![1.0]]).is_err());
        assert!(attention(&head, &[]).is_err());
    }

    #[test]
    fn identity_layer_on_nonnegative_input() {
        let zero = Matrix::zeros(1, 2);
        let head = AttentionHead::new(zero.clone(), zero, Matrix::identity(2), 1.0).unwrap();
        let t = TransformerNetwork::new(
            vec![TransformerLayer {
                heads: vec![head],
                bias: vec![0.0; 2],
            }],
            AffineLayer::new(Matrix::identity(2), vec![0.0; 2]).unwrap(),
        )
        .unwrap();
        let x = vec![vec![0.5, 2.0]];
        assert_eq!(t.evaluate(&x).unwrap(), x);
    }

    #[test]
    fn conversion_is_exact() {
        let spec = HatSpec::new(0.4, 0.1).unwrap();
        let hat = hat_gadget(&spec).unwrap();
        let inputs: Vec<Vec<f64>> = (0..1000).map(|i| vec![i as f64 / 999.0]).collect();
        let reference: Vec<Vec<f64>> = inputs.iter().map(|x| hat.evaluate(x).unwrap()).collect();
        for lambda in [0.1, 1.0, 10.0] {
            let t = mlp_to_transformer(&hat, lambda).unwrap();
            assert_eq!(t.depth(), hat.depth());
            assert!(t.layers().iter().all(|l| l.heads.len() == 1));
            assert!(conversion_defect(&hat, &t, &inputs).unwrap() <= 1e-12);
            let outs: Vec<Vec<f64>> = inputs.iter().map(|x| t.evaluate_vector(x).unwrap()).collect();
            assert_eq!(outs, reference);
        }
        let id = MlpNetwork::identity(3);
        let t = mlp_to_transformer(&id, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-10.0..10.0)).collect();
            assert_eq!(t.evaluate_vector(&x).unwrap(), x);
        }
        assert!(mlp_to_transformer(&id, -1.0).is_err());
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = crate::net::tests::random_net(&mut rng, &[3, 5, 2]);
        let t = mlp_to_transformer(&net, 2.5).unwrap();
        let back = TransformerNetwork::from_json(&t.to_json()).unwrap();
        assert_eq!(back, t);
        assert!(TransformerNetwork::from_json(r#"{"layers":[]}"#).is_err());
        assert!(TransformerNetwork::from_json("{}").is_err());
    }
}
