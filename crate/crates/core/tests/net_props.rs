use agentic_relu::{AffineLayer, InputLayout, Matrix, MlpNetwork, SparseNetwork};
use proptest::prelude::*;

/// Direct evaluation from the raw parameters: affine, ReLU, ..., affine.
fn reference(net: &MlpNetwork, x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    let n = net.layers().len();
    for (j, layer) in net.layers().iter().enumerate() {
        let w = layer.weights();
        v = (0..w.rows())
            .map(|r| {
                let z: f64 = w.row(r).iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + layer.bias()[r];
                if j + 1 < n {
                    z.max(0.0)
                } else {
                    z
                }
            })
            .collect();
    }
    v
}

fn net_strategy(input_dim: usize, output_dim: usize) -> impl Strategy<Value = MlpNetwork> {
    prop::collection::vec(1usize..5, 0..3).prop_flat_map(move |hidden| {
        let mut dims = vec![input_dim];
        dims.extend(hidden);
        dims.push(output_dim);
        let layers: Vec<_> = dims
            .windows(2)
            .map(|w| {
                let (i, o) = (w[0], w[1]);
                (
                    prop::collection::vec(-2.0f64..2.0, i * o),
                    prop::collection::vec(-1.0f64..1.0, o),
                )
                    .prop_map(move |(data, bias)| AffineLayer::new(Matrix::from_row_major(o, i, data), bias).unwrap())
            })
            .collect();
        layers.prop_map(|ls| MlpNetwork::new(ls).unwrap())
    })
}

fn inputs(dim: usize, count: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, dim), count)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn evaluate_matches_reference(net in net_strategy(3, 2), xs in inputs(3, 50)) {
        for x in &xs {
            prop_assert_eq!(net.evaluate(x).unwrap(), reference(&net, x));
        }
    }

    #[test]
    fn compose_is_extensional(
        inner in net_strategy(3, 2),
        outer in net_strategy(2, 2),
        xs in inputs(3, 1000),
    ) {
        let c = MlpNetwork::compose(&outer, &inner).unwrap();
        prop_assert_eq!(c.depth(), outer.depth() + inner.depth() - 1);
        for x in &xs {
            let expect = reference(&outer, &reference(&inner, x));
            prop_assert!(close(&c.evaluate(x).unwrap(), &expect, 1e-12));
        }
    }

    #[test]
    fn parallel_is_extensional(
        a in net_strategy(2, 1),
        b in net_strategy(2, 3),
        c in net_strategy(1, 2),
        xs in inputs(3, 1000),
    ) {
        let shared = MlpNetwork::parallel(&[a.clone(), b.clone()], &InputLayout::Shared).unwrap();
        let stacked = MlpNetwork::parallel(&[a.clone(), c.clone()], &InputLayout::stacked(&[a.clone(), c.clone()])).unwrap();
        for x in &xs {
            let mut expect = reference(&a, &x[..2]);
            expect.extend(reference(&b, &x[..2]));
            prop_assert!(close(&shared.evaluate(&x[..2]).unwrap(), &expect, 1e-12));
            let mut expect = reference(&a, &x[..2]);
            expect.extend(reference(&c, &x[2..]));
            prop_assert!(close(&stacked.evaluate(x).unwrap(), &expect, 1e-12));
        }
    }

    #[test]
    fn padding_preserves_outputs_exactly(net in net_strategy(2, 2), extra in 1usize..4, xs in inputs(2, 200)) {
        let padded = net.pad_to_depth(net.depth() + extra);
        prop_assert_eq!(padded.depth(), net.depth() + extra);
        for x in &xs {
            prop_assert_eq!(padded.evaluate(x).unwrap(), net.evaluate(x).unwrap());
        }
    }

    #[test]
    fn sparse_matches_dense(net in net_strategy(3, 2), xs in inputs(3, 200)) {
        let sparse = SparseNetwork::from(&net);
        for x in &xs {
            // Equality as f64 values: only the sign of a zero may differ.
            prop_assert_eq!(sparse.evaluate(x).unwrap(), net.evaluate(x).unwrap());
        }
        let padded = SparseNetwork::from(&net.pad_to_depth(net.depth() + 2));
        prop_assert_eq!(padded.evaluate(&xs[0]).unwrap(), net.evaluate(&xs[0]).unwrap());
        prop_assert!(sparse.evaluate(&[0.0; 2]).is_err());
    }

    #[test]
    fn json_round_trip_is_bitwise(net in net_strategy(3, 2)) {
        let back = MlpNetwork::from_json(&net.to_json()).unwrap();
        prop_assert_eq!(back, net);
    }
}

#[test]
fn passthrough_on_signed_values() {
    let id = MlpNetwork::identity(3);
    let padded = id.pad_to_depth(4);
    for x in [
        [-5.5, 0.0, 7.25],
        [-1e-300, -0.0, 1e300],
        [f64::MIN_POSITIVE, -2.0, 0.5],
    ] {
        assert_eq!(padded.evaluate(&x).unwrap(), x.to_vec());
    }
}
