use agentic_relu::gadgets::{abs_gadget, bump_gadget, BumpSpec};
use agentic_relu::harness::{path_witness, WitnessPair};
use agentic_relu::learners::uniform_queries;
use agentic_relu::tasks::{HardFunction, Interval, PathTask, Task, ValueTask};
use agentic_relu::transformer::{mlp_to_transformer, TransformerNetwork};
use agentic_relu::{MlpNetwork, NetError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const IDENTITY: &str = include_str!("fixtures/identity.json");
const ABS: &str = include_str!("fixtures/abs.json");

#[test]
fn identity_serializes_to_fixture() {
    assert_eq!(MlpNetwork::identity(2).to_json(), IDENTITY.trim_end());
    assert_eq!(MlpNetwork::from_json(IDENTITY).unwrap(), MlpNetwork::identity(2));
}

#[test]
fn hand_written_document_parses() {
    let net = MlpNetwork::from_json(ABS).unwrap();
    assert_eq!(net, abs_gadget());
    assert_eq!(net.evaluate_scalar(&[-0.75]).unwrap(), 0.75);
}

#[test]
fn malformed_documents_are_rejected() {
    assert!(matches!(
        MlpNetwork::from_json(r#"{"layers":[]}"#),
        Err(NetError::NoLayers)
    ));
    assert!(MlpNetwork::from_json(r#"{"layers":[{"weights":[[1.0,2.0],[3.0]],"bias":[0,0]}]}"#).is_err());
    assert!(
        MlpNetwork::from_json(r#"{"layers":[{"weights":[[1.0]],"bias":[0]},{"weights":[[1.0,1.0]],"bias":[0]}]}"#)
            .is_err()
    );
    assert!(MlpNetwork::from_json("not json").is_err());
}

#[test]
fn gadget_and_transformer_round_trips() {
    let net = bump_gadget(&BumpSpec::new(vec![0.375, 0.625], 0.25, 0.2).unwrap()).unwrap();
    assert_eq!(MlpNetwork::from_json(&net.to_json()).unwrap(), net);
    let t = mlp_to_transformer(&net, 0.1).unwrap();
    let back = TransformerNetwork::from_json(&t.to_json()).unwrap();
    assert_eq!(back, t);
    assert_eq!(back.to_json(), t.to_json());
}

#[test]
fn tasks_and_witnesses_replay() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tasks = [
        Task::Path(PathTask::random(2, 3, 0.25, &mut rng).unwrap()),
        Task::Value(ValueTask::random(5, 1.0 / 60.0, HardFunction::seeded(9, 3, Interval::UNIT), &mut rng).unwrap()),
    ];
    for t in &tasks {
        let back = Task::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(&back, t);
        for x in [[0.1, 0.9], [0.37, 0.52]] {
            let x = &x[..t.dim()];
            assert_eq!(back.evaluate(x).unwrap().to_bits(), t.evaluate(x).unwrap().to_bits());
        }
    }
    let w = path_witness(&uniform_queries(1, 7), 1, 4, 0.25).unwrap();
    let back = WitnessPair::from_json(&w.to_json().unwrap()).unwrap();
    assert_eq!(back, w);
    back.verify().unwrap();
}
