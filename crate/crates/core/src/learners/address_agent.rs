//! Address-spike learners: read `s` at the static hats, then probe the
//! moving hat at the predicted address.

use crate::net::MlpNetwork;
use crate::tasks::{fixed_points, fold_tau, HardFunction};

use super::value_agent::{check_family, exact_hat_predictor, mult_hat_predictor};
use super::{
    response_offset, sparse_affine, AgenticLearner, Budget, Context, LearnerError, Predictor, QueryMap, Result,
};

#[derive(Clone, Debug)]
pub enum AddressMode {
    /// Computes `q*(s) = g(τ(s))` exactly and reconstructs with exact products.
    General { address_fn: HardFunction },
    /// Last query is `address_net(s)`; the predictor uses `Mult_ε`.
    Realizable { address_net: MlpNetwork, eps: f64 },
}

pub fn make_address_agent(n: usize, delta: f64, mode: AddressMode, budget: Budget) -> Result<AgenticLearner> {
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
    let (last, predictor, params) = match mode {
        AddressMode::General { address_fn } => {
            if address_fn.input_dim != n - 1 {
                return Err(LearnerError::Config("address function must read N - 1 inputs".into()));
            }
            let kind = serde_json::to_value(&address_fn).unwrap_or(serde_json::Value::Null);
            let map = QueryMap::general(move |ctx: &Context| {
                let folded = fold_tau(&ctx.responses())?;
                Ok(vec![address_fn.evaluate(&folded)?])
            });
            let params = serde_json::json!({ "N": n, "delta": delta, "mode": "general", "address_fn": kind });
            (map, exact_hat_predictor(n, delta), params)
        }
        AddressMode::Realizable { address_net, eps } => {
            if address_net.input_dim() != n - 1 || address_net.output_dim() != 1 {
                return Err(LearnerError::Config(
                    "address network must map N - 1 inputs to 1 output".into(),
                ));
            }
            let rows: Vec<Vec<(usize, f64)>> = (0..n - 1).map(|i| vec![(response_offset(i, 1), 1.0)]).collect();
            let read = sparse_affine(2 * (n - 1), &rows, vec![0.0; n - 1]);
            let map = QueryMap::Network(MlpNetwork::compose(&address_net, &read)?);
            let params = serde_json::json!({ "N": n, "delta": delta, "mode": "realizable", "eps": eps });
            (map, Predictor::Network(mult_hat_predictor(n, delta, eps)?), params)
        }
    };
    maps.push(last);
    let mut learner = AgenticLearner::new("address-agent", vec![q[0]], maps, predictor)?;
    learner.params = params;
    learner.check_budget(&budget)?;
    Ok(learner)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::run_agentic;
    use crate::tasks::{default_delta, AddressTask, Task};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn general_mode_reconstructs_and_reads_beta() {
        let n = 5;
        let delta = default_delta(n);
        let g = HardFunction::invertible_address(n - 1);
        let agent = make_address_agent(
            n,
            delta,
            AddressMode::General { address_fn: g.clone() },
            Budget::queries(n),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let task = AddressTask::random(n, delta, g.clone(), &mut rng).unwrap();
            let t = Task::Address(task.clone());
            let fit = run_agentic(&agent, &t).unwrap();
            assert_eq!(fit.context.query(n - 1), &[task.q_star()]);
            assert_eq!(fit.context.response(n - 1), f64::from(task.beta));
            for i in 0..=2000 {
                let x = [i as f64 / 2000.0];
                assert!((fit.predict(&x).unwrap() - t.evaluate(&x).unwrap()).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn mispredicted_address_hides_beta() {
        let n = 4;
        let delta = default_delta(n);
        let g = HardFunction::invertible_address(n - 1);
        let net = MlpNetwork::constant(n - 1, &[2.0 / 3.0]);
        let agent = make_address_agent(
            n,
            delta,
            AddressMode::Realizable {
                address_net: net,
                eps: 0.01,
            },
            Budget::unbounded(),
        )
        .unwrap();
        assert!(agent.is_realizable());
        // s_1 = 0.35 gives q* = 2/3 + 0.7/3 ≈ 0.9.
        let t0 = AddressTask::new(n, vec![0.35, 0.2, 0.8], 0, delta, g).unwrap();
        let t1 = t0.with_beta(1).unwrap();
        let a = run_agentic(&agent, &Task::Address(t0)).unwrap();
        let b = run_agentic(&agent, &Task::Address(t1)).unwrap();
        assert_eq!(a.context.response(n - 1), 0.0);
        assert!(a.context.bitwise_eq(&b.context));
        for i in 0..=500 {
            let x = [i as f64 / 500.0];
            assert_eq!(a.predict(&x).unwrap().to_bits(), b.predict(&x).unwrap().to_bits());
        }
    }

    #[test]
    fn shape_checks() {
        let net = MlpNetwork::constant(2, &[0.8]);
        let mode = AddressMode::Realizable {
            address_net: net,
            eps: 0.01,
        };
        assert!(make_address_agent(5, 0.01, mode, Budget::unbounded()).is_err());
        let g = HardFunction::invertible_address(2);
        assert!(make_address_agent(5, 0.01, AddressMode::General { address_fn: g }, Budget::unbounded()).is_err());
    }
}
