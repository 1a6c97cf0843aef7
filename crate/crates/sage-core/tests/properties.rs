//! Property tests for the algebra's invariants, driven by seeds so each
//! case derives a fresh scene/query deterministically.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sage_core::duality::{builtin_pool, compose, verify_axiom_on};
use sage_core::features::{option_features, FEATURE_DIM};
use sage_core::policy::PolicyCheckpoint;
use sage_core::rewards::group_advantages;
use sage_core::scene::{ground_truth, sample_instance, AnswerIndex, EnvConfig};

fn instance(seed: u64) -> (sage_core::scene::Scene, sage_core::scene::Query, AnswerIndex) {
    let env = EnvConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_instance(&mut rng, &env).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Oracle commutation holds for every built-in op and depth-2 chain
    /// on every in-domain input.
    #[test]
    fn axiom_holds_for_random_ops_and_inputs(seed in 0u64..1_000_000, a in 0usize..9, b in 0usize..10) {
        let builtins = builtin_pool();
        let op = if b == 9 {
            builtins[a].clone()
        } else {
            compose(&builtins[a], &builtins[b])
        };
        let (scene, query, _) = instance(seed);
        if op.applicable(&scene, &query) {
            let report = verify_axiom_on(&op, &[(scene, query)]).unwrap();
            prop_assert!(report.holds(), "{} violated", report.op_id);
        }
    }

    /// Answer mapping is a bijection on the option indices for every op
    /// and in-domain query.
    #[test]
    fn map_answer_is_bijective(seed in 0u64..1_000_000, a in 0usize..9) {
        let op = builtin_pool().swap_remove(a);
        let (scene, query, _) = instance(seed);
        if op.applicable(&scene, &query) {
            let (_, dual) = op.apply(&scene, &query).unwrap();
            let mut seen = vec![false; query.options.len()];
            for i in 0..query.options.len() {
                let m = op.map_answer(&query, &dual, AnswerIndex(i)).unwrap().0;
                prop_assert!(!seen[m]);
                seen[m] = true;
            }
        }
    }

    /// The oracle is pure and every generated query names its answer
    /// exactly once among the options.
    #[test]
    fn oracle_is_pure_and_unique(seed in 0u64..1_000_000) {
        let (scene, query, truth) = instance(seed);
        let again = ground_truth(&scene, &query).unwrap();
        prop_assert_eq!(truth, again);
        prop_assert!(truth.0 < query.options.len());
    }

    /// Feature rows always have the fixed dimension with entries in
    /// [-1, 1].
    #[test]
    fn features_are_bounded(seed in 0u64..1_000_000) {
        let (scene, query, _) = instance(seed);
        let rows = option_features(&scene, &query).unwrap();
        prop_assert_eq!(rows.len(), query.options.len());
        for row in rows {
            prop_assert_eq!(row.len(), FEATURE_DIM);
            for x in row {
                prop_assert!(x.is_finite() && (-1.0..=1.0).contains(&x));
            }
        }
    }

    /// Advantages center to zero mean and unit population std for any
    /// non-degenerate reward group.
    #[test]
    fn advantages_standardize(rewards in proptest::collection::vec(0.0f64..2.0, 2..16)) {
        let g = group_advantages(&rewards).unwrap();
        if !g.degenerate {
            let n = rewards.len() as f64;
            let mean = g.advantages.iter().sum::<f64>() / n;
            let std = (g.advantages.iter().map(|a| a * a).sum::<f64>() / n).sqrt();
            prop_assert!(mean.abs() <= 1e-9);
            prop_assert!((std - 1.0).abs() <= 1e-6);
        } else {
            prop_assert!(g.advantages.iter().all(|a| *a == 0.0));
        }
    }

    /// Policy checkpoints survive a JSON round-trip bit-exactly.
    #[test]
    fn checkpoint_json_round_trips(ws in proptest::collection::vec(-10.0f64..10.0, FEATURE_DIM), b in -5.0f64..5.0) {
        let params = sage_core::policy::PolicyParams { w: ws, format_logit: b };
        let json = serde_json::to_string(&PolicyCheckpoint::from_params(&params)).unwrap();
        let back: PolicyCheckpoint = serde_json::from_str(&json).unwrap();
        let restored = back.into_params().unwrap();
        prop_assert_eq!(restored.w, params.w);
        prop_assert!(restored.format_logit == params.format_logit);
    }
}
