mod common;

use std::collections::BTreeMap;

use fedstr::events::{build_job_request, parse_job_request, JobRequest};
use fedstr::ml::{
    deserialize_params, init_model, inner_optimize, loss, outer_diloco, outer_fedavg, serialize_params,
    split_dataset, synthetic_linear, synthetic_linear_holdout, InnerHyperparams, LossSpec, ModelParams, ModelSpec,
    OuterState, RunOption, TensorSpec,
};
use fedstr::nostr::{compute_event_id, generate_keypair, matches_filter, sign_event, verify_event, EventTemplate, Filter};
use fedstr::payments::Bolt11Stub;
use fedstr::store::{get_model, put_model, FileStore};
use fedstr::validation::{validate_test_a, validate_test_b, TestType, ValidationConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn params(v: Vec<f64>) -> ModelParams {
    let n = v.len();
    ModelParams::new(v, vec![TensorSpec::new("w", vec![n])]).unwrap()
}

fn template_strategy() -> impl Strategy<Value = EventTemplate> {
    (
        any::<u64>(),
        any::<u16>(),
        prop::collection::vec(prop::collection::vec(".{0,6}", 1..4), 0..4),
        ".{0,40}",
    )
        .prop_map(|(ts, kind, tags, content)| EventTemplate::new("", ts, kind, tags, content))
}

fn validation_cfg(dim: usize, seed: u64) -> ValidationConfig {
    ValidationConfig {
        test_type: TestType::A,
        gamma_t: 0.0,
        beta_t: 0.0,
        tau_c: 2,
        test_dataset: synthetic_linear_holdout(30, dim, 0.1, seed, 0).unwrap(),
        loss: LossSpec::Mse,
        model: ModelSpec::linear(dim),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn signed_events_verify_and_ids_are_pure(mut t in template_strategy(), seed in any::<[u8; 32]>()) {
        let k = generate_keypair(Some(seed)).unwrap();
        t.pubkey = k.public_key().to_string();
        prop_assert_eq!(compute_event_id(&t), compute_event_id(&t.clone()));
        let e = sign_event(t, &k).unwrap();
        prop_assert!(verify_event(&e));
    }

    #[test]
    fn content_or_tag_edits_break_signatures(t in template_strategy(), extra in ".{1,8}") {
        let k = generate_keypair(None).unwrap();
        let mut t = t;
        t.pubkey = k.public_key().to_string();
        let e = sign_event(t, &k).unwrap();
        let mut a = e.clone();
        a.content.push_str(&extra);
        prop_assert!(!verify_event(&a));
        let mut b = e;
        b.tags.push(vec![extra]);
        prop_assert!(!verify_event(&b));
    }

    #[test]
    fn merged_disjoint_filters_imply_both(
        kind in 0u16..4,
        ts in 0u64..100,
        tag_value in 0u8..3,
        want_kinds in prop::collection::vec(0u16..4, 1..3),
        since in 0u64..100,
        want_tag in 0u8..3,
    ) {
        let k = generate_keypair(Some([7; 32])).unwrap();
        let t = EventTemplate::new(k.public_key(), ts, kind, vec![vec!["t".into(), tag_value.to_string()]], "");
        let e = sign_event(t, &k).unwrap();
        let f1 = Filter::new().kinds(want_kinds.clone()).authors([&k.public_key()[..8]]);
        let f2 = Filter::new().since(since).tag('t', [want_tag.to_string()]);
        let merged = Filter::new()
            .kinds(want_kinds)
            .authors([&k.public_key()[..8]])
            .since(since)
            .tag('t', [want_tag.to_string()]);
        if matches_filter(&e, &merged) {
            prop_assert!(matches_filter(&e, &f1) && matches_filter(&e, &f2));
        }
        prop_assert_eq!(matches_filter(&e, &merged), matches_filter(&e, &f1) && matches_filter(&e, &f2));
    }

    #[test]
    fn job_requests_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = common::job_request(&mut rng);
        let k = generate_keypair(None).unwrap();
        let e = build_job_request(&r, &k).unwrap();
        prop_assert_eq!(parse_job_request(&e).unwrap(), r);
    }

    #[test]
    fn unknown_params_survive(name in "[a-z_]{3,10}", value in ".{0,30}") {
        prop_assume!(!["task", "model", "data_set", "source_code"].contains(&name.as_str()));
        let mut r = JobRequest::new(8000, fedstr::events::Task::Inner, RunOption::FedAvg);
        r.inputs.push(fedstr::events::JobInput::url("file:///d.csv"));
        r.extra_params.push((name.clone(), value.clone()));
        let e = build_job_request(&r, &generate_keypair(None).unwrap()).unwrap();
        let back = parse_job_request(&e).unwrap();
        prop_assert_eq!(back.param(&name), Some(value.as_str()));
    }

    #[test]
    fn put_model_is_idempotent_and_detects_any_flip(
        blob in prop::collection::vec(any::<u8>(), 1..512),
        at in any::<prop::sample::Index>(),
        mask in 1u8..=255,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::new(dir.path()).unwrap();
        let a = put_model(&blob, &store).unwrap();
        let b = put_model(&blob, &store).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(get_model(&a, &store).unwrap(), blob.clone());
        let mut bad = blob.clone();
        let i = at.index(bad.len());
        bad[i] ^= mask;
        std::fs::write(store.path_for(&a.sha256), bad).unwrap();
        prop_assert!(get_model(&a, &store).is_err());
    }

    #[test]
    fn param_blobs_round_trip(values in prop::collection::vec(-1e300f64..1e300, 1..64)) {
        let p = params(values);
        prop_assert_eq!(deserialize_params(&serialize_params(&p).unwrap()).unwrap(), p);
    }

    #[test]
    fn fedavg_of_copies_is_identity(values in prop::collection::vec(-1e6f64..1e6, 1..32), k in 1usize..8) {
        let p = params(values);
        let copies = vec![p.clone(); k];
        let out = outer_fedavg(&copies, &[]).unwrap();
        for (a, b) in out.values.iter().zip(&p.values) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn diloco_fixed_point_keeps_global(values in prop::collection::vec(-1e6f64..1e6, 1..32), k in 1usize..5) {
        let g = params(values);
        let (out, st) = outer_diloco(&g, &vec![g.clone(); k], &OuterState::default()).unwrap();
        prop_assert_eq!(out, g);
        prop_assert!(st.velocity.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn bolt11_amount_round_trips(amount in 1u64..u64::MAX, hash in any::<[u8; 8]>()) {
        let s = Bolt11Stub { amount_msats: amount, payment_hash: hash }.to_string();
        prop_assert_eq!(s.parse::<Bolt11Stub>().unwrap().amount_msats, amount);
    }

    #[test]
    fn test_a_zero_updates_always_pass(gamma in 0.0f64..100.0, k in 1usize..5) {
        let mut c = validation_cfg(3, 1);
        c.gamma_t = gamma;
        let g = params(vec![0.3, -0.1, 0.2, 0.05]);
        let g = ModelParams::new(g.values, c.model.layout()).unwrap();
        let deltas: BTreeMap<String, Vec<f64>> = (0..k).map(|i| (format!("p{i}"), vec![0.0; 4])).collect();
        for name in deltas.keys() {
            prop_assert!(validate_test_a(name, &g, &deltas, &c).unwrap().is_pass());
        }
    }

    #[test]
    fn test_a_is_label_symmetric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = validation_cfg(2, seed);
        let g = init_model(&c.model).unwrap();
        let ds: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..3).map(|_| rand::Rng::gen_range(&mut rng, -2.0..2.0)).collect())
            .collect();
        let a: BTreeMap<String, Vec<f64>> = ["a", "b", "c"].iter().map(|s| s.to_string()).zip(ds.clone()).collect();
        let b: BTreeMap<String, Vec<f64>> = ["z", "y", "x"].iter().map(|s| s.to_string()).zip(ds).collect();
        for (from, to) in [("a", "z"), ("b", "y"), ("c", "x")] {
            prop_assert_eq!(
                validate_test_a(from, &g, &a, &c).unwrap(),
                validate_test_a(to, &g, &b, &c).unwrap()
            );
        }
    }

    #[test]
    fn test_b_fail_is_monotone_in_beta(biases in prop::collection::vec(-3.0f64..3.0, 3..6), beta in 0.0f64..20.0, lower in 0.0f64..20.0) {
        let mut c = validation_cfg(1, 3);
        let hist: Vec<ModelParams> = biases
            .iter()
            .map(|b| ModelParams::new(vec![0.0, *b], c.model.layout()).unwrap())
            .collect();
        c.beta_t = beta;
        let at_beta = validate_test_b(&hist, &c).unwrap();
        c.beta_t = beta - lower;
        let below = validate_test_b(&hist, &c).unwrap();
        if !at_beta.is_pass() {
            prop_assert!(!below.is_pass());
        }
    }
}

#[test]
fn inner_optimize_is_bitwise_reproducible() {
    let (d, _, _) = synthetic_linear(200, 4, 0.1, 9).unwrap();
    let spec = ModelSpec::linear(4);
    let p = init_model(&spec).unwrap();
    for run in [RunOption::FedAvg, RunOption::DiLoCo] {
        let hp = InnerHyperparams {
            shuffle_seed: 42,
            ..Default::default()
        };
        let a = inner_optimize(&p, &spec, LossSpec::Mse, &d, run, &hp, &mut |_, _| {}).unwrap();
        let b = inner_optimize(&p, &spec, LossSpec::Mse, &d, run, &hp, &mut |_, _| {}).unwrap();
        assert_eq!(serialize_params(&a).unwrap(), serialize_params(&b).unwrap());
    }
}

#[test]
fn one_fedavg_round_lowers_full_data_loss() {
    for seed in 0..10 {
        let (d, _, _) = synthetic_linear(600, 5, 0.1, seed).unwrap();
        let spec = ModelSpec::linear(5);
        let g = init_model(&spec).unwrap();
        let hp = InnerHyperparams {
            epochs: 1,
            learning_rate: 0.01,
            shuffle_seed: seed,
            ..Default::default()
        };
        let inner: Vec<ModelParams> = split_dataset(&d, 3, seed)
            .unwrap()
            .iter()
            .map(|s| inner_optimize(&g, &spec, LossSpec::Mse, s, RunOption::FedAvg, &hp, &mut |_, _| {}).unwrap())
            .collect();
        let next = outer_fedavg(&inner, &[]).unwrap();
        let before = loss(&g, &spec, LossSpec::Mse, &d).unwrap();
        let after = loss(&next, &spec, LossSpec::Mse, &d).unwrap();
        assert!(after < before, "seed {seed}: {before} -> {after}");
    }
}
