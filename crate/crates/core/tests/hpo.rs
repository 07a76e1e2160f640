use std::collections::BTreeMap;

use hgnn_core::hpo::{
    build_search_space, median, rank_models, read_ledger, run_study, sample_uniform, suggest, MedianPruner, Observation,
    ParamKind, ParamSpec, ParamValue, Params, RankingPolicy, SearchSpace, StudyConfig, TpeSettings, TrialState,
};
use hgnn_core::ingest::{generate_synthetic_log, EncodedDataset, SplitOptions, SyntheticSpec};
use hgnn_core::model::{Architecture, Batch, InputDims, Model};
use hgnn_core::ops::OperatorKind;
use hgnn_core::train::MetricsReport;
use hgnn_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pairs() -> Vec<(Architecture, OperatorKind)> {
    Architecture::ALL
        .iter()
        .flat_map(|&a| OperatorKind::ALL.iter().map(move |&o| (a, o)))
        .collect()
}

fn dataset(n_cases: usize, seed: u64) -> EncodedDataset {
    let log = generate_synthetic_log(&SyntheticSpec {
        n_cases,
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap();
    EncodedDataset::build(&log.traces, &log.schema, &SplitOptions::default()).unwrap()
}

fn random_history(space: &SearchSpace, n: usize, rng: &mut ChaCha8Rng) -> Vec<(Params, f64)> {
    (0..n).map(|_| (sample_uniform(space, rng), rng.random::<f64>())).collect()
}

fn observations(history: &[(Params, f64)]) -> Vec<Observation<'_>> {
    history.iter().map(|(p, v)| Observation { params: p, value: *v }).collect()
}

#[test]
fn spaces_are_well_formed_and_conditional() {
    for (arch, op) in pairs() {
        let space = build_search_space(arch, op);
        space.check().unwrap();
        let has = |n: &str| space.get(n).is_some();
        assert_eq!(has("embedding_dim"), arch == Architecture::TwoLevelEmbedding);
        assert_eq!(has("embedding_layers"), arch == Architecture::TwoLevelEmbedding);
        assert_eq!(has("pseudo_layers"), arch == Architecture::TwoLevelPseudo);
        assert_eq!(has("concat_layers"), arch == Architecture::TwoLevelPseudo);
        assert_eq!(has("sequence_layers"), arch.is_two_level());
        assert_eq!(has("graph_aggregation"), op == OperatorKind::Graph);
        assert_eq!(has("order"), matches!(op, OperatorKind::Tag | OperatorKind::Cheb));
        if let Some(ParamSpec {
            kind: ParamKind::Int { low, high },
            ..
        }) = space.get("order")
        {
            assert_eq!((*low, *high), (1, 4));
        }
    }
}

#[test]
fn every_sampled_config_uses_only_active_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (arch, op) in pairs() {
        let space = build_search_space(arch, op);
        for _ in 0..50 {
            let p = sample_uniform(&space, &mut rng);
            let layers = match p["gnn_layers"] {
                ParamValue::Int(n) => n,
                _ => unreachable!(),
            };
            for i in 1..=5 {
                assert_eq!(p.contains_key(&format!("gnn_layer_{i}_units")), i <= layers);
            }
            for (name, opt) in [("adam_beta1", "adam"), ("sgd_momentum", "sgd"), ("rmsprop_alpha", "rmsprop")] {
                assert_eq!(p.contains_key(name), p["optimizer"] == ParamValue::Choice(opt.into()));
            }
            let c = space.to_config(&p, 3).unwrap();
            assert_eq!(c.gnn_layers.len() as i64, layers);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn uniform_samples_respect_bounds(seed in any::<u64>(), pair in 0usize..24) {
        let (arch, op) = pairs()[pair];
        let space = build_search_space(arch, op);
        let p = sample_uniform(&space, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(space.validate_params(&p).is_ok());
        let c = space.to_config(&p, 2).unwrap();
        if let hgnn_core::train::SchedulerConfig::Cyclic { base_lr, max_lr, .. } = c.scheduler {
            prop_assert!(base_lr <= max_lr);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn tpe_samples_respect_bounds(seed in any::<u64>(), pair in 0usize..24) {
        let (arch, op) = pairs()[pair];
        let space = build_search_space(arch, op);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let history = random_history(&space, 16, &mut rng);
        let p = suggest(&space, &observations(&history), &TpeSettings::default(), &mut rng);
        prop_assert!(space.validate_params(&p).is_ok(), "{:?}", space.validate_params(&p));
        prop_assert!(space.to_config(&p, 2).is_ok());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn sampled_configs_build_and_forward(seed in any::<u64>(), pair in 0usize..24) {
        let data = shared_data();
        let (arch, op) = pairs()[pair];
        let space = build_search_space(arch, op);
        let p = sample_uniform(&space, &mut ChaCha8Rng::seed_from_u64(seed));
        let config = space.to_config(&p, data.dims.n_classes).unwrap();
        let model = Model::new(&config, InputDims::from(&data.dims), seed).unwrap();
        model.set_training(seed % 2 == 0);
        let graphs: Vec<_> = data.train.iter().take(3).collect();
        let batch = Batch::from_graphs(&graphs).unwrap();
        let out = model.forward(&batch).unwrap().to_matrix();
        prop_assert_eq!(out.shape(), (3, data.dims.n_classes));
        prop_assert!(out.data().iter().all(|v| v.is_finite()));
    }
}

fn shared_data() -> &'static EncodedDataset {
    static DATA: std::sync::OnceLock<EncodedDataset> = std::sync::OnceLock::new();
    DATA.get_or_init(|| dataset(30, 21))
}

fn chi_square(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    let e = n as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
}

#[test]
fn uniform_sampling_passes_chi_square() {
    let space = build_search_space(Architecture::OneLevel, OperatorKind::Gcn);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut acts: BTreeMap<String, usize> = BTreeMap::new();
    let mut layers = [0usize; 5];
    let mut batch = [0usize; 5];
    for _ in 0..6000 {
        let p = sample_uniform(&space, &mut rng);
        *acts.entry(p["gnn_layer_1_activation"].to_string()).or_default() += 1;
        if let ParamValue::Int(n) = p["gnn_layers"] {
            layers[n as usize - 1] += 1;
        }
        let b = p["batch_size"].to_string();
        batch[[16, 32, 64, 128, 512].iter().position(|x| x.to_string() == b).unwrap()] += 1;
    }
    assert_eq!(acts.len(), 6);
    // critical values at p = 0.001
    assert!(chi_square(&acts.values().copied().collect::<Vec<_>>()) < 20.52);
    assert!(chi_square(&layers) < 18.47);
    assert!(chi_square(&batch) < 18.47);
}

fn one_param_space(spec: ParamSpec) -> SearchSpace {
    SearchSpace {
        architecture: Architecture::OneLevel,
        operator: OperatorKind::Gcn,
        params: vec![spec],
    }
}

#[test]
fn tpe_prefers_choice_common_among_good_trials() {
    let space = one_param_space(ParamSpec {
        name: "activation".into(),
        kind: ParamKind::Categorical {
            choices: ["relu", "leaky_relu", "elu", "tanh", "softplus", "gelu"].map(String::from).to_vec(),
        },
        condition: vec![],
    });
    let choices = ["relu", "leaky_relu", "elu", "tanh", "softplus"];
    let mut history = Vec::new();
    for i in 0..40 {
        let (act, value) = if i < 10 {
            (if i == 0 { "relu" } else { "gelu" }, 0.9)
        } else {
            (choices[i % 5], 0.5)
        };
        history.push((Params::from([("activation".to_string(), ParamValue::Choice(act.into()))]), value));
    }
    let obs = observations(&history);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 1000;
    let gelu = (0..n)
        .filter(|_| suggest(&space, &obs, &TpeSettings::default(), &mut rng)["activation"] == ParamValue::Choice("gelu".into()))
        .count();
    assert!(gelu as f64 / n as f64 > 1.0 / 6.0, "gelu suggested {gelu}/{n}");
}

fn lr_objective(p: &Params, optimum: f64) -> f64 {
    match p["lr"] {
        ParamValue::Float(x) => -(x.log10() - optimum).powi(2),
        _ => unreachable!(),
    }
}

fn lr_space() -> SearchSpace {
    one_param_space(ParamSpec {
        name: "lr".into(),
        kind: ParamKind::FloatLog { low: 1e-5, high: 1e-2 },
        condition: vec![],
    })
}

#[test]
fn log_uniform_draws_spread_evenly_over_decades() {
    let space = lr_space();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut decades = [0usize; 3];
    for _ in 0..10_000 {
        if let ParamValue::Float(x) = sample_uniform(&space, &mut rng)["lr"] {
            decades[((x.log10() + 5.0).floor() as usize).min(2)] += 1;
        }
    }
    // critical value for 2 degrees of freedom at p = 0.001
    assert!(chi_square(&decades) < 13.82, "{decades:?}");
}

/// Wins of the best of 30 TPE trials over the best of 30 random trials in
/// 20 seeded repetitions.
fn tpe_wins(optimum: f64) -> usize {
    let space = lr_space();
    let settings = TpeSettings::default();
    (0..20u64)
        .filter(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut tpe: Vec<(Params, f64)> = Vec::new();
            for _ in 0..30 {
                let p = suggest(&space, &observations(&tpe), &settings, &mut rng);
                let v = lr_objective(&p, optimum);
                tpe.push((p, v));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let random_best = (0..30)
                .map(|_| lr_objective(&sample_uniform(&space, &mut rng), optimum))
                .fold(f64::MIN, f64::max);
            tpe.iter().map(|t| t.1).fold(f64::MIN, f64::max) > random_best
        })
        .count()
}

#[test]
fn tpe_beats_random_search_on_smooth_objective() {
    let blocks: Vec<usize> = [-4.6, -4.0, -3.3, -3.0, -2.5].into_iter().map(tpe_wins).collect();
    let total: usize = blocks.iter().sum();
    println!("tpe wins per block of 20: {blocks:?}");
    assert!(total * 10 >= 7 * 100, "tpe won {total}/100 {blocks:?}");
}

#[test]
fn tpe_is_uniform_before_startup() {
    let space = build_search_space(Architecture::TwoLevel, OperatorKind::Sage);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let history = random_history(&space, 9, &mut rng);
    let a = suggest(&space, &observations(&history), &TpeSettings::default(), &mut ChaCha8Rng::seed_from_u64(4));
    let b = sample_uniform(&space, &mut ChaCha8Rng::seed_from_u64(4));
    assert_eq!(a, b);
}

#[test]
fn median_pruner_cases() {
    let p = MedianPruner {
        warmup_epochs: 5,
        min_trials: 3,
    };
    let peers = [0.5, 0.6, 0.7];
    assert_eq!(median(&peers), Some(0.6));
    assert!((median(&[0.8, 0.6, 0.7, 0.5]).unwrap() - 0.65).abs() < 1e-12);
    assert!(p.should_prune(10, 0.55, &peers));
    assert!(!p.should_prune(10, 0.6, &peers));
    assert!(p.should_prune(5, 0.55, &peers));
    assert!(!p.should_prune(4, 0.1, &peers));
    assert!(!p.should_prune(10, 0.1, &peers[..2]));
    assert!(!MedianPruner::default().should_prune(20, 0.0, &[1.0; 9]));
}

proptest! {
    #[test]
    fn dominant_trials_are_never_pruned(
        peers in prop::collection::vec(0.0f64..1.0, 0..30),
        margin in 1e-9f64..1.0,
        epoch in 1usize..300,
    ) {
        let top = peers.iter().copied().fold(0.0, f64::max);
        prop_assert!(!MedianPruner::default().should_prune(epoch, top + margin, &peers));
        let eager = MedianPruner { warmup_epochs: 0, min_trials: 0 };
        prop_assert!(!eager.should_prune(epoch, top + margin, &peers));
    }
}

fn report(accuracy: f64, weighted_f1: f64, mean_loss: f64, loss_std: f64) -> MetricsReport {
    MetricsReport {
        accuracy,
        weighted_f1,
        mean_loss,
        loss_std,
        per_class_f1: vec![],
    }
}

#[test]
fn ranking_follows_policy_then_loss() {
    use Architecture::*;
    use OperatorKind::*;
    let results = vec![
        (OneLevel, Gcn, report(0.90, 0.70, 0.30, 0.1)),
        (TwoLevel, Gcn, report(0.85, 0.80, 0.20, 0.1)),
        (TwoLevel, Sage, report(0.90, 0.60, 0.25, 0.1)),
        (OneLevel, Sage, report(0.90, 0.60, 0.25, 0.1)),
        (OneLevel, Tag, report(0.90, 0.60, 0.25, 0.05)),
    ];
    let balanced: Vec<_> = rank_models(&results, RankingPolicy::Balanced).iter().map(|r| (r.0, r.1)).collect();
    assert_eq!(
        balanced,
        vec![(OneLevel, Tag), (OneLevel, Sage), (TwoLevel, Sage), (OneLevel, Gcn), (TwoLevel, Gcn)]
    );
    let imbalanced = rank_models(&results, RankingPolicy::Imbalanced);
    assert_eq!((imbalanced[0].0, imbalanced[0].1), (TwoLevel, Gcn));

    let pair = vec![(OneLevel, Gcn, report(0.0, 0.80, 0.3, 0.1)), (TwoLevel, Gin, report(0.0, 0.86, 0.3, 0.1))];
    assert_eq!(rank_models(&pair, RankingPolicy::Imbalanced)[0].1, Gin);
    let spread = vec![(OneLevel, Gcn, report(0.0, 0.8, 0.3, 0.3)), (TwoLevel, Gin, report(0.0, 0.8, 0.3, 0.1))];
    assert_eq!(rank_models(&spread, RankingPolicy::Imbalanced)[0].1, Gin);
    let single = vec![(OneLevel, Cheb, report(0.5, 0.5, 1.0, 0.0))];
    assert_eq!(rank_models(&single, RankingPolicy::Balanced), single);
}

fn quick_study(arch: Architecture, op: OperatorKind, n_trials: usize) -> StudyConfig {
    let mut c = StudyConfig::new(arch, op);
    c.n_trials = n_trials;
    c.max_epochs = 3;
    c.patience = Some(2);
    c.seed = 17;
    c.retrain = false;
    c
}

#[test]
fn sequential_studies_reproduce_ledgers_and_resume() {
    let data = dataset(50, 8);
    let dir = tempfile::tempdir().unwrap();
    let config = quick_study(Architecture::OneLevel, OperatorKind::Gcn, 4);
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    let c = dir.path().join("c.jsonl");
    let out_a = run_study(&config, &data, Some(&a), false).unwrap();
    run_study(&config, &data, Some(&b), false).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let mut half = config.clone();
    half.n_trials = 2;
    run_study(&half, &data, Some(&c), false).unwrap();
    let resumed = run_study(&config, &data, Some(&c), true).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
    assert_eq!(resumed.best_trial, out_a.best_trial);

    let records = read_ledger(&a).unwrap();
    assert_eq!(records.len(), 4);
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r.index, i);
        assert_eq!(r.state == TrialState::Complete, r.final_metrics.is_some());
    }
    assert_eq!(records, out_a.trials);
}

#[test]
fn resume_rejects_foreign_ledger() {
    let data = dataset(40, 9);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("l.jsonl");
    run_study(&quick_study(Architecture::OneLevel, OperatorKind::Gcn, 1), &data, Some(&path), false).unwrap();
    let other = quick_study(Architecture::TwoLevelEmbedding, OperatorKind::Tag, 2);
    assert!(matches!(run_study(&other, &data, Some(&path), true), Err(Error::Study(_))));
}

#[test]
fn winner_is_best_completed_trial_and_retrains() {
    let data = dataset(60, 10);
    let mut config = quick_study(Architecture::TwoLevel, OperatorKind::Sage, 3);
    config.retrain = true;
    config.max_epochs = 4;
    let out = run_study(&config, &data, None, false).unwrap();
    let best = &out.trials[out.best_trial];
    assert_eq!(best.state, TrialState::Complete);
    for t in out.trials.iter().filter(|t| t.state == TrialState::Complete) {
        let m = t.final_metrics.as_ref().unwrap();
        assert!(m.accuracy <= out.tuned_metrics.accuracy);
    }
    let retrained = out.retrained.unwrap();
    assert_eq!(retrained.history.len(), 4);
    assert!(!retrained.stopped_early);
    assert!(out.model.is_some());
}

#[test]
fn single_trial_study_picks_that_trial() {
    let data = dataset(40, 14);
    let out = run_study(&quick_study(Architecture::OneLevel, OperatorKind::Tag, 1), &data, None, false).unwrap();
    assert_eq!(out.trials.len(), 1);
    assert_eq!(out.best_trial, 0);
}

#[test]
fn trial_records_keep_epochs_increasing() {
    let data = dataset(40, 15);
    let out = run_study(&quick_study(Architecture::OneLevel, OperatorKind::Cheb, 3), &data, None, false).unwrap();
    for t in &out.trials {
        assert!(t.intermediate.windows(2).all(|w| w[0].0 < w[1].0));
        assert_eq!(t.intermediate.first().map(|e| e.0), Some(1));
    }
}

#[test]
fn parallel_waves_complete_every_trial() {
    let data = dataset(50, 12);
    let mut config = quick_study(Architecture::OneLevel, OperatorKind::Gin, 5);
    config.workers = 3;
    let out = run_study(&config, &data, None, false).unwrap();
    assert_eq!(out.trials.len(), 5);
    assert!(out.trials.iter().enumerate().all(|(i, t)| t.index == i));
}

#[test]
fn study_with_no_completed_trial_is_an_error() {
    let mut data = dataset(40, 13);
    data.dims.d_graph = 0;
    let config = quick_study(Architecture::TwoLevel, OperatorKind::Gcn, 2);
    match run_study(&config, &data, None, false) {
        Err(Error::Study(msg)) => assert!(msg.contains("none of 2 trials completed"), "{msg}"),
        other => panic!("expected a study error, got {:?}", other.map(|o| o.best_trial)),
    }
}

#[test]
fn param_values_survive_json() {
    let p = Params::from([
        ("a".to_string(), ParamValue::Float(0.0)),
        ("b".to_string(), ParamValue::Int(3)),
        ("c".to_string(), ParamValue::Choice("yes".into())),
        ("d".to_string(), ParamValue::Float(6.7609e-8)),
    ]);
    let back: Params = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
    assert_eq!(back, p);
}
