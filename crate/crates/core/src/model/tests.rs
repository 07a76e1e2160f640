use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::ingest::EncodedGraph;
use crate::ops::{Aggregation, OperatorKind};
use crate::tensor::{check_gradients, ActivationKind, Matrix, Tensor, FD_STEP};
use crate::train::LossKind;

const DIMS: InputDims = InputDims {
    d_node: 6,
    d_graph: 3,
    n_bins: 5,
    n_activities: 4,
};

fn random_graph(n: usize, dims: InputDims, n_classes: usize, rng: &mut ChaCha8Rng) -> EncodedGraph {
    let mut x = Matrix::zeros(n, dims.d_node);
    let mut activity_ids = Vec::new();
    for i in 0..n {
        let a = rng.random_range(0..dims.n_activities);
        x.set(i, a, 1.0);
        for c in dims.n_activities..dims.d_node {
            x.set(i, c, rng.random());
        }
        activity_ids.push(Some(a));
    }
    EncodedGraph {
        node_features: x,
        edge_index: [(0..n - 1).collect(), (1..n).collect()],
        edge_weights: (1..n).map(|_| rng.random()).collect(),
        graph_features: (0..dims.d_graph).map(|_| rng.random()).collect(),
        label: rng.random_range(0..n_classes),
        activity_ids,
        duration_bins: (0..n).map(|_| rng.random_range(0..dims.n_bins)).collect(),
        feature_mask: vec![false; n * dims.d_node],
    }
}

fn random_batch(sizes: &[usize], dims: InputDims, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graphs: Vec<EncodedGraph> = sizes.iter().map(|&n| random_graph(n, dims, 2, &mut rng)).collect();
    Batch::from_graphs(&graphs.iter().collect::<Vec<_>>()).unwrap()
}

fn layer(units: usize, activation: ActivationKind) -> LayerSpec {
    LayerSpec::new(units, activation)
}

fn config(arch: Architecture, op: OperatorKind) -> ModelConfig {
    ModelConfig::minimal(arch, op, 2)
}

fn eval_logits(model: &Model, batch: &Batch) -> Matrix {
    model.set_training(false);
    model.forward(batch).unwrap().to_matrix()
}

#[test]
fn one_level_output_width() {
    let mut c = config(Architecture::OneLevel, OperatorKind::Gcn);
    c.gnn_layers = vec![layer(16, ActivationKind::Relu)];
    let m = build_model(&c, DIMS).unwrap();
    let logits = m.forward(&random_batch(&[3], DIMS, 0)).unwrap();
    assert_eq!(logits.shape(), (1, 2));
}

#[test]
fn embedding_table_shape() {
    let mut c = config(Architecture::TwoLevelEmbedding, OperatorKind::Gin);
    c.embedding_dim = Some(10);
    let dims = InputDims {
        d_node: 30,
        n_activities: 24,
        ..DIMS
    };
    let m = build_model(&c, dims).unwrap();
    assert_eq!(m.embedding_table().unwrap().shape(), (24, 10));
}

#[test]
fn one_level_concatenates_graph_features() {
    let dims = InputDims {
        d_node: 4,
        d_graph: 2,
        n_bins: 3,
        n_activities: 2,
    };
    let m = build_model(&config(Architecture::OneLevel, OperatorKind::Sage), dims).unwrap();
    assert_eq!(m.gnn_input_width(), 6);
    let logits = m.forward(&random_batch(&[3, 5], dims, 1)).unwrap();
    assert_eq!(logits.shape(), (2, 2));
}

#[test]
fn zero_graph_features_equal_unaugmented_model() {
    for op in [OperatorKind::Gcn, OperatorKind::Sage, OperatorKind::Tag] {
        let c = config(Architecture::OneLevel, op);
        let full = build_model(&c, DIMS).unwrap();
        let plain_dims = InputDims { d_graph: 0, ..DIMS };
        let plain = build_model(&c, plain_dims).unwrap();
        // copy every parameter, dropping the graph-feature rows of the first layer
        let in_full = DIMS.d_node + DIMS.d_graph;
        let mut state = full.state();
        for (i, p) in state.parameters.iter_mut().enumerate() {
            if i >= plain.parameters().len() || plain.parameters()[i].shape() == p.shape() {
                continue;
            }
            let keep: Vec<Vec<f64>> = p
                .to_rows()
                .into_iter()
                .enumerate()
                .filter(|(r, _)| r % in_full < DIMS.d_node)
                .map(|(_, row)| row)
                .collect();
            *p = Matrix::from_rows(&keep).unwrap();
        }
        plain.load_state(&state).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut graphs: Vec<EncodedGraph> = (0..3).map(|_| random_graph(4, DIMS, 2, &mut rng)).collect();
        for g in &mut graphs {
            g.graph_features.fill(0.0);
        }
        let batch = Batch::from_graphs(&graphs.iter().collect::<Vec<_>>()).unwrap();
        let stripped: Vec<EncodedGraph> = graphs
            .into_iter()
            .map(|mut g| {
                g.graph_features.clear();
                g
            })
            .collect();
        let plain_batch = Batch::from_graphs(&stripped.iter().collect::<Vec<_>>()).unwrap();
        let a = eval_logits(&full, &batch);
        let b = eval_logits(&plain, &plain_batch);
        assert!(a.max_abs_diff(&b) < 1e-12, "{op}");
    }
}

#[test]
fn two_level_fusion_width_and_sequence_ablation() {
    let mut c = config(Architecture::TwoLevel, OperatorKind::Graph);
    c.gnn_layers = vec![layer(12, ActivationKind::Tanh)];
    c.sequence_dense_layers = vec![layer(7, ActivationKind::Elu)];
    let m = build_model(&c, DIMS).unwrap();
    assert_eq!(m.final_input_width(), 19);

    m.zero_sequence_branch();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = random_graph(5, DIMS, 2, &mut rng);
    let mut h = g.clone();
    h.graph_features = vec![0.9, -3.0, 12.0];
    let a = eval_logits(&m, &Batch::from_graphs(&[&g]).unwrap());
    let b = eval_logits(&m, &Batch::from_graphs(&[&h]).unwrap());
    assert_eq!(a, b);
}

#[test]
fn batch_of_one_passes_every_architecture() {
    for arch in Architecture::ALL {
        let mut c = config(arch, OperatorKind::Cheb);
        for stack in [&mut c.gnn_layers, &mut c.final_dense_layers] {
            stack[0].batch_norm = Some(BatchNormSpec {
                momentum: 0.1,
                eps: 1e-5,
            });
        }
        let m = build_model(&c, DIMS).unwrap();
        let batch = random_batch(&[1], DIMS, 4);
        let train = m.forward(&batch).unwrap();
        assert!(train.values().iter().all(|v| v.is_finite()));
        assert!(eval_logits(&m, &batch).data().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn pseudo_path_widths() {
    let mut c = config(Architecture::TwoLevelPseudo, OperatorKind::Tag);
    c.gnn_layers = vec![layer(8, ActivationKind::Relu)];
    c.pseudo_gnn_layers = vec![layer(5, ActivationKind::Gelu)];
    let dims = InputDims { n_bins: 10, ..DIMS };
    let m = build_model(&c, dims).unwrap();
    let text = dump_config(&c, &dims, None);
    assert!(text.contains("Duration Embedding Input Size: 10"));
    let concat_in: usize = m.parameters().len();
    assert!(concat_in > 0);
    let batch = random_batch(&[4, 2], dims, 5);
    assert_eq!(m.forward(&batch).unwrap().shape(), (2, 2));

    let mut bad = batch.clone();
    bad.duration_bins[0] = 10;
    assert!(matches!(m.forward(&bad), Err(crate::Error::Contract(_))));

    let one_bin = Batch {
        duration_bins: vec![3; batch.n_nodes()],
        ..batch
    };
    let ind = one_bin.bin_indicators(10).unwrap();
    assert!(ind.to_rows().windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn concat_stack_reads_both_paths() {
    let mut c = config(Architecture::TwoLevelPseudo, OperatorKind::Gcn);
    c.gnn_layers = vec![layer(8, ActivationKind::Relu)];
    c.pseudo_gnn_layers = vec![layer(5, ActivationKind::Relu)];
    c.concat_gnn_layers = vec![layer(4, ActivationKind::Relu)];
    let m = build_model(&c, DIMS).unwrap();
    // gnn W (6×8), pseudo W (5×5), concat W (13×4)
    let shapes: Vec<_> = m.parameters().iter().take(3).map(Tensor::shape).collect();
    assert_eq!(shapes, vec![(6, 8), (5, 5), (13, 4)]);
}

#[test]
fn embedding_rows_shared_and_gradient_flows() {
    let c = config(Architecture::TwoLevelEmbedding, OperatorKind::Gcn);
    let m = build_model(&c, DIMS).unwrap();
    let table = m.embedding_table().unwrap().clone();
    let ids: std::rc::Rc<[Option<usize>]> = vec![Some(2), Some(2), None].into();
    let rows = table.gather_rows(ids).unwrap().to_matrix();
    assert_eq!(rows.row(0), rows.row(1));
    assert!(rows.row(2).iter().all(|&v| v == 0.0));

    let batch = random_batch(&[4, 3], DIMS, 6);
    let loss = || LossKind::CrossEntropy.apply(&m.forward(&batch)?, batch.labels.clone());
    table.zero_grad();
    loss().unwrap().backward().unwrap();
    let used = batch.activity_ids[0].unwrap();
    let cols = table.cols();
    let analytic = table.grad().unwrap().data()[used * cols];
    assert!(analytic != 0.0);
    let report = check_gradients(std::slice::from_ref(&table), loss, FD_STEP).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn te_can_drop_activity_onehot() {
    let mut c = config(Architecture::TwoLevelEmbedding, OperatorKind::Sage);
    c.keep_activity_onehot = false;
    let m = build_model(&c, DIMS).unwrap();
    assert_eq!(m.gnn_input_width(), DIMS.d_node - DIMS.n_activities);
    assert_eq!(m.forward(&random_batch(&[2, 3], DIMS, 7)).unwrap().shape(), (2, 2));
}

#[test]
fn pooling_modes_follow_graph_order() {
    let batch = random_batch(&[2, 1, 3], DIMS, 8);
    let x = Tensor::constant(batch.node_features.clone());
    for p in Pooling::ALL {
        let pooled = x.reduce_rows(batch.membership.clone(), p.reduce_mode()).unwrap();
        assert_eq!(pooled.rows(), 3);
    }
    let sum = x.reduce_rows(batch.membership.clone(), Pooling::Add.reduce_mode()).unwrap();
    assert_eq!(sum.to_matrix().row(1), batch.node_features.row(2));
}

#[test]
fn eval_is_deterministic_and_dropout_reproducible() {
    let mut c = config(Architecture::TwoLevel, OperatorKind::Gin);
    c.gnn_layers[0].dropout = Some(0.5);
    c.final_dense_layers[0].dropout = Some(0.5);
    c.gnn_layers[0].batch_norm = Some(BatchNormSpec {
        momentum: 0.3,
        eps: 1e-3,
    });
    let batch = random_batch(&[3, 4, 2], DIMS, 10);
    let a = build_model(&c, DIMS).unwrap();
    let b = build_model(&c, DIMS).unwrap();
    let ta: Vec<_> = (0..3).map(|_| a.forward(&batch).unwrap().values()).collect();
    let tb: Vec<_> = (0..3).map(|_| b.forward(&batch).unwrap().values()).collect();
    assert_eq!(ta, tb);
    assert_ne!(ta[0], ta[1]);
    let e1 = eval_logits(&a, &batch);
    let e2 = eval_logits(&a, &batch);
    assert_eq!(e1.data(), e2.data());
    assert_eq!(a.state(), a.state());
}

#[test]
fn state_round_trip_restores_outputs() {
    let mut c = config(Architecture::TwoLevelPseudo, OperatorKind::Graph);
    c.gnn_layers[0].batch_norm = Some(BatchNormSpec {
        momentum: 0.5,
        eps: 1e-5,
    });
    let m = build_model(&c, DIMS).unwrap();
    let batch = random_batch(&[3, 3], DIMS, 11);
    m.forward(&batch).unwrap();
    let saved = m.state();
    let before = eval_logits(&m, &batch);
    m.set_training(true);
    for p in m.parameters() {
        p.update_leaf(|v, _| v.iter_mut().for_each(|x| *x += 0.1));
    }
    m.forward(&batch).unwrap();
    assert_ne!(eval_logits(&m, &batch), before);
    m.load_state(&saved).unwrap();
    assert_eq!(eval_logits(&m, &batch), before);
}

#[test]
fn skip_with_zero_weights_is_identity() {
    for op in OperatorKind::ALL {
        let mut c = config(Architecture::OneLevel, op);
        c.gnn_layers = vec![LayerSpec {
            skip: true,
            ..layer(DIMS.d_node + DIMS.d_graph, ActivationKind::Relu)
        }];
        let m = build_model(&c, DIMS).unwrap();
        m.zero_gnn_layer(0).unwrap();
        let batch = random_batch(&[4], DIMS, 12);
        let x = Tensor::constant(Matrix::from_rows(&batch.node_features.to_rows()).unwrap());
        let x = Tensor::concat_cols(&[x, Tensor::constant(Matrix::filled(4, DIMS.d_graph, 0.25))]).unwrap();
        let out = m.gnn_pre_activation(0, &x, &batch).unwrap();
        assert_eq!(out.to_matrix(), x.to_matrix(), "{op}");
    }
}

#[test]
fn parameter_count_is_a_function_of_config() {
    let c = config(Architecture::TwoLevelEmbedding, OperatorKind::Tag);
    let a = Model::new(&c, DIMS, 1).unwrap();
    let b = Model::new(&c, DIMS, 2).unwrap();
    assert_eq!(a.n_parameters(), b.n_parameters());
    assert_ne!(a.state(), b.state());
}

const SMOOTH: [ActivationKind; 4] = [
    ActivationKind::Elu,
    ActivationKind::Tanh,
    ActivationKind::Softplus,
    ActivationKind::Gelu,
];

#[test]
fn gradient_check_every_architecture() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for arch in Architecture::ALL {
        for op in OperatorKind::ALL {
            let mut c = config(arch, op);
            // piecewise-linear activations are covered by the tensor suite;
            // here kinks would land within a finite-difference step
            let act = SMOOTH[rng.random_range(0..SMOOTH.len())];
            for l in [
                &mut c.pseudo_gnn_layers,
                &mut c.concat_gnn_layers,
                &mut c.embedding_gnn_layers,
                &mut c.sequence_dense_layers,
            ]
            .into_iter()
            .flatten()
            {
                l.activation = act;
            }
            for stack in [&mut c.gnn_layers, &mut c.final_dense_layers] {
                stack[0] = LayerSpec {
                    units: 5,
                    activation: act,
                    dropout: None,
                    batch_norm: Some(BatchNormSpec {
                        momentum: 0.2,
                        eps: 1e-3,
                    }),
                    skip: false,
                };
            }
            c.gnn_layers[0].skip = true;
            c.pooling = Pooling::ALL[rng.random_range(0..3)];
            if op == OperatorKind::Graph {
                c.graph_aggregation = Some(Aggregation::Mean);
            }
            for n in [1usize, 2, 5, 8] {
                let m = build_model(&c, DIMS).unwrap();
                let batch = random_batch(&[n, 3], DIMS, n as u64);
                let loss = || LossKind::CrossEntropy.apply(&m.forward(&batch)?, batch.labels.clone());
                let report = check_gradients(&m.parameters(), loss, FD_STEP).unwrap();
                assert!(report.max_rel_error < 1e-4, "{arch} {op} n={n}: {report:?}");
            }
        }
    }
}

#[test]
fn dump_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for arch in Architecture::ALL {
        for op in OperatorKind::ALL {
            let mut c = config(arch, op);
            c.gnn_layers.push(LayerSpec {
                units: 33,
                activation: ActivationKind::Softplus,
                dropout: Some(0.25),
                batch_norm: Some(BatchNormSpec {
                    momentum: 0.5,
                    eps: 1e-3,
                }),
                skip: true,
            });
            c.l1_lambda = rng.random::<f64>() * 1e-3;
            let text = dump_config(&c, &DIMS, None);
            assert!(text.starts_with("Best hyperparameters found were:\n"));
            let parsed = parse_dump(&text).unwrap();
            assert_eq!(dump_config(&parsed.config, &DIMS, None), text);
            assert_eq!(parsed.config.architecture, arch);
            assert_eq!(parsed.config.operator, op);
        }
    }
}

#[test]
fn number_formats() {
    assert_eq!(sci(6.3114e-3), "6.3114e-03");
    assert_eq!(sci(0.0), "0.0000e+00");
    assert_eq!(sci(0.097978), "9.7978e-02");
    assert_eq!(fixed(0.49651), "0.4965");
}
