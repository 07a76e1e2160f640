use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::{check_gradients, ActivationKind, Tensor, FD_STEP};

fn m(rows: &[&[f64]]) -> Matrix {
    Matrix::from_rows(rows).unwrap()
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn op(kind: OperatorKind, weights: Vec<Matrix>) -> Operator {
    Operator::with_weights(kind, weights, Aggregation::Add, None).unwrap()
}

fn run(o: &Operator, x: &Matrix, g: &Graph) -> Matrix {
    o.forward(&Tensor::constant(x.clone()), g).unwrap().to_matrix()
}

fn assert_close(a: &Matrix, b: &Matrix, tol: f64) {
    assert_eq!(a.shape(), b.shape());
    assert!(a.max_abs_diff(b) <= tol, "{a:?} vs {b:?}");
}

/// Graph with the single edge 1 → 0, i.e. the transpose of a 2-chain.
fn reversed_pair(w: f64) -> Graph {
    Graph::new(2, [&[1], &[0]], &[w]).unwrap()
}

#[test]
fn adjacency_construction() {
    let a = build_adjacency(3, [&[0, 1], &[1, 2]], &[0.2, 0.0], false).unwrap();
    assert_eq!(a, m(&[&[0.0, 0.0, 0.0], &[0.2, 0.0, 0.0], &[0.0, 0.0, 0.0]]));
    assert_eq!(build_adjacency(1, [&[], &[]], &[], true).unwrap(), m(&[&[1.0]]));
    assert_eq!(build_adjacency(1, [&[], &[]], &[], false).unwrap(), m(&[&[0.0]]));
    assert!(build_adjacency(2, [&[0], &[2]], &[1.0], false).is_err());
    assert!(Graph::chain(&[-0.1]).is_err());
}

#[test]
fn gcn_examples() {
    let identity = op(OperatorKind::Gcn, vec![m(&[&[1.0, 0.0], &[0.0, 1.0]])]);
    let x = m(&[&[3.0, -2.0]]);
    assert_close(&run(&identity, &x, &Graph::chain(&[]).unwrap()), &x, 0.0);

    let gcn = op(OperatorKind::Gcn, vec![m(&[&[1.0]])]);
    let v = m(&[&[1.0], &[0.0]]);
    // forward-in-time orientation: node 1 hears node 0
    let out = run(&gcn, &v, &Graph::chain(&[1.0]).unwrap());
    assert_close(&out, &m(&[&[1.0], &[1.0 / 2f64.sqrt()]]), 1e-15);
    // the transposed adjacency reproduces [[0.5], [0]]
    assert_close(&run(&gcn, &v, &reversed_pair(1.0)), &m(&[&[0.5], &[0.0]]), 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(4, 3, &mut rng);
    let w = random(3, 2, &mut rng);
    let gcn = op(OperatorKind::Gcn, vec![w.clone()]);
    assert_close(&run(&gcn, &x, &Graph::chain(&[0.0; 3]).unwrap()), &x.matmul(&w).unwrap(), 1e-15);
}

#[test]
fn graphconv_examples() {
    let v = m(&[&[2.0], &[4.0]]);
    let g = Graph::chain(&[0.5]).unwrap();
    let mut conv = op(OperatorKind::Graph, vec![m(&[&[1.0]])]);
    assert_close(&run(&conv, &v, &g), &m(&[&[0.0], &[1.0]]), 0.0);
    conv.aggregation = Aggregation::Mean;
    assert_close(&run(&conv, &v, &g), &m(&[&[0.0], &[2.0]]), 0.0);
    conv.aggregation = Aggregation::Max;
    assert_close(&run(&conv, &v, &g), &m(&[&[0.0], &[2.0]]), 0.0);
    for agg in Aggregation::ALL {
        conv.aggregation = agg;
        let out = run(&conv, &m(&[&[5.0]]), &Graph::chain(&[]).unwrap());
        assert_eq!(out, m(&[&[0.0]]));
    }
}

#[test]
fn sage_examples() {
    let eye4 = Matrix::identity(4);
    let sage = op(OperatorKind::Sage, vec![eye4]);
    let out = run(&sage, &m(&[&[1.0, 2.0]]), &Graph::chain(&[]).unwrap());
    assert_eq!(out, m(&[&[1.0, 2.0, 0.0, 0.0]]));

    let sage = op(OperatorKind::Sage, vec![m(&[&[1.0], &[1.0]])]);
    let out = run(&sage, &m(&[&[2.0], &[4.0]]), &Graph::chain(&[1.0]).unwrap());
    assert_eq!(out, m(&[&[2.0], &[6.0]]));

    let g = Graph::new(3, [&[0, 1], &[2, 2]], &[1.0, 1.0]).unwrap();
    let x = m(&[&[1.0, 1.0], &[3.0, 3.0], &[0.0, 0.0]]);
    let mean = g.sage_matrix().matmul_dense(&x).unwrap();
    assert_eq!(mean.row(2), &[2.0, 2.0]);
}

#[test]
fn tag_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(3, 2, &mut rng);
    let t0 = random(2, 3, &mut rng);
    let t1 = random(2, 3, &mut rng);
    let g = Graph::chain(&[0.3, 0.9]).unwrap();
    let k0 = op(OperatorKind::Tag, vec![t0.clone()]);
    assert_close(&run(&k0, &x, &g), &x.matmul(&t0).unwrap(), 1e-15);

    let one = m(&[&[1.0]]);
    let tag = op(OperatorKind::Tag, vec![one.clone(), one.clone()]);
    let v = m(&[&[1.0], &[0.0]]);
    assert_close(&run(&tag, &v, &Graph::chain(&[1.0]).unwrap()), &m(&[&[1.0], &[1.0]]), 0.0);
    assert_close(&run(&tag, &v, &reversed_pair(1.0)), &m(&[&[1.0], &[0.0]]), 0.0);

    let k1 = op(OperatorKind::Tag, vec![t0.clone(), t1]);
    let zero = Graph::chain(&[0.0, 0.0]).unwrap();
    assert_close(&run(&k1, &x, &zero), &run(&k0, &x, &zero), 0.0);
}

#[test]
fn cheb_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(3, 2, &mut rng);
    let t0 = random(2, 2, &mut rng);
    let t1 = random(2, 2, &mut rng);
    let g = Graph::chain(&[0.4, 0.7]).unwrap();
    assert_close(&run(&op(OperatorKind::Cheb, vec![t0.clone()]), &x, &g), &x.matmul(&t0).unwrap(), 1e-15);

    let edgeless = Graph::new(3, [&[], &[]], &[]).unwrap();
    let out = run(&op(OperatorKind::Cheb, vec![t0.clone(), t1.clone()]), &x, &edgeless);
    let expected = x.matmul(&t0).unwrap().add(&x.matmul(&t1).unwrap().scale(-1.0)).unwrap();
    assert_close(&out, &expected, 1e-15);

    // dense oracle for T_2 = 2 L̃² − I
    let w = [rng.random_range(0.1..1.0), rng.random_range(0.1..1.0)];
    let g = Graph::chain(&w).unwrap();
    let a = g.adjacency(false);
    let sym = a.add(&a.transpose()).unwrap().scale(0.5);
    let d: Vec<f64> = (0..3).map(|i| sym.row(i).iter().sum()).collect();
    let mut lap = Matrix::identity(3);
    for i in 0..3 {
        for j in 0..3 {
            lap.set(i, j, lap.get(i, j) - sym.get(i, j) / (d[i] * d[j]).sqrt());
        }
    }
    let scaled = lap.add(&Matrix::identity(3).scale(-1.0)).unwrap();
    let t2 = scaled.matmul(&scaled).unwrap().scale(2.0).add(&Matrix::identity(3).scale(-1.0)).unwrap();
    let zero = Matrix::zeros(2, 2);
    let cheb = op(OperatorKind::Cheb, vec![zero.clone(), zero, Matrix::identity(2)]);
    assert_close(&run(&cheb, &x, &g), &t2.matmul(&x).unwrap(), 1e-12);
}

#[test]
fn gin_examples() {
    let eye = Matrix::identity(2);
    let gin = op(OperatorKind::Gin, vec![eye.clone(), eye]);
    let x = m(&[&[0.5, -1.5]]);
    assert_eq!(run(&gin, &x, &Graph::chain(&[]).unwrap()), x);

    let one = m(&[&[1.0]]);
    let mut gin = op(OperatorKind::Gin, vec![one.clone(), one]);
    gin.epsilon = 0.5;
    let out = run(&gin, &m(&[&[1.0], &[2.0]]), &Graph::chain(&[1.0]).unwrap());
    assert_eq!(out.get(1, 0), 4.0);
}

#[test]
fn gin_sum_matches_edge_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let w: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
        let g = Graph::chain(&w).unwrap();
        let x = random(5, 3, &mut rng);
        let eye = Matrix::identity(3);
        let mut gin = op(OperatorKind::Gin, vec![eye.clone(), eye]);
        gin.epsilon = rng.random_range(0.0..1.0);
        let out = run(&gin, &x, &g);
        let mut naive = x.scale(1.0 + gin.epsilon);
        for (s, t, w) in g.edges() {
            for c in 0..3 {
                naive.set(t, c, naive.get(t, c) + w * x.get(s, c));
            }
        }
        assert_close(&out, &naive, 1e-14);
    }
}

fn operator_variants(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize) -> Vec<Operator> {
    let act = Some(ActivationKind::Tanh);
    let mut ops = Vec::new();
    for kind in OperatorKind::ALL {
        let orders: &[usize] = if kind.uses_order() { &[0, 1, 3] } else { &[0] };
        let aggs: &[Aggregation] = if kind == OperatorKind::Graph { &Aggregation::ALL } else { &[Aggregation::Add] };
        for &k in orders {
            for &agg in aggs {
                ops.push(Operator::new(kind, in_dim, out_dim, k, agg, act, rng).unwrap());
            }
        }
    }
    ops
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in [1usize, 2, 5, 8] {
        let w: Vec<f64> = (0..n - 1).map(|_| rng.random_range(0.0..1.0)).collect();
        let g = Graph::chain(&w).unwrap();
        for o in operator_variants(&mut rng, 3, 2) {
            let x = Tensor::parameter(random(n, 3, &mut rng));
            let probe = Tensor::constant(random(n, 2, &mut rng));
            let mut params = o.parameters();
            params.push(x.clone());
            let report = check_gradients(&params, || Ok(o.forward(&x, &g)?.mul(&probe)?.sum()), FD_STEP).unwrap();
            assert!(
                report.max_rel_error < 1e-4,
                "{} k={} {:?} n={n}: {report:?}",
                o.kind,
                o.order,
                o.aggregation
            );
        }
    }
}

#[test]
fn single_node_graphs_are_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g = Graph::chain(&[]).unwrap();
    for o in operator_variants(&mut rng, 4, 3) {
        let out = run(&o, &random(1, 4, &mut rng), &g);
        assert_eq!(out.shape(), (1, 3));
        assert!(out.data().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn spectral_identities_at_order_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(5, 3, &mut rng);
    let theta = random(3, 4, &mut rng);
    let g = Graph::chain(&[0.1, 0.5, 0.0, 1.0]).unwrap();
    let plain = x.matmul(&theta).unwrap();
    assert_eq!(run(&op(OperatorKind::Cheb, vec![theta.clone()]), &x, &g), plain);
    assert_eq!(run(&op(OperatorKind::Tag, vec![theta]), &x, &g), plain);
}

#[test]
fn zero_weights_remove_neighbor_terms() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random(4, 2, &mut rng);
    let zero = Graph::chain(&[0.0; 3]).unwrap();
    let w = random(2, 3, &mut rng);
    for agg in [Aggregation::Add, Aggregation::Mean] {
        let o = Operator::with_weights(OperatorKind::Graph, vec![w.clone()], agg, None).unwrap();
        assert_eq!(run(&o, &x, &zero), Matrix::zeros(4, 3));
    }
    let sage_w = random(4, 3, &mut rng);
    let sage = op(OperatorKind::Sage, vec![sage_w.clone()]);
    let self_half = Matrix::from_rows(&sage_w.to_rows()[..2]).unwrap();
    assert_close(&run(&sage, &x, &zero), &x.matmul(&self_half).unwrap(), 1e-15);
    let w1 = random(2, 3, &mut rng);
    let w2 = random(3, 3, &mut rng);
    let gin = op(OperatorKind::Gin, vec![w1.clone(), w2.clone()]);
    assert_close(&run(&gin, &x, &zero), &x.matmul(&w1).unwrap().matmul(&w2).unwrap(), 1e-15);
}

#[test]
fn relabeling_permutes_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 6;
    let edges: Vec<(usize, usize, f64)> = (0..9)
        .map(|_| (rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0.0..1.0)))
        .filter(|(s, t, _)| s != t)
        .collect();
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let (src, dst, w): (Vec<_>, Vec<_>, Vec<_>) = {
        let mut s = Vec::new();
        let mut d = Vec::new();
        let mut ws = Vec::new();
        for &(a, b, c) in &edges {
            s.push(a);
            d.push(b);
            ws.push(c);
        }
        (s, d, ws)
    };
    let g = Graph::new(n, [&src, &dst], &w).unwrap();
    let psrc: Vec<usize> = src.iter().map(|&i| perm[i]).collect();
    let pdst: Vec<usize> = dst.iter().map(|&i| perm[i]).collect();
    let pg = Graph::new(n, [&psrc, &pdst], &w).unwrap();
    let x = random(n, 3, &mut rng);
    let mut px = Matrix::zeros(n, 3);
    for i in 0..n {
        px.row_mut(perm[i]).copy_from_slice(x.row(i));
    }
    for o in operator_variants(&mut rng, 3, 2) {
        let out = run(&o, &x, &g);
        let pout = run(&o, &px, &pg);
        for i in 0..n {
            for c in 0..2 {
                assert!((out.get(i, c) - pout.get(perm[i], c)).abs() < 1e-12, "{}", o.kind);
            }
        }
    }
}

#[test]
fn operator_names_parse() {
    for k in OperatorKind::ALL {
        assert_eq!(k.name().parse::<OperatorKind>().unwrap(), k);
    }
    assert_eq!("GCNConv".parse::<OperatorKind>().unwrap(), OperatorKind::Gcn);
    assert!("gat".parse::<OperatorKind>().is_err());
}
