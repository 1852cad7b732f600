use adatrans::tensor::gradcheck::{grad_check, relative_error};
use adatrans::tensor::{
    log_sum_exp, matmul, positional_encoding, read_checkpoint, save_checkpoint, write_checkpoint, AttentionMask,
    Graph, ParamStore, Tensor, Var,
};
use adatrans::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for l in 0..k {
                out[i * n + j] += a.get(i, l) * b.get(l, j);
            }
        }
    }
    out
}

/// Reduces a matrix node to a scalar with uneven per-entry weights so every
/// output entry contributes a distinct gradient.
fn probe(g: &mut Graph, x: Var) -> Var {
    let cols = g.value(x).cols();
    let w: Vec<f64> = (0..cols).map(|j| 0.3 + 0.7 * ((j * 7 + 3) % 5) as f64 / 5.0).collect();
    let c = g.constant(Tensor::matrix(cols, 1, w).unwrap());
    let y = g.matmul(x, c, false).unwrap();
    let rows = g.value(y).rows();
    let r: Vec<f64> = (0..rows).map(|i| 1.0 - 0.15 * i as f64).collect();
    let rc = g.constant(Tensor::matrix(1, rows, r).unwrap());
    let s = g.matmul(rc, y, false).unwrap();
    g.sum(s)
}

fn store(seed: u64, shapes: &[(&str, usize, usize)]) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    for &(name, r, c) in shapes {
        s.insert(name, random_matrix(&mut rng, r, c));
    }
    s
}

fn assert_grads<F>(params: &ParamStore, f: F)
where
    F: Fn(&mut Graph, &ParamStore) -> adatrans::Result<Var>,
{
    let report = grad_check(params, 1e-5, f).unwrap();
    assert!(report.checked > 0);
    assert!(report.max_rel_error < 1e-5, "worst entry {:?}", report.worst);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_matches_naive_loop(m in 1usize..9, k in 1usize..9, n in 1usize..9, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, m, k);
        let b = random_matrix(&mut rng, k, n);
        let fast = matmul(&a, &b).unwrap();
        prop_assert_eq!(fast.shape(), &[m, n]);
        for (x, y) in fast.data().iter().zip(naive_matmul(&a, &b)) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn graph_matmul_transposed_matches_naive(m in 1usize..7, k in 1usize..7, n in 1usize..7, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, m, k);
        let bt = random_matrix(&mut rng, n, k);
        let b = Tensor::matrix(k, n, (0..k * n).map(|i| bt.get(i % n, i / n)).collect()).unwrap();
        let mut g = Graph::inference();
        let (va, vb) = (g.constant(a.clone()), g.constant(bt));
        let y = g.matmul(va, vb, true).unwrap();
        for (x, y) in g.value(y).data().iter().zip(naive_matmul(&a, &b)) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..6, cols in 1usize..8, seed in 0u64..1000, scale in 0.1f64..200.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_matrix(&mut rng, rows, cols);
        let mut g = Graph::inference();
        let v = g.constant(x);
        let v = g.affine(v, scale, 0.0);
        let p = g.softmax(v).unwrap();
        for i in 0..rows {
            let row = g.value(p).row(i);
            prop_assert!(row.iter().all(|&q| (0.0..=1.0).contains(&q)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn matmul_rejects_mismatched_inner_dimension() {
    let a = Tensor::zeros(vec![2, 3]);
    let b = Tensor::zeros(vec![4, 2]);
    assert!(matches!(matmul(&a, &b), Err(Error::Dimension { .. })));
}

#[test]
fn log_sum_exp_is_stable_for_large_inputs() {
    let v = log_sum_exp(&[1000.0, 1000.0]);
    assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-9);
    assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, 0.0]), 0.0);
}

#[test]
fn positional_encoding_follows_sinusoid_formula() {
    let pe = positional_encoding(5, 6);
    for t in 0..5 {
        for i in 0..3 {
            let angle = t as f64 / 10000f64.powf(2.0 * i as f64 / 6.0);
            assert!((pe.get(t, 2 * i) - angle.sin()).abs() < 1e-12);
            assert!((pe.get(t, 2 * i + 1) - angle.cos()).abs() < 1e-12);
        }
    }
}

#[test]
fn relative_error_uses_floor_for_tiny_gradients() {
    assert_eq!(relative_error(0.0, 0.0), 0.0);
    assert!((relative_error(1e-9, 0.0) - 1e-4).abs() < 1e-15);
    assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
}

#[test]
fn grad_matmul_and_bias() {
    let p = store(1, &[("a", 3, 4), ("b", 4, 2), ("c", 1, 2)]);
    assert_grads(&p, |g, s| {
        let a = g.param(s, "a")?;
        let b = g.param(s, "b")?;
        let y = g.matmul(a, b, false)?;
        let c = g.param(s, "c")?;
        let y = g.add_row(y, c)?;
        Ok(probe(g, y))
    });
}

#[test]
fn grad_transposed_matmul_and_add() {
    let p = store(2, &[("a", 3, 4), ("b", 5, 4), ("c", 3, 5)]);
    assert_grads(&p, |g, s| {
        let a = g.param(s, "a")?;
        let b = g.param(s, "b")?;
        let y = g.matmul(a, b, true)?;
        let c = g.param(s, "c")?;
        let y = g.add(y, c)?;
        let y = g.affine(y, 1.7, -0.2);
        Ok(probe(g, y))
    });
}

#[test]
fn grad_relu_away_from_kink() {
    let mut p = ParamStore::new();
    let data = vec![0.5, -0.4, 0.9, -0.7, 0.2, -0.3];
    p.insert("x", Tensor::matrix(2, 3, data).unwrap());
    assert_grads(&p, |g, s| {
        let x = g.param(s, "x")?;
        let y = g.relu(x);
        Ok(probe(g, y))
    });
}

#[test]
fn grad_layer_norm() {
    let p = store(3, &[("x", 3, 5), ("gain", 1, 5), ("bias", 1, 5)]);
    let mut p2 = ParamStore::new();
    for (n, t) in p.iter() {
        let t = if n == "x" {
            t.clone()
        } else {
            Tensor::new(vec![5], t.data().to_vec()).unwrap()
        };
        p2.insert(n, t);
    }
    assert_grads(&p2, |g, s| {
        let x = g.param(s, "x")?;
        let gain = g.param(s, "gain")?;
        let bias = g.param(s, "bias")?;
        let y = g.layer_norm(x, gain, bias)?;
        Ok(probe(g, y))
    });
}

#[test]
fn grad_softmax_and_log_softmax() {
    let p = store(4, &[("x", 3, 4)]);
    assert_grads(&p, |g, s| {
        let x = g.param(s, "x")?;
        let a = g.softmax(x)?;
        let b = g.log_softmax(x)?;
        let y = g.add(a, b)?;
        Ok(probe(g, y))
    });
}

#[test]
fn grad_attention_with_masks() {
    let p = store(5, &[("q", 4, 6), ("k", 5, 6), ("v", 5, 6), ("s", 4, 6)]);
    assert_grads(&p, |g, s| {
        let q = g.param(s, "q")?;
        let k = g.param(s, "k")?;
        let v = g.param(s, "v")?;
        let y = g.attention(q, k, v, 2, &AttentionMask::keys(&[true, true, false, true, true]))?;
        let sq = g.param(s, "s")?;
        let z = g.attention(sq, sq, sq, 3, &AttentionMask::causal())?;
        let y = g.add(y, z)?;
        Ok(probe(g, y))
    });
}

#[test]
fn attention_respects_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut g = Graph::inference();
    let q = g.constant(random_matrix(&mut rng, 3, 4));
    let k = g.constant(random_matrix(&mut rng, 3, 4));
    let v = g.constant(random_matrix(&mut rng, 3, 4));
    let y = g.attention(q, k, v, 1, &AttentionMask::causal()).unwrap();
    let map = g.attention_map(y).unwrap();
    for t in 0..3 {
        for s in t + 1..3 {
            assert_eq!(map.get(t, s), 0.0);
        }
        assert!((map.row(t).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let y = g.attention(q, k, v, 2, &AttentionMask::keys(&[false, true, true])).unwrap();
    let map = g.attention_map(y).unwrap();
    assert!((0..3).all(|t| map.get(t, 0) == 0.0));
}

#[test]
fn single_memory_position_receives_all_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut g = Graph::inference();
    let q = g.constant(random_matrix(&mut rng, 4, 4));
    let kv = g.constant(random_matrix(&mut rng, 1, 4));
    let y = g.attention(q, kv, kv, 2, &AttentionMask::none()).unwrap();
    let map = g.attention_map(y).unwrap();
    assert!(map.data().iter().all(|&a| (a - 1.0).abs() < 1e-12));
}

#[test]
fn grad_unfold_gather_slice_and_row_mask() {
    let p = store(6, &[("x", 7, 3), ("e", 5, 4)]);
    assert_grads(&p, |g, s| {
        let x = g.param(s, "x")?;
        let u = g.unfold(x, 3, 2, 1)?;
        let u = g.slice_cols(u, 1, 6)?;
        let u = g.row_mask(u, &[true, false, true, true])?;
        let e = g.param(s, "e")?;
        let r = g.gather_rows(e, &[4, 0, 4, 2])?;
        let r = g.slice_cols(r, 0, 4)?;
        let a = probe(g, u);
        let b = probe(g, r);
        g.lin_comb(&[(a, 1.0), (b, 0.5)])
    });
}

#[test]
fn unfold_zero_pads_outside_range() {
    let mut g = Graph::inference();
    let x = g.constant(Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0]).unwrap());
    let u = g.unfold(x, 3, 2, 1).unwrap();
    assert_eq!(g.value(u).data(), &[0.0, 1.0, 2.0, 2.0, 3.0, 0.0]);
}

#[test]
fn grad_segment_pool_with_blank_weights() {
    let mut p = store(7, &[("x", 6, 3)]);
    p.insert("b", Tensor::matrix(6, 1, vec![0.1, 0.8, 0.3, 0.5, 0.05, 0.9]).unwrap());
    assert_grads(&p, |g, s| {
        let x = g.param(s, "x")?;
        let b = g.param(s, "b")?;
        let y = g.segment_pool(x, Some(b), &[(0, 1), (2, 4), (5, 5)], 1.3)?;
        Ok(probe(g, y))
    });
}

#[test]
fn grad_soft_cross_entropy_and_ctc() {
    let p = store(8, &[("x", 4, 3), ("l", 5, 3)]);
    let targets = Tensor::from_rows(&[[0.2, 0.7, 0.1], [1.0, 0.0, 0.0], [0.3, 0.3, 0.4], [0.0, 0.5, 0.5]]).unwrap();
    assert_grads(&p, |g, s| {
        let x = g.param(s, "x")?;
        let a = g.soft_cross_entropy(x, &targets)?;
        let l = g.param(s, "l")?;
        let lp = g.log_softmax(l)?;
        let c = g.ctc_loss(lp, &[0, 1])?;
        g.lin_comb(&[(a, 1.0), (c, 0.7)])
    });
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let p = store(11, &[("x", 2, 2)]);
    let mut g = Graph::new();
    let x = g.param(&p, "x").unwrap();
    assert!(g.backward(x).is_err());
}

#[test]
fn inference_graph_matches_training_graph_values() {
    let p = store(12, &[("a", 3, 4), ("b", 4, 4)]);
    let run = |g: &mut Graph| {
        let a = g.param(&p, "a").unwrap();
        let b = g.param(&p, "b").unwrap();
        let y = g.matmul(a, b, false).unwrap();
        g.softmax(y).unwrap()
    };
    let (mut g1, mut g2) = (Graph::new(), Graph::inference());
    let (y1, y2) = (run(&mut g1), run(&mut g2));
    assert_eq!(g1.value(y1), g2.value(y2));
}

#[test]
fn checkpoint_round_trip_and_errors() {
    let mut s = ParamStore::new();
    s.insert("b.weight", Tensor::matrix(2, 2, vec![0.5, -1.25, 3.0, 0.125]).unwrap());
    s.insert("a.bias", Tensor::new(vec![3], vec![1.0, 2.0, -0.5]).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.adts");
    save_checkpoint(&path, &s).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"ADTS");
    let back = read_checkpoint(&mut bytes.as_slice(), &path).unwrap();
    assert_eq!(back, s);

    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &s).unwrap();
    assert_eq!(buf, bytes);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(read_checkpoint(&mut bad.as_slice(), &path), Err(Error::Format { .. })));
    let truncated = &bytes[..bytes.len() - 3];
    assert!(matches!(
        read_checkpoint(&mut &truncated[..], &path),
        Err(Error::Format { .. })
    ));

    let mut template = ParamStore::new();
    template.insert("a.bias", Tensor::zeros(vec![3]));
    match adatrans::tensor::load_checkpoint(&path, &template) {
        Err(Error::UnknownParameters(names)) => assert_eq!(names, vec!["b.weight".to_string()]),
        other => panic!("expected unknown-parameter error, got {other:?}"),
    }
}
