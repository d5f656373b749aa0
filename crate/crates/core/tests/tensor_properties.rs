use duallora::rng::SeededRng;
use duallora::tensor::gradcheck::{finite_difference_grad, GradTolerance};
use duallora::tensor::linalg::rank_of;
use duallora::tensor::ops;
use duallora::{Graph, Tensor, Var};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn values(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, n)
}

proptest! {
    #[test]
    fn softmax_slices_sum_to_one(rows in 1usize..6, cols in 1usize..9, seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let x = Tensor::randn(&[rows, cols], 30.0, &mut rng);
        for axis in 0..2 {
            let s = ops::softmax(&x, axis).unwrap();
            let (outer, inner) = if axis == 1 { (rows, cols) } else { (cols, rows) };
            for o in 0..outer {
                let total: f64 = (0..inner)
                    .map(|i| if axis == 1 { s.get2(o, i) } else { s.get2(i, o) })
                    .sum();
                prop_assert!((total - 1.0).abs() <= 1e-12, "{total}");
            }
        }
    }

    #[test]
    fn matmul_is_associative(a in values(64, -1.0, 1.0), b in values(64, -1.0, 1.0), c in values(64, -1.0, 1.0)) {
        let (a, b, c) = (tensor(&[8, 8], a), tensor(&[8, 8], b), tensor(&[8, 8], c));
        let left = ops::matmul(&ops::matmul(&a, &b).unwrap(), &c).unwrap();
        let right = ops::matmul(&a, &ops::matmul(&b, &c).unwrap()).unwrap();
        prop_assert!(left.max_abs_diff(&right) <= 1e-10);
    }

    #[test]
    fn matmul_matches_naive_triple_loop(m in 1usize..5, k in 1usize..5, n in 1usize..5, seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let a = Tensor::randn(&[m, k], 1.0, &mut rng);
        let b = Tensor::randn(&[k, n], 1.0, &mut rng);
        let got = ops::matmul(&a, &b).unwrap();
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|p| a.get2(i, p) * b.get2(p, j)).sum();
                prop_assert!((got.get2(i, j) - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn broadcast_add_adds_vector_to_every_row(m in 1usize..5, n in 1usize..6, seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let a = Tensor::randn(&[m, n], 1.0, &mut rng);
        let v = Tensor::randn(&[n], 1.0, &mut rng);
        let s = ops::add(&a, &v).unwrap();
        for i in 0..m {
            for j in 0..n {
                prop_assert_eq!(s.get2(i, j), a.get2(i, j) + v.data()[j]);
            }
        }
    }

    #[test]
    fn rank_of_agrees_with_svd(d in 4usize..12, r in 1usize..4, seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let r = r.min(d);
        let b = Tensor::randn(&[d, r], 1.0, &mut rng);
        let a = Tensor::randn(&[r, d], 1.0, &mut rng);
        let m = ops::matmul(&b, &a).unwrap();
        let ours = rank_of(&m, 1e-9).unwrap();
        let dm = DMatrix::from_row_slice(d, d, m.data());
        let sv = dm.singular_values();
        let smax = sv.max();
        let oracle = sv.iter().filter(|&&s| s > 1e-9 * smax).count();
        prop_assert_eq!(ours, oracle);
        prop_assert!(ours <= r);
    }
}

/// Every differentiable op in one scalar function of four leaves.
fn composite(g: &mut Graph, x: Var, w: Var, b: Var, table: Var) -> Var {
    let h = g.matmul(x, w).unwrap(); // [3×4]
    let h = g.add(h, b).unwrap();
    let gain = g.slice_cols(table, 0, 4).unwrap(); // [5×4]
    let gain_row = g.mean(gain, 0).unwrap(); // [4]
    let n = g.rms_norm(h, gain_row, 1e-6).unwrap();
    let a = g.gelu(n);
    let s = g.sigmoid(h);
    let m = g.mul(a, s).unwrap();
    let left = g.slice_cols(m, 0, 2).unwrap();
    let right = g.slice_cols(m, 2, 4).unwrap();
    let swapped = g.concat_cols(&[right, left]).unwrap();
    let e = g.embedding(table, &[1, 3, 1]).unwrap(); // [3×6]
    let e4 = g.slice_cols(e, 1, 5).unwrap();
    let att = g.matmul_nt(swapped, e4).unwrap(); // [3×3]
    let att = g.softmax(att, 1).unwrap();
    let mixed = g.matmul(att, e).unwrap(); // [3×6]
    let flat = g.reshape(mixed, &[18]).unwrap();
    let back = g.reshape(flat, &[3, 6]).unwrap();
    let logits = g.scale(back, 1.7);
    let ce = g.cross_entropy(logits, &[Some(2), None, Some(5)]).unwrap();
    let total = g.sum(m);
    let total = g.scale(total, 0.1);
    g.add(ce, total).unwrap()
}

fn composite_value(x: &Tensor, w: &Tensor, b: &Tensor, table: &Tensor) -> f64 {
    let mut g = Graph::no_grad();
    let vars = [x, w, b, table].map(|t| g.constant(t.clone()));
    let out = composite(&mut g, vars[0], vars[1], vars[2], vars[3]);
    g.value(out).item()
}

#[test]
fn composite_gradients_match_central_differences_on_100_seeds() {
    let tol = GradTolerance::default();
    for seed in 0..100 {
        let mut rng = SeededRng::new(seed);
        let leaves = [
            Tensor::randn(&[3, 5], 1.0, &mut rng),
            Tensor::randn(&[5, 4], 0.7, &mut rng),
            Tensor::randn(&[4], 0.5, &mut rng),
            Tensor::randn(&[5, 6], 1.0, &mut rng),
        ];
        let mut g = Graph::new();
        let vars: Vec<Var> = leaves.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let out = composite(&mut g, vars[0], vars[1], vars[2], vars[3]);
        g.backward(out).unwrap();
        for (i, leaf) in leaves.iter().enumerate() {
            let numeric = finite_difference_grad(
                |probe| {
                    let mut ls = leaves.clone();
                    ls[i] = probe.clone();
                    composite_value(&ls[0], &ls[1], &ls[2], &ls[3])
                },
                leaf,
                1e-5,
            );
            let analytic = g.grad(vars[i]).unwrap();
            for (k, (&a, &n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
                assert!(
                    tol.accepts(a, n),
                    "seed {seed} leaf {i} entry {k}: analytic {a} numeric {n}"
                );
            }
        }
    }
}

#[test]
fn reused_leaf_accumulates_exactly_twice() {
    let mut rng = SeededRng::new(9);
    let x = Tensor::randn(&[3, 4], 1.0, &mut rng);
    let w = Tensor::randn(&[4, 2], 1.0, &mut rng);
    let grad_of = |uses: usize| {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let wv = g.leaf(w.clone(), true);
        let mut total = None;
        for _ in 0..uses {
            let y = g.matmul(xv, wv).unwrap();
            let y = g.gelu(y);
            let s = g.sum(y);
            total = Some(match total {
                Some(t) => g.add(t, s).unwrap(),
                None => s,
            });
        }
        g.backward(total.unwrap()).unwrap();
        g.grad(wv).unwrap().clone()
    };
    let once = grad_of(1);
    let twice = grad_of(2);
    assert!(twice.bit_eq(&ops::scale(&once, 2.0)));
}

#[test]
fn linear_map_gradient_is_outer_product_with_ones() {
    // loss = sum(h · Wᵀ) for one row h: dW[i][j] = h[j].
    let h = tensor(&[1, 3], vec![0.5, -1.0, 2.0]);
    let w = tensor(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let mut g = Graph::new();
    let hv = g.constant(h.clone());
    let wv = g.leaf(w, true);
    let y = g.matmul_nt(hv, wv).unwrap();
    let loss = g.sum(y);
    g.backward(loss).unwrap();
    let grad = g.grad(wv).unwrap();
    for i in 0..2 {
        assert_eq!(grad.row(i), h.data());
    }
}

#[test]
fn unused_leaf_gets_zero_gradient() {
    let mut g = Graph::new();
    let a = g.leaf(Tensor::vector(vec![1.0, 2.0]), true);
    let b = g.leaf(Tensor::vector(vec![3.0, 4.0]), true);
    let loss = g.sum(a);
    g.backward(loss).unwrap();
    let gb = g.grad(b).map(|t| t.max_abs()).unwrap_or(0.0);
    assert_eq!(gb, 0.0);
}

#[test]
fn softmax_cross_entropy_gradient_is_softmax_minus_onehot() {
    let x = Tensor::vector(vec![0.3, -1.2, 2.0]);
    let f = |t: &Tensor| {
        let logits = t.reshape(&[1, 3]).unwrap();
        ops::cross_entropy(&logits, &[Some(1)]).unwrap().0.item()
    };
    let numeric = finite_difference_grad(f, &x, 1e-5);
    let z: f64 = x.data().iter().map(|v| v.exp()).sum();
    for (i, &n) in numeric.data().iter().enumerate() {
        let p = x.data()[i].exp() / z;
        let want = p - if i == 1 { 1.0 } else { 0.0 };
        assert!((n - want).abs() < 1e-9, "{i}: {n} vs {want}");
    }
}

#[test]
fn softmax_stays_finite_on_huge_logits() {
    let s = ops::softmax(&Tensor::vector(vec![1000.0, 1000.0]), 0).unwrap();
    assert_eq!(s.data(), &[0.5, 0.5]);
    let s = ops::softmax(&Tensor::vector(vec![0.0, 3f64.ln()]), 0).unwrap();
    assert!((s.data()[0] - 0.25).abs() < 1e-15 && (s.data()[1] - 0.75).abs() < 1e-15);
}

#[test]
fn uniform_logits_give_log_vocab_loss() {
    for v in [2usize, 7, 512] {
        let logits = Tensor::zeros(&[2, v]);
        let (loss, _) = ops::cross_entropy(&logits, &[Some(0), Some(v - 1)]).unwrap();
        assert!((loss.item() - (v as f64).ln()).abs() < 1e-12);
    }
}

#[test]
fn rms_norm_edge_rows() {
    let x = tensor(
        &[3, 3],
        vec![2.0, 2.0, 2.0, -0.5, -0.5, -0.5, 0.0, 0.0, 0.0],
    );
    let y = ops::rms_norm(&x, &Tensor::ones(&[3]), 1e-12).unwrap();
    for j in 0..3 {
        assert!((y.get2(0, j) - 1.0).abs() < 1e-9);
        assert!((y.get2(1, j) + 1.0).abs() < 1e-9);
        assert_eq!(y.get2(2, j), 0.0);
    }
    let zero_gain = ops::rms_norm(&x, &Tensor::zeros(&[3]), 1e-6).unwrap();
    assert_eq!(zero_gain.max_abs(), 0.0);
}

#[test]
fn mean_and_gelu_hand_cases() {
    let m = ops::mean(&tensor(&[2, 2], vec![2.0, 4.0, 6.0, 8.0]), 0).unwrap();
    assert_eq!(m.data(), &[4.0, 6.0]);
    assert_eq!(ops::gelu(&Tensor::vector(vec![0.0])).data(), &[0.0]);
}

#[test]
fn embedding_out_of_range_is_index_error() {
    let table = Tensor::zeros(&[4, 2]);
    let err = ops::embedding_lookup(&table, &[1, 4]).unwrap_err();
    assert!(matches!(err, duallora::Error::Index { .. }), "{err}");
}

#[test]
fn non_scalar_backward_is_contract_error() {
    let mut g = Graph::new();
    let a = g.leaf(Tensor::vector(vec![1.0, 2.0]), true);
    assert!(matches!(g.backward(a), Err(duallora::Error::Contract(_))));
}
