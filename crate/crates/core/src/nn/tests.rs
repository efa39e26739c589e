use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{central_differences, first_mismatch};
use super::*;

type Build = dyn Fn(&mut Graph, &[Var]) -> Result<Var, NnError>;

/// Probe `build` with a random linear readout and compare the tape
/// gradients of every input against central differences.
fn check(inputs: &[Tensor], build: &Build, rng: &mut ChaCha8Rng) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = build(&mut g, &vars).unwrap();
    let (r, c) = g.shape(out);
    let probe = Tensor::uniform(r, c, 1.0, rng);
    let p = g.constant(probe.clone());
    let weighted = g.mul(out, p).unwrap();
    let root = g.sum(weighted);
    let grads = g.backward(root).unwrap();

    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[k], input.shape());
        let numeric = central_differences(input.data(), 1e-5, |x| {
            let mut g = Graph::new();
            let vars: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, t)| {
                    if j == k {
                        g.input(Tensor::new(t.rows(), t.cols(), x.to_vec()).unwrap())
                    } else {
                        g.input(t.clone())
                    }
                })
                .collect();
            let out = build(&mut g, &vars).unwrap();
            g.value(out)
                .data()
                .iter()
                .zip(probe.data())
                .map(|(a, b)| a * b)
                .sum()
        });
        if let Some((i, a, n)) = first_mismatch(analytic.data(), &numeric, 1e-4, 1e-6) {
            panic!("input {k} entry {i}: analytic {a} vs numeric {n}");
        }
    }
}

fn rand_t(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(rows, cols, 1.0, rng)
}

#[test]
fn square_derivative() {
    let mut g = Graph::new();
    let x = g.input(Tensor::scalar(3.0));
    let y = g.mul(x, x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap().item(), 6.0);
}

#[test]
fn every_primitive_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let a = rand_t(3, 4, &mut rng);
        let b = rand_t(3, 4, &mut rng);
        check(&[a.clone(), b.clone()], &|g, v| g.add(v[0], v[1]), &mut rng);
        check(&[a.clone(), b.clone()], &|g, v| g.sub(v[0], v[1]), &mut rng);
        check(&[a.clone(), b.clone()], &|g, v| g.mul(v[0], v[1]), &mut rng);
        check(std::slice::from_ref(&a), &|g, v| Ok(g.scale(v[0], -1.7)), &mut rng);
        check(&[a.clone(), rand_t(1, 4, &mut rng)], &|g, v| g.add_row(v[0], v[1]), &mut rng);
        check(&[a.clone(), rand_t(4, 5, &mut rng)], &|g, v| g.matmul(v[0], v[1]), &mut rng);
        check(&[a.clone(), rand_t(2, 4, &mut rng)], &|g, v| g.matmul_t(v[0], v[1]), &mut rng);
        check(
            &[a.clone(), rand_t(3, 2, &mut rng)],
            &|g, v| g.concat_cols(&[v[0], v[1]]),
            &mut rng,
        );
        check(
            &[a.clone(), rand_t(2, 4, &mut rng)],
            &|g, v| g.concat_rows(&[v[0], v[1]]),
            &mut rng,
        );
        check(std::slice::from_ref(&a), &|g, v| g.slice_cols(v[0], 1, 2), &mut rng);
        check(std::slice::from_ref(&a), &|g, v| Ok(g.tanh(v[0])), &mut rng);
        check(std::slice::from_ref(&a), &|g, v| Ok(g.sigmoid(v[0])), &mut rng);
        check(std::slice::from_ref(&a), &|g, v| Ok(g.softmax(v[0])), &mut rng);
        check(
            std::slice::from_ref(&a),
            &|g, v| g.masked_softmax(v[0], &[true, false, true, true]),
            &mut rng,
        );
        check(std::slice::from_ref(&a), &|g, v| g.gather(v[0], &[2, 0, 2, 1]), &mut rng);
        check(std::slice::from_ref(&a), &|g, v| g.mean_rows(v[0], &[true, false, true]), &mut rng);
        check(std::slice::from_ref(&a), &|g, v| Ok(g.mean(v[0])), &mut rng);
        check(&[a.clone(), rand_t(3, 3, &mut rng)], &|g, v| g.row_kron(v[0], v[1]), &mut rng);
        check(std::slice::from_ref(&a), &|g, v| Ok(g.sum(v[0])), &mut rng);
        check(&[rand_t(1, 6, &mut rng)], &|g, v| g.cross_entropy(v[0], 4), &mut rng);
    }
}

#[test]
fn shape_errors_name_both_shapes() {
    let mut g = Graph::new();
    let a = g.input(Tensor::zeros(2, 3));
    let b = g.input(Tensor::zeros(4, 5));
    let err = g.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("2x3") && err.contains("4x5"), "{err}");
    assert!(matches!(g.add(a, b), Err(NnError::Shape(_))));
    assert!(matches!(g.mean_rows(a, &[false, false]), Err(NnError::Degenerate(_))));
    assert!(matches!(g.masked_softmax(a, &[false; 3]), Err(NnError::Degenerate(_))));
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let n = rng.gen_range(1..30);
        let mut g = Graph::new();
        let x = g.input(Tensor::uniform(1, n, 50.0, &mut rng));
        let y = g.softmax(x);
        let total: f64 = g.value(y).data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn cross_entropy_closed_forms() {
    assert!((softmax_cross_entropy(&[0.0; 4], 2).unwrap() - 4f64.ln()).abs() < 1e-15);

    let mut prev = f64::INFINITY;
    for k in 0..20 {
        let mut logits = vec![0.0; 5];
        logits[1] = k as f64;
        let l = softmax_cross_entropy(&logits, 1).unwrap();
        assert!(l < prev);
        prev = l;
    }
    assert!(prev < 1e-7);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let logits: Vec<f64> = (0..7).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let mut g = Graph::new();
    let x = g.input(Tensor::row(logits.clone()));
    let l = g.cross_entropy(x, 3).unwrap();
    assert!((g.value(l).item() - softmax_cross_entropy(&logits, 3).unwrap()).abs() < 1e-14);
    let grads = g.backward(l).unwrap();
    let max = logits.iter().copied().fold(f64::MIN, f64::max);
    let z: f64 = logits.iter().map(|v| (v - max).exp()).sum();
    for (i, gi) in grads.get(x).unwrap().data().iter().enumerate() {
        let p = (logits[i] - max).exp() / z;
        let expected = p - if i == 3 { 1.0 } else { 0.0 };
        assert!((gi - expected).abs() < 1e-14);
    }
}

#[test]
fn lstm_with_zero_weights_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut params = ParamSet::new();
    let cell = LstmCell::new(&mut params, "lstm", 3, 4, &mut rng);
    for t in params.tensors_mut() {
        t.data_mut().fill(0.0);
    }
    let mut g = Graph::new();
    let x = g.constant(Tensor::row(vec![1.0, -2.0, 0.5]));
    let h0 = g.constant(Tensor::zeros(1, 4));
    let c0 = g.constant(Tensor::zeros(1, 4));
    let (h, c) = cell.forward(&mut g, &params, x, h0, c0).unwrap();
    assert!(g.value(h).data().iter().all(|&v| v == 0.0));
    assert!(g.value(c).data().iter().all(|&v| v == 0.0));
}

#[test]
fn lstm_forget_bias_starts_at_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut params = ParamSet::new();
    let cell = LstmCell::new(&mut params, "lstm", 2, 3, &mut rng);
    let b = params.get(cell.bias).data();
    assert_eq!(&b[3..6], &[1.0, 1.0, 1.0]);
    assert!(b[..3].iter().chain(&b[6..]).all(|&v| v == 0.0));
    let bound = 1.0 / 3f64.sqrt();
    assert!(params.get(cell.w_input).data().iter().all(|v| v.abs() <= bound));
}

#[test]
fn lstm_cell_state_is_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut params = ParamSet::new();
    let cell = LstmCell::new(&mut params, "lstm", 3, 6, &mut rng);
    for _ in 0..50 {
        let mut g = Graph::new();
        let x = g.constant(Tensor::uniform(1, 3, 5.0, &mut rng));
        let h0 = g.constant(Tensor::uniform(1, 6, 1.0, &mut rng));
        let c0 = g.constant(Tensor::uniform(1, 6, 3.0, &mut rng));
        let (_, c) = cell.forward(&mut g, &params, x, h0, c0).unwrap();
        for (cn, cp) in g.value(c).data().iter().zip(g.value(c0).data()) {
            assert!(cn.abs() <= cp.abs() + 1.0 + 1e-15);
        }
    }
}

#[test]
fn lstm_shape_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut params = ParamSet::new();
    let cell = LstmCell::new(&mut params, "lstm", 3, 4, &mut rng);
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(1, 2));
    let h0 = g.constant(Tensor::zeros(1, 4));
    assert!(matches!(
        cell.forward(&mut g, &params, x, h0, h0),
        Err(NnError::Shape(_))
    ));
}

#[test]
fn attention_over_single_position() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut params = ParamSet::new();
    let att = MultiHeadAttention::new(&mut params, "att", 8, 6, 4, &mut rng).unwrap();
    let memory = Tensor::uniform(1, 6, 1.0, &mut rng);
    let mut g = Graph::new();
    let q = g.constant(Tensor::uniform(1, 8, 1.0, &mut rng));
    let m = g.constant(memory.clone());
    let out = multi_head_attention(&mut g, &params, &att, q, m, &[true]).unwrap();
    for w in &out.weights {
        assert_eq!(g.value(*w).data(), &[1.0]);
    }
    // Expected: memory * W_v * W_out.
    let mut g2 = Graph::new();
    let m2 = g2.constant(memory);
    let wv = g2.param(&params, att.w_value);
    let wo = g2.param(&params, att.w_out);
    let v = g2.matmul(m2, wv).unwrap();
    let expected = g2.matmul(v, wo).unwrap();
    for (a, b) in g.value(out.output).data().iter().zip(g2.value(expected).data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn attention_weights_normalized_and_masked() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut params = ParamSet::new();
    let att = MultiHeadAttention::new(&mut params, "att", 12, 5, 3, &mut rng).unwrap();
    for _ in 0..50 {
        let len = rng.gen_range(2..9);
        let mut keep: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.7)).collect();
        keep[0] = true;
        let mut g = Graph::new();
        let q = g.constant(Tensor::uniform(1, 12, 2.0, &mut rng));
        let m = g.constant(Tensor::uniform(len, 5, 2.0, &mut rng));
        let out = multi_head_attention(&mut g, &params, &att, q, m, &keep).unwrap();
        assert_eq!(out.weights.len(), 3);
        for w in &out.weights {
            let w = g.value(*w).data();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (wi, k) in w.iter().zip(&keep) {
                if !k {
                    assert_eq!(*wi, 0.0);
                }
            }
        }
    }
}

#[test]
fn attention_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut params = ParamSet::new();
    assert!(MultiHeadAttention::new(&mut params, "bad", 10, 5, 4, &mut rng).is_err());
    let att = MultiHeadAttention::new(&mut params, "att", 8, 5, 4, &mut rng).unwrap();
    let mut g = Graph::new();
    let q = g.constant(Tensor::zeros(1, 8));
    let m = g.constant(Tensor::zeros(3, 5));
    assert!(matches!(
        multi_head_attention(&mut g, &params, &att, q, m, &[false; 3]),
        Err(NnError::Degenerate(_))
    ));
}

#[test]
fn dense_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut params = ParamSet::new();
    let d = Dense::new(&mut params, "d", 2, 3, 0.5, &mut rng);
    params.get_mut(d.bias).data_mut().copy_from_slice(&[1.0, 2.0, 3.0]);
    let mut g = Graph::new();
    let x = g.constant(Tensor::row(vec![0.0, 0.0]));
    let y = d.forward(&mut g, &params, x).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0]);
}

#[test]
fn param_gradients_sum_over_bindings() {
    let mut params = ParamSet::new();
    let id = params.add("w", Tensor::row(vec![2.0]));
    let mut g = Graph::new();
    let a = g.param(&params, id);
    let b = g.param(&params, id);
    let y = g.mul(a, b).unwrap();
    let grads = g.backward(y).unwrap();
    let pg = g.param_grads(&grads, &params);
    assert_eq!(pg[0].data(), &[4.0]);
}

#[test]
fn seeded_backward_accumulates() {
    let mut g = Graph::new();
    let x = g.input(Tensor::row(vec![1.0, 2.0]));
    let y = g.scale(x, 3.0);
    let grads = g
        .backward_seeded(&[(y, Tensor::row(vec![1.0, 1.0])), (x, Tensor::row(vec![0.5, 0.0]))])
        .unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[3.5, 3.0]);
}
