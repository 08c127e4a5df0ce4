use proptest::prelude::*;

use super::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn relu_mean_softmax_basics() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::row(&[-1.0, 0.0, 2.0]));
    let y = tape.forward_op(OpKind::Relu, &[x]).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);

    let m = tape.leaf(Tensor::from_rows(&[vec![1.0, 3.0], vec![3.0, 5.0]]).unwrap());
    let mean = tape.forward_op(OpKind::MeanAxis(Axis::Rows), &[m]).unwrap();
    assert_eq!(tape.value(mean).data(), &[2.0, 4.0]);

    let z = tape.leaf(Tensor::row(&[0.0, 0.0]));
    let s = tape.forward_op(OpKind::Softmax, &[z]).unwrap();
    assert_eq!(tape.value(s).data(), &[0.5, 0.5]);
    assert_eq!(tape.provenance(s), "softmax");
}

#[test]
fn shape_mismatch_names_operation() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::zeros(2, 3));
    let b = tape.leaf(Tensor::zeros(2, 3));
    let err = tape.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("matmul") && err.contains("2x3"), "{err}");
    let c = tape.leaf(Tensor::zeros(3, 2));
    let err = tape.add(a, c).unwrap_err().to_string();
    assert!(err.contains("add"), "{err}");
    assert!(tape.forward_op(OpKind::Add, &[a]).is_err());
}

#[test]
fn grl_forward_is_identity_and_backward_flips() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::row(&[1.5, -2.0]));
    let r = tape.grl(x, GrlConfig::new(1.0).unwrap());
    assert_eq!(tape.value(r).data(), &[1.5, -2.0]);
    let s = tape.sum(r);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).data(), &[-1.0, -1.0]);
}

#[test]
fn grl_half_strength_matches_explicit_negative_half_loss() {
    // incoming gradient [2, -4] is produced by loss = 2*x0 - 4*x1
    let weights = Tensor::column(&[2.0, -4.0]);
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::row(&[0.3, 0.7]));
    let r = tape.grl(x, GrlConfig::new(0.5).unwrap());
    let w = tape.leaf(weights.clone());
    let loss = tape.matmul(r, w).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).data(), &[-1.0, 2.0]);

    let mut oracle = Tape::new();
    let x2 = oracle.leaf(Tensor::row(&[0.3, 0.7]));
    let w2 = oracle.leaf(weights);
    let l = oracle.matmul(x2, w2).unwrap();
    let neg = oracle.scale(l, -0.5);
    oracle.backward(neg).unwrap();
    assert_eq!(tape.grad(x).data(), oracle.grad(x2).data());
}

#[test]
fn grl_rejects_negative_strength() {
    assert!(GrlConfig::new(-0.1).is_err());
    assert!(GrlConfig::new(f64::NAN).is_err());
}

#[test]
fn entropy_examples() {
    assert_eq!(entropy(&[1.0, 0.0]).unwrap(), 0.0);
    assert_eq!(entropy(&[0.5, 0.5]).unwrap(), 1.0);
    // -0.9 log2 0.9 - 0.1 log2 0.1, evaluated separately
    assert!(close(entropy(&[0.9, 0.1]).unwrap(), 0.4689955935892812, 1e-12));
    assert!(entropy(&[0.5, 0.6]).is_err());
    assert!(entropy(&[1.2, -0.2]).is_err());
}

#[test]
fn entropy_node_is_differentiable() {
    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::row(&[0.25, 0.75]));
    let h = tape.entropy(p);
    tape.backward(h).unwrap();
    let g = tape.grad(p);
    for (gv, pv) in g.data().iter().zip([0.25f64, 0.75]) {
        assert!(close(*gv, -(pv.ln() + 1.0) / std::f64::consts::LN_2, 1e-12));
    }
}

#[test]
fn cross_entropy_examples() {
    assert!(close(cross_entropy(&[0.0, 0.0], 0).unwrap(), std::f64::consts::LN_2, 1e-15));
    let big = cross_entropy(&[100.0, 0.0], 0).unwrap();
    assert!(big.is_finite() && big < 1e-40);
    assert!(close(cross_entropy(&[1.0, 2.0, 3.0], 2).unwrap(), 0.4076059644443803, 1e-12));
    assert!(cross_entropy(&[1.0, 2.0], 2).is_err());
}

#[test]
fn cross_entropy_rows_matches_scalar() {
    let mut tape = Tape::new();
    let logits = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.0, 0.0, 0.0]]).unwrap());
    let ce = tape.cross_entropy_rows(logits, &[2, 1]).unwrap();
    assert!(close(tape.value(ce).data()[0], 0.4076059644443803, 1e-12));
    assert!(close(tape.value(ce).data()[1], 3f64.ln(), 1e-12));
    assert!(tape.cross_entropy_rows(logits, &[3, 0]).is_err());
}

#[test]
fn backward_linear_and_reversed() {
    let x = Tensor::row(&[1.0, -2.0, 3.0]);
    let mut tape = Tape::new();
    let w = tape.leaf(Tensor::row(&[0.5, 0.5, 0.5]));
    let xv = tape.leaf(x.clone());
    let prod = tape.mul(w, xv).unwrap();
    let loss = tape.sum(prod);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(w).data(), x.data());

    let mut tape = Tape::new();
    let w = tape.leaf(Tensor::row(&[0.5, 0.5, 0.5]));
    let xv = tape.leaf(x.clone());
    let prod = tape.mul(w, xv).unwrap();
    let s = tape.sum(prod);
    let loss = tape.grl(s, GrlConfig::new(1.0).unwrap());
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(w).data(), &[-1.0, 2.0, -3.0]);
}

#[test]
fn backward_accumulates_and_zero_grad_resets() {
    let mut tape = Tape::new();
    let w = tape.leaf(Tensor::row(&[1.0, 2.0]));
    let h = tape.scale(w, 3.0);
    let loss = tape.sum(h);
    assert!(tape.grad(w).data().iter().all(|&g| g == 0.0));
    tape.backward(loss).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(w).data(), &[6.0, 6.0]);
    tape.zero_grad();
    assert!(tape.grad(w).data().iter().all(|&g| g == 0.0));
    assert!(tape.grad(h).data().iter().all(|&g| g == 0.0));
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let w = tape.leaf(Tensor::row(&[1.0, 2.0]));
    assert!(tape.backward(w).is_err());
}

#[test]
fn every_op_gradient_matches_finite_differences() {
    let mut params = ParamStore::new();
    params.insert("a", Tensor::from_rows(&[vec![0.3, -0.2, 0.5], vec![-0.4, 0.1, 0.9]]).unwrap());
    params.insert("b", Tensor::from_rows(&[vec![0.2, 0.7], vec![-0.6, 0.4], vec![0.05, -0.3]]).unwrap());
    params.insert("bias", Tensor::row(&[0.1, -0.1]));
    let err = finite_difference_check(&params, 1e-6, 1000, 0, |tape, p| {
        let a = p.get("a")?;
        let b = p.get("b")?;
        let bias = p.get("bias")?;
        let h = tape.matmul(a, b)?;
        let h = tape.add(h, bias)?;
        let t = tape.tanh(h);
        let r = tape.relu(h);
        let c = tape.concat(&[t, r], Axis::Cols)?;
        let rows = tape.concat(&[c, c], Axis::Rows)?;
        let g = tape.gather_rows(rows, &[0, 3, 1, 1])?;
        let gs = tape.group_sum(g, 2)?;
        let sl = tape.slice_cols(gs, 1, 3)?;
        let rs = tape.reshape(sl, 3, 2)?;
        let sm = tape.softmax(rs);
        let ent = tape.entropy(sm);
        let ls = tape.log_softmax(rs);
        let pk = tape.pick(ls, &[0, 1, 1])?;
        let col = tape.mean_axis(rs, Axis::Cols);
        let wcol = tape.mul(rs, col)?;
        let mix = tape.sum_axis(wcol, Axis::Rows);
        let a1 = tape.mean(ent);
        let a2 = tape.sum(pk);
        let a3 = tape.sum(mix);
        let a3 = tape.scale(a3, 0.3);
        let l = tape.add(a1, a2)?;
        tape.add(l, a3)
    })
    .unwrap();
    assert!(err < 1e-7, "max relative error {err}");
}

#[test]
fn quadratic_finite_difference_is_tight() {
    let mut params = ParamStore::new();
    params.insert("w", Tensor::row(&[1.0, -2.0, 0.5, 3.0]));
    let err = finite_difference_check(&params, 1e-5, 100, 0, |tape, p| {
        let w = p.get("w")?;
        let sq = tape.mul(w, w)?;
        Ok(tape.sum(sq))
    })
    .unwrap();
    assert!(err < 1e-7, "{err}");
}

#[test]
fn mlp_cross_entropy_finite_difference() {
    let mut params = ParamStore::new();
    params.insert("w1", Tensor::new(3, 4, (0..12).map(|i| ((i * 7 % 11) as f64 - 5.0) / 10.0).collect()).unwrap());
    params.insert("b1", Tensor::row(&[0.1, -0.2, 0.05, 0.3]));
    params.insert("w2", Tensor::new(4, 3, (0..12).map(|i| ((i * 5 % 13) as f64 - 6.0) / 9.0).collect()).unwrap());
    params.insert("b2", Tensor::row(&[0.0, 0.1, -0.1]));
    let x = Tensor::from_rows(&[vec![1.0, 0.5, -0.3], vec![-0.7, 0.2, 0.9]]).unwrap();
    let err = finite_difference_check(&params, 1e-6, 1000, 1, |tape, p| {
        let xv = tape.leaf(x.clone());
        let h = tape.matmul(xv, p.get("w1")?)?;
        let h = tape.add(h, p.get("b1")?)?;
        let h = tape.relu(h);
        let o = tape.matmul(h, p.get("w2")?)?;
        let o = tape.add(o, p.get("b2")?)?;
        let ce = tape.cross_entropy_rows(o, &[2, 0])?;
        Ok(tape.mean(ce))
    })
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn finite_difference_rejects_bad_epsilon() {
    let params = ParamStore::new();
    let r = finite_difference_check(&params, 0.1, 10, 0, |tape, _| Ok(tape.leaf(Tensor::scalar(0.0))));
    assert!(r.is_err());
}

fn small_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, len)
}

/// loss(w) = sum(tanh(x W) * c) for fixed x, c
fn grad_of_scaled(w: &Tensor, x: &Tensor, c: &Tensor, grl: Option<f64>, scale: f64) -> Vec<f64> {
    let mut tape = Tape::new();
    let wv = tape.leaf(w.clone());
    let xv = tape.leaf(x.clone());
    let h = tape.matmul(xv, wv).unwrap();
    let h = match grl {
        Some(l) => tape.grl(h, GrlConfig::new(l).unwrap()),
        None => h,
    };
    let t = tape.tanh(h);
    let cv = tape.leaf(c.clone());
    let p = tape.mul(t, cv).unwrap();
    let s = tape.sum(p);
    let loss = tape.scale(s, scale);
    tape.backward(loss).unwrap();
    tape.grad(wv).into_data()
}

proptest! {
    #[test]
    fn grl_equals_negated_scaled_loss(w in small_vec(6), x in small_vec(4), c in small_vec(6), lambda in 0.0f64..2.0) {
        let w = Tensor::new(2, 3, w).unwrap();
        let x = Tensor::new(2, 2, x).unwrap();
        let c = Tensor::new(2, 3, c).unwrap();
        let with_grl = grad_of_scaled(&w, &x, &c, Some(lambda), 1.0);
        let explicit = grad_of_scaled(&w, &x, &c, None, -lambda);
        for (a, b) in with_grl.iter().zip(&explicit) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn entropy_is_bounded(raw in prop::collection::vec(0.0f64..1.0, 2..8)) {
        let total: f64 = raw.iter().sum();
        prop_assume!(total > 1e-3);
        let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let h = entropy(&p).unwrap();
        let max = (p.len() as f64).log2();
        prop_assert!(h >= 0.0 && h <= max + 1e-12);
        let uniform = vec![1.0 / p.len() as f64; p.len()];
        prop_assert!((entropy(&uniform).unwrap() - max).abs() < 1e-12);
    }

    #[test]
    fn gradient_is_linear_in_the_loss(w in small_vec(6), x in small_vec(4), c1 in small_vec(6), c2 in small_vec(6), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let w = Tensor::new(2, 3, w).unwrap();
        let x = Tensor::new(2, 2, x).unwrap();
        let (c1, c2) = (Tensor::new(2, 3, c1).unwrap(), Tensor::new(2, 3, c2).unwrap());
        let g1 = grad_of_scaled(&w, &x, &c1, None, 1.0);
        let g2 = grad_of_scaled(&w, &x, &c2, None, 1.0);
        let combined: Vec<f64> = c1.data().iter().zip(c2.data()).map(|(p, q)| a * p + b * q).collect();
        let gc = grad_of_scaled(&w, &x, &Tensor::new(2, 3, combined).unwrap(), None, 1.0);
        for i in 0..gc.len() {
            prop_assert!((gc[i] - (a * g1[i] + b * g2[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(v in prop::collection::vec(-50.0f64..50.0, 12)) {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(3, 4, v).unwrap());
        let s = tape.softmax(x);
        for r in 0..3 {
            let total: f64 = tape.value(s).row_slice(r).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }
    }
}
