//! Numerical verification: every primitive against naive loop oracles, and
//! every gradient path against central finite differences.

use evonorm::gradcheck::{fd_gradient, max_rel_err, probe_weights, FD_STEP, REL_TOL};
use evonorm::nn::{self, Padding};
use evonorm::ops::{self, OpKind};
use evonorm::tape::{finite_diff_hvp, Tape};
use evonorm::tensor::{IndexSet, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn probe(shape: Shape, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| {
        let mag = rng.random_range(0.5..2.5);
        if rng.random_bool(0.5) {
            mag
        } else {
            -mag
        }
    })
}

/// Independent scalar reference for each unary op.
fn unary_ref(kind: OpKind, v: f64) -> f64 {
    match kind {
        OpKind::Neg => -v,
        OpKind::Sigmoid => 1.0 / (1.0 + (-v).exp()),
        OpKind::Tanh => v.tanh(),
        OpKind::Exp => v.exp(),
        OpKind::Log => v.signum() * (v.abs() + 1e-5).ln(),
        OpKind::Abs => v.abs(),
        OpKind::Square => v * v,
        OpKind::Sqrt => v.signum() * v.abs().sqrt(),
        _ => unreachable!(),
    }
}

#[test]
fn elementwise_ops_match_scalar_oracles() {
    let shape = Shape::new(3, 4, 5, 8);
    let x = probe(shape, 1);
    let y = probe(shape, 2);
    for kind in [
        OpKind::Neg,
        OpKind::Sigmoid,
        OpKind::Tanh,
        OpKind::Exp,
        OpKind::Log,
        OpKind::Abs,
        OpKind::Square,
        OpKind::Sqrt,
    ] {
        let out = ops::eval_unary(kind, &x);
        for i in 0..x.len() {
            let want = unary_ref(kind, x.data()[i]);
            assert!(
                (out.data()[i] - want).abs() <= 1e-9,
                "{kind:?} diverged at {i}"
            );
        }
    }
    for kind in [OpKind::Add, OpKind::Mul, OpKind::Div, OpKind::Max] {
        let out = ops::eval_binary(kind, &x, &y).unwrap();
        for i in 0..x.len() {
            let (a, b) = (x.data()[i], y.data()[i]);
            let want = match kind {
                OpKind::Add => a + b,
                OpKind::Mul => a * b,
                OpKind::Div => a / b,
                _ => a.max(b),
            };
            assert!(
                (out.data()[i] - want).abs() <= 1e-9,
                "{kind:?} diverged at {i}"
            );
        }
    }
}

/// Brute-force moment oracle: gathers each element's cell by scanning the
/// whole tensor with explicit loops.
fn moment_oracle(kind: OpKind, x: &Tensor) -> Tensor {
    let idx = kind.index_set().unwrap();
    let s = x.shape();
    let same_cell = |b0: usize, c0: usize, b1: usize, c1: usize| -> bool {
        match idx {
            IndexSet::Bwh => c0 == c1,
            IndexSet::Whc => b0 == b1,
            IndexSet::Wh => b0 == b1 && c0 == c1,
            IndexSet::Whcg { groups } => {
                let gsz = s.c / groups;
                b0 == b1 && c0 / gsz == c1 / gsz
            }
        }
    };
    Tensor::from_fn(s, |b, _, _, c| {
        let mut members = Vec::new();
        for b1 in 0..s.n {
            for y1 in 0..s.h {
                for x1 in 0..s.w {
                    for c1 in 0..s.c {
                        if same_cell(b, c, b1, c1) {
                            members.push(x.at(b1, y1, x1, c1));
                        }
                    }
                }
            }
        }
        let m = members.len() as f64;
        let mean = members.iter().sum::<f64>() / m;
        match kind {
            OpKind::Mean(_) => mean,
            OpKind::Rms(_) => {
                (members.iter().map(|v| v * v).sum::<f64>() / m + 1e-5).sqrt()
            }
            OpKind::Std(_) => {
                let var = members.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
                (var + 1e-5).sqrt()
            }
            _ => unreachable!(),
        }
    })
}

#[test]
fn moments_match_nested_loop_oracle() {
    let shape = Shape::new(3, 4, 5, 8);
    for seed in [10, 11] {
        let x = probe(shape, seed);
        let mut sets = vec![IndexSet::Bwh, IndexSet::Whc, IndexSet::Wh];
        for groups in [2, 4, 8] {
            sets.push(IndexSet::Whcg { groups });
        }
        for idx in sets {
            for make in [OpKind::Mean, OpKind::Rms, OpKind::Std] {
                let kind = make(idx);
                let got = ops::eval_moment(kind, &x).unwrap();
                let want = moment_oracle(kind, &x);
                let diff = got.max_abs_diff(&want);
                assert!(diff <= 1e-9, "{kind:?} differs from oracle by {diff}");
            }
        }
    }
}

#[test]
fn moment_algebra_properties() {
    let shape = Shape::new(2, 3, 4, 4);
    let x = probe(shape, 21);
    for idx in [
        IndexSet::Bwh,
        IndexSet::Whc,
        IndexSet::Wh,
        IndexSet::Whcg { groups: 2 },
    ] {
        // Mean is idempotent.
        let m1 = ops::eval_moment(OpKind::Mean(idx), &x).unwrap();
        let m2 = ops::eval_moment(OpKind::Mean(idx), &m1).unwrap();
        assert!(m1.max_abs_diff(&m2) <= 1e-12);

        // Std of a constant is sqrt(eps).
        let k = Tensor::full(shape, 3.7);
        let s = ops::eval_moment(OpKind::Std(idx), &k).unwrap();
        let want = (1e-5f64).sqrt();
        for &v in s.data() {
            assert!((v - want).abs() <= 1e-12);
        }

        // Std is absolutely homogeneous up to the eps term.
        for alpha in [-2.0, 0.5, 3.0] {
            let sx = ops::eval_moment(OpKind::Std(idx), &x).unwrap();
            let sax = ops::eval_moment(OpKind::Std(idx), &x.scale(alpha)).unwrap();
            let scaled = sx.map(|v| v * alpha.abs());
            // eps inside the root perturbs each side a little.
            let tol: f64 = 1e-9f64.max(2e-5);
            assert!(
                sax.max_abs_diff(&scaled) <= tol,
                "alpha {alpha} idx {idx:?}: {}",
                sax.max_abs_diff(&scaled)
            );
        }
    }
}

/// Loss = sum(weights ⊙ op(x)); analytic vs finite-difference gradients.
fn gradcheck_unary(kind: OpKind, x: &Tensor, weights: &Tensor) {
    let mut tape = Tape::new();
    let xid = tape.leaf(x.clone());
    let out = if kind.is_moment() {
        tape.moment(kind, xid).unwrap()
    } else {
        tape.unary(kind, xid)
    };
    let wid = tape.constant(weights.clone());
    let prod = tape.binary(OpKind::Mul, out, wid).unwrap();
    let loss = tape.sum_all(prod);
    let grads = tape.backward(loss).unwrap();
    let analytic = grads.get(xid).unwrap();

    let mut f = |t: &Tensor| {
        let y = if kind.is_moment() {
            ops::eval_moment(kind, t).unwrap()
        } else {
            ops::eval_unary(kind, t)
        };
        y.data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let fd = fd_gradient(&mut f, x, FD_STEP);
    let err = max_rel_err(analytic, &fd);
    assert!(err <= REL_TOL, "{kind:?}: rel err {err}");
}

#[test]
fn unary_and_moment_gradients_pass_fd() {
    let shape = Shape::new(2, 3, 3, 4);
    let x = probe(shape, 31);
    let w = probe_weights(shape, 32);
    for kind in [
        OpKind::Neg,
        OpKind::Sigmoid,
        OpKind::Tanh,
        OpKind::Exp,
        OpKind::Log,
        OpKind::Abs,
        OpKind::Square,
        OpKind::Sqrt,
    ] {
        gradcheck_unary(kind, &x, &w);
    }
    for idx in [
        IndexSet::Bwh,
        IndexSet::Whc,
        IndexSet::Wh,
        IndexSet::Whcg { groups: 2 },
    ] {
        for make in [OpKind::Mean, OpKind::Rms, OpKind::Std] {
            gradcheck_unary(make(idx), &x, &w);
        }
    }
}

#[test]
fn binary_gradients_pass_fd_including_broadcast() {
    let shape = Shape::new(2, 3, 3, 4);
    let a = probe(shape, 41);
    let b = probe(shape, 42);
    let v = Tensor::channel_vector(vec![1.3, -0.8, 0.6, 2.1]);
    let w = probe_weights(shape, 43);
    for kind in [OpKind::Add, OpKind::Mul, OpKind::Div, OpKind::Max] {
        for (lhs, rhs) in [(&a, &b), (&a, &v), (&v, &b)] {
            let mut tape = Tape::new();
            let aid = tape.leaf(lhs.clone());
            let bid = tape.leaf(rhs.clone());
            let out = tape.binary(kind, aid, bid).unwrap();
            let wid = tape.constant(w.clone());
            let prod = tape.binary(OpKind::Mul, out, wid).unwrap();
            let loss = tape.sum_all(prod);
            let grads = tape.backward(loss).unwrap();

            for (which, t, id) in [("lhs", lhs, aid), ("rhs", rhs, bid)] {
                let mut f = |p: &Tensor| {
                    let (x, y) = if which == "lhs" { (p, rhs) } else { (lhs, p) };
                    let out = ops::eval_binary(kind, x, y).unwrap();
                    out.data()
                        .iter()
                        .zip(w.data())
                        .map(|(u, z)| u * z)
                        .sum::<f64>()
                };
                let fd = fd_gradient(&mut f, t, FD_STEP);
                let err = max_rel_err(grads.get(id).unwrap(), &fd);
                assert!(err <= REL_TOL, "{kind:?} {which}: rel err {err}");
            }
        }
    }
}

#[test]
fn conv_dense_pool_xent_gradients_pass_fd() {
    // Conv against a six-nested-loop oracle plus FD on both operands.
    let x = probe(Shape::new(1, 4, 4, 2), 51);
    let w = probe(Shape::new(3, 3, 2, 3), 52).scale(0.3);
    let got = nn::conv2d_forward(&x, &w, 2, Padding::Same, 1).unwrap();
    let want = conv_loop_oracle(&x, &w, 2, true);
    assert!(got.max_abs_diff(&want) <= 1e-12);

    for (stride, padding, groups, cin, cout) in [
        (1usize, Padding::Same, 1usize, 2usize, 3usize),
        (2, Padding::Same, 1, 2, 4),
        (1, Padding::Valid, 1, 3, 2),
        (1, Padding::Same, 2, 4, 4),
        (2, Padding::Same, 4, 4, 4), // depthwise
    ] {
        let x = probe(Shape::new(2, 4, 4, cin), 60 + stride as u64);
        let w = probe(Shape::new(3, 3, cin / groups, cout), 70 + groups as u64).scale(0.3);
        let out_shape = nn::conv2d_forward(&x, &w, stride, padding, groups)
            .unwrap()
            .shape();
        let wts = probe_weights(out_shape, 99);
        let mut tape = Tape::new();
        let xid = tape.leaf(x.clone());
        let wid = tape.leaf(w.clone());
        let out = tape.conv2d(xid, wid, stride, padding, groups).unwrap();
        let cid = tape.constant(wts.clone());
        let prod = tape.binary(OpKind::Mul, out, cid).unwrap();
        let loss = tape.sum_all(prod);
        let grads = tape.backward(loss).unwrap();
        for (which, t, id) in [("x", &x, xid), ("w", &w, wid)] {
            let mut f = |p: &Tensor| {
                let (a, b) = if which == "x" { (p, &w) } else { (&x, p) };
                nn::conv2d_forward(a, b, stride, padding, groups)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(wts.data())
                    .map(|(u, z)| u * z)
                    .sum::<f64>()
            };
            let fd = fd_gradient(&mut f, t, FD_STEP);
            let err = max_rel_err(grads.get(id).unwrap(), &fd);
            assert!(err <= REL_TOL, "conv {which} s{stride} g{groups}: {err}");
        }
    }

    // Head: pool -> dense -> cross-entropy, FD on head path inputs.
    let x = probe(Shape::new(3, 4, 4, 5), 81);
    let dw = probe(Shape::new(1, 1, 5, 10), 82).scale(0.3);
    let db = Tensor::channel_vector(vec![0.05; 10]);
    let labels = [1usize, 7, 3];
    let mut tape = Tape::new();
    let xid = tape.leaf(x.clone());
    let wid = tape.leaf(dw.clone());
    let bid = tape.leaf(db.clone());
    let pooled = tape.global_avg_pool(xid);
    let logits = tape.dense(pooled, wid, bid).unwrap();
    let loss = tape.softmax_cross_entropy(logits, &labels).unwrap();
    let grads = tape.backward(loss).unwrap();
    for (which, t, id) in [("x", &x, xid), ("w", &dw, wid), ("b", &db, bid)] {
        let mut f = |p: &Tensor| {
            let (xx, ww, bb) = match which {
                "x" => (p, &dw, &db),
                "w" => (&x, p, &db),
                _ => (&x, &dw, p),
            };
            let pooled = nn::global_avg_pool_forward(xx);
            let lin = nn::conv2d_forward(&pooled, ww, 1, Padding::Valid, 1).unwrap();
            let logits = ops::eval_binary(OpKind::Add, &lin, bb).unwrap();
            nn::softmax_xent_forward(&logits, &labels).unwrap().0.scalar_value()
        };
        let fd = fd_gradient(&mut f, t, FD_STEP);
        let err = max_rel_err(grads.get(id).unwrap(), &fd);
        assert!(err <= REL_TOL, "head {which}: rel err {err}");
    }

    // Cross-entropy value against a direct log-sum-exp oracle.
    let logits = probe(Shape::new(4, 1, 1, 10), 91);
    let labels = [0usize, 9, 5, 2];
    let (loss, _) = nn::softmax_xent_forward(&logits, &labels).unwrap();
    let mut want = 0.0;
    for (b, &lab) in labels.iter().enumerate() {
        let row: Vec<f64> = (0..10).map(|c| logits.at(b, 0, 0, c)).collect();
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        want += lse - row[lab];
    }
    want /= labels.len() as f64;
    assert!((loss.scalar_value() - want).abs() <= 1e-12);
}

fn conv_loop_oracle(x: &Tensor, w: &Tensor, stride: usize, same: bool) -> Tensor {
    let (n, hi, wi, ci) = x.shape().as_tuple();
    let (kh, kw, _, co) = w.shape().as_tuple();
    let (ho, wo, py, px) = if same {
        let ho = hi.div_ceil(stride);
        let wo = wi.div_ceil(stride);
        (
            ho,
            wo,
            (((ho - 1) * stride + kh).saturating_sub(hi)) / 2,
            (((wo - 1) * stride + kw).saturating_sub(wi)) / 2,
        )
    } else {
        ((hi - kh) / stride + 1, (wi - kw) / stride + 1, 0, 0)
    };
    let mut out = Tensor::zeros(Shape::new(n, ho, wo, co));
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                for oc in 0..co {
                    let mut acc = 0.0;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            for ic in 0..ci {
                                let iy = (oy * stride + ky) as isize - py as isize;
                                let ix = (ox * stride + kx) as isize - px as isize;
                                if iy < 0 || ix < 0 || iy >= hi as isize || ix >= wi as isize {
                                    continue;
                                }
                                acc += x.at(b, iy as usize, ix as usize, ic)
                                    * w.at(ky, kx, ic, oc);
                            }
                        }
                    }
                    out.set(b, oy, ox, oc, acc);
                }
            }
        }
    }
    out
}

#[test]
fn all_zoo_layers_pass_gradient_checks() {
    let reports = evonorm::gradcheck::check_all_zoo_layers().unwrap();
    assert_eq!(reports.len(), 38);
    for r in &reports {
        assert!(
            r.passed(),
            "{}: rel err {} (clearance {})",
            r.name,
            r.max_rel_err,
            r.clearance
        );
    }
}

#[test]
fn hvp_reproduces_explicit_hessian_product() {
    // Random symmetric 2x2 quadratic: l = 0.5 theta' A theta, grad = A theta.
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    for _ in 0..20 {
        let a11 = rng.random_range(0.5..3.0);
        let a22 = rng.random_range(0.5..3.0);
        let a12 = rng.random_range(-1.0..1.0);
        let theta = vec![Tensor::channel_vector(vec![
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        ])];
        let v = vec![Tensor::channel_vector(vec![
            rng.random_range(-2.0..2.0) + 2.5,
            rng.random_range(-2.0..2.0),
        ])];
        let grad = |t: &[Tensor]| {
            let d = t[0].data();
            Ok(vec![Tensor::channel_vector(vec![
                a11 * d[0] + a12 * d[1],
                a12 * d[0] + a22 * d[1],
            ])])
        };
        let out = finite_diff_hvp(grad, &theta, &v, None).unwrap();
        let want = [
            a11 * v[0].data()[0] + a12 * v[0].data()[1],
            a12 * v[0].data()[0] + a22 * v[0].data()[1],
        ];
        for (o, w) in out[0].data().iter().zip(want) {
            let rel = (o - w).abs() / w.abs().max(1e-9);
            assert!(rel <= 1e-4, "got {o}, want {w}");
        }
    }
}
