use super::*;
use crate::error::Error;
use proptest::prelude::*;

fn t(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(rows)
}

#[test]
fn matmul_examples() {
    let mut g = Graph::new();
    let id = g.constant(t(&[&[1.0, 0.0], &[0.0, 1.0]]));
    let col = g.constant(t(&[&[3.0], &[4.0]]));
    let out = g.matmul(id, col).unwrap();
    assert_eq!(g.value(out).data(), &[3.0, 4.0]);

    let a = g.param(t(&[&[1.0, 2.0]]));
    let out = g.matmul(a, col).unwrap();
    assert_eq!(g.value(out).data(), &[11.0]);
    let s = g.sum(out);
    g.backward(s).unwrap();
    assert_eq!(g.grad(a).unwrap().data(), &[3.0, 4.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(2, 3));
    let b = g.constant(Tensor::zeros(2, 3));
    match g.matmul(a, b) {
        Err(Error::Shape { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn relu_forward_and_subgradient() {
    let mut g = Graph::new();
    let x = g.param(t(&[&[-1.0, 2.0]]));
    let y = g.relu(x);
    assert_eq!(g.value(y).data(), &[0.0, 2.0]);
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[0.0, 1.0]);

    let mut g = Graph::new();
    let x = g.param(t(&[&[0.0]]));
    let y = g.relu(x);
    assert_eq!(g.value(y).data(), &[0.0]);
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[0.0]);
}

fn abs_maxout(g: &mut Graph, x: f64) -> (Var, Var) {
    // two pieces: x·1 and x·(−1)
    let xv = g.constant(t(&[&[x]]));
    let w = g.param(t(&[&[1.0, -1.0]]));
    let pre = g.matmul(xv, w).unwrap();
    (g.maxout(pre, 2).unwrap(), w)
}

#[test]
fn maxout_examples() {
    let mut g = Graph::new();
    let (y, w) = abs_maxout(&mut g, 3.0);
    assert_eq!(g.value(y).data(), &[3.0]);
    let s = g.sum(y);
    g.backward(s).unwrap();
    // only the first piece carries gradient: d(w0·x)/dw0 = x
    assert_eq!(g.grad(w).unwrap().data(), &[3.0, 0.0]);

    let mut g = Graph::new();
    let (y, _) = abs_maxout(&mut g, -2.0);
    assert_eq!(g.value(y).data(), &[2.0]);
}

#[test]
fn maxout_routes_input_gradient_to_winner() {
    let mut g = Graph::new();
    let x = g.param(t(&[&[3.0]]));
    let w = g.constant(t(&[&[1.0, -1.0]]));
    let pre = g.matmul(x, w).unwrap();
    let y = g.maxout(pre, 2).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0]);
}

#[test]
fn maxout_ties_go_to_lowest_piece() {
    let mut g = Graph::new();
    let x = g.param(t(&[&[2.0, 2.0]]));
    let y = g.maxout(x, 2).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 0.0]);
}

#[test]
fn maxout_rejects_single_piece() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(1, 2));
    assert!(matches!(g.maxout(x, 1), Err(Error::Config(_))));
}

fn bn(x: Tensor, gamma: f64, beta: f64) -> Tensor {
    let p = x.cols();
    let mut g = Graph::new();
    let xv = g.constant(x);
    let ga = g.constant(Tensor::full(1, p, gamma));
    let be = g.constant(Tensor::full(1, p, beta));
    let (y, _) = g.batch_norm_train(xv, ga, be, 1e-5).unwrap();
    g.value(y).clone()
}

#[test]
fn batch_norm_examples() {
    let y = bn(t(&[&[1.0], &[-1.0]]), 1.0, 0.0);
    assert!((y.data()[0] - 1.0).abs() < 1e-4 && (y.data()[1] + 1.0).abs() < 1e-4);

    let y = bn(t(&[&[1.0, 7.0], &[-3.0, 2.0], &[0.5, 0.0]]), 0.0, 0.25);
    assert!(y.data().iter().all(|&v| v == 0.25));

    let y = bn(t(&[&[5.0], &[5.0]]), 1.0, 0.3);
    assert!(y.data().iter().all(|&v| v == 0.3));
}

#[test]
fn batch_norm_needs_two_rows() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(1, 3));
    let ga = g.constant(Tensor::full(1, 3, 1.0));
    let be = g.constant(Tensor::zeros(1, 3));
    assert!(matches!(
        g.batch_norm_train(x, ga, be, 1e-5),
        Err(Error::BatchSize { got: 1, .. })
    ));
}

#[test]
fn backward_examples() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(3.0));
    let y = g.square(x);
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[6.0]);
    // second pass without reset doubles
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[12.0]);
    g.zero_grad();
    assert!(g.grad(x).is_none());

    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(1.0));
    let y = g.add(x, x).unwrap();
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0]);
}

#[test]
fn backward_rejects_non_scalar_seed() {
    let mut g = Graph::new();
    let x = g.param(Tensor::zeros(2, 2));
    assert!(matches!(g.backward(x), Err(Error::Contract(_))));
}

#[test]
fn finite_diff_on_square() {
    let rep = finite_diff_check(
        |g, p| Ok(g.square(p[0])),
        &[Tensor::scalar(3.0)],
        1e-5,
        1e-6,
    )
    .unwrap();
    assert!(rep.passed(), "{rep:?}");
}

#[test]
fn finite_diff_excludes_maxout_tie() {
    // both pieces equal at x = 0 for w = (1, -1): a kink.
    let rep = finite_diff_check(
        |g, p| {
            let w = g.constant(t(&[&[1.0, -1.0]]));
            let pre = g.matmul(p[0], w)?;
            let y = g.maxout(pre, 2)?;
            Ok(g.sum(y))
        },
        &[Tensor::scalar(0.0)],
        1e-5,
        1e-4,
    )
    .unwrap();
    assert_eq!(rep.excluded(), 1);
    assert_eq!(rep.checked(), 0);
}

#[test]
fn finite_diff_reports_non_finite_objective() {
    let res = finite_diff_check(|g, p| Ok(g.ln(p[0])), &[Tensor::scalar(-1.0)], 1e-5, 1e-4);
    assert!(matches!(res, Err(Error::Evaluation(_))));
}

#[test]
fn double_backward_of_cube() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(2.0));
    let x2 = g.square(x);
    let y = g.mul(x2, x).unwrap();
    let dx = g.differentiate(y, &[x]).unwrap()[0];
    assert!((g.value(dx).item().unwrap() - 12.0).abs() < 1e-12);
    let d2 = g.differentiate(dx, &[x]).unwrap()[0];
    assert!((g.value(d2).item().unwrap() - 12.0).abs() < 1e-12);
    g.backward(dx).unwrap();
    assert!((g.grad(x).unwrap().data()[0] - 12.0).abs() < 1e-12);
}

#[test]
fn differentiate_through_batch_norm_is_unsupported() {
    let mut g = Graph::new();
    let x = g.param(t(&[&[1.0], &[2.0], &[4.0]]));
    let ga = g.param(t(&[&[1.5]]));
    let be = g.param(t(&[&[0.0]]));
    let (y, _) = g.batch_norm_train(x, ga, be, 1e-5).unwrap();
    let y3 = g.square(y);
    let s = g.sum(y3);
    assert!(matches!(
        g.differentiate(s, &[x]),
        Err(Error::UnsupportedOp("batch_norm"))
    ));
}

#[test]
fn batch_norm_gradients_match_finite_differences() {
    let x = t(&[&[0.3, -1.2], &[1.1, 0.4], &[-0.7, 2.0], &[0.2, 0.1]]);
    let rep = finite_diff_check(
        |g, p| {
            let (y, _) = g.batch_norm_train(p[0], p[1], p[2], 1e-5)?;
            let w = g.constant(t(&[&[0.5], &[-1.3]]));
            let z = g.matmul(y, w)?;
            let z = g.sigmoid(z);
            Ok(g.sum(z))
        },
        &[x, t(&[&[1.2, 0.8]]), t(&[&[0.1, -0.2]])],
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(rep.passed(), "{rep:?}");
}

/// A small smooth-plus-piecewise expression touching every primitive.
fn kitchen_sink(g: &mut Graph, p: &[Var]) -> crate::Result<Var> {
    let (x, w, b) = (p[0], p[1], p[2]);
    let h = g.affine(x, w, b)?;
    let r = g.relu(h);
    let m = g.maxout(h, 2)?;
    let e = g.exp(m);
    let sp = g.softplus(h);
    let l = g.ln(sp);
    let sq = g.sqrt(sp);
    let sig = g.sigmoid(r);
    let a = g.abs(h);
    let cl = g.clamp_min(h, -0.5);
    let ht = g.transpose(h);
    let gram = g.matmul(h, ht)?;
    let rows = g.sum_rows(l);
    let cols = g.sum_cols(sq);
    let t1 = g.mul(sig, a)?;
    let t2 = g.div(cl, sp)?;
    let t3 = g.sub(t1, t2)?;
    let t3 = g.add(t3, cols)?;
    let t3 = g.mul(t3, rows)?;
    let s1 = g.mean(t3);
    let s2 = g.mean(e);
    let s3 = g.mean(gram);
    let s3 = g.scale(s3, 0.1);
    let s = g.add(s1, s2)?;
    let s = g.sub(s, s3)?;
    let s = g.neg(s);
    Ok(g.offset(s, 0.7))
}

fn sink_params(seed: u64) -> Vec<Tensor> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut mk = |r: usize, c: usize| {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    };
    vec![mk(3, 2), mk(2, 4), mk(1, 4)]
}

#[test]
fn every_primitive_matches_finite_differences() {
    for seed in 0..20 {
        let rep = finite_diff_check(kitchen_sink, &sink_params(seed), 1e-5, 1e-4).unwrap();
        assert!(rep.passed(), "seed {seed}: {rep:?}");
    }
}

#[test]
fn symbolic_and_numeric_gradients_agree() {
    for seed in 0..10 {
        let params = sink_params(seed);
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
        let out = kitchen_sink(&mut g, &vars).unwrap();
        let sym = g.differentiate(out, &vars).unwrap();
        g.backward(out).unwrap();
        for (v, s) in vars.iter().zip(&sym) {
            let num = g.grad(*v).unwrap().data().to_vec();
            for (a, b) in num.iter().zip(g.value(*s).data()) {
                assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()), "{a} vs {b}");
            }
        }
    }
}

#[test]
fn second_order_gradients_match_finite_differences() {
    // d/dθ ‖∂f/∂x‖² for a smooth two-layer net, checked numerically.
    for seed in 0..10 {
        let rep = finite_diff_check(
            |g, p| {
                let x = p[0];
                let h = g.matmul(x, p[1])?;
                let h = g.softplus(h);
                let o = g.matmul(h, p[2])?;
                let o = g.sum(o);
                let dx = g.differentiate(o, &[x])?[0];
                let sq = g.square(dx);
                Ok(g.sum(sq))
            },
            &{
                let s = sink_params(seed + 100);
                vec![s[0].clone(), s[1].clone(), sink_params(seed + 200)[1].clone().transposed()]
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(rep.passed(), "seed {seed}: {rep:?}");
    }
}

impl Tensor {
    fn transposed(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.get(i, j);
            }
        }
        Tensor::matrix(c, r, out).unwrap()
    }
}

proptest! {
    #[test]
    fn fan_out_accumulates_additively(vals in prop::collection::vec(-5.0f64..5.0, 1..8)) {
        let n = vals.len();
        let mut g1 = Graph::new();
        let x1 = g1.param(Tensor::matrix(1, n, vals.clone()).unwrap());
        let sq = g1.square(x1);
        let s1 = g1.sum(sq);
        g1.backward(s1).unwrap();

        let mut g2 = Graph::new();
        let x2 = g2.param(Tensor::matrix(1, n, vals).unwrap());
        let twice = g2.add(x2, x2).unwrap();
        let sq = g2.square(twice);
        let s2 = g2.sum(sq);
        g2.backward(s2).unwrap();
        // d/dx (2x)² = 8x = 4 · d/dx x²
        for (a, b) in g1.grad(x1).unwrap().data().iter().zip(g2.grad(x2).unwrap().data()) {
            prop_assert!((4.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_norm_normalizes_train_batches(
        seed in 0u64..1000,
        gamma in 0.2f64..3.0,
        beta in -2.0f64..2.0,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (b, p) = (16, 3);
        let x: Vec<f64> = (0..b * p).map(|_| rng.random_range(-4.0..4.0)).collect();
        let y = bn(Tensor::matrix(b, p, x).unwrap(), gamma, beta);
        for j in 0..p {
            let col: Vec<f64> = (0..b).map(|i| y.get(i, j)).collect();
            let mean = col.iter().sum::<f64>() / b as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / b as f64;
            prop_assert!((mean - beta).abs() < 1e-6 * (1.0 + beta.abs()));
            prop_assert!((var - gamma * gamma).abs() < 1e-3);
        }
    }

    #[test]
    fn forward_is_deterministic(seed in 0u64..500) {
        let params = sink_params(seed);
        let eval = || {
            let mut g = Graph::new();
            let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
            let out = kitchen_sink(&mut g, &vars).unwrap();
            g.value(out).item().unwrap().to_bits()
        };
        prop_assert_eq!(eval(), eval());
    }
}
