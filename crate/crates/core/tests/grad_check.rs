//! Reverse-mode gradients against central finite differences.

use proptest::prelude::*;
use thermocline::grad::{AdamState, Tape, Tensor, Var};

const H: f64 = 1e-6;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Checks every input component of `f` at `x`.
fn check_unary(x: &[f64], rows: usize, f: impl for<'t> Fn(Var<'t>) -> Var<'t>) -> f64 {
    let tape = Tape::new();
    let v = tape.param(Tensor::matrix(rows, x.len() / rows, x.to_vec()));
    let out = f(v);
    tape.backward(out).unwrap();
    let g = tape.grad_or_zeros(v);
    let eval = |x: Vec<f64>| {
        let tape = Tape::new();
        f(tape.constant(Tensor::matrix(rows, x.len() / rows, x))).item()
    };
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut p = x.to_vec();
        let mut m = x.to_vec();
        p[i] += H;
        m[i] -= H;
        let numeric = (eval(p) - eval(m)) / (2.0 * H);
        worst = worst.max(rel_err(g.data()[i], numeric));
    }
    worst
}

fn assert_small(err: f64) -> Result<(), TestCaseError> {
    prop_assert!(err < 1e-5, "relative error {err:e}");
    Ok(())
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn elementwise_primitives(x in values(6)) {
        assert_small(check_unary(&x, 2, |v| v.tanh().sum()))?;
        assert_small(check_unary(&x, 2, |v| v.sigmoid().sum()))?;
        assert_small(check_unary(&x, 2, |v| v.exp().mean()))?;
        assert_small(check_unary(&x, 2, |v| v.square().sum()))?;
        assert_small(check_unary(&x, 2, |v| v.powi(3).sum()))?;
        assert_small(check_unary(&x, 2, |v| (v.scale(1.7).offset(0.3) * v).sum()))?;
    }

    #[test]
    fn positive_domain_primitives(x in prop::collection::vec(0.2f64..3.0, 4)) {
        assert_small(check_unary(&x, 1, |v| v.sqrt().sum()))?;
        assert_small(check_unary(&x, 1, |v| v.recip().sum()))?;
        assert_small(check_unary(&x, 1, |v| (v / v.exp()).sum()))?;
    }

    #[test]
    fn kinks_away_from_zero(x in prop::collection::vec(prop_oneof![-3.0f64..-0.1, 0.1f64..3.0], 5)) {
        assert_small(check_unary(&x, 1, |v| v.abs().sum()))?;
        assert_small(check_unary(&x, 1, |v| v.relu().sum()))?;
    }

    #[test]
    fn matrix_primitives(a in values(6), b in values(6), row in values(3)) {
        let b2 = b.clone();
        let r2 = row.clone();
        assert_small(check_unary(&a, 2, move |v| {
            let t = v.tape();
            v.matmul(t.constant(Tensor::matrix(3, 2, b2.clone()))).tanh().sum()
        }))?;
        assert_small(check_unary(&a, 2, move |v| {
            let t = v.tape();
            v.matmul_t(t.constant(Tensor::matrix(2, 3, b.clone()))).square().sum()
        }))?;
        assert_small(check_unary(&a, 2, move |v| {
            let t = v.tape();
            v.add_row(t.constant(Tensor::row(r2.clone()))).sigmoid().sum()
        }))?;
        assert_small(check_unary(&a, 2, |v| {
            let s = v.slice((0, 2), (1, 3));
            (s * s.tanh()).sum() + v.slice_rows(1, 2).sum() * 2.0
        }))?;
        assert_small(check_unary(&a, 3, |v| {
            v.gather([4usize, 0, 4, 2].into()).square().sum()
        }))?;
    }

    #[test]
    fn shared_subexpressions(x in values(4)) {
        assert_small(check_unary(&x, 1, |v| {
            let y = v.tanh();
            (y * y - v * y + y / (v.square() + 1.0)).sum()
        }))?;
    }

    #[test]
    fn two_backward_passes_accumulate(x in values(5)) {
        let tape = Tape::new();
        let v = tape.param(Tensor::vector(x));
        let loss = (v.square() * v.sigmoid()).sum();
        tape.backward(loss).unwrap();
        let once = tape.grad_or_zeros(v);
        tape.backward(loss).unwrap();
        let twice = tape.grad_or_zeros(v);
        for (a, b) in once.data().iter().zip(twice.data()) {
            prop_assert_eq!(2.0 * a, *b);
        }
        tape.zero_grad();
        prop_assert!(tape.grad(v).is_none());
    }

    #[test]
    fn adam_with_zero_gradient_is_identity(x in values(6), lr in 1e-4f64..0.1, steps in 1usize..5) {
        let mut p = Tensor::matrix(2, 3, x);
        let before = p.clone();
        let mut adam = AdamState::new([&p]);
        let zero = Tensor::zeros(&[2, 3]);
        for _ in 0..steps {
            adam.step(&mut [("w", &mut p)], std::slice::from_ref(&zero), lr).unwrap();
        }
        prop_assert_eq!(p, before);
    }
}
