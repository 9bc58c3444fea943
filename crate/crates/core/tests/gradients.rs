//! Tape gradients against central finite differences, and the accumulation
//! order contract.

use ain_core::ail::{ail_forward_tape, AilVars};
use ain_core::autodiff::{Gradients, Var};
use ain_core::checks::{run_case, AIL_CASES, MODE_FREE_CASES};
use ain_core::kernels::ConvGeom;
use ain_core::{finite_diff_check, AilConfig, Error, FdOptions, GradMode, ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fd(seed: u64) -> FdOptions {
    FdOptions {
        seed,
        step_retry: true,
        ..FdOptions::default()
    }
}

#[test]
fn every_op_over_ten_seeds() {
    for &case in MODE_FREE_CASES.iter().chain(AIL_CASES) {
        for seed in 0..10 {
            let r = run_case(case, seed, GradMode::Analytic, fd(seed)).unwrap();
            assert!(r.pass, "{case} seed {seed}: max rel err {:e}", r.max_rel_err);
            assert!(!r.rows.is_empty());
        }
    }
}

#[test]
fn sum_of_squares_is_tight() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut store = ParamStore::<f64>::new();
    let id = store
        .add("theta", Tensor::from_fn(&[4, 5], |_| rng.random_range(-3.0..3.0)))
        .unwrap();
    let r = finite_diff_check(
        &mut store,
        &[id],
        |s, t| {
            let p = t.param(s, id);
            let sq = t.mul(p, p)?;
            Ok(t.sum(sq))
        },
        FdOptions::default(),
    )
    .unwrap();
    assert!(r.pass && r.max_rel_err < 1e-8, "{:e}", r.max_rel_err);
}

#[test]
fn constant_loss_passes_with_zero_gradients() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("theta", Tensor::full(&[3], 0.7)).unwrap();
    let r = finite_diff_check(
        &mut store,
        &[id],
        |_, t| {
            let c = t.input(Tensor::full(&[2], 1.5));
            Ok(t.sum(c))
        },
        FdOptions::default(),
    )
    .unwrap();
    assert!(r.pass);
    assert_eq!((r.rows[0].analytic, r.rows[0].numeric), (0.0, 0.0));
}

#[test]
fn non_finite_loss_is_an_oracle_failure() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("theta", Tensor::full(&[2], 1.0)).unwrap();
    let r = finite_diff_check(
        &mut store,
        &[id],
        |s, t| {
            let p = t.param(s, id);
            t.weighted_sum(p, Tensor::full(&[2], f64::NAN))
        },
        FdOptions::default(),
    );
    assert!(matches!(r, Err(Error::OracleFailure(name)) if name == "theta"));
}

#[test]
fn small_ail_passes_at_default_tolerance() {
    // 6×6×2 input, 3×3 stride-2 windows
    for seed in 0..10 {
        let r = run_case(
            "lail",
            seed,
            GradMode::Analytic,
            FdOptions {
                seed,
                ..FdOptions::default()
            },
        )
        .unwrap();
        assert!(r.pass, "seed {seed}: {:e}", r.max_rel_err);
    }
}

/// Three sibling branches reading the same input, joined by a concat. The
/// recording order decides the order in which their contributions reach
/// the shared input during the reverse sweep.
fn sibling_gradients(order: [usize; 3]) -> (Gradients<f64>, Vec<ain_core::autodiff::ParamId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut s = ParamStore::<f64>::new();
    let mut rand = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0));
    let x = s.add("input", rand(&[2, 7, 7, 3])).unwrap();
    let cw = s.add("conv.weights", rand(&[3, 3, 3, 4])).unwrap();
    let cb = s.add("conv.bias", rand(&[4])).unwrap();
    let pw = s.add("gate.weights", rand(&[1, 1, 3, 2])).unwrap();
    let pb = s.add("gate.bias", rand(&[2])).unwrap();
    let a = [
        s.add("ail.content.weights", rand(&[1, 1, 3, 5])).unwrap(),
        s.add("ail.content.bias", rand(&[5])).unwrap(),
        s.add("ail.attention.weights", rand(&[3, 3, 3, 5])).unwrap(),
        s.add("ail.attention.bias", rand(&[5])).unwrap(),
    ];
    let weights = rand(&[2, 7, 7, 11]);

    let mut t = Tape::new();
    let xv = t.param(&s, x);
    let mut branches: [Option<Var>; 3] = [None; 3];
    for &b in &order {
        branches[b] = Some(match b {
            0 => {
                let (w, bias) = (t.param(&s, cw), t.param(&s, cb));
                let y = t.conv2d(xv, w, bias, ConvGeom::same(3, 3, 1)).unwrap();
                t.relu(y)
            }
            1 => {
                let (w, bias) = (t.param(&s, pw), t.param(&s, pb));
                let y = t.conv2d(xv, w, bias, ConvGeom::same(1, 1, 1)).unwrap();
                t.sigmoid(y)
            }
            _ => {
                let vars = AilVars {
                    content_w: t.param(&s, a[0]),
                    content_b: t.param(&s, a[1]),
                    attention_w: t.param(&s, a[2]),
                    attention_b: t.param(&s, a[3]),
                };
                ail_forward_tape(&mut t, xv, &AilConfig::local(3, 3, 1, 3, 5), vars)
                    .unwrap()
                    .output
            }
        });
    }
    let parts: Vec<Var> = branches.iter().map(|b| b.unwrap()).collect();
    let joined = t.concat(&parts).unwrap();
    let loss = t.weighted_sum(joined, weights).unwrap();
    let ids = s.ids().collect();
    (t.backward(loss).unwrap(), ids)
}

#[test]
fn accumulation_is_order_independent() {
    let (reference, ids) = sibling_gradients([0, 1, 2]);
    let reference = reference.by_param();
    for order in [[2, 0, 1], [1, 2, 0], [2, 1, 0]] {
        let g = sibling_gradients(order).0.by_param();
        for id in &ids {
            let diff = reference[id].max_abs_diff(&g[id]);
            assert!(diff <= 1e-12, "order {order:?}: {diff:e}");
        }
    }
}
