use mambavsr::numerics::{finite_difference_grad, relative_error, value_and_grad, Graph, NamedTensors, Var};
use mambavsr::numerics::ops::CharbonnierConfig;
use mambavsr::{Error, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::rc::Rc;

// f32 evaluations put the central-difference noise floor near 1e-3 for
// smaller steps
const STEP: f64 = 1e-2;
const TOL: f64 = 1e-3;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Values bounded away from zero, for ops with a kink there.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let v = rng.gen_range(0.2f32..1.0);
        if rng.gen_bool(0.5) { v } else { -v }
    })
}

/// Checks the reverse-mode gradient of `sum(f(params) * r)` for a fixed
/// random `r` against central differences.
fn check<F>(seed: u64, params: NamedTensors, f: F)
where
    F: Fn(&mut Graph, &NamedTensors) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probe = {
        let mut g = Graph::no_grad();
        f(&mut g, &params).unwrap().value().shape().to_vec()
    };
    let r = random(&mut rng, &probe, -1.0, 1.0);
    let loss = |g: &mut Graph, p: &NamedTensors| -> Result<Var> {
        let y = f(g, p)?;
        g.dot_const(&y, &r)
    };
    let (_, grads) = value_and_grad(&params, loss).unwrap();
    let names: Vec<&str> = params.keys().map(String::as_str).collect();
    let fd = finite_difference_grad(&params, &names, STEP, |p| {
        let mut g = Graph::no_grad();
        Ok(loss(&mut g, p)?.value().data()[0] as f64)
    })
    .unwrap();
    for name in names {
        let err = relative_error(&grads[name], &fd[name], 1e-6);
        assert!(err <= TOL, "{name}: relative error {err:.3e}");
    }
}

fn store(items: Vec<(&str, Tensor)>) -> NamedTensors {
    items.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (stride, padding) in [(1, 1), (2, 0), (2, 1)] {
        let p = store(vec![
            ("x", random(&mut rng, &[2, 6, 5], -1.0, 1.0)),
            ("w", random(&mut rng, &[3, 2, 3, 3], -0.5, 0.5)),
            ("b", random(&mut rng, &[3], -0.5, 0.5)),
        ]);
        check(1, p, |g, p| {
            let (x, w, b) = (g.param(p, "x")?, g.param(p, "w")?, g.param(p, "b")?);
            g.conv2d(&x, &w, &b, stride, padding)
        });
    }
}

#[test]
fn linear_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = store(vec![
        ("x", random(&mut rng, &[5, 4], -1.0, 1.0)),
        ("w", random(&mut rng, &[3, 4], -1.0, 1.0)),
        ("b", random(&mut rng, &[3], -1.0, 1.0)),
    ]);
    check(2, p.clone(), |g, p| {
        let (x, w, b) = (g.param(p, "x")?, g.param(p, "w")?, g.param(p, "b")?);
        g.linear(&x, &w, Some(&b))
    });
    let mut p = p;
    p.remove("b");
    check(3, p, |g, p| {
        let (x, w) = (g.param(p, "x")?, g.param(p, "w")?);
        g.linear(&x, &w, None)
    });
}

#[test]
fn bmm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for transpose_b in [false, true] {
        let bshape: &[usize] = if transpose_b { &[2, 5, 4] } else { &[2, 4, 5] };
        let p = store(vec![
            ("a", random(&mut rng, &[2, 3, 4], -1.0, 1.0)),
            ("b", random(&mut rng, bshape, -1.0, 1.0)),
        ]);
        check(4, p, |g, p| {
            let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
            g.bmm(&a, &b, transpose_b)
        });
    }
}

#[test]
fn softmax_and_layer_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    check(5, store(vec![("a", random(&mut rng, &[3, 6], -2.0, 2.0))]), |g, p| {
        let a = g.param(p, "a")?;
        g.softmax(&a)
    });
    let p = store(vec![
        ("x", random(&mut rng, &[4, 6], -2.0, 2.0)),
        ("gamma", random(&mut rng, &[6], 0.5, 1.5)),
        ("beta", random(&mut rng, &[6], -0.5, 0.5)),
    ]);
    check(6, p, |g, p| {
        let (x, gm, bt) = (g.param(p, "x")?, g.param(p, "gamma")?, g.param(p, "beta")?);
        g.layer_norm(&x, &gm, &bt, 1e-5)
    });
}

#[test]
fn pointwise_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ops: [fn(&mut Graph, &Var) -> Result<Var>; 5] = [
        |g, a| g.gelu(a),
        |g, a| g.silu(a),
        |g, a| g.softplus(a),
        |g, a| g.leaky_relu(a, 0.1),
        |g, a| g.exp(a),
    ];
    for (i, op) in ops.into_iter().enumerate() {
        let p = store(vec![("a", away_from_zero(&mut rng, &[3, 7]))]);
        check(10 + i as u64, p, move |g, p| {
            let a = g.param(p, "a")?;
            op(g, &a)
        });
    }
}

#[test]
fn arithmetic_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = store(vec![
        ("a", random(&mut rng, &[3, 4], -1.0, 1.0)),
        ("b", random(&mut rng, &[3, 4], -1.0, 1.0)),
        ("s", random(&mut rng, &[3], -1.0, 1.0)),
    ]);
    check(8, p, |g, p| {
        let (a, b, s) = (g.param(p, "a")?, g.param(p, "b")?, g.param(p, "s")?);
        let m = g.mul(&a, &b)?;
        let d = g.sub(&m, &a)?;
        let e = g.scale(&d, 0.7)?;
        let f = g.scale_lead(&e, &s)?;
        g.add(&f, &b)
    });
}

#[test]
fn rearrangement_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let index: Rc<[usize]> = (0..30).map(|_| rng.gen_range(0..12)).collect();
    let p = store(vec![
        ("a", random(&mut rng, &[3, 4], -1.0, 1.0)),
        ("b", random(&mut rng, &[2, 4], -1.0, 1.0)),
    ]);
    check(9, p, move |g, p| {
        let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
        let c = g.concat(&[a.clone(), b, a.clone()])?;
        let r = g.reshape(&c, &[4, 8])?;
        let gathered = g.gather(&a, Rc::clone(&index), &[5, 6])?;
        let s = g.softmax(&r)?;
        let flat = g.reshape(&s, &[32])?;
        let head = g.gather(&flat, (0..30).collect(), &[5, 6])?;
        g.mul(&gathered, &head)
    });
}

#[test]
fn warp_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let flow = random(&mut rng, &[2, 5, 6], -1.7, 1.7);
    check(10, store(vec![("a", random(&mut rng, &[2, 5, 6], -1.0, 1.0))]), move |g, p| {
        let a = g.param(p, "a")?;
        g.warp(&a, &flow)
    });
}

#[test]
fn loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let hr = random(&mut rng, &[2, 4, 4], 0.0, 1.0);
    let offset = away_from_zero(&mut rng, &[2, 4, 4]);
    let sr = Tensor::from_fn(&[2, 4, 4], |i| hr.data()[i] + 0.1 * offset.data()[i]);
    let target = hr.clone();
    check(11, store(vec![("sr", sr.clone())]), move |g, p| {
        let s = g.param(p, "sr")?;
        g.charbonnier_mean(&s, &target, CharbonnierConfig::default())
    });
    check(12, store(vec![("sr", sr)]), move |g, p| {
        let s = g.param(p, "sr")?;
        g.charbonnier_global(&s, &hr, CharbonnierConfig::default())
    });
}

#[test]
fn shared_parameters_accumulate() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let p = store(vec![("a", random(&mut rng, &[4], -1.0, 1.0))]);
    let (_, grads) = value_and_grad(&p, |g, p| {
        let a = g.param(p, "a")?;
        let again = g.param(p, "a")?;
        let s = g.add(&a, &again)?;
        g.dot_const(&s, &Tensor::full(&[4], 1.0))
    })
    .unwrap();
    assert_eq!(grads["a"].data(), &[2.0; 4]);
}

#[test]
fn unused_parameters_get_zero_gradients() {
    let p = store(vec![("a", Tensor::full(&[2], 1.0)), ("b", Tensor::full(&[3], 1.0))]);
    let (v, grads) = value_and_grad(&p, |g, p| {
        let a = g.param(p, "a")?;
        g.dot_const(&a, &Tensor::full(&[2], 3.0))
    })
    .unwrap();
    assert_eq!(v, 6.0);
    assert_eq!(grads["b"], Tensor::zeros(&[3]));
}

#[test]
fn missing_parameters_are_model_mismatches() {
    let mut g = Graph::new();
    assert!(matches!(g.param(&NamedTensors::new(), "nope"), Err(Error::ModelMismatch(_))));
}

#[test]
fn no_grad_graphs_do_not_record() {
    let mut g = Graph::no_grad();
    assert!(!g.is_recording());
    let a = g.leaf(Tensor::full(&[2], 1.0));
    let b = g.exp(&a).unwrap();
    assert_eq!(b.value().data()[0], std::f32::consts::E);
    assert!(Graph::new().is_recording());
}

#[test]
fn selective_scan_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (l, c, n) = (6, 3, 4);
    let p = store(vec![
        ("x", random(&mut rng, &[l, c], -1.0, 1.0)),
        ("delta", random(&mut rng, &[l, c], 0.1, 0.9)),
        ("a", random(&mut rng, &[c, n], -1.5, -0.2)),
        ("b", random(&mut rng, &[l, n], -1.0, 1.0)),
        ("c", random(&mut rng, &[l, n], -1.0, 1.0)),
        ("d", random(&mut rng, &[c], -1.0, 1.0)),
    ]);
    check(13, p, |g, p| {
        let v: Vec<Var> = ["x", "delta", "a", "b", "c", "d"]
            .iter()
            .map(|k| g.param(p, k))
            .collect::<Result<_>>()?;
        g.selective_scan(&v[0], &v[1], &v[2], &v[3], &v[4], &v[5])
    });
}
