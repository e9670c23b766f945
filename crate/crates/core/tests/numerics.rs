use cadnet_core::numerics::*;
use cadnet_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

// Naive six-nested-loop cross-correlation, NHWC / [k,k,cin,cout].
fn conv_oracle(x: &Tensor<f64>, k: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Vec<f64> {
    let (h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (ks, cout) = (k.shape()[0], k.shape()[3]);
    let oh = (h + 2 * pad - ks) / stride + 1;
    let ow = (w + 2 * pad - ks) / stride + 1;
    let mut out = vec![0.0; oh * ow * cout];
    for oy in 0..oh {
        for ox in 0..ow {
            for co in 0..cout {
                let mut acc = b[co];
                for ky in 0..ks {
                    for kx in 0..ks {
                        for ci in 0..cin {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let xv = x.data()[(iy as usize * w + ix as usize) * cin + ci];
                            let kv = k.data()[((ky * ks + kx) * cin + ci) * cout + co];
                            acc += xv * kv;
                        }
                    }
                }
                out[(oy * ow + ox) * cout + co] = acc;
            }
        }
    }
    out
}

#[test]
fn fc_identity_and_affine() {
    let eye = Tensor::new(&[2, 2], vec![1.0f32, 0.0, 0.0, 1.0]).unwrap();
    let y = fc(&Tensor::from_vec(vec![1.0, 0.0]), &eye, &Tensor::from_vec(vec![0.0, 0.0])).unwrap();
    assert_eq!(y.data(), &[1.0, 0.0]);
    let y = fc(&Tensor::from_vec(vec![2.0, 3.0]), &eye, &Tensor::from_vec(vec![1.0, 1.0])).unwrap();
    assert_eq!(y.data(), &[3.0, 4.0]);
}

#[test]
fn fc_matches_dot_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_tensor(&mut rng, &[4]);
    let w = rand_tensor(&mut rng, &[4, 3]);
    let b = rand_tensor(&mut rng, &[3]);
    let y = fc(&x, &w, &b).unwrap();
    for j in 0..3 {
        let mut acc = b.data()[j];
        for i in 0..4 {
            acc += x.data()[i] * w.data()[i * 3 + j];
        }
        assert!((y.data()[j] - acc).abs() < 1e-6);
    }
}

#[test]
fn fc_shape_mismatch_is_config_error() {
    let w = Tensor::<f32>::zeros(&[3, 2]);
    let r = fc(&Tensor::from_vec(vec![1.0, 2.0]), &w, &Tensor::from_vec(vec![0.0, 0.0]));
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn conv_identity_kernel() {
    let x = Tensor::new(&[1, 1, 1], vec![0.37f32]).unwrap();
    let k = Tensor::new(&[1, 1, 1, 1], vec![1.0f32]).unwrap();
    let y = conv2d(&x, &k, &Tensor::from_vec(vec![0.0]), 1, Padding::Same).unwrap();
    assert_eq!(y.data(), &[0.37]);
}

#[test]
fn conv_zero_input_gives_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::<f64>::zeros(&[5, 5, 2]);
    let k = rand_tensor(&mut rng, &[3, 3, 2, 4]);
    let b = Tensor::from_vec(vec![0.5, -1.0, 2.0, 0.0]);
    let y = conv2d(&x, &k, &b, 1, Padding::Same).unwrap();
    assert_eq!(y.shape(), &[5, 5, 4]);
    for px in y.data().chunks(4) {
        assert_eq!(px, b.data());
    }
}

#[test]
fn conv_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, &[5, 5, 2]);
    let k = rand_tensor(&mut rng, &[3, 3, 2, 4]);
    let b = rand_tensor(&mut rng, &[4]);
    for (stride, padding, pad) in [(1, Padding::Same, 1), (1, Padding::Valid, 0), (2, Padding::Same, 1), (2, Padding::Valid, 0)] {
        let y = conv2d(&x, &k, &b, stride, padding).unwrap();
        let o = conv_oracle(&x, &k, b.data(), stride, pad);
        assert_eq!(y.len(), o.len());
        for (a, e) in y.data().iter().zip(&o) {
            assert!((a - e).abs() < 1e-5, "stride {stride} {padding:?}: {a} vs {e}");
        }
    }
}

#[test]
fn conv_rejects_oversized_kernel() {
    let x = Tensor::<f32>::zeros(&[2, 2, 1]);
    let k = Tensor::<f32>::zeros(&[5, 5, 1, 1]);
    let r = conv2d(&x, &k, &Tensor::from_vec(vec![0.0]), 1, Padding::Valid);
    assert!(matches!(r, Err(Error::Config(_))));
    let k = Tensor::<f32>::zeros(&[2, 2, 1, 1]);
    assert!(conv2d(&x, &k, &Tensor::from_vec(vec![0.0]), 1, Padding::Same).is_err());
}

#[test]
fn activation_definitions() {
    let t = |v: f32| Tensor::from_vec(vec![v]);
    assert_eq!(activation(&t(0.0), Activation::Sigmoid).data(), &[0.5]);
    assert_eq!(activation(&t(-3.0), Activation::Relu).data(), &[0.0]);
    assert_eq!(activation(&t(0.0), Activation::Exp).data(), &[1.0]);
    let s = activation(&Tensor::from_vec(vec![-80.0f32, -5.0, 5.0, 80.0]), Activation::Sigmoid);
    assert!(s.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
}

fn scalar_param(v: f64) -> (ParameterStore<f64>, ParamId) {
    let mut s = ParameterStore::new();
    let id = s.add("w", Tensor::scalar(v)).unwrap();
    (s, id)
}

#[test]
fn backward_square() {
    let (mut store, id) = scalar_param(3.0);
    let mut tape = Tape::new();
    let w = tape.param(&store, id).unwrap();
    let loss = tape.mul(w, w).unwrap();
    tape.backward(loss, &mut store).unwrap();
    assert_eq!(store.get(id).grad.data(), &[6.0]);
}

#[test]
fn backward_sigmoid() {
    let (mut store, id) = scalar_param(0.0);
    let mut tape = Tape::new();
    let w = tape.param(&store, id).unwrap();
    let loss = tape.sigmoid(w).unwrap();
    tape.backward(loss, &mut store).unwrap();
    assert_eq!(store.get(id).grad.data(), &[0.25]);
}

#[test]
fn backward_without_forward_is_usage_error() {
    let (mut store, id) = scalar_param(1.0);
    let mut recorded = Tape::new();
    let w = recorded.param(&store, id).unwrap();
    let empty = Tape::<f64>::new();
    assert!(matches!(empty.backward(w, &mut store), Err(Error::Usage(_))));
}

#[test]
fn unreachable_parameters_get_zero() {
    let mut store = ParameterStore::<f64>::new();
    let a = store.add("a", Tensor::scalar(2.0)).unwrap();
    let b = store.add("b", Tensor::scalar(5.0)).unwrap();
    let mut tape = Tape::new();
    let pa = tape.param(&store, a).unwrap();
    let _pb = tape.param(&store, b).unwrap();
    let loss = tape.scale(pa, 3.0).unwrap();
    tape.backward(loss, &mut store).unwrap();
    assert_eq!(store.get(a).grad.data(), &[3.0]);
    assert_eq!(store.get(b).grad.data(), &[0.0]);
}

#[test]
fn non_finite_values_are_errors() {
    let (store, id) = scalar_param(1000.0);
    let mut tape = Tape::new();
    let w = tape.param(&store, id).unwrap();
    assert!(matches!(tape.exp(w), Err(Error::NonFinite(_))));
}

#[test]
fn duplicate_parameter_names_rejected() {
    let (mut store, _) = scalar_param(1.0);
    assert!(store.add("w", Tensor::scalar(2.0)).is_err());
}

#[test]
fn rmsprop_hand_evaluated_steps() {
    let cfg = OptimizerConfig::default();
    let (mut store, id) = scalar_param(0.0);
    store.get_mut(id).grad.data_mut()[0] = 1.0;
    rmsprop_step(&mut store, &cfg, cfg.learning_rate);
    let p = store.get(id);
    assert!((p.cache.data()[0] - 0.1).abs() < 1e-15);
    assert!((p.value.data()[0] + 0.158114).abs() < 1e-6);
    assert_eq!(p.grad.data(), &[0.0]);
    let before = store.get(id).value.data()[0];
    store.get_mut(id).grad.data_mut()[0] = 1.0;
    rmsprop_step(&mut store, &cfg, cfg.learning_rate);
    let p = store.get(id);
    assert!((p.cache.data()[0] - 0.19).abs() < 1e-15);
    assert!((p.value.data()[0] - before + 0.114708).abs() < 1e-6);
}

#[test]
fn learning_rate_schedule() {
    let cfg = OptimizerConfig::default();
    assert_eq!(cfg.lr_at(0), 0.05);
    assert_eq!(cfg.lr_at(4), 0.05);
    assert!((cfg.lr_at(5) - 0.005).abs() < 1e-15);
    assert!((cfg.lr_at(17) - 0.005).abs() < 1e-15);
    assert!((cfg.lr_at(18) - 0.0005).abs() < 1e-15);
    let bad = OptimizerConfig { decay_epochs: vec![5, 5], ..cfg };
    assert!(bad.validate().is_err());
}

#[test]
fn gradcheck_linear_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParameterStore::new();
    let w = store.add("w", rand_tensor(&mut rng, &[3, 2])).unwrap();
    let b = store.add("b", rand_tensor(&mut rng, &[2])).unwrap();
    let x = rand_tensor(&mut rng, &[4, 3]);
    let report = gradcheck(&mut store, 1e-3, 1e-6, |s| {
        let mut t = Tape::new();
        let xi = t.input(x.clone())?;
        let (pw, pb) = (t.param(s, w)?, t.param(s, b)?);
        let y = t.fc(xi, pw, pb)?;
        let loss = t.sum(y)?;
        Ok((t, loss))
    })
    .unwrap();
    assert_eq!(report.pass_fraction(), 1.0);
    assert!(report.max_error() < 1e-6, "{}", report.max_error());
}

#[test]
fn gradcheck_quadratic_error_is_second_order() {
    // loss = w^3: central difference error is h^2 exactly.
    let run = |h: f64| {
        let (mut store, id) = scalar_param(1.0);
        gradcheck(&mut store, h, 1.0, |s| {
            let mut t = Tape::new();
            let w = t.param(s, id)?;
            let sq = t.mul(w, w)?;
            let loss = t.mul(sq, w)?;
            Ok((t, loss))
        })
        .unwrap()
        .max_error()
    };
    let (e1, e2) = (run(1e-2), run(5e-3));
    assert!(e1 > 0.0 && (e1 / e2 - 4.0).abs() < 0.1, "{e1} {e2}");
}

#[test]
fn gradcheck_rejects_nondeterministic_closure() {
    let (mut store, id) = scalar_param(1.0);
    let mut calls = 0.0;
    let r = gradcheck(&mut store, 1e-3, 1e-3, |s| {
        calls += 1.0;
        let mut t = Tape::new();
        let w = t.param(s, id)?;
        let loss = t.scale(w, calls)?;
        Ok((t, loss))
    });
    assert!(matches!(r, Err(Error::Usage(_))));
}

#[test]
fn bce_and_kl_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParameterStore::new();
    let l = store.add("logits", rand_tensor(&mut rng, &[2, 3, 3, 2])).unwrap();
    let mu = store.add("mu", rand_tensor(&mut rng, &[2, 4])).unwrap();
    let lv = store.add("logvar", rand_tensor(&mut rng, &[2, 4])).unwrap();
    let target = Tensor::new(&[2, 3, 3, 2], (0..36).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let eps = rand_tensor(&mut rng, &[2, 4]);
    let report = gradcheck(&mut store, 1e-4, 1e-6, |s| {
        let mut t = Tape::new();
        let pl = t.param(s, l)?;
        let (pm, pv) = (t.param(s, mu)?, t.param(s, lv)?);
        let z = t.reparameterize(pm, pv, eps.clone())?;
        let z = t.relu(z)?;
        let bce = t.bce_with_logits(pl, target.clone())?;
        let kl = t.kl(pm, pv)?;
        let klw = t.scale(kl, 0.7)?;
        let zc = t.concat(&[z, pm])?;
        let zsum = t.sum(zc)?;
        let a = t.add(bce, klw)?;
        let loss = t.add(a, zsum)?;
        Ok((t, loss))
    })
    .unwrap();
    assert_eq!(report.pass_fraction(), 1.0, "{:?}", report.params);
}

#[test]
fn bce_perfect_reconstruction_is_near_zero() {
    let mut t = Tape::<f64>::new();
    let logits = t.input(Tensor::new(&[1, 4], vec![40.0, -40.0, 40.0, -40.0]).unwrap()).unwrap();
    let loss = t.bce_with_logits(logits, Tensor::new(&[1, 4], vec![1.0, 0.0, 1.0, 0.0]).unwrap()).unwrap();
    let v = t.value(loss).data()[0];
    assert!(v > 0.0 && v < 4.0 * 1.1e-6, "{v}");
}

#[test]
fn kl_closed_form_examples() {
    assert_eq!(kl_divergence(&[0.0f64], &[0.0]), 0.0);
    assert!((kl_divergence(&[1.0f64], &[0.0]) - 0.5).abs() < 1e-15);
}

#[test]
fn reparameterize_checks_noise_shape() {
    let mut t = Tape::<f64>::new();
    let mu = t.input(Tensor::zeros(&[1, 3])).unwrap();
    let lv = t.input(Tensor::zeros(&[1, 3])).unwrap();
    assert!(matches!(t.reparameterize(mu, lv, Tensor::zeros(&[1, 2])), Err(Error::Usage(_))));
    let z = t.reparameterize(mu, lv, Tensor::zeros(&[1, 3])).unwrap();
    assert_eq!(t.value(z).data(), &[0.0, 0.0, 0.0]);
}

proptest! {
    #[test]
    fn conv_is_linear_without_bias(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[4, 5, 3]);
        let y = rand_tensor(&mut rng, &[4, 5, 3]);
        let k = rand_tensor(&mut rng, &[3, 3, 3, 2]);
        let zero = Tensor::zeros(&[2]);
        let mix = Tensor::new(&[4, 5, 3], x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
        let lhs = conv2d(&mix, &k, &zero, 1, Padding::Same).unwrap();
        let cx = conv2d(&x, &k, &zero, 1, Padding::Same).unwrap();
        let cy = conv2d(&y, &k, &zero, 1, Padding::Same).unwrap();
        for ((l, p), q) in lhs.data().iter().zip(cx.data()).zip(cy.data()) {
            prop_assert!((l - (a * p + b * q)).abs() < 1e-5);
        }
    }

    #[test]
    fn rmsprop_zero_gradient_is_identity(vals in proptest::collection::vec(-10.0f32..10.0, 1..20), cache in 0.0f32..5.0) {
        let mut store = ParameterStore::new();
        let id = store.add("p", Tensor::from_vec(vals.clone())).unwrap();
        store.get_mut(id).cache.data_mut().iter_mut().for_each(|c| *c = cache);
        rmsprop_step(&mut store, &OptimizerConfig::default(), 0.05);
        prop_assert_eq!(store.get(id).value.data(), vals.as_slice());
    }

    #[test]
    fn forward_and_update_are_bit_deterministic(seed in 0u64..200) {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParameterStore::<f32>::new();
            let k = store.add("k", rand_tensor(&mut rng, &[3, 3, 2, 3]).cast()).unwrap();
            let b = store.add("b", Tensor::zeros(&[3])).unwrap();
            let x: Tensor<f32> = rand_tensor(&mut rng, &[2, 4, 4, 2]).cast();
            let target: Tensor<f32> = Tensor::full(&[2, 4, 4, 3], 0.5);
            let mut t = Tape::new();
            let xi = t.input(x).unwrap();
            let (pk, pb) = (t.param(&store, k).unwrap(), t.param(&store, b).unwrap());
            let y = t.conv2d(xi, pk, pb, 1, Padding::Same).unwrap();
            let loss = t.bce_with_logits(y, target).unwrap();
            t.backward(loss, &mut store).unwrap();
            rmsprop_step(&mut store, &OptimizerConfig::default(), 0.05);
            store
        };
        prop_assert_eq!(run(), run());
    }
}
