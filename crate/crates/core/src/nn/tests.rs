use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

/// Independent forward pass: plain nested loops, no shared helpers.
fn reference_forward(spec: &PolicySpec, values: &[f64], input: &[f64]) -> Vec<f64> {
    let mut x = input.to_vec();
    let mut off = 0;
    let dims = spec.layer_dims();
    for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
        let mut y = vec![0.0; fan_out];
        for o in 0..fan_out {
            let mut s = values[off + fan_in * fan_out + o];
            for i in 0..fan_in {
                s += values[off + o * fan_in + i] * x[i];
            }
            y[o] = s;
        }
        off += fan_in * fan_out + fan_out;
        if l + 1 < dims.len() {
            for v in &mut y {
                *v = v.tanh();
            }
        } else {
            match spec.output {
                OutputActivation::Linear => {}
                OutputActivation::ScaledTanh { scale } => {
                    for v in &mut y {
                        *v = scale * v.tanh();
                    }
                }
                OutputActivation::MeanLogStd {
                    log_std_min,
                    log_std_max,
                } => {
                    let half = fan_out / 2;
                    for v in &mut y[half..] {
                        *v = v.clamp(log_std_min, log_std_max);
                    }
                }
            }
        }
        x = y;
    }
    x
}

fn random_params(spec: PolicySpec, rng: &mut ChaCha8Rng) -> NetParams {
    let n = spec.param_count();
    let values = (0..n).map(|_| rng.random_range(-0.8..0.8)).collect();
    NetParams::from_values(spec, values).unwrap()
}

/// Max relative error between reverse-mode and central differences of
/// `w · f(θ)` for a fixed random weighting `w`.
fn grad_check_error(params: &NetParams, input: &[f64], weights: &[f64]) -> f64 {
    let (_, tape) = mlp_forward(params, input).unwrap();
    let analytic = tape.backward(weights).unwrap();
    let h = 1e-5;
    let objective = |v: &[f64]| -> f64 {
        reference_forward(&params.spec, v, input)
            .iter()
            .zip(weights)
            .map(|(y, w)| y * w)
            .sum()
    };
    let mut worst: f64 = 0.0;
    let mut theta = params.values.clone();
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + h;
        let up = objective(&theta);
        theta[i] = orig - h;
        let down = objective(&theta);
        theta[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

#[test]
fn zero_params_give_zero_output() {
    let spec = PolicySpec::new(5, &[8, 8], 3, OutputActivation::Linear);
    let p = NetParams::zeros(spec).unwrap();
    let (y, _) = mlp_forward(&p, &[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap();
    assert_eq!(y, vec![0.0; 3]);
}

#[test]
fn identity_linear_layer() {
    let spec = PolicySpec::new(3, &[], 3, OutputActivation::Linear);
    let mut p = NetParams::zeros(spec).unwrap();
    {
        let (w, _) = p.layer_mut(0);
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
    }
    let x = [0.25, -1.5, 7.0];
    let (y, _) = mlp_forward(&p, &x).unwrap();
    assert_eq!(y, x.to_vec());
}

#[test]
fn forward_matches_reference_implementation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let specs = [
        PolicySpec::new(4, &[16, 16], 1, OutputActivation::Linear),
        PolicySpec::new(7, &[9], 3, OutputActivation::ScaledTanh { scale: 0.005 }),
        PolicySpec::new(
            4,
            &[12, 6, 5],
            6,
            OutputActivation::MeanLogStd {
                log_std_min: -20.0,
                log_std_max: 2.0,
            },
        ),
    ];
    for spec in specs {
        let p = random_params(spec.clone(), &mut rng);
        for _ in 0..10 {
            let x: Vec<f64> = (0..spec.input_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (y, _) = mlp_forward(&p, &x).unwrap();
            let r = reference_forward(&spec, &p.values, &x);
            for (a, b) in y.iter().zip(&r) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn batch_forward_rows_match_single_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spec = PolicySpec::new(6, &[10, 10], 2, OutputActivation::Linear);
    let p = random_params(spec, &mut rng);
    let rows: Vec<Vec<f64>> = (0..7)
        .map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let batch = mlp_predict(&p, &Matrix::from_rows(&rows).unwrap()).unwrap();
    for (i, r) in rows.iter().enumerate() {
        let (y, _) = mlp_forward(&p, r).unwrap();
        for (a, b) in batch.row(i).iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn linear_layer_gradient_is_outer_product() {
    let spec = PolicySpec::new(3, &[], 2, OutputActivation::Linear);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = random_params(spec, &mut rng);
    let x = [0.3, -0.7, 2.0];
    let g = [1.5, -0.5];
    let (_, tape) = mlp_forward(&p, &x).unwrap();
    let grad = tape.backward(&g).unwrap();
    for o in 0..2 {
        for i in 0..3 {
            assert_eq!(grad[o * 3 + i], g[o] * x[i]);
        }
    }
    assert_eq!(&grad[6..], &g);
}

#[test]
fn constant_head_has_zero_gradient() {
    // Log-std pinned at the clamp: that half of the output is constant.
    let spec = PolicySpec::new(
        2,
        &[4],
        2,
        OutputActivation::MeanLogStd {
            log_std_min: -1.0,
            log_std_max: 1.0,
        },
    );
    let mut p = NetParams::zeros(spec).unwrap();
    {
        let (_, b) = p.layer_mut(1);
        b[1] = 50.0;
    }
    let (y, tape) = mlp_forward(&p, &[0.2, 0.4]).unwrap();
    assert_eq!(y[1], 1.0);
    let grad = tape.backward(&[0.0, 1.0]).unwrap();
    assert!(grad.iter().all(|&g| g == 0.0));
}

#[test]
fn gradient_check_fixed_networks() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for output in [
        OutputActivation::Linear,
        OutputActivation::ScaledTanh { scale: 2.0 },
        OutputActivation::MeanLogStd {
            log_std_min: -20.0,
            log_std_max: 2.0,
        },
    ] {
        let spec = PolicySpec::new(5, &[7, 6], 4, output);
        let p = random_params(spec, &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let err = grad_check_error(&p, &x, &w);
        assert!(err < 1e-4, "relative error {err}");
    }
}

#[test]
fn input_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let spec = PolicySpec::new(6, &[8, 8], 1, OutputActivation::Linear);
    let p = random_params(spec.clone(), &mut rng);
    let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, tape) = mlp_forward_batch(&p, Matrix::from_vec(1, 6, x.clone()).unwrap()).unwrap();
    let g = tape
        .backward_batch(&Matrix::from_vec(1, 1, vec![1.0]).unwrap(), InputGrad::Columns(3, 6))
        .unwrap();
    let dx = g.input.unwrap();
    assert_eq!(dx.cols(), 3);
    for c in 3..6 {
        let mut up = x.clone();
        up[c] += 1e-6;
        let mut dn = x.clone();
        dn[c] -= 1e-6;
        let num = (reference_forward(&spec, &p.values, &up)[0] - reference_forward(&spec, &p.values, &dn)[0]) / 2e-6;
        assert!((dx.get(0, c - 3) - num).abs() < 1e-7);
    }
}

#[test]
fn input_dimension_mismatch_is_rejected() {
    let p = NetParams::zeros(PolicySpec::new(3, &[4], 1, OutputActivation::Linear)).unwrap();
    assert!(mlp_forward(&p, &[1.0, 2.0]).is_err());
}

#[test]
fn adam_zero_gradient_leaves_params() {
    let mut params = vec![0.5, -1.0, 2.0];
    let before = params.clone();
    let mut m = AdamMoments::new(3);
    m.m = vec![0.1, 0.0, -0.2];
    adam_step(
        &mut params,
        &[0.0; 3],
        &mut AdamMoments::new(3),
        1e-3,
        (0.9, 0.999),
        1e-8,
    )
    .unwrap();
    assert_eq!(params, before);
    // Existing moments decay by beta1 under a zero gradient.
    let mut p2 = before.clone();
    adam_step(&mut p2, &[0.0; 3], &mut m, 1e-3, (0.9, 0.999), 1e-8).unwrap();
    assert!((m.m[0] - 0.09).abs() < 1e-15);
    assert!((m.m[2] + 0.18).abs() < 1e-15);
}

#[test]
fn adam_first_step_has_magnitude_lr() {
    // t=1: m̂ = g, v̂ = g², so Δ = −lr·g/(|g| + eps).
    let g = [0.3, -4.0, 1e-3];
    let lr = 1e-2;
    let eps = 1e-8;
    let mut p = vec![0.0; 3];
    let mut m = AdamMoments::new(3);
    adam_step(&mut p, &g, &mut m, lr, (0.9, 0.999), eps).unwrap();
    for (pi, gi) in p.iter().zip(g) {
        let expected = -lr * gi / (gi.abs() + eps);
        assert!((pi - expected).abs() < 1e-15, "{pi} vs {expected}");
        assert!((pi.abs() - lr).abs() < 1e-6 * lr.max(1.0) + lr * 1e-4);
    }
}

#[test]
fn adam_rejects_non_finite_gradient() {
    let mut p = vec![1.0, 2.0];
    let mut m = AdamMoments::new(2);
    let err = adam_step(&mut p, &[f64::NAN, 0.0], &mut m, 1e-3, (0.9, 0.999), 1e-8);
    assert!(err.is_err());
    assert_eq!(p, vec![1.0, 2.0]);
    assert_eq!(m.t, 0);
}

#[test]
fn identical_adam_runs_are_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grads: Vec<Vec<f64>> = (0..20)
        .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let run = || {
        let mut opt = Adam::new(5, AdamConfig::default());
        let mut p = vec![0.1; 5];
        for g in &grads {
            opt.step(&mut p, g).unwrap();
        }
        p
    };
    let a = run();
    let b = run();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = random_params(
        PolicySpec::new(4, &[5], 2, OutputActivation::ScaledTanh { scale: 0.005 }),
        &mut rng,
    );
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &p, 42).unwrap();
    let (q, step) = read_checkpoint(&buf[..]).unwrap();
    assert_eq!(step, 42);
    assert_eq!(q.spec, p.spec);
    assert!(q.values.iter().zip(&p.values).all(|(a, b)| a.to_bits() == b.to_bits()));
    buf.truncate(buf.len() - 3);
    assert!(read_checkpoint(&buf[..]).is_err());
}

fn arb_spec() -> impl Strategy<Value = PolicySpec> {
    (1usize..6, prop::collection::vec(1usize..=64, 1..=3), 1usize..4, 0u8..3).prop_map(|(input, hidden, out, kind)| {
        let output = match kind {
            0 => OutputActivation::Linear,
            1 => OutputActivation::ScaledTanh { scale: 0.5 },
            _ => OutputActivation::MeanLogStd {
                log_std_min: -20.0,
                log_std_max: 2.0,
            },
        };
        let out = if kind == 2 { out * 2 } else { out };
        PolicySpec::new(input, &hidden, out, output)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn gradient_check_random_specs(spec in arb_spec(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_params(spec.clone(), &mut rng);
        let x: Vec<f64> = (0..spec.input_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..spec.output_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        prop_assert!(grad_check_error(&p, &x, &w) < 1e-4);
    }

    #[test]
    fn squashed_outputs_stay_in_bounds(seed in any::<u64>(), scale in 1e-3f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = PolicySpec::new(3, &[8], 3, OutputActivation::ScaledTanh { scale });
        let values = (0..spec.param_count()).map(|_| rng.random_range(-30.0..30.0)).collect();
        let p = NetParams::from_values(spec, values).unwrap();
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-100.0..100.0)).collect();
        let (y, _) = mlp_forward(&p, &x).unwrap();
        prop_assert!(y.iter().all(|v| v.abs() <= scale));
    }
}
