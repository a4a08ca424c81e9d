use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::{mlp_predict, Matrix, NetParams};

fn small_config(seed: u64) -> AgentConfig {
    AgentConfig {
        hidden: vec![8, 8],
        batch_size: 16,
        seed,
        final_layer_init: 0.3,
        ..AgentConfig::for_state()
    }
}

fn transition(rng: &mut ChaCha8Rng, done: bool) -> Transition {
    let mut obs = || {
        vec![
            rng.random_range(-0.02..0.02),
            rng.random_range(-0.02..0.02),
            rng.random_range(-0.01..0.05),
            rng.random_range(-5.0..5.0),
        ]
    };
    let (o, n) = (obs(), obs());
    Transition {
        obs: o,
        action: [
            rng.random_range(-0.005..0.005),
            rng.random_range(-0.005..0.005),
            rng.random_range(-0.005..0.005),
        ],
        reward: rng.random_range(-2.0..1.0),
        next_obs: n,
        done,
    }
}

fn random_batch(seed: u64, n: usize, cfg: &AgentConfig) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ts: Vec<Transition> = (0..n).map(|i| transition(&mut rng, i % 5 == 4)).collect();
    let refs: Vec<&Transition> = ts.iter().collect();
    Batch::from_transitions(&refs, &cfg.obs_scale, cfg.a_max).unwrap()
}

/// Sets every weight of the output layer to zero and its bias to `bias`, so
/// the network is constant.
fn make_constant(net: &mut NetParams, bias: &[f64]) {
    let last = net.spec.hidden.len();
    let (w, b) = net.layer_mut(last);
    w.iter_mut().for_each(|v| *v = 0.0);
    b.copy_from_slice(bias);
}

fn simple(i: usize) -> Transition {
    Transition {
        obs: vec![i as f64; 4],
        action: [0.0; 3],
        reward: i as f64,
        next_obs: vec![i as f64; 4],
        done: false,
    }
}

#[test]
fn single_item_buffer_repeats() {
    let mut b = ReplayBuffer::new(4).unwrap();
    b.push(simple(7));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = buffer_sample(&b, 32, &mut rng).unwrap();
    assert_eq!(s.len(), 32);
    assert!(s.iter().all(|t| t.reward == 7.0));
}

#[test]
fn ring_evicts_oldest() {
    let mut b = ReplayBuffer::new(3).unwrap();
    for i in 1..=4 {
        b.push(simple(i));
    }
    assert_eq!(b.len(), 3);
    let kept: Vec<f64> = b.iter().map(|t| t.reward).collect();
    assert_eq!(kept, vec![2.0, 3.0, 4.0]);
}

#[test]
fn empty_buffer_errors() {
    let b = ReplayBuffer::new(3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert!(matches!(b.sample(4, &mut rng), Err(crate::Error::EmptyBuffer)));
    assert!(ReplayBuffer::new(0).is_err());
}

#[test]
fn sampling_is_uniform() {
    let mut b = ReplayBuffer::new(10).unwrap();
    for i in 0..10 {
        b.push(simple(i));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut counts = [0usize; 10];
    for t in b.sample(100_000, &mut rng).unwrap() {
        counts[t.reward as usize] += 1;
    }
    for c in counts {
        let f = c as f64 / 100_000.0;
        assert!((0.09..=0.11).contains(&f), "{counts:?}");
    }
}

#[test]
fn terminal_target_is_reward() {
    let cfg = small_config(3);
    let mut td3 = Td3Agent::new(cfg.clone()).unwrap();
    let mut sac = SacAgent::new(cfg.clone()).unwrap();
    let mut b = random_batch(4, 6, &cfg);
    b.rewards = vec![1.0; 6];
    b.dones = vec![1.0; 6];
    assert!(td3.td_targets(&b).unwrap().iter().all(|&y| y == 1.0));
    assert!(sac.td_targets(&b).unwrap().iter().all(|&y| y == 1.0));
}

#[test]
fn td3_bellman_backup_hand_value() {
    let cfg = small_config(5);
    let mut td3 = Td3Agent::new(cfg.clone()).unwrap();
    make_constant(&mut td3.critics.q1_target, &[2.0]);
    make_constant(&mut td3.critics.q2_target, &[3.5]);
    let mut b = random_batch(6, 4, &cfg);
    b.rewards = vec![1.0; 4];
    b.dones = vec![0.0; 4];
    let y = td3.targets_with_noise(&b, &Matrix::zeros(4, 3)).unwrap().y;
    for v in y {
        assert!((v - 2.98).abs() < 1e-12, "{v}");
    }
}

#[test]
fn sac_target_limit_matches_deterministic_backup() {
    let mut cfg = small_config(7);
    cfg.sac.init_temperature = 1e-8;
    let mut sac = SacAgent::new(cfg.clone()).unwrap();
    // Push every log-std output far below the clamp.
    let last = sac.actor.spec.hidden.len();
    {
        let (w, b) = sac.actor.layer_mut(last);
        let fan_in = w.len() / 6;
        for r in 3..6 {
            w[r * fan_in..(r + 1) * fan_in].iter_mut().for_each(|v| *v = 0.0);
            b[r] = -100.0;
        }
    }
    let b = random_batch(8, 10, &cfg);
    let y = sac.td_targets(&b).unwrap();
    let out = mlp_predict(&sac.actor, &b.next_obs).unwrap();
    let mean_action = Matrix::from_vec(
        10,
        3,
        (0..10)
            .flat_map(|r| (0..3).map(move |i| (r, i)))
            .map(|(r, i)| out.get(r, i).tanh())
            .collect(),
    )
    .unwrap();
    let x = b.next_obs.hcat(&mean_action).unwrap();
    let q1 = mlp_predict(&sac.critics.q1_target, &x).unwrap();
    let q2 = mlp_predict(&sac.critics.q2_target, &x).unwrap();
    for r in 0..10 {
        let expect = b.rewards[r] + 0.99 * (1.0 - b.dones[r]) * q1.get(r, 0).min(q2.get(r, 0));
        assert!((y[r] - expect).abs() < 1e-5, "{} vs {}", y[r], expect);
    }
}

#[test]
fn targets_use_twin_minimum() {
    for seed in 0..5 {
        let cfg = small_config(seed);
        let td3 = Td3Agent::new(cfg.clone()).unwrap();
        let sac = SacAgent::new(cfg.clone()).unwrap();
        let b = random_batch(100 + seed, 32, &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Matrix::from_vec(32, 3, (0..96).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap();
        let t = td3.targets_with_noise(&b, &noise).unwrap();
        let s = sac.targets_with_noise(&b, &noise).unwrap();
        for i in 0..32 {
            let k = 0.99 * (1.0 - b.dones[i]);
            assert!(t.y[i] <= b.rewards[i] + k * t.q1_next[i]);
            assert!(t.y[i] <= b.rewards[i] + k * t.q2_next[i]);
            let ent = sac.temperature() * s.next_log_prob[i];
            assert!(s.y[i] <= b.rewards[i] + k * (s.q1_next[i] - ent));
            assert!(s.y[i] <= b.rewards[i] + k * (s.q2_next[i] - ent));
        }
    }
}

#[test]
fn critic_fixed_point_leaves_params() {
    let cfg = small_config(9);
    let mut td3 = Td3Agent::new(cfg.clone()).unwrap();
    make_constant(&mut td3.critics.q1, &[0.7]);
    make_constant(&mut td3.critics.q2, &[0.7]);
    let mut b = random_batch(10, 8, &cfg);
    b.rewards = vec![0.7; 8];
    b.dones = vec![1.0; 8];
    let before = td3.critics.clone();
    let (l1, l2) = td3.critic_update(&b).unwrap();
    assert_eq!((l1, l2), (0.0, 0.0));
    assert_eq!(td3.critics.q1.values, before.q1.values);
    assert_eq!(td3.critics.q2.values, before.q2.values);
}

#[test]
fn critic_step_moves_toward_target_and_reports_mse() {
    let cfg = small_config(11);
    let mut td3 = Td3Agent::new(cfg.clone()).unwrap();
    let mut b = random_batch(12, 1, &cfg);
    b.dones = vec![1.0];
    b.rewards = vec![0.8];
    let x = b.obs.hcat(&b.actions).unwrap();
    let q_before = mlp_predict(&td3.critics.q1, &x).unwrap().get(0, 0);
    let (l1, _) = td3.critic_update(&b).unwrap();
    assert!((l1 - (q_before - 0.8).powi(2)).abs() < 1e-15);
    let q_after = mlp_predict(&td3.critics.q1, &x).unwrap().get(0, 0);
    assert!((q_after - 0.8).abs() < (q_before - 0.8).abs());

    let b = random_batch(13, 16, &cfg);
    let y = td3.clone().td_targets(&b).unwrap();
    let x = b.obs.hcat(&b.actions).unwrap();
    let q1 = mlp_predict(&td3.critics.q1, &x).unwrap();
    let q2 = mlp_predict(&td3.critics.q2, &x).unwrap();
    let mse = |q: &Matrix| (0..16).map(|i| (q.get(i, 0) - y[i]).powi(2)).sum::<f64>() / 16.0;
    let (l1, l2) = td3.critic_update(&b).unwrap();
    assert!((l1 - mse(&q1)).abs() < 1e-12);
    assert!((l2 - mse(&q2)).abs() < 1e-12);
}

#[test]
fn td3_actor_flat_objective_has_zero_gradient() {
    let cfg = small_config(14);
    let mut td3 = Td3Agent::new(cfg.clone()).unwrap();
    make_constant(&mut td3.critics.q1, &[1.3]);
    let b = random_batch(15, 16, &cfg);
    let step = Td3Agent::actor_loss_and_grad(&td3.actor, &td3.critics, &b, None).unwrap();
    assert!(step.grad.iter().all(|&g| g == 0.0));
    assert!((step.loss.total + 1.3).abs() < 1e-12);
}

#[test]
fn policy_delay_schedules_actor_steps() {
    let cfg = small_config(16);
    let mut td3 = Td3Agent::new(cfg.clone()).unwrap();
    let b = random_batch(17, 16, &cfg);
    for call in 1..=6 {
        let before = td3.actor.values.clone();
        let r = td3.actor_update(&b).unwrap();
        let changed = td3.actor.values != before;
        assert_eq!(changed, call % 2 == 0, "call {call}");
        assert_eq!(r.is_some(), call % 2 == 0);
    }
}

fn fd_check<F: Fn(&NetParams) -> f64>(params: &NetParams, grad: &[f64], f: F) {
    let h = 1e-5;
    let mut worst = 0.0f64;
    for idx in (0..params.len()).step_by(3) {
        let mut p = params.clone();
        p.values[idx] += h;
        let up = f(&p);
        p.values[idx] -= 2.0 * h;
        let down = f(&p);
        let fd = (up - down) / (2.0 * h);
        let err = (fd - grad[idx]).abs() / (fd.abs().max(grad[idx].abs()).max(1e-6));
        worst = worst.max(err);
    }
    assert!(worst < 1e-4, "relative error {worst}");
}

#[test]
fn td3_actor_gradient_matches_finite_differences() {
    let cfg = small_config(18);
    let td3 = Td3Agent::new(cfg.clone()).unwrap();
    let b = random_batch(19, 8, &cfg);
    let demo = random_batch(20, 5, &cfg);
    let step = Td3Agent::actor_loss_and_grad(&td3.actor, &td3.critics, &b, Some((&demo, 0.7))).unwrap();
    fd_check(&td3.actor, &step.grad, |p| {
        Td3Agent::actor_loss_and_grad(p, &td3.critics, &b, Some((&demo, 0.7)))
            .unwrap()
            .loss
            .total
    });
}

#[test]
fn sac_actor_gradient_matches_finite_differences() {
    let cfg = small_config(21);
    let sac = SacAgent::new(cfg.clone()).unwrap();
    let b = random_batch(22, 8, &cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let eps = Matrix::from_vec(8, 3, (0..24).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap();
    let step = SacAgent::actor_loss_and_grad(&sac.actor, &sac.critics, &b.obs, &eps, 0.3).unwrap();
    fd_check(&sac.actor, &step.grad, |p| {
        SacAgent::actor_loss_and_grad(p, &sac.critics, &b.obs, &eps, 0.3)
            .unwrap()
            .loss
    });
}

#[test]
fn squashed_log_prob_matches_direct_formula() {
    for &(u, ls, e) in &[(0.3, -1.0, 0.5), (-2.0, 0.5, -1.2), (4.0, -3.0, 0.1)] {
        let sigma: f64 = f64::exp(ls);
        let gauss = -0.5 * e * e - ls - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let direct = gauss - (1.0 - f64::tanh(u).powi(2)).ln();
        let _ = sigma;
        assert!((squashed_log_prob(u, ls, e) - direct).abs() < 1e-9);
    }
}

#[test]
fn sac_constant_critics_widen_the_policy() {
    let mut cfg = small_config(24);
    cfg.sac.learn_temperature = false;
    let mut sac = SacAgent::new(cfg.clone()).unwrap();
    make_constant(&mut sac.critics.q1, &[0.0]);
    make_constant(&mut sac.critics.q2, &[0.0]);
    let last = sac.actor.spec.hidden.len();
    sac.actor.layer_mut(last).1[3..6].iter_mut().for_each(|v| *v = -3.0);
    let b = random_batch(25, 32, &cfg);
    let mean_log_std = |a: &SacAgent| {
        let out = mlp_predict(&a.actor, &b.obs).unwrap();
        (0..32)
            .flat_map(|r| (3..6).map(move |i| (r, i)))
            .map(|(r, i)| out.get(r, i))
            .sum::<f64>()
            / 96.0
    };
    let mut prev = mean_log_std(&sac);
    let start = prev;
    for k in 0..100 {
        sac.actor_update(&b).unwrap();
        if k % 10 == 9 {
            let now = mean_log_std(&sac);
            assert!(now > prev, "log-std fell at update {k}: {prev} -> {now}");
            prev = now;
        }
    }
    assert!(prev > start);
}

#[test]
fn td3_eval_is_deterministic_and_all_modes_bounded() {
    let cfg = AgentConfig {
        final_layer_init: 3.0,
        ..small_config(26)
    };
    let mut td3 = Td3Agent::new(cfg.clone()).unwrap();
    let mut sac = SacAgent::new(cfg.clone()).unwrap();
    let obs = vec![0.01, -0.003, 0.02, 1.5];
    assert_eq!(
        td3.select_action(&obs, ActMode::Eval).unwrap(),
        td3.select_action(&obs, ActMode::Eval).unwrap()
    );
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    for _ in 0..10_000 {
        let o: Vec<f64> = (0..4).map(|_| rng.random_range(-10.0..10.0)).collect();
        for mode in [ActMode::Train, ActMode::Eval] {
            for a in [
                td3.select_action(&o, mode).unwrap(),
                sac.select_action(&o, mode).unwrap(),
            ] {
                assert!(a.delta().iter().all(|v| v.abs() <= cfg.a_max));
            }
        }
    }
}

#[test]
fn sac_sample_spread_matches_predicted_std() {
    let cfg = small_config(28);
    let mut sac = SacAgent::new(cfg.clone()).unwrap();
    let last = sac.actor.spec.hidden.len();
    make_constant(&mut sac.actor, &[0.0, 0.0, 0.0, -3.0, -2.5, -3.5]);
    let _ = last;
    let obs = vec![0.0, 0.0, 0.01, 0.0];
    let (_, sigma) = sac.distribution(&obs).unwrap();
    let n = 10_000;
    let samples: Vec<[f64; 3]> = (0..n)
        .map(|_| sac.select_action(&obs, ActMode::Train).unwrap().delta())
        .collect();
    for i in 0..3 {
        let xs: Vec<f64> = samples.iter().map(|s| s[i] / cfg.a_max).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((sd / sigma[i] - 1.0).abs() < 0.1, "axis {i}: {sd} vs {}", sigma[i]);
    }
}

#[test]
fn zero_bc_weight_is_plain_update() {
    let cfg = small_config(29);
    let b = random_batch(30, 16, &cfg);
    let demo = random_batch(31, 16, &cfg);
    let mut plain = Td3Agent::new(cfg.clone()).unwrap();
    let mut bc = plain.clone();
    for _ in 0..4 {
        plain.actor_update(&b).unwrap();
        bc.bc_augmented_actor_update(&b, &demo, 0.0).unwrap();
    }
    assert_eq!(plain.actor.values, bc.actor.values);
    assert_eq!(plain.actor_target.values, bc.actor_target.values);
}

#[test]
fn bc_loss_decomposes() {
    let cfg = small_config(32);
    let mut td3 = Td3Agent::new(cfg.clone()).unwrap();
    td3.config.td3.policy_delay = 1;
    let b = random_batch(33, 16, &cfg);
    let demo = random_batch(34, 10, &cfg);
    let actor = td3.actor.clone();
    let a = mlp_predict(&actor, &b.obs).unwrap();
    let q = mlp_predict(&td3.critics.q1, &b.obs.hcat(&a).unwrap()).unwrap();
    let rl = -q.as_slice().iter().sum::<f64>() / 16.0;
    let pd = mlp_predict(&actor, &demo.obs).unwrap();
    let bcv = pd
        .as_slice()
        .iter()
        .zip(demo.actions.as_slice())
        .map(|(p, u)| (p - u).powi(2))
        .sum::<f64>()
        / 10.0;
    let loss = td3.bc_augmented_actor_update(&b, &demo, 2.5).unwrap().unwrap();
    assert!((loss.rl_term - rl).abs() < 1e-12);
    assert!((loss.bc_term - bcv).abs() < 1e-12);
    assert!((loss.total - (rl + 2.5 * bcv)).abs() < 1e-12);
}

#[test]
fn large_bc_weight_fits_demonstrations() {
    let mut cfg = small_config(35);
    cfg.hidden = vec![32, 32];
    cfg.lr = 1e-3;
    cfg.td3.policy_delay = 1;
    let mut td3 = Td3Agent::new(cfg.clone()).unwrap();
    make_constant(&mut td3.critics.q1, &[0.0]);
    let b = random_batch(36, 8, &cfg);
    let demo = random_batch(37, 8, &cfg);
    for _ in 0..2000 {
        td3.bc_augmented_actor_update(&b, &demo, 1e6).unwrap();
    }
    let pd = mlp_predict(&td3.actor, &demo.obs).unwrap();
    let mse = pd
        .as_slice()
        .iter()
        .zip(demo.actions.as_slice())
        .map(|(p, u)| (p - u).powi(2))
        .sum::<f64>()
        / 24.0;
    assert!(mse < 1e-3, "mse {mse}");
}

#[test]
fn empty_demo_store_errors() {
    let cfg = small_config(38);
    let mut agent = Agent::new(Algo::Td3, cfg.clone()).unwrap();
    let mut buf = ReplayBuffer::new(10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    buf.push(transition(&mut rng, false));
    let demos = ReplayBuffer::new(10).unwrap();
    assert!(matches!(
        agent.update(&buf, Some((&demos, 1.0))),
        Err(crate::Error::EmptyDemoStore)
    ));
}

#[test]
fn targets_are_exact_polyak_averages() {
    for algo in [Algo::Sac, Algo::Td3] {
        let mut cfg = small_config(39);
        cfg.td3.policy_delay = 1;
        let mut agent = Agent::new(algo, cfg.clone()).unwrap();
        let b = random_batch(40, 16, &cfg);
        for _ in 0..3 {
            let prev: Vec<NetParams> = agent.networks().iter().map(|(_, p)| (*p).clone()).collect();
            agent.update_with(&b, None).unwrap();
            let now: Vec<(&str, NetParams)> = agent.networks().iter().map(|(n, p)| (*n, (*p).clone())).collect();
            for (i, (name, net)) in now.iter().enumerate() {
                if let Some(src) = name.strip_suffix("_target") {
                    let online = &now.iter().find(|(n, _)| *n == src).unwrap().1;
                    for k in 0..net.len() {
                        let expect = 0.005 * online.values[k] + (1.0 - 0.005) * prev[i].values[k];
                        assert_eq!(net.values[k], expect);
                    }
                }
            }
        }
    }
}

#[test]
fn equal_seeds_give_identical_agents() {
    for algo in [Algo::Sac, Algo::Td3] {
        let cfg = small_config(41);
        let mut buf = ReplayBuffer::new(100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            buf.push(transition(&mut rng, false));
        }
        let mut a = Agent::new(algo, cfg.clone()).unwrap();
        let mut b = Agent::new(algo, cfg.clone()).unwrap();
        for _ in 0..10 {
            let sa = a.update(&buf, None).unwrap();
            let sb = b.update(&buf, None).unwrap();
            assert_eq!(sa, sb);
        }
        for ((_, x), (_, y)) in a.networks().iter().zip(b.networks()) {
            assert_eq!(x.values, y.values);
        }
    }
}

#[test]
fn sac_temperature_stays_positive() {
    let mut cfg = small_config(43);
    cfg.lr = 0.05;
    let mut sac = SacAgent::new(cfg.clone()).unwrap();
    let b = random_batch(44, 16, &cfg);
    for _ in 0..200 {
        sac.critic_update(&b).unwrap();
        sac.actor_update(&b).unwrap();
        assert!(sac.temperature() > 0.0);
    }
}
