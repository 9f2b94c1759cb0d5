use hcmarl_autodiff::{MlpSpec, Tape, Tensor};
use hcmarl_core::consensus::ConsensusCategory;
use hcmarl_core::envs::{EnvConfig, Task, TaskRegistry, WorldState};
use hcmarl_core::hierarchy::{LayerSpec, ObservationHistory};
use hcmarl_core::marl::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `A_t = sum_l (gamma * lambda)^l * delta_{t+l}` within one terminated
/// episode, written as a forward sum rather than a recursion.
fn gae_forward_sum(r: &[f64], v: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    let delta: Vec<f64> = (0..n)
        .map(|t| {
            let next = if t + 1 < n { v[t + 1] } else { 0.0 };
            r[t] + gamma * next - v[t]
        })
        .collect();
    (0..n)
        .map(|t| {
            (t..n)
                .map(|k| (gamma * lambda).powi((k - t) as i32) * delta[k])
                .sum()
        })
        .collect()
}

fn terminal(n: usize) -> (Vec<bool>, Vec<bool>, Vec<f64>) {
    let mut d = vec![false; n];
    d[n - 1] = true;
    (d, vec![false; n], vec![0.0; n])
}

#[test]
fn three_step_advantages() {
    let r = [1.0, 0.0, 1.0];
    let v = [0.5, 0.5, 0.5];
    let (d, tr, b) = terminal(3);
    let (ret, adv) = gae(&r, &v, &d, &tr, &b, 0.9, 0.95).unwrap();
    // by hand: deltas are (0.95, -0.05, 0.5), gamma * lambda = 0.855
    let want = [
        0.95 + 0.855 * (-0.05) + 0.855f64.powi(2) * 0.5,
        -0.05 + 0.855 * 0.5,
        0.5,
    ];
    for t in 0..3 {
        assert!((adv[t] - want[t]).abs() < 1e-12);
        assert!((ret[t] - (want[t] + 0.5)).abs() < 1e-12);
    }
}

#[test]
fn advantages_match_forward_sum_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..50 {
        let n = rng.random_range(3..=10);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gamma = rng.random_range(0.5..1.0);
        let lambda = rng.random_range(0.0..1.0);
        let (d, tr, b) = terminal(n);
        let (ret, adv) = gae(&r, &v, &d, &tr, &b, gamma, lambda).unwrap();
        let want = gae_forward_sum(&r, &v, gamma, lambda);
        for t in 0..n {
            assert!((adv[t] - want[t]).abs() <= 1e-12);
            assert!((ret[t] - want[t] - v[t]).abs() <= 1e-12);
        }
    }
}

#[test]
fn episodes_do_not_leak_into_each_other() {
    let r = [1.0, 2.0, 3.0, 4.0, 5.0];
    let v = [0.1, 0.2, 0.3, 0.4, 0.5];
    let d = [false, true, false, false, true];
    let (_, adv) = gae(&r, &v, &d, &[false; 5], &[0.0; 5], 0.9, 0.8).unwrap();
    let a = gae_forward_sum(&r[..2], &v[..2], 0.9, 0.8);
    let b = gae_forward_sum(&r[2..], &v[2..], 0.9, 0.8);
    let want: Vec<f64> = a.into_iter().chain(b).collect();
    for (x, y) in adv.iter().zip(want) {
        assert!((x - y).abs() < 1e-12);
    }
}

fn small_config(consensus: bool) -> TrainConfig {
    TrainConfig {
        consensus,
        hidden: vec![8],
        rollout_length: 40,
        minibatch: 32,
        epochs: 2,
        consensus_minibatch: 16,
        ..TrainConfig::default()
    }
}

fn small_spec() -> HierarchySpec {
    let mut s = HierarchySpec {
        layers: vec![LayerSpec::new(1, 1).unwrap(), LayerSpec::new(3, 2).unwrap()],
        embed_dim: 4,
        heads: 2,
        ..HierarchySpec::default()
    };
    s.consensus.categories = 4;
    s.consensus.hidden = vec![8];
    s
}

fn env(step_limit: usize) -> EnvConfig {
    EnvConfig {
        step_limit,
        ..EnvConfig::default()
    }
}

fn trainer(task: &str, env: EnvConfig, cfg: TrainConfig, seed: u64) -> Trainer {
    Trainer::new(
        task,
        env,
        cfg,
        &small_spec(),
        seed,
        &TaskRegistry::with_builtins(),
        &ObjectiveRegistry::with_builtins(),
    )
    .unwrap()
}

/// A buffer of `steps` transitions of a fixed world with chosen rewards.
fn hand_buffer(tr: &Trainer, rewards: &[f64], consensus: bool) -> RolloutBuffer {
    let task = tr.task().clone();
    let n = task.agents();
    let world = task.reset(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let d = tr.state.hierarchy.config.embed_dim;
    let layers = tr.state.hierarchy.config.layers.len();
    let mut buf = RolloutBuffer::new(n);
    for (t, &r) in rewards.iter().enumerate() {
        let cats = if consensus {
            vec![ConsensusCategory(t % 2); layers]
        } else {
            vec![]
        };
        buf.push(StepData {
            episode: 0,
            timestep: t,
            state: task.global_state(&world),
            next_state: task.global_state(&world),
            reward: r,
            value: 0.0,
            done: t + 1 == rewards.len(),
            truncated: false,
            bootstrap: 0.0,
            obs: (0..n).map(|i| task.observe(&world, i)).collect(),
            c_att: vec![vec![0.0; d]; n],
            categories: vec![cats.clone(); n],
            next_categories: vec![cats; n],
            next_c_att: vec![vec![0.0; d]; n],
            actions: (0..n).map(|i| i % 5).collect(),
            log_probs: vec![(0.2f64).ln(); n],
            layer_inputs: vec![vec![]; n],
        })
        .unwrap();
    }
    buf
}

fn constant_critic(tr: &mut Trainer, value: f64) {
    let spec = tr.state.critic.spec.clone();
    for (name, t) in tr.state.critic.params.iter_mut() {
        let last_bias = *name == MlpSpec::bias_name(spec.layers() - 1);
        t.data_mut()
            .iter_mut()
            .for_each(|x| *x = if last_bias { value } else { 0.0 });
    }
}

#[test]
fn critic_at_its_targets_stays_put() {
    let mut cfg = small_config(false);
    cfg.normalize_advantages = false;
    let mut tr = trainer("rendezvous", env(50), cfg.clone(), 0);
    constant_critic(&mut tr, 0.0);
    let mut buf = hand_buffer(&tr, &[0.0; 6], false);
    compute_returns_advantages(&mut buf, &cfg).unwrap();
    let before = tr.state.critic.params.flat_values();
    let loss = tr.critic_update(&mut buf).unwrap();
    assert_eq!(loss, 0.0);
    assert_eq!(tr.state.critic.params.flat_values(), before);
}

#[test]
fn single_transition_critic_loss_is_scalar_arithmetic() {
    let mut cfg = small_config(false);
    cfg.hidden = vec![];
    let mut tr = trainer("rendezvous", env(50), cfg.clone(), 0);
    let mut buf = hand_buffer(&tr, &[0.7], false);
    compute_returns_advantages(&mut buf, &cfg).unwrap();
    // linear critic: v = w . [state, zeros] + b
    let w = tr
        .state
        .critic
        .params
        .get("l0.weight")
        .unwrap()
        .data()
        .to_vec();
    let b = tr.state.critic.params.get("l0.bias").unwrap().data()[0];
    let v: f64 = buf.states[0]
        .iter()
        .zip(&w)
        .map(|(x, w)| x * w)
        .sum::<f64>()
        + b;
    // a single terminal step has return equal to its reward
    let loss = tr.critic_update(&mut buf).unwrap();
    assert!((loss - (v - 0.7).powi(2)).abs() < 1e-12);
}

#[test]
fn zeroed_consensus_matches_baseline_critic() {
    let mut on_cfg = small_config(true);
    on_cfg.normalize_advantages = false;
    let off_cfg = TrainConfig {
        consensus: false,
        ..on_cfg.clone()
    };
    let mut on = trainer("rendezvous", env(50), on_cfg.clone(), 3);
    let mut off = trainer("rendezvous", env(50), off_cfg.clone(), 3);
    for (_, t) in on.state.hierarchy.aggregator.iter_mut() {
        t.data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    off.state.critic.params = on.state.critic.params.clone();
    let rewards = [0.3, -0.2, 0.9, 0.1];
    let mut b_on = hand_buffer(&on, &rewards, true);
    let mut b_off = hand_buffer(&off, &rewards, false);
    compute_returns_advantages(&mut b_on, &on_cfg).unwrap();
    compute_returns_advantages(&mut b_off, &off_cfg).unwrap();
    assert_eq!(
        on.critic_update(&mut b_on).unwrap(),
        off.critic_update(&mut b_off).unwrap()
    );
}

#[test]
fn zero_advantages_leave_literal_policy_unchanged() {
    let cfg = TrainConfig {
        objective: "literal_pg".into(),
        normalize_advantages: false,
        ..small_config(false)
    };
    let mut tr = trainer("rendezvous", env(50), cfg, 0);
    let mut buf = hand_buffer(&tr, &[0.0; 5], false);
    buf.advantages = Some(vec![0.0; 5]);
    let before = tr.state.actor.params[0].flat_values();
    tr.actor_update(&mut buf).unwrap();
    assert_eq!(tr.state.actor.params[0].flat_values(), before);
    assert!(tr.actor_update(&mut buf).is_err(), "buffer reuse must fail");
}

#[test]
fn positive_advantage_raises_action_probability() {
    for objective in ["literal_pg", "clipped"] {
        let cfg = TrainConfig {
            objective: objective.into(),
            normalize_advantages: false,
            epochs: 1,
            actor_lr: 1e-2,
            entropy_coef: 0.0,
            ..small_config(false)
        };
        let mut tr = trainer("rendezvous", env(50), cfg, 1);
        let mut buf = hand_buffer(&tr, &[0.0], false);
        buf.actions = vec![0; buf.agents];
        buf.log_probs = (0..buf.agents)
            .map(|i| {
                let l = tr
                    .state
                    .actor
                    .logits(i, &buf.obs[i], &buf.c_att[i])
                    .unwrap();
                log_softmax(&l).1[0]
            })
            .collect();
        buf.advantages = Some(vec![1.0]);
        let (obs, c_att) = (buf.obs[0].clone(), buf.c_att[0].clone());
        let p = |tr: &Trainer| {
            let l = tr.state.actor.logits(0, &obs, &c_att).unwrap();
            log_softmax(&l).0[0]
        };
        let before = p(&tr);
        tr.actor_update(&mut buf).unwrap();
        assert!(p(&tr) > before, "{objective}");
    }
}

#[test]
fn clipped_surrogate_by_hand() {
    let cfg = TrainConfig {
        clip: 0.2,
        entropy_coef: 0.1,
        ..TrainConfig::default()
    };
    let new = [0.5f64.ln(), 0.1f64.ln()];
    let old = [0.25f64.ln(), 0.2f64.ln()];
    let adv = [2.0, -1.0];
    let ent = [1.2, 0.8];
    let mut tape = Tape::new();
    let lp = tape.variable(&Tensor::new(vec![2], new.to_vec()).unwrap());
    let e = tape.variable(&Tensor::new(vec![2], ent.to_vec()).unwrap());
    let loss = ClippedSurrogate
        .loss(
            &mut tape,
            &ObjectiveInputs {
                log_probs: lp,
                old_log_probs: &old,
                advantages: &adv,
                entropy: e,
            },
            &cfg,
        )
        .unwrap();
    // ratios 2.0 and 0.5; clipped to 1.2 and 0.8
    let s0 = f64::min(2.0 * 2.0, 1.2 * 2.0);
    let s1 = f64::min(0.5 * -1.0, 0.8 * -1.0);
    let want = -((s0 + s1) / 2.0 + 0.1 * (1.2 + 0.8) / 2.0);
    assert!((tape.scalar(loss) - want).abs() < 1e-12);
}

#[test]
fn literal_gradient_matches_analytic_direction() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let b = 4;
        let k = 5;
        let logits: Vec<f64> = (0..b * k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let actions: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
        let adv: Vec<f64> = (0..b).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut tape = Tape::new();
        let z = tape.variable(&Tensor::matrix(b, k, logits.clone()).unwrap());
        let lsm = tape.log_softmax_rows(z, 1.0).unwrap();
        let lp = tape.pick(lsm, &actions).unwrap();
        let e = tape.constant(&Tensor::new(vec![b], vec![0.0; b]).unwrap());
        let loss = LiteralPolicyGradient
            .loss(
                &mut tape,
                &ObjectiveInputs {
                    log_probs: lp,
                    old_log_probs: &vec![0.0; b],
                    advantages: &adv,
                    entropy: e,
                },
                &TrainConfig::default(),
            )
            .unwrap();
        let g = tape.backward(loss).unwrap();
        let got = g.get(z).unwrap().to_vec();
        // d/dz of -mean(A * log pi(a)) is -A * (onehot(a) - softmax(z)) / B
        for r in 0..b {
            let (p, _) = log_softmax(&logits[r * k..(r + 1) * k]);
            for c in 0..k {
                let onehot = if c == actions[r] { 1.0 } else { 0.0 };
                let want = -adv[r] * (onehot - p[c]) / b as f64;
                assert!((got[r * k + c] - want).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn objective_registry_selects_by_name() {
    let r = ObjectiveRegistry::with_builtins();
    assert_eq!(r.names().collect::<Vec<_>>(), vec!["clipped", "literal_pg"]);
    assert_eq!(r.get("literal_pg").unwrap().name(), "literal_pg");
    assert!(r.get("ppo2").is_err());
}

/// Agent 0's action distribution over an episode prefix in which agent 2
/// moves along `far_path`, always outside agent 0's sensing radius.
fn agent0_distributions(
    policy: &mut ExecutionPolicy,
    task: &dyn Task,
    world: &WorldState,
    far_path: &[[f64; 2]],
) -> Vec<Vec<f64>> {
    let mut w = world.clone();
    let mut hist =
        ObservationHistory::for_layers(task.agents(), &policy.hierarchy.layers, task.obs_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = vec![];
    for (t, p) in far_path.iter().enumerate() {
        w.agents[2].pos = *p;
        w.agents[2].vel = [p[0] * 0.01, -p[1] * 0.01];
        w.timestep = t;
        let o = task.observe(&w, 0);
        hist.push(0, t, o.clone()).unwrap();
        let (a, _) = policy.act(0, &o, &hist, t, false, &mut rng).unwrap();
        out.push(a.probs);
    }
    out
}

#[test]
fn actions_depend_only_on_local_observations() {
    let cfg = small_config(true);
    let mut tr = trainer("rendezvous", env(50), cfg, 5);
    tr.train_iteration().unwrap();
    let task = tr.task().clone();
    let mut world = task.reset(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    world.agents[0].pos = [0.2, 0.2];
    world.agents[1].pos = [0.4, 0.3];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let path = |rng: &mut ChaCha8Rng| -> Vec<[f64; 2]> {
        (0..8)
            .map(|_| [rng.random_range(1.5..2.0), rng.random_range(1.5..2.0)])
            .collect()
    };
    let a = agent0_distributions(
        &mut tr.execution_policy(),
        task.as_ref(),
        &world,
        &path(&mut rng),
    );
    let b = agent0_distributions(
        &mut tr.execution_policy(),
        task.as_ref(),
        &world,
        &path(&mut rng),
    );
    // compare bit patterns, not just values
    let bits = |v: &Vec<Vec<f64>>| v.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn zero_learning_rates_change_nothing() {
    let mut cfg = small_config(true);
    cfg.actor_lr = 0.0;
    cfg.critic_lr = 0.0;
    cfg.aggregator_lr = 0.0;
    let mut spec = small_spec();
    spec.consensus.learning_rate = 0.0;
    spec.consensus.ema_momentum = 1.0;
    spec.consensus.center_momentum = 1.0;
    let mut tr = Trainer::new(
        "rendezvous",
        env(30),
        cfg,
        &spec,
        0,
        &TaskRegistry::with_builtins(),
        &ObjectiveRegistry::with_builtins(),
    )
    .unwrap();
    let before = parameter_snapshot(&tr.state);
    let centers: Vec<_> = tr
        .state
        .hierarchy
        .layers
        .iter()
        .map(|l| l.head.center.clone())
        .collect();
    let m = tr.train_iteration().unwrap();
    assert!(m.get("mean_episode_reward").is_some());
    assert_eq!(parameter_snapshot(&tr.state), before);
    let after: Vec<_> = tr
        .state
        .hierarchy
        .layers
        .iter()
        .map(|l| l.head.center.clone())
        .collect();
    assert_eq!(after, centers);
}

#[test]
fn equal_seeds_give_equal_metrics() {
    for consensus in [true, false] {
        let run = || {
            let mut tr = trainer("predator_prey", env(30), small_config(consensus), 42);
            (0..2)
                .map(|_| tr.train_iteration().unwrap().deterministic())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}

#[test]
fn baseline_mode_disables_consensus_path() {
    let mut tr = trainer("rendezvous", env(30), small_config(false), 0);
    let buf = tr.collect_rollout().unwrap();
    assert!(buf.c_att.iter().flatten().all(|x| *x == 0.0));
    assert!(buf.categories.iter().all(|c| c.is_empty()));
    let agg = tr.state.hierarchy.aggregator.clone();
    let m = tr.train_iteration().unwrap();
    assert_eq!(m.get("consensus_loss_l0"), Some(0.0));
    assert_eq!(tr.state.hierarchy.aggregator, agg);
}

#[test]
fn metrics_carry_expected_keys() {
    let mut tr = trainer("navigation", env(20), small_config(true), 0);
    let m = tr.train_iteration().unwrap();
    let keys: Vec<&str> = m.keys().collect();
    for k in [
        "iteration",
        "env_steps",
        "mean_episode_reward",
        "mean_steps_to_complete",
        "agreement_rate",
        "attention_l0",
        "attention_l1",
        "consensus_loss_l0",
        "consensus_loss_l1",
        "wall_clock_s",
    ] {
        assert!(keys.contains(&k), "missing {k}");
    }
    let att = m.get("attention_l0").unwrap() + m.get("attention_l1").unwrap();
    assert!((att - 1.0).abs() < 1e-9);
}

#[test]
fn evaluation_rejects_zero_episodes() {
    let tr = trainer("rendezvous", env(20), small_config(true), 0);
    assert!(tr
        .evaluate(0, true, &mut ChaCha8Rng::seed_from_u64(0))
        .is_err());
    let r = tr
        .evaluate(2, true, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    assert_eq!(r.len(), 2);
}

#[test]
fn untrained_navigation_rarely_succeeds() {
    let tr = trainer("navigation", env(60), small_config(true), 0);
    let r = tr
        .evaluate(5, false, &mut ChaCha8Rng::seed_from_u64(1))
        .unwrap();
    assert!(r.iter().all(|e| !e.success && e.steps_to_complete == 60));
}
