use adaptnet::motion::{generate_clip, style_preset};
use adaptnet::neural::{
    Adam, AdamConfig, Bound, CriticNet, DiscConfig, DiscriminatorEnsemble, Graph, NetDims, NeuralError, ParamTree,
    PolicyNet, PolicyOutput, Tensor, Var,
};
use adaptnet::physics::Morphology;
use adaptnet::trainer::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn brute_gae(r: &[f64], v: &[f64], d: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    let delta: Vec<f64> = (0..n)
        .map(|t| r[t] + if d[t] { 0.0 } else { gamma * v[t + 1] } - v[t])
        .collect();
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            let mut w = 1.0;
            for j in t..n {
                sum += w * delta[j];
                if d[j] {
                    break;
                }
                w *= gamma * lambda;
            }
            sum
        })
        .collect()
}

#[test]
fn gae_two_step_example() {
    let (a, ret) = gae(&[1.0, 1.0], &[0.5, 0.5, 0.5], &[false, false], 0.5, 0.5).unwrap();
    assert!((a[0] - 0.9375).abs() < 1e-15);
    assert!((a[1] - 0.75).abs() < 1e-15);
    assert!((ret[0] - 1.4375).abs() < 1e-15);
}

#[test]
fn gae_lambda_zero_is_td_residual() {
    let r = [0.3, -1.0, 2.0];
    let v = [0.1, 0.4, -0.2, 0.7];
    let (a, _) = gae(&r, &v, &[false; 3], 0.9, 0.0).unwrap();
    for t in 0..3 {
        assert_eq!(a[t], r[t] + 0.9 * v[t + 1] - v[t]);
    }
}

#[test]
fn gae_zero_inputs_and_length_check() {
    let (a, _) = gae(&[0.0; 4], &[0.0; 5], &[false; 4], 0.95, 0.95).unwrap();
    assert!(a.iter().all(|&x| x == 0.0));
    assert!(matches!(gae(&[0.0; 4], &[0.0; 4], &[false; 4], 0.9, 0.9), Err(TrainError::Length(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]
    #[test]
    fn gae_matches_discounted_sums(
        data in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0, prop::bool::weighted(0.2)), 1..40),
        tail in -2.0f64..2.0,
        gamma in 0.0f64..1.0,
        lambda in 0.0f64..1.0,
    ) {
        let r: Vec<f64> = data.iter().map(|x| x.0).collect();
        let mut v: Vec<f64> = data.iter().map(|x| x.1).collect();
        v.push(tail);
        let d: Vec<bool> = data.iter().map(|x| x.2).collect();
        let (a, ret) = gae(&r, &v, &d, gamma, lambda).unwrap();
        let want = brute_gae(&r, &v, &d, gamma, lambda);
        for t in 0..r.len() {
            prop_assert!((a[t] - want[t]).abs() <= 1e-10);
            prop_assert!((ret[t] - a[t] - v[t]).abs() <= 1e-12);
        }
    }

    #[test]
    fn standardized_moments(x in prop::collection::vec(-100.0f64..100.0, 2..200)) {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        prop_assume!(var > 1e-6);
        let s = standardize(&x);
        let sm = s.iter().sum::<f64>() / n;
        let sd = (s.iter().map(|v| (v - sm).powi(2)).sum::<f64>() / n).sqrt();
        prop_assert!(sm.abs() <= 1e-6);
        prop_assert!((sd - 1.0).abs() <= 1e-3);
    }

    #[test]
    fn imitation_reward_is_bounded(h in prop::collection::vec(-10.0f64..10.0, 1..40)) {
        let r = imitation_reward(&h);
        prop_assert!((-1.0..=1.0).contains(&r));
    }

    #[test]
    fn goal_reward_in_unit_interval(disp in -0.2f64..0.2, v in 0.5f64..2.0, dist in 0.0f64..10.0) {
        let r = goal_reward(disp, v, dist, 0.5, 1.0 / 30.0);
        prop_assert!(r > 0.0 && r <= 1.0);
    }
}

#[test]
fn standardize_examples() {
    let s = standardize(&[1.0, 2.0, 3.0]);
    let k = 1.5f64.sqrt();
    for (a, b) in s.iter().zip([-k, 0.0, k]) {
        assert!((a - b).abs() < 1e-7);
    }
    assert_eq!(standardize(&[4.0, 4.0, 4.0]), vec![0.0; 3]);
    assert_eq!(standardize(&[7.0]), vec![0.0]);
    let a = vec![0.5, -1.0, 3.0, 2.0];
    let c = standardize_multi(&[a.clone(), a.clone()], &[0.5, 0.5]).unwrap();
    let single = standardize(&a);
    for (x, y) in c.iter().zip(&single) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn omega_must_sum_to_one() {
    let cfg = TrainConfig {
        omega: [0.5, 0.6],
        ..Default::default()
    };
    assert!(matches!(cfg.validate(), Err(TrainError::Config(_))));
    assert!(TrainConfig::default().validate().is_ok());
}

#[test]
fn imitation_reward_examples() {
    assert!((imitation_reward(&[2.0, -0.5, 0.3]) - 0.8 / 3.0).abs() < 1e-15);
    assert_eq!(imitation_reward(&[1.0, 3.0, 1.5]), 1.0);
    assert_eq!(imitation_reward(&[-1.0, -3.0]), -1.0);
}

#[test]
fn goal_reward_examples() {
    let dt = 1.0 / 30.0;
    assert_eq!(goal_reward(0.0, 1.0, 0.4, 0.5, dt), 1.0);
    assert_eq!(goal_reward(1.2 * dt, 1.2, 3.0, 0.5, dt), 1.0);
    assert!((goal_reward(0.0, 1.0, 3.0, 0.5, dt) - (-3.0f64).exp()).abs() < 1e-12);
    // half speed: exp(−3·0.25)
    let r = goal_reward(0.5 * dt, -1.0, 3.0, 0.5, dt);
    assert!((r - (-3.0f64 * 2.25).exp()).abs() < 1e-12);
}

fn linear_disc(w: f64) -> DiscriminatorEnsemble {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = DiscConfig {
        hidden: vec![],
        heads: 1,
        ..Default::default()
    };
    let mut d = DiscriminatorEnsemble::new(1, cfg, &mut rng);
    *d.params.get_mut("heads.w").unwrap() = Tensor::matrix(1, 1, vec![w]);
    *d.params.get_mut("heads.b").unwrap() = Tensor::matrix(1, 1, vec![0.0]);
    d
}

#[test]
fn hinge_loss_hand_value() {
    let d = linear_disc(1.0);
    let mut g = Graph::new();
    let b = d.params.bind(&mut g);
    let real = g.constant(Tensor::matrix(1, 1, vec![0.8]));
    let fake = g.constant(Tensor::matrix(1, 1, vec![0.5]));
    let x = g.leaf(Tensor::matrix(1, 1, vec![0.65]), true);
    let (_, parts) = disc_loss(&d, &mut g, &b, real, fake, Some(x), 10.0).unwrap();
    assert!((parts.fake - 1.5).abs() < 1e-12);
    assert!((parts.real - 0.2).abs() < 1e-12);
    // unit-norm linear discriminator: no penalty
    assert!(parts.gp.abs() < 1e-24);
    assert!((parts.total - 1.7).abs() < 1e-12);
}

#[test]
fn hinge_saturates() {
    let d = linear_disc(3.0);
    let mut g = Graph::new();
    let b = d.params.bind(&mut g);
    let real = g.constant(Tensor::matrix(2, 1, vec![0.5, 2.0]));
    let fake = g.constant(Tensor::matrix(2, 1, vec![-0.4, -1.0]));
    let (_, parts) = disc_loss(&d, &mut g, &b, real, fake, None, 10.0).unwrap();
    assert_eq!(parts.fake, 0.0);
    assert_eq!(parts.real, 0.0);
}

#[test]
fn disc_update_rejects_unequal_halves() {
    let mut d = linear_disc(1.0);
    let mut opt = Adam::new(AdamConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let r = disc_update(
        &mut d,
        &Tensor::matrix(2, 1, vec![0.0, 1.0]),
        &Tensor::matrix(1, 1, vec![0.0]),
        10.0,
        1.0,
        &mut opt,
        &mut rng,
    );
    assert!(matches!(r, Err(TrainError::Length(_))));
}

fn tiny_dims(action_dim: usize) -> NetDims {
    NetDims {
        frame_dim: 1,
        frames: 1,
        goal_dim: 1,
        goal_embed: 1,
        gru_hidden: 2,
        trunk: vec![4],
        action_dim,
    }
}

/// State-free 1-D Gaussian policy.
struct Bandit {
    dims: NetDims,
    params: ParamTree,
}

impl Bandit {
    fn new() -> Self {
        let mut params = ParamTree::new();
        params.insert("mu", Tensor::matrix(1, 1, vec![-0.3]));
        params.insert("log_std", Tensor::matrix(1, 1, vec![0.0]));
        Self {
            dims: tiny_dims(1),
            params,
        }
    }

    fn p_positive(&self) -> f64 {
        let mu = self.params.get("mu").unwrap().item();
        let sd = self.params.get("log_std").unwrap().item().exp();
        // Φ(μ/σ) via erf-free logistic bound is not exact; use a fine quadrature
        let z = mu / sd;
        let n = 20_000;
        let lo = -10.0;
        let h = (z - lo) / n as f64;
        (0..n)
            .map(|i| {
                let x = lo + (i as f64 + 0.5) * h;
                (-0.5 * x * x).exp() * h
            })
            .sum::<f64>()
            / (2.0 * std::f64::consts::PI).sqrt()
    }
}

impl Actor for Bandit {
    fn dims(&self) -> &NetDims {
        &self.dims
    }
    fn params(&self) -> &ParamTree {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamTree {
        &mut self.params
    }
    fn forward(&self, g: &mut Graph, b: &Bound, obs: Var, _goal: Var, _t: Option<Var>) -> Result<PolicyOutput, NeuralError> {
        let n = g.value(obs).rows();
        let mu = b.get("mu")?;
        let mean = g.broadcast_rows(mu, n)?;
        Ok(PolicyOutput {
            mean,
            log_std: b.get("log_std")?,
            latents: vec![mean],
            injection: None,
        })
    }
}

fn bandit_run(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut actor = Bandit::new();
    let mut critic = CriticNet::new(tiny_dims(1), None, &mut rng);
    let mut opt_pi = Adam::new(AdamConfig::with_lr(0.02));
    let mut opt_v = Adam::new(AdamConfig::with_lr(0.02));
    let settings = PpoSettings {
        clip: 0.2,
        epochs: 1,
        batch: 256,
        grad_clip: 1.0,
    };
    let n = 256;
    let obs = Tensor::zeros(&[n, 1]);
    let mut probs = vec![actor.p_positive()];
    for _ in 0..50 {
        let (mean, log_std, _) = actor.infer(&obs, &obs, None).unwrap();
        let sd = log_std.item().exp();
        let mut acts = vec![];
        let mut logp = vec![];
        let mut rew = vec![];
        for i in 0..n {
            let eps: f64 = rng.sample(rand_distr::StandardNormal);
            let a = mean.get(i, 0) + sd * eps;
            acts.push(a);
            logp.push(-0.5 * eps * eps - log_std.item() - 0.5 * adaptnet::neural::LN_2PI);
            rew.push(if a > 0.0 { 1.0 } else { 0.0 });
        }
        let adv = standardize(&rew);
        let returns = Tensor::matrix(n, 2, rew.iter().flat_map(|&r| [r, r]).collect());
        let actions = Tensor::matrix(n, 1, acts);
        let batch = PpoBatch {
            obs: &obs,
            goal: &obs,
            terrain: None,
            actions: &actions,
            logp: &logp,
            advantages: &adv,
            returns: &returns,
        };
        let st = ppo_update(&mut actor, &mut critic, &batch, &settings, &mut opt_pi, &mut opt_v, &mut rng).unwrap();
        assert!(st.first_ratio_dev < 1e-12, "first ratio off by {}", st.first_ratio_dev);
        probs.push(actor.p_positive());
    }
    probs
}

use rand::Rng;

#[test]
fn bandit_probability_rises() {
    let mut good = 0;
    for seed in 0..3 {
        let p = bandit_run(seed);
        let monotone = p.windows(2).all(|w| w[1] >= w[0] - 1e-12);
        if monotone && p[50] > p[0] + 0.1 {
            good += 1;
        }
    }
    assert!(good >= 2, "only {good}/3 seeds improved monotonically");
}

fn policy_batch(rng: &mut ChaCha8Rng, n: usize, dims: &NetDims) -> (Tensor, Tensor, Tensor, Vec<f64>, Vec<f64>, Tensor) {
    let r = |rng: &mut ChaCha8Rng, c: usize| -> Tensor {
        Tensor::matrix(n, c, (0..n * c).map(|_| rng.random_range(-1.0..1.0)).collect())
    };
    let obs = r(rng, dims.obs_dim());
    let goal = r(rng, dims.goal_dim);
    let act = r(rng, dims.action_dim);
    let logp: Vec<f64> = vec![-5.0; n];
    let adv: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ret = r(rng, 2);
    (obs, goal, act, logp, adv, ret)
}

fn max_drift(a: &ParamTree, b: &ParamTree) -> f64 {
    a.iter()
        .map(|(k, t)| t.max_abs_diff(b.get(k).unwrap()))
        .fold(0.0, f64::max)
}

fn finetune_drift(lambda: Option<f64>) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dims = NetDims::default();
    let net = PolicyNet::new(dims.clone(), &mut rng);
    let start = net.params.clone();
    let mut critic = CriticNet::new(dims.clone(), None, &mut rng);
    let mut opt_pi = Adam::new(AdamConfig::with_lr(1e-4));
    let mut opt_v = Adam::new(AdamConfig::with_lr(1e-4));
    let (obs, goal, act, logp, adv, ret) = policy_batch(&mut rng, 32, &dims);
    let batch = PpoBatch {
        obs: &obs,
        goal: &goal,
        terrain: None,
        actions: &act,
        logp: &logp,
        advantages: &adv,
        returns: &ret,
    };
    let s = PpoSettings {
        clip: 0.2,
        epochs: 100,
        batch: 32,
        grad_clip: 1.0,
    };
    match lambda {
        Some(l) => {
            let mut p = RegularizedPolicy::new(net, l);
            ppo_update(&mut p, &mut critic, &batch, &s, &mut opt_pi, &mut opt_v, &mut rng).unwrap();
            max_drift(&p.net.params, &start)
        }
        None => {
            let mut p = net;
            ppo_update(&mut p, &mut critic, &batch, &s, &mut opt_pi, &mut opt_v, &mut rng).unwrap();
            max_drift(&p.params, &start)
        }
    }
}

#[test]
fn strong_weight_regularizer_pins_finetuning() {
    let free = finetune_drift(None);
    let pinned = finetune_drift(Some(1e6));
    assert!(free > 1e-3, "unregularized drift {free}");
    assert!(pinned < 1e-3, "regularized drift {pinned}");
}

#[test]
fn zero_advantage_leaves_policy_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let dims = NetDims::default();
    let mut net = PolicyNet::new(dims.clone(), &mut rng);
    let start = net.params.clone();
    let mut critic = CriticNet::new(dims.clone(), None, &mut rng);
    let critic_start = critic.params.clone();
    let (obs, goal, act, logp, _, ret) = policy_batch(&mut rng, 16, &dims);
    let adv = vec![0.0; 16];
    let batch = PpoBatch {
        obs: &obs,
        goal: &goal,
        terrain: None,
        actions: &act,
        logp: &logp,
        advantages: &adv,
        returns: &ret,
    };
    let s = PpoSettings {
        clip: 0.2,
        epochs: 2,
        batch: 8,
        grad_clip: 1.0,
    };
    let mut opt_pi = Adam::new(AdamConfig::with_lr(1e-3));
    let mut opt_v = Adam::new(AdamConfig::with_lr(1e-3));
    ppo_update(&mut net, &mut critic, &batch, &s, &mut opt_pi, &mut opt_v, &mut rng).unwrap();
    assert_eq!(net.params, start);
    assert_ne!(critic.params, critic_start);
}

fn walk_task(workers: usize) -> (Vec<Env>, PolicyNet, CriticNet) {
    let morph = Morphology::biped();
    let clip = generate_clip("walk", &style_preset("walk").unwrap(), &morph).unwrap();
    let cfg = EnvConfig::default();
    let envs = (0..workers).map(|i| Env::new(cfg.clone(), Some(clip.clone()), i as u64)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = PolicyNet::new(NetDims::default(), &mut rng);
    let critic = CriticNet::new(NetDims::default(), None, &mut rng);
    (envs, net, critic)
}

#[test]
fn single_tick_batch_has_one_row_per_worker() {
    let (mut envs, net, critic) = walk_task(3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let b = collect_rollouts(&mut envs, &net, &critic, 1, true, &mut rng).unwrap();
    assert_eq!(b.len(), 3);
    assert_eq!(b.obs.shape(), &[3, 192]);
    assert_eq!(b.windows.shape(), &[3, 140]);
    assert_eq!(b.rewards[0].len(), b.rewards[1].len());
}

#[test]
fn deterministic_rollouts_repeat() {
    let run = || {
        let (mut envs, net, critic) = walk_task(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        collect_rollouts(&mut envs, &net, &critic, 20, false, &mut rng).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.obs, b.obs);
    assert_eq!(a.actions, b.actions);
    assert_eq!(a.rewards, b.rewards);
    assert_eq!(a.windows, b.windows);
}

#[test]
fn zero_torque_always_falls_within_three_seconds() {
    for seed in 0..4 {
        let mut env = Env::new(EnvConfig::default(), None, seed);
        let n = env.morphology().num_actuated();
        let dt = 1.0 / 120.0;
        let mut t = 0.0;
        while !env.fallen() {
            env.world.step(&vec![0.0; n], dt).unwrap();
            t += dt;
            assert!(t < 3.0, "seed {seed} still standing at 3 s");
        }
    }
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        workers: 2,
        buffer: 32,
        batch: 16,
        epochs: 1,
        disc_buffer: 64,
        disc_batch: 16,
        disc_updates: 1,
        ..Default::default()
    }
}

fn tiny_trainer(seed: u64) -> Trainer<PolicyNet> {
    let morph = Morphology::biped();
    let clip = generate_clip("walk", &style_preset("walk").unwrap(), &morph).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = PolicyNet::new(NetDims::default(), &mut rng);
    let disc = DiscConfig {
        heads: 4,
        hidden: vec![16],
        ..Default::default()
    };
    let task = Task {
        env: EnvConfig::default(),
        clip,
    };
    Trainer::new(net, task, tiny_config(), disc, seed).unwrap()
}

#[test]
fn training_iterations_are_reproducible() {
    let mut a = tiny_trainer(3);
    let mut b = tiny_trainer(3);
    a.run(2, |_| {}).unwrap();
    b.run(2, |_| {}).unwrap();
    assert_eq!(a.actor.params, b.actor.params);
    let csv = |t: &Trainer<PolicyNet>| {
        let mut out = vec![];
        write_metrics(&mut out, &t.history).unwrap();
        String::from_utf8(out).unwrap()
    };
    let text = csv(&a);
    assert_eq!(text, csv(&b));
    assert!(text.starts_with(METRICS_HEADER));
    assert_eq!(text.lines().count(), 3);
    let h = &a.history[1];
    assert_eq!(h.samples, 64);
    assert!(h.disc_real >= 0.0 && h.disc_fake >= 0.0 && h.disc_gp >= 0.0);
}

#[test]
fn clip_windows_cover_each_frame() {
    let morph = Morphology::biped();
    let clip = generate_clip("walk", &style_preset("walk").unwrap(), &morph).unwrap();
    let w = clip_windows(&clip);
    assert_eq!(w.len(), clip.len());
    assert!(w.iter().all(|x| x.len() == 140));
}
