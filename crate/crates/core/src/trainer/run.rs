use std::collections::VecDeque;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    collect_rollouts, disc_update, gae, imitation_reward, ppo_update, standardize_multi, Actor, DiscLoss, Env,
    EnvConfig, PpoBatch, PpoSettings, PpoStats, RolloutBatch, TrainConfig, TrainError,
};
use crate::motion::{clip_imitation_error, disc_dim, disc_window, mean, Frame, ReferenceClip, DISC_FRAMES};
use crate::neural::{Adam, AdamConfig, CriticNet, DiscConfig, DiscriminatorEnsemble, Tensor, TerrainEncoderDims};
use crate::physics::Pose;

/// What a run trains against: environment settings plus the reference clip
/// for the imitation objective.
#[derive(Clone, Debug)]
pub struct Task {
    pub env: EnvConfig,
    pub clip: ReferenceClip,
}

/// Metrics of one iteration. Rollout statistics describe the policy before
/// the iteration's update.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub samples: usize,
    pub goal_reward: f64,
    pub imitation_reward: f64,
    pub clip_fraction: f64,
    pub disc_real: f64,
    pub disc_fake: f64,
    pub disc_gp: f64,
    pub imitation_error: f64,
    pub fall_rate: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub injection_norm: f64,
}

pub const METRICS_HEADER: &str = "iteration,samples,goal_reward,imitation_reward,clip_fraction,disc_real,disc_fake,disc_gp,imitation_error,fall_rate,policy_loss,value_loss,injection_norm";

impl IterationStats {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.samples,
            self.goal_reward,
            self.imitation_reward,
            self.clip_fraction,
            self.disc_real,
            self.disc_fake,
            self.disc_gp,
            self.imitation_error,
            self.fall_rate,
            self.policy_loss,
            self.value_loss,
            self.injection_norm
        )
    }
}

pub fn write_metrics<W: Write>(out: &mut W, rows: &[IterationStats]) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

/// All real discriminator windows of a clip (one per frame).
pub fn clip_windows(clip: &ReferenceClip) -> Vec<Vec<f64>> {
    (0..clip.len() as i64)
        .map(|k| {
            let frames: Vec<Frame> = (k - DISC_FRAMES as i64 + 1..=k)
                .map(|i| Frame {
                    bodies: clip.states_at(i),
                    ground: 0.0,
                })
                .collect();
            disc_window(&frames)
        })
        .collect()
}

/// Mean imitation error over each worker's contiguous episode segments of at
/// least one clip cycle.
pub fn batch_imitation_error(batch: &RolloutBatch, clip: &ReferenceClip) -> f64 {
    let mut errs = vec![];
    for w in 0..batch.workers {
        let mut seg: Vec<Vec<Pose>> = vec![];
        for row in batch.worker_rows(w) {
            seg.push(batch.poses[row].clone());
            if batch.dones[row] {
                if seg.len() >= clip.len() {
                    errs.extend(clip_imitation_error(&seg, clip).unwrap_or_default());
                }
                seg.clear();
            }
        }
        if seg.len() >= clip.len() {
            errs.extend(clip_imitation_error(&seg, clip).unwrap_or_default());
        }
    }
    if errs.is_empty() {
        f64::NAN
    } else {
        mean(&errs)
    }
}

/// PPO + discriminator training loop for any [`Actor`].
pub struct Trainer<A: Actor> {
    pub actor: A,
    pub critic: CriticNet,
    pub disc: DiscriminatorEnsemble,
    pub config: TrainConfig,
    pub task: Task,
    pub envs: Vec<Env>,
    pub history: Vec<IterationStats>,
    opt_pi: Adam,
    opt_v: Adam,
    opt_d: Adam,
    rng: ChaCha8Rng,
    real: Vec<Vec<f64>>,
    fake: VecDeque<Vec<f64>>,
    samples: usize,
    /// Per-iteration hook, e.g. the injection-norm probe of an adapted policy.
    pub probe: Option<fn(&A, &RolloutBatch) -> f64>,
}

impl<A: Actor> Trainer<A> {
    /// Fresh critic and discriminator; `actor` is used as given.
    pub fn new(actor: A, task: Task, config: TrainConfig, disc_config: DiscConfig, seed: u64) -> Result<Self, TrainError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = actor.dims().clone();
        let terrain = actor.uses_terrain().then(TerrainEncoderDims::default);
        let critic = CriticNet::new(dims, terrain, &mut rng);
        let links = task.env.morphology.links.len();
        let disc = DiscriminatorEnsemble::new(disc_dim(links), disc_config, &mut rng);
        let mut env_cfg = task.env.clone();
        env_cfg.heightmap = actor.uses_terrain();
        let envs = (0..config.workers)
            .map(|i| Env::new(env_cfg.clone(), Some(task.clip.clone()), seed.wrapping_mul(7919).wrapping_add(i as u64 + 1)))
            .collect();
        let real = clip_windows(&task.clip);
        Ok(Self {
            actor,
            critic,
            disc,
            opt_pi: Adam::new(AdamConfig::with_lr(config.lr_policy)),
            opt_v: Adam::new(AdamConfig::with_lr(config.lr_critic)),
            opt_d: Adam::new(AdamConfig::with_lr(config.lr_disc)),
            config,
            task,
            envs,
            history: vec![],
            rng,
            real,
            fake: VecDeque::new(),
            samples: 0,
            probe: None,
        })
    }

    pub fn iteration(&self) -> usize {
        self.history.len()
    }

    /// Imitation rewards for a batch of windows under the current discriminator.
    pub fn imitation_rewards(&self, windows: &Tensor) -> Result<Vec<f64>, TrainError> {
        let d = self.disc.outputs(windows)?;
        Ok((0..d.rows()).map(|i| imitation_reward(d.row_slice(i))).collect())
    }

    /// Collect one buffer, update policy/critic/discriminator, record metrics.
    pub fn step(&mut self) -> Result<IterationStats, TrainError> {
        let cfg = self.config.clone();
        let mut batch = collect_rollouts(&mut self.envs, &self.actor, &self.critic, cfg.horizon(), true, &mut self.rng)?;
        for e in &batch.events {
            log::warn!("{e}");
        }
        batch.rewards[0] = self.imitation_rewards(&batch.windows)?;
        let mut stats = IterationStats {
            iteration: self.history.len(),
            goal_reward: mean(&batch.rewards[1]),
            imitation_reward: mean(&batch.rewards[0]),
            fall_rate: batch.fell.iter().filter(|&&f| f).count() as f64 / batch.len() as f64,
            imitation_error: batch_imitation_error(&batch, &self.task.clip),
            ..Default::default()
        };
        if let Some(p) = self.probe {
            stats.injection_norm = p(&self.actor, &batch);
        }
        for &(row, v) in &batch.truncations {
            for k in 0..2 {
                batch.rewards[k][row] += cfg.gamma * v[k];
            }
        }

        let n = batch.len();
        let w = batch.workers;
        let mut adv = [vec![0.0; n], vec![0.0; n]];
        let mut ret = Tensor::zeros(&[n, 2]);
        for k in 0..2 {
            for wi in 0..w {
                let rows: Vec<usize> = batch.worker_rows(wi).collect();
                let r: Vec<f64> = rows.iter().map(|&i| batch.rewards[k][i]).collect();
                let mut v: Vec<f64> = rows.iter().map(|&i| batch.values.get(i, k)).collect();
                v.push(batch.bootstrap.get(wi, k));
                let d: Vec<bool> = rows.iter().map(|&i| batch.dones[i]).collect();
                let (a, rt) = gae(&r, &v, &d, cfg.gamma, cfg.gae_lambda)?;
                for (j, &i) in rows.iter().enumerate() {
                    adv[k][i] = a[j];
                    ret.set(i, k, rt[j]);
                }
            }
        }
        let combined = standardize_multi(&adv, &cfg.omega)?;
        let settings = PpoSettings {
            clip: cfg.clip,
            epochs: cfg.epochs,
            batch: cfg.batch,
            grad_clip: cfg.grad_clip,
        };
        let data = PpoBatch {
            obs: &batch.obs,
            goal: &batch.goal,
            terrain: batch.terrain.as_ref(),
            actions: &batch.actions,
            logp: &batch.logp,
            advantages: &combined,
            returns: &ret,
        };
        let ppo: PpoStats = ppo_update(
            &mut self.actor,
            &mut self.critic,
            &data,
            &settings,
            &mut self.opt_pi,
            &mut self.opt_v,
            &mut self.rng,
        )?;
        stats.clip_fraction = ppo.clip_fraction;
        stats.policy_loss = ppo.policy_loss;
        stats.value_loss = ppo.value_loss;

        for i in 0..batch.windows.rows() {
            self.fake.push_back(batch.windows.row_slice(i).to_vec());
        }
        while self.fake.len() > cfg.disc_buffer {
            self.fake.pop_front();
        }
        let half = cfg.disc_batch / 2;
        let mut parts = DiscLoss::default();
        for _ in 0..cfg.disc_updates {
            let real: Vec<Vec<f64>> = (0..half)
                .map(|_| self.real[self.rng.random_range(0..self.real.len())].clone())
                .collect();
            let fake: Vec<Vec<f64>> = (0..half)
                .map(|_| self.fake[self.rng.random_range(0..self.fake.len())].clone())
                .collect();
            let p = disc_update(
                &mut self.disc,
                &Tensor::from_rows(&real),
                &Tensor::from_rows(&fake),
                cfg.gp_lambda,
                cfg.grad_clip,
                &mut self.opt_d,
                &mut self.rng,
            )?;
            parts.real += p.real / cfg.disc_updates as f64;
            parts.fake += p.fake / cfg.disc_updates as f64;
            parts.gp += p.gp / cfg.disc_updates as f64;
        }
        stats.disc_real = parts.real;
        stats.disc_fake = parts.fake;
        stats.disc_gp = parts.gp;
        self.samples += n;
        stats.samples = self.samples;
        self.history.push(stats.clone());
        Ok(stats)
    }

    pub fn run(&mut self, iterations: usize, mut on_iter: impl FnMut(&IterationStats)) -> Result<(), TrainError> {
        for _ in 0..iterations {
            let s = self.step()?;
            on_iter(&s);
        }
        Ok(())
    }
}

/// Outcome of a fixed-length evaluation.
#[derive(Clone, Debug, Default)]
pub struct EvalReport {
    pub mean_goal_reward: f64,
    pub falls: usize,
    pub episodes: usize,
    pub steps: usize,
    /// Per-worker pose sequences of the first episode.
    pub trajectories: Vec<Vec<Vec<Pose>>>,
    pub imitation_error: Option<f64>,
    /// Mean root speed over the first episodes, m/s.
    pub speed: f64,
}

impl EvalReport {
    pub fn fall_rate(&self) -> f64 {
        self.falls as f64 / self.episodes.max(1) as f64
    }
}

/// Run `actor` on `workers` fresh environments for `steps` ticks with mean
/// actions (or sampled ones if `stochastic`).
pub fn evaluate<A: Actor>(
    actor: &A,
    env: &EnvConfig,
    clip: Option<&ReferenceClip>,
    workers: usize,
    steps: usize,
    seed: u64,
    stochastic: bool,
) -> Result<EvalReport, TrainError> {
    let mut cfg = env.clone();
    cfg.heightmap = actor.uses_terrain();
    let mut envs: Vec<Env> = (0..workers)
        .map(|i| Env::new(cfg.clone(), clip.cloned(), seed.wrapping_mul(104_729).wrapping_add(i as u64)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = actor.dims().clone();
    let critic = CriticNet::new(dims, actor.uses_terrain().then(TerrainEncoderDims::default), &mut rng);
    let batch = collect_rollouts(&mut envs, actor, &critic, steps, stochastic, &mut rng)?;
    let mut rep = EvalReport {
        mean_goal_reward: mean(&batch.rewards[1]),
        falls: batch.fell.iter().filter(|&&f| f).count(),
        episodes: workers + batch.dones.iter().filter(|&&d| d).count(),
        steps: batch.len(),
        ..Default::default()
    };
    let mut dist = 0.0;
    let mut time = 0.0;
    for w in 0..workers {
        let mut traj = vec![];
        for row in batch.worker_rows(w) {
            traj.push(batch.poses[row].clone());
            if batch.dones[row] {
                break;
            }
        }
        if traj.len() > 1 {
            dist += traj[traj.len() - 1][0].x - traj[0][0].x;
            time += (traj.len() - 1) as f64 * super::CONTROL_DT;
        }
        rep.trajectories.push(traj);
    }
    rep.speed = if time > 0.0 { dist / time } else { 0.0 };
    if let Some(c) = clip {
        let e = batch_imitation_error(&batch, c);
        rep.imitation_error = e.is_finite().then_some(e);
    }
    Ok(rep)
}
