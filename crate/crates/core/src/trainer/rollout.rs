use rand::Rng;
use rand_distr::StandardNormal;

use super::{Actor, Env, Observation, TrainError};
use crate::neural::{CriticNet, Tensor, LN_2PI};
use crate::physics::Pose;

/// Transitions from `workers` environments over `horizon` ticks, stored
/// time-major: row `t * workers + w`.
#[derive(Clone, Debug)]
pub struct RolloutBatch {
    pub workers: usize,
    pub horizon: usize,
    pub obs: Tensor,
    pub goal: Tensor,
    pub terrain: Option<Tensor>,
    /// Injected `z⁰` at collection time.
    pub latents: Tensor,
    pub actions: Tensor,
    /// Behavior log-probabilities.
    pub logp: Vec<f64>,
    /// Rewards per objective: `[imitation, goal]`.
    pub rewards: [Vec<f64>; 2],
    /// Per-head values `[n, 2]` of each row's state.
    pub values: Tensor,
    /// Per-head values `[workers, 2]` of the state after the last tick.
    pub bootstrap: Tensor,
    pub dones: Vec<bool>,
    pub fell: Vec<bool>,
    /// Rows that ended at the time limit, with the per-head value of the
    /// state they reached. Callers add `γ·V` to those rows' rewards.
    pub truncations: Vec<(usize, [f64; 2])>,
    /// Discriminator windows after each tick.
    pub windows: Tensor,
    pub poses: Vec<Vec<Pose>>,
    /// Worker resets caused by physics errors.
    pub events: Vec<String>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.logp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logp.is_empty()
    }

    /// Indices of worker `w`'s rows in time order.
    pub fn worker_rows(&self, w: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.horizon).map(move |t| t * self.workers + w)
    }
}

fn stack(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows)
}

fn batch_inputs(obs: &[Observation]) -> (Tensor, Tensor, Option<Tensor>) {
    let o: Vec<Vec<f64>> = obs.iter().map(|x| x.obs.clone()).collect();
    let g: Vec<Vec<f64>> = obs.iter().map(|x| x.goal.clone()).collect();
    let t = if obs.iter().all(|x| x.terrain.is_some()) && !obs.is_empty() {
        let rows: Vec<Vec<f64>> = obs.iter().map(|x| x.terrain.clone().unwrap()).collect();
        Some(stack(&rows))
    } else {
        None
    };
    (stack(&o), stack(&g), t)
}

/// Critic values for a set of observations, `[n, 2]`.
pub fn critic_values(critic: &CriticNet, obs: &[Observation]) -> Result<Tensor, TrainError> {
    let (o, g, t) = batch_inputs(obs);
    let t = if critic.terrain.is_some() { t } else { None };
    Ok(critic.values(&o, &g, t.as_ref())?)
}

/// Step every environment for `horizon` ticks. Terminated workers reset in
/// place. With `stochastic = false` the mean action is taken.
pub fn collect_rollouts<A: Actor, R: Rng>(
    envs: &mut [Env],
    actor: &A,
    critic: &CriticNet,
    horizon: usize,
    stochastic: bool,
    rng: &mut R,
) -> Result<RolloutBatch, TrainError> {
    let w = envs.len();
    let n = w * horizon;
    let mut obs_rows: Vec<Observation> = Vec::with_capacity(n);
    let mut latents = Vec::with_capacity(n);
    let mut actions = Vec::with_capacity(n);
    let mut logp = Vec::with_capacity(n);
    let mut goal_r = Vec::with_capacity(n);
    let mut dones = Vec::with_capacity(n);
    let mut fell = Vec::with_capacity(n);
    let mut windows = Vec::with_capacity(n);
    let mut poses = Vec::with_capacity(n);
    let mut events = vec![];
    // (row, observation before reset) of time-limit truncations
    let mut truncated: Vec<(usize, Observation)> = vec![];

    let mut current: Vec<Observation> = envs.iter().map(|e| e.observation()).collect();
    for t in 0..horizon {
        let (o, g, tr) = batch_inputs(&current);
        let tr = if actor.uses_terrain() { tr } else { None };
        let (mean, log_std, z0) = actor.infer(&o, &g, tr.as_ref())?;
        let a_dim = mean.cols();
        let mut step_actions = Vec::with_capacity(w);
        for i in 0..w {
            let mut a = Vec::with_capacity(a_dim);
            let mut lp = -0.5 * a_dim as f64 * LN_2PI;
            for j in 0..a_dim {
                let ls = log_std.data()[j];
                let eps: f64 = if stochastic { rng.sample(StandardNormal) } else { 0.0 };
                a.push(mean.get(i, j) + ls.exp() * eps);
                lp += -0.5 * eps * eps - ls;
            }
            logp.push(lp);
            latents.push(z0.row_slice(i).to_vec());
            step_actions.push(a);
        }
        let infos = step_all(envs, &step_actions);
        for (i, info) in infos.into_iter().enumerate() {
            let row = t * w + i;
            obs_rows.push(current[i].clone());
            actions.push(step_actions[i].clone());
            goal_r.push(info.goal_reward);
            windows.push(envs[i].disc_window());
            poses.push(info.poses.clone());
            fell.push(info.fell);
            dones.push(info.done());
            if let Some(e) = &info.error {
                events.push(format!("worker {i} tick {t}: {e}; reset"));
            }
            if info.timeout && !info.fell && info.error.is_none() {
                truncated.push((row, envs[i].observation()));
            }
            if info.done() {
                envs[i].reset();
            }
            current[i] = envs[i].observation();
        }
    }

    let values = critic_values(critic, &obs_rows)?;
    let bootstrap = critic_values(critic, &current)?;
    let mut truncations = vec![];
    if !truncated.is_empty() {
        let tail: Vec<Observation> = truncated.iter().map(|(_, o)| o.clone()).collect();
        let tv = critic_values(critic, &tail)?;
        for (k, (row, _)) in truncated.iter().enumerate() {
            truncations.push((*row, [tv.get(k, 0), tv.get(k, 1)]));
        }
    }
    let (o, g, tr) = batch_inputs(&obs_rows);
    Ok(RolloutBatch {
        workers: w,
        horizon,
        obs: o,
        goal: g,
        terrain: tr,
        latents: stack(&latents),
        actions: stack(&actions),
        logp,
        rewards: [vec![0.0; n], goal_r],
        values,
        bootstrap,
        dones,
        fell,
        truncations,
        windows: stack(&windows),
        poses,
        events,
    })
}

/// Worlds are independent, so stepping fans out over the available cores.
fn step_all(envs: &mut [Env], actions: &[Vec<f64>]) -> Vec<super::StepInfo> {
    let threads = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(envs.len());
    if threads <= 1 {
        return envs.iter_mut().zip(actions).map(|(e, a)| e.step(a)).collect();
    }
    let chunk = envs.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = envs
            .chunks_mut(chunk)
            .zip(actions.chunks(chunk))
            .map(|(es, acts)| {
                s.spawn(move || {
                    es.iter_mut()
                        .zip(acts)
                        .map(|(e, a)| e.step(a))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("environment worker panicked"))
            .collect()
    })
}
