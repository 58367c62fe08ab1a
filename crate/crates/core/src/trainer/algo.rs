use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Actor, TrainError};
use crate::neural::{clip_grad_norm, gaussian_logprob, Adam, CriticNet, DiscriminatorEnsemble, Graph, Tensor, Var};

/// Generalized advantage estimates for one trajectory.
///
/// `values` has one more entry than `rewards`: the last is the bootstrap value
/// of the state after the final step. A `done` step does not bootstrap.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    let n = rewards.len();
    if values.len() != n + 1 || dones.len() != n {
        return Err(TrainError::Length(format!(
            "gae: {n} rewards, {} values, {} dones",
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let cont = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * cont - values[t];
        running = delta + gamma * lambda * cont * running;
        adv[t] = running;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// Zero-mean, unit population-std copy of `x`. Zero variance maps to zeros.
pub fn standardize(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    if x.is_empty() {
        return vec![];
    }
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var <= 0.0 {
        return vec![0.0; x.len()];
    }
    let sd = var.sqrt() + 1e-8;
    x.iter().map(|v| (v - mean) / sd).collect()
}

/// `Σ_k ω_k · standardize(A_k)`.
pub fn standardize_multi(advantages: &[Vec<f64>], omega: &[f64]) -> Result<Vec<f64>, TrainError> {
    if advantages.len() != omega.len() || advantages.is_empty() {
        return Err(TrainError::Length(format!(
            "{} objectives, {} weights",
            advantages.len(),
            omega.len()
        )));
    }
    let n = advantages[0].len();
    if n == 0 || advantages.iter().any(|a| a.len() != n) {
        return Err(TrainError::Length("objective batches must be non-empty and aligned".into()));
    }
    let mut out = vec![0.0; n];
    for (a, &w) in advantages.iter().zip(omega) {
        for (o, s) in out.iter_mut().zip(standardize(a)) {
            *o += w * s;
        }
    }
    Ok(out)
}

/// Mean of the head outputs clipped to `[-1, 1]`.
pub fn imitation_reward(head_outputs: &[f64]) -> f64 {
    if head_outputs.is_empty() {
        return 0.0;
    }
    head_outputs.iter().map(|d| d.clamp(-1.0, 1.0)).sum::<f64>() / head_outputs.len() as f64
}

/// Goal reward: 1 inside the goal radius, otherwise
/// `exp(−3‖ẋ/T − v*‖² / ‖v*‖²)` with `ẋ` the root displacement over one frame.
pub fn goal_reward(displacement: f64, target_velocity: f64, distance: f64, radius: f64, frame_dt: f64) -> f64 {
    if distance <= radius {
        return 1.0;
    }
    let v = displacement / frame_dt;
    let d = v - target_velocity;
    (-3.0 * d * d / (target_velocity * target_velocity)).exp()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub extra_loss: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    /// Largest |ratio − 1| in the first minibatch of the first epoch.
    pub first_ratio_dev: f64,
    pub minibatches: usize,
}

/// Inputs for one PPO update, row-aligned.
pub struct PpoBatch<'a> {
    pub obs: &'a Tensor,
    pub goal: &'a Tensor,
    pub terrain: Option<&'a Tensor>,
    pub actions: &'a Tensor,
    pub logp: &'a [f64],
    pub advantages: &'a [f64],
    /// Per-head returns `[n, 2]`.
    pub returns: &'a Tensor,
}

pub struct PpoSettings {
    pub clip: f64,
    pub epochs: usize,
    pub batch: usize,
    pub grad_clip: f64,
}

fn shuffled<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

fn gather(t: &Tensor, idx: &[usize]) -> Tensor {
    t.gather_rows(idx)
}

/// Clipped-surrogate policy update plus per-head value regression.
pub fn ppo_update<A: Actor, R: Rng>(
    actor: &mut A,
    critic: &mut CriticNet,
    data: &PpoBatch,
    s: &PpoSettings,
    opt_pi: &mut Adam,
    opt_v: &mut Adam,
    rng: &mut R,
) -> Result<PpoStats, TrainError> {
    let n = data.obs.rows();
    let mut st = PpoStats::default();
    let mut ratio_sum = 0.0;
    let mut clipped = 0usize;
    let mut counted = 0usize;
    for epoch in 0..s.epochs {
        let order = shuffled(n, rng);
        for (mb, chunk) in order.chunks(s.batch).enumerate() {
            let obs = gather(data.obs, chunk);
            let goal = gather(data.goal, chunk);
            let terrain = data.terrain.map(|t| gather(t, chunk));
            let act = gather(data.actions, chunk);
            let m = chunk.len();
            let old = Tensor::matrix(m, 1, chunk.iter().map(|&i| data.logp[i]).collect());
            let adv = Tensor::matrix(m, 1, chunk.iter().map(|&i| data.advantages[i]).collect());
            let ret = gather(data.returns, chunk);

            // policy
            let mut g = Graph::new();
            let b = actor.bind(&mut g);
            let o = g.constant(obs.clone());
            let gl = g.constant(goal.clone());
            let tv = terrain.as_ref().map(|t| g.constant(t.clone()));
            let out = actor.forward(&mut g, &b, o, gl, tv)?;
            let a = g.constant(act);
            let lp = gaussian_logprob(&mut g, out.mean, out.log_std, a)?;
            let oldv = g.constant(old);
            let diff = g.sub(lp, oldv)?;
            let ratio = g.exp(diff);
            let advv = g.constant(adv);
            let s1 = g.mul(ratio, advv)?;
            let rc = g.clamp(ratio, 1.0 - s.clip, 1.0 + s.clip);
            let s2 = g.mul(rc, advv)?;
            let surr = g.minimum(s1, s2)?;
            let surr = g.mean_all(surr);
            let mut loss = g.scale(surr, -1.0);
            let extra = actor.extra_loss(&mut g, &b, o, gl, tv, &out)?;
            if let Some(e) = extra {
                st.extra_loss = g.value(e).item();
                loss = g.add(loss, e)?;
            }
            let lval = g.value(loss).item();
            if !lval.is_finite() {
                return Err(TrainError::NonFinite("policy loss".into()));
            }
            let r = g.value(ratio).clone();
            for &x in r.data() {
                ratio_sum += x;
                counted += 1;
                if (x - 1.0).abs() > s.clip {
                    clipped += 1;
                }
            }
            if epoch == 0 && mb == 0 {
                st.first_ratio_dev = r.data().iter().map(|x| (x - 1.0).abs()).fold(0.0, f64::max);
            }
            st.policy_loss = -g.value(surr).item();
            let mut grads = b.grads(&mut g, loss)?;
            clip_grad_norm(&mut grads, s.grad_clip);
            opt_pi.step(actor.params_mut(), &grads);

            // critic
            let mut g = Graph::new();
            let b = critic.params.bind(&mut g);
            let o = g.constant(obs);
            let gl = g.constant(goal);
            let tv = terrain.map(|t| g.constant(t));
            let v = critic.forward(&mut g, &b, o, gl, tv)?;
            let rv = g.constant(ret);
            let d = g.sub(v, rv)?;
            let sq = g.mul(d, d)?;
            let per = g.sum_cols(sq);
            let vloss = g.mean_all(per);
            let vl = g.value(vloss).item();
            if !vl.is_finite() {
                return Err(TrainError::NonFinite("value loss".into()));
            }
            st.value_loss = vl;
            let mut grads = b.grads(&mut g, vloss)?;
            clip_grad_norm(&mut grads, s.grad_clip);
            opt_v.step(&mut critic.params, &grads);
            st.minibatches += 1;
        }
    }
    st.mean_ratio = ratio_sum / counted.max(1) as f64;
    st.clip_fraction = clipped as f64 / counted.max(1) as f64;
    Ok(st)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscLoss {
    /// Head-averaged `E max(0, 1 + D(fake))`.
    pub fake: f64,
    /// Head-averaged `E max(0, 1 − D(real))`.
    pub real: f64,
    /// Head-averaged `E (‖∇D(x̂)‖ − 1)²`, unweighted.
    pub gp: f64,
    pub total: f64,
}

/// Hinge loss with gradient penalty, as a graph node. Returns the loss and its parts.
pub fn disc_loss(
    disc: &DiscriminatorEnsemble,
    g: &mut Graph,
    b: &crate::neural::Bound,
    real: Var,
    fake: Var,
    interp: Option<Var>,
    gp_lambda: f64,
) -> Result<(Var, DiscLoss), TrainError> {
    let heads = disc.heads() as f64;
    let df = disc.forward(g, b, fake)?;
    let hf = g.add_scalar(df, 1.0);
    let hf = g.relu(hf);
    let lf = g.mean_all(hf);
    let dr = disc.forward(g, b, real)?;
    let nr = g.scale(dr, -1.0);
    let hr = g.add_scalar(nr, 1.0);
    let hr = g.relu(hr);
    let lr = g.mean_all(hr);
    // mean over [B, N] equals the head average of per-head batch means
    let mut loss = g.add(lf, lr)?;
    let mut parts = DiscLoss {
        fake: g.value(lf).item(),
        real: g.value(lr).item(),
        ..Default::default()
    };
    if let Some(x) = interp {
        let out = disc.forward(g, b, x)?;
        let mut acc: Option<Var> = None;
        for n in 0..disc.heads() {
            let col = g.slice(out, n, 1)?;
            let s = g.sum_all(col);
            let grad = match g.grad(s, &[x])?[0] {
                Some(v) => v,
                None => g.constant(Tensor::zeros(g.value(x).shape())),
            };
            let norm = g.row_norm(grad);
            let dev = g.add_scalar(norm, -1.0);
            let sq = g.mul(dev, dev)?;
            let m = g.mean_all(sq);
            acc = Some(match acc {
                None => m,
                Some(a) => g.add(a, m)?,
            });
        }
        let gp = g.scale(acc.expect("at least one head"), 1.0 / heads);
        parts.gp = g.value(gp).item();
        let w = g.scale(gp, gp_lambda);
        loss = g.add(loss, w)?;
    }
    parts.total = g.value(loss).item();
    Ok((loss, parts))
}

/// One discriminator step on equal-size real and fake minibatches.
pub fn disc_update<R: Rng>(
    disc: &mut DiscriminatorEnsemble,
    real: &Tensor,
    fake: &Tensor,
    gp_lambda: f64,
    grad_clip: f64,
    opt: &mut Adam,
    rng: &mut R,
) -> Result<DiscLoss, TrainError> {
    if real.rows() != fake.rows() {
        return Err(TrainError::Length(format!(
            "real {} vs fake {} rows",
            real.rows(),
            fake.rows()
        )));
    }
    let m = real.rows();
    let c = real.cols();
    let mut mix = Tensor::zeros(&[m, c]);
    for i in 0..m {
        let a: f64 = rng.random();
        for j in 0..c {
            mix.set(i, j, a * real.get(i, j) + (1.0 - a) * fake.get(i, j));
        }
    }
    let mut g = Graph::new();
    let b = disc.params.bind(&mut g);
    let r = g.constant(real.clone());
    let f = g.constant(fake.clone());
    let x = g.leaf(mix, true);
    let (loss, parts) = disc_loss(disc, &mut g, &b, r, f, Some(x), gp_lambda)?;
    if !parts.total.is_finite() {
        return Err(TrainError::NonFinite("discriminator loss".into()));
    }
    let mut grads = b.grads(&mut g, loss)?;
    clip_grad_norm(&mut grads, grad_clip);
    opt.step(&mut disc.params, &grads);
    Ok(parts)
}
