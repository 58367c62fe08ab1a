use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ConvGeom, Graph, NeuralError, ParamTree, Tensor, Var};
use super::params::Bound;

/// `ln(2π)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Layer widths shared by the policy and critic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetDims {
    /// Features per observation frame.
    pub frame_dim: usize,
    /// Frames in one observation (the GRU sequence length).
    pub frames: usize,
    pub goal_dim: usize,
    pub goal_embed: usize,
    pub gru_hidden: usize,
    /// Widths of the fully connected layers after the encoder.
    pub trunk: Vec<usize>,
    pub action_dim: usize,
}

impl Default for NetDims {
    fn default() -> Self {
        Self {
            frame_dim: 48,
            frames: 4,
            goal_dim: 3,
            goal_embed: 3,
            gru_hidden: 64,
            trunk: vec![128, 128],
            action_dim: 6,
        }
    }
}

impl NetDims {
    pub fn obs_dim(&self) -> usize {
        self.frame_dim * self.frames
    }

    /// Width of the encoder output (the first latent space).
    pub fn latent_dim(&self) -> usize {
        self.gru_hidden + self.goal_embed
    }

    /// Widths of every latent space, the encoder output first.
    pub fn latent_widths(&self) -> Vec<usize> {
        let mut w = vec![self.latent_dim()];
        w.extend(&self.trunk);
        w
    }
}

/// Shape of the 1-D convolutional encoder for terrain windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TerrainEncoderDims {
    pub window: usize,
    pub kernels: Vec<usize>,
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    pub out: usize,
}

impl Default for TerrainEncoderDims {
    fn default() -> Self {
        Self {
            window: 32,
            kernels: vec![5, 3, 3],
            channels: vec![8, 16, 16],
            strides: vec![2, 2, 1],
            out: 16,
        }
    }
}

impl TerrainEncoderDims {
    fn geoms(&self) -> Vec<ConvGeom> {
        let mut len = self.window;
        let mut ch = 1;
        let mut out = Vec::new();
        for i in 0..self.kernels.len() {
            let g = ConvGeom {
                length: len,
                channels: ch,
                kernel: self.kernels[i],
                stride: self.strides[i],
            };
            len = g.out_length();
            ch = self.channels[i];
            out.push(g);
        }
        out
    }

    pub fn flat_dim(&self) -> usize {
        let gs = self.geoms();
        let last = gs.last().expect("terrain encoder needs a conv layer");
        last.out_length() * self.channels[self.channels.len() - 1]
    }
}

pub fn init_linear<R: Rng>(
    tree: &mut ParamTree,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    gain: f64,
    rng: &mut R,
) {
    let a = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
    let w: Vec<f64> = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-a..a))
        .collect();
    tree.insert(format!("{name}.w"), Tensor::matrix(fan_in, fan_out, w));
    tree.insert(format!("{name}.b"), Tensor::zeros(&[1, fan_out]));
}

pub fn init_gru<R: Rng>(tree: &mut ParamTree, name: &str, input: usize, hidden: usize, rng: &mut R) {
    let a = 1.0 / (hidden as f64).sqrt();
    let mut u = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-a..a)).collect() };
    tree.insert(format!("{name}.w_ih"), Tensor::matrix(input, 3 * hidden, u(input * 3 * hidden)));
    tree.insert(format!("{name}.w_hh"), Tensor::matrix(hidden, 3 * hidden, u(hidden * 3 * hidden)));
    tree.insert(format!("{name}.b_ih"), Tensor::matrix(1, 3 * hidden, u(3 * hidden)));
    tree.insert(format!("{name}.b_hh"), Tensor::matrix(1, 3 * hidden, u(3 * hidden)));
}

/// GRU encoder over observation frames plus the goal embedding.
pub fn init_encoder<R: Rng>(tree: &mut ParamTree, prefix: &str, dims: &NetDims, rng: &mut R) {
    init_gru(tree, &format!("{prefix}gru"), dims.frame_dim, dims.gru_hidden, rng);
    init_linear(tree, &format!("{prefix}goal"), dims.goal_dim, dims.goal_embed, 1.0, rng);
}

pub fn init_terrain_encoder<R: Rng>(
    tree: &mut ParamTree,
    prefix: &str,
    dims: &TerrainEncoderDims,
    rng: &mut R,
) {
    for (i, geom) in dims.geoms().iter().enumerate() {
        init_linear(
            tree,
            &format!("{prefix}conv{i}"),
            geom.kernel * geom.channels,
            dims.channels[i],
            1.0,
            rng,
        );
    }
    init_linear(tree, &format!("{prefix}fc"), dims.flat_dim(), dims.out, 1.0, rng);
}

/// `x · W + b`.
pub fn linear(g: &mut Graph, b: &Bound, name: &str, x: Var) -> Result<Var, NeuralError> {
    let w = b.get(&format!("{name}.w"))?;
    let bias = b.get(&format!("{name}.b"))?;
    let xw = g.matmul(x, w)?;
    g.add_row(xw, bias)
}

/// One GRU update, gates ordered (reset, update, candidate):
///
/// ```text
/// r  = σ(x·W_ir + b_ir + h·W_hr + b_hr)
/// u  = σ(x·W_iu + b_iu + h·W_hu + b_hu)
/// n  = tanh(x·W_in + b_in + r ⊙ (h·W_hn + b_hn))
/// h' = (1 − u) ⊙ n + u ⊙ h
/// ```
pub fn gru_step(g: &mut Graph, b: &Bound, name: &str, h: Var, x: Var) -> Result<Var, NeuralError> {
    let w_ih = b.get(&format!("{name}.w_ih"))?;
    let w_hh = b.get(&format!("{name}.w_hh"))?;
    let b_ih = b.get(&format!("{name}.b_ih"))?;
    let b_hh = b.get(&format!("{name}.b_hh"))?;
    let hid = g.value(w_hh).rows();
    if g.value(h).cols() != hid || g.value(w_ih).rows() != g.value(x).cols() {
        return Err(NeuralError::ShapeMismatch {
            op: "gru_step",
            lhs: vec![g.value(x).cols(), g.value(h).cols()],
            rhs: vec![g.value(w_ih).rows(), hid],
        });
    }
    let xi = g.matmul(x, w_ih)?;
    let gi = g.add_row(xi, b_ih)?;
    let hh = g.matmul(h, w_hh)?;
    let gh = g.add_row(hh, b_hh)?;
    let (ir, iu, inn) = (g.slice(gi, 0, hid)?, g.slice(gi, hid, hid)?, g.slice(gi, 2 * hid, hid)?);
    let (hr, hu, hn) = (g.slice(gh, 0, hid)?, g.slice(gh, hid, hid)?, g.slice(gh, 2 * hid, hid)?);
    let r = g.add(ir, hr)?;
    let r = g.sigmoid(r);
    let u = g.add(iu, hu)?;
    let u = g.sigmoid(u);
    let rn = g.mul(r, hn)?;
    let n = g.add(inn, rn)?;
    let n = g.tanh(n);
    let diff = g.sub(h, n)?;
    let ud = g.mul(u, diff)?;
    g.add(n, ud)
}

/// Encoder output `z⁰ = [GRU(frames) ‖ goal embedding]`.
pub fn encoder_forward(
    g: &mut Graph,
    b: &Bound,
    prefix: &str,
    dims: &NetDims,
    obs: Var,
    goal: Var,
) -> Result<Var, NeuralError> {
    let batch = g.value(obs).rows();
    if g.value(obs).cols() != dims.obs_dim() || g.value(goal).cols() != dims.goal_dim {
        return Err(NeuralError::ShapeMismatch {
            op: "encoder",
            lhs: vec![g.value(obs).cols(), g.value(goal).cols()],
            rhs: vec![dims.obs_dim(), dims.goal_dim],
        });
    }
    let mut h = g.constant(Tensor::zeros(&[batch, dims.gru_hidden]));
    let gru = format!("{prefix}gru");
    for f in 0..dims.frames {
        let x = g.slice(obs, f * dims.frame_dim, dims.frame_dim)?;
        h = gru_step(g, b, &gru, h, x)?;
    }
    let ge = linear(g, b, &format!("{prefix}goal"), goal)?;
    g.concat(&[h, ge])
}

pub fn terrain_encoder_forward(
    g: &mut Graph,
    b: &Bound,
    prefix: &str,
    dims: &TerrainEncoderDims,
    window: Var,
) -> Result<Var, NeuralError> {
    let batch = g.value(window).rows();
    let mut x = window;
    for (i, geom) in dims.geoms().into_iter().enumerate() {
        let cols = g.im2col(x, geom)?;
        let y = linear(g, b, &format!("{prefix}conv{i}"), cols)?;
        let y = g.relu(y);
        x = g.reshape(y, batch, geom.out_length() * dims.channels[i])?;
    }
    let y = linear(g, b, &format!("{prefix}fc"), x)?;
    Ok(g.relu(y))
}

/// Diagonal Gaussian log-density, one value per row: `[B,A] -> [B,1]`.
pub fn gaussian_logprob(
    g: &mut Graph,
    mean: Var,
    log_std: Var,
    action: Var,
) -> Result<Var, NeuralError> {
    let a = g.value(mean).cols();
    let batch = g.value(mean).rows();
    let diff = g.sub(action, mean)?;
    let neg = g.scale(log_std, -1.0);
    let inv_std = g.exp(neg);
    let z = g.mul_row(diff, inv_std)?;
    let sq = g.mul(z, z)?;
    let quad = g.sum_cols(sq);
    let quad = g.scale(quad, -0.5);
    let logdet = g.sum_cols(log_std);
    let logdet = g.broadcast_rows(logdet, batch)?;
    let lp = g.sub(quad, logdet)?;
    Ok(g.add_scalar(lp, -0.5 * a as f64 * LN_2PI))
}

/// Graph handles produced by a policy forward pass.
#[derive(Clone, Debug)]
pub struct PolicyOutput {
    pub mean: Var,
    pub log_std: Var,
    /// Latents `z⁰, z¹, …` in network order.
    pub latents: Vec<Var>,
    /// Unscaled injector output `[B, Σ site widths]`, for adapted policies.
    pub injection: Option<Var>,
}

/// GRU-encoder Gaussian policy.
#[derive(Clone, Debug)]
pub struct PolicyNet {
    pub dims: NetDims,
    pub params: ParamTree,
}

impl PolicyNet {
    pub fn new<R: Rng>(dims: NetDims, rng: &mut R) -> Self {
        let mut params = ParamTree::new();
        init_encoder(&mut params, "enc.", &dims, rng);
        let widths = dims.latent_widths();
        for i in 0..dims.trunk.len() {
            init_linear(
                &mut params,
                &format!("trunk.{i}"),
                widths[i],
                widths[i + 1],
                2f64.sqrt(),
                rng,
            );
        }
        init_linear(
            &mut params,
            "head",
            *widths.last().unwrap(),
            dims.action_dim,
            0.01,
            rng,
        );
        params.insert(
            "log_std",
            Tensor::full(&[1, dims.action_dim], 0.2f64.ln()),
        );
        Self { dims, params }
    }

    pub fn from_params(dims: NetDims, params: ParamTree) -> Result<Self, NeuralError> {
        let net = Self { dims, params };
        net.check()?;
        Ok(net)
    }

    fn check(&self) -> Result<(), NeuralError> {
        let w = self.params.get("head.w")?;
        let ls = self.params.get("log_std")?;
        if w.cols() != self.dims.action_dim || ls.cols() != self.dims.action_dim {
            return Err(NeuralError::ShapeMismatch {
                op: "policy head",
                lhs: vec![w.cols(), ls.cols()],
                rhs: vec![self.dims.action_dim],
            });
        }
        let gi = self.params.get("enc.gru.w_ih")?;
        if gi.rows() != self.dims.frame_dim || gi.cols() != 3 * self.dims.gru_hidden {
            return Err(NeuralError::ShapeMismatch {
                op: "policy encoder",
                lhs: gi.shape().to_vec(),
                rhs: vec![self.dims.frame_dim, 3 * self.dims.gru_hidden],
            });
        }
        Ok(())
    }

    /// Forward on a graph, reading parameters named `{prefix}…` from `b`.
    pub fn forward_with(
        dims: &NetDims,
        g: &mut Graph,
        b: &Bound,
        prefix: &str,
        obs: Var,
        goal: Var,
    ) -> Result<PolicyOutput, NeuralError> {
        let z0 = encoder_forward(g, b, &format!("{prefix}enc."), dims, obs, goal)?;
        let mut latents = vec![z0];
        let mut z = z0;
        for i in 0..dims.trunk.len() {
            let pre = linear(g, b, &format!("{prefix}trunk.{i}"), z)?;
            z = g.relu(pre);
            latents.push(z);
        }
        let mean = linear(g, b, &format!("{prefix}head"), z)?;
        let log_std = b.get(&format!("{prefix}log_std"))?;
        Ok(PolicyOutput {
            mean,
            log_std,
            latents,
            injection: None,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        b: &Bound,
        obs: Var,
        goal: Var,
    ) -> Result<PolicyOutput, NeuralError> {
        Self::forward_with(&self.dims, g, b, "", obs, goal)
    }

    /// Action means and `log_std` for a batch, without recording gradients.
    pub fn act(&self, obs: &Tensor, goal: &Tensor) -> Result<(Tensor, Tensor), NeuralError> {
        let mut g = Graph::new();
        let b = self.params.bind_constant(&mut g);
        let o = g.constant(obs.clone());
        let gl = g.constant(goal.clone());
        let out = self.forward(&mut g, &b, o, gl)?;
        Ok((g.value(out.mean).clone(), g.value(out.log_std).clone()))
    }
}

/// Two-head value network (imitation, goal).
#[derive(Clone, Debug)]
pub struct CriticNet {
    pub dims: NetDims,
    pub terrain: Option<TerrainEncoderDims>,
    pub params: ParamTree,
}

impl CriticNet {
    pub const HEADS: usize = 2;

    pub fn new<R: Rng>(dims: NetDims, terrain: Option<TerrainEncoderDims>, rng: &mut R) -> Self {
        let mut params = ParamTree::new();
        init_encoder(&mut params, "enc.", &dims, rng);
        let mut widths = dims.latent_widths();
        if let Some(t) = &terrain {
            init_terrain_encoder(&mut params, "terrain.", t, rng);
            widths[0] += t.out;
        }
        for i in 0..dims.trunk.len() {
            init_linear(
                &mut params,
                &format!("trunk.{i}"),
                widths[i],
                widths[i + 1],
                2f64.sqrt(),
                rng,
            );
        }
        init_linear(&mut params, "value", *widths.last().unwrap(), Self::HEADS, 1.0, rng);
        Self {
            dims,
            terrain,
            params,
        }
    }

    /// Values `[B, 2]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        b: &Bound,
        obs: Var,
        goal: Var,
        terrain: Option<Var>,
    ) -> Result<Var, NeuralError> {
        let mut z = encoder_forward(g, b, "enc.", &self.dims, obs, goal)?;
        if let Some(t) = &self.terrain {
            let c = terrain.ok_or(NeuralError::MissingParam("terrain input".into()))?;
            let f = terrain_encoder_forward(g, b, "terrain.", t, c)?;
            z = g.concat(&[z, f])?;
        }
        for i in 0..self.dims.trunk.len() {
            let pre = linear(g, b, &format!("trunk.{i}"), z)?;
            z = g.relu(pre);
        }
        linear(g, b, "value", z)
    }

    pub fn values(
        &self,
        obs: &Tensor,
        goal: &Tensor,
        terrain: Option<&Tensor>,
    ) -> Result<Tensor, NeuralError> {
        let mut g = Graph::new();
        let b = self.params.bind_constant(&mut g);
        let o = g.constant(obs.clone());
        let gl = g.constant(goal.clone());
        let t = terrain.map(|t| g.constant(t.clone()));
        let v = self.forward(&mut g, &b, o, gl, t)?;
        Ok(g.value(v).clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn is_smooth(self) -> bool {
        matches!(self, Activation::Tanh)
    }

    fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Tanh => g.tanh(x),
            Activation::Relu => g.relu(x),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscConfig {
    pub hidden: Vec<usize>,
    pub heads: usize,
    pub activation: Activation,
}

impl Default for DiscConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            heads: 32,
            activation: Activation::Tanh,
        }
    }
}

/// Multi-head discriminator: shared trunk, `N` scalar heads.
#[derive(Clone, Debug)]
pub struct DiscriminatorEnsemble {
    pub input_dim: usize,
    pub config: DiscConfig,
    pub params: ParamTree,
}

impl DiscriminatorEnsemble {
    pub fn new<R: Rng>(input_dim: usize, config: DiscConfig, rng: &mut R) -> Self {
        assert!(config.heads >= 1, "discriminator needs at least one head");
        let mut params = ParamTree::new();
        let mut w = input_dim;
        for (i, &h) in config.hidden.iter().enumerate() {
            init_linear(&mut params, &format!("trunk.{i}"), w, h, 1.0, rng);
            w = h;
        }
        init_linear(&mut params, "heads", w, config.heads, 1.0, rng);
        Self {
            input_dim,
            config,
            params,
        }
    }

    pub fn heads(&self) -> usize {
        self.config.heads
    }

    /// Head outputs `[B, N]`.
    pub fn forward(&self, g: &mut Graph, b: &Bound, x: Var) -> Result<Var, NeuralError> {
        let mut z = x;
        for i in 0..self.config.hidden.len() {
            let pre = linear(g, b, &format!("trunk.{i}"), z)?;
            z = self.config.activation.apply(g, pre);
        }
        linear(g, b, "heads", z)
    }

    pub fn outputs(&self, x: &Tensor) -> Result<Tensor, NeuralError> {
        let mut g = Graph::new();
        let b = self.params.bind_constant(&mut g);
        let xv = g.constant(x.clone());
        let o = self.forward(&mut g, &b, xv)?;
        Ok(g.value(o).clone())
    }
}

/// `∇ₓ Dₙ(x)` per row, recorded on the tape so that it can be differentiated
/// again with respect to the discriminator parameters.
pub fn input_gradient(
    disc: &DiscriminatorEnsemble,
    g: &mut Graph,
    b: &Bound,
    head: usize,
    x: Var,
) -> Result<Var, NeuralError> {
    if !disc.config.activation.is_smooth() {
        return Err(NeuralError::NonSmooth(disc.config.activation));
    }
    let out = disc.forward(g, b, x)?;
    let col = g.slice(out, head, 1)?;
    let s = g.sum_all(col);
    match g.grad(s, &[x])?[0] {
        Some(v) => Ok(v),
        None => {
            let shape = g.value(x).shape().to_vec();
            Ok(g.constant(Tensor::zeros(&shape)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn logprob(mean: &[f64], log_std: &[f64], a: &[f64]) -> f64 {
        let mut g = Graph::new();
        let m = g.constant(Tensor::row(mean.to_vec()));
        let l = g.constant(Tensor::row(log_std.to_vec()));
        let x = g.constant(Tensor::row(a.to_vec()));
        let lp = gaussian_logprob(&mut g, m, l, x).unwrap();
        g.value(lp).item()
    }

    #[test]
    fn standard_normal_logprob_at_zero() {
        let v = logprob(&[0.0], &[0.0], &[0.0]);
        assert!((v - (-0.918_938_533_204_672_7)).abs() < 1e-15);
    }

    #[test]
    fn logprob_is_maximal_at_mean() {
        let peak = logprob(&[0.3, -0.2], &[-1.0, 0.5], &[0.3, -0.2]);
        for d in [-0.5, -0.01, 0.01, 0.7] {
            assert!(logprob(&[0.3, -0.2], &[-1.0, 0.5], &[0.3 + d, -0.2]) < peak);
        }
    }

    #[test]
    fn doubling_std_costs_ln2_per_dim() {
        let a = logprob(&[0.0, 0.0, 0.0], &[0.1, 0.2, 0.3], &[0.0, 0.0, 0.0]);
        let l2 = 2f64.ln();
        let b = logprob(&[0.0, 0.0, 0.0], &[0.1 + l2, 0.2 + l2, 0.3 + l2], &[0.0, 0.0, 0.0]);
        assert!((a - b - 3.0 * l2).abs() < 1e-12);
    }

    fn zero_gru(input: usize, hidden: usize) -> ParamTree {
        let mut t = ParamTree::new();
        t.insert("gru.w_ih", Tensor::zeros(&[input, 3 * hidden]));
        t.insert("gru.w_hh", Tensor::zeros(&[hidden, 3 * hidden]));
        t.insert("gru.b_ih", Tensor::zeros(&[1, 3 * hidden]));
        t.insert("gru.b_hh", Tensor::zeros(&[1, 3 * hidden]));
        t
    }

    #[test]
    fn zero_gru_maps_zero_to_zero() {
        let t = zero_gru(3, 4);
        let mut g = Graph::new();
        let b = t.bind(&mut g);
        let h = g.constant(Tensor::zeros(&[1, 4]));
        let x = g.constant(Tensor::zeros(&[1, 3]));
        let h2 = gru_step(&mut g, &b, "gru", h, x).unwrap();
        assert!(g.value(h2).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gru_contracts_large_state_when_candidate_vanishes() {
        // zero params: update gate 1/2, candidate 0 -> h' = h/2
        let t = zero_gru(2, 3);
        let mut g = Graph::new();
        let b = t.bind(&mut g);
        let h = g.constant(Tensor::row(vec![50.0, -80.0, 1e3]));
        let x = g.constant(Tensor::zeros(&[1, 2]));
        let h2 = gru_step(&mut g, &b, "gru", h, x).unwrap();
        for (a, b) in g.value(h2).data().iter().zip(g.value(h).data()) {
            assert!(a.abs() <= b.abs());
        }
    }

    #[test]
    fn gru_dimension_mismatch() {
        let t = zero_gru(3, 4);
        let mut g = Graph::new();
        let b = t.bind(&mut g);
        let h = g.constant(Tensor::zeros(&[1, 4]));
        let x = g.constant(Tensor::zeros(&[1, 5]));
        assert!(matches!(
            gru_step(&mut g, &b, "gru", h, x),
            Err(NeuralError::ShapeMismatch { op: "gru_step", .. })
        ));
    }

    #[test]
    fn linear_head_input_gradient_is_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = DiscConfig {
            hidden: vec![],
            heads: 1,
            activation: Activation::Tanh,
        };
        let d = DiscriminatorEnsemble::new(4, cfg, &mut rng);
        let mut g = Graph::new();
        let b = d.params.bind(&mut g);
        let x = g.variable(Tensor::matrix(2, 4, vec![0.3, -1.0, 2.0, 0.1, 1.0, 1.0, 1.0, 1.0]));
        let gx = input_gradient(&d, &mut g, &b, 0, x).unwrap();
        let w = d.params.get("heads.w").unwrap();
        for r in 0..2 {
            for c in 0..4 {
                assert_eq!(g.value(gx).get(r, c), w.get(c, 0));
            }
        }
    }

    #[test]
    fn relu_discriminator_refuses_input_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = DiscConfig {
            hidden: vec![4],
            heads: 2,
            activation: Activation::Relu,
        };
        let d = DiscriminatorEnsemble::new(3, cfg, &mut rng);
        let mut g = Graph::new();
        let b = d.params.bind(&mut g);
        let x = g.variable(Tensor::zeros(&[1, 3]));
        assert!(matches!(
            input_gradient(&d, &mut g, &b, 0, x),
            Err(NeuralError::NonSmooth(Activation::Relu))
        ));
    }

    #[test]
    fn scalar_tanh_chain_gradient_at_origin() {
        // D(x) = v·tanh(w·x + 0) with 1×1 layers: ∇ₓD(0) = v·w·tanh'(0) = v·w
        let mut p = ParamTree::new();
        p.insert("trunk.0.w", Tensor::scalar(0.7));
        p.insert("trunk.0.b", Tensor::scalar(0.0));
        p.insert("heads.w", Tensor::scalar(-1.3));
        p.insert("heads.b", Tensor::scalar(0.0));
        let d = DiscriminatorEnsemble {
            input_dim: 1,
            config: DiscConfig {
                hidden: vec![1],
                heads: 1,
                activation: Activation::Tanh,
            },
            params: p,
        };
        let mut g = Graph::new();
        let b = d.params.bind(&mut g);
        let x = g.variable(Tensor::scalar(0.0));
        let gx = input_gradient(&d, &mut g, &b, 0, x).unwrap();
        assert!((g.value(gx).item() - 0.7 * -1.3).abs() < 1e-15);
    }

    #[test]
    fn terrain_encoder_shapes() {
        let dims = TerrainEncoderDims::default();
        assert_eq!(dims.flat_dim(), 4 * 16);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ParamTree::new();
        init_terrain_encoder(&mut p, "t.", &dims, &mut rng);
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let x = g.constant(Tensor::zeros(&[3, 32]));
        let y = terrain_encoder_forward(&mut g, &b, "t.", &dims, x).unwrap();
        assert_eq!(g.value(y).shape(), &[3, 16]);
    }

    #[test]
    fn policy_forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = PolicyNet::new(NetDims::default(), &mut rng);
        let obs = Tensor::matrix(2, 192, (0..384).map(|i| (i as f64 * 0.37).sin()).collect());
        let goal = Tensor::matrix(2, 3, vec![1.0, 2.0, 1.2, -1.0, 0.5, 1.4]);
        let (m1, l1) = p.act(&obs, &goal).unwrap();
        let (m2, l2) = p.act(&obs, &goal).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(l1, l2);
        assert_eq!(m1.shape(), &[2, 6]);
    }
}
