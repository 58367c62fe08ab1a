use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::AdaptError;
use crate::neural::{
    encoder_forward, init_linear, init_terrain_encoder, linear, terrain_encoder_forward, Bound, Graph, NetDims,
    NeuralError, ParamTree, PolicyNet, PolicyOutput, Tensor, TerrainEncoderDims, Var,
};
use crate::trainer::Actor;

/// Latent layer(s) that receive the injector's offset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionSite {
    #[default]
    Z0,
    Z1,
    Z2,
    #[serde(rename = "z0_2")]
    Z0To2,
}

impl InjectionSite {
    /// Latent indices written by the injector.
    pub fn layers(self) -> Vec<usize> {
        match self {
            Self::Z0 => vec![0],
            Self::Z1 => vec![1],
            Self::Z2 => vec![2],
            Self::Z0To2 => vec![0, 1, 2],
        }
    }

    pub const ALL: [InjectionSite; 4] = [Self::Z0, Self::Z1, Self::Z2, Self::Z0To2];
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AdapterKind {
    None,
    #[default]
    FullRank,
    Lora {
        rank: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdapterConfig {
    pub site: InjectionSite,
    pub kind: AdapterKind,
    /// Feed the heightfield window through a convolutional encoder into the injector.
    pub terrain: bool,
    /// Adapters on the action head are not supported; `true` is rejected.
    pub adapt_head: bool,
    /// Default adaptation scale.
    pub alpha: f64,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            site: InjectionSite::Z0,
            kind: AdapterKind::FullRank,
            terrain: false,
            adapt_head: false,
            alpha: 1.0,
        }
    }
}

/// One adapter set inside a parameter tree: names start with `prefix`,
/// contribution scaled by `weight`.
pub(crate) struct Part<'a> {
    pub prefix: &'a str,
    pub config: &'a AdapterConfig,
    pub weight: f64,
}

/// Frozen base under `base.`, plus the injector (`inj.`) and trunk adapters
/// (`ada.`) of every part.
pub(crate) fn forward_parts(
    g: &mut Graph,
    b: &Bound,
    dims: &NetDims,
    parts: &[Part],
    obs: Var,
    goal: Var,
    terrain: Option<Var>,
) -> Result<PolicyOutput, NeuralError> {
    let depth = dims.trunk.len();
    let mut site_terms: Vec<Vec<Var>> = vec![vec![]; depth + 1];
    let mut injection = None;
    for (k, p) in parts.iter().enumerate() {
        let e = encoder_forward(g, b, &format!("{}inj.enc.", p.prefix), dims, obs, goal)?;
        let x = if p.config.terrain {
            let c = terrain.ok_or(NeuralError::MissingParam("terrain input".into()))?;
            let f = terrain_encoder_forward(g, b, &format!("{}inj.terrain.", p.prefix), &TerrainEncoderDims::default(), c)?;
            g.concat(&[e, f])?
        } else {
            e
        };
        let h = linear(g, b, &format!("{}inj.fc0", p.prefix), x)?;
        let h = g.relu(h);
        let mut outs = vec![];
        for i in p.config.site.layers() {
            let o = linear(g, b, &format!("{}inj.out{i}", p.prefix), h)?;
            outs.push(o);
            let s = g.scale(o, p.weight);
            site_terms[i].push(s);
        }
        if k == 0 {
            injection = Some(if outs.len() == 1 { outs[0] } else { g.concat(&outs)? });
        }
    }

    let mut z = encoder_forward(g, b, "base.enc.", dims, obs, goal)?;
    for &t in &site_terms[0] {
        z = g.add(z, t)?;
    }
    let mut latents = vec![z];
    for i in 0..depth {
        let mut pre = linear(g, b, &format!("base.trunk.{i}"), z)?;
        for p in parts {
            let delta = match p.config.kind {
                AdapterKind::None => continue,
                AdapterKind::FullRank => linear(g, b, &format!("{}ada.{i}", p.prefix), z)?,
                AdapterKind::Lora { .. } => {
                    let lb = b.get(&format!("{}ada.{i}.lora_b", p.prefix))?;
                    let la = b.get(&format!("{}ada.{i}.lora_a", p.prefix))?;
                    let bias = b.get(&format!("{}ada.{i}.b", p.prefix))?;
                    let zb = g.matmul(z, lb)?;
                    let zba = g.matmul(zb, la)?;
                    g.add_row(zba, bias)?
                }
            };
            let d = g.scale(delta, p.weight);
            pre = g.add(pre, d)?;
        }
        z = g.relu(pre);
        for &t in &site_terms[i + 1] {
            z = g.add(z, t)?;
        }
        latents.push(z);
    }
    let mean = linear(g, b, "base.head", z)?;
    let log_std = b.get("base.log_std")?;
    Ok(PolicyOutput {
        mean,
        log_std,
        latents,
        injection,
    })
}

/// `β·mean‖I‖₂ + κ‖η‖₂`, unsquared norms.
pub fn regularizer(g: &mut Graph, injection: Var, eta: Option<Var>, beta: f64, kappa: f64) -> Var {
    let n = g.row_norm(injection);
    let m = g.mean_all(n);
    let mut r = g.scale(m, beta);
    if let Some(e) = eta {
        let en = g.row_norm(e);
        let en = g.scale(en, kappa);
        r = g.add(r, en).expect("scalar shapes");
    }
    r
}

/// Flattened effective adapter increments `[1, |η|]` (LoRA contributes `B·A`).
pub(crate) fn eta_row(g: &mut Graph, b: &Bound, prefix: &str, config: &AdapterConfig, depth: usize) -> Result<Option<Var>, NeuralError> {
    let mut parts = vec![];
    for i in 0..depth {
        let w = match config.kind {
            AdapterKind::None => return Ok(None),
            AdapterKind::FullRank => b.get(&format!("{prefix}ada.{i}.w"))?,
            AdapterKind::Lora { .. } => {
                let lb = b.get(&format!("{prefix}ada.{i}.lora_b"))?;
                let la = b.get(&format!("{prefix}ada.{i}.lora_a"))?;
                g.matmul(lb, la)?
            }
        };
        let bias = b.get(&format!("{prefix}ada.{i}.b"))?;
        for v in [w, bias] {
            let n = g.value(v).len();
            parts.push(g.reshape(v, 1, n)?);
        }
    }
    if parts.is_empty() {
        return Ok(None);
    }
    Ok(Some(g.concat(&parts)?))
}

/// Frozen base policy with an injector and optional trunk adapters.
#[derive(Clone, Debug)]
pub struct AdaptedPolicy {
    pub dims: NetDims,
    pub config: AdapterConfig,
    pub params: ParamTree,
    pub alpha: f64,
    /// Content hash of the base parameters this adapter was built on.
    pub base_hash: String,
    pub beta: f64,
    pub kappa: f64,
}

/// Wrap `base` with zero-initialized adapters. Every base entry is frozen.
pub fn build_adapted<R: Rng>(base: &PolicyNet, config: AdapterConfig, rng: &mut R) -> Result<AdaptedPolicy, AdaptError> {
    let dims = base.dims.clone();
    let depth = dims.trunk.len();
    if config.adapt_head {
        return Err(AdaptError::Config("adapters on the action head are not supported".into()));
    }
    if !(0.0..=1.0).contains(&config.alpha) {
        return Err(AdaptError::Alpha(config.alpha));
    }
    if config.site.layers().iter().any(|&i| i > depth) {
        return Err(AdaptError::Config(format!(
            "injection site {:?} is deeper than the {depth}-layer trunk",
            config.site
        )));
    }
    let widths = dims.latent_widths();
    if let AdapterKind::Lora { rank } = config.kind {
        let max = (0..depth).map(|i| widths[i].min(widths[i + 1])).min().unwrap_or(0);
        if rank == 0 || rank > max {
            return Err(AdaptError::Config(format!("LoRA rank {rank} outside 1..={max}")));
        }
    }

    let mut params = ParamTree::new();
    params.graft("base", &base.params);
    params.freeze_all();
    let enc = base.params.subtree("enc");
    let mut enc_copy = ParamTree::new();
    enc_copy.graft("enc", &enc);
    enc_copy.unfreeze_all();
    params.graft("inj", &enc_copy);

    let mut h_in = dims.latent_dim();
    if config.terrain {
        let t = TerrainEncoderDims::default();
        init_terrain_encoder(&mut params, "inj.terrain.", &t, rng);
        h_in += t.out;
    }
    let hidden = dims.latent_dim();
    init_linear(&mut params, "inj.fc0", h_in, hidden, 2f64.sqrt(), rng);
    for i in config.site.layers() {
        params.insert(format!("inj.out{i}.w"), Tensor::zeros(&[hidden, widths[i]]));
        params.insert(format!("inj.out{i}.b"), Tensor::zeros(&[1, widths[i]]));
    }
    for i in 0..depth {
        let (fin, fout) = (widths[i], widths[i + 1]);
        match config.kind {
            AdapterKind::None => {}
            AdapterKind::FullRank => {
                params.insert(format!("ada.{i}.w"), Tensor::zeros(&[fin, fout]));
                params.insert(format!("ada.{i}.b"), Tensor::zeros(&[1, fout]));
            }
            AdapterKind::Lora { rank } => {
                let s = 1.0 / (fin as f64).sqrt();
                let a: Vec<f64> = (0..rank * fout).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect();
                params.insert(format!("ada.{i}.lora_b"), Tensor::zeros(&[fin, rank]));
                params.insert(format!("ada.{i}.lora_a"), Tensor::matrix(rank, fout, a));
                params.insert(format!("ada.{i}.b"), Tensor::zeros(&[1, fout]));
            }
        }
    }
    let policy = AdaptedPolicy {
        dims,
        alpha: config.alpha,
        config,
        params,
        base_hash: base.params.content_hash(),
        beta: 0.01,
        kappa: 0.01,
    };
    policy.probe_identity(base, 16, rng)?;
    Ok(policy)
}

impl AdaptedPolicy {
    pub fn set_alpha(&mut self, alpha: f64) -> Result<(), AdaptError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(AdaptError::Alpha(alpha));
        }
        self.alpha = alpha;
        self.config.alpha = alpha;
        Ok(())
    }

    /// The frozen base as a plain policy.
    pub fn base(&self) -> PolicyNet {
        let mut p = self.params.subtree("base");
        p.unfreeze_all();
        PolicyNet {
            dims: self.dims.clone(),
            params: p,
        }
    }

    /// Injector and adapter entries (everything outside `base.`).
    pub fn adapter_params(&self) -> ParamTree {
        let mut out = ParamTree::new();
        for (k, t) in self.params.iter() {
            if !k.starts_with("base.") {
                out.insert(k.clone(), t.clone());
            }
        }
        out
    }

    pub fn trainable_count(&self) -> usize {
        self.params.num_scalars(true)
    }

    fn check_terrain(&self, terrain: Option<&Tensor>) -> Result<(), AdaptError> {
        if self.config.terrain && terrain.is_none() {
            return Err(AdaptError::MissingTerrain);
        }
        Ok(())
    }

    /// Action mean and `log_std` at scale `alpha`.
    pub fn forward_alpha(
        &self,
        alpha: f64,
        obs: &Tensor,
        goal: &Tensor,
        terrain: Option<&Tensor>,
    ) -> Result<(Tensor, Tensor), AdaptError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(AdaptError::Alpha(alpha));
        }
        self.check_terrain(terrain)?;
        let mut g = Graph::new();
        let b = self.params.bind_constant(&mut g);
        let (o, gl) = (g.constant(obs.clone()), g.constant(goal.clone()));
        let t = terrain.map(|t| g.constant(t.clone()));
        let parts = [Part {
            prefix: "",
            config: &self.config,
            weight: alpha,
        }];
        let out = forward_parts(&mut g, &b, &self.dims, &parts, o, gl, t)?;
        Ok((g.value(out.mean).clone(), g.value(out.log_std).clone()))
    }

    /// `(E_ξ(s), I_φ(s,c), injected z⁰)` for a batch. The injection covers
    /// every configured site, concatenated.
    pub fn latents(
        &self,
        obs: &Tensor,
        goal: &Tensor,
        terrain: Option<&Tensor>,
    ) -> Result<(Tensor, Tensor, Tensor), AdaptError> {
        self.check_terrain(terrain)?;
        let mut g = Graph::new();
        let b = self.params.bind_constant(&mut g);
        let (o, gl) = (g.constant(obs.clone()), g.constant(goal.clone()));
        let t = terrain.map(|t| g.constant(t.clone()));
        let base = encoder_forward(&mut g, &b, "base.enc.", &self.dims, o, gl)?;
        let parts = [Part {
            prefix: "",
            config: &self.config,
            weight: self.alpha,
        }];
        let out = forward_parts(&mut g, &b, &self.dims, &parts, o, gl, t)?;
        let inj = out.injection.expect("injector always present");
        Ok((g.value(base).clone(), g.value(inj).clone(), g.value(out.latents[0]).clone()))
    }

    /// Mean `‖I_φ(s,c)‖₂` over a batch.
    pub fn injection_norm(&self, obs: &Tensor, goal: &Tensor, terrain: Option<&Tensor>) -> Result<f64, AdaptError> {
        let (_, inj, _) = self.latents(obs, goal, terrain)?;
        let n = inj.rows().max(1);
        Ok((0..inj.rows())
            .map(|i| inj.row_slice(i).iter().map(|x| x * x).sum::<f64>().sqrt())
            .sum::<f64>()
            / n as f64)
    }

    fn probe_identity<R: Rng>(&self, base: &PolicyNet, n: usize, rng: &mut R) -> Result<(), AdaptError> {
        let mut sample = |c: usize| -> Tensor {
            Tensor::matrix(n, c, (0..n * c).map(|_| rng.sample(StandardNormal)).collect())
        };
        let obs = sample(self.dims.obs_dim());
        let goal = sample(self.dims.goal_dim);
        let terrain = self
            .config
            .terrain
            .then(|| sample(TerrainEncoderDims::default().window));
        let (want, _) = base.act(&obs, &goal)?;
        let (got, _) = self.forward_alpha(self.alpha, &obs, &goal, terrain.as_ref())?;
        if got.data() != want.data() {
            return Err(AdaptError::Config("zero-init probe: adapted output differs from base".into()));
        }
        Ok(())
    }
}

impl Actor for AdaptedPolicy {
    fn dims(&self) -> &NetDims {
        &self.dims
    }

    fn params(&self) -> &ParamTree {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamTree {
        &mut self.params
    }

    fn uses_terrain(&self) -> bool {
        self.config.terrain
    }

    fn forward(
        &self,
        g: &mut Graph,
        b: &Bound,
        obs: Var,
        goal: Var,
        terrain: Option<Var>,
    ) -> Result<PolicyOutput, NeuralError> {
        let parts = [Part {
            prefix: "",
            config: &self.config,
            weight: self.alpha,
        }];
        forward_parts(g, b, &self.dims, &parts, obs, goal, terrain)
    }

    fn extra_loss(
        &self,
        g: &mut Graph,
        b: &Bound,
        _obs: Var,
        _goal: Var,
        _terrain: Option<Var>,
        out: &PolicyOutput,
    ) -> Result<Option<Var>, NeuralError> {
        let Some(inj) = out.injection else {
            return Ok(None);
        };
        let eta = eta_row(g, b, "", &self.config, self.dims.trunk.len())?;
        Ok(Some(regularizer(g, inj, eta, self.beta, self.kappa)))
    }
}
