use std::path::Path;

use serde::{Deserialize, Serialize};

use super::policy::{eta_row, forward_parts, regularizer, Part};
use super::{AdaptError, AdaptedPolicy, AdapterConfig, AdapterKind};
use crate::neural::{
    read_checkpoint, save_checkpoint, Bound, Graph, NetDims, NeuralError, ParamTree, PolicyNet, PolicyOutput, Tensor,
    Var,
};
use crate::trainer::Actor;

/// Fold trunk adapters into the base weights at the current `alpha`:
/// `W' = W + α·ΔW`, `b' = b + α·Δb`. The injector stays a parallel branch.
pub fn merge(policy: &AdaptedPolicy) -> Result<AdaptedPolicy, AdaptError> {
    let mut out = policy.clone();
    let a = policy.alpha;
    for i in 0..policy.dims.trunk.len() {
        let (dw, db) = match policy.config.kind {
            AdapterKind::None => break,
            AdapterKind::FullRank => (
                policy.params.get(&format!("ada.{i}.w"))?.clone(),
                policy.params.get(&format!("ada.{i}.b"))?.clone(),
            ),
            AdapterKind::Lora { .. } => {
                let lb = policy.params.get(&format!("ada.{i}.lora_b"))?;
                let la = policy.params.get(&format!("ada.{i}.lora_a"))?;
                (matmul(lb, la), policy.params.get(&format!("ada.{i}.b"))?.clone())
            }
        };
        for (name, d) in [("w", dw), ("b", db)] {
            let key = format!("base.trunk.{i}.{name}");
            let w = policy.params.get(&key)?;
            *out.params.get_mut(&key)? = merge_linear(w, &d, a);
        }
    }
    let names: Vec<String> = out.params.names().filter(|k| k.starts_with("ada.")).cloned().collect();
    for k in names {
        out.params.remove(&k);
    }
    out.config.kind = AdapterKind::None;
    out.base_hash = out.base().params.content_hash();
    Ok(out)
}

/// `W + α·ΔW`.
pub fn merge_linear(w: &Tensor, dw: &Tensor, alpha: f64) -> Tensor {
    w.zip(dw, |a, d| a + alpha * d)
}

fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let (x, y) = (g.constant(a.clone()), g.constant(b.clone()));
    let p = g.matmul(x, y).expect("LoRA factor shapes");
    g.value(p).clone()
}

fn kept_outputs(action_dim: usize, locked: &[usize]) -> Result<Vec<usize>, AdaptError> {
    if let Some(&bad) = locked.iter().find(|&&i| i >= action_dim) {
        return Err(AdaptError::Prune(format!("output {bad} out of range 0..{action_dim}")));
    }
    let keep: Vec<usize> = (0..action_dim).filter(|i| !locked.contains(i)).collect();
    if keep.is_empty() {
        return Err(AdaptError::Prune("every output would be removed".into()));
    }
    Ok(keep)
}

fn prune_tree(tree: &mut ParamTree, prefix: &str, keep: &[usize]) -> Result<(), AdaptError> {
    for name in ["head.w", "head.b", "log_std"] {
        let key = format!("{prefix}{name}");
        let t = tree.get(&key)?.gather_cols(keep);
        *tree.get_mut(&key)? = t;
    }
    Ok(())
}

/// Remove the action outputs of locked joints (head columns and `log_std` entries).
pub fn prune_policy(policy: &PolicyNet, locked: &[usize]) -> Result<PolicyNet, AdaptError> {
    let keep = kept_outputs(policy.dims.action_dim, locked)?;
    let mut out = policy.clone();
    prune_tree(&mut out.params, "", &keep)?;
    out.dims.action_dim = keep.len();
    Ok(out)
}

pub fn prune_locked(policy: &AdaptedPolicy, locked: &[usize]) -> Result<AdaptedPolicy, AdaptError> {
    let keep = kept_outputs(policy.dims.action_dim, locked)?;
    let mut out = policy.clone();
    prune_tree(&mut out.params, "base.", &keep)?;
    out.dims.action_dim = keep.len();
    out.base_hash = out.base().params.content_hash();
    Ok(out)
}

/// Evaluate `β·mean‖I‖₂ + κ‖η‖₂` for a batch.
pub fn regularizer_value(
    policy: &AdaptedPolicy,
    obs: &Tensor,
    goal: &Tensor,
    terrain: Option<&Tensor>,
) -> Result<f64, AdaptError> {
    if policy.config.terrain && terrain.is_none() {
        return Err(AdaptError::MissingTerrain);
    }
    let mut g = Graph::new();
    let b = policy.params.bind_constant(&mut g);
    let (o, gl) = (g.constant(obs.clone()), g.constant(goal.clone()));
    let t = terrain.map(|t| g.constant(t.clone()));
    let out = Actor::forward(policy, &mut g, &b, o, gl, t)?;
    let eta = eta_row(&mut g, &b, "", &policy.config, policy.dims.trunk.len())?;
    let r = regularizer(&mut g, out.injection.expect("injector"), eta, policy.beta, policy.kappa);
    Ok(g.value(r).item())
}

/// Weighted sum of several adapter sets over one frozen base. With two sets
/// at weights `(α, 1−α)` this is the two-model interpolation.
///
/// Identical sets share one slot whose weight is the sum of theirs, so
/// blending an adapter with itself is exactly that adapter at full weight.
#[derive(Clone, Debug)]
pub struct Blend {
    pub dims: NetDims,
    pub params: ParamTree,
    pub configs: Vec<AdapterConfig>,
    /// Per slot.
    pub weights: Vec<f64>,
    /// Slot of each input set.
    pub slots: Vec<usize>,
    pub base_hash: String,
}

impl Blend {
    pub fn new(sets: &[(&AdaptedPolicy, f64)]) -> Result<Self, AdaptError> {
        let first = sets
            .first()
            .ok_or_else(|| AdaptError::Config("blend needs at least one adapter".into()))?
            .0;
        let mut params = ParamTree::new();
        params.graft("base", &first.params.subtree("base"));
        params.freeze_all();
        let mut configs = vec![];
        let mut hashes: Vec<String> = vec![];
        let mut slots = vec![];
        for (p, _) in sets {
            if p.base_hash != first.base_hash {
                return Err(AdaptError::BaseMismatch {
                    expected: first.base_hash.clone(),
                    found: p.base_hash.clone(),
                });
            }
            if p.dims != first.dims {
                return Err(AdaptError::Config("adapters disagree on network dims".into()));
            }
            let ap = p.adapter_params();
            let mut cfg = p.config.clone();
            cfg.alpha = 1.0;
            let h = format!("{}{}", ap.content_hash(), serde_json::to_string(&cfg).expect("config serializes"));
            match hashes.iter().position(|x| *x == h) {
                Some(k) => slots.push(k),
                None => {
                    params.graft(&format!("s{}", configs.len()), &ap);
                    slots.push(configs.len());
                    configs.push(p.config.clone());
                    hashes.push(h);
                }
            }
        }
        let mut out = Self {
            dims: first.dims.clone(),
            params,
            weights: vec![0.0; configs.len()],
            configs,
            slots,
            base_hash: first.base_hash.clone(),
        };
        let w: Vec<f64> = sets.iter().map(|s| s.1).collect();
        out.set_weights(&w)?;
        Ok(out)
    }

    /// One weight per input set, in construction order.
    pub fn set_weights(&mut self, weights: &[f64]) -> Result<(), AdaptError> {
        if weights.len() != self.slots.len() {
            return Err(AdaptError::Config(format!(
                "{} weights for {} adapters",
                weights.len(),
                self.slots.len()
            )));
        }
        self.weights = vec![0.0; self.configs.len()];
        for (&k, &w) in self.slots.iter().zip(weights) {
            self.weights[k] += w;
        }
        Ok(())
    }

    fn prefixes(&self) -> Vec<String> {
        (0..self.configs.len()).map(|k| format!("s{k}.")).collect()
    }
}

/// `(α, 1−α)` interpolation between two adapters on the same base.
pub fn blend_two(a: &AdaptedPolicy, b: &AdaptedPolicy, alpha: f64) -> Result<Blend, AdaptError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(AdaptError::Alpha(alpha));
    }
    Blend::new(&[(a, alpha), (b, 1.0 - alpha)])
}

impl Actor for Blend {
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
        self.configs.iter().any(|c| c.terrain)
    }

    fn forward(
        &self,
        g: &mut Graph,
        b: &Bound,
        obs: Var,
        goal: Var,
        terrain: Option<Var>,
    ) -> Result<PolicyOutput, NeuralError> {
        let prefixes = self.prefixes();
        let parts: Vec<Part> = prefixes
            .iter()
            .zip(&self.configs)
            .zip(&self.weights)
            .map(|((p, c), &w)| Part {
                prefix: p,
                config: c,
                weight: w,
            })
            .collect();
        forward_parts(g, b, &self.dims, &parts, obs, goal, terrain)
    }
}

/// Manifest stored alongside adapter weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterManifest {
    pub kind: String,
    pub base_hash: String,
    pub config: AdapterConfig,
    pub dims: NetDims,
    pub beta: f64,
    pub kappa: f64,
}

pub fn save_adapter(policy: &AdaptedPolicy, path: impl AsRef<Path>) -> Result<(), AdaptError> {
    let m = AdapterManifest {
        kind: "adapter".into(),
        base_hash: policy.base_hash.clone(),
        config: policy.config.clone(),
        dims: policy.dims.clone(),
        beta: policy.beta,
        kappa: policy.kappa,
    };
    let v = serde_json::to_value(&m).map_err(NeuralError::from)?;
    save_checkpoint(&policy.adapter_params(), &v, path)?;
    Ok(())
}

/// Attach a saved adapter to `base`, refusing a base with a different hash.
pub fn load_adapter(base: &PolicyNet, path: impl AsRef<Path>) -> Result<AdaptedPolicy, AdaptError> {
    let ck = read_checkpoint(path)?;
    let m: AdapterManifest =
        serde_json::from_value(ck.manifest).map_err(|e| AdaptError::Manifest(e.to_string()))?;
    if m.kind != "adapter" {
        return Err(AdaptError::Manifest(format!("expected an adapter checkpoint, found `{}`", m.kind)));
    }
    let found = base.params.content_hash();
    if m.base_hash != found {
        return Err(AdaptError::BaseMismatch {
            expected: m.base_hash,
            found,
        });
    }
    if m.dims != base.dims {
        return Err(AdaptError::Config("adapter dims differ from the base policy".into()));
    }
    let mut params = ParamTree::new();
    params.graft("base", &base.params);
    params.freeze_all();
    for (k, t) in ck.params.iter() {
        params.insert(k.clone(), t.clone());
    }
    Ok(AdaptedPolicy {
        dims: m.dims,
        alpha: m.config.alpha,
        config: m.config,
        params,
        base_hash: m.base_hash,
        beta: m.beta,
        kappa: m.kappa,
    })
}
