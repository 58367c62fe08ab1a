//! Experiment configuration: which task to train on, how, and where results go.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapt::{build_adapted, prune_locked, prune_policy, AdaptError, AdaptedPolicy, AdapterConfig};
use crate::motion::{generate_clip, style_preset, ReferenceClip, STYLES};
use crate::neural::{read_checkpoint, save_checkpoint, DiscConfig, NetDims, NeuralError, PolicyNet};
use crate::physics::{apply_morphology, morphology_preset, Morphology, TerrainParams};
use crate::trainer::{EnvConfig, GoalConfig, PerturbConfig, RolloutBatch, Task, TrainConfig, TrainError};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Invalid(String),
    #[error("config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Train(#[from] TrainError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Adapt(#[from] AdaptError),
}

/// The task variant. Written in configs as `pretrain`, `style:<preset>`,
/// `morphology:<preset>`, `friction:<mu>`, `terrain` or `perturb:<force N>`.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum Scenario {
    #[default]
    Pretrain,
    Style(String),
    Morphology(String),
    Friction(f64),
    Terrain,
    Perturb(f64),
}

impl FromStr for Scenario {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        let bad = |m: String| ConfigError::Invalid(m);
        let num = |a: Option<&str>| -> Result<f64, ConfigError> {
            let a = a.ok_or_else(|| bad(format!("scenario `{kind}` needs a value")))?;
            a.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| bad(format!("scenario `{s}`: `{a}` is not a non-negative number")))
        };
        Ok(match kind {
            "pretrain" if arg.is_none() => Scenario::Pretrain,
            "terrain" if arg.is_none() => Scenario::Terrain,
            "style" => {
                let name = arg.unwrap_or_default();
                if style_preset(name).is_none() {
                    return Err(bad(format!("unknown style `{name}` (known: {})", STYLES.join(", "))));
                }
                Scenario::Style(name.into())
            }
            "morphology" => {
                let name = arg.unwrap_or_default();
                if morphology_preset(name).is_none() {
                    return Err(bad(format!("unknown morphology preset `{name}`")));
                }
                Scenario::Morphology(name.into())
            }
            "friction" => Scenario::Friction(num(arg)?),
            "perturb" => Scenario::Perturb(num(arg)?),
            _ => return Err(bad(format!("unknown scenario `{s}`"))),
        })
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::Pretrain => write!(f, "pretrain"),
            Scenario::Style(s) => write!(f, "style:{s}"),
            Scenario::Morphology(s) => write!(f, "morphology:{s}"),
            Scenario::Friction(mu) => write!(f, "friction:{mu}"),
            Scenario::Terrain => write!(f, "terrain"),
            Scenario::Perturb(n) => write!(f, "perturb:{n}"),
        }
    }
}

impl Serialize for Scenario {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Scenario {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// How the policy for a non-pretraining scenario is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Frozen base plus injector and trunk adapters.
    #[default]
    Adaptnet,
    /// Fresh policy.
    Scratch,
    /// Every base parameter trainable.
    Finetune,
    /// Fine-tuning with a pull towards the pre-trained weights.
    FinetuneReg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub workers: usize,
    /// Control ticks per worker.
    pub steps: usize,
    /// Number of α values in an interpolation schedule, 0 and 1 included.
    pub alpha_steps: usize,
    pub stochastic: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            workers: 8,
            steps: 300,
            alpha_steps: 5,
            stochastic: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatentSettings {
    pub episodes: usize,
    pub steps: usize,
    /// Keep every n-th sample before the O(n²) distance matrix.
    pub stride: usize,
}

impl Default for LatentSettings {
    fn default() -> Self {
        Self {
            episodes: 2,
            steps: 150,
            stride: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeSettings {
    pub host: String,
    pub port: u16,
    /// Stop after this many control ticks (unbounded when absent).
    pub max_ticks: Option<u64>,
    /// Run the control loop at wall-clock rate rather than as fast as possible.
    pub realtime: bool,
}

impl Default for ServeSettings {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8765,
            max_ticks: None,
            realtime: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub method: Method,
    pub seed: u64,
    pub out: PathBuf,
    /// Pre-trained policy checkpoint; required by every command but `pretrain`.
    pub base: Option<PathBuf>,
    /// Adapter checkpoints used by `eval`, `interp`, `latent` and `serve`.
    pub adapters: Vec<PathBuf>,
    /// Reference style of the task; a `style:` scenario overrides it.
    pub style: String,
    pub dims: NetDims,
    pub train: TrainConfig,
    pub disc: DiscConfig,
    pub adapter: AdapterConfig,
    pub goal: GoalConfig,
    /// Probability of starting an episode from a random reference frame.
    pub reference_init: f64,
    /// Episode time limit, s.
    pub max_time: f64,
    pub terrain: TerrainParams,
    pub perturb: PerturbConfig,
    pub eval: EvalSettings,
    pub latent: LatentSettings,
    pub serve: ServeSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Pretrain,
            method: Method::Adaptnet,
            seed: 0,
            out: PathBuf::from("runs"),
            base: None,
            adapters: vec![],
            style: "walk".into(),
            dims: NetDims::default(),
            train: TrainConfig::default(),
            disc: DiscConfig::default(),
            adapter: AdapterConfig::default(),
            goal: GoalConfig::default(),
            reference_init: 0.5,
            max_time: 10.0,
            terrain: TerrainParams::default(),
            perturb: PerturbConfig::default(),
            eval: EvalSettings::default(),
            latent: LatentSettings::default(),
            serve: ServeSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    /// Everything that can be checked without touching checkpoints.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train.validate()?;
        if style_preset(&self.style).is_none() {
            return Err(ConfigError::Invalid(format!("unknown style `{}`", self.style)));
        }
        if !(0.0..=1.0).contains(&self.reference_init) {
            return Err(ConfigError::Invalid("reference_init must lie in [0, 1]".into()));
        }
        if !(self.max_time > 0.0) {
            return Err(ConfigError::Invalid("max_time must be positive".into()));
        }
        if self.eval.workers == 0 || self.eval.steps == 0 {
            return Err(ConfigError::Invalid("eval needs at least one worker and one step".into()));
        }
        if self.eval.alpha_steps < 2 {
            return Err(ConfigError::Invalid("eval.alpha_steps must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.adapter.alpha) {
            return Err(ConfigError::Invalid(format!("adapter.alpha {} outside [0, 1]", self.adapter.alpha)));
        }
        if self.disc.heads == 0 {
            return Err(ConfigError::Invalid("disc.heads must be at least 1".into()));
        }
        if self.latent.stride == 0 {
            return Err(ConfigError::Invalid("latent.stride must be at least 1".into()));
        }
        self.morphology()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let v = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&v))
    }

    pub fn morphology(&self) -> Result<Morphology, ConfigError> {
        let base = Morphology::biped();
        match &self.scenario {
            Scenario::Morphology(name) => {
                let edits = morphology_preset(name).ok_or_else(|| ConfigError::Invalid(format!("unknown preset `{name}`")))?;
                apply_morphology(&base, &edits).map_err(|e| ConfigError::Invalid(e.to_string()))
            }
            _ => Ok(base),
        }
    }

    /// Indices (into the base action vector) of joints locked by the scenario.
    pub fn locked_outputs(&self) -> Result<Vec<usize>, ConfigError> {
        let m = self.morphology()?;
        // the base policy drives every joint of the unedited biped
        Ok((0..m.joints.len()).filter(|&j| m.joints[j].locked).collect())
    }

    pub fn style_name(&self) -> &str {
        match &self.scenario {
            Scenario::Style(s) => s,
            _ => &self.style,
        }
    }

    pub fn clip(&self) -> Result<ReferenceClip, ConfigError> {
        let name = self.style_name();
        let params = style_preset(name).ok_or_else(|| ConfigError::Invalid(format!("unknown style `{name}`")))?;
        generate_clip(name, &params, &self.morphology()?).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn env(&self) -> Result<EnvConfig, ConfigError> {
        let mut env = EnvConfig {
            morphology: self.morphology()?,
            goal: self.goal.clone(),
            reference_init: self.reference_init,
            max_time: self.max_time,
            ..Default::default()
        };
        match &self.scenario {
            Scenario::Friction(mu) => env.friction = *mu,
            Scenario::Terrain => env.terrain = Some(self.terrain.clone()),
            Scenario::Perturb(force) => {
                env.perturb = Some(PerturbConfig {
                    force: *force,
                    ..self.perturb.clone()
                })
            }
            _ => {}
        }
        Ok(env)
    }

    pub fn task(&self) -> Result<Task, ConfigError> {
        Ok(Task {
            env: self.env()?,
            clip: self.clip()?,
        })
    }

    /// The adapter config actually used: terrain scenarios read the heightfield.
    pub fn adapter_config(&self) -> AdapterConfig {
        let mut c = self.adapter.clone();
        if self.scenario == Scenario::Terrain {
            c.terrain = true;
        }
        c
    }

    /// Freshly initialized policy for this config's morphology.
    pub fn fresh_policy(&self) -> Result<PolicyNet, ConfigError> {
        let mut dims = self.dims.clone();
        dims.action_dim = self.morphology()?.num_actuated();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok(PolicyNet::new(dims, &mut rng))
    }

    /// `base` with the outputs of locked joints removed. Adapters trained on
    /// an edited body record this policy's hash.
    pub fn task_base(&self, base: &PolicyNet) -> Result<PolicyNet, ConfigError> {
        let locked = self.locked_outputs()?;
        if locked.is_empty() {
            return Ok(base.clone());
        }
        Ok(prune_policy(base, &locked)?)
    }

    /// AdaptNet wrapper around `base`, pruned for locked joints.
    pub fn adapted_policy(&self, base: &PolicyNet) -> Result<AdaptedPolicy, ConfigError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed);
        let mut p = build_adapted(base, self.adapter_config(), &mut rng)?;
        p.beta = self.train.beta;
        p.kappa = self.train.kappa;
        let locked = self.locked_outputs()?;
        if !locked.is_empty() {
            p = prune_locked(&p, &locked)?;
        }
        Ok(p)
    }
}

/// Mean injection norm over a rollout batch, for [`crate::trainer::Trainer::probe`].
pub fn injection_probe(p: &AdaptedPolicy, b: &RolloutBatch) -> f64 {
    p.injection_norm(&b.obs, &b.goal, b.terrain.as_ref()).unwrap_or(f64::NAN)
}

/// Manifest stored with a base policy checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyManifest {
    pub kind: String,
    pub dims: NetDims,
    #[serde(default)]
    pub config_hash: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub iterations: Option<usize>,
}

pub fn save_policy(net: &PolicyNet, manifest: &PolicyManifest, path: impl AsRef<Path>) -> Result<(), ConfigError> {
    let v = serde_json::to_value(manifest)?;
    save_checkpoint(&net.params, &v, path)?;
    Ok(())
}

/// Read a policy checkpoint; its manifest supplies the layer widths.
pub fn load_policy(path: impl AsRef<Path>) -> Result<PolicyNet, ConfigError> {
    let ck = read_checkpoint(path.as_ref())?;
    let m: PolicyManifest = serde_json::from_value(ck.manifest)
        .map_err(|e| ConfigError::Invalid(format!("{}: not a policy checkpoint ({e})", path.as_ref().display())))?;
    if m.kind != "policy" {
        return Err(ConfigError::Invalid(format!(
            "{}: expected a policy checkpoint, found `{}`",
            path.as_ref().display(),
            m.kind
        )));
    }
    let mut params = ck.params;
    params.unfreeze_all();
    Ok(PolicyNet::from_params(m.dims, params)?)
}
