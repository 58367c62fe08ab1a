use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};

use super::{Graph, NeuralError, Tensor, Var};

/// Named parameter arrays plus the set of names the optimizer must not touch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamTree {
    entries: BTreeMap<String, Tensor>,
    frozen: BTreeSet<String>,
}

impl ParamTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, NeuralError> {
        self.entries
            .get(name)
            .ok_or_else(|| NeuralError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, NeuralError> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| NeuralError::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.frozen.remove(name);
        self.entries.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn freeze(&mut self, name: &str) {
        if self.entries.contains_key(name) {
            self.frozen.insert(name.to_string());
        }
    }

    pub fn unfreeze(&mut self, name: &str) {
        self.frozen.remove(name);
    }

    pub fn freeze_all(&mut self) {
        self.frozen = self.entries.keys().cloned().collect();
    }

    pub fn unfreeze_all(&mut self) {
        self.frozen.clear();
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    pub fn frozen(&self) -> &BTreeSet<String> {
        &self.frozen
    }

    /// Number of scalar parameters, optionally restricted to trainable entries.
    pub fn num_scalars(&self, trainable_only: bool) -> usize {
        self.entries
            .iter()
            .filter(|(k, _)| !trainable_only || !self.frozen.contains(*k))
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Entries under `prefix.`, with the prefix stripped.
    pub fn subtree(&self, prefix: &str) -> ParamTree {
        let p = format!("{prefix}.");
        let mut out = ParamTree::new();
        for (k, t) in &self.entries {
            if let Some(rest) = k.strip_prefix(&p) {
                out.entries.insert(rest.to_string(), t.clone());
                if self.frozen.contains(k) {
                    out.frozen.insert(rest.to_string());
                }
            }
        }
        out
    }

    /// Insert every entry of `other` under `prefix.`, keeping its frozen flags.
    pub fn graft(&mut self, prefix: &str, other: &ParamTree) {
        for (k, t) in &other.entries {
            let name = format!("{prefix}.{k}");
            if other.frozen.contains(k) {
                self.frozen.insert(name.clone());
            }
            self.entries.insert(name, t.clone());
        }
    }

    /// SHA-256 over names, shapes and the 32-bit stored values.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, t) in &self.entries {
            h.update(k.as_bytes());
            h.update([0u8]);
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for &x in t.data() {
                h.update((x as f32).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Put every entry on `g`; frozen entries become constants.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        self.bind_with(g, |name| !self.frozen.contains(name))
    }

    /// Put every entry on `g` as a constant (inference only).
    pub fn bind_constant(&self, g: &mut Graph) -> Bound {
        self.bind_with(g, |_| false)
    }

    pub fn bind_with(&self, g: &mut Graph, trainable: impl Fn(&str) -> bool) -> Bound {
        let mut vars = BTreeMap::new();
        for (k, t) in &self.entries {
            let v = g.leaf(t.clone(), trainable(k));
            vars.insert(k.clone(), v);
        }
        Bound { vars }
    }
}

/// Parameter tree placed on a [`Graph`].
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var, NeuralError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| NeuralError::MissingParam(name.to_string()))
    }

    pub fn extend(&mut self, other: Bound) {
        self.vars.extend(other.vars);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Gradients of `loss` for every bound entry that requires grad.
    /// Missing gradients (no dependency) come back as zeros.
    pub fn grads(
        &self,
        g: &mut Graph,
        loss: Var,
    ) -> Result<BTreeMap<String, Tensor>, NeuralError> {
        let names: Vec<&String> = self
            .vars
            .iter()
            .filter(|(_, v)| g.requires_grad(**v))
            .map(|(k, _)| k)
            .collect();
        let vars: Vec<Var> = names.iter().map(|k| self.vars[*k]).collect();
        let gs = g.grad(loss, &vars)?;
        let mut out = BTreeMap::new();
        for ((name, v), gv) in names.into_iter().zip(vars).zip(gs) {
            let t = match gv {
                Some(gv) => g.value(gv).clone(),
                None => Tensor::zeros(g.value(v).shape()),
            };
            out.insert(name.clone(), t);
        }
        Ok(out)
    }
}
