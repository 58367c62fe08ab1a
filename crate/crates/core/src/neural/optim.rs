use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ParamTree, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Adam. Frozen entries of the tree are never written.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, tree: &mut ParamTree, grads: &BTreeMap<String, Tensor>) {
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (name, g) in grads {
            if tree.is_frozen(name) {
                continue;
            }
            let Ok(p) = tree.get_mut(name) else { continue };
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                let gi = g.data()[i];
                md[i] = c.beta1 * md[i] + (1.0 - c.beta1) * gi;
                vd[i] = c.beta2 * vd[i] + (1.0 - c.beta2) * gi * gi;
                let mh = md[i] / bc1;
                let vh = vd[i] / bc2;
                pd[i] -= c.lr * mh / (vh.sqrt() + c.eps);
            }
        }
    }
}

/// Rescale gradients so their global norm is at most `max_norm`. Returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .map(|g| g.data().iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_entries_untouched() {
        let mut t = ParamTree::new();
        t.insert("a", Tensor::row(vec![1.0, 2.0]));
        t.insert("b", Tensor::row(vec![3.0]));
        t.freeze("a");
        let before = t.get("a").unwrap().clone();
        let mut grads = BTreeMap::new();
        grads.insert("a".to_string(), Tensor::row(vec![1.0, 1.0]));
        grads.insert("b".to_string(), Tensor::row(vec![1.0]));
        let mut opt = Adam::new(AdamConfig::with_lr(0.1));
        for _ in 0..5 {
            opt.step(&mut t, &grads);
        }
        assert_eq!(t.get("a").unwrap(), &before);
        assert!(t.get("b").unwrap().item() < 3.0);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut t = ParamTree::new();
        t.insert("w", Tensor::row(vec![0.0]));
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::row(vec![-4.0]));
        let mut opt = Adam::new(AdamConfig::with_lr(0.01));
        opt.step(&mut t, &grads);
        assert!((t.get("w").unwrap().item() - 0.01).abs() < 1e-9);
    }

    #[test]
    fn clip_scales_to_max() {
        let mut grads = BTreeMap::new();
        grads.insert("a".to_string(), Tensor::row(vec![3.0, 4.0]));
        let n = clip_grad_norm(&mut grads, 1.0);
        assert_eq!(n, 5.0);
        assert!((grads["a"].norm() - 1.0).abs() < 1e-12);
    }
}
