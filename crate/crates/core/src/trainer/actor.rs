use crate::neural::{
    Bound, Graph, NetDims, NeuralError, ParamTree, PolicyNet, PolicyOutput, Tensor, Var,
};

/// A trainable Gaussian policy as seen by the trainer.
pub trait Actor {
    fn dims(&self) -> &NetDims;
    fn params(&self) -> &ParamTree;
    fn params_mut(&mut self) -> &mut ParamTree;
    /// Whether the policy reads the heightfield window.
    fn uses_terrain(&self) -> bool {
        false
    }

    /// Bind parameters to `g`; frozen entries become constants.
    fn bind(&self, g: &mut Graph) -> Bound {
        self.params().bind(g)
    }

    fn forward(
        &self,
        g: &mut Graph,
        b: &Bound,
        obs: Var,
        goal: Var,
        terrain: Option<Var>,
    ) -> Result<PolicyOutput, NeuralError>;

    /// Regularization added to the policy loss.
    fn extra_loss(
        &self,
        _g: &mut Graph,
        _b: &Bound,
        _obs: Var,
        _goal: Var,
        _terrain: Option<Var>,
        _out: &PolicyOutput,
    ) -> Result<Option<Var>, NeuralError> {
        Ok(None)
    }

    /// Action means, `log_std`, and `z⁰` for a batch, with no gradient tracking.
    fn infer(
        &self,
        obs: &Tensor,
        goal: &Tensor,
        terrain: Option<&Tensor>,
    ) -> Result<(Tensor, Tensor, Tensor), NeuralError> {
        let mut g = Graph::new();
        let b = self.params().bind_constant(&mut g);
        let o = g.constant(obs.clone());
        let gl = g.constant(goal.clone());
        let t = terrain.map(|t| g.constant(t.clone()));
        let out = self.forward(&mut g, &b, o, gl, t)?;
        Ok((
            g.value(out.mean).clone(),
            g.value(out.log_std).clone(),
            g.value(out.latents[0]).clone(),
        ))
    }
}

impl Actor for PolicyNet {
    fn dims(&self) -> &NetDims {
        &self.dims
    }

    fn params(&self) -> &ParamTree {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamTree {
        &mut self.params
    }

    fn forward(
        &self,
        g: &mut Graph,
        b: &Bound,
        obs: Var,
        goal: Var,
        _terrain: Option<Var>,
    ) -> Result<PolicyOutput, NeuralError> {
        PolicyNet::forward(self, g, b, obs, goal)
    }
}

/// Fine-tuning baseline that penalizes `λ‖W − W_pre‖₂` over all policy parameters.
#[derive(Clone, Debug)]
pub struct RegularizedPolicy {
    pub net: PolicyNet,
    pub anchor: ParamTree,
    pub lambda: f64,
}

impl RegularizedPolicy {
    pub fn new(net: PolicyNet, lambda: f64) -> Self {
        let anchor = net.params.clone();
        Self { net, anchor, lambda }
    }
}

impl Actor for RegularizedPolicy {
    fn dims(&self) -> &NetDims {
        &self.net.dims
    }

    fn params(&self) -> &ParamTree {
        &self.net.params
    }

    fn params_mut(&mut self) -> &mut ParamTree {
        &mut self.net.params
    }

    fn forward(
        &self,
        g: &mut Graph,
        b: &Bound,
        obs: Var,
        goal: Var,
        _terrain: Option<Var>,
    ) -> Result<PolicyOutput, NeuralError> {
        self.net.forward(g, b, obs, goal)
    }

    fn extra_loss(
        &self,
        g: &mut Graph,
        b: &Bound,
        _obs: Var,
        _goal: Var,
        _terrain: Option<Var>,
        _out: &PolicyOutput,
    ) -> Result<Option<Var>, NeuralError> {
        let mut parts = vec![];
        for (name, t) in self.anchor.iter() {
            let v = b.get(name)?;
            let a = g.constant(t.clone());
            let d = g.sub(v, a)?;
            parts.push(g.reshape(d, 1, t.len())?);
        }
        let flat = g.concat(&parts)?;
        let norm = g.row_norm(flat);
        Ok(Some(g.scale(norm, self.lambda)))
    }
}
