//! Actor-critic MLP: shared trunk, softmax policy head, scalar value head.

use crate::dbmodel::Bound;
use crate::error::{Error, Result};
use crate::numcore::{Graph, ParamSet, RngStream, Tensor, Var};

const SLOPE: f64 = 0.01;

#[derive(Clone, Debug)]
pub struct Policy {
    pub obs_dim: usize,
    pub action_count: usize,
    pub hidden: Vec<usize>,
    pub params: ParamSet,
}

/// Graph handles for one policy forward pass.
pub struct PolicyVars {
    pub log_probs: Var,
    pub values: Var,
}

impl Policy {
    /// He-uniform trunk and value head; the policy head is scaled down by 100
    /// so the initial policy is close to uniform.
    pub fn new(
        obs_dim: usize,
        action_count: usize,
        hidden: &[usize],
        rng: &mut RngStream,
    ) -> Result<Self> {
        if obs_dim == 0 || action_count < 2 || hidden.contains(&0) {
            return Err(Error::InvalidArgument(
                "policy needs obs_dim > 0, >= 2 actions, positive widths".into(),
            ));
        }
        let mut params = ParamSet::new();
        let mut layer = |name: String, fan_in: usize, fan_out: usize, scale: f64| {
            let limit = scale * (6.0 / fan_in as f64).sqrt();
            let mut w = Tensor::zeros(&[fan_in, fan_out]);
            w.data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.uniform_range(-limit, limit));
            params.insert(format!("{name}.w"), w);
            params.insert(format!("{name}.b"), Tensor::zeros(&[1, fan_out]));
        };
        let mut width = obs_dim;
        for (i, &h) in hidden.iter().enumerate() {
            layer(format!("trunk.l{i}"), width, h, 1.0);
            width = h;
        }
        layer("pi".into(), width, action_count, 0.01);
        layer("v".into(), width, 1, 1.0);
        Ok(Policy {
            obs_dim,
            action_count,
            hidden: hidden.to_vec(),
            params,
        })
    }

    pub fn forward_var(&self, g: &mut Graph, b: &Bound, x: Var) -> Result<PolicyVars> {
        let got = g.value(x).cols();
        if got != self.obs_dim {
            return Err(Error::dim("policy_forward", self.obs_dim, got));
        }
        let mut h = x;
        for i in 0..self.hidden.len() {
            h = g.linear(
                h,
                b.var(&format!("trunk.l{i}.w"))?,
                b.var(&format!("trunk.l{i}.b"))?,
            )?;
            h = g.leaky_relu(h, SLOPE);
        }
        let logits = g.linear(h, b.var("pi.w")?, b.var("pi.b")?)?;
        let values = g.linear(h, b.var("v.w")?, b.var("v.b")?)?;
        Ok(PolicyVars {
            log_probs: g.log_softmax_rows(logits),
            values,
        })
    }

    /// Action probabilities `[m, A]` and values for rows of `obs`.
    pub fn forward_batch(&self, obs: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let mut g = Graph::new();
        let b = Bound::new(&mut g, &self.params, |_| false);
        let x = g.constant(obs);
        let out = self.forward_var(&mut g, &b, x)?;
        let probs = g.value(out.log_probs).map(f64::exp);
        Ok((probs, g.value(out.values).data().to_vec()))
    }
}

/// Action distribution and value of a single observation.
pub fn policy_forward(obs: &Tensor, policy: &Policy) -> Result<(Vec<f64>, f64)> {
    let (p, v) = policy.forward_batch(obs)?;
    if p.rows() != 1 {
        return Err(Error::dim("policy_forward", "one observation", p.rows()));
    }
    Ok((p.row_slice(0).to_vec(), v[0]))
}
