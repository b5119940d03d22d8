use serde::{Deserialize, Serialize};

use super::gae::normalize_advantages;
use super::policy::Policy;
use crate::dbmodel::Bound;
use crate::error::{Error, Result};
use crate::numcore::{Adam, AdamConfig, Graph, ParamSet, RngStream, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PPOConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub actors: usize,
    pub hidden: Vec<usize>,
}

impl Default for PPOConfig {
    fn default() -> Self {
        PPOConfig {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            entropy_coef: 1e-3,
            value_coef: 0.5,
            epochs: 3,
            minibatch_size: 32,
            learning_rate: 1e-4,
            actors: 8,
            hidden: vec![64, 64],
        }
    }
}

impl PPOConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0)
            || !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0)
        {
            return bad("gamma and gae_lambda must lie in (0, 1]");
        }
        if !(self.clip_eps > 0.0) {
            return bad("clip_eps must be positive");
        }
        if self.epochs == 0 || self.minibatch_size == 0 || self.actors == 0 {
            return bad("epochs, minibatch_size and actors must be positive");
        }
        if !(self.learning_rate >= 0.0) || self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return bad("learning_rate and loss coefficients must be non-negative");
        }
        Ok(())
    }
}

/// Per-sample clipped surrogate `min(rho A, clip(rho, 1-eps, 1+eps) A)`.
pub fn clipped_objective(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// Flattened on-policy samples for one update.
#[derive(Clone, Debug, PartialEq)]
pub struct PpoBatch {
    pub obs: Tensor,
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl PpoBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn select(&self, idx: &[usize]) -> PpoBatch {
        PpoBatch {
            obs: self.obs.select_rows(idx),
            actions: idx.iter().map(|&i| self.actions[i]).collect(),
            old_log_probs: idx.iter().map(|&i| self.old_log_probs[i]).collect(),
            advantages: idx.iter().map(|&i| self.advantages[i]).collect(),
            returns: idx.iter().map(|&i| self.returns[i]).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoLoss {
    pub total: f64,
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// PPO loss `-surrogate + c_v * MSE - c_e * entropy` on a minibatch whose
/// advantages are already normalised, with gradients when requested.
pub fn ppo_loss(
    policy: &Policy,
    params: &ParamSet,
    batch: &PpoBatch,
    config: &PPOConfig,
    with_grads: bool,
) -> Result<(PpoLoss, Option<ParamSet>)> {
    let m = batch.len();
    if m == 0 {
        return Err(Error::EmptyBatch("ppo_loss"));
    }
    let mut g = Graph::new();
    let b = Bound::new(&mut g, params, |_| with_grads);
    let x = g.constant(&batch.obs);
    let out = policy.forward_var(&mut g, &b, x)?;
    let logp = g.pick(out.log_probs, &batch.actions)?;
    let old = g.constant(&Tensor::matrix(m, 1, batch.old_log_probs.clone())?);
    let adv = g.constant(&Tensor::matrix(m, 1, batch.advantages.clone())?);
    let ret = g.constant(&Tensor::matrix(m, 1, batch.returns.clone())?);

    let diff = g.sub(logp, old)?;
    let ratio = g.exp(diff);
    let s1 = g.mul(ratio, adv)?;
    let clipped = g.clamp(ratio, 1.0 - config.clip_eps, 1.0 + config.clip_eps);
    let s2 = g.mul(clipped, adv)?;
    let surr = g.minimum(s1, s2)?;
    let surrogate = g.mean_all(surr);

    let verr = g.sub(out.values, ret)?;
    let vsq = g.square(verr);
    let value_loss = g.mean_all(vsq);

    let probs = g.exp(out.log_probs);
    let plogp = g.mul(probs, out.log_probs)?;
    let neg_ent = g.sum_cols(plogp);
    let neg_ent = g.mean_all(neg_ent);

    let a = g.neg(surrogate);
    let bv = g.scale(value_loss, config.value_coef);
    let c = g.scale(neg_ent, config.entropy_coef);
    let total = g.add(a, bv)?;
    let total = g.add(total, c)?;

    let ratios = g.value(ratio).data();
    let clip_fraction = ratios
        .iter()
        .filter(|r| (*r - 1.0).abs() > config.clip_eps)
        .count() as f64
        / m as f64;
    let loss = PpoLoss {
        total: g.scalar(total),
        surrogate: g.scalar(surrogate),
        value_loss: g.scalar(value_loss),
        entropy: -g.scalar(neg_ent),
        clip_fraction,
    };
    if !loss.total.is_finite() {
        return Err(Error::NonFinite("PPO loss".into()));
    }
    let grads = if with_grads {
        let gr = g.backward(total)?;
        Some(b.gradients(&g, &gr, params))
    } else {
        None
    };
    Ok((loss, grads))
}

pub fn ppo_optimizer(config: &PPOConfig) -> Adam {
    Adam::new(AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    })
}

/// `epochs` passes over the batch in shuffled minibatches. Advantages are
/// normalised once over the whole batch first. Returns losses averaged over
/// all minibatch steps.
pub fn ppo_update(
    policy: &mut Policy,
    opt: &mut Adam,
    batch: &PpoBatch,
    config: &PPOConfig,
    rng: &mut RngStream,
) -> Result<PpoLoss> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("ppo_update"));
    }
    let mut batch = batch.clone();
    batch.advantages = normalize_advantages(&batch.advantages);
    let mut idx: Vec<usize> = (0..batch.len()).collect();
    let mut sum = PpoLoss::default();
    let mut steps = 0usize;
    for _ in 0..config.epochs {
        rng.shuffle(&mut idx);
        for chunk in idx.chunks(config.minibatch_size) {
            let mb = batch.select(chunk);
            let (loss, grads) = ppo_loss(policy, &policy.params, &mb, config, true)?;
            let grads = grads.expect("requested");
            if !grads.is_finite() {
                return Err(Error::NonFinite("PPO gradient".into()));
            }
            opt.step(&mut policy.params, &grads)?;
            sum.total += loss.total;
            sum.surrogate += loss.surrogate;
            sum.value_loss += loss.value_loss;
            sum.entropy += loss.entropy;
            sum.clip_fraction += loss.clip_fraction;
            steps += 1;
        }
    }
    let n = steps as f64;
    Ok(PpoLoss {
        total: sum.total / n,
        surrogate: sum.surrogate / n,
        value_loss: sum.value_loss / n,
        entropy: sum.entropy / n,
        clip_fraction: sum.clip_fraction / n,
    })
}
