//! Linear MDPs: `P(s'|s,a) = <eta(s,a), mu(s')>` and `r(s,a) = <eta(s,a), theta>`.

use serde::{Deserialize, Serialize};

use super::tabular::TabularMDP;
use crate::error::{Error, Result};
use crate::numcore::{RngStream, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearMDP {
    pub dim: usize,
    pub horizon: usize,
    pub mdp: TabularMDP,
    features: Vec<Tensor>,
    rewards: Vec<f64>,
}

impl LinearMDP {
    /// One-hot embedding of an arbitrary tabular MDP; rewards given per `(s, a)`.
    pub fn tabular(mdp: TabularMDP, rewards: Vec<f64>, horizon: usize) -> Result<Self> {
        let d = mdp.states * mdp.actions;
        if rewards.len() != d {
            return Err(Error::dim("LinearMDP::tabular", d, rewards.len()));
        }
        let features = (0..d)
            .map(|i| Tensor::one_hot(i, d))
            .collect::<Result<Vec<_>>>()?;
        Ok(LinearMDP {
            dim: d,
            horizon,
            mdp,
            features,
            rewards,
        })
    }

    /// Random features on the probability simplex (so `||eta|| <= 1`), random
    /// next-state measures `mu_k` and reward weights `theta in [0, 1]^d`.
    pub fn random(
        states: usize,
        actions: usize,
        dim: usize,
        horizon: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "feature dimension must be positive".into(),
            ));
        }
        let simplex = |rng: &mut RngStream, n: usize| {
            let w: Vec<f64> = (0..n).map(|_| -rng.uniform().max(1e-300).ln()).collect();
            let total: f64 = w.iter().sum();
            w.into_iter().map(|x| x / total).collect::<Vec<f64>>()
        };
        let mu: Vec<Vec<f64>> = (0..dim).map(|_| simplex(rng, states)).collect();
        let theta: Vec<f64> = (0..dim).map(|_| rng.uniform()).collect();
        let mut features = Vec::with_capacity(states * actions);
        let mut rows = Vec::with_capacity(states * actions);
        let mut rewards = Vec::with_capacity(states * actions);
        for _ in 0..states * actions {
            let eta = simplex(rng, dim);
            let mut row: Vec<f64> = (0..states)
                .map(|sp| eta.iter().zip(&mu).map(|(e, m)| e * m[sp]).sum())
                .collect();
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= total);
            rewards.push(eta.iter().zip(&theta).map(|(e, t)| e * t).sum());
            features.push(Tensor::vector(&eta));
            rows.push(row);
        }
        Ok(LinearMDP {
            dim,
            horizon,
            mdp: TabularMDP::new(states, actions, 0, rows)?,
            features,
            rewards,
        })
    }

    pub fn reward(&self, s: usize, a: usize) -> Result<f64> {
        self.mdp.row(s, a)?;
        Ok(self.rewards[s * self.mdp.actions + a])
    }
}

pub fn linear_features(mdp: &LinearMDP, s: usize, a: usize) -> Result<Tensor> {
    mdp.mdp.row(s, a)?;
    Ok(mdp.features[s * mdp.mdp.actions + a].clone())
}
