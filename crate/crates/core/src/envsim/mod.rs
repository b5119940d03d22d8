//! Synthetic environments: the noisy feature gridworld, tabular chains and
//! linear MDPs.

pub mod grid;
pub mod linear;
pub mod tabular;

use serde::{Deserialize, Serialize};

pub use grid::{
    grid_reset, grid_step, render_observation, GridState, NoiseMode, NoisyGridConfig, Transition,
};
pub use linear::{linear_features, LinearMDP};
pub use tabular::{tabular_step, TabularMDP};

use crate::error::{Error, Result};
use crate::numcore::{RngStream, Tensor};

/// Environment section of an experiment config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EnvConfig {
    Grid(NoisyGridConfig),
    /// Deterministic chain observed as a one-hot state vector.
    Chain {
        states: usize,
        episode_len: usize,
    },
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::Grid(NoisyGridConfig::default())
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            EnvConfig::Grid(g) => g.validate(),
            EnvConfig::Chain {
                states,
                episode_len,
            } => {
                if *states < 2 || *episode_len == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "chain needs states >= 2 and episode_len > 0 (got {states}, {episode_len})"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            EnvConfig::Grid(g) => g.obs_dim(),
            EnvConfig::Chain { states, .. } => *states,
        }
    }

    pub fn action_count(&self) -> usize {
        match self {
            EnvConfig::Grid(_) => grid::ACTION_COUNT,
            EnvConfig::Chain { .. } => 2,
        }
    }

    /// Number of informative states (grid cells or chain states).
    pub fn state_count(&self) -> usize {
        match self {
            EnvConfig::Grid(g) => g.cells(),
            EnvConfig::Chain { states, .. } => *states,
        }
    }

    pub fn episode_len(&self) -> usize {
        match self {
            EnvConfig::Grid(g) => g.episode_len,
            EnvConfig::Chain { episode_len, .. } => *episode_len,
        }
    }

    /// Noise-free observation of a state, used for probes.
    pub fn clean_observation(&self, state: usize) -> Result<Tensor> {
        let mut obs = Tensor::zeros(&[self.obs_dim()]);
        if state >= self.state_count() {
            return Err(Error::InvalidArgument(format!(
                "state {state} outside {}",
                self.state_count()
            )));
        }
        obs.data_mut()[state] = 1.0;
        Ok(obs)
    }

    pub fn build(&self) -> Result<Box<dyn Environment + Send>> {
        self.validate()?;
        Ok(match self {
            EnvConfig::Grid(g) => Box::new(GridEnv::new(g.clone())),
            EnvConfig::Chain {
                states,
                episode_len,
            } => Box::new(ChainEnv::new(*states, *episode_len)?),
        })
    }
}

/// Single-owner episodic environment driven by an external random stream.
pub trait Environment {
    fn reset(&mut self, rng: &mut RngStream) -> Tensor;
    fn step(&mut self, action: usize, rng: &mut RngStream) -> Result<Transition>;
}

pub struct GridEnv {
    config: NoisyGridConfig,
    state: GridState,
    obs: Tensor,
}

impl GridEnv {
    pub fn new(config: NoisyGridConfig) -> Self {
        let obs = Tensor::zeros(&[config.obs_dim()]);
        GridEnv {
            config,
            state: GridState {
                cell: 0,
                prev_action: None,
                t: 0,
            },
            obs,
        }
    }
}

impl Environment for GridEnv {
    fn reset(&mut self, rng: &mut RngStream) -> Tensor {
        let (s, obs) = grid_reset(&self.config, rng);
        self.state = s;
        self.obs = obs.clone();
        obs
    }

    fn step(&mut self, action: usize, rng: &mut RngStream) -> Result<Transition> {
        let (s, tr) = grid_step(&self.state, &self.obs, action, &self.config, rng)?;
        self.state = s;
        self.obs = tr.next_obs.clone();
        Ok(tr)
    }
}

/// Chain whose last state pays extrinsic reward 1 on arrival.
pub struct ChainEnv {
    mdp: TabularMDP,
    episode_len: usize,
    state: usize,
    t: usize,
}

impl ChainEnv {
    pub fn new(states: usize, episode_len: usize) -> Result<Self> {
        Ok(ChainEnv {
            mdp: TabularMDP::chain(states)?,
            episode_len,
            state: 0,
            t: 0,
        })
    }

    fn observe(&self, s: usize) -> Tensor {
        Tensor::one_hot(s, self.mdp.states).expect("state in range")
    }
}

impl Environment for ChainEnv {
    fn reset(&mut self, _rng: &mut RngStream) -> Tensor {
        self.state = self.mdp.start;
        self.t = 0;
        self.observe(self.state)
    }

    fn step(&mut self, action: usize, rng: &mut RngStream) -> Result<Transition> {
        let next = tabular_step(&self.mdp, self.state, action, rng)?;
        self.t += 1;
        let tr = Transition {
            obs: self.observe(self.state),
            action,
            executed_action: action,
            next_obs: self.observe(next),
            done: self.t >= self.episode_len,
            extrinsic_reward: if next + 1 == self.mdp.states && self.state != next {
                1.0
            } else {
                0.0
            },
            cell: self.state,
            next_cell: next,
        };
        self.state = next;
        Ok(tr)
    }
}
