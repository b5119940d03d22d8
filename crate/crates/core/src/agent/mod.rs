//! PPO with GAE, and the exploration loop driven purely by intrinsic reward.

pub mod gae;
pub mod policy;
pub mod ppo;
pub mod runner;

pub use gae::{compute_gae, normalize_advantages};
pub use policy::{policy_forward, Policy};
pub use ppo::{clipped_objective, ppo_loss, ppo_update, PPOConfig, PpoBatch, PpoLoss};
pub use runner::{
    evaluate_policy, final_quarter, initial_state, random_baseline, sse_db_run, EpisodeView,
    ExplorationStats, MetricsRecord, RunOptions, RunOutput, RunSpec,
};
