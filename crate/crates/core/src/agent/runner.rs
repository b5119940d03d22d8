//! The self-supervised exploration loop: roll out all actors, reward them
//! with the model's bonus, update the policy, then update the model.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::gae::compute_gae;
use super::policy::Policy;
use super::ppo::{ppo_optimizer, ppo_update, PPOConfig, PpoBatch};
use crate::bonus::{db_bonus_batch, BonusNormalizer};
use crate::dbmodel::{DBConfig, DBModel};
use crate::envsim::{EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::numcore::{RngStream, Tensor};
use crate::objectives::{db_optimizer, db_update_episode, DbBatch};

const TAG_DB_INIT: u64 = 1;
const TAG_POLICY_INIT: u64 = 2;
const TAG_ENV: u64 = 3;
const TAG_ACTIONS: u64 = 4;
const TAG_PPO: u64 = 5;
const TAG_DB_TRAIN: u64 = 6;
const TAG_EVAL: u64 = 7;

#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub env: EnvConfig,
    pub db: DBConfig,
    pub ppo: PPOConfig,
    pub episodes: usize,
    pub seed: u64,
    pub normalize_bonus: bool,
    pub record_wall_clock: bool,
}

impl RunSpec {
    pub fn new(env: EnvConfig, episodes: usize, seed: u64) -> Self {
        RunSpec {
            env,
            db: DBConfig::default(),
            ppo: PPOConfig::default(),
            episodes,
            seed,
            normalize_bonus: true,
            record_wall_clock: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.db.validate()?;
        self.ppo.validate()
    }

    pub fn steps_per_episode(&self) -> usize {
        self.ppo.actors * self.env.episode_len()
    }
}

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub episode: usize,
    pub env_steps: usize,
    pub mean_intrinsic: f64,
    pub max_intrinsic: f64,
    /// Mean extrinsic return per actor episode; logged, never trained on.
    pub extrinsic_return: f64,
    pub goal_reach_rate: f64,
    pub i_pred: f64,
    pub i_nce: f64,
    pub i_upper: f64,
    pub total_loss: f64,
    pub encoder_std: f64,
    pub coverage: f64,
    pub cumulative_coverage: f64,
    pub probe_bonus: f64,
    pub policy_entropy: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_ms: Option<f64>,
}

/// What an episode observer sees after each episode.
pub struct EpisodeView<'a> {
    pub record: &'a MetricsRecord,
    pub model: &'a DBModel,
    pub policy: &'a Policy,
}

/// Test hooks that must not influence training.
#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Replaces every extrinsic reward the environment emits.
    pub extrinsic_override: Option<f64>,
}

pub struct RunOutput {
    pub records: Vec<MetricsRecord>,
    pub model: DBModel,
    pub policy: Policy,
    /// Cumulative visits per `(state, action)`, row-major over actions.
    pub visit_counts: Vec<u64>,
    pub normalizer: BonusNormalizer,
}

/// Fresh model and policy exactly as a run with this spec would start.
pub fn initial_state(spec: &RunSpec) -> Result<(DBModel, Policy)> {
    let root = RngStream::new(spec.seed);
    let model = DBModel::new(
        spec.env.obs_dim(),
        spec.env.action_count(),
        &spec.db,
        &mut root.derive(TAG_DB_INIT),
    )?;
    let policy = Policy::new(
        spec.env.obs_dim(),
        spec.env.action_count(),
        &spec.ppo.hidden,
        &mut root.derive(TAG_POLICY_INIT),
    )?;
    Ok((model, policy))
}

struct Rollout {
    obs: Tensor,
    next_obs: Tensor,
    actions: Vec<usize>,
    log_probs: Vec<f64>,
    values: Vec<f64>,
    dones: Vec<bool>,
    extrinsic: Vec<f64>,
    cells: Vec<usize>,
    next_cells: Vec<usize>,
    bootstrap: Vec<f64>,
    entropy: f64,
}

fn stack(rows: &[Tensor], dim: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(rows.len() * dim);
    for r in rows {
        data.extend_from_slice(r.data());
    }
    Tensor::matrix(rows.len(), dim, data)
}

fn rollout(
    envs: &mut [Box<dyn Environment + Send>],
    env_rngs: &mut [RngStream],
    act_rng: &mut RngStream,
    policy: Option<&Policy>,
    action_count: usize,
    horizon: usize,
    obs_dim: usize,
) -> Result<Rollout> {
    let actors = envs.len();
    let n = actors * horizon;
    let mut current: Vec<Tensor> = envs
        .iter_mut()
        .zip(env_rngs.iter_mut())
        .map(|(e, r)| e.reset(r))
        .collect();
    let mut obs = vec![0.0; n * obs_dim];
    let mut next_obs = vec![0.0; n * obs_dim];
    let mut actions = vec![0; n];
    let mut log_probs = vec![0.0; n];
    let mut values = vec![0.0; n];
    let mut dones = vec![false; n];
    let mut extrinsic = vec![0.0; n];
    let mut cells = vec![0; n];
    let mut next_cells = vec![0; n];
    let mut entropy = 0.0;
    let uniform = vec![1.0 / action_count as f64; action_count];
    for t in 0..horizon {
        let step_out = match policy {
            Some(p) => Some(p.forward_batch(&stack(&current, obs_dim)?)?),
            None => None,
        };
        for a in 0..actors {
            let probs = match &step_out {
                Some((pr, _)) => pr.row_slice(a),
                None => uniform.as_slice(),
            };
            let action = act_rng.categorical(probs);
            let tr = envs[a].step(action, &mut env_rngs[a])?;
            let i = a * horizon + t;
            obs[i * obs_dim..(i + 1) * obs_dim].copy_from_slice(current[a].data());
            next_obs[i * obs_dim..(i + 1) * obs_dim].copy_from_slice(tr.next_obs.data());
            actions[i] = action;
            log_probs[i] = probs[action].ln();
            values[i] = step_out.as_ref().map_or(0.0, |(_, v)| v[a]);
            dones[i] = tr.done || t + 1 == horizon;
            extrinsic[i] = tr.extrinsic_reward;
            cells[i] = tr.cell;
            next_cells[i] = tr.next_cell;
            entropy -= probs
                .iter()
                .map(|p| if *p > 0.0 { p * p.ln() } else { 0.0 })
                .sum::<f64>();
            current[a] = tr.next_obs;
        }
    }
    let bootstrap = match policy {
        Some(p) => p.forward_batch(&stack(&current, obs_dim)?)?.1,
        None => vec![0.0; actors],
    };
    Ok(Rollout {
        obs: Tensor::matrix(n, obs_dim, obs)?,
        next_obs: Tensor::matrix(n, obs_dim, next_obs)?,
        actions,
        log_probs,
        values,
        dones,
        extrinsic,
        cells,
        next_cells,
        bootstrap,
        entropy: entropy / n as f64,
    })
}

/// Episode-level exploration statistics shared by the learner and the
/// random baseline.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExplorationStats {
    pub goal_reach_rate: f64,
    pub extrinsic_return: f64,
    pub coverage: f64,
    pub cumulative_coverage: f64,
}

struct Coverage {
    seen: Vec<bool>,
}

impl Coverage {
    fn episode(
        &mut self,
        ro: &Rollout,
        actors: usize,
        horizon: usize,
        states: usize,
    ) -> ExplorationStats {
        let mut here = vec![false; states];
        let mut reached = 0usize;
        let mut ret = 0.0;
        for a in 0..actors {
            let span = a * horizon..(a + 1) * horizon;
            let r: f64 = ro.extrinsic[span.clone()].iter().sum();
            ret += r;
            if r > 0.0 {
                reached += 1;
            }
            for i in span {
                here[ro.cells[i]] = true;
                here[ro.next_cells[i]] = true;
            }
        }
        for (s, h) in self.seen.iter_mut().zip(&here) {
            *s |= *h;
        }
        let frac = |v: &[bool]| v.iter().filter(|&&b| b).count() as f64 / states as f64;
        ExplorationStats {
            goal_reach_rate: reached as f64 / actors as f64,
            extrinsic_return: ret / actors as f64,
            coverage: frac(&here),
            cumulative_coverage: frac(&self.seen),
        }
    }
}

fn build_envs(
    spec: &RunSpec,
    root: &RngStream,
) -> Result<(Vec<Box<dyn Environment + Send>>, Vec<RngStream>)> {
    let envs = (0..spec.ppo.actors)
        .map(|_| spec.env.build())
        .collect::<Result<Vec<_>>>()?;
    let base = root.derive(TAG_ENV);
    let rngs = (0..spec.ppo.actors)
        .map(|a| base.derive(a as u64))
        .collect();
    Ok((envs, rngs))
}

fn probe_batch(env: &EnvConfig) -> Result<Tensor> {
    let rows = (0..env.state_count())
        .map(|s| env.clean_observation(s))
        .collect::<Result<Vec<_>>>()?;
    stack(&rows, env.obs_dim())
}

/// Runs the full loop, calling `observe` after every episode.
pub fn sse_db_run(
    spec: &RunSpec,
    options: RunOptions,
    mut observe: impl FnMut(&EpisodeView) -> Result<()>,
) -> Result<RunOutput> {
    spec.validate()?;
    let root = RngStream::new(spec.seed);
    let (mut model, mut policy) = initial_state(spec)?;
    let (mut envs, mut env_rngs) = build_envs(spec, &root)?;
    let mut act_rng = root.derive(TAG_ACTIONS);
    let mut ppo_rng = root.derive(TAG_PPO);
    let mut db_rng = root.derive(TAG_DB_TRAIN);
    let mut ppo_opt = ppo_optimizer(&spec.ppo);
    let mut db_opt = db_optimizer(&model);
    let mut normalizer = if spec.normalize_bonus {
        BonusNormalizer::default()
    } else {
        BonusNormalizer::disabled()
    };
    let (states, action_count) = (spec.env.state_count(), spec.env.action_count());
    let (actors, horizon, obs_dim) = (spec.ppo.actors, spec.env.episode_len(), spec.env.obs_dim());
    let probe = probe_batch(&spec.env)?;
    let start_obs = spec.env.clean_observation(0)?;
    let probe_start = stack(&vec![start_obs; action_count], obs_dim)?;
    let probe_actions: Vec<usize> = (0..action_count).collect();
    let mut coverage = Coverage {
        seen: vec![false; states],
    };
    let mut visits = vec![0u64; states * action_count];
    let mut records = Vec::with_capacity(spec.episodes);

    for episode in 0..spec.episodes {
        let started = Instant::now();
        let wrap = |e: Error| Error::Episode {
            episode,
            source: Box::new(e),
        };
        let mut ro = rollout(
            &mut envs,
            &mut env_rngs,
            &mut act_rng,
            Some(&policy),
            action_count,
            horizon,
            obs_dim,
        )
        .map_err(wrap)?;
        if let Some(v) = options.extrinsic_override {
            ro.extrinsic.iter_mut().for_each(|r| *r = v);
        }
        for (c, a) in ro.cells.iter().zip(&ro.actions) {
            visits[c * action_count + a] += 1;
        }

        let raw = db_bonus_batch(&model, &ro.obs, &ro.actions).map_err(wrap)?;
        let rewards = normalizer.normalize(&raw);

        let mut advantages = Vec::with_capacity(raw.len());
        let mut returns = Vec::with_capacity(raw.len());
        for a in 0..actors {
            let span = a * horizon..(a + 1) * horizon;
            let (adv, ret) = compute_gae(
                &rewards[span.clone()],
                &ro.values[span.clone()],
                &ro.dones[span],
                Some(ro.bootstrap[a]),
                spec.ppo.gamma,
                spec.ppo.gae_lambda,
            )
            .map_err(wrap)?;
            advantages.extend(adv);
            returns.extend(ret);
        }
        let ppo_batch = PpoBatch {
            obs: ro.obs.clone(),
            actions: ro.actions.clone(),
            old_log_probs: ro.log_probs.clone(),
            advantages,
            returns,
        };
        let ppo_loss = ppo_update(
            &mut policy,
            &mut ppo_opt,
            &ppo_batch,
            &spec.ppo,
            &mut ppo_rng,
        )
        .map_err(wrap)?;

        let db_batch = DbBatch {
            obs: ro.obs.clone(),
            actions: ro.actions.clone(),
            next_obs: ro.next_obs.clone(),
        };
        let losses =
            db_update_episode(&mut model, &mut db_opt, &db_batch, &mut db_rng).map_err(wrap)?;

        let stats = coverage.episode(&ro, actors, horizon, states);
        let probe_bonus = db_bonus_batch(&model, &probe_start, &probe_actions).map_err(wrap)?;
        let record = MetricsRecord {
            episode,
            env_steps: (episode + 1) * actors * horizon,
            mean_intrinsic: raw.iter().sum::<f64>() / raw.len() as f64,
            max_intrinsic: raw.iter().cloned().fold(0.0, f64::max),
            extrinsic_return: stats.extrinsic_return,
            goal_reach_rate: stats.goal_reach_rate,
            i_pred: losses.i_pred,
            i_nce: losses.i_nce,
            i_upper: losses.i_upper,
            total_loss: losses.total,
            encoder_std: model.encoder_std(&probe).map_err(wrap)?,
            coverage: stats.coverage,
            cumulative_coverage: stats.cumulative_coverage,
            probe_bonus: probe_bonus.iter().sum::<f64>() / probe_bonus.len() as f64,
            policy_entropy: ro.entropy,
            policy_loss: -ppo_loss.surrogate,
            value_loss: ppo_loss.value_loss,
            wall_clock_ms: spec
                .record_wall_clock
                .then(|| started.elapsed().as_secs_f64() * 1e3),
        };
        observe(&EpisodeView {
            record: &record,
            model: &model,
            policy: &policy,
        })
        .map_err(wrap)?;
        records.push(record);
    }
    Ok(RunOutput {
        records,
        model,
        policy,
        visit_counts: visits,
        normalizer,
    })
}

/// Uniform-random behaviour under the same environment streams and budget.
pub fn random_baseline(spec: &RunSpec) -> Result<Vec<ExplorationStats>> {
    spec.validate()?;
    let root = RngStream::new(spec.seed);
    let (mut envs, mut env_rngs) = build_envs(spec, &root)?;
    let mut act_rng = root.derive(TAG_ACTIONS);
    let (states, actors, horizon) = (
        spec.env.state_count(),
        spec.ppo.actors,
        spec.env.episode_len(),
    );
    let mut coverage = Coverage {
        seen: vec![false; states],
    };
    (0..spec.episodes)
        .map(|_| {
            let ro = rollout(
                &mut envs,
                &mut env_rngs,
                &mut act_rng,
                None,
                spec.env.action_count(),
                horizon,
                spec.env.obs_dim(),
            )?;
            Ok(coverage.episode(&ro, actors, horizon, states))
        })
        .collect()
}

/// Means over the last quarter of episodes (at least one); cumulative
/// coverage is taken at the final episode.
pub fn final_quarter(records: &[MetricsRecord]) -> ExplorationStats {
    let k = (records.len() / 4).max(1).min(records.len());
    let tail = &records[records.len() - k..];
    let n = tail.len().max(1) as f64;
    let mean = |f: fn(&MetricsRecord) -> f64| tail.iter().map(f).sum::<f64>() / n;
    ExplorationStats {
        goal_reach_rate: mean(|r| r.goal_reach_rate),
        extrinsic_return: mean(|r| r.extrinsic_return),
        coverage: mean(|r| r.coverage),
        cumulative_coverage: tail.last().map_or(0.0, |r| r.cumulative_coverage),
    }
}

/// Runs `policy` for `episodes` batches of all actors without learning.
///
/// Environments and action sampling use streams disjoint from training, so
/// evaluation never replays the training trajectories.
pub fn evaluate_policy(
    spec: &RunSpec,
    policy: &Policy,
    episodes: usize,
) -> Result<Vec<ExplorationStats>> {
    spec.validate()?;
    if policy.obs_dim != spec.env.obs_dim() || policy.action_count != spec.env.action_count() {
        return Err(Error::dim(
            "evaluate_policy",
            format!("{}x{}", spec.env.obs_dim(), spec.env.action_count()),
            format!("{}x{}", policy.obs_dim, policy.action_count),
        ));
    }
    let root = RngStream::new(spec.seed).derive(TAG_EVAL);
    let (mut envs, mut env_rngs) = build_envs(spec, &root)?;
    let mut act_rng = root.derive(TAG_ACTIONS);
    let (states, actors, horizon) = (
        spec.env.state_count(),
        spec.ppo.actors,
        spec.env.episode_len(),
    );
    let mut coverage = Coverage {
        seen: vec![false; states],
    };
    (0..episodes)
        .map(|_| {
            let ro = rollout(
                &mut envs,
                &mut env_rngs,
                &mut act_rng,
                Some(policy),
                spec.env.action_count(),
                horizon,
                spec.env.obs_dim(),
            )?;
            Ok(coverage.episode(&ro, actors, horizon, states))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::{NoiseMode, NoisyGridConfig};

    fn tiny_spec(episodes: usize, seed: u64) -> RunSpec {
        let env = EnvConfig::Grid(NoisyGridConfig {
            grid_side: 3,
            noise_dims: 2,
            noise_mode: NoiseMode::Pixel,
            goal_cell: Some([2, 2]),
            episode_len: 16,
            ..NoisyGridConfig::default()
        });
        let mut spec = RunSpec::new(env, episodes, seed);
        spec.ppo.actors = 2;
        spec.ppo.hidden = vec![8];
        spec.db = DBConfig {
            encoder_hidden: vec![8],
            encoding_dim: 6,
            posterior_hidden: 8,
            latent_dim: 4,
            predictor_hidden: 8,
            projection_hidden: 4,
            projection_dim: 3,
            ..DBConfig::default()
        };
        spec
    }

    #[test]
    fn zero_episodes_yield_no_records() {
        let out = sse_db_run(&tiny_spec(0, 1), RunOptions::default(), |_| Ok(())).unwrap();
        assert!(out.records.is_empty());
        let (m, p) = initial_state(&tiny_spec(0, 1)).unwrap();
        assert!(out.model.params.bit_eq(&m.params));
        assert!(out.policy.params.bit_eq(&p.params));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = sse_db_run(&tiny_spec(3, 7), RunOptions::default(), |_| Ok(())).unwrap();
        let b = sse_db_run(&tiny_spec(3, 7), RunOptions::default(), |_| Ok(())).unwrap();
        assert_eq!(
            serde_json::to_string(&a.records).unwrap(),
            serde_json::to_string(&b.records).unwrap()
        );
        assert!(a.model.params.bit_eq(&b.model.params));
        let c = sse_db_run(&tiny_spec(3, 8), RunOptions::default(), |_| Ok(())).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn records_are_ordered_and_entropy_positive() {
        let out = sse_db_run(&tiny_spec(4, 2), RunOptions::default(), |_| Ok(())).unwrap();
        for (i, r) in out.records.iter().enumerate() {
            assert_eq!(r.episode, i);
            assert_eq!(r.env_steps, (i + 1) * 32);
            assert!(r.policy_entropy > 0.0);
            assert!(r.wall_clock_ms.is_none());
        }
        assert_eq!(out.visit_counts.iter().sum::<u64>(), 4 * 32);
    }

    #[test]
    fn extrinsic_rewards_never_reach_training() {
        let trace = |opts: RunOptions| {
            let mut params = Vec::new();
            sse_db_run(&tiny_spec(3, 4), opts, |v| {
                params.push((v.model.params.clone(), v.policy.params.clone()));
                Ok(())
            })
            .unwrap();
            params
        };
        let clean = trace(RunOptions::default());
        let poisoned = trace(RunOptions {
            extrinsic_override: Some(1e6),
        });
        for ((ma, pa), (mb, pb)) in clean.iter().zip(&poisoned) {
            assert!(ma.bit_eq(mb) && pa.bit_eq(pb));
        }
    }

    #[test]
    fn observer_failure_names_episode() {
        let err = sse_db_run(&tiny_spec(3, 1), RunOptions::default(), |v| {
            if v.record.episode == 1 {
                Err(Error::Plot("boom".into()))
            } else {
                Ok(())
            }
        })
        .err()
        .unwrap();
        assert!(matches!(err, Error::Episode { episode: 1, .. }));
    }

    #[test]
    fn random_baseline_is_deterministic() {
        let a = random_baseline(&tiny_spec(3, 5)).unwrap();
        let b = random_baseline(&tiny_spec(3, 5)).unwrap();
        assert_eq!(a, b);
        assert!(a
            .iter()
            .all(|s| s.coverage > 0.0 && s.cumulative_coverage <= 1.0));
    }

    #[test]
    fn evaluation_is_deterministic_and_checks_shapes() {
        let spec = tiny_spec(2, 5);
        let out = sse_db_run(&spec, RunOptions::default(), |_| Ok(())).unwrap();
        let a = evaluate_policy(&spec, &out.policy, 3).unwrap();
        let b = evaluate_policy(&spec, &out.policy, 3).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a, b);
        assert!(a.iter().all(|s| (0.0..=1.0).contains(&s.coverage)));
        let mut other = spec.clone();
        if let EnvConfig::Grid(g) = &mut other.env {
            g.noise_dims = 5;
        }
        assert!(evaluate_policy(&other, &out.policy, 1).is_err());
    }
}
