//! Desk-scale behavioural experiments: exploration against a random policy,
//! robustness to pixel noise, and how the bonus tracks visit counts.
//!
//! These are long runs (minutes), so they are not `verify` suites; the
//! acceptance target drives them.

use serde::Serialize;

use crate::agent::{
    final_quarter, random_baseline, sse_db_run, ExplorationStats, RunOptions, RunSpec,
};
use crate::bonus::db_bonus_batch;
use crate::envsim::{EnvConfig, NoiseMode, NoisyGridConfig};
use crate::error::Result;
use crate::numcore::{spearman, Tensor};

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn tail_mean(stats: &[ExplorationStats], f: fn(&ExplorationStats) -> f64) -> f64 {
    let k = (stats.len() / 4).max(1).min(stats.len());
    stats[stats.len() - k..].iter().map(f).sum::<f64>() / k.max(1) as f64
}

/// Sparse-goal grid with the default model and agent.
#[derive(Clone, Debug, Serialize)]
pub struct ExplorationSetup {
    pub grid_side: usize,
    pub episode_len: usize,
    /// 196 episodes x 8 actors x 128 steps is about 2e5 environment steps.
    pub episodes: usize,
    pub seeds: Vec<u64>,
}

impl Default for ExplorationSetup {
    fn default() -> Self {
        ExplorationSetup {
            grid_side: 8,
            episode_len: 128,
            episodes: 196,
            seeds: vec![0, 1, 2],
        }
    }
}

impl ExplorationSetup {
    pub fn spec(&self, noise: NoiseMode, seed: u64) -> RunSpec {
        let env = EnvConfig::Grid(NoisyGridConfig {
            grid_side: self.grid_side,
            noise_mode: noise,
            goal_cell: Some([self.grid_side - 1, self.grid_side - 1]),
            episode_len: self.episode_len,
            ..NoisyGridConfig::default()
        });
        RunSpec::new(env, self.episodes, seed)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExplorationSeed {
    pub seed: u64,
    pub steps: usize,
    pub learner: ExplorationStats,
    pub random: ExplorationStats,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExplorationSummary {
    pub setup: ExplorationSetup,
    pub runs: Vec<ExplorationSeed>,
    pub median_goal_rate: f64,
    pub median_random_goal_rate: f64,
    pub passed: bool,
}

/// Final-quarter goal-reach rate of the learner against a uniform-random
/// policy on the same environment streams; pass at twice the random median.
pub fn exploration_suite(setup: &ExplorationSetup) -> Result<ExplorationSummary> {
    let mut runs = Vec::new();
    for &seed in &setup.seeds {
        let spec = setup.spec(NoiseMode::None, seed);
        let out = sse_db_run(&spec, RunOptions::default(), |_| Ok(()))?;
        let random = random_baseline(&spec)?;
        runs.push(ExplorationSeed {
            seed,
            steps: out.records.last().map_or(0, |r| r.env_steps),
            learner: final_quarter(&out.records),
            random: ExplorationStats {
                goal_reach_rate: tail_mean(&random, |s| s.goal_reach_rate),
                extrinsic_return: tail_mean(&random, |s| s.extrinsic_return),
                coverage: tail_mean(&random, |s| s.coverage),
                cumulative_coverage: random.last().map_or(0.0, |s| s.cumulative_coverage),
            },
        });
    }
    let median_goal_rate = median(
        &runs
            .iter()
            .map(|r| r.learner.goal_reach_rate)
            .collect::<Vec<_>>(),
    );
    let median_random_goal_rate = median(
        &runs
            .iter()
            .map(|r| r.random.goal_reach_rate)
            .collect::<Vec<_>>(),
    );
    Ok(ExplorationSummary {
        setup: setup.clone(),
        passed: median_random_goal_rate > 0.0 && median_goal_rate >= 2.0 * median_random_goal_rate,
        runs,
        median_goal_rate,
        median_random_goal_rate,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct NoiseSeed {
    pub seed: u64,
    pub clean: ExplorationStats,
    pub pixel: ExplorationStats,
}

#[derive(Clone, Debug, Serialize)]
pub struct NoiseSummary {
    pub setup: ExplorationSetup,
    pub runs: Vec<NoiseSeed>,
    /// Medians of final-quarter per-episode coverage.
    pub median_clean_coverage: f64,
    pub median_pixel_coverage: f64,
    pub ratio: f64,
    /// Same ratio on whole-run cumulative coverage, for reference.
    pub cumulative_ratio: f64,
    pub passed: bool,
}

pub const NOISE_RATIO_REQUIRED: f64 = 0.9;

/// Coverage under pixel noise relative to the same agent without noise.
///
/// Coverage is the final-quarter mean of per-episode unique informative
/// cells; cumulative coverage saturates early on small grids and is only
/// reported.
pub fn noise_robustness_suite(setup: &ExplorationSetup) -> Result<NoiseSummary> {
    let mut runs = Vec::new();
    for &seed in &setup.seeds {
        let run = |mode| -> Result<ExplorationStats> {
            let out = sse_db_run(&setup.spec(mode, seed), RunOptions::default(), |_| Ok(()))?;
            Ok(final_quarter(&out.records))
        };
        runs.push(NoiseSeed {
            seed,
            clean: run(NoiseMode::None)?,
            pixel: run(NoiseMode::Pixel)?,
        });
    }
    let med = |f: fn(&NoiseSeed) -> f64| median(&runs.iter().map(f).collect::<Vec<_>>());
    let median_clean_coverage = med(|r| r.clean.coverage);
    let median_pixel_coverage = med(|r| r.pixel.coverage);
    let ratio = median_pixel_coverage / median_clean_coverage;
    let cumulative_ratio =
        med(|r| r.pixel.cumulative_coverage) / med(|r| r.clean.cumulative_coverage);
    Ok(NoiseSummary {
        setup: setup.clone(),
        passed: ratio >= NOISE_RATIO_REQUIRED,
        runs,
        median_clean_coverage,
        median_pixel_coverage,
        ratio,
        cumulative_ratio,
    })
}

/// Tabular chain probe for the bonus/count relation.
#[derive(Clone, Debug, Serialize)]
pub struct CountProbeSetup {
    pub states: usize,
    pub episode_len: usize,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    /// Probe model: strong compression and more model updates than the
    /// defaults, the regime where the bonus is count-like.
    pub alpha1: f64,
    pub updates_per_episode: usize,
    pub learning_rate: f64,
    pub minibatch_size: usize,
}

impl Default for CountProbeSetup {
    fn default() -> Self {
        CountProbeSetup {
            states: 10,
            episode_len: 20,
            episodes: 100,
            seeds: vec![0, 1, 2, 3, 4],
            alpha1: 10.0,
            updates_per_episode: 8,
            learning_rate: 1e-3,
            minibatch_size: 128,
        }
    }
}

pub const COUNT_CORRELATION_REQUIRED: f64 = 0.3;

impl CountProbeSetup {
    pub fn spec(&self, seed: u64, tuned: bool) -> RunSpec {
        let env = EnvConfig::Chain {
            states: self.states,
            episode_len: self.episode_len,
        };
        let mut spec = RunSpec::new(env, self.episodes, seed);
        if tuned {
            spec.db.alpha1 = self.alpha1;
            spec.db.updates_per_episode = self.updates_per_episode;
            spec.db.learning_rate = self.learning_rate;
            spec.db.minibatch_size = Some(self.minibatch_size);
        }
        spec
    }
}

/// Spearman correlation between the trained model's bonus and
/// `1/sqrt(N(s,a)+1)` over every `(s, a)` of the chain.
pub fn bonus_count_correlation(spec: &RunSpec) -> Result<f64> {
    let out = sse_db_run(spec, RunOptions::default(), |_| Ok(()))?;
    let (states, actions) = (spec.env.state_count(), spec.env.action_count());
    let mut bonus = Vec::with_capacity(states * actions);
    for s in 0..states {
        let obs = spec.env.clean_observation(s)?;
        let rows: Vec<f64> = (0..actions)
            .flat_map(|_| obs.data().iter().copied())
            .collect();
        let batch = Tensor::matrix(actions, obs.len(), rows)?;
        bonus.extend(db_bonus_batch(
            &out.model,
            &batch,
            &(0..actions).collect::<Vec<_>>(),
        )?);
    }
    let inv_sqrt: Vec<f64> = out
        .visit_counts
        .iter()
        .map(|&n| 1.0 / ((n + 1) as f64).sqrt())
        .collect();
    spearman(&bonus, &inv_sqrt)
}

#[derive(Clone, Debug, Serialize)]
pub struct CountProbeSummary {
    pub setup: CountProbeSetup,
    pub probe_rho: Vec<f64>,
    /// Same probe with the default model configuration, for reference.
    pub default_rho: Vec<f64>,
    pub median_rho: f64,
    pub median_default_rho: f64,
    pub passed: bool,
}

pub fn count_probe_suite(setup: &CountProbeSetup) -> Result<CountProbeSummary> {
    let rho = |tuned: bool| -> Result<Vec<f64>> {
        setup
            .seeds
            .iter()
            .map(|&seed| bonus_count_correlation(&setup.spec(seed, tuned)))
            .collect()
    };
    let probe_rho = rho(true)?;
    let default_rho = rho(false)?;
    let median_rho = median(&probe_rho);
    Ok(CountProbeSummary {
        setup: setup.clone(),
        passed: median_rho > COUNT_CORRELATION_REQUIRED,
        median_default_rho: median(&default_rho),
        probe_rho,
        default_rho,
        median_rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_handles_odd_even_empty() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn small_suites_run_and_report() {
        let setup = ExplorationSetup {
            grid_side: 3,
            episode_len: 8,
            episodes: 4,
            seeds: vec![0],
        };
        let mut s = setup.spec(NoiseMode::Pixel, 0);
        s.validate().unwrap();
        if let EnvConfig::Grid(g) = &mut s.env {
            assert_eq!(g.goal_cell, Some([2, 2]));
        }
        let probe = CountProbeSetup {
            episodes: 3,
            seeds: vec![0],
            ..CountProbeSetup::default()
        };
        let spec = probe.spec(0, true);
        assert_eq!(spec.db.alpha1, 10.0);
        let rho = bonus_count_correlation(&spec).unwrap();
        assert!((-1.0..=1.0).contains(&rho));
    }
}
