//! Least-squares value iteration with a UCB bonus on a linear MDP.

use nalgebra::{Cholesky, DVector, Dyn};
use serde::Serialize;

use super::gram::GramAccumulator;
use crate::envsim::{linear_features, tabular_step, LinearMDP, TabularMDP};
use crate::error::{Error, Result};
use crate::numcore::RngStream;

/// Actions whose optimistic values differ by less than this are tied.
const TIE_TOLERANCE: f64 = 1e-12;
const ENUMERATION_LIMIT: u64 = 1 << 22;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Sample {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// Per-step Gram matrices, regression weights and the data behind them.
#[derive(Clone, Debug)]
pub struct LSVIState {
    pub horizon: usize,
    pub beta: f64,
    grams: Vec<GramAccumulator>,
    factors: Vec<Cholesky<f64, Dyn>>,
    chi: Vec<DVector<f64>>,
    data: Vec<Vec<Sample>>,
    features: Vec<Vec<f64>>,
    actions: usize,
}

impl LSVIState {
    pub fn new(mdp: &LinearMDP, beta: f64, ridge: f64) -> Result<Self> {
        if mdp.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        if !(beta >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "bonus coefficient must be >= 0, got {beta}"
            )));
        }
        let (s, a) = (mdp.mdp.states, mdp.mdp.actions);
        let mut features = Vec::with_capacity(s * a);
        for state in 0..s {
            for action in 0..a {
                features.push(linear_features(mdp, state, action)?.into_data());
            }
        }
        let gram = GramAccumulator::new(mdp.dim, ridge)?;
        let mut out = LSVIState {
            horizon: mdp.horizon,
            beta,
            factors: vec![gram.cholesky()?; mdp.horizon],
            grams: vec![gram; mdp.horizon],
            chi: vec![DVector::zeros(mdp.dim); mdp.horizon],
            data: vec![Vec::new(); mdp.horizon],
            features,
            actions: a,
        };
        out.fit()?;
        Ok(out)
    }

    pub fn gram(&self, t: usize) -> &GramAccumulator {
        &self.grams[t]
    }

    pub fn samples(&self, t: usize) -> &[Sample] {
        &self.data[t]
    }

    fn eta(&self, s: usize, a: usize) -> &[f64] {
        &self.features[s * self.actions + a]
    }

    /// `min(chi_t^T eta + beta sqrt(eta^T Lambda_t^{-1} eta), T)`; zero past the horizon.
    pub fn q_value(&self, t: usize, s: usize, a: usize) -> f64 {
        if t >= self.horizon {
            return 0.0;
        }
        let eta = DVector::from_column_slice(self.eta(s, a));
        let mean = self.chi[t].dot(&eta);
        let width = self.factors[t].solve(&eta).dot(&eta).max(0.0).sqrt();
        (mean + self.beta * width).min(self.horizon as f64)
    }

    pub fn q_values(&self, t: usize, s: usize) -> Vec<f64> {
        (0..self.actions).map(|a| self.q_value(t, s, a)).collect()
    }

    pub fn value(&self, t: usize, s: usize) -> f64 {
        self.q_values(t, s)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy action, ties broken uniformly.
    pub fn act(&self, t: usize, s: usize, rng: &mut RngStream) -> usize {
        let q = self.q_values(t, s);
        let best = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ties: Vec<usize> = (0..q.len())
            .filter(|&a| q[a] >= best - TIE_TOLERANCE)
            .collect();
        ties[rng.index(ties.len())]
    }

    pub fn record(&mut self, t: usize, sample: Sample) -> Result<()> {
        let eta = self.eta(sample.state, sample.action).to_vec();
        self.grams[t].add(&eta)?;
        self.data[t].push(sample);
        Ok(())
    }

    /// Backward ridge regressions onto `r + max_a Q_{t+1}(s', a)`.
    pub fn fit(&mut self) -> Result<()> {
        for t in (0..self.horizon).rev() {
            let factor = self.grams[t].cholesky()?;
            let mut rhs = DVector::zeros(self.grams[t].dim());
            for smp in &self.data[t] {
                let target = smp.reward + self.value(t + 1, smp.next_state);
                rhs.axpy(
                    target,
                    &DVector::from_column_slice(self.eta(smp.state, smp.action)),
                    1.0,
                );
            }
            self.chi[t] = factor.solve(&rhs);
            self.factors[t] = factor;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LsviRun {
    pub returns: Vec<f64>,
    pub optimal_return: f64,
    /// Sum over episodes of optimal minus achieved return.
    pub regret: f64,
    #[serde(skip)]
    pub state: LSVIState,
}

pub fn lsvi_ucb_run(
    mdp: &LinearMDP,
    episodes: usize,
    beta: f64,
    ridge: f64,
    rng: &mut RngStream,
) -> Result<LsviRun> {
    let optimal = optimal_return(mdp)?;
    let mut state = LSVIState::new(mdp, beta, ridge)?;
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut s = mdp.mdp.start;
        let mut ret = 0.0;
        for t in 0..mdp.horizon {
            let a = state.act(t, s, rng);
            let reward = mdp.reward(s, a)?;
            let next = tabular_step(&mdp.mdp, s, a, rng)?;
            state.record(
                t,
                Sample {
                    state: s,
                    action: a,
                    reward,
                    next_state: next,
                },
            )?;
            ret += reward;
            s = next;
        }
        returns.push(ret);
        state.fit()?;
    }
    Ok(LsviRun {
        regret: returns.iter().map(|r| optimal - r).sum(),
        returns,
        optimal_return: optimal,
        state,
    })
}

fn is_deterministic(mdp: &TabularMDP) -> Result<bool> {
    for s in 0..mdp.states {
        for a in 0..mdp.actions {
            if !mdp.row(s, a)?.contains(&1.0) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Best expected return from the start state, by exhaustive enumeration.
///
/// Deterministic MDPs enumerate open-loop action sequences; stochastic ones
/// enumerate every deterministic step-indexed Markov policy and evaluate it
/// exactly.
pub fn optimal_return(mdp: &LinearMDP) -> Result<f64> {
    let (ns, na, h) = (mdp.mdp.states, mdp.mdp.actions, mdp.horizon);
    let too_big = || {
        Error::InvalidArgument(format!(
            "MDP too large to enumerate ({ns} states, {na} actions, horizon {h})"
        ))
    };
    let deterministic = is_deterministic(&mdp.mdp)?;
    let digits = if deterministic { h } else { h * ns };
    let total = (na as u64)
        .checked_pow(digits as u32)
        .filter(|&n| n <= ENUMERATION_LIMIT)
        .ok_or_else(too_big)?;
    let mut best = f64::NEG_INFINITY;
    let mut choice = vec![0usize; digits];
    for code in 0..total {
        let mut c = code;
        for d in choice.iter_mut() {
            *d = (c % na as u64) as usize;
            c /= na as u64;
        }
        let value = if deterministic {
            let mut s = mdp.mdp.start;
            let mut ret = 0.0;
            for &a in &choice {
                ret += mdp.reward(s, a)?;
                s = mdp
                    .mdp
                    .row(s, a)?
                    .iter()
                    .position(|&p| p == 1.0)
                    .expect("deterministic row");
            }
            ret
        } else {
            let mut dist = vec![0.0; ns];
            dist[mdp.mdp.start] = 1.0;
            let mut ret = 0.0;
            for t in 0..h {
                let mut next = vec![0.0; ns];
                for (s, &p) in dist.iter().enumerate().filter(|(_, p)| **p > 0.0) {
                    let a = choice[t * ns + s];
                    ret += p * mdp.reward(s, a)?;
                    for (sp, q) in mdp.mdp.row(s, a)?.iter().enumerate() {
                        next[sp] += p * q;
                    }
                }
                dist = next;
            }
            ret
        };
        best = best.max(value);
    }
    Ok(best)
}

// Both example MDPs keep every return in [0, 1]. With one-hot features an
// unvisited pair scores `beta/sqrt(lambda)`, so `beta = 1, lambda = 1` is then
// already optimistic, while the gaps stay wide enough for the bonus to
// settle within a few dozen episodes.

/// Two states, stay (0) or switch (1). Staying in state 1 pays `1/(H-1)`,
/// staying in state 0 pays a fifth of that.
pub fn two_state_mdp(horizon: usize) -> Result<LinearMDP> {
    let rows = vec![
        vec![1.0, 0.0],
        vec![0.0, 1.0],
        vec![0.0, 1.0],
        vec![1.0, 0.0],
    ];
    let mdp = TabularMDP::new(2, 2, 0, rows)?;
    let unit = 1.0 / horizon.saturating_sub(1).max(1) as f64;
    LinearMDP::tabular(mdp, vec![0.2 * unit, 0.0, unit, 0.0], horizon)
}

/// Chain of `n` states with horizon `n`: every left move pays `0.05/n`, and
/// the far absorbing end, reachable only by moving right every step, pays 1.
pub fn deceptive_chain(n: usize) -> Result<LinearMDP> {
    let mdp = TabularMDP::chain(n)?;
    let mut rewards = Vec::with_capacity(2 * n);
    for s in 0..n {
        if s + 1 == n {
            rewards.extend([1.0, 1.0]);
        } else {
            rewards.extend([0.05 / n as f64, 0.0]);
        }
    }
    LinearMDP::tabular(mdp, rewards, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dp_optimal(mdp: &LinearMDP) -> f64 {
        let ns = mdp.mdp.states;
        let mut v = vec![0.0; ns];
        for _ in 0..mdp.horizon {
            v = (0..ns)
                .map(|s| {
                    (0..mdp.mdp.actions)
                        .map(|a| {
                            let row = mdp.mdp.row(s, a).unwrap();
                            mdp.reward(s, a).unwrap()
                                + row.iter().zip(&v).map(|(p, x)| p * x).sum::<f64>()
                        })
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
        }
        v[mdp.mdp.start]
    }

    #[test]
    fn enumeration_matches_dynamic_programming() {
        let two = two_state_mdp(4).unwrap();
        assert!((optimal_return(&two).unwrap() - 1.0).abs() < 1e-12);
        let chain = deceptive_chain(5).unwrap();
        assert!((optimal_return(&chain).unwrap() - 1.0).abs() < 1e-12);
        let random = LinearMDP::random(3, 2, 3, 3, &mut RngStream::new(4)).unwrap();
        for m in [&two, &chain, &random] {
            assert!((optimal_return(m).unwrap() - dp_optimal(m)).abs() < 1e-12);
        }
    }

    #[test]
    fn no_data_is_uniform_at_the_truncation() {
        let mdp = two_state_mdp(3).unwrap();
        let st = LSVIState::new(&mdp, 10.0, 1.0).unwrap();
        for t in 0..3 {
            for s in 0..2 {
                assert_eq!(st.q_values(t, s), vec![3.0, 3.0]);
                assert_eq!(
                    LSVIState::new(&mdp, 1.0, 1.0).unwrap().q_values(t, s),
                    vec![1.0, 1.0]
                );
            }
        }
        let mut rng = RngStream::new(0);
        let picks: Vec<usize> = (0..400).map(|_| st.act(0, 0, &mut rng)).collect();
        let ones = picks.iter().sum::<usize>();
        assert!((150..250).contains(&ones), "{ones}");
        let run = lsvi_ucb_run(&mdp, 0, 1.0, 1.0, &mut RngStream::new(0)).unwrap();
        assert!(run.returns.is_empty() && run.regret == 0.0);
    }

    #[test]
    fn q_is_truncated() {
        let mdp = two_state_mdp(2).unwrap();
        let mut run = lsvi_ucb_run(&mdp, 5, 100.0, 1.0, &mut RngStream::new(3)).unwrap();
        run.state.fit().unwrap();
        for t in 0..2 {
            for s in 0..2 {
                assert!(run.state.q_values(t, s).iter().all(|&q| q <= 2.0));
            }
        }
    }

    #[test]
    fn solves_two_state_mdp() {
        let mdp = two_state_mdp(2).unwrap();
        for seed in 0..5 {
            let run = lsvi_ucb_run(&mdp, 50, 1.0, 1.0, &mut RngStream::new(seed)).unwrap();
            assert!(
                run.returns[40..]
                    .iter()
                    .all(|r| (r - run.optimal_return).abs() < 1e-12),
                "{:?}",
                run.returns
            );
        }
    }

    #[test]
    fn optimism_escapes_deceptive_reward() {
        let mdp = deceptive_chain(5).unwrap();
        for seed in 0..5 {
            let greedy = lsvi_ucb_run(&mdp, 200, 0.0, 1.0, &mut RngStream::new(seed)).unwrap();
            let ucb = lsvi_ucb_run(&mdp, 200, 1.0, 1.0, &mut RngStream::new(seed)).unwrap();
            let tail = |r: &LsviRun| r.returns[150..].iter().sum::<f64>() / 50.0;
            assert!(
                tail(&greedy) < 0.1,
                "seed {seed}: {:?}",
                &greedy.returns[150..]
            );
            assert!(
                (tail(&ucb) - ucb.optimal_return).abs() < 1e-12,
                "seed {seed}: {:?}",
                &ucb.returns[150..]
            );
            assert!(ucb.regret < greedy.regret);
        }
    }

    #[test]
    fn record_grows_gram() {
        let mdp = two_state_mdp(2).unwrap();
        let mut st = LSVIState::new(&mdp, 1.0, 1.0).unwrap();
        let smp = Sample {
            state: 1,
            action: 0,
            reward: 1.0,
            next_state: 1,
        };
        st.record(1, smp).unwrap();
        assert_eq!(st.gram(1).count, 1);
        assert_eq!(st.gram(1).matrix()[(2, 2)], 2.0);
        assert_eq!(st.samples(1), &[smp]);
    }
}
