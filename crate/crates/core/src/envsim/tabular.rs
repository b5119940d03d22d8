use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::RngStream;

pub const CHAIN_LEFT: usize = 0;
pub const CHAIN_RIGHT: usize = 1;

/// Finite MDP with an explicit transition table `P[(s * A + a)][s']`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularMDP {
    pub states: usize,
    pub actions: usize,
    pub start: usize,
    transitions: Vec<Vec<f64>>,
}

impl TabularMDP {
    pub fn new(
        states: usize,
        actions: usize,
        start: usize,
        transitions: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if states == 0 || actions == 0 || start >= states {
            return Err(Error::InvalidArgument(format!(
                "tabular MDP needs states > 0, actions > 0, start < states (got {states}, {actions}, {start})"
            )));
        }
        if transitions.len() != states * actions {
            return Err(Error::dim(
                "TabularMDP::new",
                states * actions,
                transitions.len(),
            ));
        }
        for (i, row) in transitions.iter().enumerate() {
            if row.len() != states {
                return Err(Error::dim("TabularMDP::new", states, row.len()));
            }
            let total: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "transition row (s={}, a={}) is not a distribution (sum {total})",
                    i / actions,
                    i % actions
                )));
            }
        }
        Ok(TabularMDP {
            states,
            actions,
            start,
            transitions,
        })
    }

    /// Deterministic chain of `n` states, left/right moves, last state absorbing.
    pub fn chain(n: usize) -> Result<Self> {
        let mut rows = Vec::with_capacity(2 * n);
        for s in 0..n {
            for a in [CHAIN_LEFT, CHAIN_RIGHT] {
                let next = if s + 1 == n {
                    s
                } else if a == CHAIN_RIGHT {
                    s + 1
                } else {
                    s.saturating_sub(1)
                };
                let mut row = vec![0.0; n];
                row[next] = 1.0;
                rows.push(row);
            }
        }
        TabularMDP::new(n, 2, 0, rows)
    }

    pub fn row(&self, s: usize, a: usize) -> Result<&[f64]> {
        self.check(s, a)?;
        Ok(&self.transitions[s * self.actions + a])
    }

    fn check(&self, s: usize, a: usize) -> Result<()> {
        if s >= self.states || a >= self.actions {
            return Err(Error::InvalidArgument(format!(
                "(s={s}, a={a}) outside {} states x {} actions",
                self.states, self.actions
            )));
        }
        Ok(())
    }
}

pub fn tabular_step(mdp: &TabularMDP, s: usize, a: usize, rng: &mut RngStream) -> Result<usize> {
    let row = mdp.row(s, a)?;
    Ok(rng.categorical(row))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_moves_and_absorbs() {
        let m = TabularMDP::chain(4).unwrap();
        let mut rng = RngStream::new(0);
        assert_eq!(tabular_step(&m, 0, CHAIN_RIGHT, &mut rng).unwrap(), 1);
        assert_eq!(tabular_step(&m, 0, CHAIN_LEFT, &mut rng).unwrap(), 0);
        assert_eq!(tabular_step(&m, 3, CHAIN_LEFT, &mut rng).unwrap(), 3);
        assert_eq!(tabular_step(&m, 3, CHAIN_RIGHT, &mut rng).unwrap(), 3);
        assert!(tabular_step(&m, 4, 0, &mut rng).is_err());
        assert!(tabular_step(&m, 0, 2, &mut rng).is_err());
    }

    #[test]
    fn rejects_unnormalised_rows() {
        assert!(TabularMDP::new(2, 1, 0, vec![vec![0.5, 0.6], vec![1.0, 0.0]]).is_err());
        assert!(TabularMDP::new(2, 1, 0, vec![vec![1.5, -0.5], vec![1.0, 0.0]]).is_err());
    }

    #[test]
    fn empirical_frequencies_match_table() {
        let p = vec![0.2, 0.5, 0.3];
        let m = TabularMDP::new(3, 1, 0, vec![p.clone(), p.clone(), p.clone()]).unwrap();
        let mut rng = RngStream::new(8);
        let n = 100_000;
        let mut counts = [0u32; 3];
        for _ in 0..n {
            counts[tabular_step(&m, 1, 0, &mut rng).unwrap()] += 1;
        }
        for (c, q) in counts.iter().zip(&p) {
            let sigma = (n as f64 * q * (1.0 - q)).sqrt();
            assert!((*c as f64 - n as f64 * q).abs() < 3.0 * sigma);
        }
    }
}
