//! Feature gridworld with dynamics-irrelevant noise.
//!
//! Observations are `[one-hot position (G*G) | noise block (k)]`. In pixel
//! mode the noise block is fresh N(0,1) every step; box mode additionally
//! overwrites a contiguous run of the informative block, at a uniformly
//! random offset that is re-drawn every step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{RngStream, Tensor};

pub const ACTION_COUNT: usize = 4;
pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    #[default]
    None,
    Pixel,
    Box,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoisyGridConfig {
    pub grid_side: usize,
    pub noise_dims: usize,
    pub noise_mode: NoiseMode,
    pub box_width: usize,
    pub sticky_prob: f64,
    /// `[row, col]` of the rewarding cell; no extrinsic reward when absent.
    pub goal_cell: Option<[usize; 2]>,
    pub episode_len: usize,
}

impl Default for NoisyGridConfig {
    fn default() -> Self {
        NoisyGridConfig {
            grid_side: 8,
            noise_dims: 16,
            noise_mode: NoiseMode::None,
            box_width: 0,
            sticky_prob: 0.0,
            goal_cell: Some([7, 7]),
            episode_len: 128,
        }
    }
}

impl NoisyGridConfig {
    pub fn cells(&self) -> usize {
        self.grid_side * self.grid_side
    }

    pub fn obs_dim(&self) -> usize {
        self.cells() + self.noise_dims
    }

    pub fn goal_index(&self) -> Option<usize> {
        self.goal_cell.map(|[r, c]| r * self.grid_side + c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.grid_side < 2 {
            return bad(format!("grid_side must be >= 2, got {}", self.grid_side));
        }
        if self.box_width > self.cells() {
            return bad(format!(
                "box_width {} exceeds {} informative coordinates",
                self.box_width,
                self.cells()
            ));
        }
        if !(0.0..=1.0).contains(&self.sticky_prob) {
            return bad(format!("sticky_prob {} outside [0, 1]", self.sticky_prob));
        }
        if self.episode_len == 0 {
            return bad("episode_len must be positive".into());
        }
        if let Some([r, c]) = self.goal_cell {
            if r >= self.grid_side || c >= self.grid_side {
                return bad(format!(
                    "goal_cell [{r}, {c}] outside a {0}x{0} grid",
                    self.grid_side
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridState {
    pub cell: usize,
    pub prev_action: Option<usize>,
    pub t: usize,
}

/// One environment step. `extrinsic_reward` is for evaluation only.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Tensor,
    pub action: usize,
    pub executed_action: usize,
    pub next_obs: Tensor,
    pub done: bool,
    pub extrinsic_reward: f64,
    pub cell: usize,
    pub next_cell: usize,
}

pub fn render_observation(
    state: &GridState,
    config: &NoisyGridConfig,
    rng: &mut RngStream,
) -> Tensor {
    let cells = config.cells();
    let mut obs = Tensor::zeros(&[config.obs_dim()]);
    let data = obs.data_mut();
    data[state.cell] = 1.0;
    if config.noise_mode == NoiseMode::None {
        return obs;
    }
    for v in &mut data[cells..] {
        *v = rng.normal();
    }
    if config.noise_mode == NoiseMode::Box && config.box_width > 0 {
        let start = rng.index(cells - config.box_width + 1);
        for v in &mut data[start..start + config.box_width] {
            *v = rng.normal();
        }
    }
    obs
}

pub fn grid_reset(config: &NoisyGridConfig, rng: &mut RngStream) -> (GridState, Tensor) {
    let state = GridState {
        cell: 0,
        prev_action: None,
        t: 0,
    };
    let obs = render_observation(&state, config, rng);
    (state, obs)
}

fn moved(cell: usize, action: usize, g: usize) -> usize {
    let (r, c) = (cell / g, cell % g);
    let (r, c) = match action {
        UP => (r.saturating_sub(1), c),
        DOWN => ((r + 1).min(g - 1), c),
        LEFT => (r, c.saturating_sub(1)),
        _ => (r, (c + 1).min(g - 1)),
    };
    r * g + c
}

/// Advances one step. `obs` is the observation the agent acted on.
///
/// The sticky coin is drawn on every step, even when it cannot matter, so
/// the random stream advances identically whatever the actions are.
pub fn grid_step(
    state: &GridState,
    obs: &Tensor,
    action: usize,
    config: &NoisyGridConfig,
    rng: &mut RngStream,
) -> Result<(GridState, Transition)> {
    if action >= ACTION_COUNT {
        return Err(Error::InvalidArgument(format!(
            "action {action} outside [0, {ACTION_COUNT})"
        )));
    }
    let stick = rng.uniform() < config.sticky_prob;
    let executed = match state.prev_action {
        Some(prev) if stick => prev,
        _ => action,
    };
    let next_cell = moved(state.cell, executed, config.grid_side);
    let next = GridState {
        cell: next_cell,
        prev_action: Some(executed),
        t: state.t + 1,
    };
    let next_obs = render_observation(&next, config, rng);
    let reward = if config.goal_index() == Some(next_cell) {
        1.0
    } else {
        0.0
    };
    let tr = Transition {
        obs: obs.clone(),
        action,
        executed_action: executed,
        next_obs,
        done: next.t >= config.episode_len,
        extrinsic_reward: reward,
        cell: state.cell,
        next_cell,
    };
    Ok((next, tr))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(g: usize, k: usize, mode: NoiseMode) -> NoisyGridConfig {
        NoisyGridConfig {
            grid_side: g,
            noise_dims: k,
            noise_mode: mode,
            goal_cell: None,
            ..NoisyGridConfig::default()
        }
    }

    #[test]
    fn reset_is_one_hot() {
        let (s, obs) = grid_reset(&cfg(2, 0, NoiseMode::None), &mut RngStream::new(0));
        assert_eq!(s.cell, 0);
        assert_eq!(obs.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn pixel_noise_regenerates_from_seed() {
        let c = cfg(2, 2, NoiseMode::Pixel);
        let (_, obs) = grid_reset(&c, &mut RngStream::new(11));
        assert_eq!(&obs.data()[..4], &[1.0, 0.0, 0.0, 0.0]);
        let mut oracle = RngStream::new(11);
        let expected = [oracle.normal(), oracle.normal()];
        assert_eq!(&obs.data()[4..], &expected);
        let (_, again) = grid_reset(&c, &mut RngStream::new(11));
        assert_eq!(obs, again);
    }

    #[test]
    fn wall_clip_at_origin() {
        let c = cfg(3, 0, NoiseMode::None);
        let mut rng = RngStream::new(0);
        let (s, obs) = grid_reset(&c, &mut rng);
        for a in [UP, LEFT] {
            let (s2, tr) = grid_step(&s, &obs, a, &c, &mut rng).unwrap();
            assert_eq!(s2.cell, 0);
            assert_eq!(tr.next_obs.data()[..9], obs.data()[..9]);
        }
        let (s2, _) = grid_step(&s, &obs, RIGHT, &c, &mut rng).unwrap();
        let (s3, _) = grid_step(&s2, &obs, DOWN, &c, &mut rng).unwrap();
        assert_eq!(s3.cell, 4);
    }

    #[test]
    fn invalid_action_rejected() {
        let c = cfg(2, 0, NoiseMode::None);
        let mut rng = RngStream::new(0);
        let (s, obs) = grid_reset(&c, &mut rng);
        assert!(grid_step(&s, &obs, 4, &c, &mut rng).is_err());
    }

    #[test]
    fn no_stickiness_executes_chosen_action() {
        let c = cfg(4, 0, NoiseMode::None);
        let mut rng = RngStream::new(3);
        let (mut s, mut obs) = grid_reset(&c, &mut rng);
        for i in 0..500 {
            let a = (i * 7 + 3) % 4;
            let (s2, tr) = grid_step(&s, &obs, a, &c, &mut rng).unwrap();
            assert_eq!(tr.executed_action, a);
            s = s2;
            obs = tr.next_obs;
        }
    }

    #[test]
    fn sticky_frequency_matches_binomial() {
        let c = NoisyGridConfig {
            sticky_prob: 0.25,
            ..cfg(4, 0, NoiseMode::None)
        };
        let mut rng = RngStream::new(17);
        let mut choose = RngStream::new(18);
        let (mut s, mut obs) = grid_reset(&c, &mut rng);
        let (mut eligible, mut replaced) = (0u32, 0u32);
        for _ in 0..10_000 {
            let a = choose.index(4);
            let prev = s.prev_action;
            let (s2, tr) = grid_step(&s, &obs, a, &c, &mut rng).unwrap();
            if prev.is_some_and(|p| p != a) {
                eligible += 1;
                if tr.executed_action != a {
                    replaced += 1;
                }
            } else {
                assert_eq!(tr.executed_action, a);
            }
            s = s2;
            obs = tr.next_obs;
        }
        let n = eligible as f64;
        let sigma = (n * 0.25 * 0.75).sqrt();
        assert!(
            (replaced as f64 - 0.25 * n).abs() < 3.0 * sigma,
            "{replaced}/{eligible}"
        );
    }

    #[test]
    fn render_modes() {
        let state = GridState {
            cell: 5,
            prev_action: None,
            t: 0,
        };
        let none = render_observation(&state, &cfg(3, 4, NoiseMode::None), &mut RngStream::new(0));
        let mut expected = vec![0.0; 13];
        expected[5] = 1.0;
        assert_eq!(none.data(), expected.as_slice());

        // Zeroing the noise block recovers the position exactly.
        let mut pixel =
            render_observation(&state, &cfg(3, 4, NoiseMode::Pixel), &mut RngStream::new(1));
        pixel.data_mut()[9..].iter_mut().for_each(|v| *v = 0.0);
        assert_eq!(pixel.data(), expected.as_slice());

        // A full-width box erases the position: the informative block is pure noise.
        let full = NoisyGridConfig {
            box_width: 9,
            ..cfg(3, 4, NoiseMode::Box)
        };
        let a = render_observation(&state, &full, &mut RngStream::new(2));
        let other = GridState { cell: 0, ..state };
        let b = render_observation(&other, &full, &mut RngStream::new(2));
        assert_eq!(a, b);
    }

    #[test]
    fn box_overwrites_contiguous_run() {
        let c = NoisyGridConfig {
            box_width: 3,
            ..cfg(4, 2, NoiseMode::Box)
        };
        let state = GridState {
            cell: 0,
            prev_action: None,
            t: 0,
        };
        let mut rng = RngStream::new(9);
        for _ in 0..200 {
            let obs = render_observation(&state, &c, &mut rng);
            let touched: Vec<usize> = (0..16)
                .filter(|&i| obs.data()[i] != if i == 0 { 1.0 } else { 0.0 })
                .collect();
            assert_eq!(touched.len(), 3);
            assert_eq!(touched[2] - touched[0], 2);
        }
    }

    #[test]
    fn episode_determinism_and_done() {
        let c = NoisyGridConfig {
            episode_len: 10,
            sticky_prob: 0.25,
            ..cfg(4, 3, NoiseMode::Pixel)
        };
        let run = || {
            let mut rng = RngStream::new(5);
            let (mut s, mut obs) = grid_reset(&c, &mut rng);
            let mut out = Vec::new();
            for t in 0..10 {
                let (s2, tr) = grid_step(&s, &obs, t % 4, &c, &mut rng).unwrap();
                s = s2;
                obs = tr.next_obs.clone();
                out.push(tr);
            }
            out
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert!(a[..9].iter().all(|t| !t.done));
        assert!(a[9].done);
    }

    #[test]
    fn noise_shuffle_leaves_informative_transitions_unchanged() {
        let c = cfg(3, 4, NoiseMode::Pixel);
        let mut rng = RngStream::new(21);
        let mut act = RngStream::new(22);
        let (mut s, mut obs) = grid_reset(&c, &mut rng);
        let mut batch = Vec::new();
        for _ in 0..400 {
            let (s2, tr) = grid_step(&s, &obs, act.index(4), &c, &mut rng).unwrap();
            s = s2;
            obs = tr.next_obs.clone();
            batch.push(tr);
        }
        let decode = |o: &Tensor| o.data()[..9].iter().position(|&v| v == 1.0).unwrap();
        let counts = |b: &[Transition]| {
            let mut n = vec![0u32; 9 * 4 * 9];
            for t in b {
                n[(decode(&t.obs) * 4 + t.executed_action) * 9 + decode(&t.next_obs)] += 1;
            }
            n
        };
        let before = counts(&batch);
        let mut perm: Vec<usize> = (0..batch.len()).collect();
        act.shuffle(&mut perm);
        let noise: Vec<Vec<f64>> = perm
            .iter()
            .map(|&i| batch[i].next_obs.data()[9..].to_vec())
            .collect();
        for (t, n) in batch.iter_mut().zip(noise) {
            t.next_obs.data_mut()[9..].copy_from_slice(&n);
        }
        assert_eq!(before, counts(&batch));
    }
}
