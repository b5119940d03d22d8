//! Executable checks of the bonus bracket and the tabular count equivalence.

use serde::Serialize;

use super::gram::{info_gain_linear, GramAccumulator};
use crate::error::{Error, Result};
use crate::numcore::RngStream;

pub const BRACKET_TOLERANCE: f64 = 1e-9;
pub const COUNT_THRESHOLD: f64 = 5e-3;
pub const COUNT_THRESHOLD_FROM: u64 = 50;

/// A failing trial's inputs.
#[derive(Clone, Debug, Serialize)]
pub struct Witness {
    pub eta: Vec<f64>,
    /// Row-major `Lambda`.
    pub gram: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    pub lower: f64,
    pub mid: f64,
    pub upper: f64,
    pub lower_ok: bool,
    pub upper_ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.lower_ok && self.upper_ok
    }
}

/// Brackets `sqrt(info_gain)` between `sqrt(c/4) b` and `sqrt(c/2) b`.
pub fn bound_report(eta: &[f64], acc: &GramAccumulator, c: usize) -> Result<BoundReport> {
    let b = acc.quadratic_form(eta)?.sqrt();
    let mid = info_gain_linear(eta, acc, c)?.sqrt();
    let lower = (c as f64 / 4.0).sqrt() * b;
    let upper = (c as f64 / 2.0).sqrt() * b;
    let lower_ok = lower - BRACKET_TOLERANCE <= mid;
    let upper_ok = mid <= upper + BRACKET_TOLERANCE;
    let witness = (!(lower_ok && upper_ok)).then(|| Witness {
        eta: eta.to_vec(),
        gram: acc.matrix().transpose().as_slice().to_vec(),
    });
    Ok(BoundReport {
        lower,
        mid,
        upper,
        lower_ok,
        upper_ok,
        witness,
    })
}

/// Uniform direction, radius uniform in `[0, 1]`, with every tenth draw on
/// the unit sphere so the `x = 1` edge is covered.
fn bounded_feature(d: usize, rng: &mut RngStream, on_sphere: bool) -> Vec<f64> {
    let v = rng.normal_tensor(&[d]);
    let n = v.norm().max(1e-300);
    let r = if on_sphere { 1.0 } else { rng.uniform() };
    v.data().iter().map(|x| x * r / n).collect()
}

/// Random Gram histories of up to `3d` bounded features, queried at a fresh
/// bounded feature.
pub fn verify_theorem1(
    trials: usize,
    d: usize,
    c: usize,
    ridge: f64,
    rng: &mut RngStream,
) -> Result<Vec<BoundReport>> {
    if ridge < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "bracket needs ridge >= 1, got {ridge}"
        )));
    }
    if c == 0 {
        return Err(Error::InvalidArgument(
            "output count c must be at least 1".into(),
        ));
    }
    (0..trials)
        .map(|trial| {
            let mut acc = GramAccumulator::new(d, ridge)?;
            for _ in 0..rng.index(3 * d + 1) {
                acc.add(&bounded_feature(d, rng, false))?;
            }
            let eta = bounded_feature(d, rng, trial % 10 == 0);
            bound_report(&eta, &acc, c)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct CountEntry {
    pub count: u64,
    pub exact: f64,
    pub approx: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Theorem2Report {
    pub ridge: f64,
    pub state_count: usize,
    pub entries: Vec<CountEntry>,
    pub threshold_ok: bool,
    pub monotone: bool,
}

impl Theorem2Report {
    pub fn passed(&self) -> bool {
        self.threshold_ok && self.monotone
    }
}

/// Exact tabular bonus `sqrt((c/2) ln(1 + 1/(N + lambda)))` against the count
/// form `sqrt(c/2) / sqrt(N + lambda)`, with `c = |S|`.
pub fn verify_theorem2(counts: &[u64], ridge: f64, state_count: usize) -> Result<Theorem2Report> {
    if !(ridge > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ridge must be positive, got {ridge}"
        )));
    }
    let half_c = state_count as f64 / 2.0;
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let entries: Vec<CountEntry> = sorted
        .iter()
        .map(|&n| {
            let x = 1.0 / (n as f64 + ridge);
            let exact = (half_c * x.ln_1p()).sqrt();
            let approx = half_c.sqrt() * x.sqrt();
            CountEntry {
                count: n,
                exact,
                approx,
                rel_error: (exact - approx).abs() / approx,
            }
        })
        .collect();
    let threshold_ok = entries
        .iter()
        .filter(|e| e.count >= COUNT_THRESHOLD_FROM)
        .all(|e| e.rel_error < COUNT_THRESHOLD);
    let monotone = entries.windows(2).all(|w| w[1].rel_error < w[0].rel_error);
    Ok(Theorem2Report {
        ridge,
        state_count,
        entries,
        threshold_ok,
        monotone,
    })
}
