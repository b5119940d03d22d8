//! Central finite-difference validation of analytic gradients.

use serde::Serialize;

use super::params::ParamSet;
use super::rng::RngStream;
use crate::error::{Error, Result};

/// Tensors with more entries than this are checked on a random subsample.
pub const FULL_CHECK_LIMIT: usize = 256;
pub const SUBSAMPLE_SIZE: usize = 64;

/// A central difference cannot resolve relative agreement finer than its own
/// quantum, `ulp(f) / (2 eps)`. Errors are therefore measured against at least
/// this many quanta, so a gradient at the floor is judged to 1e-4 relative.
pub const RESOLUTION_QUANTA: f64 = 1e4;

#[derive(Clone, Debug, Serialize)]
pub struct ParamGradError {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
    /// Coordinates whose gradient was below the resolution floor.
    pub resolution_limited: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradReport {
    pub params: Vec<ParamGradError>,
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
    /// Same maximum with only the fixed 1e-8 floor, for transparency.
    pub max_raw_rel_error: f64,
    pub resolution_limited: usize,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_floored(analytic, numeric, 0.0)
}

fn relative_error_floored(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8).max(floor)
}

/// Smallest nonzero magnitude a central difference at `eps` can produce.
pub fn fd_quantum(f_plus: f64, f_minus: f64, eps: f64) -> f64 {
    f_plus.abs().max(f_minus.abs()) * f64::EPSILON / (2.0 * eps)
}

/// Compares `loss`'s analytic gradient with central differences.
///
/// `loss` returns the value and its gradient; every name present in the
/// gradient set is checked. `loss` must be deterministic in `params`.
pub fn finite_difference_check<F>(
    loss: F,
    params: &ParamSet,
    eps: f64,
    sample_seed: u64,
) -> Result<GradReport>
where
    F: Fn(&ParamSet) -> Result<(f64, ParamSet)>,
{
    finite_difference_check_steps(loss, params, &[eps], sample_seed)
}

/// As [`finite_difference_check`], scoring each coordinate by its best
/// agreement over several step sizes.
///
/// No single step suits piecewise-linear networks: a large step can straddle
/// an activation kink, a small one drowns gradients far below the loss scale
/// in roundoff. A correct gradient agrees at some admissible step; a wrong
/// one agrees at none.
pub fn finite_difference_check_steps<F>(
    loss: F,
    params: &ParamSet,
    steps: &[f64],
    sample_seed: u64,
) -> Result<GradReport>
where
    F: Fn(&ParamSet) -> Result<(f64, ParamSet)>,
{
    if steps.is_empty() {
        return Err(Error::InvalidArgument(
            "no finite-difference steps given".into(),
        ));
    }
    if let Some(eps) = steps.iter().find(|e| !(1e-7..=1e-4).contains(*e)) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference eps {eps} outside [1e-7, 1e-4]"
        )));
    }
    let (value, analytic) = loss(params)?;
    if !value.is_finite() {
        return Err(Error::NonFinite("loss at base point".into()));
    }
    let mut rng = RngStream::new(sample_seed);
    let mut report = GradReport {
        params: Vec::new(),
        max_rel_error: 0.0,
        worst: None,
        max_raw_rel_error: 0.0,
        resolution_limited: 0,
    };
    let mut probe = params.clone();
    for (name, grad) in analytic.iter() {
        let base = params.require(name)?;
        if base.len() != grad.len() {
            return Err(Error::dim(
                "finite_difference_check",
                base.len(),
                grad.len(),
            ));
        }
        let coords: Vec<usize> = if base.len() > FULL_CHECK_LIMIT {
            let mut all: Vec<usize> = (0..base.len()).collect();
            rng.shuffle(&mut all);
            all.truncate(SUBSAMPLE_SIZE);
            all.sort_unstable();
            all
        } else {
            (0..base.len()).collect()
        };
        let mut entry = ParamGradError {
            name: name.to_string(),
            max_rel_error: 0.0,
            worst_index: 0,
            checked: coords.len(),
            resolution_limited: 0,
        };
        for &i in &coords {
            let x0 = base.data()[i];
            let a = grad.data()[i];
            let (mut rel, mut raw, mut limited) = (f64::INFINITY, f64::INFINITY, true);
            for &eps in steps {
                probe.get_mut(name).expect("present").data_mut()[i] = x0 + eps;
                let (fp, _) = loss(&probe)?;
                probe.get_mut(name).expect("present").data_mut()[i] = x0 - eps;
                let (fm, _) = loss(&probe)?;
                probe.get_mut(name).expect("present").data_mut()[i] = x0;
                if !fp.is_finite() || !fm.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss while perturbing {name}[{i}]"
                    )));
                }
                let numeric = (fp - fm) / (2.0 * eps);
                let floor = RESOLUTION_QUANTA * fd_quantum(fp, fm, eps);
                rel = rel.min(relative_error_floored(a, numeric, floor));
                raw = raw.min(relative_error(a, numeric));
                limited &= a.abs() + numeric.abs() < floor;
            }
            entry.resolution_limited += usize::from(limited);
            report.max_raw_rel_error = report.max_raw_rel_error.max(raw);
            if rel > entry.max_rel_error {
                entry.max_rel_error = rel;
                entry.worst_index = i;
            }
        }
        report.resolution_limited += entry.resolution_limited;
        if entry.max_rel_error >= report.max_rel_error {
            report.max_rel_error = entry.max_rel_error;
            report.worst = Some((entry.name.clone(), entry.worst_index));
        }
        report.params.push(entry);
    }
    Ok(report)
}
