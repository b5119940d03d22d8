use crate::error::{Error, Result};

/// Generalised advantage estimates for one actor's trajectory.
///
/// `bootstrap` is `V(s_T)` after the last step; a `done` flag at step `t`
/// severs both the bootstrap and the advantage recursion.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: Option<f64>,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(Error::dim(
            "compute_gae",
            n,
            format!("{} values, {} dones", values.len(), dones.len()),
        ));
    }
    let bootstrap =
        bootstrap.ok_or_else(|| Error::InvalidArgument("missing bootstrap value".into()))?;
    let mut adv = vec![0.0; n];
    let mut next_value = bootstrap;
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Zero-mean, unit-std advantages; an all-equal batch becomes all zeros.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    if adv.is_empty() {
        return Vec::new();
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= 1e-12 * (1.0 + mean.abs()) {
        return vec![0.0; adv.len()];
    }
    adv.iter().map(|a| (a - mean) / std).collect()
}
