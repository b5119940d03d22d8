//! Exact check of the contrastive lower bound
//! `I(Z; S') >= log N + L_nce(h)` on small discrete joints.
//!
//! `L_nce(h)` is evaluated as an exact expectation: the positive pair is drawn
//! from the joint and the `N` negatives independently from the marginal of
//! `S'`, and every negative tuple is enumerated.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numcore::RngStream;

#[derive(Clone, Debug, Serialize)]
pub struct NceBoundReport {
    pub negatives: usize,
    pub mutual_information: f64,
    pub l_nce: f64,
    /// `log N + L_nce(h)`.
    pub lower_bound: f64,
    pub gap: f64,
    pub holds: bool,
}

fn validate(joint: &[Vec<f64>], h: &[Vec<f64>], negatives: usize) -> Result<(usize, usize)> {
    let nz = joint.len();
    let ns = joint.first().map_or(0, Vec::len);
    if nz == 0 || ns == 0 || joint.iter().any(|r| r.len() != ns) {
        return Err(Error::InvalidArgument(
            "joint must be a non-empty rectangular table".into(),
        ));
    }
    if nz * ns > 64 {
        return Err(Error::InvalidArgument(format!(
            "joint has {} cells, at most 64 allowed",
            nz * ns
        )));
    }
    if h.len() != nz || h.iter().any(|r| r.len() != ns) {
        return Err(Error::dim(
            "score table",
            format!("{nz}x{ns}"),
            format!("{}x{}", h.len(), h.first().map_or(0, Vec::len)),
        ));
    }
    if !(1..=3).contains(&negatives) {
        return Err(Error::InvalidArgument(format!(
            "negatives must be 1, 2 or 3, got {negatives}"
        )));
    }
    let total: f64 = joint.iter().flatten().sum();
    if joint.iter().flatten().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "joint is not normalised (sum {total})"
        )));
    }
    if h.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("score table".into()));
    }
    Ok((nz, ns))
}

pub fn mutual_information(joint: &[Vec<f64>]) -> f64 {
    let ns = joint[0].len();
    let pz: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
    let ps: Vec<f64> = (0..ns).map(|j| joint.iter().map(|r| r[j]).sum()).collect();
    let mut mi = 0.0;
    for (i, row) in joint.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            if p > 0.0 {
                mi += p * (p / (pz[i] * ps[j])).ln();
            }
        }
    }
    mi
}

pub fn exact_nce_bound_check(
    joint: &[Vec<f64>],
    h: &[Vec<f64>],
    negatives: usize,
) -> Result<NceBoundReport> {
    let (_, ns) = validate(joint, h, negatives)?;
    let ps: Vec<f64> = (0..ns).map(|j| joint.iter().map(|r| r[j]).sum()).collect();
    let tuples = ns.pow(negatives as u32);
    let mut l_nce = 0.0;
    for (z, row) in joint.iter().enumerate() {
        for (pos, &p) in row.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let hz = &h[z];
            let mut inner = 0.0;
            for code in 0..tuples {
                let mut c = code;
                let mut weight = 1.0;
                let mut terms = Vec::with_capacity(negatives + 1);
                terms.push(hz[pos]);
                for _ in 0..negatives {
                    let s = c % ns;
                    c /= ns;
                    weight *= ps[s];
                    terms.push(hz[s]);
                }
                if weight == 0.0 {
                    continue;
                }
                let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
                inner += weight * (hz[pos] - lse);
            }
            l_nce += p * inner;
        }
    }
    let mi = mutual_information(joint);
    let lower = (negatives as f64).ln() + l_nce;
    Ok(NceBoundReport {
        negatives,
        mutual_information: mi,
        l_nce,
        lower_bound: lower,
        gap: mi - lower,
        holds: lower <= mi + 1e-9,
    })
}

/// `log p(s' | z) - log p(s')`, the density-ratio score.
pub fn log_ratio_scores(joint: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let ns = joint[0].len();
    let ps: Vec<f64> = (0..ns).map(|j| joint.iter().map(|r| r[j]).sum()).collect();
    joint
        .iter()
        .map(|row| {
            let pz: f64 = row.iter().sum();
            row.iter()
                .zip(&ps)
                .map(|(&p, &q)| (p.max(1e-300) / (pz * q).max(1e-300)).ln())
                .collect()
        })
        .collect()
}

/// Random strictly positive joint of the given shape.
pub fn random_joint(nz: usize, ns: usize, rng: &mut RngStream) -> Vec<Vec<f64>> {
    let raw: Vec<Vec<f64>> = (0..nz)
        .map(|_| (0..ns).map(|_| rng.uniform() + 0.05).collect())
        .collect();
    let total: f64 = raw.iter().flatten().sum();
    raw.into_iter()
        .map(|r| r.into_iter().map(|p| p / total).collect())
        .collect()
}

/// Random score table with entries in `[-scale, scale]`.
pub fn random_scores(nz: usize, ns: usize, scale: f64, rng: &mut RngStream) -> Vec<Vec<f64>> {
    (0..nz)
        .map(|_| (0..ns).map(|_| rng.uniform_range(-scale, scale)).collect())
        .collect()
}

/// The joints exercised by the verification suite: independent, the
/// correlated 2x2 table, and three random ones.
pub fn reference_joints(seed: u64) -> Vec<Vec<Vec<f64>>> {
    let mut rng = RngStream::new(seed);
    let pz = [0.3, 0.7];
    let ps = [0.2, 0.5, 0.3];
    let independent = pz
        .iter()
        .map(|a| ps.iter().map(|b| a * b).collect())
        .collect();
    vec![
        independent,
        vec![vec![0.4, 0.1], vec![0.1, 0.4]],
        random_joint(3, 3, &mut rng),
        random_joint(4, 2, &mut rng),
        random_joint(2, 5, &mut rng),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn independent_joint_has_bound_below_zero() {
        let joint = &reference_joints(0)[0];
        assert!(mutual_information(joint).abs() < 1e-15);
        let mut rng = RngStream::new(1);
        for n in 1..=3 {
            for _ in 0..20 {
                let h = random_scores(2, 3, 3.0, &mut rng);
                let r = exact_nce_bound_check(joint, &h, n).unwrap();
                assert!(r.l_nce <= -(n as f64).ln() + 1e-12, "{r:?}");
            }
        }
    }

    #[test]
    fn correlated_two_by_two() {
        let joint = vec![vec![0.4, 0.1], vec![0.1, 0.4]];
        // 0.8 ln 1.6 + 0.2 ln 0.4
        let mi = 0.8 * 1.6f64.ln() + 0.2 * 0.4f64.ln();
        assert!((mutual_information(&joint) - mi).abs() < 1e-15);
        let mut rng = RngStream::new(2);
        for _ in 0..100 {
            let h = random_scores(2, 2, 5.0, &mut rng);
            assert!(exact_nce_bound_check(&joint, &h, 1).unwrap().holds);
        }
    }

    #[test]
    fn n_one_matches_hand_enumeration() {
        let joint = vec![vec![0.4, 0.1], vec![0.1, 0.4]];
        let h = vec![vec![1.0, -0.5], vec![0.2, 0.7]];
        let ps = [0.5, 0.5];
        let mut expect = 0.0;
        for z in 0..2 {
            for pos in 0..2 {
                for neg in 0..2 {
                    let lse = (h[z][pos] as f64).exp() + (h[z][neg] as f64).exp();
                    expect += joint[z][pos] * ps[neg] * (h[z][pos] - lse.ln());
                }
            }
        }
        let r = exact_nce_bound_check(&joint, &h, 1).unwrap();
        assert!((r.l_nce - expect).abs() < 1e-14);
    }

    #[test]
    fn density_ratio_gap_shrinks_with_negatives() {
        for joint in reference_joints(3).iter().skip(1) {
            let h = log_ratio_scores(joint);
            let gaps: Vec<f64> = (1..=3)
                .map(|n| exact_nce_bound_check(joint, &h, n).unwrap().gap)
                .collect();
            assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
            assert!(gaps.iter().all(|&g| g >= -1e-12));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let joint = vec![vec![0.5, 0.6]];
        assert!(exact_nce_bound_check(&joint, &[vec![0.0, 0.0]], 1).is_err());
        let joint = vec![vec![0.5, 0.5]];
        assert!(exact_nce_bound_check(&joint, &[vec![0.0, 0.0]], 4).is_err());
        assert!(exact_nce_bound_check(&joint, &[vec![0.0]], 1).is_err());
        let big = vec![vec![1.0 / 65.0; 65]];
        assert!(exact_nce_bound_check(&big, &[vec![0.0; 65]], 1).is_err());
    }
}
