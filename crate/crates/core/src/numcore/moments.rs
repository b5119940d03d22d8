use serde::{Deserialize, Serialize};

/// Streaming mean and variance.
///
/// Batches are folded in with the pairwise (Chan et al.) combination of
/// Welford accumulators, so the split of a stream into batches does not
/// change the result beyond rounding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningMoments {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl RunningMoments {
    pub fn new() -> Self {
        Self::default()
    }

    /// Population variance of everything seen so far.
    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0)
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn update(&mut self, values: &[f64]) {
        if values.is_empty() {
            return;
        }
        let mut batch = RunningMoments::new();
        for &v in values {
            batch.count += 1;
            let delta = v - batch.mean;
            batch.mean += delta / batch.count as f64;
            batch.m2 += delta * (v - batch.mean);
        }
        self.merge(&batch);
    }

    pub fn merge(&mut self, other: &RunningMoments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n_a = self.count as f64;
        let n_b = other.count as f64;
        let n = n_a + n_b;
        let delta = other.mean - self.mean;
        self.mean += delta * n_b / n;
        self.m2 += other.m2 + delta * delta * n_a * n_b / n;
        self.count += other.count;
    }
}

/// Returns `state` after folding in one batch.
pub fn running_moments_update(mut state: RunningMoments, values: &[f64]) -> RunningMoments {
    state.update(values);
    state
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_pass(xs: &[f64]) -> (f64, f64) {
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        (mean, var)
    }

    #[test]
    fn single_value() {
        let s = running_moments_update(RunningMoments::new(), &[5.0]);
        assert_eq!((s.mean, s.variance(), s.count), (5.0, 0.0, 1));
    }

    #[test]
    fn matches_two_pass() {
        let s = running_moments_update(RunningMoments::new(), &[1.0, 2.0, 3.0]);
        let (m, v) = two_pass(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, m);
        assert_eq!(s.variance(), v);
    }

    #[test]
    fn batch_split_invariance() {
        let a = running_moments_update(
            running_moments_update(RunningMoments::new(), &[1.0, 2.0]),
            &[3.0],
        );
        let b = running_moments_update(
            running_moments_update(RunningMoments::new(), &[1.0]),
            &[2.0, 3.0],
        );
        assert!((a.mean - b.mean).abs() < 1e-12);
        assert!((a.variance() - b.variance()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn any_split_matches_two_pass(xs in proptest::collection::vec(-100.0f64..100.0, 2..60), cut in 0usize..60) {
            let cut = cut.min(xs.len());
            let s = running_moments_update(running_moments_update(RunningMoments::new(), &xs[..cut]), &xs[cut..]);
            let (m, v) = two_pass(&xs);
            prop_assert!((s.mean - m).abs() < 1e-9);
            prop_assert!((s.variance() - v).abs() < 1e-8 * (1.0 + v));
            prop_assert!(s.variance() >= 0.0);
            prop_assert_eq!(s.count as usize, xs.len());
        }
    }
}
