//! Ridge Gram matrix of visited features and the quantities read off it.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// `Lambda = sum eta eta^T + lambda I`.
#[derive(Clone, Debug, PartialEq)]
pub struct GramAccumulator {
    matrix: DMatrix<f64>,
    pub ridge: f64,
    pub count: usize,
}

impl GramAccumulator {
    pub fn new(dim: usize, ridge: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "Gram dimension must be positive".into(),
            ));
        }
        if !(ridge > 0.0 && ridge.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "ridge must be positive, got {ridge}"
            )));
        }
        Ok(GramAccumulator {
            matrix: DMatrix::identity(dim, dim) * ridge,
            ridge,
            count: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    fn check(&self, eta: &[f64]) -> Result<()> {
        if eta.len() != self.dim() {
            return Err(Error::dim("GramAccumulator", self.dim(), eta.len()));
        }
        if eta.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("feature vector".into()));
        }
        Ok(())
    }

    /// Adds `eta eta^T` in place.
    pub fn add(&mut self, eta: &[f64]) -> Result<()> {
        self.check(eta)?;
        let v = DVector::from_column_slice(eta);
        self.matrix.ger(1.0, &v, &v, 1.0);
        self.count += 1;
        Ok(())
    }

    pub fn cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.matrix.clone())
            .ok_or_else(|| Error::Solve("Gram matrix is not positive definite".into()))
    }

    /// `Lambda^{-1} b` through the Cholesky factor.
    pub fn solve(&self, b: &[f64]) -> Result<DVector<f64>> {
        self.check(b)?;
        Ok(self.cholesky()?.solve(&DVector::from_column_slice(b)))
    }

    /// `eta^T Lambda^{-1} eta`.
    pub fn quadratic_form(&self, eta: &[f64]) -> Result<f64> {
        let x = self.solve(eta)?;
        Ok(x.iter().zip(eta).map(|(a, b)| a * b).sum::<f64>().max(0.0))
    }
}

pub fn gram_update(mut acc: GramAccumulator, eta: &[f64]) -> Result<GramAccumulator> {
    acc.add(eta)?;
    Ok(acc)
}

/// `beta * sqrt(eta^T Lambda^{-1} eta)`.
pub fn ucb_bonus(eta: &[f64], acc: &GramAccumulator, beta: f64) -> Result<f64> {
    Ok(beta * acc.quadratic_form(eta)?.sqrt())
}

/// Information gain of the `c`-output linear posterior: `(c/2) ln(1 + eta^T Lambda^{-1} eta)`.
pub fn info_gain_linear(eta: &[f64], acc: &GramAccumulator, c: usize) -> Result<f64> {
    if c == 0 {
        return Err(Error::InvalidArgument(
            "output count c must be at least 1".into(),
        ));
    }
    Ok(0.5 * c as f64 * acc.quadratic_form(eta)?.ln_1p())
}

/// The same information gain evaluated without the determinant lemma.
///
/// Assembles the vectorized `cd x cd` block-diagonal precision `I_c (x) Lambda`
/// and the `cd x c` feature `I_c (x) eta`, then returns half the log-det
/// ratio of the posterior precision after and before the observation.
pub fn info_gain_block_bruteforce(eta: &[f64], acc: &GramAccumulator, c: usize) -> Result<f64> {
    acc.check(eta)?;
    let d = acc.dim();
    let n = c * d;
    let mut prior = DMatrix::zeros(n, n);
    let mut feat = DMatrix::zeros(n, c);
    for k in 0..c {
        prior
            .view_mut((k * d, k * d), (d, d))
            .copy_from(acc.matrix());
        for (i, &e) in eta.iter().enumerate() {
            feat[(k * d + i, k)] = e;
        }
    }
    let post = &prior + &feat * feat.transpose();
    let logdet = |m: DMatrix<f64>| -> Result<f64> {
        let l = Cholesky::new(m)
            .ok_or_else(|| Error::Solve("block system is not positive definite".into()))?;
        Ok(2.0 * l.l().diagonal().iter().map(|x| x.ln()).sum::<f64>())
    };
    Ok(0.5 * (logdet(post)? - logdet(prior)?))
}
