//! Posterior sampling by conditioning prior draws (Matheron's update rule).
//!
//! The prior factor over the test grid is computed once; each call then only needs
//! a solve against the observation Gram matrix, which keeps repeated sampling on a
//! fixed grid cheap.

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;

use super::{cholesky_with_jitter, standard_normal_matrix, CovarianceSpec};
use crate::error::{Error, Result};

pub struct PathwiseSampler {
    cov: CovarianceSpec,
    test_inputs: Vec<f64>,
    prior_factor: DMatrix<f64>,
}

impl PathwiseSampler {
    pub fn new(cov: CovarianceSpec, test_inputs: Vec<f64>) -> Result<Self> {
        let (chol, _) = cholesky_with_jitter(&cov.gram(&test_inputs))?;
        Ok(PathwiseSampler {
            cov,
            test_inputs,
            prior_factor: chol.l(),
        })
    }

    pub fn test_inputs(&self) -> &[f64] {
        &self.test_inputs
    }

    /// Draws `count` posterior curves (one per column of the result). Observations are
    /// given as indices into the test grid with their targets.
    pub fn sample(
        &self,
        obs_index: &[usize],
        ys: &[f64],
        noise_sigma: f64,
        count: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<DMatrix<f64>> {
        if obs_index.len() != ys.len() {
            return Err(Error::invalid("observation index and target lengths differ"));
        }
        let n = self.test_inputs.len();
        if obs_index.iter().any(|&i| i >= n) {
            return Err(Error::invalid("observation outside the test grid"));
        }
        let z = standard_normal_matrix(rng, n, count);
        let mut f = &self.prior_factor * z;
        if obs_index.is_empty() {
            return Ok(f);
        }
        let xs: Vec<f64> = obs_index.iter().map(|&i| self.test_inputs[i]).collect();
        let mut a = self.cov.gram(&xs);
        for i in 0..xs.len() {
            a[(i, i)] += noise_sigma * noise_sigma;
        }
        let (chol, _) = cholesky_with_jitter(&a)?;
        let eps = standard_normal_matrix(rng, xs.len(), count);
        let resid = DMatrix::from_fn(xs.len(), count, |i, s| {
            ys[i] - f[(obs_index[i], s)] - noise_sigma * eps[(i, s)]
        });
        let weights = chol.solve(&resid);
        let ksn = self.cov.matrix(&self.test_inputs, &xs);
        f += ksn * weights;
        Ok(f)
    }
}
