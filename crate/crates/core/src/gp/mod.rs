//! One-dimensional Gaussian-process regression (column → row).

pub mod kernel;
pub mod optimise;
pub mod pathwise;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use kernel::{kernel_value, CovarianceSpec, KernelKind};
pub use optimise::{optimise_hyperparameters, Bounds, OptimStatus, Optimised};
pub use pathwise::PathwiseSampler;

use crate::error::{Error, Result};

/// Relative jitter ladder: first attempt is unjittered, then 1e-10 … 1e-4 of the mean
/// diagonal.
const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpModel {
    pub cov: CovarianceSpec,
    pub noise_sigma: f64,
    /// (column, row) pairs.
    pub observations: Vec<(f64, f64)>,
    pub test_inputs: Vec<f64>,
}

impl GpModel {
    pub fn new(cov: CovarianceSpec, noise_sigma: f64) -> Self {
        GpModel {
            cov,
            noise_sigma,
            observations: Vec::new(),
            test_inputs: Vec::new(),
        }
    }

    pub fn with_observations(mut self, obs: Vec<(f64, f64)>) -> Self {
        self.observations = obs;
        self
    }

    pub fn with_test_inputs(mut self, xs: Vec<f64>) -> Self {
        self.test_inputs = xs;
        self
    }

    fn obs_xy(&self) -> (Vec<f64>, DVector<f64>) {
        let xs = self.observations.iter().map(|o| o.0).collect();
        let ys = DVector::from_iterator(self.observations.len(), self.observations.iter().map(|o| o.1));
        (xs, ys)
    }

    /// K(X, X) + σ_y² I.
    fn noisy_gram(&self, xs: &[f64]) -> DMatrix<f64> {
        let mut a = self.cov.gram(xs);
        let s2 = self.noise_sigma * self.noise_sigma;
        for i in 0..xs.len() {
            a[(i, i)] += s2;
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Cholesky factorisation with escalating diagonal jitter.
pub fn cholesky_with_jitter(a: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(ch) = Cholesky::new(a.clone()) {
        return Ok((ch, 0.0));
    }
    let n = a.nrows();
    if n == 0 {
        return Err(Error::IllConditioned);
    }
    let mean_diag = a.diagonal().iter().sum::<f64>() / n as f64;
    if !(mean_diag > 0.0) {
        return Err(Error::IllConditioned);
    }
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = rel * mean_diag;
        let mut b = a.clone();
        for i in 0..n {
            b[(i, i)] += jitter;
        }
        if let Some(ch) = Cholesky::new(b) {
            return Ok((ch, jitter));
        }
        rel *= 10.0;
    }
    Err(Error::IllConditioned)
}

pub fn posterior(model: &GpModel) -> Result<PosteriorSummary> {
    let xt = &model.test_inputs;
    let kss = model.cov.gram(xt);
    if model.observations.is_empty() {
        return Ok(PosteriorSummary {
            mean: DVector::zeros(xt.len()),
            cov: kss,
        });
    }
    let (xs, ys) = model.obs_xy();
    let (chol, _) = cholesky_with_jitter(&model.noisy_gram(&xs))?;
    let ksn = model.cov.matrix(xt, &xs);
    let alpha = chol.solve(&ys);
    let mean = &ksn * alpha;
    let mut v = ksn.transpose();
    chol.l_dirty().solve_lower_triangular_mut(&mut v);
    let mut cov = kss - v.transpose() * &v;
    symmetrise(&mut cov);
    Ok(PosteriorSummary { mean, cov })
}

/// Posterior mean and marginal variance only (no full covariance).
pub fn posterior_mean_var(model: &GpModel) -> Result<(DVector<f64>, DVector<f64>)> {
    let xt = &model.test_inputs;
    let prior_var = |x: f64| model.cov.value(x, x);
    if model.observations.is_empty() {
        return Ok((
            DVector::zeros(xt.len()),
            DVector::from_iterator(xt.len(), xt.iter().map(|&x| prior_var(x))),
        ));
    }
    let (xs, ys) = model.obs_xy();
    let (chol, _) = cholesky_with_jitter(&model.noisy_gram(&xs))?;
    let ksn = model.cov.matrix(xt, &xs);
    let mean = &ksn * chol.solve(&ys);
    let mut v = ksn.transpose();
    chol.l_dirty().solve_lower_triangular_mut(&mut v);
    let var = DVector::from_iterator(
        xt.len(),
        xt.iter()
            .enumerate()
            .map(|(j, &x)| prior_var(x) - v.column(j).norm_squared()),
    );
    Ok((mean, var))
}

fn symmetrise(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Draws `count` curves from N(mean, cov) using the lower Cholesky factor.
pub fn sample_curves(post: &PosteriorSummary, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let n = post.mean.len();
    let factor = if post.cov.iter().all(|&v| v == 0.0) {
        DMatrix::zeros(n, n)
    } else {
        let (chol, _) = cholesky_with_jitter(&post.cov)?;
        chol.l()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = standard_normal_matrix(&mut rng, n, count);
    let draws = factor * z;
    Ok((0..count)
        .map(|s| (0..n).map(|i| post.mean[i] + draws[(i, s)]).collect())
        .collect())
}

/// Column-major fill, one column per sample.
pub(crate) fn standard_normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(rows, cols);
    for v in z.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
    z
}

pub fn log_marginal_likelihood(model: &GpModel) -> Result<f64> {
    if model.observations.is_empty() {
        return Err(Error::invalid("log marginal likelihood needs at least one observation"));
    }
    let (xs, ys) = model.obs_xy();
    let (chol, _) = cholesky_with_jitter(&model.noisy_gram(&xs))?;
    let alpha = chol.solve(&ys);
    let n = ys.len() as f64;
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    Ok(-0.5 * ys.dot(&alpha) - 0.5 * log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
}
