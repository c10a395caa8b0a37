use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Rbf,
    Matern32,
    Matern52,
}

impl std::str::FromStr for KernelKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rbf" => Ok(KernelKind::Rbf),
            "matern32" => Ok(KernelKind::Matern32),
            "matern52" => Ok(KernelKind::Matern52),
            other => Err(crate::Error::invalid(format!("unknown kernel '{other}'"))),
        }
    }
}

/// Stationary covariance function with amplitude `sigma_f` and length-scale `sigma_l`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub kind: KernelKind,
    pub sigma_f: f64,
    pub sigma_l: f64,
}

impl CovarianceSpec {
    pub fn new(kind: KernelKind, sigma_f: f64, sigma_l: f64) -> Self {
        CovarianceSpec {
            kind,
            sigma_f,
            sigma_l,
        }
    }

    pub fn value(&self, x: f64, x2: f64) -> f64 {
        let r = (x - x2).abs();
        let s2 = self.sigma_f * self.sigma_f;
        let l = self.sigma_l;
        match self.kind {
            KernelKind::Rbf => s2 * (-r * r / (2.0 * l * l)).exp(),
            KernelKind::Matern32 => {
                let a = 3f64.sqrt() * r / l;
                s2 * (1.0 + a) * (-a).exp()
            }
            KernelKind::Matern52 => {
                let a = 5f64.sqrt() * r / l;
                s2 * (1.0 + a + 5.0 * r * r / (3.0 * l * l)) * (-a).exp()
            }
        }
    }

    pub fn matrix(&self, xs: &[f64], ys: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(xs.len(), ys.len(), |i, j| self.value(xs[i], ys[j]))
    }

    /// Symmetric Gram matrix, filled from one triangle so it is exactly symmetric.
    pub fn gram(&self, xs: &[f64]) -> DMatrix<f64> {
        let n = xs.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.value(xs[i], xs[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    pub fn is_valid(&self) -> bool {
        self.sigma_f > 0.0 && self.sigma_l > 0.0 && self.sigma_f.is_finite() && self.sigma_l.is_finite()
    }
}

pub fn kernel_value(cov: &CovarianceSpec, x: f64, x2: f64) -> f64 {
    cov.value(x, x2)
}
