//! Bounded multi-start Nelder–Mead search over (σ_f, σ_l, σ_y) in log space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{log_marginal_likelihood, CovarianceSpec, GpModel};

const N_STARTS: usize = 8;
const MAX_ITERS: usize = 400;
const F_TOL: f64 = 1e-10;
const X_TOL: f64 = 1e-8;
const START_SEED: u64 = 0x6770_6f70;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub sigma_f: (f64, f64),
    pub sigma_l: (f64, f64),
    pub sigma_y: (f64, f64),
}

impl Bounds {
    /// Defaults for an image with `rows` × `cols` pixels.
    pub fn for_image(rows: usize, cols: usize) -> Self {
        Bounds {
            sigma_f: (1.0, rows as f64),
            sigma_l: (cols as f64 / 50.0, 2.0 * cols as f64),
            sigma_y: (1e-3, 10.0),
        }
    }

    fn log_box(&self) -> [(f64, f64); 3] {
        [
            (self.sigma_f.0.ln(), self.sigma_f.1.ln()),
            (self.sigma_l.0.ln(), self.sigma_l.1.ln()),
            (self.sigma_y.0.ln(), self.sigma_y.1.ln()),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimStatus {
    Converged,
    /// Every start failed; the input model is returned unchanged.
    Fallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimised {
    pub model: GpModel,
    pub log_likelihood: f64,
    pub status: OptimStatus,
}

fn clamp_to(p: [f64; 3], b: &[(f64, f64); 3]) -> [f64; 3] {
    [
        p[0].clamp(b[0].0, b[0].1),
        p[1].clamp(b[1].0, b[1].1),
        p[2].clamp(b[2].0, b[2].1),
    ]
}

fn with_params(model: &GpModel, p: [f64; 3]) -> GpModel {
    let mut m = model.clone();
    m.cov = CovarianceSpec::new(model.cov.kind, p[0].exp(), p[1].exp());
    m.noise_sigma = p[2].exp();
    m
}

fn neg_lml(model: &GpModel, p: [f64; 3], b: &[(f64, f64); 3]) -> f64 {
    match log_marginal_likelihood(&with_params(model, clamp_to(p, b))) {
        Ok(v) if v.is_finite() => -v,
        _ => f64::INFINITY,
    }
}

fn nelder_mead(f: impl Fn([f64; 3]) -> f64, start: [f64; 3], step: [f64; 3]) -> ([f64; 3], f64) {
    let mut simplex: Vec<([f64; 3], f64)> = Vec::with_capacity(4);
    simplex.push((start, f(start)));
    for d in 0..3 {
        let mut p = start;
        p[d] += step[d];
        simplex.push((p, f(p)));
    }
    let centroid = |s: &[([f64; 3], f64)]| {
        let mut c = [0.0; 3];
        for (p, _) in &s[..3] {
            for d in 0..3 {
                c[d] += p[d] / 3.0;
            }
        }
        c
    };
    let along = |c: [f64; 3], p: [f64; 3], t: f64| {
        [
            c[0] + t * (p[0] - c[0]),
            c[1] + t * (p[1] - c[1]),
            c[2] + t * (p[2] - c[2]),
        ]
    };
    for _ in 0..MAX_ITERS {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[3].1);
        let x0 = simplex[0].0;
        let size = simplex[1..]
            .iter()
            .flat_map(|(p, _)| (0..3).map(move |d| (p[d] - x0[d]).abs()))
            .fold(0.0, f64::max);
        if (worst - best).abs() <= F_TOL * (1.0 + best.abs()) || size <= X_TOL {
            break;
        }
        let c = centroid(&simplex);
        let xr = along(c, simplex[3].0, -1.0);
        let fr = f(xr);
        if fr < simplex[0].1 {
            let xe = along(c, simplex[3].0, -2.0);
            let fe = f(xe);
            simplex[3] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[2].1 {
            simplex[3] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[3].1 {
                let xc = along(c, xr, 0.5);
                (xc, f(xc))
            } else {
                let xc = along(c, simplex[3].0, 0.5);
                (xc, f(xc))
            };
            if fc < simplex[3].1.min(fr) {
                simplex[3] = (xc, fc);
            } else {
                let x0 = simplex[0].0;
                for item in simplex.iter_mut().skip(1) {
                    let p = along(x0, item.0, 0.5);
                    *item = (p, f(p));
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex[0]
}

/// Maximises the log marginal likelihood over amplitude, length-scale and noise.
/// The kernel family is kept; the first start is the model's own parameters.
pub fn optimise_hyperparameters(model: &GpModel, bounds: &Bounds) -> Optimised {
    let b = bounds.log_box();
    let current = [
        model.cov.sigma_f.ln(),
        model.cov.sigma_l.ln(),
        model.noise_sigma.max(1e-300).ln(),
    ];
    let start0 = clamp_to(current, &b);
    let mut rng = ChaCha8Rng::seed_from_u64(START_SEED);
    let mut starts = vec![start0];
    for _ in 1..N_STARTS {
        starts.push([
            rng.gen_range(b[0].0..=b[0].1),
            rng.gen_range(b[1].0..=b[1].1),
            rng.gen_range(b[2].0..=b[2].1),
        ]);
    }
    let step = [
        0.1 * (b[0].1 - b[0].0).max(1e-3),
        0.1 * (b[1].1 - b[1].0).max(1e-3),
        0.1 * (b[2].1 - b[2].0).max(1e-3),
    ];
    let runs: Vec<([f64; 3], f64)> = starts
        .par_iter()
        .map(|&s| {
            let (p, v) = nelder_mead(|p| neg_lml(model, p, &b), s, step);
            (clamp_to(p, &b), v)
        })
        .collect();
    let start_value = neg_lml(model, start0, &b);
    let mut best = (start0, start_value);
    for r in runs {
        if r.1 < best.1 {
            best = r;
        }
    }
    if !best.1.is_finite() {
        return Optimised {
            model: model.clone(),
            log_likelihood: f64::NEG_INFINITY,
            status: OptimStatus::Fallback,
        };
    }
    Optimised {
        model: with_params(model, best.0),
        log_likelihood: -best.1,
        status: OptimStatus::Converged,
    }
}
