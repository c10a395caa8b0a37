//! Gaussian-process edge tracing.
//!
//! Starting from pinned endpoints (and optional guide pixels), each iteration draws
//! posterior curves, keeps the best-scoring ones, turns them into a pixel density,
//! and admits the best pixel of at least one new column bin. Once every bin holds an
//! observation the kernel hyperparameters are fitted and the posterior mean with a
//! two-standard-deviation band is returned.

pub mod accept;
pub mod scoring;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use accept::{accept_discard, Bins, Pixel, ThresholdDecay};
pub use scoring::{frequency_density, pixel_score, score_curve, score_pixels};

use crate::error::{Error, Result};
use crate::gp::{
    optimise_hyperparameters, posterior_mean_var, Bounds, CovarianceSpec, GpModel, KernelKind, OptimStatus,
    PathwiseSampler,
};
use crate::preprocess::{edge_map_lower, edge_map_upper, EdgeMap};
use crate::types::{region_from_traces, BScan, BoundaryKind, BoundaryTrace, PixelPoint, RegionMask};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpetConfig {
    pub cov_upper: CovarianceSpec,
    pub cov_lower: CovarianceSpec,
    pub noise_sigma: f64,
    pub n_curves: usize,
    pub keep_fraction: f64,
    pub delta_x: usize,
    pub seed: u64,
    pub kde_truncation_radius: usize,
    pub threshold_decay: ThresholdDecay,
}

impl GpetConfig {
    /// Defaults for an image of `rows` × `cols`.
    pub fn for_shape(rows: usize, cols: usize) -> Self {
        let (m, n) = (rows as f64, cols as f64);
        GpetConfig {
            cov_upper: CovarianceSpec::new(KernelKind::Matern52, m / 10.0, 2.0 * n / 3.0),
            cov_lower: CovarianceSpec::new(KernelKind::Matern52, m / 4.0, n / 2.0),
            noise_sigma: 1.0,
            n_curves: 500,
            keep_fraction: 0.10,
            delta_x: 10,
            seed: DEFAULT_SEED,
            kde_truncation_radius: 3,
            threshold_decay: ThresholdDecay::Relative,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_curves < 10 {
            return Err(Error::invalid("n_curves must be at least 10"));
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(Error::invalid("keep_fraction must lie in (0, 1]"));
        }
        if self.delta_x < 1 {
            return Err(Error::invalid("delta_x must be at least 1"));
        }
        if !self.cov_upper.is_valid() || !self.cov_lower.is_valid() {
            return Err(Error::invalid("kernel hyperparameters must be positive"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise_sigma must be non-negative"));
        }
        Ok(())
    }

    pub fn covariance(&self, kind: BoundaryKind) -> CovarianceSpec {
        match kind {
            BoundaryKind::RpeChoroid => self.cov_upper,
            BoundaryKind::ChoroidSclera => self.cov_lower,
        }
    }
}

/// Optional per-request changes to a [`GpetConfig`]; kernel settings apply to the
/// boundary being traced.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpetOverrides {
    pub kernel: Option<KernelKind>,
    pub sigma_f: Option<f64>,
    pub sigma_l: Option<f64>,
    pub noise_sigma: Option<f64>,
    pub n_curves: Option<usize>,
    pub keep_fraction: Option<f64>,
    pub delta_x: Option<usize>,
    pub seed: Option<u64>,
}

impl GpetOverrides {
    pub fn apply(&self, config: &mut GpetConfig, kind: BoundaryKind) -> Result<()> {
        let cov = match kind {
            BoundaryKind::RpeChoroid => &mut config.cov_upper,
            BoundaryKind::ChoroidSclera => &mut config.cov_lower,
        };
        if let Some(k) = self.kernel {
            cov.kind = k;
        }
        if let Some(v) = self.sigma_f {
            cov.sigma_f = v;
        }
        if let Some(v) = self.sigma_l {
            cov.sigma_l = v;
        }
        if let Some(v) = self.noise_sigma {
            config.noise_sigma = v;
        }
        if let Some(v) = self.n_curves {
            config.n_curves = v;
        }
        if let Some(v) = self.keep_fraction {
            config.keep_fraction = v;
        }
        if let Some(v) = self.delta_x {
            config.delta_x = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        config.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceResult {
    pub trace: BoundaryTrace,
    pub observations: Vec<Pixel>,
    pub iterations: usize,
    pub optimised_cov: CovarianceSpec,
    pub optimised_noise: f64,
    pub optim_status: OptimStatus,
}

fn to_pixel(p: PixelPoint, shape: (usize, usize), what: &str) -> Result<Pixel> {
    let (r, c) = p
        .index(shape)
        .ok_or_else(|| Error::invalid(format!("{what} ({}, {}) lies outside the image", p.col, p.row)))?;
    Ok(Pixel::new(c, r))
}

fn stream_for(kind: BoundaryKind) -> u64 {
    match kind {
        BoundaryKind::RpeChoroid => 1,
        BoundaryKind::ChoroidSclera => 2,
    }
}

/// Traces one boundary on edge map `g` between two endpoints.
pub fn trace_boundary(
    g: &EdgeMap,
    endpoints: [PixelPoint; 2],
    guides: &[PixelPoint],
    kind: BoundaryKind,
    config: &GpetConfig,
) -> Result<TraceResult> {
    config.validate()?;
    let shape = g.shape();
    let (m, n) = shape;
    let mut ends = [
        to_pixel(endpoints[0], shape, "endpoint")?,
        to_pixel(endpoints[1], shape, "endpoint")?,
    ];
    ends.sort();
    if ends[0].col == ends[1].col {
        return Err(Error::invalid("endpoints must lie in distinct columns"));
    }
    let (c0, c1) = (ends[0].col, ends[1].col);
    let bins = Bins::new(c0, c1, config.delta_x);
    let mut pinned: Vec<Pixel> = ends.to_vec();
    for &gp in guides {
        let p = to_pixel(gp, shape, "guide")?;
        if p.col <= c0 || p.col >= c1 {
            return Err(Error::invalid("guides must lie strictly between the endpoint columns"));
        }
        pinned.push(p);
    }
    pinned.sort();
    for w in pinned.windows(2) {
        if bins.of(w[0].col) == bins.of(w[1].col) {
            return Err(Error::invalid(format!(
                "pinned pixels at columns {} and {} share a {}-column bin",
                w[0].col, w[1].col, config.delta_x
            )));
        }
    }

    let offset = 0.5 * (ends[0].row as f64 + ends[1].row as f64);
    let cov = config.covariance(kind);
    let xs: Vec<f64> = (c0..=c1).map(|c| c as f64).collect();
    let sampler = PathwiseSampler::new(cov, xs.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream_for(kind));

    let keep = ((config.keep_fraction * config.n_curves as f64).ceil() as usize).clamp(1, config.n_curves);
    let mut obs = pinned.clone();
    let mut iterations = 0;
    while obs.len() < bins.count() {
        let idx: Vec<usize> = obs.iter().map(|p| p.col - c0).collect();
        let ys: Vec<f64> = obs.iter().map(|p| p.row as f64 - offset).collect();
        let draws = sampler.sample(&idx, &ys, config.noise_sigma, config.n_curves, &mut rng)?;
        let curves: Vec<Vec<f64>> = (0..config.n_curves)
            .map(|s| draws.column(s).iter().map(|v| v + offset).collect())
            .collect();
        let scores: Vec<f64> = curves
            .par_iter()
            .map(|c| score_curve(c, c0, g))
            .collect::<Result<_>>()?;
        let mut order: Vec<usize> = (0..curves.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        order.truncate(keep);
        let best: Vec<&[f64]> = order.iter().map(|&i| curves[i].as_slice()).collect();
        let best_scores: Vec<f64> = order.iter().map(|&i| scores[i]).collect();
        let phi = frequency_density(&best, c0, &best_scores, shape, config.kde_truncation_radius)?;
        let pixel_scores = restricted_scores(&phi, g, &bins, &obs);
        let next = accept_discard(&pixel_scores, &obs, &bins, &pinned, config.threshold_decay);
        iterations += 1;
        if next.len() <= obs.len() {
            return Err(Error::invalid("observation set failed to grow"));
        }
        obs = next;
    }

    let centred: Vec<(f64, f64)> = obs.iter().map(|p| (p.col as f64, p.row as f64 - offset)).collect();
    let model = GpModel::new(cov, config.noise_sigma)
        .with_observations(centred)
        .with_test_inputs(xs);
    let fitted = optimise_hyperparameters(&model, &Bounds::for_image(m, n));
    let (mean, var) = posterior_mean_var(&fitted.model)?;
    let top = (m - 1) as f64;
    let mut rows = Vec::with_capacity(mean.len());
    let mut lo = Vec::with_capacity(mean.len());
    let mut hi = Vec::with_capacity(mean.len());
    for (mu, v) in mean.iter().zip(var.iter()) {
        let centre = mu + offset;
        let half = 2.0 * v.max(0.0).sqrt();
        rows.push(centre.clamp(0.0, top));
        lo.push((centre - half).clamp(0.0, top));
        hi.push((centre + half).clamp(0.0, top));
    }
    Ok(TraceResult {
        trace: BoundaryTrace {
            kind,
            c0,
            rows,
            band_lower: lo,
            band_upper: hi,
        },
        observations: obs,
        iterations,
        optimised_cov: fitted.model.cov,
        optimised_noise: fitted.model.noise_sigma,
        optim_status: fitted.status,
    })
}

/// Pixel scores over bins touched by the density: only pixels with nonzero density
/// (and current observations) are eligible there. Untouched bins score the edge map
/// alone. Ineligible pixels are marked −1.
fn restricted_scores(phi: &Array2<f64>, g: &EdgeMap, bins: &Bins, obs: &[Pixel]) -> Array2<f64> {
    let (m, n) = phi.dim();
    let mut out = Array2::from_elem((m, n), -1.0);
    for b in 0..bins.count() {
        let cols = bins.columns(b);
        let touched = cols.clone().any(|c| (0..m).any(|r| phi[[r, c]] > 0.0));
        for c in cols {
            for r in 0..m {
                let f = phi[[r, c]];
                if !touched || f > 0.0 {
                    out[[r, c]] = pixel_score(f, g.values[[r, c]]);
                }
            }
        }
    }
    for p in obs {
        out[[p.row, p.col]] = pixel_score(phi[[p.row, p.col]], g.values[[p.row, p.col]]);
    }
    out
}

/// Endpoints (and optional guides) for one boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryInput {
    pub endpoints: [PixelPoint; 2],
    #[serde(default)]
    pub guides: Vec<PixelPoint>,
}

/// Traces one boundary of `scan` on the edge map matching its kind.
pub fn trace_scan_boundary(
    scan: &BScan,
    input: &BoundaryInput,
    kind: BoundaryKind,
    config: &GpetConfig,
) -> Result<TraceResult> {
    let g = match kind {
        BoundaryKind::RpeChoroid => edge_map_upper(&scan.pixels)?,
        BoundaryKind::ChoroidSclera => edge_map_lower(&scan.pixels)?,
    };
    trace_boundary(&g, input.endpoints, &input.guides, kind, config)
}

/// Traces both choroid boundaries and the region between them.
pub fn trace_choroid(
    scan: &BScan,
    upper: &BoundaryInput,
    lower: &BoundaryInput,
    config: &GpetConfig,
) -> Result<(TraceResult, TraceResult, RegionMask)> {
    if upper.endpoints == lower.endpoints {
        return Err(Error::invalid("upper and lower boundaries share identical endpoints"));
    }
    let up = trace_scan_boundary(scan, upper, BoundaryKind::RpeChoroid, config)?;
    let lo = trace_scan_boundary(scan, lower, BoundaryKind::ChoroidSclera, config)?;
    let region = region_from_traces(&up.trace, &lo.trace, scan.shape())?;
    Ok((up, lo, region))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::EdgeTarget;

    fn small_config(rows: usize, cols: usize) -> GpetConfig {
        let mut c = GpetConfig::for_shape(rows, cols);
        c.n_curves = 100;
        c
    }

    #[test]
    fn follows_a_clean_band() {
        let (m, n) = (80, 120);
        let g = EdgeMap::new(
            Array2::from_shape_fn((m, n), |(r, _)| (-((r as f64 - 40.0).powi(2)) / 4.0).exp()),
            EdgeTarget::Upper,
        );
        let cfg = small_config(m, n);
        let res = trace_boundary(
            &g,
            [PixelPoint::new(0.0, 40.0), PixelPoint::new(119.0, 40.0)],
            &[],
            BoundaryKind::RpeChoroid,
            &cfg,
        )
        .unwrap();
        assert_eq!(res.observations.len(), 12);
        assert!(res.iterations <= 12);
        let mae = res.trace.rows.iter().map(|r| (r - 40.0).abs()).sum::<f64>() / n as f64;
        assert!(mae < 1.0, "mae {mae}");
        res.trace.validate(Some((m, n))).unwrap();
    }

    #[test]
    fn zero_map_gives_near_straight_line() {
        let (m, n) = (100, 101);
        let g = EdgeMap::new(Array2::zeros((m, n)), EdgeTarget::Upper);
        let cfg = small_config(m, n);
        let res = trace_boundary(
            &g,
            [PixelPoint::new(0.0, 50.0), PixelPoint::new(100.0, 50.0)],
            &[],
            BoundaryKind::RpeChoroid,
            &cfg,
        )
        .unwrap();
        let worst = res.trace.rows.iter().map(|r| (r - 50.0).abs()).fold(0.0, f64::max);
        assert!(worst <= cfg.cov_upper.sigma_f, "max deviation {worst}");
    }

    #[test]
    fn deterministic_for_seed() {
        let (m, n) = (60, 90);
        let g = EdgeMap::new(
            Array2::from_shape_fn((m, n), |(r, c)| ((r * 7 + c * 13) % 17) as f64 / 16.0),
            EdgeTarget::Lower,
        );
        let cfg = small_config(m, n);
        let ends = [PixelPoint::new(3.0, 20.0), PixelPoint::new(80.0, 30.0)];
        let a = trace_boundary(&g, ends, &[], BoundaryKind::ChoroidSclera, &cfg).unwrap();
        let b = trace_boundary(&g, ends, &[], BoundaryKind::ChoroidSclera, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_endpoints() {
        let g = EdgeMap::new(Array2::zeros((20, 30)), EdgeTarget::Upper);
        let cfg = small_config(20, 30);
        let same_col = [PixelPoint::new(5.0, 2.0), PixelPoint::new(5.0, 9.0)];
        assert!(trace_boundary(&g, same_col, &[], BoundaryKind::RpeChoroid, &cfg).is_err());
        let outside = [PixelPoint::new(5.0, 2.0), PixelPoint::new(45.0, 9.0)];
        assert!(trace_boundary(&g, outside, &[], BoundaryKind::RpeChoroid, &cfg).is_err());
    }
}
