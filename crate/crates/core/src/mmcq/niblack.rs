//! Niblack local thresholding baseline.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::filters::reflect101;
use crate::types::{RegionMask, VesselMask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NiblackParams {
    pub window: usize,
    pub k: f64,
    /// Window statistics from region pixels only instead of the whole image.
    #[serde(default)]
    pub region_statistics: bool,
}

impl Default for NiblackParams {
    fn default() -> Self {
        NiblackParams {
            window: 51,
            k: -0.05,
            region_statistics: false,
        }
    }
}

/// Summed-area tables of (count, sum, sum of squares) over a reflect-101 padded image.
struct Integral {
    cols: usize,
    count: Vec<u64>,
    sum: Vec<u64>,
    sq: Vec<u64>,
}

impl Integral {
    fn build(image: &Array2<u8>, include: Option<&Array2<bool>>, pad: usize) -> Self {
        let (m, n) = image.dim();
        let (pm, pn) = (m + 2 * pad, n + 2 * pad);
        let cols = pn + 1;
        let len = (pm + 1) * cols;
        let (mut count, mut sum, mut sq) = (vec![0u64; len], vec![0u64; len], vec![0u64; len]);
        for r in 0..pm {
            let sr = reflect101(r as isize - pad as isize, m);
            let (mut rc, mut rs, mut rq) = (0u64, 0u64, 0u64);
            for c in 0..pn {
                let sc = reflect101(c as isize - pad as isize, n);
                if include.map_or(true, |mask| mask[[sr, sc]]) {
                    let v = image[[sr, sc]] as u64;
                    rc += 1;
                    rs += v;
                    rq += v * v;
                }
                let i = (r + 1) * cols + c + 1;
                let up = r * cols + c + 1;
                count[i] = count[up] + rc;
                sum[i] = sum[up] + rs;
                sq[i] = sq[up] + rq;
            }
        }
        Integral { cols, count, sum, sq }
    }

    /// Totals over padded rows [r0, r1) and columns [c0, c1).
    fn window(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> (u64, u64, u64) {
        let at = |t: &Vec<u64>, r: usize, c: usize| t[r * self.cols + c];
        let f = |t: &Vec<u64>| at(t, r1, c1) + at(t, r0, c0) - at(t, r0, c1) - at(t, r1, c0);
        (f(&self.count), f(&self.sum), f(&self.sq))
    }
}

/// Local mean and population standard deviation over a `window`² neighbourhood.
pub fn window_statistics(
    image: &Array2<u8>,
    window: usize,
    include: Option<&Array2<bool>>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if window < 1 || window % 2 == 0 {
        return Err(Error::invalid(format!("Niblack window must be odd, got {window}")));
    }
    let (m, n) = image.dim();
    let half = window / 2;
    let table = Integral::build(image, include, half);
    let mut mean = Array2::zeros((m, n));
    let mut sd = Array2::zeros((m, n));
    for r in 0..m {
        for c in 0..n {
            let (cnt, s, q) = table.window(r, r + window, c, c + window);
            if cnt == 0 {
                continue;
            }
            let mu = s as f64 / cnt as f64;
            let var = (q as f64 / cnt as f64 - mu * mu).max(0.0);
            mean[[r, c]] = mu;
            sd[[r, c]] = var.sqrt();
        }
    }
    Ok((mean, sd))
}

/// Vessel iff the intensity falls below mean + k·sd of its window.
pub fn niblack_segment(image: &Array2<u8>, region: &RegionMask, params: &NiblackParams) -> Result<VesselMask> {
    if image.dim() != region.pixels.dim() {
        return Err(Error::ShapeMismatch {
            expected: image.dim(),
            got: region.pixels.dim(),
        });
    }
    let include = params.region_statistics.then_some(&region.pixels);
    let (mean, sd) = window_statistics(image, params.window, include)?;
    let pixels = Array2::from_shape_fn(image.dim(), |(r, c)| {
        region.pixels[[r, c]] && (image[[r, c]] as f64) < mean[[r, c]] + params.k * sd[[r, c]]
    });
    Ok(VesselMask { pixels })
}
