//! Curve scores, kernel-density of good curves, and pixel scores.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::preprocess::EdgeMap;

/// Composite Simpson's rule on unit spacing; an odd number of intervals closes with
/// a trapezoid on the last one.
pub fn simpson(y: &[f64]) -> f64 {
    let n = y.len();
    match n {
        0 | 1 => 0.0,
        2 => 0.5 * (y[0] + y[1]),
        _ => {
            let intervals = n - 1;
            let even_end = if intervals % 2 == 0 { n - 1 } else { n - 2 };
            let mut acc = y[0] + y[even_end];
            for (i, v) in y.iter().enumerate().take(even_end).skip(1) {
                acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
            }
            let mut total = acc / 3.0;
            if even_end != n - 1 {
                total += 0.5 * (y[n - 2] + y[n - 1]);
            }
            total
        }
    }
}

/// Central differences inside, one-sided at the ends.
pub fn gradient(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    (0..n)
        .map(|i| {
            if n < 2 {
                0.0
            } else if i == 0 {
                y[1] - y[0]
            } else if i == n - 1 {
                y[n - 1] - y[n - 2]
            } else {
                0.5 * (y[i + 1] - y[i - 1])
            }
        })
        .collect()
}

/// Mean edge response along the curve per unit arc length. `curve[j]` is the row at
/// column `c0 + j`.
pub fn score_curve(curve: &[f64], c0: usize, g: &EdgeMap) -> Result<f64> {
    if curve.len() < 2 {
        return Err(Error::invalid("curve needs at least two columns for an arc length"));
    }
    let ds: Vec<f64> = gradient(curve).iter().map(|d| (1.0 + d * d).sqrt()).collect();
    let weighted: Vec<f64> = curve
        .iter()
        .zip(ds.iter())
        .enumerate()
        .map(|(j, (&row, &d))| g.sample(row, (c0 + j) as f64) * d)
        .collect();
    let length = simpson(&ds);
    if !(length > 0.0) {
        return Err(Error::invalid("zero arc length"));
    }
    Ok((simpson(&weighted) / length).max(0.0))
}

/// Weighted Gaussian kernel density (unit length-scale, truncated at `radius`) of all
/// points on the given curves, min-max normalised. Weights are score shares.
pub fn frequency_density(
    curves: &[&[f64]],
    c0: usize,
    scores: &[f64],
    shape: (usize, usize),
    radius: usize,
) -> Result<Array2<f64>> {
    if curves.is_empty() {
        return Err(Error::invalid("density needs at least one curve"));
    }
    if curves.len() != scores.len() {
        return Err(Error::invalid("one score per curve required"));
    }
    let total: f64 = scores.iter().sum();
    let weights: Vec<f64> = if total > 0.0 {
        scores.iter().map(|s| s / total).collect()
    } else {
        vec![1.0 / curves.len() as f64; curves.len()]
    };
    let (m, n) = shape;
    let rad = radius as f64;
    let ri = radius as isize;
    let mut phi = Array2::<f64>::zeros(shape);
    for (curve, &w) in curves.iter().zip(weights.iter()) {
        if w == 0.0 {
            continue;
        }
        for (j, &y) in curve.iter().enumerate() {
            let x = (c0 + j) as isize;
            let yc = y.round() as isize;
            for r in (yc - ri)..=(yc + ri) {
                if r < 0 || r >= m as isize {
                    continue;
                }
                let dy = r as f64 - y;
                for c in (x - ri)..=(x + ri) {
                    if c < 0 || c >= n as isize {
                        continue;
                    }
                    let dx = (c - x) as f64;
                    let d2 = dx * dx + dy * dy;
                    if d2 <= rad * rad {
                        phi[[r as usize, c as usize]] += w * (-0.5 * d2).exp();
                    }
                }
            }
        }
    }
    crate::preprocess::normalise_min_max(&mut phi);
    Ok(phi)
}

/// Single-pixel score combining density and edge response.
#[inline]
pub fn pixel_score(phi: f64, g: f64) -> f64 {
    (phi * g + phi + g) / 3.0
}

pub fn score_pixels(phi: &Array2<f64>, g: &EdgeMap) -> Result<Array2<f64>> {
    if phi.dim() != g.values.dim() {
        return Err(Error::ShapeMismatch {
            expected: g.values.dim(),
            got: phi.dim(),
        });
    }
    let mut out = phi.clone();
    ndarray::Zip::from(&mut out)
        .and(&g.values)
        .for_each(|s, &gv| *s = pixel_score(*s, gv));
    Ok(out)
}
