//! Column-wise compensation of retinal-vessel shadows.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SHADOW_WINDOW: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShadowMode {
    /// Factor = moving average of column means / column mean (lifts dark columns).
    #[default]
    Brighten,
    /// Factor = column mean / moving average.
    Literal,
}

/// Multiplicative factor per column.
pub fn shadow_factors(image: &Array2<u8>, window: usize, mode: ShadowMode) -> Result<Vec<f64>> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::invalid(format!(
            "moving-average window must be odd and >= 3, got {window}"
        )));
    }
    let (m, n) = image.dim();
    let means: Vec<f64> = (0..n)
        .map(|c| image.column(c).iter().map(|&v| v as f64).sum::<f64>() / m as f64)
        .collect();
    let half = window / 2;
    Ok((0..n)
        .map(|c| {
            let lo = c.saturating_sub(half);
            let hi = (c + half).min(n - 1);
            let ma = means[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
            let mu = means[c];
            let (num, den) = match mode {
                ShadowMode::Brighten => (ma, mu),
                ShadowMode::Literal => (mu, ma),
            };
            if den > 0.0 {
                num / den
            } else {
                1.0
            }
        })
        .collect())
}

pub fn shadow_compensate(image: &Array2<u8>, window: usize, mode: ShadowMode) -> Result<Array2<u8>> {
    let factors = shadow_factors(image, window, mode)?;
    Ok(Array2::from_shape_fn(image.dim(), |(r, c)| {
        (image[[r, c]] as f64 * factors[c]).round().clamp(0.0, 255.0) as u8
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_unchanged() {
        let img = Array2::from_elem((10, 50), 90u8);
        assert_eq!(shadow_compensate(&img, 11, ShadowMode::Brighten).unwrap(), img);
    }

    #[test]
    fn shadowed_column_is_lifted_and_neighbours_untouched() {
        let mut img = Array2::from_elem((10, 301), 100u8);
        for r in 0..10 {
            img[[r, 150]] = 50;
        }
        let f = shadow_factors(&img, 101, ShadowMode::Brighten).unwrap();
        assert!(f[150] > 1.9);
        assert!((f[0] - 1.0).abs() < 1e-12);
        assert!((f[149] - 1.0).abs() < 0.01);
        let lit = shadow_factors(&img, 101, ShadowMode::Literal).unwrap();
        assert!(lit[150] < 0.6);
    }

    #[test]
    fn global_scale_cancels() {
        let img = Array2::from_shape_fn((8, 40), |(r, c)| (50 + r + c) as u8);
        let scaled = img.mapv(|v| v * 2);
        let a = shadow_factors(&img, 5, ShadowMode::Brighten).unwrap();
        let b = shadow_factors(&scaled, 5, ShadowMode::Brighten).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
