//! Directional edge maps for the two choroid boundaries.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::clahe::clahe;
use super::filters::{convolve, erode, median_filter, normalise_min_max, open};
use crate::error::Result;

pub const UPPER_MEDIAN_WINDOW: usize = 5;
pub const LOWER_CLAHE_TILES: usize = 8;
pub const LOWER_CLAHE_CLIP: f64 = 5.0;
/// Opening structuring element, rows × columns.
pub const LOWER_OPEN_SHAPE: (usize, usize) = (5, 15);
pub const LOWER_ERODE_SHAPE: (usize, usize) = (5, 5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeTarget {
    Upper,
    Lower,
}

impl std::str::FromStr for EdgeTarget {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upper" => Ok(EdgeTarget::Upper),
            "lower" => Ok(EdgeTarget::Lower),
            other => Err(crate::Error::invalid(format!("unknown edge target '{other}'"))),
        }
    }
}

/// Edge response normalised to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    pub values: Array2<f64>,
    pub target: EdgeTarget,
}

impl EdgeMap {
    pub fn new(values: Array2<f64>, target: EdgeTarget) -> Self {
        EdgeMap { values, target }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Bilinear read at a real-valued position; neighbours outside the image read 0.
    pub fn sample(&self, row: f64, col: f64) -> f64 {
        let (m, n) = self.values.dim();
        if !(row > -1.0 && col > -1.0 && row < m as f64 && col < n as f64) {
            return 0.0;
        }
        let r0 = row.floor();
        let c0 = col.floor();
        let fr = row - r0;
        let fc = col - c0;
        let at = |r: f64, c: f64| -> f64 {
            if r < 0.0 || c < 0.0 || r >= m as f64 || c >= n as f64 {
                0.0
            } else {
                self.values[[r as usize, c as usize]]
            }
        };
        (1.0 - fr) * ((1.0 - fc) * at(r0, c0) + fc * at(r0, c0 + 1.0))
            + fr * ((1.0 - fc) * at(r0 + 1.0, c0) + fc * at(r0 + 1.0, c0 + 1.0))
    }
}

/// Bright-to-dark and dark-to-bright (top to bottom) 5×5 derivative kernels.
pub fn directional_edge_kernels() -> ([[i32; 5]; 5], [[i32; 5]; 5]) {
    let b2d = [
        [-1, -1, -2, -1, -1],
        [-1, -2, -3, -2, -1],
        [0, 0, 0, 0, 0],
        [1, 1, 2, 1, 1],
        [1, 2, 3, 2, 1],
    ];
    let mut d2b = b2d;
    for row in d2b.iter_mut() {
        for v in row.iter_mut() {
            *v = -*v;
        }
    }
    (b2d, d2b)
}

fn kernel_f64(k: &[[i32; 5]; 5]) -> Array2<f64> {
    Array2::from_shape_fn((5, 5), |(r, c)| k[r][c] as f64)
}

fn to_f64(image: &Array2<u8>) -> Array2<f64> {
    image.mapv(f64::from)
}

/// RPE-Choroid map: median-smoothed image filtered bright-to-dark then dark-to-bright.
pub fn edge_map_upper(image: &Array2<u8>) -> Result<EdgeMap> {
    let (b2d, d2b) = directional_edge_kernels();
    let smooth = to_f64(&median_filter(image, UPPER_MEDIAN_WINDOW)?);
    let first = convolve(&smooth, &kernel_f64(&b2d))?;
    let mut g = convolve(&first, &kernel_f64(&d2b))?;
    g.mapv_inplace(|v| v.max(0.0));
    normalise_min_max(&mut g);
    Ok(EdgeMap::new(g, EdgeTarget::Upper))
}

/// Choroid-Sclera map: CLAHE-enhanced image filtered dark-to-bright, then opened and
/// eroded to suppress small bright debris.
pub fn edge_map_lower(image: &Array2<u8>) -> Result<EdgeMap> {
    let (_, d2b) = directional_edge_kernels();
    let enhanced = to_f64(&clahe(image, LOWER_CLAHE_TILES, LOWER_CLAHE_CLIP)?);
    let mut g = convolve(&enhanced, &kernel_f64(&d2b))?;
    g.mapv_inplace(|v| v.max(0.0));
    let g = open(&g, LOWER_OPEN_SHAPE.0, LOWER_OPEN_SHAPE.1);
    let mut g = erode(&g, LOWER_ERODE_SHAPE.0, LOWER_ERODE_SHAPE.1);
    normalise_min_max(&mut g);
    Ok(EdgeMap::new(g, EdgeTarget::Lower))
}

pub fn edge_map(image: &Array2<u8>, target: EdgeTarget) -> Result<EdgeMap> {
    match target {
        EdgeTarget::Upper => edge_map_upper(image),
        EdgeTarget::Lower => edge_map_lower(image),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_shape_facts() {
        let (b2d, d2b) = directional_edge_kernels();
        assert_eq!(b2d[2], [0; 5]);
        let sum: i32 = b2d.iter().flatten().sum();
        assert_eq!(sum, 0);
        for r in 0..5 {
            for c in 0..5 {
                assert_eq!(d2b[r][c], -b2d[r][c]);
            }
        }
    }

    #[test]
    fn constant_images_give_zero_maps() {
        let img = Array2::from_elem((40, 40), 120u8);
        assert!(edge_map_upper(&img).unwrap().values.iter().all(|&v| v == 0.0));
        assert!(edge_map_lower(&img).unwrap().values.iter().all(|&v| v == 0.0));
    }

    fn step(bright_above: bool) -> Array2<u8> {
        Array2::from_shape_fn((60, 60), |(r, _)| {
            let above = r < 30;
            if above == bright_above {
                200
            } else {
                60
            }
        })
    }

    #[test]
    fn upper_map_peaks_next_to_bright_to_dark_step() {
        let g = edge_map_upper(&step(true)).unwrap();
        let col: Vec<f64> = (0..60).map(|r| g.values[[r, 30]]).collect();
        let peak = (0..60).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
        assert!((26..=31).contains(&peak), "peak at {peak}");
        assert_eq!(col[peak], 1.0);
        assert!(col[10] == 0.0 && col[50] == 0.0);
    }

    #[test]
    fn vertical_step_gives_no_upper_response() {
        let img = Array2::from_shape_fn((60, 60), |(_, c)| if c < 30 { 200u8 } else { 60 });
        let g = edge_map_upper(&img).unwrap();
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sample_reads_zero_outside() {
        let g = EdgeMap::new(Array2::from_elem((4, 4), 1.0), EdgeTarget::Upper);
        assert_eq!(g.sample(-2.0, 1.0), 0.0);
        assert_eq!(g.sample(1.5, 1.5), 1.0);
        assert!((g.sample(-0.5, 1.0) - 0.5).abs() < 1e-12);
    }
}
