//! Synthetic two-band choroid B-scans with known boundaries.
//!
//! Layers from top: retina, a bright pigment band ending sharply at the upper
//! boundary, the dark choroid, and the brighter sclera below a softly blurred lower
//! boundary. Optional dark elliptical lumens sit in the middle of the choroid.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BScan, BoundaryKind, BoundaryTrace, MaskProvenance, PixelPoint, RegionMask};

const RETINA: f64 = 100.0;
const PIGMENT_BAND: f64 = 220.0;
const PIGMENT_THICKNESS: f64 = 16.0;
const CHOROID: f64 = 60.0;
const STROMA: f64 = 85.0;
const LUMEN: f64 = 30.0;
const SCLERA: f64 = 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhantomShape {
    Flat,
    /// Both boundaries tilted by `angle_deg` in pixel space.
    Skewed { angle_deg: f64 },
    /// Boundaries bowed downward by `depth` pixels at the centre relative to the edges.
    Parabolic { depth: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub rows: usize,
    pub cols: usize,
    pub shape: PhantomShape,
    /// Upper boundary row at the centre column.
    pub upper_row: f64,
    /// Vertical distance between the boundaries.
    pub thickness: f64,
    pub noise_sigma: f64,
    /// Logistic scale (pixels) of the lower transition.
    pub lower_blur: f64,
    pub vessels: bool,
    pub seed: u64,
    pub axial_scale: f64,
    pub lateral_scale: f64,
}

impl PhantomConfig {
    /// 768×768 layout with boundaries near rows 300 and 420.
    pub fn standard(shape: PhantomShape) -> Self {
        PhantomConfig {
            rows: 768,
            cols: 768,
            shape,
            upper_row: 300.0,
            thickness: 120.0,
            noise_sigma: 10.0,
            lower_blur: 1.0,
            vessels: false,
            seed: 7,
            axial_scale: 3.87,
            lateral_scale: 11.47,
        }
    }

    /// Same layout scaled to an arbitrary size.
    pub fn scaled(shape: PhantomShape, rows: usize, cols: usize) -> Self {
        let s = rows as f64 / 768.0;
        PhantomConfig {
            rows,
            cols,
            upper_row: 300.0 * s,
            thickness: 120.0 * s,
            ..PhantomConfig::standard(shape)
        }
    }

    fn upper_at(&self, col: f64) -> f64 {
        let xc = (self.cols as f64 - 1.0) / 2.0;
        let dx = col - xc;
        match self.shape {
            PhantomShape::Flat => self.upper_row,
            PhantomShape::Skewed { angle_deg } => self.upper_row + angle_deg.to_radians().tan() * dx,
            PhantomShape::Parabolic { depth } => self.upper_row + depth * (1.0 - (dx / xc).powi(2)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomEndpoints {
    pub upper: [PixelPoint; 2],
    pub lower: [PixelPoint; 2],
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub scan: BScan,
    pub upper: BoundaryTrace,
    pub lower: BoundaryTrace,
    /// Pixel centres lying between the two continuous boundaries.
    pub region: RegionMask,
    pub endpoints: PhantomEndpoints,
    pub vessels: Array2<bool>,
}

struct Lumen {
    col: f64,
    depth: f64,
    half_width: f64,
    half_height: f64,
}

/// Fraction of the pixel interval [r − ½, r + ½] lying above `edge`.
fn coverage_above(r: f64, edge: f64) -> f64 {
    (edge - (r - 0.5)).clamp(0.0, 1.0)
}

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

pub fn generate(config: &PhantomConfig) -> Result<Phantom> {
    let (m, n) = (config.rows, config.cols);
    if m < 32 || n < 32 {
        return Err(Error::invalid("phantom must be at least 32×32"));
    }
    if !(config.lower_blur > 0.0) {
        return Err(Error::invalid("lower_blur must be positive"));
    }
    if !(config.thickness > 4.0) {
        return Err(Error::invalid("phantom thickness must exceed 4 pixels"));
    }
    let upper: Vec<f64> = (0..n).map(|c| config.upper_at(c as f64)).collect();
    let lower: Vec<f64> = upper.iter().map(|u| u + config.thickness).collect();
    let top = (m - 1) as f64;
    if upper.iter().any(|&u| u - PIGMENT_THICKNESS < 1.0) || lower.iter().any(|&l| l > top - 4.0) {
        return Err(Error::invalid("phantom boundaries leave the image"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let lumens: Vec<Lumen> = if config.vessels {
        let spacing = (config.thickness * 0.9).max(8.0);
        let count = ((n as f64 - 2.0 * spacing) / spacing).floor().max(0.0) as usize;
        (0..count)
            .map(|i| Lumen {
                col: spacing * (i as f64 + 1.5) + rng.gen_range(-0.1..0.1) * spacing,
                depth: config.thickness * rng.gen_range(0.4..0.6),
                half_width: spacing * rng.gen_range(0.2..0.32),
                half_height: config.thickness * rng.gen_range(0.12..0.2),
            })
            .collect()
    } else {
        Vec::new()
    };
    let choroid = if config.vessels { STROMA } else { CHOROID };

    let mut vessels = Array2::from_elem((m, n), false);
    let mut clean = Array2::<f64>::zeros((m, n));
    for c in 0..n {
        let (u, l) = (upper[c], lower[c]);
        for r in 0..m {
            let rf = r as f64;
            let above_band = coverage_above(rf, u - PIGMENT_THICKNESS);
            let above_upper = coverage_above(rf, u);
            let below_lower = logistic((rf - l) / config.lower_blur);
            let mut mid = choroid;
            for lu in &lumens {
                let dx = (c as f64 - lu.col) / lu.half_width;
                let dy = (rf - (u + lu.depth)) / lu.half_height;
                if dx * dx + dy * dy <= 1.0 {
                    mid = LUMEN;
                    vessels[[r, c]] = true;
                }
            }
            let inner = (1.0 - below_lower) * mid + below_lower * SCLERA;
            let band = above_band * RETINA + (1.0 - above_band) * PIGMENT_BAND;
            clean[[r, c]] = above_upper * band + (1.0 - above_upper) * inner;
        }
    }

    let noise = if config.noise_sigma > 0.0 {
        Some(Normal::new(0.0, config.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };
    let pixels = clean.mapv(|v| {
        let e = noise.map_or(0.0, |d| d.sample(&mut rng));
        (v + e).round().clamp(0.0, 255.0) as u8
    });

    let region = Array2::from_shape_fn((m, n), |(r, c)| {
        let rf = r as f64;
        rf >= upper[c] && rf <= lower[c]
    });
    let scan = BScan::new(pixels, config.axial_scale, config.lateral_scale)?;
    let last = (n - 1) as f64;
    let endpoints = PhantomEndpoints {
        upper: [
            PixelPoint::new(0.0, upper[0].round()),
            PixelPoint::new(last, upper[n - 1].round()),
        ],
        lower: [
            PixelPoint::new(0.0, lower[0].round()),
            PixelPoint::new(last, lower[n - 1].round()),
        ],
    };
    Ok(Phantom {
        scan,
        upper: BoundaryTrace::exact(BoundaryKind::RpeChoroid, 0, upper),
        lower: BoundaryTrace::exact(BoundaryKind::ChoroidSclera, 0, lower),
        region: RegionMask {
            pixels: region,
            provenance: MaskProvenance::External,
        },
        endpoints,
        vessels,
    })
}

/// Two-intensity choroid of vertical dark stripes (4 px wide, period 8) between flat
/// boundaries at rows 100 and 180 of a 300×256 image. Below the choroid the stripe
/// pattern repeats inverted so every column holds the same multiset of intensities.
pub fn two_tone(dark: u8, bright: u8) -> Result<Phantom> {
    if dark >= bright {
        return Err(Error::invalid("dark level must be below bright level"));
    }
    const ROWS: usize = 300;
    const COLS: usize = 256;
    const TOP: usize = 100;
    const BOTTOM: usize = 180;
    const BACKGROUND: u8 = 120;
    let height = BOTTOM - TOP + 1;
    let is_dark_col = |c: usize| c % 8 < 4;
    let mut pixels = Array2::from_elem((ROWS, COLS), BACKGROUND);
    let mut vessels = Array2::from_elem((ROWS, COLS), false);
    for c in 0..COLS {
        for r in TOP..=BOTTOM {
            pixels[[r, c]] = if is_dark_col(c) { dark } else { bright };
            vessels[[r, c]] = is_dark_col(c);
        }
        for r in BOTTOM + 10..BOTTOM + 10 + height {
            pixels[[r, c]] = if is_dark_col(c) { bright } else { dark };
        }
    }
    let region = Array2::from_shape_fn((ROWS, COLS), |(r, _)| (TOP..=BOTTOM).contains(&r));
    let last = (COLS - 1) as f64;
    Ok(Phantom {
        scan: BScan::new(pixels, 3.87, 11.47)?,
        upper: BoundaryTrace::exact(BoundaryKind::RpeChoroid, 0, vec![TOP as f64; COLS]),
        lower: BoundaryTrace::exact(BoundaryKind::ChoroidSclera, 0, vec![BOTTOM as f64; COLS]),
        region: RegionMask {
            pixels: region,
            provenance: MaskProvenance::External,
        },
        endpoints: PhantomEndpoints {
            upper: [PixelPoint::new(0.0, TOP as f64), PixelPoint::new(last, TOP as f64)],
            lower: [PixelPoint::new(0.0, BOTTOM as f64), PixelPoint::new(last, BOTTOM as f64)],
        },
        vessels,
    })
}
