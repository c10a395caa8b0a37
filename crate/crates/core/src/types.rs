//! Shared domain types: scans, boundary traces, masks and coordinates.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Eye {
    Left,
    Right,
    #[default]
    Unknown,
}

impl std::str::FromStr for Eye {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "left" | "os" | "l" => Ok(Eye::Left),
            "right" | "od" | "r" => Ok(Eye::Right),
            "unknown" | "" => Ok(Eye::Unknown),
            other => Err(Error::invalid(format!("unknown eye '{other}'"))),
        }
    }
}

/// A grayscale OCT B-scan with its physical pixel spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct BScan {
    pub pixels: Array2<u8>,
    /// Microns per pixel, vertical.
    pub axial_scale: f64,
    /// Microns per pixel, horizontal.
    pub lateral_scale: f64,
    /// Microns between adjacent B-scans of a volume.
    pub frontal_scale: Option<f64>,
    pub eye: Eye,
    pub id: String,
}

impl BScan {
    pub fn new(pixels: Array2<u8>, axial_scale: f64, lateral_scale: f64) -> Result<Self> {
        let (m, n) = pixels.dim();
        if m == 0 || n == 0 {
            return Err(Error::invalid("image must have at least one row and column"));
        }
        if !(axial_scale > 0.0 && axial_scale.is_finite())
            || !(lateral_scale > 0.0 && lateral_scale.is_finite())
        {
            return Err(Error::invalid("pixel scales must be positive and finite"));
        }
        Ok(BScan {
            pixels,
            axial_scale,
            lateral_scale,
            frontal_scale: None,
            eye: Eye::Unknown,
            id: String::new(),
        })
    }

    pub fn with_eye(mut self, eye: Eye) -> Self {
        self.eye = eye;
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn rows(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn cols(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.pixels.dim()
    }

    pub fn scales(&self) -> Scales {
        Scales {
            axial: self.axial_scale,
            lateral: self.lateral_scale,
        }
    }

    pub fn pixel_area_mm2(&self) -> f64 {
        pixel_area_mm2(self.axial_scale, self.lateral_scale)
    }
}

/// Area of one pixel in mm², given microns-per-pixel in each direction.
pub fn pixel_area_mm2(axial_scale: f64, lateral_scale: f64) -> f64 {
    axial_scale * lateral_scale * 1e-6
}

/// Microns-per-pixel pair used for pixel/micron conversions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scales {
    pub axial: f64,
    pub lateral: f64,
}

impl Scales {
    /// Pixel (col, row) to micron (x, y).
    pub fn to_microns(&self, p: PixelPoint) -> (f64, f64) {
        (p.col * self.lateral, p.row * self.axial)
    }

    pub fn to_pixels(&self, x: f64, y: f64) -> PixelPoint {
        PixelPoint {
            col: x / self.lateral,
            row: y / self.axial,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub col: f64,
    pub row: f64,
}

impl PixelPoint {
    pub fn new(col: f64, row: f64) -> Self {
        PixelPoint { col, row }
    }

    /// Integer pixel index (row, col) after rounding, if inside `shape`.
    pub fn index(&self, shape: (usize, usize)) -> Option<(usize, usize)> {
        let r = self.row.round();
        let c = self.col.round();
        if r < 0.0 || c < 0.0 || r >= shape.0 as f64 || c >= shape.1 as f64 {
            None
        } else {
            Some((r as usize, c as usize))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    RpeChoroid,
    ChoroidSclera,
}

/// Sub-pixel row per column for one boundary, with its credible band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryTrace {
    pub kind: BoundaryKind,
    pub c0: usize,
    pub rows: Vec<f64>,
    pub band_lower: Vec<f64>,
    pub band_upper: Vec<f64>,
}

impl BoundaryTrace {
    /// A trace without uncertainty (band collapsed onto the rows).
    pub fn exact(kind: BoundaryKind, c0: usize, rows: Vec<f64>) -> Self {
        BoundaryTrace {
            kind,
            c0,
            band_lower: rows.clone(),
            band_upper: rows.clone(),
            rows,
        }
    }

    pub fn validate(&self, shape: Option<(usize, usize)>) -> Result<()> {
        let n = self.rows.len();
        if n == 0 {
            return Err(Error::invalid("trace has no columns"));
        }
        if self.band_lower.len() != n || self.band_upper.len() != n {
            return Err(Error::invalid("trace band length differs from rows"));
        }
        for i in 0..n {
            let (lo, r, hi) = (self.band_lower[i], self.rows[i], self.band_upper[i]);
            if !(r.is_finite() && lo.is_finite() && hi.is_finite()) {
                return Err(Error::invalid("trace contains non-finite values"));
            }
            if lo > r || r > hi {
                return Err(Error::invalid(format!(
                    "credible band does not contain the trace at column {}",
                    self.c0 + i
                )));
            }
        }
        if let Some((m, ncols)) = shape {
            if self.c1() >= ncols {
                return Err(Error::invalid("trace extends beyond the image width"));
            }
            if self.rows.iter().any(|&r| r < 0.0 || r >= m as f64) {
                return Err(Error::invalid("trace rows outside the image"));
            }
        }
        Ok(())
    }

    /// Last traced column (inclusive).
    pub fn c1(&self) -> usize {
        self.c0 + self.rows.len() - 1
    }

    pub fn contains(&self, col: usize) -> bool {
        col >= self.c0 && col <= self.c1()
    }

    pub fn row_at(&self, col: usize) -> Option<f64> {
        if self.contains(col) {
            Some(self.rows[col - self.c0])
        } else {
            None
        }
    }

    pub fn columns(&self) -> std::ops::RangeInclusive<usize> {
        self.c0..=self.c1()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskProvenance {
    GpetTraces,
    External,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    pub pixels: Array2<bool>,
    pub provenance: MaskProvenance,
}

impl RegionMask {
    pub fn external(pixels: Array2<bool>) -> Self {
        RegionMask {
            pixels,
            provenance: MaskProvenance::External,
        }
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.pixels.iter().any(|&v| v)
    }

    /// Inclusive (row0, row1, col0, col1) bounding box of set pixels.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        mask_bbox(&self.pixels)
    }

    /// First and last set row per column (None where the column is empty).
    pub fn column_extents(&self) -> Vec<Option<(usize, usize)>> {
        let (m, n) = self.pixels.dim();
        (0..n)
            .map(|c| {
                let first = (0..m).find(|&r| self.pixels[[r, c]])?;
                let last = (0..m).rev().find(|&r| self.pixels[[r, c]])?;
                Some((first, last))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VesselMask {
    pub pixels: Array2<bool>,
}

impl VesselMask {
    /// Builds a vessel mask, clearing anything outside `region`.
    pub fn clipped(mut pixels: Array2<bool>, region: &RegionMask) -> Result<Self> {
        if pixels.dim() != region.pixels.dim() {
            return Err(Error::ShapeMismatch {
                expected: region.pixels.dim(),
                got: pixels.dim(),
            });
        }
        ndarray::Zip::from(&mut pixels)
            .and(&region.pixels)
            .for_each(|v, &r| *v &= r);
        Ok(VesselMask { pixels })
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&v| v).count()
    }
}

pub(crate) fn mask_bbox(mask: &Array2<bool>) -> Option<(usize, usize, usize, usize)> {
    let mut bbox: Option<(usize, usize, usize, usize)> = None;
    for ((r, c), &v) in mask.indexed_iter() {
        if v {
            bbox = Some(match bbox {
                None => (r, r, c, c),
                Some((r0, r1, c0, c1)) => (r0.min(r), r1.max(r), c0.min(c), c1.max(c)),
            });
        }
    }
    bbox
}

/// Rasterises the choroid between two traces; rows are rounded half away from zero
/// and both boundaries are included.
pub fn region_from_traces(
    upper: &BoundaryTrace,
    lower: &BoundaryTrace,
    shape: (usize, usize),
) -> Result<RegionMask> {
    let (m, n) = shape;
    let c0 = upper.c0.max(lower.c0);
    let c1 = upper.c1().min(lower.c1());
    if c0 > c1 {
        return Err(Error::NoOverlap);
    }
    if c1 >= n {
        return Err(Error::invalid("trace extends beyond the image width"));
    }
    let mut pixels = Array2::from_elem(shape, false);
    for c in c0..=c1 {
        let top = upper.rows[c - upper.c0].round();
        let bottom = lower.rows[c - lower.c0].round();
        if bottom < top {
            return Err(Error::CrossingTraces { col: c });
        }
        let r0 = top.max(0.0) as usize;
        let r1 = (bottom.max(0.0) as usize).min(m.saturating_sub(1));
        if top >= m as f64 {
            continue;
        }
        for r in r0..=r1 {
            pixels[[r, c]] = true;
        }
    }
    Ok(RegionMask {
        pixels,
        provenance: MaskProvenance::GpetTraces,
    })
}
