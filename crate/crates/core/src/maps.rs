//! En-face maps from volume stacks, ETDRS grid means and peripapillary sub-fields.
//!
//! Map rows run superior to inferior (increasing scan index) and columns follow the
//! B-scan columns. Absent values are NaN internally and `null` in JSON. An unknown
//! eye is oriented like a right eye.

use ndarray::Array2;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::types::{Eye, PixelPoint};

/// One B-scan's thickness profile, indexed by image column from `c0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanProfile {
    pub c0: usize,
    pub values: Vec<f64>,
    pub fovea_col: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapOptions {
    /// Microns between neighbouring A-scans.
    pub lateral_scale: f64,
    /// Microns between neighbouring B-scans.
    pub frontal_scale: f64,
    pub fovea_scan: usize,
    pub shape: (usize, usize),
    pub rotation_deg: f64,
    pub smooth: bool,
    pub eye: Eye,
}

fn serialize_grid<S: Serializer>(values: &Array2<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<Option<f64>>> = values
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|&v| v.is_finite().then_some(v)).collect())
        .collect();
    rows.serialize(s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnFaceMap {
    #[serde(serialize_with = "serialize_grid")]
    pub values: Array2<f64>,
    pub px_scale_x: f64,
    pub px_scale_y: f64,
    pub fovea: PixelPoint,
    pub rotation_deg: f64,
    pub eye: Eye,
}

impl EnFaceMap {
    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }
}

/// Coarse grid: one row per scan, columns aligned on each scan's fovea column and
/// padded with duplicated edge values.
struct AlignedStack {
    rows: Vec<Vec<f64>>,
    /// Aligned column offset of the first grid column relative to the fovea.
    origin: f64,
}

fn align(profiles: &[ScanProfile], pad: usize) -> Result<AlignedStack> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in profiles {
        if p.values.is_empty() {
            return Err(Error::invalid("empty thickness profile"));
        }
        lo = lo.min(p.c0 as f64 - p.fovea_col);
        hi = hi.max((p.c0 + p.values.len() - 1) as f64 - p.fovea_col);
    }
    let origin = lo.floor() - pad as f64;
    let width = ((hi.ceil() + pad as f64) - origin) as usize + 1;
    let rows = profiles
        .iter()
        .map(|p| {
            let shift = p.c0 as f64 - p.fovea_col - origin;
            if shift.fract() != 0.0 {
                return Err(Error::invalid("fovea columns must be whole pixels"));
            }
            let start = shift as usize;
            let mut row = vec![f64::NAN; width];
            row[start..start + p.values.len()].copy_from_slice(&p.values);
            let first = p.values.iter().position(|v| v.is_finite());
            let last = p.values.iter().rposition(|v| v.is_finite());
            if let (Some(f), Some(l)) = (first, last) {
                let (fi, li) = (start + f, start + l);
                for k in 1..=pad {
                    if fi >= k {
                        row[fi - k] = row[fi];
                    }
                    if li + k < width {
                        row[li + k] = row[li];
                    }
                }
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(AlignedStack { rows, origin })
}

/// Bilinear read; NaN outside the grid or next to an absent value.
fn bilinear(grid: &dyn Fn(isize, isize) -> f64, y: f64, x: f64, h: usize, w: usize) -> f64 {
    if !(y >= 0.0 && x >= 0.0 && y <= (h - 1) as f64 && x <= (w - 1) as f64) {
        return f64::NAN;
    }
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as isize, x0 as isize);
    let y1 = if fy > 0.0 { y0 + 1 } else { y0 };
    let x1 = if fx > 0.0 { x0 + 1 } else { x0 };
    let v00 = grid(y0, x0);
    let v01 = grid(y0, x1);
    let v10 = grid(y1, x0);
    let v11 = grid(y1, x1);
    let top = v00 + fx * (v01 - v00);
    let bottom = v10 + fx * (v11 - v10);
    top + fy * (bottom - top)
}

/// Gaussian blur that ignores absent values and keeps them absent.
pub fn smooth_nan(values: &Array2<f64>, sigma: f64) -> Array2<f64> {
    if !(sigma > 0.0) {
        return values.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-0.5 * (d as f64 / sigma).powi(2)).exp())
        .collect();
    let (m, n) = values.dim();
    let pass = |src: &Array2<f64>, vertical: bool| -> Array2<f64> {
        Array2::from_shape_fn((m, n), |(r, c)| {
            if !values[[r, c]].is_finite() {
                return f64::NAN;
            }
            let (mut acc, mut wsum) = (0.0, 0.0);
            for (k, &w) in kernel.iter().enumerate() {
                let d = k as isize - radius;
                let (rr, cc) = if vertical { (r as isize + d, c as isize) } else { (r as isize, c as isize + d) };
                if rr < 0 || cc < 0 || rr >= m as isize || cc >= n as isize {
                    continue;
                }
                let v = src[[rr as usize, cc as usize]];
                if v.is_finite() {
                    acc += w * v;
                    wsum += w;
                }
            }
            acc / wsum
        })
    };
    pass(&pass(values, false), true)
}

/// Rotates `values` by `deg` (counter-clockwise on screen) about `centre`.
pub fn rotate(values: &Array2<f64>, centre: PixelPoint, deg: f64) -> Array2<f64> {
    if deg == 0.0 {
        return values.clone();
    }
    let (m, n) = values.dim();
    let (s, c) = deg.to_radians().sin_cos();
    let read = |r: isize, col: isize| values[[r as usize, col as usize]];
    Array2::from_shape_fn((m, n), |(r, col)| {
        let dx = col as f64 - centre.col;
        let dy = r as f64 - centre.row;
        let sx = centre.col + c * dx - s * dy;
        let sy = centre.row + s * dx + c * dy;
        let sx = if (sx - sx.round()).abs() < 1e-9 { sx.round() } else { sx };
        let sy = if (sy - sy.round()).abs() < 1e-9 { sy.round() } else { sy };
        bilinear(&read, sy, sx, m, n)
    })
}

/// Stacks per-scan thickness profiles into a fovea-centred en-face map. Map pixels
/// are one A-scan spacing on a side.
pub fn build_map(profiles: &[ScanProfile], options: &MapOptions) -> Result<EnFaceMap> {
    if profiles.len() < 2 {
        return Err(Error::invalid("a map needs at least two B-scans"));
    }
    if !(options.lateral_scale > 0.0 && options.frontal_scale > 0.0) {
        return Err(Error::invalid("map scales must be positive"));
    }
    if options.fovea_scan >= profiles.len() {
        return Err(Error::invalid("fovea scan index out of range"));
    }
    let (m, n) = options.shape;
    if m == 0 || n == 0 {
        return Err(Error::invalid("map shape must be non-empty"));
    }
    let ratio = options.frontal_scale / options.lateral_scale;
    let pad = ratio.ceil() as usize;
    let stack = align(profiles, pad)?;
    let (h, w) = (stack.rows.len(), stack.rows[0].len());
    let read = |r: isize, c: isize| stack.rows[r as usize][c as usize];
    let centre = PixelPoint::new((n as f64 - 1.0) / 2.0, (m as f64 - 1.0) / 2.0);
    let sampled = Array2::from_shape_fn((m, n), |(i, j)| {
        let scan = options.fovea_scan as f64 + (i as f64 - centre.row) / ratio;
        let col = (j as f64 - centre.col) - stack.origin;
        bilinear(&read, scan, col, h, w)
    });
    let smoothed = if options.smooth { smooth_nan(&sampled, ratio) } else { sampled };
    Ok(EnFaceMap {
        values: rotate(&smoothed, centre, options.rotation_deg),
        px_scale_x: options.lateral_scale,
        px_scale_y: options.lateral_scale,
        fovea: centre,
        rotation_deg: options.rotation_deg,
        eye: options.eye,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubfieldMean {
    pub mean: Option<f64>,
    /// Pixels with a value.
    pub pixels: usize,
    /// Fraction of the sub-field's pixels with a value.
    pub coverage: f64,
    pub low_coverage: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtdrsField {
    Central,
    InnerSuperior,
    InnerNasal,
    InnerInferior,
    InnerTemporal,
    OuterSuperior,
    OuterNasal,
    OuterInferior,
    OuterTemporal,
}

pub const ETDRS_RADII_MICRONS: [f64; 3] = [500.0, 1500.0, 3000.0];
pub const MIN_COVERAGE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtdrsReport {
    pub central: SubfieldMean,
    pub inner_superior: SubfieldMean,
    pub inner_nasal: SubfieldMean,
    pub inner_inferior: SubfieldMean,
    pub inner_temporal: SubfieldMean,
    pub outer_superior: SubfieldMean,
    pub outer_nasal: SubfieldMean,
    pub outer_inferior: SubfieldMean,
    pub outer_temporal: SubfieldMean,
}

impl EtdrsReport {
    pub fn fields(&self) -> [(EtdrsField, &SubfieldMean); 9] {
        use EtdrsField::*;
        [
            (Central, &self.central),
            (InnerSuperior, &self.inner_superior),
            (InnerNasal, &self.inner_nasal),
            (InnerInferior, &self.inner_inferior),
            (InnerTemporal, &self.inner_temporal),
            (OuterSuperior, &self.outer_superior),
            (OuterNasal, &self.outer_nasal),
            (OuterInferior, &self.outer_inferior),
            (OuterTemporal, &self.outer_temporal),
        ]
    }
}

/// Wraps degrees into [−180, 180).
fn wrap_deg(a: f64) -> f64 {
    let w = (a + 180.0).rem_euclid(360.0) - 180.0;
    if w >= 180.0 {
        w - 360.0
    } else {
        w
    }
}

/// Sub-field of a map pixel, if inside the 6 mm disc.
pub fn etdrs_field(map: &EnFaceMap, row: usize, col: usize, acquisition_angle_deg: f64) -> Option<EtdrsField> {
    use EtdrsField::*;
    let dx = (col as f64 - map.fovea.col) * map.px_scale_x;
    let dy = (row as f64 - map.fovea.row) * map.px_scale_y;
    let r = dx.hypot(dy);
    if r > ETDRS_RADII_MICRONS[2] {
        return None;
    }
    if r <= ETDRS_RADII_MICRONS[0] {
        return Some(Central);
    }
    let inner = r <= ETDRS_RADII_MICRONS[1];
    let angle = wrap_deg((-dy).atan2(dx).to_degrees() - acquisition_angle_deg);
    let right_is_nasal = map.eye != Eye::Left;
    let quadrant = if (-45.0..45.0).contains(&angle) {
        if right_is_nasal { 1 } else { 3 }
    } else if (45.0..135.0).contains(&angle) {
        0
    } else if (-135.0..-45.0).contains(&angle) {
        2
    } else if right_is_nasal {
        3
    } else {
        1
    };
    Some(match (inner, quadrant) {
        (true, 0) => InnerSuperior,
        (true, 1) => InnerNasal,
        (true, 2) => InnerInferior,
        (true, _) => InnerTemporal,
        (false, 0) => OuterSuperior,
        (false, 1) => OuterNasal,
        (false, 2) => OuterInferior,
        (false, _) => OuterTemporal,
    })
}

fn summarise(sum: f64, valid: usize, total: usize) -> SubfieldMean {
    let coverage = if total > 0 { valid as f64 / total as f64 } else { 0.0 };
    SubfieldMean {
        mean: (valid > 0).then(|| sum / valid as f64),
        pixels: valid,
        coverage,
        low_coverage: coverage < MIN_COVERAGE,
    }
}

/// Mean over each of the nine ETDRS sub-fields, quadrants measured from the
/// acquisition axis.
pub fn etdrs_means(map: &EnFaceMap, acquisition_angle_deg: f64) -> EtdrsReport {
    let mut sums = [0.0; 9];
    let mut valid = [0usize; 9];
    let mut total = [0usize; 9];
    for ((r, c), &v) in map.values.indexed_iter() {
        if let Some(f) = etdrs_field(map, r, c, acquisition_angle_deg) {
            let i = f as usize;
            total[i] += 1;
            if v.is_finite() {
                sums[i] += v;
                valid[i] += 1;
            }
        }
    }
    let s = |i: usize| summarise(sums[i], valid[i], total[i]);
    EtdrsReport {
        central: s(0),
        inner_superior: s(1),
        inner_nasal: s(2),
        inner_inferior: s(3),
        inner_temporal: s(4),
        outer_superior: s(5),
        outer_nasal: s(6),
        outer_inferior: s(7),
        outer_temporal: s(8),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeripapillaryField {
    Temporal,
    SuperoTemporal,
    SuperoNasal,
    Nasal,
    InferoNasal,
    InferoTemporal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeripapillaryReport {
    pub temporal: Option<f64>,
    pub supero_temporal: Option<f64>,
    pub supero_nasal: Option<f64>,
    pub nasal: Option<f64>,
    pub infero_nasal: Option<f64>,
    pub infero_temporal: Option<f64>,
    pub pmb: Option<f64>,
    pub nasal_temporal_ratio: Option<f64>,
    pub overall: Option<f64>,
}

/// Angle in degrees of array position `i` relative to the temporal centre; positive
/// runs superior for right eyes and is mirrored for left eyes.
pub fn peripapillary_angle(i: usize, n: usize, temporal_centre: usize, eye: Eye) -> f64 {
    let mut d = ((i + n - temporal_centre % n) % n) as i64;
    if 2 * d >= n as i64 {
        d -= n as i64;
    }
    let a = d as f64 * 360.0 / n as f64;
    match eye {
        Eye::Left => wrap_deg(-a),
        _ => a,
    }
}

pub fn peripapillary_field(angle: f64) -> PeripapillaryField {
    use PeripapillaryField::*;
    match angle {
        a if (-45.0..45.0).contains(&a) => Temporal,
        a if (45.0..90.0).contains(&a) => SuperoTemporal,
        a if (90.0..135.0).contains(&a) => SuperoNasal,
        a if (-135.0..-90.0).contains(&a) => InferoNasal,
        a if (-90.0..-45.0).contains(&a) => InferoTemporal,
        _ => Nasal,
    }
}

/// Sub-field means of a circular thickness profile. NaN entries are skipped.
pub fn peripapillary_means(thickness: &[f64], temporal_centre: usize, eye: Eye) -> Result<PeripapillaryReport> {
    let n = thickness.len();
    if n == 0 {
        return Err(Error::invalid("peripapillary profile is empty"));
    }
    if temporal_centre >= n {
        return Err(Error::invalid("temporal centre index out of range"));
    }
    let mut sums = [0.0; 6];
    let mut counts = [0usize; 6];
    let (mut pmb_sum, mut pmb_n, mut all_sum, mut all_n) = (0.0, 0usize, 0.0, 0usize);
    for (i, &v) in thickness.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        let a = peripapillary_angle(i, n, temporal_centre, eye);
        let f = peripapillary_field(a) as usize;
        sums[f] += v;
        counts[f] += 1;
        if (-30.0..30.0).contains(&a) {
            pmb_sum += v;
            pmb_n += 1;
        }
        all_sum += v;
        all_n += 1;
    }
    let mean = |s: f64, k: usize| (k > 0).then(|| s / k as f64);
    let m: Vec<Option<f64>> = (0..6).map(|i| mean(sums[i], counts[i])).collect();
    let ratio = match (m[3], m[0]) {
        (Some(nasal), Some(temporal)) if temporal != 0.0 => Some(nasal / temporal),
        _ => None,
    };
    Ok(PeripapillaryReport {
        temporal: m[0],
        supero_temporal: m[1],
        supero_nasal: m[2],
        nasal: m[3],
        infero_nasal: m[4],
        infero_temporal: m[5],
        pmb: mean(pmb_sum, pmb_n),
        nasal_temporal_ratio: ratio,
        overall: mean(all_sum, all_n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn options(shape: (usize, usize)) -> MapOptions {
        MapOptions {
            lateral_scale: 10.0,
            frontal_scale: 40.0,
            fovea_scan: 2,
            shape,
            rotation_deg: 0.0,
            smooth: true,
            eye: Eye::Right,
        }
    }

    fn constant_profiles(k: usize, len: usize, v: f64) -> Vec<ScanProfile> {
        (0..k)
            .map(|_| ScanProfile {
                c0: 0,
                values: vec![v; len],
                fovea_col: (len / 2) as f64,
            })
            .collect()
    }

    #[test]
    fn constant_volume_gives_constant_map() {
        let map = build_map(&constant_profiles(5, 41, 250.0), &options((17, 41))).unwrap();
        let finite: Vec<f64> = map.values.iter().copied().filter(|v| v.is_finite()).collect();
        assert!(!finite.is_empty());
        assert!(finite.iter().all(|&v| (v - 250.0).abs() < 1e-9));
    }

    #[test]
    fn rows_between_scans_blend_linearly() {
        let profiles: Vec<ScanProfile> = (0..5)
            .map(|k| ScanProfile {
                c0: 0,
                values: vec![100.0 * k as f64; 21],
                fovea_col: 10.0,
            })
            .collect();
        let mut opt = options((9, 21));
        opt.smooth = false;
        let map = build_map(&profiles, &opt).unwrap();
        // four map rows per scan spacing; centre row is scan 2
        assert!((map.values[[4, 10]] - 200.0).abs() < 1e-9);
        assert!((map.values[[5, 10]] - 225.0).abs() < 1e-9);
        assert!((map.values[[6, 10]] - 250.0).abs() < 1e-9);
    }

    #[test]
    fn half_turn_matches_rotated_map() {
        let profiles: Vec<ScanProfile> = (0..5)
            .map(|k| ScanProfile {
                c0: 0,
                values: (0..31).map(|c| (c * 7 + k * 13) as f64).collect(),
                fovea_col: 15.0,
            })
            .collect();
        let base = build_map(&profiles, &options((15, 31))).unwrap();
        let mut opt = options((15, 31));
        opt.rotation_deg = 180.0;
        let turned = build_map(&profiles, &opt).unwrap();
        let (m, n) = base.shape();
        for r in 0..m {
            for c in 0..n {
                let a = turned.values[[r, c]];
                let b = base.values[[m - 1 - r, n - 1 - c]];
                assert!(a.is_nan() && b.is_nan() || (a - b).abs() < 1e-6);
            }
        }
    }

    fn grid_map(size: usize, scale: f64, f: impl Fn(usize, usize) -> f64) -> EnFaceMap {
        EnFaceMap {
            values: Array2::from_shape_fn((size, size), |(r, c)| f(r, c)),
            px_scale_x: scale,
            px_scale_y: scale,
            fovea: PixelPoint::new((size as f64 - 1.0) / 2.0, (size as f64 - 1.0) / 2.0),
            rotation_deg: 0.0,
            eye: Eye::Right,
        }
    }

    #[test]
    fn constant_map_constant_report() {
        let rep = etdrs_means(&grid_map(121, 50.0, |_, _| 7.5), 0.0);
        for (_, f) in rep.fields() {
            assert_eq!(f.mean, Some(7.5));
            assert!(!f.low_coverage);
        }
    }

    #[test]
    fn radial_map_equal_inner_quadrants() {
        let rep = etdrs_means(
            &grid_map(121, 50.0, |r, c| ((r as f64 - 60.0).powi(2) + (c as f64 - 60.0).powi(2)).sqrt()),
            0.0,
        );
        let inner = [rep.inner_superior, rep.inner_nasal, rep.inner_inferior, rep.inner_temporal];
        for f in &inner[1..] {
            assert!((f.mean.unwrap() - inner[0].mean.unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn eye_swaps_nasal_side() {
        let mut map = grid_map(121, 50.0, |_, c| if c > 60 { 1.0 } else { 0.0 });
        assert_eq!(etdrs_means(&map, 0.0).outer_nasal.mean, Some(1.0));
        map.eye = Eye::Left;
        assert_eq!(etdrs_means(&map, 0.0).outer_temporal.mean, Some(1.0));
    }

    #[test]
    fn missing_values_lower_coverage() {
        let rep = etdrs_means(&grid_map(121, 50.0, |r, _| if r < 60 { f64::NAN } else { 1.0 }), 0.0);
        assert!(rep.outer_superior.low_coverage);
        assert_eq!(rep.outer_superior.mean, None);
        assert!(!rep.outer_inferior.low_coverage);
    }

    #[test]
    fn peripapillary_constant_and_nasal_indicator() {
        let rep = peripapillary_means(&[3.0; 360], 180, Eye::Right).unwrap();
        assert_eq!(rep.nasal_temporal_ratio, Some(1.0));
        assert_eq!(rep.pmb, Some(3.0));
        let nasal: Vec<f64> = (0..360)
            .map(|i| {
                let a = peripapillary_angle(i, 360, 0, Eye::Right);
                if peripapillary_field(a) == PeripapillaryField::Nasal { 1.0 } else { 0.0 }
            })
            .collect();
        let rep = peripapillary_means(&nasal, 0, Eye::Right).unwrap();
        assert_eq!(rep.nasal, Some(1.0));
        assert_eq!(rep.temporal, Some(0.0));
        assert_eq!(rep.nasal_temporal_ratio, None);
    }

    #[test]
    fn peripapillary_spans_partition_circle() {
        let mut counts = [0usize; 6];
        for i in 0..720 {
            counts[peripapillary_field(peripapillary_angle(i, 720, 0, Eye::Right)) as usize] += 1;
        }
        assert_eq!(counts, [180, 90, 90, 180, 90, 90]);
    }

    #[test]
    fn left_eye_mirrors_superior() {
        let a = peripapillary_angle(10, 360, 0, Eye::Right);
        let b = peripapillary_angle(10, 360, 0, Eye::Left);
        assert_eq!(a, -b);
    }
}
