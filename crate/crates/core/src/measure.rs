//! Fovea-centred regions of interest and choroid thickness, area and vascularity.
//!
//! Geometry is done in micron space, so tangents, normals and arc lengths respect
//! anisotropic pixel scales.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{pixel_area_mm2, region_from_traces, BScan, BoundaryTrace, PixelPoint, Scales, VesselMask};

pub const DEFAULT_TANGENT_OFFSET: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    #[default]
    ChoroidAligned,
    ImageAligned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThicknessMode {
    #[default]
    Perpendicular,
    PerAscan,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiSpec {
    pub fovea: PixelPoint,
    pub half_width_microns: f64,
    #[serde(default)]
    pub alignment: Alignment,
    #[serde(default = "default_offset")]
    pub tangent_offset_px: usize,
}

fn default_offset() -> usize {
    DEFAULT_TANGENT_OFFSET
}

impl RoiSpec {
    pub fn new(fovea: PixelPoint, half_width_microns: f64) -> Self {
        RoiSpec {
            fovea,
            half_width_microns,
            alignment: Alignment::ChoroidAligned,
            tangent_offset_px: DEFAULT_TANGENT_OFFSET,
        }
    }

    pub fn with_alignment(mut self, alignment: Alignment) -> Self {
        self.alignment = alignment;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiReport {
    pub sfct_microns: f64,
    pub avg_thickness_microns: f64,
    pub area_mm2: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub vessel_area_mm2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cvi: Option<f64>,
    pub alignment: Alignment,
    pub centre_col: usize,
    pub left_col: usize,
    pub right_col: usize,
    pub pixel_count: usize,
    pub roi_polygon: Vec<PixelPoint>,
}

type Vec2 = (f64, f64);

fn sub(a: Vec2, b: Vec2) -> Vec2 {
    (a.0 - b.0, a.1 - b.1)
}

fn dot(a: Vec2, b: Vec2) -> f64 {
    a.0 * b.0 + a.1 * b.1
}

fn cross(a: Vec2, b: Vec2) -> f64 {
    a.0 * b.1 - a.1 * b.0
}

fn micron_point(trace: &BoundaryTrace, col: usize, scales: Scales) -> Vec2 {
    scales.to_microns(PixelPoint::new(col as f64, trace.rows[col - trace.c0]))
}

/// Unit tangent of `trace` at `col` in micron space from points `offset` columns either
/// side, shrunk symmetrically near the ends (one-sided at the very ends).
pub fn tangent(trace: &BoundaryTrace, col: usize, offset: usize, scales: Scales) -> Result<Vec2> {
    if !trace.contains(col) {
        return Err(Error::invalid(format!("column {col} outside the trace")));
    }
    if trace.rows.len() < 2 {
        return Err(Error::invalid("tangent needs at least two traced columns"));
    }
    let room = (col - trace.c0).min(trace.c1() - col);
    let (a, b) = match offset.max(1).min(room) {
        0 if col == trace.c0 => (col, col + 1),
        0 => (col - 1, col),
        o => (col - o, col + o),
    };
    let d = sub(micron_point(trace, b, scales), micron_point(trace, a, scales));
    let len = dot(d, d).sqrt();
    Ok((d.0 / len, d.1 / len))
}

/// Normal pointing toward increasing row.
fn normal(t: Vec2) -> Vec2 {
    (-t.1, t.0)
}

/// Distance along the ray `origin + s·dir` (s ≥ 0) to the first crossing of the lower
/// polyline, with the crossing point.
fn ray_to_polyline(origin: Vec2, dir: Vec2, lower: &BoundaryTrace, scales: Scales) -> Option<(f64, Vec2)> {
    let mut best: Option<(f64, Vec2)> = None;
    for c in lower.c0..lower.c1() {
        let q0 = micron_point(lower, c, scales);
        let q1 = micron_point(lower, c + 1, scales);
        let e = sub(q1, q0);
        let denom = cross(dir, e);
        if denom.abs() < 1e-15 {
            continue;
        }
        let w = sub(q0, origin);
        let s = cross(w, e) / denom;
        let v = cross(w, dir) / denom;
        if s >= -1e-9 && (-1e-12..=1.0 + 1e-12).contains(&v) && best.map_or(true, |(bs, _)| s < bs) {
            let s = s.max(0.0);
            best = Some((s, (origin.0 + s * dir.0, origin.1 + s * dir.1)));
        }
    }
    best
}

fn perpendicular_hit(
    upper: &BoundaryTrace,
    lower: &BoundaryTrace,
    col: usize,
    offset: usize,
    scales: Scales,
) -> Result<(f64, Vec2)> {
    let t = tangent(upper, col, offset, scales)?;
    let origin = micron_point(upper, col, scales);
    ray_to_polyline(origin, normal(t), lower, scales).ok_or(Error::NoIntersection { col })
}

/// Thickness in microns along the upper-boundary normal at `col`.
pub fn perpendicular_thickness(
    upper: &BoundaryTrace,
    lower: &BoundaryTrace,
    col: usize,
    offset: usize,
    scales: Scales,
) -> Result<f64> {
    Ok(perpendicular_hit(upper, lower, col, offset, scales)?.0)
}

/// Vertical thickness in microns at `col`.
pub fn ascan_thickness(upper: &BoundaryTrace, lower: &BoundaryTrace, col: usize, scales: Scales) -> Result<f64> {
    match (upper.row_at(col), lower.row_at(col)) {
        (Some(u), Some(l)) => Ok(scales.axial * (l - u)),
        _ => Err(Error::invalid(format!("column {col} outside a trace"))),
    }
}

/// Thickness per shared column, starting at the returned first column. Columns whose
/// normal misses the lower trace hold NaN.
pub fn thickness_array(
    upper: &BoundaryTrace,
    lower: &BoundaryTrace,
    scales: Scales,
    mode: ThicknessMode,
) -> Result<(usize, Vec<f64>)> {
    let c0 = upper.c0.max(lower.c0);
    let c1 = upper.c1().min(lower.c1());
    if c0 > c1 {
        return Err(Error::NoOverlap);
    }
    let values = (c0..=c1)
        .map(|c| match mode {
            ThicknessMode::PerAscan => ascan_thickness(upper, lower, c, scales),
            ThicknessMode::Perpendicular => {
                if upper.rows.len() < 2 {
                    ascan_thickness(upper, lower, c, scales)
                } else {
                    Ok(perpendicular_thickness(upper, lower, c, DEFAULT_TANGENT_OFFSET, scales).unwrap_or(f64::NAN))
                }
            }
        })
        .collect::<Result<_>>()?;
    Ok((c0, values))
}

/// ROI endpoints along the upper boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiGeometry {
    pub centre_col: usize,
    pub left_col: usize,
    pub right_col: usize,
}

fn cumulative_arc(trace: &BoundaryTrace, scales: Scales) -> Vec<f64> {
    let mut out = vec![0.0; trace.rows.len()];
    for i in 1..out.len() {
        let d = sub(
            micron_point(trace, trace.c0 + i, scales),
            micron_point(trace, trace.c0 + i - 1, scales),
        );
        out[i] = out[i - 1] + dot(d, d).sqrt();
    }
    out
}

/// Centre is the upper-trace point nearest the fovea; endpoints are the columns whose
/// arc length from the centre is closest to the half-width on each side.
pub fn build_roi(upper: &BoundaryTrace, scales: Scales, spec: &RoiSpec) -> Result<RoiGeometry> {
    if !(spec.half_width_microns > 0.0) {
        return Err(Error::invalid("ROI half-width must be positive"));
    }
    let fovea = scales.to_microns(spec.fovea);
    if spec.fovea.col < upper.c0 as f64 || spec.fovea.col > upper.c1() as f64 {
        return Err(Error::invalid("fovea lies outside the traced span"));
    }
    let centre = upper
        .columns()
        .min_by(|&a, &b| {
            let da = sub(micron_point(upper, a, scales), fovea);
            let db = sub(micron_point(upper, b, scales), fovea);
            dot(da, da).total_cmp(&dot(db, db))
        })
        .expect("trace is non-empty");
    let arc = cumulative_arc(upper, scales);
    let ci = centre - upper.c0;
    let hw = spec.half_width_microns;
    let left_room = arc[ci];
    let right_room = arc[arc.len() - 1] - arc[ci];
    let pick = |range: Vec<usize>| -> usize {
        *range
            .iter()
            .min_by(|&&a, &&b| {
                let da = ((arc[a] - arc[ci]).abs() - hw).abs();
                let db = ((arc[b] - arc[ci]).abs() - hw).abs();
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .expect("non-empty side")
    };
    let short = || Error::TraceTooShort {
        achievable_microns: left_room.min(right_room),
    };
    if ci == 0 || ci == arc.len() - 1 {
        return Err(short());
    }
    let li = pick((0..ci).collect());
    let ri = pick((ci + 1..arc.len()).collect());
    let seg = |i: usize, j: usize| (arc[j] - arc[i]).abs();
    if li == 0 && left_room < hw && hw - left_room > 0.5 * seg(0, 1) {
        return Err(short());
    }
    let last = arc.len() - 1;
    if ri == last && right_room < hw && hw - right_room > 0.5 * seg(last - 1, last) {
        return Err(short());
    }
    Ok(RoiGeometry {
        centre_col: centre,
        left_col: upper.c0 + li,
        right_col: upper.c0 + ri,
    })
}

/// SFCT, mean thickness, area and (with a vessel mask) vessel area and CVI.
pub fn measure_roi(
    upper: &BoundaryTrace,
    lower: &BoundaryTrace,
    vessels: Option<&VesselMask>,
    scan: &BScan,
    spec: &RoiSpec,
) -> Result<RoiReport> {
    let scales = scan.scales();
    let offset = spec.tangent_offset_px;
    let geom = build_roi(upper, scales, spec)?;
    let region = region_from_traces(upper, lower, scan.shape())?;
    if let Some(v) = vessels {
        if v.pixels.dim() != scan.shape() {
            return Err(Error::ShapeMismatch {
                expected: scan.shape(),
                got: v.pixels.dim(),
            });
        }
    }
    let cols = geom.left_col..=geom.right_col;
    if !lower.contains(geom.left_col) || !lower.contains(geom.right_col) {
        return Err(Error::invalid("ROI extends beyond the lower trace"));
    }

    let (sfct, avg, inside, polygon): (f64, f64, Box<dyn Fn(usize, usize) -> bool>, Vec<PixelPoint>) =
        match spec.alignment {
            Alignment::ImageAligned => {
                let sfct = ascan_thickness(upper, lower, geom.centre_col, scales)?;
                let values: Vec<f64> = cols
                    .clone()
                    .map(|c| ascan_thickness(upper, lower, c, scales))
                    .collect::<Result<_>>()?;
                let avg = values.iter().sum::<f64>() / values.len() as f64;
                let (l, r) = (geom.left_col, geom.right_col);
                let mut poly: Vec<PixelPoint> = cols
                    .clone()
                    .map(|c| PixelPoint::new(c as f64, upper.row_at(c).unwrap()))
                    .collect();
                poly.extend(cols.clone().rev().map(|c| PixelPoint::new(c as f64, lower.row_at(c).unwrap())));
                (sfct, avg, Box::new(move |_, c| c >= l && c <= r), poly)
            }
            Alignment::ChoroidAligned => {
                let sfct = perpendicular_thickness(upper, lower, geom.centre_col, offset, scales)?;
                let values: Vec<f64> = cols
                    .clone()
                    .filter_map(|c| perpendicular_thickness(upper, lower, c, offset, scales).ok())
                    .collect();
                if values.is_empty() {
                    return Err(Error::NoIntersection { col: geom.centre_col });
                }
                let avg = values.iter().sum::<f64>() / values.len() as f64;
                let lp = micron_point(upper, geom.left_col, scales);
                let rp = micron_point(upper, geom.right_col, scales);
                let lt = tangent(upper, geom.left_col, offset, scales)?;
                let rt = tangent(upper, geom.right_col, offset, scales)?;
                let (_, lhit) = perpendicular_hit(upper, lower, geom.left_col, offset, scales)?;
                let (_, rhit) = perpendicular_hit(upper, lower, geom.right_col, offset, scales)?;
                let mut poly: Vec<PixelPoint> = cols
                    .clone()
                    .map(|c| PixelPoint::new(c as f64, upper.row_at(c).unwrap()))
                    .collect();
                let rhit_px = scales.to_pixels(rhit.0, rhit.1);
                let lhit_px = scales.to_pixels(lhit.0, lhit.1);
                poly.push(rhit_px);
                let lo = lhit_px.col.ceil().max(lower.c0 as f64) as usize;
                let hi = rhit_px.col.floor().min(lower.c1() as f64) as usize;
                if lo <= hi {
                    poly.extend((lo..=hi).rev().map(|c| PixelPoint::new(c as f64, lower.row_at(c).unwrap())));
                }
                poly.push(lhit_px);
                let test = move |r: usize, c: usize| {
                    let x = scales.to_microns(PixelPoint::new(c as f64, r as f64));
                    dot(sub(x, lp), lt) >= -1e-9 && dot(sub(x, rp), rt) <= 1e-9
                };
                (sfct, avg, Box::new(test), poly)
            }
        };

    let mut count = 0usize;
    let mut vessel_count = 0usize;
    for ((r, c), &v) in region.pixels.indexed_iter() {
        if v && inside(r, c) {
            count += 1;
            if vessels.is_some_and(|m| m.pixels[[r, c]]) {
                vessel_count += 1;
            }
        }
    }
    let px_area = pixel_area_mm2(scales.axial, scales.lateral);
    let (vessel_area, cvi) = match vessels {
        Some(_) => (
            Some(vessel_count as f64 * px_area),
            Some(if count > 0 { vessel_count as f64 / count as f64 } else { 0.0 }),
        ),
        None => (None, None),
    };
    Ok(RoiReport {
        sfct_microns: sfct,
        avg_thickness_microns: avg,
        area_mm2: count as f64 * px_area,
        vessel_area_mm2: vessel_area,
        cvi,
        alignment: spec.alignment,
        centre_col: geom.centre_col,
        left_col: geom.left_col,
        right_col: geom.right_col,
        pixel_count: count,
        roi_polygon: polygon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::BoundaryKind;
    use ndarray::Array2;

    const SCALES: Scales = Scales {
        axial: 3.87,
        lateral: 11.47,
    };

    fn flat(row: f64, n: usize, kind: BoundaryKind) -> BoundaryTrace {
        BoundaryTrace::exact(kind, 0, vec![row; n])
    }

    fn scan(m: usize, n: usize) -> BScan {
        BScan::new(Array2::zeros((m, n)), SCALES.axial, SCALES.lateral).unwrap()
    }

    #[test]
    fn flat_perpendicular_equals_vertical() {
        let u = flat(100.0, 768, BoundaryKind::RpeChoroid);
        let l = flat(200.0, 768, BoundaryKind::ChoroidSclera);
        let t = perpendicular_thickness(&u, &l, 384, 15, SCALES).unwrap();
        assert!((t - 387.0).abs() < 1e-9);
        assert!((ascan_thickness(&u, &l, 384, SCALES).unwrap() - 387.0).abs() < 1e-9);
    }

    #[test]
    fn skewed_perpendicular_is_gap_times_cosine() {
        let theta: f64 = 12f64.to_radians();
        let slope_px = theta.tan() * SCALES.lateral / SCALES.axial;
        let gap = 300.0;
        let u = BoundaryTrace::exact(BoundaryKind::RpeChoroid, 0, (0..400).map(|c| 50.0 + slope_px * c as f64).collect());
        let l = BoundaryTrace::exact(
            BoundaryKind::ChoroidSclera,
            0,
            u.rows.iter().map(|r| r + gap / SCALES.axial).collect(),
        );
        let t = perpendicular_thickness(&u, &l, 200, 15, SCALES).unwrap();
        assert!((t - gap * theta.cos()).abs() < 1e-6, "{t}");
        let naive_pixel_angle = slope_px.atan();
        assert!((t - gap * naive_pixel_angle.cos()).abs() > 1.0);
    }

    #[test]
    fn flat_roi_endpoints_and_area() {
        let u = flat(100.0, 768, BoundaryKind::RpeChoroid);
        let l = flat(200.0, 768, BoundaryKind::ChoroidSclera);
        let spec = RoiSpec::new(PixelPoint::new(384.0, 100.0), 3000.0);
        let g = build_roi(&u, SCALES, &spec).unwrap();
        assert_eq!((g.left_col, g.centre_col, g.right_col), (122, 384, 646));
        let s = scan(300, 768);
        let a = measure_roi(&u, &l, None, &s, &spec).unwrap();
        let b = measure_roi(&u, &l, None, &s, &spec.with_alignment(Alignment::ImageAligned)).unwrap();
        assert_eq!(a.pixel_count, 525 * 101);
        assert_eq!(a.area_mm2, b.area_mm2);
        assert_eq!(a.sfct_microns, b.sfct_microns);
        assert!((a.avg_thickness_microns - b.avg_thickness_microns).abs() < 1e-9);
        assert!(a.cvi.is_none());
        let json = serde_json::to_string(&a).unwrap();
        assert!(!json.contains("cvi"));
    }

    #[test]
    fn cvi_extremes() {
        let u = flat(100.0, 768, BoundaryKind::RpeChoroid);
        let l = flat(200.0, 768, BoundaryKind::ChoroidSclera);
        let s = scan(300, 768);
        let spec = RoiSpec::new(PixelPoint::new(384.0, 100.0), 1000.0);
        let region = region_from_traces(&u, &l, s.shape()).unwrap();
        let all = VesselMask {
            pixels: region.pixels.clone(),
        };
        let none = VesselMask {
            pixels: Array2::from_elem(s.shape(), false),
        };
        let r_all = measure_roi(&u, &l, Some(&all), &s, &spec).unwrap();
        assert_eq!(r_all.cvi, Some(1.0));
        assert_eq!(r_all.vessel_area_mm2, Some(r_all.area_mm2));
        assert_eq!(measure_roi(&u, &l, Some(&none), &s, &spec).unwrap().cvi, Some(0.0));
    }

    #[test]
    fn too_short_and_fovea_at_end() {
        let u = flat(100.0, 300, BoundaryKind::RpeChoroid);
        let err = build_roi(&u, SCALES, &RoiSpec::new(PixelPoint::new(150.0, 100.0), 3000.0)).unwrap_err();
        match err {
            Error::TraceTooShort { achievable_microns } => assert!((achievable_microns - 149.0 * 11.47).abs() < 1e-6),
            e => panic!("unexpected {e}"),
        }
        assert!(build_roi(&u, SCALES, &RoiSpec::new(PixelPoint::new(299.0, 100.0), 100.0)).is_err());
    }

    #[test]
    fn thickness_modes() {
        let u = flat(10.0, 50, BoundaryKind::RpeChoroid);
        let l = BoundaryTrace::exact(BoundaryKind::ChoroidSclera, 49, vec![30.0; 20]);
        let (c0, v) = thickness_array(&u, &l, SCALES, ThicknessMode::PerAscan).unwrap();
        assert_eq!((c0, v.len()), (49, 1));
        let (_, p) = thickness_array(&u, &l, SCALES, ThicknessMode::Perpendicular).unwrap();
        assert!((p[0] - v[0]).abs() < 1e-9);
    }

    #[test]
    fn tangent_shrinks_near_ends() {
        let u = BoundaryTrace::exact(BoundaryKind::RpeChoroid, 5, vec![0.0, 1.0, 4.0, 9.0]);
        let t = tangent(&u, 5, 15, Scales { axial: 1.0, lateral: 1.0 }).unwrap();
        assert!((t.1 / t.0 - 1.0).abs() < 1e-12);
        let t = tangent(&u, 6, 15, Scales { axial: 1.0, lateral: 1.0 }).unwrap();
        assert!((t.1 / t.0 - 2.0).abs() < 1e-12);
    }
}
