//! Multi-scale median-cut quantisation for choroid vessel segmentation, with the
//! Niblack baseline and a brightness/contrast majority-vote wrapper.

pub mod niblack;
pub mod quantise;

use ndarray::{s, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use niblack::{niblack_segment, window_statistics, NiblackParams};
pub use quantise::{
    dispersion_weight, enhance_patch, estimate_levels, histogram, median_cut, median_cut_histogram, Cluster,
    MedianCut, QuantisedPatch,
};

use crate::error::{Error, Result};
use crate::preprocess::{clahe_masked, median_filter_masked, shadow_compensate, ShadowMode, DEFAULT_SHADOW_WINDOW};
use crate::types::{BScan, BoundaryTrace, RegionMask, VesselMask};

pub const VOTE_THRESHOLD: usize = 15;
pub const GAMMA_TARGETS: [f64; 5] = [0.2, 0.275, 0.35, 0.425, 0.5];
pub const CONTRAST_FACTORS: [f64; 5] = [0.5, 1.125, 1.75, 2.375, 3.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MmcqConfig {
    /// Clusters used when labelling each depth band.
    pub clusters: usize,
    /// Darkest clusters labelled as vessel.
    pub vessel_clusters: usize,
    pub patch_divisors: [f64; 3],
    pub depth_fractions: [f64; 2],
    pub choriocapillaris_microns: f64,
    pub shadow_window: usize,
    pub shadow_mode: ShadowMode,
    pub median_window: usize,
    pub clahe_tiles: usize,
    pub clahe_clip: f64,
}

impl Default for MmcqConfig {
    fn default() -> Self {
        MmcqConfig {
            clusters: 20,
            vessel_clusters: 11,
            patch_divisors: [10.0, 5.0, 2.0],
            depth_fractions: [1.0 / 3.0, 3.0 / 5.0],
            choriocapillaris_microns: 10.0,
            shadow_window: DEFAULT_SHADOW_WINDOW,
            shadow_mode: ShadowMode::Brighten,
            median_window: 3,
            clahe_tiles: 8,
            clahe_clip: 2.0,
        }
    }
}

impl MmcqConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vessel_clusters < 1 || self.vessel_clusters > self.clusters {
            return Err(Error::invalid("vessel cluster count must lie in [1, clusters]"));
        }
        let d = self.patch_divisors;
        if !(d[0] > d[1] && d[1] > d[2] && d[2] > 0.0) {
            return Err(Error::invalid("patch divisors must give strictly increasing patch sizes"));
        }
        if self.depth_fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::invalid("depth fractions must lie in (0, 1]"));
        }
        if !(self.choriocapillaris_microns >= 0.0) {
            return Err(Error::invalid("choriocapillaris depth must be non-negative"));
        }
        Ok(())
    }

    /// Patch side lengths for mean thickness `t`; sizes below 2 pixels are dropped.
    pub fn patch_sizes(&self, t: f64) -> Vec<usize> {
        let mut sizes: Vec<usize> = Vec::new();
        for d in self.patch_divisors {
            let s = (t / d).round();
            if s >= 2.0 && !sizes.contains(&(s as usize)) {
                sizes.push(s as usize);
            }
        }
        sizes
    }

    pub fn choriocapillaris_rows(&self, axial_scale: f64) -> usize {
        (self.choriocapillaris_microns / axial_scale).round() as usize
    }
}

/// Mean over occupied columns of (last − first) region row.
pub fn mean_thickness(region: &RegionMask) -> Option<f64> {
    let spans: Vec<f64> = region
        .column_extents()
        .into_iter()
        .flatten()
        .map(|(a, b)| (b - a) as f64)
        .collect();
    if spans.is_empty() {
        None
    } else {
        Some(spans.iter().sum::<f64>() / spans.len() as f64)
    }
}

/// Splits `len` into runs of `size`; a short remainder becomes its own run when at
/// least half a patch long and is absorbed by the previous run otherwise.
pub fn tile_segments(len: usize, size: usize) -> Vec<(usize, usize)> {
    if len <= size {
        return vec![(0, len)];
    }
    let mut out: Vec<(usize, usize)> = (0..len / size).map(|i| (i * size, (i + 1) * size)).collect();
    let rem = len % size;
    if rem > 0 {
        if 2 * rem >= size {
            out.push((len - rem, len));
        } else {
            out.last_mut().expect("at least one full run").1 = len;
        }
    }
    out
}

fn bracket(centres: &[f64], x: f64) -> (usize, usize, f64) {
    let last = centres.len() - 1;
    if x <= centres[0] {
        return (0, 0, 0.0);
    }
    if x >= centres[last] {
        return (last, last, 0.0);
    }
    let i0 = centres.iter().rposition(|&c| c <= x).expect("x above first centre");
    let t = (x - centres[i0]) / (centres[i0 + 1] - centres[i0]);
    (i0, i0 + 1, t)
}

/// Region pixels after shadow compensation, masked median and masked CLAHE, cropped
/// to the region bounding box.
#[derive(Debug, Clone)]
pub struct PreparedChoroid {
    pub origin: (usize, usize),
    pub pixels: Array2<u8>,
    pub mask: Array2<bool>,
}

pub fn prepare_choroid(image: &Array2<u8>, region: &RegionMask, config: &MmcqConfig) -> Result<PreparedChoroid> {
    if image.dim() != region.pixels.dim() {
        return Err(Error::ShapeMismatch {
            expected: image.dim(),
            got: region.pixels.dim(),
        });
    }
    let (r0, r1, c0, c1) = region.bbox().ok_or_else(|| Error::invalid("choroid region is empty"))?;
    let compensated = shadow_compensate(image, config.shadow_window, config.shadow_mode)?;
    let crop = compensated.slice(s![r0..=r1, c0..=c1]).to_owned();
    let mask = region.pixels.slice(s![r0..=r1, c0..=c1]).to_owned();
    let smoothed = median_filter_masked(&crop, &mask, config.median_window)?;
    let (h, w) = crop.dim();
    let tiles = config.clahe_tiles.min(h).min(w).max(1);
    let pixels = clahe_masked(&smoothed, Some(&mask), tiles, config.clahe_clip)?;
    Ok(PreparedChoroid {
        origin: (r0, c0),
        pixels,
        mask,
    })
}

fn region_sd(prepared: &PreparedChoroid) -> f64 {
    let h = histogram(
        prepared
            .pixels
            .iter()
            .zip(prepared.mask.iter())
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v),
    );
    let n: u64 = h.iter().sum();
    let mean = h.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum::<f64>() / n as f64;
    let var = h
        .iter()
        .enumerate()
        .map(|(i, &c)| c as f64 * (i as f64 - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    var.sqrt()
}

/// Enhances one scale: every patch gets its own mapping, and each pixel blends the
/// mappings of the four nearest patch centres. Values outside the mask are NaN.
pub fn enhance_scale(prepared: &PreparedChoroid, size: usize, image_sigma: f64) -> Result<Array2<f64>> {
    let (h, w) = prepared.pixels.dim();
    let rows = tile_segments(h, size);
    let cols = tile_segments(w, size);
    let luts: Vec<Option<[f64; 256]>> = rows
        .iter()
        .flat_map(|&rs| cols.iter().map(move |&cs| (rs, cs)))
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&((ra, rb), (ca, cb))| {
            let view = prepared.pixels.slice(s![ra..rb, ca..cb]);
            let mview = prepared.mask.slice(s![ra..rb, ca..cb]);
            let hist = histogram(view.iter().zip(mview.iter()).filter(|(_, &m)| m).map(|(&v, _)| v));
            if hist.iter().all(|&c| c == 0) {
                return Ok(None);
            }
            Ok(Some(quantise::enhance_patch_histogram(&hist, image_sigma)?.lut()))
        })
        .collect::<Result<_>>()?;
    let centre = |segs: &[(usize, usize)]| -> Vec<f64> { segs.iter().map(|&(a, b)| (a + b - 1) as f64 / 2.0).collect() };
    let (rc, cc) = (centre(&rows), centre(&cols));
    let nc = cols.len();
    Ok(Array2::from_shape_fn((h, w), |(r, c)| {
        if !prepared.mask[[r, c]] {
            return f64::NAN;
        }
        let v = prepared.pixels[[r, c]] as usize;
        let (i0, i1, ti) = bracket(&rc, r as f64);
        let (j0, j1, tj) = bracket(&cc, c as f64);
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for (i, wi) in [(i0, 1.0 - ti), (i1, ti)] {
            for (j, wj) in [(j0, 1.0 - tj), (j1, tj)] {
                let wgt = wi * wj;
                if wgt == 0.0 {
                    continue;
                }
                if let Some(lut) = &luts[i * nc + j] {
                    acc += wgt * lut[v];
                    wsum += wgt;
                }
            }
        }
        acc / wsum
    }))
}

#[derive(Debug, Clone)]
pub struct EnhancedChoroid {
    /// Full-image array, NaN outside the region.
    pub values: Array2<f64>,
    pub mean_thickness: f64,
    pub patch_sizes: Vec<usize>,
}

/// Pre-processes the region and merges the per-scale enhancements by minimum.
pub fn enhance_choroid(image: &Array2<u8>, region: &RegionMask, config: &MmcqConfig) -> Result<EnhancedChoroid> {
    config.validate()?;
    let prepared = prepare_choroid(image, region, config)?;
    let t = mean_thickness(region).ok_or_else(|| Error::invalid("choroid region is empty"))?;
    let mut sizes = config.patch_sizes(t);
    if sizes.is_empty() {
        sizes.push(2);
    }
    let sd = region_sd(&prepared);
    let sigma = if sd > 0.0 { sd } else { 1.0 };
    let scales: Vec<Array2<f64>> = sizes
        .iter()
        .map(|&s| enhance_scale(&prepared, s, sigma))
        .collect::<Result<_>>()?;
    let mut merged = scales[0].clone();
    for other in &scales[1..] {
        ndarray::Zip::from(&mut merged).and(other).for_each(|a, &b| *a = a.min(b));
    }
    let mut values = Array2::from_elem(image.dim(), f64::NAN);
    let (r0, c0) = prepared.origin;
    let (h, w) = merged.dim();
    values.slice_mut(s![r0..r0 + h, c0..c0 + w]).assign(&merged);
    Ok(EnhancedChoroid {
        values,
        mean_thickness: t,
        patch_sizes: sizes,
    })
}

/// Labels pixels whose value falls in the darkest clusters. When fewer clusters than
/// requested exist, the labelled share is scaled to the realised count.
fn label_darkest(values: &[u8], clusters: usize, keep: usize) -> Result<Vec<bool>> {
    let cut = median_cut(values, clusters)?;
    let realised = cut.len();
    let keep = if realised < clusters {
        ((keep as f64 * realised as f64 / clusters as f64).round() as usize).max(1)
    } else {
        keep
    };
    Ok(values.iter().map(|&v| cut.index_of(v) < keep).collect())
}

fn upper_rows(region: &RegionMask, upper: Option<&BoundaryTrace>) -> Vec<Option<i64>> {
    region
        .column_extents()
        .into_iter()
        .enumerate()
        .map(|(c, ext)| {
            let (first, _) = ext?;
            Some(match upper.and_then(|t| t.row_at(c)) {
                Some(row) => row.round() as i64,
                None => first as i64,
            })
        })
        .collect()
}

/// Vessel mask from enhanced intensities: the choriocapillaris band plus the darkest
/// clusters within two depth bands below the upper boundary and the whole region.
pub fn label_vessels(
    enhanced: &EnhancedChoroid,
    region: &RegionMask,
    upper: Option<&BoundaryTrace>,
    axial_scale: f64,
    config: &MmcqConfig,
) -> Result<VesselMask> {
    let tops = upper_rows(region, upper);
    let quantised = enhanced.values.mapv(|v| v.round().clamp(0.0, 255.0) as u8);
    let mut out = Array2::from_elem(region.pixels.dim(), false);

    let cc = config.choriocapillaris_rows(axial_scale) as i64;
    let t = enhanced.mean_thickness;
    let mut depths: Vec<Option<i64>> = config
        .depth_fractions
        .iter()
        .map(|f| Some((f * t).round() as i64))
        .collect();
    depths.push(None);

    for ((r, c), &inside) in region.pixels.indexed_iter() {
        if let (true, Some(top)) = (inside, tops[c]) {
            let d = r as i64 - top;
            if d >= 0 && d < cc {
                out[[r, c]] = true;
            }
        }
    }
    for depth in depths {
        let members: Vec<(usize, usize)> = region
            .pixels
            .indexed_iter()
            .filter(|&((r, c), &inside)| {
                inside
                    && match (depth, tops[c]) {
                        (None, _) => true,
                        (Some(d), Some(top)) => {
                            let off = r as i64 - top;
                            off >= 0 && off < d
                        }
                        (Some(_), None) => false,
                    }
            })
            .map(|(p, _)| p)
            .collect();
        if members.is_empty() {
            continue;
        }
        let values: Vec<u8> = members.iter().map(|&p| quantised[p]).collect();
        let labels = label_darkest(&values, config.clusters, config.vessel_clusters)?;
        for (p, l) in members.into_iter().zip(labels) {
            if l {
                out[p] = true;
            }
        }
    }
    VesselMask::clipped(out, region)
}

fn segment_pixels(
    pixels: &Array2<u8>,
    axial_scale: f64,
    region: &RegionMask,
    upper: Option<&BoundaryTrace>,
    config: &MmcqConfig,
) -> Result<VesselMask> {
    let enhanced = enhance_choroid(pixels, region, config)?;
    label_vessels(&enhanced, region, upper, axial_scale, config)
}

/// MMCQ vessel segmentation. Depth bands hang from `upper` where it is defined and
/// from the top of the region elsewhere.
pub fn segment_vessels(
    scan: &BScan,
    region: &RegionMask,
    upper: Option<&BoundaryTrace>,
    config: &MmcqConfig,
) -> Result<VesselMask> {
    segment_pixels(&scan.pixels, scan.axial_scale, region, upper, config)
}

/// The 25 gamma × contrast variants of an image. Gamma fixes the mean normalised
/// brightness at each target; contrast stretches about the resulting mean.
pub fn brightness_contrast_variants(image: &Array2<u8>) -> Vec<Array2<u8>> {
    let n = image.len() as f64;
    let mean = image.iter().map(|&v| v as f64 / 255.0).sum::<f64>() / n;
    let mut out = Vec::with_capacity(GAMMA_TARGETS.len() * CONTRAST_FACTORS.len());
    for target in GAMMA_TARGETS {
        let gamma = if mean > 0.0 && mean < 1.0 {
            target.ln() / mean.ln()
        } else {
            1.0
        };
        let lut: [f64; 256] = std::array::from_fn(|v| 255.0 * (v as f64 / 255.0).powf(gamma));
        let shifted = image.mapv(|v| lut[v as usize]);
        let mu = shifted.iter().sum::<f64>() / n;
        for c in CONTRAST_FACTORS {
            out.push(shifted.mapv(|x| (mu + c * (x - mu)).round().clamp(0.0, 255.0) as u8));
        }
    }
    out
}

/// Pixel is vessel when at least 15 of the 25 variant segmentations agree.
pub fn majority_vote_vessels(
    scan: &BScan,
    region: &RegionMask,
    upper: Option<&BoundaryTrace>,
    config: &MmcqConfig,
) -> Result<VesselMask> {
    let variants = brightness_contrast_variants(&scan.pixels);
    let masks: Vec<VesselMask> = variants
        .par_iter()
        .map(|img| segment_pixels(img, scan.axial_scale, region, upper, config))
        .collect::<Result<_>>()?;
    Ok(vote(&masks, VOTE_THRESHOLD))
}

pub fn vote(masks: &[VesselMask], threshold: usize) -> VesselMask {
    let dim = masks[0].pixels.dim();
    let pixels = Array2::from_shape_fn(dim, |p| masks.iter().filter(|m| m.pixels[p]).count() >= threshold);
    VesselMask { pixels }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VesselMethod {
    #[default]
    Mmcq,
    /// MMCQ majority vote over brightness/contrast variants.
    MmcqVote,
    Niblack,
}

impl std::str::FromStr for VesselMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mmcq" => Ok(VesselMethod::Mmcq),
            "mmcq_vote" | "vote" => Ok(VesselMethod::MmcqVote),
            "niblack" => Ok(VesselMethod::Niblack),
            other => Err(Error::invalid(format!("unknown vessel method '{other}'"))),
        }
    }
}

/// Vessel settings shared by the command line and the HTTP service.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VesselSettings {
    pub method: VesselMethod,
    pub mmcq: MmcqConfig,
    pub niblack: NiblackParams,
}

pub fn segment_with(
    scan: &BScan,
    region: &RegionMask,
    upper: Option<&BoundaryTrace>,
    settings: &VesselSettings,
) -> Result<VesselMask> {
    match settings.method {
        VesselMethod::Mmcq => segment_vessels(scan, region, upper, &settings.mmcq),
        VesselMethod::MmcqVote => majority_vote_vessels(scan, region, upper, &settings.mmcq),
        VesselMethod::Niblack => niblack_segment(&scan.pixels, region, &settings.niblack),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_sizes_for_eighty() {
        assert_eq!(MmcqConfig::default().patch_sizes(80.0), vec![8, 16, 40]);
        assert_eq!(MmcqConfig::default().patch_sizes(12.0), vec![2, 6]);
    }

    #[test]
    fn choriocapillaris_three_rows() {
        assert_eq!(MmcqConfig::default().choriocapillaris_rows(3.87), 3);
    }

    #[test]
    fn segments_handle_remainders() {
        assert_eq!(tile_segments(20, 8), vec![(0, 8), (8, 16), (16, 20)]);
        assert_eq!(tile_segments(19, 8), vec![(0, 8), (8, 19)]);
        assert_eq!(tile_segments(5, 8), vec![(0, 5)]);
    }

    #[test]
    fn validate_rejects_bad_counts() {
        let cfg = MmcqConfig {
            vessel_clusters: 21,
            ..MmcqConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn uniform_region_is_all_vessel() {
        let img = Array2::from_elem((60, 60), 50u8);
        let region = RegionMask::external(Array2::from_shape_fn((60, 60), |(r, _)| (20..40).contains(&r)));
        let scan = BScan::new(img, 3.87, 11.47).unwrap();
        let v = segment_vessels(&scan, &region, None, &MmcqConfig::default()).unwrap();
        assert_eq!(v.pixels, region.pixels);
    }

    #[test]
    fn merge_takes_minimum_over_scales() {
        let img = Array2::from_shape_fn((80, 120), |(r, c)| ((r * 31 + c * 17) % 97 + 60) as u8);
        let region = RegionMask::external(Array2::from_shape_fn((80, 120), |(r, _)| (10..70).contains(&r)));
        let cfg = MmcqConfig::default();
        let out = enhance_choroid(&img, &region, &cfg).unwrap();
        let prepared = prepare_choroid(&img, &region, &cfg).unwrap();
        let sigma = region_sd(&prepared);
        let scales: Vec<_> = out
            .patch_sizes
            .iter()
            .map(|&s| enhance_scale(&prepared, s, sigma).unwrap())
            .collect();
        for r in 10..70 {
            for c in 0..120 {
                let want = scales.iter().map(|e| e[[r - 10, c]]).fold(f64::INFINITY, f64::min);
                assert_eq!(out.values[[r, c]], want);
            }
        }
        assert!(out.values[[5, 5]].is_nan());
    }

    #[test]
    fn vote_threshold() {
        let on = VesselMask {
            pixels: Array2::from_elem((1, 1), true),
        };
        let off = VesselMask {
            pixels: Array2::from_elem((1, 1), false),
        };
        let mut masks = vec![on.clone(); 14];
        masks.extend(vec![off; 11]);
        assert!(!vote(&masks, VOTE_THRESHOLD).pixels[[0, 0]]);
        masks[20] = on;
        assert!(vote(&masks, VOTE_THRESHOLD).pixels[[0, 0]]);
    }

    #[test]
    fn variants_count_and_range() {
        let img = Array2::from_shape_fn((10, 10), |(r, c)| (r * 20 + c) as u8);
        let v = brightness_contrast_variants(&img);
        assert_eq!(v.len(), 25);
        let mean = |a: &Array2<u8>| a.iter().map(|&x| x as f64).sum::<f64>() / 100.0 / 255.0;
        assert!(mean(&v[1]) < mean(&v[21]));
        assert!((mean(&v[1]) - 0.2).abs() < 0.05, "{}", mean(&v[1]));
    }
}
