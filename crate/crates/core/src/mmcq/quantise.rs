//! Histogram median-cut quantisation and per-patch weighted equalisation.

use std::f64::consts::PI;

use crate::error::{Error, Result};

pub type Histogram = [u64; 256];

pub fn histogram(values: impl IntoIterator<Item = u8>) -> Histogram {
    let mut h = [0u64; 256];
    for v in values {
        h[v as usize] += 1;
    }
    h
}

/// One median-cut cluster: occupied intensity range, pixel count and lower median.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cluster {
    pub lo: u8,
    pub hi: u8,
    pub count: u64,
    pub median: u8,
}

/// Clusters ordered by intensity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MedianCut {
    pub clusters: Vec<Cluster>,
}

impl MedianCut {
    /// Index of the cluster covering intensity `v`: the last cluster starting at or
    /// below `v`, or the first cluster.
    pub fn index_of(&self, v: u8) -> usize {
        self.clusters.iter().rposition(|c| c.lo <= v).unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

fn occupied_range(h: &Histogram, lo: usize, hi: usize) -> Option<(usize, usize)> {
    let first = (lo..=hi).find(|&i| h[i] > 0)?;
    let last = (lo..=hi).rev().find(|&i| h[i] > 0)?;
    Some((first, last))
}

/// Intensity at 0-based rank `k` within `[lo, hi]`.
fn value_at_rank(h: &Histogram, lo: usize, hi: usize, k: u64) -> usize {
    let mut acc = 0;
    for (i, &count) in h.iter().enumerate().take(hi + 1).skip(lo) {
        acc += count;
        if acc > k {
            return i;
        }
    }
    hi
}

fn make_cluster(h: &Histogram, lo: usize, hi: usize) -> Option<Cluster> {
    let (lo, hi) = occupied_range(h, lo, hi)?;
    let count: u64 = h[lo..=hi].iter().sum();
    Some(Cluster {
        lo: lo as u8,
        hi: hi as u8,
        count,
        median: value_at_rank(h, lo, hi, (count - 1) / 2) as u8,
    })
}

/// Recursively splits the histogram at cluster medians until `k` clusters exist or
/// no cluster holds two distinct values. The widest cluster is split first (ties:
/// more pixels, then lower intensity).
pub fn median_cut_histogram(h: &Histogram, k: usize) -> Result<MedianCut> {
    if k < 1 {
        return Err(Error::invalid("median cut needs at least one cluster"));
    }
    let Some(root) = make_cluster(h, 0, 255) else {
        return Err(Error::invalid("median cut needs at least one value"));
    };
    let mut clusters = vec![root];
    while clusters.len() < k {
        let pick = clusters
            .iter()
            .enumerate()
            .filter(|(_, c)| c.hi > c.lo)
            .max_by(|(_, a), (_, b)| {
                (a.hi - a.lo)
                    .cmp(&(b.hi - b.lo))
                    .then(a.count.cmp(&b.count))
                    .then(b.lo.cmp(&a.lo))
            })
            .map(|(i, _)| i);
        let Some(i) = pick else { break };
        let c = clusters[i];
        let (lo, hi, m) = (c.lo as usize, c.hi as usize, c.median as usize);
        let split = if m < hi { m } else { m - 1 };
        let left = make_cluster(h, lo, split).expect("lower half holds the minimum");
        let right = make_cluster(h, split + 1, hi).expect("upper half holds the maximum");
        clusters.splice(i..=i, [left, right]);
    }
    Ok(MedianCut { clusters })
}

pub fn median_cut(values: &[u8], k: usize) -> Result<MedianCut> {
    median_cut_histogram(&histogram(values.iter().copied()), k)
}

/// Nearest-rank percentile of a histogram (`p` in [0, 100]).
pub fn percentile(h: &Histogram, p: f64) -> Option<u8> {
    let n: u64 = h.iter().sum();
    if n == 0 {
        return None;
    }
    let rank = ((p / 100.0 * n as f64).ceil() as u64).clamp(1, n);
    Some(value_at_rank(h, 0, 255, rank - 1) as u8)
}

const INTERVAL_WIDTH: usize = 51;
pub const MIN_PATCH_LEVELS: usize = 2;
pub const MAX_PATCH_LEVELS: usize = 5;

/// Number of 51-level intensity intervals occupied after trimming the histogram to
/// its 0.5–99.5 percentile range, clamped to [2, 5].
pub fn estimate_levels(h: &Histogram) -> usize {
    let (Some(lo), Some(hi)) = (percentile(h, 0.5), percentile(h, 99.5)) else {
        return MIN_PATCH_LEVELS;
    };
    let mut occupied = [false; 5];
    for v in lo as usize..=hi as usize {
        if h[v] > 0 {
            occupied[(v / INTERVAL_WIDTH).min(4)] = true;
        }
    }
    occupied
        .iter()
        .filter(|&&o| o)
        .count()
        .clamp(MIN_PATCH_LEVELS, MAX_PATCH_LEVELS)
}

/// Blend weight between equalised and quantised intensities from the ratio of patch
/// to image standard deviation.
pub fn dispersion_weight(ratio: f64) -> f64 {
    1.0 / (1.0 + (-2.0 * PI * (ratio - 0.5)).exp())
}

fn population_sd(h: &Histogram) -> f64 {
    let n: u64 = h.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let mean = h.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum::<f64>() / n as f64;
    let var = h
        .iter()
        .enumerate()
        .map(|(i, &c)| c as f64 * (i as f64 - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    var.sqrt()
}

/// Enhanced value per intensity for one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantisedPatch {
    pub cut: MedianCut,
    pub weight: f64,
    /// Enhanced value of each cluster.
    pub enhanced: Vec<f64>,
}

impl QuantisedPatch {
    pub fn levels(&self) -> Vec<u8> {
        self.cut.clusters.iter().map(|c| c.median).collect()
    }

    pub fn quantise(&self, v: u8) -> u8 {
        self.cut.clusters[self.cut.index_of(v)].median
    }

    pub fn map(&self, v: u8) -> f64 {
        self.enhanced[self.cut.index_of(v)]
    }

    pub fn lut(&self) -> [f64; 256] {
        std::array::from_fn(|v| self.map(v as u8))
    }
}

/// Quantises a patch to its estimated number of levels, equalises the quantised
/// histogram and blends the two by the dispersion weight.
pub fn enhance_patch_histogram(h: &Histogram, image_sigma: f64) -> Result<QuantisedPatch> {
    if !(image_sigma > 0.0) {
        return Err(Error::ZeroVariance("image"));
    }
    let levels = estimate_levels(h);
    let cut = median_cut_histogram(h, levels)?;
    let weight = dispersion_weight(population_sd(h) / image_sigma);
    let n: u64 = cut.clusters.iter().map(|c| c.count).sum();
    let cdf_min = cut.clusters[0].count;
    let mut cdf = 0;
    let enhanced = cut
        .clusters
        .iter()
        .map(|c| {
            cdf += c.count;
            let q = c.median as f64;
            let equalised = if n > cdf_min {
                (cdf - cdf_min) as f64 / (n - cdf_min) as f64 * 255.0
            } else {
                q
            };
            weight * equalised + (1.0 - weight) * q
        })
        .collect();
    Ok(QuantisedPatch { cut, weight, enhanced })
}

pub fn enhance_patch(values: &[u8], image_sigma: f64) -> Result<QuantisedPatch> {
    enhance_patch_histogram(&histogram(values.iter().copied()), image_sigma)
}
