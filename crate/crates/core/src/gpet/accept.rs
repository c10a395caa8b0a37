//! Thresholded acceptance of high-scoring pixels with per-bin non-maximum suppression.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Pixel coordinate of an observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pixel {
    pub col: usize,
    pub row: usize,
}

impl Pixel {
    pub fn new(col: usize, row: usize) -> Self {
        Pixel { col, row }
    }
}

/// How the acceptance threshold is lowered when no bin can be filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdDecay {
    /// T ← 0.99 T
    #[default]
    Relative,
    /// T ← T − 0.01
    Absolute,
}

impl ThresholdDecay {
    fn step(self, t: f64) -> f64 {
        let next = match self {
            ThresholdDecay::Relative => t * 0.99,
            ThresholdDecay::Absolute => t - 0.01,
        };
        if next < 1e-6 {
            0.0
        } else {
            next
        }
    }
}

/// Column bins of width `delta_x` starting at the first traced column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bins {
    pub c0: usize,
    pub c1: usize,
    pub delta_x: usize,
}

impl Bins {
    pub fn new(c0: usize, c1: usize, delta_x: usize) -> Self {
        Bins { c0, c1, delta_x }
    }

    pub fn count(&self) -> usize {
        (self.c1 - self.c0 + 1).div_ceil(self.delta_x)
    }

    pub fn of(&self, col: usize) -> usize {
        (col - self.c0) / self.delta_x
    }

    pub fn columns(&self, bin: usize) -> std::ops::RangeInclusive<usize> {
        let start = self.c0 + bin * self.delta_x;
        start..=(start + self.delta_x - 1).min(self.c1)
    }
}

/// Higher score wins; ties go to the lower column, then the lower row.
fn better(a: (f64, Pixel), b: (f64, Pixel)) -> bool {
    match a.0.total_cmp(&b.0) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => (a.1.col, a.1.row) < (b.1.col, b.1.row),
    }
}

/// Best eligible pixel (score ≥ 0) in each bin.
pub fn bin_maxima(scores: &Array2<f64>, bins: &Bins) -> Vec<Option<(f64, Pixel)>> {
    let m = scores.nrows();
    (0..bins.count())
        .map(|b| {
            let mut best: Option<(f64, Pixel)> = None;
            for c in bins.columns(b) {
                for r in 0..m {
                    let s = scores[[r, c]];
                    if !(s >= 0.0) {
                        continue;
                    }
                    let cand = (s, Pixel::new(c, r));
                    if best.map_or(true, |b| better(cand, b)) {
                        best = Some(cand);
                    }
                }
            }
            best
        })
        .collect()
}

/// Grows the observation set: lowers the threshold from 1 until some unfilled bin
/// admits a pixel, then keeps the best of old and admitted pixels per bin. Pinned
/// pixels always keep their bins. Scores below zero mark ineligible pixels.
pub fn accept_discard(
    scores: &Array2<f64>,
    prev: &[Pixel],
    bins: &Bins,
    pinned: &[Pixel],
    decay: ThresholdDecay,
) -> Vec<Pixel> {
    let maxima = bin_maxima(scores, bins);
    accept_from_maxima(scores, &maxima, prev, bins, pinned, decay)
}

pub(crate) fn accept_from_maxima(
    scores: &Array2<f64>,
    maxima: &[Option<(f64, Pixel)>],
    prev: &[Pixel],
    bins: &Bins,
    pinned: &[Pixel],
    decay: ThresholdDecay,
) -> Vec<Pixel> {
    let rescore = |p: Pixel| scores.get([p.row, p.col]).copied().unwrap_or(0.0).max(0.0);
    let mut previous: BTreeMap<usize, Pixel> = BTreeMap::new();
    for &p in prev {
        let b = bins.of(p.col);
        let replace = match previous.get(&b) {
            None => true,
            Some(&q) => better((rescore(p), p), (rescore(q), q)),
        };
        if replace {
            previous.insert(b, p);
        }
    }
    let pinned_bins: BTreeMap<usize, Pixel> = pinned.iter().map(|&p| (bins.of(p.col), p)).collect();

    let combine = |t: f64| -> BTreeMap<usize, Pixel> {
        let mut out = BTreeMap::new();
        for b in 0..bins.count() {
            if let Some(&p) = pinned_bins.get(&b) {
                out.insert(b, p);
                continue;
            }
            let mut best: Option<(f64, Pixel)> = previous.get(&b).map(|&p| (rescore(p), p));
            if let Some(cand) = maxima[b] {
                if cand.0 >= t && best.map_or(true, |q| better(cand, q)) {
                    best = Some(cand);
                }
            }
            if let Some((_, p)) = best {
                out.insert(b, p);
            }
        }
        out
    };

    let base = previous.len().max(pinned_bins.len());
    let mut t = 1.0;
    loop {
        let out = combine(t);
        if out.len() > base || t <= 0.0 {
            return out.into_values().collect();
        }
        t = decay.step(t);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ones_picks_first_pixel_per_bin() {
        let scores = Array2::from_elem((5, 25), 1.0);
        let bins = Bins::new(0, 24, 10);
        let out = accept_discard(&scores, &[], &bins, &[], ThresholdDecay::Relative);
        assert_eq!(out, vec![Pixel::new(0, 0), Pixel::new(10, 0), Pixel::new(20, 0)]);
    }

    #[test]
    fn previous_maxima_are_kept() {
        let mut scores = Array2::from_elem((5, 20), 0.1);
        scores[[2, 3]] = 0.9;
        scores[[4, 15]] = 0.8;
        let bins = Bins::new(0, 19, 10);
        let prev = vec![Pixel::new(3, 2), Pixel::new(15, 4)];
        let out = accept_discard(&scores, &prev, &bins, &[], ThresholdDecay::Relative);
        assert_eq!(out, prev);
    }

    #[test]
    fn rescored_previous_pixel_is_replaced() {
        let mut scores = Array2::from_elem((4, 20), 0.0);
        scores[[1, 2]] = 0.2;
        scores[[3, 6]] = 0.7;
        scores[[0, 14]] = 0.5;
        let bins = Bins::new(0, 19, 10);
        let out = accept_discard(&scores, &[Pixel::new(2, 1)], &bins, &[], ThresholdDecay::Relative);
        assert_eq!(out, vec![Pixel::new(6, 3), Pixel::new(14, 0)]);
    }

    #[test]
    fn pinned_pixels_survive() {
        let mut scores = Array2::from_elem((4, 20), 0.0);
        scores[[3, 5]] = 1.0;
        scores[[2, 12]] = 0.3;
        let bins = Bins::new(0, 19, 10);
        let pin = Pixel::new(0, 0);
        let out = accept_discard(&scores, &[pin], &bins, &[pin], ThresholdDecay::Relative);
        assert_eq!(out, vec![pin, Pixel::new(12, 2)]);
    }

    #[test]
    fn zero_scores_still_admitted_eventually() {
        let scores = Array2::from_elem((3, 12), 0.0);
        let bins = Bins::new(0, 11, 4);
        let out = accept_discard(&scores, &[], &bins, &[], ThresholdDecay::Absolute);
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn bin_geometry() {
        let bins = Bins::new(5, 30, 10);
        assert_eq!(bins.count(), 3);
        assert_eq!(bins.columns(2), 25..=30);
        assert_eq!(bins.of(30), 2);
    }
}
