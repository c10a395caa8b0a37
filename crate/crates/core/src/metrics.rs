//! Agreement statistics between measurement sets and between segmentation masks.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-eye measurements from two methods (or two repeats).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSeries {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl PairedSeries {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let s = PairedSeries { x, y };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.len() != self.y.len() {
            return Err(Error::invalid(format!(
                "paired series lengths differ: {} vs {}",
                self.x.len(),
                self.y.len()
            )));
        }
        if self.x.is_empty() {
            return Err(Error::invalid("paired series is empty"));
        }
        if self.x.iter().chain(&self.y).any(|v| !v.is_finite()) {
            return Err(Error::invalid("paired series contains non-finite values"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n − 1 denominator).
pub fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let mu = mean(v);
    (v.iter().map(|a| (a - mu).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn correlation(x: &[f64], y: &[f64], what: &'static str) -> Result<f64> {
    if x.len() < 2 {
        return Err(Error::invalid("correlation needs at least two pairs"));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance(what));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn pearson(s: &PairedSeries) -> Result<f64> {
    s.validate()?;
    correlation(&s.x, &s.y, "pearson correlation")
}

/// 1-based ranks; ties share their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(s: &PairedSeries) -> Result<f64> {
    s.validate()?;
    correlation(&average_ranks(&s.x), &average_ranks(&s.y), "spearman correlation")
}

/// Mean of y − x.
pub fn mean_difference(s: &PairedSeries) -> Result<f64> {
    s.validate()?;
    Ok(s.x.iter().zip(&s.y).map(|(a, b)| b - a).sum::<f64>() / s.len() as f64)
}

pub fn mae(s: &PairedSeries) -> Result<f64> {
    s.validate()?;
    Ok(s.x.iter().zip(&s.y).map(|(a, b)| (b - a).abs()).sum::<f64>() / s.len() as f64)
}

/// Per-eye within-pair standard deviation relative to the population spread of x.
pub fn measurement_noise(s: &PairedSeries) -> Result<Vec<f64>> {
    s.validate()?;
    if s.len() < 2 {
        return Err(Error::invalid("measurement noise needs at least two eyes"));
    }
    let spread = sample_sd(&s.x);
    if spread == 0.0 {
        return Err(Error::ZeroVariance("measurement noise"));
    }
    Ok(s
        .x
        .iter()
        .zip(&s.y)
        .map(|(a, b)| (a - b).abs() / std::f64::consts::SQRT_2 / spread)
        .collect())
}

/// Averages each eye's repeated measurements before pairing.
pub fn pair_repeated(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<PairedSeries> {
    let reduce = |groups: &[Vec<f64>]| -> Result<Vec<f64>> {
        groups
            .iter()
            .map(|g| {
                if g.is_empty() {
                    Err(Error::invalid("an eye has no repeated measurements"))
                } else {
                    Ok(mean(g))
                }
            })
            .collect()
    };
    PairedSeries::new(reduce(x)?, reduce(y)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskAgreement {
    pub dice: f64,
    pub precision: f64,
    pub recall: f64,
    /// Both masks were empty; dice is reported as 1.
    pub both_empty: bool,
}

pub fn mask_agreement(pred: &Array2<bool>, truth: &Array2<bool>) -> Result<MaskAgreement> {
    if pred.dim() != truth.dim() {
        return Err(Error::ShapeMismatch {
            expected: truth.dim(),
            got: pred.dim(),
        });
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    if tp + fp + fn_ == 0 {
        return Ok(MaskAgreement {
            dice: 1.0,
            precision: 1.0,
            recall: 1.0,
            both_empty: true,
        });
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(MaskAgreement {
        dice: ratio(2 * tp, 2 * tp + fp + fn_),
        precision,
        recall,
        both_empty: false,
    })
}

/// Area under the ROC curve from the Mann-Whitney statistic with averaged ties.
pub fn auc(scores: &Array2<f64>, truth: &Array2<bool>) -> Result<f64> {
    if scores.dim() != truth.dim() {
        return Err(Error::ShapeMismatch {
            expected: truth.dim(),
            got: scores.dim(),
        });
    }
    let values: Vec<f64> = scores.iter().copied().collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    let positives = truth.iter().filter(|&&t| t).count();
    let negatives = truth.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass);
    }
    let ranks = average_ranks(&values);
    let rank_sum: f64 = ranks.iter().zip(truth).filter(|(_, &t)| t).map(|(r, _)| r).sum();
    let (p, n) = (positives as f64, negatives as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}
