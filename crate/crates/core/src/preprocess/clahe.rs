//! Contrast-limited adaptive histogram equalisation.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Equalisation lookup for one histogram: bins above `clip_limit × count / 256` are
/// clipped, the excess spread evenly over all bins, and the cumulative histogram is
/// stretched so that the lowest occupied level maps to 0 and the top to 255.
pub fn clipped_equalisation_lut(hist: &[f64; 256], clip_limit: f64) -> [f64; 256] {
    let total: f64 = hist.iter().sum();
    let mut lut = [0.0; 256];
    if total <= 0.0 {
        for (v, l) in lut.iter_mut().enumerate() {
            *l = v as f64;
        }
        return lut;
    }
    let limit = clip_limit * total / 256.0;
    let mut clipped = *hist;
    let mut excess = 0.0;
    for h in clipped.iter_mut() {
        if *h > limit {
            excess += *h - limit;
            *h = limit;
        }
    }
    let share = excess / 256.0;
    for h in clipped.iter_mut() {
        *h += share;
    }
    let mut cdf = [0.0; 256];
    let mut acc = 0.0;
    for (c, h) in cdf.iter_mut().zip(clipped.iter()) {
        acc += h;
        *c = acc;
    }
    let cdf_min = clipped
        .iter()
        .zip(cdf.iter())
        .find(|(h, _)| **h > 0.0)
        .map(|(_, c)| *c)
        .unwrap_or(0.0);
    let denom = acc - cdf_min;
    if !(denom > 1e-12 * acc) {
        for (v, l) in lut.iter_mut().enumerate() {
            *l = v as f64;
        }
        return lut;
    }
    for (l, c) in lut.iter_mut().zip(cdf.iter()) {
        *l = ((c - cdf_min) / denom * 255.0).clamp(0.0, 255.0);
    }
    lut
}

fn tile_bounds(len: usize, tiles: usize) -> Vec<(usize, usize)> {
    (0..tiles)
        .map(|i| (i * len / tiles, (i + 1) * len / tiles))
        .collect()
}

/// Neighbouring tile indices and the weight of the second, for a coordinate.
fn interp_axis(pos: f64, centres: &[f64]) -> (usize, usize, f64) {
    let last = centres.len() - 1;
    if pos <= centres[0] {
        return (0, 0, 0.0);
    }
    if pos >= centres[last] {
        return (last, last, 0.0);
    }
    let i = centres.partition_point(|&c| c <= pos) - 1;
    let t = (pos - centres[i]) / (centres[i + 1] - centres[i]);
    (i, i + 1, t)
}

pub fn clahe(image: &Array2<u8>, tiles: usize, clip_limit: f64) -> Result<Array2<u8>> {
    clahe_masked(image, None, tiles, clip_limit)
}

/// CLAHE where only `mask` pixels contribute to tile histograms and only they are
/// remapped. Tiles without mask pixels borrow from their neighbours.
pub fn clahe_masked(
    image: &Array2<u8>,
    mask: Option<&Array2<bool>>,
    tiles: usize,
    clip_limit: f64,
) -> Result<Array2<u8>> {
    if tiles < 1 {
        return Err(Error::invalid("tile grid must be at least 1"));
    }
    if !(clip_limit > 0.0) {
        return Err(Error::invalid("clip limit must be positive"));
    }
    let (m, n) = image.dim();
    if m < tiles || n < tiles {
        return Err(Error::invalid(format!(
            "image {m}x{n} is smaller than the {tiles}x{tiles} tile grid"
        )));
    }
    if let Some(mk) = mask {
        if mk.dim() != image.dim() {
            return Err(Error::ShapeMismatch {
                expected: image.dim(),
                got: mk.dim(),
            });
        }
    }
    let rows = tile_bounds(m, tiles);
    let cols = tile_bounds(n, tiles);
    let centre = |&(a, b): &(usize, usize)| (a + b - 1) as f64 / 2.0;
    let row_centres: Vec<f64> = rows.iter().map(centre).collect();
    let col_centres: Vec<f64> = cols.iter().map(centre).collect();

    let mut luts: Vec<Option<[f64; 256]>> = Vec::with_capacity(tiles * tiles);
    for &(r0, r1) in &rows {
        for &(c0, c1) in &cols {
            let mut hist = [0.0; 256];
            let mut count = 0usize;
            for r in r0..r1 {
                for c in c0..c1 {
                    if mask.map_or(true, |mk| mk[[r, c]]) {
                        hist[image[[r, c]] as usize] += 1.0;
                        count += 1;
                    }
                }
            }
            luts.push((count > 0).then(|| clipped_equalisation_lut(&hist, clip_limit)));
        }
    }

    let mut out = image.clone();
    for r in 0..m {
        let (ty0, ty1, fy) = interp_axis(r as f64, &row_centres);
        for c in 0..n {
            if !mask.map_or(true, |mk| mk[[r, c]]) {
                continue;
            }
            let (tx0, tx1, fx) = interp_axis(c as f64, &col_centres);
            let v = image[[r, c]] as usize;
            let corners = [
                (ty0, tx0, (1.0 - fy) * (1.0 - fx)),
                (ty0, tx1, (1.0 - fy) * fx),
                (ty1, tx0, fy * (1.0 - fx)),
                (ty1, tx1, fy * fx),
            ];
            let (mut acc, mut wsum) = (0.0, 0.0);
            for (ty, tx, w) in corners {
                if let Some(lut) = &luts[ty * tiles + tx] {
                    acc += w * lut[v];
                    wsum += w;
                }
            }
            let mapped = if wsum > 1e-12 {
                acc / wsum
            } else {
                // Own tile may be empty only when all four corners are; fall back to
                // the nearest populated tile.
                nearest_lut(&luts, tiles, ty0, tx0).map_or(v as f64, |l| l[v])
            };
            out[[r, c]] = mapped.round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(out)
}

fn nearest_lut(luts: &[Option<[f64; 256]>], tiles: usize, ty: usize, tx: usize) -> Option<&[f64; 256]> {
    let mut best: Option<(usize, &[f64; 256])> = None;
    for (i, l) in luts.iter().enumerate() {
        if let Some(l) = l {
            let d = (i / tiles).abs_diff(ty) + (i % tiles).abs_diff(tx);
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, l));
            }
        }
    }
    best.map(|(_, l)| l)
}
