//! Median filtering, convolution and rectangular grayscale morphology.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Reflect-101 index (`dcb|abcd|cba`).
pub fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

fn check_odd(window: usize, name: &str) -> Result<()> {
    if window < 1 || window % 2 == 0 {
        return Err(Error::invalid(format!("{name} must be odd, got {window}")));
    }
    Ok(())
}

/// Median over a square window; borders replicate the edge pixels.
pub fn median_filter(image: &Array2<u8>, window: usize) -> Result<Array2<u8>> {
    check_odd(window, "median window")?;
    if window < 3 {
        return Err(Error::invalid("median window must be at least 3"));
    }
    let (m, n) = image.dim();
    let h = (window / 2) as isize;
    let mut buf = Vec::with_capacity(window * window);
    Ok(Array2::from_shape_fn((m, n), |(r, c)| {
        buf.clear();
        for dr in -h..=h {
            let rr = clamp_index(r as isize + dr, m);
            for dc in -h..=h {
                buf.push(image[[rr, clamp_index(c as isize + dc, n)]]);
            }
        }
        let mid = buf.len() / 2;
        *buf.select_nth_unstable(mid).1
    }))
}

/// Median over the in-mask, in-bounds neighbours of each in-mask pixel (lower median
/// for even counts). Pixels outside the mask are copied through.
pub fn median_filter_masked(
    image: &Array2<u8>,
    mask: &Array2<bool>,
    window: usize,
) -> Result<Array2<u8>> {
    check_odd(window, "median window")?;
    if image.dim() != mask.dim() {
        return Err(Error::ShapeMismatch {
            expected: image.dim(),
            got: mask.dim(),
        });
    }
    let (m, n) = image.dim();
    let h = (window / 2) as isize;
    let mut buf = Vec::with_capacity(window * window);
    Ok(Array2::from_shape_fn((m, n), |(r, c)| {
        if !mask[[r, c]] {
            return image[[r, c]];
        }
        buf.clear();
        for dr in -h..=h {
            let rr = r as isize + dr;
            if rr < 0 || rr >= m as isize {
                continue;
            }
            for dc in -h..=h {
                let cc = c as isize + dc;
                if cc < 0 || cc >= n as isize {
                    continue;
                }
                if mask[[rr as usize, cc as usize]] {
                    buf.push(image[[rr as usize, cc as usize]]);
                }
            }
        }
        let mid = (buf.len() - 1) / 2;
        *buf.select_nth_unstable(mid).1
    }))
}

/// True 2-D convolution (kernel flipped) with reflect-101 borders.
pub fn convolve(image: &Array2<f64>, kernel: &Array2<f64>) -> Result<Array2<f64>> {
    let (kh, kw) = kernel.dim();
    check_odd(kh, "kernel height")?;
    check_odd(kw, "kernel width")?;
    let (m, n) = image.dim();
    let (hr, hc) = ((kh / 2) as isize, (kw / 2) as isize);
    let taps: Vec<(isize, isize, f64)> = kernel
        .indexed_iter()
        .filter(|(_, &w)| w != 0.0)
        .map(|((i, j), &w)| (i as isize - hr, j as isize - hc, w))
        .collect();
    Ok(Array2::from_shape_fn((m, n), |(r, c)| {
        let mut acc = 0.0;
        for &(dr, dc, w) in &taps {
            let rr = reflect101(r as isize - dr, m);
            let cc = reflect101(c as isize - dc, n);
            acc += w * image[[rr, cc]];
        }
        acc
    }))
}

fn extremum_1d(line: &[f64], half: usize, take_min: bool, out: &mut [f64]) {
    let n = line.len();
    for (i, o) in out.iter_mut().enumerate() {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(n - 1);
        let it = line[lo..=hi].iter().copied();
        *o = if take_min {
            it.fold(f64::INFINITY, f64::min)
        } else {
            it.fold(f64::NEG_INFINITY, f64::max)
        };
    }
}

fn rect_extremum(image: &Array2<f64>, rows: usize, cols: usize, take_min: bool) -> Array2<f64> {
    let (m, n) = image.dim();
    let mut tmp = Array2::zeros((m, n));
    let mut out_line = vec![0.0; n];
    for r in 0..m {
        let line: Vec<f64> = image.row(r).to_vec();
        extremum_1d(&line, cols / 2, take_min, &mut out_line);
        tmp.row_mut(r).assign(&ndarray::ArrayView1::from(&out_line));
    }
    let mut out = Array2::zeros((m, n));
    let mut out_col = vec![0.0; m];
    for c in 0..n {
        let line: Vec<f64> = tmp.column(c).to_vec();
        extremum_1d(&line, rows / 2, take_min, &mut out_col);
        out.column_mut(c).assign(&ndarray::ArrayView1::from(&out_col));
    }
    out
}

/// Grayscale erosion with a centred `rows × cols` rectangle; out-of-image
/// neighbours are ignored.
pub fn erode(image: &Array2<f64>, rows: usize, cols: usize) -> Array2<f64> {
    rect_extremum(image, rows, cols, true)
}

pub fn dilate(image: &Array2<f64>, rows: usize, cols: usize) -> Array2<f64> {
    rect_extremum(image, rows, cols, false)
}

pub fn open(image: &Array2<f64>, rows: usize, cols: usize) -> Array2<f64> {
    dilate(&erode(image, rows, cols), rows, cols)
}

/// Rescales to [0, 1]; an identically constant array becomes all zeros.
pub fn normalise_min_max(values: &mut Array2<f64>) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    if !(span > 0.0) {
        values.fill(0.0);
        return;
    }
    values.mapv_inplace(|v| (v - lo) / span);
}
