use approx::assert_abs_diff_eq;
use choroid_core::gp::kernel::{CovarianceSpec, KernelKind};
use choroid_core::gp::{posterior, posterior_mean_var, GpModel};
use choroid_core::gpet::{accept_discard, Bins, Pixel, ThresholdDecay};
use choroid_core::maps::{build_map, etdrs_field, etdrs_means, peripapillary_means, EnFaceMap, MapOptions, ScanProfile};
use choroid_core::measure::{measure_roi, perpendicular_thickness, RoiSpec, DEFAULT_TANGENT_OFFSET};
use choroid_core::metrics::{mask_agreement, measurement_noise, pearson, sample_sd, spearman, PairedSeries};
use choroid_core::mmcq::quantise::{dispersion_weight, enhance_patch};
use choroid_core::preprocess::clahe::clahe;
use choroid_core::preprocess::edges::{edge_map, EdgeTarget};
use choroid_core::{region_from_traces, BScan, BoundaryKind, BoundaryTrace, Eye, PixelPoint, Scales, VesselMask};
use ndarray::Array2;
use proptest::collection::vec;
use proptest::prelude::*;

fn image(rows: usize, cols: usize) -> impl Strategy<Value = Array2<u8>> {
    vec(any::<u8>(), rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn kernel_kind() -> impl Strategy<Value = KernelKind> {
    prop_oneof![Just(KernelKind::Rbf), Just(KernelKind::Matern32), Just(KernelKind::Matern52)]
}

/// Kolmogorov distance between the empirical CDF of `img` and the uniform CDF on 0..=255.
fn ks_to_uniform(img: &Array2<u8>) -> f64 {
    let mut hist = [0usize; 256];
    for &v in img {
        hist[v as usize] += 1;
    }
    let n = img.len() as f64;
    let mut cum = 0usize;
    let mut worst: f64 = 0.0;
    for (v, &h) in hist.iter().enumerate() {
        cum += h;
        worst = worst.max((cum as f64 / n - (v + 1) as f64 / 256.0).abs());
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn region_rows_reproduce_rounded_traces(
        start in 0.0f64..40.0,
        steps in vec(-1.5f64..1.5, 30),
        gaps in vec(0.0f64..20.0, 30),
    ) {
        let upper_rows: Vec<f64> = steps.iter().scan(start, |r, d| { *r = (*r + d).clamp(0.0, 40.0); Some(*r) }).collect();
        let lower_rows: Vec<f64> = upper_rows.iter().zip(&gaps).map(|(u, g)| u + g).collect();
        let upper = BoundaryTrace::exact(BoundaryKind::RpeChoroid, 5, upper_rows.clone());
        let lower = BoundaryTrace::exact(BoundaryKind::ChoroidSclera, 5, lower_rows.clone());
        let region = region_from_traces(&upper, &lower, (80, 40)).unwrap();
        let extents = region.column_extents();
        for (i, (u, l)) in upper_rows.iter().zip(&lower_rows).enumerate() {
            prop_assert_eq!(extents[i + 5], Some((u.round() as usize, l.round() as usize)));
        }
        prop_assert!(extents[..5].iter().chain(&extents[35..]).all(Option::is_none));
    }

    #[test]
    fn micron_conversion_inverts(col in -1e4f64..1e4, row in -1e4f64..1e4, ax in 0.1f64..50.0, lat in 0.1f64..50.0) {
        let s = Scales { axial: ax, lateral: lat };
        let (x, y) = s.to_microns(PixelPoint::new(col, row));
        let back = s.to_pixels(x, y);
        prop_assert!((back.col - col).abs() <= 1e-9 * col.abs().max(1.0));
        prop_assert!((back.row - row).abs() <= 1e-9 * row.abs().max(1.0));
    }

    #[test]
    fn edge_maps_lie_in_unit_interval(img in image(24, 24), lower in any::<bool>()) {
        let target = if lower { EdgeTarget::Lower } else { EdgeTarget::Upper };
        let g = edge_map(&img, target).unwrap();
        let max = g.values.iter().cloned().fold(0.0, f64::max);
        prop_assert!(g.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!(max == 0.0 || max == 1.0);
    }

    #[test]
    fn single_tile_clahe_flattens_cdf(lo in 0u8..100, span in 20u8..120, img in image(32, 32)) {
        let narrowed = img.mapv(|v| lo + (v as u16 * span as u16 / 255) as u8);
        let out = clahe(&narrowed, 1, 2.0).unwrap();
        prop_assert!(ks_to_uniform(&out) <= ks_to_uniform(&narrowed) + 1e-12);
    }

    #[test]
    fn gram_is_positive_semidefinite(kind in kernel_kind(), xs in vec(-50.0f64..50.0, 2..20), sf in 0.1f64..20.0, sl in 0.5f64..50.0) {
        let k = CovarianceSpec::new(kind, sf, sl).gram(&xs);
        prop_assert!((k.clone() - k.transpose()).amax() < 1e-12);
        let eig = k.clone().symmetric_eigen();
        prop_assert!(eig.eigenvalues.min() >= -1e-8 * k.trace());
    }

    #[test]
    fn posterior_variance_bounded_by_prior(
        kind in kernel_kind(),
        obs in vec((0.0f64..100.0, -20.0f64..20.0), 1..8),
        tests in vec(0.0f64..100.0, 1..10),
        noise in 0.1f64..3.0,
    ) {
        let cov = CovarianceSpec::new(kind, 5.0, 15.0);
        let model = GpModel::new(cov, noise).with_observations(obs).with_test_inputs(tests);
        let (_, var) = posterior_mean_var(&model).unwrap();
        prop_assert!(var.iter().all(|&v| v <= 25.0 + 1e-8));
    }

    #[test]
    fn noiseless_posterior_interpolates(kind in kernel_kind(), ys in vec(-20.0f64..20.0, 2..8)) {
        let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64 * 12.0).collect();
        let cov = CovarianceSpec::new(kind, 10.0, 20.0);
        let model = GpModel::new(cov, 0.0)
            .with_observations(xs.iter().copied().zip(ys.iter().copied()).collect())
            .with_test_inputs(xs.clone());
        let post = posterior(&model).unwrap();
        for (m, y) in post.mean.iter().zip(&ys) {
            prop_assert!((m - y).abs() < 1e-6);
        }
    }

    #[test]
    fn accepted_set_grows_with_one_pixel_per_bin(
        scores in vec(0.01f64..1.0, 20 * 60),
        filled in vec(any::<bool>(), 6),
    ) {
        let scores = Array2::from_shape_vec((20, 60), scores).unwrap();
        let bins = Bins::new(0, 59, 10);
        let pinned = [Pixel::new(0, 5), Pixel::new(59, 5)];
        let mut prev = pinned.to_vec();
        for (b, &f) in filled.iter().enumerate() {
            if f && b > 0 && b < 5 {
                prev.push(Pixel::new(b * 10 + 3, 7));
            }
        }
        let next = accept_discard(&scores, &prev, &bins, &pinned, ThresholdDecay::Relative);
        let mut seen = std::collections::HashSet::new();
        prop_assert!(next.iter().all(|p| seen.insert(bins.of(p.col))));
        prop_assert!(pinned.iter().all(|p| next.contains(p)));
        if prev.len() < bins.count() {
            prop_assert!(next.len() > prev.len());
        }
    }

    #[test]
    fn quantised_mapping_is_monotone(values in vec(any::<u8>(), 50..400), sigma in 1.0f64..80.0) {
        prop_assume!(values.iter().any(|&v| v != values[0]));
        let patch = enhance_patch(&values, sigma).unwrap();
        let lut = patch.lut();
        prop_assert!(lut.windows(2).all(|w| w[0] <= w[1] + 1e-12));
    }

    #[test]
    fn dispersion_weight_symmetric_and_increasing(a in 0.0f64..3.0, b in 0.0f64..3.0) {
        prop_assert!((dispersion_weight(a) + dispersion_weight(1.0 - a) - 1.0).abs() < 1e-12);
        if a < b {
            prop_assert!(dispersion_weight(a) < dispersion_weight(b));
        }
    }

    #[test]
    fn dice_is_harmonic_mean(a in vec(any::<bool>(), 64), b in vec(any::<bool>(), 64)) {
        let pred = Array2::from_shape_vec((8, 8), a).unwrap();
        let truth = Array2::from_shape_vec((8, 8), b).unwrap();
        let m = mask_agreement(&pred, &truth).unwrap();
        if m.precision + m.recall > 0.0 {
            let h = 2.0 * m.precision * m.recall / (m.precision + m.recall);
            prop_assert!((m.dice - h).abs() < 1e-12);
        } else {
            prop_assert_eq!(m.dice, 0.0);
        }
    }

    #[test]
    fn correlations_survive_increasing_transforms(
        pairs in vec((-100.0f64..100.0, -100.0f64..100.0), 3..30),
        scale in 0.1f64..10.0,
        shift in -50.0f64..50.0,
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        prop_assume!(sample_sd(&x) > 1e-6 && sample_sd(&y) > 1e-6);
        let base = PairedSeries::new(x.clone(), y.clone()).unwrap();
        let affine = PairedSeries::new(
            x.iter().map(|v| v * scale + shift).collect(),
            y.iter().map(|v| v * scale - shift).collect(),
        ).unwrap();
        let monotone = PairedSeries::new(x.iter().map(|v| v.powi(3)).collect(), y.iter().map(|v| (v / 50.0).exp()).collect()).unwrap();
        prop_assert!((pearson(&base).unwrap() - pearson(&affine).unwrap()).abs() < 1e-9);
        prop_assert!((spearman(&base).unwrap() - spearman(&monotone).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn mean_noise_below_largest_pair(pairs in vec((0.0f64..500.0, 0.0f64..500.0), 2..30)) {
        let s = PairedSeries::new(pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect()).unwrap();
        prop_assume!(sample_sd(&s.x) > 1e-6);
        let lambda = measurement_noise(&s).unwrap();
        let bound = pairs.iter().map(|p| (p.0 - p.1).abs()).fold(0.0, f64::max) / (2f64.sqrt() * sample_sd(&s.x));
        prop_assert!(lambda.iter().sum::<f64>() / lambda.len() as f64 <= bound + 1e-12);
    }

    #[test]
    fn peripapillary_invariant_to_circular_shift(values in vec(0.0f64..400.0, 12..200), centre_frac in 0.0f64..1.0, shift in 0usize..200) {
        let n = values.len();
        let centre = ((centre_frac * n as f64) as usize).min(n - 1);
        let shift = shift % n;
        let mut rolled = values.clone();
        rolled.rotate_right(shift);
        for eye in [Eye::Right, Eye::Left] {
            let a = peripapillary_means(&values, centre, eye).unwrap();
            let b = peripapillary_means(&rolled, (centre + shift) % n, eye).unwrap();
            for (x, y) in [(a.temporal, b.temporal), (a.nasal, b.nasal), (a.supero_nasal, b.supero_nasal), (a.infero_temporal, b.infero_temporal), (a.pmb, b.pmb), (a.overall, b.overall)] {
                match (x, y) {
                    (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-9 * x.abs().max(1.0)),
                    (x, y) => prop_assert_eq!(x, y),
                }
            }
        }
    }

    #[test]
    fn etdrs_area_weighted_mean_is_disc_mean(values in vec(0.0f64..400.0, 81 * 81), angle in -30.0f64..30.0) {
        let map = EnFaceMap {
            values: Array2::from_shape_vec((81, 81), values).unwrap(),
            px_scale_x: 80.0,
            px_scale_y: 80.0,
            fovea: PixelPoint::new(40.0, 40.0),
            rotation_deg: 0.0,
            eye: Eye::Right,
        };
        let rep = etdrs_means(&map, angle);
        let weighted: f64 = rep.fields().iter().map(|(_, f)| f.mean.unwrap() * f.pixels as f64).sum();
        let pixels: usize = rep.fields().iter().map(|(_, f)| f.pixels).sum();
        let disc: Vec<f64> = map.values.indexed_iter()
            .filter(|((r, c), _)| etdrs_field(&map, *r, *c, angle).is_some())
            .map(|(_, &v)| v)
            .collect();
        prop_assert_eq!(pixels, disc.len());
        let disc_mean = disc.iter().sum::<f64>() / disc.len() as f64;
        prop_assert!((weighted / pixels as f64 - disc_mean).abs() < 1e-9);
    }

    #[test]
    fn cvi_scale_invariant_and_partitions_area(
        c in 0.5f64..3.0,
        tilt in -0.15f64..0.15,
        vessel_bits in vec(any::<bool>(), 200 * 400),
    ) {
        let n = 400;
        let upper_rows: Vec<f64> = (0..n).map(|i| 50.0 + tilt * (i as f64 - 200.0)).collect();
        let lower_rows: Vec<f64> = upper_rows.iter().map(|r| r + 60.0).collect();
        let upper = BoundaryTrace::exact(BoundaryKind::RpeChoroid, 0, upper_rows);
        let lower = BoundaryTrace::exact(BoundaryKind::ChoroidSclera, 0, lower_rows);
        let region = region_from_traces(&upper, &lower, (200, n)).unwrap();
        let vessels = VesselMask::clipped(Array2::from_shape_vec((200, n), vessel_bits).unwrap(), &region).unwrap();
        let stroma = VesselMask::clipped(vessels.pixels.mapv(|v| !v), &region).unwrap();
        let report = |k: f64, mask: &VesselMask| {
            let scan = BScan::new(Array2::zeros((200, n)), 3.87 * k, 11.47 * k).unwrap();
            let spec = RoiSpec::new(PixelPoint::new(200.0, upper.row_at(200).unwrap()), 1500.0 * k);
            let rep = measure_roi(&upper, &lower, Some(mask), &scan, &spec).unwrap();
            let sfct = perpendicular_thickness(&upper, &lower, rep.centre_col, DEFAULT_TANGENT_OFFSET, scan.scales()).unwrap();
            (rep, sfct)
        };
        let (base, sfct) = report(1.0, &vessels);
        let (scaled, _) = report(c, &vessels);
        let (complement, _) = report(1.0, &stroma);
        assert_abs_diff_eq!(base.sfct_microns, sfct, epsilon = 1e-12);
        prop_assert_eq!(base.cvi, scaled.cvi);
        prop_assert!((scaled.area_mm2 - base.area_mm2 * c * c).abs() < 1e-9);
        let vessel_area = base.vessel_area_mm2.unwrap();
        prop_assert!((vessel_area + complement.vessel_area_mm2.unwrap() - base.area_mm2).abs() < 1e-9);
        prop_assert!(vessel_area <= base.area_mm2 + 1e-12);
    }

    #[test]
    fn reversed_scan_order_flips_map(
        values in vec(0.0f64..400.0, 5 * 31),
        fovea_scan in 0usize..5,
        smooth in any::<bool>(),
    ) {
        let profiles: Vec<ScanProfile> = values
            .chunks(31)
            .map(|v| ScanProfile { c0: 0, values: v.to_vec(), fovea_col: 15.0 })
            .collect();
        let options = MapOptions {
            lateral_scale: 10.0,
            frontal_scale: 30.0,
            fovea_scan,
            shape: (13, 31),
            rotation_deg: 0.0,
            smooth,
            eye: Eye::Right,
        };
        let forward = build_map(&profiles, &options).unwrap();
        let reversed: Vec<ScanProfile> = profiles.iter().rev().cloned().collect();
        let flipped = build_map(&reversed, &MapOptions { fovea_scan: 4 - fovea_scan, ..options }).unwrap();
        for ((r, c), &a) in forward.values.indexed_iter() {
            let b = flipped.values[[12 - r, c]];
            prop_assert!(a.is_nan() && b.is_nan() || (a - b).abs() < 1e-9);
        }
    }
}
