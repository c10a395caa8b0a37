use std::path::{Path, PathBuf};

use choroid_core::gpet::{trace_scan_boundary, BoundaryInput, GpetOverrides, TraceResult};
use choroid_core::maps::{build_map, etdrs_means, peripapillary_means, MapOptions, ScanProfile};
use choroid_core::measure::{measure_roi, thickness_array, Alignment, ThicknessMode};
use choroid_core::metrics::{
    mae, mask_agreement, mean_difference, measurement_noise, pearson, spearman, PairedSeries,
};
use choroid_core::mmcq::{segment_with, MmcqConfig, NiblackParams, VesselMethod, VesselSettings};
use choroid_core::phantom::{generate, two_tone, Phantom, PhantomConfig, PhantomShape};
use choroid_core::{io, region_from_traces, BScan, BoundaryKind, Eye, RegionMask, Scales, VesselMask};
use choroid_server::api::{trace_config, MeasureRequest};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::args::*;
use crate::error::{CliError, CliResult};
use crate::files::*;

fn boundary_input(points: &Option<Points>, guides: &Option<Points>, flag: &str) -> CliResult<Option<BoundaryInput>> {
    let Some(points) = points else { return Ok(None) };
    let endpoints: [_; 2] = points
        .0
        .clone()
        .try_into()
        .map_err(|_| CliError::Usage(format!("--{flag} needs exactly two points, \"c0,r0;c1,r1\"")))?;
    Ok(Some(BoundaryInput {
        endpoints,
        guides: guides.as_ref().map(|g| g.0.clone()).unwrap_or_default(),
    }))
}

pub fn trace(a: &TraceArgs) -> CliResult<()> {
    let upper = boundary_input(&a.upper, &a.guide_upper, "upper")?;
    let lower = boundary_input(&a.lower, &a.guide_lower, "lower")?;
    if upper.is_none() && lower.is_none() {
        return Err(CliError::Usage("trace needs --upper and/or --lower endpoints".into()));
    }
    let scan = load_scan(&a.image, &a.scales)?;
    let overrides = |kernel, sigma_f, sigma_l| GpetOverrides {
        kernel,
        sigma_f,
        sigma_l,
        noise_sigma: a.noise_sigma,
        n_curves: a.n_curves,
        keep_fraction: a.keep_fraction,
        delta_x: a.delta_x,
        seed: None,
    };
    let run = |input: &Option<BoundaryInput>, kind, ov: GpetOverrides| -> CliResult<Option<TraceResult>> {
        let Some(input) = input else { return Ok(None) };
        let config = trace_config(scan.shape(), kind, &ov, Some(a.seed))?;
        tracing::info!(boundary = ?kind, seed = a.seed, "tracing");
        Ok(Some(trace_scan_boundary(&scan, input, kind, &config)?))
    };
    let (up, lo) = rayon::join(
        || run(&upper, BoundaryKind::RpeChoroid, overrides(a.kernel_upper, a.sigma_f_upper, a.sigma_l_upper)),
        || run(&lower, BoundaryKind::ChoroidSclera, overrides(a.kernel_lower, a.sigma_f_lower, a.sigma_l_lower)),
    );
    let (up, lo) = (up?, lo?);
    if let (Some(u), Some(l)) = (&up, &lo) {
        let region = region_from_traces(&u.trace, &l.trace, scan.shape())?;
        write_json(&a.out.join("upper.json"), u)?;
        write_json(&a.out.join("lower.json"), l)?;
        write_atomic(&a.out.join("region.png"), &io::encode_mask_png(&region.pixels)?)?;
        return Ok(());
    }
    if let Some(u) = &up {
        write_json(&a.out.join("upper.json"), u)?;
    }
    if let Some(l) = &lo {
        write_json(&a.out.join("lower.json"), l)?;
    }
    Ok(())
}

fn region_for(
    scan: &BScan,
    region: &Option<PathBuf>,
    upper: &Option<PathBuf>,
    lower: &Option<PathBuf>,
) -> CliResult<RegionMask> {
    if let Some(path) = region {
        let pixels = read_mask(path)?;
        if pixels.dim() != scan.shape() {
            return Err(choroid_core::Error::ShapeMismatch {
                expected: scan.shape(),
                got: pixels.dim(),
            }
            .into());
        }
        return Ok(RegionMask::external(pixels));
    }
    match (upper, lower) {
        (Some(u), Some(l)) => Ok(region_from_traces(&read_trace(u)?, &read_trace(l)?, scan.shape())?),
        _ => Err(CliError::Usage(
            "vessels needs --region or both --trace-upper and --trace-lower".into(),
        )),
    }
}

pub fn vessels(a: &VesselArgs) -> CliResult<()> {
    let scan = load_scan(&a.image, &a.scales)?;
    let region = region_for(&scan, &a.region, &a.trace_upper, &a.trace_lower)?;
    let upper = a.trace_upper.as_deref().map(read_trace).transpose()?;
    let defaults = MmcqConfig::default();
    let niblack_defaults = NiblackParams::default();
    let settings = VesselSettings {
        method: match (&a.baseline, a.majority_vote) {
            (Some(_), _) => VesselMethod::Niblack,
            (None, true) => VesselMethod::MmcqVote,
            (None, false) => VesselMethod::Mmcq,
        },
        mmcq: MmcqConfig {
            clusters: a.clusters.unwrap_or(defaults.clusters),
            vessel_clusters: a.vessel_clusters.unwrap_or(defaults.vessel_clusters),
            shadow_window: a.shadow_window.unwrap_or(defaults.shadow_window),
            ..defaults
        },
        niblack: NiblackParams {
            window: a.w.unwrap_or(niblack_defaults.window),
            k: a.k_offset.unwrap_or(niblack_defaults.k),
            region_statistics: a.region_statistics,
        },
    };
    tracing::info!(method = ?settings.method, region_pixels = region.count(), "segmenting");
    let mask = segment_with(&scan, &region, upper.as_ref(), &settings)?;
    write_atomic(&a.out, &io::encode_mask_png(&mask.pixels)?)
}

pub fn measure(a: &MeasureArgs) -> CliResult<()> {
    let scan = load_scan(&a.image, &a.scales)?;
    let upper = read_trace(&a.trace_upper)?;
    let lower = read_trace(&a.trace_lower)?;
    let vessels = a
        .vessels
        .as_deref()
        .map(|p| read_mask(p).map(|pixels| VesselMask { pixels }))
        .transpose()?;
    let request = MeasureRequest {
        fovea: a.fovea,
        roi_microns: a.roi_microns,
        alignment: Alignment::from(a.alignment),
        tangent_offset_px: Some(a.tangent_offset),
    };
    let report = measure_roi(&upper, &lower, vessels.as_ref(), &scan, &request.spec())?;
    write_json(&a.out, &report)
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VolumeScan {
    upper: PathBuf,
    lower: PathBuf,
    fovea_col: f64,
}

/// Volume manifest; trace paths are relative to the manifest's directory.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VolumeManifest {
    axial_scale: f64,
    lateral_scale: f64,
    frontal_scale: f64,
    fovea_scan: usize,
    #[serde(default)]
    eye: Eye,
    #[serde(default)]
    rotation_deg: f64,
    #[serde(default = "default_true")]
    smooth: bool,
    #[serde(default)]
    mode: ThicknessMode,
    shape: Option<(usize, usize)>,
    scans: Vec<VolumeScan>,
}

fn odd(n: usize) -> usize {
    n | 1
}

pub fn map(a: &MapArgs) -> CliResult<()> {
    let manifest: VolumeManifest = read_json(&a.volume)?;
    let base = a.volume.parent().unwrap_or(Path::new("."));
    let scales = Scales {
        axial: manifest.axial_scale,
        lateral: manifest.lateral_scale,
    };
    let profiles: Vec<ScanProfile> = manifest
        .scans
        .par_iter()
        .map(|s| {
            let upper = read_trace(&base.join(&s.upper))?;
            let lower = read_trace(&base.join(&s.lower))?;
            let (c0, values) = thickness_array(&upper, &lower, scales, manifest.mode)?;
            Ok(ScanProfile {
                c0,
                values,
                fovea_col: s.fovea_col,
            })
        })
        .collect::<CliResult<_>>()?;
    let ratio = manifest.frontal_scale / manifest.lateral_scale;
    let shape = manifest.shape.unwrap_or_else(|| {
        let rows = ((profiles.len().saturating_sub(1)) as f64 * ratio).round() as usize + 1;
        let cols = profiles.iter().map(|p| p.values.len()).max().unwrap_or(1);
        (odd(rows), odd(cols))
    });
    let options = MapOptions {
        lateral_scale: manifest.lateral_scale,
        frontal_scale: manifest.frontal_scale,
        fovea_scan: manifest.fovea_scan,
        shape,
        rotation_deg: manifest.rotation_deg,
        smooth: manifest.smooth,
        eye: manifest.eye,
    };
    let enface = build_map(&profiles, &options)?;
    write_json(&a.out, &enface)?;
    if let Some(path) = &a.etdrs {
        write_json(path, &etdrs_means(&enface, a.acquisition_angle))?;
    }
    Ok(())
}

fn emit<T: Serialize>(value: &T, out: &Option<PathBuf>) -> CliResult<()> {
    let bytes = io::to_json_bytes(value)?;
    match out {
        Some(path) => write_atomic(path, &bytes),
        None => {
            print!("{}", String::from_utf8_lossy(&bytes));
            Ok(())
        }
    }
}

pub fn peri(a: &PeriArgs) -> CliResult<()> {
    let values = match (&a.values, &a.trace_upper, &a.trace_lower) {
        (Some(path), None, None) => read_column(path)?,
        (None, Some(u), Some(l)) => {
            let scales = Scales {
                axial: a.scales.axial,
                lateral: a.scales.lateral,
            };
            thickness_array(&read_trace(u)?, &read_trace(l)?, scales, a.mode.into())?.1
        }
        _ => {
            return Err(CliError::Usage(
                "peri needs either --values or both --trace-upper and --trace-lower".into(),
            ))
        }
    };
    emit(&peripapillary_means(&values, a.temporal_centre, a.eye)?, &a.out)
}

#[derive(Debug, Serialize)]
struct SeriesReport {
    n: usize,
    pearson: Option<f64>,
    spearman: Option<f64>,
    mean_difference: f64,
    mae: f64,
    measurement_noise: Option<Vec<f64>>,
    mean_measurement_noise: Option<f64>,
}

fn defined(r: choroid_core::Result<f64>) -> CliResult<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(choroid_core::Error::ZeroVariance(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

pub fn compare(a: &CompareArgs) -> CliResult<()> {
    if let (Some(pred), Some(truth)) = (&a.pred, &a.truth) {
        let agreement = mask_agreement(&read_mask(pred)?, &read_mask(truth)?)?;
        return emit(&agreement, &a.out);
    }
    let Some(files) = &a.series else {
        return Err(CliError::Usage("compare needs --pred/--truth or --series X Y".into()));
    };
    let series = PairedSeries::new(read_column(&files[0])?, read_column(&files[1])?)?;
    let noise = if series.len() >= 2 {
        match measurement_noise(&series) {
            Ok(v) => Some(v),
            Err(choroid_core::Error::ZeroVariance(_)) => None,
            Err(e) => return Err(e.into()),
        }
    } else {
        None
    };
    let single = series.len() < 2;
    let report = SeriesReport {
        n: series.len(),
        pearson: if single { None } else { defined(pearson(&series))? },
        spearman: if single { None } else { defined(spearman(&series))? },
        mean_difference: mean_difference(&series)?,
        mae: mae(&series)?,
        mean_measurement_noise: noise.as_ref().map(|v| v.iter().sum::<f64>() / v.len() as f64),
        measurement_noise: noise,
    };
    emit(&report, &a.out)
}

#[derive(Debug, Serialize)]
struct PhantomMeta {
    rows: usize,
    cols: usize,
    axial_scale: f64,
    lateral_scale: f64,
    fovea: choroid_core::PixelPoint,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<PhantomConfig>,
}

pub fn phantom(a: &PhantomArgs) -> CliResult<()> {
    let (p, config): (Phantom, Option<PhantomConfig>) = if a.two_tone {
        (two_tone(a.dark, a.bright)?, None)
    } else {
        let shape = match a.shape {
            ShapeArg::Flat => PhantomShape::Flat,
            ShapeArg::Skewed => PhantomShape::Skewed { angle_deg: a.angle },
            ShapeArg::Parabolic => PhantomShape::Parabolic { depth: a.depth },
        };
        let mut config = PhantomConfig::scaled(shape, a.rows, a.cols);
        config.noise_sigma = a.noise;
        config.seed = a.noise_seed;
        config.vessels = a.vessels;
        if let Some(r) = a.upper_row {
            config.upper_row = r;
        }
        if let Some(t) = a.thickness {
            config.thickness = t;
        }
        (generate(&config)?, Some(config))
    };
    let (rows, cols) = p.scan.shape();
    let centre = (cols - 1) / 2;
    let fovea_row = p.upper.row_at(centre).unwrap_or(0.0).round();
    let meta = PhantomMeta {
        rows,
        cols,
        axial_scale: p.scan.axial_scale,
        lateral_scale: p.scan.lateral_scale,
        fovea: choroid_core::PixelPoint::new(centre as f64, fovea_row),
        config,
    };
    let out = &a.out;
    write_atomic(&out.join("scan.png"), &io::encode_gray_png(&p.scan.pixels)?)?;
    write_json(&out.join("truth_upper.json"), &p.upper)?;
    write_json(&out.join("truth_lower.json"), &p.lower)?;
    write_atomic(&out.join("truth_region.png"), &io::encode_mask_png(&p.region.pixels)?)?;
    write_atomic(&out.join("truth_vessels.png"), &io::encode_mask_png(&p.vessels)?)?;
    write_json(&out.join("endpoints.json"), &p.endpoints)?;
    write_json(&out.join("meta.json"), &meta)
}

pub fn serve(a: &ServeArgs) -> CliResult<()> {
    let addr: std::net::SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| CliError::Usage(format!("invalid --host/--port: {e}")))?;
    let options = choroid_server::ServerOptions {
        persist: a.persist.clone(),
        static_dir: a.static_dir.clone(),
        timeout: None,
    };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(CliError::Server)?;
    runtime
        .block_on(choroid_server::serve(addr, options))
        .map_err(CliError::Server)
}
