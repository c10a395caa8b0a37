use std::path::PathBuf;
use std::str::FromStr;

use choroid_core::gp::KernelKind;
use choroid_core::measure::{Alignment, ThicknessMode};
use choroid_core::{Eye, PixelPoint};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "choroid", version, about = "Choroid tracing, vessel segmentation and measurement")]
#[command(args_override_self = true, propagate_version = true)]
pub struct Cli {
    /// key=value file mirroring the long flags; flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Emit progress as JSON lines on stderr.
    #[arg(long, global = true)]
    pub json_log: bool,

    /// Worker threads (0 uses every core).
    #[arg(long, global = true, default_value_t = 0, value_name = "N")]
    pub jobs: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Trace the upper and/or lower choroid boundary.
    Trace(TraceArgs),
    /// Segment choroid vessels inside a region.
    Vessels(VesselArgs),
    /// Fovea-centred thickness, area and vascularity.
    Measure(MeasureArgs),
    /// En-face thickness map and ETDRS grid from a volume of traces.
    Map(MapArgs),
    /// Peripapillary sub-field means of a circular scan.
    Peri(PeriArgs),
    /// Agreement between masks or paired measurement series.
    Compare(CompareArgs),
    /// Write a synthetic B-scan with ground truth.
    Phantom(PhantomArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

/// Semicolon-separated `col,row` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Points(pub Vec<PixelPoint>);

pub fn parse_point(s: &str) -> Result<PixelPoint, String> {
    let (c, r) = s
        .split_once(',')
        .ok_or_else(|| format!("expected 'col,row', got '{s}'"))?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("'{v}' is not a number"));
    Ok(PixelPoint::new(num(c)?, num(r)?))
}

impl FromStr for Points {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(';')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(parse_point)
            .collect::<Result<_, _>>()
            .map(Points)
    }
}

fn parse_eye(s: &str) -> Result<Eye, String> {
    s.parse().map_err(|e: choroid_core::Error| e.to_string())
}

fn parse_kernel(s: &str) -> Result<KernelKind, String> {
    s.parse().map_err(|e: choroid_core::Error| e.to_string())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AlignmentArg {
    ChoroidAligned,
    ImageAligned,
}

impl From<AlignmentArg> for Alignment {
    fn from(a: AlignmentArg) -> Self {
        match a {
            AlignmentArg::ChoroidAligned => Alignment::ChoroidAligned,
            AlignmentArg::ImageAligned => Alignment::ImageAligned,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Perpendicular,
    PerAscan,
}

impl From<ModeArg> for ThicknessMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Perpendicular => ThicknessMode::Perpendicular,
            ModeArg::PerAscan => ThicknessMode::PerAscan,
        }
    }
}

#[derive(Debug, Args)]
pub struct ScaleArgs {
    /// Microns per pixel, vertical.
    #[arg(long, default_value_t = 3.87)]
    pub axial: f64,
    /// Microns per pixel, horizontal.
    #[arg(long, default_value_t = 11.47)]
    pub lateral: f64,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[command(flatten)]
    pub scales: ScaleArgs,
    /// Upper boundary endpoints, "c0,r0;c1,r1".
    #[arg(long)]
    pub upper: Option<Points>,
    /// Lower boundary endpoints, "c0,r0;c1,r1".
    #[arg(long)]
    pub lower: Option<Points>,
    #[arg(long, value_name = "POINTS")]
    pub guide_upper: Option<Points>,
    #[arg(long, value_name = "POINTS")]
    pub guide_lower: Option<Points>,
    #[arg(long, value_parser = parse_kernel)]
    pub kernel_upper: Option<KernelKind>,
    #[arg(long, value_parser = parse_kernel)]
    pub kernel_lower: Option<KernelKind>,
    #[arg(long)]
    pub sigma_f_upper: Option<f64>,
    #[arg(long)]
    pub sigma_l_upper: Option<f64>,
    #[arg(long)]
    pub sigma_f_lower: Option<f64>,
    #[arg(long)]
    pub sigma_l_lower: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Posterior curves drawn per iteration.
    #[arg(long)]
    pub n_curves: Option<usize>,
    /// Column bin width for accepted observations.
    #[arg(long)]
    pub delta_x: Option<usize>,
    #[arg(long)]
    pub keep_fraction: Option<f64>,
    #[arg(long, env = "CHOROID_TRACE_SEED", default_value_t = choroid_core::gpet::DEFAULT_SEED)]
    pub seed: u64,
    /// Output directory for upper.json, lower.json and region.png.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VesselArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[command(flatten)]
    pub scales: ScaleArgs,
    /// Region mask PNG; otherwise built from the two traces.
    #[arg(long)]
    pub region: Option<PathBuf>,
    #[arg(long)]
    pub trace_upper: Option<PathBuf>,
    #[arg(long)]
    pub trace_lower: Option<PathBuf>,
    /// Clusters per depth band.
    #[arg(long = "clusters", visible_alias = "K")]
    pub clusters: Option<usize>,
    /// Darkest clusters labelled as vessel.
    #[arg(long = "vessel-clusters", visible_alias = "k")]
    pub vessel_clusters: Option<usize>,
    #[arg(long)]
    pub majority_vote: bool,
    /// Use a thresholding baseline instead of quantisation.
    #[arg(long, value_parser = ["niblack"])]
    pub baseline: Option<String>,
    /// Niblack window.
    #[arg(long)]
    pub w: Option<usize>,
    /// Niblack standard deviation offset.
    #[arg(long, allow_negative_numbers = true)]
    pub k_offset: Option<f64>,
    /// Niblack statistics from region pixels only.
    #[arg(long)]
    pub region_statistics: bool,
    #[arg(long)]
    pub shadow_window: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MeasureArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[command(flatten)]
    pub scales: ScaleArgs,
    #[arg(long)]
    pub trace_upper: PathBuf,
    #[arg(long)]
    pub trace_lower: PathBuf,
    #[arg(long)]
    pub vessels: Option<PathBuf>,
    /// Fovea pixel, "col,row".
    #[arg(long, value_parser = parse_point)]
    pub fovea: PixelPoint,
    /// Full ROI width in microns.
    #[arg(long, default_value_t = 6000.0)]
    pub roi_microns: f64,
    #[arg(long, value_enum, default_value = "choroid-aligned")]
    pub alignment: AlignmentArg,
    #[arg(long, default_value_t = choroid_core::measure::DEFAULT_TANGENT_OFFSET)]
    pub tangent_offset: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    /// Volume manifest JSON.
    #[arg(long)]
    pub volume: PathBuf,
    /// Acquisition angle of the volume, degrees.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub acquisition_angle: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// ETDRS report output.
    #[arg(long)]
    pub etdrs: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PeriArgs {
    /// Thickness values, one per line, in acquisition order.
    #[arg(long)]
    pub values: Option<PathBuf>,
    #[arg(long)]
    pub trace_upper: Option<PathBuf>,
    #[arg(long)]
    pub trace_lower: Option<PathBuf>,
    #[command(flatten)]
    pub scales: ScaleArgs,
    #[arg(long, value_enum, default_value = "per-ascan")]
    pub mode: ModeArg,
    /// Index of the temporal-most A-scan.
    #[arg(long)]
    pub temporal_centre: usize,
    #[arg(long, value_parser = parse_eye)]
    pub eye: Eye,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, requires = "truth", conflicts_with = "series")]
    pub pred: Option<PathBuf>,
    #[arg(long, requires = "pred")]
    pub truth: Option<PathBuf>,
    /// Two CSV files of paired values.
    #[arg(long, num_args = 2, value_names = ["X", "Y"], action = clap::ArgAction::Set)]
    pub series: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ShapeArg {
    Flat,
    Skewed,
    Parabolic,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long, value_enum, default_value = "flat")]
    pub shape: ShapeArg,
    /// Tilt for skewed phantoms, degrees.
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    pub angle: f64,
    /// Bow depth for parabolic phantoms, pixels.
    #[arg(long, default_value_t = 40.0, allow_negative_numbers = true)]
    pub depth: f64,
    #[arg(long, default_value_t = 768)]
    pub rows: usize,
    #[arg(long, default_value_t = 768)]
    pub cols: usize,
    #[arg(long)]
    pub upper_row: Option<f64>,
    #[arg(long)]
    pub thickness: Option<f64>,
    /// Gaussian noise standard deviation, intensity levels.
    #[arg(long, default_value_t = 10.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 7)]
    pub noise_seed: u64,
    /// Add dark vessel lumens.
    #[arg(long)]
    pub vessels: bool,
    /// Striped two-level phantom for exact vessel checks.
    #[arg(long)]
    pub two_tone: bool,
    #[arg(long, default_value_t = 40)]
    pub dark: u8,
    #[arg(long, default_value_t = 200)]
    pub bright: u8,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = choroid_server::DEFAULT_PORT)]
    pub port: u16,
    /// Write session artifacts under this directory.
    #[arg(long)]
    pub persist: Option<PathBuf>,
    /// Serve the UI bundle from this directory.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
}
