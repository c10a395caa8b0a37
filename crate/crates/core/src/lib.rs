//! Choroid segmentation and measurement for OCT B-scans.
//!
//! Boundaries are traced with Gaussian-process edge tracing ([`gpet`]), vessels are
//! segmented by multi-scale median-cut quantisation ([`mmcq`]) and the results are
//! turned into fovea-centred measurements ([`measure`], [`maps`]).

pub mod error;
pub mod gp;
pub mod gpet;
pub mod io;
pub mod maps;
pub mod measure;
pub mod metrics;
pub mod mmcq;
pub mod phantom;
pub mod preprocess;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    pixel_area_mm2, region_from_traces, BScan, BoundaryKind, BoundaryTrace, Eye, MaskProvenance, PixelPoint,
    RegionMask, Scales, VesselMask,
};
