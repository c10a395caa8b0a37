//! Denoising, contrast enhancement, edge maps and shadow compensation.

pub mod clahe;
pub mod edges;
pub mod filters;
pub mod shadow;

pub use clahe::{clahe, clahe_masked};
pub use edges::{directional_edge_kernels, edge_map, edge_map_lower, edge_map_upper, EdgeMap, EdgeTarget};
pub use filters::{convolve, dilate, erode, median_filter, median_filter_masked, normalise_min_max, open};
pub use shadow::{shadow_compensate, shadow_factors, ShadowMode, DEFAULT_SHADOW_WINDOW};
