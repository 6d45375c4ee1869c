//! Texture-based mass segmentation for mammograms.
//!
//! The pipeline enhances the whole breast image (speckle-reducing anisotropic
//! diffusion followed by CLAHE), crops a region of interest around an
//! annotated abnormality, replaces every ROI pixel by the GLCM contrast of its
//! neighbourhood in four directions, sums the directional maps, and turns the
//! resulting edge map into a mass mask and contour that can be scored against
//! a reference mask.

pub mod enhance;
pub mod evalmetrics;
pub mod imgio;
pub mod pipeline;
pub mod segment;
pub mod texture;

pub use imgio::GrayImage;
