//! Superpixel-graph dark-spot segmentation for SAR intensity imagery.
//!
//! Pipeline: [`raster_io`] (load, Lee filter, tile) → [`superpixel`] →
//! [`region_graph`] → [`features`] → [`feature_selection`] →
//! [`deepergcn`] node classification → [`metrics`]. [`synth`] generates
//! speckled scenes with pixel ground truth for desk-scale experiments.

pub mod error;
pub mod raster_io;
pub mod superpixel;
pub mod region_graph;
pub mod features;
pub mod feature_selection;
pub mod deepergcn;
pub mod metrics;
pub mod synth;

pub use error::{Error, Result};
