pub mod backend;
pub mod config;
pub mod labelmap;
pub mod merge;
pub mod metrics;
pub mod multipass;
pub mod pipeline;
pub mod raster;
pub mod tiler;
