pub mod augment;
pub mod cli;
pub mod cohort;
pub mod config;
pub mod forest;
pub mod heatmap;
pub mod mask;
pub mod metrics;
pub mod patches;
pub mod pipeline;
pub mod roi;
pub mod scoring;
pub mod slide_io;
pub mod staging;
