pub mod config;
pub mod correlation;
pub mod descriptor;
pub mod error;
pub mod fft;
pub mod geometry;
pub mod grid;
pub mod pose_metrics;
pub mod search;
pub mod synth;
