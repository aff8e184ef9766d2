pub mod cli;
pub mod config;
pub mod data;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod spectral;
pub mod svg;
pub mod tensor;
pub mod trainer;
