pub mod checkpoint;
pub mod cli;
pub mod conditioning;
pub mod config;
pub mod diffusion;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod pairing;
pub mod raster;
pub mod selftest;
pub mod trainer;
