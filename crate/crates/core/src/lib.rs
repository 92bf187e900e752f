//! Stochastic point-vortex particles, a pseudo-spectral solver for the 2D
//! vorticity equation with transport noise, and a harness that compares the
//! mollified empirical vorticity of the particles with the SPDE solution
//! driven by the same Brownian increments.

pub mod biot_savart;
pub mod error;
pub mod harness;
pub mod mollifier;
pub mod noise;
pub mod oracles;
pub mod particles;
pub mod spde;
pub mod torus;

pub use error::{Error, Result};
