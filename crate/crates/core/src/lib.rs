//! Metropolis-patched Langevin dynamics.

pub mod constraints;
pub mod model;
pub mod potential;
pub mod integrate;
pub mod thermostat;
pub mod observe;
