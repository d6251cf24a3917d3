//! Flexural-wave cavity simulator.
//!
//! Thin square plates obey ω = a k², the same quadratic law as a particle in
//! a box, so a localized pulse in the cavity spreads and then rebuilds itself
//! at the revival time (and as several copies at rational fractions of it).
//! The crate provides three engines for the same cavity (exact modal sums,
//! explicit finite differences, dense eigen decomposition) and the analysis
//! chain that finds revivals in their output.

pub mod analysis;
pub mod config;
pub mod fdtd;
pub mod modal;
pub mod model;
pub mod movie;
pub mod pipeline;
pub mod spectral;
