//! Simulation laboratory for linear congestion games.

pub mod analysis;
pub mod dynamics;
pub mod files;
pub mod game;
pub mod generator;
pub mod lowerbound;
pub mod reductions;
pub mod rng;
