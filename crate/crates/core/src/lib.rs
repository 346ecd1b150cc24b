pub mod bernstein;
pub mod copula;
pub mod error;
pub mod multiplier;
pub mod rng;
pub mod runner;
pub mod sample;
pub mod samplers;
pub mod statistics;
pub mod subsample;
