//! Unsupervised part-of-speech induction through masked tag reconstruction:
//! a local per-word tag predictor trained end to end by masking predicted
//! tags and reconstructing the words underneath them, marginalizing over the
//! latent tags. Ships with synthetic agreement benchmarks, training and
//! multi-seed orchestration, and clustering/mutual-information analysis
//! tooling.

pub mod config;
pub mod corpus;
pub mod eval;
pub mod model;
pub mod nn;
pub mod synth;
pub mod train;
