pub mod codec;
pub mod fusion;
pub mod geometry;
pub mod loss;
pub mod priors;
pub mod syngen;
