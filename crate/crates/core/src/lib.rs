//! Relational knowledge distillation for occlusion-robust embeddings.

pub mod cli;
pub mod config;
pub mod eval;
pub mod gradcheck;
pub mod harness;
pub mod io;
pub mod losses;
pub mod math;
pub mod occlusion;
pub mod tuples;
