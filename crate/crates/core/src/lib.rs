pub mod bicop;
pub mod cvine;
pub mod error;
pub mod geo;
pub mod lcvcl;
pub mod margins;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod predict;
pub mod rng;
pub mod score;
pub mod slcvcl;
pub mod special;
pub mod stats;
pub mod structure;
pub mod synth;

pub use error::{Error, Result};
