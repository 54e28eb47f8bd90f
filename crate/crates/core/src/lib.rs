pub mod data;
pub mod error;
pub mod harness;
pub mod model;
pub mod ocrl;
pub mod par;
pub mod qencoder;
pub mod reasoner;
pub mod registry;
pub mod scenegen;
pub mod seeds;
pub mod tubelets;
pub mod video;

pub use error::{OcrlError, Result};
