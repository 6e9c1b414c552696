pub mod autodiff;
pub mod bracket;
pub mod dataset;
pub mod harness;
mod manifest;
pub mod nn;
pub mod sim;

pub use manifest::sha256_hex;
