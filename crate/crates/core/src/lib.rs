pub mod error;
pub mod attention;
pub mod blocks;
pub mod data;
pub mod model;
pub mod numerics;
pub mod harness;
pub use error::{Error, Result};
