pub mod augment;
pub mod cotrain;
pub mod datanoise;
pub mod error;
pub mod models;
pub mod lab;
pub mod ndgrad;
pub mod seed;

pub use error::{Error, Result};
