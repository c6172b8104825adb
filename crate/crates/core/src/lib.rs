pub mod cam;
pub mod error;
pub mod matrix;
pub mod net;
pub mod patterns;
pub mod rdm;
pub mod report;
pub mod stats;
pub mod synthetic;
pub mod tensorio;

pub use error::{Error, Result};
