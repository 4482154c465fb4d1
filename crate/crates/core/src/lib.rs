pub mod augment;
pub mod data;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod model;
pub mod par;
pub mod seed;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
pub use linalg::Matrix;
