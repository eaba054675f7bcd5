pub mod error;
pub mod math;
pub mod mesh;

pub use error::{Error, Result};
pub mod field;
pub mod render;
pub mod guidance;
pub mod optimize;
pub mod result;
pub mod apps;
pub mod eval;
