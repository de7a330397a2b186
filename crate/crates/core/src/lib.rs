//! Complex-valued transformer built on a small reverse-mode autodiff engine.

pub mod attention;
pub mod autodiff;
mod codec;
pub mod complex;
pub mod config;
pub mod error;
pub mod layers;
pub mod model;
pub mod params;
pub mod signal;
pub mod tensor;
pub mod train;
pub mod verify;

pub use complex::{ComplexTensor, ComplexVar};
pub use error::{Category, Error, FormatError, Result};
pub use params::{ParamId, ParamStore, Session};
pub use tensor::RealTensor;
