pub mod autodiff;
pub mod convkit;
pub mod datakit;
pub mod error;
pub mod flows;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
