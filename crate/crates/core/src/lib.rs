pub mod backprop;
pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod layers;
pub mod linalg;
pub mod optim;
pub mod tasks;

pub use error::{Error, Result};
