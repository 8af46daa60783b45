pub mod ace;
pub mod control;
pub mod error;
pub mod gpc;
pub mod ident;
pub mod metrics;
pub mod optim;
pub mod par;
pub mod plant;
pub mod seed;

pub use error::{Error, Result};
