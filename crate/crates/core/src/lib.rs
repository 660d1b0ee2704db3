//! Linear response of finite magnetic tight-binding models.

pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod invariants;
pub mod lattice;
pub mod ncalg;
pub mod response;

pub use error::{Error, Result};
