//! Citation trend prediction with causally masked graph attention.

pub mod autodiff;
pub mod error;
pub mod experiments;
pub mod features;
pub mod graph;
pub mod io;
pub mod models;
pub mod sparse;

pub use error::{Error, Result};
