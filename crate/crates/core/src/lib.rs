pub mod combine;
pub mod data;
pub mod error;
pub mod eval;
pub mod forecast;
pub mod fts;
pub mod gapc;
pub mod index;
pub mod lc;
pub mod mcs;
pub mod models;
pub mod pipeline;

pub use error::{Error, Result};
