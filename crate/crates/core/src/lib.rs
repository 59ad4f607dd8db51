pub mod coins;
pub mod family;
pub mod graphs;
pub mod harness;
pub mod matrix;
pub mod oracle;

pub use oracle::{Error, Result};
