pub mod condkl;
pub mod error;
pub mod experiment;
pub mod forward;
pub mod gpc;
pub mod grid;
pub mod inference;
pub mod placement;
pub mod randfield;

pub use error::{Error, Result};
pub use grid::{Field, Grid};
