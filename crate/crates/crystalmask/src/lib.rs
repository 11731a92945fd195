//! File formats, report rendering and the batch pipeline around
//! [`crystalmask_core`].

pub mod error;
pub mod io;
pub mod pipeline;
pub mod report;

pub use error::{Error, Result};
