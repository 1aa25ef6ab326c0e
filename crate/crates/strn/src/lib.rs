//! File formats, sequence directories and the `strn` command line on top of
//! `strn-core`.

pub mod cli;
pub mod dataio;
pub mod error;
pub mod features;
pub mod seqdir;
pub mod weights;

pub use error::{Error, Result};
