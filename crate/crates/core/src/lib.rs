pub mod cli;
pub mod coincidence;
pub mod dispersion;
pub mod error;
pub mod experiment;
pub mod fiber;
pub mod io;
pub mod multilayer;
pub mod plot;
pub mod presets;
pub mod reconstruct;
pub mod spdc;
pub mod spectrum;
pub mod tagsim;

pub use error::{Error, Result};
