pub mod acquisition;
pub mod cc;
pub mod config;
pub mod dataset;
pub mod entity;
pub mod error;
pub mod evaluation;
pub mod objective;
pub mod oracle;
pub mod raster;
pub mod selection;
pub mod superpixel;
pub mod trainer;

pub use error::{EsaError, Result};
