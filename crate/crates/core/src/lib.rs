pub mod backbone;
pub mod config;
pub mod data;
pub mod error;
pub mod ndarr;
pub mod params;
pub mod rdwt;
pub mod train;
pub mod registry;

pub use error::{Error, Result};
pub use ndarr::Mode;
