mod binio;
pub mod config;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod head;
pub mod numerics;
pub mod semantics;

pub use error::{Result, VictrError};
