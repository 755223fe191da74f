pub mod admm;
pub mod bench;
pub mod error;
pub mod jgl;
pub mod linalg;
pub mod oracle;
pub mod pipeline;
pub mod roc;
pub mod sim;

pub use error::{Error, Result};
