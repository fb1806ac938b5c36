pub mod audiofront;
pub mod bootstrap;
pub mod captioner;
pub mod checkpoint;
pub mod contrastive;
pub mod diffcore;
pub mod encoders;
pub mod error;
pub mod evalsuite;
pub mod pipeline;
pub mod seeding;
pub mod textproc;
pub mod toygen;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
