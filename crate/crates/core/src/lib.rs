//! Structure-consistent restoration of cataract fundus images.
//!
//! The crate covers the whole pipeline: cataract synthesis from clear
//! fundus photographs ([`degrade`]), high-frequency component extraction
//! ([`imaging`]), a small reverse-mode autodiff engine ([`tensor`]), the
//! three-branch encoder/decoder network ([`network`]), its training loop
//! ([`training`]) and full-reference quality metrics ([`metrics`]).

pub mod config;
pub mod degrade;
pub mod error;
pub mod imaging;
pub mod metrics;
pub mod network;
pub mod parallel;
pub mod phantom;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
