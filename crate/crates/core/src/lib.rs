//! Reporting engine for end-to-end encrypted messaging.
//!
//! Reporters decide what evidence leaves their device, at which level of
//! detail, and who may read it. Moderators work from minimized, attested
//! bundles and ask for more through audited disclosure requests.

pub mod access;
pub mod audit;
pub mod auth;
pub mod bundle;
pub mod disclosure;
pub mod engine;
pub mod ephemeral;
pub mod error;
pub mod fixtures;
pub mod lifecycle;
pub mod minimize;
pub mod model;
pub mod scope;

pub use engine::{Engine, EngineSettings, EngineState};
pub use error::EngineError;
