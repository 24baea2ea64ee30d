//! Persistence, HTTP API and command-line tools around `hypersem-core`.
//!
//! * [`store`] keeps boundaries as JSON files, lossless at full double
//!   precision.
//! * [`session`] tracks a latent code under edit and the requests applied
//!   to it.
//! * [`api`] serves the generator, boundaries and a session over HTTP.
//! * [`cli`] implements the `hypersem` binary.

pub mod api;
pub mod cli;
pub mod json;
pub mod session;
pub mod store;

pub use session::{ManipulationRequest, SessionState};
pub use store::BoundaryStore;
