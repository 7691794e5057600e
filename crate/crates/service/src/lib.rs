//! HTTP labeling sessions. A human answers the queries of a selection
//! policy one at a time; each answer updates the posterior and yields the
//! next query. Sessions are checkpointed as transcripts and resumed by
//! replay.

pub mod api;
pub mod error;
pub mod session;
pub mod store;

pub use api::{router, serve};
pub use error::ServiceError;
pub use session::{replay_selection, Session, SessionStatus, Transcript, TranscriptStep};
pub use store::{AppState, Collection, CollectionSource};
