//! Game service: sessions of human-vs-engine play over HTTP with a
//! server-push event stream. The wire protocol is described in
//! `PROTOCOL.md` next to this crate's manifest.

pub mod http;
pub mod session;
pub mod view;

pub use http::{router, serve};
pub use session::{Checkpoints, Manager, SeatKind, ServiceError, SessionSettings};
pub use view::SCHEMA_VERSION;
