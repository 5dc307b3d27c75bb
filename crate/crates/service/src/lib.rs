//! One simulation session per client, driven by JSON commands over a
//! length-prefixed socket stream. See `protocol.md` for the wire format.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{FrameMessage, FramePayload, Phase, Request, Response};
pub use server::{serve, spawn_connection, LatestSlot};
pub use session::{Session, Snapshot};
