//! Live teleoperation session: a fixed-tick simulator loop served over a
//! WebSocket at `/session`, with on-demand recording into episodes.

pub mod protocol;
pub mod server;

pub use protocol::{decode_msg, encode_msg, DecodeError, SessionMsg, PROTOCOL_VERSION};
pub use server::{run_session, Session, SessionConfig, SessionError, SESSION_PATH};
