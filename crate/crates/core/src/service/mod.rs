//! Session state machine, replayable command logs and the TCP server that
//! streams state to operator consoles.
//!
//! Commands are queued and applied at the start of the next tick in arrival
//! order, so a log of `(tick, command)` pairs reproduces a session exactly.

mod replay;
mod server;
mod session;


pub use replay::*;
pub use server::*;
pub use session::*;
