//! Coordinator-worker message delivery: framing plus in-process and TCP connections.

mod inproc;
mod tcp;
pub mod wire;

use std::io;
use std::time::Duration;

use thiserror::Error;

pub use inproc::{inproc_pair, InProcConnection};
pub use tcp::{TcpConnection, DEFAULT_PORT};
pub use wire::{decode, encode, WireError, WireMessage};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("peer disconnected")]
    Disconnected,
    #[error("timed out after {0:?}")]
    Timeout(Duration),
    #[error(transparent)]
    Wire(WireError),
    #[error(transparent)]
    Io(io::Error),
}

impl From<WireError> for TransportError {
    fn from(e: WireError) -> Self {
        match e {
            WireError::Io(io) => io.into(),
            other => TransportError::Wire(other),
        }
    }
}

impl From<io::Error> for TransportError {
    fn from(e: io::Error) -> Self {
        use io::ErrorKind::*;
        match e.kind() {
            UnexpectedEof | ConnectionReset | ConnectionAborted | BrokenPipe | NotConnected => {
                TransportError::Disconnected
            }
            _ => TransportError::Io(e),
        }
    }
}

/// One end of a FIFO, reliable, bidirectional message link.
pub trait Connection: Send {
    fn send(&mut self, msg: WireMessage) -> Result<(), TransportError>;

    /// Blocks for the next message, up to `timeout` if given.
    fn recv(&mut self, timeout: Option<Duration>) -> Result<WireMessage, TransportError>;
}

impl Connection for Box<dyn Connection> {
    fn send(&mut self, msg: WireMessage) -> Result<(), TransportError> {
        (**self).send(msg)
    }

    fn recv(&mut self, timeout: Option<Duration>) -> Result<WireMessage, TransportError> {
        (**self).recv(timeout)
    }
}
