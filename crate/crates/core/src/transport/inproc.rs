use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use super::{Connection, TransportError, WireMessage};

/// Channel-backed connection. Messages travel as values; nothing is serialized.
#[derive(Debug)]
pub struct InProcConnection {
    tx: Sender<WireMessage>,
    rx: Receiver<WireMessage>,
}

/// Two connected ends.
pub fn inproc_pair() -> (InProcConnection, InProcConnection) {
    let (a_tx, b_rx) = channel();
    let (b_tx, a_rx) = channel();
    (InProcConnection { tx: a_tx, rx: a_rx }, InProcConnection { tx: b_tx, rx: b_rx })
}

impl Connection for InProcConnection {
    fn send(&mut self, msg: WireMessage) -> Result<(), TransportError> {
        self.tx.send(msg).map_err(|_| TransportError::Disconnected)
    }

    fn recv(&mut self, timeout: Option<Duration>) -> Result<WireMessage, TransportError> {
        match timeout {
            None => self.rx.recv().map_err(|_| TransportError::Disconnected),
            Some(t) => self.rx.recv_timeout(t).map_err(|e| match e {
                RecvTimeoutError::Timeout => TransportError::Timeout(t),
                RecvTimeoutError::Disconnected => TransportError::Disconnected,
            }),
        }
    }
}
