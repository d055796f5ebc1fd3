use std::io::{BufReader, BufWriter, ErrorKind, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use super::wire::{read_frame, write_frame, WireError};
use super::{Connection, TransportError, WireMessage};

pub const DEFAULT_PORT: u16 = 7401;

/// Framed connection over a TCP stream.
#[derive(Debug)]
pub struct TcpConnection {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    read_timeout: Option<Duration>,
}

impl TcpConnection {
    pub fn new(stream: TcpStream) -> std::io::Result<Self> {
        stream.set_nodelay(true)?;
        stream.set_read_timeout(None)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            read_timeout: None,
        })
    }

    pub fn connect(addr: impl ToSocketAddrs) -> std::io::Result<Self> {
        Self::new(TcpStream::connect(addr)?)
    }

    pub fn peer(&self) -> Option<std::net::SocketAddr> {
        self.writer.get_ref().peer_addr().ok()
    }
}

impl Connection for TcpConnection {
    fn send(&mut self, msg: WireMessage) -> Result<(), TransportError> {
        write_frame(&mut self.writer, &msg)?;
        self.writer.flush()?;
        Ok(())
    }

    fn recv(&mut self, timeout: Option<Duration>) -> Result<WireMessage, TransportError> {
        if timeout != self.read_timeout {
            self.reader.get_ref().set_read_timeout(timeout)?;
            self.read_timeout = timeout;
        }
        match read_frame(&mut self.reader) {
            Ok(m) => Ok(m),
            Err(WireError::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                Err(TransportError::Timeout(timeout.unwrap_or_default()))
            }
            Err(e) => Err(e.into()),
        }
    }
}
