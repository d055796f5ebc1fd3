//! Binary framing: a 12-byte little-endian header (`"OVSM"`, version, type, payload length)
//! followed by the payload. Scalars are f64, ids u32.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::dynamics::SolverConfig;
use crate::types::{BodyId, BodyState, STATE_LEN};

pub const MAGIC: [u8; 4] = *b"OVSM";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 12;
/// Frames larger than this are rejected before allocating.
pub const MAX_PAYLOAD: u32 = 1 << 30;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    Version(u16),
    #[error("unknown message type {0}")]
    UnknownType(u16),
    #[error("frame truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("payload length {0} exceeds limit")]
    TooLarge(u32),
    #[error("{0} trailing payload bytes")]
    Trailing(usize),
    #[error("invalid utf-8 in text field")]
    Utf8,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Error codes carried by [`WireMessage::Error`].
pub mod code {
    pub const UNKNOWN_BODY: u16 = 1;
    pub const INACTIVE_BODY: u16 = 2;
    pub const INVALID_STATE: u16 = 3;
    pub const SOLVER: u16 = 4;
    pub const BUSY: u16 = 5;
    pub const PROTOCOL: u16 = 6;
    pub const SCENE: u16 = 7;
}

#[derive(Clone, Debug, PartialEq)]
pub enum WireMessage {
    Activate { body: BodyId },
    Deactivate { body: BodyId },
    ResetState { body: BodyId, state: BodyState },
    Step,
    StepAck { residual: f64, contacts: u32, states: Vec<(BodyId, BodyState)> },
    GetState { body: BodyId },
    StateReply { body: BodyId, state: BodyState },
    Error { code: u16, text: String },
    Ack,
    /// Several resets in one frame, applied in order.
    ResetBatch { states: Vec<(BodyId, BodyState)> },
    /// Handshake: the worker's id, solver settings and the scene as JSON.
    LoadScene { worker: u32, config: SolverConfig, scene_json: String },
    Shutdown,
}

impl WireMessage {
    pub fn type_code(&self) -> u16 {
        match self {
            WireMessage::Activate { .. } => 1,
            WireMessage::Deactivate { .. } => 2,
            WireMessage::ResetState { .. } => 3,
            WireMessage::Step => 4,
            WireMessage::StepAck { .. } => 5,
            WireMessage::GetState { .. } => 6,
            WireMessage::StateReply { .. } => 7,
            WireMessage::Error { .. } => 8,
            WireMessage::Ack => 9,
            WireMessage::ResetBatch { .. } => 10,
            WireMessage::LoadScene { .. } => 11,
            WireMessage::Shutdown => 12,
        }
    }

    pub fn error(code: u16, text: impl Into<String>) -> Self {
        WireMessage::Error { code, text: text.into() }
    }
}

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_state(out: &mut Vec<u8>, s: &BodyState) {
    for v in s.to_array() {
        put_f64(out, v);
    }
}

fn put_entries(out: &mut Vec<u8>, states: &[(BodyId, BodyState)]) {
    put_u32(out, states.len() as u32);
    for (id, s) in states {
        put_u32(out, id.0);
        put_state(out, s);
    }
}

fn payload(msg: &WireMessage) -> Vec<u8> {
    let mut p = Vec::new();
    match msg {
        WireMessage::Activate { body }
        | WireMessage::Deactivate { body }
        | WireMessage::GetState { body } => put_u32(&mut p, body.0),
        WireMessage::ResetState { body, state } | WireMessage::StateReply { body, state } => {
            put_u32(&mut p, body.0);
            put_state(&mut p, state);
        }
        WireMessage::Step | WireMessage::Ack | WireMessage::Shutdown => {}
        WireMessage::StepAck { residual, contacts, states } => {
            put_f64(&mut p, *residual);
            put_u32(&mut p, *contacts);
            put_entries(&mut p, states);
        }
        WireMessage::Error { code, text } => {
            put_u16(&mut p, *code);
            p.extend_from_slice(text.as_bytes());
        }
        WireMessage::ResetBatch { states } => put_entries(&mut p, states),
        WireMessage::LoadScene { worker, config, scene_json } => {
            put_u32(&mut p, *worker);
            put_u32(&mut p, config.max_iter as u32);
            put_f64(&mut p, config.tol);
            put_f64(&mut p, config.compliance);
            put_f64(&mut p, config.joint_erp);
            put_f64(&mut p, config.contact_erp);
            put_f64(&mut p, config.slop);
            p.push(config.warm_start as u8);
            p.extend_from_slice(scene_json.as_bytes());
        }
    }
    p
}

/// Serializes one message into a complete frame.
pub fn encode(msg: &WireMessage) -> Vec<u8> {
    let body = payload(msg);
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(&MAGIC);
    put_u16(&mut out, VERSION);
    put_u16(&mut out, msg.type_code());
    put_u32(&mut out, body.len() as u32);
    out.extend_from_slice(&body);
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let have = self.buf.len() - self.at;
        if have < n {
            return Err(WireError::Truncated { need: n, have });
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.at..];
        self.at = self.buf.len();
        s
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn body(&mut self) -> Result<BodyId, WireError> {
        self.u32().map(BodyId)
    }

    fn state(&mut self) -> Result<BodyState, WireError> {
        let mut a = [0.0; STATE_LEN];
        for v in &mut a {
            *v = self.f64()?;
        }
        Ok(BodyState::from_array(&a))
    }

    fn entries(&mut self) -> Result<Vec<(BodyId, BodyState)>, WireError> {
        let n = self.u32()? as usize;
        let entry = 4 + 8 * STATE_LEN;
        let have = self.buf.len() - self.at;
        if have < n.saturating_mul(entry) {
            return Err(WireError::Truncated { need: n * entry, have });
        }
        (0..n).map(|_| Ok((self.body()?, self.state()?))).collect()
    }

    fn text(&mut self) -> Result<String, WireError> {
        String::from_utf8(self.rest().to_vec()).map_err(|_| WireError::Utf8)
    }
}

/// Parsed frame header: `(msg_type, payload_len)`.
pub fn decode_header(h: &[u8; HEADER_LEN]) -> Result<(u16, u32), WireError> {
    let magic: [u8; 4] = h[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    let version = u16::from_le_bytes([h[4], h[5]]);
    if version != VERSION {
        return Err(WireError::Version(version));
    }
    let ty = u16::from_le_bytes([h[6], h[7]]);
    let len = u32::from_le_bytes(h[8..12].try_into().unwrap());
    if len > MAX_PAYLOAD {
        return Err(WireError::TooLarge(len));
    }
    Ok((ty, len))
}

/// Parses a payload of the given type. The payload must be consumed exactly.
pub fn decode_payload(ty: u16, payload: &[u8]) -> Result<WireMessage, WireError> {
    let mut c = Cursor { buf: payload, at: 0 };
    let msg = match ty {
        1 => WireMessage::Activate { body: c.body()? },
        2 => WireMessage::Deactivate { body: c.body()? },
        3 => WireMessage::ResetState { body: c.body()?, state: c.state()? },
        4 => WireMessage::Step,
        5 => WireMessage::StepAck { residual: c.f64()?, contacts: c.u32()?, states: c.entries()? },
        6 => WireMessage::GetState { body: c.body()? },
        7 => WireMessage::StateReply { body: c.body()?, state: c.state()? },
        8 => WireMessage::Error { code: c.u16()?, text: c.text()? },
        9 => WireMessage::Ack,
        10 => WireMessage::ResetBatch { states: c.entries()? },
        11 => {
            let worker = c.u32()?;
            let config = SolverConfig {
                max_iter: c.u32()? as usize,
                tol: c.f64()?,
                compliance: c.f64()?,
                joint_erp: c.f64()?,
                contact_erp: c.f64()?,
                slop: c.f64()?,
                warm_start: c.u8()? != 0,
            };
            WireMessage::LoadScene { worker, config, scene_json: c.text()? }
        }
        12 => WireMessage::Shutdown,
        other => return Err(WireError::UnknownType(other)),
    };
    let left = payload.len() - c.at;
    if left != 0 {
        return Err(WireError::Trailing(left));
    }
    Ok(msg)
}

/// Decodes one frame from the front of `bytes`, returning the message and bytes consumed.
pub fn decode(bytes: &[u8]) -> Result<(WireMessage, usize), WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::Truncated { need: HEADER_LEN, have: bytes.len() });
    }
    let (ty, len) = decode_header(bytes[..HEADER_LEN].try_into().unwrap())?;
    let end = HEADER_LEN + len as usize;
    if bytes.len() < end {
        return Err(WireError::Truncated { need: end, have: bytes.len() });
    }
    Ok((decode_payload(ty, &bytes[HEADER_LEN..end])?, end))
}

pub fn write_frame(w: &mut impl Write, msg: &WireMessage) -> Result<(), WireError> {
    w.write_all(&encode(msg))?;
    Ok(())
}

/// Reads exactly one frame. A clean EOF before the header surfaces as `UnexpectedEof`.
pub fn read_frame(r: &mut impl Read) -> Result<WireMessage, WireError> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)?;
    let (ty, len) = decode_header(&header)?;
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)?;
    decode_payload(ty, &payload)
}
