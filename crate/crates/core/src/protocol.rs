//! The framed stdio protocol spoken by `flowsteer edit-server`.
//!
//! Every frame is a little-endian `u32` byte length followed by that many
//! bytes of body:
//!
//! ```text
//! request / response   u8 type (1 | 2), u32 layer, u32 position, u32 dim, f32[dim]
//! error                u8 type (255),   u32 layer, u32 position, u32 code, utf-8 message
//! ```
//!
//! The length counts the body only, not the prefix itself. A malformed frame
//! gets an error frame in reply and the server keeps reading, since the
//! length prefix is enough to resynchronize.

use std::io::{self, Read, Write};

use crate::model::Site;
use crate::Error;

pub const TYPE_REQUEST: u8 = 1;
pub const TYPE_RESPONSE: u8 = 2;
pub const TYPE_ERROR: u8 = 255;

/// Bodies longer than this are skipped without being buffered.
pub const MAX_FRAME_BYTES: u32 = 64 << 20;

const HEADER_BYTES: usize = 1 + 4 + 4 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum ErrorCode {
    Dim = 1,
    Type = 2,
    Length = 3,
    Layer = 4,
    Numeric = 5,
    Internal = 6,
}

impl ErrorCode {
    pub fn from_u32(code: u32) -> Option<Self> {
        Some(match code {
            1 => Self::Dim,
            2 => Self::Type,
            3 => Self::Length,
            4 => Self::Layer,
            5 => Self::Numeric,
            6 => Self::Internal,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Request { site: Site, payload: Vec<f32> },
    Response { site: Site, payload: Vec<f32> },
    Error { site: Site, code: ErrorCode, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameError {
    pub site: Site,
    pub code: ErrorCode,
    pub message: String,
}

impl FrameError {
    fn new(site: Site, code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            site,
            code,
            message: message.into(),
        }
    }

    pub fn into_frame(self) -> Frame {
        Frame::Error {
            site: self.site,
            code: self.code,
            message: self.message,
        }
    }
}

pub fn encode(frame: &Frame) -> Vec<u8> {
    let (kind, site) = match frame {
        Frame::Request { site, .. } => (TYPE_REQUEST, site),
        Frame::Response { site, .. } => (TYPE_RESPONSE, site),
        Frame::Error { site, .. } => (TYPE_ERROR, site),
    };
    let mut body = Vec::with_capacity(HEADER_BYTES);
    body.push(kind);
    body.extend_from_slice(&site.layer.to_le_bytes());
    body.extend_from_slice(&site.position.to_le_bytes());
    match frame {
        Frame::Request { payload, .. } | Frame::Response { payload, .. } => {
            body.extend_from_slice(&(payload.len() as u32).to_le_bytes());
            for x in payload {
                body.extend_from_slice(&x.to_le_bytes());
            }
        }
        Frame::Error { code, message, .. } => {
            body.extend_from_slice(&(*code as u32).to_le_bytes());
            body.extend_from_slice(message.as_bytes());
        }
    }
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
    out
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes(b.try_into().expect("4 bytes"))
}

/// Decodes one frame body (everything after the length prefix).
pub fn decode(body: &[u8]) -> Result<Frame, FrameError> {
    if body.len() < HEADER_BYTES {
        return Err(FrameError::new(
            Site::default(),
            ErrorCode::Length,
            format!("frame body of {} bytes is shorter than the {HEADER_BYTES}-byte header", body.len()),
        ));
    }
    let kind = body[0];
    let site = Site::new(le_u32(&body[1..5]), le_u32(&body[5..9]));
    let field = le_u32(&body[9..13]);
    let rest = &body[HEADER_BYTES..];
    match kind {
        TYPE_REQUEST | TYPE_RESPONSE => {
            let dim = field as usize;
            if rest.len() != dim * 4 {
                return Err(FrameError::new(
                    site,
                    ErrorCode::Length,
                    format!("dim {dim} needs {} payload bytes, frame has {}", dim * 4, rest.len()),
                ));
            }
            let payload = rest.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            Ok(if kind == TYPE_REQUEST {
                Frame::Request { site, payload }
            } else {
                Frame::Response { site, payload }
            })
        }
        TYPE_ERROR => {
            let code = ErrorCode::from_u32(field)
                .ok_or_else(|| FrameError::new(site, ErrorCode::Type, format!("unknown error code {field}")))?;
            Ok(Frame::Error {
                site,
                code,
                message: String::from_utf8_lossy(rest).into_owned(),
            })
        }
        other => Err(FrameError::new(site, ErrorCode::Type, format!("unknown frame type {other}"))),
    }
}

/// What [`read_frame`] found on the stream.
#[derive(Debug)]
pub enum ReadOutcome {
    Body(Vec<u8>),
    /// A frame longer than [`MAX_FRAME_BYTES`]; its body was discarded.
    Oversized(u32),
    /// The stream ended in the middle of a frame.
    Truncated,
    Eof,
}

pub fn read_frame<R: Read>(input: &mut R) -> io::Result<ReadOutcome> {
    let mut prefix = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match input.read(&mut prefix[got..]) {
            Ok(0) => return Ok(if got == 0 { ReadOutcome::Eof } else { ReadOutcome::Truncated }),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let len = u32::from_le_bytes(prefix);
    if len > MAX_FRAME_BYTES {
        let skipped = io::copy(&mut input.take(len as u64), &mut io::sink())?;
        return Ok(if skipped < len as u64 {
            ReadOutcome::Truncated
        } else {
            ReadOutcome::Oversized(len)
        });
    }
    let mut body = vec![0u8; len as usize];
    match input.read_exact(&mut body) {
        Ok(()) => Ok(ReadOutcome::Body(body)),
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Ok(ReadOutcome::Truncated),
        Err(e) => Err(e),
    }
}

pub fn write_frame<W: Write>(out: &mut W, frame: &Frame) -> io::Result<()> {
    out.write_all(&encode(frame))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServeStats {
    pub responses: u64,
    pub errors: u64,
}

/// Limits a request must satisfy before it reaches the handler.
#[derive(Debug, Clone, Copy)]
pub struct ServerLimits {
    pub dim: usize,
    pub max_layers: u32,
}

fn code_for(err: &Error) -> ErrorCode {
    match err {
        Error::Numeric { .. } => ErrorCode::Numeric,
        Error::Shape { .. } | Error::InvalidDimension(_) => ErrorCode::Dim,
        _ => ErrorCode::Internal,
    }
}

/// Answers request frames one at a time, in order, until end of input. The
/// writer is flushed after every reply so a lockstep client never stalls.
pub fn serve<R, W, H>(input: &mut R, output: &mut W, limits: ServerLimits, mut handler: H) -> io::Result<ServeStats>
where
    R: Read,
    W: Write,
    H: FnMut(Site, &[f64]) -> crate::Result<Vec<f64>>,
{
    let mut stats = ServeStats::default();
    loop {
        let reply = match read_frame(input)? {
            ReadOutcome::Eof => break,
            ReadOutcome::Truncated => {
                let e = FrameError::new(Site::default(), ErrorCode::Length, "input ended mid-frame");
                write_frame(output, &e.into_frame())?;
                output.flush()?;
                stats.errors += 1;
                break;
            }
            ReadOutcome::Oversized(len) => Err(FrameError::new(
                Site::default(),
                ErrorCode::Length,
                format!("frame of {len} bytes exceeds the {MAX_FRAME_BYTES}-byte limit"),
            )),
            ReadOutcome::Body(body) => answer(&body, limits, &mut handler),
        };
        match reply {
            Ok(frame) => {
                write_frame(output, &frame)?;
                stats.responses += 1;
            }
            Err(e) => {
                write_frame(output, &e.into_frame())?;
                stats.errors += 1;
            }
        }
        output.flush()?;
    }
    Ok(stats)
}

fn answer<H>(body: &[u8], limits: ServerLimits, handler: &mut H) -> Result<Frame, FrameError>
where
    H: FnMut(Site, &[f64]) -> crate::Result<Vec<f64>>,
{
    let (site, payload) = match decode(body)? {
        Frame::Request { site, payload } => (site, payload),
        Frame::Response { site, .. } | Frame::Error { site, .. } => {
            return Err(FrameError::new(site, ErrorCode::Type, "server only accepts request frames"))
        }
    };
    if payload.is_empty() || payload.len() != limits.dim {
        return Err(FrameError::new(
            site,
            ErrorCode::Dim,
            format!("expected dim {}, got {}", limits.dim, payload.len()),
        ));
    }
    if site.layer >= limits.max_layers {
        return Err(FrameError::new(
            site,
            ErrorCode::Layer,
            format!("layer {} outside the model's {} layers", site.layer, limits.max_layers),
        ));
    }
    if payload.iter().any(|x| !x.is_finite()) {
        return Err(FrameError::new(site, ErrorCode::Numeric, "non-finite payload"));
    }
    let a: Vec<f64> = payload.iter().map(|&x| x as f64).collect();
    let out = handler(site, &a).map_err(|e| FrameError::new(site, code_for(&e), e.to_string()))?;
    Ok(Frame::Response {
        site,
        payload: out.iter().map(|&x| x as f32).collect(),
    })
}
