use std::io::{self, Read, Write};

use thiserror::Error;

use super::{MAGIC, MAX_FRAME_LEN};
use crate::profiles::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageType {
    Hello = 0x01,
    Config = 0x02,
    Load = 0x03,
    Loaded = 0x04,
    Issue = 0x05,
    Complete = 0x06,
    Flush = 0x07,
    Bye = 0x08,
}

impl TryFrom<u8> for MessageType {
    type Error = FrameError;

    fn try_from(code: u8) -> Result<Self, FrameError> {
        Ok(match code {
            0x01 => MessageType::Hello,
            0x02 => MessageType::Config,
            0x03 => MessageType::Load,
            0x04 => MessageType::Loaded,
            0x05 => MessageType::Issue,
            0x06 => MessageType::Complete,
            0x07 => MessageType::Flush,
            0x08 => MessageType::Bye,
            other => return Err(FrameError::UnknownType(other)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireConfig {
    pub mode: Mode,
    pub inputs_per_query: u32,
    pub store_size: u32,
    pub sample_bytes: u32,
    pub profile: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Hello { version: u16 },
    Config(WireConfig),
    Load { index: u32, data: Vec<u8> },
    Loaded { index: u32 },
    Issue { query_id: u64, indices: Vec<u32> },
    Complete { query_id: u64, blob: Vec<u8> },
    Flush,
    Bye { reason: String },
}

impl Message {
    pub fn message_type(&self) -> MessageType {
        match self {
            Message::Hello { .. } => MessageType::Hello,
            Message::Config(_) => MessageType::Config,
            Message::Load { .. } => MessageType::Load,
            Message::Loaded { .. } => MessageType::Loaded,
            Message::Issue { .. } => MessageType::Issue,
            Message::Complete { .. } => MessageType::Complete,
            Message::Flush => MessageType::Flush,
            Message::Bye { .. } => MessageType::Bye,
        }
    }
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("truncated frame: need {needed} more bytes")]
    Truncated { needed: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("frame length {0} exceeds the 64 MiB cap")]
    TooLarge(u32),
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("bad HELLO magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("malformed payload: {0}")]
    BadPayload(String),
    #[error("connection closed")]
    Closed,
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn payload(msg: &Message) -> Vec<u8> {
    let mut p = Vec::new();
    match msg {
        Message::Hello { version } => {
            p.extend_from_slice(&MAGIC);
            p.extend_from_slice(&version.to_le_bytes());
        }
        Message::Config(c) => {
            p.push(match c.mode {
                Mode::Performance => 0,
                Mode::Accuracy => 1,
            });
            p.extend_from_slice(&c.inputs_per_query.to_le_bytes());
            p.extend_from_slice(&c.store_size.to_le_bytes());
            p.extend_from_slice(&c.sample_bytes.to_le_bytes());
            p.extend_from_slice(&(c.profile.len() as u16).to_le_bytes());
            p.extend_from_slice(c.profile.as_bytes());
        }
        Message::Load { index, data } => {
            p.extend_from_slice(&index.to_le_bytes());
            p.extend_from_slice(&(data.len() as u32).to_le_bytes());
            p.extend_from_slice(data);
        }
        Message::Loaded { index } => p.extend_from_slice(&index.to_le_bytes()),
        Message::Issue { query_id, indices } => {
            p.extend_from_slice(&query_id.to_le_bytes());
            p.extend_from_slice(&(indices.len() as u32).to_le_bytes());
            for i in indices {
                p.extend_from_slice(&i.to_le_bytes());
            }
        }
        Message::Complete { query_id, blob } => {
            p.extend_from_slice(&query_id.to_le_bytes());
            p.extend_from_slice(&(blob.len() as u32).to_le_bytes());
            p.extend_from_slice(blob);
        }
        Message::Flush => {}
        Message::Bye { reason } => p.extend_from_slice(reason.as_bytes()),
    }
    p
}

pub fn encode_frame(msg: &Message) -> Vec<u8> {
    let body = payload(msg);
    let mut out = Vec::with_capacity(5 + body.len());
    out.extend_from_slice(&(body.len() as u32 + 1).to_le_bytes());
    out.push(msg.message_type() as u8);
    out.extend_from_slice(&body);
    out
}

/// Little-endian cursor that reports short payloads as length mismatches.
struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FrameError> {
        if self.buf.len() < n {
            return Err(FrameError::LengthMismatch(format!(
                "{what} needs {n} bytes, {} left",
                self.buf.len()
            )));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u16(&mut self, what: &str) -> Result<u16, FrameError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, FrameError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, FrameError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn finish(self, what: &str) -> Result<(), FrameError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(FrameError::LengthMismatch(format!(
                "{} trailing bytes after {what}",
                self.buf.len()
            )))
        }
    }
}

fn parse_body(kind: MessageType, body: &[u8]) -> Result<Message, FrameError> {
    let mut c = Cursor { buf: body };
    let msg = match kind {
        MessageType::Hello => {
            let magic: [u8; 4] = c.take(4, "magic")?.try_into().unwrap();
            if magic != MAGIC {
                return Err(FrameError::BadMagic(magic));
            }
            Message::Hello {
                version: c.u16("version")?,
            }
        }
        MessageType::Config => {
            let mode = match c.take(1, "mode")?[0] {
                0 => Mode::Performance,
                1 => Mode::Accuracy,
                m => return Err(FrameError::BadPayload(format!("mode byte {m}"))),
            };
            let inputs_per_query = c.u32("inputs_per_query")?;
            let store_size = c.u32("store_size")?;
            let sample_bytes = c.u32("sample_bytes")?;
            let len = c.u16("profile length")? as usize;
            let profile = String::from_utf8(c.take(len, "profile")?.to_vec())
                .map_err(|_| FrameError::BadPayload("profile is not UTF-8".into()))?;
            Message::Config(WireConfig {
                mode,
                inputs_per_query,
                store_size,
                sample_bytes,
                profile,
            })
        }
        MessageType::Load => {
            let index = c.u32("index")?;
            let len = c.u32("sample length")? as usize;
            Message::Load {
                index,
                data: c.take(len, "sample")?.to_vec(),
            }
        }
        MessageType::Loaded => Message::Loaded {
            index: c.u32("index")?,
        },
        MessageType::Issue => {
            let query_id = c.u64("query id")?;
            let n = c.u32("index count")? as usize;
            let raw = c.take(n.checked_mul(4).ok_or_else(|| {
                FrameError::LengthMismatch("index count overflows".into())
            })?, "indices")?;
            Message::Issue {
                query_id,
                indices: raw
                    .chunks_exact(4)
                    .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            }
        }
        MessageType::Complete => {
            let query_id = c.u64("query id")?;
            let len = c.u32("blob length")? as usize;
            Message::Complete {
                query_id,
                blob: c.take(len, "blob")?.to_vec(),
            }
        }
        MessageType::Flush => Message::Flush,
        MessageType::Bye => {
            let reason = String::from_utf8_lossy(c.take(body.len(), "reason")?).into_owned();
            Message::Bye { reason }
        }
    };
    c.finish("payload")?;
    Ok(msg)
}

fn check_length(length: u32) -> Result<(), FrameError> {
    if length == 0 {
        return Err(FrameError::LengthMismatch(
            "length 0 leaves no room for the type byte".into(),
        ));
    }
    if length > MAX_FRAME_LEN {
        return Err(FrameError::TooLarge(length));
    }
    Ok(())
}

/// Decodes the first frame in `buf`, returning it with the bytes consumed.
pub fn decode_frame(buf: &[u8]) -> Result<(Message, usize), FrameError> {
    if buf.len() < 4 {
        return Err(FrameError::Truncated {
            needed: 4 - buf.len(),
        });
    }
    let length = u32::from_le_bytes(buf[..4].try_into().unwrap());
    check_length(length)?;
    let total = 4 + length as usize;
    if buf.len() < total {
        return Err(FrameError::Truncated {
            needed: total - buf.len(),
        });
    }
    let kind = MessageType::try_from(buf[4])?;
    Ok((parse_body(kind, &buf[5..total])?, total))
}

/// Reads one frame. A clean end of stream before the first byte is
/// [`FrameError::Closed`].
pub fn read_frame<R: Read>(r: &mut R) -> Result<Message, FrameError> {
    let mut len_buf = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len_buf[got..]) {
            Ok(0) if got == 0 => return Err(FrameError::Closed),
            Ok(0) => return Err(FrameError::Truncated { needed: 4 - got }),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let length = u32::from_le_bytes(len_buf);
    check_length(length)?;
    let mut body = vec![0u8; length as usize];
    r.read_exact(&mut body).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            FrameError::Truncated { needed: length as usize }
        } else {
            e.into()
        }
    })?;
    let kind = MessageType::try_from(body[0])?;
    parse_body(kind, &body[1..])
}

pub fn write_frame<W: Write>(w: &mut W, msg: &Message) -> io::Result<()> {
    w.write_all(&encode_frame(msg))?;
    w.flush()
}

/// Incremental decoder for arbitrarily chunked input.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete frame, `Ok(None)` if more bytes are needed.
    pub fn next_message(&mut self) -> Result<Option<Message>, FrameError> {
        match decode_frame(&self.buf) {
            Ok((msg, used)) => {
                self.buf.drain(..used);
                Ok(Some(msg))
            }
            Err(FrameError::Truncated { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn pending_bytes(&self) -> usize {
        self.buf.len()
    }
}
