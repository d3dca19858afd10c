//! Wire protocol for out-of-process SUTs.
//!
//! Every frame is `u32 LE length | u8 type | payload`, where `length` counts
//! the type byte plus the payload. All integers are little-endian.
//!
//! | code | type     | payload                                                        |
//! |------|----------|----------------------------------------------------------------|
//! | 0x01 | HELLO    | `"RTBA"`, u16 version                                          |
//! | 0x02 | CONFIG   | u8 mode (0 perf, 1 acc), u32 inputs/query, u32 store size, u32 sample bytes, u16 name len, name |
//! | 0x03 | LOAD     | u32 index, u32 len, sample bytes                               |
//! | 0x04 | LOADED   | u32 index                                                      |
//! | 0x05 | ISSUE    | u64 query id, u32 n, n x u32 sample index                      |
//! | 0x06 | COMPLETE | u64 query id, u32 len, response bytes                          |
//! | 0x07 | FLUSH    | empty                                                          |
//! | 0x08 | BYE      | UTF-8 reason, possibly empty                                   |
//!
//! Session: harness HELLO, SUT HELLO, harness CONFIG, one LOAD per sample
//! each answered by LOADED, then pipelined ISSUEs answered by COMPLETEs in any
//! order. FLUSH is echoed once every outstanding COMPLETE has been sent. BYE
//! from the harness is echoed before the SUT closes; a SUT that rejects a
//! request sends BYE with the reason and closes.

pub mod frame;
pub mod remote;
pub mod stub;

pub use frame::{
    decode_frame, encode_frame, read_frame, write_frame, FrameDecoder, FrameError, Message,
    MessageType, WireConfig,
};
pub use remote::RemoteSut;
pub use stub::StubServer;

pub const MAGIC: [u8; 4] = *b"RTBA";
pub const PROTOCOL_VERSION: u16 = 1;
/// Upper bound on `length`.
pub const MAX_FRAME_LEN: u32 = 64 * 1024 * 1024;
/// Largest sample that fits one LOAD frame.
pub const MAX_SAMPLE_BYTES: usize = MAX_FRAME_LEN as usize - 1 - 8;
