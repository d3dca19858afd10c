//! Harness-side client for SUTs behind a stream socket.
//!
//! `issue_ns` is taken by the engine immediately before the ISSUE frame is
//! written and `completion_ns` when a COMPLETE frame has been read in full,
//! so transport time counts as SUT latency.

use std::io::{BufReader, BufWriter, Write};
use std::net::TcpStream;
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;

use super::frame::{read_frame, write_frame, FrameError, Message, WireConfig};
use super::PROTOCOL_VERSION;
use crate::engine::Query;
use crate::store::SampleStore;
use crate::sut::{CompletionSink, SutContract, SutError, SutRunConfig};

#[derive(Default)]
struct Shared {
    sink: Option<CompletionSink>,
    outstanding: u64,
    flush_acks: u64,
    bye: bool,
    closed: Option<String>,
}

struct Connection {
    writer: BufWriter<TcpStream>,
    reader_stream: Option<TcpStream>,
    state: Arc<(Mutex<Shared>, Condvar)>,
    reader: Option<JoinHandle<()>>,
}

impl Connection {
    fn send(&mut self, msg: &Message) -> Result<(), SutError> {
        write_frame(&mut self.writer, msg).map_err(SutError::Io)
    }

    fn closed_reason(&self) -> Option<String> {
        self.state.0.lock().unwrap().closed.clone()
    }
}

pub struct RemoteSut {
    addr: String,
    conn: Option<Connection>,
    loaded: Option<Vec<bool>>,
}

fn protocol(e: FrameError) -> SutError {
    match e {
        FrameError::Io(io) => SutError::Io(io),
        other => SutError::Protocol(other.to_string()),
    }
}

impl RemoteSut {
    /// `addr` is `host:port`; nothing is connected until `configure`.
    pub fn new(addr: impl Into<String>) -> Self {
        Self {
            addr: addr.into(),
            conn: None,
            loaded: None,
        }
    }

    fn disconnect(&mut self) {
        if let Some(mut conn) = self.conn.take() {
            let _ = conn.send(&Message::Bye {
                reason: String::new(),
            });
            let _ = conn.writer.get_ref().shutdown(std::net::Shutdown::Write);
            if let Some(h) = conn.reader.take() {
                let _ = h.join();
            }
        }
        self.loaded = None;
    }

    fn spawn_reader(conn: &mut Connection) {
        let Some(stream) = conn.reader_stream.take() else {
            return;
        };
        let state = Arc::clone(&conn.state);
        conn.reader = Some(std::thread::spawn(move || {
            let mut r = BufReader::new(stream);
            let (lock, cv) = &*state;
            loop {
                let msg = read_frame(&mut r);
                let mut st = lock.lock().unwrap();
                let stop = match msg {
                    Ok(Message::Complete { query_id, blob }) => {
                        match &st.sink {
                            Some(sink) => sink.complete(query_id, blob),
                            None => {
                                st.closed = Some(format!("COMPLETE {query_id} before any ISSUE"));
                            }
                        }
                        st.outstanding = st.outstanding.saturating_sub(1);
                        st.closed.is_some()
                    }
                    Ok(Message::Flush) => {
                        st.flush_acks += 1;
                        false
                    }
                    Ok(Message::Bye { reason }) => {
                        st.bye = true;
                        if !reason.is_empty() {
                            st.closed = Some(reason);
                        } else if st.outstanding > 0 {
                            st.closed = Some("SUT said BYE with queries outstanding".into());
                        } else {
                            st.closed = Some("SUT closed the session".into());
                        }
                        true
                    }
                    Ok(other) => {
                        st.closed = Some(format!("unexpected {:?} from SUT", other.message_type()));
                        true
                    }
                    Err(FrameError::Closed) => {
                        st.closed.get_or_insert_with(|| "connection closed".into());
                        true
                    }
                    Err(e) => {
                        st.closed = Some(e.to_string());
                        true
                    }
                };
                if stop {
                    if !st.bye || st.outstanding > 0 {
                        if let (Some(sink), Some(reason)) = (&st.sink, &st.closed) {
                            sink.fail(format!("remote SUT: {reason}"));
                        }
                    }
                    cv.notify_all();
                    return;
                }
                cv.notify_all();
            }
        }));
    }
}

impl Drop for RemoteSut {
    fn drop(&mut self) {
        self.disconnect();
    }
}

impl SutContract for RemoteSut {
    fn name(&self) -> &str {
        &self.addr
    }

    fn configure(&mut self, config: &SutRunConfig) -> Result<(), SutError> {
        self.disconnect();
        let stream = TcpStream::connect(&self.addr)?;
        stream.set_nodelay(true)?;
        let mut reader = stream.try_clone()?;
        let mut conn = Connection {
            writer: BufWriter::new(stream),
            reader_stream: None,
            state: Arc::default(),
            reader: None,
        };
        conn.send(&Message::Hello {
            version: PROTOCOL_VERSION,
        })?;
        match read_frame(&mut reader).map_err(protocol)? {
            Message::Hello { version } if version == PROTOCOL_VERSION => {}
            Message::Hello { version } => {
                return Err(SutError::Protocol(format!(
                    "SUT speaks protocol version {version}, harness speaks {PROTOCOL_VERSION}"
                )))
            }
            Message::Bye { reason } => return Err(SutError::Remote(reason)),
            other => {
                return Err(SutError::Protocol(format!(
                    "expected HELLO, got {:?}",
                    other.message_type()
                )))
            }
        }
        let to_u32 = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| SutError::Config(format!("{what} does not fit in 32 bits")))
        };
        conn.send(&Message::Config(WireConfig {
            mode: config.mode,
            inputs_per_query: to_u32(config.inputs_per_query, "inputs_per_query")?,
            store_size: to_u32(config.store_size, "store_size")?,
            sample_bytes: to_u32(config.sample_bytes, "sample_bytes")?,
            profile: config.profile.clone(),
        }))?;
        conn.reader_stream = Some(reader);
        self.conn = Some(conn);
        Ok(())
    }

    fn load_samples(&mut self, store: &Arc<SampleStore>, indices: &[usize]) -> Result<(), SutError> {
        let conn = self
            .conn
            .as_mut()
            .ok_or_else(|| SutError::Config("configure must precede load_samples".into()))?;
        let mut present = vec![false; store.len()];
        for &i in indices {
            let data = store.get(i).ok_or(SutError::UnknownSample(i))?;
            if data.len() > super::MAX_SAMPLE_BYTES {
                return Err(SutError::Config(format!(
                    "sample {i} is {} bytes, the wire limit is {}",
                    data.len(),
                    super::MAX_SAMPLE_BYTES
                )));
            }
            conn.send(&Message::Load {
                index: i as u32,
                data: data.to_vec(),
            })?;
        }
        let reader = conn
            .reader_stream
            .as_mut()
            .ok_or_else(|| SutError::Protocol("samples already loaded on this session".into()))?;
        for _ in indices {
            match read_frame(reader).map_err(protocol)? {
                Message::Loaded { index } if (index as usize) < present.len() => {
                    present[index as usize] = true;
                }
                Message::Bye { reason } => return Err(SutError::Remote(reason)),
                other => {
                    return Err(SutError::Protocol(format!(
                        "expected LOADED, got {other:?}"
                    )))
                }
            }
        }
        if let Some(&missing) = indices.iter().find(|&&i| !present[i]) {
            return Err(SutError::Protocol(format!("sample {missing} was never acknowledged")));
        }
        Self::spawn_reader(conn);
        self.loaded = Some(present);
        Ok(())
    }

    fn unload(&mut self) -> Result<(), SutError> {
        let result = match self.conn.as_mut() {
            Some(conn) => {
                let sent = conn.send(&Message::Bye {
                    reason: String::new(),
                });
                let (lock, cv) = &*conn.state;
                let mut st = lock.lock().unwrap();
                while sent.is_ok() && st.closed.is_none() {
                    st = cv.wait(st).unwrap();
                }
                let clean = st.bye && st.outstanding == 0;
                let reason = st.closed.clone();
                drop(st);
                match (sent, clean) {
                    (Err(e), _) => Err(e),
                    (Ok(()), true) => Ok(()),
                    (Ok(()), false) => Err(SutError::Remote(
                        reason.unwrap_or_else(|| "session ended uncleanly".into()),
                    )),
                }
            }
            None => Ok(()),
        };
        if let Some(mut conn) = self.conn.take() {
            if let Some(h) = conn.reader.take() {
                let _ = h.join();
            }
        }
        self.loaded = None;
        result
    }

    fn issue(&mut self, query: &Query, sink: &CompletionSink) -> Result<(), SutError> {
        let loaded = self.loaded.as_ref().ok_or(SutError::NotLoaded)?;
        if let Some(&bad) = query
            .sample_indices
            .iter()
            .find(|&&i| !loaded.get(i).copied().unwrap_or(false))
        {
            return Err(SutError::UnknownSample(bad));
        }
        let conn = self.conn.as_mut().ok_or(SutError::NotLoaded)?;
        {
            let mut st = conn.state.0.lock().unwrap();
            if let Some(reason) = &st.closed {
                return Err(SutError::Remote(reason.clone()));
            }
            if st.sink.is_none() {
                st.sink = Some(sink.clone());
            }
            st.outstanding += 1;
        }
        conn.send(&Message::Issue {
            query_id: query.query_id,
            indices: query.sample_indices.iter().map(|&i| i as u32).collect(),
        })
    }

    fn flush(&mut self) -> Result<(), SutError> {
        let Some(conn) = self.conn.as_mut() else {
            return Ok(());
        };
        if conn.reader.is_none() {
            return Ok(());
        }
        let target = conn.state.0.lock().unwrap().flush_acks + 1;
        conn.send(&Message::Flush)?;
        conn.writer.flush()?;
        let (lock, cv) = &*conn.state;
        let mut st = lock.lock().unwrap();
        while st.flush_acks < target && st.closed.is_none() {
            st = cv.wait(st).unwrap();
        }
        if st.flush_acks >= target {
            Ok(())
        } else {
            drop(st);
            Err(SutError::Remote(
                conn.closed_reason().unwrap_or_else(|| "closed during flush".into()),
            ))
        }
    }
}
