//! Loopback stub SUT: serves the wire protocol from a [`SimulatedSut`].

use std::io::{self, BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use super::frame::{read_frame, write_frame, FrameError, Message};
use super::PROTOCOL_VERSION;
use crate::clock::{Clock, MonotonicClock};
use crate::engine::Query;
use crate::store::SampleStore;
use crate::sut::{
    CompletionSink, CompletionTarget, SimulatedSut, SimulatedSutConfig, SutContract, SutRunConfig,
};

/// Writes COMPLETE frames as the simulated SUT finishes queries.
struct WireTarget {
    clock: MonotonicClock,
    writer: Arc<Mutex<BufWriter<TcpStream>>>,
}

impl CompletionTarget for WireTarget {
    fn clock(&self) -> &dyn Clock {
        &self.clock
    }

    fn deliver(&self, query_id: u64, _completion_ns: u64, blob: Vec<u8>) {
        let mut w = self.writer.lock().unwrap();
        let _ = write_frame(&mut *w, &Message::Complete { query_id, blob });
    }

    fn fail(&self, _reason: String) {}
}

pub struct StubServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Listens on an ephemeral loopback port.
    pub fn spawn(config: SimulatedSutConfig) -> io::Result<Self> {
        Self::bind("127.0.0.1:0", config)
    }

    pub fn bind(addr: &str, config: SimulatedSutConfig) -> io::Result<Self> {
        config
            .validate()
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = Arc::clone(&stop);
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if stop_flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let config = config.clone();
                std::thread::spawn(move || {
                    let _ = serve_connection(stream, config);
                });
            }
        });
        Ok(Self {
            addr,
            stop,
            handle: Some(handle),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// `tcp:<host>:<port>` endpoint string for this server.
    pub fn endpoint(&self) -> String {
        format!("tcp:{}", self.addr)
    }

    /// Blocks serving connections until the process exits.
    pub fn join(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            let _ = TcpStream::connect(self.addr);
            let _ = h.join();
        }
    }
}

fn bye(writer: &Mutex<BufWriter<TcpStream>>, reason: impl Into<String>) -> Result<(), FrameError> {
    let mut w = writer.lock().unwrap();
    write_frame(
        &mut *w,
        &Message::Bye {
            reason: reason.into(),
        },
    )?;
    Ok(())
}

/// Serves one harness session until BYE, a protocol violation or EOF.
pub fn serve_connection(stream: TcpStream, config: SimulatedSutConfig) -> Result<(), FrameError> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let writer = Arc::new(Mutex::new(BufWriter::new(stream)));
    let send = |msg: &Message| -> Result<(), FrameError> {
        let mut w = writer.lock().unwrap();
        write_frame(&mut *w, msg)?;
        Ok(())
    };

    match read_frame(&mut reader)? {
        Message::Hello { version } if version == PROTOCOL_VERSION => {
            send(&Message::Hello {
                version: PROTOCOL_VERSION,
            })?;
        }
        Message::Hello { version } => {
            return bye(&writer, format!("unsupported protocol version {version}"));
        }
        other => return bye(&writer, format!("expected HELLO, got {:?}", other.message_type())),
    }

    let sink = CompletionSink::new(Arc::new(WireTarget {
        clock: MonotonicClock::new(),
        writer: Arc::clone(&writer),
    }));
    let mut sut = SimulatedSut::new("stub", config).map_err(|e| FrameError::BadPayload(e.to_string()))?;
    let mut samples: Vec<Option<Vec<u8>>> = Vec::new();
    let mut configured = false;
    let mut dirty = false;

    loop {
        let msg = match read_frame(&mut reader) {
            Ok(m) => m,
            Err(FrameError::Closed) => return Ok(()),
            Err(e) => {
                let _ = bye(&writer, e.to_string());
                return Err(e);
            }
        };
        match msg {
            Message::Config(c) => {
                sut.configure(&SutRunConfig {
                    profile: c.profile,
                    mode: c.mode,
                    inputs_per_query: c.inputs_per_query as usize,
                    store_size: c.store_size as usize,
                    sample_bytes: c.sample_bytes as usize,
                })
                .map_err(|e| FrameError::BadPayload(e.to_string()))?;
                samples = vec![None; c.store_size as usize];
                configured = true;
            }
            Message::Load { index, data } => {
                let Some(slot) = samples.get_mut(index as usize).filter(|_| configured) else {
                    return bye(&writer, format!("LOAD of index {index} outside the configured store"));
                };
                *slot = Some(data);
                dirty = true;
                send(&Message::Loaded { index })?;
            }
            Message::Issue { query_id, indices } => {
                if dirty {
                    let present: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].is_some()).collect();
                    let store = Arc::new(SampleStore::from_samples(
                        samples.iter().map(|s| s.clone().unwrap_or_default()).collect(),
                    ));
                    sut.load_samples(&store, &present)
                        .map_err(|e| FrameError::BadPayload(e.to_string()))?;
                    dirty = false;
                }
                let query = Query {
                    query_id,
                    sample_indices: indices.iter().map(|&i| i as usize).collect(),
                    scheduled_ns: None,
                    issue_ns: sink.clock().now_ns(),
                };
                if let Err(e) = sut.issue(&query, &sink) {
                    return bye(&writer, e.to_string());
                }
            }
            Message::Flush => {
                let _ = sut.flush();
                send(&Message::Flush)?;
            }
            Message::Bye { .. } => {
                let _ = sut.unload();
                send(&Message::Bye {
                    reason: String::new(),
                })?;
                return Ok(());
            }
            other => {
                return bye(
                    &writer,
                    format!("unexpected {:?} from harness", other.message_type()),
                )
            }
        }
    }
}
