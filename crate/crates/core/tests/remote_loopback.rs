mod common;

use std::io::{Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use rtbench::compliance::test_accuracy_in_perf;
use rtbench::engine::{Engine, RunOptions};
use rtbench::ipc::StubServer;
use rtbench::profiles::{find_profile, RunSettings};
use rtbench::rng::fnv1a64;
use rtbench::store::SampleStore;
use rtbench::sut::conformance::run_suite;
use rtbench::sut::{open_sut, SimulatedSutConfig};

use common::short_settings;

const HELLO: &[u8] = &[0x07, 0, 0, 0, 0x01, b'R', b'T', b'B', b'A', 0x01, 0x00];
const FLUSH: &[u8] = &[0x01, 0, 0, 0, 0x07];
const BYE: &[u8] = &[0x01, 0, 0, 0, 0x08];

fn config_frame(name: &str, store: u32, bytes: u32) -> Vec<u8> {
    let mut f = Vec::new();
    f.extend_from_slice(&(1 + 1 + 4 + 4 + 4 + 2 + name.len() as u32).to_le_bytes());
    f.push(0x02);
    f.push(0x00);
    f.extend_from_slice(&1u32.to_le_bytes());
    f.extend_from_slice(&store.to_le_bytes());
    f.extend_from_slice(&bytes.to_le_bytes());
    f.extend_from_slice(&(name.len() as u16).to_le_bytes());
    f.extend_from_slice(name.as_bytes());
    f
}

fn load_frame(idx: u8, data: [u8; 3]) -> Vec<u8> {
    let mut f = vec![0x0c, 0, 0, 0, 0x03, idx, 0, 0, 0, 0x03, 0, 0, 0];
    f.extend_from_slice(&data);
    f
}

fn loaded_frame(idx: u8) -> Vec<u8> {
    vec![0x05, 0, 0, 0, 0x04, idx, 0, 0, 0]
}

fn issue_frame(qid: u8, idx: u8) -> Vec<u8> {
    vec![0x11, 0, 0, 0, 0x05, qid, 0, 0, 0, 0, 0, 0, 0, 0x01, 0, 0, 0, idx, 0, 0, 0]
}

fn complete_frame(qid: u8, data: [u8; 3]) -> Vec<u8> {
    let mut f = vec![0x10, 0, 0, 0, 0x06, qid, 0, 0, 0, 0, 0, 0, 0, 0x03, 0, 0, 0];
    f.extend_from_slice(&data);
    f
}

const S0: [u8; 3] = [0xaa, 0xbb, 0xcc];
const S1: [u8; 3] = [0x01, 0x02, 0x03];

fn read_exact_n(s: &mut TcpStream, n: usize) -> Vec<u8> {
    let mut buf = vec![0; n];
    s.read_exact(&mut buf).unwrap();
    buf
}

#[test]
fn issue_frame_matches_known_vector() {
    assert_eq!(
        issue_frame(1, 0),
        [0x11, 0, 0, 0, 0x05, 0x01, 0, 0, 0, 0, 0, 0, 0, 0x01, 0, 0, 0, 0, 0, 0, 0]
    );
}

#[test]
fn stub_answers_hand_encoded_session() {
    let server = StubServer::spawn(SimulatedSutConfig::fixed_ns(1_000_000).with_echo()).unwrap();
    let mut s = TcpStream::connect(server.addr()).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(10))).unwrap();

    s.write_all(HELLO).unwrap();
    assert_eq!(read_exact_n(&mut s, HELLO.len()), HELLO);
    s.write_all(&config_frame("ssd_resnet50", 2, 3)).unwrap();
    s.write_all(&load_frame(0, S0)).unwrap();
    assert_eq!(read_exact_n(&mut s, 9), loaded_frame(0));
    s.write_all(&load_frame(1, S1)).unwrap();
    assert_eq!(read_exact_n(&mut s, 9), loaded_frame(1));
    s.write_all(&issue_frame(1, 0)).unwrap();
    s.write_all(&issue_frame(2, 1)).unwrap();
    s.write_all(FLUSH).unwrap();
    let want: Vec<u8> = [complete_frame(1, S0), complete_frame(2, S1), FLUSH.to_vec()].concat();
    assert_eq!(read_exact_n(&mut s, want.len()), want);
    s.write_all(BYE).unwrap();
    assert_eq!(read_exact_n(&mut s, BYE.len()), BYE);
    let mut rest = Vec::new();
    s.read_to_end(&mut rest).unwrap();
    assert!(rest.is_empty());
}

#[test]
fn stub_rejects_other_versions() {
    let server = StubServer::spawn(SimulatedSutConfig::fixed_ns(1_000_000)).unwrap();
    let mut s = TcpStream::connect(server.addr()).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    s.write_all(&[0x07, 0, 0, 0, 0x01, b'R', b'T', b'B', b'A', 0x02, 0x00]).unwrap();
    let mut reply = Vec::new();
    s.read_to_end(&mut reply).unwrap();
    assert_eq!(reply[4], 0x08, "expected BYE, got {reply:?}");
    assert!(reply.len() > 5, "BYE should carry a reason");
}

/// Forwards one connection and records both directions.
type Tape = Arc<Mutex<Vec<u8>>>;

fn recording_proxy(upstream: std::net::SocketAddr) -> (String, Tape, Tape) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let up = Arc::new(Mutex::new(Vec::new()));
    let down = Arc::new(Mutex::new(Vec::new()));
    let (u, d) = (Arc::clone(&up), Arc::clone(&down));
    thread::spawn(move || {
        let (client, _) = listener.accept().unwrap();
        let server = TcpStream::connect(upstream).unwrap();
        let pump = |mut from: TcpStream, mut to: TcpStream, log: Arc<Mutex<Vec<u8>>>| {
            thread::spawn(move || {
                let mut buf = [0u8; 4096];
                loop {
                    match from.read(&mut buf) {
                        Ok(0) | Err(_) => break,
                        Ok(n) => {
                            log.lock().unwrap().extend_from_slice(&buf[..n]);
                            if to.write_all(&buf[..n]).is_err() {
                                break;
                            }
                        }
                    }
                }
                let _ = to.shutdown(Shutdown::Write);
            })
        };
        let a = pump(client.try_clone().unwrap(), server.try_clone().unwrap(), u);
        let b = pump(server, client, d);
        let _ = a.join();
        let _ = b.join();
    });
    (format!("tcp:{addr}"), up, down)
}

#[test]
fn harness_transcript_matches_hand_encoding() {
    let server = StubServer::spawn(SimulatedSutConfig::fixed_ns(1_000_000).with_echo()).unwrap();
    let (endpoint, up, down) = recording_proxy(server.addr());
    let profile = find_profile("ssd").unwrap();
    let settings = RunSettings {
        sample_bytes: Some(3),
        sut_endpoint: endpoint.clone(),
        ..short_settings(1)
    };
    let opts = RunOptions {
        store: Some(Arc::new(SampleStore::from_samples(vec![S0.to_vec(), S1.to_vec()]))),
        schedule: Some(vec![vec![0], vec![1]]),
        retention: None,
    };
    let mut sut = open_sut(&endpoint, 0).unwrap();
    let log = Engine::real().run_with(sut.as_mut(), &settings, &profile, opts).unwrap();
    assert!(log.is_complete());
    drop(sut);
    thread::sleep(Duration::from_millis(200));

    let want_up: Vec<u8> = [
        HELLO.to_vec(),
        config_frame("ssd_resnet50", 2, 3),
        load_frame(0, S0),
        load_frame(1, S1),
        issue_frame(0, 0),
        issue_frame(1, 1),
        FLUSH.to_vec(),
        BYE.to_vec(),
    ]
    .concat();
    assert_eq!(*up.lock().unwrap(), want_up);
    let want_down: Vec<u8> = [
        HELLO.to_vec(),
        loaded_frame(0),
        loaded_frame(1),
        complete_frame(0, S0),
        complete_frame(1, S1),
        FLUSH.to_vec(),
        BYE.to_vec(),
    ]
    .concat();
    assert_eq!(*down.lock().unwrap(), want_down);
}

#[test]
fn single_stream_over_loopback() {
    let server = StubServer::spawn(SimulatedSutConfig::fixed_ns(10_000_000).with_echo()).unwrap();
    let profile = find_profile("ssd").unwrap();
    let settings = RunSettings {
        sut_endpoint: server.endpoint(),
        ..short_settings(20)
    };
    let mut sut = open_sut(&settings.sut_endpoint, 0).unwrap();
    let log = Engine::real().run(sut.as_mut(), &settings, &profile).unwrap();
    let s = log.summary().unwrap();
    assert_eq!(s.count, 20);
    assert!(s.p50_ns >= 10_000_000, "p50 {}", s.p50_ns);
    assert!(rtbench::stats::check_validity(&s, &settings).is_valid());

    let store = SampleStore::synthetic(settings.seed, settings.store_size, 64);
    for t in &log.trace {
        let want = fnv1a64(&store.concat(&t.query.sample_indices).unwrap());
        assert_eq!(t.completion.as_ref().unwrap().response_digest, want);
    }
}

#[test]
fn remote_sut_conforms() {
    let server = StubServer::spawn(SimulatedSutConfig::fixed_ns(200_000)).unwrap();
    let endpoint = server.endpoint();
    let results = run_suite(|| open_sut(&endpoint, 0).unwrap());
    assert_eq!(results.len(), 5);
    for r in &results {
        assert!(r.result.is_ok(), "{}: {:?}", r.name, r.result);
    }
}

#[test]
fn accuracy_in_perf_over_the_wire() {
    let profile = find_profile("ssd").unwrap();
    let settings = RunSettings {
        min_query_count: 60,
        ..short_settings(60)
    };
    for (truncate, expect) in [(false, true), (true, false)] {
        let mut cfg = SimulatedSutConfig::fixed_ns(100_000).with_echo();
        cfg.truncate_in_performance = truncate;
        let server = StubServer::spawn(cfg).unwrap();
        let mut sut = open_sut(&server.endpoint(), 0).unwrap();
        let v = test_accuracy_in_perf(&mut Engine::real(), sut.as_mut(), &settings, &profile, 0.25).unwrap();
        assert_eq!(v.passed, expect, "{v}");
    }
}
