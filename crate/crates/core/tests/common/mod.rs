#![allow(dead_code)]

use std::collections::HashSet;
use std::io::{Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use mle_core::he::SecretKey;

/// Forwards TCP connections to `upstream` and records every byte in both
/// directions, one buffer per connection and direction.
pub struct CaptureProxy {
    pub addr: SocketAddr,
    pub captured: Arc<Mutex<Vec<Vec<u8>>>>,
}

fn pump(mut from: TcpStream, mut to: TcpStream, slot: Arc<Mutex<Vec<Vec<u8>>>>, index: usize) {
    let mut buf = [0u8; 1 << 16];
    loop {
        match from.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(k) => {
                slot.lock().unwrap()[index].extend_from_slice(&buf[..k]);
                if to.write_all(&buf[..k]).is_err() {
                    break;
                }
            }
        }
    }
    let _ = to.shutdown(Shutdown::Write);
}

impl CaptureProxy {
    pub fn start(upstream: SocketAddr) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let captured: Arc<Mutex<Vec<Vec<u8>>>> = Arc::default();
        let slots = captured.clone();
        thread::spawn(move || {
            for client in listener.incoming() {
                let Ok(client) = client else { continue };
                let Ok(server) = TcpStream::connect(upstream) else { continue };
                let (up, down) = {
                    let mut s = slots.lock().unwrap();
                    s.push(Vec::new());
                    s.push(Vec::new());
                    (s.len() - 2, s.len() - 1)
                };
                let (c2, s2) = (client.try_clone().unwrap(), server.try_clone().unwrap());
                let a = slots.clone();
                let b = slots.clone();
                thread::spawn(move || pump(client, server, a, up));
                thread::spawn(move || pump(s2, c2, b, down));
            }
        });
        Self { addr, captured }
    }

    pub fn total_bytes(&self) -> usize {
        self.captured.lock().unwrap().iter().map(Vec::len).sum()
    }
}

/// Every JSON string in the captured frames that decodes as base64.
fn decoded_blobs(stream: &[u8]) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut rest = stream;
    while rest.len() >= 5 {
        let len = u32::from_be_bytes(rest[..4].try_into().unwrap()) as usize;
        if len == 0 || rest.len() < 4 + len {
            break;
        }
        let payload = &rest[5..4 + len];
        if let Ok(v) = serde_json::from_slice::<serde_json::Value>(payload) {
            collect_strings(&v, &mut out);
        }
        rest = &rest[4 + len..];
    }
    out
}

fn collect_strings(v: &serde_json::Value, out: &mut Vec<Vec<u8>>) {
    match v {
        serde_json::Value::String(s) => {
            if let Ok(bytes) = STANDARD.decode(s) {
                out.push(bytes);
            }
        }
        serde_json::Value::Array(a) => a.iter().for_each(|x| collect_strings(x, out)),
        serde_json::Value::Object(m) => m.values().for_each(|x| collect_strings(x, out)),
        _ => {}
    }
}

const WINDOW: usize = 64;

/// Looks for the secret key's serialized polynomial in raw captured bytes
/// and in every base64 field. The whole payload is searched, plus every
/// 64-byte window that is not a run of one repeated coefficient.
/// Returns a description of the first hit.
pub fn find_secret_bytes(sk: &SecretKey, streams: &[Vec<u8>]) -> Option<String> {
    let bytes = sk.to_bytes();
    let n = sk.params().degree();
    let k = sk.params().ring().modulus_count();
    let payload = &bytes[bytes.len() - 8 * n * k..];
    let windows: HashSet<&[u8]> = payload
        .chunks_exact(8)
        .collect::<Vec<_>>()
        .windows(WINDOW / 8)
        .filter(|w| w.iter().any(|c| *c != w[0]))
        .map(|w| {
            let start = w[0].as_ptr() as usize - payload.as_ptr() as usize;
            &payload[start..start + WINDOW]
        })
        .collect();
    assert!(windows.len() > n / 2, "secret key too degenerate to scan for");
    let mut haystacks: Vec<(String, Vec<u8>)> = Vec::new();
    for (i, s) in streams.iter().enumerate() {
        haystacks.push((format!("stream {i}"), s.clone()));
        for (j, b) in decoded_blobs(s).into_iter().enumerate() {
            haystacks.push((format!("stream {i} field {j}"), b));
        }
    }
    for (name, hay) in &haystacks {
        if hay.windows(payload.len()).any(|w| w == payload) {
            return Some(format!("{name}: full secret key payload"));
        }
        if let Some(pos) = hay.windows(WINDOW).position(|w| windows.contains(w)) {
            return Some(format!("{name}: 64-byte secret key window at offset {pos}"));
        }
    }
    None
}
