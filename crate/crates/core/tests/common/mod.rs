//! Shared fixtures for integration tests: a minimal chat-completion server
//! and an independent copy of the relation algebra.

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use tempora_core::algebra::Relation::{self, *};

/// A chat-completion endpoint on localhost answering deterministically from
/// the last user message. The first `fail_first` requests get HTTP 500.
pub struct StubServer {
    pub url: String,
    pub requests: Arc<AtomicUsize>,
    pub auth: Arc<Mutex<Vec<String>>>,
}

pub fn spawn_stub(fail_first: usize) -> StubServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let requests = Arc::new(AtomicUsize::new(0));
    let auth = Arc::new(Mutex::new(Vec::new()));
    let (r, a) = (requests.clone(), auth.clone());
    thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let (r, a) = (r.clone(), a.clone());
            thread::spawn(move || serve(stream, &r, &a, fail_first));
        }
    });
    StubServer {
        url,
        requests,
        auth,
    }
}

fn serve(stream: TcpStream, count: &AtomicUsize, auth: &Mutex<Vec<String>>, fail_first: usize) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut length = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        let lower = line.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("content-length:") {
            length = v.trim().parse().unwrap();
        }
        if lower.starts_with("authorization:") {
            auth.lock()
                .unwrap()
                .push(line["authorization:".len()..].trim().to_string());
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    let n = count.fetch_add(1, Ordering::SeqCst);

    let (status, payload) = if n < fail_first {
        (
            "500 Internal Server Error",
            "{\"error\":\"busy\"}".to_string(),
        )
    } else {
        let req: serde_json::Value = serde_json::from_slice(&body).unwrap();
        let messages = req["messages"].as_array().unwrap();
        let last = messages.last().unwrap()["content"].as_str().unwrap();
        let reply = serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": answer_for(last)}}]
        });
        ("200 OK", reply.to_string())
    };
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
}

fn fnv(text: &str) -> u64 {
    text.bytes().fold(0xcbf29ce484222325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x100000001b3)
    })
}

/// Deterministic pseudo-answers: numbered lines for batch prompts, a single
/// yes/no sentence otherwise.
pub fn answer_for(prompt: &str) -> String {
    let h = fnv(prompt);
    if prompt.contains("\n1. ") {
        (0..5)
            .map(|i| format!("{}. {}", i + 1, if h >> i & 1 == 1 { "Yes" } else { "No" }))
            .collect::<Vec<_>>()
            .join("\n")
    } else if h & 1 == 1 {
        "Yes, that is what the note says.".into()
    } else {
        "No.".into()
    }
}

pub const RELATIONS: [Relation; 5] = [Before, After, Includes, IsIncluded, Simultaneous];

/// Converse by endpoint definitions.
pub fn converse(r: Relation) -> Relation {
    match r {
        Before => After,
        After => Before,
        Includes => IsIncluded,
        IsIncluded => Includes,
        Simultaneous => Simultaneous,
    }
}

/// The composition table, row by row.
pub fn composition(r1: Relation, r2: Relation) -> Vec<Relation> {
    let all = RELATIONS.to_vec();
    match (r1, r2) {
        (Before, Before) => vec![Before],
        (After, After) => vec![After],
        (Includes, Includes) => vec![Includes],
        (IsIncluded, IsIncluded) => vec![IsIncluded],
        (Simultaneous, Simultaneous) => vec![Simultaneous],
        (Before, Simultaneous) => vec![Before],
        (After, Simultaneous) => vec![After],
        (Includes, Simultaneous) => vec![Includes],
        (IsIncluded, Simultaneous) => vec![IsIncluded],
        (Before, After) => all,
        (Before, Includes) => vec![Before, Includes],
        (Before, IsIncluded) => vec![Before, IsIncluded],
        (After, Before) => all,
        (After, Includes) => vec![After, Includes],
        (After, IsIncluded) => vec![After, IsIncluded],
        (Includes, Before) => vec![Before, Includes],
        (Includes, After) => vec![After, Includes],
        (Includes, IsIncluded) => all,
        (IsIncluded, Before) => vec![Before, IsIncluded],
        (IsIncluded, After) => vec![After, IsIncluded],
        (IsIncluded, Includes) => all,
        (Simultaneous, Before) => vec![Before],
        (Simultaneous, After) => vec![After],
        (Simultaneous, Includes) => vec![Includes],
        (Simultaneous, IsIncluded) => vec![IsIncluded],
    }
}
