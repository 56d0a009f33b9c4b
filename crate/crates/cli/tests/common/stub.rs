//! Minimal chat-completions server on a loopback port. It answers each request
//! by choosing the first listed candidate and records what it was sent.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Answer,
    Unauthorized,
}

#[derive(Default)]
pub struct Seen {
    pub reasons: Vec<String>,
    pub authorization: Vec<String>,
    pub bodies: Vec<serde_json::Value>,
}

pub struct Stub {
    pub url: String,
    pub seen: Arc<Mutex<Seen>>,
}

impl Stub {
    pub fn requests(&self) -> usize {
        self.seen.lock().unwrap().bodies.len()
    }
}

pub fn spawn(mode: Mode) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Seen::default()));
    let shared = Arc::clone(&seen);
    std::thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let _ = serve(stream, mode, &shared);
        }
    });
    Stub { url, seen }
}

fn first_candidate(prompt: &str) -> Option<String> {
    let section = prompt.split("Candidate features:").nth(1)?;
    let line = section.lines().find(|l| l.starts_with("- "))?;
    Some(line[2..].split(':').next()?.trim().to_string())
}

fn serve(stream: TcpStream, mode: Mode, seen: &Mutex<Seen>) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut content_length = 0usize;
    let mut authorization = String::new();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            match name.to_ascii_lowercase().as_str() {
                "content-length" => content_length = value.trim().parse().unwrap_or(0),
                "authorization" => authorization = value.trim().to_string(),
                _ => {}
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let request: serde_json::Value = serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null);

    let (status, payload) = match mode {
        Mode::Unauthorized => ("401 Unauthorized", serde_json::json!({"error": "bad key"})),
        Mode::Answer => {
            let prompt = request["messages"][0]["content"].as_str().unwrap_or("");
            let name = first_candidate(prompt).unwrap_or_default();
            let mut s = seen.lock().unwrap();
            let reason = format!("stub pick {} keeps {} in the set", s.reasons.len() + 1, name);
            s.reasons.push(reason.clone());
            let content = format!("Looking at the candidates.\nSelected Feature: {name}, Reason: {reason}");
            ("200 OK", serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}))
        }
    };
    {
        let mut s = seen.lock().unwrap();
        s.authorization.push(authorization);
        s.bodies.push(request);
    }
    let text = payload.to_string();
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
        text.len()
    )?;
    stream.flush()
}
