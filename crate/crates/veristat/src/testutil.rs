//! Minimal blocking HTTP server for exercising the remote clients in
//! tests without external services.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

#[derive(Debug, Clone)]
pub struct ParsedRequest {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl ParsedRequest {
    pub fn header(&self, name: &str) -> Option<&str> {
        let name = name.to_ascii_lowercase();
        self.headers
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| v.as_str())
    }
}

pub struct MockResponse {
    pub status: u16,
    pub body: String,
}

impl MockResponse {
    pub fn json(body: impl Into<String>) -> Self {
        Self {
            status: 200,
            body: body.into(),
        }
    }

    pub fn status(status: u16, body: impl Into<String>) -> Self {
        Self {
            status,
            body: body.into(),
        }
    }
}

/// Serves exactly `expected` HTTP requests, one thread per connection,
/// then stops accepting. Every response closes its connection so clients
/// never reuse a socket the server has abandoned.
pub struct MockServer {
    addr: SocketAddr,
    handle: Option<JoinHandle<()>>,
    requests: Arc<Mutex<Vec<ParsedRequest>>>,
}

impl MockServer {
    pub fn start<F>(expected: usize, handler: F) -> Self
    where
        F: Fn(&ParsedRequest) -> MockResponse + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock server");
        let addr = listener.local_addr().expect("mock server addr");
        let requests = Arc::new(Mutex::new(Vec::new()));
        let captured = Arc::clone(&requests);
        let handler = Arc::new(handler);
        let handle = std::thread::spawn(move || {
            let mut workers = Vec::new();
            for _ in 0..expected {
                let Ok((stream, _)) = listener.accept() else {
                    break;
                };
                let handler = Arc::clone(&handler);
                let captured = Arc::clone(&captured);
                workers.push(std::thread::spawn(move || {
                    serve_connection(stream, handler.as_ref(), &captured);
                }));
            }
            for w in workers {
                let _ = w.join();
            }
        });
        Self {
            addr,
            handle: Some(handle),
            requests,
        }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Waits for all expected requests and returns them in arrival order.
    pub fn finish(mut self) -> Vec<ParsedRequest> {
        if let Some(handle) = self.handle.take() {
            handle.join().expect("mock server thread");
        }
        let guard = self.requests.lock().unwrap();
        guard.clone()
    }
}

fn serve_connection<F>(mut stream: TcpStream, handler: &F, captured: &Mutex<Vec<ParsedRequest>>)
where
    F: Fn(&ParsedRequest) -> MockResponse,
{
    let Ok(request) = read_request(&mut stream) else {
        return;
    };
    captured.lock().unwrap().push(request.clone());
    let response = handler(&request);
    let payload = format!(
        "HTTP/1.1 {} MOCK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        response.status,
        response.body.len(),
        response.body
    );
    // The client may have given up (timeout tests); a failed write is fine.
    let _ = stream.write_all(payload.as_bytes());
}

fn read_request(stream: &mut TcpStream) -> std::io::Result<ParsedRequest> {
    let mut buf = Vec::new();
    let mut tmp = [0u8; 4096];
    let header_end = loop {
        let n = stream.read(&mut tmp)?;
        if n == 0 {
            return Err(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                "connection closed before headers",
            ));
        }
        buf.extend_from_slice(&tmp[..n]);
        if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
            break pos;
        }
        if buf.len() > 1 << 20 {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                "headers too large",
            ));
        }
    };
    let head = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let mut lines = head.split("\r\n");
    let request_line = lines.next().unwrap_or_default();
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let mut headers = Vec::new();
    for line in lines {
        if let Some((k, v)) = line.split_once(':') {
            headers.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
        }
    }
    let content_length = headers
        .iter()
        .find(|(k, _)| k == "content-length")
        .and_then(|(_, v)| v.parse::<usize>().ok())
        .unwrap_or(0);
    let mut body = buf[header_end + 4..].to_vec();
    while body.len() < content_length {
        let n = stream.read(&mut tmp)?;
        if n == 0 {
            break;
        }
        body.extend_from_slice(&tmp[..n]);
    }
    body.truncate(content_length);
    Ok(ParsedRequest {
        method,
        path,
        headers,
        body: String::from_utf8_lossy(&body).to_string(),
    })
}
