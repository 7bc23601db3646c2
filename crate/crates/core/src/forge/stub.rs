//! A minimal scripted chat-completions server for tests and offline runs.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq)]
pub struct StubReply {
    pub status: u16,
    pub body: String,
    pub delay: Duration,
}

impl StubReply {
    pub fn completion(content: &str) -> Self {
        Self::raw(200, completion_body(content))
    }

    pub fn raw(status: u16, body: impl Into<String>) -> Self {
        Self { status, body: body.into(), delay: Duration::ZERO }
    }

    pub fn delayed(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

pub fn completion_body(content: &str) -> String {
    json!({
        "object": "chat.completion",
        "choices": [{ "index": 0, "message": { "role": "assistant", "content": content } }],
    })
    .to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StubRequest {
    pub path: String,
    pub authorization: Option<String>,
    pub body: String,
}

impl StubRequest {
    pub fn json(&self) -> Option<Value> {
        serde_json::from_str(&self.body).ok()
    }

    /// Content of the last message, normally the sub-question.
    pub fn user_prompt(&self) -> Option<String> {
        self.json()?
            .pointer("/messages/1/content")?
            .as_str()
            .map(str::to_string)
    }
}

type Handler = dyn Fn(&StubRequest) -> StubReply + Send + Sync;

pub struct StubServer {
    addr: SocketAddr,
    requests: Arc<Mutex<Vec<StubRequest>>>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(handler: impl Fn(&StubRequest) -> StubReply + Send + Sync + 'static) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let requests = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let handler: Arc<Handler> = Arc::new(handler);
        let thread = {
            let requests = Arc::clone(&requests);
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let requests = Arc::clone(&requests);
                    let handler = Arc::clone(&handler);
                    std::thread::spawn(move || {
                        let _ = serve(stream, &*handler, &requests);
                    });
                }
            })
        };
        Ok(Self { addr, requests, stop, thread: Some(thread) })
    }

    /// Replies in order, repeating the last reply once the script runs out.
    pub fn scripted(replies: Vec<StubReply>) -> std::io::Result<Self> {
        assert!(!replies.is_empty(), "script needs at least one reply");
        let queue = Mutex::new(replies);
        Self::start(move |_| {
            let mut q = queue.lock().expect("script lock");
            if q.len() > 1 {
                q.remove(0)
            } else {
                q[0].clone()
            }
        })
    }

    /// Answers every sub-question with a fixed sentence that names its prompt.
    pub fn echo() -> std::io::Result<Self> {
        Self::start(|req| {
            let prompt = req.user_prompt().unwrap_or_default();
            let head: String = prompt.split_whitespace().skip(2).take(6).collect::<Vec<_>>().join(" ");
            StubReply::completion(&format!("Observed for: {head}"))
        })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests(&self) -> Vec<StubRequest> {
        self.requests.lock().expect("request log").clone()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn serve(
    stream: TcpStream,
    handler: &Handler,
    requests: &Mutex<Vec<StubRequest>>,
) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
    let (mut length, mut authorization) = (0usize, None);
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 || line.trim().is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            match name.trim().to_ascii_lowercase().as_str() {
                "content-length" => length = value.trim().parse().unwrap_or(0),
                "authorization" => authorization = Some(value.trim().to_string()),
                _ => {}
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body)?;
    let req = StubRequest { path, authorization, body: String::from_utf8_lossy(&body).into_owned() };
    requests.lock().expect("request log").push(req.clone());

    let reply = handler(&req);
    std::thread::sleep(reply.delay);
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        reply.status,
        reply.body.len(),
        reply.body
    )?;
    stream.flush()
}
