//! The HTTP backend against a local mock server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use cta_agent::config::{AgentConfig, RetryPolicy};
use cta_agent::{ChatBackend, ClientError, HttpChatClient};
use cta_core::ChatTurn;
use serde_json::Value;

/// What the mock does with one connection.
#[derive(Clone)]
enum Reply {
    Status(u16, String),
    Hang,
}

struct Mock {
    url: String,
    bodies: Arc<Mutex<Vec<Value>>>,
    headers: Arc<Mutex<Vec<String>>>,
}

fn read_request(stream: &mut TcpStream) -> (Vec<String>, Value) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut headers = Vec::new();
    let mut len = 0;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let line = line.trim_end().to_string();
        if line.is_empty() {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            len = v.trim().parse().unwrap();
        }
        headers.push(line);
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    (headers, serde_json::from_slice(&body).unwrap())
}

fn serve(script: Vec<Reply>) -> Mock {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let headers = Arc::new(Mutex::new(Vec::new()));
    let (b, h) = (bodies.clone(), headers.clone());
    thread::spawn(move || {
        let mut script = script.into_iter();
        let mut last = None;
        for stream in listener.incoming() {
            let mut stream = stream.unwrap();
            let (hs, body) = read_request(&mut stream);
            b.lock().unwrap().push(body);
            h.lock().unwrap().extend(hs);
            let reply = script.next().or(last.clone()).expect("script not empty");
            last = Some(reply.clone());
            match reply {
                Reply::Hang => {
                    thread::spawn(move || {
                        thread::sleep(Duration::from_secs(5));
                        drop(stream);
                    });
                }
                Reply::Status(code, text) => {
                    let resp = format!(
                        "HTTP/1.1 {code} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                        text.len()
                    );
                    stream.write_all(resp.as_bytes()).unwrap();
                }
            }
        }
    });
    Mock { url, bodies, headers }
}

fn ok(content: &str) -> Reply {
    Reply::Status(200, serde_json::json!({"choices":[{"message":{"role":"assistant","content":content}}]}).to_string())
}

fn config(url: &str) -> AgentConfig {
    AgentConfig {
        endpoint: url.into(),
        model: "mock".into(),
        timeout_secs: 0.5,
        retry: RetryPolicy { max_retries: 2, initial_backoff_ms: 1, max_backoff_ms: 5 },
        ..Default::default()
    }
}

fn messages() -> Vec<ChatTurn> {
    vec![ChatTurn { role: "user".into(), content: "Choose your action.".into() }]
}

#[test]
fn round_trip_through_mock() {
    let mock = serve(vec![ok("VERIFY B")]);
    let client = HttpChatClient::new(config(&mock.url)).unwrap().with_api_key("secret");
    let reply = client.complete(&messages()).unwrap();
    assert_eq!(reply, "VERIFY B");
    let parsed = cta_agent::parse_action(cta_core::EnvKind::Pandora, &reply).unwrap();
    assert_eq!(parsed.action, cta_agent::AgentAction::Verify("B".into()));
    let body = &mock.bodies.lock().unwrap()[0];
    assert_eq!(body["model"], "mock");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["messages"][0]["content"], "Choose your action.");
    let headers = mock.headers.lock().unwrap();
    assert!(headers.iter().any(|h| h.starts_with("POST /v1/chat/completions")));
    assert!(headers.iter().any(|h| h.eq_ignore_ascii_case("authorization: Bearer secret")));
}

#[test]
fn retries_after_rate_limit() {
    let mock = serve(vec![Reply::Status(429, "{}".into()), ok("RETRIEVE")]);
    let client = HttpChatClient::new(config(&mock.url)).unwrap();
    assert_eq!(client.complete(&messages()).unwrap(), "RETRIEVE");
    assert_eq!(mock.bodies.lock().unwrap().len(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let mock = serve(vec![Reply::Status(400, "bad".into()), ok("never")]);
    let client = HttpChatClient::new(config(&mock.url)).unwrap();
    assert_eq!(client.complete(&messages()), Err(ClientError::Status { status: 400, body: "bad".into() }));
    assert_eq!(mock.bodies.lock().unwrap().len(), 1);
}

#[test]
fn persistent_timeouts_exhaust_retries() {
    let mock = serve(vec![Reply::Hang]);
    let client = HttpChatClient::new(config(&mock.url)).unwrap();
    match client.complete(&messages()) {
        Err(ClientError::RetriesExhausted { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected exhausted retries, got {other:?}"),
    }
}
