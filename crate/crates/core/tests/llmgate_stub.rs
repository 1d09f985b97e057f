use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use tempalign::llmgate::{
    record_run, Cassette, CompletionBackend, CompletionRequest, LiveBackend, LiveConfig, LlmError, ReplayBackend,
};

struct Seen {
    body: String,
    auth: Option<String>,
    path: String,
}

/// Serves one scripted `(status, body)` per connection; `None` body echoes the prompt.
fn stub(script: Vec<(u16, Option<&'static str>)>) -> (String, Arc<Mutex<Vec<Seen>>>, thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    let handle = thread::spawn(move || {
        for (status, body) in script {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut length = 0usize;
            let mut auth = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => length = value.trim().parse().unwrap(),
                    "authorization" => auth = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut buf = vec![0u8; length];
            reader.read_exact(&mut buf).unwrap();
            let text = String::from_utf8(buf).unwrap();
            let reply = match body {
                Some(b) => b.to_string(),
                None => {
                    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
                    serde_json::json!({"choices": [{"text": format!("re:{}", v["prompt"].as_str().unwrap())}]})
                        .to_string()
                }
            };
            let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
            log.lock().unwrap().push(Seen { body: text, auth, path });
            let mut out = stream;
            write!(
                out,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            )
            .unwrap();
            out.flush().unwrap();
        }
    });
    (url, seen, handle)
}

fn backend(url: &str) -> LiveBackend {
    let mut cfg = LiveConfig::new(url);
    cfg.backoff = Duration::from_millis(5);
    cfg.api_key = Some("secret".into());
    LiveBackend::new(cfg).unwrap()
}

#[test]
fn retries_once_after_server_error() {
    let (url, seen, handle) = stub(vec![
        (500, Some(r#"{"error":"boom"}"#)),
        (200, Some(r#"{"choices":[{"text":" Mar, 1192"}]}"#)),
    ]);
    let live = backend(&url);
    let req = CompletionRequest::new("model-x", "What is the time?", 0.8);
    assert_eq!(live.complete(&req).unwrap(), " Mar, 1192");
    assert_eq!(live.retries(), 1);
    handle.join().unwrap();
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    assert_eq!(seen[0].path, "/v1/completions");
    assert_eq!(seen[0].auth.as_deref(), Some("Bearer secret"));
    let body: serde_json::Value = serde_json::from_str(&seen[1].body).unwrap();
    assert_eq!(body["model"], "model-x");
    assert_eq!(body["top_p"], 0.8);
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["max_tokens"], 64);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen, handle) = stub(vec![(404, Some("nope"))]);
    let live = backend(&url);
    let err = live.complete(&CompletionRequest::new("m", "p", 1.0)).unwrap_err();
    assert!(matches!(err, LlmError::Http { status: 404, .. }), "{err:?}");
    assert_eq!(live.retries(), 0);
    handle.join().unwrap();
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn retries_are_bounded() {
    let (url, _seen, handle) = stub(vec![(503, Some("")); 4]);
    let live = backend(&url);
    let err = live.complete(&CompletionRequest::new("m", "p", 1.0)).unwrap_err();
    assert!(matches!(err, LlmError::RetriesExhausted { attempts: 4, .. }), "{err:?}");
    assert_eq!(live.retries(), 3);
    handle.join().unwrap();
}

#[test]
fn malformed_body_is_reported() {
    let (url, _seen, handle) = stub(vec![(200, Some(r#"{"choices":[]}"#))]);
    let err = backend(&url).complete(&CompletionRequest::new("m", "p", 1.0)).unwrap_err();
    assert!(matches!(err, LlmError::BadResponse(_)));
    handle.join().unwrap();
}

#[test]
fn recorded_stub_run_replays_bit_exact() {
    let (url, _seen, handle) = stub(vec![(200, None); 3]);
    let live = backend(&url);
    let reqs: Vec<_> = ["uno", "dos", "tres", "uno"].iter().map(|p| CompletionRequest::new("m", *p, 0.6)).collect();
    let mut cassette = Cassette::new();
    assert_eq!(record_run(&reqs, &live, &mut cassette, None, 1).unwrap(), 3);
    handle.join().unwrap();
    assert_eq!(cassette.len(), 3);
    let reloaded = Cassette::read_jsonl(&cassette.to_jsonl()[..]).unwrap();
    let replay = ReplayBackend::new(reloaded, true);
    for r in &reqs {
        assert_eq!(replay.complete(r).unwrap(), format!("re:{}", r.prompt));
    }
}
