//! Chat and scorer backends against a scripted local HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use polyforge::eval::HttpScorerBackend;
use polyforge::eval::{run_benchmark, Dataset, EvalError, EvalItem, EvalTaskSpec, RunConfig, ScorerBackend, TaskName};
use polyforge::selfinstruct::{
    complete_with_retry, BackendError, ChatBackend, HttpChatBackend, RetryPolicy, StopReason,
};
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Request {
    path: String,
    auth: Option<String>,
    body: Value,
}

type Handler = dyn Fn(&Request, usize) -> (u16, String) + Send + Sync;

/// Serves until the test process ends; `handler` gets each request and
/// its 0-based sequence number.
fn serve(handler: Arc<Handler>) -> (String, Arc<Mutex<Vec<Request>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let log = Arc::new(Mutex::new(Vec::new()));
    let seen = Arc::clone(&log);
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let handler = Arc::clone(&handler);
            let seen = Arc::clone(&seen);
            thread::spawn(move || handle(stream, &*handler, &seen));
        }
    });
    (url, log)
}

fn handle(stream: TcpStream, handler: &Handler, seen: &Mutex<Vec<Request>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut out = stream;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let path = line.split_whitespace().nth(1).unwrap_or("/").to_owned();
        let mut len = 0;
        let mut auth = None;
        loop {
            let mut h = String::new();
            reader.read_line(&mut h).unwrap();
            let h = h.trim_end();
            if h.is_empty() {
                break;
            }
            let (k, v) = h.split_once(':').unwrap();
            match k.to_ascii_lowercase().as_str() {
                "content-length" => len = v.trim().parse().unwrap(),
                "authorization" => auth = Some(v.trim().to_owned()),
                _ => {}
            }
        }
        let mut body = vec![0; len];
        reader.read_exact(&mut body).unwrap();
        let req = Request { path, auth, body: serde_json::from_slice(&body).unwrap_or(Value::Null) };
        let n = {
            let mut s = seen.lock().unwrap();
            s.push(req.clone());
            s.len() - 1
        };
        let (status, text) = handler(&req, n);
        let resp = format!(
            "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{text}",
            text.len()
        );
        if out.write_all(resp.as_bytes()).is_err() {
            return;
        }
    }
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy { attempts: 3, base_backoff_ms: 1 }
}

#[test]
fn chat_backend_sends_model_prompt_and_key() {
    let (url, log) =
        serve(Arc::new(|_, _| (200, json!({"text": "1. Instruction: hi", "stop_reason": "stop"}).to_string())));
    let b = HttpChatBackend::new(format!("{url}/v1/complete"), "m1", Some("secret".into()));
    let c = b.complete("prompt text", 64).unwrap();
    assert_eq!(c.text, "1. Instruction: hi");
    assert_eq!(c.stop_reason, StopReason::Natural);
    let r = &log.lock().unwrap()[0];
    assert_eq!(r.path, "/v1/complete");
    assert_eq!(r.auth.as_deref(), Some("Bearer secret"));
    assert_eq!(r.body, json!({"model": "m1", "prompt": "prompt text", "max_tokens": 64}));
}

#[test]
fn chat_backend_reads_openai_style_replies() {
    let (url, _) = serve(Arc::new(|_, _| {
        (200, json!({"choices": [{"message": {"content": "cut"}, "finish_reason": "length"}]}).to_string())
    }));
    let c = HttpChatBackend::new(url, "m", None).complete("p", 8).unwrap();
    assert_eq!((c.text.as_str(), c.stop_reason), ("cut", StopReason::Length));
}

#[test]
fn server_errors_are_retried_client_errors_are_not() {
    let (url, log) =
        serve(Arc::new(|_, n| if n < 2 { (503, "{}".into()) } else { (200, json!({"text": "ok"}).to_string()) }));
    let b = HttpChatBackend::new(url, "m", None);
    let c = complete_with_retry(&b, "p", 8, &fast_retry()).unwrap();
    assert_eq!(c.text, "ok");
    assert_eq!(log.lock().unwrap().len(), 3);

    let (url, log) = serve(Arc::new(|_, _| (400, "{}".into())));
    let b = HttpChatBackend::new(url, "m", None);
    let err = complete_with_retry(&b, "p", 8, &fast_retry()).unwrap_err();
    assert!(matches!(err, BackendError::Status(400)));
    assert_eq!(log.lock().unwrap().len(), 1);
}

#[test]
fn malformed_reply_is_a_protocol_error() {
    let (url, _) = serve(Arc::new(|_, _| (200, json!({"unexpected": 1}).to_string())));
    let err = HttpChatBackend::new(url, "m", None).complete("p", 8).unwrap_err();
    assert!(matches!(err, BackendError::Protocol(_)));
    assert!(!err.is_retryable());
}

fn scorer_server() -> (String, Arc<Mutex<Vec<Request>>>) {
    serve(Arc::new(|r, _| {
        let body = match r.path.as_str() {
            // Prefers continuations mentioning "Yes".
            "/loglik" => {
                let cont = r.body["continuation"].as_str().unwrap_or_default();
                json!({"loglik": if cont.contains("Yes") { -1.0 } else { -5.0 }})
            }
            "/generate" => json!({"text": "paris\nignored"}),
            "/tokenize" => {
                json!({"tokens": r.body["text"].as_str().unwrap_or_default().split_whitespace().collect::<Vec<_>>()})
            }
            _ => return (404, "{}".into()),
        };
        (200, body.to_string())
    }))
}

#[test]
fn scorer_backend_endpoints() {
    let (url, log) = scorer_server();
    let b = HttpScorerBackend::new(&format!("{url}/"), None);
    assert_eq!(b.loglik("ctx", " Yes, x").unwrap(), -1.0);
    assert_eq!(b.generate("p", 5).unwrap(), "paris\nignored");
    assert_eq!(b.token_count("a b c").unwrap(), 3);
    let paths: Vec<String> = log.lock().unwrap().iter().map(|r| r.path.clone()).collect();
    assert_eq!(paths, ["/loglik", "/generate", "/tokenize"]);
}

#[test]
fn benchmark_over_http() {
    let (url, _) = scorer_server();
    let b = HttpScorerBackend::new(&url, None);
    let items = vec![
        EvalItem::from_json(json!({"id": "a", "lang": "en", "premise": "P.", "hypothesis": "h", "label": 0}), 1)
            .unwrap(),
        EvalItem::from_json(json!({"id": "b", "lang": "en", "premise": "P.", "hypothesis": "h", "label": 2}), 2)
            .unwrap(),
    ];
    let spec = EvalTaskSpec::get(TaskName::Xnli);
    let res = run_benchmark(&spec, &Dataset::from_items(items), None, &b, &RunConfig::default()).unwrap();
    assert_eq!(res.languages["en"], 0.5);

    let qa = vec![EvalItem::from_json(
        json!({"id": "q", "lang": "en", "context": "c", "question": "capital?", "answers": ["paris"]}),
        1,
    )
    .unwrap()];
    let res =
        run_benchmark(&EvalTaskSpec::get(TaskName::Tydiqa), &Dataset::from_items(qa), None, &b, &RunConfig::default())
            .unwrap();
    assert_eq!(res.items[0].prediction, json!("paris"));
    assert_eq!(res.languages["en"], 1.0);
}

#[test]
fn unreachable_scorer_aborts_the_run() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let b = HttpScorerBackend::new(&format!("http://127.0.0.1:{port}"), None);
    let items =
        vec![EvalItem::from_json(json!({"id": "a", "lang": "en", "premise": "P.", "hypothesis": "h", "label": 0}), 1)
            .unwrap()];
    let err =
        run_benchmark(&EvalTaskSpec::get(TaskName::Xnli), &Dataset::from_items(items), None, &b, &RunConfig::default())
            .unwrap_err();
    assert!(matches!(err, EvalError::Backend(BackendError::Transport(_))), "{err}");
}
