use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::thread;
use std::time::Duration;

use serde_json::Value;

use engage::config::SegmentMode;
use engage::ingest::open_session;
use engage::service::feed::{FeedHub, FeedServer};
use engage::service::{run_live, validate_feed_event, LiveOptions, FEED_VERSION};
use engage::synth::Scenario;

/// HTTP/1.0 so the server closes the connection when the body ends.
fn request(addr: SocketAddr, method: &str, path: &str, body: &str) -> (u16, String) {
    let mut s = TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(120))).unwrap();
    write!(
        s,
        "{method} {path} HTTP/1.0\r\nHost: x\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut raw = String::new();
    s.read_to_string(&mut raw).unwrap();
    let (head, body) = raw.split_once("\r\n\r\n").unwrap();
    let status = head.split(' ').nth(1).unwrap().parse().unwrap();
    (status, body.to_string())
}

struct SseEvent {
    name: String,
    id: Option<String>,
    raw: String,
    data: Value,
}

fn parse_sse(body: &str) -> Vec<SseEvent> {
    body.split("\n\n")
        .filter_map(|block| {
            let mut name = None;
            let mut id = None;
            let mut data = None;
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("event: ") {
                    name = Some(v.to_string());
                } else if let Some(v) = line.strip_prefix("id: ") {
                    id = Some(v.to_string());
                } else if let Some(v) = line.strip_prefix("data: ") {
                    data = Some(v.to_string());
                }
            }
            let raw = data?;
            Some(SseEvent {
                name: name?,
                id,
                data: serde_json::from_str(&raw).unwrap(),
                raw,
            })
        })
        .collect()
}

#[test]
fn feed_over_http_matches_live_run() {
    let dir = tempfile::tempdir().unwrap();
    Scenario::four_behaviors(7, 3).write_session(dir.path()).unwrap();

    let hub = FeedHub::new(SegmentMode::Automatic);
    let server = FeedServer::start(hub.clone(), "127.0.0.1:0".parse().unwrap()).unwrap();
    let addr = server.addr;

    let (status, body) = request(addr, "POST", "/command", r#"{"mode":"manual"}"#);
    assert_eq!(status, 400);
    assert!(body.starts_with(r#"{"ok":false,"version":1,"error":""#), "{body}");
    assert!(body.contains("slice"));

    let (status, body) = request(addr, "POST", "/command", r#"{"mode":"manual","slice":3}"#);
    assert_eq!(status, 200);
    assert_eq!(body, r#"{"ok":true,"version":1,"mode":"manual","slice":3}"#);
    let (_, body) = request(addr, "POST", "/command", r#"{"slice":3,"mode":"manual"}"#);
    assert_eq!(body, r#"{"ok":true,"version":1,"mode":"manual","slice":3}"#, "idempotent");

    // subscribe before the session produces anything
    let subscriber = thread::spawn(move || request(addr, "GET", "/feed", ""));
    thread::sleep(Duration::from_millis(200));

    let (config, streams) = open_session(dir.path()).unwrap();
    let report = run_live(
        config,
        streams,
        LiveOptions {
            hub: Some(hub.clone()),
            ..Default::default()
        },
    )
    .unwrap();
    assert!(!report.events.is_empty());

    let (status, body) = subscriber.join().unwrap();
    assert_eq!(status, 200);
    let sse = parse_sse(&body);
    assert_eq!(sse[0].name, "snapshot");
    assert_eq!(sse.last().unwrap().name, "end");
    let n = report.events.len() as u64;
    assert_eq!(sse.last().unwrap().raw, format!(r#"{{"version":{FEED_VERSION},"next_seq":{n}}}"#));
    assert!(sse[0].raw.starts_with(r#"{"version":1,"mode":{"mode":"manual","slice":3},"events":["#));

    let scores: Vec<&SseEvent> = sse.iter().filter(|e| e.name == "score").collect();
    let snap_events = sse[0].data["events"].as_array().unwrap().len();
    assert_eq!(snap_events + scores.len(), report.events.len());
    for (e, want) in scores.iter().zip(&report.events[snap_events..]) {
        assert_eq!(e.id.as_deref(), Some(want.seq.to_string().as_str()));
        assert_eq!(e.raw, want.to_json());
        assert!(e.raw.starts_with(&format!(r#"{{"version":1,"seq":{},"wall_ms":"#, want.seq)));
        validate_feed_event(&e.data).unwrap();
        assert_eq!(e.data["mode"], "manual");
        assert_eq!(e.data["slice_minutes"], 3);
    }

    // late subscribers get everything in the snapshot, then the end marker
    let (_, body) = request(addr, "GET", "/feed?after=0", "");
    let late = parse_sse(&body);
    assert_eq!(late.len(), 2);
    assert_eq!(late[0].data["events"].as_array().unwrap().len() as u64, n - 1);
    assert_eq!(late[0].data["complete"], true);
    assert_eq!(late[1].name, "end");

    let (status, body) = request(addr, "GET", "/snapshot?after=0", "");
    assert_eq!(status, 200);
    let snap: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(snap["next_seq"], n);
    let seqs: Vec<u64> = snap["events"].as_array().unwrap().iter().map(|e| e["seq"].as_u64().unwrap()).collect();
    assert_eq!(seqs, (1..n).collect::<Vec<_>>());

    let (status, _) = request(addr, "POST", "/command", r#"{"mode":"automatic"}"#);
    assert_eq!(status, 400, "commands after the session ends are rejected");
    let (_, body) = request(addr, "GET", "/snapshot?after=999", "");
    assert_eq!(body, format!(r#"{{"version":1,"mode":{{"mode":"manual","slice":3}},"events":[],"next_seq":{n},"complete":true}}"#));
}
