//! Score feed and command endpoint served over HTTP.
//!
//! `GET /feed` is a server-sent-event stream: one `snapshot` event, then one
//! `score` event per closed segment, then `end` when the session is over.
//! `GET /snapshot` returns the same snapshot document. `POST /command`
//! switches the segmentation mode.

use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, watch};

use crate::config::SegmentMode;
use crate::error::{Error, Result};

use super::{Command, ScoreEvent, FEED_VERSION};

/// Capacity of each subscriber's queue; a subscriber further behind is
/// disconnected and must reconnect with `?after=`.
pub const SUBSCRIBER_BUFFER: usize = 256;

/// State of the feed at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    pub version: u32,
    pub mode: Command,
    /// Events with `seq` greater than the requested `after`, in order.
    pub events: Vec<ScoreEvent>,
    /// Sequence number the next event will carry.
    pub next_seq: u64,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandAck {
    pub ok: bool,
    pub version: u32,
    #[serde(flatten)]
    pub mode: Command,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandReject {
    pub ok: bool,
    pub version: u32,
    pub error: String,
}

/// Payload of the final `end` SSE event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndMarker {
    pub version: u32,
    pub next_seq: u64,
}

#[derive(Debug, Clone)]
enum Message {
    Score(ScoreEvent),
    End { next_seq: u64 },
}

struct HubState {
    events: Vec<ScoreEvent>,
    mode: SegmentMode,
    complete: bool,
}

/// Shared between the pipeline (publisher) and HTTP handlers.
pub struct FeedHub {
    state: Mutex<HubState>,
    tx: broadcast::Sender<Message>,
    mode_tx: watch::Sender<SegmentMode>,
}

impl FeedHub {
    pub fn new(mode: SegmentMode) -> Arc<FeedHub> {
        let (tx, _) = broadcast::channel(SUBSCRIBER_BUFFER);
        let (mode_tx, _) = watch::channel(mode);
        Arc::new(FeedHub {
            state: Mutex::new(HubState {
                events: Vec::new(),
                mode,
                complete: false,
            }),
            tx,
            mode_tx,
        })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HubState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Appends an event; its `seq` must be the next in sequence.
    pub fn publish(&self, event: ScoreEvent) -> Result<()> {
        let mut st = self.lock();
        if st.complete {
            return Err(Error::invalid("feed", "publish after close"));
        }
        if event.seq != st.events.len() as u64 {
            return Err(Error::invalid(
                "feed.seq",
                format!("expected {}, got {}", st.events.len(), event.seq),
            ));
        }
        st.events.push(event.clone());
        let _ = self.tx.send(Message::Score(event));
        Ok(())
    }

    /// Marks the session finished; subscribers receive `end`.
    pub fn close(&self) {
        let mut st = self.lock();
        if !st.complete {
            st.complete = true;
            let _ = self.tx.send(Message::End {
                next_seq: st.events.len() as u64,
            });
        }
    }

    pub fn mode(&self) -> SegmentMode {
        self.lock().mode
    }

    /// Receiver the pipeline polls for mode changes.
    pub fn mode_receiver(&self) -> watch::Receiver<SegmentMode> {
        self.mode_tx.subscribe()
    }

    /// Validates and applies a command document. Invalid commands change
    /// nothing; repeating the current mode is accepted and has no effect.
    pub fn command(&self, body: &str) -> std::result::Result<CommandAck, CommandReject> {
        let reject = |error: String| CommandReject {
            ok: false,
            version: FEED_VERSION,
            error,
        };
        let cmd = Command::parse(body).map_err(|e| reject(e.to_string()))?;
        let mode = cmd.segment_mode().map_err(|e| reject(e.to_string()))?;
        let mut st = self.lock();
        if st.complete {
            return Err(reject("session is complete".into()));
        }
        if st.mode != mode {
            st.mode = mode;
            self.mode_tx.send_replace(mode);
        }
        Ok(CommandAck {
            ok: true,
            version: FEED_VERSION,
            mode: Command::from_mode(mode),
        })
    }

    pub fn snapshot(&self, after: Option<u64>) -> Snapshot {
        Self::snapshot_of(&self.lock(), after)
    }

    fn snapshot_of(st: &HubState, after: Option<u64>) -> Snapshot {
        let from = after.map_or(0, |a| a.saturating_add(1)) as usize;
        Snapshot {
            version: FEED_VERSION,
            mode: Command::from_mode(st.mode),
            events: st.events.get(from.min(st.events.len())..).unwrap_or(&[]).to_vec(),
            next_seq: st.events.len() as u64,
            complete: st.complete,
        }
    }

    /// Snapshot plus a receiver positioned right after it, taken atomically.
    fn subscribe(&self, after: Option<u64>) -> (Snapshot, broadcast::Receiver<Message>) {
        let st = self.lock();
        let rx = self.tx.subscribe();
        (Self::snapshot_of(&st, after), rx)
    }

    /// Server-side subscription in feed order: every event after the
    /// snapshot, ending with the session or when the subscriber lags.
    pub fn events(&self, after: Option<u64>) -> (Snapshot, impl Stream<Item = FeedItem> + Send + 'static) {
        let (snap, rx) = self.subscribe(after);
        let rx = (!snap.complete).then_some(rx);
        let tail = stream::unfold(rx, |rx| async move {
            let mut rx = rx?;
            match rx.recv().await {
                Ok(Message::Score(e)) => Some((FeedItem::Score(e), Some(rx))),
                Ok(Message::End { next_seq }) => Some((FeedItem::End { next_seq }, None)),
                // Lagged or closed: the subscriber must reconnect with `?after=`.
                Err(_) => None,
            }
        });
        (snap, tail)
    }
}

/// Items after the snapshot on a subscription.
#[derive(Debug, Clone, PartialEq)]
pub enum FeedItem {
    Score(ScoreEvent),
    End { next_seq: u64 },
}

#[derive(Debug, Deserialize)]
pub struct AfterQuery {
    after: Option<u64>,
}

fn sse_stream(hub: &FeedHub, after: Option<u64>) -> impl Stream<Item = std::result::Result<Event, Infallible>> + Send + 'static {
    let (snap, tail) = hub.events(after);
    let complete = snap.complete;
    let next_seq = snap.next_seq;
    let first = Event::default()
        .event("snapshot")
        .data(serde_json::to_string(&snap).expect("snapshot serializes"));
    let end = move |next_seq: u64| {
        Event::default().event("end").data(
            serde_json::to_string(&EndMarker {
                version: FEED_VERSION,
                next_seq,
            })
            .expect("end marker serializes"),
        )
    };
    let head = stream::iter(
        std::iter::once(first)
            .chain(complete.then(|| end(next_seq)))
            .map(Ok),
    );
    let tail = tail.map(move |item| {
        Ok(match item {
            FeedItem::Score(e) => Event::default()
                .event("score")
                .id(e.seq.to_string())
                .data(e.to_json()),
            FeedItem::End { next_seq } => end(next_seq),
        })
    });
    head.chain(tail)
}

async fn feed(State(hub): State<Arc<FeedHub>>, Query(q): Query<AfterQuery>) -> impl IntoResponse {
    Sse::new(sse_stream(&hub, q.after)).keep_alive(KeepAlive::default())
}

async fn snapshot(State(hub): State<Arc<FeedHub>>, Query(q): Query<AfterQuery>) -> impl IntoResponse {
    Json(hub.snapshot(q.after))
}

async fn command(State(hub): State<Arc<FeedHub>>, body: String) -> impl IntoResponse {
    match hub.command(&body) {
        Ok(ack) => (StatusCode::OK, Json(ack)).into_response(),
        Err(rej) => (StatusCode::BAD_REQUEST, Json(rej)).into_response(),
    }
}

pub fn router(hub: Arc<FeedHub>) -> Router {
    Router::new()
        .route("/feed", get(feed))
        .route("/snapshot", get(snapshot))
        .route("/command", post(command))
        .with_state(hub)
}

/// A running HTTP server on its own runtime.
pub struct FeedServer {
    pub addr: SocketAddr,
    runtime: tokio::runtime::Runtime,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
}

impl FeedServer {
    /// Binds `addr` (port 0 picks a free port) and serves in the background.
    pub fn start(hub: Arc<FeedHub>, addr: SocketAddr) -> Result<FeedServer> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .map_err(|e| Error::io("tokio runtime", e))?;
        let listener = runtime
            .block_on(tokio::net::TcpListener::bind(addr))
            .map_err(|e| Error::io(addr.to_string(), e))?;
        let addr = listener
            .local_addr()
            .map_err(|e| Error::io("listener", e))?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        runtime.spawn(async move {
            let _ = axum::serve(listener, router(hub))
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(FeedServer {
            addr,
            runtime,
            shutdown: Some(tx),
        })
    }

    pub fn runtime(&self) -> &tokio::runtime::Runtime {
        &self.runtime
    }
}

impl Drop for FeedServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ModeKind, SliceLength};
    use crate::scoring::SegmentScorecard;

    fn ev(seq: u64) -> ScoreEvent {
        ScoreEvent {
            version: FEED_VERSION,
            seq,
            wall_ms: 0,
            segment: seq,
            mode: ModeKind::Automatic,
            slice_minutes: None,
            scorecard: SegmentScorecard {
                segment: seq,
                start: seq * 10,
                end: seq * 10 + 9,
                per_student: vec![],
                aggregate: None,
                events: 0,
                fi: 0,
                ci: None,
            },
            overall: None,
            dropped_frames: 0,
        }
    }

    #[test]
    fn commands_are_validated_and_idempotent() {
        let hub = FeedHub::new(SegmentMode::Automatic);
        let mut rx = hub.mode_receiver();
        let rej = hub.command(r#"{"mode":"manual","slice":7}"#).unwrap_err();
        assert!(!rej.ok);
        assert_eq!(hub.mode(), SegmentMode::Automatic);
        assert!(!rx.has_changed().unwrap());
        hub.command(r#"{"mode":"automatic"}"#).unwrap();
        assert!(!rx.has_changed().unwrap());
        let ack = hub.command(r#"{"mode":"manual","slice":3}"#).unwrap();
        assert_eq!(ack.mode.slice, Some(SliceLength::Three));
        assert!(rx.has_changed().unwrap());
        assert_eq!(*rx.borrow_and_update(), SegmentMode::Manual { slice: SliceLength::Three });
        hub.command(r#"{"mode":"manual","slice":3}"#).unwrap();
        assert!(!rx.has_changed().unwrap());
    }

    #[test]
    fn publish_requires_contiguous_seq() {
        let hub = FeedHub::new(SegmentMode::Automatic);
        hub.publish(ev(0)).unwrap();
        assert!(hub.publish(ev(2)).is_err());
        hub.publish(ev(1)).unwrap();
        assert_eq!(hub.snapshot(Some(0)).events, vec![ev(1)]);
        assert_eq!(hub.snapshot(None).next_seq, 2);
        hub.close();
        assert!(hub.publish(ev(2)).is_err());
    }

    #[tokio::test]
    async fn subscribers_see_identical_sequences() {
        let hub = FeedHub::new(SegmentMode::Automatic);
        hub.publish(ev(0)).unwrap();
        let (s1, t1) = hub.events(None);
        hub.publish(ev(1)).unwrap();
        let (s2, t2) = hub.events(None);
        hub.publish(ev(2)).unwrap();
        hub.close();
        let a: Vec<_> = t1.collect().await;
        let b: Vec<_> = t2.collect().await;
        let full = |s: Snapshot, t: Vec<FeedItem>| {
            let mut v: Vec<_> = s.events.into_iter().map(FeedItem::Score).collect();
            v.extend(t);
            v
        };
        let a = full(s1, a);
        let b = full(s2, b);
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert_eq!(a[3], FeedItem::End { next_seq: 3 });
    }
}
