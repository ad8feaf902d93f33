//! Drives the live engine from session streams: a reader thread decodes ticks
//! into a bounded queue, the calling thread runs the engine, applies mode
//! commands and publishes score events.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::sync_channel;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::config::SessionConfig;
use crate::error::{Error, Result};
use crate::ingest::{SessionStreams, Tick, TickStream};
use crate::synth::Scenario;

use super::feed::FeedHub;
use super::live::Engine;
use super::offline::SessionOutcome;
use super::ScoreEvent;

/// Overload handling: once more than `max_backlog` ticks wait in the queue,
/// new ticks lose their screen frames (presentation and screens). Face
/// records are always kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DropPolicy {
    pub max_backlog: usize,
}

#[derive(Clone)]
pub struct LiveOptions {
    /// Pace the reader at the session frame rate instead of as fast as possible.
    pub realtime: bool,
    pub drop_policy: Option<DropPolicy>,
    /// Tick queue capacity between reader and engine.
    pub queue: usize,
    pub hub: Option<Arc<FeedHub>>,
}

impl Default for LiveOptions {
    fn default() -> Self {
        LiveOptions {
            realtime: false,
            drop_policy: None,
            queue: 64,
            hub: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LiveReport {
    pub outcome: SessionOutcome,
    pub events: Vec<ScoreEvent>,
    pub dropped_frames: u64,
    pub ticks: u64,
    /// Mean engine time per tick, milliseconds.
    pub mean_tick_ms: f64,
    pub max_tick_ms: f64,
    pub max_backlog: usize,
}

struct Item {
    tick: Tick,
    stripped: u64,
}

fn strip_screens(tick: &mut Tick) -> u64 {
    let mut n = tick.presentation.take().is_some() as u64;
    for s in tick.screens.iter_mut() {
        n += s.take().is_some() as u64;
    }
    n
}

/// Runs the streaming pipeline to the end of the streams.
pub fn run_live(config: SessionConfig, streams: SessionStreams, opts: LiveOptions) -> Result<LiveReport> {
    let has_presentation = streams.presentation.is_some();
    let fps = config.fps.max(1) as f64;
    let mut engine = Engine::new(config, has_presentation)?;
    let mut mode_rx = opts.hub.as_ref().map(|h| h.mode_receiver());
    if let Some(hub) = &opts.hub {
        engine.set_mode(hub.mode());
    }

    let backlog = Arc::new(AtomicUsize::new(0));
    let (tx, rx) = sync_channel::<Result<Item>>(opts.queue.max(1));
    let reader = {
        let backlog = Arc::clone(&backlog);
        let policy = opts.drop_policy;
        let realtime = opts.realtime;
        thread::spawn(move || {
            let start = Instant::now();
            let mut first_ts = None;
            for tick in TickStream::new(streams) {
                let item = tick.map(|mut tick| {
                    if realtime {
                        let t0 = *first_ts.get_or_insert(tick.ts);
                        let due = Duration::from_secs_f64((tick.ts - t0) as f64 / fps);
                        if let Some(wait) = due.checked_sub(start.elapsed()) {
                            thread::sleep(wait);
                        }
                    }
                    let stripped = match policy {
                        Some(p) if backlog.load(Ordering::Acquire) > p.max_backlog => strip_screens(&mut tick),
                        _ => 0,
                    };
                    Item { tick, stripped }
                });
                let failed = item.is_err();
                backlog.fetch_add(1, Ordering::AcqRel);
                if tx.send(item).is_err() || failed {
                    break;
                }
            }
        })
    };

    let mut events = Vec::new();
    let mut total = Duration::ZERO;
    let mut max = Duration::ZERO;
    let mut ticks = 0u64;
    let mut max_backlog = 0usize;
    let publish = |events: &mut Vec<ScoreEvent>, new: Vec<ScoreEvent>| -> Result<()> {
        for e in new {
            if let Some(hub) = &opts.hub {
                hub.publish(e.clone())?;
            }
            events.push(e);
        }
        Ok(())
    };
    let result = (|| -> Result<()> {
        for item in rx.iter() {
            max_backlog = max_backlog.max(backlog.fetch_sub(1, Ordering::AcqRel));
            let item = item?;
            if let Some(rx) = mode_rx.as_mut() {
                if rx.has_changed().unwrap_or(false) {
                    engine.set_mode(*rx.borrow_and_update());
                }
            }
            if item.stripped > 0 {
                engine.note_dropped(item.stripped);
            }
            let t = Instant::now();
            let new = engine.push(&item.tick)?;
            let dt = t.elapsed();
            total += dt;
            max = max.max(dt);
            ticks += 1;
            publish(&mut events, new)?;
        }
        let new = engine.finish()?;
        publish(&mut events, new)
    })();
    drop(rx);
    reader
        .join()
        .map_err(|_| Error::invalid("stream-ingest", "reader thread panicked"))?;
    if let Some(hub) = &opts.hub {
        hub.close();
    }
    result?;

    Ok(LiveReport {
        dropped_frames: engine.dropped(),
        outcome: engine.into_outcome(),
        events,
        ticks,
        mean_tick_ms: if ticks > 0 {
            total.as_secs_f64() * 1e3 / ticks as f64
        } else {
            0.0
        },
        max_tick_ms: max.as_secs_f64() * 1e3,
        max_backlog,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub frames: u64,
    pub width: usize,
    pub height: usize,
    pub participants: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
    pub score_events: usize,
}

/// Times the live engine alone (rendering excluded) over a synthetic session.
pub fn benchmark(scenario: &Scenario, frames: u64) -> Result<BenchReport> {
    let renderer = scenario.renderer()?;
    let mut engine = Engine::new(scenario.config(), scenario.presentation_stream)?;
    let frames = frames.min(scenario.frame_count());
    let mut times = Vec::with_capacity(frames as usize);
    let mut events = 0;
    for ts in 0..frames {
        let tick = renderer.tick(ts)?.into_tick(scenario.presentation_stream);
        let t = Instant::now();
        events += engine.push(&tick)?.len();
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    events += engine.finish()?.len();
    let mean = times.iter().sum::<f64>() / times.len().max(1) as f64;
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    let p95 = sorted
        .get(((sorted.len() as f64 * 0.95) as usize).min(sorted.len().saturating_sub(1)))
        .copied()
        .unwrap_or(0.0);
    Ok(BenchReport {
        frames,
        width: scenario.width,
        height: scenario.height,
        participants: scenario.students.len() + 1,
        mean_ms: mean,
        p95_ms: p95,
        max_ms: sorted.last().copied().unwrap_or(0.0),
        score_events: events,
    })
}
