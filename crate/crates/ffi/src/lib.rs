//! C interface to the engagement engine.
//!
//! Every fallible function returns an [`EngageStatus`]; on failure the message
//! is kept per thread and read with [`engage_last_error`]. Handles are opaque
//! and must be released with their `_free` function. Strings are UTF-8 and
//! NUL-terminated on input; output strings are copied into caller buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use engage::config::SessionConfig;
use engage::error::Error;
use engage::eval::f_beta;
use engage::gaze::t_test_equal_mean;
use engage::ingest::{grayscale_convert, FaceFrameRecord, GrayFrame, Landmarks, ParticipantId, Tick};
use engage::presence::{chi_square_distance, ChiSquareVariant, HistogramDescriptor};
use engage::service::{participant_ids, Command, Engine, ScoreEvent};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngageStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ConfigParse = 3,
    Io = 4,
    Dimension = 5,
    OutOfOrder = 6,
    InsufficientData = 7,
    Degenerate = 8,
    CommandRejected = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> EngageStatus {
    match err {
        Error::Module { source, .. } => status_of(source),
        Error::ConfigParse(_) => EngageStatus::ConfigParse,
        Error::Io { .. } | Error::MissingStream { .. } | Error::CorruptFrame { .. } => EngageStatus::Io,
        Error::Dimension { .. } | Error::BinMismatch(..) => EngageStatus::Dimension,
        Error::OutOfOrder { .. } => EngageStatus::OutOfOrder,
        Error::InsufficientData(_) => EngageStatus::InsufficientData,
        Error::Degenerate(_) | Error::BehindCamera(_) | Error::NonFinite | Error::NoLandmarks => EngageStatus::Degenerate,
        Error::Command(_) => EngageStatus::CommandRejected,
        _ => EngageStatus::InvalidArgument,
    }
}

fn fail(err: Error) -> EngageStatus {
    let s = status_of(&err);
    set_error(err.to_string());
    s
}

fn guard(f: impl FnOnce() -> EngageStatus) -> EngageStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == EngageStatus::Ok {
                set_error("");
            }
            s
        }
        Err(_) => {
            set_error("internal panic");
            EngageStatus::Panic
        }
    }
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            set_error(concat!("`", stringify!($p), "` is null"));
            return EngageStatus::NullPointer;
        })+
    };
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, EngageStatus> {
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("`{name}` is not UTF-8"));
        EngageStatus::InvalidArgument
    })
}

/// Copies `s` plus a NUL into `buf`. `needed` receives the full size
/// including the NUL either way.
unsafe fn copy_out(s: &str, buf: *mut c_char, cap: usize, needed: *mut usize) -> EngageStatus {
    let n = s.len() + 1;
    if !needed.is_null() {
        *needed = n;
    }
    if buf.is_null() || cap < n {
        return EngageStatus::BufferTooSmall;
    }
    ptr::copy_nonoverlapping(s.as_ptr(), buf as *mut u8, s.len());
    *buf.add(s.len()) = 0;
    EngageStatus::Ok
}

/// Copies the calling thread's last error message (empty after a success).
/// Reading the message never changes it.
///
/// # Safety
/// `buf` must hold `cap` bytes or be null; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn engage_last_error(buf: *mut c_char, cap: usize, needed: *mut usize) -> EngageStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    copy_out(&msg, buf, cap, needed)
}

// ------------------------------------------------------------------ config

/// Parsed and validated session configuration.
pub struct EngageConfig(SessionConfig);

/// Parses a TOML session configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn engage_config_from_toml(toml: *const c_char, out: *mut *mut EngageConfig) -> EngageStatus {
    non_null!(toml, out);
    guard(|| {
        let text = match str_arg(toml, "toml") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match SessionConfig::from_toml(text).and_then(|c| c.validate().map(|_| c)) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(EngageConfig(c)));
                EngageStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Number of participants, instructor first.
///
/// # Safety
/// `config` must come from [`engage_config_from_toml`].
#[no_mangle]
pub unsafe extern "C" fn engage_config_participant_count(config: *const EngageConfig) -> usize {
    config.as_ref().map_or(0, |c| participant_ids(&c.0).len())
}

/// # Safety
/// `config` must be null or come from [`engage_config_from_toml`], once.
#[no_mangle]
pub unsafe extern "C" fn engage_config_free(config: *mut EngageConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

// ------------------------------------------------------------------ engine

/// A live engine plus the tick being assembled and undelivered events.
pub struct EngageEngine {
    engine: Engine,
    ids: Vec<ParticipantId>,
    tick: Option<Tick>,
    events: std::collections::VecDeque<ScoreEvent>,
}

impl EngageEngine {
    fn tick_mut(&mut self) -> Result<&mut Tick, EngageStatus> {
        self.tick.as_mut().ok_or_else(|| {
            set_error("no tick open; call engage_engine_begin_tick first");
            EngageStatus::InvalidArgument
        })
    }

    fn slot(&self, index: usize) -> Result<usize, EngageStatus> {
        if index < self.ids.len() {
            Ok(index)
        } else {
            set_error(format!("participant index {index} out of range ({})", self.ids.len()));
            Err(EngageStatus::InvalidArgument)
        }
    }
}

/// Creates an engine. The configuration is copied and may be freed afterwards.
///
/// # Safety
/// `config` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn engage_engine_new(
    config: *const EngageConfig,
    has_presentation: bool,
    out: *mut *mut EngageEngine,
) -> EngageStatus {
    non_null!(config, out);
    guard(|| {
        let config = (*config).0.clone();
        let ids = participant_ids(&config);
        match Engine::new(config, has_presentation) {
            Ok(engine) => {
                *out = Box::into_raw(Box::new(EngageEngine {
                    engine,
                    ids,
                    tick: None,
                    events: Default::default(),
                }));
                EngageStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `engine` must be null or come from [`engage_engine_new`], once.
#[no_mangle]
pub unsafe extern "C" fn engage_engine_free(engine: *mut EngageEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Starts assembling the tick at frame timestamp `ts`, discarding any tick
/// that was begun but not pushed.
///
/// # Safety
/// `engine` must be valid.
#[no_mangle]
pub unsafe extern "C" fn engage_engine_begin_tick(engine: *mut EngageEngine, ts: u64) -> EngageStatus {
    non_null!(engine);
    let e = &mut *engine;
    let n = e.ids.len();
    e.tick = Some(Tick {
        ts,
        presentation: None,
        screens: vec![None; n],
        faces: vec![None; n],
    });
    set_error("");
    EngageStatus::Ok
}

unsafe fn frame_arg(width: usize, height: usize, data: *const u8) -> Result<GrayFrame, EngageStatus> {
    if data.is_null() {
        set_error("`data` is null");
        return Err(EngageStatus::NullPointer);
    }
    let len = width.checked_mul(height).ok_or_else(|| {
        set_error("frame size overflows");
        EngageStatus::Dimension
    })?;
    let bytes = std::slice::from_raw_parts(data, len).to_vec();
    GrayFrame::new(width, height, bytes).map_err(fail)
}

/// Sets the presentation frame (8-bit grayscale, row-major) of the open tick.
///
/// # Safety
/// `engine` must be valid; `data` must hold `width * height` bytes.
#[no_mangle]
pub unsafe extern "C" fn engage_engine_set_presentation(
    engine: *mut EngageEngine,
    width: usize,
    height: usize,
    data: *const u8,
) -> EngageStatus {
    non_null!(engine);
    guard(|| {
        let e = &mut *engine;
        let r = frame_arg(width, height, data).and_then(|f| {
            e.tick_mut()?.presentation = Some(f);
            Ok(())
        });
        r.err().unwrap_or(EngageStatus::Ok)
    })
}

/// Sets participant `index`'s screen frame in the open tick.
///
/// # Safety
/// `engine` must be valid; `data` must hold `width * height` bytes.
#[no_mangle]
pub unsafe extern "C" fn engage_engine_set_screen(
    engine: *mut EngageEngine,
    index: usize,
    width: usize,
    height: usize,
    data: *const u8,
) -> EngageStatus {
    non_null!(engine);
    guard(|| {
        let e = &mut *engine;
        let r = e.slot(index).and_then(|i| {
            let f = frame_arg(width, height, data)?;
            e.tick_mut()?.screens[i] = Some(f);
            Ok(())
        });
        r.err().unwrap_or(EngageStatus::Ok)
    })
}

/// Sets participant `index`'s face record in the open tick. `landmarks` holds
/// 68 (x, y) pairs as 136 doubles, or is null when no face was detected.
///
/// # Safety
/// `engine` must be valid; `landmarks` must be null or hold 136 doubles.
#[no_mangle]
pub unsafe extern "C" fn engage_engine_set_face(
    engine: *mut EngageEngine,
    index: usize,
    landmarks: *const f64,
) -> EngageStatus {
    non_null!(engine);
    guard(|| {
        let e = &mut *engine;
        let r = e.slot(index).and_then(|i| {
            let lm = if landmarks.is_null() {
                None
            } else {
                let raw = std::slice::from_raw_parts(landmarks, 136);
                Some(Landmarks::new(raw.chunks(2).map(|p| [p[0], p[1]]).collect()).map_err(fail)?)
            };
            let tick = e.tick_mut()?;
            tick.faces[i] = Some(FaceFrameRecord {
                ts: tick.ts,
                face_detected: lm.is_some(),
                landmarks: lm,
            });
            Ok(())
        });
        r.err().unwrap_or(EngageStatus::Ok)
    })
}

/// Processes the open tick. `events_ready` receives the number of score
/// events waiting to be read with [`engage_engine_next_event`].
///
/// # Safety
/// `engine` must be valid; `events_ready` may be null.
#[no_mangle]
pub unsafe extern "C" fn engage_engine_push(engine: *mut EngageEngine, events_ready: *mut usize) -> EngageStatus {
    non_null!(engine);
    guard(|| {
        let e = &mut *engine;
        let tick = match e.tick.take() {
            Some(t) => t,
            None => return e.tick_mut().err().unwrap_or(EngageStatus::InvalidArgument),
        };
        let s = match e.engine.push(&tick) {
            Ok(new) => {
                e.events.extend(new);
                EngageStatus::Ok
            }
            Err(err) => fail(err),
        };
        if !events_ready.is_null() {
            *events_ready = e.events.len();
        }
        s
    })
}

/// Closes the session, scoring the open segment.
///
/// # Safety
/// `engine` must be valid; `events_ready` may be null.
#[no_mangle]
pub unsafe extern "C" fn engage_engine_finish(engine: *mut EngageEngine, events_ready: *mut usize) -> EngageStatus {
    non_null!(engine);
    guard(|| {
        let e = &mut *engine;
        let s = match e.engine.finish() {
            Ok(new) => {
                e.events.extend(new);
                EngageStatus::Ok
            }
            Err(err) => fail(err),
        };
        if !events_ready.is_null() {
            *events_ready = e.events.len();
        }
        s
    })
}

/// Copies the oldest waiting score event as one JSON line and removes it.
/// On `BufferTooSmall` the event stays queued and `needed` gives the size.
///
/// # Safety
/// `engine` must be valid; `buf` must hold `cap` bytes; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn engage_engine_next_event(
    engine: *mut EngageEngine,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> EngageStatus {
    non_null!(engine);
    guard(|| {
        let e = &mut *engine;
        let Some(ev) = e.events.front() else {
            if !needed.is_null() {
                *needed = 0;
            }
            set_error("no score event waiting");
            return EngageStatus::InsufficientData;
        };
        let s = copy_out(&ev.to_json(), buf, cap, needed);
        match s {
            EngageStatus::Ok => {
                e.events.pop_front();
            }
            _ => set_error(format!("buffer of {cap} bytes is too small")),
        }
        s
    })
}

/// Applies a mode command, e.g. `{"mode":"manual","slice":5}`.
///
/// # Safety
/// `engine` must be valid; `command` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn engage_engine_command(engine: *mut EngageEngine, command: *const c_char) -> EngageStatus {
    non_null!(engine, command);
    guard(|| {
        let body = match str_arg(command, "command") {
            Ok(b) => b,
            Err(s) => return s,
        };
        match Command::parse(body).and_then(|c| c.segment_mode()) {
            Ok(mode) => {
                (*engine).engine.set_mode(mode);
                EngageStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

// ----------------------------------------------------------------- helpers

/// Symmetric chi-square distance between two count histograms of `bins` bins.
///
/// # Safety
/// `a` and `b` must hold `bins` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn engage_chi_square(a: *const u64, b: *const u64, bins: usize, out: *mut f64) -> EngageStatus {
    non_null!(a, b, out);
    guard(|| {
        let hist = |p: *const u64| {
            let counts = std::slice::from_raw_parts(p, bins).to_vec();
            let total = counts.iter().sum::<u64>().max(1);
            HistogramDescriptor { counts, total }
        };
        match chi_square_distance(&hist(a), &hist(b), ChiSquareVariant::Symmetric) {
            Ok(d) => {
                *out = d;
                EngageStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Pooled-variance two-sample t-test of equal means.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct EngageTTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

/// # Safety
/// `a` must hold `na` doubles, `b` must hold `nb`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn engage_t_test(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    out: *mut EngageTTest,
) -> EngageStatus {
    non_null!(a, b, out);
    guard(|| {
        let (a, b) = (std::slice::from_raw_parts(a, na), std::slice::from_raw_parts(b, nb));
        match t_test_equal_mean(a, b) {
            Ok(r) => {
                *out = EngageTTest { t: r.t, df: r.df, p: r.p };
                EngageStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// F-beta of specificity and negative predictive value; 0 if both are 0.
#[no_mangle]
pub extern "C" fn engage_f_beta(specificity: f64, npv: f64, beta: f64) -> f64 {
    f_beta(specificity, npv, beta)
}

/// Luma of one RGB pixel, rounded to nearest.
#[no_mangle]
pub extern "C" fn engage_grayscale(r: u8, g: u8, b: u8) -> u8 {
    grayscale_convert(r, g, b)
}
