//! Session directory ingestion: configuration, screen-frame streams and
//! face/landmark streams, aligned on the shared frame clock.
//!
//! Layout of a session directory:
//!
//! ```text
//! session.cfg                    TOML, see `config`
//! presentation/frame_<ts>.pgm    optional presentation video (or presentation.raw)
//! P<id>/screen/frame_<ts>.pgm    screen capture of participant <id> (or P<id>/screen.raw)
//! P<id>/face.jsonl               {"ts":0,"face":true,"lm":[[x,y],...]} per line
//! ```
//!
//! The packed raw format is an ASCII header line `W H fps\n` followed by
//! consecutive `W*H` row-major 8-bit frames; frame `i` has timestamp `i`.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::config::{load_session_config, ParticipantConfig, Role, SessionConfig};
use crate::error::{Error, Result};

pub const LANDMARK_COUNT: usize = 68;

/// Opaque participant identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParticipantId(pub String);

impl ParticipantId {
    pub fn new(id: impl Into<String>) -> Self {
        ParticipantId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ParticipantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ParticipantId {
    fn from(s: &str) -> Self {
        ParticipantId(s.to_owned())
    }
}

/// Standard luma weights, evaluated in integer arithmetic so every caller
/// rounds identically: `round(0.299 R + 0.587 G + 0.114 B)`.
pub fn grayscale_convert(r: u8, g: u8, b: u8) -> u8 {
    let sum = 299 * r as u32 + 587 * g as u32 + 114 * b as u32;
    ((sum + 500) / 1000).min(255) as u8
}

/// An 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayFrame {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayFrame {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::Dimension {
                expected: (width, height),
                got: (data.len(), 1),
            });
        }
        Ok(GrayFrame {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayFrame {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn from_rgb(width: usize, height: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != width * height * 3 {
            return Err(Error::Dimension {
                expected: (width, height),
                got: (rgb.len() / 3, 1),
            });
        }
        let data = rgb
            .chunks_exact(3)
            .map(|p| grayscale_convert(p[0], p[1], p[2]))
            .collect();
        GrayFrame::new(width, height, data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenFrameRecord {
    pub ts: u64,
    pub frame: GrayFrame,
}

/// Exactly 68 finite 2D landmark points in the fixed 68-point layout
/// (index 0 is landmark 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Landmarks(Vec<[f64; 2]>);

impl Landmarks {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() != LANDMARK_COUNT {
            return Err(Error::invalid(
                "lm",
                format!("expected {LANDMARK_COUNT} landmarks, got {}", points.len()),
            ));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("lm", "landmark coordinates must be finite"));
        }
        Ok(Landmarks(points))
    }

    /// 1-based lookup, matching the usual 68-landmark numbering.
    pub fn point(&self, one_based: usize) -> [f64; 2] {
        self.0[one_based - 1]
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceFrameRecord {
    pub ts: u64,
    pub face_detected: bool,
    pub landmarks: Option<Landmarks>,
}

#[derive(Serialize, Deserialize)]
struct FaceLine {
    ts: u64,
    face: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lm: Option<Vec<[f64; 2]>>,
}

impl FaceFrameRecord {
    pub fn absent(ts: u64) -> Self {
        FaceFrameRecord {
            ts,
            face_detected: false,
            landmarks: None,
        }
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let raw: FaceLine =
            serde_json::from_str(line).map_err(|e| Error::invalid("face record", e.to_string()))?;
        let landmarks = raw.lm.map(Landmarks::new).transpose()?;
        if landmarks.is_some() && !raw.face {
            return Err(Error::invalid(
                "face record",
                "landmarks present but face = false",
            ));
        }
        Ok(FaceFrameRecord {
            ts: raw.ts,
            face_detected: raw.face,
            landmarks,
        })
    }

    pub fn to_line(&self) -> String {
        let raw = FaceLine {
            ts: self.ts,
            face: self.face_detected,
            lm: self.landmarks.as_ref().map(|l| l.0.clone()),
        };
        serde_json::to_string(&raw).expect("face record serializes")
    }
}

fn decode_pnm(bytes: &[u8]) -> std::result::Result<GrayFrame, String> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Pnm).map_err(|e| e.to_string())?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(buf) => GrayFrame::new(w, h, buf.into_raw()).map_err(|e| e.to_string()),
        DynamicImage::ImageRgb8(buf) => GrayFrame::from_rgb(w, h, buf.as_raw()).map_err(|e| e.to_string()),
        other => Err(format!("unsupported pixel format {:?}", other.color())),
    }
}

/// Reads an 8-bit PGM (or PPM, converted with [`grayscale_convert`]).
pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayFrame> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes).map_err(|reason| Error::CorruptFrame {
        stream: path.display().to_string(),
        location: "file".into(),
        reason,
    })
}

pub fn write_pgm(path: impl AsRef<Path>, frame: &GrayFrame) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let enc = PnmEncoder::new(BufWriter::new(file))
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary));
    enc.write_image(
        frame.pixels(),
        frame.width() as u32,
        frame.height() as u32,
        ExtendedColorType::L8,
    )
    .map_err(|e| Error::io(path, std::io::Error::other(e)))
}

/// Writes a binary mask as a PBM bitmap (foreground = 1).
pub fn write_pbm(path: impl AsRef<Path>, width: usize, height: usize, bits: &[bool]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let samples: Vec<u8> = bits.iter().map(|&b| b as u8).collect();
    let enc = PnmEncoder::new(BufWriter::new(file))
        .with_subtype(PnmSubtype::Bitmap(SampleEncoding::Binary));
    enc.write_image(&samples, width as u32, height as u32, ExtendedColorType::L8)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))
}

/// Writer for the packed raw screen format.
pub struct RawWriter {
    out: BufWriter<File>,
    width: usize,
    height: usize,
    path: PathBuf,
}

impl RawWriter {
    pub fn create(path: impl AsRef<Path>, width: usize, height: usize, fps: u32) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{width} {height} {fps}").map_err(|e| Error::io(&path, e))?;
        Ok(RawWriter {
            out,
            width,
            height,
            path,
        })
    }

    pub fn push(&mut self, frame: &GrayFrame) -> Result<()> {
        if frame.dims() != (self.width, self.height) {
            return Err(Error::Dimension {
                expected: (self.width, self.height),
                got: frame.dims(),
            });
        }
        self.out
            .write_all(frame.pixels())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

enum ScreenSource {
    Frames {
        entries: std::vec::IntoIter<(u64, PathBuf)>,
    },
    Raw {
        reader: BufReader<File>,
        width: usize,
        height: usize,
        next_ts: u64,
    },
}

/// Lazily decoded, timestamp-ordered screen frames of one stream.
pub struct ScreenStream {
    name: String,
    source: ScreenSource,
    dims: Option<(usize, usize)>,
    failed: bool,
}

impl ScreenStream {
    /// Opens `<base>/` (a directory of `frame_<ts>.pgm`) or `<base>.raw`.
    pub fn open(name: impl Into<String>, base: &Path) -> Result<Option<Self>> {
        let name = name.into();
        if base.is_dir() {
            let mut entries = Vec::new();
            let rd = std::fs::read_dir(base).map_err(|e| Error::io(base, e))?;
            for entry in rd {
                let entry = entry.map_err(|e| Error::io(base, e))?;
                let file_name = entry.file_name();
                let Some(fname) = file_name.to_str() else { continue };
                let Some(stem) = fname
                    .strip_prefix("frame_")
                    .and_then(|s| s.strip_suffix(".pgm").or_else(|| s.strip_suffix(".ppm")))
                else {
                    continue;
                };
                let ts: u64 = stem.parse().map_err(|_| Error::CorruptFrame {
                    stream: name.clone(),
                    location: fname.to_owned(),
                    reason: "frame file name must be frame_<integer>.pgm".into(),
                })?;
                entries.push((ts, entry.path()));
            }
            entries.sort();
            for pair in entries.windows(2) {
                if pair[0].0 == pair[1].0 {
                    return Err(Error::CorruptFrame {
                        stream: name,
                        location: pair[1].1.display().to_string(),
                        reason: format!("duplicate timestamp {}", pair[0].0),
                    });
                }
            }
            return Ok(Some(ScreenStream {
                name,
                source: ScreenSource::Frames {
                    entries: entries.into_iter(),
                },
                dims: None,
                failed: false,
            }));
        }
        let raw = base.with_extension("raw");
        if raw.is_file() {
            let file = File::open(&raw).map_err(|e| Error::io(&raw, e))?;
            let mut reader = BufReader::new(file);
            let mut header = String::new();
            reader
                .read_line(&mut header)
                .map_err(|e| Error::io(&raw, e))?;
            let fields: Vec<&str> = header.split_whitespace().collect();
            let parsed: Option<(usize, usize, u32)> = match fields.as_slice() {
                [w, h, fps] => w
                    .parse()
                    .ok()
                    .zip(h.parse().ok())
                    .zip(fps.parse().ok())
                    .map(|((w, h), f)| (w, h, f)),
                _ => None,
            };
            let Some((width, height, _fps)) = parsed.filter(|&(w, h, _)| w > 0 && h > 0) else {
                return Err(Error::CorruptFrame {
                    stream: name,
                    location: "header".into(),
                    reason: format!("expected `W H fps`, got {:?}", header.trim_end()),
                });
            };
            return Ok(Some(ScreenStream {
                name,
                source: ScreenSource::Raw {
                    reader,
                    width,
                    height,
                    next_ts: 0,
                },
                dims: Some((width, height)),
                failed: false,
            }));
        }
        Ok(None)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    fn next_frame(&mut self) -> Option<Result<ScreenFrameRecord>> {
        match &mut self.source {
            ScreenSource::Frames { entries } => {
                let (ts, path) = entries.next()?;
                Some(read_pgm(&path).map(|frame| ScreenFrameRecord { ts, frame }))
            }
            ScreenSource::Raw {
                reader,
                width,
                height,
                next_ts,
            } => {
                let mut buf = vec![0u8; *width * *height];
                let mut filled = 0;
                while filled < buf.len() {
                    match reader.read(&mut buf[filled..]) {
                        Ok(0) => break,
                        Ok(n) => filled += n,
                        Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                        Err(e) => {
                            return Some(Err(Error::CorruptFrame {
                                stream: self.name.clone(),
                                location: format!("frame {next_ts}"),
                                reason: e.to_string(),
                            }))
                        }
                    }
                }
                if filled == 0 {
                    return None;
                }
                if filled < buf.len() {
                    return Some(Err(Error::CorruptFrame {
                        stream: self.name.clone(),
                        location: format!("frame {next_ts}"),
                        reason: format!("truncated frame ({filled} of {} bytes)", buf.len()),
                    }));
                }
                let ts = *next_ts;
                *next_ts += 1;
                Some(GrayFrame::new(*width, *height, buf).map(|frame| ScreenFrameRecord { ts, frame }))
            }
        }
    }
}

impl Iterator for ScreenStream {
    type Item = Result<ScreenFrameRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let item = self.next_frame()?;
        let item = item.and_then(|rec| {
            let dims = rec.frame.dims();
            match self.dims {
                Some(expected) if expected != dims => Err(Error::CorruptFrame {
                    stream: self.name.clone(),
                    location: format!("ts {}", rec.ts),
                    reason: format!("frame size {dims:?} differs from stream size {expected:?}"),
                }),
                _ => {
                    self.dims = Some(dims);
                    Ok(rec)
                }
            }
        });
        if item.is_err() {
            self.failed = true;
        }
        Some(item)
    }
}

/// Lazily parsed face records, validated for strictly increasing timestamps.
pub struct FaceStream {
    name: String,
    lines: std::io::Lines<BufReader<Box<dyn Read + Send>>>,
    index: usize,
    prev: Option<u64>,
    failed: bool,
}

impl FaceStream {
    pub fn open(name: impl Into<String>, path: &Path) -> Result<Option<Self>> {
        if !path.is_file() {
            return Ok(None);
        }
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(Some(Self::from_reader(name, Box::new(file))))
    }

    pub fn from_reader(name: impl Into<String>, reader: Box<dyn Read + Send>) -> Self {
        FaceStream {
            name: name.into(),
            lines: BufReader::new(reader).lines(),
            index: 0,
            prev: None,
            failed: false,
        }
    }
}

impl Iterator for FaceStream {
    type Item = Result<FaceFrameRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let line = loop {
            match self.lines.next()? {
                Ok(l) if l.trim().is_empty() => continue,
                Ok(l) => break l,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(Error::io(&self.name, e)));
                }
            }
        };
        let index = self.index;
        self.index += 1;
        let result = FaceFrameRecord::parse_line(&line)
            .map_err(|e| Error::CorruptFrame {
                stream: self.name.clone(),
                location: format!("record {index}"),
                reason: e.to_string(),
            })
            .and_then(|rec| match self.prev {
                Some(prev) if rec.ts <= prev => Err(Error::OutOfOrder {
                    stream: self.name.clone(),
                    index,
                    prev,
                    ts: rec.ts,
                }),
                _ => {
                    self.prev = Some(rec.ts);
                    Ok(rec)
                }
            });
        if result.is_err() {
            self.failed = true;
        }
        Some(result)
    }
}

pub struct ParticipantStreams {
    pub participant: ParticipantConfig,
    pub screen: ScreenStream,
    pub face: FaceStream,
}

impl ParticipantStreams {
    pub fn id(&self) -> ParticipantId {
        ParticipantId::new(self.participant.id.clone())
    }
}

pub struct SessionStreams {
    /// Separate presentation video, when the session provides one.
    pub presentation: Option<ScreenStream>,
    /// In configuration order; the instructor is always first.
    pub participants: Vec<ParticipantStreams>,
}

pub fn participant_dir(session_dir: &Path, id: &str) -> PathBuf {
    session_dir.join(format!("P{id}"))
}

/// Opens every declared participant's streams. Frames are decoded lazily.
pub fn open_streams(session_dir: impl AsRef<Path>, config: &SessionConfig) -> Result<SessionStreams> {
    let dir = session_dir.as_ref();
    if config.instructor().is_none() {
        return Err(Error::invalid(
            "participant.role",
            "session declares no instructor",
        ));
    }
    let presentation = ScreenStream::open("presentation", &dir.join("presentation"))?;
    let mut ordered: Vec<&ParticipantConfig> = config
        .participants
        .iter()
        .filter(|p| p.role == Role::Instructor)
        .collect();
    ordered.extend(config.students());

    let mut participants = Vec::with_capacity(ordered.len());
    for p in ordered {
        let pdir = participant_dir(dir, &p.id);
        let screen = ScreenStream::open(format!("P{}/screen", p.id), &pdir.join("screen"))?
            .ok_or_else(|| Error::MissingStream {
                participant: p.id.clone(),
                reason: format!("no screen stream at {}", pdir.join("screen").display()),
            })?;
        let face_path = pdir.join("face.jsonl");
        let face = FaceStream::open(format!("P{}/face.jsonl", p.id), &face_path)?.ok_or_else(|| {
            Error::MissingStream {
                participant: p.id.clone(),
                reason: format!("no face stream at {}", face_path.display()),
            }
        })?;
        participants.push(ParticipantStreams {
            participant: p.clone(),
            screen,
            face,
        });
    }
    Ok(SessionStreams {
        presentation,
        participants,
    })
}

/// Loads `session.cfg` and opens the streams of a session directory.
pub fn open_session(session_dir: impl AsRef<Path>) -> Result<(SessionConfig, SessionStreams)> {
    let dir = session_dir.as_ref();
    let config = load_session_config(dir.join("session.cfg"))?;
    let streams = open_streams(dir, &config)?;
    Ok((config, streams))
}

/// Everything observed at one timestamp; `None` entries are gaps.
#[derive(Debug, Clone)]
pub struct Tick {
    pub ts: u64,
    pub presentation: Option<GrayFrame>,
    /// Indexed like [`SessionStreams::participants`].
    pub screens: Vec<Option<GrayFrame>>,
    pub faces: Vec<Option<FaceFrameRecord>>,
}

struct Lookahead<I: Iterator> {
    iter: I,
    head: Option<I::Item>,
}

impl<I: Iterator> Lookahead<I> {
    fn new(mut iter: I) -> Self {
        let head = iter.next();
        Lookahead { iter, head }
    }
}

/// Merges all streams of a session into per-timestamp [`Tick`]s, from the
/// smallest to the largest timestamp present in any stream.
pub struct TickStream {
    presentation: Option<Lookahead<ScreenStream>>,
    screens: Vec<Lookahead<ScreenStream>>,
    faces: Vec<Lookahead<FaceStream>>,
    next_ts: Option<u64>,
    failed: bool,
}

impl TickStream {
    pub fn new(streams: SessionStreams) -> Self {
        let mut screens = Vec::new();
        let mut faces = Vec::new();
        for p in streams.participants {
            screens.push(Lookahead::new(p.screen));
            faces.push(Lookahead::new(p.face));
        }
        TickStream {
            presentation: streams.presentation.map(Lookahead::new),
            screens,
            faces,
            next_ts: None,
            failed: false,
        }
    }

    fn min_head(&self) -> Option<u64> {
        let heads = self
            .presentation
            .iter()
            .chain(self.screens.iter())
            .filter_map(|s| match &s.head {
                Some(Ok(r)) => Some(r.ts),
                _ => None,
            })
            .chain(self.faces.iter().filter_map(|s| match &s.head {
                Some(Ok(r)) => Some(r.ts),
                _ => None,
            }));
        heads.min()
    }

    fn take_error(&mut self) -> Option<Error> {
        for s in self.presentation.iter_mut().chain(self.screens.iter_mut()) {
            if matches!(s.head, Some(Err(_))) {
                if let Some(Err(e)) = s.head.take() {
                    return Some(e);
                }
            }
        }
        for s in self.faces.iter_mut() {
            if matches!(s.head, Some(Err(_))) {
                if let Some(Err(e)) = s.head.take() {
                    return Some(e);
                }
            }
        }
        None
    }
}

fn take_screen_at(s: &mut Lookahead<ScreenStream>, ts: u64) -> Option<GrayFrame> {
    match &s.head {
        Some(Ok(r)) if r.ts == ts => {
            let next = s.iter.next();
            match std::mem::replace(&mut s.head, next) {
                Some(Ok(r)) => Some(r.frame),
                _ => None,
            }
        }
        _ => None,
    }
}

impl Iterator for TickStream {
    type Item = Result<Tick>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        if let Some(e) = self.take_error() {
            self.failed = true;
            return Some(Err(e));
        }
        let ts = match self.next_ts {
            Some(ts) => {
                // stop once every stream is drained
                self.min_head()?;
                ts
            }
            None => self.min_head()?,
        };
        self.next_ts = Some(ts + 1);
        let presentation = self.presentation.as_mut().and_then(|s| take_screen_at(s, ts));
        let screens = self.screens.iter_mut().map(|s| take_screen_at(s, ts)).collect();
        let faces = self
            .faces
            .iter_mut()
            .map(|s| match &s.head {
                Some(Ok(r)) if r.ts == ts => {
                    let next = s.iter.next();
                    match std::mem::replace(&mut s.head, next) {
                        Some(Ok(r)) => Some(r),
                        _ => None,
                    }
                }
                _ => None,
            })
            .collect();
        Some(Ok(Tick {
            ts,
            presentation,
            screens,
            faces,
        }))
    }
}
