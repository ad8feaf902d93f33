//! Deterministic synthetic lectures: slide decks, screen streams, landmark
//! streams, and scripted sessions with known ground truth.
//!
//! Every frame is a pure function of `(seed, stream, timestamp)`, so a
//! scenario can be rendered to disk or replayed in memory with identical
//! content.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{ParticipantConfig, Role, SessionConfig};
use crate::error::{Error, Result};
use crate::eval::{GroundTruthLabel, Label};
use crate::gaze::{project_point, CameraIntrinsics, FaceModel3D, Pose, POSE_LANDMARKS};
use crate::ingest::{participant_dir, FaceFrameRecord, GrayFrame, Landmarks, ParticipantId, RawWriter, Tick, LANDMARK_COUNT};
use crate::segmentation::{Segment, INSET, PATCH_HEIGHT, PATCH_WIDTH};

pub const SLIDE_BACKGROUND: u8 = 204;
pub const SLIDE_TEXT: u8 = 36;
pub const ANIMATION: u8 = 100;
pub const PAGE_BACKGROUND: u8 = 250;
pub const PAGE_TEXT: u8 = 20;
pub const VIDEO_BACKGROUND: u8 = 30;
pub const VIDEO_FOREGROUND: u8 = 220;

pub const MIN_WIDTH: usize = 160;
pub const MIN_HEIGHT: usize = 90;

const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];
const DIGIT_SCALE: usize = 4;

/// SplitMix64 step, used to derive independent per-frame seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn frame_rng(seed: u64, stream: u64, ts: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(seed ^ mix(stream)) ^ ts))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Rect {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

impl Rect {
    fn width(&self) -> usize {
        self.x1 - self.x0
    }

    fn height(&self) -> usize {
        self.y1 - self.y0
    }
}

fn fill_rect(frame: &mut GrayFrame, r: Rect, v: u8) {
    let w = frame.width();
    let (x1, y1) = (r.x1.min(w), r.y1.min(frame.height()));
    let px = frame.pixels_mut();
    for y in r.y0..y1 {
        px[y * w + r.x0.min(x1)..y * w + x1].fill(v);
    }
}

fn check_size(width: usize, height: usize) -> Result<()> {
    if width < MIN_WIDTH || height < MIN_HEIGHT {
        return Err(Error::invalid(
            "synth.size",
            format!("frames must be at least {MIN_WIDTH}x{MIN_HEIGHT}, got {width}x{height}"),
        ));
    }
    Ok(())
}

/// Region for slide text and animations; it stays clear of all three
/// slide-number crops.
fn body_rect(width: usize, height: usize) -> Rect {
    let x0 = (0.05 * width as f64).round() as usize;
    let x1 = ((0.62 * width as f64).round() as usize).min(width - PATCH_WIDTH - INSET - 2);
    let y0 = (0.08 * height as f64).round() as usize;
    let y1 = ((0.60 * height as f64).round() as usize).min(height - PATCH_HEIGHT - INSET - 2);
    Rect { x0, y0, x1, y1 }
}

/// Lines of "words" drawn as filled bars, laid out in normalized units so
/// the same seed looks alike at any resolution.
fn draw_text_block(frame: &mut GrayFrame, area: Rect, seed: u64, value: u8, lines: usize, line_frac: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed));
    let pitch = area.height() as f64 / lines as f64;
    let bar = (pitch * line_frac).max(1.0);
    for line in 0..lines {
        let y0 = area.y0 + (line as f64 * pitch).round() as usize;
        let y1 = (y0 + bar.round() as usize).min(area.y1);
        let mut x = 0.0;
        let limit: f64 = rng.random_range(0.55..1.0);
        while x < limit {
            let word: f64 = rng.random_range(0.06..0.18);
            let end = (x + word).min(limit);
            let r = Rect {
                x0: area.x0 + (x * area.width() as f64).round() as usize,
                y0,
                x1: area.x0 + (end * area.width() as f64).round() as usize,
                y1,
            };
            fill_rect(frame, r, value);
            x = end + 0.04;
        }
    }
}

/// Draws `number` right-aligned inside the lower-right slide-number crop.
pub fn draw_slide_number(frame: &mut GrayFrame, number: u32, value: u8) {
    let (w, h) = frame.dims();
    let digits: Vec<usize> = number.to_string().bytes().map(|b| (b - b'0') as usize).collect();
    let glyph_w = 3 * DIGIT_SCALE;
    let glyph_h = 5 * DIGIT_SCALE;
    let total = digits.len() * glyph_w + digits.len().saturating_sub(1) * DIGIT_SCALE;
    let x_right = w - INSET - 6;
    let mut x = x_right.saturating_sub(total);
    let y = h - INSET - PATCH_HEIGHT + (PATCH_HEIGHT - glyph_h) / 2;
    for d in digits {
        for (row, bits) in DIGITS[d].iter().enumerate() {
            for col in 0..3 {
                if bits & (0b100 >> col) != 0 {
                    fill_rect(
                        frame,
                        Rect {
                            x0: x + col * DIGIT_SCALE,
                            y0: y + row * DIGIT_SCALE,
                            x1: x + (col + 1) * DIGIT_SCALE,
                            y1: y + (row + 1) * DIGIT_SCALE,
                        },
                        value,
                    );
                }
            }
        }
        x += glyph_w + DIGIT_SCALE;
    }
}

/// A static slide: text in the body region and an optional slide number.
pub fn render_slide(width: usize, height: usize, number: Option<u32>, seed: u64) -> Result<GrayFrame> {
    check_size(width, height)?;
    let mut f = GrayFrame::filled(width, height, SLIDE_BACKGROUND);
    let body = body_rect(width, height);
    match number {
        // title-like slide: one heavy heading line
        None => {
            let heading = Rect {
                x0: body.x0,
                y0: body.y0 + body.height() / 3,
                x1: body.x1,
                y1: body.y0 + body.height() / 2,
            };
            draw_text_block(&mut f, heading, seed, SLIDE_TEXT, 1, 0.8);
        }
        Some(n) => {
            draw_text_block(&mut f, body, seed, SLIDE_TEXT, 6, 0.35);
            draw_slide_number(&mut f, n, SLIDE_TEXT);
        }
    }
    Ok(f)
}

/// A text document filling the screen (another browser tab).
pub fn render_page(width: usize, height: usize, seed: u64) -> GrayFrame {
    let mut f = GrayFrame::filled(width, height, PAGE_BACKGROUND);
    let area = Rect {
        x0: width / 20,
        y0: height / 20,
        x1: width - width / 20,
        y1: height - height / 20,
    };
    draw_text_block(&mut f, area, seed, PAGE_TEXT, 14, 0.5);
    f
}

/// A dark video frame with a bright moving blob.
pub fn render_video(width: usize, height: usize, t: f64) -> GrayFrame {
    let mut f = GrayFrame::filled(width, height, VIDEO_BACKGROUND);
    let side = height * 2 / 5;
    let u = 0.5 + 0.45 * (1.3 * t).sin();
    let v = 0.5 + 0.45 * (0.7 * t).cos();
    let x0 = (u * (width - side) as f64) as usize;
    let y0 = (v * (height - side) as f64) as usize;
    fill_rect(
        &mut f,
        Rect {
            x0,
            y0,
            x1: x0 + side,
            y1: y0 + side,
        },
        VIDEO_FOREGROUND,
    );
    f
}

/// Normalized animation position in `[0, 1]^2`, `t` seconds into the
/// animation. Two incommensurate sines per axis keep it aperiodic.
pub fn animation_position(t: f64, phase: f64) -> (f64, f64) {
    use std::f64::consts::TAU;
    let u = 0.5 + 0.25 * (TAU * 0.37 * t + phase).sin() + 0.23 * (TAU * 0.91 * t + 1.7 * phase).sin();
    let v = 0.5 + 0.25 * (TAU * 0.53 * t + 0.4 + phase).sin() + 0.23 * (TAU * 1.13 * t + 2.9).sin();
    (u.clamp(0.0, 1.0), v.clamp(0.0, 1.0))
}

/// Side of the animated square: about 1% of the frame area.
pub fn animation_side(height: usize) -> usize {
    ((0.14 * height as f64).round() as usize).max(4)
}

pub fn draw_animation(frame: &mut GrayFrame, pos: (f64, f64)) {
    let (w, h) = frame.dims();
    let body = body_rect(w, h);
    let side = animation_side(h).min(body.width()).min(body.height());
    let x0 = body.x0 + (pos.0 * (body.width() - side) as f64).round() as usize;
    let y0 = body.y0 + (pos.1 * (body.height() - side) as f64).round() as usize;
    fill_rect(
        frame,
        Rect {
            x0,
            y0,
            x1: x0 + side,
            y1: y0 + side,
        },
        ANIMATION,
    );
}

/// Adds rounded Gaussian intensity noise, saturating at 0 and 255.
pub fn add_noise(frame: &mut GrayFrame, sigma: f64, rng: &mut impl Rng) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    for p in frame.pixels_mut() {
        let v = *p as f64 + normal.sample(rng);
        *p = v.round().clamp(0.0, 255.0) as u8;
    }
}

/// A slide deck shown for a fixed time per slide.
#[derive(Debug, Clone, PartialEq)]
pub struct Deck {
    pub width: usize,
    pub height: usize,
    /// Slide numbers; `None` marks a number-free (insignificant) slide.
    pub slides: Vec<Option<u32>>,
    pub frames_per_slide: u64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Deck {
    /// Title slide, numbered slides `1..=n`, closing slide.
    pub fn lecture(width: usize, height: usize, numbered: u32, frames_per_slide: u64, seed: u64) -> Self {
        let mut slides = vec![None];
        slides.extend((1..=numbered).map(Some));
        slides.push(None);
        Deck {
            width,
            height,
            slides,
            frames_per_slide,
            noise_sigma: 0.0,
            seed,
        }
    }

    pub fn frame_count(&self) -> u64 {
        self.slides.len() as u64 * self.frames_per_slide
    }

    /// Ground-truth segments, one per slide.
    pub fn segments(&self) -> Vec<Segment> {
        (0..self.slides.len() as u64)
            .map(|i| Segment {
                start: i * self.frames_per_slide,
                end: (i + 1) * self.frames_per_slide - 1,
                significant: self.slides[i as usize].is_some(),
            })
            .collect()
    }

    pub fn render_bases(&self) -> Result<Vec<GrayFrame>> {
        self.slides
            .iter()
            .enumerate()
            .map(|(i, n)| render_slide(self.width, self.height, *n, mix(self.seed ^ i as u64)))
            .collect()
    }

    /// Renders every frame in order.
    pub fn frames(&self) -> Result<impl Iterator<Item = GrayFrame> + '_> {
        let bases = self.render_bases()?;
        Ok((0..self.frame_count()).map(move |ts| {
            let mut f = bases[(ts / self.frames_per_slide) as usize].clone();
            add_noise(&mut f, self.noise_sigma, &mut frame_rng(self.seed, 0xdec, ts));
            f
        }))
    }
}

/// Nearest-neighbour resize.
pub fn resize_nearest(frame: &GrayFrame, width: usize, height: usize) -> GrayFrame {
    let (sw, sh) = frame.dims();
    let mut out = GrayFrame::filled(width, height, 0);
    for y in 0..height {
        let sy = y * sh / height;
        for x in 0..width {
            out.set(x, y, frame.get(x * sw / width, sy));
        }
    }
    out
}

/// 68 face points in the model frame (millimetres, x right, y down, z away
/// from the camera). The six pose landmarks coincide with `model`.
pub fn face_points_68(model: &FaceModel3D) -> Vec<[f64; 3]> {
    let mut pts = Vec::with_capacity(LANDMARK_COUNT);
    // jaw 1..=17
    for i in 0..17 {
        let a = -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * i as f64 / 16.0;
        pts.push([70.0 * a.sin(), -20.0 + 80.0 * a.cos(), 70.0 - 50.0 * a.cos()]);
    }
    // brows 18..=27
    for i in 0..10 {
        let side = if i < 5 { -1.0 } else { 1.0 };
        let j = (i % 5) as f64;
        pts.push([side * (15.0 + 9.0 * j), -48.0 + (j - 2.0).abs() * 2.0, 22.0]);
    }
    // nose bridge 28..=31 and nostrils 32..=36
    for i in 0..4 {
        pts.push([0.0, -30.0 + 9.0 * i as f64, 12.0 - 3.0 * i as f64]);
    }
    for i in 0..5 {
        pts.push([-12.0 + 6.0 * i as f64, 12.0, 10.0]);
    }
    // eyes 37..=48
    for side in [-1.0, 1.0] {
        for i in 0..6 {
            let a = std::f64::consts::TAU * i as f64 / 6.0;
            let cx = side * 30.0;
            pts.push([cx - side * 13.0 * a.cos(), -32.7 + 4.0 * a.sin(), 26.0]);
        }
    }
    // mouth 49..=68
    for i in 0..20 {
        let a = std::f64::consts::TAU * i as f64 / 20.0;
        let r = if i < 12 { 28.9 } else { 15.0 };
        pts.push([-r * a.cos(), 30.0 + 8.0 * a.sin(), 24.1]);
    }
    debug_assert_eq!(pts.len(), LANDMARK_COUNT);
    for (k, &idx) in POSE_LANDMARKS.iter().enumerate() {
        pts[idx - 1] = model.points()[k];
    }
    pts
}

/// Projects the 68-point face at `pose`, with Gaussian pixel noise.
pub fn render_landmarks(
    points: &[[f64; 3]],
    pose: &Pose,
    k: &CameraIntrinsics,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<Landmarks> {
    let noise = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    let pts = points
        .iter()
        .map(|p| {
            let [x, y] = project_point(pose, k, p)?;
            let (nx, ny) = if sigma > 0.0 {
                (noise.sample(rng), noise.sample(rng))
            } else {
                (0.0, 0.0)
            };
            Ok([round3(x + nx), round3(y + ny)])
        })
        .collect::<Result<Vec<_>>>()?;
    Landmarks::new(pts)
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

/// Head pose with the given lateral offset (mm) and yaw (rad), 600 mm from
/// the camera.
pub fn head_pose(lateral_mm: f64, yaw: f64) -> Pose {
    Pose::new(
        Rotation3::from_euler_angles(0.05, yaw, 0.0),
        Vector3::new(lateral_mm, 10.0, 600.0),
    )
}

/// What a student does during one slide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Behavior {
    /// Watches the presentation and follows the animation.
    Engaged,
    /// Face on camera, another tab with a text document on screen.
    ReadingOtherTab,
    /// Face on camera, a video in another tab.
    VideoOtherTab,
    /// Looking down at a phone: no frontal face.
    Mobile,
    /// Presentation on screen and face on camera, head turned elsewhere.
    GazeAway,
}

impl Behavior {
    pub const ALL: [Behavior; 5] = [
        Behavior::Engaged,
        Behavior::ReadingOtherTab,
        Behavior::VideoOtherTab,
        Behavior::Mobile,
        Behavior::GazeAway,
    ];

    pub fn label(self) -> Label {
        Label::from_engaged(self == Behavior::Engaged)
    }

    fn shows_presentation(self) -> bool {
        matches!(self, Behavior::Engaged | Behavior::Mobile | Behavior::GazeAway)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlideScript {
    pub number: Option<u32>,
    /// Whether the slide carries an animation (a fixation target).
    pub animated: bool,
    /// Instructor's own screen shows another window during this slide.
    pub instructor_away: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentScript {
    pub id: String,
    /// Screen and head delay behind the instructor, in frames.
    pub latency: u64,
    /// Constant lateral head offset, mm.
    pub offset_mm: f64,
    /// One behavior per slide.
    pub behaviors: Vec<Behavior>,
}

/// A scripted session: one instructor and any number of students.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub width: usize,
    pub height: usize,
    pub fps: u32,
    pub seed: u64,
    pub slide_seconds: u32,
    /// Animation start within each animated slide, seconds.
    pub animation_offset_seconds: u32,
    pub animation_seconds: u32,
    pub slides: Vec<SlideScript>,
    pub students: Vec<StudentScript>,
    /// Write the slides as a separate presentation stream.
    pub presentation_stream: bool,
    pub screen_noise: f64,
    pub landmark_noise: f64,
}

/// Frames of one tick, in session participant order (instructor first).
#[derive(Debug, Clone)]
pub struct SynthTick {
    pub ts: u64,
    pub presentation: Option<GrayFrame>,
    pub screens: Vec<GrayFrame>,
    pub faces: Vec<FaceFrameRecord>,
}

/// What the generator knows about a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTruth {
    pub segments: Vec<Segment>,
    /// Animation intervals on the presentation timeline.
    pub events: Vec<(u64, u64)>,
    pub labels: Vec<GroundTruthLabel>,
}

impl SynthTick {
    /// The tick as the pipeline sees it; `with_presentation` keeps the
    /// separate presentation stream.
    pub fn into_tick(self, with_presentation: bool) -> Tick {
        Tick {
            ts: self.ts,
            presentation: self.presentation.filter(|_| with_presentation),
            screens: self.screens.into_iter().map(Some).collect(),
            faces: self.faces.into_iter().map(Some).collect(),
        }
    }
}

impl Scenario {
    /// Title slide followed by `behaviors.len()` animated numbered slides,
    /// one student per behavior row.
    pub fn scripted(seed: u64, students: Vec<(String, Vec<Behavior>)>) -> Self {
        let numbered = students.first().map_or(0, |(_, b)| b.len());
        let mut slides = vec![SlideScript {
            number: None,
            animated: false,
            instructor_away: false,
        }];
        slides.extend((1..=numbered as u32).map(|n| SlideScript {
            number: Some(n),
            animated: true,
            instructor_away: false,
        }));
        let students = students
            .into_iter()
            .enumerate()
            .map(|(i, (id, b))| {
                let mut behaviors = vec![b.first().copied().unwrap_or(Behavior::Engaged)];
                behaviors.extend(b);
                StudentScript {
                    id,
                    latency: (i as u64 % 3) + 1,
                    offset_mm: [2.0, -3.0, 1.0, -1.5, 2.5][i % 5],
                    behaviors,
                }
            })
            .collect();
        Scenario {
            width: 160,
            height: 96,
            fps: 30,
            seed,
            slide_seconds: 14,
            animation_offset_seconds: 3,
            animation_seconds: 6,
            slides,
            students,
            presentation_stream: true,
            screen_noise: 0.0,
            landmark_noise: 0.5,
        }
    }

    /// One student per behavior, each behaving the same way on every slide.
    pub fn four_behaviors(seed: u64, slides: usize) -> Self {
        let students = [
            Behavior::Engaged,
            Behavior::ReadingOtherTab,
            Behavior::VideoOtherTab,
            Behavior::Mobile,
        ]
        .iter()
        .enumerate()
        .map(|(i, &b)| ((i + 1).to_string(), vec![b; slides]))
        .collect();
        Scenario::scripted(seed, students)
    }

    pub fn validate(&self) -> Result<()> {
        check_size(self.width, self.height)?;
        if self.fps == 0 || self.slide_seconds == 0 {
            return Err(Error::invalid("synth", "fps and slide length must be > 0"));
        }
        if self.animation_offset_seconds + self.animation_seconds > self.slide_seconds {
            return Err(Error::invalid("synth", "animation must end within its slide"));
        }
        for s in &self.students {
            if s.behaviors.len() != self.slides.len() {
                return Err(Error::invalid(
                    "synth.students",
                    format!("student {} has {} behaviors for {} slides", s.id, s.behaviors.len(), self.slides.len()),
                ));
            }
        }
        Ok(())
    }

    pub fn frames_per_slide(&self) -> u64 {
        self.slide_seconds as u64 * self.fps as u64
    }

    pub fn frame_count(&self) -> u64 {
        self.frames_per_slide() * self.slides.len() as u64
    }

    fn animation_window(&self, slide: usize) -> Option<(u64, u64)> {
        let s = &self.slides[slide];
        if !s.animated {
            return None;
        }
        let base = slide as u64 * self.frames_per_slide();
        let start = base + self.animation_offset_seconds as u64 * self.fps as u64;
        Some((start, start + self.animation_seconds as u64 * self.fps as u64 - 1))
    }

    /// Session configuration: instructor id `0`, students as scripted.
    pub fn config(&self) -> SessionConfig {
        let mut c = SessionConfig {
            fps: self.fps,
            ..Default::default()
        };
        c.participants.push(ParticipantConfig::new("0", Role::Instructor));
        for s in &self.students {
            c.participants.push(ParticipantConfig::new(s.id.clone(), Role::Student));
        }
        c
    }

    pub fn truth(&self) -> ScenarioTruth {
        let fps = self.frames_per_slide();
        let segments = (0..self.slides.len() as u64)
            .map(|i| Segment {
                start: i * fps,
                end: (i + 1) * fps - 1,
                significant: self.slides[i as usize].number.is_some(),
            })
            .collect::<Vec<_>>();
        let events = (0..self.slides.len()).filter_map(|i| self.animation_window(i)).collect();
        let mut labels = Vec::new();
        for (i, seg) in segments.iter().enumerate() {
            if !seg.significant {
                continue;
            }
            for s in &self.students {
                labels.push(GroundTruthLabel {
                    segment: i as u64,
                    student: ParticipantId::new(s.id.clone()),
                    label: s.behaviors[i].label(),
                });
            }
        }
        ScenarioTruth {
            segments,
            events,
            labels,
        }
    }

    /// Renderer with the per-slide images cached.
    pub fn renderer(&self) -> Result<ScenarioRenderer<'_>> {
        self.validate()?;
        let slides = self
            .slides
            .iter()
            .enumerate()
            .map(|(i, s)| render_slide(self.width, self.height, s.number, mix(self.seed ^ (i as u64) << 8)))
            .collect::<Result<Vec<_>>>()?;
        let pages = (0..self.slides.len())
            .map(|i| render_page(self.width, self.height, mix(self.seed ^ 0x9a9e ^ i as u64)))
            .collect();
        let model = FaceModel3D::default();
        Ok(ScenarioRenderer {
            scenario: self,
            slides,
            pages,
            face: face_points_68(&model),
            camera: ParticipantConfig::new("0", Role::Instructor).camera(),
        })
    }

    /// Writes the session directory (raw screen streams, face JSONL,
    /// `session.cfg`) and returns the ground truth.
    pub fn write_session(&self, dir: impl AsRef<Path>) -> Result<ScenarioTruth> {
        let dir = dir.as_ref();
        let r = self.renderer()?;
        let config = self.config();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg_path = dir.join("session.cfg");
        std::fs::write(&cfg_path, config.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;

        let mut presentation = if self.presentation_stream {
            Some(RawWriter::create(dir.join("presentation.raw"), self.width, self.height, self.fps)?)
        } else {
            None
        };
        let mut screens = Vec::new();
        let mut faces = Vec::new();
        for p in &config.participants {
            let pdir = participant_dir(dir, &p.id);
            std::fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e))?;
            screens.push(RawWriter::create(pdir.join("screen.raw"), self.width, self.height, self.fps)?);
            let path = pdir.join("face.jsonl");
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            faces.push((path, BufWriter::new(file)));
        }
        for ts in 0..self.frame_count() {
            let tick = r.tick(ts)?;
            if let (Some(w), Some(f)) = (presentation.as_mut(), tick.presentation.as_ref()) {
                w.push(f)?;
            }
            for (w, f) in screens.iter_mut().zip(&tick.screens) {
                w.push(f)?;
            }
            for ((path, w), rec) in faces.iter_mut().zip(&tick.faces) {
                writeln!(w, "{}", rec.to_line()).map_err(|e| Error::io(path.as_path(), e))?;
            }
        }
        if let Some(w) = presentation {
            w.finish()?;
        }
        for w in screens {
            w.finish()?;
        }
        for (path, mut w) in faces {
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(self.truth())
    }
}

pub struct ScenarioRenderer<'a> {
    scenario: &'a Scenario,
    slides: Vec<GrayFrame>,
    pages: Vec<GrayFrame>,
    face: Vec<[f64; 3]>,
    camera: CameraIntrinsics,
}

impl ScenarioRenderer<'_> {
    fn slide_index(&self, ts: u64) -> usize {
        ((ts / self.scenario.frames_per_slide()) as usize).min(self.slides.len() - 1)
    }

    /// Animation position at `ts`, if the animation is running.
    fn animation_at(&self, ts: u64) -> Option<(f64, f64)> {
        let sc = self.scenario;
        let slide = self.slide_index(ts);
        let (start, end) = sc.animation_window(slide)?;
        (start..=end).contains(&ts).then(|| {
            let t = (ts - start) as f64 / sc.fps as f64;
            animation_position(t, slide as f64 * 0.77)
        })
    }

    /// The presentation as shown at `ts`.
    pub fn presentation(&self, ts: u64) -> GrayFrame {
        let mut f = self.slides[self.slide_index(ts)].clone();
        if let Some(pos) = self.animation_at(ts) {
            draw_animation(&mut f, pos);
        }
        f
    }

    fn noisy(&self, mut f: GrayFrame, stream: u64, ts: u64) -> GrayFrame {
        add_noise(&mut f, self.scenario.screen_noise, &mut frame_rng(self.scenario.seed, stream, ts));
        f
    }

    /// Lateral head position (mm) of someone following the presentation.
    fn follow_lateral(&self, ts: u64) -> f64 {
        match self.animation_at(ts) {
            Some((u, _)) => 40.0 * (2.0 * u - 1.0),
            None => 8.0 * (0.2 * ts as f64 / self.scenario.fps as f64).sin(),
        }
    }

    fn face_record(&self, stream: u64, ts: u64, pose: Option<Pose>) -> Result<FaceFrameRecord> {
        let Some(pose) = pose else {
            return Ok(FaceFrameRecord::absent(ts));
        };
        let mut rng = frame_rng(self.scenario.seed, stream, ts);
        let lm = render_landmarks(&self.face, &pose, &self.camera, self.scenario.landmark_noise, &mut rng)?;
        Ok(FaceFrameRecord {
            ts,
            face_detected: true,
            landmarks: Some(lm),
        })
    }

    pub fn tick(&self, ts: u64) -> Result<SynthTick> {
        let sc = self.scenario;
        let slide = self.slide_index(ts);
        let pres = self.presentation(ts);

        let instr_screen = if sc.slides[slide].instructor_away {
            self.pages[slide].clone()
        } else {
            pres.clone()
        };
        let mut screens = vec![self.noisy(instr_screen, 1, ts)];
        let lateral = self.follow_lateral(ts);
        let mut faces = vec![self.face_record(1, ts, Some(head_pose(lateral, lateral * 0.004)))?];

        for (i, st) in sc.students.iter().enumerate() {
            let stream = 100 + i as u64;
            let seen = ts.saturating_sub(st.latency);
            let behavior = st.behaviors[self.slide_index(seen)];
            let screen = if behavior.shows_presentation() {
                self.presentation(seen)
            } else if behavior == Behavior::ReadingOtherTab {
                self.pages[(slide + 1) % self.pages.len()].clone()
            } else {
                render_video(sc.width, sc.height, ts as f64 / sc.fps as f64)
            };
            screens.push(self.noisy(screen, stream, ts));
            let t = ts as f64 / sc.fps as f64;
            let pose = match behavior {
                Behavior::Engaged => {
                    let l = self.follow_lateral(seen) + st.offset_mm;
                    Some(head_pose(l, l * 0.004))
                }
                Behavior::Mobile => None,
                Behavior::GazeAway => Some(head_pose(190.0 + st.offset_mm + 2.0 * (0.3 * t).sin(), 0.5)),
                Behavior::ReadingOtherTab => Some(head_pose(st.offset_mm + 15.0 * (0.9 * t).sin(), 0.0)),
                Behavior::VideoOtherTab => Some(head_pose(st.offset_mm, 0.0)),
            };
            faces.push(self.face_record(stream, ts, pose)?);
        }
        Ok(SynthTick {
            ts,
            presentation: sc.presentation_stream.then_some(pres),
            screens,
            faces,
        })
    }
}

/// Slide pairs for calibrating the histogram threshold: the same slide at
/// two resolutions (matched), and a slide against other-tab content
/// (mismatched).
pub fn calibration_pairs(seed: u64, slides: u32) -> Result<(Vec<(GrayFrame, GrayFrame)>, Vec<(GrayFrame, GrayFrame)>)> {
    let mut matched = Vec::new();
    let mut mismatched = Vec::new();
    let sizes = [(320, 180), (160, 96), (640, 360), (256, 144)];
    for i in 0..slides {
        let s = mix(seed ^ i as u64);
        let (w1, h1) = sizes[i as usize % sizes.len()];
        let (w2, h2) = sizes[(i as usize + 1) % sizes.len()];
        let number = (i % 3 != 0).then_some(i + 1);
        let mut a = render_slide(w1, h1, number, s)?;
        let mut b = render_slide(w2, h2, number, s)?;
        if i % 2 == 0 {
            let pos = animation_position(i as f64 * 0.3, 0.0);
            draw_animation(&mut a, pos);
            draw_animation(&mut b, pos);
        }
        let mut rng = frame_rng(seed, 0xca1, i as u64);
        add_noise(&mut b, 2.0, &mut rng);
        matched.push((a.clone(), b));
        let other = if i % 2 == 0 {
            render_page(w2, h2, s)
        } else {
            render_video(w2, h2, i as f64)
        };
        mismatched.push((a, other));
    }
    Ok((matched, mismatched))
}
