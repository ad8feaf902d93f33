//! Scoring segments: slide-number transitions (automatic) or fixed time
//! slices (manual).
//!
//! Automatic mode crops a 50x30 patch at the three usual slide-number
//! positions of every frame and compares consecutive frames by MSE. The first
//! frame where exactly one position changes locks that position; afterwards a
//! transition is a frame where the locked position changes and the other two
//! do not. A segment whose first frame shows the template's (number-free)
//! patch at the locked position is insignificant.

use serde::{Deserialize, Serialize};

use crate::config::SliceLength;
use crate::error::{Error, Result};
use crate::ingest::GrayFrame;

pub const PATCH_WIDTH: usize = 50;
pub const PATCH_HEIGHT: usize = 30;
pub const INSET: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CropPosition {
    UpperRight,
    LowerRight,
    MiddleBottom,
}

impl CropPosition {
    pub const ALL: [CropPosition; 3] = [
        CropPosition::UpperRight,
        CropPosition::LowerRight,
        CropPosition::MiddleBottom,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropRegion {
    pub x: usize,
    pub y: usize,
    pub position: CropPosition,
}

impl CropRegion {
    /// Placement inside a `width x height` frame, 5 px in from the edges.
    pub fn place(position: CropPosition, width: usize, height: usize) -> Result<Self> {
        if width < PATCH_WIDTH + 2 * INSET || height < PATCH_HEIGHT + 2 * INSET {
            return Err(Error::invalid(
                "frame",
                format!(
                    "{width}x{height} frame too small for slide-number crops (min {}x{})",
                    PATCH_WIDTH + 2 * INSET,
                    PATCH_HEIGHT + 2 * INSET
                ),
            ));
        }
        let right = width - INSET - PATCH_WIDTH;
        let bottom = height - INSET - PATCH_HEIGHT;
        let (x, y) = match position {
            CropPosition::UpperRight => (right, INSET),
            CropPosition::LowerRight => (right, bottom),
            CropPosition::MiddleBottom => ((width - PATCH_WIDTH) / 2, bottom),
        };
        Ok(CropRegion { x, y, position })
    }
}

/// A grayscale crop, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Patch {
    pub fn crop(frame: &GrayFrame, region: &CropRegion) -> Patch {
        let mut data = Vec::with_capacity(PATCH_WIDTH * PATCH_HEIGHT);
        for y in region.y..region.y + PATCH_HEIGHT {
            let row = y * frame.width();
            data.extend_from_slice(&frame.pixels()[row + region.x..row + region.x + PATCH_WIDTH]);
        }
        Patch {
            width: PATCH_WIDTH,
            height: PATCH_HEIGHT,
            data,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.data.windows(2).all(|w| w[0] == w[1])
    }
}

/// Patches in [`CropPosition::ALL`] order.
pub fn crop_regions(frame: &GrayFrame) -> Result<[Patch; 3]> {
    let (w, h) = frame.dims();
    let mut out = Vec::with_capacity(3);
    for pos in CropPosition::ALL {
        out.push(Patch::crop(frame, &CropRegion::place(pos, w, h)?));
    }
    Ok(out.try_into().expect("three positions"))
}

pub fn mse(a: &Patch, b: &Patch) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::Dimension {
            expected: (a.width, a.height),
            got: (b.width, b.height),
        });
    }
    let sum: u64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&p, &q)| {
            let d = p as i64 - q as i64;
            (d * d) as u64
        })
        .sum();
    Ok(sum as f64 / a.data.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: u64,
    /// Inclusive.
    pub end: u64,
    pub significant: bool,
}

impl Segment {
    pub fn len(&self) -> u64 {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, ts: u64) -> bool {
        self.start <= ts && ts <= self.end
    }
}

/// Streaming slide-transition detector.
#[derive(Debug, Clone)]
pub struct TransitionDetector {
    threshold: f64,
    template: Option<[Patch; 3]>,
    locked: Option<CropPosition>,
    prev: Option<[Patch; 3]>,
    /// Open segment: start frame and the patches of its first frame.
    open: Option<(u64, [Patch; 3])>,
    /// Segments closed before the position locked, awaiting a significance verdict.
    unjudged: Vec<(u64, u64, [Patch; 3])>,
    last_ts: u64,
}

impl TransitionDetector {
    /// The template defaults to the first frame pushed.
    pub fn new(threshold: f64) -> Self {
        TransitionDetector {
            threshold,
            template: None,
            locked: None,
            prev: None,
            open: None,
            unjudged: Vec::new(),
            last_ts: 0,
        }
    }

    pub fn with_template(threshold: f64, template: &GrayFrame) -> Result<Self> {
        let mut d = Self::new(threshold);
        d.template = Some(crop_regions(template)?);
        Ok(d)
    }

    pub fn locked_position(&self) -> Option<CropPosition> {
        self.locked
    }

    /// Start of the currently open segment.
    pub fn open_start(&self) -> Option<u64> {
        self.open.as_ref().map(|(s, _)| *s)
    }

    fn significant(&self, first: &[Patch; 3]) -> bool {
        match (self.locked, &self.template) {
            (Some(pos), Some(t)) => {
                let i = pos.index();
                mse(&first[i], &t[i]).expect("patch sizes") > self.threshold
            }
            _ => true,
        }
    }

    /// Feeds the next frame; returns segments closed by it. While the
    /// slide-number position is still unknown, closed segments are held back.
    pub fn push(&mut self, ts: u64, frame: &GrayFrame) -> Result<Vec<Segment>> {
        let patches = crop_regions(frame)?;
        if self.template.is_none() {
            self.template = Some(patches.clone());
        }
        self.last_ts = ts;
        let Some(prev) = self.prev.replace(patches.clone()) else {
            self.open = Some((ts, patches));
            return Ok(Vec::new());
        };
        let mut changed = [false; 3];
        for i in 0..3 {
            changed[i] = mse(&prev[i], &patches[i])? > self.threshold;
        }
        let transition = match self.locked {
            Some(pos) => {
                let i = pos.index();
                changed[i] && (0..3).filter(|&j| j != i).all(|j| !changed[j])
            }
            None => {
                let hits: Vec<usize> = (0..3).filter(|&i| changed[i]).collect();
                if let [only] = hits.as_slice() {
                    self.locked = Some(CropPosition::ALL[*only]);
                    true
                } else {
                    false
                }
            }
        };
        if !transition {
            return Ok(Vec::new());
        }
        let (start, first) = self
            .open
            .replace((ts, patches))
            .expect("open segment after first frame");
        self.unjudged.push((start, ts - 1, first));
        Ok(self.drain_judged())
    }

    fn drain_judged(&mut self) -> Vec<Segment> {
        if self.locked.is_none() {
            return Vec::new();
        }
        let pending = std::mem::take(&mut self.unjudged);
        pending
            .into_iter()
            .map(|(start, end, first)| Segment {
                start,
                end,
                significant: self.significant(&first),
            })
            .collect()
    }

    /// Closes the stream, returning every remaining segment.
    pub fn finish(&mut self) -> Vec<Segment> {
        let mut out = Vec::new();
        if let Some((start, first)) = self.open.take() {
            self.unjudged.push((start, self.last_ts, first));
        }
        let pending = std::mem::take(&mut self.unjudged);
        for (start, end, first) in pending {
            out.push(Segment {
                start,
                end,
                significant: self.significant(&first),
            });
        }
        out
    }
}

/// Segments a whole stream of `(timestamp, frame)` pairs.
pub fn detect_transitions<'a, I>(frames: I, threshold: f64, template: Option<&GrayFrame>) -> Result<Vec<Segment>>
where
    I: IntoIterator<Item = (u64, &'a GrayFrame)>,
{
    let mut det = match template {
        Some(t) => TransitionDetector::with_template(threshold, t)?,
        None => TransitionDetector::new(threshold),
    };
    let mut out = Vec::new();
    for (ts, frame) in frames {
        out.extend(det.push(ts, frame)?);
    }
    out.extend(det.finish());
    Ok(out)
}

/// Smallest trailing slice, in frames, kept as its own segment.
pub fn min_partial_frames(slice_frames: u64) -> u64 {
    slice_frames.div_ceil(10)
}

/// Fixed slices over `[start, start + len)`. A final partial slice shorter
/// than 10% of the slice length is merged into the previous slice.
pub fn time_slice_segments(len: u64, slice: SliceLength, fps: u32, start: u64) -> Vec<Segment> {
    let slice_frames = slice.frames(fps);
    let mut out = Vec::new();
    if len == 0 {
        return out;
    }
    let mut s = 0;
    while s < len {
        let e = (s + slice_frames).min(len) - 1;
        out.push(Segment {
            start: start + s,
            end: start + e,
            significant: true,
        });
        s += slice_frames;
    }
    if out.len() > 1 {
        let last = out[out.len() - 1];
        if last.len() < min_partial_frames(slice_frames) {
            out.pop();
            out.last_mut().expect("previous slice").end = last.end;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placement_640x360() {
        let ur = CropRegion::place(CropPosition::UpperRight, 640, 360).unwrap();
        let lr = CropRegion::place(CropPosition::LowerRight, 640, 360).unwrap();
        let mb = CropRegion::place(CropPosition::MiddleBottom, 640, 360).unwrap();
        assert_eq!((ur.x, ur.y), (585, 5));
        assert_eq!((lr.x, lr.y), (585, 325));
        assert_eq!((mb.x, mb.y), (295, 325));
        assert!(CropRegion::place(CropPosition::UpperRight, 59, 360).is_err());
    }

    #[test]
    fn constant_frame_constant_patches() {
        let patches = crop_regions(&GrayFrame::filled(640, 360, 77)).unwrap();
        for p in &patches {
            assert!(p.is_constant());
            assert_eq!(p.data[0], 77);
            assert_eq!(p.data.len(), 1500);
        }
    }

    #[test]
    fn mse_examples() {
        let a = Patch {
            width: 50,
            height: 30,
            data: vec![0; 1500],
        };
        let b = Patch {
            data: vec![255; 1500],
            ..a.clone()
        };
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&a, &b).unwrap(), 65025.0);
        let c = Patch {
            width: 30,
            height: 50,
            data: vec![0; 1500],
        };
        assert!(mse(&a, &c).is_err());
    }

    #[test]
    fn constant_stream_single_segment() {
        let f = GrayFrame::filled(120, 80, 9);
        let segs = detect_transitions((0..50).map(|t| (t, &f)), 100.0, None).unwrap();
        assert_eq!(
            segs,
            vec![Segment {
                start: 0,
                end: 49,
                significant: true
            }]
        );
    }

    #[test]
    fn time_slices() {
        let fps = 30;
        let min = 60 * fps as u64;
        assert_eq!(time_slice_segments(15 * min, SliceLength::Five, fps, 0).len(), 3);
        let s = time_slice_segments(16 * min, SliceLength::Five, fps, 0);
        assert_eq!(s.len(), 4);
        assert_eq!(s[3].len(), min);
        let s = time_slice_segments(4 * min, SliceLength::Five, fps, 0);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].len(), 4 * min);
        // 20 s tail of a 5 min slice is < 10%: merged
        let s = time_slice_segments(10 * min + 20 * fps as u64, SliceLength::Five, fps, 0);
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].end, 10 * min + 20 * fps as u64 - 1);
    }
}
