//! Per-pixel Gaussian-mixture background subtraction on grayscale frames,
//! followed by boolean median filtering.
//!
//! Update rule for one pixel with intensity `x` (components kept sorted by
//! `weight / sigma`, descending):
//!
//! 1. The first component in sorted order with `(x - mean)^2 <= m^2 * var`
//!    matches.
//! 2. Matched: every weight becomes `(1 - rho) * w`, the matched one gains
//!    `rho`; with `d = x - mean`, `mean += rho * d` and
//!    `var += rho * (d * d - var)`, clamped below at the variance floor.
//! 3. Unmatched: a new component `(rho, x, var_init)` is appended when fewer
//!    than K exist, otherwise it replaces the last (weakest) one; the other
//!    weights are multiplied by `1 - rho`.
//! 4. Weights are renormalized to sum to one and the components re-sorted
//!    (stable).
//! 5. The pixel is background iff it matched and the total weight of the
//!    components ranked before the matched one is below the background fraction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::GrayFrame;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    /// Maximum number of components per pixel (K).
    pub components: usize,
    pub learning_rate: f64,
    pub background_fraction: f64,
    /// Match radius in standard deviations.
    pub match_threshold: f64,
    pub variance_init: f64,
    pub variance_floor: f64,
    /// Seed component means from the first frame (which is then all background).
    pub seed_first_frame: bool,
}

impl Default for GmmParams {
    fn default() -> Self {
        GmmParams {
            components: 3,
            learning_rate: 0.01,
            background_fraction: 0.8,
            match_threshold: 2.5,
            variance_init: 225.0,
            variance_floor: 4.0,
            seed_first_frame: true,
        }
    }
}

impl GmmParams {
    pub fn validate(&self) -> Result<()> {
        if self.components == 0 || self.components > 255 {
            return Err(Error::invalid(
                "foreground.components",
                format!("must lie in 1..=255, got {}", self.components),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            return Err(Error::invalid(
                "foreground.learning_rate",
                format!("must lie in (0, 1), got {}", self.learning_rate),
            ));
        }
        if !(self.background_fraction > 0.0 && self.background_fraction <= 1.0) {
            return Err(Error::invalid(
                "foreground.background_fraction",
                format!("must lie in (0, 1], got {}", self.background_fraction),
            ));
        }
        if !(self.match_threshold > 0.0 && self.match_threshold.is_finite()) {
            return Err(Error::invalid("foreground.match_threshold", "must be > 0"));
        }
        if !(self.variance_floor > 0.0 && self.variance_floor.is_finite()) {
            return Err(Error::invalid("foreground.variance_floor", "must be > 0"));
        }
        if !(self.variance_init >= self.variance_floor && self.variance_init.is_finite()) {
            return Err(Error::invalid(
                "foreground.variance_init",
                "must be finite and >= variance_floor",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

impl Component {
    #[inline]
    fn rank_key(&self) -> f64 {
        self.weight / self.variance.sqrt()
    }
}

/// Binary foreground mask with its cached foreground count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForegroundMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
    count: usize,
}

impl ForegroundMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height, "mask size");
        let count = bits.iter().filter(|&&b| b).count();
        ForegroundMask {
            width,
            height,
            bits,
            count,
        }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        ForegroundMask {
            width,
            height,
            bits: vec![false; width * height],
            count: 0,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.count
    }
}

pub fn foreground_count(mask: &ForegroundMask) -> usize {
    mask.count()
}

/// Background model of one stream. Components are stored flat, `K` slots per
/// pixel, of which the first `len[p]` are live.
#[derive(Debug, Clone)]
pub struct GmmModel {
    params: GmmParams,
    width: usize,
    height: usize,
    comps: Vec<Component>,
    len: Vec<u8>,
    seeded: bool,
}

impl GmmModel {
    /// Every pixel starts with one component `(1, 0, variance_init)`.
    pub fn new(width: usize, height: usize, params: GmmParams) -> Result<Self> {
        params.validate()?;
        if width == 0 || height == 0 {
            return Err(Error::invalid("frame", "model dimensions must be non-zero"));
        }
        let k = params.components;
        let mut comps = vec![
            Component {
                weight: 0.0,
                mean: 0.0,
                variance: params.variance_init,
            };
            width * height * k
        ];
        for p in 0..width * height {
            comps[p * k].weight = 1.0;
        }
        Ok(GmmModel {
            params,
            width,
            height,
            comps,
            len: vec![1; width * height],
            seeded: !params.seed_first_frame,
        })
    }

    pub fn params(&self) -> &GmmParams {
        &self.params
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Live components of pixel `(x, y)`, in rank order.
    pub fn pixel_components(&self, x: usize, y: usize) -> &[Component] {
        let p = y * self.width + x;
        let k = self.params.components;
        &self.comps[p * k..p * k + self.len[p] as usize]
    }

    /// Resets every pixel to a single component centered on `frame`.
    pub fn seed(&mut self, frame: &GrayFrame) -> Result<()> {
        self.check_dims(frame)?;
        let k = self.params.components;
        for (p, &v) in frame.pixels().iter().enumerate() {
            self.comps[p * k] = Component {
                weight: 1.0,
                mean: v as f64,
                variance: self.params.variance_init,
            };
            self.len[p] = 1;
        }
        self.seeded = true;
        Ok(())
    }

    fn check_dims(&self, frame: &GrayFrame) -> Result<()> {
        if frame.dims() != (self.width, self.height) {
            return Err(Error::Dimension {
                expected: (self.width, self.height),
                got: frame.dims(),
            });
        }
        Ok(())
    }

    /// Updates the model with `frame` and returns its foreground mask.
    pub fn update_classify(&mut self, frame: &GrayFrame) -> Result<ForegroundMask> {
        self.check_dims(frame)?;
        if !self.seeded {
            self.seed(frame)?;
            return Ok(ForegroundMask::empty(self.width, self.height));
        }
        let mut bits = vec![false; self.width * self.height];
        let mut count = 0;
        let k = self.params.components;
        for (p, &v) in frame.pixels().iter().enumerate() {
            let slots = &mut self.comps[p * k..(p + 1) * k];
            let fg = update_pixel(&self.params, slots, &mut self.len[p], v as f64);
            bits[p] = fg;
            count += fg as usize;
        }
        Ok(ForegroundMask {
            width: self.width,
            height: self.height,
            bits,
            count,
        })
    }
}

/// Applies the update rule to one pixel; returns `true` for foreground.
#[inline]
fn update_pixel(params: &GmmParams, slots: &mut [Component], len: &mut u8, x: f64) -> bool {
    let rho = params.learning_rate;
    let keep = 1.0 - rho;
    let m2 = params.match_threshold * params.match_threshold;
    let mut n = *len as usize;

    let matched = slots[..n].iter().position(|c| {
        let d = x - c.mean;
        d * d <= m2 * c.variance
    });

    if n == 1 {
        if matched.is_some() {
            // w' = (w * keep + rho) / (w * keep + rho) == 1 exactly
            let c = &mut slots[0];
            c.weight = 1.0;
            let d = x - c.mean;
            c.mean += rho * d;
            c.variance += rho * (d * d - c.variance);
            if c.variance < params.variance_floor {
                c.variance = params.variance_floor;
            }
            return false;
        }
    }

    match matched {
        Some(m) => {
            for c in &mut slots[..n] {
                c.weight *= keep;
            }
            let c = &mut slots[m];
            c.weight += rho;
            let d = x - c.mean;
            c.mean += rho * d;
            c.variance += rho * (d * d - c.variance);
            if c.variance < params.variance_floor {
                c.variance = params.variance_floor;
            }
        }
        None => {
            for c in &mut slots[..n] {
                c.weight *= keep;
            }
            let fresh = Component {
                weight: rho,
                mean: x,
                variance: params.variance_init,
            };
            if n < slots.len() {
                slots[n] = fresh;
                n += 1;
                *len = n as u8;
            } else {
                slots[n - 1] = fresh;
            }
        }
    }

    let total: f64 = slots[..n].iter().map(|c| c.weight).sum();
    for c in &mut slots[..n] {
        c.weight /= total;
    }

    // stable insertion sort by rank key, tracking the matched slot
    let mut keys = [0.0f64; MAX_FAST_K];
    let cached = n <= MAX_FAST_K;
    if cached {
        for (k, c) in keys.iter_mut().zip(&slots[..n]) {
            *k = c.rank_key();
        }
    }
    let mut tracked = matched;
    for i in 1..n {
        let mut j = i;
        while j > 0
            && if cached {
                keys[j] > keys[j - 1]
            } else {
                slots[j].rank_key() > slots[j - 1].rank_key()
            }
        {
            slots.swap(j, j - 1);
            if cached {
                keys.swap(j, j - 1);
            }
            tracked = match tracked {
                Some(t) if t == j => Some(j - 1),
                Some(t) if t == j - 1 => Some(j),
                t => t,
            };
            j -= 1;
        }
    }

    match tracked {
        None => true,
        Some(t) => {
            let before: f64 = slots[..t].iter().map(|c| c.weight).sum();
            before >= params.background_fraction
        }
    }
}

const MAX_FAST_K: usize = 8;

/// Majority (boolean median) filter over a `k x k` window with edge replication.
pub fn median_filter(mask: &ForegroundMask, k: usize) -> Result<ForegroundMask> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::invalid(
            "median_kernel",
            format!("kernel size must be odd and >= 1, got {k}"),
        ));
    }
    let (w, h) = (mask.width, mask.height);
    if k == 1 {
        return Ok(mask.clone());
    }
    let r = k / 2;

    // horizontal window sums over an edge-replicated row, then vertical
    let mut rows = vec![0u16; w * h];
    let mut padded = vec![0u16; w + 2 * r];
    for y in 0..h {
        let line = &mask.bits[y * w..(y + 1) * w];
        for (i, p) in padded.iter_mut().enumerate() {
            *p = line[i.saturating_sub(r).min(w - 1)] as u16;
        }
        let out = &mut rows[y * w..(y + 1) * w];
        let mut acc: u16 = padded[..k].iter().sum();
        out[0] = acc;
        for x in 1..w {
            acc = acc + padded[x + k - 1] - padded[x - 1];
            out[x] = acc;
        }
    }
    let half = (k * k / 2) as u32;
    let mut bits = vec![false; w * h];
    let mut count = 0;
    let mut acc = vec![0u32; w];
    let row = |y: isize| y.clamp(0, h as isize - 1) as usize * w;
    for dy in -(r as isize)..=r as isize {
        let src = row(dy);
        for (a, &v) in acc.iter_mut().zip(&rows[src..src + w]) {
            *a += v as u32;
        }
    }
    for y in 0..h {
        if y > 0 {
            let add = row(y as isize + r as isize);
            let sub = row(y as isize - r as isize - 1);
            for ((a, &p), &m) in acc.iter_mut().zip(&rows[add..add + w]).zip(&rows[sub..sub + w]) {
                *a = *a + p as u32 - m as u32;
            }
        }
        for (b, &a) in bits[y * w..(y + 1) * w].iter_mut().zip(&acc) {
            *b = a > half;
            count += *b as usize;
        }
    }
    Ok(ForegroundMask {
        width: w,
        height: h,
        bits,
        count,
    })
}

/// Background subtraction, median filtering and counting for one stream.
#[derive(Debug, Clone)]
pub struct ForegroundExtractor {
    model: Option<GmmModel>,
    params: GmmParams,
    kernel: usize,
}

impl ForegroundExtractor {
    pub fn new(params: GmmParams, kernel: usize) -> Result<Self> {
        params.validate()?;
        if kernel == 0 || kernel.is_multiple_of(2) {
            return Err(Error::invalid(
                "median_kernel",
                format!("kernel size must be odd and >= 1, got {kernel}"),
            ));
        }
        Ok(ForegroundExtractor {
            model: None,
            params,
            kernel,
        })
    }

    /// Filtered mask of the next frame; the model is created lazily from the
    /// first frame's dimensions.
    pub fn process(&mut self, frame: &GrayFrame) -> Result<ForegroundMask> {
        let model = match &mut self.model {
            Some(m) => m,
            None => self
                .model
                .insert(GmmModel::new(frame.width(), frame.height(), self.params)?),
        };
        let raw = model.update_classify(frame)?;
        median_filter(&raw, self.kernel)
    }
}
