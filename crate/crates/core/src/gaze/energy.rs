use serde::{Deserialize, Serialize};

/// Horizontal screen coordinate of one frame's projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSample {
    pub ts: u64,
    pub x: f64,
}

/// Drops the vertical coordinate and divides x by `width` (pass `1.0` to keep
/// raw pixels).
pub fn horizontal_series(projections: &[(u64, [f64; 2])], width: f64) -> Vec<ProjectionSample> {
    projections
        .iter()
        .map(|&(ts, p)| ProjectionSample { ts, x: p[0] / width })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyWindow {
    /// Window number counted from the event start.
    pub index: u64,
    pub energy: f64,
    pub samples: u32,
}

/// Per-second gazing energies of one event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySeries {
    pub event_start: u64,
    pub windows: Vec<EnergyWindow>,
}

impl EnergySeries {
    pub fn values(&self) -> Vec<f64> {
        self.windows.iter().map(|w| w.energy).collect()
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// Sums `x^2` over one-second windows `[start + k*fps, start + (k+1)*fps)`
/// of the event `[start, end]`. Empty windows are omitted; a trailing partial
/// window is kept only with at least `fps / 2` samples. Samples outside the
/// event are ignored.
pub fn gazing_energy(samples: &[ProjectionSample], start: u64, end: u64, fps: u32) -> EnergySeries {
    let fps = fps.max(1) as u64;
    let len = end - start + 1;
    let n_windows = len.div_ceil(fps);
    let mut sums = vec![(0.0f64, 0u32); n_windows as usize];
    for s in samples.iter().filter(|s| start <= s.ts && s.ts <= end) {
        let w = ((s.ts - start) / fps) as usize;
        sums[w].0 += s.x * s.x;
        sums[w].1 += 1;
    }
    let partial_last = !len.is_multiple_of(fps);
    let windows = sums
        .into_iter()
        .enumerate()
        .filter(|&(i, (_, n))| {
            if n == 0 {
                return false;
            }
            if partial_last && i as u64 == n_windows - 1 {
                return 2 * n as u64 >= fps;
            }
            true
        })
        .map(|(i, (energy, samples))| EnergyWindow {
            index: i as u64,
            energy,
            samples,
        })
        .collect();
    EnergySeries {
        event_start: start,
        windows,
    }
}
