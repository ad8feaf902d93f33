//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::path::Path;
use std::time::Instant;

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use engage::config::{InsufficientDataPolicy, SegmentMode, SessionConfig, SliceLength};
use engage::error::Result;
use engage::eval::{baseline_continuous_gaze, evaluate, predictions_from_scorecards, Label};
use engage::fixation::{detect_fixation_events, FixationTracker, ThresholdSet};
use engage::foreground::{median_filter, ForegroundMask, GmmModel, GmmParams};
use engage::gaze::{estimate_pose, project_point, student_t_two_sided_p, t_test_equal_mean, CameraIntrinsics, FaceModel3D, LmOptions, Pose, TTestResult};
use engage::ingest::{open_session, participant_dir, FaceFrameRecord, GrayFrame, ParticipantId};
use engage::presence::{chi_square_distance, ChiSquareVariant, ContextualResult, HistogramDescriptor};
use engage::scoring::{aggregate_score, classify_event, current_score, score_segment, EventVerdict, PresenceProbe, ScoredEvent};
use engage::segmentation::{Segment, TransitionDetector};
use engage::service::{analyze_streams, benchmark, run_live, LiveOptions, SessionOutcome};
use engage::synth::{Behavior, Deck, Scenario};

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn io<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

// ---------------------------------------------------------------- foreground

#[derive(Clone, Copy)]
struct Gauss {
    w: f64,
    m: f64,
    v: f64,
}

/// Straight transcription of the per-pixel update rule.
fn naive_gmm_step(px: &mut Vec<Gauss>, x: f64, p: &GmmParams) -> bool {
    let matched = px
        .iter()
        .position(|g| (x - g.m) * (x - g.m) <= p.match_threshold * p.match_threshold * g.v);
    for g in px.iter_mut() {
        g.w *= 1.0 - p.learning_rate;
    }
    match matched {
        Some(i) => {
            let g = &mut px[i];
            g.w += p.learning_rate;
            let d = x - g.m;
            g.m += p.learning_rate * d;
            g.v += p.learning_rate * (d * d - g.v);
            g.v = g.v.max(p.variance_floor);
        }
        None => {
            let fresh = Gauss {
                w: p.learning_rate,
                m: x,
                v: p.variance_init,
            };
            if px.len() < p.components {
                px.push(fresh);
            } else {
                *px.last_mut().unwrap() = fresh;
            }
        }
    }
    let total: f64 = px.iter().map(|g| g.w).sum();
    for g in px.iter_mut() {
        g.w /= total;
    }
    let mut tagged: Vec<(Gauss, bool)> = px.iter().enumerate().map(|(i, g)| (*g, Some(i) == matched)).collect();
    tagged.sort_by(|a, b| (b.0.w / b.0.v.sqrt()).partial_cmp(&(a.0.w / a.0.v.sqrt())).unwrap());
    *px = tagged.iter().map(|t| t.0).collect();
    match tagged.iter().position(|t| t.1) {
        None => true,
        Some(r) => tagged[..r].iter().map(|t| t.0.w).sum::<f64>() >= p.background_fraction,
    }
}

fn random_stream(rng: &mut ChaCha8Rng, w: usize, h: usize, frames: usize) -> Vec<GrayFrame> {
    let mut base: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.0..255.0)).collect();
    let jitter = rng.random_range(0.5..6.0);
    let noise = Normal::new(0.0, jitter).unwrap();
    (0..frames)
        .map(|_| {
            if rng.random_bool(0.02) {
                for b in base.iter_mut() {
                    if rng.random_bool(0.3) {
                        *b = rng.random_range(0.0..255.0);
                    }
                }
            }
            let data = base
                .iter()
                .map(|&b| {
                    if rng.random_bool(0.05) {
                        rng.random_range(0..=255u8)
                    } else {
                        (b + noise.sample(rng)).round().clamp(0.0, 255.0) as u8
                    }
                })
                .collect();
            GrayFrame::new(w, h, data).unwrap()
        })
        .collect()
}

fn gmm_oracle() -> Check {
    let t = Instant::now();
    let p = GmmParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6a11);
    let mut fg_pixels = 0usize;
    for s in 0..100 {
        let frames = random_stream(&mut rng, 16, 16, 300);
        let mut model = io(GmmModel::new(16, 16, p))?;
        let mut naive: Vec<Vec<Gauss>> = vec![Vec::new(); 256];
        for (f, frame) in frames.iter().enumerate() {
            let got = io(model.update_classify(frame))?;
            let want: Vec<bool> = if f == 0 {
                for (px, &v) in naive.iter_mut().zip(frame.pixels()) {
                    *px = vec![Gauss {
                        w: 1.0,
                        m: v as f64,
                        v: p.variance_init,
                    }];
                }
                vec![false; 256]
            } else {
                naive
                    .iter_mut()
                    .zip(frame.pixels())
                    .map(|(px, &v)| naive_gmm_step(px, v as f64, &p))
                    .collect()
            };
            fg_pixels += want.iter().filter(|&&b| b).count();
            ensure(got.bits() == want.as_slice(), || format!("stream {s} frame {f}: masks differ"))?;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("100 streams x 300 frames exact, {fg_pixels} foreground pixels, {secs:.1}s"))
}

fn median_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3ed);
    for i in 0..1000 {
        let density = rng.random_range(0.05..0.95);
        let bits: Vec<bool> = (0..256).map(|_| rng.random_bool(density)).collect();
        let mask = ForegroundMask::new(16, 16, bits.clone());
        for k in [3usize, 5] {
            let got = io(median_filter(&mask, k))?;
            let r = (k / 2) as isize;
            for y in 0..16isize {
                for x in 0..16isize {
                    let mut win = Vec::new();
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let (xx, yy) = ((x + dx).clamp(0, 15), (y + dy).clamp(0, 15));
                            win.push(bits[(yy * 16 + xx) as usize]);
                        }
                    }
                    win.sort();
                    let want = win[win.len() / 2];
                    ensure(got.get(x as usize, y as usize) == want, || format!("mask {i} k={k} at ({x},{y})"))?;
                }
            }
            ensure(got.count() == got.bits().iter().filter(|&&b| b).count(), || "count".into())?;
        }
    }
    Ok("1000 masks, kernels 3 and 5, exact".into())
}

// ----------------------------------------------------------------- fixation

/// Every (start, end) pair that is a maximal in-band run of sufficient length.
fn brute_force_runs(counts: &[u64], th: &ThresholdSet) -> Vec<(u64, u64)> {
    let n = counts.len();
    let inb = |i: usize| th.min_count <= counts[i] && counts[i] <= th.max_count;
    let mut out = Vec::new();
    for s in (0..n).filter(|&s| s == 0 || !inb(s - 1)) {
        // extending past an out-of-band frame can never give an all-in-band run
        for e in (s..n).take_while(|&e| inb(e)) {
            let right = e == n - 1 || !inb(e + 1);
            if right && (e - s + 1) as u64 >= th.min_frames {
                out.push((s as u64, e as u64));
            }
        }
    }
    out
}

fn fixation_oracle() -> Check {
    let id = ParticipantId::new("x");
    let th = io(ThresholdSet::new(10, 20, 3))?;
    let values = [9u64, 10, 20, 21];
    let mut checked = 0u64;
    let mut seq = Vec::with_capacity(12);
    for len in 0..=10u32 {
        for code in 0..4u64.pow(len) {
            seq.clear();
            let mut c = code;
            for _ in 0..len {
                seq.push(values[(c % 4) as usize]);
                c /= 4;
            }
            let got: Vec<(u64, u64)> = detect_fixation_events(&seq, &th, &id).iter().map(|e| (e.start, e.end)).collect();
            let want = brute_force_runs(&seq, &th);
            ensure(got == want, || format!("{seq:?}: {got:?} vs {want:?}"))?;
            checked += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xf1);
    let th = io(ThresholdSet::new(100, 5000, 60))?;
    for i in 0..10_000 {
        let mut counts = Vec::with_capacity(1000);
        while counts.len() < 1000 {
            let run = rng.random_range(1..150);
            let band = rng.random_range(0..3);
            for _ in 0..run {
                counts.push(match band {
                    0 => rng.random_range(0..100),
                    1 => rng.random_range(100..=5000),
                    _ => rng.random_range(5001..20000),
                });
            }
        }
        counts.truncate(1000);
        let batch: Vec<_> = detect_fixation_events(&counts, &th, &id);
        let got: Vec<(u64, u64)> = batch.iter().map(|e| (e.start, e.end)).collect();
        let want = brute_force_runs(&counts, &th);
        ensure(got == want, || format!("random series {i} differs"))?;
        let mut tracker = FixationTracker::new(th, id.clone());
        let mut live: Vec<_> = counts.iter().enumerate().filter_map(|(t, &c)| tracker.push(t as u64, Some(c))).collect();
        live.extend(tracker.finish());
        ensure(live == batch, || format!("incremental tracker differs on series {i}"))?;
    }
    Ok(format!("{checked} exhaustive sequences and 10000 random series exact"))
}

// -------------------------------------------------------------- segmentation

fn run_deck(deck: &Deck) -> std::result::Result<Vec<Segment>, String> {
    let mut det = TransitionDetector::new(100.0);
    let mut out = Vec::new();
    for (ts, f) in io(deck.frames())?.enumerate() {
        out.extend(io(det.push(ts as u64, &f))?);
    }
    out.extend(det.finish());
    Ok(out)
}

fn segmentation_deck() -> Check {
    let mut notes = Vec::new();
    for sigma in [0.0, 2.0] {
        let mut deck = Deck::lecture(320, 180, 8, 45, 17);
        deck.noise_sigma = sigma;
        let truth = deck.segments();
        ensure(truth.len() == 10, || "deck must have 10 slides".into())?;
        let got = run_deck(&deck)?;
        let want_cuts: Vec<u64> = truth.iter().skip(1).map(|s| s.start).collect();
        let got_cuts: Vec<u64> = got.iter().skip(1).map(|s| s.start).collect();
        let hits = want_cuts.iter().filter(|c| got_cuts.contains(c)).count();
        let false_cuts = got_cuts.iter().filter(|c| !want_cuts.contains(c)).count();
        let insignificant: Vec<bool> = got.iter().map(|s| !s.significant).collect();
        ensure(hits == want_cuts.len() && false_cuts == 0, || {
            format!("sigma {sigma}: recall {hits}/{}, {false_cuts} false transitions", want_cuts.len())
        })?;
        ensure(got == truth, || format!("sigma {sigma}: {got:?}"))?;
        ensure(insignificant.iter().filter(|&&b| b).count() == 2 && insignificant[0] && insignificant[9], || {
            format!("sigma {sigma}: insignificant flags {insignificant:?}")
        })?;
        notes.push(format!("sigma {sigma}: 9/9 transitions, 0 false, 2 insignificant"));
    }
    Ok(notes.join("; "))
}

// ---------------------------------------------------------------- presence

fn chi_square_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc41);
    let mut worst = 0.0f64;
    for i in 0..10_000 {
        let bins = [8usize, 16, 32, 64][i % 4];
        let gen = |rng: &mut ChaCha8Rng| {
            let counts: Vec<u64> = (0..bins)
                .map(|_| if rng.random_bool(0.2) { 0 } else { rng.random_range(0..500) })
                .collect();
            let total = counts.iter().sum::<u64>().max(1);
            HistogramDescriptor { counts, total }
        };
        let a = gen(&mut rng);
        let b = if i % 10 == 0 { a.clone() } else { gen(&mut rng) };
        let got = io(chi_square_distance(&a, &b, ChiSquareVariant::Symmetric))?;
        let back = io(chi_square_distance(&b, &a, ChiSquareVariant::Symmetric))?;
        ensure(got == back, || format!("pair {i}: asymmetric"))?;
        // direct sum over integer cross products
        let (ta, tb) = (a.total as f64, b.total as f64);
        let mut want = 0.0;
        for (&x, &y) in a.counts.iter().zip(&b.counts) {
            let (x, y) = (x as f64, y as f64);
            let den = x * tb + y * ta;
            if den > 0.0 {
                want += (x * tb - y * ta).powi(2) / (ta * tb * den);
            }
        }
        let rel = if want == 0.0 { got.abs() } else { ((got - want) / want).abs() };
        worst = worst.max(rel);
        ensure(rel <= 1e-12, || format!("pair {i}: {got} vs {want}"))?;
        let equal = a.counts.iter().zip(&b.counts).all(|(&x, &y)| x * b.total == y * a.total);
        ensure((got == 0.0) == equal, || format!("pair {i}: zero-iff-equal violated ({got})"))?;
    }
    Ok(format!("10000 pairs, max relative error {worst:.1e}"))
}

// -------------------------------------------------------------------- gaze

fn pnp_round_trip() -> Check {
    let t = Instant::now();
    let model = FaceModel3D::default();
    let k = CameraIntrinsics::uncalibrated(640.0, 480.0);
    let opts = LmOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e9);
    let lim = 30f64.to_radians();
    let noise = Normal::new(0.0, 0.5).unwrap();
    let (mut worst_rot, mut worst_tr, mut within) = (0.0f64, 0.0f64, 0usize);
    for i in 0..1000 {
        let rot = Rotation3::from_euler_angles(rng.random_range(-lim..lim), rng.random_range(-lim..lim), rng.random_range(-lim..lim));
        let tr = Vector3::new(rng.random_range(-60.0..60.0), rng.random_range(-40.0..40.0), rng.random_range(400.0..800.0));
        let pose = Pose::new(rot, tr);
        let mut pts = [[0.0; 2]; 6];
        for (p, x) in pts.iter_mut().zip(model.points()) {
            *p = io(project_point(&pose, &k, x))?;
        }
        let fit = io(estimate_pose(&pts, &model, &k, &opts))?;
        let rot_err = fit.pose.rotation_error(&pose);
        let tr_err = (fit.pose.translation() - tr).norm() / tr.norm();
        worst_rot = worst_rot.max(rot_err);
        worst_tr = worst_tr.max(tr_err);
        ensure(rot_err <= 1e-4 && tr_err <= 1e-3, || format!("pose {i}: rotation {rot_err:.2e} rad, translation {tr_err:.2e}"))?;

        let noisy = pts.map(|[x, y]| [x + noise.sample(&mut rng), y + noise.sample(&mut rng)]);
        if let Ok(fit) = estimate_pose(&noisy, &model, &k, &opts) {
            within += (fit.rms_error() <= 1.0) as usize;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(within >= 950, || format!("noisy RMSE <= 1 px in {within}/1000"))?;
    ensure(secs < 120.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "noiseless max rotation {worst_rot:.1e} rad, translation {worst_tr:.1e}; noisy RMSE <= 1 px in {within}/1000; {secs:.1}s"
    ))
}

/// ln Gamma by recurrence up to x >= 10, then the Stirling series.
fn oracle_ln_gamma(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < 10.0 {
        shift -= x.ln();
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 * (1.0 / 1680.0 - inv2 / 1188.0))));
    shift + (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + series
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}

fn t_test_oracle() -> Check {
    let mut worst = 0.0f64;
    for df in 2..=60u32 {
        let nu = df as f64;
        let c = (oracle_ln_gamma((nu + 1.0) / 2.0) - oracle_ln_gamma(nu / 2.0)).exp() / (nu * std::f64::consts::PI).sqrt();
        let density = move |x: f64| c * (1.0 + x * x / nu).powf(-(nu + 1.0) / 2.0);
        for step in 0..=40 {
            let t = step as f64 * 0.25;
            let inner = if t == 0.0 { 0.0 } else { adaptive_simpson(&density, 0.0, t, 1e-14) };
            let want = 1.0 - 2.0 * inner;
            for sign in [1.0, -1.0] {
                let got = student_t_two_sided_p(sign * t, nu);
                let err = (got - want).abs();
                worst = worst.max(err);
                ensure(err <= 1e-6, || format!("t={} df={df}: {got} vs {want}", sign * t))?;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x77);
    let normal = Normal::new(5.0, 2.0).unwrap();
    let mut rejected = 0u32;
    for _ in 0..100_000 {
        let a: Vec<f64> = (0..8).map(|_| normal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..8).map(|_| normal.sample(&mut rng)).collect();
        let r: TTestResult = io(t_test_equal_mean(&a, &b))?;
        rejected += (r.p < 0.001) as u32;
    }
    let rate = rejected as f64 / 100_000.0;
    ensure((0.0005..=0.002).contains(&rate), || format!("type-I rate {rate}"))?;
    Ok(format!("max |p - oracle| {worst:.1e} over |t| in [0,10], df 2..60; type-I rate {rate:.5}"))
}

// ----------------------------------------------------------------- scoring

fn score_tables() -> Check {
    for f in 0..=12u32 {
        for fs in 0..=f {
            let want = if f == 0 { None } else { Some(100.0 * fs as f64 / f as f64) };
            ensure(current_score(fs, f) == want, || format!("C_s({fs}, {f})"))?;
        }
    }
    ensure(aggregate_score(&[Some(100.0), None, Some(50.0)]) == Some(75.0), || "aggregate".into())?;
    ensure(aggregate_score(&[None, None]).is_none(), || "all N/A aggregate".into())?;

    // every table of up to 3 events: instructor flag x student state
    let ids = [ParticipantId::new("a"), ParticipantId::new("b")];
    let seg = Segment {
        start: 0,
        end: 99,
        significant: true,
    };
    let mut tables = 0;
    for m in 0..=3u32 {
        for flags in 0..(1u32 << m) {
            for states in 0..3u32.pow(m) {
                let mut events = Vec::new();
                let (mut f, mut fs, mut fi) = (0u32, 0u32, 0u32);
                let mut s = states;
                for e in 0..m {
                    let present = flags >> e & 1 == 1;
                    let state = s % 3;
                    s /= 3;
                    let verdict = |id: &ParticipantId, state: u32| EventVerdict {
                        event: e as u64,
                        student: id.clone(),
                        visual: true,
                        contextual: Some(true),
                        cognitive: (state != 2).then_some(state == 0),
                        counted: state != 2,
                        min_distance: None,
                        p_value: None,
                    };
                    if present {
                        fi += 1;
                        if state != 2 {
                            f += 1;
                            fs += (state == 0) as u32;
                        }
                    }
                    events.push(ScoredEvent {
                        instructor_present: present,
                        verdicts: vec![verdict(&ids[0], state), verdict(&ids[1], 1)],
                    });
                }
                let card = score_segment(0, &seg, &ids, &events);
                let cs = (f > 0).then(|| 100.0 * fs as f64 / f as f64);
                let cs_b = (fi > 0).then_some(0.0);
                let agg = match (cs, cs_b) {
                    (Some(a), Some(b)) => Some((a + b) / 2.0),
                    (a, b) => a.or(b),
                };
                let ci = (m > 0).then(|| 100.0 * fi as f64 / m as f64);
                let s0 = &card.per_student[0];
                ensure(s0.fs == fs && s0.f == f && s0.cs == cs, || format!("table m={m} flags={flags} states={states}: {s0:?}"))?;
                ensure(card.per_student[1].f == fi && card.per_student[1].cs == cs_b, || "second student".into())?;
                ensure(card.aggregate == agg && card.fi == fi && card.ci == ci && card.events == m, || {
                    format!("table m={m} flags={flags} states={states}: {card:?}")
                })?;
                tables += 1;
            }
        }
    }
    Ok(format!("C_s over 91 (F_s, f) pairs and {tables} event tables exact, f=0 -> N/A"))
}

// --------------------------------------------------------------- scenarios

fn five_behavior_scenario(seed: u64) -> Scenario {
    let slides = 4;
    let mut rows: Vec<(String, Vec<Behavior>)> = Behavior::ALL
        .iter()
        .enumerate()
        .map(|(i, &b)| ((i + 1).to_string(), vec![b; slides]))
        .collect();
    // one student changes behavior every slide
    rows.push(("6".into(), (0..slides).map(|i| Behavior::ALL[(i + 1) % 5]).collect()));
    Scenario::scripted(seed, rows)
}

struct Inputs {
    visual: bool,
    distance: f64,
    p: f64,
}

struct Replay<'a>(&'a Inputs, f64);

impl PresenceProbe for Replay<'_> {
    fn visual(&mut self) -> bool {
        self.0.visual
    }
    fn contextual(&mut self) -> Result<ContextualResult> {
        Ok(ContextualResult {
            present: self.0.distance <= self.1,
            min_distance: self.0.distance,
        })
    }
    fn cognitive(&mut self) -> Result<TTestResult> {
        Ok(TTestResult {
            t: 0.0,
            df: 10.0,
            p: self.0.p,
        })
    }
}

fn scenario_suite(session: &Path, scenario: &Scenario, outcome: &SessionOutcome) -> Check {
    let truth = scenario.truth();
    let cutoff = 50.0;
    let preds = predictions_from_scorecards(&outcome.scorecards, cutoff);
    let report = io(evaluate(&preds, &truth.labels))?;
    let c = report.overall.counts;
    ensure(c.fp == 0 && c.fn_ == 0 && c.not_available == 0, || format!("confusion {c:?}"))?;
    ensure(report.overall.f2 == Some(1.0), || format!("F2 {:?}", report.overall.f2))?;
    ensure(outcome.instructor_events.len() == truth.events.len(), || {
        format!("{} instructor events, expected {}", outcome.instructor_events.len(), truth.events.len())
    })?;

    // every event verdict agrees with the scripted behavior
    let fps = scenario.frames_per_slide();
    for ev in &outcome.evaluated {
        let slide = (ev.event.start / fps) as usize;
        for (v, s) in ev.verdicts.iter().zip(&scenario.students) {
            let want = s.behaviors[slide] == Behavior::Engaged;
            ensure(v.engaged() == want, || format!("event {} student {}: {v:?}", ev.index, s.id))?;
        }
    }

    // gate mutations with recorded values: pass values from engaged
    // verdicts, fail values from the student failing that gate
    let config: SessionConfig = io(open_session(session))?.0;
    let (alpha, dh) = (config.gaze.significance_level, config.context.threshold);
    let by = |b: Behavior| scenario.students.iter().position(|s| s.behaviors.iter().all(|&x| x == b)).unwrap();
    let (eng, read, mobile, away) = (by(Behavior::Engaged), by(Behavior::ReadingOtherTab), by(Behavior::Mobile), by(Behavior::GazeAway));
    let mut mutations = 0;
    for ev in &outcome.evaluated {
        let pass = &ev.verdicts[eng];
        let pass = Inputs {
            visual: pass.visual,
            distance: pass.min_distance.ok_or("no distance")?,
            p: pass.p_value.ok_or("no p")?,
        };
        let fail = Inputs {
            visual: ev.verdicts[mobile].visual,
            distance: ev.verdicts[read].min_distance.ok_or("no distance")?,
            p: ev.verdicts[away].p_value.ok_or("no p")?,
        };
        ensure(!fail.visual && fail.distance > dh && fail.p < alpha, || format!("event {}: failing values do not fail", ev.index))?;
        for mask in 0..8u32 {
            let pick = |bit: u32| mask >> bit & 1 == 1;
            let inputs = Inputs {
                visual: if pick(0) { fail.visual } else { pass.visual },
                distance: if pick(1) { fail.distance } else { pass.distance },
                p: if pick(2) { fail.p } else { pass.p },
            };
            let v = classify_event(0, &ParticipantId::new("m"), &mut Replay(&inputs, dh), alpha, InsufficientDataPolicy::Exclude);
            ensure(v.engaged() == (mask == 0), || format!("event {} mutation {mask:03b}: {v:?}", ev.index))?;
            mutations += 1;
        }
    }
    Ok(format!(
        "{} labels, confusion tp={} tn={} fp=0 fn=0, F2=1.0; {mutations} gate mutations flip as expected",
        truth.labels.len(),
        c.tp,
        c.tn
    ))
}

fn read_faces(session: &Path, id: &str) -> std::result::Result<Vec<FaceFrameRecord>, String> {
    let path = participant_dir(session, id).join("face.jsonl");
    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    text.lines().map(|l| io(FaceFrameRecord::parse_line(l))).collect()
}

fn baseline_contrast(session: &Path, scenario: &Scenario, outcome: &SessionOutcome) -> Check {
    let idx = scenario
        .students
        .iter()
        .position(|s| s.behaviors.iter().all(|&b| b == Behavior::ReadingOtherTab))
        .unwrap();
    let id = &scenario.students[idx].id;
    let faces = read_faces(session, id)?;
    let preds = predictions_from_scorecards(&outcome.scorecards, 50.0);
    let mut segments = 0;
    for card in &outcome.scorecards {
        let base = baseline_continuous_gaze(&faces, card.start, card.end);
        let engine = preds
            .iter()
            .find(|p| p.segment == card.segment && p.student.as_str() == id)
            .and_then(|p| p.label);
        ensure(base == Label::Engaged && engine == Some(Label::NonEngaged), || {
            format!("segment {}: baseline {base:?}, engine {engine:?}", card.segment)
        })?;
        segments += 1;
    }

    // specificity of both over the whole suite
    let truth = scenario.truth();
    let mut base_preds = Vec::new();
    for card in &outcome.scorecards {
        for s in &scenario.students {
            let faces = read_faces(session, &s.id)?;
            base_preds.push(engage::eval::Prediction {
                segment: card.segment,
                student: ParticipantId::new(s.id.clone()),
                label: Some(baseline_continuous_gaze(&faces, card.start, card.end)),
            });
        }
    }
    let b = io(evaluate(&base_preds, &truth.labels))?;
    let e = io(evaluate(&preds, &truth.labels))?;
    let spec = |v: Option<f64>| v.map_or("n/a".into(), |x| format!("{x:.2}"));
    ensure(b.overall.specificity < e.overall.specificity, || "baseline specificity not lower".into())?;
    Ok(format!(
        "reading-other-tab: baseline engaged, engine non-engaged in {segments}/{segments} segments; specificity baseline {} vs engine {}",
        spec(b.overall.specificity),
        spec(e.overall.specificity)
    ))
}

fn throughput() -> Check {
    let rows = (1..=4)
        .map(|i| (i.to_string(), vec![Behavior::ALL[i - 1]; 2]))
        .collect();
    let mut sc = Scenario::scripted(3, rows);
    sc.width = 640;
    sc.height = 360;
    let r = io(benchmark(&sc, 720))?;
    ensure(r.participants == 5 && r.width == 640 && r.height == 360, || "bench shape".into())?;
    ensure(r.mean_ms <= 33.0, || format!("mean {:.2} ms/frame over {} frames", r.mean_ms, r.frames))?;
    Ok(format!(
        "mean {:.2} ms/frame (p95 {:.2}, max {:.2}) over {} frames at 640x360, 5 participants",
        r.mean_ms, r.p95_ms, r.max_ms, r.frames
    ))
}

fn replay_determinism(session: &Path) -> Check {
    let mut lines = 0;
    for mode in [SegmentMode::Automatic, SegmentMode::Manual { slice: SliceLength::Three }] {
        let (mut config, streams) = io(open_session(session))?;
        let offline = io(analyze_streams(&config, mode, streams))?;
        config.segmentation.mode = mode.kind();
        if let SegmentMode::Manual { slice } = mode {
            config.segmentation.slice_minutes = slice.minutes();
        }
        let streams = io(open_session(session))?.1;
        let live = io(run_live(config, streams, LiveOptions::default()))?;
        let a: Vec<String> = offline.scorecards.iter().map(|c| c.to_json_line()).collect();
        let b: Vec<String> = live.outcome.scorecards.iter().map(|c| c.to_json_line()).collect();
        let c: Vec<String> = live.events.iter().map(|e| e.scorecard.to_json_line()).collect();
        ensure(!a.is_empty() && a == b && a == c, || format!("{mode:?}: scorecards differ"))?;
        let va: Vec<String> = offline.evaluated.iter().flat_map(|e| &e.verdicts).map(|v| serde_json::to_string(v).unwrap()).collect();
        let vb: Vec<String> = live.outcome.evaluated.iter().flat_map(|e| &e.verdicts).map(|v| serde_json::to_string(v).unwrap()).collect();
        ensure(va == vb, || format!("{mode:?}: verdicts differ"))?;
        lines += a.len();
    }
    Ok(format!("{lines} scorecards byte-identical (automatic and 3-minute slices), verdicts identical"))
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |name: &str| filter.is_empty() || filter.iter().any(|f| name.contains(f.as_str()));

    let dir = tempfile::tempdir().expect("tempdir");
    let scenario = five_behavior_scenario(21);
    let mut outcome: Option<std::result::Result<SessionOutcome, String>> = None;
    let mut session = || {
        outcome
            .get_or_insert_with(|| {
                io(scenario.write_session(dir.path()))?;
                let (config, streams) = io(open_session(dir.path()))?;
                io(analyze_streams(&config, io(config.segment_mode())?, streams))
            })
            .clone()
    };

    let mut results: Vec<(&str, Check)> = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut() -> Check| {
        if wanted(name) {
            let t = Instant::now();
            let r = f();
            let line = match &r {
                Ok(msg) => format!("PASS {name}: {msg}"),
                Err(msg) => format!("FAIL {name}: {msg}"),
            };
            println!("{line} [{:.1}s]", t.elapsed().as_secs_f64());
            results.push((name, r));
        }
    };
    run("gmm-oracle", &mut gmm_oracle);
    run("median-oracle", &mut median_oracle);
    run("fixation-oracle", &mut fixation_oracle);
    run("slide-segmentation", &mut segmentation_deck);
    run("chi-square-oracle", &mut chi_square_oracle);
    run("pnp-round-trip", &mut pnp_round_trip);
    run("t-test-oracle", &mut t_test_oracle);
    run("score-formulas", &mut score_tables);
    run("scenario-suite", &mut || scenario_suite(dir.path(), &scenario, &session()?));
    run("baseline-contrast", &mut || baseline_contrast(dir.path(), &scenario, &session()?));
    run("throughput", &mut throughput);
    run("replay-determinism", &mut || {
        session()?;
        replay_determinism(dir.path())
    });

    let failed = results.iter().filter(|r| r.1.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
