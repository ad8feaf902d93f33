use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use engage::config::{SegmentMode, SliceLength};
use engage::error::{Error, Result};
use engage::eval::{evaluate, read_jsonl, GroundTruthLabel, Prediction};
use engage::ingest::{open_session, read_pgm, GrayFrame};
use engage::presence::calibrate_threshold;
use engage::service::feed::{FeedHub, FeedServer};
use engage::service::output::{write_debug, write_jsonl, write_results, DebugSink};
use engage::ingest::TickStream;
use engage::service::{analyze_ticks, benchmark, run_live, DropPolicy, LiveOptions, SessionOutcome, TickSink};
use engage::synth::{Behavior, Scenario};

#[derive(Parser)]
#[command(name = "engage", version, about = "Engagement analytics for recorded or live online lectures")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    /// Segments follow slide transitions.
    Auto,
    /// Fixed time slices (see --slice).
    Slice,
}

#[derive(Subcommand)]
enum Cmd {
    /// Analyze a session directory.
    Run {
        #[arg(long)]
        session: PathBuf,
        /// Defaults to the session configuration.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Slice length in minutes: 3, 5 or 15.
        #[arg(long)]
        slice: Option<u32>,
        /// Output directory (default: SESSION/out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Stream through the live engine instead of the batch pipeline.
        #[arg(long)]
        live: bool,
        /// Serve the score feed and command endpoint on this port (implies --live).
        #[arg(long)]
        serve: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        /// Pace input at the session frame rate.
        #[arg(long)]
        realtime: bool,
        /// Drop screen frames once this many ticks are queued.
        #[arg(long)]
        drop_backlog: Option<usize>,
        /// Keep serving after the session ends until interrupted.
        #[arg(long)]
        linger: bool,
        /// Write debug exports (events, segments, projections, energies) here.
        #[arg(long)]
        debug_export: Option<PathBuf>,
        /// With --debug-export, also write one PBM foreground mask per frame.
        #[arg(long)]
        masks: bool,
        /// Minimum current score (percent) predicted as engaged (default: session configuration).
        #[arg(long)]
        cutoff: Option<f64>,
    },
    /// Score predictions against ground-truth labels.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Write the report here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the contextual-presence histogram threshold.
    #[command(name = "calibrate-dh")]
    CalibrateDh {
        /// Directory with `matched/` and `mismatched/` holding NAME.a.pgm / NAME.b.pgm pairs.
        #[arg(long, conflicts_with = "synthetic")]
        corpus: Option<PathBuf>,
        /// Use generated slide pairs at several resolutions.
        #[arg(long)]
        synthetic: bool,
        #[arg(long, default_value_t = 32)]
        bins: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Time the live engine on a generated session.
    Bench {
        #[arg(long, default_value_t = 900)]
        frames: u64,
        #[arg(long, default_value_t = 640)]
        width: usize,
        #[arg(long, default_value_t = 360)]
        height: usize,
        #[arg(long, default_value_t = 4)]
        students: usize,
    },
    /// Write a scripted synthetic session with ground-truth labels.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        slides: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 160)]
        width: usize,
        #[arg(long, default_value_t = 96)]
        height: usize,
        /// Add a gaze-away student.
        #[arg(long)]
        gaze_away: bool,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("engage: {e}");
            ExitCode::FAILURE
        }
    }
}

fn print_json<T: serde::Serialize>(v: &T) {
    use std::io::Write;
    // a closed pipe (e.g. `| head`) is not an error
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(v).expect("serializes"));
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Run {
            session,
            mode,
            slice,
            out,
            live,
            serve,
            bind,
            realtime,
            drop_backlog,
            linger,
            debug_export,
            masks,
            cutoff,
        } => {
            let (config, streams) = open_session(&session)?;
            let cutoff = cutoff.unwrap_or(config.scoring.engaged_cutoff);
            let mode = match (mode, slice) {
                (None, None) => config.segment_mode()?,
                (Some(ModeArg::Auto), None) => SegmentMode::Automatic,
                (Some(ModeArg::Auto), Some(_)) => return Err(Error::Command("--slice requires --mode slice".into())),
                (_, Some(m)) => SegmentMode::Manual {
                    slice: SliceLength::try_from(m).map_err(Error::Command)?,
                },
                (Some(ModeArg::Slice), None) => return Err(Error::Command("--mode slice requires --slice 3|5|15".into())),
            };
            let out = out.unwrap_or_else(|| session.join("out"));
            let (outcome, events) = if live || serve.is_some() {
                let hub = FeedHub::new(mode);
                let server = match serve {
                    Some(port) => {
                        let addr: SocketAddr = format!("{bind}:{port}")
                            .parse()
                            .map_err(|e| Error::invalid("bind", format!("{e}")))?;
                        let s = FeedServer::start(hub.clone(), addr)?;
                        eprintln!("feed: http://{}/feed  commands: POST http://{}/command", s.addr, s.addr);
                        Some(s)
                    }
                    None => None,
                };
                let mut config = config;
                config.segmentation.mode = mode.kind();
                if let SegmentMode::Manual { slice } = mode {
                    config.segmentation.slice_minutes = slice.minutes();
                }
                let report = run_live(
                    config,
                    streams,
                    LiveOptions {
                        realtime,
                        drop_policy: drop_backlog.map(|max_backlog| DropPolicy { max_backlog }),
                        hub: Some(hub),
                        ..Default::default()
                    },
                )?;
                eprintln!(
                    "live: {} ticks, {:.2} ms/tick mean, {:.2} ms max, {} dropped screen frames",
                    report.ticks, report.mean_tick_ms, report.max_tick_ms, report.dropped_frames
                );
                if linger && server.is_some() {
                    eprintln!("session complete; serving until interrupted");
                    loop {
                        std::thread::park();
                    }
                }
                drop(server);
                (report.outcome, Some(report.events))
            } else {
                let has_presentation = streams.presentation.is_some();
                let mut sink = match &debug_export {
                    Some(dir) => Some(DebugSink::create(dir, masks)?),
                    None => None,
                };
                let outcome = analyze_ticks(
                    &config,
                    mode,
                    has_presentation,
                    TickStream::new(streams),
                    sink.as_mut().map(|s| s as &mut dyn TickSink),
                )?;
                if let Some(s) = sink {
                    s.finish()?;
                }
                (outcome, None)
            };
            write_results(&out, &outcome, events.as_deref(), cutoff)?;
            if let Some(dir) = &debug_export {
                write_debug(dir, &outcome)?;
            }
            summarize(&outcome);
            eprintln!("results written to {}", out.display());
            Ok(())
        }
        Cmd::Evaluate { pred, labels, out } => {
            let preds: Vec<Prediction> = read_jsonl(&pred)?;
            let labels: Vec<GroundTruthLabel> = read_jsonl(&labels)?;
            let report = evaluate(&preds, &labels)?;
            print_json(&report);
            if let Some(out) = out {
                let text = serde_json::to_string_pretty(&report).expect("serializes");
                std::fs::write(&out, text + "\n").map_err(|e| Error::io(&out, e))?;
            }
            Ok(())
        }
        Cmd::CalibrateDh {
            corpus,
            synthetic,
            bins,
            seed,
        } => {
            let (matched, mismatched) = match (corpus, synthetic) {
                (Some(dir), _) => (read_pairs(&dir.join("matched"))?, read_pairs(&dir.join("mismatched"))?),
                (None, true) => engage::synth::calibration_pairs(seed, 48)?,
                (None, false) => return Err(Error::Command("give --corpus DIR or --synthetic".into())),
            };
            let c = calibrate_threshold(&matched, &mismatched, bins, engage::presence::ChiSquareVariant::Symmetric)?;
            print_json(&c);
            if !c.separable() {
                eprintln!("warning: {} pairs misclassified at the best threshold", c.errors);
            }
            Ok(())
        }
        Cmd::Bench {
            frames,
            width,
            height,
            students,
        } => {
            let mut sc = bench_scenario(frames, students);
            sc.width = width;
            sc.height = height;
            let r = benchmark(&sc, frames)?;
            print_json(&r);
            Ok(())
        }
        Cmd::Synth {
            out,
            slides,
            seed,
            width,
            height,
            gaze_away,
        } => {
            let mut rows: Vec<(String, Vec<Behavior>)> = Behavior::ALL
                .iter()
                .filter(|b| gaze_away || **b != Behavior::GazeAway)
                .enumerate()
                .map(|(i, &b)| ((i + 1).to_string(), vec![b; slides]))
                .collect();
            rows.sort_by(|a, b| a.0.cmp(&b.0));
            let mut sc = Scenario::scripted(seed, rows);
            sc.width = width;
            sc.height = height;
            let truth = sc.write_session(&out)?;
            write_jsonl(&out.join("labels.jsonl"), &truth.labels)?;
            eprintln!(
                "wrote {} frames for {} students to {}",
                sc.frame_count(),
                sc.students.len(),
                out.display()
            );
            Ok(())
        }
    }
}

fn bench_scenario(frames: u64, students: usize) -> Scenario {
    let fps_slide = 14 * 30;
    let slides = (frames.div_ceil(fps_slide) as usize).max(1);
    let rows = (0..students)
        .map(|i| ((i + 1).to_string(), vec![Behavior::ALL[i % Behavior::ALL.len()]; slides]))
        .collect();
    Scenario::scripted(1, rows)
}

fn read_pairs(dir: &Path) -> Result<Vec<(GrayFrame, GrayFrame)>> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".a.pgm"))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|a| {
            let b = PathBuf::from(a.to_string_lossy().replace(".a.pgm", ".b.pgm"));
            Ok((read_pgm(&a)?, read_pgm(&b)?))
        })
        .collect()
}

fn summarize(outcome: &SessionOutcome) {
    eprintln!(
        "{} frames, {} segments ({} scored), {} instructor events",
        outcome.frames,
        outcome.segments.len(),
        outcome.scorecards.len(),
        outcome.instructor_events.len()
    );
    for c in &outcome.scorecards {
        let students: Vec<String> = c
            .per_student
            .iter()
            .map(|s| match s.cs {
                Some(v) => format!("{}={v:.0}%", s.id),
                None => format!("{}=N/A", s.id),
            })
            .collect();
        eprintln!("  segment {} [{}..{}]: {}", c.segment, c.start, c.end, students.join(" "));
    }
}
