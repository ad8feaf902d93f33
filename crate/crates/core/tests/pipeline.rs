use engage::config::SegmentMode;
use engage::eval::{evaluate, predictions_from_scorecards};
use engage::ingest::open_session;
use engage::service::{analyze_streams, run_live, LiveOptions};
use engage::synth::Scenario;

#[test]
fn four_behavior_session_offline_and_live() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = Scenario::four_behaviors(7, 3);
    let truth = scenario.write_session(dir.path()).unwrap();

    let (config, streams) = open_session(dir.path()).unwrap();
    let offline = analyze_streams(&config, SegmentMode::Automatic, streams).unwrap();
    let preds = predictions_from_scorecards(&offline.scorecards, 50.0);
    let report = evaluate(&preds, &truth.labels).unwrap();

    let (config, streams) = open_session(dir.path()).unwrap();
    let live = run_live(config, streams, LiveOptions::default()).unwrap();
    let a: Vec<_> = offline.scorecards.iter().map(|c| c.to_json_line()).collect();
    let b: Vec<_> = live.outcome.scorecards.iter().map(|c| c.to_json_line()).collect();
    assert_eq!(a, b);
    assert_eq!(report.overall.f2, Some(1.0));
}
