use std::ffi::{c_char, CString};
use std::ptr;

use engage::service::Engine;
use engage::synth::Scenario;
use engage_ffi::*;

fn last_error() -> String {
    let mut needed = 0usize;
    unsafe { engage_last_error(ptr::null_mut(), 0, &mut needed) };
    let mut buf = vec![0u8; needed];
    assert_eq!(
        unsafe { engage_last_error(buf.as_mut_ptr() as *mut c_char, buf.len(), &mut needed) },
        EngageStatus::Ok
    );
    String::from_utf8(buf[..needed - 1].to_vec()).unwrap()
}

fn drain(engine: *mut EngageEngine) -> Vec<serde_json::Value> {
    let mut out = Vec::new();
    loop {
        let mut needed = 0usize;
        match unsafe { engage_engine_next_event(engine, ptr::null_mut(), 0, &mut needed) } {
            EngageStatus::InsufficientData => return out,
            EngageStatus::BufferTooSmall => {}
            s => panic!("unexpected {s:?}"),
        }
        let mut buf = vec![0u8; needed];
        let s = unsafe { engage_engine_next_event(engine, buf.as_mut_ptr() as *mut c_char, buf.len(), &mut needed) };
        assert_eq!(s, EngageStatus::Ok);
        let text = std::str::from_utf8(&buf[..needed - 1]).unwrap();
        out.push(serde_json::from_str(text).unwrap());
    }
}

fn without_clock(mut v: serde_json::Value) -> serde_json::Value {
    v.as_object_mut().unwrap().remove("wall_ms");
    v
}

#[test]
fn engine_through_c_api_matches_rust_engine() {
    let sc = Scenario::four_behaviors(5, 2);
    let toml = CString::new(sc.config().to_toml()).unwrap();
    let mut config = ptr::null_mut();
    assert_eq!(unsafe { engage_config_from_toml(toml.as_ptr(), &mut config) }, EngageStatus::Ok);
    let n = unsafe { engage_config_participant_count(config) };
    assert_eq!(n, sc.students.len() + 1);

    let mut engine = ptr::null_mut();
    assert_eq!(unsafe { engage_engine_new(config, sc.presentation_stream, &mut engine) }, EngageStatus::Ok);
    unsafe { engage_config_free(config) };

    let mut reference = Engine::new(sc.config(), sc.presentation_stream).unwrap();
    let renderer = sc.renderer().unwrap();
    let mut want = Vec::new();
    let mut got = Vec::new();
    for ts in 0..sc.frame_count() {
        let t = renderer.tick(ts).unwrap();
        unsafe {
            assert_eq!(engage_engine_begin_tick(engine, ts), EngageStatus::Ok);
            if let Some(p) = &t.presentation {
                let s = engage_engine_set_presentation(engine, p.width(), p.height(), p.pixels().as_ptr());
                assert_eq!(s, EngageStatus::Ok);
            }
            for (i, f) in t.screens.iter().enumerate() {
                let s = engage_engine_set_screen(engine, i, f.width(), f.height(), f.pixels().as_ptr());
                assert_eq!(s, EngageStatus::Ok);
            }
            for (i, f) in t.faces.iter().enumerate() {
                let flat: Option<Vec<f64>> = f.landmarks.as_ref().map(|l| l.points().iter().flatten().copied().collect());
                let p = flat.as_ref().map_or(ptr::null(), |v| v.as_ptr());
                assert_eq!(engage_engine_set_face(engine, i, p), EngageStatus::Ok);
            }
            assert_eq!(engage_engine_push(engine, ptr::null_mut()), EngageStatus::Ok);
        }
        got.extend(drain(engine));
        want.extend(reference.push(&t.into_tick(sc.presentation_stream)).unwrap());
    }
    let mut ready = 0;
    assert_eq!(unsafe { engage_engine_finish(engine, &mut ready) }, EngageStatus::Ok);
    got.extend(drain(engine));
    want.extend(reference.finish().unwrap());
    unsafe { engage_engine_free(engine) };

    assert!(!want.is_empty());
    let want: Vec<_> = want.iter().map(|e| without_clock(serde_json::to_value(e).unwrap())).collect();
    let got: Vec<_> = got.into_iter().map(without_clock).collect();
    assert_eq!(got, want);
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut config = ptr::null_mut();
    let bad = CString::new("fps = \"thirty\"").unwrap();
    assert_eq!(unsafe { engage_config_from_toml(bad.as_ptr(), &mut config) }, EngageStatus::ConfigParse);
    assert!(!last_error().is_empty());
    assert!(config.is_null());

    assert_eq!(unsafe { engage_config_from_toml(ptr::null(), &mut config) }, EngageStatus::NullPointer);
    assert!(last_error().contains("toml"));

    let sc = Scenario::four_behaviors(5, 1);
    let toml = CString::new(sc.config().to_toml()).unwrap();
    let mut engine = ptr::null_mut();
    unsafe {
        assert_eq!(engage_config_from_toml(toml.as_ptr(), &mut config), EngageStatus::Ok);
        assert_eq!(last_error(), "");
        assert_eq!(engage_engine_new(config, true, &mut engine), EngageStatus::Ok);
        engage_config_free(config);

        assert_eq!(engage_engine_push(engine, ptr::null_mut()), EngageStatus::InvalidArgument);
        assert!(last_error().contains("begin_tick"));

        engage_engine_begin_tick(engine, 0);
        let px = [0u8; 12];
        assert_eq!(engage_engine_set_screen(engine, 99, 4, 3, px.as_ptr()), EngageStatus::InvalidArgument);
        assert_eq!(engage_engine_set_screen(engine, 0, 4, 3, ptr::null()), EngageStatus::NullPointer);

        let cmd = CString::new(r#"{"mode":"manual"}"#).unwrap();
        assert_eq!(engage_engine_command(engine, cmd.as_ptr()), EngageStatus::CommandRejected);
        assert!(last_error().contains("slice"));
        let cmd = CString::new(r#"{"mode":"manual","slice":5}"#).unwrap();
        assert_eq!(engage_engine_command(engine, cmd.as_ptr()), EngageStatus::Ok);

        let mut needed = 0;
        assert_eq!(
            engage_engine_next_event(engine, ptr::null_mut(), 0, &mut needed),
            EngageStatus::InsufficientData
        );
        assert_eq!(needed, 0);
        engage_engine_free(engine);
        engage_engine_free(ptr::null_mut());
    }
}

#[test]
fn helpers_match_the_library() {
    let a = [10u64, 0, 5, 7];
    let b = [3u64, 4, 5, 0];
    let mut d = -1.0;
    assert_eq!(unsafe { engage_chi_square(a.as_ptr(), b.as_ptr(), 4, &mut d) }, EngageStatus::Ok);
    let h = |c: &[u64]| engage::presence::HistogramDescriptor {
        counts: c.to_vec(),
        total: c.iter().sum(),
    };
    let want = engage::presence::chi_square_distance(&h(&a), &h(&b), engage::presence::ChiSquareVariant::Symmetric).unwrap();
    assert_eq!(d, want);

    let x = [1.0, 2.0, 3.0, 4.0];
    let y = [2.0, 4.0, 6.0, 8.0, 10.0];
    let mut r = EngageTTest::default();
    assert_eq!(unsafe { engage_t_test(x.as_ptr(), 4, y.as_ptr(), 5, &mut r) }, EngageStatus::Ok);
    let want = engage::gaze::t_test_equal_mean(&x, &y).unwrap();
    assert_eq!((r.t, r.df, r.p), (want.t, want.df, want.p));
    assert_eq!(unsafe { engage_t_test(x.as_ptr(), 1, y.as_ptr(), 1, &mut r) }, EngageStatus::InsufficientData);

    assert_eq!(engage_f_beta(1.0, 1.0, 2.0), 1.0);
    assert_eq!(engage_f_beta(0.0, 0.0, 2.0), 0.0);
    assert_eq!(engage_grayscale(255, 255, 255), 255);
    assert_eq!(engage_grayscale(255, 0, 0), 76);
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/engage.h");
    let text = std::fs::read_to_string(header).unwrap();
    for f in ["engage_engine_new", "engage_engine_push", "engage_last_error", "ENGAGE_STATUS_BUFFER_TOO_SMALL"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    match std::process::Command::new(&cc).args(["-fsyntax-only", "-Wall", "-Werror", "-xc", header]).status() {
        Ok(s) => assert!(s.success(), "{cc} rejected the header"),
        Err(_) => eprintln!("no C compiler found; header syntax not checked"),
    }
}
