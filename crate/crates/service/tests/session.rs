use std::io::Write;
use std::net::{TcpListener, TcpStream};
use std::time::Duration;

use base64::Engine;
use nalgebra::Vector3;
use splatsim::config::PipelineConfig;
use splatsim::fixtures;
use splatsim::ply::save_scene;
use splatsim::scene::Scene;
use splatsim_service::protocol::{read_message, write_message};
use splatsim_service::{spawn_connection, FrameMessage, Phase, Request, Response, Session};

fn small_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.sim.grid_resolution = 16;
    cfg.sim.substeps = 20;
    cfg.service.render_width = 48;
    cfg.service.render_height = 40;
    cfg.service.max_steps_per_sec = 200.0;
    cfg
}

fn block() -> Scene {
    fixtures::padded_block(Vector3::new(-0.2, -0.2, 2.0), [6, 6, 4], 0.08)
}

fn session() -> Session {
    Session::with_scene(small_config(), block()).unwrap()
}

fn cmd(s: &mut Session, json: &str) -> Response {
    s.handle_text(json.as_bytes())
}

#[test]
fn load_then_get_state() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("block.ply");
    save_scene(&block(), &path).unwrap();
    let mut s = Session::new(small_config());
    let r = cmd(&mut s, r#"{"cmd":"get_state"}"#);
    assert!(r.ok && r.phase.is_none());
    let load = format!(r#"{{"cmd":"load","scene_path":{}}}"#, serde_json::to_string(&path).unwrap());
    assert!(cmd(&mut s, &load).ok);
    let r = cmd(&mut s, r#"{"cmd":"get_state"}"#);
    assert_eq!(r.phase, Some(Phase::Loaded));
    assert_eq!(r.step, Some(0));
    assert_eq!(r.gaussian_count, Some(144));
    assert_eq!(r.steps_per_sec, Some(0.0));
    assert!(r.center_depth.is_some());
}

#[test]
fn missing_scene_file_is_an_error() {
    let mut s = Session::new(small_config());
    let r = cmd(&mut s, r#"{"cmd":"load","scene_path":"/nonexistent/x.ply"}"#);
    assert!(!r.ok);
    assert!(r.error.is_some());
    assert!(!cmd(&mut s, r#"{"cmd":"start"}"#).ok);
}

#[test]
fn rest_scene_streams_identical_frames() {
    let mut s = session();
    assert!(cmd(&mut s, r#"{"cmd":"start"}"#).ok);
    let frames: Vec<FrameMessage> = (0..3).map(|_| s.advance().unwrap().unwrap().encode()).collect();
    assert_eq!(frames.iter().map(|f| f.frame.step).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert_eq!(frames[0].frame.image_b64, frames[1].frame.image_b64);
    assert_eq!(frames[1].frame.image_b64, frames[2].frame.image_b64);
}

#[test]
fn reset_is_exact() {
    let fresh = session();
    let mut s = session();
    cmd(&mut s, r#"{"cmd":"start"}"#);
    cmd(&mut s, r#"{"cmd":"apply_force","center":[0,0,2],"radius":0.2,"force":[0,0,50],"duration_steps":2}"#);
    for _ in 0..3 {
        s.advance().unwrap();
    }
    assert_ne!(s.simulation().unwrap().particles, fresh.simulation().unwrap().particles);
    assert!(cmd(&mut s, r#"{"cmd":"reset"}"#).ok);
    assert_eq!(s.simulation().unwrap().particles, fresh.simulation().unwrap().particles);
    let mut a = fresh;
    assert_eq!(cmd(&mut s, r#"{"cmd":"get_state"}"#), cmd(&mut a, r#"{"cmd":"get_state"}"#));
    assert_eq!(s.snapshot().unwrap().encode(), a.snapshot().unwrap().encode());
}

#[test]
fn wrong_phase_is_rejected_with_current_phase() {
    let mut s = session();
    let r = cmd(&mut s, r#"{"cmd":"pause"}"#);
    assert!(!r.ok);
    assert_eq!(r.phase, Some(Phase::Loaded));
    assert!(r.error.unwrap().contains("loaded"));
    assert!(cmd(&mut s, r#"{"cmd":"start"}"#).ok);
    let r = cmd(&mut s, r#"{"cmd":"start"}"#);
    assert!(!r.ok);
    assert_eq!(r.phase, Some(Phase::Running));
    let r = cmd(&mut s, r#"{"cmd":"load","scene_path":"x.ply"}"#);
    assert!(!r.ok && r.phase == Some(Phase::Running));
    assert!(cmd(&mut s, r#"{"cmd":"pause"}"#).ok);
    assert_eq!(s.phase(), Some(Phase::Paused));
}

#[test]
fn malformed_messages_leave_the_session_untouched() {
    let mut s = session();
    cmd(&mut s, r#"{"cmd":"start"}"#);
    s.advance().unwrap();
    let before = s.simulation().unwrap().particles.clone();
    for bad in ["not json", r#"{"cmd":"fly"}"#, r#"{"cmd":"set_material","E":"x","nu":0.1}"#, r#"{"nocmd":1}"#] {
        let r = cmd(&mut s, bad);
        assert!(!r.ok, "{bad}");
        assert!(r.error.is_some());
        assert_eq!(r.phase, Some(Phase::Running));
    }
    assert_eq!(s.simulation().unwrap().particles, before);
    assert_eq!(s.step(), 1);
}

#[test]
fn forces_wait_until_running() {
    let mut s = session();
    let r = cmd(&mut s, r#"{"cmd":"apply_force","center":[0,0,2],"radius":0.2,"force":[0,0,50],"duration_steps":1}"#);
    assert!(r.ok && r.warning.is_none());
    assert!(s.advance().unwrap().is_none());
    assert_eq!(cmd(&mut s, r#"{"cmd":"get_state"}"#).pending_forces, Some(1));
    let rest = s.simulation().unwrap().particles.x.clone();
    cmd(&mut s, r#"{"cmd":"start"}"#);
    s.advance().unwrap();
    assert_ne!(s.simulation().unwrap().particles.x, rest);
    assert_eq!(cmd(&mut s, r#"{"cmd":"get_state"}"#).pending_forces, Some(0));
}

#[test]
fn force_on_empty_region_warns() {
    let mut s = session();
    let r = cmd(&mut s, r#"{"cmd":"apply_force","center":[5,5,5],"radius":0.1,"force":[0,0,50],"duration_steps":1}"#);
    assert!(r.ok);
    assert!(r.warning.is_some());
    assert_eq!(cmd(&mut s, r#"{"cmd":"get_state"}"#).pending_forces, Some(0));
}

#[test]
fn material_round_trips_and_is_validated() {
    let mut s = session();
    assert!(cmd(&mut s, r#"{"cmd":"set_material","E":1500.0,"nu":0.3}"#).ok);
    let m = cmd(&mut s, r#"{"cmd":"get_state"}"#).material.unwrap();
    assert_eq!((m.youngs_modulus, m.nu), (1500.0, 0.3));
    assert!(!cmd(&mut s, r#"{"cmd":"set_material","E":1500.0,"nu":0.5}"#).ok);
    assert!(!cmd(&mut s, r#"{"cmd":"set_material","E":-1.0,"nu":0.2}"#).ok);
    assert_eq!(cmd(&mut s, r#"{"cmd":"get_state"}"#).material.unwrap().youngs_modulus, 1500.0);
}

#[test]
fn set_camera_changes_resolution() {
    let mut s = session();
    assert!(s.handle(Request::SetCamera { camera: None, width: Some(24), height: Some(20) }).ok);
    let cam = cmd(&mut s, r#"{"cmd":"get_state"}"#).camera.unwrap();
    assert_eq!((cam.width, cam.height), (24, 20));
    let png = base64::engine::general_purpose::STANDARD.decode(s.snapshot().unwrap().encode().frame.image_b64).unwrap();
    assert_eq!(&png[1..4], b"PNG");
    assert!(!cmd(&mut s, r#"{"cmd":"set_camera","width":0}"#).ok);
}

fn request(stream: &mut TcpStream, json: &str) {
    write_message(stream, json.as_bytes()).unwrap();
}

fn next(stream: &mut TcpStream) -> serde_json::Value {
    serde_json::from_slice(&read_message(stream).unwrap().unwrap()).unwrap()
}

#[test]
fn socket_session_streams_frames() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        spawn_connection(stream, session()).join().unwrap();
    });
    let mut c = TcpStream::connect(addr).unwrap();
    c.set_read_timeout(Some(Duration::from_secs(60))).unwrap();

    request(&mut c, r#"{"cmd":"get_state"}"#);
    let r = next(&mut c);
    assert_eq!(r["ok"], true);
    assert_eq!(r["phase"], "loaded");
    assert_eq!(r["gaussian_count"], 144);

    request(&mut c, "{broken");
    let r = next(&mut c);
    assert_eq!(r["ok"], false);

    request(&mut c, r#"{"cmd":"start"}"#);
    let mut steps = Vec::new();
    while steps.len() < 4 {
        let m = next(&mut c);
        if let Some(f) = m.get("frame") {
            assert!(f["image_b64"].as_str().unwrap().len() > 10);
            assert!(f["ms"].as_f64().unwrap() >= 0.0);
            steps.push(f["step"].as_u64().unwrap());
        } else {
            assert_eq!(m["ok"], true, "{m}");
        }
    }
    assert!(steps.windows(2).all(|w| w[0] < w[1]), "{steps:?}");

    request(&mut c, r#"{"cmd":"pause"}"#);
    loop {
        let m = next(&mut c);
        if m.get("cmd").is_some_and(|c| c == "pause") {
            assert_eq!(m["ok"], true);
            assert_eq!(m["phase"], "paused");
            break;
        }
    }
    c.flush().unwrap();
    drop(c);
    server.join().unwrap();
}
