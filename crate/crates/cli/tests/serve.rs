use std::net::TcpStream;
use std::time::{Duration, Instant};

use adaptnet::experiment::ExperimentConfig;
use adaptnet_cli::protocol::{decode, Command, Inbound};
use adaptnet_cli::serve::{spawn, ServeOptions, ServerHandle, Session};
use serde_json::{json, Value};
use tungstenite::protocol::frame::coding::CloseCode;
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

type Ws = WebSocket<MaybeTlsStream<TcpStream>>;

fn session() -> Session {
    let cfg = ExperimentConfig::default();
    let base = cfg.fresh_policy().unwrap();
    let mut a = cfg.adapted_policy(&base).unwrap();
    let names: Vec<String> = a.params.names().filter(|n| !n.starts_with("base.")).cloned().collect();
    for n in names {
        let t = a.params.get_mut(&n).unwrap();
        t.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = 0.01 * ((i % 7) as f64 - 3.0));
    }
    let b = a.clone();
    Session::new(base, vec![("a".into(), a), ("b".into(), b)], &cfg.env().unwrap(), 1.0, 7).unwrap()
}

fn serve(realtime: bool, max_ticks: Option<u64>) -> ServerHandle {
    spawn(
        session(),
        ServeOptions {
            bind: "127.0.0.1:0".into(),
            max_ticks,
            realtime,
        },
    )
    .unwrap()
}

fn connect(h: &ServerHandle) -> Ws {
    let (ws, _) = tungstenite::connect(format!("ws://{}", h.addr)).unwrap();
    if let MaybeTlsStream::Plain(s) = ws.get_ref() {
        s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    }
    ws
}

fn send(ws: &mut Ws, v: Value) {
    ws.send(Message::text(v.to_string())).unwrap();
}

/// Next text message whose `type` is `kind`.
fn next(ws: &mut Ws, kind: &str) -> Value {
    let deadline = Instant::now() + Duration::from_secs(5);
    while Instant::now() < deadline {
        if let Message::Text(t) = ws.read().unwrap() {
            let v: Value = serde_json::from_str(t.as_str()).unwrap();
            if v["type"] == kind {
                return v;
            }
        }
    }
    panic!("no `{kind}` message");
}

fn close_code(ws: &mut Ws) -> CloseCode {
    loop {
        match ws.read() {
            Ok(Message::Close(Some(f))) => return f.code,
            Ok(Message::Close(None)) => panic!("close without a code"),
            Ok(_) => {}
            Err(e) => panic!("connection dropped without a close frame: {e}"),
        }
    }
}

#[test]
fn decode_classifies_messages() {
    assert_eq!(
        decode(r#"{"type":"set_alpha","value":0.25}"#),
        Inbound::Command(Command::SetAlpha { value: 0.25 })
    );
    assert_eq!(
        decode(r#"{"type":"select_adapters","names":["a"]}"#),
        Inbound::Command(Command::SelectAdapters {
            names: vec!["a".into()],
            blend_alpha: 0.5
        })
    );
    let code = |s: &str| match decode(s) {
        Inbound::Rejected { code, .. } => code,
        other => panic!("{other:?}"),
    };
    assert_eq!(code(r#"{"type":"dance"}"#), "unknown_type");
    assert_eq!(code(r#"{"value":1}"#), "missing_type");
    assert_eq!(code(r#"{"type":"set_alpha"}"#), "bad_fields");
    assert_eq!(code(r#"{"type":"set_alpha","value":0.5,"extra":1}"#), "bad_fields");
    assert_eq!(code(r#"{"type":"set_alpha","value":1.5}"#), "bad_value");
    assert_eq!(code(r#"{"type":"set_target","dir":0.5,"speed":1}"#), "bad_value");
    assert_eq!(code(r#"{"type":"perturb","force":10,"duration":0}"#), "bad_value");
    assert!(matches!(decode("{nope"), Inbound::Malformed(_)));
}

#[test]
fn headless_session_steps_and_applies_commands() {
    let mut s = session();
    let f0 = s.frame();
    assert_eq!(f0.active_adapters, vec!["a".to_string()]);
    assert_eq!(f0.bodies.len(), adaptnet::physics::Morphology::biped().links.len());
    for _ in 0..10 {
        s.step().unwrap();
    }
    s.apply(Command::SetAlpha { value: 0.3 }).unwrap();
    let f = s.step().unwrap();
    assert_eq!((f.tick, f.alpha), (11, 0.3));

    s.apply(Command::SetTarget { dir: -1.0, speed: 0.5 }).unwrap();
    let f = s.step().unwrap();
    assert_eq!((f.goal.dir, f.goal.speed), (-1.0, 0.5));

    s.apply(Command::Pause).unwrap();
    let a = s.step().unwrap();
    let b = s.step().unwrap();
    assert!(b.paused);
    assert_eq!(a.bodies, b.bodies);
    assert_eq!(b.tick, a.tick + 1);
    s.apply(Command::Resume).unwrap();
    assert_ne!(s.step().unwrap().bodies, b.bodies);

    s.apply(Command::SelectAdapters {
        names: vec!["a".into(), "b".into()],
        blend_alpha: 0.25,
    })
    .unwrap();
    let f = s.step().unwrap();
    assert_eq!(f.active_adapters.len(), 2);
    assert_eq!(f.blend_alpha, 0.25);
    assert!(s
        .apply(Command::SelectAdapters {
            names: vec!["zzz".into()],
            blend_alpha: 0.5
        })
        .is_err());
    assert_eq!(s.frame().active_adapters.len(), 2);

    s.apply(Command::Reset).unwrap();
    assert_eq!(s.frame().t, 0.0);
}

#[test]
fn server_runs_without_clients() {
    let h = serve(false, Some(40));
    let s = h.wait().unwrap();
    assert_eq!(s.frame().tick, 40);
}

#[test]
fn bad_messages_get_error_frames_and_keep_the_connection() {
    let h = serve(true, None);
    let mut ws = connect(&h);
    let hello = next(&mut ws, "hello");
    assert_eq!(hello["adapters"], json!(["a", "b"]));
    next(&mut ws, "frame");

    send(&mut ws, json!({"type": "dance"}));
    assert_eq!(next(&mut ws, "error")["code"], "unknown_type");
    send(&mut ws, json!({"type": "select_adapters", "names": ["nope"]}));
    assert_eq!(next(&mut ws, "error")["code"], "unknown_adapter");
    send(&mut ws, json!({"type": "set_alpha", "value": 7}));
    assert_eq!(next(&mut ws, "error")["code"], "bad_value");

    // still served and still listening
    send(&mut ws, json!({"type": "set_alpha", "value": 0.4}));
    let deadline = Instant::now() + Duration::from_secs(5);
    loop {
        let f = next(&mut ws, "frame");
        if f["alpha"] == json!(0.4) {
            break;
        }
        assert!(Instant::now() < deadline);
    }
    h.shutdown().unwrap();
}

#[test]
fn malformed_json_and_binary_close_the_connection() {
    let h = serve(true, None);
    let mut ws = connect(&h);
    next(&mut ws, "hello");
    ws.send(Message::text("{not json")).unwrap();
    assert_eq!(close_code(&mut ws), CloseCode::Invalid);

    let mut ws = connect(&h);
    next(&mut ws, "hello");
    ws.send(Message::binary(vec![1u8, 2, 3])).unwrap();
    assert_eq!(close_code(&mut ws), CloseCode::Unsupported);
    h.shutdown().unwrap();
}

#[test]
fn alpha_change_shows_in_the_next_ticks() {
    let h = serve(true, None);
    let mut ws = connect(&h);
    next(&mut ws, "hello");
    for value in [0.2, 0.9, 0.0] {
        let before = next(&mut ws, "frame")["tick"].as_u64().unwrap();
        send(&mut ws, json!({"type": "set_alpha", "value": value}));
        let applied = loop {
            let f = next(&mut ws, "frame");
            if f["alpha"] == json!(value) {
                break f["tick"].as_u64().unwrap();
            }
        };
        // one tick to pick it up, one of slack for the frame in flight
        assert!(applied <= before + 2, "sent after tick {before}, applied at {applied}");
    }
    h.shutdown().unwrap();
}

#[test]
fn command_floods_are_coalesced_to_the_tick_rate() {
    let h = serve(true, None);
    let mut ws = connect(&h);
    next(&mut ws, "hello");
    let t0 = h.ticks();
    let start = Instant::now();
    for k in 0..100 {
        send(&mut ws, json!({"type": "set_alpha", "value": (k % 10) as f64 / 10.0}));
        std::thread::sleep(Duration::from_millis(10));
    }
    send(&mut ws, json!({"type": "set_alpha", "value": 0.55}));
    loop {
        if next(&mut ws, "frame")["alpha"] == json!(0.55) {
            break;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ticks = h.ticks() - t0;
    let s = h.shutdown().unwrap();
    let applied = s.applied["alpha"];
    assert!(applied <= ticks + 1, "{applied} applied over {ticks} ticks");
    assert!((applied as f64) / secs <= 31.0, "{applied} in {secs:.2}s");
    assert_eq!(s.frame().alpha, 0.55);
}
