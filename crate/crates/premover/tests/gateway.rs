use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::sync::Arc;
use std::time::Duration;

use jsonschema::JSONSchema;
use premover::config::RunConfig;
use premover::gateway::{replay, Gateway, Server, Transcript, SCHEMA};
use premover_core::numerics::ParamSet;
use serde_json::{json, Value};

fn gateway() -> Gateway {
    let cfg = RunConfig::default();
    let params = ParamSet::init(cfg.head_dims(), 7);
    Gateway::new(cfg, Some(params)).unwrap()
}

fn schema() -> JSONSchema {
    let v: Value = serde_json::from_str(SCHEMA).unwrap();
    JSONSchema::compile(&v).unwrap()
}

fn assert_valid(s: &JSONSchema, v: &Value) {
    if let Err(errors) = s.validate(v) {
        let msgs: Vec<String> = errors.map(|e| format!("{} at {}", e, e.instance_path)).collect();
        panic!("{v} fails the schema: {msgs:?}");
    }
}

fn instruction(scene: &Value) -> String {
    let words: Vec<&str> = scene["scene"]["instruction"]
        .as_array()
        .unwrap()
        .iter()
        .map(|w| w.as_str().unwrap())
        .collect();
    words.join(" ")
}

fn ticks(events: &[Value]) -> Vec<&Value> {
    events.iter().filter(|e| e["type"] == "tick").collect()
}

fn committed_is_monotone(ticks: &[&Value]) -> bool {
    ticks
        .windows(2)
        .all(|w| w[0]["committed"] == false || w[1]["committed"] == true)
}

#[test]
fn recorded_session_of_500_ticks_conforms() {
    let gw = gateway();
    let schema = schema();
    let mut s = gw.session();
    let mut recorded: Vec<Value> = Vec::new();
    let mut tick_count = 0;
    let protocols = ["premover", "naive", "full_prompt"];
    let suites = ["spatial", "object", "goal", "long"];
    let mut episode = 0;
    while tick_count < 500 {
        let reset = json!({
            "type": "reset",
            "suite": suites[episode % 4],
            "task": episode % 10,
            "episode_seed": 20 + episode,
            "protocol": protocols[episode % 3],
            "alpha": 0.3,
        });
        assert_valid(&schema, &reset);
        let scene = s.handle(&reset.to_string());
        assert_eq!(scene.len(), 1);
        assert_valid(&schema, &scene[0]);
        let text = format!("{}\n", instruction(&scene[0]));
        let mut chars = text.chars();
        let mut episode_ticks: Vec<Value> = Vec::new();
        for t in 0..400 {
            if t % 3 == 0 {
                if let Some(c) = chars.next() {
                    let key = json!({ "type": "key", "char": c.to_string() });
                    assert_valid(&schema, &key);
                    assert!(s.handle(&key.to_string()).is_empty());
                }
            }
            let Some(e) = s.tick() else { break };
            assert_valid(&schema, &e);
            episode_ticks.push(e);
        }
        let refs: Vec<&Value> = episode_ticks.iter().collect();
        assert!(committed_is_monotone(&refs));
        let steps: Vec<u64> = refs.iter().map(|t| t["step"].as_u64().unwrap()).collect();
        assert!(steps.iter().enumerate().all(|(i, &s)| s == i as u64));
        tick_count += episode_ticks.len();
        recorded.push(scene[0].clone());
        recorded.extend(episode_ticks);
        episode += 1;
    }
    assert!(ticks(&recorded).len() >= 500);
    for e in &recorded {
        assert_valid(&schema, e);
    }
}

#[test]
fn tick_fields_have_the_published_shape() {
    let gw = gateway();
    let mut s = gw.session();
    s.handle(&json!({"type": "reset", "suite": "goal", "episode_seed": 3, "protocol": "premover"}).to_string());
    for c in "put the".chars() {
        s.handle(&json!({"type": "key", "char": c.to_string()}).to_string());
    }
    let mut last = Value::Null;
    for _ in 0..3 {
        last = s.tick().unwrap();
    }
    let n = 2 * gw.cfg.patches_per_view();
    let map = last["focus_map"].as_array().unwrap();
    assert_eq!(map.len(), n);
    for v in map {
        let x = v.as_f64().unwrap();
        assert!((0.0..=1.0).contains(&x));
        assert_eq!((x * 1e4).round() / 1e4, x);
    }
    assert_eq!(last["prefix"], "put");
    assert_eq!(last["prefix_len"], 1);
    assert!(last["r"].is_number());

    let schema = schema();
    assert_valid(&schema, &last);
    let mut missing = last.clone();
    missing.as_object_mut().unwrap().remove("committed");
    assert!(!schema.is_valid(&missing));
    let mut wrong = last.clone();
    wrong["status"] = json!("flying");
    assert!(!schema.is_valid(&wrong));
}

#[test]
fn naive_commits_on_the_first_tick() {
    let gw = gateway();
    let mut s = gw.session();
    s.handle(&json!({"type": "reset", "suite": "spatial", "episode_seed": 1, "protocol": "naive"}).to_string());
    let t = s.tick().unwrap();
    assert_eq!(t["committed"], true);
    assert_eq!(t["commit_step"], 0);
}

#[test]
fn premover_without_keys_never_moves() {
    let gw = gateway();
    let mut s = gw.session();
    s.handle(&json!({"type": "reset", "suite": "object", "episode_seed": 2, "protocol": "premover"}).to_string());
    let first = s.tick().unwrap();
    for _ in 0..200 {
        let t = s.tick().unwrap();
        assert_eq!(t["prefix_len"], 0);
        assert_eq!(t["committed"], false);
        assert!(t["r"].is_null());
        assert_eq!(t["effector"], first["effector"]);
        assert_eq!(t["status"], "running");
    }
}

#[test]
fn typing_latches_exactly_once() {
    let gw = gateway();
    let mut s = gw.session();
    let scene = s.handle(
        &json!({"type": "reset", "suite": "long", "task": 4, "episode_seed": 5, "protocol": "premover", "tau": 0.0})
            .to_string(),
    );
    let text = format!("{}\n", instruction(&scene[0]));
    let events = replay(
        &gw,
        &json!({"type": "reset", "suite": "long", "task": 4, "episode_seed": 5, "protocol": "premover", "tau": 0.0}),
        &Transcript::typed(&text, 0, 4),
        1000,
    );
    let ts = ticks(&events);
    let commits: Vec<u64> = ts.iter().filter_map(|t| t["commit_step"].as_u64()).collect();
    assert!(!commits.is_empty());
    assert!(commits.iter().all(|&c| c == commits[0]));
    let first = ts.iter().position(|t| t["committed"] == true).unwrap();
    assert_eq!(ts[first]["step"].as_u64(), Some(commits[0]));
    assert!(ts[first]["prefix_len"].as_u64().unwrap() >= 1);
    assert!(committed_is_monotone(&ts));
}

#[test]
fn full_prompt_waits_for_enter() {
    let gw = gateway();
    let reset = json!({"type": "reset", "suite": "goal", "task": 2, "episode_seed": 9, "protocol": "full_prompt"});
    let mut s = gw.session();
    let text = instruction(&s.handle(&reset.to_string())[0]);
    let without = replay(&gw, &reset, &Transcript::typed(&text, 0, 2), 300);
    assert!(ticks(&without).iter().all(|t| t["committed"] == false));
    let with = replay(&gw, &reset, &Transcript::typed(&format!("{text}\n"), 0, 2), 300);
    let enter_tick = 2 * text.chars().count();
    let first = ticks(&with).into_iter().find(|t| t["committed"] == true).unwrap();
    assert_eq!(first["step"].as_u64(), Some(enter_tick as u64));
    assert_eq!(first["prefix"], text.as_str());
}

#[test]
fn replay_is_bit_identical() {
    let gw = gateway();
    let reset = json!({"type": "reset", "suite": "spatial", "task": 3, "episode_seed": 11, "protocol": "premover", "alpha": 0.2});
    let tr = Transcript::typed("pick up the red block near the bowl\n", 5, 3);
    let a = replay(&gw, &reset, &tr, 600);
    let b = replay(&gateway(), &reset, &tr, 600);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn bad_messages_become_error_events() {
    let gw = gateway();
    let schema = schema();
    let mut s = gw.session();
    let cases = [
        ("{not json", "malformed"),
        ("[1, 2]", "malformed"),
        (r#"{"type": "dance"}"#, "unknown_type"),
        (r#"{"type": "key", "char": "a"}"#, "no_session"),
        (r#"{"type": "reset", "suite": "goal"}"#, "invalid_message"),
        (
            r#"{"type": "reset", "suite": "moon", "episode_seed": 1, "protocol": "naive"}"#,
            "invalid_message",
        ),
        (
            r#"{"type": "reset", "suite": "goal", "episode_seed": 1, "protocol": "naive", "alpha": 2}"#,
            "invalid_message",
        ),
        (r#"{"type": "set_speed", "ticks_per_second": 0}"#, "invalid_message"),
        (r#"{"type": "revise", "prefix": "x"}"#, "unsupported"),
    ];
    for (line, code) in cases {
        let out = s.handle(line);
        assert_eq!(out.len(), 1, "{line}");
        assert_eq!(out[0]["type"], "error", "{line}");
        assert_eq!(out[0]["code"], code, "{line}");
        assert_valid(&schema, &out[0]);
    }
    s.handle(r#"{"type": "reset", "suite": "goal", "episode_seed": 1, "protocol": "naive"}"#);
    assert_eq!(
        s.handle(r#"{"type": "key", "char": "ab"}"#)[0]["code"],
        "invalid_message"
    );
    assert_eq!(
        s.handle(r#"{"type": "key", "char": "\u0008"}"#)[0]["code"],
        "unsupported"
    );
    let ack = s.handle(r#"{"type": "pause"}"#);
    assert_eq!(ack[0]["type"], "ack");
    assert_valid(&schema, &ack[0]);
    assert!(s.tick().is_none());
    s.handle(r#"{"type": "resume"}"#);
    assert!(s.tick().is_some());
}

#[test]
fn premover_needs_a_checkpoint() {
    let gw = Gateway::new(RunConfig::default(), None).unwrap();
    let mut s = gw.session();
    let out = s.handle(r#"{"type": "reset", "suite": "goal", "episode_seed": 1, "protocol": "premover"}"#);
    assert_eq!(out[0]["code"], "no_checkpoint");
    let ok = s.handle(r#"{"type": "reset", "suite": "goal", "episode_seed": 1, "protocol": "naive"}"#);
    assert_eq!(ok[0]["type"], "scene");
}

fn http_get(addr: std::net::SocketAddr, path: &str) -> (String, String) {
    let mut c = TcpStream::connect(addr).unwrap();
    write!(c, "GET {path} HTTP/1.1\r\nHost: x\r\n\r\n").unwrap();
    let mut resp = String::new();
    c.read_to_string(&mut resp).unwrap();
    let (head, body) = resp.split_once("\r\n\r\n").unwrap();
    (head.lines().next().unwrap().to_string(), body.to_string())
}

#[test]
fn tcp_server_speaks_ndjson_and_http() {
    let server = Server::bind("127.0.0.1:0", Arc::new(gateway())).unwrap();
    let addr = server.local_addr().unwrap();
    std::thread::spawn(move || server.run());

    let (status, body) = http_get(addr, "/health");
    assert!(status.contains("200"));
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap(), json!({"status": "ok"}));
    let (status, body) = http_get(addr, "/schema");
    assert!(status.contains("200"));
    assert_eq!(body, SCHEMA);
    assert!(http_get(addr, "/nope").0.contains("404"));

    let schema = schema();
    let mut c = TcpStream::connect(addr).unwrap();
    c.set_read_timeout(Some(Duration::from_secs(30))).unwrap();
    let mut reader = BufReader::new(c.try_clone().unwrap());
    writeln!(c, r#"{{"type": "set_speed", "ticks_per_second": 2000}}"#).unwrap();
    writeln!(
        c,
        r#"{{"type": "reset", "suite": "spatial", "episode_seed": 4, "protocol": "naive"}}"#
    )
    .unwrap();
    let mut events = Vec::new();
    loop {
        let mut line = String::new();
        assert!(reader.read_line(&mut line).unwrap() > 0);
        let v: Value = serde_json::from_str(&line).unwrap();
        assert_valid(&schema, &v);
        let done = v["type"] == "tick" && v["status"] != "running";
        events.push(v);
        if done || events.len() > 5000 {
            break;
        }
    }
    assert_eq!(events[0]["type"], "ack");
    assert_eq!(events[1]["type"], "scene");
    let ts = ticks(&events);
    assert!(ts.len() > 1);
    assert!(committed_is_monotone(&ts));
    assert!(ts.iter().enumerate().all(|(i, t)| t["step"] == i as u64));
}
