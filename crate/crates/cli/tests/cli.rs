use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use cogsearch_core::catalog::load_index;
use cogsearch_core::engine::{check_stream, EventBody, TurnEvent};
use cogsearch_core::executor::TaskPayload;

const BIN: &str = env!("CARGO_BIN_EXE_cogsearch");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("COGSEARCH_INDEX")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    data: PathBuf,
    index: PathBuf,
    cases: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let index = dir.path().join("idx");
    let cases = dir.path().join("cases.jsonl");
    let o = run(&[
        "synth",
        "--products",
        "400",
        "--seed",
        "3",
        "--out",
        s(&data),
        "--cases",
        s(&cases),
        "--simple",
        "10",
        "--complex",
        "5",
        "--consultative",
        "5",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&[
        "ingest",
        "--products",
        s(&data.join("products.jsonl")),
        "--reviews",
        s(&data.join("reviews.jsonl")),
        "--webdocs",
        s(&data.join("webdocs.jsonl")),
        "--out",
        s(&index),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    Fixture {
        _dir: dir,
        data,
        index,
        cases,
    }
}

#[test]
fn ingest_counts_match_lines_and_rejects_duplicates() {
    let f = fixture();
    let products = f.data.join("products.jsonl");
    let o = run(&[
        "ingest",
        "--products",
        s(&products),
        "--out",
        s(&f.index.with_extension("2")),
        "--json",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let lines = std::fs::read_to_string(&products).unwrap().lines().count();
    assert_eq!(report["products"]["accepted"], lines);

    let dup = f.data.join("dup.jsonl");
    let body = std::fs::read_to_string(&products).unwrap();
    let first = body.lines().next().unwrap();
    std::fs::write(&dup, format!("{body}{first}\n")).unwrap();
    let o = run(&[
        "ingest",
        "--products",
        s(&dup),
        "--out",
        s(&f.index.with_extension("3")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!f.index.with_extension("3").exists());
    let o = run(&[
        "ingest",
        "--products",
        s(&dup),
        "--out",
        s(&f.index.with_extension("3")),
        "--lenient",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("duplicate id"));
}

#[test]
fn query_json_is_a_valid_turn_stream() {
    let f = fixture();
    let o = run(&[
        "query",
        "--index",
        s(&f.index),
        "--json",
        "best tents for travel",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let events: Vec<TurnEvent> = String::from_utf8(o.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    check_stream(&events).unwrap();
    assert!(events
        .iter()
        .any(|e| matches!(e.body, EventBody::Recommendation(_))));

    let echo = run(&[
        "query",
        "--index",
        s(&f.index),
        "--json",
        "--planner",
        "echo",
        "best tents for travel",
    ]);
    assert_eq!(echo.status.code(), Some(0));
    let first: TurnEvent = serde_json::from_str(
        String::from_utf8(echo.stdout)
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    assert_eq!(first.body, events[0].body);
    assert_eq!(
        run(&["query", "--index", s(&f.index), "--planner", "llm", "x"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn exact_title_query_ranks_the_item() {
    let f = fixture();
    let (catalog, _) = load_index(&f.index).unwrap();
    let p = catalog.products().nth(123).unwrap();
    let o = run(&["query", "--index", s(&f.index), "--json", &p.title]);
    let events: Vec<TurnEvent> = String::from_utf8(o.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let first = events
        .iter()
        .find_map(|e| match &e.body {
            EventBody::TaskFinished(r) => match &r.payload {
                Some(TaskPayload::Candidates(c)) => Some(c.items[0].id.clone()),
                _ => None,
            },
            _ => None,
        })
        .unwrap();
    // retrieval oracle: the titled item comes first; the decider then ranks
    // by utility, which has no relevance term
    assert_eq!(first, p.id);
    let rec = events
        .iter()
        .find_map(|e| match &e.body {
            EventBody::Recommendation(r) => Some(r.clone()),
            _ => None,
        })
        .unwrap();
    assert!(rec.ranked.iter().any(|r| r.item_id == p.id));
}

#[test]
fn usage_errors_exit_2() {
    let f = fixture();
    assert_eq!(
        run(&["query", "--index", s(&f.index), "  "]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(&["query", "--index", s(&f.index), "--weights", "1,2", "x"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run(&["bogus"]).status.code(), Some(2));
    assert_eq!(run(&["query", "tents"]).status.code(), Some(2));
    assert_eq!(
        run(&["query", "--index", "/nonexistent", "tents"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn env_config_and_flags_win() {
    let f = fixture();
    let o = Command::new(BIN)
        .args(["query", "tents"])
        .env("COGSEARCH_INDEX", s(&f.index))
        .output()
        .unwrap();
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let o = Command::new(BIN)
        .args(["query", "--index", s(&f.index), "tents"])
        .env("COGSEARCH_INDEX", "/nonexistent")
        .env("COGSEARCH_ABLATE", "decider")
        .output()
        .unwrap();
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(!String::from_utf8_lossy(&o.stdout).contains("Recommended"));
}

#[test]
fn bench_reports_repeat_and_ablation_drops_facets() {
    let f = fixture();
    let out1 = f.data.join("r1.json");
    let out2 = f.data.join("r2.json");
    for out in [&out1, &out2] {
        let o = run(&[
            "bench",
            "--index",
            s(&f.index),
            "--cases",
            s(&f.cases),
            "--seed",
            "9",
            "--out",
            s(out),
        ]);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let r1 = std::fs::read(&out1).unwrap();
    assert_eq!(r1, std::fs::read(&out2).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&r1).unwrap();
    assert_eq!(report["categories"]["simple"]["acc"], 1.0);
    assert_eq!(report["seed"], 9);

    let o = run(&[
        "bench",
        "--index",
        s(&f.index),
        "--cases",
        s(&f.cases),
        "--ablate",
        "guider",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for t in report["traces"].as_array().unwrap() {
        assert!(t.get("facets").is_none());
    }
}

fn http(port: u16, method: &str, path: &str) -> Option<String> {
    let mut sock = TcpStream::connect(("127.0.0.1", port)).ok()?;
    sock.set_read_timeout(Some(Duration::from_secs(10))).ok()?;
    let req = format!(
        "{method} {path} HTTP/1.1\r\nhost: x\r\ncontent-length: 0\r\nconnection: close\r\n\r\n"
    );
    sock.write_all(req.as_bytes()).ok()?;
    let mut body = String::new();
    sock.read_to_string(&mut body).ok()?;
    Some(body)
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}

fn start(f: &Fixture, port: u16, snap: &Path) -> std::process::Child {
    let mut child = Command::new(BIN)
        .args([
            "serve",
            "--index",
            s(&f.index),
            "--port",
            &port.to_string(),
            "--snapshot",
            s(snap),
        ])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut err = BufReader::new(child.stderr.take().unwrap());
    let deadline = Instant::now() + Duration::from_secs(30);
    let mut line = String::new();
    while Instant::now() < deadline {
        line.clear();
        if err.read_line(&mut line).unwrap() == 0 || line.contains("listening") {
            break;
        }
    }
    assert!(line.contains("listening"), "server did not start: {line}");
    child
}

#[cfg(unix)]
#[test]
fn serve_health_snapshot_and_restore() {
    let f = fixture();
    let snap = f.data.join("memory.json");
    let port = free_port();
    let mut child = start(&f, port, &snap);
    let health = http(port, "GET", "/health").unwrap();
    assert!(health.starts_with("HTTP/1.1 200"), "{health}");
    assert!(health.contains("\"ok\""));
    let created = http(port, "POST", "/sessions").unwrap();
    assert!(created.contains("s-000001"), "{created}");

    Command::new("kill")
        .args(["-TERM", &child.id().to_string()])
        .status()
        .unwrap();
    assert!(child.wait().unwrap().success());
    assert!(snap.exists());

    let port = free_port();
    let mut child = start(&f, port, &snap);
    let state = http(port, "GET", "/sessions/s-000001").unwrap();
    assert!(state.starts_with("HTTP/1.1 200"), "{state}");
    let created = http(port, "POST", "/sessions").unwrap();
    assert!(created.contains("s-000002"), "{created}");
    Command::new("kill")
        .args(["-TERM", &child.id().to_string()])
        .status()
        .unwrap();
    child.wait().unwrap();
}
